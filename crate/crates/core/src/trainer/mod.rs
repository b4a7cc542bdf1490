//! Gradient training of the separation models with validation-based model
//! selection, per-epoch logs and resumable checkpoints.

mod config;
mod optim;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classgmm::VARIANCE_FLOOR;
use crate::datagen::{read_manifest, render_mixture_with, MixtureSpec, StemLoader};
use crate::error::{Error, Result};
use crate::features::{Frontend, TrainingExample};
use crate::losses::{dc_loss, dc_loss_with_grad, l1_lifted_loss_with_grad, LossWeights};
use crate::model::checkpoint::Checkpoint;
use crate::system::{ModelSpec, SeparationModel};

pub use config::{TrainConfig, CONFIG_KEYS};
pub use optim::Adam;

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const TRAINING_LOG: &str = "training_log.csv";
pub const TRAINING_REPORT: &str = "training_report.json";

/// Featurized clips of equal length.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<TrainingExample>,
    pub duration: f64,
}

impl Dataset {
    /// Renders and featurizes every spec. Specs must list `classes` in order
    /// and share one duration and the frontend's sample rate.
    pub fn from_specs<S: AsRef<str>>(specs: &[MixtureSpec], frontend: &Frontend, classes: &[S]) -> Result<Self> {
        let first = specs.first().ok_or_else(|| Error::invalid("manifest has no mixtures"))?;
        let names: Vec<&str> = classes.iter().map(|c| c.as_ref()).collect();
        let mut loader = StemLoader::new();
        let mut examples = Vec::with_capacity(specs.len());
        for spec in specs {
            if spec.class_names() != names {
                return Err(Error::Config(format!(
                    "{}: classes {:?} do not match the configured {:?}",
                    spec.id,
                    spec.class_names(),
                    names
                )));
            }
            if spec.sample_rate != frontend.config().sample_rate {
                return Err(Error::Config(format!(
                    "{}: mixture rate {} Hz, model rate {} Hz",
                    spec.id,
                    spec.sample_rate,
                    frontend.config().sample_rate
                )));
            }
            if spec.num_samples() != first.num_samples() {
                return Err(Error::invalid("all mixtures in a dataset must share one duration"));
            }
            let (mix, stems) = render_mixture_with(spec, &mut loader)?;
            examples.push(frontend.training_example(&spec.id, &mix, &stems)?);
        }
        Ok(Self {
            examples,
            duration: first.duration,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub dc: f64,
    pub l1: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub dc: f64,
    pub l1: f64,
    pub combined: f64,
    pub val_dc: f64,
    pub val_l1: f64,
    pub val_combined: f64,
    pub wall_time: f64,
}

impl EpochMetrics {
    /// Equality of every loss value, ignoring wall time.
    pub fn same_losses(&self, other: &EpochMetrics) -> bool {
        self.epoch == other.epoch
            && [self.dc, self.l1, self.combined, self.val_dc, self.val_l1, self.val_combined]
                == [other.dc, other.l1, other.combined, other.val_dc, other.val_l1, other.val_combined]
    }
}

/// Per-clip losses and, when `want_grads`, gradients scaled by `1 / batch`.
fn batch_losses(
    model: &SeparationModel,
    batch: &[&TrainingExample],
    weights: LossWeights,
    want_grads: bool,
) -> Result<(Vec<StepMetrics>, Option<(crate::system::BatchCache, Vec<ndarray::Array3<f64>>, Vec<Array2<f64>>)>)> {
    let inputs: Vec<&Array2<f64>> = batch.iter().map(|e| &e.input).collect();
    let (out, cache) = model.forward_batch(&inputs)?;
    let fb = model.frontend().filterbank();
    let scale = 1.0 / batch.len() as f64;
    let mut metrics = Vec::with_capacity(batch.len());
    let mut d_masks = Vec::with_capacity(batch.len());
    let mut d_embs = Vec::new();
    for (b, ex) in batch.iter().enumerate() {
        let (l1, d_mel) = l1_lifted_loss_with_grad(&out.masks[b], fb, &ex.mix_mag, &ex.source_mags)?;
        let dc = match &out.embeddings {
            Some(embs) if want_grads && weights.dc > 0.0 => {
                let (dc, g) = dc_loss_with_grad(&embs[b], &ex.targets)?;
                d_embs.push(g * (weights.dc * scale));
                dc
            }
            Some(embs) => {
                if want_grads {
                    d_embs.push(Array2::zeros(embs[b].dim()));
                }
                dc_loss(&embs[b], &ex.targets)?
            }
            None => 0.0,
        };
        let combined = weights.combine(dc, l1).map_err(|_| Error::NonFiniteLoss {
            batch: 0,
            detail: format!("clip {}: dc={dc} l1={l1}", ex.id),
        })?;
        metrics.push(StepMetrics { dc, l1, combined });
        d_masks.push(d_mel * (weights.l1 * scale));
    }
    Ok((metrics, want_grads.then_some((cache, d_masks, d_embs))))
}

fn mean_metrics(all: &[StepMetrics]) -> StepMetrics {
    let n = all.len().max(1) as f64;
    StepMetrics {
        dc: all.iter().map(|m| m.dc).sum::<f64>() / n,
        l1: all.iter().map(|m| m.l1).sum::<f64>() / n,
        combined: all.iter().map(|m| m.combined).sum::<f64>() / n,
    }
}

/// One optimizer step on the mean combined loss of `batch`.
pub fn train_step(
    model: &mut SeparationModel,
    opt: &mut Adam,
    batch: &[&TrainingExample],
    weights: LossWeights,
    batch_id: usize,
) -> Result<StepMetrics> {
    model.zero_grad();
    let (metrics, grads) = batch_losses(model, batch, weights, true).map_err(|e| match e {
        Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { batch: batch_id, detail },
        other => other,
    })?;
    let (cache, d_masks, d_embs) = grads.expect("gradients requested");
    let extra = (!d_embs.is_empty()).then_some(d_embs.as_slice());
    model.backward_batch(&cache, &d_masks, extra)?;
    let norm = opt.step(model.params_mut());
    if !norm.is_finite() {
        return Err(Error::NonFiniteLoss {
            batch: batch_id,
            detail: format!("gradient norm {norm}"),
        });
    }
    Ok(mean_metrics(&metrics))
}

/// Mean losses over `examples` without updating the model.
pub fn evaluate_loss(
    model: &SeparationModel,
    examples: &[TrainingExample],
    weights: LossWeights,
    batch_size: usize,
) -> Result<StepMetrics> {
    let mut all = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&TrainingExample> = chunk.iter().collect();
        all.extend(batch_losses(model, &refs, weights, false)?.0);
    }
    Ok(mean_metrics(&all))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainState {
    epoch: usize,
    best_val: f64,
    best_epoch: usize,
    stale_epochs: usize,
    adam_steps: u64,
    config: TrainConfig,
    history: Vec<EpochMetrics>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub report_path: PathBuf,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn model_spec(cfg: &TrainConfig, duration: f64) -> ModelSpec {
    ModelSpec {
        kind: cfg.model,
        classes: cfg.classes.clone(),
        frontend: cfg.frontend.clone(),
        network: cfg.network.clone(),
        seed: cfg.seed,
        excerpt_seconds: duration,
    }
}

fn training_checkpoint(model: &SeparationModel, opt: &Adam, state: &TrainState) -> Result<Checkpoint> {
    let mut ckpt = model.to_checkpoint();
    ckpt.metadata.insert("training".into(), serde_json::to_value(state)?);
    opt.save_into(&mut ckpt);
    Ok(ckpt)
}

fn write_log(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "dc", "l1", "combined", "val_combined", "wall_time"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            format!("{:.8}", h.dc),
            format!("{:.8}", h.l1),
            format!("{:.8}", h.combined),
            format!("{:.8}", h.val_combined),
            format!("{:.3}", h.wall_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Learned-variance summary of an embedding model.
pub fn variance_report(model: &SeparationModel) -> Value {
    match model.gaussian_params() {
        None => Value::Null,
        Some(p) => {
            let vars: Vec<f64> = p.variances().iter().copied().collect();
            let finite = vars.iter().all(|v| v.is_finite());
            serde_json::json!({
                "covariance": p.kind(),
                "variances": p.to_json()["variances"],
                "alpha": p.alpha(),
                "floor": VARIANCE_FLOOR,
                "min": vars.iter().copied().fold(f64::INFINITY, f64::min),
                "max": vars.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                "finite": finite,
                "above_floor": vars.iter().all(|&v| v > VARIANCE_FLOOR),
                "below_10": vars.iter().all(|&v| v < 10.0),
            })
        }
    }
}

/// Trains until `cfg.max_epochs` or early stopping, writing `best.ckpt`,
/// `last.ckpt`, the CSV log and a JSON report into `out_dir`. With `resume`,
/// training continues from a `last.ckpt` written by an earlier call.
pub fn fit(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    fs::create_dir_all(out_dir)?;
    let weights = cfg.effective_loss_weights();
    let spec = model_spec(cfg, train.duration);
    let (mut model, mut opt, mut state) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::read(path)?;
            let model = SeparationModel::from_checkpoint(&ckpt, path)?;
            if model.spec() != &spec {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    reason: "model configuration differs from the requested run".into(),
                });
            }
            let state: TrainState = ckpt
                .metadata
                .get("training")
                .cloned()
                .map(serde_json::from_value)
                .transpose()?
                .ok_or_else(|| Error::Checkpoint {
                    path: path.to_path_buf(),
                    reason: "no training state to resume from".into(),
                })?;
            let mut opt = Adam::new(cfg.learning_rate, cfg.grad_clip);
            let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
            if !opt.load_from(&ckpt, &names, state.adam_steps) {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    reason: "optimizer state missing".into(),
                });
            }
            (model, opt, state)
        }
        None => (
            SeparationModel::new(spec)?,
            Adam::new(cfg.learning_rate, cfg.grad_clip),
            TrainState {
                epoch: 0,
                best_val: f64::INFINITY,
                best_epoch: 0,
                stale_epochs: 0,
                adam_steps: 0,
                config: cfg.clone(),
                history: Vec::new(),
            },
        ),
    };
    state.config = cfg.clone();
    let best_path = out_dir.join(BEST_CHECKPOINT);
    let last_path = out_dir.join(LAST_CHECKPOINT);
    let log_path = out_dir.join(TRAINING_LOG);
    let report_path = out_dir.join(TRAINING_REPORT);
    let started = Instant::now();
    let time_offset = state.history.last().map_or(0.0, |h| h.wall_time);
    let mut stopped_early = state.stale_epochs >= cfg.patience && state.epoch > 0;

    while !stopped_early && state.epoch < cfg.max_epochs {
        let epoch = state.epoch + 1;
        let order = epoch_order(cfg.seed, epoch, train.len());
        let mut sums = StepMetrics::default();
        for (batch_id, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TrainingExample> = idx.iter().map(|&i| &train.examples[i]).collect();
            let m = match train_step(&mut model, &mut opt, &batch, weights, batch_id) {
                Ok(m) => m,
                Err(e @ Error::NonFiniteLoss { .. }) => {
                    let dump = out_dir.join(format!("nonfinite_epoch{epoch}_batch{batch_id}.json"));
                    let ids: Vec<&str> = batch.iter().map(|e| e.id.as_str()).collect();
                    fs::write(
                        &dump,
                        serde_json::to_vec_pretty(&serde_json::json!({
                            "epoch": epoch,
                            "batch": batch_id,
                            "clips": ids,
                            "error": e.to_string(),
                        }))?,
                    )?;
                    log::error!("non-finite loss; batch dump written to {}", dump.display());
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let n = batch.len() as f64;
            sums.dc += m.dc * n;
            sums.l1 += m.l1 * n;
            sums.combined += m.combined * n;
        }
        let n = train.len() as f64;
        let v = evaluate_loss(&model, &val.examples, weights, cfg.batch_size)?;
        let metrics = EpochMetrics {
            epoch,
            dc: sums.dc / n,
            l1: sums.l1 / n,
            combined: sums.combined / n,
            val_dc: v.dc,
            val_l1: v.l1,
            val_combined: v.combined,
            wall_time: time_offset + started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.5} (dc {:.5}, l1 {:.5}) val {:.5}",
            metrics.combined,
            metrics.dc,
            metrics.l1,
            metrics.val_combined
        );
        state.epoch = epoch;
        state.history.push(metrics);
        state.adam_steps = opt.step_count;
        if v.combined < state.best_val {
            state.best_val = v.combined;
            state.best_epoch = epoch;
            state.stale_epochs = 0;
            training_checkpoint(&model, &opt, &state)?.write(&best_path)?;
        } else {
            state.stale_epochs += 1;
        }
        training_checkpoint(&model, &opt, &state)?.write(&last_path)?;
        write_log(&log_path, &state.history)?;
        if state.stale_epochs >= cfg.patience {
            stopped_early = true;
            log::info!("early stop after {} epochs without improvement", state.stale_epochs);
        }
    }

    let best = SeparationModel::load(&best_path)?;
    let report = serde_json::json!({
        "model": best.kind().label(),
        "epochs_run": state.epoch,
        "best_epoch": state.best_epoch,
        "best_val_combined": state.best_val,
        "stopped_early": stopped_early,
        "loss_weights": weights,
        "learned_variance": variance_report(&best),
        "gaussians": best.gaussian_params().map(|p| p.to_json()),
        "history": state.history,
    });
    fs::write(&report_path, serde_json::to_vec_pretty(&report)?)?;
    Ok(FitOutcome {
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        log_path,
        report_path,
        history: state.history,
        best_epoch: state.best_epoch,
        stopped_early,
    })
}

/// Reads both manifests, renders and featurizes them, then runs [`fit`].
pub fn fit_manifests(
    train_manifest: &Path,
    val_manifest: &Path,
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let frontend = Frontend::new(cfg.frontend.clone())?;
    let train_specs = read_manifest(train_manifest)?;
    if train_specs.is_empty() {
        return Err(Error::invalid(format!("{} lists no mixtures", train_manifest.display())));
    }
    let val_specs = read_manifest(val_manifest)?;
    if val_specs.is_empty() {
        return Err(Error::invalid(format!("{} lists no mixtures", val_manifest.display())));
    }
    let train = Dataset::from_specs(&train_specs, &frontend, &cfg.classes)?;
    let val = Dataset::from_specs(&val_specs, &frontend, &cfg.classes)?;
    fit(&train, &val, cfg, out_dir, resume)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classgmm::CovarianceType;
    use crate::datagen::{generate_specs, MixConfig, StemBank, SYNTH_CLASSES};
    use crate::features::FrontendConfig;
    use crate::system::{ModelKind, NetworkConfig};

    fn tiny_cfg(kind: ModelKind) -> TrainConfig {
        TrainConfig {
            model: kind,
            frontend: FrontendConfig {
                sample_rate: 8000,
                window_size: 256,
                hop_size: 64,
                mel_bins: 16,
                fmax: 4000.0,
                ..FrontendConfig::desk_scale()
            },
            network: NetworkConfig {
                num_recurrent_layers: 1,
                hidden_units_per_direction: 8,
                embedding_dim: 4,
                unit_normalize: false,
            },
            batch_size: 4,
            learning_rate: 1e-2,
            max_epochs: 3,
            seed: 5,
            ..TrainConfig::desk_scale()
        }
    }

    fn tiny_data(cfg: &TrainConfig, count: usize, seed: u64) -> Dataset {
        let bank = StemBank::synthetic("train", &SYNTH_CLASSES, 6, 1.0, seed);
        let mix = MixConfig {
            duration: 0.25,
            sample_rate: cfg.frontend.sample_rate,
            ..MixConfig::default()
        };
        let specs = generate_specs(&bank, &SYNTH_CLASSES, &mix, count, seed).unwrap();
        Dataset::from_specs(&specs, &Frontend::new(cfg.frontend.clone()).unwrap(), &cfg.classes).unwrap()
    }

    fn gmm() -> ModelKind {
        ModelKind::Gmm {
            covariance: CovarianceType::TiedSpherical,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let cfg = tiny_cfg(gmm());
        let data = tiny_data(&cfg, 4, 1);
        let mut model = SeparationModel::new(model_spec(&cfg, data.duration)).unwrap();
        let before: Vec<Array2<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
        let mut opt = Adam::new(0.0, 5.0);
        let batch: Vec<&TrainingExample> = data.examples.iter().collect();
        train_step(&mut model, &mut opt, &batch, cfg.loss_weights, 0).unwrap();
        let after: Vec<Array2<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn dc_weight_zero_matches_l1_only() {
        let cfg = tiny_cfg(gmm());
        let data = tiny_data(&cfg, 4, 2);
        let batch: Vec<&TrainingExample> = data.examples.iter().collect();
        let spec = model_spec(&cfg, data.duration);
        let l1_only = LossWeights { dc: 0.0, l1: 1.0 };
        // Reference: gradients of the mask loss alone, no clustering term anywhere.
        let mut reference = SeparationModel::new(spec.clone()).unwrap();
        reference.zero_grad();
        let inputs: Vec<&Array2<f64>> = batch.iter().map(|e| &e.input).collect();
        let (out, cache) = reference.forward_batch(&inputs).unwrap();
        let d_masks: Vec<_> = batch
            .iter()
            .enumerate()
            .map(|(b, e)| {
                let fb = reference.frontend().filterbank();
                l1_lifted_loss_with_grad(&out.masks[b], fb, &e.mix_mag, &e.source_mags).unwrap().1 / 4.0
            })
            .collect();
        reference.backward_batch(&cache, &d_masks, None).unwrap();
        Adam::new(1e-3, 5.0).step(reference.params_mut());

        let mut model = SeparationModel::new(spec).unwrap();
        train_step(&mut model, &mut Adam::new(1e-3, 5.0), &batch, l1_only, 0).unwrap();
        for (a, b) in model.params().iter().zip(reference.params()) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
    }

    #[test]
    fn repeated_steps_reduce_loss() {
        let mut improved = 0;
        for trial in 0..10 {
            let mut cfg = tiny_cfg(gmm());
            cfg.seed = trial;
            let data = tiny_data(&cfg, 4, 100 + trial);
            let batch: Vec<&TrainingExample> = data.examples.iter().collect();
            let mut model = SeparationModel::new(model_spec(&cfg, data.duration)).unwrap();
            let mut opt = Adam::new(1e-3, 5.0);
            let first = train_step(&mut model, &mut opt, &batch, cfg.loss_weights, 0).unwrap();
            train_step(&mut model, &mut opt, &batch, cfg.loss_weights, 1).unwrap();
            let after = evaluate_loss(&model, &data.examples, cfg.loss_weights, 4).unwrap();
            if after.combined <= first.combined {
                improved += 1;
            }
        }
        assert!(improved >= 8, "only {improved}/10 trials improved");
    }

    #[test]
    fn fit_writes_artifacts_and_resumes_identically() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(gmm());
        cfg.max_epochs = 4;
        let train = tiny_data(&cfg, 8, 3);
        let val = tiny_data(&cfg, 4, 4);
        let full = fit(&train, &val, &cfg, &dir.path().join("full"), None).unwrap();
        assert_eq!(full.history.len(), 4);
        let log = fs::read_to_string(&full.log_path).unwrap();
        assert!(log.starts_with("epoch,dc,l1,combined,val_combined,wall_time"));
        assert_eq!(log.lines().count(), 5);
        let report: Value = serde_json::from_slice(&fs::read(&full.report_path).unwrap()).unwrap();
        assert!(report["learned_variance"]["alpha"].is_number());

        let mut short = cfg.clone();
        short.max_epochs = 2;
        let part_dir = dir.path().join("part");
        let first = fit(&train, &val, &short, &part_dir, None).unwrap();
        let resumed = fit(&train, &val, &cfg, &part_dir, Some(&first.last_checkpoint)).unwrap();
        assert_eq!(resumed.history.len(), 4);
        for (a, b) in full.history.iter().zip(&resumed.history) {
            assert!(a.same_losses(b), "{a:?} vs {b:?}");
        }

        // Reloading the best checkpoint reproduces its validation loss.
        let best = SeparationModel::load(&full.best_checkpoint).unwrap();
        let v = evaluate_loss(&best, &val.examples, cfg.loss_weights, cfg.batch_size).unwrap();
        let recorded = full.history[full.best_epoch - 1].val_combined;
        assert_eq!(v.combined, recorded);
    }

    #[test]
    fn baseline_trains_in_same_loop() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(ModelKind::Baseline);
        cfg.max_epochs = 2;
        let train = tiny_data(&cfg, 4, 5);
        let out = fit(&train, &train, &cfg, dir.path(), None).unwrap();
        assert!(out.history.iter().all(|h| h.dc == 0.0 && h.combined == h.l1));
        let report: Value = serde_json::from_slice(&fs::read(&out.report_path).unwrap()).unwrap();
        assert_eq!(report["model"], "BLSTM");
    }

    #[test]
    fn empty_inputs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(gmm());
        let empty = dir.path().join("empty.jsonl");
        fs::write(&empty, "").unwrap();
        assert!(fit_manifests(&empty, &empty, &cfg, dir.path(), None).is_err());
        let frontend = Frontend::new(cfg.frontend.clone()).unwrap();
        assert!(Dataset::from_specs(&[], &frontend, &cfg.classes).is_err());
    }
}
