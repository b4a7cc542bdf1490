//! Inference: full-mixture separation, query-by-example extraction and
//! embedding-space exports.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Array3, Axis};

use crate::classgmm::{fit_single_gaussian, likelihood_mask, posterior_mask, CovarianceType};
use crate::dsp::{istft_samples, mel_unproject_mask, write_wav, AudioClip, WavFormat};
use crate::error::{Error, Result};
use crate::model::Embeddings;
use crate::system::SeparationModel;

/// Separated channel plus the masks that produced it.
#[derive(Debug, Clone)]
pub struct SegmentOutput {
    /// One signal per class.
    pub stems: Vec<Vec<f64>>,
    /// Clamped linear-frequency masks `(C, F, T)`.
    pub masks: Array3<f64>,
}

fn check_rate(model: &SeparationModel, clip: &AudioClip) -> Result<()> {
    let sr = model.frontend().config().sample_rate;
    if clip.sample_rate() != sr {
        return Err(Error::invalid(format!(
            "input at {} Hz, model expects {sr} Hz",
            clip.sample_rate()
        )));
    }
    if clip.is_empty() {
        return Err(Error::invalid("input clip is empty"));
    }
    Ok(())
}

/// Separates one mono signal in a single pass.
pub fn separate_segment(model: &SeparationModel, x: &[f64]) -> Result<SegmentOutput> {
    let feats = model.frontend().analyze_samples(x)?;
    let inf = model.infer(&feats.input)?;
    let masks = model.frontend().lift(&inf.masks)?;
    let stems = masks
        .outer_iter()
        .map(|m| istft_samples(&feats.spec.apply_mask(&m.to_owned())?))
        .collect::<Result<Vec<_>>>()?;
    Ok(SegmentOutput { stems, masks })
}

/// Chunk starts covering `len` samples with chunks of `size` and 50% overlap;
/// the last chunk is aligned to the end.
fn chunk_starts(len: usize, size: usize) -> Vec<usize> {
    if len <= size {
        return vec![0];
    }
    let hop = (size / 2).max(1);
    let mut starts: Vec<usize> = (0..).map(|i| i * hop).take_while(|&s| s + size < len).collect();
    starts.push(len - size);
    starts
}

/// Triangular cross-fade weights, strictly positive so single-chunk
/// coverage at the edges stays well defined.
fn triangle(size: usize) -> Vec<f64> {
    let n = size as f64;
    (0..size).map(|i| 1.0 - ((2.0 * i as f64 + 1.0) / n - 1.0).abs()).collect()
}

/// Separates one mono signal, chunked to the training excerpt length with 50%
/// overlap and triangular cross-fades.
pub fn separate_channel(model: &SeparationModel, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    let sr = model.frontend().config().sample_rate as f64;
    let size = (model.spec().excerpt_seconds * sr).round() as usize;
    let size = size.max(model.frontend().config().window_size);
    if x.len() <= size {
        return Ok(separate_segment(model, x)?.stems);
    }
    let c = model.classes().len();
    let w = triangle(size);
    let mut acc = vec![vec![0.0; x.len()]; c];
    let mut norm = vec![0.0; x.len()];
    for start in chunk_starts(x.len(), size) {
        let seg = separate_segment(model, &x[start..start + size])?;
        for (ci, stem) in seg.stems.iter().enumerate() {
            for (i, s) in stem.iter().enumerate() {
                acc[ci][start + i] += w[i] * s;
            }
        }
        for (i, wi) in w.iter().enumerate() {
            norm[start + i] += wi;
        }
    }
    for stem in &mut acc {
        for (s, n) in stem.iter_mut().zip(&norm) {
            *s /= n;
        }
    }
    Ok(acc)
}

/// Separates a mono or stereo clip into one clip per class, each channel
/// processed independently.
pub fn separate(model: &SeparationModel, clip: &AudioClip) -> Result<Vec<AudioClip>> {
    check_rate(model, clip)?;
    let per_channel = clip
        .channels()
        .iter()
        .map(|ch| separate_channel(model, ch))
        .collect::<Result<Vec<_>>>()?;
    (0..model.classes().len())
        .map(|c| {
            let chans = per_channel.iter().map(|stems| stems[c].clone()).collect();
            AudioClip::new(chans, clip.sample_rate())
        })
        .collect()
}

/// Writes `<stem>_<class>.wav` for every separated class into `out_dir`.
pub fn write_stems(model: &SeparationModel, stems: &[AudioClip], input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let base = input
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid(format!("cannot derive a name from {}", input.display())))?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(stems.len());
    for (class, clip) in model.classes().iter().zip(stems) {
        let path = out_dir.join(format!("{base}_{class}.wav"));
        write_wav(&path, clip, WavFormat::Float32)?;
        written.push(path);
    }
    Ok(written)
}

fn embed(model: &SeparationModel, x: &[f64]) -> Result<(Embeddings, crate::features::Features)> {
    let feats = model.frontend().analyze_samples(x)?;
    let emb = model
        .infer(&feats.input)?
        .embeddings
        .ok_or_else(|| Error::Config("query-by-example needs an embedding model, not the baseline".into()))?;
    Ok((emb, feats))
}

/// Result of a query-by-example extraction on one channel.
#[derive(Debug, Clone)]
pub struct QueryOutput {
    pub signal: Vec<f64>,
    /// `M x T` likelihood mask, maximum exactly 1.
    pub mel_mask: Array2<f64>,
}

/// Extracts from `mixture` the content resembling `query`.
///
/// A single Gaussian of the given covariance family is fit to the query's
/// embeddings over all frames, restricted to bins above the loudness gate
/// (all bins when fewer than two pass). The mixture is processed in one pass.
pub fn query_channel(model: &SeparationModel, query: &[f64], mixture: &[f64], kind: CovarianceType) -> Result<QueryOutput> {
    let window = model.frontend().config().window_size;
    if query.len() < window {
        return Err(Error::invalid(format!(
            "query has {} samples, shorter than one {window}-sample frame",
            query.len()
        )));
    }
    let (q_emb, q_feats) = embed(model, query)?;
    let gate = model.frontend().gate(&q_feats.logmel_db);
    let weights = (gate.sum() >= 2.0).then_some(&gate);
    let gaussian = fit_single_gaussian(&q_emb, kind, weights)?;
    let (m_emb, m_feats) = embed(model, mixture)?;
    let mel_mask = likelihood_mask(&m_emb, &gaussian)?;
    let lin = mel_unproject_mask(&mel_mask, model.frontend().filterbank())?;
    let signal = istft_samples(&m_feats.spec.apply_mask(&lin)?)?;
    Ok(QueryOutput { signal, mel_mask })
}

/// Query-by-example on every mixture channel. The query is downmixed to mono.
pub fn query_separate(
    model: &SeparationModel,
    query: &AudioClip,
    mixture: &AudioClip,
    kind: CovarianceType,
) -> Result<AudioClip> {
    check_rate(model, query)?;
    check_rate(model, mixture)?;
    let q = query.to_mono();
    let q = q.mono_samples()?;
    let chans = mixture
        .channels()
        .iter()
        .map(|ch| Ok(query_channel(model, q, ch, kind)?.signal))
        .collect::<Result<Vec<_>>>()?;
    AudioClip::new(chans, mixture.sample_rate())
}

/// Principal axes of a point cloud.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `K x K`, one component per column, by decreasing variance.
    pub components: Array2<f64>,
    pub variances: Array1<f64>,
}

impl Pca {
    /// Eigendecomposition of the sample covariance of `points` (`N x K`).
    pub fn fit(points: &Array2<f64>) -> Result<Self> {
        let (n, k) = points.dim();
        if n < 2 || k == 0 {
            return Err(Error::invalid(format!("PCA needs at least 2 points, got {n}")));
        }
        let mean = points.mean_axis(Axis(0)).expect("non-empty");
        let centered = points - &mean;
        let cov = centered.t().dot(&centered) / (n - 1) as f64;
        let eig = SymmetricEigen::new(DMatrix::from_fn(k, k, |i, j| cov[[i, j]]));
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let components = Array2::from_shape_fn((k, k), |(i, j)| eig.eigenvectors[(i, order[j])]);
        let variances = order.iter().map(|&j| eig.eigenvalues[j].max(0.0)).collect();
        Ok(Self {
            mean,
            components,
            variances,
        })
    }

    /// Coordinates of `points` on the first `n` components.
    pub fn project(&self, points: &Array2<f64>, n: usize) -> Array2<f64> {
        (points - &self.mean).dot(&self.components.slice(ndarray::s![.., ..n]))
    }
}

/// Embedding-space data for external plotting.
#[derive(Debug, Clone)]
pub struct EmbeddingViews {
    pub embeddings: Embeddings,
    /// Flattened indices (`t * M + m`) of bins used for the PCA.
    pub bins: Vec<usize>,
    /// `bins.len() x 2` coordinates on the first two components.
    pub coords: Array2<f64>,
    /// Dominant class per entry of `bins`.
    pub labels: Vec<usize>,
    pub pca: Pca,
    pub gaussians: serde_json::Value,
}

/// Projects the mixture's gated bins onto their top two principal components
/// and labels each by its most probable class.
pub fn embedding_views(model: &SeparationModel, clip: &AudioClip) -> Result<EmbeddingViews> {
    check_rate(model, clip)?;
    let mono = clip.to_mono();
    let (emb, feats) = embed(model, mono.mono_samples()?)?;
    let params = model.gaussian_params().expect("embedding model has gaussians");
    let mask = posterior_mask(&emb, &params)?;
    let flat = emb.flattened();
    let gate = model.frontend().gate(&feats.logmel_db);
    let mut bins: Vec<usize> = (0..flat.nrows()).filter(|&i| gate[i] > 0.0).collect();
    if bins.len() < 2 {
        bins = (0..flat.nrows()).collect();
    }
    let points = flat.select(Axis(0), &bins);
    let pca = Pca::fit(&points)?;
    let coords = pca.project(&points, 2.min(emb.dim()));
    let m = emb.mel_bins();
    let labels = bins
        .iter()
        .map(|&i| {
            let row = mask.values().index_axis(Axis(0), i / m);
            let probs = row.index_axis(Axis(0), i % m);
            (0..probs.len()).fold(0, |best, c| if probs[c] > probs[best] { c } else { best })
        })
        .collect();
    let gaussians = serde_json::json!({
        "classes": model.classes(),
        "gaussians": params.to_json(),
        "alpha": params.alpha(),
        "pca_variances": pca.variances.to_vec(),
    });
    Ok(EmbeddingViews {
        embeddings: emb,
        bins,
        coords,
        labels,
        pca,
        gaussians,
    })
}

/// Writes `<prefix>_pca.csv` (frame, mel, pc1, pc2, label), `<prefix>_dims.csv`
/// (frame, mel, dim, value) and `<prefix>_gaussians.json`.
pub fn export_embedding_views(model: &SeparationModel, clip: &AudioClip, prefix: &Path) -> Result<Vec<PathBuf>> {
    let views = embedding_views(model, clip)?;
    let name = |suffix: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let m = views.embeddings.mel_bins();
    let pca_path = name("_pca.csv");
    let mut w = csv::Writer::from_path(&pca_path)?;
    w.write_record(["frame", "mel", "pc1", "pc2", "label"])?;
    for (row, (&bin, &label)) in views.bins.iter().zip(&views.labels).enumerate() {
        let pc2 = if views.coords.ncols() > 1 { views.coords[[row, 1]] } else { 0.0 };
        w.write_record([
            (bin / m).to_string(),
            (bin % m).to_string(),
            views.coords[[row, 0]].to_string(),
            pc2.to_string(),
            model.classes()[label].clone(),
        ])?;
    }
    w.flush()?;

    let dims_path = name("_dims.csv");
    let mut w = csv::Writer::from_path(&dims_path)?;
    w.write_record(["frame", "mel", "dim", "value"])?;
    for ((t, mi, k), v) in views.embeddings.values().indexed_iter() {
        w.write_record([t.to_string(), mi.to_string(), k.to_string(), v.to_string()])?;
    }
    w.flush()?;

    let json_path = name("_gaussians.json");
    fs::write(&json_path, serde_json::to_vec_pretty(&views.gaussians)?)?;
    Ok(vec![pca_path, dims_path, json_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::synth_stem;
    use crate::features::FrontendConfig;
    use crate::system::{ModelKind, ModelSpec, NetworkConfig};

    fn model(kind: ModelKind, excerpt: f64) -> SeparationModel {
        SeparationModel::new(ModelSpec {
            kind,
            classes: ["vocals", "drums", "bass", "other"].map(String::from).to_vec(),
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
            seed: 9,
            excerpt_seconds: excerpt,
        })
        .unwrap()
    }

    fn gmm() -> ModelKind {
        ModelKind::Gmm {
            covariance: CovarianceType::TiedSpherical,
        }
    }

    fn mixture(secs: f64, seed: u64) -> Vec<f64> {
        let parts: Vec<Vec<f64>> = ["vocals", "drums", "bass", "other"]
            .iter()
            .enumerate()
            .map(|(i, c)| synth_stem(c, secs, 8000, seed + i as u64).unwrap().into_channels().remove(0))
            .collect();
        (0..parts[0].len()).map(|i| parts.iter().map(|p| p[i]).sum()).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn stems_add_up_to_mixture() {
        for kind in [gmm(), ModelKind::Baseline] {
            let m = model(kind, 0.5);
            for seed in 0..3 {
                let x = mixture(0.5, seed * 10);
                let stems = separate_segment(&m, &x).unwrap().stems;
                let sum: Vec<f64> = (0..x.len()).map(|i| stems.iter().map(|s| s[i]).sum()).collect();
                let err = rel_err(&sum, &x);
                // The baseline's sigmoid masks are not constrained to sum to one.
                if !kind.is_baseline() {
                    assert!(err < 0.05, "relative deviation {err}");
                }
            }
        }
    }

    #[test]
    fn all_ones_masks_give_scaled_mixture() {
        let m = model(gmm(), 0.5);
        let x = mixture(0.5, 3);
        let feats = m.frontend().analyze_samples(&x).unwrap();
        let (f, t) = feats.magnitude.dim();
        let lifted = Array3::<f64>::ones((4, f, t));
        let sum: Vec<f64> = lifted
            .outer_iter()
            .map(|mk| istft_samples(&feats.spec.apply_mask(&mk.to_owned()).unwrap()).unwrap())
            .fold(vec![0.0; x.len()], |acc, s| acc.iter().zip(&s).map(|(a, b)| a + b).collect());
        let expected: Vec<f64> = x.iter().map(|v| 4.0 * v).collect();
        assert!(rel_err(&sum, &expected) < 1e-6);
    }

    #[test]
    fn shapes_and_lengths() {
        let m = model(gmm(), 0.25);
        for len in [300, 2000, 5001] {
            let clip = AudioClip::mono(mixture(1.0, 1)[..len].to_vec(), 8000).unwrap();
            let out = separate(&m, &clip).unwrap();
            assert_eq!(out.len(), 4);
            assert!(out.iter().all(|c| c.len() == len && c.is_mono()));
        }
        let seg = separate_segment(&m, &mixture(0.25, 2)).unwrap();
        assert!(seg.masks.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn chunking_covers_signal() {
        assert_eq!(chunk_starts(100, 100), [0]);
        assert_eq!(chunk_starts(250, 100), [0, 50, 100, 150]);
        assert!(triangle(7).iter().all(|&w| w > 0.0));
    }

    #[test]
    fn stereo_equals_two_mono_runs() {
        let m = model(gmm(), 0.25);
        let left = mixture(0.6, 4);
        let right = mixture(0.6, 40);
        let stereo = AudioClip::new(vec![left.clone(), right.clone()], 8000).unwrap();
        let out = separate(&m, &stereo).unwrap();
        let l = separate(&m, &AudioClip::mono(left, 8000).unwrap()).unwrap();
        let r = separate(&m, &AudioClip::mono(right, 8000).unwrap()).unwrap();
        for c in 0..4 {
            assert_eq!(out[c].channel(0), l[c].channel(0));
            assert_eq!(out[c].channel(1), r[c].channel(0));
        }
    }

    #[test]
    fn deterministic() {
        let m = model(gmm(), 0.25);
        let clip = AudioClip::mono(mixture(0.7, 5), 8000).unwrap();
        let a = separate(&m, &clip).unwrap();
        let b = separate(&m, &clip).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_rate_rejected() {
        let m = model(gmm(), 0.25);
        let clip = AudioClip::mono(vec![0.1; 1000], 16_000).unwrap();
        assert!(separate(&m, &clip).is_err());
    }

    #[test]
    fn query_of_mixture_peaks_at_one() {
        let m = model(gmm(), 0.5);
        let x = mixture(0.5, 6);
        for kind in CovarianceType::ALL {
            let out = query_channel(&m, &x, &x, kind).unwrap();
            let max = out.mel_mask.fold(0.0_f64, |a, &b| a.max(b));
            assert_eq!(max, 1.0);
            assert!(out.mel_mask.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(out.signal.len(), x.len());
        }
    }

    #[test]
    fn query_errors() {
        let m = model(gmm(), 0.5);
        let x = mixture(0.5, 7);
        assert!(query_channel(&m, &x[..100], &x, CovarianceType::Spherical).is_err());
        let base = model(ModelKind::Baseline, 0.5);
        assert!(matches!(
            query_channel(&base, &x, &x, CovarianceType::Spherical),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn pca_reconstructs_centered_points() {
        let pts = Array2::from_shape_fn((40, 5), |(i, j)| ((i * 7 + j * 3) as f64).sin() * (j + 1) as f64);
        let pca = Pca::fit(&pts).unwrap();
        let full = pca.project(&pts, 5);
        let back = full.dot(&pca.components.t());
        let centered = &pts - &pca.mean;
        let err = (&back - &centered).iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        assert!(err < 1e-8, "{err}");
        assert!(pca.variances.windows(2).into_iter().all(|w| w[0] >= w[1]));
        let two = pca.project(&pts, 2);
        let var = |j: usize| two.column(j).iter().map(|v| v * v).sum::<f64>();
        assert!(var(0) >= var(1));
    }

    #[test]
    fn export_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = model(gmm(), 0.5);
        let clip = AudioClip::mono(mixture(0.5, 8), 8000).unwrap();
        let files = export_embedding_views(&m, &clip, &dir.path().join("views/mix")).unwrap();
        let pca = fs::read_to_string(&files[0]).unwrap();
        let mut lines = pca.lines();
        assert_eq!(lines.next(), Some("frame,mel,pc1,pc2,label"));
        assert!(lines.all(|l| l.split(',').count() == 5));
        let dims = fs::read_to_string(&files[1]).unwrap();
        assert_eq!(dims.lines().count(), 1 + m.frontend().analyze_samples(&mixture(0.5, 8)).unwrap().input.len() * 4);
        let json: serde_json::Value = serde_json::from_slice(&fs::read(&files[2]).unwrap()).unwrap();
        assert!(json["alpha"].is_number());
        assert!(embedding_views(&model(ModelKind::Baseline, 0.5), &clip).is_err());
    }
}
