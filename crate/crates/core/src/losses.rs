//! Training objectives and their targets.
//!
//! Linear-frequency tensors are laid out `(C, F, T)`; mel-domain masks follow
//! the embedding layout `(T, M, C)`; flattened bins use row `t * M + m`.

use ndarray::{Array1, Array2, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::dsp::MelFilterbank;
use crate::error::{Error, Result};

/// Default loudness gate, relative to the clip's loudest mel bin.
pub const DEFAULT_GATE_DB: f64 = -40.0;

/// Soft class targets per flattened bin plus the binary loudness gate.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityTargets {
    values: Array2<f64>,
    weights: Array1<f64>,
}

impl AffinityTargets {
    pub fn new(values: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        if values.nrows() != weights.len() {
            return Err(Error::shape(format!(
                "{} target rows vs {} weights",
                values.nrows(),
                weights.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("affinity targets must lie in [0, 1]"));
        }
        if weights.iter().any(|&w| w != 0.0 && w != 1.0) {
            return Err(Error::invalid("affinity weights must be 0 or 1"));
        }
        Ok(Self { values, weights })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn num_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn active_bins(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }
}

/// Per bin, 1 for the source with the largest magnitude (lowest index on ties).
pub fn ideal_binary_masks(source_mags: &[Array2<f64>]) -> Result<Array3<f64>> {
    let first = source_mags
        .first()
        .ok_or_else(|| Error::invalid("ideal binary masks need at least one source"))?;
    let (f, t) = first.dim();
    if source_mags.iter().any(|s| s.dim() != (f, t)) {
        return Err(Error::shape("source magnitudes differ in shape"));
    }
    let mut out = Array3::zeros((source_mags.len(), f, t));
    for fi in 0..f {
        for ti in 0..t {
            let mut best = 0;
            for (c, s) in source_mags.iter().enumerate().skip(1) {
                if s[[fi, ti]] > source_mags[best][[fi, ti]] {
                    best = c;
                }
            }
            out[[best, fi, ti]] = 1.0;
        }
    }
    Ok(out)
}

/// Pools each class's binary mask into mel bands (band-weighted average,
/// clamped to `[0, 1]`) and gates bins by loudness.
///
/// A bin is kept when its mixture log-mel level exceeds the clip's loudest bin
/// plus `threshold_db` and is strictly above the clip's quietest bin, so a clip
/// at a constant level (silence) keeps nothing.
pub fn mel_affinity_targets(
    ibm: &Array3<f64>,
    fb: &MelFilterbank,
    mix_logmel: &Array2<f64>,
    threshold_db: f64,
) -> Result<AffinityTargets> {
    let (c, f, t) = ibm.dim();
    if f != fb.num_freq_bins() || mix_logmel.dim() != (fb.mel_bins(), t) {
        return Err(Error::shape(format!(
            "masks {:?}, filterbank {}x{}, log-mel {:?}",
            ibm.dim(),
            fb.mel_bins(),
            fb.num_freq_bins(),
            mix_logmel.dim()
        )));
    }
    let m = fb.mel_bins();
    let mut values = Array2::zeros((t * m, c));
    for ci in 0..c {
        let pooled = fb.pool_mask(&ibm.index_axis(Axis(0), ci).to_owned())?;
        for ti in 0..t {
            for mi in 0..m {
                values[[ti * m + mi, ci]] = pooled[[mi, ti]].clamp(0.0, 1.0);
            }
        }
    }
    let weights = loudness_gate(mix_logmel, threshold_db);
    AffinityTargets::new(values, weights)
}

/// Level margin (dB) a bin needs above the clip's quietest bin to count as sounding.
const QUIET_MARGIN_DB: f64 = 1e-6;

/// Binary gate over flattened bins (`t * M + m`) of an `M x T` log-mel matrix.
///
/// A bin passes when it exceeds the clip's loudest bin plus `threshold_db` and
/// lies above the clip's quietest bin, so a clip at a constant level (silence)
/// passes nothing.
pub fn loudness_gate(logmel: &Array2<f64>, threshold_db: f64) -> Array1<f64> {
    let (m, t) = logmel.dim();
    let max = logmel.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let min = logmel.fold(f64::INFINITY, |a, &b| a.min(b));
    Array1::from_shape_fn(t * m, |i| {
        let v = logmel[[i % m, i / m]];
        if v > max + threshold_db && v > min + QUIET_MARGIN_DB {
            1.0
        } else {
            0.0
        }
    })
}

fn weighted_gram(a: &Array2<f64>, w: &Array1<f64>, b: &Array2<f64>) -> Array2<f64> {
    let wb = b * &w.view().insert_axis(Axis(1));
    a.t().dot(&wb)
}

fn check_dc(v: &Array2<f64>, y: &AffinityTargets) -> Result<()> {
    if v.nrows() != y.num_bins() {
        return Err(Error::shape(format!(
            "{} embedding rows vs {} target rows",
            v.nrows(),
            y.num_bins()
        )));
    }
    Ok(())
}

/// Weighted deep clustering loss `|W^½ (V Vᵀ − Y Yᵀ) W^½|²_F / (Σw)²`,
/// evaluated through `K x K`, `K x C` and `C x C` Gram matrices.
pub fn dc_loss(v: &Array2<f64>, y: &AffinityTargets) -> Result<f64> {
    Ok(dc_loss_with_grad(v, y)?.0)
}

/// `dc_loss` and its gradient with respect to `v`.
pub fn dc_loss_with_grad(v: &Array2<f64>, y: &AffinityTargets) -> Result<(f64, Array2<f64>)> {
    check_dc(v, y)?;
    let w = &y.weights;
    let total = w.sum();
    if total == 0.0 {
        return Ok((0.0, Array2::zeros(v.dim())));
    }
    let vv = weighted_gram(v, w, v);
    let vy = weighted_gram(v, w, &y.values);
    let yy = weighted_gram(&y.values, w, &y.values);
    let frob = |a: &Array2<f64>| a.iter().map(|x| x * x).sum::<f64>();
    let norm = total * total;
    let loss = ((frob(&vv) - 2.0 * frob(&vy) + frob(&yy)) / norm).max(0.0);
    let mut grad = v.dot(&vv) - y.values.dot(&vy.t());
    grad *= &w.view().insert_axis(Axis(1));
    grad *= 4.0 / norm;
    Ok((loss, grad))
}

fn check_l1(masks: &Array3<f64>, mix_mag: &Array2<f64>, source_mags: &Array3<f64>) -> Result<()> {
    let (_, f, t) = masks.dim();
    if masks.dim() != source_mags.dim() || mix_mag.dim() != (f, t) {
        return Err(Error::shape(format!(
            "masks {:?}, mixture {:?}, sources {:?}",
            masks.dim(),
            mix_mag.dim(),
            source_mags.dim()
        )));
    }
    Ok(())
}

/// `Σ_c Σ_bins |m_c ⊙ x − s_c|` divided by the number of bins per class.
pub fn l1_mask_loss(masks: &Array3<f64>, mix_mag: &Array2<f64>, source_mags: &Array3<f64>) -> Result<f64> {
    Ok(l1_mask_loss_with_grad(masks, mix_mag, source_mags)?.0)
}

/// `l1_mask_loss` and its gradient with respect to the masks.
pub fn l1_mask_loss_with_grad(
    masks: &Array3<f64>,
    mix_mag: &Array2<f64>,
    source_mags: &Array3<f64>,
) -> Result<(f64, Array3<f64>)> {
    check_l1(masks, mix_mag, source_mags)?;
    let (c, f, t) = masks.dim();
    let bins = (f * t).max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array3::zeros((c, f, t));
    for ci in 0..c {
        Zip::from(grad.index_axis_mut(Axis(0), ci))
            .and(masks.index_axis(Axis(0), ci))
            .and(mix_mag)
            .and(source_mags.index_axis(Axis(0), ci))
            .for_each(|g, &m, &x, &s| {
                let r = m * x - s;
                loss += r.abs();
                *g = if r > 0.0 {
                    x / bins
                } else if r < 0.0 {
                    -x / bins
                } else {
                    0.0
                };
            });
    }
    Ok((loss / bins, grad))
}

/// Lifts mel masks `(T, M, C)` to clamped linear-frequency masks `(C, F, T)`.
pub fn lift_masks(mel_masks: &Array3<f64>, fb: &MelFilterbank) -> Result<Array3<f64>> {
    let (t, m, c) = mel_masks.dim();
    if m != fb.mel_bins() {
        return Err(Error::shape(format!("masks have {m} mel bins, filterbank {}", fb.mel_bins())));
    }
    let mut out = Array3::zeros((c, fb.num_freq_bins(), t));
    for ci in 0..c {
        let mel = mel_masks.index_axis(Axis(2), ci).t().to_owned();
        out.index_axis_mut(Axis(0), ci)
            .assign(&crate::dsp::mel_unproject_mask(&mel, fb)?);
    }
    debug_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    Ok(out)
}

/// L1 loss on lifted masks, with its gradient back in the mel layout `(T, M, C)`.
///
/// The clamp passes gradients through wherever the unclamped lift lies in `[0, 1]`.
pub fn l1_lifted_loss_with_grad(
    mel_masks: &Array3<f64>,
    fb: &MelFilterbank,
    mix_mag: &Array2<f64>,
    source_mags: &Array3<f64>,
) -> Result<(f64, Array3<f64>)> {
    let lin = lift_masks(mel_masks, fb)?;
    let (loss, d_lin) = l1_mask_loss_with_grad(&lin, mix_mag, source_mags)?;
    let lift = fb.lift_matrix();
    let (t, m, c) = mel_masks.dim();
    let mut d_mel = Array3::zeros((t, m, c));
    for ci in 0..c {
        let mel = mel_masks.index_axis(Axis(2), ci).t().to_owned();
        let raw = lift.dot(&mel);
        let mut d = d_lin.index_axis(Axis(0), ci).to_owned();
        Zip::from(&mut d).and(&raw).for_each(|g, &u| {
            if !(0.0..=1.0).contains(&u) {
                *g = 0.0;
            }
        });
        let back = lift.t().dot(&d);
        d_mel.index_axis_mut(Axis(2), ci).assign(&back.t());
    }
    Ok((loss, d_mel))
}

/// Relative weighting of the two objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub dc: f64,
    pub l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { dc: 0.5, l1: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.dc >= 0.0 && self.l1 >= 0.0) || ((self.dc + self.l1) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative and sum to 1, got dc={} l1={}",
                self.dc, self.l1
            )));
        }
        Ok(())
    }

    pub fn combine(&self, dc: f64, l1: f64) -> Result<f64> {
        if !dc.is_finite() || !l1.is_finite() {
            return Err(Error::NonFiniteLoss {
                batch: 0,
                detail: format!("dc={dc} l1={l1}"),
            });
        }
        Ok(self.dc * dc + self.l1 * l1)
    }
}

/// Equal-weight combination of the two objectives.
pub fn combined_loss(dc: f64, l1: f64) -> Result<f64> {
    LossWeights::default().combine(dc, l1)
}
