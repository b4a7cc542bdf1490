//! Triangular mel filterbank (Slaney mel scale, area-normalized filters).

use ndarray::Array2;

use crate::error::{Error, Result};

const MIN_LOG_HZ: f64 = 1000.0;
const LIN_STEP: f64 = 200.0 / 3.0;

fn min_log_mel() -> f64 {
    MIN_LOG_HZ / LIN_STEP
}

fn log_step() -> f64 {
    6.4_f64.ln() / 27.0
}

pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / LIN_STEP
    } else {
        min_log_mel() + (hz / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < min_log_mel() {
        mel * LIN_STEP
    } else {
        MIN_LOG_HZ * ((mel - min_log_mel()) * log_step()).exp()
    }
}

/// Nonnegative `M x F` projection from linear-frequency bins to mel bands.
///
/// Alongside the raw weights the filterbank keeps two derived operators:
/// `pool` (rows scaled to sum to one, so a constant mask pools to the same
/// constant) and `lift` (`F x M`, the transpose with each frequency row scaled
/// to sum to one where any filter covers it).
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Array2<f64>,
    pool: Array2<f64>,
    lift: Array2<f64>,
    sample_rate: u32,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, n_fft: usize, mel_bins: usize, fmin: f64, fmax: f64) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if mel_bins == 0 || n_fft < 2 || !(0.0..fmax).contains(&fmin) || fmax > nyquist {
            return Err(Error::Config(format!(
                "invalid mel filterbank: {mel_bins} bins, n_fft {n_fft}, range {fmin}..{fmax} Hz at {sample_rate} Hz"
            )));
        }
        let bins = n_fft / 2 + 1;
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..mel_bins + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (mel_bins + 1) as f64))
            .collect();

        let mut weights = Array2::zeros((mel_bins, bins));
        for m in 0..mel_bins {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (right - left);
            for f in 0..bins {
                let hz = f as f64 * bin_hz;
                let rise = (hz - left) / (center - left);
                let fall = (right - hz) / (right - center);
                let w = rise.min(fall).max(0.0);
                weights[[m, f]] = w * norm;
            }
            // Narrow filters can fall between bin centers; give them the nearest bin.
            if weights.row(m).iter().all(|&w| w <= 0.0) {
                let nearest = ((center / bin_hz).round() as usize).min(bins - 1);
                weights[[m, nearest]] = norm;
            }
        }
        Self::from_weights(weights, sample_rate)
    }

    /// Builds a filterbank from explicit weights. Every row needs a positive entry.
    pub fn from_weights(weights: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("filterbank weights must be finite and nonnegative"));
        }
        if weights.rows().into_iter().any(|r| r.iter().all(|&w| w <= 0.0)) {
            return Err(Error::invalid("every mel filter needs a positive weight"));
        }
        let mut pool = weights.clone();
        for mut row in pool.rows_mut() {
            let s: f64 = row.sum();
            row /= s;
        }
        let mut lift = weights.t().to_owned();
        for mut row in lift.rows_mut() {
            let s: f64 = row.sum();
            if s > 0.0 {
                row /= s;
            }
        }
        Ok(Self {
            weights,
            pool,
            lift,
            sample_rate,
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn mel_bins(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_freq_bins(&self) -> usize {
        self.weights.ncols()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Row-normalized weights (`M x F`).
    pub fn pool_matrix(&self) -> &Array2<f64> {
        &self.pool
    }

    /// Column-normalized transpose (`F x M`).
    pub fn lift_matrix(&self) -> &Array2<f64> {
        &self.lift
    }

    /// Whether linear bin `f` is covered by at least one filter.
    pub fn covers(&self, f: usize) -> bool {
        self.weights.column(f).iter().any(|&w| w > 0.0)
    }

    fn check_freq_rows(&self, mat: &Array2<f64>) -> Result<()> {
        if mat.nrows() != self.num_freq_bins() {
            return Err(Error::shape(format!(
                "matrix has {} frequency rows, filterbank expects {}",
                mat.nrows(),
                self.num_freq_bins()
            )));
        }
        Ok(())
    }

    /// Weighted average of a linear-frequency mask within each mel band.
    pub fn pool_mask(&self, mask: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_freq_rows(mask)?;
        Ok(self.pool.dot(mask))
    }
}

/// `weights . mat`: projects an `F x T` matrix onto `M x T` mel bands.
pub fn mel_project(mat: &Array2<f64>, fb: &MelFilterbank) -> Result<Array2<f64>> {
    fb.check_freq_rows(mat)?;
    Ok(fb.weights.dot(mat))
}

/// Lifts an `M x T` mel-domain mask to `F x T` linear frequency.
///
/// Each frequency bin receives the filter-weighted average of the mel mask
/// values of the bands covering it (zero where no band does), then the result
/// is clamped to `[0, 1]`.
pub fn mel_unproject_mask(mel_mask: &Array2<f64>, fb: &MelFilterbank) -> Result<Array2<f64>> {
    if mel_mask.nrows() != fb.mel_bins() {
        return Err(Error::shape(format!(
            "mask has {} mel rows, filterbank has {}",
            mel_mask.nrows(),
            fb.mel_bins()
        )));
    }
    if mel_mask.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("mel mask contains non-finite values"));
    }
    Ok(fb.lift.dot(mel_mask).mapv(|v| v.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fb() -> MelFilterbank {
        MelFilterbank::new(16_000, 1024, 64, 0.0, 8000.0).unwrap()
    }

    #[test]
    fn scale_round_trip() {
        for hz in [0.0, 60.0, 999.0, 1000.0, 4000.0, 22_050.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn rows_nonempty_and_nonnegative() {
        for (sr, n, m) in [(16_000, 1024, 64), (48_000, 2048, 300), (8000, 256, 40)] {
            let fb = MelFilterbank::new(sr, n, m, 0.0, sr as f64 / 2.0).unwrap();
            assert_eq!(fb.weights().dim(), (m, n / 2 + 1));
            for row in fb.weights().rows() {
                assert!(row.iter().all(|&w| w >= 0.0 && w.is_finite()));
                assert!(row.iter().any(|&w| w > 0.0));
            }
        }
    }

    #[test]
    fn identity_filterbank_projection() {
        let id = MelFilterbank::from_weights(Array2::eye(5), 8000).unwrap();
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64);
        assert_eq!(mel_project(&x, &id).unwrap(), x);
        assert_eq!(mel_unproject_mask(&Array2::zeros((5, 3)), &id).unwrap(), Array2::<f64>::zeros((5, 3)));
    }

    #[test]
    fn single_hot_bin() {
        let fb = fb();
        let f = 40;
        let mut x = Array2::zeros((fb.num_freq_bins(), 2));
        x[[f, 1]] = 1.0;
        let y = mel_project(&x, &fb).unwrap();
        for m in 0..fb.mel_bins() {
            assert_eq!(y[[m, 1]], fb.weights()[[m, f]]);
            assert_eq!(y[[m, 0]], 0.0);
        }
    }

    #[test]
    fn shape_mismatch() {
        let fb = fb();
        assert!(mel_project(&Array2::zeros((10, 3)), &fb).is_err());
        assert!(mel_unproject_mask(&Array2::zeros((10, 3)), &fb).is_err());
    }

    #[test]
    fn ones_lift_to_ones_on_covered_bins() {
        let fb = fb();
        let lin = mel_unproject_mask(&Array2::ones((64, 4)), &fb).unwrap();
        for f in 0..fb.num_freq_bins() {
            let expect = if fb.covers(f) { 1.0 } else { 0.0 };
            assert!(lin.row(f).iter().all(|&v| (v - expect).abs() < 1e-12));
        }
    }

    #[test]
    fn one_hot_lift_stays_in_band_support() {
        let fb = fb();
        let m = 20;
        let mut mel = Array2::zeros((64, 1));
        mel[[m, 0]] = 1.0;
        let lin = mel_unproject_mask(&mel, &fb).unwrap();
        for f in 0..fb.num_freq_bins() {
            let in_support = fb.weights()[[m, f]] > 0.0;
            assert_eq!(lin[[f, 0]] > 0.0, in_support, "bin {f}");
        }
        let back = mel_project(&lin, &fb).unwrap();
        let argmax = (0..64)
            .max_by(|&a, &b| back[[a, 0]].partial_cmp(&back[[b, 0]]).unwrap())
            .unwrap();
        assert_eq!(argmax, m);
    }

    proptest! {
        #[test]
        fn projection_is_linear(a in -3.0..3.0f64, b in -3.0..3.0f64, seed in 0u64..1000) {
            let fb = MelFilterbank::new(8000, 128, 16, 0.0, 4000.0).unwrap();
            let gen = |s: u64| Array2::from_shape_fn((65, 3), |(i, j)| {
                (((i * 31 + j * 17) as u64 ^ s) % 97) as f64 / 97.0 - 0.5
            });
            let (x, y) = (gen(seed), gen(seed.wrapping_mul(7) + 1));
            let lhs = mel_project(&(&x * a + &y * b), &fb).unwrap();
            let rhs = mel_project(&x, &fb).unwrap() * a + mel_project(&y, &fb).unwrap() * b;
            for (l, r) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((l - r).abs() <= 1e-12 * (1.0 + l.abs()));
            }
        }

        #[test]
        fn lifted_mask_in_unit_range(vals in proptest::collection::vec(-2.0..3.0f64, 16 * 4)) {
            let fb = MelFilterbank::new(8000, 128, 16, 0.0, 4000.0).unwrap();
            let mel = Array2::from_shape_vec((16, 4), vals).unwrap();
            let lin = mel_unproject_mask(&mel, &fb).unwrap();
            prop_assert!(lin.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
