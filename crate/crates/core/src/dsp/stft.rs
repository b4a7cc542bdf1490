//! Short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Frames are centered: the signal is padded with `window_size / 2` zeros on
//! the left, frame `t` is centered on sample `t * hop_size`, and a clip of `n`
//! samples yields `ceil(n / hop_size)` frames. Synthesis divides by the summed
//! squared window, so reconstruction is exact wherever the envelope is nonzero.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::audio::AudioClip;
use crate::error::{Error, Result};

/// Envelope values below this are treated as uncovered samples.
const ENVELOPE_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    /// Square root of the periodic Hann window, used for both analysis and synthesis.
    SqrtHann,
    Hann,
    Rectangular,
}

impl Window {
    pub fn samples(self, len: usize) -> Vec<f64> {
        let hann = |n: usize| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos();
        (0..len)
            .map(|n| match self {
                Window::SqrtHann => hann(n).sqrt(),
                Window::Hann => hann(n),
                Window::Rectangular => 1.0,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    window_size: usize,
    hop_size: usize,
    window: Window,
}

impl StftConfig {
    /// Validates `0 < hop <= window` and the overlap-add condition: the squared
    /// window summed over all hop shifts must be constant.
    pub fn new(window_size: usize, hop_size: usize, window: Window) -> Result<Self> {
        if window_size < 2 || hop_size == 0 || hop_size > window_size {
            return Err(Error::Config(format!(
                "need 0 < hop ({hop_size}) <= window ({window_size}) and window >= 2"
            )));
        }
        let w = window.samples(window_size);
        let mut sums = vec![0.0; hop_size];
        for (n, v) in w.iter().enumerate() {
            sums[n % hop_size] += v * v;
        }
        let max = sums.iter().cloned().fold(f64::MIN, f64::max);
        let min = sums.iter().cloned().fold(f64::MAX, f64::min);
        if max <= 0.0 || (max - min) > 1e-9 * max {
            return Err(Error::Config(format!(
                "{window:?} window of {window_size} samples is not overlap-add constant at hop {hop_size}"
            )));
        }
        Ok(Self {
            window_size,
            hop_size,
            window,
        })
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn hop_size(&self) -> usize {
        self.hop_size
    }

    pub fn window(&self) -> Window {
        self.window
    }

    /// Number of frequency bins, `window_size / 2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    /// Number of frames produced for `num_samples` input samples.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        num_samples.div_ceil(self.hop_size).max(1)
    }
}

/// Complex spectrogram, frequency-major (`F x T`).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    values: Array2<Complex64>,
    config: StftConfig,
    sample_rate: u32,
    num_samples: usize,
}

impl ComplexSpectrogram {
    pub fn new(
        values: Array2<Complex64>,
        config: StftConfig,
        sample_rate: u32,
        num_samples: usize,
    ) -> Result<Self> {
        if values.nrows() != config.num_bins() {
            return Err(Error::shape(format!(
                "spectrogram has {} bins, config expects {}",
                values.nrows(),
                config.num_bins()
            )));
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("spectrogram contains non-finite values"));
        }
        Ok(Self {
            values,
            config,
            sample_rate,
            num_samples,
        })
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Length of the time-domain signal this spectrogram was computed from.
    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.values.mapv(|z| z.norm())
    }

    /// Elementwise real gain, keeping the phase.
    pub fn apply_mask(&self, mask: &Array2<f64>) -> Result<ComplexSpectrogram> {
        if mask.dim() != self.values.dim() {
            return Err(Error::shape(format!(
                "mask {:?} does not match spectrogram {:?}",
                mask.dim(),
                self.values.dim()
            )));
        }
        let mut out = self.clone();
        out.values.zip_mut_with(mask, |z, &m| *z *= m);
        Ok(out)
    }
}

pub fn stft(clip: &AudioClip, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    stft_samples(clip.mono_samples()?, clip.sample_rate(), cfg)
}

pub fn stft_samples(
    samples: &[f64],
    sample_rate: u32,
    cfg: &StftConfig,
) -> Result<ComplexSpectrogram> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot analyze an empty signal"));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("signal contains non-finite samples"));
    }
    let n_fft = cfg.window_size;
    let half = n_fft / 2;
    let frames = cfg.num_frames(samples.len());
    let bins = cfg.num_bins();
    let window = cfg.window.samples(n_fft);

    let padded_len = (frames - 1) * cfg.hop_size + n_fft;
    let mut padded = vec![0.0; padded_len.max(half + samples.len())];
    padded[half..half + samples.len()].copy_from_slice(samples);

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut values = Array2::<Complex64>::zeros((bins, frames));
    for t in 0..frames {
        let start = t * cfg.hop_size;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(padded[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for f in 0..bins {
            values[[f, t]] = buf[f];
        }
    }
    ComplexSpectrogram::new(values, *cfg, sample_rate, samples.len())
}

/// Inverse transform back to a mono clip of the original length.
pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioClip> {
    AudioClip::mono(istft_samples(spec)?, spec.sample_rate)
}

pub fn istft_samples(spec: &ComplexSpectrogram) -> Result<Vec<f64>> {
    let frames = spec.num_frames();
    if frames == 0 || spec.num_samples == 0 {
        return Err(Error::invalid("cannot invert an empty spectrogram"));
    }
    let cfg = spec.config;
    let n_fft = cfg.window_size;
    let half = n_fft / 2;
    let bins = cfg.num_bins();
    let window = cfg.window.samples(n_fft);

    let out_len = ((frames - 1) * cfg.hop_size + n_fft).max(half + spec.num_samples);
    let mut out = vec![0.0; out_len];
    let mut envelope = vec![0.0; out_len];

    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let scale = 1.0 / n_fft as f64;
    for t in 0..frames {
        for f in 0..bins {
            buf[f] = spec.values[[f, t]];
        }
        // Hermitian completion; DC and Nyquist imaginary parts are dropped.
        buf[0].im = 0.0;
        if n_fft % 2 == 0 {
            buf[half].im = 0.0;
        }
        for f in bins..n_fft {
            buf[f] = buf[n_fft - f].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop_size;
        for i in 0..n_fft {
            out[start + i] += buf[i].re * scale * window[i];
            envelope[start + i] += window[i] * window[i];
        }
    }
    Ok((half..half + spec.num_samples)
        .map(|i| {
            if envelope[i] > ENVELOPE_EPS {
                out[i] / envelope[i]
            } else {
                0.0
            }
        })
        .collect())
}

/// `20 log10 |X|`, clamped below at `floor_db`.
pub fn log_magnitude(spec: &ComplexSpectrogram, floor_db: f64) -> Array2<f64> {
    magnitude_to_db(&spec.magnitude(), floor_db)
}

pub fn magnitude_to_db(mags: &Array2<f64>, floor_db: f64) -> Array2<f64> {
    mags.mapv(|m| {
        if m > 0.0 {
            (20.0 * m.log10()).max(floor_db)
        } else {
            floor_db
        }
    })
}
