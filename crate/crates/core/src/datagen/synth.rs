//! Seeded stand-in stems, one reserved band per class:
//!
//! | class  | content                                             | band            |
//! |--------|-----------------------------------------------------|-----------------|
//! | bass   | note sequence, f0 60-120 Hz, weak 2nd harmonic       | 60-240 Hz       |
//! | other  | sustained major triads, root 250-300 Hz              | 250-450 Hz      |
//! | vocals | vibrato tone, f0 600-700 Hz, weaker 2nd partial      | 570-1470 Hz     |
//! | drums  | decaying noise bursts, band-passed                   | 2.5-6 kHz       |
//!
//! Every stem is scaled to the same RMS level.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::AudioClip;
use crate::error::{Error, Result};

pub const SYNTH_CLASSES: [&str; 4] = ["vocals", "drums", "bass", "other"];

/// RMS level of every synthetic stem.
pub const SYNTH_RMS: f64 = 0.1;

/// Burst band of the synthetic drums, in Hz.
pub const DRUM_BAND: (f64, f64) = (2500.0, 6000.0);

const FADE_SECONDS: f64 = 0.02;

pub fn synth_stem(class_name: &str, duration: f64, sample_rate: u32, seed: u64) -> Result<AudioClip> {
    if !(duration >= 0.0) || !duration.is_finite() || sample_rate == 0 {
        return Err(Error::invalid(format!(
            "cannot synthesize {duration} s at {sample_rate} Hz"
        )));
    }
    let n = (duration * sample_rate as f64).round() as usize;
    let sr = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = match class_name {
        "bass" => notes(n, sr, &mut rng, (0.25, 0.5), |r| vec![(r.random_range(60.0..120.0), 1.0), (0.0, 0.2)]),
        "other" => notes(n, sr, &mut rng, (0.8, 1.6), |r| {
            let root = r.random_range(250.0..300.0);
            vec![(root, 1.0), (root * 1.25, 0.8), (root * 1.5, 0.7)]
        }),
        "vocals" => vocals(n, sr, &mut rng),
        "drums" => drums(n, sr, &mut rng),
        other => {
            return Err(Error::invalid(format!(
                "no synthetic generator for class `{other}` (known: vocals, drums, bass, other)"
            )))
        }
    };
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= SYNTH_RMS / rms);
    }
    AudioClip::mono(x, sample_rate)
}

/// Raised-cosine fade-in/out of `fade` samples over a segment of `len` samples.
fn envelope(i: usize, len: usize, fade: usize) -> f64 {
    let fade = fade.min(len / 2).max(1);
    let edge = i.min(len - 1 - i);
    if edge >= fade {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge as f64 / fade as f64).cos()
    }
}

/// Sequence of notes with random lengths. `voicing` yields (frequency, amplitude)
/// pairs; a zero frequency means "second harmonic of the first partial".
fn notes<F>(n: usize, sr: f64, rng: &mut ChaCha8Rng, len_range: (f64, f64), voicing: F) -> Vec<f64>
where
    F: Fn(&mut ChaCha8Rng) -> Vec<(f64, f64)>,
{
    let mut x = vec![0.0; n];
    let fade = (FADE_SECONDS * sr) as usize;
    let mut start = 0;
    while start < n {
        let len = ((rng.random_range(len_range.0..len_range.1) * sr) as usize).clamp(1, n - start);
        let mut partials = voicing(rng);
        let f0 = partials[0].0;
        for p in partials.iter_mut() {
            if p.0 == 0.0 {
                p.0 = 2.0 * f0;
            }
        }
        let phases: Vec<f64> = partials.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        for i in 0..len {
            let t = i as f64 / sr;
            let s: f64 = partials
                .iter()
                .zip(&phases)
                .map(|((f, a), ph)| a * (2.0 * PI * f * t + ph).sin())
                .sum();
            x[start + i] = s * envelope(i, len, fade);
        }
        start += len;
    }
    x
}

fn vocals(n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = vec![0.0; n];
    let fade = (FADE_SECONDS * sr) as usize;
    let mut start = 0;
    let mut phase = rng.random_range(0.0..2.0 * PI);
    while start < n {
        let len = ((rng.random_range(0.3..0.7) * sr) as usize).clamp(1, n - start);
        let f0 = rng.random_range(600.0..700.0);
        let rate = rng.random_range(4.5..6.5);
        let depth = rng.random_range(0.01..0.03);
        for i in 0..len {
            let t = i as f64 / sr;
            let f = f0 * (1.0 + depth * (2.0 * PI * rate * t).sin());
            phase += 2.0 * PI * f / sr;
            let s = phase.sin() + 0.4 * (2.0 * phase).sin();
            x[start + i] = s * envelope(i, len, fade);
        }
        start += len;
    }
    x
}

fn drums(n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = vec![0.0; n];
    let mut onset = (rng.random_range(0.0..0.1) * sr) as usize;
    while onset < n {
        let decay = rng.random_range(0.02..0.05) * sr;
        let amp = rng.random_range(0.6..1.0);
        let len = ((decay * 6.0) as usize).min(n - onset);
        for i in 0..len {
            let z: f64 = rng.sample(StandardNormal);
            x[onset + i] += amp * z * (-(i as f64) / decay).exp();
        }
        onset += (rng.random_range(0.12..0.25) * sr) as usize;
    }
    let hi = DRUM_BAND.1.min(0.45 * sr);
    band_pass(&mut x, sr, DRUM_BAND.0.min(hi * 0.5), hi);
    x
}

/// Zeroes every DFT bin outside `[lo, hi]` Hz.
fn band_pass(x: &mut [f64], sr: f64, lo: f64, hi: f64) {
    let n = x.len();
    if n == 0 {
        return;
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * sr / n as f64;
        if f < lo || f > hi {
            *b = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    for (v, b) in x.iter_mut().zip(&buf) {
        *v = b.re / n as f64;
    }
}

/// Fraction of the signal's spectral energy between `lo` and `hi` Hz.
pub fn band_energy_fraction(x: &[f64], sample_rate: u32, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    let (mut inside, mut total) = (0.0, 0.0);
    for (k, b) in buf.iter().enumerate() {
        let e = b.norm_sqr();
        let f = k.min(n - k) as f64 * sample_rate as f64 / n as f64;
        total += e;
        if (lo..=hi).contains(&f) {
            inside += e;
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}
