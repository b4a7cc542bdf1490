//! Analysis frontend shared by training and inference: STFT, log magnitude,
//! mel pooling, network input scaling and training targets.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::dsp::{magnitude_to_db, stft_samples, AudioClip, ComplexSpectrogram, MelFilterbank, StftConfig, Window};
use crate::error::{Error, Result};
use crate::losses::{ideal_binary_masks, lift_masks, loudness_gate, mel_affinity_targets, AffinityTargets, DEFAULT_GATE_DB};

/// Level assigned to an all-zero spectrogram.
const SILENCE_DB: f64 = -200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub window_size: usize,
    pub hop_size: usize,
    pub window: Window,
    pub mel_bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Log floor relative to the spectrogram maximum.
    pub floor_db: f64,
    /// Measure the network input relative to each clip's spectral peak.
    pub normalize: bool,
    /// Loudness gate for the clustering loss, relative to the loudest mel bin.
    pub gate_db: f64,
}

impl FrontendConfig {
    /// 48 kHz, 2048-sample window, hop 512, 300 mel bins.
    pub fn full_scale() -> Self {
        Self {
            sample_rate: 48_000,
            window_size: 2048,
            hop_size: 512,
            window: Window::SqrtHann,
            mel_bins: 300,
            fmin: 0.0,
            fmax: 24_000.0,
            floor_db: -80.0,
            normalize: true,
            gate_db: DEFAULT_GATE_DB,
        }
    }

    /// 16 kHz, 1024-sample window, hop 256, 64 mel bins.
    pub fn desk_scale() -> Self {
        Self {
            sample_rate: 16_000,
            window_size: 1024,
            hop_size: 256,
            mel_bins: 64,
            fmax: 8000.0,
            ..Self::full_scale()
        }
    }
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

/// Analysis of one mono signal.
#[derive(Debug, Clone)]
pub struct Features {
    pub spec: ComplexSpectrogram,
    /// `F x T` magnitudes.
    pub magnitude: Array2<f64>,
    /// `M x T` band-mean log magnitude in dB.
    pub logmel_db: Array2<f64>,
    /// `M x T` network input.
    pub input: Array2<f64>,
}

/// One featurized training clip.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub id: String,
    pub input: Array2<f64>,
    pub mix_mag: Array2<f64>,
    /// `(C, F, T)` source magnitudes.
    pub source_mags: Array3<f64>,
    pub targets: AffinityTargets,
}

#[derive(Debug, Clone)]
pub struct Frontend {
    config: FrontendConfig,
    stft: StftConfig,
    fb: MelFilterbank,
}

impl Frontend {
    pub fn new(config: FrontendConfig) -> Result<Self> {
        let stft = StftConfig::new(config.window_size, config.hop_size, config.window)?;
        let fb = MelFilterbank::new(config.sample_rate, config.window_size, config.mel_bins, config.fmin, config.fmax)?;
        if !(config.floor_db < 0.0) || !(config.gate_db < 0.0) {
            return Err(Error::Config("floor_db and gate_db must be negative".into()));
        }
        Ok(Self { config, stft, fb })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn stft_config(&self) -> &StftConfig {
        &self.stft
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.fb
    }

    pub fn analyze_samples(&self, x: &[f64]) -> Result<Features> {
        let spec = stft_samples(x, self.config.sample_rate, &self.stft)?;
        let magnitude = spec.magnitude();
        let peak = magnitude.fold(0.0_f64, |a, &b| a.max(b));
        let peak_db = if peak > 0.0 { 20.0 * peak.log10() } else { SILENCE_DB };
        let floor = if peak > 0.0 { peak_db + self.config.floor_db } else { SILENCE_DB };
        let db = magnitude_to_db(&magnitude, floor);
        let logmel_db = self.fb.pool_matrix().dot(&db);
        let reference = if self.config.normalize {
            peak_db
        } else {
            0.0
        };
        let scale = -self.config.floor_db;
        let input = logmel_db.mapv(|v| 1.0 + 2.0 * (v - reference) / scale);
        Ok(Features {
            spec,
            magnitude,
            logmel_db,
            input,
        })
    }

    pub fn analyze(&self, clip: &AudioClip) -> Result<Features> {
        if clip.sample_rate() != self.config.sample_rate {
            return Err(Error::invalid(format!(
                "clip at {} Hz, frontend expects {} Hz",
                clip.sample_rate(),
                self.config.sample_rate
            )));
        }
        self.analyze_samples(clip.mono_samples()?)
    }

    /// Features, magnitudes and clustering targets for a mixture and its stems.
    pub fn training_example(&self, id: &str, mixture: &AudioClip, stems: &[AudioClip]) -> Result<TrainingExample> {
        let mix = self.analyze(mixture)?;
        let mags = stems
            .iter()
            .map(|s| {
                if s.len() != mixture.len() {
                    return Err(Error::shape("stem and mixture lengths differ"));
                }
                Ok(self.analyze(s)?.magnitude)
            })
            .collect::<Result<Vec<_>>>()?;
        let ibm = ideal_binary_masks(&mags)?;
        let targets = mel_affinity_targets(&ibm, &self.fb, &mix.logmel_db, self.config.gate_db)?;
        let views: Vec<_> = mags.iter().map(|m| m.view()).collect();
        let source_mags = ndarray::stack(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?;
        Ok(TrainingExample {
            id: id.to_string(),
            input: mix.input,
            mix_mag: mix.magnitude,
            source_mags,
            targets,
        })
    }

    /// Mel masks `(T, M, C)` to clamped linear masks `(C, F, T)`.
    pub fn lift(&self, mel_masks: &Array3<f64>) -> Result<Array3<f64>> {
        lift_masks(mel_masks, &self.fb)
    }

    /// Bins whose level clears the loudness gate, in flattened order.
    pub fn gate(&self, logmel_db: &Array2<f64>) -> ndarray::Array1<f64> {
        loudness_gate(logmel_db, self.config.gate_db)
    }
}
