use crate::error::{Error, Result};

/// Multi-channel time-domain audio with a fixed sample rate.
///
/// All channels have the same length and every sample is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if channels.is_empty() || channels.len() > 2 {
            return Err(Error::invalid(format!(
                "expected 1 or 2 channels, got {}",
                channels.len()
            )));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::invalid("channel lengths differ"));
        }
        if channels.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::invalid("audio contains non-finite samples"));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn silence(len: usize, channels: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![vec![0.0; len]; channels], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Number of samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn is_mono(&self) -> bool {
        self.channels.len() == 1
    }

    /// Samples of a mono clip. Errors for stereo input.
    pub fn mono_samples(&self) -> Result<&[f64]> {
        if !self.is_mono() {
            return Err(Error::invalid("expected a mono clip"));
        }
        Ok(&self.channels[0])
    }

    /// Downmix by averaging channels.
    pub fn to_mono(&self) -> AudioClip {
        if self.is_mono() {
            return self.clone();
        }
        let n = self.channels.len() as f64;
        let samples = (0..self.len())
            .map(|i| self.channels.iter().map(|c| c[i]).sum::<f64>() / n)
            .collect();
        AudioClip {
            channels: vec![samples],
            sample_rate: self.sample_rate,
        }
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flatten()
            .fold(0.0_f64, |m, s| m.max(s.abs()))
    }

    pub fn energy(&self) -> f64 {
        self.channels.iter().flatten().map(|s| s * s).sum()
    }

    pub fn scaled(&self, gain: f64) -> AudioClip {
        AudioClip {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|s| s * gain).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Copy of `len` samples starting at `start`. Errors if the range exceeds the clip.
    pub fn excerpt(&self, start: usize, len: usize) -> Result<AudioClip> {
        if start + len > self.len() {
            return Err(Error::invalid(format!(
                "excerpt [{start}, {}) exceeds clip length {}",
                start + len,
                self.len()
            )));
        }
        Ok(AudioClip {
            channels: self
                .channels
                .iter()
                .map(|c| c[start..start + len].to_vec())
                .collect(),
            sample_rate: self.sample_rate,
        })
    }
}
