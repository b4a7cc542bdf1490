use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};
use rubato::audioadapter_buffers::owned::InterleavedOwned;
use rubato::{Fft, FixedSync, Resampler};

use super::audio::AudioClip;
use crate::error::{Error, Result};

/// Sample encoding used when writing WAV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Pcm24,
    Float32,
}

/// Reads a 16/24/32-bit PCM or 32-bit float WAV file. When `target_rate` is
/// given and differs from the file's rate, the audio is resampled.
pub fn read_wav(path: impl AsRef<Path>, target_rate: Option<u32>) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(Error::invalid(format!(
            "{}: {channels} channels, only mono and stereo are supported",
            path.as_ref().display()
        )));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = (1_i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mut data = vec![Vec::with_capacity(interleaved.len() / channels); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, s) in frame.iter().enumerate() {
            data[c].push(*s);
        }
    }
    let clip = AudioClip::new(data, spec.sample_rate)?;
    match target_rate {
        Some(rate) if rate != clip.sample_rate() => resample(&clip, rate),
        _ => Ok(clip),
    }
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip, format: WavFormat) -> Result<()> {
    let (bits, sample_format) = match format {
        WavFormat::Pcm16 => (16, SampleFormat::Int),
        WavFormat::Pcm24 => (24, SampleFormat::Int),
        WavFormat::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: clip.num_channels() as u16,
        sample_rate: clip.sample_rate(),
        bits_per_sample: bits,
        sample_format,
    };
    let mut writer = WavWriter::create(path.as_ref(), spec)?;
    let full_scale = ((1_i64 << (bits - 1)) - 1) as f64;
    for i in 0..clip.len() {
        for c in clip.channels() {
            match format {
                WavFormat::Float32 => writer.write_sample(c[i] as f32)?,
                _ => writer.write_sample((c[i].clamp(-1.0, 1.0) * full_scale).round() as i32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Band-limited resampling to `rate`. Output length is `round(len * rate / old_rate)`.
pub fn resample(clip: &AudioClip, rate: u32) -> Result<AudioClip> {
    if rate == 0 {
        return Err(Error::invalid("target sample rate must be positive"));
    }
    if rate == clip.sample_rate() {
        return Ok(clip.clone());
    }
    let channels = clip.num_channels();
    let len = clip.len();
    let mut interleaved = Vec::with_capacity(len * channels);
    for i in 0..len {
        for c in clip.channels() {
            interleaved.push(c[i]);
        }
    }
    let input = InterleavedOwned::new_from(interleaved, channels, len)
        .map_err(|e| Error::Resample(format!("{e:?}")))?;
    let mut resampler = Fft::<f64>::new(
        clip.sample_rate() as usize,
        rate as usize,
        1024,
        channels,
        FixedSync::Both,
    )
    .map_err(|e| Error::Resample(e.to_string()))?;
    let out = resampler
        .process_all(&input, len, None)
        .map_err(|e| Error::Resample(e.to_string()))?;
    let data = out.take_data();
    let target_len = (len as f64 * rate as f64 / clip.sample_rate() as f64).round() as usize;
    let frames = data.len() / channels;
    let mut result = vec![vec![0.0; target_len]; channels];
    for (i, frame) in data.chunks_exact(channels).take(target_len.min(frames)).enumerate() {
        for (c, s) in frame.iter().enumerate() {
            result[c][i] = *s;
        }
    }
    AudioClip::new(result, rate)
}
