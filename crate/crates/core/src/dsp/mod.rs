//! Signal front end: audio containers, STFT, log-magnitude and mel projection.

mod audio;
pub mod mel;
pub mod stft;
pub mod wav;

pub use audio::AudioClip;
pub use mel::{mel_project, mel_unproject_mask, MelFilterbank};
pub use stft::{
    istft, istft_samples, log_magnitude, magnitude_to_db, stft, stft_samples, ComplexSpectrogram,
    StftConfig, Window,
};
pub use wav::{read_wav, resample, write_wav, WavFormat};
