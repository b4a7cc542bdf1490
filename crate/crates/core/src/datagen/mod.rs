//! Incoherent mixtures from a stem bank: one random excerpt per class, drawn
//! from distinct songs when possible, summed to mono.

mod bank;
mod synth;

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{write_wav, AudioClip, WavFormat};
use crate::error::{Error, Result};

pub use bank::{load_stem, StemBank, StemEntry, StemLoader, StemSource};
pub use synth::{band_energy_fraction, synth_stem, DRUM_BAND, SYNTH_CLASSES, SYNTH_RMS};

/// Excerpts with more than this fraction of silent 10 ms frames are redrawn.
const SILENT_FRACTION: f64 = 0.99;
const SILENT_FRAME_RMS: f64 = 1e-3;
const SILENCE_RETRIES: usize = 10;
const MAX_JITTER_DB: f64 = 3.0;
const NORMALIZED_STEM_RMS: f64 = 0.1;
const PEAK_LIMIT: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub duration: f64,
    pub sample_rate: u32,
    /// Random per-stem gain within ±3 dB.
    pub gain_jitter: bool,
    /// Scale every stem to a common RMS before summing.
    pub normalize_stems: bool,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            duration: 3.2,
            sample_rate: 48_000,
            gain_jitter: false,
            normalize_stems: false,
        }
    }
}

impl MixConfig {
    pub fn num_samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemExcerpt {
    pub class: String,
    pub song: String,
    pub source: StemSource,
    /// Length of the full source stem in seconds.
    pub source_duration: f64,
    /// Excerpt start in seconds.
    pub offset: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub id: String,
    pub seed: u64,
    pub duration: f64,
    pub sample_rate: u32,
    pub normalize_stems: bool,
    pub stems: Vec<StemExcerpt>,
}

impl MixtureSpec {
    pub fn num_samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }

    pub fn class_names(&self) -> Vec<String> {
        self.stems.iter().map(|s| s.class.clone()).collect()
    }
}

fn is_mostly_silent(x: &[f64], sample_rate: u32) -> bool {
    let frame = (sample_rate as usize / 100).max(1);
    let frames: Vec<&[f64]> = x.chunks(frame).collect();
    if frames.is_empty() {
        return true;
    }
    let silent = frames
        .iter()
        .filter(|f| (f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64).sqrt() < SILENT_FRAME_RMS)
        .count();
    silent as f64 / frames.len() as f64 > SILENT_FRACTION
}

/// Draws one stem per class (uniformly, avoiding songs already used when the
/// bank has enough songs) and a random excerpt offset for each.
pub fn sample_mixture_spec<S: AsRef<str>>(
    bank: &StemBank,
    classes: &[S],
    cfg: &MixConfig,
    seed: u64,
    loader: &mut StemLoader,
) -> Result<MixtureSpec> {
    let n = cfg.num_samples();
    if n == 0 {
        return Err(Error::Config("mixture duration must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let distinct = bank.num_songs() >= classes.len();
    if !distinct {
        log::warn!(
            "bank split `{}` has {} songs for {} classes; stems may share songs",
            bank.split,
            bank.num_songs(),
            classes.len()
        );
    }
    let mut used = HashSet::new();
    let mut stems = Vec::with_capacity(classes.len());
    for class in classes {
        let class = class.as_ref();
        let long_enough: Vec<&StemEntry> = bank.entries_for(class).filter(|e| e.duration >= cfg.duration).collect();
        if long_enough.is_empty() {
            return Err(Error::MissingClass(class.to_string()));
        }
        let fresh: Vec<&StemEntry> = long_enough.iter().copied().filter(|e| !used.contains(&e.song)).collect();
        let pool = if distinct && !fresh.is_empty() { fresh } else { long_enough };
        let entry = pool[rng.random_range(0..pool.len())];
        used.insert(entry.song.clone());

        let audio = loader.load(class, &entry.source, entry.duration, cfg.sample_rate)?;
        if audio.len() < n {
            return Err(Error::invalid(format!("stem for `{class}` in song {} is shorter than the excerpt", entry.song)));
        }
        let span = audio.len() - n;
        let mut start = rng.random_range(0..=span);
        for attempt in 0..SILENCE_RETRIES {
            if !is_mostly_silent(&audio.channel(0)[start..start + n], cfg.sample_rate) {
                break;
            }
            if attempt + 1 == SILENCE_RETRIES {
                log::warn!("accepting a mostly silent `{class}` excerpt from {}", entry.song);
                break;
            }
            start = rng.random_range(0..=span);
        }
        let gain = if cfg.gain_jitter {
            10f64.powf(rng.random_range(-MAX_JITTER_DB..=MAX_JITTER_DB) / 20.0)
        } else {
            1.0
        };
        stems.push(StemExcerpt {
            class: class.to_string(),
            song: entry.song.clone(),
            source: entry.source.clone(),
            source_duration: entry.duration,
            offset: start as f64 / cfg.sample_rate as f64,
            gain,
        });
    }
    Ok(MixtureSpec {
        id: String::new(),
        seed,
        duration: cfg.duration,
        sample_rate: cfg.sample_rate,
        normalize_stems: cfg.normalize_stems,
        stems,
    })
}

/// Generates `count` specs with ids `mix-00000`, `mix-00001`, ...
pub fn generate_specs<S: AsRef<str>>(
    bank: &StemBank,
    classes: &[S],
    cfg: &MixConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<MixtureSpec>> {
    bank.require_classes(classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut loader = StemLoader::new();
    (0..count)
        .map(|i| {
            let mut spec = sample_mixture_spec(bank, classes, cfg, rng.next_u64(), &mut loader)?;
            spec.id = format!("mix-{i:05}");
            Ok(spec)
        })
        .collect()
}

/// Renders the mixture and its stems; the mixture is the exact sample sum.
pub fn render_mixture(spec: &MixtureSpec) -> Result<(AudioClip, Vec<AudioClip>)> {
    render_mixture_with(spec, &mut StemLoader::new())
}

pub fn render_mixture_with(spec: &MixtureSpec, loader: &mut StemLoader) -> Result<(AudioClip, Vec<AudioClip>)> {
    let n = spec.num_samples();
    let sr = spec.sample_rate;
    let mut stems: Vec<Vec<f64>> = Vec::with_capacity(spec.stems.len());
    for s in &spec.stems {
        let audio = loader.load(&s.class, &s.source, s.source_duration, sr)?;
        let start = (s.offset * sr as f64).round() as usize;
        if start + n > audio.len() {
            return Err(Error::invalid(format!(
                "{}: `{}` stem from {} is too short for a {} s excerpt at {} s",
                spec.id, s.class, s.song, spec.duration, s.offset
            )));
        }
        let mut x = audio.channel(0)[start..start + n].to_vec();
        let mut gain = s.gain;
        if spec.normalize_stems {
            let rms = (x.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
            if rms > 0.0 {
                gain *= NORMALIZED_STEM_RMS / rms;
            }
        }
        if gain != 1.0 {
            x.iter_mut().for_each(|v| *v *= gain);
        }
        stems.push(x);
    }
    let sum = |stems: &[Vec<f64>]| -> Vec<f64> {
        (0..n).map(|i| stems.iter().map(|s| s[i]).sum()).collect()
    };
    let mut mix = sum(&stems);
    let peak = mix.iter().chain(stems.iter().flatten()).fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > PEAK_LIMIT {
        let g = PEAK_LIMIT / peak;
        stems.iter_mut().flatten().for_each(|v| *v *= g);
        mix = sum(&stems);
    }
    let stems = stems
        .into_iter()
        .map(|s| AudioClip::mono(s, sr))
        .collect::<Result<Vec<_>>>()?;
    Ok((AudioClip::mono(mix, sr)?, stems))
}

pub fn write_manifest(path: &Path, specs: &[MixtureSpec]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for spec in specs {
        serde_json::to_writer(&mut out, spec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<MixtureSpec>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::invalid(format!("cannot open manifest {}: {e}", path.display())))?;
    let mut specs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let spec: MixtureSpec = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("{} line {}: {e}", path.display(), i + 1)))?;
        specs.push(spec);
    }
    Ok(specs)
}

/// Writes `<out>/<id>/mixture.wav` plus one WAV per class, and
/// `<out>/manifest.jsonl`.
pub fn write_wav_tree(out: &Path, specs: &[MixtureSpec]) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut loader = StemLoader::new();
    for spec in specs {
        let dir = out.join(&spec.id);
        fs::create_dir_all(&dir)?;
        let (mix, stems) = render_mixture_with(spec, &mut loader)?;
        write_wav(dir.join("mixture.wav"), &mix, WavFormat::Float32)?;
        for (s, clip) in spec.stems.iter().zip(&stems) {
            write_wav(dir.join(format!("{}.wav", s.class)), clip, WavFormat::Float32)?;
        }
    }
    write_manifest(&out.join("manifest.jsonl"), specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn desk(duration: f64, sr: u32) -> MixConfig {
        MixConfig {
            duration,
            sample_rate: sr,
            ..MixConfig::default()
        }
    }

    #[test]
    fn spec_is_deterministic_and_distinct() {
        let bank = StemBank::synthetic("train", &SYNTH_CLASSES, 8, 2.0, 1);
        let mut loader = StemLoader::new();
        let a = sample_mixture_spec(&bank, &SYNTH_CLASSES, &desk(1.0, 8000), 5, &mut loader).unwrap();
        let b = sample_mixture_spec(&bank, &SYNTH_CLASSES, &desk(1.0, 8000), 5, &mut loader).unwrap();
        assert_eq!(a, b);
        let songs: HashSet<_> = a.stems.iter().map(|s| &s.song).collect();
        assert_eq!(songs.len(), 4);
        assert_eq!(a.class_names(), SYNTH_CLASSES);
        for s in &a.stems {
            assert!(s.offset >= 0.0 && s.offset + 1.0 <= 2.0 + 1e-9);
        }
    }

    #[test]
    fn single_song_bank_reuses_it() {
        let bank = StemBank::synthetic("train", &SYNTH_CLASSES, 1, 1.5, 1);
        let spec = sample_mixture_spec(&bank, &SYNTH_CLASSES, &desk(1.0, 8000), 0, &mut StemLoader::new()).unwrap();
        assert!(spec.stems.iter().all(|s| s.song == "synth-train-0000"));
    }

    #[test]
    fn missing_class_named() {
        let bank = StemBank::synthetic("train", &["vocals", "drums"], 3, 2.0, 1);
        match generate_specs(&bank, &SYNTH_CLASSES, &desk(1.0, 8000), 1, 0) {
            Err(Error::MissingClass(c)) => assert_eq!(c, "bass"),
            other => panic!("{other:?}"),
        }
        // Entries shorter than the excerpt do not count.
        let short = StemBank::synthetic("train", &SYNTH_CLASSES, 3, 0.5, 1);
        assert!(matches!(
            sample_mixture_spec(&short, &SYNTH_CLASSES, &desk(1.0, 8000), 0, &mut StemLoader::new()),
            Err(Error::MissingClass(_))
        ));
    }

    #[test]
    fn every_entry_eventually_drawn() {
        // Ten songs, 1000 draws: missing any one has probability about 10 * 0.9^1000.
        let bank = StemBank::synthetic("train", &["bass"], 10, 0.2, 3);
        let mut loader = StemLoader::new();
        let mut counts: HashMap<String, usize> = HashMap::new();
        for seed in 0..1000 {
            let spec = sample_mixture_spec(&bank, &["bass"], &desk(0.1, 8000), seed, &mut loader).unwrap();
            *counts.entry(spec.stems[0].song.clone()).or_default() += 1;
        }
        assert_eq!(counts.len(), 10);
    }

    #[test]
    fn render_is_additive() {
        let bank = StemBank::synthetic("train", &SYNTH_CLASSES, 5, 2.0, 2);
        let specs = generate_specs(&bank, &SYNTH_CLASSES, &desk(1.0, 16_000), 3, 4).unwrap();
        for spec in &specs {
            let (mix, stems) = render_mixture(spec).unwrap();
            assert_eq!(stems.len(), 4);
            for i in 0..mix.len() {
                let s: f64 = stems.iter().map(|c| c.channel(0)[i]).sum();
                assert_eq!(mix.channel(0)[i] - s, 0.0);
            }
        }
    }

    #[test]
    fn paper_excerpt_length() {
        let bank = StemBank::synthetic("train", &SYNTH_CLASSES, 4, 3.5, 2);
        let spec = sample_mixture_spec(&bank, &SYNTH_CLASSES, &MixConfig::default(), 1, &mut StemLoader::new()).unwrap();
        let (mix, stems) = render_mixture(&spec).unwrap();
        assert_eq!(mix.len(), 153_600);
        assert!(stems.iter().all(|s| s.len() == 153_600));
    }

    #[test]
    fn silent_stem_leaves_sum_of_others() {
        let dir = tempfile::tempdir().unwrap();
        let sr = 8000;
        let bank_root = dir.path().join("bank");
        let song = bank_root.join("test").join("song-a");
        fs::create_dir_all(&song).unwrap();
        for class in SYNTH_CLASSES {
            let clip = if class == "bass" {
                AudioClip::silence(16_000, 1, sr).unwrap()
            } else {
                synth_stem(class, 2.0, sr, 9).unwrap()
            };
            write_wav(song.join(format!("{class}.wav")), &clip, WavFormat::Float32).unwrap();
        }
        let bank = StemBank::from_dir(&bank_root, "test", &SYNTH_CLASSES).unwrap();
        assert_eq!(bank.entries.len(), 4);
        let spec = sample_mixture_spec(&bank, &SYNTH_CLASSES, &desk(1.0, sr), 0, &mut StemLoader::new()).unwrap();
        let (mix, stems) = render_mixture(&spec).unwrap();
        assert!(stems[2].channel(0).iter().all(|&v| v == 0.0));
        for i in 0..mix.len() {
            let others = stems[0].channel(0)[i] + stems[1].channel(0)[i] + stems[3].channel(0)[i];
            assert_eq!(mix.channel(0)[i], others);
        }
    }

    #[test]
    fn manifest_round_trip_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let bank = StemBank::synthetic("val", &SYNTH_CLASSES, 6, 2.0, 7);
        let cfg = MixConfig {
            gain_jitter: true,
            ..desk(1.0, 8000)
        };
        let a = generate_specs(&bank, &SYNTH_CLASSES, &cfg, 5, 11).unwrap();
        let b = generate_specs(&bank, &SYNTH_CLASSES, &cfg, 5, 11).unwrap();
        let (pa, pb) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        write_manifest(&pa, &a).unwrap();
        write_manifest(&pb, &b).unwrap();
        assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap());
        assert_eq!(read_manifest(&pa).unwrap(), a);
        assert!(a.iter().flat_map(|s| &s.stems).all(|s| (0.7..=1.42).contains(&s.gain)));
    }

    #[test]
    fn wav_tree_layout() {
        let dir = tempfile::tempdir().unwrap();
        let bank = StemBank::synthetic("train", &SYNTH_CLASSES, 4, 1.5, 7);
        let specs = generate_specs(&bank, &SYNTH_CLASSES, &desk(0.5, 8000), 2, 1).unwrap();
        write_wav_tree(dir.path(), &specs).unwrap();
        for name in ["mixture", "vocals", "drums", "bass", "other"] {
            assert!(dir.path().join("mix-00001").join(format!("{name}.wav")).is_file());
        }
        assert_eq!(read_manifest(&dir.path().join("manifest.jsonl")).unwrap(), specs);
    }

    #[test]
    fn silence_detection() {
        assert!(is_mostly_silent(&vec![0.0; 8000], 8000));
        let tone: Vec<f64> = (0..8000).map(|i| (i as f64 * 0.1).sin()).collect();
        assert!(!is_mostly_silent(&tone, 8000));
    }
}
