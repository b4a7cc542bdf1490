use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::synth_stem;
use crate::dsp::{read_wav, AudioClip};
use crate::error::{Error, Result};

/// Where a stem's audio comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StemSource {
    File { path: PathBuf },
    Synthetic { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemEntry {
    pub class: String,
    pub song: String,
    pub source: StemSource,
    /// Length in seconds.
    pub duration: f64,
}

/// Stems available for one split, grouped by song.
#[derive(Debug, Clone, PartialEq)]
pub struct StemBank {
    pub split: String,
    pub entries: Vec<StemEntry>,
}

impl StemBank {
    /// Scans `root/<split>/<song>/<class>.wav`; only the listed classes are kept.
    pub fn from_dir<S: AsRef<str>>(root: &Path, split: &str, classes: &[S]) -> Result<Self> {
        let dir = root.join(split);
        if !dir.is_dir() {
            return Err(Error::invalid(format!("stem bank split directory {} not found", dir.display())));
        }
        let mut songs: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        songs.sort();
        let mut entries = Vec::new();
        for song_dir in songs {
            let song = song_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            for class in classes {
                let path = song_dir.join(format!("{}.wav", class.as_ref()));
                if !path.is_file() {
                    continue;
                }
                let reader = hound::WavReader::open(&path)?;
                let duration = reader.duration() as f64 / reader.spec().sample_rate as f64;
                entries.push(StemEntry {
                    class: class.as_ref().to_string(),
                    song: song.clone(),
                    source: StemSource::File { path },
                    duration,
                });
            }
        }
        let bank = Self {
            split: split.to_string(),
            entries,
        };
        bank.require_classes(classes)?;
        Ok(bank)
    }

    /// `songs` synthetic songs, each holding one stem per class.
    pub fn synthetic<S: AsRef<str>>(split: &str, classes: &[S], songs: usize, song_duration: f64, seed: u64) -> Self {
        let split_salt = split.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        });
        let mut entries = Vec::with_capacity(songs * classes.len());
        for s in 0..songs {
            for (c, class) in classes.iter().enumerate() {
                let stem_seed = seed
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add(split_salt)
                    .wrapping_add((s * 64 + c) as u64);
                entries.push(StemEntry {
                    class: class.as_ref().to_string(),
                    song: format!("synth-{split}-{s:04}"),
                    source: StemSource::Synthetic { seed: stem_seed },
                    duration: song_duration,
                });
            }
        }
        Self {
            split: split.to_string(),
            entries,
        }
    }

    /// Errors naming the first class without an entry.
    pub fn require_classes<S: AsRef<str>>(&self, classes: &[S]) -> Result<()> {
        for class in classes {
            if !self.entries.iter().any(|e| e.class == class.as_ref()) {
                return Err(Error::MissingClass(class.as_ref().to_string()));
            }
        }
        Ok(())
    }

    pub fn entries_for<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a StemEntry> + 'a {
        self.entries.iter().filter(move |e| e.class == class)
    }

    pub fn num_songs(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.song.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len()
    }

    /// Entries grouped by class name.
    pub fn by_class(&self) -> BTreeMap<&str, Vec<&StemEntry>> {
        let mut map: BTreeMap<&str, Vec<&StemEntry>> = BTreeMap::new();
        for e in &self.entries {
            map.entry(e.class.as_str()).or_default().push(e);
        }
        map
    }
}

/// Loads full stems as mono audio at a fixed rate, caching each source.
#[derive(Debug, Default)]
pub struct StemLoader {
    cache: HashMap<String, AudioClip>,
}

impl StemLoader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(&mut self, class: &str, source: &StemSource, duration: f64, sample_rate: u32) -> Result<&AudioClip> {
        let key = format!("{class}|{source:?}|{duration}|{sample_rate}");
        if !self.cache.contains_key(&key) {
            let clip = load_stem(class, source, duration, sample_rate)?;
            self.cache.insert(key.clone(), clip);
        }
        Ok(&self.cache[&key])
    }
}

/// Full stem audio, downmixed to mono by channel averaging.
pub fn load_stem(class: &str, source: &StemSource, duration: f64, sample_rate: u32) -> Result<AudioClip> {
    match source {
        StemSource::File { path } => Ok(read_wav(path, Some(sample_rate))?.to_mono()),
        StemSource::Synthetic { seed } => synth_stem(class, duration, sample_rate, *seed),
    }
}
