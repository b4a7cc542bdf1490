//! Signal-to-distortion scoring and Table-1-style reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::datagen::{read_manifest, render_mixture_with, MixtureSpec, StemLoader};
use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::separator::separate;
use crate::system::SeparationModel;

/// Scores are capped here when the residual vanishes.
pub const SDR_CAP_DB: f64 = 60.0;

/// Report columns, in this order when present.
pub const TABLE_COLUMNS: [&str; 4] = ["Vocals", "Drums", "Bass", "Other"];

pub const MIXTURE_ROW: &str = "Mixture (as estimate)";

pub const REPORT_NOTE: &str = "Plain SDR in dB, median over tracks. \
Not BSSEval v4; values are not comparable to published MUSDB18 figures.";

/// `10 log10(|s|^2 / |s - s_hat|^2)` over raw samples.
pub fn sdr_samples(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::shape(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let energy: f64 = reference.iter().map(|s| s * s).sum();
    if energy == 0.0 {
        return Err(Error::invalid("SDR is undefined for an all-zero reference"));
    }
    let residual: f64 = reference.iter().zip(estimate).map(|(s, e)| (s - e) * (s - e)).sum();
    if residual < 1e-12 * energy {
        return Ok(SDR_CAP_DB);
    }
    Ok((10.0 * (energy / residual).log10()).min(SDR_CAP_DB))
}

/// SDR over all channels jointly.
pub fn sdr(reference: &AudioClip, estimate: &AudioClip) -> Result<f64> {
    if reference.sample_rate() != estimate.sample_rate() || reference.num_channels() != estimate.num_channels() {
        return Err(Error::shape("reference and estimate differ in rate or channel count"));
    }
    let flat = |c: &AudioClip| c.channels().concat();
    sdr_samples(&flat(reference), &flat(estimate))
}

/// Column title for a class name, e.g. `vocals` -> `Vocals`.
pub fn column_title(class: &str) -> String {
    let mut chars = class.chars();
    chars
        .next()
        .map(|c| c.to_uppercase().chain(chars).collect())
        .unwrap_or_default()
}

/// Class names in report order: the fixed columns first, others after.
fn ordered_classes(classes: &[String]) -> Vec<String> {
    let mut out: Vec<String> = TABLE_COLUMNS
        .iter()
        .filter_map(|col| classes.iter().find(|c| column_title(c) == *col).cloned())
        .collect();
    let rest: Vec<String> = classes.iter().filter(|c| !out.contains(c)).cloned().collect();
    out.extend(rest);
    out
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Per-track scores of one approach.
#[derive(Debug, Clone, Serialize)]
pub struct ApproachScores {
    pub approach: String,
    /// Per class (in report order), the SDR of each scored track.
    pub per_class: Vec<Vec<f64>>,
}

impl ApproachScores {
    pub fn median(&self, class: usize) -> Option<f64> {
        median(&self.per_class[class])
    }

    pub fn mean(&self, class: usize) -> Option<f64> {
        let v = &self.per_class[class];
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub classes: Vec<String>,
    pub rows: Vec<ApproachScores>,
    pub tracks: usize,
    pub skipped: Vec<String>,
}

impl Report {
    pub fn columns(&self) -> Vec<String> {
        self.classes.iter().map(|c| column_title(c)).collect()
    }

    pub fn row(&self, approach: &str) -> Option<&ApproachScores> {
        self.rows.iter().find(|r| r.approach == approach)
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    fn cell(v: Option<f64>) -> String {
        v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["approach".to_string()];
        header.extend(self.columns());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.approach.clone()];
            rec.extend((0..self.classes.len()).map(|c| Self::cell(row.median(c))));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned plain-text table with the aggregation note and skipped tracks.
    pub fn format_table(&self) -> String {
        let cols = self.columns();
        let first = self.rows.iter().map(|r| r.approach.len()).chain([8]).max().unwrap_or(8);
        let widths: Vec<usize> = cols.iter().map(|c| c.len().max(7)).collect();
        let mut out = String::new();
        let _ = writeln!(out, "{REPORT_NOTE}");
        let _ = writeln!(out, "Tracks scored: {}", self.tracks);
        let _ = write!(out, "{:<first$}", "Approach");
        for (c, w) in cols.iter().zip(&widths) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
        let _ = writeln!(out, "{}", "-".repeat(first + widths.iter().map(|w| w + 2).sum::<usize>()));
        for row in &self.rows {
            let _ = write!(out, "{:<first$}", row.approach);
            for (c, w) in widths.iter().enumerate() {
                let _ = write!(out, "  {:>w$}", Self::cell(row.median(c)), w = *w);
            }
            out.push('\n');
        }
        for s in &self.skipped {
            let _ = writeln!(out, "skipped: {s}");
        }
        out
    }

    /// Writes `path` as CSV and the formatted table next to it with a `.txt` extension.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        self.write_csv(path)?;
        fs::write(path.with_extension("txt"), self.format_table())?;
        Ok(())
    }
}

/// Separates every mixture with each model and scores the estimates; the
/// mixture-as-estimate row comes last.
///
/// Tracks whose references cannot be rendered are skipped, and so are
/// silent references, each with a warning recorded in the report.
pub fn evaluate_specs(models: &[(&str, &SeparationModel)], specs: &[MixtureSpec]) -> Result<Report> {
    let (_, first) = models.first().ok_or_else(|| Error::invalid("no models to evaluate"))?;
    let classes = ordered_classes(first.classes());
    for (label, m) in models {
        if ordered_classes(m.classes()) != classes {
            return Err(Error::Config(format!("model `{label}` separates different classes")));
        }
    }
    let mut rows: Vec<ApproachScores> = models
        .iter()
        .map(|(l, _)| l.to_string())
        .chain([MIXTURE_ROW.to_string()])
        .map(|approach| ApproachScores {
            approach,
            per_class: vec![Vec::new(); classes.len()],
        })
        .collect();
    let mut skipped = Vec::new();
    let mut tracks = 0;
    let mut loader = StemLoader::new();
    for spec in specs {
        let (mix, stems) = match render_mixture_with(spec, &mut loader) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{}: skipped, reference unavailable ({e})", spec.id);
                skipped.push(format!("{}: {e}", spec.id));
                continue;
            }
        };
        let names = spec.class_names();
        let mut estimates = Vec::with_capacity(models.len());
        for (_, m) in models {
            estimates.push(separate(m, &mix)?);
        }
        tracks += 1;
        for (ci, class) in classes.iter().enumerate() {
            let Some(si) = names.iter().position(|n| n == class) else {
                log::warn!("{}: no `{class}` reference", spec.id);
                skipped.push(format!("{}: missing `{class}` reference", spec.id));
                continue;
            };
            let reference = &stems[si];
            if reference.energy() == 0.0 {
                log::warn!("{}: `{class}` reference is silent", spec.id);
                skipped.push(format!("{}: silent `{class}` reference", spec.id));
                continue;
            }
            for (row, (est, (_, m))) in rows.iter_mut().zip(estimates.iter().zip(models)) {
                let mi = m.classes().iter().position(|n| n == class).expect("checked");
                row.per_class[ci].push(sdr(reference, &est[mi])?);
            }
            rows.last_mut().expect("mixture row").per_class[ci].push(sdr(reference, &mix)?);
        }
    }
    Ok(Report {
        classes,
        rows,
        tracks,
        skipped,
    })
}

/// Loads a checkpoint and a manifest and scores the model on every mixture.
pub fn evaluate_testset(manifest: &Path, checkpoint: &Path) -> Result<Report> {
    let model = SeparationModel::load(checkpoint)?;
    let specs = read_manifest(manifest)?;
    if specs.is_empty() {
        return Err(Error::invalid(format!("{} lists no mixtures", manifest.display())));
    }
    let label = model.kind().label();
    evaluate_specs(&[(label, &model)], &specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn definition_cases() {
        let s: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.05).sin()).collect();
        assert_eq!(sdr_samples(&s, &s).unwrap(), SDR_CAP_DB);
        assert_eq!(sdr_samples(&s, &vec![0.0; 1000]).unwrap(), 0.0);
        assert!(sdr_samples(&vec![0.0; 10], &vec![1.0; 10]).is_err());
        assert!(sdr_samples(&s, &s[..10]).is_err());
    }

    #[test]
    fn noise_at_20_db() {
        // Noise rescaled to exactly 1% of the reference energy.
        let s = noise(48_000, 1);
        let n = noise(48_000, 2);
        let es: f64 = s.iter().map(|v| v * v).sum();
        let en: f64 = n.iter().map(|v| v * v).sum();
        let g = (0.01 * es / en).sqrt();
        let est: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + g * b).collect();
        let v = sdr_samples(&s, &est).unwrap();
        assert!((v - 20.0).abs() < 0.1, "{v}");
    }

    #[test]
    fn monotone_in_noise_power() {
        let s = noise(4000, 3);
        let n = noise(4000, 4);
        let mut last = f64::INFINITY;
        for g in [0.01, 0.03, 0.1, 0.3, 1.0, 3.0] {
            let est: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + g * b).collect();
            let v = sdr_samples(&s, &est).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    proptest! {
        #[test]
        fn scale_invariant(seed in 0u64..1000, a in prop_oneof![-100.0..-0.01f64, 0.01..100.0f64]) {
            let s = noise(256, seed);
            let e = noise(256, seed + 1);
            let sa: Vec<f64> = s.iter().map(|v| a * v).collect();
            let ea: Vec<f64> = e.iter().map(|v| a * v).collect();
            let d = sdr_samples(&s, &e).unwrap() - sdr_samples(&sa, &ea).unwrap();
            prop_assert!(d.abs() < 1e-9);
        }
    }

    #[test]
    fn column_order_is_fixed() {
        let classes: Vec<String> = ["other", "bass", "vocals", "drums"].map(String::from).to_vec();
        let ordered: Vec<String> = ordered_classes(&classes).iter().map(|c| column_title(c)).collect();
        assert_eq!(ordered, TABLE_COLUMNS);
        let extra: Vec<String> = ["piano", "bass"].map(String::from).to_vec();
        assert_eq!(ordered_classes(&extra), ["bass", "piano"]);
    }

    #[test]
    fn report_formats() {
        let report = Report {
            classes: ["vocals", "drums", "bass", "other"].map(String::from).to_vec(),
            rows: vec![
                ApproachScores {
                    approach: "DC/GMM - sphr. (tied)".into(),
                    per_class: vec![vec![1.0, 3.0, 2.0], vec![4.0], vec![], vec![1.0, 2.0]],
                },
                ApproachScores {
                    approach: MIXTURE_ROW.into(),
                    per_class: vec![vec![0.0]; 4],
                },
            ],
            tracks: 3,
            skipped: vec!["mix-00002: silent `bass` reference".into()],
        };
        assert_eq!(report.rows[0].median(0), Some(2.0));
        assert_eq!(report.rows[0].median(3), Some(1.5));
        assert_eq!(report.rows[0].mean(0), Some(2.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        report.write(&path).unwrap();
        let csv = fs::read_to_string(&path).unwrap();
        assert_eq!(csv.lines().next(), Some("approach,Vocals,Drums,Bass,Other"));
        assert!(csv.contains("DC/GMM - sphr. (tied),2.00,4.00,n/a,1.50"));
        let txt = fs::read_to_string(path.with_extension("txt")).unwrap();
        assert!(txt.contains("not comparable"));
        assert!(txt.contains("skipped: mix-00002"));
    }
}
