//! Class-conditional Gaussian mixture in embedding space.
//!
//! An auxiliary network maps each class one-hot to a mean, a variance and a
//! prior logit. Masks are the posterior class responsibilities of each
//! embedding under the resulting mixture.

mod aux;
mod posterior;
mod query;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use aux::{generate_params, AuxCache, AuxNet, ParamGrads};
pub use posterior::{
    log_joint, posterior_mask, posterior_mask_backward, posterior_mask_flat, soft_kmeans_mask,
    PosteriorGrads,
};
pub use query::{fit_single_gaussian, likelihood_mask};

/// Lower bound applied to every variance.
pub const VARIANCE_FLOOR: f64 = 1e-4;

/// Default class set, in report column order.
pub const MUSDB_CLASSES: [&str; 4] = ["vocals", "drums", "bass", "other"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceType {
    Diagonal,
    TiedDiagonal,
    Spherical,
    TiedSpherical,
}

impl CovarianceType {
    pub const ALL: [CovarianceType; 4] = [
        CovarianceType::Diagonal,
        CovarianceType::TiedDiagonal,
        CovarianceType::Spherical,
        CovarianceType::TiedSpherical,
    ];

    pub fn is_tied(self) -> bool {
        matches!(self, CovarianceType::TiedDiagonal | CovarianceType::TiedSpherical)
    }

    pub fn is_diagonal(self) -> bool {
        matches!(self, CovarianceType::Diagonal | CovarianceType::TiedDiagonal)
    }

    /// Raw variance outputs emitted per class by the auxiliary network.
    pub fn variance_width(self, dim: usize) -> usize {
        if self.is_diagonal() {
            dim
        } else {
            1
        }
    }

    /// Shape of the variance table for `classes` components in `dim` dimensions.
    pub fn variance_shape(self, classes: usize, dim: usize) -> (usize, usize) {
        let rows = if self.is_tied() { 1 } else { classes };
        (rows, self.variance_width(dim))
    }

    /// Per-class auxiliary output width: mean, variance(s), prior logit.
    pub fn aux_width(self, dim: usize) -> usize {
        dim + self.variance_width(dim) + 1
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            CovarianceType::Diagonal => "diag",
            CovarianceType::TiedDiagonal => "diag-tied",
            CovarianceType::Spherical => "sphr",
            CovarianceType::TiedSpherical => "sphr-tied",
        }
    }

    /// Row label used in separation reports.
    pub fn report_label(self) -> &'static str {
        match self {
            CovarianceType::Diagonal => "DC/GMM - diag. (untied)",
            CovarianceType::TiedDiagonal => "DC/GMM - diag. (tied)",
            CovarianceType::Spherical => "DC/GMM - sphr. (untied)",
            CovarianceType::TiedSpherical => "DC/GMM - sphr. (tied)",
        }
    }
}

impl fmt::Display for CovarianceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for CovarianceType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CovarianceType::ALL
            .into_iter()
            .find(|k| k.cli_name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown covariance type `{s}` (expected diag, diag-tied, sphr or sphr-tied)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLabel {
    pub index: usize,
    pub name: String,
}

/// Builds dense, unique labels from class names.
pub fn class_labels<S: AsRef<str>>(names: &[S]) -> Result<Vec<ClassLabel>> {
    let mut labels = Vec::with_capacity(names.len());
    for (index, name) in names.iter().enumerate() {
        let name = name.as_ref().to_string();
        if name.is_empty() || labels.iter().any(|l: &ClassLabel| l.name == name) {
            return Err(Error::Config(format!("class names must be unique and non-empty: `{name}`")));
        }
        labels.push(ClassLabel { index, name });
    }
    Ok(labels)
}

/// Mixture parameters: means `C x K`, variances shaped by the covariance type,
/// and class priors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    kind: CovarianceType,
    means: Array2<f64>,
    variances: Array2<f64>,
    priors: Array1<f64>,
}

impl GaussianParams {
    pub fn new(
        kind: CovarianceType,
        means: Array2<f64>,
        variances: Array2<f64>,
        priors: Array1<f64>,
    ) -> Result<Self> {
        let (c, k) = means.dim();
        if c == 0 || k == 0 {
            return Err(Error::invalid("need at least one component and dimension"));
        }
        if variances.dim() != kind.variance_shape(c, k) {
            return Err(Error::shape(format!(
                "{kind} variances for {c} classes in {k} dims must be {:?}, got {:?}",
                kind.variance_shape(c, k),
                variances.dim()
            )));
        }
        if priors.len() != c {
            return Err(Error::shape(format!("{} priors for {c} classes", priors.len())));
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("means must be finite"));
        }
        if variances.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::invalid("variances must be finite and positive"));
        }
        if priors.iter().any(|p| !p.is_finite() || *p <= 0.0) || (priors.sum() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("priors must be positive and sum to 1"));
        }
        Ok(Self {
            kind,
            means,
            variances,
            priors,
        })
    }

    pub fn kind(&self) -> CovarianceType {
        self.kind
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn variances(&self) -> &Array2<f64> {
        &self.variances
    }

    pub fn priors(&self) -> &Array1<f64> {
        &self.priors
    }

    pub fn num_classes(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Variance of class `c` along dimension `k`, resolving tying.
    pub fn variance(&self, c: usize, k: usize) -> f64 {
        let (rows, cols) = self.variances.dim();
        self.variances[[c.min(rows - 1), k.min(cols - 1)]]
    }

    /// Full `C x K` variance table with tying expanded.
    pub fn expanded_variances(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.means.dim(), |(c, k)| self.variance(c, k))
    }

    /// Softmax sharpness `1 / sigma^2` for tied spherical covariances.
    pub fn alpha(&self) -> Option<f64> {
        (self.kind == CovarianceType::TiedSpherical).then(|| 1.0 / self.variances[[0, 0]])
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(GaussianParamsFile::from(self)).expect("plain data serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let file: GaussianParamsFile = serde_json::from_value(value)?;
        file.try_into()
    }
}

/// Standalone text form of [`GaussianParams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianParamsFile {
    pub covariance: CovarianceType,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub priors: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

fn rows_of(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::shape("ragged matrix"));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| Error::shape(e.to_string()))
}

impl From<&GaussianParams> for GaussianParamsFile {
    fn from(p: &GaussianParams) -> Self {
        Self {
            covariance: p.kind,
            means: rows_of(&p.means),
            variances: rows_of(&p.variances),
            priors: p.priors.to_vec(),
            alpha: p.alpha(),
        }
    }
}

impl TryFrom<GaussianParamsFile> for GaussianParams {
    type Error = Error;

    fn try_from(f: GaussianParamsFile) -> Result<Self> {
        GaussianParams::new(
            f.covariance,
            from_rows(&f.means)?,
            from_rows(&f.variances)?,
            Array1::from(f.priors),
        )
    }
}

/// Per-bin class masks `(T, M, C)`; each bin's class vector lies on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    values: Array3<f64>,
}

impl Mask {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        for lane in values.lanes(Axis(2)) {
            if lane.iter().any(|v| !(0.0..=1.0).contains(v)) || (lane.sum() - 1.0).abs() > 1e-6 {
                return Err(Error::invalid("mask bins must lie on the probability simplex"));
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array3<f64> {
        self.values
    }

    pub fn num_classes(&self) -> usize {
        self.values.dim().2
    }

    /// Mel-domain mask of class `c` as `M x T`.
    pub fn class_mask(&self, c: usize) -> Array2<f64> {
        self.values.index_axis(Axis(2), c).t().to_owned()
    }
}
