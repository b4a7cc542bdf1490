use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CovarianceType, GaussianParams, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::model::layers::{sigmoid, Activation, Dense, Param};

/// Initial variance the bias of each raw variance output maps to.
const INITIAL_VARIANCE: f64 = 0.5;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn inverse_softplus(y: f64) -> f64 {
    y.exp_m1().ln()
}

/// Linear map from a class one-hot to `[mean | raw variance | prior logit]`.
#[derive(Debug, Clone)]
pub struct AuxNet {
    pub dense: Dense,
    num_classes: usize,
    dim: usize,
    kind: CovarianceType,
}

pub struct AuxCache {
    onehots: Array2<f64>,
    raw: Array2<f64>,
    var_raw: Array2<f64>,
}

/// Loss gradients with respect to the generated mixture parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub means: Array2<f64>,
    pub variances: Array2<f64>,
    pub log_priors: Array1<f64>,
}

impl ParamGrads {
    pub fn zeros(kind: CovarianceType, classes: usize, dim: usize) -> Self {
        Self {
            means: Array2::zeros((classes, dim)),
            variances: Array2::zeros(kind.variance_shape(classes, dim)),
            log_priors: Array1::zeros(classes),
        }
    }

    pub fn accumulate(&mut self, other: &ParamGrads) {
        self.means += &other.means;
        self.variances += &other.variances;
        self.log_priors += &other.log_priors;
    }
}

impl AuxNet {
    pub fn new(num_classes: usize, dim: usize, kind: CovarianceType, seed: u64) -> Result<Self> {
        if num_classes < 2 || dim == 0 {
            return Err(Error::Config(format!(
                "auxiliary network needs at least 2 classes and 1 dimension, got {num_classes} and {dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = kind.aux_width(dim);
        let mut dense = Dense::new("aux", num_classes, width, Activation::Identity, &mut rng);
        let var_width = kind.variance_width(dim);
        dense.weight.value.slice_mut(s![.., dim..dim + var_width]).fill(0.0);
        dense.weight.value.slice_mut(s![.., width - 1]).fill(0.0);
        dense
            .bias
            .value
            .slice_mut(s![0, dim..dim + var_width])
            .fill(inverse_softplus(INITIAL_VARIANCE - VARIANCE_FLOOR));
        Ok(Self {
            dense,
            num_classes,
            dim,
            kind,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> CovarianceType {
        self.kind
    }

    /// Rebuilds an auxiliary network around existing weights.
    pub fn from_params(weight: Array2<f64>, bias: Array2<f64>, dim: usize, kind: CovarianceType) -> Result<Self> {
        let classes = weight.nrows();
        if weight.ncols() != kind.aux_width(dim) || bias.dim() != (1, weight.ncols()) {
            return Err(Error::shape(format!(
                "auxiliary weights {:?}/{:?} do not match {kind} in {dim} dims",
                weight.dim(),
                bias.dim()
            )));
        }
        Ok(Self {
            dense: Dense {
                weight: Param::new("aux.weight", weight),
                bias: Param::new("aux.bias", bias),
                activation: Activation::Identity,
            },
            num_classes: classes,
            dim,
            kind,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        self.dense.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.dense.params_mut()
    }

    /// Propagates parameter gradients into the dense layer's accumulators.
    pub fn backward(&mut self, cache: &AuxCache, grads: &ParamGrads) {
        let (c, k, kind) = (self.num_classes, self.dim, self.kind);
        let vw = kind.variance_width(k);
        let mut draw = Array2::zeros(cache.raw.dim());
        draw.slice_mut(s![.., ..k]).assign(&grads.means);
        let dvar_raw = &grads.variances * &cache.var_raw.mapv(sigmoid);
        if kind.is_tied() {
            let spread = dvar_raw.row(0).mapv(|g| g / c as f64);
            for mut row in draw.slice_mut(s![.., k..k + vw]).rows_mut() {
                row.assign(&spread);
            }
        } else {
            draw.slice_mut(s![.., k..k + vw]).assign(&dvar_raw);
        }
        let logits = cache.raw.column(k + vw);
        let priors = softmax(&logits.to_owned());
        let total = grads.log_priors.sum();
        let dlogits = &grads.log_priors - &(&priors * total);
        draw.column_mut(k + vw).assign(&dlogits);
        self.dense.backward(&cache.onehots, &cache.raw, &draw);
    }
}

fn softmax(x: &Array1<f64>) -> Array1<f64> {
    let max = x.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = x.mapv(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

/// Runs the auxiliary network on every class one-hot and decodes the
/// mixture parameters for `kind`.
pub fn generate_params(aux: &AuxNet, kind: CovarianceType) -> Result<(GaussianParams, AuxCache)> {
    let (c, k) = (aux.num_classes, aux.dim);
    if aux.dense.output_dim() != kind.aux_width(k) {
        return Err(Error::shape(format!(
            "auxiliary output width {} does not fit {kind} in {k} dims (needs {})",
            aux.dense.output_dim(),
            kind.aux_width(k)
        )));
    }
    let onehots = Array2::eye(c);
    let raw = aux.dense.forward(&onehots);
    let vw = kind.variance_width(k);
    let means = raw.slice(s![.., ..k]).to_owned();
    let var_raw = if kind.is_tied() {
        raw.slice(s![.., k..k + vw]).mean_axis(Axis(0)).expect("c > 0").insert_axis(Axis(0))
    } else {
        raw.slice(s![.., k..k + vw]).to_owned()
    };
    let variances = var_raw.mapv(|r| VARIANCE_FLOOR + softplus(r));
    let priors = softmax(&raw.column(k + vw).to_owned());
    let params = GaussianParams::new(kind, means, variances, priors)?;
    Ok((params, AuxCache { onehots, raw, var_raw }))
}
