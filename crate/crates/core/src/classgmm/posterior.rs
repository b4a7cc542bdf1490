use std::f64::consts::PI;

use ndarray::{Array1, Array2, Array3};

use super::{GaussianParams, Mask, ParamGrads};
use crate::error::{Error, Result};
use crate::model::Embeddings;

/// Log prior plus Gaussian log density for every row of `v` (`N x K`) and class.
pub fn log_joint(v: &Array2<f64>, params: &GaussianParams) -> Result<Array2<f64>> {
    let (n, k) = v.dim();
    if k != params.dim() {
        return Err(Error::shape(format!(
            "embedding dim {k} does not match mixture dim {}",
            params.dim()
        )));
    }
    let c = params.num_classes();
    let var = params.expanded_variances();
    let prec = var.mapv(|s| 1.0 / s);
    let log_norm: Vec<f64> = (0..c)
        .map(|ci| {
            params.priors()[ci].ln() - 0.5 * var.row(ci).iter().map(|s| s.ln() + (2.0 * PI).ln()).sum::<f64>()
        })
        .collect();
    let means = params.means();
    let mut out = Array2::zeros((n, c));
    for (row, mut o) in v.rows().into_iter().zip(out.rows_mut()) {
        for ci in 0..c {
            let mut q = 0.0;
            for ki in 0..k {
                let d = row[ki] - means[[ci, ki]];
                q += d * d * prec[[ci, ki]];
            }
            o[ci] = log_norm[ci] - 0.5 * q;
        }
    }
    Ok(out)
}

fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let s = row.sum();
        row /= s;
    }
    logits
}

/// Class posteriors for flattened embeddings (`N x K` to `N x C`).
pub fn posterior_mask_flat(v: &Array2<f64>, params: &GaussianParams) -> Result<Array2<f64>> {
    Ok(softmax_rows(log_joint(v, params)?))
}

fn to_mask(flat: Array2<f64>, frames: usize, mel: usize) -> Result<Mask> {
    let c = flat.ncols();
    let values = Array3::from_shape_vec((frames, mel, c), flat.into_raw_vec_and_offset().0)
        .map_err(|e| Error::shape(e.to_string()))?;
    Ok(Mask { values })
}

/// Posterior class responsibilities of each embedding, shaped `(T, M, C)`.
pub fn posterior_mask(v: &Embeddings, params: &GaussianParams) -> Result<Mask> {
    let flat = posterior_mask_flat(&v.flattened(), params)?;
    to_mask(flat, v.num_frames(), v.mel_bins())
}

/// Gradients of a scalar loss through the posterior.
#[derive(Debug, Clone)]
pub struct PosteriorGrads {
    pub embeddings: Array2<f64>,
    pub params: ParamGrads,
}

/// Backpropagates `d_mask` (`N x C`) through the posterior computed from
/// `v` (`N x K`); `mask` must be the forward output.
pub fn posterior_mask_backward(
    v: &Array2<f64>,
    params: &GaussianParams,
    mask: &Array2<f64>,
    d_mask: &Array2<f64>,
) -> Result<PosteriorGrads> {
    let (n, k) = v.dim();
    let c = params.num_classes();
    if mask.dim() != (n, c) || d_mask.dim() != (n, c) || k != params.dim() {
        return Err(Error::shape("posterior backward inputs disagree in shape"));
    }
    let kind = params.kind();
    let var = params.expanded_variances();
    let prec = var.mapv(|s| 1.0 / s);
    let means = params.means();
    let mut dv = Array2::<f64>::zeros((n, k));
    let mut dmu = Array2::<f64>::zeros((c, k));
    let mut dvar_full = Array2::<f64>::zeros((c, k));
    let mut dlogpi = Array1::<f64>::zeros(c);
    let mut dl = vec![0.0; c];
    for i in 0..n {
        let g = mask.row(i);
        let dg = d_mask.row(i);
        let inner = g.dot(&dg);
        for ci in 0..c {
            dl[ci] = g[ci] * (dg[ci] - inner);
        }
        for ci in 0..c {
            let d = dl[ci];
            if d == 0.0 {
                continue;
            }
            dlogpi[ci] += d;
            for ki in 0..k {
                let diff = v[[i, ki]] - means[[ci, ki]];
                let p = prec[[ci, ki]];
                dv[[i, ki]] -= d * diff * p;
                dmu[[ci, ki]] += d * diff * p;
                dvar_full[[ci, ki]] += d * 0.5 * (diff * diff * p * p - p);
            }
        }
    }
    let (rows, cols) = kind.variance_shape(c, k);
    let mut dvar = Array2::<f64>::zeros((rows, cols));
    for ci in 0..c {
        for ki in 0..k {
            dvar[[ci.min(rows - 1), ki.min(cols - 1)]] += dvar_full[[ci, ki]];
        }
    }
    Ok(PosteriorGrads {
        embeddings: dv,
        params: ParamGrads {
            means: dmu,
            variances: dvar,
            log_priors: dlogpi,
        },
    })
}

/// Soft k-means assignment with sharpness `alpha`:
/// weights proportional to `prior_c * exp(-alpha / 2 * |v - mu_c|^2)`.
/// Uniform priors are used when `priors` is `None`.
pub fn soft_kmeans_mask(
    v: &Embeddings,
    means: &Array2<f64>,
    alpha: f64,
    priors: Option<&Array1<f64>>,
) -> Result<Mask> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("soft k-means alpha must be positive, got {alpha}")));
    }
    let c = means.nrows();
    if means.ncols() != v.dim() {
        return Err(Error::shape("means and embeddings differ in dimension"));
    }
    let log_prior = match priors {
        Some(p) if p.len() == c && p.iter().all(|&x| x > 0.0) => p.mapv(f64::ln),
        Some(_) => return Err(Error::invalid("priors must be positive, one per mean")),
        None => Array1::zeros(c),
    };
    let flat = v.flattened();
    let mut logits = Array2::zeros((flat.nrows(), c));
    for (row, mut o) in flat.rows().into_iter().zip(logits.rows_mut()) {
        for ci in 0..c {
            let d2: f64 = row.iter().zip(means.row(ci)).map(|(a, b)| (a - b) * (a - b)).sum();
            o[ci] = log_prior[ci] - 0.5 * alpha * d2;
        }
    }
    to_mask(softmax_rows(logits), v.num_frames(), v.mel_bins())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classgmm::{CovarianceType, VARIANCE_FLOOR};
    use ndarray::{array, Array3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn emb(flat: Array2<f64>) -> Embeddings {
        let n = flat.nrows();
        Embeddings::from_flattened(flat, 1, n).unwrap()
    }

    fn two_class_1d(var: f64) -> GaussianParams {
        GaussianParams::new(
            CovarianceType::TiedSpherical,
            array![[1.0], [-1.0]],
            array![[var]],
            array![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_two_class() {
        let p = two_class_1d(1.0);
        let m = posterior_mask_flat(&array![[0.0], [1.0], [-1.0]], &p).unwrap();
        assert!((m[[0, 0]] - 0.5).abs() < 1e-12);
        // At v = 1: log odds = (-0 + 0.5 * 4) = 2.
        let expect = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((m[[1, 0]] - expect).abs() < 1e-12);
        assert!((m[[2, 1]] - expect).abs() < 1e-12);
    }

    #[test]
    fn unequal_priors_shift_the_boundary() {
        let p = GaussianParams::new(
            CovarianceType::TiedSpherical,
            array![[1.0], [-1.0]],
            array![[1.0]],
            array![0.8, 0.2],
        )
        .unwrap();
        let m = posterior_mask_flat(&array![[0.0]], &p).unwrap();
        assert!((m[[0, 0]] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn extreme_distances_stay_finite() {
        let p = GaussianParams::new(
            CovarianceType::Diagonal,
            array![[0.0, 0.0], [1.0, 1.0]],
            Array2::from_elem((2, 2), VARIANCE_FLOOR),
            array![0.5, 0.5],
        )
        .unwrap();
        let m = posterior_mask_flat(&array![[1e4, -1e4], [-1e4, 1e4], [0.5, 0.5]], &p).unwrap();
        for row in m.rows() {
            assert!(row.iter().all(|x| x.is_finite()));
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((m[[2, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tied_spherical_equals_soft_kmeans() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let means = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let priors = array![0.1, 0.2, 0.3, 0.4];
        for var in [0.05, 0.16, 1.0] {
            let p = GaussianParams::new(CovarianceType::TiedSpherical, means.clone(), array![[var]], priors.clone())
                .unwrap();
            let v = emb(Array2::from_shape_fn((50, 3), |_| rng.random_range(-1.5..1.5)));
            let a = posterior_mask(&v, &p).unwrap();
            let b = soft_kmeans_mask(&v, &means, 1.0 / var, Some(&priors)).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn soft_kmeans_rejects_bad_alpha() {
        let v = emb(array![[0.0]]);
        assert!(soft_kmeans_mask(&v, &array![[0.0], [1.0]], 0.0, None).is_err());
        assert!(soft_kmeans_mask(&v, &array![[0.0], [1.0]], -1.0, None).is_err());
        assert!(soft_kmeans_mask(&v, &array![[0.0], [1.0]], f64::NAN, None).is_err());
    }

    #[test]
    fn mask_layout_follows_embeddings() {
        let mut values = Array3::zeros((2, 3, 1));
        values[[1, 2, 0]] = 5.0;
        let v = Embeddings::new(values).unwrap();
        let p = GaussianParams::new(
            CovarianceType::Spherical,
            array![[0.0], [5.0]],
            array![[1.0], [1.0]],
            array![0.5, 0.5],
        )
        .unwrap();
        let m = posterior_mask(&v, &p).unwrap();
        assert_eq!(m.values().dim(), (2, 3, 2));
        assert!(m.values()[[1, 2, 1]] > 0.99);
        assert!(m.values()[[0, 0, 0]] > 0.99);
    }

    /// Averaging posteriors over samples drawn from the mixture recovers the priors.
    #[test]
    fn mean_posterior_matches_priors_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let means = array![[0.0, 0.0], [1.0, 0.5], [-0.5, 1.0]];
        let var = array![[0.3, 0.2], [0.5, 0.4], [0.2, 0.6]];
        let priors = array![0.5, 0.3, 0.2];
        let p = GaussianParams::new(CovarianceType::Diagonal, means.clone(), var.clone(), priors.clone()).unwrap();
        let n = 20_000;
        let mut samples = Array2::zeros((n, 2));
        for i in 0..n {
            let u: f64 = rng.random();
            let c = if u < 0.5 { 0 } else if u < 0.8 { 1 } else { 2 };
            for k in 0..2 {
                let z: f64 = rng.sample(StandardNormal);
                samples[[i, k]] = means[[c, k]] + var[[c, k]].sqrt() * z;
            }
        }
        let m = posterior_mask_flat(&samples, &p).unwrap();
        for c in 0..3 {
            let col = m.column(c);
            let mean = col.mean().unwrap();
            let sd = col.std(1.0);
            let se = sd / (n as f64).sqrt();
            assert!((mean - priors[c]).abs() < 3.0 * se, "class {c}: {mean} vs {}", priors[c]);
        }
    }

    fn fd_params(kind: CovarianceType) -> GaussianParams {
        let means = array![[0.3, -0.2], [-0.4, 0.5]];
        let variances = match kind {
            CovarianceType::Diagonal => array![[0.4, 0.7], [0.9, 0.3]],
            CovarianceType::TiedDiagonal => array![[0.6, 0.35]],
            CovarianceType::Spherical => array![[0.5], [0.8]],
            CovarianceType::TiedSpherical => array![[0.45]],
        };
        GaussianParams::new(kind, means, variances, array![0.35, 0.65]).unwrap()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let v = array![[0.1, 0.2], [-0.3, 0.4], [0.6, -0.5]];
        let coeff = array![[0.7, -0.2], [0.1, 0.9], [-0.5, 0.3]];
        let h = 1e-6;
        for kind in CovarianceType::ALL {
            let p = fd_params(kind);
            let obj = |v: &Array2<f64>, p: &GaussianParams| (posterior_mask_flat(v, p).unwrap() * &coeff).sum();
            let mask = posterior_mask_flat(&v, &p).unwrap();
            let g = posterior_mask_backward(&v, &p, &mask, &coeff).unwrap();
            for i in 0..3 {
                for k in 0..2 {
                    let (mut a, mut b) = (v.clone(), v.clone());
                    a[[i, k]] += h;
                    b[[i, k]] -= h;
                    let num = (obj(&a, &p) - obj(&b, &p)) / (2.0 * h);
                    assert!((num - g.embeddings[[i, k]]).abs() < 1e-7, "{kind} dv");
                }
            }
            let rebuild = |m: Array2<f64>, s: Array2<f64>, pi: Array1<f64>| {
                GaussianParams::new(kind, m, s, pi).unwrap()
            };
            for c in 0..2 {
                for k in 0..2 {
                    let (mut a, mut b) = (p.means().clone(), p.means().clone());
                    a[[c, k]] += h;
                    b[[c, k]] -= h;
                    let num = (obj(&v, &rebuild(a, p.variances().clone(), p.priors().clone()))
                        - obj(&v, &rebuild(b, p.variances().clone(), p.priors().clone())))
                        / (2.0 * h);
                    assert!((num - g.params.means[[c, k]]).abs() < 1e-7, "{kind} dmu");
                }
            }
            let (rows, cols) = p.variances().dim();
            for r in 0..rows {
                for k in 0..cols {
                    let (mut a, mut b) = (p.variances().clone(), p.variances().clone());
                    a[[r, k]] += h;
                    b[[r, k]] -= h;
                    let num = (obj(&v, &rebuild(p.means().clone(), a, p.priors().clone()))
                        - obj(&v, &rebuild(p.means().clone(), b, p.priors().clone())))
                        / (2.0 * h);
                    assert!((num - g.params.variances[[r, k]]).abs() < 1e-7, "{kind} dvar");
                }
            }
            // Log priors enter additively, so perturb the log-joint directly.
            let lj = log_joint(&v, &p).unwrap();
            for c in 0..2 {
                let shift = |delta: f64| {
                    let mut l = lj.clone();
                    l.column_mut(c).mapv_inplace(|x| x + delta);
                    (softmax_rows(l) * &coeff).sum()
                };
                let num = (shift(h) - shift(-h)) / (2.0 * h);
                assert!((num - g.params.log_priors[c]).abs() < 1e-7, "{kind} dlogpi");
            }
        }
    }

    proptest! {
        #[test]
        fn posterior_on_simplex(
            vals in proptest::collection::vec(-5.0..5.0f64, 12),
            m in proptest::collection::vec(-2.0..2.0f64, 6),
            s in proptest::collection::vec(1e-3..4.0f64, 6),
        ) {
            let p = GaussianParams::new(
                CovarianceType::Diagonal,
                Array2::from_shape_vec((3, 2), m).unwrap(),
                Array2::from_shape_vec((3, 2), s).unwrap(),
                array![0.2, 0.3, 0.5],
            ).unwrap();
            let mask = posterior_mask(&emb(Array2::from_shape_vec((6, 2), vals).unwrap()), &p).unwrap();
            for lane in mask.values().lanes(ndarray::Axis(2)) {
                prop_assert!(lane.iter().all(|&x| (0.0..=1.0).contains(&x)));
                prop_assert!((lane.sum() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn posterior_translation_invariant(shift in -3.0..3.0f64, x in -2.0..2.0f64) {
            let p = fd_params(CovarianceType::Diagonal);
            let moved = GaussianParams::new(
                p.kind(),
                p.means().mapv(|m| m + shift),
                p.variances().clone(),
                p.priors().clone(),
            ).unwrap();
            let v = array![[x, -x], [0.5 * x, 0.1]];
            let a = posterior_mask_flat(&v, &p).unwrap();
            let b = posterior_mask_flat(&v.mapv(|e| e + shift), &moved).unwrap();
            for (u, w) in a.iter().zip(b.iter()) {
                prop_assert!((u - w).abs() < 1e-9);
            }
        }
    }
}
