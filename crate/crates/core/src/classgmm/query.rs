use ndarray::{Array1, Array2};

use super::{CovarianceType, GaussianParams, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::model::Embeddings;

/// Maximum-likelihood Gaussian over the query embeddings.
///
/// `weights` (one per bin, in flattened order) restricts or reweights the fit;
/// bins with zero weight are ignored. Tied kinds fit the same as their untied
/// counterparts since there is a single component.
pub fn fit_single_gaussian(
    v: &Embeddings,
    kind: CovarianceType,
    weights: Option<&Array1<f64>>,
) -> Result<GaussianParams> {
    let flat = v.flattened();
    let (n, k) = flat.dim();
    let w = match weights {
        Some(w) if w.len() == n => {
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::invalid("query weights must be finite and nonnegative"));
            }
            w.clone()
        }
        Some(w) => return Err(Error::shape(format!("{} weights for {n} bins", w.len()))),
        None => Array1::ones(n),
    };
    let used = w.iter().filter(|&&x| x > 0.0).count();
    if used < 2 {
        return Err(Error::invalid(format!(
            "query needs at least 2 usable embedding bins, got {used}"
        )));
    }
    let total = w.sum();
    let mean = w.dot(&flat) / total;
    let mut var = Array1::<f64>::zeros(k);
    for (row, &wi) in flat.rows().into_iter().zip(w.iter()) {
        if wi > 0.0 {
            for j in 0..k {
                let d = row[j] - mean[j];
                var[j] += wi * d * d;
            }
        }
    }
    var /= total;
    let (kind, variances) = if kind.is_diagonal() {
        (CovarianceType::Diagonal, var.insert_axis(ndarray::Axis(0)))
    } else {
        (CovarianceType::Spherical, Array2::from_elem((1, 1), var.mean().unwrap_or(0.0)))
    };
    GaussianParams::new(
        kind,
        mean.insert_axis(ndarray::Axis(0)),
        variances.mapv(|s| s.max(VARIANCE_FLOOR)),
        Array1::ones(1),
    )
}

/// Per-bin likelihood under `query`, divided by its maximum over the clip.
/// Returns an `M x T` mask in `[0, 1]` with at least one bin equal to 1.
pub fn likelihood_mask(v: &Embeddings, query: &GaussianParams) -> Result<Array2<f64>> {
    if query.num_classes() != 1 {
        return Err(Error::invalid("query model must have exactly one component"));
    }
    let log_l = super::log_joint(&v.flattened(), query)?;
    let max = log_l.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let (t, m) = (v.num_frames(), v.mel_bins());
    Ok(Array2::from_shape_fn((m, t), |(mi, ti)| (log_l[[ti * m + mi, 0]] - max).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    fn emb(points: &[[f64; 2]]) -> Embeddings {
        let flat = Array2::from_shape_fn((points.len(), 2), |(i, j)| points[i][j]);
        Embeddings::from_flattened(flat, 1, points.len()).unwrap()
    }

    #[test]
    fn fit_matches_moments() {
        let v = emb(&[[0.0, 1.0], [2.0, 1.0], [4.0, 4.0]]);
        let g = fit_single_gaussian(&v, CovarianceType::Diagonal, None).unwrap();
        assert_eq!(g.means(), &array![[2.0, 2.0]]);
        assert!((g.variances()[[0, 0]] - 8.0 / 3.0).abs() < 1e-12);
        assert!((g.variances()[[0, 1]] - 2.0).abs() < 1e-12);
        let s = fit_single_gaussian(&v, CovarianceType::TiedSpherical, None).unwrap();
        assert_eq!(s.kind(), CovarianceType::Spherical);
        assert!((s.variances()[[0, 0]] - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn weights_select_bins() {
        let v = emb(&[[0.0, 0.0], [2.0, 2.0], [100.0, -100.0]]);
        let g = fit_single_gaussian(&v, CovarianceType::Diagonal, Some(&array![1.0, 1.0, 0.0])).unwrap();
        assert_eq!(g.means(), &array![[1.0, 1.0]]);
        assert!(fit_single_gaussian(&v, CovarianceType::Diagonal, Some(&array![1.0, 0.0, 0.0])).is_err());
        assert!(fit_single_gaussian(&v, CovarianceType::Diagonal, Some(&array![1.0, 1.0])).is_err());
    }

    #[test]
    fn degenerate_query_hits_floor() {
        let v = emb(&[[0.5, 0.5], [0.5, 0.5]]);
        let g = fit_single_gaussian(&v, CovarianceType::Diagonal, None).unwrap();
        assert!(g.variances().iter().all(|&s| s == VARIANCE_FLOOR));
        assert!(fit_single_gaussian(&emb(&[[0.0, 0.0]]), CovarianceType::Diagonal, None).is_err());
    }

    #[test]
    fn likelihood_values() {
        let q = GaussianParams::new(CovarianceType::Spherical, array![[0.0, 0.0]], array![[1.0]], array![1.0])
            .unwrap();
        let v = emb(&[[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]]);
        let m = likelihood_mask(&v, &q).unwrap();
        assert_eq!(m.dim(), (3, 1));
        assert!((m[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((m[[1, 0]] - (-0.5f64).exp()).abs() < 1e-12);
        assert!((m[[2, 0]] - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn likelihood_layout_is_mel_by_time() {
        let mut values = Array3::zeros((2, 3, 1));
        values[[1, 2, 0]] = 3.0;
        let v = Embeddings::new(values).unwrap();
        let q = GaussianParams::new(CovarianceType::Diagonal, array![[3.0]], array![[1.0]], array![1.0]).unwrap();
        let m = likelihood_mask(&v, &q).unwrap();
        assert_eq!(m.dim(), (3, 2));
        assert_eq!(m[[2, 1]], 1.0);
        assert!(m[[0, 0]] < 0.02);
    }
}
