//! FastICA with PCA whitening, symmetric decorrelation and the logcosh
//! contrast. Components are the mixing directions in voxel space; the
//! unmixing transform is kept alongside for coefficient projection.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::Method;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{duplicate_signed, pca_svd, Convergence, Decomposition, FitMeta, MethodAux};

const MAX_ITER: usize = 500;
const TOL: f64 = 1e-5;

pub fn fit_ica(x: &Matrix, k: usize, seed: u64, meta: FitMeta) -> Result<Decomposition> {
    let (n, v) = x.dim();
    if k == 0 || k > n.min(v) {
        return Err(Error::InvalidInput(format!(
            "ICA K = {k} outside [1, min({n}, {v})]"
        )));
    }
    if n <= k {
        return Err(Error::InvalidInput(format!(
            "ICA needs more samples than components (N = {n}, K = {k})"
        )));
    }

    // Whiten via PCA: Z = (X - mean) E^T diag(1/s), unit covariance.
    let fit = pca_svd(x)?;
    if fit.rank() < k {
        return Err(Error::Numerical {
            op: "fit_ica".into(),
            reason: format!("requested K = {k} exceeds numerical rank {}", fit.rank()),
        });
    }
    let axes = fit.basis.slice(ndarray::s![..k, ..]).to_owned();
    let scales: Vec<f64> = fit.explained_variance[..k]
        .iter()
        .map(|&ev| ev.sqrt())
        .collect();
    if scales.iter().any(|&s| s <= 0.0) {
        return Err(Error::Numerical {
            op: "fit_ica".into(),
            reason: "zero-variance direction inside requested K".into(),
        });
    }
    let mut centered = x.clone();
    for mut row in centered.rows_mut() {
        for (j, val) in row.iter_mut().enumerate() {
            *val -= fit.mean[j];
        }
    }
    let mut z = centered.dot(&axes.t()); // N x K
    for (j, mut col) in z.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| v / scales[j]);
    }

    // FastICA in whitened coordinates, rows of w are unmixing directions.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DMatrix::<f64>::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    w = sym_decorrelate(&w)?;

    let zt = DMatrix::<f64>::from_fn(k, n, |i, j| z[[j, i]]); // K x N view of Z^T
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..MAX_ITER {
        iterations = iter + 1;
        let wz = &w * &zt; // K x N
        let g = wz.map(|v| v.tanh());
        let g_prime_mean: Vec<f64> = (0..k)
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..n {
                    let t = g[(i, j)];
                    acc += 1.0 - t * t;
                }
                acc / n as f64
            })
            .collect();
        let mut w_new = &g * zt.transpose(); // K x K
        w_new /= n as f64;
        for i in 0..k {
            for j in 0..k {
                w_new[(i, j)] -= g_prime_mean[i] * w[(i, j)];
            }
        }
        let w_new = sym_decorrelate(&w_new)?;
        let lim = (0..k)
            .map(|i| {
                let dot: f64 = (0..k).map(|j| w_new[(i, j)] * w[(i, j)]).sum();
                (dot.abs() - 1.0).abs()
            })
            .fold(0.0, f64::max);
        w = w_new;
        if lim < TOL {
            converged = true;
            break;
        }
    }

    // Back to voxel space. Unmixing M = W diag(1/s) E maps centered
    // responses to sources; mixing A = W diag(s) E gives the patterns.
    let mut unmix = Matrix::zeros((k, v));
    let mut mixing = Matrix::zeros((k, v));
    for i in 0..k {
        for j in 0..v {
            let mut mu = 0.0;
            let mut ma = 0.0;
            for l in 0..k {
                mu += w[(i, l)] / scales[l] * axes[[l, j]];
                ma += w[(i, l)] * scales[l] * axes[[l, j]];
            }
            unmix[[i, j]] = mu;
            mixing[[i, j]] = ma;
        }
    }

    let mut hyperparams = BTreeMap::new();
    hyperparams.insert("k".into(), serde_json::json!(k));
    hyperparams.insert("seed".into(), serde_json::json!(seed));

    Ok(Decomposition {
        method: Method::Ica,
        roi: meta.roi,
        fingerprint: format!("ica-k{k}-s{seed}"),
        components: duplicate_signed(&mixing),
        hyperparams,
        provenance: meta.provenance,
        normalization: meta.normalization,
        aux: MethodAux::Ica {
            mean: fit.mean,
            unmixing: duplicate_signed(&unmix),
        },
        convergence: Convergence {
            converged,
            iterations,
            note: (!converged).then(|| "FastICA hit iteration cap".to_string()),
        },
    })
}

/// W <- (W W^T)^{-1/2} W via symmetric eigendecomposition.
fn sym_decorrelate(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = w.nrows();
    let eig = nalgebra::SymmetricEigen::new(w * w.transpose());
    let mut inv_sqrt = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        let ev = eig.eigenvalues[i];
        if !(ev.is_finite()) {
            return Err(Error::Numerical {
                op: "sym_decorrelate".into(),
                reason: "non-finite eigenvalue".into(),
            });
        }
        inv_sqrt[(i, i)] = 1.0 / ev.max(1e-14).sqrt();
    }
    Ok(&eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose() * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PoolKind;
    use crate::stats::pearson_correlation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta() -> FitMeta {
        FitMeta {
            roi: "r".into(),
            provenance: vec![PoolKind::Measured],
            normalization: None,
        }
    }

    #[test]
    fn planted_independent_sources_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 5000;
        let s1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s2: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mixing = [[0.8, 0.6], [0.45, -0.9]];
        let x = Matrix::from_shape_fn((n, 2), |(i, j)| {
            s1[i] * mixing[0][j] + s2[i] * mixing[1][j]
        });
        let d = fit_ica(&x, 2, 0, meta()).unwrap();
        assert!(d.convergence.converged);
        let coeffs = d.project(&x, PoolKind::Measured).unwrap();
        // Positive-sign rows are 0 and 2; match sources up to permutation/sign.
        for src in [&s1, &s2] {
            let best = (0..2)
                .map(|c| {
                    let col: Vec<f64> = coeffs.column(2 * c).to_vec();
                    pearson_correlation(&col, src).unwrap().abs()
                })
                .fold(0.0, f64::max);
            assert!(best > 0.99, "best |r| = {best}");
        }
    }

    #[test]
    fn single_source_component_is_collinear_with_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 800;
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dir = [0.6, -0.8];
        let x = Matrix::from_shape_fn((n, 2), |(i, j)| s[i] * dir[j]);
        let d = fit_ica(&x, 1, 0, meta()).unwrap();
        let comp = d.components.row(0).to_vec();
        let cos = crate::stats::cosine(&comp, &dir).abs();
        assert!(cos > 0.999, "cosine {cos}");
    }

    #[test]
    fn different_seeds_span_the_same_subspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 2000;
        let sources = Matrix::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let mixing = Matrix::from_shape_fn((3, 8), |_| rng.random_range(-1.0..1.0));
        let x = sources.dot(&mixing);
        let d0 = fit_ica(&x, 3, 0, meta()).unwrap();
        let d1 = fit_ica(&x, 3, 1, meta()).unwrap();

        // Max principal angle between the spans of the positive halves.
        let half = |d: &Decomposition| {
            let k = d.k_base();
            let mut rows = Matrix::zeros((k, d.v_roi()));
            for i in 0..k {
                let r = d.components.row(2 * i);
                let norm = r.dot(&r).sqrt();
                rows.row_mut(i).assign(&r.mapv(|v| v / norm));
            }
            rows
        };
        let a = orthonormal_rows(&half(&d0));
        let b = orthonormal_rows(&half(&d1));
        let cross = a.dot(&b.t());
        let nal = nalgebra::DMatrix::from_fn(3, 3, |i, j| cross[[i, j]]);
        let svals = nal.svd(false, false).singular_values;
        let min_singular = svals.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_angle = min_singular.min(1.0).acos();
        assert!(max_angle < 1e-2, "max principal angle {max_angle}");
    }

    fn orthonormal_rows(m: &Matrix) -> Matrix {
        // Gram-Schmidt; inputs here are small and well-conditioned.
        let mut out = m.clone();
        for i in 0..out.nrows() {
            for j in 0..i {
                let proj = out.row(i).dot(&out.row(j));
                let prev = out.row(j).to_owned();
                out.row_mut(i).zip_mut_with(&prev, |a, &b| *a -= proj * b);
            }
            let norm = out.row(i).dot(&out.row(i)).sqrt();
            out.row_mut(i).mapv_inplace(|v| v / norm);
        }
        out
    }

    #[test]
    fn needs_more_samples_than_components() {
        let x = Matrix::zeros((3, 5));
        assert!(fit_ica(&x, 3, 0, meta()).is_err());
    }

    #[test]
    fn components_come_in_exact_negation_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sources = Matrix::from_shape_fn((500, 2), |_| rng.random_range(-1.0..1.0));
        let mixing = Matrix::from_shape_fn((2, 5), |_| rng.random_range(-1.0..1.0));
        let x = sources.dot(&mixing);
        let d = fit_ica(&x, 2, 0, meta()).unwrap();
        for i in 0..d.k_base() {
            let sum = &d.components.row(2 * i) + &d.components.row(2 * i + 1);
            assert!(sum.iter().all(|&v| v == 0.0));
        }
    }
}
