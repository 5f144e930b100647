//! Nonnegative matrix factorization via Lee-Seung multiplicative updates.
//!
//! Signed responses are clipped at zero before factorization so components
//! keep activation semantics; shifting by the global minimum would inject a
//! rank-1 offset into every component.

use std::collections::BTreeMap;

use ndarray::Zip;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::Method;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{Convergence, Decomposition, FitMeta, MethodAux};

const EPS: f64 = 1e-12;
const MAX_ITER: usize = 500;
const REL_TOL: f64 = 1e-4;

/// Factorizes clip(X, 0) as H (N x K) times W (K x V), both nonnegative,
/// keeping W as the component matrix. Stops on relative objective
/// improvement below 1e-4 or after 500 iterations.
pub fn fit_nmf(x: &Matrix, k: usize, seed: u64, meta: FitMeta) -> Result<Decomposition> {
    let (n, v) = x.dim();
    if k == 0 || k > n.min(v) {
        return Err(Error::InvalidInput(format!(
            "NMF K = {k} outside [1, min({n}, {v})]"
        )));
    }
    let x = x.mapv(|e| e.max(0.0));
    let x_norm_sq: f64 = x.iter().map(|e| e * e).sum();
    if x_norm_sq == 0.0 {
        return Err(Error::InvalidInput(
            "NMF input is all-zero after clipping negatives".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut h, mut w) = nndsvd_init(&x, k, &mut rng)?;

    let mut objective_curve = Vec::new();
    let mut prev_obj = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    for iter in 0..MAX_ITER {
        iterations = iter + 1;

        // H <- H * (X W^T) / (H (W W^T))
        let xwt = x.dot(&w.t());
        let wwt = w.dot(&w.t());
        let hwwt = h.dot(&wwt);
        Zip::from(&mut h).and(&xwt).and(&hwwt).for_each(|h, &nu, &de| {
            *h *= nu / (de + EPS);
        });

        // W <- W * (H^T X) / ((H^T H) W)
        let htx = h.t().dot(&x);
        let hth = h.t().dot(&h);
        let hthw = hth.dot(&w);
        Zip::from(&mut w).and(&htx).and(&hthw).for_each(|w, &nu, &de| {
            *w *= nu / (de + EPS);
        });

        // Objective sampled every 10 iterations; the stop rule runs at the
        // same cadence. ||X - HW||^2 = ||X||^2 - 2 tr(W^T H^T X)
        // + tr(W^T (H^T H) W), assembled from products the update needs.
        if iter % 10 == 9 || iter == MAX_ITER - 1 {
            let htx = h.t().dot(&x);
            let hth = h.t().dot(&h);
            let cross: f64 = Zip::from(&htx).and(&w).fold(0.0, |acc, &a, &b| acc + a * b);
            let hthw = hth.dot(&w);
            let quad: f64 = Zip::from(&hthw).and(&w).fold(0.0, |acc, &a, &b| acc + a * b);
            let obj = (x_norm_sq - 2.0 * cross + quad).max(0.0);
            objective_curve.push(obj);
            if prev_obj.is_finite() && (prev_obj - obj) / prev_obj.max(EPS) < REL_TOL {
                converged = true;
                break;
            }
            prev_obj = obj;
        }
    }

    let mut hyperparams = BTreeMap::new();
    hyperparams.insert("k".into(), serde_json::json!(k));
    hyperparams.insert("seed".into(), serde_json::json!(seed));

    Ok(Decomposition {
        method: Method::Nmf,
        roi: meta.roi,
        fingerprint: format!("nmf-k{k}-s{seed}"),
        components: w,
        hyperparams,
        provenance: meta.provenance,
        normalization: meta.normalization,
        aux: MethodAux::Nmf {
            objective: objective_curve,
        },
        convergence: Convergence {
            converged,
            iterations,
            note: (!converged).then(|| "hit iteration cap".to_string()),
        },
    })
}

/// Nonnegative least squares with fixed components: multiplicative updates
/// on H only. Returns the coefficient matrix and whether the solve reached
/// `tol` relative improvement before `max_iter`.
pub fn nnls_project(x: &Matrix, w: &Matrix, max_iter: usize, tol: f64) -> (Matrix, bool) {
    let n = x.nrows();
    let k = w.nrows();
    let wwt = w.dot(&w.t());
    let xwt = x.dot(&w.t());
    // Warm start from the clipped unconstrained least squares solution
    // X W^T (W W^T)^{-1}; interior optima are then immediate. Falls back to
    // the plain cross-product when the Gram matrix is singular.
    let mut h = unconstrained_warm_start(&xwt, &wwt)
        .unwrap_or_else(|| xwt.clone())
        .mapv(|v| v.max(EPS));
    let mut prev_obj = f64::INFINITY;
    let mut converged = false;
    for _ in 0..max_iter {
        let hwwt = h.dot(&wwt);
        Zip::from(&mut h).and(&xwt).and(&hwwt).for_each(|h, &nu, &de| {
            *h *= nu / (de + EPS);
        });
        let resid = x - &h.dot(w);
        let obj: f64 = resid.iter().map(|v| v * v).sum();
        if prev_obj.is_finite() && (prev_obj - obj).abs() / prev_obj.max(EPS) < tol {
            converged = true;
            break;
        }
        prev_obj = obj;
    }
    debug_assert_eq!(h.dim(), (n, k));
    (h, converged)
}

/// NNDSVD initialization: factor pairs from the SVD of the nonnegative
/// input, taking whichever sign quadrant carries more mass. Zeros are filled
/// with small seeded noise so different seeds explore different basins.
fn nndsvd_init(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Result<(Matrix, Matrix)> {
    let (n, v) = x.dim();
    let (u, s, vt) = thin_svd(x)?;
    let r = s.len();
    let mut h = Matrix::zeros((n, k));
    let mut w = Matrix::zeros((k, v));

    for j in 0..k.min(r) {
        let sj = s[j];
        if sj <= 0.0 {
            break;
        }
        let uj: Vec<f64> = (0..n).map(|i| u[[i, j]]).collect();
        let vj: Vec<f64> = (0..v).map(|i| vt[[j, i]]).collect();
        if j == 0 {
            let root = sj.sqrt();
            for i in 0..n {
                h[[i, 0]] = root * uj[i].abs();
            }
            for i in 0..v {
                w[[0, i]] = root * vj[i].abs();
            }
            continue;
        }
        let norm = |vals: &[f64], pos: bool| -> f64 {
            vals.iter()
                .map(|&x| if pos { x.max(0.0) } else { (-x).max(0.0) })
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
        };
        let (n_up, n_un) = (norm(&uj, true), norm(&uj, false));
        let (n_vp, n_vn) = (norm(&vj, true), norm(&vj, false));
        let (term_p, term_n) = (n_up * n_vp, n_un * n_vn);
        let (u_scale, v_scale, positive) = if term_p >= term_n {
            if term_p <= 0.0 {
                continue;
            }
            ((sj * term_p).sqrt() / n_up, (sj * term_p).sqrt() / n_vp, true)
        } else {
            ((sj * term_n).sqrt() / n_un, (sj * term_n).sqrt() / n_vn, false)
        };
        for i in 0..n {
            let val = if positive { uj[i].max(0.0) } else { (-uj[i]).max(0.0) };
            h[[i, j]] = u_scale * val;
        }
        for i in 0..v {
            let val = if positive { vj[i].max(0.0) } else { (-vj[i]).max(0.0) };
            w[[j, i]] = v_scale * val;
        }
    }

    let fill = x.mean().unwrap_or(0.0).max(EPS) / 100.0;
    for e in h.iter_mut().chain(w.iter_mut()) {
        if *e < EPS {
            *e = fill * (rng.random_range(0.0..1.0) + EPS);
        }
    }
    Ok((h, w))
}

/// Thin SVD via QR reduction of the taller orientation.
fn thin_svd(x: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    use nalgebra::DMatrix;
    let (n, v) = x.dim();
    let svd_fail = || Error::Numerical {
        op: "thin_svd".into(),
        reason: "SVD did not produce singular vectors".into(),
    };
    if n >= v {
        let m = DMatrix::from_fn(n, v, |i, j| x[[i, j]]);
        let qr = m.qr();
        let q = qr.q();
        let svd = qr.unpack_r().svd(true, true);
        let ur = svd.u.as_ref().ok_or_else(svd_fail)?;
        let vt = svd.v_t.as_ref().ok_or_else(svd_fail)?;
        let qu = &q * ur;
        let r = svd.singular_values.len();
        let u_out = Matrix::from_shape_fn((n, r), |(i, j)| qu[(i, j)]);
        let vt_out = Matrix::from_shape_fn((r, v), |(i, j)| vt[(i, j)]);
        Ok((u_out, svd.singular_values.iter().cloned().collect(), vt_out))
    } else {
        let (vt_swapped, s, u_swapped) = thin_svd(&x.t().to_owned())?;
        Ok((u_swapped.t().to_owned(), s, vt_swapped.t().to_owned()))
    }
}

fn unconstrained_warm_start(xwt: &Matrix, wwt: &Matrix) -> Option<Matrix> {
    let k = wwt.nrows();
    let gram = nalgebra::DMatrix::from_fn(k, k, |i, j| wwt[[i, j]]);
    let inv = gram.try_inverse()?;
    let mut out = Matrix::zeros(xwt.dim());
    for i in 0..xwt.nrows() {
        for j in 0..k {
            let mut acc = 0.0;
            for l in 0..k {
                acc += xwt[[i, l]] * inv[(l, j)];
            }
            out[[i, j]] = acc;
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PoolKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta() -> FitMeta {
        FitMeta {
            roi: "r".into(),
            provenance: vec![PoolKind::Measured],
            normalization: None,
        }
    }

    fn random_nonneg(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Matrix {
        Matrix::from_shape_fn(shape, |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn planted_factorization_is_recovered_to_low_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_nonneg(&mut rng, (60, 4));
        let w = random_nonneg(&mut rng, (4, 12));
        let x = h.dot(&w);
        let d = fit_nmf(&x, 4, 0, meta()).unwrap();
        let (h_hat, _) = nnls_project(&x, &d.components, 500, 1e-9);
        let recon = h_hat.dot(&d.components);
        let num: f64 = (&x - &recon).iter().map(|v| v * v).sum();
        let den: f64 = x.iter().map(|v| v * v).sum();
        assert!(
            (num / den).sqrt() < 1e-2,
            "relative error {}",
            (num / den).sqrt()
        );
    }

    #[test]
    fn factors_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Matrix::from_shape_fn((30, 10), |_| rng.random_range(-1.0..1.0));
        let d = fit_nmf(&x, 3, 1, meta()).unwrap();
        assert!(d.components.iter().all(|&v| v >= 0.0));
        let coeffs = d.project(&x, PoolKind::Measured).unwrap();
        assert!(coeffs.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rank_one_outer_product_recovers_direction() {
        let a: Vec<f64> = (0..20).map(|i| 0.1 + (i as f64) * 0.05).collect();
        let b = [0.2, 0.0, 0.9, 0.4, 0.1, 0.7];
        let x = Matrix::from_shape_fn((20, 6), |(i, j)| a[i] * b[j]);
        let d = fit_nmf(&x, 1, 0, meta()).unwrap();
        let comp = d.components.row(0).to_vec();
        let cos = crate::stats::cosine(&comp, &b);
        assert!(cos > 0.999, "cosine {cos}");
    }

    #[test]
    fn objective_curve_is_monotonically_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_nonneg(&mut rng, (40, 15));
        let d = fit_nmf(&x, 5, 2, meta()).unwrap();
        let MethodAux::Nmf { objective } = &d.aux else {
            unreachable!()
        };
        assert!(objective.len() >= 2);
        for w in objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "objective rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn all_zero_after_clipping_errors() {
        let x = Matrix::from_elem((5, 4), -1.0);
        assert!(matches!(
            fit_nmf(&x, 2, 0, meta()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn projection_recovers_planted_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = random_nonneg(&mut rng, (3, 14));
        let h = random_nonneg(&mut rng, (25, 3));
        let x = h.dot(&w);
        let (h_hat, converged) = nnls_project(&x, &w, 500, 1e-12);
        assert!(converged);
        for (got, want) in h_hat.iter().zip(h.iter()) {
            assert!((got - want).abs() < 1e-3, "got {got}, want {want}");
        }
    }

    #[test]
    fn fit_is_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let x = random_nonneg(&mut rng, (30, 8));
        let a = fit_nmf(&x, 3, 7, meta()).unwrap();
        let b = fit_nmf(&x, 3, 7, meta()).unwrap();
        assert_eq!(a.components, b.components);
    }
}
