//! PCA via mean-centered SVD, with variance-threshold component selection.
//!
//! The SVD runs on the QR-reduced data matrix (R-SVD): QR of the centered
//! N x V input gives a min(N,V) x V factor whose SVD shares X's singular
//! values and right singular vectors. That keeps tall inputs cheap without
//! touching the covariance matrix, which stays available as an independent
//! oracle in tests.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::domain::Method;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{
    duplicate_signed, threshold_label, Convergence, Decomposition, FitMeta, MethodAux,
};

/// Mean-centered SVD of a response matrix.
#[derive(Debug, Clone)]
pub struct PcaFit {
    pub mean: Vec<f64>,
    /// Orthonormal principal axes as rows, descending variance. Only the
    /// numerically nonzero directions are kept.
    pub basis: Matrix,
    /// Per-axis explained variance (sigma^2 / (N-1)), descending.
    pub explained_variance: Vec<f64>,
    /// Cumulative explained-variance ratio; reaches exactly 1.0 at the
    /// numerical rank.
    pub cumulative_ratio: Vec<f64>,
}

impl PcaFit {
    /// Smallest K whose cumulative explained variance reaches `threshold`.
    pub fn k_for_threshold(&self, threshold: f64) -> Result<usize> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "variance threshold {threshold} outside (0, 1]"
            )));
        }
        let k = self
            .cumulative_ratio
            .iter()
            .position(|&r| r >= threshold - 1e-12)
            .map(|p| p + 1)
            .unwrap_or(self.cumulative_ratio.len());
        Ok(k.max(1))
    }

    pub fn rank(&self) -> usize {
        self.basis.nrows()
    }
}

pub fn pca_svd(x: &Matrix) -> Result<PcaFit> {
    let (n, v) = x.dim();
    if n < 2 {
        return Err(Error::InvalidInput("PCA needs at least 2 samples".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            op: "pca_svd".into(),
            reason: "non-finite input".into(),
        });
    }
    let mean: Vec<f64> = (0..v)
        .map(|j| x.column(j).sum() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, v, |i, j| x[[i, j]] - mean[j]);

    // R-SVD: QR-reduce, then decompose the small factor.
    let r = centered.qr().unpack_r();
    let svd = r.svd(false, true);
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Numerical {
        op: "pca_svd".into(),
        reason: "SVD did not produce right singular vectors".into(),
    })?;

    let scale = 1.0 / (n as f64 - 1.0);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = sigma_max * (n.max(v) as f64) * f64::EPSILON;

    let mut explained_variance = Vec::new();
    for &s in svd.singular_values.iter() {
        if s > cutoff && s > 0.0 {
            explained_variance.push(s * s * scale);
        }
    }
    let rank = explained_variance.len().max(1);
    if explained_variance.is_empty() {
        // All-constant input: keep one axis with zero variance.
        explained_variance.push(0.0);
    }
    debug_assert!(explained_variance.windows(2).all(|w| w[0] >= w[1] - 1e-12));

    let total: f64 = explained_variance.iter().sum();
    let mut cumulative_ratio = Vec::with_capacity(rank);
    let mut acc = 0.0;
    for &ev in &explained_variance {
        acc += ev;
        cumulative_ratio.push(if total > 0.0 { acc / total } else { 1.0 });
    }
    if let Some(last) = cumulative_ratio.last_mut() {
        *last = 1.0;
    }

    let mut basis = Matrix::zeros((rank, v));
    for i in 0..rank {
        for j in 0..v {
            basis[[i, j]] = v_t[(i, j)];
        }
    }

    Ok(PcaFit {
        mean,
        basis,
        explained_variance,
        cumulative_ratio,
    })
}

/// Component counts matching the PCA explained-variance curve: smallest K
/// per threshold. Used to size NMF and ICA.
pub fn variance_matched_k(x: &Matrix, thresholds: &[f64]) -> Result<Vec<usize>> {
    let fit = pca_svd(x)?;
    thresholds.iter().map(|&t| fit.k_for_threshold(t)).collect()
}

/// One decomposition per threshold, sharing a single SVD. Components are
/// sign-duplicated so activation maps always correspond to positively
/// responsive image sets.
pub fn fit_pca(x: &Matrix, thresholds: &[f64], meta: FitMeta) -> Result<Vec<Decomposition>> {
    let fit = pca_svd(x)?;
    thresholds
        .iter()
        .map(|&t| {
            let k = fit.k_for_threshold(t)?;
            let kept = fit.basis.slice(ndarray::s![..k, ..]).to_owned();
            let mut hyperparams = BTreeMap::new();
            hyperparams.insert("variance_threshold".into(), serde_json::json!(t));
            hyperparams.insert("k".into(), serde_json::json!(k));
            Ok(Decomposition {
                method: Method::Pca,
                roi: meta.roi.clone(),
                fingerprint: format!("pca-v{}", threshold_label(t)),
                components: duplicate_signed(&kept),
                hyperparams,
                provenance: meta.provenance.clone(),
                normalization: meta.normalization.clone(),
                aux: MethodAux::Pca {
                    mean: fit.mean.clone(),
                    explained_variance: fit.explained_variance[..k].to_vec(),
                    cumulative_ratio: fit.cumulative_ratio[..k].to_vec(),
                },
                convergence: Convergence {
                    converged: true,
                    iterations: 0,
                    note: None,
                },
            })
        })
        .collect()
}
