//! Decomposition families and coefficient projection.
//!
//! Every fit emits a [`Decomposition`]: a component matrix (patterns x ROI
//! voxels) plus whatever the method needs to project new responses onto
//! those patterns (mean vector, unmixing matrix, encoder weights). All fits
//! are deterministic given (data, seed, config).

mod ica;
mod nmf;
mod pca;
mod sae;
mod voxels;

pub use ica::fit_ica;
pub use nmf::{fit_nmf, nnls_project};
pub use pca::{fit_pca, pca_svd, variance_matched_k, PcaFit};
pub use sae::{fit_sae, SaeHyper};
pub use voxels::fit_voxels;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::domain::{Method, PatternId, PoolKind, Sign};
use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};

/// Coefficients below this never count as activating an SAE pattern.
pub const SAE_ACTIVATION_CUTOFF: f64 = 0.01;

/// Per-voxel affine applied to responses before fitting and projection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoxelNorm {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl VoxelNorm {
    /// Stats from the measured pool, applied to both pools.
    pub fn from_measured(x: &Matrix) -> Self {
        let (mu, sigma) = crate::stats::voxel_mean_std(x);
        VoxelNorm { mu, sigma }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut z = x.clone();
        for mut row in z.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mu[j]) / self.sigma[j];
            }
        }
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputNormalization {
    None,
    ZscorePerVoxel,
}

/// Context shared by every fit: which ROI the data came from, which pools
/// trained it, and the per-voxel normalization already applied to the input.
#[derive(Debug, Clone)]
pub struct FitMeta {
    pub roi: String,
    pub provenance: Vec<PoolKind>,
    pub normalization: Option<VoxelNorm>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub train: f64,
    pub holdout: f64,
}

/// Method-specific state needed to project responses onto the components.
#[derive(Debug, Clone)]
pub enum MethodAux {
    Voxels,
    Pca {
        mean: Vec<f64>,
        /// Per kept (non-duplicated) component, descending.
        explained_variance: Vec<f64>,
        /// Cumulative explained-variance ratio per kept component.
        cumulative_ratio: Vec<f64>,
    },
    Ica {
        mean: Vec<f64>,
        /// Rows aligned with `components` (sign-duplicated like them).
        unmixing: Matrix,
    },
    Nmf {
        /// Frobenius objective sampled every 10 iterations.
        objective: Vec<f64>,
    },
    Sae {
        enc_measured_w: Matrix,
        enc_measured_b: Vec<f64>,
        enc_predicted_w: Option<Matrix>,
        enc_predicted_b: Option<Vec<f64>>,
        dec_bias: Vec<f64>,
        loss_curve: Vec<LossPoint>,
    },
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub method: Method,
    pub roi: String,
    pub fingerprint: String,
    /// Patterns as rows, K_total x V_roi. Sign-duplicated methods interleave
    /// pairs: row 2i is +component_i, row 2i+1 its negation.
    pub components: Matrix,
    pub hyperparams: BTreeMap<String, serde_json::Value>,
    pub provenance: Vec<PoolKind>,
    pub normalization: Option<VoxelNorm>,
    pub aux: MethodAux,
    pub convergence: Convergence,
}

/// Interleaves each row of `base` with its negation.
pub(crate) fn duplicate_signed(base: &Matrix) -> Matrix {
    let (k, v) = base.dim();
    let mut out = Matrix::zeros((2 * k, v));
    for i in 0..k {
        out.row_mut(2 * i).assign(&base.row(i));
        out.row_mut(2 * i + 1).assign(&base.row(i).mapv(|x| -x));
    }
    out
}

impl Decomposition {
    pub fn k_total(&self) -> usize {
        self.components.nrows()
    }

    pub fn v_roi(&self) -> usize {
        self.components.ncols()
    }

    /// Number of underlying components before sign duplication.
    pub fn k_base(&self) -> usize {
        if self.method.sign_duplicated() {
            self.k_total() / 2
        } else {
            self.k_total()
        }
    }

    pub fn pattern_ids(&self) -> Vec<PatternId> {
        (0..self.k_total()).map(|row| self.pattern_id(row)).collect()
    }

    pub fn pattern_id(&self, row: usize) -> PatternId {
        let (index, sign) = if self.method.sign_duplicated() {
            (
                row / 2,
                Some(if row % 2 == 0 { Sign::Plus } else { Sign::Minus }),
            )
        } else {
            (row, None)
        };
        PatternId {
            method: self.method,
            roi: self.roi.clone(),
            fingerprint: self.fingerprint.clone(),
            index,
            sign,
        }
    }

    pub fn row_of(&self, id: &PatternId) -> Result<usize> {
        if id.method != self.method || id.roi != self.roi || id.fingerprint != self.fingerprint {
            return Err(Error::InvalidInput(format!(
                "pattern {id} does not belong to decomposition {}:{}:{}",
                self.method, self.roi, self.fingerprint
            )));
        }
        let row = if self.method.sign_duplicated() {
            id.index * 2 + usize::from(id.sign == Some(Sign::Minus))
        } else {
            id.index
        };
        if row >= self.k_total() {
            return Err(Error::InvalidInput(format!("pattern {id} out of range")));
        }
        Ok(row)
    }

    /// Method-specific projection of responses (N x V_roi, raw units) onto
    /// the components, giving coefficients N x K_total.
    ///
    /// The stored per-voxel normalization is applied first, so callers pass
    /// responses in the same units used to build the pools.
    pub fn project(&self, responses: &Matrix, pool: PoolKind) -> Result<Matrix> {
        self.project_with_diagnostics(responses, pool).map(|(m, _)| m)
    }

    pub fn project_with_diagnostics(
        &self,
        responses: &Matrix,
        pool: PoolKind,
    ) -> Result<(Matrix, ProjectionDiagnostics)> {
        if responses.ncols() != self.v_roi() {
            return Err(Error::ShapeMismatch(format!(
                "responses width {} does not match decomposition V_roi {}",
                responses.ncols(),
                self.v_roi()
            )));
        }
        let z = match &self.normalization {
            Some(norm) => norm.apply(responses),
            None => responses.clone(),
        };
        let mut diag = ProjectionDiagnostics::default();
        let coeffs = match &self.aux {
            MethodAux::Voxels => {
                let n = z.nrows();
                let v = z.ncols();
                let mut out = Matrix::zeros((n, 2 * v));
                for j in 0..v {
                    out.column_mut(2 * j).assign(&z.column(j));
                    out.column_mut(2 * j + 1).assign(&z.column(j).mapv(|x| -x));
                }
                out
            }
            MethodAux::Pca { mean, .. } => centered(&z, mean).dot(&self.components.t()),
            MethodAux::Ica { mean, unmixing } => centered(&z, mean).dot(&unmixing.t()),
            MethodAux::Nmf { .. } => {
                let clipped = z.mapv(|x| x.max(0.0));
                let (h, converged) = nnls_project(&clipped, &self.components, 200, 1e-6);
                diag.nnls_converged = Some(converged);
                h
            }
            MethodAux::Sae {
                enc_measured_w,
                enc_measured_b,
                enc_predicted_w,
                enc_predicted_b,
                ..
            } => {
                let (w, b) = match (pool, enc_predicted_w, enc_predicted_b) {
                    (PoolKind::Predicted, Some(w), Some(b)) => (w, b),
                    _ => (enc_measured_w, enc_measured_b),
                };
                let mut codes = z.dot(&w.t());
                for mut row in codes.rows_mut() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = (*v + b[j]).max(0.0);
                    }
                }
                codes
            }
        };
        Ok((coeffs, diag))
    }

    // ------------------------------------------------------------------
    // Persistence: a directory holding components.bxm, auxiliary matrices,
    // and meta.json with hyperparameters, convergence and curves.
    // ------------------------------------------------------------------

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        matrix::save_matrix(dir.join("components.bxm"), &self.components)?;
        if let Some(norm) = &self.normalization {
            matrix::save_matrix(dir.join("norm_mu.bxm"), &row_matrix(&norm.mu))?;
            matrix::save_matrix(dir.join("norm_sigma.bxm"), &row_matrix(&norm.sigma))?;
        }
        let mut meta = DecompMeta {
            schema_version: crate::SCHEMA_VERSION,
            method: self.method,
            roi: self.roi.clone(),
            fingerprint: self.fingerprint.clone(),
            hyperparams: self.hyperparams.clone(),
            provenance: self.provenance.clone(),
            normalized: self.normalization.is_some(),
            convergence: self.convergence.clone(),
            k_total: self.k_total(),
            v_roi: self.v_roi(),
            pca: None,
            nmf_objective: None,
            sae_loss: None,
            sae_has_predicted_encoder: false,
        };
        match &self.aux {
            MethodAux::Voxels => {}
            MethodAux::Pca {
                mean,
                explained_variance,
                cumulative_ratio,
            } => {
                matrix::save_matrix(dir.join("mean.bxm"), &row_matrix(mean))?;
                meta.pca = Some(PcaMeta {
                    explained_variance: explained_variance.clone(),
                    cumulative_ratio: cumulative_ratio.clone(),
                });
            }
            MethodAux::Ica { mean, unmixing } => {
                matrix::save_matrix(dir.join("mean.bxm"), &row_matrix(mean))?;
                matrix::save_matrix(dir.join("unmixing.bxm"), unmixing)?;
            }
            MethodAux::Nmf { objective } => {
                meta.nmf_objective = Some(objective.clone());
            }
            MethodAux::Sae {
                enc_measured_w,
                enc_measured_b,
                enc_predicted_w,
                enc_predicted_b,
                dec_bias,
                loss_curve,
            } => {
                matrix::save_matrix(dir.join("enc_measured_w.bxm"), enc_measured_w)?;
                matrix::save_matrix(dir.join("enc_measured_b.bxm"), &row_matrix(enc_measured_b))?;
                if let (Some(w), Some(b)) = (enc_predicted_w, enc_predicted_b) {
                    matrix::save_matrix(dir.join("enc_predicted_w.bxm"), w)?;
                    matrix::save_matrix(dir.join("enc_predicted_b.bxm"), &row_matrix(b))?;
                    meta.sae_has_predicted_encoder = true;
                }
                matrix::save_matrix(dir.join("dec_bias.bxm"), &row_matrix(dec_bias))?;
                meta.sae_loss = Some(loss_curve.clone());
            }
        }
        let meta_path = dir.join("meta.json");
        let json = serde_json::to_string_pretty(&meta)?;
        fs::write(&meta_path, json).map_err(|e| Error::io(meta_path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join("meta.json");
        let bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DecompMeta = serde_json::from_slice(&bytes)?;
        let components = matrix::load_matrix(dir.join("components.bxm"))?;
        if components.dim() != (meta.k_total, meta.v_roi) {
            return Err(Error::ArtifactFormat {
                path: dir.to_path_buf(),
                reason: format!(
                    "components shape {:?} does not match metadata ({}, {})",
                    components.dim(),
                    meta.k_total,
                    meta.v_roi
                ),
            });
        }
        let normalization = if meta.normalized {
            Some(VoxelNorm {
                mu: load_row(dir, "norm_mu.bxm")?,
                sigma: load_row(dir, "norm_sigma.bxm")?,
            })
        } else {
            None
        };
        let aux = match meta.method {
            Method::Voxels => MethodAux::Voxels,
            Method::Pca => {
                let pca = meta.pca.clone().ok_or_else(|| Error::ArtifactFormat {
                    path: dir.to_path_buf(),
                    reason: "missing pca metadata".into(),
                })?;
                MethodAux::Pca {
                    mean: load_row(dir, "mean.bxm")?,
                    explained_variance: pca.explained_variance,
                    cumulative_ratio: pca.cumulative_ratio,
                }
            }
            Method::Ica => MethodAux::Ica {
                mean: load_row(dir, "mean.bxm")?,
                unmixing: matrix::load_matrix(dir.join("unmixing.bxm"))?,
            },
            Method::Nmf => MethodAux::Nmf {
                objective: meta.nmf_objective.clone().unwrap_or_default(),
            },
            Method::Sae => {
                let (enc_predicted_w, enc_predicted_b) = if meta.sae_has_predicted_encoder {
                    (
                        Some(matrix::load_matrix(dir.join("enc_predicted_w.bxm"))?),
                        Some(load_row(dir, "enc_predicted_b.bxm")?),
                    )
                } else {
                    (None, None)
                };
                MethodAux::Sae {
                    enc_measured_w: matrix::load_matrix(dir.join("enc_measured_w.bxm"))?,
                    enc_measured_b: load_row(dir, "enc_measured_b.bxm")?,
                    enc_predicted_w,
                    enc_predicted_b,
                    dec_bias: load_row(dir, "dec_bias.bxm")?,
                    loss_curve: meta.sae_loss.clone().unwrap_or_default(),
                }
            }
        };
        Ok(Decomposition {
            method: meta.method,
            roi: meta.roi,
            fingerprint: meta.fingerprint,
            components,
            hyperparams: meta.hyperparams,
            provenance: meta.provenance,
            normalization,
            aux,
            convergence: meta.convergence,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProjectionDiagnostics {
    /// Set for NMF: whether the NNLS solve hit its tolerance before the cap.
    pub nnls_converged: Option<bool>,
}

fn centered(z: &Matrix, mean: &[f64]) -> Matrix {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v -= mean[j];
        }
    }
    out
}

fn row_matrix(v: &[f64]) -> Matrix {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row matrix")
}

fn load_row(dir: &Path, name: &str) -> Result<Vec<f64>> {
    let m = matrix::load_matrix(dir.join(name))?;
    Ok(m.into_raw_vec_and_offset().0)
}

pub(crate) fn array1_to_vec(a: Array1<f64>) -> Vec<f64> {
    a.into_raw_vec_and_offset().0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PcaMeta {
    explained_variance: Vec<f64>,
    cumulative_ratio: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DecompMeta {
    schema_version: u32,
    method: Method,
    roi: String,
    fingerprint: String,
    hyperparams: BTreeMap<String, serde_json::Value>,
    provenance: Vec<PoolKind>,
    normalized: bool,
    convergence: Convergence,
    k_total: usize,
    v_roi: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pca: Option<PcaMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nmf_objective: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sae_loss: Option<Vec<LossPoint>>,
    #[serde(default)]
    sae_has_predicted_encoder: bool,
}

/// Formats a variance threshold for fingerprints: 0.9 -> "90", 0.985 -> "98.5".
pub(crate) fn threshold_label(t: f64) -> String {
    let pct = t * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    }
}

/// Formats an expansion factor or sparsity coefficient compactly.
pub(crate) fn hyper_label(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v}")
    }
}
