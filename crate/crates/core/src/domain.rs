//! Domain data model: voxel spaces and ROI partitioning, response pools,
//! pattern identities.
//!
//! All types here are immutable after construction and safe to share
//! read-only across threads.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};

// ---------------------------------------------------------------------------
// Voxel space and ROIs
// ---------------------------------------------------------------------------

/// A named subset of voxel indices, sorted ascending, no duplicates.
/// Indices are global indices into the subject's voxel vector so that
/// patterns can be projected back onto the full brain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Roi {
    pub name: String,
    pub voxels: Vec<usize>,
}

/// A subject's voxel vector plus its ROI partitioning. ROI lists are
/// disjoint, sorted, nonempty subsets of `[0, total_voxels)`; their order
/// is preserved as given.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoxelSpace {
    pub subject_id: String,
    pub total_voxels: usize,
    rois: Vec<Roi>,
}

impl VoxelSpace {
    pub fn new(subject_id: impl Into<String>, total_voxels: usize, rois: Vec<Roi>) -> Result<Self> {
        let mut seen = HashSet::new();
        for roi in &rois {
            if roi.voxels.is_empty() {
                return Err(Error::InvalidInput(format!("ROI `{}` is empty", roi.name)));
            }
            if !roi.voxels.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::InvalidInput(format!(
                    "ROI `{}` voxel list is not strictly sorted",
                    roi.name
                )));
            }
            for &v in &roi.voxels {
                if v >= total_voxels {
                    return Err(Error::InvalidInput(format!(
                        "ROI `{}` voxel {v} out of range (total {total_voxels})",
                        roi.name
                    )));
                }
                if !seen.insert(v) {
                    return Err(Error::InvalidInput(format!(
                        "voxel {v} assigned to more than one ROI"
                    )));
                }
            }
        }
        Ok(VoxelSpace {
            subject_id: subject_id.into(),
            total_voxels,
            rois,
        })
    }

    pub fn rois(&self) -> &[Roi] {
        &self.rois
    }

    pub fn roi(&self, name: &str) -> Result<&Roi> {
        self.rois
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::UnknownRoi(name.to_string()))
    }

    pub fn roi_names(&self) -> Vec<&str> {
        self.rois.iter().map(|r| r.name.as_str()).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let space: VoxelSpace = serde_json::from_slice(&bytes)?;
        VoxelSpace::new(space.subject_id, space.total_voxels, space.rois)
    }
}

// ---------------------------------------------------------------------------
// Response pools
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Measured,
    Predicted,
}

impl PoolKind {
    pub const ALL: [PoolKind; 2] = [PoolKind::Measured, PoolKind::Predicted];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolKind::Measured => "measured",
            PoolKind::Predicted => "predicted",
        }
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A matrix of stimulus responses (samples x voxels) with stimulus ids.
#[derive(Debug, Clone)]
pub struct ResponsePool {
    pub kind: PoolKind,
    pub stimulus_ids: Vec<String>,
    pub responses: Matrix,
}

impl ResponsePool {
    pub fn new(kind: PoolKind, stimulus_ids: Vec<String>, responses: Matrix) -> Result<Self> {
        if stimulus_ids.is_empty() {
            return Err(Error::InvalidInput("response pool must be nonempty".into()));
        }
        if stimulus_ids.len() != responses.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} stimulus ids but {} response rows",
                stimulus_ids.len(),
                responses.nrows()
            )));
        }
        let mut seen = HashSet::new();
        for id in &stimulus_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate stimulus id `{id}`")));
            }
        }
        Ok(ResponsePool {
            kind,
            stimulus_ids,
            responses,
        })
    }

    pub fn len(&self) -> usize {
        self.stimulus_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimulus_ids.is_empty()
    }

    pub fn width(&self) -> usize {
        self.responses.ncols()
    }

    /// Persists as `<stem>.bxm` (responses) + `<stem>.ids.json`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        matrix::save_matrix(dir.join(format!("{stem}.bxm")), &self.responses)?;
        let ids_path = dir.join(format!("{stem}.ids.json"));
        let json = serde_json::to_string(&self.stimulus_ids)?;
        fs::write(&ids_path, json).map_err(|e| Error::io(ids_path, e))
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str, kind: PoolKind) -> Result<Self> {
        let dir = dir.as_ref();
        let responses = matrix::load_matrix(dir.join(format!("{stem}.bxm")))?;
        let ids_path = dir.join(format!("{stem}.ids.json"));
        let bytes = fs::read(&ids_path).map_err(|e| Error::io(&ids_path, e))?;
        let stimulus_ids: Vec<String> = serde_json::from_slice(&bytes)?;
        ResponsePool::new(kind, stimulus_ids, responses)
    }
}

/// Selects the ROI's columns from the pool, in the ROI's stored index order.
pub fn restrict_to_roi(pool: &ResponsePool, space: &VoxelSpace, roi_name: &str) -> Result<Matrix> {
    if pool.width() != space.total_voxels {
        return Err(Error::ShapeMismatch(format!(
            "pool width {} does not match voxel space total {}",
            pool.width(),
            space.total_voxels
        )));
    }
    let roi = space.roi(roi_name)?;
    matrix::select_columns(&pool.responses, &roi.voxels)
}

// ---------------------------------------------------------------------------
// Pattern identity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Voxels,
    Pca,
    Nmf,
    Ica,
    Sae,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Voxels,
        Method::Pca,
        Method::Nmf,
        Method::Ica,
        Method::Sae,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Voxels => "voxels",
            Method::Pca => "pca",
            Method::Nmf => "nmf",
            Method::Ica => "ica",
            Method::Sae => "sae",
        }
    }

    /// Methods whose components are emitted in (+, -) pairs.
    pub fn sign_duplicated(self) -> bool {
        matches!(self, Method::Voxels | Method::Pca | Method::Ica)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voxels" => Ok(Method::Voxels),
            "pca" => Ok(Method::Pca),
            "nmf" => Ok(Method::Nmf),
            "ica" => Ok(Method::Ica),
            "sae" => Ok(Method::Sae),
            other => Err(Error::InvalidInput(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn as_str(self) -> &'static str {
        match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        }
    }
}

/// Identity of one pattern within a run: method, ROI, hyperparameter
/// fingerprint, component index, and the sign flag for methods that emit
/// (+,-) duplicated components.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatternId {
    pub method: Method,
    pub roi: String,
    pub fingerprint: String,
    pub index: usize,
    pub sign: Option<Sign>,
}

impl fmt::Display for PatternId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{:04}{}",
            self.method,
            self.roi,
            self.fingerprint,
            self.index,
            self.sign.map(Sign::as_str).unwrap_or("")
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn space_2roi() -> VoxelSpace {
        VoxelSpace::new(
            "subj01",
            6,
            vec![
                Roi {
                    name: "alpha".into(),
                    voxels: vec![1, 4],
                },
                Roi {
                    name: "beta".into(),
                    voxels: vec![0, 2, 3, 5],
                },
            ],
        )
        .unwrap()
    }

    fn pool_4x6() -> ResponsePool {
        let m = array![
            [0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            [10.0, 11.0, 12.0, 13.0, 14.0, 15.0],
            [20.0, 21.0, 22.0, 23.0, 24.0, 25.0],
            [30.0, 31.0, 32.0, 33.0, 34.0, 35.0],
        ];
        ResponsePool::new(
            PoolKind::Measured,
            (0..4).map(|i| format!("s{i}")).collect(),
            m,
        )
        .unwrap()
    }

    #[test]
    fn restrict_selects_roi_columns_in_order() {
        let restricted = restrict_to_roi(&pool_4x6(), &space_2roi(), "alpha").unwrap();
        assert_eq!(restricted, array![[1.0, 4.0], [11.0, 14.0], [21.0, 24.0], [31.0, 34.0]]);
    }

    #[test]
    fn restrict_full_cover_roi_is_identity() {
        let space = VoxelSpace::new(
            "s",
            6,
            vec![Roi {
                name: "all".into(),
                voxels: (0..6).collect(),
            }],
        )
        .unwrap();
        let pool = pool_4x6();
        let restricted = restrict_to_roi(&pool, &space, "all").unwrap();
        assert_eq!(restricted, pool.responses);
    }

    #[test]
    fn restrict_unknown_roi_errors() {
        match restrict_to_roi(&pool_4x6(), &space_2roi(), "gamma") {
            Err(Error::UnknownRoi(name)) => assert_eq!(name, "gamma"),
            other => panic!("expected UnknownRoi, got {other:?}"),
        }
    }

    #[test]
    fn restrict_width_mismatch_errors() {
        let pool = ResponsePool::new(
            PoolKind::Measured,
            vec!["a".into()],
            Matrix::zeros((1, 4)),
        )
        .unwrap();
        assert!(matches!(
            restrict_to_roi(&pool, &space_2roi(), "alpha"),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn reassembling_roi_restrictions_reproduces_covered_columns() {
        let space = space_2roi();
        let pool = pool_4x6();
        let mut rebuilt = Matrix::zeros((4, 6));
        for roi in space.rois() {
            let sub = restrict_to_roi(&pool, &space, &roi.name).unwrap();
            for (j, &v) in roi.voxels.iter().enumerate() {
                rebuilt.column_mut(v).assign(&sub.column(j));
            }
        }
        assert_eq!(rebuilt, pool.responses);
    }

    #[test]
    fn overlapping_rois_are_rejected() {
        let r = VoxelSpace::new(
            "s",
            4,
            vec![
                Roi {
                    name: "a".into(),
                    voxels: vec![0, 1],
                },
                Roi {
                    name: "b".into(),
                    voxels: vec![1, 2],
                },
            ],
        );
        assert!(r.is_err());
    }

    #[test]
    fn duplicate_stimulus_ids_are_rejected() {
        let r = ResponsePool::new(
            PoolKind::Measured,
            vec!["x".into(), "x".into()],
            Matrix::zeros((2, 3)),
        );
        assert!(r.is_err());
    }

    #[test]
    fn pattern_id_ordering_is_stable() {
        let a = PatternId {
            method: Method::Ica,
            roi: "r".into(),
            fingerprint: "f".into(),
            index: 1,
            sign: Some(Sign::Plus),
        };
        let b = PatternId {
            sign: Some(Sign::Minus),
            ..a.clone()
        };
        assert!(a < b);
        assert_eq!(a.to_string(), "ica:r:f:0001+");
    }

    #[test]
    fn voxel_space_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("space.json");
        let space = space_2roi();
        space.save(&p).unwrap();
        let loaded = VoxelSpace::load(&p).unwrap();
        assert_eq!(loaded.subject_id, "subj01");
        assert_eq!(loaded.roi("alpha").unwrap().voxels, vec![1, 4]);
    }
}
