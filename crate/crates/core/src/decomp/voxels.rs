//! One-hot voxel basis baseline: each voxel becomes two components, the
//! one-hot vector and its negation, so retrieval can surface both positively
//! and negatively responsive image sets.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{Convergence, Decomposition, FitMeta, MethodAux};
use crate::domain::Method;

pub fn fit_voxels(v_roi: usize, meta: FitMeta) -> Result<Decomposition> {
    if v_roi == 0 {
        return Err(Error::InvalidInput("voxel basis needs V_roi >= 1".into()));
    }
    let mut components = Matrix::zeros((2 * v_roi, v_roi));
    for i in 0..v_roi {
        components[[2 * i, i]] = 1.0;
        components[[2 * i + 1, i]] = -1.0;
    }
    Ok(Decomposition {
        method: Method::Voxels,
        roi: meta.roi,
        fingerprint: "voxels".into(),
        components,
        hyperparams: BTreeMap::new(),
        provenance: meta.provenance,
        normalization: meta.normalization,
        aux: MethodAux::Voxels,
        convergence: Convergence {
            converged: true,
            iterations: 0,
            note: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PoolKind;
    use ndarray::array;

    fn meta() -> FitMeta {
        FitMeta {
            roi: "r".into(),
            provenance: vec![PoolKind::Measured],
            normalization: None,
        }
    }

    #[test]
    fn three_voxels_give_six_interleaved_components() {
        let d = fit_voxels(3, meta()).unwrap();
        assert_eq!(d.k_total(), 6);
        assert_eq!(d.components.row(0).to_vec(), vec![1.0, 0.0, 0.0]);
        assert_eq!(d.components.row(1).to_vec(), vec![-1.0, 0.0, 0.0]);
    }

    #[test]
    fn projection_is_identity_pick_with_negation() {
        let d = fit_voxels(3, meta()).unwrap();
        let x = array![[2.0, -1.0, 0.5]];
        let c = d.project(&x, PoolKind::Measured).unwrap();
        assert_eq!(
            c.row(0).to_vec(),
            vec![2.0, -2.0, -1.0, 1.0, 0.5, -0.5]
        );
    }

    #[test]
    fn half_of_duplicated_coefficients_are_nonpositive() {
        let d = fit_voxels(4, meta()).unwrap();
        let x = array![[0.3, -2.0, 5.0, 0.0]];
        let c = d.project(&x, PoolKind::Measured).unwrap();
        let nonpos = c.iter().filter(|&&v| v <= 0.0).count();
        assert!(nonpos >= c.len() / 2);
        for i in 0..4 {
            assert_eq!(c[[0, 2 * i]], -c[[0, 2 * i + 1]]);
        }
    }
}
