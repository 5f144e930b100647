//! Small numerical primitives shared across the pipeline.

use crate::error::{Error, Result};

/// Standard Pearson r. Returns 0 when either vector is constant, so that
/// degenerate voxel patterns cannot inject NaN into dedup decisions.
pub fn pearson_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "pearson inputs have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput(
            "pearson needs vectors of length >= 2".into(),
        ));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Ok(0.0);
    }
    Ok((cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine similarity of two vectors; 0 if either has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// L2-normalizes in place; a zero vector is left untouched.
pub fn normalize_in_place(v: &mut [f64]) {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v {
            *x /= norm;
        }
    }
}

/// Per-voxel mean and standard deviation over pool rows. Zero-variance
/// voxels get sigma 1 so the affine stays well-defined.
pub fn voxel_mean_std(x: &crate::Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows().max(1) as f64;
    let mut mu = vec![0.0; x.ncols()];
    let mut sigma = vec![0.0; x.ncols()];
    for row in x.rows() {
        for (j, &v) in row.iter().enumerate() {
            mu[j] += v;
        }
    }
    for m in &mut mu {
        *m /= n;
    }
    for row in x.rows() {
        for (j, &v) in row.iter().enumerate() {
            let d = v - mu[j];
            sigma[j] += d * d;
        }
    }
    for s in &mut sigma {
        *s = (*s / n).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    (mu, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: direct evaluation of
    /// r = (n*sum(xy) - sum(x)sum(y)) / sqrt((n*sum(x^2)-sum(x)^2)(n*sum(y^2)-sum(y)^2)).
    fn pearson_direct_formula(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let sx: f64 = a.iter().sum();
        let sy: f64 = b.iter().sum();
        let sxy: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let sxx: f64 = a.iter().map(|x| x * x).sum();
        let syy: f64 = b.iter().map(|y| y * y).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn self_correlation_is_one() {
        let a = vec![1.0, 2.0, 5.0, -3.0];
        assert_eq!(pearson_correlation(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn negation_correlation_is_minus_one() {
        let a = vec![1.0, 2.0, 5.0, -3.0];
        let b: Vec<f64> = a.iter().map(|x| -x).collect();
        assert_eq!(pearson_correlation(&a, &b).unwrap(), -1.0);
    }

    #[test]
    fn matches_direct_formula_oracle_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..3.0)).collect();
            let got = pearson_correlation(&a, &b).unwrap();
            let want = pearson_direct_formula(&a, &b);
            assert!((got - want).abs() < 1e-12, "got {got}, oracle {want}");
        }
    }

    #[test]
    fn constant_vector_returns_zero() {
        let a = vec![4.0, 4.0, 4.0];
        let b = vec![1.0, 2.0, 3.0];
        assert_eq!(pearson_correlation(&a, &b).unwrap(), 0.0);
        assert_eq!(pearson_correlation(&b, &a).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_errors() {
        assert!(pearson_correlation(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn zscore_stats_guard_dead_voxels() {
        let x = ndarray::array![[1.0, 5.0], [1.0, 7.0], [1.0, 9.0]];
        let (mu, sigma) = voxel_mean_std(&x);
        assert_eq!(mu, vec![1.0, 7.0]);
        assert_eq!(sigma[0], 1.0);
        assert!((sigma[1] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
