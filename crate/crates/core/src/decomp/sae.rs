//! Sparse autoencoder decomposition.
//!
//! Linear encoder, ReLU, linear decoder; loss is reconstruction MSE plus an
//! L1 penalty on the codes. When a predicted pool is supplied the measured
//! and predicted data get separate encoders sharing one decoder, and every
//! batch holds an equal number of measured and predicted samples so both
//! sources contribute balanced gradients. After training, decoder columns
//! are L2-normalized and encoder rows rescaled by the same factors, which
//! leaves reconstructions unchanged and makes coefficient magnitudes
//! comparable across patterns.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::Method;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{hyper_label, Convergence, Decomposition, FitMeta, LossPoint, MethodAux};

#[derive(Debug, Clone)]
pub struct SaeHyper {
    /// Latent dimension as a ratio of the input dimension.
    pub expansion_factor: f64,
    /// Weight of the L1 penalty on latent codes.
    pub sparsity_coeff: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of each pool reserved for the held-out loss curve.
    pub holdout_fraction: f64,
}

impl Default for SaeHyper {
    fn default() -> Self {
        SaeHyper {
            expansion_factor: 1.0,
            sparsity_coeff: 0.0,
            epochs: 30,
            learning_rate: 1e-3,
            batch_size: 256,
            seed: 0,
            holdout_fraction: 0.05,
        }
    }
}

struct AdamVar2 {
    value: Array2<f64>,
    m: Array2<f64>,
    v: Array2<f64>,
}

struct AdamVar1 {
    value: Array1<f64>,
    m: Array1<f64>,
    v: Array1<f64>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamVar2 {
    fn new(value: Array2<f64>) -> Self {
        let m = Array2::zeros(value.raw_dim());
        let v = Array2::zeros(value.raw_dim());
        AdamVar2 { value, m, v }
    }

    fn step(&mut self, grad: &Array2<f64>, lr_t: f64) {
        Zip::from(&mut self.value)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|w, m, v, &g| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *w -= lr_t * *m / (v.sqrt() + ADAM_EPS);
            });
    }
}

impl AdamVar1 {
    fn new(value: Array1<f64>) -> Self {
        let m = Array1::zeros(value.raw_dim());
        let v = Array1::zeros(value.raw_dim());
        AdamVar1 { value, m, v }
    }

    fn step(&mut self, grad: &Array1<f64>, lr_t: f64) {
        Zip::from(&mut self.value)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|w, m, v, &g| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *w -= lr_t * *m / (v.sqrt() + ADAM_EPS);
            });
    }
}

/// Bias-corrected step size at Adam timestep t (1-based).
fn adam_lr(lr: f64, t: usize) -> f64 {
    let t = t as f64;
    lr * (1.0 - BETA2.powf(t)).sqrt() / (1.0 - BETA1.powf(t))
}

fn encode(x: &Matrix, w: &Array2<f64>, b: &Array1<f64>) -> Matrix {
    let mut z = x.dot(&w.t());
    for mut row in z.rows_mut() {
        Zip::from(&mut row).and(b).for_each(|z, &b| {
            *z = (*z + b).max(0.0);
        });
    }
    z
}

pub fn fit_sae(
    x_measured: &Matrix,
    x_predicted: Option<&Matrix>,
    hyper: &SaeHyper,
    meta: FitMeta,
) -> Result<Decomposition> {
    let v = x_measured.ncols();
    let n_m = x_measured.nrows();
    if n_m == 0 || v == 0 {
        return Err(Error::InvalidInput("SAE needs a nonempty measured pool".into()));
    }
    let x_predicted = x_predicted.filter(|m| m.nrows() > 0);
    if let Some(xp) = x_predicted {
        if xp.ncols() != v {
            return Err(Error::ShapeMismatch(format!(
                "predicted pool width {} does not match measured {v}",
                xp.ncols()
            )));
        }
    }
    if hyper.expansion_factor <= 0.0 || hyper.sparsity_coeff < 0.0 {
        return Err(Error::InvalidInput(
            "SAE expansion factor must be positive and sparsity coefficient nonnegative".into(),
        ));
    }
    let latent = ((hyper.expansion_factor * v as f64).round() as usize).max(1);
    let dual = x_predicted.is_some();
    let lambda = hyper.sparsity_coeff;

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);

    // Holdout split per pool.
    let (train_m, hold_m) = split_holdout(n_m, hyper.holdout_fraction, &mut rng);
    let (train_p, hold_p) = match x_predicted {
        Some(xp) => split_holdout(xp.nrows(), hyper.holdout_fraction, &mut rng),
        None => (Vec::new(), Vec::new()),
    };

    // Parameters. Decoder starts as the encoder transpose.
    let bound = 1.0 / (v as f64).sqrt();
    let init = Array2::from_shape_fn((latent, v), |_| rng.random_range(-bound..bound));
    let mut enc_m_w = AdamVar2::new(init.clone());
    let mut enc_m_b = AdamVar1::new(Array1::zeros(latent));
    let (mut enc_p_w, mut enc_p_b) = if dual {
        (
            Some(AdamVar2::new(init.clone())),
            Some(AdamVar1::new(Array1::zeros(latent))),
        )
    } else {
        (None, None)
    };
    let mut dec_w = AdamVar2::new(init.t().to_owned());
    let mut dec_b = AdamVar1::new(Array1::zeros(v));

    let per_batch_m = if dual {
        (hyper.batch_size / 2).max(1)
    } else {
        hyper.batch_size.max(1)
    };
    let per_batch_p = if dual { (hyper.batch_size / 2).max(1) } else { 0 };
    let steps_per_epoch = train_m.len().div_ceil(per_batch_m).max(1);

    let holdout_loss = |enc_m_w: &Array2<f64>,
                        enc_m_b: &Array1<f64>,
                        enc_p_w: Option<&Array2<f64>>,
                        enc_p_b: Option<&Array1<f64>>,
                        dec_w: &Array2<f64>,
                        dec_b: &Array1<f64>|
     -> f64 {
        let mut total = 0.0;
        let mut pools = 0.0;
        let idx_m = if hold_m.is_empty() { &train_m } else { &hold_m };
        let xm = x_measured.select(Axis(0), idx_m);
        total += forward_loss(&xm, enc_m_w, enc_m_b, dec_w, dec_b, lambda);
        pools += 1.0;
        if let Some(xp_all) = x_predicted {
            let idx_p = if hold_p.is_empty() { &train_p } else { &hold_p };
            let xp = xp_all.select(Axis(0), idx_p);
            let (w, b) = (enc_p_w.unwrap(), enc_p_b.unwrap());
            total += forward_loss(&xp, w, b, dec_w, dec_b, lambda);
            pools += 1.0;
        }
        total / pools
    };

    let mut loss_curve = Vec::new();
    let initial_holdout = holdout_loss(
        &enc_m_w.value,
        &enc_m_b.value,
        enc_p_w.as_ref().map(|p| &p.value),
        enc_p_b.as_ref().map(|p| &p.value),
        &dec_w.value,
        &dec_b.value,
    );
    loss_curve.push(LossPoint {
        epoch: 0,
        train: initial_holdout,
        holdout: initial_holdout,
    });

    let mut t = 0usize;
    let mut order_m = train_m.clone();
    let mut order_p = train_p.clone();
    let mut cursor_p = 0usize;

    for epoch in 0..hyper.epochs {
        order_m.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for step in 0..steps_per_epoch {
            let lo = step * per_batch_m;
            let hi = ((step + 1) * per_batch_m).min(order_m.len());
            if lo >= hi {
                continue;
            }
            let idx_m: Vec<usize> = order_m[lo..hi].to_vec();
            let xm = x_measured.select(Axis(0), &idx_m);

            let xp = x_predicted.map(|xp_all| {
                let mut idx_p = Vec::with_capacity(per_batch_p);
                for _ in 0..per_batch_p {
                    if cursor_p >= order_p.len() {
                        order_p.shuffle(&mut rng);
                        cursor_p = 0;
                    }
                    idx_p.push(order_p[cursor_p]);
                    cursor_p += 1;
                }
                xp_all.select(Axis(0), &idx_p)
            });

            t += 1;
            let lr_t = adam_lr(hyper.learning_rate, t);

            // Forward.
            let zm = encode(&xm, &enc_m_w.value, &enc_m_b.value);
            let zp = xp.as_ref().map(|xp| {
                encode(
                    xp,
                    &enc_p_w.as_ref().unwrap().value,
                    &enc_p_b.as_ref().unwrap().value,
                )
            });
            let bm = zm.nrows();
            let b_total = bm + zp.as_ref().map_or(0, |z| z.nrows());

            let recon = |z: &Matrix| -> Matrix {
                let mut r = z.dot(&dec_w.value.t());
                for mut row in r.rows_mut() {
                    Zip::from(&mut row).and(&dec_b.value).for_each(|r, &c| *r += c);
                }
                r
            };
            let em = &recon(&zm) - &xm;
            let ep = zp
                .as_ref()
                .map(|z| &recon(z) - xp.as_ref().unwrap());

            let denom_recon = (b_total * v) as f64;
            let denom_sparse = (b_total * latent) as f64;
            let sq: f64 = em.iter().map(|e| e * e).sum::<f64>()
                + ep.as_ref().map_or(0.0, |e| e.iter().map(|x| x * x).sum());
            let l1: f64 = zm.iter().sum::<f64>()
                + zp.as_ref().map_or(0.0, |z| z.iter().sum());
            let loss = sq / denom_recon + lambda * l1 / denom_sparse;
            if !loss.is_finite() {
                return Err(Error::Numerical {
                    op: "fit_sae".into(),
                    reason: format!(
                        "non-finite loss at epoch {epoch}, step {step} (lr {}, lambda {lambda})",
                        hyper.learning_rate
                    ),
                });
            }
            epoch_loss += loss;

            // Backward. dXhat = 2 E / (B V).
            let scale_r = 2.0 / denom_recon;
            let sparse_g = lambda / denom_sparse;

            let mut d_dec = Matrix::zeros((v, latent));
            let mut d_dec_b = Array1::<f64>::zeros(v);

            backprop_half(
                &xm,
                &zm,
                &em,
                &dec_w.value,
                scale_r,
                sparse_g,
                lr_t,
                &mut d_dec,
                &mut d_dec_b,
                &mut enc_m_w,
                &mut enc_m_b,
            );
            if let (Some(xp), Some(zp), Some(ep)) = (xp.as_ref(), zp.as_ref(), ep.as_ref()) {
                backprop_half(
                    xp,
                    zp,
                    ep,
                    &dec_w.value,
                    scale_r,
                    sparse_g,
                    lr_t,
                    &mut d_dec,
                    &mut d_dec_b,
                    enc_p_w.as_mut().unwrap(),
                    enc_p_b.as_mut().unwrap(),
                );
            }
            dec_w.step(&d_dec, lr_t);
            dec_b.step(&d_dec_b, lr_t);
        }

        let holdout = holdout_loss(
            &enc_m_w.value,
            &enc_m_b.value,
            enc_p_w.as_ref().map(|p| &p.value),
            enc_p_b.as_ref().map(|p| &p.value),
            &dec_w.value,
            &dec_b.value,
        );
        loss_curve.push(LossPoint {
            epoch: epoch + 1,
            train: epoch_loss / steps_per_epoch as f64,
            holdout,
        });
    }

    // Normalize decoder columns; rescale encoder rows by the same factor so
    // relu(n z) = n relu(z) keeps reconstructions identical.
    let mut dec = dec_w.value;
    let mut w_m = enc_m_w.value;
    let mut b_m = enc_m_b.value;
    let mut w_p = enc_p_w.map(|p| p.value);
    let mut b_p = enc_p_b.map(|p| p.value);
    for j in 0..latent {
        let norm = dec.column(j).dot(&dec.column(j)).sqrt();
        if norm > 1e-12 {
            dec.column_mut(j).mapv_inplace(|x| x / norm);
            w_m.row_mut(j).mapv_inplace(|x| x * norm);
            b_m[j] *= norm;
            if let Some(w_p) = w_p.as_mut() {
                w_p.row_mut(j).mapv_inplace(|x| x * norm);
            }
            if let Some(b_p) = b_p.as_mut() {
                b_p[j] *= norm;
            }
        }
    }

    let mut hyperparams = BTreeMap::new();
    hyperparams.insert("expansion_factor".into(), serde_json::json!(hyper.expansion_factor));
    hyperparams.insert("sparsity_coeff".into(), serde_json::json!(hyper.sparsity_coeff));
    hyperparams.insert("epochs".into(), serde_json::json!(hyper.epochs));
    hyperparams.insert("learning_rate".into(), serde_json::json!(hyper.learning_rate));
    hyperparams.insert("batch_size".into(), serde_json::json!(hyper.batch_size));
    hyperparams.insert("seed".into(), serde_json::json!(hyper.seed));
    hyperparams.insert("latent".into(), serde_json::json!(latent));

    Ok(Decomposition {
        method: Method::Sae,
        roi: meta.roi,
        fingerprint: format!(
            "sae-x{}-l{}-s{}",
            hyper_label(hyper.expansion_factor),
            hyper_label(hyper.sparsity_coeff),
            hyper.seed
        ),
        components: dec.t().to_owned(),
        hyperparams,
        provenance: meta.provenance,
        normalization: meta.normalization,
        aux: MethodAux::Sae {
            enc_measured_w: w_m,
            enc_measured_b: super::array1_to_vec(b_m),
            enc_predicted_w: w_p,
            enc_predicted_b: b_p.map(super::array1_to_vec),
            dec_bias: super::array1_to_vec(dec_b.value),
            loss_curve,
        },
        convergence: Convergence {
            converged: true,
            iterations: t,
            note: None,
        },
    })
}

/// Gradients for one batch half: accumulates decoder grads, applies encoder
/// grads for that half's own encoder.
#[allow(clippy::too_many_arguments)]
fn backprop_half(
    x_half: &Matrix,
    z_half: &Matrix,
    e_half: &Matrix,
    dec_w: &Array2<f64>,
    scale_r: f64,
    sparse_g: f64,
    lr_t: f64,
    d_dec: &mut Matrix,
    d_dec_b: &mut Array1<f64>,
    enc_w: &mut AdamVar2,
    enc_b: &mut AdamVar1,
) {
    let dxhat = e_half.mapv(|e| e * scale_r);
    *d_dec += &dxhat.t().dot(z_half);
    *d_dec_b += &dxhat.sum_axis(Axis(0));
    let mut dz = dxhat.dot(dec_w);
    Zip::from(&mut dz).and(z_half).for_each(|g, &z| {
        if z > 0.0 {
            *g += sparse_g;
        } else {
            *g = 0.0;
        }
    });
    let d_w = dz.t().dot(x_half);
    let d_b = dz.sum_axis(Axis(0));
    enc_w.step(&d_w, lr_t);
    enc_b.step(&d_b, lr_t);
}

fn forward_loss(
    x: &Matrix,
    enc_w: &Array2<f64>,
    enc_b: &Array1<f64>,
    dec_w: &Array2<f64>,
    dec_b: &Array1<f64>,
    lambda: f64,
) -> f64 {
    let z = encode(x, enc_w, enc_b);
    let mut xhat = z.dot(&dec_w.t());
    for mut row in xhat.rows_mut() {
        Zip::from(&mut row).and(dec_b).for_each(|r, &c| *r += c);
    }
    let n = (x.nrows() * x.ncols()) as f64;
    let l = (x.nrows() * z.ncols()) as f64;
    let sq: f64 = Zip::from(&xhat)
        .and(x)
        .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b));
    sq / n + lambda * z.iter().sum::<f64>() / l
}

fn split_holdout(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let hold = if n >= 4 {
        ((fraction * n as f64).floor() as usize).clamp(1, n / 2)
    } else {
        0
    };
    let train = idx[hold..].to_vec();
    let holdout = idx[..hold].to_vec();
    (train, holdout)
}
