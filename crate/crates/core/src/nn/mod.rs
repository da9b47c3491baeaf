//! Small neural-network engine with analytic gradients: multilayer
//! perceptrons, a Transformer-XL style actor over an unordered set of
//! responders, and the Adam optimizer. Parameters of every network live in a
//! single flat vector so optimizers, target-network updates and checkpoints
//! treat all networks alike.

mod adam;
mod checkpoint;
mod mlp;
mod tensor;
mod trxl;

pub use adam::{clip_grad_norm, Adam};
pub use checkpoint::Checkpoint;
pub use mlp::{Activation, Mlp, MlpCache};
pub use tensor::Matrix;
pub use trxl::{Trxl, TrxlCache, TrxlConfig};

/// Moves `target` towards `online` by `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut [f64], online: &[f64], tau: f64) {
    assert_eq!(target.len(), online.len(), "parameter shapes differ");
    for (t, o) in target.iter_mut().zip(online) {
        *t = tau * o + (1.0 - tau) * *t;
    }
}

/// Row-wise softmax, numerically stabilized.
pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward pass of [`softmax_rows`] given its output `p`.
pub fn softmax_rows_backward(p: &Matrix, dp: &Matrix) -> Matrix {
    let mut dz = Matrix::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let pr = p.row(r);
        let dr = dp.row(r);
        let dot: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
        let out = dz.row_mut(r);
        for j in 0..pr.len() {
            out[j] = pr[j] * (dr[j] - dot);
        }
    }
    dz
}

/// Xavier-uniform initialized weights.
pub(crate) fn xavier(fan_in: usize, fan_out: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect()
}

#[cfg(test)]
pub(crate) mod gradcheck {
    /// Norm-wise relative error between analytic and numeric gradients.
    pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        diff / (na + nn).max(1e-12)
    }

    /// Central differences of `f` with respect to every entry of `x`.
    pub fn numeric_grad(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        let mut work = x.to_vec();
        (0..x.len())
            .map(|i| {
                work[i] = x[i] + eps;
                let up = f(&work);
                work[i] = x[i] - eps;
                let down = f(&work);
                work[i] = x[i];
                (up - down) / (2.0 * eps)
            })
            .collect()
    }
}
