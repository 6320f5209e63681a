//! Loss terms. Every function works on any float dtype so the same code is
//! used for f32 training and f64 gradient checks. Batch terms are means over
//! the batch of per-record sums.

use candle_core::{Tensor, D};

use crate::error::{NnError, Result};
use crate::params::logsumexp;

/// Bernoulli negative log-likelihood with logits `l` against targets `t` in
/// [0, 1]: `Σ softplus(l) − t·l`, scaled by `scale` (pixels per pooled cell).
pub fn bernoulli_recon(logits: &Tensor, target: &Tensor, scale: f64) -> Result<Tensor> {
    check_same(logits, target)?;
    let softplus = (logits.relu()? + logits.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?)?;
    let per = (softplus - (logits * target)?)?;
    Ok((per.flatten_from(1)?.sum(1)?.mean(0)? * scale)?)
}

/// Mean over the batch of `KL(N(μ, e^{lv}) ‖ N(0, I))`.
pub fn kl_normal(mu: &Tensor, logvar: &Tensor) -> Result<Tensor> {
    let per = ((mu.sqr()? + logvar.exp()?)? - logvar)?.affine(0.5, -0.5)?;
    Ok(per.sum(1)?.mean(0)?)
}

/// Closed-form KL for one diagonal Gaussian, on the host.
pub fn kl_normal_host(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum()
}

/// `log N(z; μ, e^{lv})` elementwise; shapes must broadcast.
pub fn gaussian_log_density(z: &Tensor, mu: &Tensor, logvar: &Tensor) -> Result<Tensor> {
    let c = (2.0 * std::f64::consts::PI).ln();
    let diff = z.broadcast_sub(mu)?;
    let inv = logvar.neg()?.exp()?;
    let quad = diff.sqr()?.broadcast_mul(&inv)?;
    Ok(quad.broadcast_add(logvar)?.affine(-0.5, -0.5 * c)?)
}

/// Total correlation of q(z) by minibatch-weighted sampling.
///
/// `log q(z) ≈ logsumexp_j log q(z|x_j) − log(N·B)` and likewise per
/// dimension, so the estimate includes the `(m − 1)·log(N·B)` constant.
pub fn total_correlation(z: &Tensor, mu: &Tensor, logvar: &Tensor, dataset_size: usize) -> Result<Tensor> {
    let (b, m) = z.dims2()?;
    // [B, B, m]: sample i evaluated under posterior j.
    let lq = gaussian_log_density(&z.unsqueeze(1)?, &mu.unsqueeze(0)?, &logvar.unsqueeze(0)?)?;
    let log_qz = logsumexp(&lq.sum(2)?, 1)?;
    let log_prod = logsumexp(&lq, 1)?.sum(1)?;
    let constant = (m as f64 - 1.0) * ((dataset_size * b) as f64).ln();
    Ok(((log_qz - log_prod)?.mean(0)? + constant)?)
}

/// DIP-VAE-I moment penalty on the covariance of the posterior means.
pub fn dip_i_penalty(mu: &Tensor, lambda_od: f64, lambda_d: f64) -> Result<Tensor> {
    let (b, m) = mu.dims2()?;
    let mean = mu.mean_keepdim(0)?;
    let centered = mu.broadcast_sub(&mean)?;
    let cov = (centered.t()?.matmul(&centered)? / b as f64)?;
    let eye = Tensor::eye(m, mu.dtype(), mu.device())?;
    let diag = (&cov * &eye)?;
    let off = (&cov - &diag)?;
    let diag_dev = (diag - &eye)?;
    Ok(((off.sqr()?.sum_all()? * lambda_od)? + (diag_dev.sqr()?.sum_all()? * lambda_d)?)?)
}

/// Host version of the DIP-VAE-I penalty for a given covariance matrix.
pub fn dip_i_penalty_from_cov(cov: &[Vec<f64>], lambda_od: f64, lambda_d: f64) -> f64 {
    let mut p = 0.0;
    for (i, row) in cov.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            p += if i == j { lambda_d * (c - 1.0).powi(2) } else { lambda_od * c * c };
        }
    }
    p
}

/// `‖x⊙w − x̂⊙w‖²` summed over every element.
pub fn bb_reconstruction_penalty(x: &Tensor, x_hat: &Tensor, w: &Tensor) -> Result<Tensor> {
    check_same(x, x_hat)?;
    check_same(x, w)?;
    Ok(((x * w)? - (x_hat * w)?)?.sqr()?.sum_all()?)
}

/// The same penalty for a prediction `y` that is constant on k×k blocks,
/// evaluated from per-block mask moments: `Σ_b q_b − 2·y_b·s_b + c_b·y_b²`.
/// Returns the batch mean of per-record sums.
pub fn bb_penalty_pooled(y: &Tensor, count: &Tensor, sum: &Tensor, sum_sq: &Tensor) -> Result<Tensor> {
    check_same(y, count)?;
    check_same(y, sum)?;
    check_same(y, sum_sq)?;
    let per = ((sum_sq - (y * sum)?.affine(2.0, 0.0)?)? + (y.sqr()? * count)?)?;
    Ok(per.flatten_from(1)?.sum(1)?.mean(0)?)
}

/// Mean cross-entropy of `logits` (B × K) against class indices.
pub fn cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let lp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let picked = lp.gather(&targets.unsqueeze(1)?, 1)?.squeeze(1)?;
    Ok(picked.mean(0)?.neg()?)
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(cdbench_core::Error::ShapeMismatch {
            expected: format!("{:?}", a.dims()),
            got: format!("{:?}", b.dims()),
        }
        .into());
    }
    Ok(())
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    t.to_dtype(candle_core::DType::F64)?
        .to_scalar::<f64>()
        .map_err(NnError::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn t(v: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_slice(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn kl_is_zero_at_prior() {
        let z = Tensor::zeros((3, 4), DType::F64, &Device::Cpu).unwrap();
        assert_eq!(scalar(&kl_normal(&z, &z).unwrap()).unwrap(), 0.0);
        assert_eq!(kl_normal_host(&[0.0; 4], &[0.0; 4]), 0.0);
    }

    #[test]
    fn bernoulli_matches_direct_formula() {
        let l = [0.3, -2.0, 5.0, 0.0];
        let x = [0.2, 1.0, 0.0, 0.5];
        let got = scalar(&bernoulli_recon(&t(&l, &[1, 4]), &t(&x, &[1, 4]), 1.0).unwrap()).unwrap();
        let want: f64 = l
            .iter()
            .zip(&x)
            .map(|(&l, &x)| {
                let p = 1.0 / (1.0 + (-l as f64).exp());
                -(x * p.ln() + (1.0 - x) * (1.0 - p).ln())
            })
            .sum();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn bb_examples() {
        let x = t(&[0.0; 12], &[3, 2, 2]);
        let xh = t(&[1.0; 12], &[3, 2, 2]);
        let zero = t(&[0.0; 12], &[3, 2, 2]);
        assert_eq!(scalar(&bb_reconstruction_penalty(&x, &x, &xh).unwrap()).unwrap(), 0.0);
        assert_eq!(scalar(&bb_reconstruction_penalty(&x, &xh, &zero).unwrap()).unwrap(), 0.0);
        // k = 2 in-box pixels on all three channels
        let mut w = vec![0.0; 12];
        for c in 0..3 {
            w[c * 4] = 1.0;
            w[c * 4 + 3] = 1.0;
        }
        let got = scalar(&bb_reconstruction_penalty(&x, &xh, &t(&w, &[3, 2, 2])).unwrap()).unwrap();
        assert_eq!(got, 6.0);
        assert!(bb_reconstruction_penalty(&x, &t(&[0.0; 4], &[1, 2, 2]), &zero).is_err());
    }

    #[test]
    fn pooled_bb_matches_full_resolution() {
        // one channel, 4×4 native, pooled 2×2 by k = 2
        let x: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 / 4.0).collect();
        let w: Vec<f64> = (0..16).map(|i| if (i / 4) >= 1 && (i % 4) <= 2 { 1.0 } else { 0.0 }).collect();
        let y = [0.1, 0.6, 0.9, 0.3];
        let mut up = vec![0.0; 16];
        let (mut c, mut s, mut q) = (vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]);
        for r in 0..4 {
            for col in 0..4 {
                let b = (r / 2) * 2 + col / 2;
                up[r * 4 + col] = y[b];
                let (wv, xv) = (w[r * 4 + col], x[r * 4 + col]);
                c[b] += wv;
                s[b] += wv * xv;
                q[b] += wv * xv * xv;
            }
        }
        let full = scalar(&bb_reconstruction_penalty(&t(&x, &[16]), &t(&up, &[16]), &t(&w, &[16])).unwrap()).unwrap();
        let shape = [1, 4];
        let pooled = scalar(
            &bb_penalty_pooled(&t(&y, &shape), &t(&c, &shape), &t(&s, &shape), &t(&q, &shape)).unwrap(),
        )
        .unwrap();
        assert!((full - pooled).abs() < 1e-12, "{full} vs {pooled}");
    }

    #[test]
    fn dip_penalty_zero_at_identity() {
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(dip_i_penalty_from_cov(&eye, 10.0, 100.0), 0.0);
        // ±1 on each axis: covariance diag(1/2, 1/2)
        let mu = t(&[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0], &[4, 2]);
        let p = scalar(&dip_i_penalty(&mu, 10.0, 100.0).unwrap()).unwrap();
        assert!((p - 50.0).abs() < 1e-12, "{p}");
        let mu = t(&[2f64.sqrt(), 0.0, -(2f64.sqrt()), 0.0, 0.0, 2f64.sqrt(), 0.0, -(2f64.sqrt())], &[4, 2]);
        let p = scalar(&dip_i_penalty(&mu, 10.0, 100.0).unwrap()).unwrap();
        assert!(p.abs() < 1e-24, "{p}");
    }

    #[test]
    fn tc_is_finite() {
        let z = t(&[0.1, 0.2, -0.3, 0.4, 0.5, -0.6], &[3, 2]);
        let lv = t(&[0.0; 6], &[3, 2]);
        let tc = scalar(&total_correlation(&z, &z, &lv, 100).unwrap()).unwrap();
        assert!(tc.is_finite());
    }
}
