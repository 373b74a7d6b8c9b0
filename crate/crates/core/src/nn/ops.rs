//! Stateless layer kernels.
//!
//! These are the forward computations used by [`Graph`](super::Graph); they
//! are also usable on their own for inference-only code and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::error::{Error, Result};

/// Layer-norm epsilon used throughout the network.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Probabilities are clamped to at least this before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn elu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of ELU; taken as 1 at the origin.
pub fn elu_derivative(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub fn elu(x: &Tensor) -> Result<Tensor> {
    if !x.is_finite() {
        return Err(Error::NonFinite("elu input".into()));
    }
    Ok(x.map(elu_scalar))
}

/// Softmax of each row of `x` in place. Entries equal to `-inf` receive
/// probability exactly zero; a row needs at least one finite entry.
pub(crate) fn softmax_rows_in_place(x: &mut Tensor) -> Result<()> {
    let cols = x.cols();
    if cols == 0 {
        return Err(Error::InvalidArgument("softmax over an empty axis".into()));
    }
    for r in 0..x.rows() {
        let row = x.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NonFinite("softmax row maximum".into()));
        }
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(())
}

/// Softmax along `axis` (0 or 1 for matrices, 0 for vectors).
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if x.data().iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let ndim = x.shape().len().max(1);
    if axis >= ndim {
        return Err(Error::InvalidArgument(format!(
            "axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    if axis == ndim - 1 {
        let mut out = x.clone();
        softmax_rows_in_place(&mut out)?;
        return Ok(out);
    }
    if ndim != 2 {
        return Err(Error::InvalidArgument(
            "softmax over a leading axis needs a matrix".into(),
        ));
    }
    // axis 0 of a matrix: transpose, normalize rows, transpose back
    let (r, c) = (x.rows(), x.cols());
    let mut t = Tensor::zeros(&[c, r]);
    for i in 0..r {
        for j in 0..c {
            t.data_mut()[j * r + i] = x.data()[i * c + j];
        }
    }
    softmax_rows_in_place(&mut t)?;
    let mut out = Tensor::zeros(&[r, c]);
    for i in 0..r {
        for j in 0..c {
            out.data_mut()[i * c + j] = t.data()[j * r + i];
        }
    }
    Ok(out)
}

/// Per-row normalization statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct NormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_with_cache(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<(Tensor, NormCache)> {
    let d = x.cols();
    if d == 0 {
        return Err(Error::InvalidArgument("layer_norm over zero features".into()));
    }
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("layer_norm eps must be positive".into()));
    }
    if gain.len() != d || bias.len() != d {
        return Err(Error::Shape(format!(
            "layer_norm on width {d} with gain {:?} and bias {:?}",
            gain.shape(),
            bias.shape()
        )));
    }
    let mut normalized = x.clone();
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        let n_row = normalized.row_mut(r);
        let o_row = out.row_mut(r);
        for j in 0..d {
            n_row[j] = (row[j] - mean) * inv;
            o_row[j] = n_row[j] * gain.data()[j] + bias.data()[j];
        }
    }
    Ok((out, NormCache { normalized, inv_std }))
}

/// Normalizes each feature vector (row) to zero mean and unit variance,
/// then applies `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_with_cache(x, gain, bias, eps).map(|(out, _)| out)
}

/// He-normal initialization: samples from `N(0, sqrt(2 / fan_in))`.
pub fn he_init(shape: &[usize], fan_in: usize, seed: u64) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::InvalidArgument("he_init with fan_in = 0".into()));
    }
    normal_init(shape, (2.0 / fan_in as f64).sqrt(), seed)
}

pub fn normal_init(shape: &[usize], std_dev: f64, seed: u64) -> Result<Tensor> {
    let normal = Normal::new(0.0, std_dev).map_err(|e| Error::InvalidArgument(format!("normal({std_dev}): {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Inverted-dropout multipliers: 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub(crate) fn dropout_mask(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout. Identity when `training` is false or `rate` is 0.
pub fn dropout(x: &Tensor, rate: f64, training: bool, seed: u64) -> Result<Tensor> {
    check_dropout_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = dropout_mask(x.len(), rate, &mut rng);
    let mut out = x.clone();
    for (v, m) in out.data_mut().iter_mut().zip(mask) {
        *v *= m;
    }
    Ok(out)
}

/// Fully connected layer: `x · w + b`, with `b` broadcast over rows.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = x.matmul(w)?;
    add_row_bias(&mut out, b)?;
    Ok(out)
}

pub(crate) fn add_row_bias(x: &mut Tensor, b: &Tensor) -> Result<()> {
    let m = x.cols();
    if b.len() != m {
        return Err(Error::Shape(format!("bias {:?} for width {m}", b.shape())));
    }
    for r in 0..x.rows() {
        for (o, &bv) in x.row_mut(r).iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    Ok(())
}

/// Negative log-likelihood of `label` under `probs`.
pub fn cross_entropy(probs: &Tensor, label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} for {} classes",
            probs.len()
        )));
    }
    Ok(-probs.data()[label].max(PROB_FLOOR).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn elu_examples() {
        let out = elu(&Tensor::vector(vec![0.0, 1.0, -1.0])).unwrap();
        assert_eq!(out.data()[0], 0.0);
        assert_eq!(out.data()[1], 1.0);
        assert!(close(out.data()[2], (-1.0f64).exp() - 1.0, 1e-15));
        assert!(close(out.data()[2], -0.63212, 1e-5));
        assert_eq!(elu_derivative(0.0), 1.0);
    }

    #[test]
    fn elu_rejects_non_finite() {
        assert!(elu(&Tensor::vector(vec![f64::NAN])).is_err());
        assert!(elu(&Tensor::vector(vec![f64::INFINITY])).is_err());
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&Tensor::vector(vec![0.0; 3]), 0).unwrap();
        for &p in u.data() {
            assert!(close(p, 1.0 / 3.0, 1e-15));
        }
        let s = softmax(&Tensor::vector(vec![1000.0, 0.0]), 0).unwrap();
        assert!(close(s.data()[0], 1.0, 1e-12));
        assert!(close(s.data()[1], 0.0, 1e-12));
        let l = softmax(&Tensor::vector(vec![1f64.ln(), 2f64.ln(), 3f64.ln()]), 0).unwrap();
        for (p, e) in l.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!(close(*p, e, 1e-15));
        }
    }

    #[test]
    fn softmax_along_columns() {
        let x = Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let s = softmax(&x, 0).unwrap();
        for &p in s.data() {
            assert!(close(p, 0.5, 1e-15));
        }
    }

    #[test]
    fn softmax_empty_axis_errors() {
        assert!(softmax(&Tensor::new(vec![2, 0], vec![]).unwrap(), 1).is_err());
        assert!(softmax(&Tensor::vector(vec![1.0]), 3).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let ones = |d| Tensor::filled(&[d], 1.0);
        let zeros = |d| Tensor::zeros(&[d]);
        let c = layer_norm(&Tensor::vector(vec![5.0; 3]), &ones(3), &zeros(3), LAYER_NORM_EPS).unwrap();
        assert_eq!(c.data(), &[0.0, 0.0, 0.0]);

        let n = layer_norm(&Tensor::vector(vec![1.0, -1.0]), &ones(2), &zeros(2), LAYER_NORM_EPS).unwrap();
        assert!(close(n.data()[0], 1.0, 1e-5) && close(n.data()[1], -1.0, 1e-5));

        let a = layer_norm(
            &Tensor::vector(vec![0.0, 2.0]),
            &Tensor::filled(&[2], 2.0),
            &Tensor::filled(&[2], 1.0),
            LAYER_NORM_EPS,
        )
        .unwrap();
        assert!(close(a.data()[0], -1.0, 1e-4) && close(a.data()[1], 3.0, 1e-4));
    }

    #[test]
    fn he_init_variance_and_determinism() {
        for (fan_in, target) in [(2usize, 1.0f64), (8, 0.25)] {
            let t = he_init(&[100_000], fan_in, 17).unwrap();
            let n = t.len() as f64;
            let mean = t.sum() / n;
            let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!((var / target - 1.0).abs() < 0.05, "fan_in {fan_in}: var {var}");
        }
        assert_eq!(he_init(&[4, 4], 4, 3).unwrap(), he_init(&[4, 4], 4, 3).unwrap());
        assert!(he_init(&[2], 0, 1).is_err());
    }

    #[test]
    fn dropout_examples() {
        let x = Tensor::vector(vec![1.5, -2.0, 3.0]);
        assert_eq!(dropout(&x, 0.0, true, 1).unwrap(), x);
        assert_eq!(dropout(&x, 0.25, false, 1).unwrap(), x);
        assert!(dropout(&x, 1.0, true, 1).is_err());

        let big = Tensor::filled(&[1_000_000], 1.0);
        let d = dropout(&big, 0.25, true, 99).unwrap();
        let mean = d.sum() / d.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn dense_examples() {
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = dense(&Tensor::vector(vec![1.0, 0.0]), &eye, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0]);

        let w = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        let out = dense(&Tensor::vector(vec![1.0, 2.0]), &w, &Tensor::vector(vec![3.0])).unwrap();
        assert_eq!(out.data(), &[6.0]);

        assert!(dense(&Tensor::vector(vec![1.0, 2.0, 3.0]), &w, &Tensor::vector(vec![0.0])).is_err());
    }

    #[test]
    fn dense_matches_naive_triple_loop() {
        let x = normal_init(&[3, 4], 1.0, 5).unwrap();
        let w = normal_init(&[4, 5], 1.0, 6).unwrap();
        let b = normal_init(&[5], 1.0, 7).unwrap();
        let got = dense(&x, &w, &b).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut acc = b.data()[j];
                for p in 0..4 {
                    acc += x.data()[i * 4 + p] * w.data()[p * 5 + j];
                }
                assert!(close(got.data()[i * 5 + j], acc, 1e-12));
            }
        }
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&Tensor::vector(vec![1.0, 0.0, 0.0]), 0).unwrap(), 0.0);
        let u = Tensor::vector(vec![1.0 / 3.0; 3]);
        for label in 0..3 {
            assert!(close(cross_entropy(&u, label).unwrap(), 3f64.ln(), 1e-12));
        }
        let p = Tensor::vector(vec![0.5, 0.25, 0.25]);
        assert!(close(cross_entropy(&p, 1).unwrap(), 4f64.ln(), 1e-12));
        assert!(close(4f64.ln(), 1.38629, 1e-5));
        assert!(cross_entropy(&p, 3).is_err());
        assert!(cross_entropy(&Tensor::vector(vec![0.0, 1.0, 0.0]), 0)
            .unwrap()
            .is_finite());
    }
}
