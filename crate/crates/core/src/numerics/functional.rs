//! Tape-free kernels shared by the autodiff ops and the plain tensor API.

use rand::Rng;
use rayon::prelude::*;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

const PAR_THRESHOLD: usize = 1 << 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `a[m×k] · b[k×n]`.
pub fn gemm_nn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    let row = |(i, out): (usize, &mut [F])| {
        let ai = &a[i * k..(i + 1) * k];
        for (p, &aip) in ai.iter().enumerate() {
            if aip == F::zero() {
                continue;
            }
            let bp = &b[p * n..(p + 1) * n];
            for (o, &bv) in out.iter_mut().zip(bp) {
                *o = *o + aip * bv;
            }
        }
    };
    if n == 0 {
        return c;
    }
    if m * k * n >= PAR_THRESHOLD {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

/// `a[m×k] · b[n×k]ᵀ`.
pub fn gemm_nt<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    let row = |(i, out): (usize, &mut [F])| {
        let ai = &a[i * k..(i + 1) * k];
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(ai, &b[j * k..(j + 1) * k]);
        }
    };
    if n == 0 {
        return c;
    }
    if m * k * n >= PAR_THRESHOLD {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

/// `a[m×k]ᵀ · b[m×n]`, a `k×n` result.
pub fn gemm_tn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); k * n];
    let row = |(p, out): (usize, &mut [F])| {
        for i in 0..m {
            let aip = a[i * k + p];
            if aip == F::zero() {
                continue;
            }
            for (o, &bv) in out.iter_mut().zip(&b[i * n..(i + 1) * n]) {
                *o = *o + aip * bv;
            }
        }
    };
    if n == 0 {
        return c;
    }
    if m * k * n >= PAR_THRESHOLD {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus<F: Scalar>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
#[inline]
pub fn gelu<F: Scalar>(x: F) -> F {
    let half = F::of(0.5);
    let u = F::of(GELU_C) * (x + F::of(GELU_A) * x * x * x);
    half * x * (F::one() + u.tanh())
}

#[inline]
pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let half = F::of(0.5);
    let u = F::of(GELU_C) * (x + F::of(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = F::of(GELU_C) * (F::one() + F::of(3.0 * GELU_A) * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * du
}

/// Per-row layer normalization. Returns `(y, x̂, 1/σ)`.
pub(crate) fn layer_norm_rows<F: Scalar>(
    x: &[F],
    cols: usize,
    gain: &[F],
    bias: &[F],
    eps: F,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let rows = x.len() / cols;
    let mut y = vec![F::zero(); x.len()];
    let mut xhat = vec![F::zero(); x.len()];
    let mut rstd = vec![F::zero(); rows];
    let inv_n = F::one() / F::of(cols as f64);
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let mean = xr.iter().copied().sum::<F>() * inv_n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_n;
        let rs = F::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..cols {
            let h = (xr[c] - mean) * rs;
            xhat[r * cols + c] = h;
            y[r * cols + c] = h * gain[c] + bias[c];
        }
    }
    (y, xhat, rstd)
}

/// Layer normalization over the last dimension with affine `gain`/`bias`.
pub fn layer_norm<F: Scalar>(
    x: &Tensor<F>,
    gain: &Tensor<F>,
    bias: &Tensor<F>,
    eps: F,
) -> Result<Tensor<F>> {
    let d = x.cols();
    if d == 0 {
        return Err(Error::Shape("layer norm over an empty dimension".into()));
    }
    if gain.len() != d || bias.len() != d {
        return Err(Error::Shape(format!(
            "layer norm width {d} but gain/bias have {}/{}",
            gain.len(),
            bias.len()
        )));
    }
    if eps <= F::zero() {
        return Err(Error::Config("layer norm epsilon must be positive".into()));
    }
    let (y, _, _) = layer_norm_rows(x.data(), d, gain.data(), bias.data(), eps);
    Tensor::new(x.shape(), y)
}

/// Inverted-dropout multipliers: `0` with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<F: Scalar>(len: usize, rate: f64, rng: &mut impl Rng) -> Result<Vec<F>> {
    check_rate(rate)?;
    let keep = F::of(1.0 / (1.0 - rate));
    Ok((0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                F::zero()
            } else {
                keep
            }
        })
        .collect())
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")))
    }
}

pub fn dropout<F: Scalar>(
    x: &Tensor<F>,
    rate: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<Tensor<F>> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask::<F>(x.len(), rate, rng)?;
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Tensor::new(x.shape(), data)
}

pub(crate) fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        row.iter_mut().for_each(|v| *v = F::zero());
        return;
    }
    let mut total = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// Row-wise softmax over the last dimension.
pub fn softmax_rows<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let mut out = x.clone();
    let c = out.cols();
    if c > 0 {
        out.data_mut().chunks_mut(c).for_each(softmax_in_place);
    }
    out
}

/// Layout of a batched multi-head self-attention call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
}

/// Scaled dot-product self-attention with key masking.
///
/// `q`, `k`, `v` are `(batch·seq) × width`; head `h` owns columns
/// `h·w/heads .. (h+1)·w/heads`. Keys with `keep == false` get zero weight.
/// Returns the output and the attention weights laid out `[b][h][i][j]`.
pub(crate) fn attention_forward<F: Scalar>(
    q: &[F],
    k: &[F],
    v: &[F],
    width: usize,
    shape: AttentionShape,
    keep: &[bool],
) -> (Vec<F>, Vec<F>) {
    let AttentionShape { batch, seq, heads } = shape;
    let dh = width / heads;
    let scale = F::one() / F::of(dh as f64).sqrt();
    let per_batch: Vec<(Vec<F>, Vec<F>)> = (0..batch)
        .into_par_iter()
        .map(|b| {
            let mut out = vec![F::zero(); seq * width];
            let mut probs = vec![F::zero(); heads * seq * seq];
            let base = b * seq;
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for i in 0..seq {
                    let qi = &q[(base + i) * width..][cols.clone()];
                    let p = &mut probs[(h * seq + i) * seq..(h * seq + i + 1) * seq];
                    for j in 0..seq {
                        p[j] = if keep[base + j] {
                            dot(qi, &k[(base + j) * width..][cols.clone()]) * scale
                        } else {
                            F::neg_infinity()
                        };
                    }
                    softmax_in_place(p);
                    let o = &mut out[i * width..][cols.clone()];
                    for j in 0..seq {
                        let pij = p[j];
                        if pij == F::zero() {
                            continue;
                        }
                        for (ov, &vv) in o.iter_mut().zip(&v[(base + j) * width..][cols.clone()]) {
                            *ov = *ov + pij * vv;
                        }
                    }
                }
            }
            (out, probs)
        })
        .collect();
    let mut out = Vec::with_capacity(batch * seq * width);
    let mut probs = Vec::with_capacity(batch * heads * seq * seq);
    for (o, p) in per_batch {
        out.extend(o);
        probs.extend(p);
    }
    (out, probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn layer_norm_row() {
        let x = Tensor::<f64>::from_rows(&[&[1.0, 2.0, 3.0, 4.0]]).unwrap();
        let y = layer_norm(&x, &Tensor::ones(&[4]), &Tensor::zeros(&[4]), 1e-5).unwrap();
        let mean = y.sum() / 4.0;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-5, "{var}");
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = Tensor::<f32>::from_rows(&[&[5.0, 5.0, 5.0]]).unwrap();
        let y = layer_norm(&x, &Tensor::ones(&[3]), &Tensor::zeros(&[3]), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_rejects_empty_width() {
        let x = Tensor::<f32>::zeros(&[2, 0]);
        assert!(layer_norm(&x, &Tensor::zeros(&[0]), &Tensor::zeros(&[0]), 1e-5).is_err());
    }

    #[test]
    fn dropout_eval_and_zero_rate_are_identity() {
        let mut rng = stream(1, Stream::Data);
        let x = Tensor::<f32>::randn(&[10, 10], 1.0, &mut rng);
        assert_eq!(dropout(&x, 0.5, Mode::Eval, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = stream(2, Stream::Data);
        let x = Tensor::<f32>::ones(&[1_000_000]);
        let y = dropout(&x, 0.3, Mode::Train, &mut rng).unwrap();
        let mean = y.data().iter().map(|&v| v as f64).sum::<f64>() / 1e6;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e6;
        assert!((zeros - 0.3).abs() < 0.005);
    }

    #[test]
    fn gemm_variants_agree() {
        let mut rng = stream(3, Stream::Data);
        let a = Tensor::<f64>::randn(&[3, 4], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[4, 5], 1.0, &mut rng);
        let c = gemm_nn(a.data(), b.data(), 3, 4, 5);
        let mut bt = vec![0.0; 20];
        for i in 0..4 {
            for j in 0..5 {
                bt[j * 4 + i] = b.data()[i * 5 + j];
            }
        }
        let c2 = gemm_nt(a.data(), &bt, 3, 4, 5);
        let mut at = vec![0.0; 12];
        for i in 0..3 {
            for j in 0..4 {
                at[j * 3 + i] = a.data()[i * 4 + j];
            }
        }
        let c3 = gemm_tn(&at, b.data(), 4, 3, 5);
        for ((x, y), z) in c.iter().zip(&c2).zip(&c3) {
            assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(1000.0f32) - 1000.0).abs() < 1e-3);
        assert!(softplus(-1000.0f32) >= 0.0);
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-12);
    }
}
