//! Scalar functions and the dense affine map shared by every network part.

use alloc::vec;
use alloc::vec::Vec;

use crate::rng::{Rng, StreamRng};

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// `y += s * x`
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Numerically stable `log(sum(exp(x)))`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ln(x.iter().map(|v| exp(v - m)).sum::<f64>())
}

/// In-place softmax.
pub fn softmax(x: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in x.iter_mut() {
        *v = exp(*v - m);
        s += *v;
    }
    for v in x.iter_mut() {
        *v /= s;
    }
}

/// Dense affine map `y = W x + b`, weight stored row-major `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Linear {
    pub fn zeros(n_in: usize, n_out: usize, bias: bool) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: bias.then(|| vec![0.0; n_out]),
        }
    }

    /// Uniform init with variance `gain^2 / n_in`; bias starts at zero.
    pub fn uniform(n_in: usize, n_out: usize, bias: bool, gain: f64, rng: &mut StreamRng) -> Self {
        let a = gain * sqrt(3.0 / n_in as f64);
        let weight = (0..n_in * n_out).map(|_| rng.gen_range(-a..a)).collect();
        Self {
            n_in,
            n_out,
            weight,
            bias: bias.then(|| vec![0.0; n_out]),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut l = Self::zeros(n, n, false);
        for i in 0..n {
            l.weight[i * n + i] = 1.0;
        }
        l
    }

    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        debug_assert_eq!(y.len(), self.n_out);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.n_in..(o + 1) * self.n_in];
            *yo = dot(row, x) + self.bias.as_ref().map_or(0.0, |b| b[o]);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_out];
        self.forward_into(x, &mut y);
        y
    }

    /// `x = W^T dy`.
    pub fn transpose_apply(&self, dy: &[f64], dx: &mut [f64]) {
        debug_assert_eq!(dx.len(), self.n_in);
        for (o, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                axpy(g, &self.weight[o * self.n_in..(o + 1) * self.n_in], dx);
            }
        }
    }

    /// Accumulate parameter gradients into `grad` and, if requested, add the
    /// input gradient into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear, dx: Option<&mut [f64]>) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            axpy(g, x, &mut grad.weight[o * self.n_in..(o + 1) * self.n_in]);
            if let Some(b) = grad.bias.as_mut() {
                b[o] += g;
            }
        }
        if let Some(dx) = dx {
            self.transpose_apply(dy, dx);
        }
    }
}
