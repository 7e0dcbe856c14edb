//! Uniform access to named parameter tensors.
//!
//! Every trainable part of the model implements [`Params`]; gradients are
//! stored in a value of the same type so that optimizers and checkpoints can
//! walk parameters and gradients in lockstep.

use alloc::string::String;
use alloc::vec::Vec;

use crate::math::Linear;

pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub trait Params: Clone {
    fn tensors(&self) -> Vec<TensorRef<'_>>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Plain SGD update `p -= lr * g`.
    fn sgd_step(&mut self, grads: &Self, lr: f64) {
        let gs = grads.tensors();
        for (p, g) in self.tensors_mut().into_iter().zip(gs) {
            for (pi, gi) in p.iter_mut().zip(g.data) {
                *pi -= lr * gi;
            }
        }
    }

    fn add_assign(&mut self, other: &Self) {
        let os = other.tensors();
        for (p, o) in self.tensors_mut().into_iter().zip(os) {
            for (pi, oi) in p.iter_mut().zip(o.data) {
                *pi += oi;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for p in self.tensors_mut() {
            for v in p.iter_mut() {
                *v *= s;
            }
        }
    }

    fn bitwise_eq(&self, other: &Self) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| {
                x.shape == y.shape
                    && x.data.len() == y.data.len()
                    && x.data.iter().zip(y.data).all(|(u, v)| u.to_bits() == v.to_bits())
            })
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Push the tensors of a [`Linear`] under `prefix`.
pub(crate) fn push_linear<'a>(out: &mut Vec<TensorRef<'a>>, prefix: &str, l: &'a Linear) {
    out.push(TensorRef {
        name: alloc::format!("{prefix}.weight"),
        shape: alloc::vec![l.n_out, l.n_in],
        data: &l.weight,
    });
    if let Some(b) = &l.bias {
        out.push(TensorRef {
            name: alloc::format!("{prefix}.bias"),
            shape: alloc::vec![l.n_out],
            data: b,
        });
    }
}

pub(crate) fn push_linear_mut<'a>(out: &mut Vec<&'a mut [f64]>, l: &'a mut Linear) {
    out.push(&mut l.weight);
    if let Some(b) = l.bias.as_mut() {
        out.push(b);
    }
}
