//! A small CPU neural-network toolkit: layers with explicit backward passes,
//! parameter traversal, and an Adam optimizer.
//!
//! Every layer exposes `forward` returning the output plus whatever it needs
//! for the backward pass, and `backward(&self, cache, dy, grads)` which
//! accumulates parameter gradients into `grads` (a zero-filled twin of the
//! layer) and returns the input gradient.

mod attention;
mod conv;
mod linear;
mod norm;
mod optim;

use ndarray::{Array, Dimension};
use sha2::{Digest, Sha256};

pub use attention::{Block, BlockCache, DecoderCache, MhsaCache, MultiHeadAttention, TokenDecoder};
pub use conv::{relu, relu_backward, Conv3d, ConvCache};
pub use linear::{standardize, standardize_backward, LayerNorm, LayerNormCache, Linear};
pub use norm::{is_buffer, FeatureNorm, FeatureNormCache, GroupNorm, GroupNormCache};
pub use optim::{clip_global_norm, global_norm, Adam};

/// Named views of every trainable tensor, in a fixed traversal order.
pub trait Params {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f32])>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f32])>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<D: Dimension> Params for Array<f32, D> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f32])>) {
        out.push((prefix.to_string(), self.as_slice().expect("parameters are contiguous")));
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f32])>) {
        out.push((prefix.to_string(), self.as_slice_mut().expect("parameters are contiguous")));
    }
}

impl<T: Params> Params for Vec<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f32])>) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), out);
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f32])>) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

/// Implements [`Params`] for a struct by visiting the listed fields in order.
macro_rules! params_struct {
    ($t:ty { $($f:ident),* $(,)? }) => {
        impl $crate::nn::Params for $t {
            fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f32])>) {
                #[allow(unused_imports)]
                use $crate::nn::Params as _;
                $( self.$f.visit(&$crate::nn::join(prefix, stringify!($f)), out); )*
            }
            fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f32])>) {
                #[allow(unused_imports)]
                use $crate::nn::Params as _;
                $( self.$f.visit_mut(&$crate::nn::join(prefix, stringify!($f)), out); )*
            }
        }
    };
}
pub(crate) use params_struct;

pub fn collect<T: Params + ?Sized>(m: &T) -> Vec<(String, &[f32])> {
    let mut out = Vec::new();
    m.visit("", &mut out);
    out
}

pub fn collect_mut<T: Params + ?Sized>(m: &mut T) -> Vec<(String, &mut [f32])> {
    let mut out = Vec::new();
    m.visit_mut("", &mut out);
    out
}

pub fn num_params<T: Params + ?Sized>(m: &T) -> usize {
    collect(m).iter().map(|(_, p)| p.len()).sum()
}

/// A copy of `m` with every parameter set to zero; used as a gradient buffer.
pub fn zeros_like<T: Params + Clone>(m: &T) -> T {
    let mut z = m.clone();
    fill(&mut z, 0.0);
    z
}

pub fn fill<T: Params + ?Sized>(m: &mut T, value: f32) {
    for (_, p) in collect_mut(m) {
        p.fill(value);
    }
}

/// SHA-256 over parameter names and little-endian values.
pub fn checksum<T: Params + ?Sized>(m: &T) -> String {
    let mut h = Sha256::new();
    for (name, p) in collect(m) {
        h.update(name.as_bytes());
        for v in p {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Largest absolute elementwise difference between two parameter sets of
/// identical structure; `inf` when the structures differ.
pub fn linf_distance<T: Params + ?Sized>(a: &T, b: &T) -> f32 {
    let (pa, pb) = (collect(a), collect(b));
    if pa.len() != pb.len() {
        return f32::INFINITY;
    }
    let mut worst = 0.0f32;
    for ((na, xa), (nb, xb)) in pa.iter().zip(&pb) {
        if na != nb || xa.len() != xb.len() {
            return f32::INFINITY;
        }
        for (u, v) in xa.iter().zip(xb.iter()) {
            worst = worst.max((u - v).abs());
        }
    }
    worst
}

pub fn all_finite<T: Params + ?Sized>(m: &T) -> bool {
    collect(m).iter().all(|(_, p)| p.iter().all(|v| v.is_finite()))
}

#[cfg(test)]
pub(crate) mod gradcheck {
    use super::*;

    /// Compares accumulated analytic gradients against central differences of
    /// `loss` for a sample of coordinates of every parameter tensor.
    pub fn check_params<T: Params + Clone>(
        model: &T,
        grads: &T,
        loss: impl Fn(&T) -> f64,
        h: f32,
        tol: f64,
    ) {
        let names: Vec<(String, usize)> = collect(model).iter().map(|(n, p)| (n.clone(), p.len())).collect();
        let analytic: Vec<Vec<f32>> = collect(grads).iter().map(|(_, p)| p.to_vec()).collect();
        for (ti, (name, len)) in names.iter().enumerate() {
            let stride = (len / 5).max(1);
            for idx in (0..*len).step_by(stride) {
                let mut plus = model.clone();
                collect_mut(&mut plus)[ti].1[idx] += h;
                let mut minus = model.clone();
                collect_mut(&mut minus)[ti].1[idx] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h as f64);
                let a = analytic[ti][idx] as f64;
                let err = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1e-2));
                assert!(err < tol, "{name}[{idx}]: analytic {a} numeric {numeric}");
            }
        }
    }
}
