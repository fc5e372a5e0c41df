use ndarray::{Array1, Array2, Array5, ArrayView2, Axis};

use super::{params_struct, standardize, standardize_backward};

/// Group normalization of `[B, C, T, H, W]` activations: each sample's
/// channels are split into groups normalized over `(C/G, T, H, W)`, then
/// scaled and shifted per channel. Statistics never cross samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
    pub groups: usize,
}

params_struct!(GroupNorm { gamma, beta });

#[derive(Debug, Clone)]
pub struct GroupNormCache {
    xhat: Array5<f32>,
    /// `[B, G]`
    inv_std: Array2<f32>,
}

const GN_EPS: f32 = 1e-5;

impl GroupNorm {
    /// Uses the largest group count up to 4 that divides `channels`.
    pub fn new(channels: usize) -> Self {
        let groups = (1..=4.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1);
        Self { gamma: Array1::ones(channels), beta: Array1::zeros(channels), groups }
    }

    /// Elements per group.
    fn group_len(&self, x: &Array5<f32>) -> usize {
        let (_, c, t, h, w) = x.dim();
        c / self.groups * t * h * w
    }

    pub fn forward(&self, x: &Array5<f32>) -> (Array5<f32>, GroupNormCache) {
        let b = x.dim().0;
        let n = self.group_len(x);
        let mut xhat = x.as_standard_layout().into_owned();
        let mut inv_std = Array2::zeros((b, self.groups));
        for bi in 0..b {
            let mut sample = xhat.index_axis_mut(Axis(0), bi);
            let flat = sample.as_slice_mut().expect("standard layout");
            for g in 0..self.groups {
                let chunk = &mut flat[g * n..(g + 1) * n];
                let mean = chunk.iter().sum::<f32>() / n as f32;
                let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n as f32;
                let s = 1.0 / (var + GN_EPS).sqrt();
                chunk.iter_mut().for_each(|v| *v = (*v - mean) * s);
                inv_std[[bi, g]] = s;
            }
        }
        let mut y = xhat.clone();
        for (c, mut plane) in y.axis_iter_mut(Axis(1)).enumerate() {
            plane.mapv_inplace(|v| v * self.gamma[c] + self.beta[c]);
        }
        (y, GroupNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &GroupNormCache, dy: &Array5<f32>, g: &mut GroupNorm) -> Array5<f32> {
        let b = dy.dim().0;
        let n = self.group_len(dy);
        let dy = dy.as_standard_layout();
        let mut dxhat = dy.to_owned();
        for (c, mut plane) in dxhat.axis_iter_mut(Axis(1)).enumerate() {
            let gy = dy.index_axis(Axis(1), c);
            let xh = cache.xhat.index_axis(Axis(1), c);
            g.gamma[c] += (&gy * &xh).sum();
            g.beta[c] += gy.sum();
            plane *= self.gamma[c];
        }
        for bi in 0..b {
            let xh_s = cache.xhat.index_axis(Axis(0), bi);
            let xh = xh_s.as_slice().expect("standard layout");
            let mut sample = dxhat.index_axis_mut(Axis(0), bi);
            let d = sample.as_slice_mut().expect("standard layout");
            for gi in 0..self.groups {
                let r = gi * n..(gi + 1) * n;
                let sum: f32 = d[r.clone()].iter().sum();
                let dot: f32 = d[r.clone()].iter().zip(&xh[r.clone()]).map(|(a, b)| a * b).sum();
                let s = cache.inv_std[[bi, gi]] / n as f32;
                for (dv, xv) in d[r.clone()].iter_mut().zip(&xh[r]) {
                    *dv = s * (n as f32 * *dv - sum - xv * dot);
                }
            }
        }
        dxhat
    }
}

/// Per-feature standardization of `[B, D]` rows: batch statistics while
/// training, running estimates at inference. Because each feature is
/// whitened across the batch, a metric loss cannot drive every sample to
/// the same point. The running estimates are buffers, not weights; the
/// optimizer leaves tensors named `running_*` alone.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNorm {
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
}

params_struct!(FeatureNorm { running_mean, running_var });

#[derive(Debug, Clone)]
pub struct FeatureNormCache {
    /// `[D, B]`
    xhat_t: Array2<f32>,
    inv_std: Array1<f32>,
    mean: Array1<f32>,
    var: Array1<f32>,
}

impl FeatureNorm {
    pub fn new(dim: usize) -> Self {
        Self { running_mean: Array1::zeros(dim), running_var: Array1::ones(dim) }
    }

    /// Needs at least two rows.
    pub fn forward_train(&self, x: ArrayView2<f32>) -> (Array2<f32>, FeatureNormCache) {
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let var = x.var_axis(Axis(0), 0.0);
        let (xhat_t, inv_std) = standardize(x.t());
        let y = xhat_t.t().to_owned();
        (y, FeatureNormCache { xhat_t, inv_std, mean, var })
    }

    pub fn forward_eval(&self, x: ArrayView2<f32>) -> Array2<f32> {
        let scale = self.running_var.mapv(|v| 1.0 / (v + GN_EPS).sqrt());
        (&x - &self.running_mean) * &scale
    }

    pub fn backward(&self, cache: &FeatureNormCache, dy: ArrayView2<f32>) -> Array2<f32> {
        standardize_backward(&cache.xhat_t, &cache.inv_std, dy.t()).reversed_axes()
    }

    /// Moves the running estimates toward the statistics of a training batch.
    pub fn update(&mut self, cache: &FeatureNormCache, momentum: f32) {
        let b = cache.xhat_t.ncols() as f32;
        let unbiased = &cache.var * (b / (b - 1.0).max(1.0));
        self.running_mean.zip_mut_with(&cache.mean, |r, m| *r += momentum * (m - *r));
        self.running_var.zip_mut_with(&unbiased, |r, v| *r += momentum * (v - *r));
    }
}

/// Tensors that carry statistics rather than trainable weights.
pub fn is_buffer(name: &str) -> bool {
    name.rsplit('.').next().is_some_and(|leaf| leaf.starts_with("running_"))
}
