use ndarray::{linalg::general_mat_mul, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::params_struct;

/// `y = x·W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

params_struct!(Linear { weight, bias });

impl Linear {
    /// Uniform init with bound `gain / sqrt(in)`.
    pub fn new<R: Rng>(input: usize, output: usize, gain: f32, rng: &mut R) -> Self {
        let bound = gain / (input as f32).sqrt();
        let u = Uniform::new_inclusive(-bound, bound);
        Self {
            weight: Array2::from_shape_fn((input, output), |_| u.sample(rng)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f32>) -> Array2<f32> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates into `g` and returns `∂L/∂x`.
    pub fn backward(&self, x: ArrayView2<f32>, dy: ArrayView2<f32>, g: &mut Linear) -> Array2<f32> {
        general_mat_mul(1.0, &x.t(), &dy, 1.0, &mut g.weight);
        g.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }
}

/// Layer normalization over the last axis with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
}

params_struct!(LayerNorm { gamma, beta });

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f32>,
    inv_std: Array1<f32>,
}

const LN_EPS: f32 = 1e-5;

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self { gamma: Array1::ones(dim), beta: Array1::zeros(dim) }
    }

    pub fn forward(&self, x: ArrayView2<f32>) -> (Array2<f32>, LayerNormCache) {
        let (xhat, inv_std) = standardize(x);
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: ArrayView2<f32>, g: &mut LayerNorm) -> Array2<f32> {
        g.gamma += &(&dy * &cache.xhat).sum_axis(Axis(0));
        g.beta += &dy.sum_axis(Axis(0));
        let dxhat = &dy * &self.gamma;
        standardize_backward(&cache.xhat, &cache.inv_std, dxhat.view())
    }
}

/// Rescales each row to zero mean and unit variance; also returns the
/// per-row inverse standard deviations for [`standardize_backward`].
pub fn standardize(x: ArrayView2<f32>) -> (Array2<f32>, Array1<f32>) {
    let n = x.ncols() as f32;
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f32>() / n;
        *s = 1.0 / (var + LN_EPS).sqrt();
        row *= *s;
    }
    (xhat, inv_std)
}

/// Input gradient of [`standardize`] given its output `xhat`.
pub fn standardize_backward(xhat: &Array2<f32>, inv_std: &Array1<f32>, dy: ArrayView2<f32>) -> Array2<f32> {
    let n = dy.ncols() as f32;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (i, mut out) in dx.rows_mut().into_iter().enumerate() {
        let dh = dy.row(i);
        let xh = xhat.row(i);
        let sum = dh.sum();
        let dot = dh.dot(&xh);
        let s = inv_std[i] / n;
        for j in 0..out.len() {
            out[j] = s * (n * dh[j] - sum - xh[j] * dot);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{gradcheck::check_params, zeros_like};

    fn weighted_sum(y: &Array2<f32>) -> f64 {
        y.iter().enumerate().map(|(i, v)| *v as f64 * ((i % 7) as f64 - 3.0) * 0.1).sum()
    }

    fn probe_grad(y: &Array2<f32>) -> Array2<f32> {
        let mut g = Array2::zeros(y.raw_dim());
        for (i, v) in g.iter_mut().enumerate() {
            *v = ((i % 7) as f32 - 3.0) * 0.1;
        }
        g
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::new(5, 3, 1.0, &mut rng);
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i as f32 - j as f32) * 0.3);
        let y = lin.forward(x.view());
        let mut g = zeros_like(&lin);
        let dx = lin.backward(x.view(), probe_grad(&y).view(), &mut g);
        check_params(&lin, &g, |m| weighted_sum(&m.forward(x.view())), 1e-2, 1e-2);
        let h = 1e-2;
        let mut xp = x.clone();
        xp[[1, 2]] += h;
        let mut xm = x.clone();
        xm[[1, 2]] -= h;
        let num = (weighted_sum(&lin.forward(xp.view())) - weighted_sum(&lin.forward(xm.view()))) / (2.0 * h as f64);
        assert!((num - dx[[1, 2]] as f64).abs() < 1e-3);
    }

    #[test]
    fn layernorm_normalizes_and_backprops() {
        let ln = LayerNorm::new(6);
        let x = Array2::from_shape_fn((3, 6), |(i, j)| ((i * 6 + j) as f32).sin() * 2.0 + i as f32);
        let (y, cache) = ln.forward(x.view());
        for row in y.rows() {
            assert!(row.mean().unwrap().abs() < 1e-5);
        }
        let mut g = zeros_like(&ln);
        let dx = ln.backward(&cache, probe_grad(&y).view(), &mut g);
        check_params(&ln, &g, |m| weighted_sum(&m.forward(x.view()).0), 1e-2, 1e-2);
        let h = 1e-2;
        for (i, j) in [(0, 0), (2, 3)] {
            let mut xp = x.clone();
            xp[[i, j]] += h;
            let mut xm = x.clone();
            xm[[i, j]] -= h;
            let num = (weighted_sum(&ln.forward(xp.view()).0) - weighted_sum(&ln.forward(xm.view()).0)) / (2.0 * h as f64);
            assert!((num - dx[[i, j]] as f64).abs() < 5e-3, "{num} vs {}", dx[[i, j]]);
        }
    }
}
