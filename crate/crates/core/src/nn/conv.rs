use ndarray::{linalg::general_mat_mul, Array1, Array2, Array5, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::params_struct;
use crate::error::{Error, Result};

/// 3D convolution over `[B, C, T, H, W]` computed as one im2col matrix product
/// for the whole batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    /// `[out, in·kt·kh·kw]`
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
    pub in_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

params_struct!(Conv3d { weight, bias });

#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Array2<f32>,
    input_dim: (usize, usize, usize, usize, usize),
    output_spatial: [usize; 3],
}

impl Conv3d {
    /// He-uniform initialization, suited to a following ReLU.
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel.iter().product::<usize>();
        let bound = (6.0 / fan_in as f32).sqrt();
        let u = Uniform::new_inclusive(-bound, bound);
        Self {
            weight: Array2::from_shape_fn((out_channels, fan_in), |_| u.sample(rng)),
            bias: Array1::zeros(out_channels),
            in_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    /// Output `(T, H, W)` for an input of the given spatial extent.
    pub fn output_extent(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.padding[a];
            if padded < self.kernel[a] {
                return Err(Error::Shape(format!(
                    "conv input extent {input:?} too small for kernel {:?}",
                    self.kernel
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    fn im2col(&self, x: &Array5<f32>, out: [usize; 3]) -> Array2<f32> {
        let (b, c, t, h, w) = x.dim();
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.padding;
        let [to, ho, wo] = out;
        let l = to * ho * wo;
        let mut cols = Array2::zeros((c * kt * kh * kw, b * l));
        let xs = x.as_slice().expect("contiguous input");
        let cs = cols.as_slice_mut().expect("contiguous cols");
        let row_len = b * l;
        for bi in 0..b {
            for ci in 0..c {
                let xbase = (bi * c + ci) * t * h * w;
                for a in 0..kt {
                    for p in 0..kh {
                        for q in 0..kw {
                            let row = ((ci * kt + a) * kh + p) * kw + q;
                            let dst = &mut cs[row * row_len + bi * l..row * row_len + (bi + 1) * l];
                            for oz in 0..to {
                                let z = (oz * st + a) as isize - pt as isize;
                                if z < 0 || z >= t as isize {
                                    continue;
                                }
                                for oy in 0..ho {
                                    let y = (oy * sh + p) as isize - ph as isize;
                                    if y < 0 || y >= h as isize {
                                        continue;
                                    }
                                    let src = xbase + (z as usize * h + y as usize) * w;
                                    let o = (oz * ho + oy) * wo;
                                    for ox in 0..wo {
                                        let xx = (ox * sw + q) as isize - pw as isize;
                                        if xx >= 0 && xx < w as isize {
                                            dst[o + ox] = xs[src + xx as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f32>, dim: (usize, usize, usize, usize, usize), out: [usize; 3]) -> Array5<f32> {
        let (b, c, t, h, w) = dim;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.padding;
        let [to, ho, wo] = out;
        let l = to * ho * wo;
        let mut x = Array5::zeros(dim);
        let xs = x.as_slice_mut().expect("contiguous");
        let cs = cols.as_slice().expect("contiguous cols");
        let row_len = b * l;
        for bi in 0..b {
            for ci in 0..c {
                let xbase = (bi * c + ci) * t * h * w;
                for a in 0..kt {
                    for p in 0..kh {
                        for q in 0..kw {
                            let row = ((ci * kt + a) * kh + p) * kw + q;
                            let src = &cs[row * row_len + bi * l..row * row_len + (bi + 1) * l];
                            for oz in 0..to {
                                let z = (oz * st + a) as isize - pt as isize;
                                if z < 0 || z >= t as isize {
                                    continue;
                                }
                                for oy in 0..ho {
                                    let y = (oy * sh + p) as isize - ph as isize;
                                    if y < 0 || y >= h as isize {
                                        continue;
                                    }
                                    let dst = xbase + (z as usize * h + y as usize) * w;
                                    let o = (oz * ho + oy) * wo;
                                    for ox in 0..wo {
                                        let xx = (ox * sw + q) as isize - pw as isize;
                                        if xx >= 0 && xx < w as isize {
                                            xs[dst + xx as usize] += src[o + ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn forward(&self, x: &Array5<f32>) -> Result<(Array5<f32>, ConvCache)> {
        let (b, c, t, h, w) = x.dim();
        if c != self.in_channels {
            return Err(Error::Shape(format!("conv expects {} channels, got {c}", self.in_channels)));
        }
        let x = x.as_standard_layout();
        let out = self.output_extent([t, h, w])?;
        let l = out.iter().product::<usize>();
        let cols = self.im2col(&x.to_owned(), out);
        let cout = self.out_channels();
        let mut y = Array2::zeros((cout, b * l));
        general_mat_mul(1.0, &self.weight, &cols, 0.0, &mut y);
        y += &self.bias.view().insert_axis(Axis(1));
        let y = y
            .into_shape_with_order((cout, b, l))
            .expect("shape")
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b, cout, out[0], out[1], out[2]))
            .expect("shape");
        Ok((y, ConvCache { cols, input_dim: (b, c, t, h, w), output_spatial: out }))
    }

    /// Accumulates parameter gradients; returns `∂L/∂x` when `input_grad` is set.
    pub fn backward(&self, cache: &ConvCache, dy: &Array5<f32>, g: &mut Conv3d, input_grad: bool) -> Option<Array5<f32>> {
        let (b, cout) = (dy.dim().0, dy.dim().1);
        let l = cache.output_spatial.iter().product::<usize>();
        let dy2 = dy
            .view()
            .into_shape_with_order((b, cout, l))
            .expect("shape")
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((cout, b * l))
            .expect("shape");
        general_mat_mul(1.0, &dy2, &cache.cols.t(), 1.0, &mut g.weight);
        g.bias += &dy2.sum_axis(Axis(1));
        if !input_grad {
            return None;
        }
        let dcols = self.weight.t().dot(&dy2);
        Some(self.col2im(&dcols, cache.input_dim, cache.output_spatial))
    }
}

pub fn relu(x: Array5<f32>) -> Array5<f32> {
    x.mapv_into(|v| v.max(0.0))
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(y: &Array5<f32>, dy: &Array5<f32>) -> Array5<f32> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}
