use ndarray::{Array2, Array5};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{params_struct, relu, relu_backward, Conv3d, ConvCache, GroupNorm, GroupNormCache, Linear};

/// Patchifying stem, strided 3×3×3 stages, each convolution followed by group
/// normalization and ReLU, then horizontal-stripe pooling and a linear
/// projection.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEncoder {
    pub stem: Conv3d,
    pub stages: Vec<Conv3d>,
    /// One per convolution, stem first.
    pub norms: Vec<GroupNorm>,
    pub project: Linear,
}

params_struct!(VideoEncoder { stem, stages, norms, project });

#[derive(Debug, Clone)]
pub struct EncoderCache {
    convs: Vec<ConvCache>,
    norms: Vec<GroupNormCache>,
    acts: Vec<Array5<f32>>,
    pooled: Array2<f32>,
}

/// Averages `[B, C, T, H, W]` over time and width, keeping one value per
/// channel and row: `[B, C·H]`. Rows keep the vertical layout of the body,
/// which a global average would wash out against the background.
fn stripe_pool(x: &Array5<f32>) -> Array2<f32> {
    let (b, c, t, h, w) = x.dim();
    let mut out = Array2::zeros((b, c * h));
    let scale = 1.0 / (t * w) as f32;
    for ((bi, ci, _, hi, _), v) in x.indexed_iter() {
        out[[bi, ci * h + hi]] += v * scale;
    }
    out
}

fn stripe_pool_backward(dim: ndarray::Ix5, d: &Array2<f32>) -> Array5<f32> {
    let (_, _, t, h, w) = (dim[0], dim[1], dim[2], dim[3], dim[4]);
    let scale = 1.0 / (t * w) as f32;
    Array5::from_shape_fn(dim, |(bi, ci, _, hi, _)| d[[bi, ci * h + hi]] * scale)
}

impl VideoEncoder {
    pub fn new<R: Rng>(
        in_channels: usize,
        input: [usize; 3],
        stem_kernel: [usize; 3],
        channels: &[usize],
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidArgument("encoder needs at least one stage".into()));
        }
        let stem = Conv3d::new(in_channels, channels[0], stem_kernel, stem_kernel, [0, 0, 0], rng);
        let mut extent = stem.output_extent(input)?;
        let mut stages = Vec::new();
        for pair in channels.windows(2) {
            let stride = [
                if stages.is_empty() || extent[0] < 2 { 1 } else { 2 },
                if extent[1] >= 2 { 2 } else { 1 },
                if extent[2] >= 2 { 2 } else { 1 },
            ];
            let conv = Conv3d::new(pair[0], pair[1], [3, 3, 3], stride, [1, 1, 1], rng);
            extent = conv.output_extent(extent)?;
            stages.push(conv);
        }
        let norms = channels.iter().map(|&c| GroupNorm::new(c)).collect();
        let project = Linear::new(channels.last().unwrap() * extent[1], out_dim, 1.0, rng);
        Ok(Self { stem, stages, norms, project })
    }

    pub fn in_channels(&self) -> usize {
        self.stem.in_channels
    }

    pub fn out_dim(&self) -> usize {
        self.project.output_dim()
    }

    /// `x: [B, C, T, H, W]` → `[B, out_dim]`.
    pub fn forward(&self, x: &Array5<f32>) -> Result<(Array2<f32>, EncoderCache)> {
        let x = x.mapv(|v| (v - 0.5) * 4.0);
        let (y, c) = self.stem.forward(&x)?;
        let (y, n) = self.norms[0].forward(&y);
        let mut acts = vec![relu(y)];
        let mut convs = vec![c];
        let mut norms = vec![n];
        for (stage, norm) in self.stages.iter().zip(&self.norms[1..]) {
            let (y, c) = stage.forward(acts.last().unwrap())?;
            let (y, n) = norm.forward(&y);
            acts.push(relu(y));
            convs.push(c);
            norms.push(n);
        }
        let pooled = stripe_pool(acts.last().unwrap());
        let out = self.project.forward(pooled.view());
        Ok((out, EncoderCache { convs, norms, acts, pooled }))
    }

    /// Backpropagates to the parameters only; input gradients are never needed.
    pub fn backward(&self, cache: &EncoderCache, dy: &Array2<f32>, g: &mut VideoEncoder) {
        let dpooled = self.project.backward(cache.pooled.view(), dy.view(), &mut g.project);
        let mut dact = stripe_pool_backward(cache.acts.last().unwrap().raw_dim(), &dpooled);
        for i in (0..=self.stages.len()).rev() {
            let dnorm = relu_backward(&cache.acts[i], &dact);
            let dpre = self.norms[i].backward(&cache.norms[i], &dnorm, &mut g.norms[i]);
            if i == 0 {
                self.stem.backward(&cache.convs[0], &dpre, &mut g.stem, false);
            } else {
                dact = self.stages[i - 1]
                    .backward(&cache.convs[i], &dpre, &mut g.stages[i - 1], true)
                    .expect("input gradient requested");
            }
        }
    }
}
