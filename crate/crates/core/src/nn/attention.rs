use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::linear::{LayerNorm, LayerNormCache, Linear};
use super::params_struct;
use crate::error::{Error, Result};

/// Multi-head self-attention over groups of `tokens` consecutive rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

params_struct!(MultiHeadAttention { query, key, value, output });

#[derive(Debug, Clone)]
pub struct MhsaCache {
    x: Array2<f32>,
    q: Array2<f32>,
    k: Array2<f32>,
    v: Array2<f32>,
    attn: Vec<Array2<f32>>,
    mixed: Array2<f32>,
}

fn softmax_rows(s: &mut Array2<f32>) {
    for mut row in s.rows_mut() {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(width: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::InvalidArgument(format!("width {width} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(width, width, 1.0, rng),
            key: Linear::new(width, width, 1.0, rng),
            value: Linear::new(width, width, 1.0, rng),
            output: Linear::new(width, width, 1.0, rng),
            heads,
        })
    }

    pub fn forward(&self, x: ArrayView2<f32>, tokens: usize) -> (Array2<f32>, MhsaCache) {
        let (rows, width) = x.dim();
        let dh = width / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let mut mixed = Array2::zeros((rows, width));
        let mut attn = Vec::with_capacity(rows / tokens * self.heads);
        for b in 0..rows / tokens {
            let r = b * tokens..(b + 1) * tokens;
            for h in 0..self.heads {
                let c = h * dh..(h + 1) * dh;
                let qb = q.slice(s![r.clone(), c.clone()]);
                let kb = k.slice(s![r.clone(), c.clone()]);
                let vb = v.slice(s![r.clone(), c.clone()]);
                let mut p = qb.dot(&kb.t()) * scale;
                softmax_rows(&mut p);
                mixed.slice_mut(s![r.clone(), c]).assign(&p.dot(&vb));
                attn.push(p);
            }
        }
        let y = self.output.forward(mixed.view());
        (y, MhsaCache { x: x.to_owned(), q, k, v, attn, mixed })
    }

    pub fn backward(&self, cache: &MhsaCache, dy: ArrayView2<f32>, tokens: usize, g: &mut MultiHeadAttention) -> Array2<f32> {
        let (rows, width) = cache.x.dim();
        let dh = width / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let dmixed = self.output.backward(cache.mixed.view(), dy, &mut g.output);
        let mut dq = Array2::zeros((rows, width));
        let mut dk = Array2::zeros((rows, width));
        let mut dv = Array2::zeros((rows, width));
        for b in 0..rows / tokens {
            let r = b * tokens..(b + 1) * tokens;
            for h in 0..self.heads {
                let c = h * dh..(h + 1) * dh;
                let p = &cache.attn[b * self.heads + h];
                let d_o = dmixed.slice(s![r.clone(), c.clone()]);
                let qb = cache.q.slice(s![r.clone(), c.clone()]);
                let kb = cache.k.slice(s![r.clone(), c.clone()]);
                let vb = cache.v.slice(s![r.clone(), c.clone()]);
                dv.slice_mut(s![r.clone(), c.clone()]).assign(&p.t().dot(&d_o));
                let dp = d_o.dot(&vb.t());
                let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ds = (p * &(&dp - &row_dot)) * scale;
                dq.slice_mut(s![r.clone(), c.clone()]).assign(&ds.dot(&kb));
                dk.slice_mut(s![r.clone(), c]).assign(&ds.t().dot(&qb));
            }
        }
        let x = cache.x.view();
        let mut dx = self.query.backward(x, dq.view(), &mut g.query);
        dx += &self.key.backward(x, dk.view(), &mut g.key);
        dx += &self.value.backward(x, dv.view(), &mut g.value);
        dx
    }
}

/// Pre-norm transformer block: attention and a ReLU feed-forward, each residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

params_struct!(Block { norm1, attention, norm2, ff1, ff2 });

#[derive(Debug, Clone)]
pub struct BlockCache {
    n1: LayerNormCache,
    attn: MhsaCache,
    n2: LayerNormCache,
    n2_out: Array2<f32>,
    hidden: Array2<f32>,
}

impl Block {
    pub fn new<R: Rng>(width: usize, heads: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(width),
            attention: MultiHeadAttention::new(width, heads, rng)?,
            norm2: LayerNorm::new(width),
            ff1: Linear::new(width, 2 * width, 6f32.sqrt(), rng),
            ff2: Linear::new(2 * width, width, 1.0, rng),
        })
    }

    pub fn forward(&self, x: ArrayView2<f32>, tokens: usize) -> (Array2<f32>, BlockCache) {
        let (h1, n1) = self.norm1.forward(x);
        let (a, attn) = self.attention.forward(h1.view(), tokens);
        let x1 = &x + &a;
        let (h2, n2) = self.norm2.forward(x1.view());
        let hidden = self.ff1.forward(h2.view()).mapv_into(|v| v.max(0.0));
        let y = &x1 + &self.ff2.forward(hidden.view());
        (y, BlockCache { n1, attn, n2, n2_out: h2, hidden })
    }

    pub fn backward(&self, cache: &BlockCache, dy: ArrayView2<f32>, tokens: usize, g: &mut Block) -> Array2<f32> {
        let mut dhidden = self.ff2.backward(cache.hidden.view(), dy, &mut g.ff2);
        ndarray::Zip::from(&mut dhidden).and(&cache.hidden).for_each(|d, &h| {
            if h <= 0.0 {
                *d = 0.0;
            }
        });
        let dh2 = self.ff1.backward(cache.n2_out.view(), dhidden.view(), &mut g.ff1);
        let dx1 = &dy + &self.norm2.backward(&cache.n2, dh2.view(), &mut g.norm2);
        let dh1 = self.attention.backward(&cache.attn, dx1.view(), tokens, &mut g.attention);
        &dx1 + &self.norm1.backward(&cache.n1, dh1.view(), &mut g.norm1)
    }
}

/// Reads a feature vector as a short token sequence, runs self-attention
/// blocks over it, and flattens the normalized tokens back into one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDecoder {
    pub embed: Linear,
    pub position: Array2<f32>,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    pub tokens: usize,
}

params_struct!(TokenDecoder { embed, position, blocks, norm });

#[derive(Debug, Clone)]
pub struct DecoderCache {
    tokens_in: Array2<f32>,
    blocks: Vec<BlockCache>,
    norm: LayerNormCache,
}

impl TokenDecoder {
    pub fn new<R: Rng>(input: usize, tokens: usize, width: usize, layers: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if tokens == 0 || input % tokens != 0 {
            return Err(Error::InvalidArgument(format!("input dim {input} not divisible into {tokens} tokens")));
        }
        let normal = Normal::new(0.0f32, 0.02).expect("valid normal");
        Ok(Self {
            embed: Linear::new(input / tokens, width, 1.0, rng),
            position: Array2::from_shape_fn((tokens, width), |_| normal.sample(rng)),
            blocks: (0..layers).map(|_| Block::new(width, heads, rng)).collect::<Result<_>>()?,
            norm: LayerNorm::new(width),
            tokens,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.embed.input_dim() * self.tokens
    }

    pub fn output_dim(&self) -> usize {
        self.embed.output_dim() * self.tokens
    }

    /// `x: [B, input]` → `[B, tokens·width]`.
    pub fn forward(&self, x: ArrayView2<f32>) -> Result<(Array2<f32>, DecoderCache)> {
        let (b, d) = x.dim();
        if d != self.input_dim() {
            return Err(Error::Shape(format!("decoder expects {} inputs, got {d}", self.input_dim())));
        }
        let t = self.tokens;
        let width = self.embed.output_dim();
        let tokens_in = x.as_standard_layout().into_owned().into_shape_with_order((b * t, d / t)).expect("shape");
        let mut h = self.embed.forward(tokens_in.view());
        for (i, mut row) in h.rows_mut().into_iter().enumerate() {
            row += &self.position.row(i % t);
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward(h.view(), t);
            h = y;
            caches.push(c);
        }
        let (y, norm) = self.norm.forward(h.view());
        let y = y.into_shape_with_order((b, t * width)).expect("shape");
        Ok((y, DecoderCache { tokens_in, blocks: caches, norm }))
    }

    pub fn backward(&self, cache: &DecoderCache, dy: ArrayView2<f32>, g: &mut TokenDecoder) -> Array2<f32> {
        let b = dy.nrows();
        let t = self.tokens;
        let width = self.embed.output_dim();
        let dy = dy.as_standard_layout().into_owned().into_shape_with_order((b * t, width)).expect("shape");
        let mut dh = self.norm.backward(&cache.norm, dy.view(), &mut g.norm);
        for (i, block) in self.blocks.iter().enumerate().rev() {
            dh = block.backward(&cache.blocks[i], dh.view(), t, &mut g.blocks[i]);
        }
        for (i, row) in dh.rows().into_iter().enumerate() {
            let mut p = g.position.row_mut(i % t);
            p += &row;
        }
        let dx = self.embed.backward(cache.tokens_in.view(), dh.view(), &mut g.embed);
        dx.into_shape_with_order((b, self.input_dim())).expect("shape")
    }
}
