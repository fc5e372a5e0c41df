//! Temporal clip sampling and spatial resizing.

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clip::{VideoClip, MIN_SIDE};
use crate::error::{Error, Result};

/// Number of source frames spanned by `n` frames at `stride`.
pub fn clip_span(n: usize, stride: usize) -> usize {
    (n - 1) * stride + 1
}

/// Frame indices `start, start + stride, ...`, wrapping modulo `video_len`.
pub fn indices_from_start(video_len: usize, n: usize, stride: usize, start: usize) -> Vec<usize> {
    (0..n).map(|i| (start + i * stride) % video_len).collect()
}

/// Draws the start frame uniformly among valid starts.
///
/// Videos shorter than the span always start at frame 0 (and wrap).
pub fn draw_start(video_len: usize, n: usize, stride: usize, seed: u64) -> usize {
    let span = clip_span(n, stride);
    if video_len < span {
        return 0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.gen_range(0..=video_len - span)
}

/// Frame indices for an `n`-frame clip at `stride` from a `video_len`-frame video.
pub fn clip_indices(video_len: usize, n: usize, stride: usize, seed: u64) -> Result<Vec<usize>> {
    if video_len == 0 {
        return Err(Error::InvalidArgument("cannot sample from an empty video".into()));
    }
    if n == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "frame count ({n}) and stride ({stride}) must be at least 1"
        )));
    }
    let start = draw_start(video_len, n, stride, seed);
    Ok(indices_from_start(video_len, n, stride, start))
}

/// Samples an `n`-frame clip with the given stride from a decoded video.
pub fn sample_clip(video: &VideoClip, n: usize, stride: usize, seed: u64) -> Result<VideoClip> {
    let indices = clip_indices(video.len(), n, stride, seed)?;
    video.select(&indices)
}

/// Bilinear resize of every frame (half-pixel centers, edge clamping).
pub fn resize_frames(clip: &VideoClip, height: usize, width: usize) -> Result<VideoClip> {
    if height < MIN_SIDE || width < MIN_SIDE {
        return Err(Error::InvalidArgument(format!(
            "target {height}x{width} is smaller than {MIN_SIDE}x{MIN_SIDE}"
        )));
    }
    let (n, c, h, w) = clip.dim();
    if (h, w) == (height, width) {
        return Ok(clip.clone());
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f32 / out as f32;
        (0..out)
            .map(|o| {
                let src = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f32);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f32)
            })
            .collect()
    };
    let rows = taps(height, h);
    let cols = taps(width, w);
    let src = clip.frames();
    let mut out = Array4::<f32>::zeros((n, c, height, width));
    for f in 0..n {
        for ch in 0..c {
            for (y, &(y0, y1, fy)) in rows.iter().enumerate() {
                for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let a = src[[f, ch, y0, x0]];
                    let b = src[[f, ch, y0, x1]];
                    let cc = src[[f, ch, y1, x0]];
                    let d = src[[f, ch, y1, x1]];
                    let top = a + (b - a) * fx;
                    let bottom = cc + (d - cc) * fx;
                    out[[f, ch, y, x]] = top + (bottom - top) * fy;
                }
            }
        }
    }
    Ok(VideoClip::from_clamped(out))
}
