//! The frame-stack type shared by every stage of the pipeline.

use ndarray::{s, Array3, Array4, ArrayView3};

use crate::error::{Error, Result};

/// Smallest frame side accepted by the pipeline.
pub const MIN_SIDE: usize = 8;

/// A fixed-length stack of frames laid out as `[n, C, H, W]` with values in `[0, 1]`.
///
/// RGB clips have `C = 3`; binary silhouettes have `C = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Array4<f32>,
}

impl VideoClip {
    pub fn new(frames: Array4<f32>) -> Result<Self> {
        let (n, c, h, w) = frames.dim();
        if n == 0 {
            return Err(Error::Shape("clip has no frames".into()));
        }
        if c == 0 {
            return Err(Error::Shape("clip has no channels".into()));
        }
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::Shape(format!(
                "frame {h}x{w} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if let Some(v) = frames.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self { frames })
    }

    /// Builds a clip from values already known to satisfy the invariants,
    /// clamping anything that drifted outside `[0, 1]` through float error.
    pub(crate) fn from_clamped(mut frames: Array4<f32>) -> Self {
        frames.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Self { frames }
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        Self::new(Array4::zeros((n, c, h, w)))
    }

    pub fn frames(&self) -> &Array4<f32> {
        &self.frames
    }

    pub fn into_frames(self) -> Array4<f32> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.frames.dim().1
    }

    pub fn height(&self) -> usize {
        self.frames.dim().2
    }

    pub fn width(&self) -> usize {
        self.frames.dim().3
    }

    /// `(n, C, H, W)`
    pub fn dim(&self) -> (usize, usize, usize, usize) {
        self.frames.dim()
    }

    pub fn frame(&self, index: usize) -> ArrayView3<'_, f32> {
        self.frames.slice(s![index, .., .., ..])
    }

    /// Selects frames by index, in the given order (indices may repeat).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let (n, c, h, w) = self.dim();
        if indices.is_empty() {
            return Err(Error::InvalidArgument("no frame indices".into()));
        }
        let mut out = Array4::zeros((indices.len(), c, h, w));
        for (dst, &src) in indices.iter().enumerate() {
            if src >= n {
                return Err(Error::InvalidArgument(format!(
                    "frame index {src} out of range for {n} frames"
                )));
            }
            out.slice_mut(s![dst, .., .., ..])
                .assign(&self.frames.slice(s![src, .., .., ..]));
        }
        Ok(Self { frames: out })
    }

    /// Stacks single frames `[C, H, W]` into a clip.
    pub fn from_frames(frames: &[Array3<f32>]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Shape("clip has no frames".into()))?;
        let (c, h, w) = first.dim();
        let mut out = Array4::zeros((frames.len(), c, h, w));
        for (i, f) in frames.iter().enumerate() {
            if f.dim() != (c, h, w) {
                return Err(Error::Shape(format!(
                    "frame {i} has shape {:?}, expected {:?}",
                    f.dim(),
                    (c, h, w)
                )));
            }
            out.slice_mut(s![i, .., .., ..]).assign(f);
        }
        Self::new(out)
    }

    /// Quantizes to 8-bit storage.
    pub fn to_u8(&self) -> Vec<u8> {
        self.frames
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_u8(dim: (usize, usize, usize, usize), data: &[u8]) -> Result<Self> {
        let expected = dim.0 * dim.1 * dim.2 * dim.3;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{} bytes for a {:?} clip (expected {expected})",
                data.len(),
                dim
            )));
        }
        let frames = Array4::from_shape_vec(dim, data.iter().map(|&b| b as f32 / 255.0).collect())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        let mut a = Array4::<f32>::zeros((1, 1, 8, 8));
        a[[0, 0, 3, 3]] = 1.5;
        assert!(VideoClip::new(a).is_err());
    }

    #[test]
    fn rejects_tiny_frames() {
        assert!(VideoClip::zeros(2, 3, 7, 8).is_err());
        assert!(VideoClip::zeros(0, 3, 8, 8).is_err());
        assert!(VideoClip::zeros(1, 3, 8, 8).is_ok());
    }

    #[test]
    fn select_repeats_frames() {
        let mut a = Array4::<f32>::zeros((3, 1, 8, 8));
        for i in 0..3 {
            a.slice_mut(s![i, .., .., ..]).fill(i as f32 / 4.0);
        }
        let clip = VideoClip::new(a).unwrap();
        let picked = clip.select(&[2, 0, 2]).unwrap();
        assert_eq!(picked.len(), 3);
        assert_eq!(picked.frames()[[0, 0, 0, 0]], 0.5);
        assert_eq!(picked.frames()[[1, 0, 0, 0]], 0.0);
        assert_eq!(picked.frames()[[2, 0, 0, 0]], 0.5);
        assert!(clip.select(&[3]).is_err());
    }

    #[test]
    fn u8_round_trip_is_within_quantization() {
        let a = Array4::from_shape_fn((2, 3, 8, 8), |(n, c, h, w)| {
            ((n + c + h + w) % 17) as f32 / 16.0
        });
        let clip = VideoClip::new(a).unwrap();
        let back = VideoClip::from_u8(clip.dim(), &clip.to_u8()).unwrap();
        for (x, y) in clip.frames().iter().zip(back.frames()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
