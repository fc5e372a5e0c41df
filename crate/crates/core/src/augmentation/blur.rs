//! Gaussian blurring of face rectangles, and the face-box sidecar format
//! (`frame_index x y w h` per line, several lines per frame allowed).

use std::path::Path;

use ndarray::Array4;

use super::elastic::gaussian_kernel;
use crate::clip::VideoClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FaceBox {
    pub frame: usize,
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

pub fn parse_face_boxes(text: &str, origin: &Path) -> Result<Vec<FaceBox>> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums: std::result::Result<Vec<i64>, _> =
            line.split_whitespace().map(str::parse::<i64>).collect();
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        };
        let nums = nums.map_err(|e| err(e.to_string()))?;
        if nums.len() != 5 || nums[0] < 0 {
            return Err(err(format!("expected `frame x y w h`, got {line:?}")));
        }
        boxes.push(FaceBox {
            frame: nums[0] as usize,
            x: nums[1],
            y: nums[2],
            w: nums[3],
            h: nums[4],
        });
    }
    Ok(boxes)
}

pub fn format_face_boxes(boxes: &[FaceBox]) -> String {
    boxes
        .iter()
        .map(|b| format!("{} {} {} {} {}\n", b.frame, b.x, b.y, b.w, b.h))
        .collect()
}

/// The sigma OpenCV derives from a kernel size when none is given.
pub fn default_blur_sigma(kernel: usize) -> f64 {
    0.3 * ((kernel as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blurred {
    pub clip: VideoClip,
    /// One message per box that had to be clipped or dropped.
    pub warnings: Vec<String>,
}

/// Gaussian-blurs the inside of each box; pixels outside every box are untouched.
///
/// Taps read the unblurred frame with edge clamping, so overlapping boxes
/// do not compound.
pub fn face_blur(clip: &VideoClip, boxes: &[FaceBox], kernel: usize, sigma: f64) -> Result<Blurred> {
    if kernel < 3 || kernel % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "blur kernel {kernel} must be odd and >= 3"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("blur sigma {sigma} must be > 0")));
    }
    let (n, c, h, w) = clip.dim();
    let radius = kernel / 2;
    let taps = gaussian_kernel(sigma, radius);
    let src = clip.frames();
    let mut out: Array4<f32> = src.clone();
    let mut warnings = Vec::new();

    for b in boxes {
        if b.frame >= n {
            let msg = format!("face box for frame {} beyond {n} frames dropped", b.frame);
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let x0 = b.x.max(0) as usize;
        let y0 = b.y.max(0) as usize;
        let x1 = (b.x + b.w).clamp(0, w as i64) as usize;
        let y1 = (b.y + b.h).clamp(0, h as i64) as usize;
        if b.x < 0 || b.y < 0 || b.x + b.w > w as i64 || b.y + b.h > h as i64 {
            let msg = format!("face box {b:?} clipped to {w}x{h} frame");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        if x0 >= x1 || y0 >= y1 {
            continue;
        }
        let f = b.frame;
        let r = radius as isize;
        for ch in 0..c {
            // Horizontal pass over the rows the vertical pass will read.
            let ry0 = y0.saturating_sub(radius);
            let ry1 = (y1 + radius).min(h);
            let mut tmp = vec![0.0f64; (ry1 - ry0) * (x1 - x0)];
            for y in ry0..ry1 {
                for x in x0..x1 {
                    let mut acc = 0.0;
                    for (t, k) in taps.iter().enumerate() {
                        let xx = (x as isize + t as isize - r).clamp(0, w as isize - 1) as usize;
                        acc += k * src[[f, ch, y, xx]] as f64;
                    }
                    tmp[(y - ry0) * (x1 - x0) + (x - x0)] = acc;
                }
            }
            for y in y0..y1 {
                for x in x0..x1 {
                    let mut acc = 0.0;
                    for (t, k) in taps.iter().enumerate() {
                        let yy = (y as isize + t as isize - r).clamp(0, h as isize - 1) as usize;
                        let yy = yy.clamp(ry0, ry1 - 1);
                        acc += k * tmp[(yy - ry0) * (x1 - x0) + (x - x0)];
                    }
                    out[[f, ch, y, x]] = acc as f32;
                }
            }
        }
    }
    Ok(Blurred {
        clip: VideoClip::from_clamped(out),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured() -> VideoClip {
        VideoClip::new(Array4::from_shape_fn((2, 3, 16, 16), |(f, c, y, x)| {
            ((f * 5 + c * 7 + y * 3 + x * x) % 19) as f32 / 18.0
        }))
        .unwrap()
    }

    #[test]
    fn no_boxes_is_identity() {
        let clip = textured();
        let out = face_blur(&clip, &[], 5, 1.0).unwrap();
        assert_eq!(out.clip, clip);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn constant_frame_stays_constant() {
        let clip = VideoClip::new(Array4::from_elem((1, 3, 12, 12), 0.4)).unwrap();
        let full = FaceBox { frame: 0, x: 0, y: 0, w: 12, h: 12 };
        let out = face_blur(&clip, &[full], 7, 2.0).unwrap();
        assert!(out.clip.frames().iter().all(|v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn right_half_untouched() {
        let clip = textured();
        let left = FaceBox { frame: 0, x: 0, y: 0, w: 8, h: 16 };
        let out = face_blur(&clip, &[left], 5, 1.5).unwrap();
        for c in 0..3 {
            for y in 0..16 {
                for x in 8..16 {
                    assert_eq!(
                        out.clip.frames()[[0, c, y, x]].to_bits(),
                        clip.frames()[[0, c, y, x]].to_bits()
                    );
                }
            }
        }
        // Frame 1 had no box at all.
        assert_eq!(out.clip.frame(1), clip.frame(1));
        assert_ne!(out.clip.frame(0), clip.frame(0));
    }

    #[test]
    fn out_of_bounds_box_is_clipped_with_warning() {
        let clip = textured();
        let b = FaceBox { frame: 1, x: 12, y: -3, w: 10, h: 6 };
        let out = face_blur(&clip, &[b], 3, 1.0).unwrap();
        assert_eq!(out.warnings.len(), 1);
        for y in 3..16 {
            assert_eq!(out.clip.frames()[[1, 0, y, 13]], clip.frames()[[1, 0, y, 13]]);
        }
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(face_blur(&textured(), &[], 4, 1.0).is_err());
        assert!(face_blur(&textured(), &[], 1, 1.0).is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let boxes = vec![
            FaceBox { frame: 0, x: 1, y: 2, w: 3, h: 4 },
            FaceBox { frame: 0, x: 9, y: 9, w: 2, h: 2 },
            FaceBox { frame: 3, x: -1, y: 0, w: 5, h: 5 },
        ];
        let text = format_face_boxes(&boxes);
        assert_eq!(parse_face_boxes(&text, Path::new("b")).unwrap(), boxes);
        assert!(parse_face_boxes("0 1 2 3\n", Path::new("b")).is_err());
    }
}
