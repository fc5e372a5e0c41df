use ndarray::Array4;

use crate::clip::VideoClip;
use crate::error::{Error, Result};

/// RGB in `[0, 1]` to HSV with hue in `[0, 1)`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return (0.0, s, v);
    }
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    ((h / 6.0).rem_euclid(1.0), s, v)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Rotates the hue of every pixel by `delta` (mod 1), keeping saturation and value.
pub fn hue_shift(clip: &VideoClip, delta: f64) -> Result<VideoClip> {
    let (n, c, h, w) = clip.dim();
    if c != 3 {
        return Err(Error::Shape(format!("hue shift needs 3 channels, clip has {c}")));
    }
    if !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("hue delta {delta}")));
    }
    let src = clip.frames();
    let mut out = Array4::<f32>::zeros((n, c, h, w));
    for f in 0..n {
        for y in 0..h {
            for x in 0..w {
                let (hh, s, v) = rgb_to_hsv(
                    src[[f, 0, y, x]] as f64,
                    src[[f, 1, y, x]] as f64,
                    src[[f, 2, y, x]] as f64,
                );
                let (r, g, b) = hsv_to_rgb(hh + delta, s, v);
                out[[f, 0, y, x]] = r as f32;
                out[[f, 1, y, x]] = g as f32;
                out[[f, 2, y, x]] = b as f32;
            }
        }
    }
    Ok(VideoClip::from_clamped(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn colorful() -> VideoClip {
        VideoClip::new(Array4::from_shape_fn((2, 3, 8, 9), |(f, c, y, x)| {
            ((f * 13 + c * 29 + y * 5 + x * 11) % 37) as f32 / 36.0
        }))
        .unwrap()
    }

    fn max_diff(a: &VideoClip, b: &VideoClip) -> f32 {
        a.frames()
            .iter()
            .zip(b.frames())
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn zero_shift_round_trips() {
        let clip = colorful();
        assert!(max_diff(&hue_shift(&clip, 0.0).unwrap(), &clip) < 1e-6);
    }

    #[test]
    fn full_turn_equals_no_turn() {
        let clip = colorful();
        let a = hue_shift(&clip, 0.0).unwrap();
        let b = hue_shift(&clip, 1.0).unwrap();
        assert!(max_diff(&a, &b) < 1e-6);
    }

    #[test]
    fn red_becomes_green() {
        let mut a = Array4::<f32>::zeros((1, 3, 8, 8));
        a.slice_mut(ndarray::s![.., 0, .., ..]).fill(1.0);
        let red = VideoClip::new(a).unwrap();
        let out = hue_shift(&red, 1.0 / 3.0).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert!(out.frames()[[0, 0, y, x]].abs() < 1e-6);
                assert!((out.frames()[[0, 1, y, x]] - 1.0).abs() < 1e-6);
                assert!(out.frames()[[0, 2, y, x]].abs() < 1e-6);
            }
        }
    }

    #[test]
    fn saturation_and_value_are_kept() {
        let clip = colorful();
        let out = hue_shift(&clip, 0.37).unwrap();
        let (a, b) = (clip.frames(), out.frames());
        for f in 0..2 {
            for y in 0..8 {
                for x in 0..9 {
                    let p = rgb_to_hsv(a[[f, 0, y, x]] as f64, a[[f, 1, y, x]] as f64, a[[f, 2, y, x]] as f64);
                    let q = rgb_to_hsv(b[[f, 0, y, x]] as f64, b[[f, 1, y, x]] as f64, b[[f, 2, y, x]] as f64);
                    assert!((p.1 - q.1).abs() < 1e-5 && (p.2 - q.2).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn requires_rgb() {
        let sil = VideoClip::zeros(1, 1, 8, 8).unwrap();
        assert!(hue_shift(&sil, 0.1).is_err());
    }
}
