//! Elastic distortion: a smooth random displacement field applied to every
//! frame of a clip. Body geometry warps while pixel colors are only moved.

use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clip::VideoClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Self::Bilinear),
            "nearest" => Ok(Self::Nearest),
            other => Err(Error::InvalidArgument(format!("unknown interpolation {other:?}"))),
        }
    }
}

/// Per-pixel displacements in pixels, `dx` along width and `dy` along height.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticField {
    pub dx: Array2<f32>,
    pub dy: Array2<f32>,
    pub alpha: f32,
    pub sigma: f32,
}

impl ElasticField {
    pub fn height(&self) -> usize {
        self.dx.dim().0
    }

    pub fn width(&self) -> usize {
        self.dx.dim().1
    }

    pub fn max_displacement(&self) -> f32 {
        self.dx
            .iter()
            .chain(self.dy.iter())
            .fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Normalized 1-D Gaussian taps, truncated at four standard deviations.
pub(crate) fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Half-sample symmetric reflection of an integer index into `0..n`.
fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut v = i.rem_euclid(period);
    if v >= n {
        v = period - 1 - v;
    }
    v as usize
}

/// Half-sample symmetric reflection of a continuous pixel coordinate into `[-0.5, n - 0.5]`.
fn reflect_coord(u: f32, n: usize) -> f32 {
    let period = 2.0 * n as f32;
    let mut v = (u + 0.5).rem_euclid(period);
    if v >= n as f32 {
        v = period - v;
    }
    v - 0.5
}

fn smooth(noise: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let (h, w) = noise.dim();
    let radius = (4.0 * sigma).ceil() as usize;
    let k = gaussian_kernel(sigma, radius);
    let r = radius as isize;
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * noise[[y, reflect_index(x as isize + t as isize - r, w)]];
            }
            tmp[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * tmp[[reflect_index(y as isize + t as isize - r, h), x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Draws uniform `[-1, 1]` noise per component, smooths it with a Gaussian of
/// width `sigma`, and scales by `alpha`. Smoothing is a convex combination,
/// so no displacement exceeds `alpha`.
pub fn make_elastic_field(
    height: usize,
    width: usize,
    alpha: f32,
    sigma: f32,
    seed: u64,
) -> Result<ElasticField> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} must be >= 0")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be > 0")));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("empty field".into()));
    }
    if alpha == 0.0 {
        return Ok(ElasticField {
            dx: Array2::zeros((height, width)),
            dy: Array2::zeros((height, width)),
            alpha,
            sigma,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut component = || {
        let noise = Array2::from_shape_simple_fn((height, width), || rng.gen_range(-1.0..=1.0));
        smooth(&noise, sigma as f64).mapv(|v| ((v * alpha as f64) as f32).clamp(-alpha, alpha))
    };
    let dx = component();
    let dy = component();
    Ok(ElasticField { dx, dy, alpha, sigma })
}

/// Warps every frame with the same field: output `(y, x)` samples the input
/// at `(y + dy, x + dx)` with reflect padding.
pub fn elastic_distort(
    clip: &VideoClip,
    field: &ElasticField,
    interpolation: Interpolation,
) -> Result<VideoClip> {
    let (n, c, h, w) = clip.dim();
    if field.dx.dim() != (h, w) || field.dy.dim() != (h, w) {
        return Err(Error::Shape(format!(
            "field {:?} does not match frames {h}x{w}",
            field.dx.dim()
        )));
    }
    // Source taps are shared by every frame and channel.
    let mut taps = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let sy = reflect_coord(y as f32 + field.dy[[y, x]], h);
            let sx = reflect_coord(x as f32 + field.dx[[y, x]], w);
            taps.push((sy, sx));
        }
    }
    let src = clip.frames();
    let mut out = Array4::<f32>::zeros((n, c, h, w));
    match interpolation {
        Interpolation::Nearest => {
            let idx: Vec<(usize, usize)> = taps
                .iter()
                .map(|&(sy, sx)| {
                    (
                        (sy.round().max(0.0) as usize).min(h - 1),
                        (sx.round().max(0.0) as usize).min(w - 1),
                    )
                })
                .collect();
            for f in 0..n {
                for ch in 0..c {
                    for (p, &(yy, xx)) in idx.iter().enumerate() {
                        out[[f, ch, p / w, p % w]] = src[[f, ch, yy, xx]];
                    }
                }
            }
        }
        Interpolation::Bilinear => {
            let lerp: Vec<(usize, usize, usize, usize, f32, f32)> = taps
                .iter()
                .map(|&(sy, sx)| {
                    let y0f = sy.floor();
                    let x0f = sx.floor();
                    let fy = sy - y0f;
                    let fx = sx - x0f;
                    let y0 = (y0f.max(0.0) as usize).min(h - 1);
                    let x0 = (x0f.max(0.0) as usize).min(w - 1);
                    let y1 = ((y0f + 1.0).max(0.0) as usize).min(h - 1);
                    let x1 = ((x0f + 1.0).max(0.0) as usize).min(w - 1);
                    (y0, y1, x0, x1, fy, fx)
                })
                .collect();
            for f in 0..n {
                for ch in 0..c {
                    for (p, &(y0, y1, x0, x1, fy, fx)) in lerp.iter().enumerate() {
                        let a = src[[f, ch, y0, x0]];
                        let b = src[[f, ch, y0, x1]];
                        let cc = src[[f, ch, y1, x0]];
                        let d = src[[f, ch, y1, x1]];
                        let top = a + (b - a) * fx;
                        let bottom = cc + (d - cc) * fx;
                        out[[f, ch, p / w, p % w]] = top + (bottom - top) * fy;
                    }
                }
            }
        }
    }
    Ok(VideoClip::from_clamped(out))
}
