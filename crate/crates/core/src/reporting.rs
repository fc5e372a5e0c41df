//! Figures and tables: loss curves, metric tables, retrieval grids, α sweeps
//! and 2D feature projections.
//!
//! Plotting is a side effect. Every function that returns data computes it
//! before, and independently of, any image it writes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augmentation::{elastic_distort, make_elastic_field, Interpolation};
use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::evaluation::{MetricsRow, METRICS_CSV_HEADER};
use crate::losses::{euclidean, LossReport};
use crate::model::Student;

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

// ---------------------------------------------------------------- CSV tables

pub fn loss_csv(rows: &[(usize, LossReport)]) -> String {
    let mut s = format!("{}\n", LossReport::CSV_HEADER);
    for (step, r) in rows {
        let _ = writeln!(s, "{}", r.csv_row(*step));
    }
    s
}

pub fn parse_loss_csv(text: &str) -> Result<Vec<(usize, LossReport)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == LossReport::CSV_HEADER => {}
        other => return Err(Error::InvalidArgument(format!("unexpected loss CSV header {other:?}"))),
    }
    lines.map(LossReport::parse_csv_row).collect()
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = format!("{METRICS_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}", r.to_csv());
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == METRICS_CSV_HEADER => {}
        other => return Err(Error::InvalidArgument(format!("unexpected metrics CSV header {other:?}"))),
    }
    lines.map(MetricsRow::parse).collect()
}

// ----------------------------------------------------------------- α sweeps

/// Mean self-distances between clean and distorted features per α.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub alphas: Vec<f64>,
    pub biometric_self_distance: Vec<f64>,
    pub appearance_self_distance: Vec<f64>,
}

pub const SWEEP_CSV_HEADER: &str = "alpha,biometric_self_distance,appearance_self_distance";

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{SWEEP_CSV_HEADER}\n");
        for i in 0..self.alphas.len() {
            let _ = writeln!(
                s,
                "{:?},{:?},{:?}",
                self.alphas[i], self.biometric_self_distance[i], self.appearance_self_distance[i]
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == SWEEP_CSV_HEADER => {}
            other => return Err(Error::InvalidArgument(format!("unexpected sweep CSV header {other:?}"))),
        }
        let mut out = Self { alphas: vec![], biometric_self_distance: vec![], appearance_self_distance: vec![] };
        for line in lines {
            let v: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|e| Error::InvalidArgument(format!("{f:?}: {e}"))))
                .collect::<Result<_>>()?;
            if v.len() != 3 {
                return Err(Error::InvalidArgument(format!("sweep row needs 3 fields: {line:?}")));
            }
            out.alphas.push(v[0]);
            out.biometric_self_distance.push(v[1]);
            out.appearance_self_distance.push(v[2]);
        }
        Ok(out)
    }
}

/// For each α, warps every clip (one field per clip, seeded from `seed` and
/// the clip index) and records the mean Euclidean distance between clean and
/// distorted `f_bb`, and likewise `f_ba`.
pub fn alpha_sweep(
    student: &Student,
    clips: &[VideoClip],
    alphas: &[f64],
    sigma: f32,
    interpolation: Interpolation,
    seed: u64,
) -> Result<SweepResult> {
    if clips.is_empty() {
        return Err(Error::InvalidArgument("alpha sweep needs at least one clip".into()));
    }
    if alphas.windows(2).any(|w| !(w[0] < w[1])) || alphas.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::InvalidArgument("alphas must be non-negative and strictly increasing".into()));
    }
    const CHUNK: usize = 8;
    let clean = student.forward_many(clips, CHUNK)?;
    let mut out = SweepResult { alphas: alphas.to_vec(), biometric_self_distance: vec![], appearance_self_distance: vec![] };
    for &alpha in alphas {
        let warped: Vec<VideoClip> = clips
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let field = make_elastic_field(c.height(), c.width(), alpha as f32, sigma, seed ^ (i as u64).wrapping_mul(0x2545_F491_4F6C_DD1D))?;
                elastic_distort(c, &field, interpolation)
            })
            .collect::<Result<_>>()?;
        let (mut db, mut da) = (0.0, 0.0);
        for (part, base) in warped.chunks(CHUNK).zip(clean.chunks(CHUNK)) {
            let refs: Vec<&VideoClip> = part.iter().collect();
            let d = student.forward_distorted_eval(&refs)?;
            for (i, b) in base.iter().enumerate() {
                let v = |a: ndarray::ArrayView1<f32>| a.iter().map(|x| *x as f64).collect::<Vec<_>>();
                db += euclidean(&v(b.f_bb.view()), &v(d.actor.f_bb.row(i)));
                da += euclidean(&v(b.f_ba.view()), &v(d.actor.f_ba.row(i)));
            }
        }
        out.biometric_self_distance.push(db / clips.len() as f64);
        out.appearance_self_distance.push(da / clips.len() as f64);
    }
    Ok(out)
}

// ------------------------------------------------------------ 2D projection

/// Projects rows onto the two leading principal axes of the centered data.
///
/// Axes come from power iteration on the covariance started from a
/// `seed`-determined vector; each axis is signed so that the projected point
/// of largest magnitude is positive. The result therefore does not change
/// when the inputs are rigidly rotated.
pub fn project_features_2d(embeddings: ArrayView2<f64>, seed: u64) -> Result<Array2<f64>> {
    let (n, d) = embeddings.dim();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("projection needs at least 2 points, got {n}")));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("projection needs non-empty features".into()));
    }
    let mean = embeddings.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &embeddings - &mean;
    let mut cov = centered.t().dot(&centered) / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, 2));
    for k in 0..2.min(d) {
        let mut v = Array1::from_shape_fn(d, |_| rng.gen_range(-1.0..1.0));
        for _ in 0..500 {
            let next = cov.dot(&v);
            let norm = next.dot(&next).sqrt();
            if norm < 1e-300 {
                break;
            }
            let next = next / norm;
            let delta = (&next - &v).mapv(f64::abs).sum();
            v = next;
            if delta < 1e-13 {
                break;
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm > 0.0 {
            v /= norm;
        }
        let mut proj = centered.dot(&v);
        let peak = proj.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if peak < 0.0 {
            proj.mapv_inplace(|x| -x);
            v.mapv_inplace(|x| -x);
        }
        out.column_mut(k).assign(&proj);
        let lambda = v.dot(&cov.dot(&v));
        let outer = v.view().insert_axis(Axis(1)).dot(&v.view().insert_axis(Axis(0)));
        cov -= &(outer * lambda);
    }
    Ok(out)
}

// ------------------------------------------------------------------- images

fn fill_rect(img: &mut RgbImage, x0: i64, y0: i64, w: i64, h: i64, c: [u8; 3]) {
    for y in y0.max(0)..(y0 + h).min(img.height() as i64) {
        for x in x0.max(0)..(x0 + w).min(img.width() as i64) {
            img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: [u8; 3]) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        fill_rect(img, x.round() as i64, y.round() as i64, 2, 2, c);
    }
}

/// Plots each series against its index on shared axes with a white
/// background and a light frame. Non-finite values are skipped.
fn plot_series(series: &[Vec<f64>], path: &Path) -> Result<()> {
    let (w, h, pad) = (640u32, 400u32, 30.0);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let finite = series.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, if hi > lo { hi } else { lo + 1.0 }) } else { (0.0, 1.0) };
    let len = series.iter().map(Vec::len).max().unwrap_or(0).max(2);
    let px = |i: usize| pad + (w as f64 - 2.0 * pad) * i as f64 / (len - 1) as f64;
    let py = |v: f64| h as f64 - pad - (h as f64 - 2.0 * pad) * (v - lo) / (hi - lo);
    line(&mut img, (pad, pad), (pad, h as f64 - pad), [160, 160, 160]);
    line(&mut img, (pad, h as f64 - pad), (w as f64 - pad, h as f64 - pad), [160, 160, 160]);
    for (k, s) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let mut prev: Option<(f64, f64)> = None;
        for (i, v) in s.iter().enumerate() {
            if !v.is_finite() {
                prev = None;
                continue;
            }
            let p = (px(i), py(*v));
            if let Some(q) = prev {
                line(&mut img, q, p, c);
            }
            prev = Some(p);
        }
    }
    save(&img, path)
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    img.save(path)?;
    Ok(())
}

/// Loss curves, one line per component in CSV column order.
pub fn plot_loss_curves(rows: &[(usize, LossReport)], path: impl AsRef<Path>) -> Result<()> {
    let cols: [fn(&LossReport) -> f64; 6] = [|r| r.ce, |r| r.tri, |r| r.activity, |r| r.kd, |r| r.dis, |r| r.total];
    let series: Vec<Vec<f64>> = cols.iter().map(|f| rows.iter().map(|(_, r)| f(r)).collect()).collect();
    plot_series(&series, path.as_ref())
}

/// Biometric (first color) and appearance (second color) self-distance
/// against α.
pub fn plot_sweep(sweep: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    plot_series(&[sweep.biometric_self_distance.clone(), sweep.appearance_self_distance.clone()], path.as_ref())
}

/// Scatter plot of 2D points colored by label.
pub fn plot_projection(points: ArrayView2<f64>, labels: &[u32], path: impl AsRef<Path>) -> Result<()> {
    if points.ncols() != 2 || points.nrows() != labels.len() {
        return Err(Error::Shape(format!("{:?} points for {} labels", points.dim(), labels.len())));
    }
    let (w, h, pad) = (480u32, 480u32, 20.0);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let range = |c: usize| {
        let col = points.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, if hi > lo { hi } else { lo + 1.0 })
    };
    let ((x0, x1), (y0, y1)) = (range(0), range(1));
    for (p, &l) in points.rows().into_iter().zip(labels) {
        let x = pad + (w as f64 - 2.0 * pad) * (p[0] - x0) / (x1 - x0);
        let y = h as f64 - pad - (h as f64 - 2.0 * pad) * (p[1] - y0) / (y1 - y0);
        fill_rect(&mut img, x as i64 - 3, y as i64 - 3, 7, 7, PALETTE[l as usize % PALETTE.len()]);
    }
    save(&img, path.as_ref())
}

fn blit_frame(img: &mut RgbImage, clip: &VideoClip, x0: u32, y0: u32) {
    let f = clip.frame(clip.len() / 2);
    let (c, h, w) = f.dim();
    for y in 0..h {
        for x in 0..w {
            let px = |ch: usize| (f[[ch.min(c - 1), y, x]].clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(x0 + x as u32, y0 + y as u32, Rgb([px(0), px(1), px(2)]));
        }
    }
}

/// One row: the probe's middle frame, then each retrieved gallery clip
/// framed green when it shows the probe's identity and red otherwise.
pub fn retrieval_grid(probe: &VideoClip, retrieved: &[(VideoClip, bool)], path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = (probe.height() as u32, probe.width() as u32);
    if retrieved.iter().any(|(c, _)| c.height() as u32 != h || c.width() as u32 != w) {
        return Err(Error::Shape("retrieval grid clips must share a frame size".into()));
    }
    let border = 4u32;
    let cell_w = w + 2 * border;
    let cols = 1 + retrieved.len() as u32;
    let mut img = RgbImage::from_pixel(cols * cell_w + border, h + 2 * border, Rgb([255, 255, 255]));
    fill_rect(&mut img, 0, 0, cell_w as i64, (h + 2 * border) as i64, [40, 40, 40]);
    blit_frame(&mut img, probe, border, border);
    for (i, (clip, correct)) in retrieved.iter().enumerate() {
        let x = (i as u32 + 1) * cell_w + border;
        let color = if *correct { [30, 180, 60] } else { [210, 40, 40] };
        fill_rect(&mut img, (x - border) as i64, 0, cell_w as i64, (h + 2 * border) as i64, color);
        blit_frame(&mut img, clip, x, border);
    }
    save(&img, path.as_ref())
}
