//! A procedurally rendered world of stick-figure actors.
//!
//! Identity lives in body proportions and stature, appearance in clothing
//! color and the per-clip background, activity in the joint-angle trajectory
//! family. The three are drawn independently, so a model that retrieves
//! actors by color is caught out once colors are reassigned with
//! [`recolor_actor`].

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::{Array4, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::augmentation::{format_face_boxes, hsv_to_rgb, FaceBox};
use crate::clip::VideoClip;
use crate::datapipe::{face_box_sidecar, DatasetManifest, MemoryStore, SampleRecord, Split};
use crate::error::{Error, Result};

pub const ACTIVITY_NAMES: [&str; 4] = ["walk", "wave", "squat", "jump"];

/// Ranges of the identity parameters; stature is a fraction of frame height,
/// the rest are fractions of the actor's standing height.
const LIMB_RANGES: [(f64, f64); 8] = [
    (0.55, 0.80),   // stature
    (0.055, 0.085), // head radius
    (0.24, 0.34),   // torso
    (0.19, 0.27),   // upper leg
    (0.19, 0.27),   // lower leg
    (0.12, 0.19),   // upper arm
    (0.11, 0.18),   // forearm
    (0.025, 0.065), // limb thickness
];

#[derive(Debug, Clone, PartialEq)]
pub struct ActorProfile {
    /// stature, head radius, torso, upper leg, lower leg, upper arm, forearm, thickness.
    pub limb_lengths: [f64; 8],
    /// Phase lead of the arm swing over the leg swing, in radians.
    pub gait_phase_offset: f64,
    pub clothing_color: [f64; 3],
}

impl ActorProfile {
    /// Limb lengths rescaled so every parameter spans `[0, 1]`.
    pub fn normalized(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (i, (lo, hi)) in LIMB_RANGES.iter().enumerate() {
            out[i] = (self.limb_lengths[i] - lo) / (hi - lo);
        }
        out
    }

    pub fn separation(&self, other: &ActorProfile) -> f64 {
        let (a, b) = (self.normalized(), other.normalized());
        a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorldConfig {
    pub num_actors: usize,
    pub num_activities: usize,
    pub clips_per_pair: usize,
    pub frames_per_clip: usize,
    /// `(H, W)`
    pub frame_size: (usize, usize),
    pub seed: u64,
    pub identity_separation: f64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            num_actors: 20,
            num_activities: 4,
            clips_per_pair: 5,
            frames_per_clip: 24,
            frame_size: (128, 64),
            seed: 0,
            identity_separation: 0.35,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_actors == 0 || self.num_activities == 0 || self.clips_per_pair == 0 || self.frames_per_clip == 0 {
            return Err(Error::Config("synthetic world counts must be at least 1".into()));
        }
        if self.num_activities > ACTIVITY_NAMES.len() {
            return Err(Error::Config(format!(
                "at most {} activity patterns are available",
                ACTIVITY_NAMES.len()
            )));
        }
        if self.frame_size.0 < 32 || self.frame_size.1 < 16 {
            return Err(Error::Config(format!("frame size {:?} is below 32x16", self.frame_size)));
        }
        if !(self.identity_separation >= 0.0) {
            return Err(Error::Config("identity separation must be >= 0".into()));
        }
        Ok(())
    }
}

/// A rendered world held in memory.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: SyntheticWorldConfig,
    pub manifest: DatasetManifest,
    pub store: MemoryStore,
    pub actors: Vec<ActorProfile>,
}

/// Render parameters of one clip beyond actor and activity.
#[derive(Debug, Clone, Copy)]
struct ClipStyle {
    facing: f64,
    center_x: f64,
    phase: f64,
    period: f64,
    amplitude: f64,
    background: [f64; 3],
    noise_seed: u64,
}

#[derive(Debug, Clone, Copy)]
struct Capsule {
    a: (f64, f64),
    b: (f64, f64),
    radius: f64,
    shade: f64,
}

/// Joint angles measured from straight down, positive towards the facing side.
#[derive(Debug, Clone, Copy, Default)]
struct Pose {
    lean: f64,
    hip: [f64; 2],
    knee: [f64; 2],
    shoulder: [f64; 2],
    elbow: [f64; 2],
    lift: f64,
}

fn pose(activity: usize, t: f64, style: &ClipStyle, actor: &ActorProfile) -> Pose {
    let p = 2.0 * PI * t / style.period + style.phase;
    let a = style.amplitude;
    let s = 0.5 * (1.0 - p.cos());
    match activity {
        0 => {
            let swing = 0.45 * a * p.sin();
            let arm = 0.5 * a * (p + actor.gait_phase_offset).sin();
            Pose {
                lean: 0.05,
                hip: [swing, -swing],
                knee: [0.35 + 0.3 * (p + PI / 2.0).sin(), 0.35 - 0.3 * (p + PI / 2.0).sin()],
                shoulder: [-arm, arm],
                elbow: [0.3, 0.3],
                lift: 0.0,
            }
        }
        1 => Pose {
            lean: 0.0,
            hip: [0.06, -0.06],
            knee: [0.05, 0.05],
            shoulder: [2.5 + 0.15 * a * p.sin(), 0.12],
            elbow: [0.6 * a * (p + actor.gait_phase_offset).sin(), 0.15],
            lift: 0.0,
        },
        2 => Pose {
            lean: 0.35 * a * s,
            hip: [1.25 * a * s, 1.15 * a * s],
            knee: [2.2 * a * s, 2.1 * a * s],
            shoulder: [1.3 * a * s, 1.2 * a * s],
            elbow: [0.2, 0.2],
            lift: 0.0,
        },
        _ => {
            let up = p.sin().max(0.0);
            Pose {
                lean: 0.1 * s,
                hip: [0.6 * a * s, 0.5 * a * s],
                knee: [1.1 * a * s, 1.0 * a * s],
                shoulder: [2.6 * up * a + 0.2, 2.4 * up * a + 0.2],
                elbow: [0.2, 0.2],
                lift: 0.12 * a * up,
            }
        }
    }
}

/// Capsules of one frame in draw order plus the head disk `(center, radius)`.
fn skeleton(actor: &ActorProfile, pose: &Pose, style: &ClipStyle, t: f64, size: (usize, usize)) -> (Vec<Capsule>, (f64, f64), f64) {
    let (h, _) = size;
    let l = &actor.limb_lengths;
    let neck = 0.02;
    let standing = 2.0 * l[1] + neck + l[2] + l[3] + l[4];
    let k = l[0] * h as f64 / standing;
    let (head_r, torso, ul, ll, ua, fa) = (l[1] * k, l[2] * k, l[3] * k, l[4] * k, l[5] * k, l[6] * k);
    let radius = (0.5 * l[7] * l[0] * h as f64).max(1.0);
    let f = style.facing;
    let dir = |theta: f64| (f * theta.sin(), theta.cos());
    let add = |p: (f64, f64), d: (f64, f64), len: f64| (p.0 + d.0 * len, p.1 + d.1 * len);

    let walk_dx = if style.period > 0.0 { 0.35 * f * t } else { 0.0 };
    let hip = (style.center_x + walk_dx, 0.0);
    let up = (f * pose.lean.sin(), -pose.lean.cos());
    let neck_pt = add(hip, up, torso);
    let head = add(neck_pt, up, head_r + neck * k);
    let shoulder = add(neck_pt, (-up.0, -up.1), 0.08 * torso);
    let mut legs = Vec::new();
    for side in 0..2 {
        let knee = add(hip, dir(pose.hip[side]), ul);
        let ankle = add(knee, dir(pose.hip[side] - pose.knee[side]), ll);
        legs.push((knee, ankle));
    }
    let mut arms = Vec::new();
    for side in 0..2 {
        let elbow = add(shoulder, dir(pose.shoulder[side]), ua);
        let wrist = add(elbow, dir(pose.shoulder[side] + pose.elbow[side]), fa);
        arms.push((elbow, wrist));
    }
    // Stand the lowest foot on the ground line, then apply any jump lift.
    let ground = 0.95 * h as f64;
    let lowest = legs.iter().map(|(_, a)| a.1).fold(f64::MIN, f64::max) + radius;
    let dy = ground - lowest - pose.lift * l[0] * h as f64;
    let sh = |p: (f64, f64)| (p.0, p.1 + dy);

    let mut caps = Vec::new();
    // Far limbs first, darker.
    caps.push(Capsule { a: sh(hip), b: sh(legs[1].0), radius, shade: 0.7 });
    caps.push(Capsule { a: sh(legs[1].0), b: sh(legs[1].1), radius, shade: 0.7 });
    caps.push(Capsule { a: sh(shoulder), b: sh(arms[1].0), radius, shade: 0.7 });
    caps.push(Capsule { a: sh(arms[1].0), b: sh(arms[1].1), radius, shade: 0.7 });
    caps.push(Capsule { a: sh(hip), b: sh(neck_pt), radius: 1.6 * radius, shade: 1.0 });
    caps.push(Capsule { a: sh(hip), b: sh(legs[0].0), radius, shade: 0.85 });
    caps.push(Capsule { a: sh(legs[0].0), b: sh(legs[0].1), radius, shade: 0.85 });
    caps.push(Capsule { a: sh(shoulder), b: sh(arms[0].0), radius, shade: 0.85 });
    caps.push(Capsule { a: sh(arms[0].0), b: sh(arms[0].1), radius, shade: 0.85 });
    (caps, sh(head), head_r)
}

fn seg_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    dx * dx + dy * dy
}

/// Writes `shade` into `canvas` for pixels whose center lies within the capsule.
fn draw_capsule(canvas: &mut [f32], mask: &mut [bool], size: (usize, usize), cap: &Capsule) {
    let (h, w) = size;
    let r = cap.radius;
    let x0 = (cap.a.0.min(cap.b.0) - r).floor().max(0.0) as usize;
    let x1 = ((cap.a.0.max(cap.b.0) + r).ceil().max(0.0) as usize).min(w.saturating_sub(1));
    let y0 = (cap.a.1.min(cap.b.1) - r).floor().max(0.0) as usize;
    let y1 = ((cap.a.1.max(cap.b.1) + r).ceil().max(0.0) as usize).min(h.saturating_sub(1));
    for y in y0..=y1 {
        for x in x0..=x1 {
            if seg_dist2((x as f64 + 0.5, y as f64 + 0.5), cap.a, cap.b) <= r * r {
                canvas[y * w + x] = cap.shade as f32;
                mask[y * w + x] = true;
            }
        }
    }
}

struct RenderedClip {
    rgb: VideoClip,
    silhouette: VideoClip,
    boxes: Vec<FaceBox>,
}

fn render_clip(actor: &ActorProfile, activity: usize, style: &ClipStyle, frames: usize, size: (usize, usize)) -> Result<RenderedClip> {
    let (h, w) = size;
    let mut rgb = Array4::<f32>::zeros((frames, 3, h, w));
    let mut sil = Array4::<f32>::zeros((frames, 1, h, w));
    let mut boxes = Vec::with_capacity(frames);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(style.noise_seed);
    let noise = Uniform::new_inclusive(-0.03f32, 0.03);
    for fi in 0..frames {
        let t = fi as f64;
        let p = pose(activity, t, style, actor);
        let (caps, head_c, head_r) = skeleton(actor, &p, style, t, size);
        let mut shade = vec![0f32; h * w];
        let mut mask = vec![false; h * w];
        for cap in &caps {
            draw_capsule(&mut shade, &mut mask, size, cap);
        }
        draw_capsule(&mut shade, &mut mask, size, &Capsule { a: head_c, b: head_c, radius: head_r, shade: 0.9 });
        let bx0 = (head_c.0 - head_r).floor().max(0.0) as i64;
        let by0 = (head_c.1 - head_r).floor().max(0.0) as i64;
        let bx1 = ((head_c.0 + head_r).ceil() as i64).min(w as i64);
        let by1 = ((head_c.1 + head_r).ceil() as i64).min(h as i64);
        boxes.push(FaceBox { frame: fi, x: bx0, y: by0, w: (bx1 - bx0).max(1), h: (by1 - by0).max(1) });
        let mut frame = rgb.index_axis_mut(Axis(0), fi);
        for c in 0..3 {
            let mut plane = frame.index_axis_mut(Axis(0), c);
            let col = actor.clothing_color[c] as f32;
            let bg = style.background[c] as f32;
            for (i, v) in plane.iter_mut().enumerate() {
                *v = if mask[i] {
                    shade[i] * col
                } else {
                    (bg + noise.sample(&mut noise_rng)).clamp(0.0, 1.0)
                };
            }
        }
        for (v, &m) in sil.index_axis_mut(Axis(0), fi).iter_mut().zip(&mask) {
            *v = if m { 1.0 } else { 0.0 };
        }
    }
    Ok(RenderedClip { rgb: VideoClip::new(rgb)?, silhouette: VideoClip::new(sil)?, boxes })
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// Largest absolute correlation between actor index and a clothing color channel.
pub fn identity_color_correlation(actors: &[ActorProfile]) -> f64 {
    let ids: Vec<f64> = (0..actors.len()).map(|i| i as f64).collect();
    (0..3)
        .map(|c| {
            let ch: Vec<f64> = actors.iter().map(|a| a.clothing_color[c]).collect();
            pearson(&ids, &ch).abs()
        })
        .fold(0.0, f64::max)
}

/// Draws actors whose normalized proportions are pairwise at least `δ` apart,
/// with evenly spread, saturated clothing hues assigned independently of index.
pub fn sample_actors(cfg: &SyntheticWorldConfig) -> Result<Vec<ActorProfile>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xac70_5eed);
    let mut actors: Vec<ActorProfile> = Vec::with_capacity(cfg.num_actors);
    let mut attempts = 0;
    while actors.len() < cfg.num_actors {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Config(format!(
                "could not place {} actors at separation {}",
                cfg.num_actors, cfg.identity_separation
            )));
        }
        let mut limbs = [0.0; 8];
        for (i, (lo, hi)) in LIMB_RANGES.iter().enumerate() {
            limbs[i] = rng.gen_range(*lo..=*hi);
        }
        let cand = ActorProfile { limb_lengths: limbs, gait_phase_offset: rng.gen_range(0.0..PI / 2.0), clothing_color: [0.0; 3] };
        if actors.iter().all(|a| a.separation(&cand) >= cfg.identity_separation) {
            actors.push(cand);
        }
    }
    let n = cfg.num_actors;
    let colors: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let hue = (i as f64 + rng.gen_range(0.0..0.3)) / n as f64;
            let (r, g, b) = hsv_to_rgb(hue, rng.gen_range(0.65..1.0), rng.gen_range(0.7..1.0));
            [r, g, b]
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = (f64::INFINITY, order.clone());
    for _ in 0..2000 {
        order.shuffle(&mut rng);
        for (a, &c) in actors.iter_mut().zip(&order) {
            a.clothing_color = colors[c];
        }
        let corr = identity_color_correlation(&actors);
        if corr < best.0 {
            best = (corr, order.clone());
        }
        if corr < 0.1 {
            break;
        }
    }
    for (a, &c) in actors.iter_mut().zip(&best.1) {
        a.clothing_color = colors[c];
    }
    Ok(actors)
}

fn clip_style(rng: &mut ChaCha8Rng, clip_index: usize, activity: usize, size: (usize, usize)) -> ClipStyle {
    let bg_hue = rng.gen_range(0.0..1.0);
    let (r, g, b) = hsv_to_rgb(bg_hue, rng.gen_range(0.0..0.35), rng.gen_range(0.15..0.85));
    let period = match activity {
        0 => rng.gen_range(11.0..14.0),
        1 => rng.gen_range(7.0..10.0),
        2 => rng.gen_range(14.0..18.0),
        _ => rng.gen_range(10.0..13.0),
    };
    ClipStyle {
        facing: if clip_index % 2 == 0 { 1.0 } else { -1.0 },
        center_x: size.1 as f64 * rng.gen_range(0.4..0.6),
        phase: rng.gen_range(0.0..2.0 * PI),
        period,
        amplitude: rng.gen_range(0.85..1.15),
        background: [r, g, b],
        noise_seed: rng.gen(),
    }
}

pub fn video_uri(actor: usize, activity: usize, clip: usize) -> String {
    format!("videos/a{actor:03}_{}_{clip:02}.clip", ACTIVITY_NAMES[activity])
}

pub fn silhouette_uri(actor: usize, activity: usize, clip: usize) -> String {
    format!("silhouettes/a{actor:03}_{}_{clip:02}.clip", ACTIVITY_NAMES[activity])
}

/// Renders every (actor, activity, clip) triple. The first half of the actors
/// (rounded up) form the training split.
pub fn generate_world(cfg: &SyntheticWorldConfig) -> Result<SyntheticWorld> {
    cfg.validate()?;
    let actors = sample_actors(cfg)?;
    let train_actors = cfg.num_actors.div_ceil(2);
    let mut store = MemoryStore::new();
    let mut records = Vec::new();
    for (ai, actor) in actors.iter().enumerate() {
        for act in 0..cfg.num_activities {
            for k in 0..cfg.clips_per_pair {
                let key = ((ai as u64) << 40) ^ ((act as u64) << 20) ^ k as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ key);
                let style = clip_style(&mut rng, k, act, cfg.frame_size);
                let clip = render_clip(actor, act, &style, cfg.frames_per_clip, cfg.frame_size)?;
                let (v, s) = (video_uri(ai, act, k), silhouette_uri(ai, act, k));
                store.insert(v.clone(), &clip.rgb);
                store.insert(s.clone(), &clip.silhouette);
                store.insert_boxes(v.clone(), clip.boxes);
                records.push(SampleRecord {
                    video_uri: v,
                    silhouette_uri: Some(s),
                    actor_id: ai as u32,
                    activity_id: act as u32,
                    view_id: Some((k % 2) as u32),
                    split: if ai < train_actors { Split::Train } else { Split::Test },
                });
            }
        }
    }
    Ok(SyntheticWorld { config: cfg.clone(), manifest: DatasetManifest::new(records)?, store, actors })
}

impl SyntheticWorld {
    /// Writes archives, face-box sidecars, `manifest.tsv` and `actors.tsv` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("videos"))?;
        fs::create_dir_all(dir.join("silhouettes"))?;
        for r in &self.manifest.records {
            let vpath = dir.join(&r.video_uri);
            fs::write(&vpath, self.store.raw(&r.video_uri).ok_or_else(|| Error::Missing(r.video_uri.clone()))?)?;
            if let Some(s) = &r.silhouette_uri {
                fs::write(dir.join(s), self.store.raw(s).ok_or_else(|| Error::Missing(s.clone()))?)?;
            }
            if let Some(b) = self.store.boxes_of(&r.video_uri) {
                fs::write(face_box_sidecar(&vpath), format_face_boxes(b))?;
            }
        }
        self.manifest.save(dir.join("manifest.tsv"))?;
        let mut actors = String::from("# actor\tstature\thead\ttorso\tupper_leg\tlower_leg\tupper_arm\tforearm\tthickness\tr\tg\tb\n");
        for (i, a) in self.actors.iter().enumerate() {
            let cols: Vec<String> = a.limb_lengths.iter().chain(a.clothing_color.iter()).map(|v| format!("{v:.4}")).collect();
            actors.push_str(&format!("{i}\t{}\n", cols.join("\t")));
        }
        fs::write(dir.join("actors.tsv"), actors)?;
        Ok(())
    }

    /// A copy in which every test clip's figure wears the clothing color of a
    /// test actor drawn uniformly at random per clip, so color carries no
    /// identity information on the test split.
    pub fn confounded(&self, seed: u64) -> Result<SyntheticWorld> {
        let test_actors: Vec<usize> = self.manifest.by_actor(Split::Test).keys().map(|&a| a as usize).collect();
        if test_actors.is_empty() {
            return Err(Error::Missing("world has no test actors".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0_4f0d);
        let mut out = self.clone();
        for r in self.manifest.split(Split::Test) {
            let donor = test_actors[rng.gen_range(0..test_actors.len())];
            let rgb = crate::datapipe::decode_archive(self.store.raw(&r.video_uri).ok_or_else(|| Error::Missing(r.video_uri.clone()))?)?;
            let sil_uri = r.silhouette_uri.as_deref().ok_or_else(|| Error::Missing(format!("silhouette of {}", r.video_uri)))?;
            let sil = crate::datapipe::decode_archive(self.store.raw(sil_uri).ok_or_else(|| Error::Missing(sil_uri.into()))?)?;
            let recolored = recolor_actor(&rgb, &sil, self.actors[donor].clothing_color)?;
            out.store.insert(r.video_uri.clone(), &recolored);
        }
        Ok(out)
    }
}

/// Replaces the figure's color: each foreground pixel keeps its relative
/// shading (its max channel over the frame's brightest foreground max channel)
/// and takes `new_color` scaled by that shading. Background pixels are copied.
pub fn recolor_actor(clip: &VideoClip, mask: &VideoClip, new_color: [f64; 3]) -> Result<VideoClip> {
    let (n, c, h, w) = clip.dim();
    if c != 3 {
        return Err(Error::Shape(format!("recoloring needs an RGB clip, got C={c}")));
    }
    if mask.dim() != (n, 1, h, w) {
        return Err(Error::Shape(format!("mask {:?} does not match clip {:?}", mask.dim(), clip.dim())));
    }
    if new_color.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(format!("color {new_color:?} outside [0, 1]")));
    }
    let mut out = clip.frames().clone();
    for f in 0..n {
        let fg = |y: usize, x: usize| mask.frames()[[f, 0, y, x]] >= 0.5;
        let maxc = |y: usize, x: usize| (0..3).map(|ch| clip.frames()[[f, ch, y, x]]).fold(0f32, f32::max);
        let mut peak = 0f32;
        for y in 0..h {
            for x in 0..w {
                if fg(y, x) {
                    peak = peak.max(maxc(y, x));
                }
            }
        }
        if peak <= 0.0 {
            continue;
        }
        for y in 0..h {
            for x in 0..w {
                if fg(y, x) {
                    let shade = maxc(y, x) / peak;
                    for ch in 0..3 {
                        out[[f, ch, y, x]] = shade * new_color[ch] as f32;
                    }
                }
            }
        }
    }
    Ok(VideoClip::from_clamped(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmentation::rgb_to_hsv;
    use crate::datapipe::VideoStore;

    fn small() -> SyntheticWorldConfig {
        SyntheticWorldConfig { num_actors: 4, num_activities: 4, clips_per_pair: 2, frames_per_clip: 6, seed: 3, ..Default::default() }
    }

    #[test]
    fn row_count_and_split() {
        let cfg = SyntheticWorldConfig { num_actors: 20, num_activities: 4, clips_per_pair: 5, frames_per_clip: 2, ..Default::default() };
        let w = generate_world(&cfg).unwrap();
        assert_eq!(w.manifest.records.len(), 400);
        assert_eq!(w.manifest.by_actor(Split::Train).len(), 10);
        assert_eq!(w.manifest.by_actor(Split::Test).len(), 10);
        assert!(identity_color_correlation(&w.actors) < 0.1);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_world(&small()).unwrap();
        let b = generate_world(&small()).unwrap();
        for r in &a.manifest.records {
            assert_eq!(a.store.raw(&r.video_uri), b.store.raw(&r.video_uri));
        }
    }

    #[test]
    fn silhouettes_nonempty_and_match_figure() {
        let w = generate_world(&small()).unwrap();
        for r in &w.manifest.records {
            let sil = w.store.silhouette(r.silhouette_uri.as_deref().unwrap()).unwrap();
            for f in 0..sil.len() {
                assert!(sil.frame(f).iter().any(|v| *v > 0.5), "{} frame {f}", r.video_uri);
            }
        }
    }

    #[test]
    fn actors_are_separated_and_centroid_separable() {
        let w = generate_world(&SyntheticWorldConfig { frames_per_clip: 1, clips_per_pair: 1, ..Default::default() }).unwrap();
        for (i, a) in w.actors.iter().enumerate() {
            for b in &w.actors[i + 1..] {
                assert!(a.separation(b) >= 0.35);
            }
            let nearest = (0..w.actors.len())
                .min_by(|&x, &y| a.separation(&w.actors[x]).total_cmp(&a.separation(&w.actors[y])))
                .unwrap();
            assert_eq!(nearest, i);
        }
    }

    #[test]
    fn recolor_contracts() {
        let w = generate_world(&small()).unwrap();
        let r = &w.manifest.records[5];
        let rgb = w.store.rgb(&r.video_uri).unwrap();
        let sil = w.store.silhouette(r.silhouette_uri.as_deref().unwrap()).unwrap();
        let own = w.actors[r.actor_id as usize].clothing_color;
        let same = recolor_actor(&rgb, &sil, own).unwrap();
        for (a, b) in same.frames().iter().zip(rgb.frames().iter()) {
            assert!((a - b).abs() <= 1.5 / 255.0);
        }
        let new = [0.1, 0.8, 0.3];
        let out = recolor_actor(&rgb, &sil, new).unwrap();
        let (mut hue_sum, mut count) = (0.0, 0.0);
        let (n, _, h, wd) = rgb.dim();
        for f in 0..n {
            for y in 0..h {
                for x in 0..wd {
                    let px = |c: &VideoClip, ch| c.frames()[[f, ch, y, x]];
                    if sil.frames()[[f, 0, y, x]] > 0.5 {
                        hue_sum += rgb_to_hsv(px(&out, 0) as f64, px(&out, 1) as f64, px(&out, 2) as f64).0;
                        count += 1.0;
                    } else {
                        for ch in 0..3 {
                            assert_eq!(px(&out, ch), px(&rgb, ch));
                        }
                    }
                }
            }
        }
        let target = rgb_to_hsv(new[0], new[1], new[2]).0;
        assert!((hue_sum / count - target).abs() < 0.02);
    }

    #[test]
    fn recolor_rejects_mismatched_mask() {
        let clip = VideoClip::zeros(2, 3, 16, 16).unwrap();
        let mask = VideoClip::zeros(2, 1, 16, 8).unwrap();
        assert!(recolor_actor(&clip, &mask, [0.5; 3]).is_err());
    }

    #[test]
    fn confounded_world_changes_only_test_clips() {
        let w = generate_world(&small()).unwrap();
        let c = w.confounded(1).unwrap();
        for r in &w.manifest.records {
            let same = w.store.raw(&r.video_uri) == c.store.raw(&r.video_uri);
            if r.split == Split::Train {
                assert!(same);
            }
        }
    }
}
