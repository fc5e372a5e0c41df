//! The joint training loop: biometric, activity, distillation and distortion
//! losses over P×K batches, with a step-decayed Adam schedule.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::augmentation::{elastic_distort, face_blur, hue_shift, make_elastic_field, AugmentationConfig, Interpolation};
use crate::checkpoint::{save_student, save_teacher, CheckpointMeta, Role};
use crate::clip::VideoClip;
use crate::datapipe::{
    make_batches, BatchSpec, ClipLoader, DatasetManifest, MemoryStore, ProtocolSplit, SampleRecord, VideoStore,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, FeatureKind, MetricsReport};
use crate::losses::{
    batch_hard_mine_grad, distortion_loss_grad, kd_loss_grad, mean_cross_entropy_grad, LossComponents, LossReport,
    LossWeights, TeacherStudentLogits,
};
use crate::model::{pretrain_teacher, FeatureBundle, MainGrads, ModelConfig, Student, Teacher, TeacherSchedule};
use crate::nn::{clip_global_norm, zeros_like, Adam};

const FIELD_SALT: u64 = 0xe1a5_71c0_f1e1_d000;
const HUE_SALT: u64 = 0x4e3a_9d2b_77c1_0f05;
/// Running-statistics momentum for the feature necks.
const STAT_MOMENTUM: f32 = 0.1;

/// What the distillation term compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KdTarget {
    /// Teacher identity logits against student identity logits.
    Logits,
    /// Teacher feature `F_S` against `f_bb`, both read as logits.
    Features,
}

impl FromStr for KdTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logits" => Ok(Self::Logits),
            "features" => Ok(Self::Features),
            other => Err(Error::Config(format!("unknown kd_target {other:?}"))),
        }
    }
}

impl std::fmt::Display for KdTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Logits => "logits",
            Self::Features => "features",
        })
    }
}

/// Components that can be switched off one at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Kd,
    Dis,
    Activity,
    Prior,
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kd" => Ok(Self::Kd),
            "dis" => Ok(Self::Dis),
            "activity" => Ok(Self::Activity),
            "prior" => Ok(Self::Prior),
            other => Err(Error::Config(format!("unknown ablation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Paper,
    Desk,
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub lr_decay_factor: f32,
    /// Epochs per decay step; 0 disables decay.
    pub lr_decay_every: usize,
    pub margin: f64,
    /// λ1.
    pub lambda_activity: f64,
    /// λ2.
    pub lambda_kd: f64,
    /// λ3.
    pub lambda_dis: f64,
    pub temperature: f64,
    pub augmentation: AugmentationConfig,
    /// Bound of an extra per-clip hue rotation, drawn uniformly from
    /// `[-hue_jitter, hue_jitter]` turns, applied to training clips only;
    /// 0 disables it.
    pub hue_jitter: f64,
    /// Score the distortion hinge on L2-normalized features, the space
    /// retrieval ranks in, where the fixed margin is a sizeable share of the
    /// distance range.
    pub dis_unit: bool,
    /// P identities per batch.
    pub persons: usize,
    /// K clips per identity.
    pub clips_per_person: usize,
    pub seed: u64,
    pub frame_stride: usize,
    pub grad_clip: f64,
    /// Save a checkpoint every this many epochs; 0 saves only the final one.
    pub checkpoint_every: usize,
    pub kd_target: KdTarget,
    /// Concatenate `F_Ac` to `f_bb` at retrieval time.
    pub activity_prior: bool,
    pub teacher_epochs: usize,
    pub teacher_learning_rate: f32,
    pub teacher_batch_size: usize,
    /// Identity and activity counts are overwritten from the manifest by [`fit`].
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    /// The full recipe at full resolution.
    pub fn paper() -> Self {
        Self {
            learning_rate: 3.5e-4,
            weight_decay: 5e-4,
            epochs: 150,
            lr_decay_factor: 0.1,
            lr_decay_every: 40,
            margin: 0.3,
            lambda_activity: 0.01,
            lambda_kd: 0.01,
            lambda_dis: 0.01,
            temperature: 4.0,
            augmentation: AugmentationConfig::default(),
            hue_jitter: 0.0,
            dis_unit: false,
            persons: 8,
            clips_per_person: 4,
            seed: 0,
            frame_stride: 2,
            grad_clip: 10.0,
            checkpoint_every: 0,
            kd_target: KdTarget::Logits,
            activity_prior: true,
            teacher_epochs: 30,
            teacher_learning_rate: 1e-3,
            teacher_batch_size: 16,
            model: ModelConfig::paper(1, 1),
        }
    }

    /// Small model and short schedule for a single CPU core.
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 40,
            lr_decay_every: 30,
            lambda_activity: 1.0,
            lambda_kd: 1.0,
            lambda_dis: 10.0,
            augmentation: AugmentationConfig { alpha: 1000.0, ..AugmentationConfig::default() },
            hue_jitter: 0.5,
            dis_unit: true,
            teacher_epochs: 10,
            model: ModelConfig::desk(1, 1),
            ..Self::paper()
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    pub fn ablate(&mut self, a: Ablation) {
        match a {
            Ablation::Kd => self.lambda_kd = 0.0,
            Ablation::Dis => self.lambda_dis = 0.0,
            Ablation::Activity => self.lambda_activity = 0.0,
            Ablation::Prior => self.activity_prior = false,
        }
    }

    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.lambda_activity, self.lambda_kd, self.lambda_dis)
    }

    pub fn feature_kind(&self) -> FeatureKind {
        FeatureKind::with_prior(self.activity_prior)
    }

    /// Learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f32 {
        if self.lr_decay_every == 0 {
            return self.learning_rate;
        }
        self.learning_rate * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights()?;
        self.augmentation.validate()?;
        let positive = [
            ("learning_rate", self.learning_rate as f64),
            ("lr_decay_factor", self.lr_decay_factor as f64),
            ("temperature", self.temperature),
            ("grad_clip", self.grad_clip),
            ("teacher_learning_rate", self.teacher_learning_rate as f64),
        ];
        if let Some((k, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("{k} must be positive, got {v}")));
        }
        if !(self.weight_decay >= 0.0) || !(self.margin >= 0.0) {
            return Err(Error::Config("weight_decay and margin must be non-negative".into()));
        }
        if self.persons < 2 || self.clips_per_person < 2 {
            return Err(Error::Config("batch-hard mining needs persons >= 2 and clips_per_person >= 2".into()));
        }
        if !(0.0..=0.5).contains(&self.hue_jitter) {
            return Err(Error::Config(format!("hue_jitter {} must lie in [0, 0.5]", self.hue_jitter)));
        }
        if self.frame_stride == 0 || self.teacher_batch_size == 0 {
            return Err(Error::Config("frame_stride and teacher_batch_size must be positive".into()));
        }
        if self.kd_target == KdTarget::Features && self.model.teacher_dim != self.model.biometric_dim {
            return Err(Error::Config("feature distillation needs teacher_dim == biometric_dim".into()));
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped; unknown keys are errors.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { path: origin.to_path_buf(), line: n + 1, message };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            self.set(k.trim(), v.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>, base: Profile) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::for_profile(base);
        cfg.apply_text(&fs::read_to_string(path)?, path)?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        fn list(key: &str, v: &str) -> Result<Vec<usize>> {
            v.split(',').map(|x| num(key, x.trim())).collect()
        }
        let m = &mut self.model;
        match key {
            "learning_rate" => self.learning_rate = num(key, v)?,
            "weight_decay" => self.weight_decay = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "lr_decay_factor" => self.lr_decay_factor = num(key, v)?,
            "lr_decay_every" => self.lr_decay_every = num(key, v)?,
            "margin" => self.margin = num(key, v)?,
            "lambda_activity" => self.lambda_activity = num(key, v)?,
            "lambda_kd" => self.lambda_kd = num(key, v)?,
            "lambda_dis" => self.lambda_dis = num(key, v)?,
            "temperature" => self.temperature = num(key, v)?,
            "alpha" => self.augmentation.alpha = num(key, v)?,
            "sigma" => self.augmentation.sigma = num(key, v)?,
            "hue_delta" => self.augmentation.hue_delta = num(key, v)?,
            "blur_kernel" => self.augmentation.blur_kernel = num(key, v)?,
            "interpolation" => self.augmentation.interpolation = v.parse::<Interpolation>()?,
            "hue_jitter" => self.hue_jitter = num(key, v)?,
            "dis_unit" => self.dis_unit = num(key, v)?,
            "persons" => self.persons = num(key, v)?,
            "clips_per_person" => self.clips_per_person = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "frame_stride" => self.frame_stride = num(key, v)?,
            "grad_clip" => self.grad_clip = num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "kd_target" => self.kd_target = v.parse()?,
            "activity_prior" => self.activity_prior = num(key, v)?,
            "teacher_epochs" => self.teacher_epochs = num(key, v)?,
            "teacher_learning_rate" => self.teacher_learning_rate = num(key, v)?,
            "teacher_batch_size" => self.teacher_batch_size = num(key, v)?,
            "frames" => m.frames = num(key, v)?,
            "height" => m.height = num(key, v)?,
            "width" => m.width = num(key, v)?,
            "channels" => m.channels = list(key, v)?,
            "stem_kernel" => {
                m.stem_kernel = list(key, v)?
                    .try_into()
                    .map_err(|_| Error::Config("stem_kernel needs three entries".into()))?
            }
            "embed_dim" => m.embed_dim = num(key, v)?,
            "split_ratio" => m.split_ratio = num(key, v)?,
            "decoder_layers" => m.decoder_layers = num(key, v)?,
            "decoder_heads" => m.decoder_heads = num(key, v)?,
            "decoder_tokens" => m.decoder_tokens = num(key, v)?,
            "decoder_width" => m.decoder_width = num(key, v)?,
            "biometric_dim" => m.biometric_dim = num(key, v)?,
            "appearance_dim" => m.appearance_dim = num(key, v)?,
            "activity_dim" => m.activity_dim = num(key, v)?,
            "teacher_dim" => m.teacher_dim = num(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Every settable key; `apply_text(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let a = &self.augmentation;
        let m = &self.model;
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let interp = match a.interpolation {
            Interpolation::Bilinear => "bilinear",
            Interpolation::Nearest => "nearest",
        };
        let mut s = String::new();
        let lines: Vec<(&str, String)> = vec![
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("epochs", self.epochs.to_string()),
            ("lr_decay_factor", format!("{:?}", self.lr_decay_factor)),
            ("lr_decay_every", self.lr_decay_every.to_string()),
            ("margin", format!("{:?}", self.margin)),
            ("lambda_activity", format!("{:?}", self.lambda_activity)),
            ("lambda_kd", format!("{:?}", self.lambda_kd)),
            ("lambda_dis", format!("{:?}", self.lambda_dis)),
            ("temperature", format!("{:?}", self.temperature)),
            ("alpha", format!("{:?}", a.alpha)),
            ("sigma", format!("{:?}", a.sigma)),
            ("hue_delta", format!("{:?}", a.hue_delta)),
            ("blur_kernel", a.blur_kernel.to_string()),
            ("interpolation", interp.to_string()),
            ("hue_jitter", format!("{:?}", self.hue_jitter)),
            ("dis_unit", self.dis_unit.to_string()),
            ("persons", self.persons.to_string()),
            ("clips_per_person", self.clips_per_person.to_string()),
            ("seed", self.seed.to_string()),
            ("frame_stride", self.frame_stride.to_string()),
            ("grad_clip", format!("{:?}", self.grad_clip)),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("kd_target", self.kd_target.to_string()),
            ("activity_prior", self.activity_prior.to_string()),
            ("teacher_epochs", self.teacher_epochs.to_string()),
            ("teacher_learning_rate", format!("{:?}", self.teacher_learning_rate)),
            ("teacher_batch_size", self.teacher_batch_size.to_string()),
            ("frames", m.frames.to_string()),
            ("height", m.height.to_string()),
            ("width", m.width.to_string()),
            ("channels", join(&m.channels)),
            ("stem_kernel", join(&m.stem_kernel)),
            ("embed_dim", m.embed_dim.to_string()),
            ("split_ratio", format!("{:?}", m.split_ratio)),
            ("decoder_layers", m.decoder_layers.to_string()),
            ("decoder_heads", m.decoder_heads.to_string()),
            ("decoder_tokens", m.decoder_tokens.to_string()),
            ("decoder_width", m.decoder_width.to_string()),
            ("biometric_dim", m.biometric_dim.to_string()),
            ("appearance_dim", m.appearance_dim.to_string()),
            ("activity_dim", m.activity_dim.to_string()),
            ("teacher_dim", m.teacher_dim.to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn teacher_schedule(&self) -> TeacherSchedule {
        TeacherSchedule {
            learning_rate: self.teacher_learning_rate,
            batch_size: self.teacher_batch_size,
            frame_stride: self.frame_stride,
            weight_decay: self.weight_decay,
            ..TeacherSchedule::new(self.teacher_epochs, self.seed)
        }
    }

    /// `model` with identity and activity counts taken from `manifest`.
    pub fn model_for(&self, manifest: &DatasetManifest) -> ModelConfig {
        let mut m = self.model.clone();
        m.num_actors = manifest.train_classes().len();
        m.num_activities = manifest.records.iter().map(|r| r.activity_id as usize + 1).max().unwrap_or(1);
        m
    }
}

/// A stable per-record seed, so evaluation clips do not depend on ordering.
pub fn clip_seed_for(uri: &str) -> u64 {
    let d = Sha256::digest(uri.as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Applies the fixed hue rotation and face blur to every video of
/// `manifest`; silhouettes are copied unchanged.
pub fn prepare_store(manifest: &DatasetManifest, store: &dyn VideoStore, aug: &AugmentationConfig) -> Result<MemoryStore> {
    aug.validate()?;
    let mut out = MemoryStore::new();
    for r in &manifest.records {
        let mut clip = store.rgb(&r.video_uri)?;
        if aug.hue_delta != 0.0 {
            clip = hue_shift(&clip, aug.hue_delta)?;
        }
        let boxes = store.face_boxes(&r.video_uri)?;
        let blurred = face_blur(&clip, &boxes, aug.blur_kernel, aug.blur_sigma())?;
        for w in &blurred.warnings {
            log::warn!("{}: {w}", r.video_uri);
        }
        out.insert(r.video_uri.clone(), &blurred.clip);
        if let Some(s) = &r.silhouette_uri {
            out.insert(s.clone(), &store.silhouette(s)?);
        }
    }
    Ok(out)
}

/// The elastic warp applied to a training clip with the given clip seed.
pub fn distort_for_training(clip: &VideoClip, clip_seed: u64, aug: &AugmentationConfig) -> Result<VideoClip> {
    let field = make_elastic_field(clip.height(), clip.width(), aug.alpha, aug.sigma, clip_seed ^ FIELD_SALT)?;
    elastic_distort(clip, &field, aug.interpolation)
}

/// The per-clip hue rotation of a training clip; identity when `bound` is 0.
pub fn jitter_hue(clip: &VideoClip, clip_seed: u64, bound: f64) -> Result<VideoClip> {
    if bound == 0.0 {
        return Ok(clip.clone());
    }
    let delta = ChaCha8Rng::seed_from_u64(clip_seed ^ HUE_SALT).gen_range(-bound..=bound);
    hue_shift(clip, delta)
}

/// A feature row, optionally projected to the unit sphere, that can carry
/// a gradient back through the projection.
struct UnitRow {
    value: Vec<f64>,
    /// Norm of the input when projected.
    norm: Option<f64>,
}

impl UnitRow {
    fn raw(value: Vec<f64>) -> Self {
        Self { value, norm: None }
    }

    fn new(v: Vec<f64>) -> Self {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        Self { value: v.iter().map(|x| x / norm).collect(), norm: Some(norm) }
    }

    fn backward(&self, g: &[f64]) -> Vec<f64> {
        match self.norm {
            None => g.to_vec(),
            Some(n) => {
                let dot: f64 = self.value.iter().zip(g).map(|(u, g)| u * g).sum();
                self.value.iter().zip(g).map(|(u, g)| (g - u * dot) / n).collect()
            }
        }
    }
}

fn to64(a: &Array2<f32>) -> Array2<f64> {
    a.mapv(f64::from)
}

fn to32(a: &Array2<f64>) -> Array2<f32> {
    a.mapv(|v| v as f32)
}

/// Owns the student and optimizer state; borrows the frozen teacher.
pub struct Trainer<'a> {
    pub student: Student,
    teacher: Option<&'a Teacher>,
    optimizer: Adam,
    cfg: TrainConfig,
    weights: LossWeights,
    loader: ClipLoader<'a>,
    classes: BTreeMap<u32, usize>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        student: Student,
        teacher: Option<&'a Teacher>,
        store: &'a dyn VideoStore,
        manifest: &DatasetManifest,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let weights = cfg.weights()?;
        let classes = manifest.train_classes();
        if classes.len() != student.config.num_actors {
            return Err(Error::Config(format!(
                "student has {} identity classes, manifest trains {}",
                student.config.num_actors,
                classes.len()
            )));
        }
        if weights.kd > 0.0 && teacher.is_none() {
            return Err(Error::Config("lambda_kd > 0 needs a teacher".into()));
        }
        let m = &student.config;
        let loader = ClipLoader::new(store, m.frames, cfg.frame_stride, m.height, m.width);
        Ok(Self {
            optimizer: Adam::new(cfg.learning_rate, cfg.weight_decay),
            student,
            teacher,
            cfg: cfg.clone(),
            weights,
            loader,
            classes,
        })
    }


    pub fn set_learning_rate(&mut self, lr: f32) {
        self.optimizer.learning_rate = lr;
    }

    pub fn learning_rate(&self) -> f32 {
        self.optimizer.learning_rate
    }

    /// One optimizer step on `batch`; errors without touching parameters
    /// when any loss or gradient is non-finite.
    pub fn step(&mut self, batch: &BatchSpec) -> Result<LossReport> {
        let w = self.weights;
        let (use_kd, use_dis, use_act) = (w.kd > 0.0, w.distortion > 0.0, w.activity > 0.0);
        let b = batch.entries.len();
        let mut clips = Vec::with_capacity(b);
        let mut silhouettes = Vec::new();
        let mut id_labels = Vec::with_capacity(b);
        let mut act_labels = Vec::with_capacity(b);
        for e in &batch.entries {
            let r = &e.record;
            let clip = if use_kd {
                let (c, s) = self.loader.pair(r, e.clip_seed)?;
                silhouettes.push(s);
                c
            } else {
                self.loader.rgb(r, e.clip_seed)?
            };
            clips.push(jitter_hue(&clip, e.clip_seed, self.cfg.hue_jitter)?);
            id_labels.push(
                *self
                    .classes
                    .get(&r.actor_id)
                    .ok_or_else(|| Error::Config(format!("actor {} is not a training identity", r.actor_id)))?,
            );
            act_labels.push(r.activity_id as usize);
        }
        let actor_ids = batch.actor_ids();
        let refs: Vec<&VideoClip> = clips.iter().collect();
        let model = &self.student;
        let (out, cache) = model.forward_main_train(&refs)?;

        let logits = to64(&out.actor.logits);
        let f_bb = to64(&out.actor.f_bb);
        let (ce, d_ce) = mean_cross_entropy_grad(logits.view(), &id_labels)?;
        let (tri, d_tri) = batch_hard_mine_grad(f_bb.view(), &actor_ids, self.cfg.margin)?;
        let mut d_logits = d_ce;
        let mut d_bb = d_tri;
        let mut c = LossComponents { ce, tri, activity: 0.0, kd: 0.0, dis: 0.0 };

        let mut d_act = None;
        if use_act {
            let (l, g) = mean_cross_entropy_grad(to64(&out.activity.logits).view(), &act_labels)?;
            c.activity = l;
            d_act = Some(to32(&(g * w.activity)));
        }

        if use_kd {
            let teacher = self.teacher.expect("checked in new");
            let srefs: Vec<&VideoClip> = silhouettes.iter().collect();
            let (f_s, t_logits, _) = teacher.forward_train(&srefs)?;
            let (t, s, target) = match self.cfg.kd_target {
                KdTarget::Logits => (to64(&t_logits), logits.clone(), &mut d_logits),
                KdTarget::Features => (to64(&f_s), f_bb.clone(), &mut d_bb),
            };
            for i in 0..b {
                let x = TeacherStudentLogits {
                    teacher: t.row(i).to_slice().expect("row"),
                    student: s.row(i).to_slice().expect("row"),
                    temperature: self.cfg.temperature,
                };
                let (l, g) = kd_loss_grad(&x)?;
                c.kd += l / b as f64;
                for (k, gk) in g.iter().enumerate() {
                    target[[i, k]] += w.kd * gk / b as f64;
                }
            }
        }

        let mut distorted = None;
        if use_dis {
            let warped: Vec<VideoClip> = clips
                .iter()
                .zip(&batch.entries)
                .map(|(c, e)| distort_for_training(c, e.clip_seed, &self.cfg.augmentation))
                .collect::<Result<_>>()?;
            let wrefs: Vec<&VideoClip> = warped.iter().collect();
            let (dout, dcache) = model.forward_distorted_train(&wrefs)?;
            let f_ba = to64(&out.actor.f_ba);
            let (f_bb_d, f_ba_d) = (to64(&dout.actor.f_bb), to64(&dout.actor.f_ba));
            let mut d_ba = Array2::<f64>::zeros(f_ba.raw_dim());
            let mut d_bb_d = Array2::<f64>::zeros(f_bb_d.raw_dim());
            let mut d_ba_d = Array2::<f64>::zeros(f_ba_d.raw_dim());
            let scale = w.distortion / b as f64;
            let unit = self.cfg.dis_unit;
            for i in 0..b {
                let row = |a: &Array2<f64>| {
                    let v = a.row(i).to_vec();
                    if unit { UnitRow::new(v) } else { UnitRow::raw(v) }
                };
                let (ba, ba_d, bb, bb_d) = (row(&f_ba), row(&f_ba_d), row(&f_bb), row(&f_bb_d));
                let (l, g) = distortion_loss_grad(&ba.value, &ba_d.value, &bb.value, &bb_d.value, self.cfg.margin)?;
                c.dis += l / b as f64;
                let (g_bb, g_bb_d) = (bb.backward(&g.f_bb), bb_d.backward(&g.f_bb_d));
                let (g_ba, g_ba_d) = (ba.backward(&g.f_ba), ba_d.backward(&g.f_ba_d));
                for k in 0..g_bb.len() {
                    d_bb[[i, k]] += scale * g_bb[k];
                    d_bb_d[[i, k]] = scale * g_bb_d[k];
                }
                for k in 0..g_ba.len() {
                    d_ba[[i, k]] = scale * g_ba[k];
                    d_ba_d[[i, k]] = scale * g_ba_d[k];
                }
            }
            distorted = Some((dcache, to32(&d_ba), to32(&d_bb_d), to32(&d_ba_d)));
        }

        let report = LossReport::new(c, &w)?;
        if !report.total.is_finite() {
            return Err(Error::NonFinite(format!("training loss: {report:?}")));
        }
        let grads = MainGrads {
            f_bb: Some(to32(&d_bb)),
            f_ba: distorted.as_ref().map(|d| d.1.clone()),
            identity_logits: Some(to32(&d_logits)),
            activity_logits: d_act,
        };
        let mut g = zeros_like(model);
        model.backward_main(&cache, &grads, &mut g);
        if let Some((dcache, _, d_bb_d, d_ba_d)) = &distorted {
            model.backward_distorted(dcache, d_bb_d, d_ba_d, &mut g);
        }
        let norm = clip_global_norm(&mut g, self.cfg.grad_clip);
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm {norm} with losses {report:?}")));
        }
        self.optimizer.step(&mut self.student, &g);
        self.student.update_statistics(&cache, STAT_MOMENTUM);
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub learning_rate: f32,
    pub report: LossReport,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub student: Student,
    pub history: Vec<StepRecord>,
    /// Mean `L_total` per epoch.
    pub epoch_loss: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

impl FitResult {
    pub fn loss_csv(&self) -> String {
        let mut s = format!("{}\n", LossReport::CSV_HEADER);
        for r in &self.history {
            s.push_str(&r.report.csv_row(r.step));
            s.push('\n');
        }
        s
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_add((epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Trains a fresh student on the train split of `manifest`.
///
/// `store` should already be prepared (see [`prepare_store`]). With
/// `out_dir`, checkpoints go to `student_eNNN.ckpt` at the configured
/// interval and `student.ckpt` at the end.
pub fn fit(
    manifest: &DatasetManifest,
    store: &dyn VideoStore,
    cfg: &TrainConfig,
    teacher: Option<&Teacher>,
    out_dir: Option<&Path>,
) -> Result<FitResult> {
    let model_cfg = cfg.model_for(manifest);
    let student = Student::new(model_cfg.clone(), cfg.seed)?;
    let mut trainer = Trainer::new(student, teacher, store, manifest, cfg)?;
    let mut history = Vec::new();
    let mut epoch_loss = Vec::new();
    let mut checkpoints = Vec::new();
    let mut step = 0;
    let save = |student: &Student, epoch: usize, loss: Option<f64>, name: String| -> Result<PathBuf> {
        let dir = out_dir.expect("only called with an output directory");
        let mut meta = CheckpointMeta::new(Role::Student, model_cfg.clone(), epoch, cfg.seed);
        if let Some(l) = loss {
            meta.metrics.insert("epoch_loss".into(), l);
        }
        let path = dir.join(name);
        save_student(&path, student, &meta)?;
        Ok(path)
    };
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        trainer.set_learning_rate(lr);
        let batches = make_batches(manifest, cfg.persons, cfg.clips_per_person, epoch_seed(cfg.seed, epoch))?;
        let mut total = 0.0;
        let mut parts = [0.0f64; 5];
        for batch in &batches {
            let report = trainer.step(batch)?;
            total += report.total;
            for (p, v) in parts.iter_mut().zip([report.ce, report.tri, report.activity, report.kd, report.dis]) {
                *p += v / batches.len() as f64;
            }
            history.push(StepRecord { epoch, step, learning_rate: lr, report });
            step += 1;
        }
        let mean = total / batches.len() as f64;
        log::info!(
            "epoch {epoch}: lr {lr:.2e} loss {mean:.4} (ce {:.3} tri {:.3} act {:.3} kd {:.3} dis {:.3})",
            parts[0],
            parts[1],
            parts[2],
            parts[3],
            parts[4]
        );
        epoch_loss.push(mean);
        if out_dir.is_some() && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            checkpoints.push(save(&trainer.student, epoch + 1, Some(mean), format!("student_e{:03}.ckpt", epoch + 1))?);
        }
    }
    if out_dir.is_some() {
        checkpoints.push(save(&trainer.student, cfg.epochs, epoch_loss.last().copied(), "student.ckpt".into())?);
    }
    Ok(FitResult { student: trainer.student, history, epoch_loss, checkpoints })
}

/// Pretrains a teacher when distillation is on, then fits the student.
pub fn train_with_teacher(
    manifest: &DatasetManifest,
    store: &dyn VideoStore,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(FitResult, Option<Teacher>)> {
    let teacher = if cfg.lambda_kd > 0.0 {
        let model_cfg = cfg.model_for(manifest);
        let (t, report) = pretrain_teacher(manifest, store, &model_cfg, cfg.teacher_schedule())?;
        log::info!("teacher train accuracy {:.3}", report.final_accuracy);
        if let Some(dir) = out_dir {
            let mut meta = CheckpointMeta::new(Role::Teacher, model_cfg, cfg.teacher_epochs, cfg.seed);
            meta.metrics.insert("train_accuracy".into(), report.final_accuracy);
            save_teacher(dir.join("teacher.ckpt"), &t, &meta)?;
        }
        Some(t)
    } else {
        None
    };
    let fit = fit(manifest, store, cfg, teacher.as_ref(), out_dir)?;
    Ok((fit, teacher))
}

/// Main-branch bundles for `records`, each clip drawn with [`clip_seed_for`].
pub fn embed_records(
    student: &Student,
    store: &dyn VideoStore,
    frame_stride: usize,
    records: &[SampleRecord],
    chunk: usize,
) -> Result<Vec<FeatureBundle>> {
    let m = &student.config;
    let loader = ClipLoader::new(store, m.frames, frame_stride, m.height, m.width);
    let mut out = Vec::with_capacity(records.len());
    for part in records.chunks(chunk.max(1)) {
        let clips: Vec<VideoClip> = part
            .iter()
            .map(|r| loader.rgb(r, clip_seed_for(&r.video_uri)))
            .collect::<Result<_>>()?;
        out.extend(student.forward_many(&clips, chunk)?);
    }
    Ok(out)
}

/// Scores a protocol with a trained student.
pub fn evaluate_student(
    student: &Student,
    store: &dyn VideoStore,
    frame_stride: usize,
    protocol: &ProtocolSplit,
    kind: FeatureKind,
) -> Result<MetricsReport> {
    evaluate(protocol, &mut |recs| embed_records(student, store, frame_stride, recs, 16), kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_schedule_multipliers() {
        let c = TrainConfig::paper();
        for (epoch, mult) in [(0, 1.0), (39, 1.0), (40, 0.1), (79, 0.1), (80, 0.01), (119, 0.01), (120, 0.001), (149, 0.001)] {
            let want = 3.5e-4f32 * mult as f32;
            assert!((c.lr_at(epoch) - want).abs() <= want * 1e-5, "epoch {epoch}");
        }
    }

    #[test]
    fn config_text_round_trip() {
        let mut c = TrainConfig::desk();
        c.kd_target = KdTarget::Features;
        c.augmentation.interpolation = Interpolation::Nearest;
        c.model.channels = vec![3, 5, 7];
        let mut back = TrainConfig::paper();
        back.apply_text(&c.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        let mut c = TrainConfig::paper();
        assert!(c.apply_text("learning_rate = 0.1\nbogus = 3\n", Path::new("f")).is_err());
        assert!(c.apply_text("epochs: 3", Path::new("f")).is_err());
        assert!(c.apply_text("epochs = three", Path::new("f")).is_err());
        c.apply_text("# note\n\nepochs = 3 # trailing\n", Path::new("f")).unwrap();
        assert_eq!(c.epochs, 3);
    }

    #[test]
    fn ablations_touch_one_switch() {
        let base = TrainConfig::paper();
        for (a, check) in [
            (Ablation::Kd, (|c: &TrainConfig| c.lambda_kd == 0.0) as fn(&TrainConfig) -> bool),
            (Ablation::Dis, |c| c.lambda_dis == 0.0),
            (Ablation::Activity, |c| c.lambda_activity == 0.0),
            (Ablation::Prior, |c| !c.activity_prior),
        ] {
            let mut c = base.clone();
            c.ablate(a);
            assert!(check(&c));
            let mut restored = c.clone();
            restored.lambda_kd = base.lambda_kd;
            restored.lambda_dis = base.lambda_dis;
            restored.lambda_activity = base.lambda_activity;
            restored.activity_prior = base.activity_prior;
            assert_eq!(restored, base);
        }
    }

    #[test]
    fn validation() {
        let mut c = TrainConfig::paper();
        c.clips_per_person = 1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::paper();
        c.kd_target = KdTarget::Features;
        c.model.teacher_dim = 7;
        assert!(c.validate().is_err());
        assert!(TrainConfig::desk().validate().is_ok());
    }

    #[test]
    fn unit_row_gradient_matches_differences() {
        let x = vec![0.3, -1.2, 2.0, 0.5];
        let w = [0.7, 0.1, -0.4, 1.3];
        let f = |v: &[f64]| UnitRow::new(v.to_vec()).value.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let g = UnitRow::new(x.clone()).backward(&w);
        for k in 0..x.len() {
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[k] += 1e-6;
            dn[k] -= 1e-6;
            assert!((g[k] - (f(&up) - f(&dn)) / 2e-6).abs() < 1e-7);
        }
        assert_eq!(UnitRow::raw(x.clone()).backward(&w), w.to_vec());
    }
}
