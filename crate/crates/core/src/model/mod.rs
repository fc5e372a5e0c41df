//! The student network, its weight-shared distortion branch, and the
//! silhouette teacher.
//!
//! The student encodes an RGB clip to `F_AB`, splits it into an actor segment
//! and an activity segment, and decodes each with its own head. The actor head
//! yields the biometric feature `f_bb` (which alone feeds identity logits) and
//! the appearance feature `f_ba`. The distortion branch is the same network
//! evaluated on warped clips without the activity head, so it shares every
//! parameter by construction.

mod encoder;
mod heads;
mod teacher;

use ndarray::{concatenate, s, Array1, Array2, Array5, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use encoder::{EncoderCache, VideoEncoder};
pub use heads::{ActivityCache, ActivityHead, ActivityOutput, ActorCache, ActorHead, ActorOutput};
pub use teacher::{pretrain_teacher, Teacher, TeacherCache, TeacherPretrainReport, TeacherSchedule};

use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::nn::params_struct;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Encoder widths: the stem followed by one entry per strided stage.
    pub channels: Vec<usize>,
    /// Stem kernel and stride `(t, h, w)`.
    pub stem_kernel: [usize; 3],
    pub embed_dim: usize,
    pub split_ratio: f64,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub decoder_tokens: usize,
    pub decoder_width: usize,
    pub num_actors: usize,
    pub num_activities: usize,
    pub biometric_dim: usize,
    pub appearance_dim: usize,
    pub activity_dim: usize,
    pub teacher_dim: usize,
}

impl ModelConfig {
    /// Full-resolution settings.
    pub fn paper(num_actors: usize, num_activities: usize) -> Self {
        Self {
            frames: 8,
            height: 256,
            width: 128,
            channels: vec![32, 64, 128, 256],
            stem_kernel: [1, 4, 4],
            embed_dim: 256,
            split_ratio: 0.5,
            decoder_layers: 2,
            decoder_heads: 4,
            decoder_tokens: 8,
            decoder_width: 64,
            num_actors,
            num_activities,
            biometric_dim: 128,
            appearance_dim: 128,
            activity_dim: 64,
            teacher_dim: 128,
        }
    }

    /// Small settings that train in about a minute on one CPU core.
    pub fn desk(num_actors: usize, num_activities: usize) -> Self {
        Self {
            frames: 8,
            height: 128,
            width: 64,
            channels: vec![16, 32, 64, 64],
            stem_kernel: [2, 4, 4],
            embed_dim: 128,
            split_ratio: 0.5,
            decoder_layers: 1,
            decoder_heads: 2,
            decoder_tokens: 8,
            decoder_width: 32,
            num_actors,
            num_activities,
            biometric_dim: 64,
            appearance_dim: 64,
            activity_dim: 32,
            teacher_dim: 64,
        }
    }

    pub fn actor_segment_dim(&self) -> usize {
        (self.embed_dim as f64 * self.split_ratio).round() as usize
    }

    pub fn activity_segment_dim(&self) -> usize {
        self.embed_dim - self.actor_segment_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
            ("embed_dim", self.embed_dim),
            ("decoder_heads", self.decoder_heads),
            ("decoder_tokens", self.decoder_tokens),
            ("decoder_width", self.decoder_width),
            ("num_actors", self.num_actors),
            ("num_activities", self.num_activities),
            ("biometric_dim", self.biometric_dim),
            ("appearance_dim", self.appearance_dim),
            ("activity_dim", self.activity_dim),
            ("teacher_dim", self.teacher_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("encoder channels must be non-empty and positive".into()));
        }
        let exact = self.embed_dim as f64 * self.split_ratio;
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) || (exact - exact.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "embed_dim {} · split_ratio {} is not a whole split",
                self.embed_dim, self.split_ratio
            )));
        }
        for (name, seg) in [("actor", self.actor_segment_dim()), ("activity", self.activity_segment_dim())] {
            if seg % self.decoder_tokens != 0 {
                return Err(Error::Config(format!(
                    "{name} segment {seg} is not divisible into {} tokens",
                    self.decoder_tokens
                )));
            }
        }
        if self.decoder_width % self.decoder_heads != 0 {
            return Err(Error::Config(format!(
                "decoder_width {} not divisible by {} heads",
                self.decoder_width, self.decoder_heads
            )));
        }
        Ok(())
    }

    fn check_clip(&self, clip: &VideoClip, channels: usize) -> Result<()> {
        let want = (self.frames, channels, self.height, self.width);
        if clip.dim() != want {
            return Err(Error::Shape(format!("clip {:?}, model expects {want:?}", clip.dim())));
        }
        Ok(())
    }
}

/// Stacks clips `[n, C, H, W]` into an encoder batch `[B, C, n, H, W]`.
pub fn clips_to_batch(clips: &[&VideoClip]) -> Result<Array5<f32>> {
    let first = clips.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (n, c, h, w) = first.dim();
    let mut out = Array5::zeros((clips.len(), c, n, h, w));
    for (b, clip) in clips.iter().enumerate() {
        if clip.dim() != (n, c, h, w) {
            return Err(Error::Shape(format!("clip {:?} in a batch of {:?}", clip.dim(), (n, c, h, w))));
        }
        out.index_axis_mut(Axis(0), b)
            .assign(&clip.frames().view().permuted_axes([1, 0, 2, 3]));
    }
    Ok(out)
}

fn guard(name: &str, a: &Array2<f32>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.into()))
    }
}

/// Per-clip outputs of the main branch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub f_ab: Array1<f32>,
    pub f_bb: Array1<f32>,
    pub f_ba: Array1<f32>,
    pub identity_logits: Array1<f32>,
    pub f_ac: Array1<f32>,
    pub activity_logits: Array1<f32>,
}

/// Per-clip outputs of the distortion branch.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortedBundle {
    pub f_ab_d: Array1<f32>,
    pub f_bb_d: Array1<f32>,
    pub f_ba_d: Array1<f32>,
}

/// Batched main-branch outputs, one row per clip.
#[derive(Debug, Clone)]
pub struct MainOutput {
    pub f_ab: Array2<f32>,
    pub actor: ActorOutput,
    pub activity: ActivityOutput,
}

impl MainOutput {
    pub fn bundle(&self, i: usize) -> FeatureBundle {
        FeatureBundle {
            f_ab: self.f_ab.row(i).to_owned(),
            f_bb: self.actor.f_bb.row(i).to_owned(),
            f_ba: self.actor.f_ba.row(i).to_owned(),
            identity_logits: self.actor.logits.row(i).to_owned(),
            f_ac: self.activity.f_ac.row(i).to_owned(),
            activity_logits: self.activity.logits.row(i).to_owned(),
        }
    }

    pub fn len(&self) -> usize {
        self.f_ab.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct DistortedOutput {
    pub f_ab: Array2<f32>,
    pub actor: ActorOutput,
}

impl DistortedOutput {
    pub fn bundle(&self, i: usize) -> DistortedBundle {
        DistortedBundle {
            f_ab_d: self.f_ab.row(i).to_owned(),
            f_bb_d: self.actor.f_bb.row(i).to_owned(),
            f_ba_d: self.actor.f_ba.row(i).to_owned(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MainCache {
    encoder: EncoderCache,
    actor: ActorCache,
    activity: ActivityCache,
}

#[derive(Debug, Clone)]
pub struct DistortedCache {
    encoder: EncoderCache,
    actor: ActorCache,
    activity_width: usize,
}

/// Loss gradients with respect to the main-branch outputs.
#[derive(Debug, Clone, Default)]
pub struct MainGrads {
    pub f_bb: Option<Array2<f32>>,
    pub f_ba: Option<Array2<f32>>,
    pub identity_logits: Option<Array2<f32>>,
    pub activity_logits: Option<Array2<f32>>,
}

#[derive(Debug, Clone)]
pub struct Student {
    pub config: ModelConfig,
    pub encoder: VideoEncoder,
    pub actor: ActorHead,
    pub activity: ActivityHead,
}

params_struct!(Student { encoder, actor, activity });

impl PartialEq for Student {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.encoder == other.encoder
            && self.actor == other.actor
            && self.activity == other.activity
    }
}

impl Student {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let encoder = VideoEncoder::new(3, [c.frames, c.height, c.width], c.stem_kernel, &c.channels, c.embed_dim, &mut rng)?;
        let actor = ActorHead::new(
            c.actor_segment_dim(),
            c.decoder_tokens,
            c.decoder_width,
            c.decoder_layers,
            c.decoder_heads,
            c.biometric_dim,
            c.appearance_dim,
            c.num_actors,
            &mut rng,
        )?;
        let activity = ActivityHead::new(
            c.activity_segment_dim(),
            c.decoder_tokens,
            c.decoder_width,
            c.decoder_layers,
            c.decoder_heads,
            c.activity_dim,
            c.num_activities,
            &mut rng,
        )?;
        Ok(Self { config, encoder, actor, activity })
    }

    fn batch(&self, clips: &[&VideoClip]) -> Result<Array5<f32>> {
        for clip in clips {
            self.config.check_clip(clip, 3)?;
        }
        clips_to_batch(clips)
    }

    /// `F_AB` for one clip.
    pub fn encode(&self, clip: &VideoClip) -> Result<Array1<f32>> {
        let (f, _) = self.encoder.forward(&self.batch(&[clip])?)?;
        guard("F_AB", &f)?;
        Ok(f.row(0).to_owned())
    }

    /// Partitions `F_AB` into the actor and activity segments.
    pub fn split_features(&self, f_ab: &Array1<f32>) -> Result<(Array1<f32>, Array1<f32>)> {
        if f_ab.len() != self.config.embed_dim {
            return Err(Error::Shape(format!("F_AB has {} dims, expected {}", f_ab.len(), self.config.embed_dim)));
        }
        let k = self.config.actor_segment_dim();
        Ok((f_ab.slice(s![..k]).to_owned(), f_ab.slice(s![k..]).to_owned()))
    }

    /// `(f_bb, f_ba, identity_logits)` for one actor segment.
    pub fn actor_head(&self, segment: &Array1<f32>) -> Result<(Array1<f32>, Array1<f32>, Array1<f32>)> {
        let (out, _) = self.actor.forward(segment.view().insert_axis(Axis(0)), false)?;
        for (n, a) in [("f_bb", &out.f_bb), ("f_ba", &out.f_ba), ("identity logits", &out.logits)] {
            guard(n, a)?;
        }
        Ok((out.f_bb.row(0).to_owned(), out.f_ba.row(0).to_owned(), out.logits.row(0).to_owned()))
    }

    /// `(F_Ac, activity_logits)` for one activity segment.
    pub fn activity_head(&self, segment: &Array1<f32>) -> Result<(Array1<f32>, Array1<f32>)> {
        let (out, _) = self.activity.forward(segment.view().insert_axis(Axis(0)))?;
        guard("F_Ac", &out.f_ac)?;
        guard("activity logits", &out.logits)?;
        Ok((out.f_ac.row(0).to_owned(), out.logits.row(0).to_owned()))
    }

    fn split_batch<'a>(&self, f_ab: &'a Array2<f32>) -> (ArrayView2<'a, f32>, ArrayView2<'a, f32>) {
        let k = self.config.actor_segment_dim();
        (f_ab.slice(s![.., ..k]), f_ab.slice(s![.., k..]))
    }

    /// Batched main branch, keeping what the backward pass needs; normalizes
    /// with batch statistics.
    pub fn forward_main_train(&self, clips: &[&VideoClip]) -> Result<(MainOutput, MainCache)> {
        self.forward_main_batch(clips, true)
    }

    fn forward_main_batch(&self, clips: &[&VideoClip], train: bool) -> Result<(MainOutput, MainCache)> {
        let (f_ab, encoder) = self.encoder.forward(&self.batch(clips)?)?;
        let (seg_a, seg_c) = self.split_batch(&f_ab);
        let (actor_out, actor) = self.actor.forward(seg_a, train)?;
        let (activity_out, activity) = self.activity.forward(seg_c)?;
        let out = MainOutput { f_ab, actor: actor_out, activity: activity_out };
        for (n, a) in [
            ("F_AB", &out.f_ab),
            ("f_bb", &out.actor.f_bb),
            ("f_ba", &out.actor.f_ba),
            ("identity logits", &out.actor.logits),
            ("F_Ac", &out.activity.f_ac),
            ("activity logits", &out.activity.logits),
        ] {
            guard(n, a)?;
        }
        Ok((out, MainCache { encoder, actor, activity }))
    }

    pub fn backward_main(&self, cache: &MainCache, grads: &MainGrads, g: &mut Student) {
        let d_actor = self.actor.backward(
            &cache.actor,
            grads.f_bb.as_ref(),
            grads.f_ba.as_ref(),
            grads.identity_logits.as_ref(),
            &mut g.actor,
        );
        let d_activity = match &grads.activity_logits {
            Some(dl) => self.activity.backward(&cache.activity, dl, &mut g.activity),
            None => Array2::zeros((d_actor.nrows(), self.config.activity_segment_dim())),
        };
        let d_ab = concatenate![Axis(1), d_actor, d_activity];
        self.encoder.backward(&cache.encoder, &d_ab, &mut g.encoder);
    }

    /// Moves the running feature statistics toward those of a training batch.
    pub fn update_statistics(&mut self, cache: &MainCache, momentum: f32) {
        self.actor.update_statistics(&cache.actor, momentum);
    }

    /// Batched distortion branch: encoder and actor head only.
    pub fn forward_distorted_train(&self, clips: &[&VideoClip]) -> Result<(DistortedOutput, DistortedCache)> {
        self.forward_distorted_batch(clips, true)
    }

    /// Inference form of [`Self::forward_distorted_train`].
    pub fn forward_distorted_eval(&self, clips: &[&VideoClip]) -> Result<DistortedOutput> {
        Ok(self.forward_distorted_batch(clips, false)?.0)
    }

    fn forward_distorted_batch(&self, clips: &[&VideoClip], train: bool) -> Result<(DistortedOutput, DistortedCache)> {
        let (f_ab, encoder) = self.encoder.forward(&self.batch(clips)?)?;
        let (seg_a, _) = self.split_batch(&f_ab);
        let (actor_out, actor) = self.actor.forward(seg_a, train)?;
        guard("F_AB_D", &f_ab)?;
        guard("f_bb_D", &actor_out.f_bb)?;
        guard("f_ba_D", &actor_out.f_ba)?;
        let out = DistortedOutput { f_ab, actor: actor_out };
        Ok((out, DistortedCache { encoder, actor, activity_width: self.config.activity_segment_dim() }))
    }

    pub fn backward_distorted(&self, cache: &DistortedCache, d_bb: &Array2<f32>, d_ba: &Array2<f32>, g: &mut Student) {
        let d_actor = self.actor.backward(&cache.actor, Some(d_bb), Some(d_ba), None, &mut g.actor);
        let d_ab = concatenate![Axis(1), d_actor, Array2::zeros((d_bb.nrows(), cache.activity_width))];
        self.encoder.backward(&cache.encoder, &d_ab, &mut g.encoder);
    }

    pub fn forward_main(&self, clip: &VideoClip) -> Result<FeatureBundle> {
        Ok(self.forward_main_batch(&[clip], false)?.0.bundle(0))
    }

    pub fn forward_distorted(&self, clip: &VideoClip) -> Result<DistortedBundle> {
        Ok(self.forward_distorted_batch(&[clip], false)?.0.bundle(0))
    }

    /// Main-branch bundles for many clips, evaluated in chunks.
    pub fn forward_many(&self, clips: &[VideoClip], chunk: usize) -> Result<Vec<FeatureBundle>> {
        let mut out = Vec::with_capacity(clips.len());
        for part in clips.chunks(chunk.max(1)) {
            let refs: Vec<&VideoClip> = part.iter().collect();
            let (o, _) = self.forward_main_batch(&refs, false)?;
            out.extend((0..o.len()).map(|i| o.bundle(i)));
        }
        Ok(out)
    }
}
