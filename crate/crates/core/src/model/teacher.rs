use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clips_to_batch, guard, EncoderCache, ModelConfig, VideoEncoder};
use crate::clip::VideoClip;
use crate::datapipe::{ClipLoader, DatasetManifest, Split, VideoStore};
use crate::error::{Error, Result};
use crate::losses::mean_cross_entropy_grad;
use crate::nn::{clip_global_norm, params_struct, zeros_like, Adam, Linear};

/// Silhouette-only network: encoder to `F_S`, then identity logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub encoder: VideoEncoder,
    pub classifier: Linear,
}

params_struct!(Teacher { encoder, classifier });

#[derive(Debug, Clone)]
pub struct TeacherCache {
    encoder: EncoderCache,
    f_s: Array2<f32>,
}

impl Teacher {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = VideoEncoder::new(
            1,
            [config.frames, config.height, config.width],
            config.stem_kernel,
            &config.channels,
            config.teacher_dim,
            &mut rng,
        )?;
        let classifier = Linear::new(config.teacher_dim, config.num_actors, 1.0, &mut rng);
        Ok(Self { encoder, classifier })
    }

    fn batch(&self, clips: &[&VideoClip]) -> Result<ndarray::Array5<f32>> {
        if let Some(c) = clips.iter().find(|c| c.channels() != 1) {
            return Err(Error::Shape(format!("teacher takes silhouettes (C=1), got C={}", c.channels())));
        }
        clips_to_batch(clips)
    }

    /// `(F_S, logits)` for a batch of silhouette clips.
    pub fn forward_train(&self, clips: &[&VideoClip]) -> Result<(Array2<f32>, Array2<f32>, TeacherCache)> {
        let (f_s, encoder) = self.encoder.forward(&self.batch(clips)?)?;
        let logits = self.classifier.forward(f_s.view());
        guard("F_S", &f_s)?;
        guard("teacher logits", &logits)?;
        Ok((f_s.clone(), logits, TeacherCache { encoder, f_s }))
    }

    pub fn backward(&self, cache: &TeacherCache, d_logits: &Array2<f32>, g: &mut Teacher) {
        let d_fs = self.classifier.backward(cache.f_s.view(), d_logits.view(), &mut g.classifier);
        self.encoder.backward(&cache.encoder, &d_fs, &mut g.encoder);
    }

    /// `(F_S, identity_logits)` for one silhouette clip.
    pub fn teacher_encode(&self, silhouette: &VideoClip) -> Result<(Array1<f32>, Array1<f32>)> {
        let (f, l, _) = self.forward_train(&[silhouette])?;
        Ok((f.row(0).to_owned(), l.row(0).to_owned()))
    }

    /// Logits for many silhouettes, evaluated in chunks.
    pub fn logits_many(&self, clips: &[&VideoClip], chunk: usize) -> Result<Array2<f32>> {
        let mut rows = Vec::new();
        for part in clips.chunks(chunk.max(1)) {
            let (_, l, _) = self.forward_train(part)?;
            rows.push(l);
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherPretrainReport {
    /// Mean cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
    /// Training-set accuracy in the last epoch.
    pub final_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherSchedule {
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    pub frame_stride: usize,
}

impl TeacherSchedule {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self { epochs, seed, learning_rate: 1e-3, weight_decay: 5e-4, batch_size: 16, frame_stride: 2 }
    }
}

/// Trains a teacher with identity cross-entropy on training-split silhouettes.
///
/// RGB uris are never read.
pub fn pretrain_teacher(
    manifest: &DatasetManifest,
    store: &dyn VideoStore,
    config: &ModelConfig,
    schedule: TeacherSchedule,
) -> Result<(Teacher, TeacherPretrainReport)> {
    let classes = manifest.train_classes();
    let records: Vec<_> = manifest.split(Split::Train).collect();
    if records.is_empty() {
        return Err(Error::Missing("no training records".into()));
    }
    if let Some(r) = records.iter().find(|r| r.silhouette_uri.is_none()) {
        return Err(Error::Missing(format!("record {} has no silhouette", r.video_uri)));
    }
    if classes.len() != config.num_actors {
        return Err(Error::Config(format!(
            "model has {} identity classes but the manifest trains {}",
            config.num_actors,
            classes.len()
        )));
    }
    let loader = ClipLoader::new(store, config.frames, schedule.frame_stride, config.height, config.width);
    let mut teacher = Teacher::new(config, schedule.seed)?;
    let mut opt = Adam::new(schedule.learning_rate, schedule.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed ^ 0x7ea_c4e5);
    let mut report = TeacherPretrainReport { epoch_loss: Vec::new(), final_accuracy: 0.0 };
    let mut order: Vec<usize> = (0..records.len()).collect();
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut correct, mut batches) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(schedule.batch_size.max(1)) {
            let mut clips = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                clips.push(loader.silhouette(records[i], rng.gen())?);
                labels.push(classes[&records[i].actor_id]);
            }
            let refs: Vec<&VideoClip> = clips.iter().collect();
            let (_, logits, cache) = teacher.forward_train(&refs)?;
            let (loss, grad) = mean_cross_entropy_grad(logits.mapv(f64::from).view(), &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("teacher loss at epoch {epoch}")));
            }
            correct += labels
                .iter()
                .enumerate()
                .filter(|(r, &l)| argmax(logits.row(*r).iter().copied()) == l)
                .count();
            let mut g = zeros_like(&teacher);
            teacher.backward(&cache, &grad.mapv(|v| v as f32), &mut g);
            clip_global_norm(&mut g, 10.0);
            opt.step(&mut teacher, &g);
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::info!("teacher epoch {epoch}: loss {mean:.4}");
        report.epoch_loss.push(mean);
        report.final_accuracy = correct as f64 / records.len() as f64;
    }
    Ok((teacher, report))
}

pub(crate) fn argmax(it: impl Iterator<Item = f32>) -> usize {
    let mut best = (0, f32::NEG_INFINITY);
    for (i, v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
