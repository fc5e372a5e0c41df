#![allow(dead_code)]

use actbio::datapipe::{DatasetManifest, SampleRecord, Split};
use actbio::model::ModelConfig;
use actbio::VideoClip;
use ndarray::Array4;

pub fn tiny_model(num_actors: usize, num_activities: usize) -> ModelConfig {
    ModelConfig {
        frames: 4,
        height: 32,
        width: 16,
        channels: vec![4, 6],
        stem_kernel: [1, 4, 4],
        embed_dim: 16,
        split_ratio: 0.5,
        decoder_layers: 1,
        decoder_heads: 2,
        decoder_tokens: 2,
        decoder_width: 8,
        num_actors,
        num_activities,
        biometric_dim: 6,
        appearance_dim: 5,
        activity_dim: 4,
        teacher_dim: 6,
    }
}

pub fn patterned_clip(n: usize, c: usize, h: usize, w: usize, seed: usize) -> VideoClip {
    VideoClip::new(Array4::from_shape_fn((n, c, h, w), |(f, ch, y, x)| {
        (((f * 7 + ch * 5 + y * 3 + x + seed * 11) % 17) as f32) / 16.0
    }))
    .unwrap()
}

/// A manifest from `(actor, activity, view)` triples; actors below
/// `first_test_actor` train, the rest test.
pub fn manifest_from(rows: &[(u32, u32, u32)], first_test_actor: u32) -> DatasetManifest {
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, &(a, c, v))| SampleRecord {
            video_uri: format!("v/{i}.clip"),
            silhouette_uri: Some(format!("s/{i}.clip")),
            actor_id: a,
            activity_id: c,
            view_id: Some(v),
            split: if a < first_test_actor { Split::Train } else { Split::Test },
        })
        .collect();
    DatasetManifest::new(records).unwrap()
}
