//! Trains the desk profile on a synthetic world and reports retrieval on the
//! clean and the appearance-confounded test split.
//!
//! Extra arguments are `key=value` config overrides, plus `world_seed=N`:
//!
//! ```text
//! cargo run --release --example train_desk -- epochs=10 lambda_dis=0
//! ```

use std::path::Path;
use std::time::Instant;

use actbio::datapipe::{build_protocol, ActivityMode, ViewMode, DEFAULT_PROBE_FRACTION};
use actbio::datapipe::ClipLoader;
use actbio::evaluation::{chance_rank1, metrics_from_embeddings, FeatureKind};
use actbio::synth::{generate_world, SyntheticWorldConfig};
use actbio::train::{clip_seed_for, evaluate_student, prepare_store, train_with_teacher, TrainConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = TrainConfig::desk();
    let mut world_cfg = SyntheticWorldConfig::default();
    for arg in std::env::args().skip(1) {
        match arg.strip_prefix("world_seed=") {
            Some(v) => world_cfg.seed = v.parse()?,
            None => cfg.apply_text(&arg, Path::new("<args>"))?,
        }
    }

    let t0 = Instant::now();
    let world = generate_world(&world_cfg)?;
    let store = prepare_store(&world.manifest, &world.store, &cfg.augmentation)?;
    let confounded = world.confounded(world_cfg.seed)?;
    let confounded_store = prepare_store(&confounded.manifest, &confounded.store, &cfg.augmentation)?;
    println!("world ready in {:.1}s", t0.elapsed().as_secs_f64());

    let (fit, teacher) = train_with_teacher(&world.manifest, &store, &cfg, None)?;
    println!("trained in {:.1}s, epoch losses {:?}", t0.elapsed().as_secs_f64(), fit.epoch_loss);

    let protocol = build_protocol(&world.manifest, ActivityMode::Same, ViewMode::None, DEFAULT_PROBE_FRACTION, 0)?;
    let gallery_ids: Vec<u32> = protocol.gallery.iter().map(|r| r.actor_id).collect();
    let probe_ids: Vec<u32> = protocol.probe.iter().map(|r| r.actor_id).collect();
    println!("chance rank-1 {:.3}", chance_rank1(&probe_ids, &gallery_ids));
    for (name, s) in [("clean", &store), ("confounded", &confounded_store)] {
        for kind in [FeatureKind::BiometricWithPrior, FeatureKind::Biometric, FeatureKind::Appearance] {
            let m = evaluate_student(&fit.student, s, cfg.frame_stride, &protocol, kind)?;
            println!("{name:>10} {kind:?}: rank1 {:.3} rank5 {:.3} mAP {:.3}", m.rank1, m.rank5, m.map);
        }
    }
    if let Some(t) = &teacher {
        let m = &fit.student.config;
        let loader = ClipLoader::new(&store, m.frames, cfg.frame_stride, m.height, m.width);
        let embed = |recs: &[actbio::datapipe::SampleRecord]| -> anyhow::Result<ndarray::Array2<f64>> {
            let mut rows = Vec::new();
            for r in recs {
                let s = loader.silhouette(r, clip_seed_for(&r.video_uri))?;
                let (f, _) = t.teacher_encode(&s)?;
                let n = f.dot(&f).sqrt().max(1e-12);
                rows.extend(f.iter().map(|v| (*v / n) as f64));
            }
            Ok(ndarray::Array2::from_shape_vec((recs.len(), t.encoder.out_dim()), rows)?)
        };
        let (g, p) = (embed(&protocol.gallery)?, embed(&protocol.probe)?);
        let m = metrics_from_embeddings(g.view(), &gallery_ids, p.view(), &probe_ids, &[0.001])?;
        println!("teacher F_S on silhouettes: rank1 {:.3} rank5 {:.3} mAP {:.3}", m.rank1, m.rank5, m.map);
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
