//! Ranks the gallery for one probe and saves the top matches as an image
//! grid with green (same identity) and red (different identity) borders.
//!
//! ```text
//! cargo run --release --example retrieval_grid -- runs/train/student.ckpt
//! ```

use actbio::checkpoint::load_student;
use actbio::datapipe::{build_protocol, ActivityMode, ClipLoader, ViewMode};
use actbio::evaluation::{embed_all, pairwise_distances, FeatureKind, RetrievalResult};
use actbio::model::{ModelConfig, Student};
use actbio::reporting::retrieval_grid;
use actbio::synth::{generate_world, SyntheticWorldConfig};
use actbio::train::{clip_seed_for, embed_records};

fn main() -> anyhow::Result<()> {
    let student = match std::env::args().nth(1) {
        Some(p) => load_student(p)?.0,
        None => Student::new(ModelConfig::desk(10, 4), 0)?,
    };
    let world = generate_world(&SyntheticWorldConfig { clips_per_pair: 2, ..Default::default() })?;
    let p = build_protocol(&world.manifest, ActivityMode::Same, ViewMode::None, 0.2, 0)?;
    let embed = |recs| -> anyhow::Result<_> {
        Ok(embed_all(&embed_records(&student, &world.store, 2, recs, 16)?, FeatureKind::BiometricWithPrior)?.0)
    };
    let (g, q) = (embed(&p.gallery)?, embed(&p.probe[..1])?);
    let ranked = RetrievalResult::from_distances(pairwise_distances(q.view(), g.view())?);

    let m = &student.config;
    let loader = ClipLoader::new(&world.store, m.frames, 2, m.height, m.width);
    let probe = &p.probe[0];
    let mut hits = Vec::new();
    for &i in ranked.rankings.row(0).iter().take(4) {
        let r = &p.gallery[i];
        println!("{:>8.4}  actor {:>2}  {}", ranked.distances[[0, i]], r.actor_id, r.video_uri);
        hits.push((loader.rgb(r, clip_seed_for(&r.video_uri))?, r.actor_id == probe.actor_id));
    }
    retrieval_grid(&loader.rgb(probe, clip_seed_for(&probe.video_uri))?, &hits, "target/retrieval_grid.png")?;
    println!("probe actor {} -> target/retrieval_grid.png", probe.actor_id);
    Ok(())
}
