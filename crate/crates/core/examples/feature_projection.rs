//! Projects the biometric and appearance features of test clips onto their
//! two principal axes and saves scatter plots colored by identity.
//!
//! ```text
//! cargo run --release --example feature_projection -- runs/train/student.ckpt
//! ```

use actbio::checkpoint::load_student;
use actbio::datapipe::{SampleRecord, Split};
use actbio::evaluation::{embed_all, FeatureKind};
use actbio::model::{ModelConfig, Student};
use actbio::reporting::{plot_projection, project_features_2d};
use actbio::synth::{generate_world, SyntheticWorldConfig};
use actbio::train::embed_records;

fn main() -> anyhow::Result<()> {
    let student = match std::env::args().nth(1) {
        Some(p) => load_student(p)?.0,
        None => Student::new(ModelConfig::desk(10, 4), 0)?,
    };
    let world = generate_world(&SyntheticWorldConfig { clips_per_pair: 2, ..Default::default() })?;
    let records: Vec<SampleRecord> = world.manifest.split(Split::Test).cloned().collect();
    let labels: Vec<u32> = records.iter().map(|r| r.actor_id % 8).collect();
    let bundles = embed_records(&student, &world.store, 2, &records, 16)?;
    for (name, kind) in [("biometric", FeatureKind::Biometric), ("appearance", FeatureKind::Appearance)] {
        let (emb, _) = embed_all(&bundles, kind)?;
        let xy = project_features_2d(emb.view(), 0)?;
        let path = format!("target/projection_{name}.png");
        plot_projection(xy.view(), &labels, &path)?;
        println!("{name}: {} points -> {path}", xy.nrows());
    }
    Ok(())
}
