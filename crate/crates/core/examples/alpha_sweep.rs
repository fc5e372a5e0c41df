//! How far biometric and appearance features move under elastic distortion
//! of growing strength. Pass a student checkpoint from `actbio train`;
//! without one a freshly initialised student is swept.
//!
//! ```text
//! cargo run --release --example alpha_sweep -- runs/train/student.ckpt
//! ```

use actbio::augmentation::Interpolation;
use actbio::checkpoint::load_student;
use actbio::datapipe::{ClipLoader, Split};
use actbio::model::{ModelConfig, Student};
use actbio::reporting::{alpha_sweep, plot_sweep};
use actbio::synth::{generate_world, SyntheticWorldConfig};
use actbio::train::clip_seed_for;

fn main() -> anyhow::Result<()> {
    let student = match std::env::args().nth(1) {
        Some(p) => load_student(p)?.0,
        None => Student::new(ModelConfig::desk(10, 4), 0)?,
    };
    let world = generate_world(&SyntheticWorldConfig { clips_per_pair: 1, ..Default::default() })?;
    let m = &student.config;
    let loader = ClipLoader::new(&world.store, m.frames, 2, m.height, m.width);
    let clips = world
        .manifest
        .split(Split::Test)
        .take(12)
        .map(|r| loader.rgb(r, clip_seed_for(&r.video_uri)))
        .collect::<Result<Vec<_>, _>>()?;

    let alphas = [0.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 350.0];
    let sweep = alpha_sweep(&student, &clips, &alphas, 8.0, Interpolation::Bilinear, 0)?;
    print!("{}", sweep.to_csv());
    plot_sweep(&sweep, "target/alpha_sweep.png")?;
    println!("plot written to target/alpha_sweep.png");
    Ok(())
}
