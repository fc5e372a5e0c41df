//! Saves a student with metadata, reloads it and confirms the parameters
//! and outputs survive the round trip.

use actbio::checkpoint::{load_student, read_meta, save_student, CheckpointMeta, Role};
use actbio::model::{ModelConfig, Student};
use actbio::nn::checksum;
use actbio::VideoClip;
use ndarray::Array4;

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("actbio_checkpoint_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("student.ckpt");

    let cfg = ModelConfig::desk(6, 4);
    let student = Student::new(cfg.clone(), 42)?;
    let mut meta = CheckpointMeta::new(Role::Student, cfg.clone(), 0, 42);
    meta.metrics.insert("rank1".into(), 0.0);
    save_student(&path, &student, &meta)?;
    println!("{}", read_meta(&path)?.to_text());

    let (back, _) = load_student(&path)?;
    println!("checksum {}\n      -> {}", checksum(&student), checksum(&back));
    let clip = VideoClip::new(Array4::from_shape_fn((cfg.frames, 3, cfg.height, cfg.width), |(n, c, y, x)| {
        ((n + c + y + x) % 7) as f32 / 6.0
    }))?;
    let (a, b) = (student.forward_main(&clip)?, back.forward_main(&clip)?);
    println!("identical f_bb after reload: {}", a.f_bb == b.f_bb);
    Ok(())
}
