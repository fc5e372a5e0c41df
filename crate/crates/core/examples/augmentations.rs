//! Hue shift, face blur and elastic distortion on one synthetic clip, with
//! the silhouette IoU left after warping at increasing α.

use actbio::augmentation::{elastic_distort, face_blur, hue_shift, make_elastic_field, Interpolation};
use actbio::synth::{generate_world, SyntheticWorldConfig};
use actbio::datapipe::VideoStore;
use actbio::VideoClip;

fn iou(a: &VideoClip, b: &VideoClip) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.frames().iter().zip(b.frames().iter()) {
        let (x, y) = (*x >= 0.5, *y >= 0.5);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    inter as f64 / union.max(1) as f64
}

fn main() -> anyhow::Result<()> {
    let world = generate_world(&SyntheticWorldConfig { num_actors: 2, num_activities: 1, clips_per_pair: 1, ..Default::default() })?;
    let r = &world.manifest.records[0];
    let rgb = world.store.rgb(&r.video_uri)?;
    let sil = world.store.silhouette(r.silhouette_uri.as_deref().unwrap())?;

    let shifted = hue_shift(&rgb, 0.25)?;
    let mean = |c: &VideoClip| c.frames().mean().unwrap_or(0.0);
    println!("hue shift 0.25: mean intensity {:.4} -> {:.4}", mean(&rgb), mean(&shifted));

    let boxes = world.store.face_boxes(&r.video_uri)?;
    let blurred = face_blur(&shifted, &boxes, 9, 2.0)?;
    println!("face blur over {} boxes, {} warnings", boxes.len(), blurred.warnings.len());

    println!("alpha  silhouette IoU");
    for alpha in [0.0f32, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 350.0] {
        let field = make_elastic_field(sil.height(), sil.width(), alpha, 8.0, 7)?;
        let warped = elastic_distort(&sil, &field, Interpolation::Nearest)?;
        println!("{alpha:>5}  {:.3}", iou(&sil, &warped));
    }
    Ok(())
}
