//! Every training loss on a hand-made toy batch, plus the weighted total.

use actbio::losses::{
    batch_hard_mine, cross_entropy, distortion_loss, kd_loss, total_loss, triplet_loss, LossComponents, LossWeights,
    TeacherStudentLogits, TripletSet,
};
use ndarray::array;

fn main() -> anyhow::Result<()> {
    let logits = [2.0, 0.5, -1.0];
    let ce = cross_entropy(&logits, 0)?;
    println!("cross entropy (label 0): {ce:.4}");

    let t = TripletSet { anchor: &[0.0, 0.0], positive: &[0.1, 0.0], negative: &[0.3, 0.0], margin: 0.3 };
    println!("triplet: {:.4}", triplet_loss(&t)?);

    let emb = array![[0.0, 0.0], [0.2, 0.0], [1.0, 1.0], [1.1, 0.9]];
    let tri = batch_hard_mine(emb.view(), &[0, 0, 1, 1], 0.3)?;
    println!("batch-hard triplet over 2x2 batch: {tri:.4}");

    let kd = kd_loss(&TeacherStudentLogits { teacher: &[3.0, 1.0, 0.0], student: &logits, temperature: 4.0 })?;
    println!("distillation (tau 4): {kd:.5}");

    let dis = distortion_loss(&[1.0, 0.0], &[1.0, 0.1], &[0.0, 1.0], &[0.0, 1.2], 0.3)?;
    println!("distortion: {dis:.4}");

    let c = LossComponents { ce, tri, activity: 1.2, kd, dis };
    let w = LossWeights::new(0.01, 0.01, 0.01)?;
    println!("total at lambda = 0.01: {:.4}", total_loss(&c, &w));
    Ok(())
}
