//! Rank-k, mAP and TAR@FAR for noisy toy embeddings of ten identities.

use actbio::evaluation::{metrics_from_embeddings, pairwise_distances, cmc, RetrievalResult, DEFAULT_FAR_LEVELS};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (ids, dim) = (10u32, 16);
    let centers = Array2::from_shape_fn((ids as usize, dim), |_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng));
    for noise in [0.2, 0.6, 1.2] {
        let n = Normal::new(0.0, noise)?;
        let mut draw = |reps: usize| {
            let labels: Vec<u32> = (0..ids).flat_map(|i| std::iter::repeat(i).take(reps)).collect();
            let x = Array2::from_shape_fn((labels.len(), dim), |(r, c)| centers[[labels[r] as usize, c]] + n.sample(&mut rng));
            (x, labels)
        };
        let (g, gid) = draw(3);
        let (p, pid) = draw(1);
        let m = metrics_from_embeddings(g.view(), &gid, p.view(), &pid, &DEFAULT_FAR_LEVELS)?;
        let curve = cmc(&RetrievalResult::from_distances(pairwise_distances(p.view(), g.view())?), &pid, &gid)?;
        println!(
            "noise {noise:.1}: rank-1 {:.2} rank-5 {:.2} mAP {:.3} TAR@0.1%FAR {:.2} rank-10 {:.2}",
            m.rank1,
            m.rank5,
            m.map,
            m.tar(0.001).unwrap_or(f64::NAN),
            curve.rank(10)
        );
    }
    Ok(())
}
