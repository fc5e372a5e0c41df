//! Training objectives and their analytic gradients.
//!
//! Everything here works in `f64` on plain slices so the functions can be
//! checked against finite differences and brute-force oracles. The model
//! runs in `f32` and converts at the boundary.
//!
//! * identity / activity: softmax cross-entropy
//! * metric: hinge triplet on Euclidean distances, batch-hard mined
//! * distillation: `τ² · KL(softmax(z_T/τ) ‖ softmax(z_S/τ))`, teacher side constant
//! * distortion: `max(D(f_ba, f_ba') − D(f_bb, f_bb') + m, 0)`
//! * total: `L_ce + L_tri + λ1·L_Ac + λ2·L_KD + λ3·L_Dis`

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

fn check_finite(name: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.into()))
    }
}

fn check_same_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what}: {} vs {}", a.len(), b.len())))
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `∂D/∂a` for `D = ‖a − b‖`; zero at coincident points.
fn euclidean_grad(a: &[f64], b: &[f64], d: f64) -> Vec<f64> {
    if d <= 0.0 {
        return vec![0.0; a.len()];
    }
    a.iter().zip(b).map(|(x, y)| (x - y) / d).collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    log_softmax(z).into_iter().map(f64::exp).collect()
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    Ok(cross_entropy_grad(logits, label)?.0)
}

/// Loss and `∂L/∂logits = softmax − onehot`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    check_finite("cross-entropy logits", logits)?;
    let ls = log_softmax(logits);
    let loss = -ls[label];
    let mut grad: Vec<f64> = ls.iter().map(|v| v.exp()).collect();
    grad[label] -= 1.0;
    Ok((loss.max(0.0), grad))
}

/// Mean cross-entropy over the rows of a `[B, K]` logit matrix.
pub fn mean_cross_entropy_grad(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (b, k) = logits.dim();
    if labels.len() != b || b == 0 {
        return Err(Error::Shape(format!("{} labels for {b} rows", labels.len())));
    }
    let mut grad = Array2::zeros((b, k));
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i).to_vec();
        let (l, g) = cross_entropy_grad(&row, label)?;
        total += l;
        for (j, v) in g.into_iter().enumerate() {
            grad[[i, j]] = v / b as f64;
        }
    }
    Ok((total / b as f64, grad))
}

#[derive(Debug, Clone, Copy)]
pub struct TripletSet<'a> {
    pub anchor: &'a [f64],
    pub positive: &'a [f64],
    pub negative: &'a [f64],
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

fn check_triplet(t: &TripletSet) -> Result<()> {
    check_same_len(t.anchor, t.positive, "triplet positive")?;
    check_same_len(t.anchor, t.negative, "triplet negative")?;
    if !(t.margin >= 0.0) {
        return Err(Error::InvalidArgument(format!("margin {} must be >= 0", t.margin)));
    }
    Ok(())
}

/// `max(D(a, p) − D(a, n) + m, 0)`.
pub fn triplet_loss(t: &TripletSet) -> Result<f64> {
    check_triplet(t)?;
    Ok((euclidean(t.anchor, t.positive) - euclidean(t.anchor, t.negative) + t.margin).max(0.0))
}

pub fn triplet_loss_grad(t: &TripletSet) -> Result<(f64, TripletGrad)> {
    check_triplet(t)?;
    let dp = euclidean(t.anchor, t.positive);
    let dn = euclidean(t.anchor, t.negative);
    let loss = (dp - dn + t.margin).max(0.0);
    let n = t.anchor.len();
    if loss <= 0.0 {
        let z = vec![0.0; n];
        return Ok((0.0, TripletGrad { anchor: z.clone(), positive: z.clone(), negative: z }));
    }
    let gp = euclidean_grad(t.anchor, t.positive, dp);
    let gn = euclidean_grad(t.anchor, t.negative, dn);
    Ok((
        loss,
        TripletGrad {
            anchor: gp.iter().zip(&gn).map(|(p, q)| p - q).collect(),
            positive: gp.iter().map(|v| -v).collect(),
            negative: gn,
        },
    ))
}

fn pairwise(embeddings: ArrayView2<f64>) -> Array2<f64> {
    let b = embeddings.nrows();
    let mut d = Array2::zeros((b, b));
    for i in 0..b {
        for j in (i + 1)..b {
            let v = euclidean(&embeddings.row(i).to_vec(), &embeddings.row(j).to_vec());
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Per-anchor indices of the hardest positive and hardest negative.
fn mine(d: &Array2<f64>, labels: &[u32]) -> Vec<(usize, usize)> {
    let b = labels.len();
    (0..b)
        .map(|i| {
            let mut pos = usize::MAX;
            let mut neg = usize::MAX;
            for j in 0..b {
                if j == i {
                    continue;
                }
                if labels[j] == labels[i] {
                    if pos == usize::MAX || d[[i, j]] > d[[i, pos]] {
                        pos = j;
                    }
                } else if neg == usize::MAX || d[[i, j]] < d[[i, neg]] {
                    neg = j;
                }
            }
            (pos, neg)
        })
        .collect()
}

fn check_mining_batch(embeddings: &ArrayView2<f64>, labels: &[u32], margin: f64) -> Result<()> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} embeddings for {} labels",
            embeddings.nrows(),
            labels.len()
        )));
    }
    if !(margin >= 0.0) {
        return Err(Error::InvalidArgument(format!("margin {margin} must be >= 0")));
    }
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    if let Some((l, _)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(Error::Sampler(format!("label {l} has a single instance in the batch")));
    }
    if counts.len() < 2 {
        return Err(Error::Sampler("batch holds a single identity; no negatives".into()));
    }
    if embeddings.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("mining embeddings".into()))
    }
}

/// Batch-hard triplet loss: mean over anchors of
/// `max(max_pos D − min_neg D + m, 0)`.
pub fn batch_hard_mine(embeddings: ArrayView2<f64>, labels: &[u32], margin: f64) -> Result<f64> {
    Ok(batch_hard_mine_grad(embeddings, labels, margin)?.0)
}

pub fn batch_hard_mine_grad(
    embeddings: ArrayView2<f64>,
    labels: &[u32],
    margin: f64,
) -> Result<(f64, Array2<f64>)> {
    check_mining_batch(&embeddings, labels, margin)?;
    let emb = embeddings.as_standard_layout().to_owned();
    let (b, dim) = emb.dim();
    let d = pairwise(emb.view());
    let mut grad = Array2::zeros((b, dim));
    let mut total = 0.0;
    for (i, (p, n)) in mine(&d, labels).into_iter().enumerate() {
        let hinge = d[[i, p]] - d[[i, n]] + margin;
        if hinge <= 0.0 {
            continue;
        }
        total += hinge;
        let a = emb.row(i);
        let (ai, pi, ni) = (a.as_slice().unwrap(), emb.row(p), emb.row(n));
        let gp = euclidean_grad(ai, pi.as_slice().unwrap(), d[[i, p]]);
        let gn = euclidean_grad(ai, ni.as_slice().unwrap(), d[[i, n]]);
        for k in 0..dim {
            grad[[i, k]] += (gp[k] - gn[k]) / b as f64;
            grad[[p, k]] -= gp[k] / b as f64;
            grad[[n, k]] += gn[k] / b as f64;
        }
    }
    Ok((total / b as f64, grad))
}

#[derive(Debug, Clone, Copy)]
pub struct TeacherStudentLogits<'a> {
    pub teacher: &'a [f64],
    pub student: &'a [f64],
    pub temperature: f64,
}

fn check_kd(x: &TeacherStudentLogits) -> Result<()> {
    check_same_len(x.teacher, x.student, "distillation logits")?;
    if !(x.temperature > 0.0 && x.temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature {} must be > 0",
            x.temperature
        )));
    }
    check_finite("teacher logits", x.teacher)?;
    check_finite("student logits", x.student)
}

/// `τ² · KL(softmax(z_T/τ) ‖ softmax(z_S/τ))`.
pub fn kd_loss(x: &TeacherStudentLogits) -> Result<f64> {
    Ok(kd_loss_grad(x)?.0)
}

/// Loss and gradient with respect to the student logits only; the teacher is a constant target.
pub fn kd_loss_grad(x: &TeacherStudentLogits) -> Result<(f64, Vec<f64>)> {
    check_kd(x)?;
    let tau = x.temperature;
    let zt: Vec<f64> = x.teacher.iter().map(|v| v / tau).collect();
    let zs: Vec<f64> = x.student.iter().map(|v| v / tau).collect();
    let lp = log_softmax(&zt);
    let lq = log_softmax(&zs);
    let mut kl = 0.0;
    for (a, b) in lp.iter().zip(&lq) {
        let p = a.exp();
        if p > 0.0 {
            kl += p * (a - b);
        }
    }
    let grad = lp
        .iter()
        .zip(&lq)
        .map(|(a, b)| tau * (b.exp() - a.exp()))
        .collect();
    Ok(((tau * tau * kl).max(0.0), grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistortionGrad {
    pub f_ba: Vec<f64>,
    pub f_ba_d: Vec<f64>,
    pub f_bb: Vec<f64>,
    pub f_bb_d: Vec<f64>,
}

/// `max(D(f_ba, f_ba_d) − D(f_bb, f_bb_d) + m, 0)`: the appearance pair is a
/// positive, the biometric pair a hard negative.
pub fn distortion_loss(f_ba: &[f64], f_ba_d: &[f64], f_bb: &[f64], f_bb_d: &[f64], margin: f64) -> Result<f64> {
    Ok(distortion_loss_grad(f_ba, f_ba_d, f_bb, f_bb_d, margin)?.0)
}

pub fn distortion_loss_grad(
    f_ba: &[f64],
    f_ba_d: &[f64],
    f_bb: &[f64],
    f_bb_d: &[f64],
    margin: f64,
) -> Result<(f64, DistortionGrad)> {
    check_same_len(f_ba, f_ba_d, "appearance pair")?;
    check_same_len(f_bb, f_bb_d, "biometric pair")?;
    if !(margin >= 0.0) {
        return Err(Error::InvalidArgument(format!("margin {margin} must be >= 0")));
    }
    let da = euclidean(f_ba, f_ba_d);
    let db = euclidean(f_bb, f_bb_d);
    let loss = (da - db + margin).max(0.0);
    if loss <= 0.0 {
        return Ok((
            0.0,
            DistortionGrad {
                f_ba: vec![0.0; f_ba.len()],
                f_ba_d: vec![0.0; f_ba.len()],
                f_bb: vec![0.0; f_bb.len()],
                f_bb_d: vec![0.0; f_bb.len()],
            },
        ));
    }
    let ga = euclidean_grad(f_ba, f_ba_d, da);
    let gb = euclidean_grad(f_bb, f_bb_d, db);
    Ok((
        loss,
        DistortionGrad {
            f_ba_d: ga.iter().map(|v| -v).collect(),
            f_ba: ga,
            f_bb: gb.iter().map(|v| -v).collect(),
            f_bb_d: gb,
        },
    ))
}

/// Weights of the auxiliary terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// λ1, activity cross-entropy.
    pub activity: f64,
    /// λ2, silhouette-teacher distillation.
    pub kd: f64,
    /// λ3, distortion.
    pub distortion: f64,
}

impl LossWeights {
    pub fn new(activity: f64, kd: f64, distortion: f64) -> Result<Self> {
        let w = Self { activity, kd, distortion };
        if [activity, kd, distortion].iter().all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(w)
        } else {
            Err(Error::InvalidArgument(format!("loss weights must be >= 0: {w:?}")))
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { activity: 0.01, kd: 0.01, distortion: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub ce: f64,
    pub tri: f64,
    pub activity: f64,
    pub kd: f64,
    pub dis: f64,
}

impl LossComponents {
    pub fn bio(&self) -> f64 {
        self.ce + self.tri
    }
}

/// `L_Bio + λ1·L_Ac + λ2·L_KD + λ3·L_Dis`.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    c.bio() + w.activity * c.activity + w.kd * c.kd + w.distortion * c.dis
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub bio: f64,
    pub ce: f64,
    pub tri: f64,
    pub activity: f64,
    pub kd: f64,
    pub dis: f64,
    pub total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,L_ce,L_tri,L_Ac,L_KD,L_Dis,L_total";

    pub fn new(c: LossComponents, w: &LossWeights) -> Result<Self> {
        let r = Self {
            bio: c.bio(),
            ce: c.ce,
            tri: c.tri,
            activity: c.activity,
            kd: c.kd,
            dis: c.dis,
            total: total_loss(&c, w),
        };
        if [r.ce, r.tri, r.activity, r.kd, r.dis, r.total].iter().all(|v| v.is_finite()) {
            Ok(r)
        } else {
            Err(Error::NonFinite(format!("loss report {r:?}")))
        }
    }

    pub fn components(&self) -> LossComponents {
        LossComponents {
            ce: self.ce,
            tri: self.tri,
            activity: self.activity,
            kd: self.kd,
            dis: self.dis,
        }
    }

    /// One CSV row; floats use the shortest exact representation.
    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.ce, self.tri, self.activity, self.kd, self.dis, self.total
        )
    }

    pub fn parse_csv_row(row: &str) -> Result<(usize, Self)> {
        let fields: Vec<&str> = row.trim().split(',').collect();
        if fields.len() != 7 {
            return Err(Error::InvalidArgument(format!("loss row needs 7 fields: {row:?}")));
        }
        let step = fields[0]
            .parse()
            .map_err(|e| Error::InvalidArgument(format!("step {:?}: {e}", fields[0])))?;
        let v: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("{f:?}: {e}"))))
            .collect::<Result<_>>()?;
        Ok((
            step,
            Self {
                bio: v[0] + v[1],
                ce: v[0],
                tri: v[1],
                activity: v[2],
                kd: v[3],
                dis: v[4],
                total: v[5],
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    #[test]
    fn ce_analytic_cases() {
        close(cross_entropy(&[0.0; 4], 2).unwrap(), 4f64.ln(), 1e-12);
        close(cross_entropy(&[0.0, 0.0], 0).unwrap(), 2f64.ln(), 1e-12);
        close(cross_entropy(&[800.0, 0.0, -3.0], 0).unwrap(), 0.0, 1e-12);
        assert!(cross_entropy(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn triplet_examples() {
        // D(a,p) = 0.5, D(a,n) = 1.0
        let a = [0.0, 0.0];
        let t = TripletSet { anchor: &a, positive: &[0.5, 0.0], negative: &[0.0, 1.0], margin: 0.3 };
        close(triplet_loss(&t).unwrap(), 0.0, 1e-12);
        let t = TripletSet { anchor: &a, positive: &[0.0, 1.0], negative: &[0.5, 0.0], margin: 0.3 };
        close(triplet_loss(&t).unwrap(), 0.8, 1e-12);
        let t = TripletSet { anchor: &a, positive: &a, negative: &[0.1, 0.0], margin: 0.3 };
        close(triplet_loss(&t).unwrap(), 0.2, 1e-12);
    }

    #[test]
    fn batch_hard_examples() {
        let e = array![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
        assert_eq!(batch_hard_mine(e.view(), &[0, 0, 1, 1], 0.3).unwrap(), 0.0);
        let same = Array2::<f64>::ones((4, 3));
        close(batch_hard_mine(same.view(), &[0, 0, 1, 1], 0.3).unwrap(), 0.3, 1e-15);
    }

    #[test]
    fn batch_hard_rejects_singletons() {
        let e = Array2::<f64>::zeros((3, 2));
        assert!(matches!(batch_hard_mine(e.view(), &[0, 0, 1], 0.3), Err(Error::Sampler(_))));
        assert!(batch_hard_mine(e.view(), &[0, 0, 0], 0.3).is_err());
    }

    #[test]
    fn kd_examples() {
        let z = [0.3, -1.2, 2.0];
        for tau in [0.5, 1.0, 4.0] {
            let x = TeacherStudentLogits { teacher: &z, student: &z, temperature: tau };
            assert_eq!(kd_loss(&x).unwrap(), 0.0);
        }
        let x = TeacherStudentLogits { teacher: &[2f64.ln(), 0.0], student: &[0.0, 0.0], temperature: 1.0 };
        close(kd_loss(&x).unwrap(), 0.056633, 1e-6);
        let bad = TeacherStudentLogits { teacher: &[f64::NAN, 0.0], student: &[0.0, 0.0], temperature: 1.0 };
        assert!(kd_loss(&bad).is_err());
    }

    #[test]
    fn distortion_examples() {
        let o = [0.0, 0.0];
        close(distortion_loss(&o, &o, &o, &[1.0, 0.0], 0.3).unwrap(), 0.0, 1e-12);
        close(distortion_loss(&o, &[0.0, 1.0], &o, &o, 0.3).unwrap(), 1.3, 1e-12);
        close(distortion_loss(&o, &o, &o, &o, 0.3).unwrap(), 0.3, 1e-12);
    }

    #[test]
    fn total_examples() {
        let c = LossComponents { ce: 0.4, tri: 0.6, activity: 2.0, kd: 3.0, dis: 4.0 };
        close(total_loss(&c, &LossWeights::default()), 1.09, 1e-12);
        close(total_loss(&c, &LossWeights::new(0.0, 0.0, 0.0).unwrap()), 1.0, 1e-12);
        let d = LossComponents { ce: 0.8, tri: 1.2, activity: 4.0, kd: 6.0, dis: 8.0 };
        close(total_loss(&d, &LossWeights::default()), 2.18, 1e-12);
    }

    #[test]
    fn report_csv_round_trip() {
        let c = LossComponents { ce: 0.1234567890123, tri: 0.3, activity: 1.0 / 3.0, kd: 0.0, dis: 7.5 };
        let r = LossReport::new(c, &LossWeights::default()).unwrap();
        let (step, back) = LossReport::parse_csv_row(&r.csv_row(12)).unwrap();
        assert_eq!(step, 12);
        assert_eq!(back, r);
    }
}
