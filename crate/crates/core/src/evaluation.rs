//! Retrieval embeddings and the metric suite: CMC rank-k, mAP and TAR at a
//! fixed FAR.
//!
//! Distances are Euclidean on the retrieval embeddings; match scores for
//! TAR/FAR are negated distances. Rankings break distance ties by gallery
//! order.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2};

use crate::datapipe::{ProtocolSplit, SampleRecord};
use crate::error::{Error, Result};
use crate::model::FeatureBundle;

/// FAR levels reported by default.
pub const DEFAULT_FAR_LEVELS: [f64; 1] = [0.001];

/// Which feature a clip is retrieved by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// `f_bb` alone.
    Biometric,
    /// `[F_Ac ; f_bb]`, each part unit-normalized.
    BiometricWithPrior,
    /// `f_ba` alone.
    Appearance,
}

impl FeatureKind {
    pub fn with_prior(use_activity_prior: bool) -> Self {
        if use_activity_prior {
            Self::BiometricWithPrior
        } else {
            Self::Biometric
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Array1<f64>,
    pub warnings: Vec<String>,
}

fn normalized(v: &Array1<f32>, name: &str, warnings: &mut Vec<String>) -> Vec<f64> {
    let v: Vec<f64> = v.iter().map(|x| *x as f64).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        let msg = format!("{name} has zero norm; using a zero vector");
        log::warn!("{msg}");
        warnings.push(msg);
        return vec![0.0; v.len()];
    }
    v.into_iter().map(|x| x / norm).collect()
}

pub fn feature_embedding(bundle: &FeatureBundle, kind: FeatureKind) -> Embedding {
    let mut warnings = Vec::new();
    let v = match kind {
        FeatureKind::Biometric => normalized(&bundle.f_bb, "f_bb", &mut warnings),
        FeatureKind::Appearance => normalized(&bundle.f_ba, "f_ba", &mut warnings),
        FeatureKind::BiometricWithPrior => {
            let mut v = normalized(&bundle.f_ac, "F_Ac", &mut warnings);
            v.extend(normalized(&bundle.f_bb, "f_bb", &mut warnings));
            v
        }
    };
    Embedding { vector: Array1::from(v), warnings }
}

/// `[F_Ac ; f_bb]` with the prior, `f_bb` without; each part L2-normalized.
pub fn retrieval_embedding(bundle: &FeatureBundle, use_activity_prior: bool) -> Embedding {
    feature_embedding(bundle, FeatureKind::with_prior(use_activity_prior))
}

/// Stacks embeddings into `[N, dim]`, collecting warnings.
pub fn embed_all(bundles: &[FeatureBundle], kind: FeatureKind) -> Result<(Array2<f64>, Vec<String>)> {
    let first = bundles.first().ok_or_else(|| Error::InvalidArgument("nothing to embed".into()))?;
    let dim = feature_embedding(first, kind).vector.len();
    let mut out = Array2::zeros((bundles.len(), dim));
    let mut warnings = Vec::new();
    for (i, b) in bundles.iter().enumerate() {
        let e = feature_embedding(b, kind);
        out.row_mut(i).assign(&e.vector);
        warnings.extend(e.warnings);
    }
    Ok((out, warnings))
}

/// Euclidean distance of every probe row to every gallery row.
pub fn pairwise_distances(probe: ArrayView2<f64>, gallery: ArrayView2<f64>) -> Result<Array2<f64>> {
    if probe.ncols() != gallery.ncols() {
        return Err(Error::Shape(format!(
            "probe dim {} vs gallery dim {}",
            probe.ncols(),
            gallery.ncols()
        )));
    }
    let mut d = Array2::zeros((probe.nrows(), gallery.nrows()));
    for (i, p) in probe.rows().into_iter().enumerate() {
        for (j, g) in gallery.rows().into_iter().enumerate() {
            d[[i, j]] = p.iter().zip(g.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    /// Row `i` lists gallery indices by ascending distance to probe `i`.
    pub rankings: Array2<usize>,
    pub distances: Array2<f64>,
}

impl RetrievalResult {
    pub fn from_distances(distances: Array2<f64>) -> Self {
        let (p, g) = distances.dim();
        let mut rankings = Array2::zeros((p, g));
        for i in 0..p {
            let mut idx: Vec<usize> = (0..g).collect();
            idx.sort_by(|&a, &b| distances[[i, a]].total_cmp(&distances[[i, b]]));
            for (j, v) in idx.into_iter().enumerate() {
                rankings[[i, j]] = v;
            }
        }
        Self { rankings, distances }
    }

    pub fn num_probes(&self) -> usize {
        self.rankings.nrows()
    }

    pub fn gallery_size(&self) -> usize {
        self.rankings.ncols()
    }
}

fn check_ids(result: &RetrievalResult, probe_ids: &[u32], gallery_ids: &[u32]) -> Result<()> {
    if probe_ids.len() != result.num_probes() || gallery_ids.len() != result.gallery_size() {
        return Err(Error::Shape(format!(
            "{} probe ids / {} gallery ids for a {}x{} result",
            probe_ids.len(),
            gallery_ids.len(),
            result.num_probes(),
            result.gallery_size()
        )));
    }
    if let Some(p) = probe_ids.iter().find(|p| !gallery_ids.contains(p)) {
        return Err(Error::Protocol(format!("probe actor {p} has no gallery entry")));
    }
    Ok(())
}

/// Cumulative match curve; entry `k − 1` is the rank-k accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct Cmc {
    pub curve: Vec<f64>,
}

impl Cmc {
    /// Rank-k accuracy; ranks past the gallery size saturate at the last entry.
    pub fn rank(&self, k: usize) -> f64 {
        if k == 0 || self.curve.is_empty() {
            return 0.0;
        }
        self.curve[(k - 1).min(self.curve.len() - 1)]
    }
}

pub fn cmc(result: &RetrievalResult, probe_ids: &[u32], gallery_ids: &[u32]) -> Result<Cmc> {
    check_ids(result, probe_ids, gallery_ids)?;
    let g = result.gallery_size();
    let mut hits = vec![0usize; g];
    for (i, &pid) in probe_ids.iter().enumerate() {
        let first = result
            .rankings
            .row(i)
            .iter()
            .position(|&j| gallery_ids[j] == pid)
            .expect("checked above");
        hits[first] += 1;
    }
    let p = probe_ids.len().max(1) as f64;
    let mut acc = 0;
    let curve = hits
        .into_iter()
        .map(|h| {
            acc += h;
            acc as f64 / p
        })
        .collect();
    Ok(Cmc { curve })
}

pub fn mean_ap(result: &RetrievalResult, probe_ids: &[u32], gallery_ids: &[u32]) -> Result<f64> {
    check_ids(result, probe_ids, gallery_ids)?;
    let mut total = 0.0;
    for (i, &pid) in probe_ids.iter().enumerate() {
        let (mut found, mut sum) = (0usize, 0.0);
        for (r, &j) in result.rankings.row(i).iter().enumerate() {
            if gallery_ids[j] == pid {
                found += 1;
                sum += found as f64 / (r + 1) as f64;
            }
        }
        total += sum / found as f64;
    }
    Ok(total / probe_ids.len().max(1) as f64)
}

/// True-accept rate at the lowest threshold whose false-accept rate is at most `far_level`.
///
/// With impostor scores sorted in descending order `s_1 ≥ s_2 ≥ …` and
/// `c = ⌊far·N⌋`, the threshold sits just above `s_{c+1}`, so the result is
/// the fraction of genuine scores strictly greater than `s_{c+1}`.
pub fn tar_at_far(genuine: &[f64], impostor: &[f64], far_level: f64) -> Result<f64> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::InvalidArgument("TAR@FAR needs genuine and impostor scores".into()));
    }
    if !(far_level > 0.0 && far_level < 1.0) {
        return Err(Error::InvalidArgument(format!("far_level {far_level} must lie in (0, 1)")));
    }
    let mut imp = impostor.to_vec();
    imp.sort_by(|a, b| b.total_cmp(a));
    let allowed = ((far_level * imp.len() as f64) + 1e-9).floor() as usize;
    let cut = imp[allowed.min(imp.len() - 1)];
    Ok(genuine.iter().filter(|&&g| g > cut).count() as f64 / genuine.len() as f64)
}

/// Mean over probes of the fraction of gallery entries sharing the probe's identity.
pub fn chance_rank1(probe_ids: &[u32], gallery_ids: &[u32]) -> f64 {
    if probe_ids.is_empty() || gallery_ids.is_empty() {
        return 0.0;
    }
    probe_ids
        .iter()
        .map(|p| gallery_ids.iter().filter(|g| *g == p).count() as f64 / gallery_ids.len() as f64)
        .sum::<f64>()
        / probe_ids.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rank1: f64,
    pub rank5: f64,
    pub map: f64,
    /// `(far_level, tar)` pairs.
    pub tar_at_far: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub protocol: String,
    pub activity_mode: String,
    pub view_mode: String,
    pub rank1: f64,
    pub rank5: f64,
    pub map: f64,
    pub tar_at_far_0_001: f64,
}

pub const METRICS_CSV_HEADER: &str = "protocol,activity_mode,view_mode,rank1,rank5,mAP,tar_at_far_0.001";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:?},{:?},{:?},{:?}",
            self.protocol, self.activity_mode, self.view_mode, self.rank1, self.rank5, self.map, self.tar_at_far_0_001
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(Error::InvalidArgument(format!("metrics row needs 7 fields: {line:?}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("{s:?}: {e}")));
        Ok(Self {
            protocol: f[0].into(),
            activity_mode: f[1].into(),
            view_mode: f[2].into(),
            rank1: num(f[3])?,
            rank5: num(f[4])?,
            map: num(f[5])?,
            tar_at_far_0_001: num(f[6])?,
        })
    }
}

impl MetricsReport {
    pub fn tar(&self, far_level: f64) -> Option<f64> {
        self.tar_at_far.iter().find(|(f, _)| (f - far_level).abs() < 1e-12).map(|(_, t)| *t)
    }

    pub fn row(&self, protocol: &str, activity_mode: &str, view_mode: &str) -> MetricsRow {
        MetricsRow {
            protocol: protocol.into(),
            activity_mode: activity_mode.into(),
            view_mode: view_mode.into(),
            rank1: self.rank1,
            rank5: self.rank5,
            map: self.map,
            tar_at_far_0_001: self.tar(0.001).unwrap_or(f64::NAN),
        }
    }

    pub fn table(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{title}");
        let _ = writeln!(s, "  {:<16} {:>8}", "metric", "value");
        let _ = writeln!(s, "  {:<16} {:>7.2}%", "rank-1", 100.0 * self.rank1);
        let _ = writeln!(s, "  {:<16} {:>7.2}%", "rank-5", 100.0 * self.rank5);
        let _ = writeln!(s, "  {:<16} {:>7.2}%", "mAP", 100.0 * self.map);
        for (far, tar) in &self.tar_at_far {
            let _ = writeln!(s, "  {:<16} {:>7.2}%", format!("TAR@{}%FAR", far * 100.0), 100.0 * tar);
        }
        s
    }
}

/// All metrics for precomputed embeddings.
pub fn metrics_from_embeddings(
    gallery: ArrayView2<f64>,
    gallery_ids: &[u32],
    probe: ArrayView2<f64>,
    probe_ids: &[u32],
    far_levels: &[f64],
) -> Result<MetricsReport> {
    let result = RetrievalResult::from_distances(pairwise_distances(probe, gallery)?);
    let curve = cmc(&result, probe_ids, gallery_ids)?;
    let map = mean_ap(&result, probe_ids, gallery_ids)?;
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    for (i, &p) in probe_ids.iter().enumerate() {
        for (j, &g) in gallery_ids.iter().enumerate() {
            let score = -result.distances[[i, j]];
            if p == g {
                genuine.push(score);
            } else {
                impostor.push(score);
            }
        }
    }
    let tar_at_far = if impostor.is_empty() {
        far_levels.iter().map(|&f| (f, 1.0)).collect()
    } else {
        far_levels
            .iter()
            .map(|&f| Ok((f, tar_at_far(&genuine, &impostor, f)?)))
            .collect::<Result<_>>()?
    };
    Ok(MetricsReport { rank1: curve.rank(1), rank5: curve.rank(5), map, tar_at_far, warnings: Vec::new() })
}

/// Embeds every gallery and probe record through `embed` and scores the protocol.
pub fn evaluate(
    protocol: &ProtocolSplit,
    embed: &mut dyn FnMut(&[SampleRecord]) -> Result<Vec<FeatureBundle>>,
    kind: FeatureKind,
) -> Result<MetricsReport> {
    let gallery = embed(&protocol.gallery)?;
    let probe = embed(&protocol.probe)?;
    let (g, mut warnings) = embed_all(&gallery, kind)?;
    let (p, w) = embed_all(&probe, kind)?;
    warnings.extend(w);
    let gallery_ids: Vec<u32> = protocol.gallery.iter().map(|r| r.actor_id).collect();
    let probe_ids: Vec<u32> = protocol.probe.iter().map(|r| r.actor_id).collect();
    let mut report = metrics_from_embeddings(g.view(), &gallery_ids, p.view(), &probe_ids, &DEFAULT_FAR_LEVELS)?;
    report.warnings = warnings;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn bundle(f_bb: Vec<f32>, f_ac: Vec<f32>) -> FeatureBundle {
        FeatureBundle {
            f_ab: Array1::zeros(4),
            f_ba: Array1::from(vec![1.0, 0.0]),
            identity_logits: Array1::zeros(2),
            activity_logits: Array1::zeros(2),
            f_bb: Array1::from(f_bb),
            f_ac: Array1::from(f_ac),
        }
    }

    #[test]
    fn embedding_contracts() {
        let b = bundle(vec![3.0; 128], vec![1.0; 64]);
        assert_eq!(retrieval_embedding(&b, true).vector.len(), 192);
        let e = retrieval_embedding(&b, false);
        assert_eq!(e.vector.len(), 128);
        assert!((e.vector.dot(&e.vector) - 1.0).abs() < 1e-12);
        let z = retrieval_embedding(&bundle(vec![0.0; 8], vec![1.0; 4]), false);
        assert!(z.vector.iter().all(|v| *v == 0.0));
        assert_eq!(z.warnings.len(), 1);
    }

    #[test]
    fn distance_examples() {
        let a = array![[1.0, 0.0]];
        let b = array![[0.0, 1.0], [1.0, 0.0]];
        let d = pairwise_distances(a.view(), b.view()).unwrap();
        assert!((d[[0, 0]] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(d[[0, 1]], 0.0);
        assert!(pairwise_distances(a.view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn cmc_examples() {
        let d = array![[0.1, 0.5, 0.9, 1.0], [0.1, 0.2, 0.3, 0.4]];
        let r = RetrievalResult::from_distances(d);
        let c = cmc(&r, &[7, 9], &[7, 8, 9, 8]).unwrap();
        assert_eq!(c.rank(1), 0.5);
        assert_eq!(c.rank(5), 1.0);
        assert!(cmc(&r, &[7, 5], &[7, 8, 9, 8]).is_err());
    }

    #[test]
    fn ap_example() {
        let r = RetrievalResult::from_distances(array![[0.1, 0.2, 0.3]]);
        let ap = mean_ap(&r, &[1], &[1, 2, 1]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        let perfect = mean_ap(&r, &[1], &[1, 1, 2]).unwrap();
        assert_eq!(perfect, 1.0);
    }

    #[test]
    fn ties_follow_gallery_order() {
        let r = RetrievalResult::from_distances(array![[0.5, 0.5, 0.1, 0.5]]);
        assert_eq!(r.rankings.row(0).to_vec(), vec![2, 0, 1, 3]);
    }

    #[test]
    fn tar_examples() {
        assert_eq!(tar_at_far(&[5.0, 6.0], &[1.0, 2.0, 3.0], 0.1).unwrap(), 1.0);
        let imp: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let admitted = |t: f64| imp.iter().filter(|&&s| s > t).count();
        assert_eq!(tar_at_far(&imp, &imp, 0.001).unwrap(), 0.001);
        assert!(admitted(998.0) <= 1);
        let xs: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        assert!((tar_at_far(&xs, &xs, 0.1).unwrap() - 0.1).abs() < 0.011);
        assert!(tar_at_far(&[], &[1.0], 0.1).is_err());
    }

    #[test]
    fn chance_counts_matching_entries() {
        assert_eq!(chance_rank1(&[1, 2], &[1, 2, 3, 4]), 0.25);
    }

    #[test]
    fn metrics_row_round_trip() {
        let row = MetricsRow {
            protocol: "synthetic".into(),
            activity_mode: "same".into(),
            view_mode: "none".into(),
            rank1: 0.7123456789,
            rank5: 0.9,
            map: 1.0 / 3.0,
            tar_at_far_0_001: 0.25,
        };
        assert_eq!(MetricsRow::parse(&row.to_csv()).unwrap(), row);
    }
}
