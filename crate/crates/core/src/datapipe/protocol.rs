//! Gallery/probe protocol construction.
//!
//! `Same` splits the test records into a probe subset and a gallery
//! remainder. `Cross` first partitions the activities so that probe and
//! gallery never share one. `ViewMinus` additionally picks one probe view
//! per actor and keeps only other views of that actor in the gallery.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, SampleRecord, Split};
use crate::error::{Error, Result};

/// Attempts made before giving up on a split that strands a probe actor.
pub const MAX_PROTOCOL_ATTEMPTS: u64 = 10;

pub const DEFAULT_PROBE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivityMode {
    Same,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViewMode {
    ViewPlus,
    ViewMinus,
    None,
}

impl fmt::Display for ActivityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivityMode::Same => "same",
            ActivityMode::Cross => "cross",
        })
    }
}

impl FromStr for ActivityMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(Self::Same),
            "cross" => Ok(Self::Cross),
            other => Err(Error::InvalidArgument(format!("unknown activity mode {other:?}"))),
        }
    }
}

impl fmt::Display for ViewMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewMode::ViewPlus => "view_plus",
            ViewMode::ViewMinus => "view_minus",
            ViewMode::None => "none",
        })
    }
}

impl FromStr for ViewMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "view_plus" | "plus" => Ok(Self::ViewPlus),
            "view_minus" | "minus" => Ok(Self::ViewMinus),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidArgument(format!("unknown view mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSplit {
    pub gallery: Vec<SampleRecord>,
    pub probe: Vec<SampleRecord>,
    pub activity_mode: ActivityMode,
    pub view_mode: ViewMode,
    pub seed: u64,
}

fn attempt_rng(seed: u64, attempt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Builds a gallery/probe split from the test records of `manifest`.
pub fn build_protocol(
    manifest: &DatasetManifest,
    activity_mode: ActivityMode,
    view_mode: ViewMode,
    probe_fraction: f64,
    seed: u64,
) -> Result<ProtocolSplit> {
    if !(probe_fraction > 0.0 && probe_fraction < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "probe_fraction {probe_fraction} must lie in (0, 0.5)"
        )));
    }
    let test: Vec<&SampleRecord> = manifest.split(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Protocol("manifest has no test records".into()));
    }
    if view_mode == ViewMode::ViewMinus {
        if let Some(r) = test.iter().find(|r| r.view_id.is_none()) {
            return Err(Error::Protocol(format!(
                "view_minus needs view ids, {} has none",
                r.video_uri
            )));
        }
    }
    let activities: BTreeSet<u32> = test.iter().map(|r| r.activity_id).collect();
    if activity_mode == ActivityMode::Cross && activities.len() < 2 {
        return Err(Error::Protocol(format!(
            "cross-activity protocol needs at least 2 test activities, found {}",
            activities.len()
        )));
    }

    for attempt in 0..MAX_PROTOCOL_ATTEMPTS {
        let mut rng = attempt_rng(seed, attempt);
        let split = draw_split(&test, &activities, activity_mode, view_mode, probe_fraction, &mut rng);
        let gallery_actors: HashSet<u32> = split.0.iter().map(|r| r.actor_id).collect();
        if split.1.is_empty() || split.0.is_empty() {
            continue;
        }
        if split.1.iter().all(|p| gallery_actors.contains(&p.actor_id)) {
            return Ok(ProtocolSplit {
                gallery: split.0.into_iter().cloned().collect(),
                probe: split.1.into_iter().cloned().collect(),
                activity_mode,
                view_mode,
                seed,
            });
        }
    }
    Err(Error::Protocol(format!(
        "every one of {MAX_PROTOCOL_ATTEMPTS} draws left a probe actor without gallery samples"
    )))
}

type Draw<'a> = (Vec<&'a SampleRecord>, Vec<&'a SampleRecord>);

fn draw_split<'a>(
    test: &[&'a SampleRecord],
    activities: &BTreeSet<u32>,
    activity_mode: ActivityMode,
    view_mode: ViewMode,
    probe_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Draw<'a> {
    let (probe_acts, gallery_acts): (BTreeSet<u32>, BTreeSet<u32>) = match activity_mode {
        ActivityMode::Same => (activities.clone(), activities.clone()),
        ActivityMode::Cross => {
            let mut acts: Vec<u32> = activities.iter().copied().collect();
            acts.shuffle(rng);
            let k = (acts.len() / 2).max(1);
            (
                acts[..k].iter().copied().collect(),
                acts[k..].iter().copied().collect(),
            )
        }
    };
    let eligible: Vec<&SampleRecord> = test
        .iter()
        .copied()
        .filter(|r| probe_acts.contains(&r.activity_id))
        .collect();

    // One held-out view per actor; only actors seen from another gallery view qualify.
    let probe_view: BTreeMap<u32, u32> = if view_mode == ViewMode::ViewMinus {
        let mut views: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for r in &eligible {
            views.entry(r.actor_id).or_default().insert(r.view_id.unwrap_or(0));
        }
        let mut gallery_views: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for r in test.iter().filter(|r| gallery_acts.contains(&r.activity_id)) {
            gallery_views
                .entry(r.actor_id)
                .or_default()
                .insert(r.view_id.unwrap_or(0));
        }
        let mut chosen = BTreeMap::new();
        for (actor, vs) in views {
            let options: Vec<u32> = vs
                .into_iter()
                .filter(|v| {
                    gallery_views
                        .get(&actor)
                        .is_some_and(|g| g.iter().any(|gv| gv != v))
                })
                .collect();
            if let Some(&v) = options.choose(rng) {
                chosen.insert(actor, v);
            }
        }
        chosen
    } else {
        BTreeMap::new()
    };

    let mut candidates: Vec<usize> = (0..eligible.len())
        .filter(|&i| {
            view_mode != ViewMode::ViewMinus
                || probe_view.get(&eligible[i].actor_id) == eligible[i].view_id.as_ref()
        })
        .collect();
    let want = ((probe_fraction * eligible.len() as f64).round() as usize)
        .max(1)
        .min(candidates.len());
    candidates.shuffle(rng);
    let mut chosen: Vec<usize> = candidates[..want].to_vec();
    chosen.sort_unstable();
    let probe_set: HashSet<*const SampleRecord> =
        chosen.iter().map(|&i| eligible[i] as *const _).collect();
    let probe: Vec<&SampleRecord> = chosen.iter().map(|&i| eligible[i]).collect();

    let gallery: Vec<&SampleRecord> = test
        .iter()
        .copied()
        .filter(|r| gallery_acts.contains(&r.activity_id))
        .filter(|r| !probe_set.contains(&(*r as *const _)))
        .filter(|r| {
            view_mode != ViewMode::ViewMinus
                || probe_view.get(&r.actor_id) != r.view_id.as_ref()
        })
        .collect();
    (gallery, probe)
}

impl ProtocolSplit {
    /// Checks every structural invariant; returns a description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let gallery_actors: HashSet<u32> = self.gallery.iter().map(|r| r.actor_id).collect();
        if let Some(p) = self.probe.iter().find(|p| !gallery_actors.contains(&p.actor_id)) {
            return Err(format!("probe actor {} missing from gallery", p.actor_id));
        }
        let gallery_uris: HashSet<&str> = self.gallery.iter().map(|r| r.video_uri.as_str()).collect();
        if let Some(p) = self.probe.iter().find(|p| gallery_uris.contains(p.video_uri.as_str())) {
            return Err(format!("{} is in both gallery and probe", p.video_uri));
        }
        if self.activity_mode == ActivityMode::Cross {
            let g: HashSet<u32> = self.gallery.iter().map(|r| r.activity_id).collect();
            if let Some(p) = self.probe.iter().find(|p| g.contains(&p.activity_id)) {
                return Err(format!("activity {} on both sides", p.activity_id));
            }
        }
        if self.view_mode == ViewMode::ViewMinus {
            for p in &self.probe {
                if self
                    .gallery
                    .iter()
                    .any(|g| g.actor_id == p.actor_id && g.view_id == p.view_id)
                {
                    return Err(format!(
                        "gallery shares view {:?} with probe {}",
                        p.view_id, p.video_uri
                    ));
                }
            }
        }
        Ok(())
    }

    /// Serializes to manifest format with a protocol header and section markers.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#protocol activity_mode={} view_mode={} seed={}\n#gallery\n",
            self.activity_mode, self.view_mode, self.seed
        );
        for r in &self.gallery {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out.push_str("#probe\n");
        for r in &self.probe {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut header = None;
        let mut section: Option<bool> = None; // Some(true) = gallery
        let mut gallery = Vec::new();
        let mut probe = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if let Some(rest) = line.strip_prefix("#protocol") {
                let mut kv = BTreeMap::new();
                for part in rest.split_whitespace() {
                    let (k, v) = part
                        .split_once('=')
                        .ok_or_else(|| parse_err(i + 1, format!("bad header field {part:?}")))?;
                    kv.insert(k, v);
                }
                let get = |k: &str| {
                    kv.get(k)
                        .copied()
                        .ok_or_else(|| parse_err(i + 1, format!("header lacks {k}")))
                };
                let activity_mode: ActivityMode = get("activity_mode")?.parse()?;
                let view_mode: ViewMode = get("view_mode")?.parse()?;
                let seed: u64 = get("seed")?
                    .parse()
                    .map_err(|e| parse_err(i + 1, format!("bad seed: {e}")))?;
                header = Some((activity_mode, view_mode, seed));
            } else if line.trim() == "#gallery" {
                section = Some(true);
            } else if line.trim() == "#probe" {
                section = Some(false);
            } else if line.trim().is_empty() || line.starts_with('#') {
                continue;
            } else {
                let record = SampleRecord::parse_line(line).map_err(|m| parse_err(i + 1, m))?;
                match section {
                    Some(true) => gallery.push(record),
                    Some(false) => probe.push(record),
                    None => return Err(parse_err(i + 1, "record before #gallery/#probe".into())),
                }
            }
        }
        let (activity_mode, view_mode, seed) =
            header.ok_or_else(|| parse_err(1, "missing #protocol header".into()))?;
        Ok(Self {
            gallery,
            probe,
            activity_mode,
            view_mode,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn grid_manifest(actors: u32, activities: u32, clips: u32, views: u32) -> DatasetManifest {
        let mut records = Vec::new();
        for a in 0..actors {
            for act in 0..activities {
                for c in 0..clips {
                    records.push(SampleRecord {
                        video_uri: format!("a{a}_act{act}_c{c}.clip"),
                        silhouette_uri: None,
                        actor_id: a,
                        activity_id: act,
                        view_id: Some(c % views),
                        split: Split::Test,
                    });
                }
            }
        }
        DatasetManifest::new(records).unwrap()
    }

    #[test]
    fn same_mode_sizes() {
        let m = grid_manifest(5, 4, 5, 2);
        assert_eq!(m.records.len(), 100);
        let p = build_protocol(&m, ActivityMode::Same, ViewMode::None, 0.2, 3).unwrap();
        assert_eq!(p.probe.len(), 20);
        assert_eq!(p.gallery.len(), 80);
        p.check_invariants().unwrap();
    }

    #[test]
    fn cross_mode_disjoint_activities() {
        let m = grid_manifest(5, 4, 5, 2);
        let p = build_protocol(&m, ActivityMode::Cross, ViewMode::None, 0.2, 9).unwrap();
        let g: BTreeSet<u32> = p.gallery.iter().map(|r| r.activity_id).collect();
        let q: BTreeSet<u32> = p.probe.iter().map(|r| r.activity_id).collect();
        assert!(g.is_disjoint(&q));
        assert!(g.union(&q).all(|a| *a < 4));
        p.check_invariants().unwrap();
    }

    #[test]
    fn cross_mode_needs_two_activities() {
        let m = grid_manifest(3, 1, 4, 1);
        assert!(build_protocol(&m, ActivityMode::Cross, ViewMode::None, 0.2, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let m = grid_manifest(6, 4, 3, 3);
        let a = build_protocol(&m, ActivityMode::Cross, ViewMode::ViewMinus, 0.2, 77).unwrap();
        let b = build_protocol(&m, ActivityMode::Cross, ViewMode::ViewMinus, 0.2, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn view_minus_excludes_probe_views() {
        let m = grid_manifest(6, 3, 4, 2);
        let p = build_protocol(&m, ActivityMode::Same, ViewMode::ViewMinus, 0.2, 1).unwrap();
        p.check_invariants().unwrap();
        assert!(!p.probe.is_empty());
    }

    #[test]
    fn view_minus_with_single_view_fails() {
        let m = grid_manifest(4, 2, 4, 1);
        assert!(matches!(
            build_protocol(&m, ActivityMode::Same, ViewMode::ViewMinus, 0.2, 1),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn rejects_bad_fraction() {
        let m = grid_manifest(3, 2, 2, 1);
        assert!(build_protocol(&m, ActivityMode::Same, ViewMode::None, 0.5, 1).is_err());
        assert!(build_protocol(&m, ActivityMode::Same, ViewMode::None, 0.0, 1).is_err());
    }

    #[test]
    fn text_round_trip() {
        let m = grid_manifest(4, 4, 3, 2);
        let p = build_protocol(&m, ActivityMode::Cross, ViewMode::ViewPlus, 0.25, 5).unwrap();
        let text = p.to_text();
        assert!(text.starts_with("#protocol activity_mode=cross view_mode=view_plus seed=5\n"));
        let back = ProtocolSplit::parse(&text, Path::new("p.tsv")).unwrap();
        assert_eq!(back, p);
    }
}
