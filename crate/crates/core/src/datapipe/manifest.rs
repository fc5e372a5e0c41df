//! Line-oriented dataset manifests.
//!
//! One record per line, tab separated:
//! `video_uri  silhouette_uri|-  actor_id  activity_id  view_id|-  split`.
//! Lines starting with `#` are comments.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One labeled clip reference.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SampleRecord {
    pub video_uri: String,
    pub silhouette_uri: Option<String>,
    pub actor_id: u32,
    pub activity_id: u32,
    pub view_id: Option<u32>,
    pub split: Split,
}

impl SampleRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.video_uri,
            self.silhouette_uri.as_deref().unwrap_or("-"),
            self.actor_id,
            self.activity_id,
            self.view_id
                .map(|v| v.to_string())
                .unwrap_or_else(|| "-".into()),
            self.split
        )
    }

    pub fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let fields: Vec<&str> = line.split('\t').collect();
        const NAMES: [&str; 6] = [
            "video_uri",
            "silhouette_uri",
            "actor_id",
            "activity_id",
            "view_id",
            "split",
        ];
        if fields.len() != NAMES.len() {
            let missing = NAMES.get(fields.len()).copied().unwrap_or("end of line");
            return Err(format!(
                "expected {} tab-separated fields, found {} (missing {missing})",
                NAMES.len(),
                fields.len()
            ));
        }
        let video_uri = fields[0].trim();
        if video_uri.is_empty() || video_uri == "-" {
            return Err("empty video_uri".into());
        }
        let optional = |s: &str| {
            let s = s.trim();
            (s != "-" && !s.is_empty()).then(|| s.to_string())
        };
        let id = |s: &str, name: &str| {
            s.trim()
                .parse::<u32>()
                .map_err(|e| format!("bad {name} {s:?}: {e}"))
        };
        let view_id = match optional(fields[4]) {
            Some(v) => Some(id(&v, "view_id")?),
            None => None,
        };
        Ok(Self {
            video_uri: video_uri.to_string(),
            silhouette_uri: optional(fields[1]),
            actor_id: id(fields[2], "actor_id")?,
            activity_id: id(fields[3], "activity_id")?,
            view_id,
            split: fields[5].trim().parse()?,
        })
    }
}

/// A parsed manifest with label-space sizes derived from the records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub num_actors: usize,
    pub num_activities: usize,
}

impl DatasetManifest {
    /// Validates the record set: unique video uris and disjoint train/test actors.
    pub fn new(records: Vec<SampleRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.video_uri.as_str()) {
                return Err(Error::Duplicate(r.video_uri.clone()));
            }
        }
        let train: BTreeSet<u32> = records
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.actor_id)
            .collect();
        if let Some(r) = records
            .iter()
            .find(|r| r.split == Split::Test && train.contains(&r.actor_id))
        {
            return Err(Error::InvalidArgument(format!(
                "actor {} appears in both train and test splits",
                r.actor_id
            )));
        }
        let num_actors = records.iter().map(|r| r.actor_id as usize + 1).max().unwrap_or(0);
        let num_activities = records
            .iter()
            .map(|r| r.activity_id as usize + 1)
            .max()
            .unwrap_or(0);
        Ok(Self {
            records,
            num_actors,
            num_activities,
        })
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let record = SampleRecord::parse_line(trimmed).map_err(|message| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            })?;
            records.push(record);
        }
        Self::new(records)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(
            "# video_uri\tsilhouette_uri\tactor_id\tactivity_id\tview_id\tsplit\n",
        );
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Records of one split grouped by actor, in ascending actor order.
    pub fn by_actor(&self, split: Split) -> BTreeMap<u32, Vec<&SampleRecord>> {
        let mut map: BTreeMap<u32, Vec<&SampleRecord>> = BTreeMap::new();
        for r in self.split(split) {
            map.entry(r.actor_id).or_default().push(r);
        }
        map
    }

    /// Dense class indices for the training actors, in ascending id order.
    pub fn train_classes(&self) -> BTreeMap<u32, usize> {
        self.by_actor(Split::Train)
            .keys()
            .enumerate()
            .map(|(i, &a)| (a, i))
            .collect()
    }

    /// A manifest restricted to one split (label-space sizes are kept).
    pub fn only(&self, split: Split) -> Self {
        Self {
            records: self.split(split).cloned().collect(),
            num_actors: self.num_actors,
            num_activities: self.num_activities,
        }
    }
}

/// Reads a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    DatasetManifest::parse(&text, path)
}

/// Resolves a manifest-relative uri against the manifest's directory.
pub fn resolve_uri(manifest_path: &Path, uri: &str) -> PathBuf {
    let p = Path::new(uri);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path
            .parent()
            .map(|d| d.join(p))
            .unwrap_or_else(|| p.to_path_buf())
    }
}
