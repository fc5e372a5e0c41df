//! Frame storage behind a small interface.
//!
//! Decoding real video containers is left to whatever backend implements
//! [`VideoStore`]; this crate ships an 8-bit raw frame archive
//! (`ACTCLIP1` magic, four little-endian `u32` dims `n C H W`, then bytes)
//! plus in-memory and on-disk stores for it.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::augmentation::FaceBox;
use crate::clip::VideoClip;
use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"ACTCLIP1";

pub trait VideoStore: Send + Sync {
    /// The full decoded RGB video.
    fn rgb(&self, uri: &str) -> Result<VideoClip>;
    /// The full binary silhouette video (`C = 1`).
    fn silhouette(&self, uri: &str) -> Result<VideoClip>;
    /// Per-frame face rectangles for a video; empty when there is no sidecar.
    fn face_boxes(&self, video_uri: &str) -> Result<Vec<FaceBox>>;
}

pub fn encode_archive(clip: &VideoClip) -> Vec<u8> {
    let (n, c, h, w) = clip.dim();
    let mut out = Vec::with_capacity(24 + n * c * h * w);
    out.extend_from_slice(ARCHIVE_MAGIC);
    for d in [n, c, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&clip.to_u8());
    out
}

fn read_header(bytes: &[u8]) -> Result<(usize, usize, usize, usize)> {
    if bytes.len() < 24 || &bytes[..8] != ARCHIVE_MAGIC {
        return Err(Error::InvalidArgument("not a frame archive".into()));
    }
    let d = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    Ok((d(0), d(1), d(2), d(3)))
}

pub fn decode_archive(bytes: &[u8]) -> Result<VideoClip> {
    let dim = read_header(bytes)?;
    VideoClip::from_u8(dim, &bytes[24..])
}

pub fn write_archive(path: impl AsRef<Path>, clip: &VideoClip) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_archive(clip))?;
    Ok(())
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<VideoClip> {
    let mut bytes = Vec::new();
    fs::File::open(path.as_ref())
        .map_err(|e| Error::Missing(format!("{}: {e}", path.as_ref().display())))?
        .read_to_end(&mut bytes)?;
    decode_archive(&bytes)
}

/// Sidecar path for a video's face boxes.
pub fn face_box_sidecar(video_path: &Path) -> PathBuf {
    let mut s = video_path.as_os_str().to_owned();
    s.push(".boxes");
    PathBuf::from(s)
}

fn expect_silhouette(uri: &str, clip: VideoClip) -> Result<VideoClip> {
    if clip.channels() != 1 {
        return Err(Error::Shape(format!(
            "silhouette {uri} has {} channels, expected 1",
            clip.channels()
        )));
    }
    Ok(clip)
}

/// Videos held as 8-bit archives in memory.
#[derive(Debug, Default, Clone)]
pub struct MemoryStore {
    videos: HashMap<String, Vec<u8>>,
    boxes: HashMap<String, Vec<FaceBox>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, uri: impl Into<String>, clip: &VideoClip) {
        self.videos.insert(uri.into(), encode_archive(clip));
    }

    pub fn insert_boxes(&mut self, video_uri: impl Into<String>, boxes: Vec<FaceBox>) {
        self.boxes.insert(video_uri.into(), boxes);
    }

    pub fn remove(&mut self, uri: &str) -> bool {
        self.videos.remove(uri).is_some()
    }

    pub fn contains(&self, uri: &str) -> bool {
        self.videos.contains_key(uri)
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn uris(&self) -> impl Iterator<Item = &str> {
        self.videos.keys().map(String::as_str)
    }

    pub fn raw(&self, uri: &str) -> Option<&[u8]> {
        self.videos.get(uri).map(Vec::as_slice)
    }

    pub fn boxes_of(&self, video_uri: &str) -> Option<&[FaceBox]> {
        self.boxes.get(video_uri).map(Vec::as_slice)
    }

    fn get(&self, uri: &str) -> Result<VideoClip> {
        let bytes = self
            .videos
            .get(uri)
            .ok_or_else(|| Error::Missing(format!("no video stored under {uri}")))?;
        decode_archive(bytes)
    }
}

impl VideoStore for MemoryStore {
    fn rgb(&self, uri: &str) -> Result<VideoClip> {
        self.get(uri)
    }

    fn silhouette(&self, uri: &str) -> Result<VideoClip> {
        expect_silhouette(uri, self.get(uri)?)
    }

    fn face_boxes(&self, video_uri: &str) -> Result<Vec<FaceBox>> {
        Ok(self.boxes.get(video_uri).cloned().unwrap_or_default())
    }
}

/// Archives on disk, with relative uris resolved against `root`.
#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// A store rooted at the directory holding `manifest_path`.
    pub fn for_manifest(manifest_path: &Path) -> Self {
        Self::new(
            manifest_path
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_default(),
        )
    }

    pub fn path(&self, uri: &str) -> PathBuf {
        let p = Path::new(uri);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Loads every video, silhouette and sidecar referenced by `records` into memory.
    pub fn preload<'a>(
        &self,
        records: impl IntoIterator<Item = &'a crate::datapipe::SampleRecord>,
    ) -> Result<MemoryStore> {
        let mut mem = MemoryStore::new();
        for r in records {
            mem.insert(r.video_uri.clone(), &self.rgb(&r.video_uri)?);
            if let Some(s) = &r.silhouette_uri {
                mem.insert(s.clone(), &self.silhouette(s)?);
            }
            let boxes = self.face_boxes(&r.video_uri)?;
            if !boxes.is_empty() {
                mem.insert_boxes(r.video_uri.clone(), boxes);
            }
        }
        Ok(mem)
    }
}

impl VideoStore for FileStore {
    fn rgb(&self, uri: &str) -> Result<VideoClip> {
        read_archive(self.path(uri))
    }

    fn silhouette(&self, uri: &str) -> Result<VideoClip> {
        expect_silhouette(uri, read_archive(self.path(uri))?)
    }

    fn face_boxes(&self, video_uri: &str) -> Result<Vec<FaceBox>> {
        let sidecar = face_box_sidecar(&self.path(video_uri));
        if !sidecar.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&sidecar)?;
        crate::augmentation::parse_face_boxes(&text, &sidecar)
    }
}
