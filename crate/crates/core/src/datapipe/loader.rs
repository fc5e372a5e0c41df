use super::manifest::SampleRecord;
use super::sampling::{clip_indices, resize_frames};
use super::store::VideoStore;
use crate::clip::VideoClip;
use crate::error::{Error, Result};

/// Turns manifest records into fixed-shape model inputs: `n` frames at a
/// temporal stride, resized to `height × width`.
#[derive(Clone, Copy)]
pub struct ClipLoader<'a> {
    pub store: &'a dyn VideoStore,
    pub frames: usize,
    pub stride: usize,
    pub height: usize,
    pub width: usize,
}

impl<'a> ClipLoader<'a> {
    pub fn new(store: &'a dyn VideoStore, frames: usize, stride: usize, height: usize, width: usize) -> Self {
        Self { store, frames, stride, height, width }
    }

    fn shape(&self, video: &VideoClip, seed: u64) -> Result<VideoClip> {
        let idx = clip_indices(video.len(), self.frames, self.stride, seed)?;
        resize_frames(&video.select(&idx)?, self.height, self.width)
    }

    pub fn rgb(&self, record: &SampleRecord, seed: u64) -> Result<VideoClip> {
        self.shape(&self.store.rgb(&record.video_uri)?, seed)
    }

    pub fn silhouette(&self, record: &SampleRecord, seed: u64) -> Result<VideoClip> {
        let uri = record
            .silhouette_uri
            .as_deref()
            .ok_or_else(|| Error::Missing(format!("no silhouette for {}", record.video_uri)))?;
        self.shape(&self.store.silhouette(uri)?, seed)
    }

    /// RGB clip and silhouette clip over the same frame indices.
    pub fn pair(&self, record: &SampleRecord, seed: u64) -> Result<(VideoClip, VideoClip)> {
        let uri = record
            .silhouette_uri
            .as_deref()
            .ok_or_else(|| Error::Missing(format!("no silhouette for {}", record.video_uri)))?;
        let rgb = self.store.rgb(&record.video_uri)?;
        let sil = self.store.silhouette(uri)?;
        if sil.len() != rgb.len() {
            return Err(Error::Shape(format!("silhouette and video lengths differ for {}", record.video_uri)));
        }
        Ok((self.shape(&rgb, seed)?, self.shape(&sil, seed)?))
    }
}
