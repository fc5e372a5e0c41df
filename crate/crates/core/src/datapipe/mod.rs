//! Manifest ingestion, clip sampling, protocol construction and P×K batching.

mod batching;
mod loader;
mod manifest;
mod protocol;
mod sampling;
mod store;

pub use batching::{make_batches, BatchEntry, BatchSpec};
pub use loader::ClipLoader;
pub use manifest::{load_manifest, resolve_uri, DatasetManifest, SampleRecord, Split};
pub use protocol::{
    build_protocol, ActivityMode, ProtocolSplit, ViewMode, DEFAULT_PROBE_FRACTION,
    MAX_PROTOCOL_ATTEMPTS,
};
pub use sampling::{
    clip_indices, clip_span, draw_start, indices_from_start, resize_frames, sample_clip,
};
pub use store::{
    decode_archive, encode_archive, face_box_sidecar, read_archive, write_archive, FileStore,
    MemoryStore, VideoStore, ARCHIVE_MAGIC,
};
