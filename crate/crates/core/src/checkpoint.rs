//! Parameter archives with a `key = value` metadata sidecar.
//!
//! The archive is `ACTCKPT1`, a little-endian `u32` tensor count, then per
//! tensor its name (length-prefixed UTF-8), a `u32` value count and the raw
//! `f32` values. The sidecar sits next to it with `.meta` appended.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Student, Teacher};
use crate::nn::{collect, collect_mut, Params};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ACTCKPT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Teacher,
    Student,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub role: Role,
    pub config: ModelConfig,
    pub epoch: usize,
    pub seed: u64,
    /// Metric snapshot at save time, e.g. the last epoch loss.
    pub metrics: BTreeMap<String, f64>,
}

impl CheckpointMeta {
    pub fn new(role: Role, config: ModelConfig, epoch: usize, seed: u64) -> Self {
        Self { role, config, epoch, seed, metrics: BTreeMap::new() }
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.config)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "role = {}", self.role.as_str());
        let _ = writeln!(s, "config_hash = {}", self.config_hash());
        let _ = writeln!(s, "epoch = {}", self.epoch);
        let _ = writeln!(s, "seed = {}", self.seed);
        s.push_str(&config_text(&self.config));
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "metric.{k} = {v:?}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        let mut metrics = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("metadata line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if let Some(name) = k.strip_prefix("metric.") {
                metrics.insert(name.to_string(), parse_num(k, v)?);
            } else {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let mut take = |k: &str| kv.remove(k).ok_or_else(|| Error::Checkpoint(format!("metadata lacks {k}")));
        let role = match take("role")?.as_str() {
            "teacher" => Role::Teacher,
            "student" => Role::Student,
            other => return Err(Error::Checkpoint(format!("unknown role {other:?}"))),
        };
        let hash = take("config_hash")?;
        let epoch = parse_num("epoch", &take("epoch")?)?;
        let seed = parse_num("seed", &take("seed")?)?;
        let config = config_from_map(&mut kv)?;
        if let Some(k) = kv.keys().next() {
            return Err(Error::Checkpoint(format!("unknown metadata key {k}")));
        }
        if config_hash(&config) != hash {
            return Err(Error::Checkpoint("config hash does not match the recorded config".into()));
        }
        Ok(Self { role, config, epoch, seed, metrics })
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Checkpoint(format!("bad value {v:?} for {key}")))
}

/// Canonical `key = value` lines for a model config.
pub fn config_text(c: &ModelConfig) -> String {
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let mut s = String::new();
    let _ = writeln!(s, "frames = {}", c.frames);
    let _ = writeln!(s, "height = {}", c.height);
    let _ = writeln!(s, "width = {}", c.width);
    let _ = writeln!(s, "channels = {}", join(&c.channels));
    let _ = writeln!(s, "stem_kernel = {}", join(&c.stem_kernel));
    let _ = writeln!(s, "embed_dim = {}", c.embed_dim);
    let _ = writeln!(s, "split_ratio = {:?}", c.split_ratio);
    let _ = writeln!(s, "decoder_layers = {}", c.decoder_layers);
    let _ = writeln!(s, "decoder_heads = {}", c.decoder_heads);
    let _ = writeln!(s, "decoder_tokens = {}", c.decoder_tokens);
    let _ = writeln!(s, "decoder_width = {}", c.decoder_width);
    let _ = writeln!(s, "num_actors = {}", c.num_actors);
    let _ = writeln!(s, "num_activities = {}", c.num_activities);
    let _ = writeln!(s, "biometric_dim = {}", c.biometric_dim);
    let _ = writeln!(s, "appearance_dim = {}", c.appearance_dim);
    let _ = writeln!(s, "activity_dim = {}", c.activity_dim);
    let _ = writeln!(s, "teacher_dim = {}", c.teacher_dim);
    s
}

pub fn config_hash(c: &ModelConfig) -> String {
    let digest = Sha256::digest(config_text(c).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn config_from_map(kv: &mut BTreeMap<String, String>) -> Result<ModelConfig> {
    let mut take = |k: &str| kv.remove(k).ok_or_else(|| Error::Checkpoint(format!("metadata lacks {k}")));
    let list = |k: &str, v: String| -> Result<Vec<usize>> { v.split(',').map(|x| parse_num(k, x.trim())).collect() };
    let stem = list("stem_kernel", take("stem_kernel")?)?;
    let stem_kernel: [usize; 3] = stem
        .try_into()
        .map_err(|_| Error::Checkpoint("stem_kernel needs three entries".into()))?;
    Ok(ModelConfig {
        frames: parse_num("frames", &take("frames")?)?,
        height: parse_num("height", &take("height")?)?,
        width: parse_num("width", &take("width")?)?,
        channels: list("channels", take("channels")?)?,
        stem_kernel,
        embed_dim: parse_num("embed_dim", &take("embed_dim")?)?,
        split_ratio: parse_num("split_ratio", &take("split_ratio")?)?,
        decoder_layers: parse_num("decoder_layers", &take("decoder_layers")?)?,
        decoder_heads: parse_num("decoder_heads", &take("decoder_heads")?)?,
        decoder_tokens: parse_num("decoder_tokens", &take("decoder_tokens")?)?,
        decoder_width: parse_num("decoder_width", &take("decoder_width")?)?,
        num_actors: parse_num("num_actors", &take("num_actors")?)?,
        num_activities: parse_num("num_activities", &take("num_activities")?)?,
        biometric_dim: parse_num("biometric_dim", &take("biometric_dim")?)?,
        appearance_dim: parse_num("appearance_dim", &take("appearance_dim")?)?,
        activity_dim: parse_num("activity_dim", &take("activity_dim")?)?,
        teacher_dim: parse_num("teacher_dim", &take("teacher_dim")?)?,
    })
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn encode_params<T: Params + ?Sized>(model: &T) -> Vec<u8> {
    let params = collect(model);
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, values) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Overwrites every tensor of `model` from an archive with exactly matching
/// names and sizes.
pub fn decode_params_into<T: Params + ?Sized>(bytes: &[u8], model: &mut T) -> Result<()> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let chunk = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::Checkpoint("archive truncated".into()))?;
        pos += n;
        Ok(chunk)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a parameter archive".into()));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap()) as usize;
    let count = u32_at(take(4)?);
    let mut slots = collect_mut(model);
    if count != slots.len() {
        return Err(Error::Checkpoint(format!("archive has {count} tensors, model has {}", slots.len())));
    }
    for (name, dst) in slots.iter_mut() {
        let len = u32_at(take(4)?);
        let got = String::from_utf8_lossy(take(len)?).into_owned();
        if &got != name {
            return Err(Error::Checkpoint(format!("expected tensor {name}, found {got}")));
        }
        let n = u32_at(take(4)?);
        if n != dst.len() {
            return Err(Error::Checkpoint(format!("tensor {name}: {n} values, model needs {}", dst.len())));
        }
        for (d, b) in dst.iter_mut().zip(take(4 * n)?.chunks_exact(4)) {
            *d = f32::from_le_bytes(b.try_into().unwrap());
        }
    }
    if pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(())
}

fn save_any<T: Params + ?Sized>(path: &Path, model: &T, meta: &CheckpointMeta) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_params(model))?;
    fs::write(meta_path(path), meta.to_text())?;
    Ok(())
}

pub fn read_meta(path: impl AsRef<Path>) -> Result<CheckpointMeta> {
    CheckpointMeta::parse(&fs::read_to_string(meta_path(path.as_ref()))?)
}

fn expect_role(meta: &CheckpointMeta, role: Role) -> Result<()> {
    if meta.role != role {
        return Err(Error::Checkpoint(format!(
            "checkpoint role is {}, expected {}",
            meta.role.as_str(),
            role.as_str()
        )));
    }
    Ok(())
}

pub fn save_student(path: impl AsRef<Path>, model: &Student, meta: &CheckpointMeta) -> Result<()> {
    expect_role(meta, Role::Student)?;
    if meta.config != model.config {
        return Err(Error::Checkpoint("metadata config differs from the model".into()));
    }
    save_any(path.as_ref(), model, meta)
}

pub fn load_student(path: impl AsRef<Path>) -> Result<(Student, CheckpointMeta)> {
    let meta = read_meta(&path)?;
    expect_role(&meta, Role::Student)?;
    let mut model = Student::new(meta.config.clone(), 0)?;
    decode_params_into(&fs::read(path.as_ref())?, &mut model)?;
    Ok((model, meta))
}

pub fn save_teacher(path: impl AsRef<Path>, model: &Teacher, meta: &CheckpointMeta) -> Result<()> {
    expect_role(meta, Role::Teacher)?;
    save_any(path.as_ref(), model, meta)
}

pub fn load_teacher(path: impl AsRef<Path>) -> Result<(Teacher, CheckpointMeta)> {
    let meta = read_meta(&path)?;
    expect_role(&meta, Role::Teacher)?;
    let mut model = Teacher::new(&meta.config, 0)?;
    decode_params_into(&fs::read(path.as_ref())?, &mut model)?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::checksum;

    fn small() -> ModelConfig {
        let mut c = ModelConfig::desk(3, 2);
        c.height = 32;
        c.width = 16;
        c.channels = vec![4, 8];
        c.embed_dim = 32;
        c.decoder_width = 8;
        c.decoder_tokens = 4;
        c
    }

    #[test]
    fn student_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/student.ckpt");
        let m = Student::new(small(), 4).unwrap();
        let mut meta = CheckpointMeta::new(Role::Student, small(), 7, 4);
        meta.metrics.insert("loss".into(), 0.125);
        save_student(&path, &m, &meta).unwrap();
        let (back, meta2) = load_student(&path).unwrap();
        assert_eq!(checksum(&back), checksum(&m));
        assert_eq!(meta2, meta);
        assert!(load_teacher(&path).is_err());
    }

    #[test]
    fn teacher_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.ckpt");
        let t = Teacher::new(&small(), 2).unwrap();
        save_teacher(&path, &t, &CheckpointMeta::new(Role::Teacher, small(), 1, 2)).unwrap();
        let (back, _) = load_teacher(&path).unwrap();
        assert_eq!(checksum(&back), checksum(&t));
    }

    #[test]
    fn corrupt_archives_rejected() {
        let m = Student::new(small(), 1).unwrap();
        let bytes = encode_params(&m);
        let mut other = Student::new(small(), 2).unwrap();
        assert!(decode_params_into(&bytes[..bytes.len() - 3], &mut other).is_err());
        let mut wrong = small();
        wrong.biometric_dim = 9;
        let mut w = Student::new(wrong, 0).unwrap();
        assert!(decode_params_into(&bytes, &mut w).is_err());
        decode_params_into(&bytes, &mut other).unwrap();
        assert_eq!(checksum(&other), checksum(&m));
    }

    #[test]
    fn tampered_metadata_rejected() {
        let meta = CheckpointMeta::new(Role::Student, small(), 0, 0);
        let text = meta.to_text().replace("num_actors = 3", "num_actors = 4");
        assert!(CheckpointMeta::parse(&text).is_err());
        let extra = format!("{}bogus = 1\n", meta.to_text());
        assert!(CheckpointMeta::parse(&extra).is_err());
        assert_eq!(CheckpointMeta::parse(&meta.to_text()).unwrap(), meta);
    }
}
