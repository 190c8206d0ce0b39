//! Canonical on-disk dataset layout.
//!
//! A dataset is a directory holding `manifest.json` and one subdirectory per
//! sample. Each sample directory has `meta.json` plus `s1.bin` / `s2.bin`:
//! the magic `RFSA`, `u32` rows, `u32` cols, then row-major little-endian
//! `f32` amplitudes.

use std::fs;
use std::path::{Path, PathBuf};

use robofi_core::types::{validate_sample, TypeError};
use robofi_core::{ActivityLabel, AmplitudeWindow, Location, Sample, SampleMeta, Source, Velocity};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
pub const WINDOW_MAGIC: &[u8; 4] = b"RFSA";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const META_FILE: &str = "meta.json";
pub const WINDOW_FILES: [&str; 2] = ["s1.bin", "s2.bin"];

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}: not an RFSA window file")]
    BadMagic(PathBuf),
    #[error("{path}: expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: usize, found: usize },
    #[error("{path}: unsupported schema version {version}")]
    Schema { path: PathBuf, version: u32 },
    #[error("{path}: {source}")]
    Type { path: PathBuf, source: TypeError },
    #[error("{path}: invalid sample: {violations}")]
    Invalid { path: PathBuf, violations: String },
    #[error("{0} already exists and is not empty")]
    NotEmpty(PathBuf),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ContainerError + '_ {
    move |source| ContainerError::Io { path: path.to_path_buf(), source }
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFile {
    pub label: ActivityLabel,
    pub velocity: Velocity,
    pub location: Location,
    pub source: Source,
    pub rate_hz: u32,
    pub schema_version: u32,
}

impl MetaFile {
    pub fn of(sample: &Sample) -> Self {
        Self {
            label: sample.meta.label,
            velocity: sample.meta.velocity,
            location: sample.meta.location,
            source: sample.meta.source,
            rate_hz: sample.rate_hz(),
            schema_version: SCHEMA_VERSION,
        }
    }

    pub fn meta(&self) -> SampleMeta {
        SampleMeta { label: self.label, velocity: self.velocity, location: self.location, source: self.source }
    }
}

/// Contents of `manifest.json`: sample directories relative to the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub samples: Vec<String>,
}

pub fn encode_window(w: &AmplitudeWindow) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + w.data().len() * 4);
    out.extend_from_slice(WINDOW_MAGIC);
    out.extend_from_slice(&(w.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(w.cols() as u32).to_le_bytes());
    for v in w.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_window(bytes: &[u8], rate_hz: u32, path: &Path) -> Result<AmplitudeWindow, ContainerError> {
    if bytes.len() < 12 || &bytes[..4] != WINDOW_MAGIC {
        return Err(ContainerError::BadMagic(path.to_path_buf()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let expected = 12 + rows * cols * 4;
    if bytes.len() != expected {
        return Err(ContainerError::Truncated { path: path.to_path_buf(), expected, found: bytes.len() });
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    AmplitudeWindow::new(rows, cols, data, rate_hz)
        .map_err(|source| ContainerError::Type { path: path.to_path_buf(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ContainerError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|source| ContainerError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ContainerError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ContainerError::Json { path: path.to_path_buf(), source })
}

fn check(sample: &Sample, path: &Path) -> Result<(), ContainerError> {
    let violations = validate_sample(sample);
    if violations.is_empty() {
        Ok(())
    } else {
        let text: Vec<String> = violations.iter().map(ToString::to_string).collect();
        Err(ContainerError::Invalid { path: path.to_path_buf(), violations: text.join("; ") })
    }
}

pub fn write_sample(dir: &Path, sample: &Sample) -> Result<(), ContainerError> {
    check(sample, dir)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&dir.join(META_FILE), &MetaFile::of(sample))?;
    for (name, w) in WINDOW_FILES.iter().zip([&sample.sniffer1, &sample.sniffer2]) {
        let path = dir.join(name);
        fs::write(&path, encode_window(w)).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn read_sample(dir: &Path) -> Result<Sample, ContainerError> {
    let meta_path = dir.join(META_FILE);
    let meta: MetaFile = read_json(&meta_path)?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(ContainerError::Schema { path: meta_path, version: meta.schema_version });
    }
    let mut windows = Vec::with_capacity(2);
    for name in WINDOW_FILES {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        windows.push(decode_window(&bytes, meta.rate_hz, &path)?);
    }
    let sniffer2 = windows.pop().expect("two windows");
    let sniffer1 = windows.pop().expect("two windows");
    let sample = Sample { sniffer1, sniffer2, meta: meta.meta() };
    check(&sample, dir)?;
    Ok(sample)
}

pub fn sample_dir_name(i: usize) -> String {
    format!("sample_{i:05}")
}

fn ensure_fresh(root: &Path) -> Result<(), ContainerError> {
    if root.exists() {
        let mut entries = fs::read_dir(root).map_err(io_err(root))?;
        if entries.next().is_some() {
            return Err(ContainerError::NotEmpty(root.to_path_buf()));
        }
    }
    fs::create_dir_all(root).map_err(io_err(root))
}

/// Writes `samples` as a new dataset; refuses to touch a non-empty
/// directory.
pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<Manifest, ContainerError> {
    ensure_fresh(root)?;
    let mut names = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = sample_dir_name(i);
        write_sample(&root.join(&name), s)?;
        names.push(name);
    }
    let manifest = Manifest { schema_version: SCHEMA_VERSION, samples: names };
    write_json(&root.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest, ContainerError> {
    let path = root.join(MANIFEST_FILE);
    let manifest: Manifest = read_json(&path)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(ContainerError::Schema { path, version: manifest.schema_version });
    }
    Ok(manifest)
}

/// Reads every sample listed in the manifest, in manifest order.
pub fn read_dataset(root: &Path) -> Result<Vec<Sample>, ContainerError> {
    let manifest = read_manifest(root)?;
    manifest.samples.iter().map(|rel| read_sample(&root.join(rel))).collect()
}

pub(crate) fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), ContainerError> {
    write_json(path, value)
}

pub(crate) fn read_json_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ContainerError> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sized_sample(label: ActivityLabel, rows: usize, cols: usize) -> Sample {
        let w = |k: f64| {
            // halves of small integers survive the f32 round trip exactly
            let data = (0..rows * cols).map(|i| ((i % 1000) as f64 + k) * 0.5).collect();
            AmplitudeWindow::new(rows, cols, data, 30).unwrap()
        };
        Sample {
            sniffer1: w(0.0),
            sniffer2: w(1.0),
            meta: SampleMeta { label, velocity: Velocity::V2, location: Location::L3, source: Source::Synthetic },
        }
    }

    fn sample(label: ActivityLabel) -> Sample {
        sized_sample(label, 2, 3)
    }

    #[test]
    fn window_bytes_round_trip() {
        let w = sample(ActivityLabel::Arc).sniffer1;
        let bytes = encode_window(&w);
        assert_eq!(bytes.len(), 12 + 24);
        assert_eq!(decode_window(&bytes, 30, Path::new("x")).unwrap(), w);
        assert!(matches!(decode_window(&bytes[..20], 30, Path::new("x")), Err(ContainerError::Truncated { .. })));
        assert!(matches!(decode_window(b"NOPE00000000", 30, Path::new("x")), Err(ContainerError::BadMagic(_))));
    }

    #[test]
    fn dataset_round_trip_and_no_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("ds");
        assert!(matches!(write_dataset(&root, &[sample(ActivityLabel::Arc)]), Err(ContainerError::Invalid { .. })));
        let samples = vec![sized_sample(ActivityLabel::Arc, 360, 236), sized_sample(ActivityLabel::Triangle, 360, 236)];
        let m = write_dataset(&root, &samples).unwrap();
        assert_eq!(m.samples, vec!["sample_00000", "sample_00001"]);
        assert_eq!(read_dataset(&root).unwrap(), samples);
        assert!(matches!(write_dataset(&root, &samples), Err(ContainerError::NotEmpty(_))));
    }
}
