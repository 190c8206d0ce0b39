//! Importers that turn foreign directory layouts into canonical samples.
//!
//! Adapters are looked up by name. Conversion failures are collected per
//! sample; the import continues with the remaining samples.

use std::fs;
use std::path::{Path, PathBuf};

use robofi_core::align::{align_streams, AlignConfig, AlignError};
use robofi_core::capture::{encode_capture, parse_capture, CaptureError, RawPacket};
use robofi_core::preprocess::{amplitude, prune_subcarriers, PreprocessError, SubcarrierMask};
use robofi_core::types::{label_from_name, validate_sample, BASE_RATE_HZ, WINDOW_SECONDS};
use robofi_core::{Location, Sample, SampleMeta, SnifferId, Source, Velocity};
use serde::Deserialize;
use thiserror::Error;

use crate::container::{self, io_err, ContainerError, META_FILE};

pub const CAPTURE_FILES: [&str; 2] = ["s1.rfsc", "s2.rfsc"];

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("unknown import adapter `{0}` (known: {known})", known = ADAPTERS.join(", "))]
    UnknownAdapter(String),
    #[error("{0} is not a readable directory")]
    NotADirectory(PathBuf),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("{path}: {source}")]
    Capture { path: PathBuf, source: CaptureError },
    #[error("{path}: {source}")]
    Align { path: PathBuf, source: AlignError },
    #[error("{path}: {source}")]
    Preprocess { path: PathBuf, source: PreprocessError },
    #[error("{path}: {message}")]
    Meta { path: PathBuf, message: String },
}

/// One sample that could not be converted.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportFailure {
    pub path: PathBuf,
    pub reason: String,
}

/// Converted samples in directory order plus the failures.
#[derive(Debug, Default)]
pub struct ImportOutcome {
    pub samples: Vec<Sample>,
    pub failures: Vec<ImportFailure>,
}

pub trait Adapter {
    fn name(&self) -> &'static str;
    fn convert(&self, sample_dir: &Path) -> Result<Sample, ImportError>;
}

pub const ADAPTERS: [&str; 2] = ["identity", "capture"];

pub fn adapter(name: &str) -> Result<Box<dyn Adapter>, ImportError> {
    match name {
        "identity" => Ok(Box::new(Identity)),
        "capture" => Ok(Box::new(CaptureAdapter::default())),
        other => Err(ImportError::UnknownAdapter(other.to_string())),
    }
}

/// Canonical container samples, re-validated.
pub struct Identity;

impl Adapter for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn convert(&self, sample_dir: &Path) -> Result<Sample, ImportError> {
        Ok(container::read_sample(sample_dir)?)
    }
}

/// Raw two-sniffer captures: each sample directory holds `s1.rfsc`,
/// `s2.rfsc` and a `meta.json` naming the activity, velocity and location.
pub struct CaptureAdapter {
    pub align: AlignConfig,
    pub mask: SubcarrierMask,
}

impl Default for CaptureAdapter {
    fn default() -> Self {
        Self { align: AlignConfig::new(BASE_RATE_HZ, WINDOW_SECONDS), mask: SubcarrierMask::default_80mhz() }
    }
}

#[derive(Debug, Deserialize)]
struct CaptureMeta {
    label: String,
    velocity: String,
    location: String,
    #[serde(default)]
    source: Option<Source>,
}

fn read_capture(path: &Path) -> Result<Vec<RawPacket>, ImportError> {
    let bytes = fs::read(path).map_err(|e| ImportError::Container(io_err(path)(e)))?;
    parse_capture(&bytes).map_err(|source| ImportError::Capture { path: path.to_path_buf(), source })
}

pub fn write_capture(path: &Path, packets: &[RawPacket]) -> Result<(), ContainerError> {
    fs::write(path, encode_capture(packets)).map_err(io_err(path))
}

impl Adapter for CaptureAdapter {
    fn name(&self) -> &'static str {
        "capture"
    }

    fn convert(&self, dir: &Path) -> Result<Sample, ImportError> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| ImportError::Container(io_err(&meta_path)(e)))?;
        let meta: CaptureMeta = serde_json::from_str(&text)
            .map_err(|e| ImportError::Meta { path: meta_path.clone(), message: e.to_string() })?;
        let bad = |m: String| ImportError::Meta { path: meta_path.clone(), message: m };
        let label = label_from_name(&meta.label).map_err(|e| bad(e.to_string()))?;
        let velocity = Velocity::from_name(&meta.velocity).ok_or_else(|| bad(format!("unknown velocity `{}`", meta.velocity)))?;
        let location = Location::from_name(&meta.location).ok_or_else(|| bad(format!("unknown location `{}`", meta.location)))?;

        let a = read_capture(&dir.join(CAPTURE_FILES[0]))?;
        let b = read_capture(&dir.join(CAPTURE_FILES[1]))?;
        let pair = align_streams(&a, &b, &self.align).map_err(|source| ImportError::Align { path: dir.to_path_buf(), source })?;
        let mut windows = Vec::with_capacity(2);
        for m in [&pair.m1, &pair.m2] {
            let pruned = prune_subcarriers(m, &self.mask)
                .map_err(|source| ImportError::Preprocess { path: dir.to_path_buf(), source })?;
            windows.push(amplitude(&pruned, self.align.rate_hz).to_storage_precision());
        }
        let sniffer2 = windows.pop().expect("two windows");
        let sniffer1 = windows.pop().expect("two windows");
        let sample = Sample {
            sniffer1,
            sniffer2,
            meta: SampleMeta { label, velocity, location, source: meta.source.unwrap_or(Source::Real) },
        };
        let violations = validate_sample(&sample);
        if !violations.is_empty() {
            let text: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(ImportError::Meta { path: dir.to_path_buf(), message: text.join("; ") });
        }
        Ok(sample)
    }
}

/// Sample directories under `root`: the manifest order when a manifest
/// exists, otherwise every subdirectory with a `meta.json`, sorted by name.
pub fn sample_dirs(root: &Path) -> Result<Vec<PathBuf>, ImportError> {
    if !root.is_dir() {
        return Err(ImportError::NotADirectory(root.to_path_buf()));
    }
    if root.join(container::MANIFEST_FILE).exists() {
        let m = container::read_manifest(root)?;
        return Ok(m.samples.iter().map(|s| root.join(s)).collect());
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| ImportError::Container(io_err(root)(e)))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(META_FILE).exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn import_external(root: &Path, adapter_name: &str) -> Result<ImportOutcome, ImportError> {
    import_with(root, adapter(adapter_name)?.as_ref())
}

/// Converts every sample directory under `root`; failures are collected,
/// not fatal.
pub fn import_with(root: &Path, adapter: &dyn Adapter) -> Result<ImportOutcome, ImportError> {
    let mut out = ImportOutcome::default();
    for dir in sample_dirs(root)? {
        match adapter.convert(&dir) {
            Ok(s) => out.samples.push(s),
            Err(e) => out.failures.push(ImportFailure { path: dir, reason: e.to_string() }),
        }
    }
    Ok(out)
}

/// Sniffer of capture file `i` in a sample directory.
pub fn capture_sniffer(i: usize) -> SnifferId {
    if i == 0 {
        SnifferId::S1
    } else {
        SnifferId::S2
    }
}
