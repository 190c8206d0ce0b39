//! Complex CSI to model input: subcarrier pruning, amplitude, decimation,
//! per-subcarrier normalization and square patch tiling.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{AmplitudeWindow, CsiMatrix, TypeError, RAW_SUBCARRIERS, SUPPORTED_RATES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("mask index {index} outside 0..{cols}")]
    MaskOutOfRange { index: usize, cols: usize },
    #[error("mask indices must be strictly increasing")]
    UnsortedMask,
    #[error("unsupported rate change {from} Hz -> {to} Hz")]
    UnsupportedRate { from: u32, to: u32 },
    #[error("statistics cover {stats} columns, window has {cols}")]
    StatsShapeMismatch { stats: usize, cols: usize },
    #[error("patch side must be at least 1")]
    ZeroPatch,
    #[error("patch set metadata is inconsistent")]
    InconsistentMetadata,
    #[error("cannot compute statistics over zero windows")]
    NoWindows,
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Column indices kept from a raw matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubcarrierMask {
    keep: Vec<usize>,
}

/// Pilot tones of the 80 MHz tone plan, centered indexing.
pub const PILOT_TONES: [i32; 8] = [-103, -75, -39, -11, 11, 39, 75, 103];
/// Null and guard tones of the 80 MHz tone plan, centered indexing.
pub const NULL_TONES: [i32; 12] = [-128, -127, -126, -125, -124, -1, 0, 1, 124, 125, 126, 127];

impl SubcarrierMask {
    pub fn new(keep: Vec<usize>) -> Result<Self, PreprocessError> {
        if keep.windows(2).any(|w| w[1] <= w[0]) {
            return Err(PreprocessError::UnsortedMask);
        }
        Ok(Self { keep })
    }

    /// Keeps every column of an `n`-column matrix.
    pub fn identity(n: usize) -> Self {
        Self { keep: (0..n).collect() }
    }

    /// Drops the 8 pilot and 12 null/guard tones of a 256-bin capture, leaving
    /// 236 columns. Column `i` is tone `i - 128`.
    pub fn default_80mhz() -> Self {
        let keep = (0..RAW_SUBCARRIERS)
            .filter(|&i| {
                let tone = i as i32 - 128;
                !PILOT_TONES.contains(&tone) && !NULL_TONES.contains(&tone)
            })
            .collect();
        Self { keep }
    }

    pub fn keep(&self) -> &[usize] {
        &self.keep
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }
}

impl Default for SubcarrierMask {
    fn default() -> Self {
        Self::default_80mhz()
    }
}

/// Keeps the masked columns of `m`, in mask order.
pub fn prune_subcarriers(m: &CsiMatrix, mask: &SubcarrierMask) -> Result<CsiMatrix, PreprocessError> {
    if let Some(&bad) = mask.keep.iter().find(|&&i| i >= m.cols()) {
        return Err(PreprocessError::MaskOutOfRange { index: bad, cols: m.cols() });
    }
    let mut data = Vec::with_capacity(m.rows() * mask.len());
    for r in 0..m.rows() {
        let row = m.row(r);
        data.extend(mask.keep.iter().map(|&c| row[c]));
    }
    Ok(CsiMatrix::new(m.rows(), mask.len(), data, m.timestamps().to_vec(), m.sniffer())?)
}

/// Element-wise magnitude; phase is discarded.
pub fn amplitude(m: &CsiMatrix, rate_hz: u32) -> AmplitudeWindow {
    let data = m.data().iter().map(|c| libm::hypot(c.re, c.im)).collect();
    AmplitudeWindow::new(m.rows(), m.cols(), data, rate_hz).expect("shape carried from matrix")
}

/// Input row feeding output row `k` when decimating `from_hz` to `to_hz`.
pub fn downsample_index(k: usize, from_hz: u32, to_hz: u32) -> usize {
    k * from_hz as usize / to_hz as usize
}

/// Row count after decimation: `round(rows * to / from)`.
pub fn downsampled_rows(rows: usize, from_hz: u32, to_hz: u32) -> usize {
    let num = rows as u64 * to_hz as u64;
    let den = from_hz as u64;
    // round half up
    ((2 * num + den) / (2 * den)) as usize
}

/// Decimates a window by index resampling.
pub fn downsample(w: &AmplitudeWindow, target_hz: u32) -> Result<AmplitudeWindow, PreprocessError> {
    let from = w.rate_hz();
    if !SUPPORTED_RATES.contains(&target_hz) || target_hz > from || from == 0 {
        return Err(PreprocessError::UnsupportedRate { from, to: target_hz });
    }
    if target_hz == from {
        return Ok(w.clone());
    }
    let rows = downsampled_rows(w.rows(), from, target_hz);
    let mut data = Vec::with_capacity(rows * w.cols());
    for k in 0..rows {
        let src = downsample_index(k, from, target_hz).min(w.rows() - 1);
        data.extend_from_slice(w.row(src));
    }
    Ok(AmplitudeWindow::new(rows, w.cols(), data, target_hz)?)
}

/// Per-column mean and population standard deviation. A zero `std` marks a
/// constant column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Columns whose standard deviation falls below this are treated as constant.
pub const CONSTANT_STD: f64 = 1e-12;

impl NormStats {
    pub fn identity(cols: usize) -> Self {
        Self { mean: vec![0.0; cols], std: vec![1.0; cols] }
    }

    /// Pools every row of every window.
    pub fn from_windows<'a, I>(windows: I) -> Result<Self, PreprocessError>
    where
        I: IntoIterator<Item = &'a AmplitudeWindow>,
    {
        let mut sum: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let mut seen: Vec<&AmplitudeWindow> = Vec::new();
        for w in windows {
            if sum.is_empty() {
                sum = vec![0.0; w.cols()];
            } else if w.cols() != sum.len() {
                return Err(PreprocessError::StatsShapeMismatch { stats: sum.len(), cols: w.cols() });
            }
            for r in 0..w.rows() {
                for (s, v) in sum.iter_mut().zip(w.row(r)) {
                    *s += v;
                }
            }
            count += w.rows();
            seen.push(w);
        }
        if seen.is_empty() || count == 0 {
            return Err(PreprocessError::NoWindows);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        // second pass for a numerically stable variance
        let mut sq = vec![0.0; mean.len()];
        for w in seen {
            for r in 0..w.rows() {
                for ((q, v), m) in sq.iter_mut().zip(w.row(r)).zip(&mean) {
                    let d = v - m;
                    *q += d * d;
                }
            }
        }
        let std = sq
            .iter()
            .map(|q| {
                let s = libm::sqrt(q / count as f64);
                if s < CONSTANT_STD {
                    0.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn cols(&self) -> usize {
        self.mean.len()
    }
}

/// `(x - mean) / std` per column; constant columns map to zero.
pub fn normalize(w: &AmplitudeWindow, stats: &NormStats) -> Result<AmplitudeWindow, PreprocessError> {
    if stats.cols() != w.cols() || stats.std.len() != w.cols() {
        return Err(PreprocessError::StatsShapeMismatch { stats: stats.cols(), cols: w.cols() });
    }
    let mut out = w.clone();
    let cols = w.cols();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let c = i % cols;
        let s = stats.std[c];
        *v = if s == 0.0 { 0.0 } else { (*v - stats.mean[c]) / s };
    }
    Ok(out)
}

/// A window cut into `P x P` tiles, row-major tile order, each tile stored
/// row-major. Trailing rows/columns are zero-padded up to a multiple of `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patches: Vec<f64>,
    pub patch: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub pad_rows: usize,
    pub pad_cols: usize,
    pub origin_shape: (usize, usize),
    pub rate_hz: u32,
}

impl PatchSet {
    pub fn count(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    /// Values per flattened patch, `P * P`.
    pub fn patch_len(&self) -> usize {
        self.patch * self.patch
    }

    pub fn patch_values(&self, i: usize) -> &[f64] {
        let n = self.patch_len();
        &self.patches[i * n..(i + 1) * n]
    }
}

/// Patch grid dimensions for a `rows x cols` window.
pub fn patch_grid(rows: usize, cols: usize, patch: usize) -> (usize, usize) {
    (rows.div_ceil(patch), cols.div_ceil(patch))
}

pub fn patchify(w: &AmplitudeWindow, patch: usize) -> Result<PatchSet, PreprocessError> {
    if patch == 0 {
        return Err(PreprocessError::ZeroPatch);
    }
    let (rows, cols) = w.shape();
    let (gr, gc) = patch_grid(rows, cols, patch);
    let plen = patch * patch;
    let mut patches = vec![0.0; gr * gc * plen];
    for r in 0..rows {
        let (tr, pr) = (r / patch, r % patch);
        let row = w.row(r);
        for (c, &v) in row.iter().enumerate() {
            let (tc, pc) = (c / patch, c % patch);
            patches[(tr * gc + tc) * plen + pr * patch + pc] = v;
        }
    }
    Ok(PatchSet {
        patches,
        patch,
        grid_rows: gr,
        grid_cols: gc,
        pad_rows: gr * patch - rows,
        pad_cols: gc * patch - cols,
        origin_shape: (rows, cols),
        rate_hz: w.rate_hz(),
    })
}

/// Inverse of [`patchify`]; padding is dropped using the recorded shape.
pub fn unpatchify(p: &PatchSet) -> Result<AmplitudeWindow, PreprocessError> {
    let (rows, cols) = p.origin_shape;
    let patch = p.patch;
    let consistent = patch > 0
        && rows + p.pad_rows == p.grid_rows * patch
        && cols + p.pad_cols == p.grid_cols * patch
        && p.pad_rows < patch.max(1)
        && p.pad_cols < patch.max(1)
        && p.patches.len() == p.count() * patch * patch;
    if !consistent {
        return Err(PreprocessError::InconsistentMetadata);
    }
    let plen = patch * patch;
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (tr, pr) = (r / patch, r % patch);
        for c in 0..cols {
            let (tc, pc) = (c / patch, c % patch);
            data.push(p.patches[(tr * p.grid_cols + tc) * plen + pr * patch + pc]);
        }
    }
    Ok(AmplitudeWindow::new(rows, cols, data, p.rate_hz)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ComplexValue, SnifferId};

    fn matrix(rows: usize, cols: usize) -> CsiMatrix {
        let data = (0..rows * cols)
            .map(|i| ComplexValue::new(i as f64, -(i as f64) * 0.5))
            .collect();
        let ts = (0..rows).map(|r| r as f64 / 30.0).collect();
        CsiMatrix::new(rows, cols, data, ts, SnifferId::S1).unwrap()
    }

    fn window(rows: usize, cols: usize) -> AmplitudeWindow {
        let data = (0..rows * cols).map(|i| (i % 97) as f64 * 0.25).collect();
        AmplitudeWindow::new(rows, cols, data, 30).unwrap()
    }

    #[test]
    fn default_mask_keeps_236() {
        let mask = SubcarrierMask::default_80mhz();
        assert_eq!(mask.len(), 236);
        assert!(!mask.keep().contains(&128)); // DC
        assert!(!mask.keep().contains(&(128 + 11)));
        assert!(!mask.keep().contains(&0));
        assert!(mask.keep().contains(&(128 + 2)));
        let pruned = prune_subcarriers(&matrix(360, 256), &mask).unwrap();
        assert_eq!((pruned.rows(), pruned.cols()), (360, 236));
    }

    #[test]
    fn identity_and_explicit_masks() {
        let m = matrix(4, 256);
        assert_eq!(prune_subcarriers(&m, &SubcarrierMask::identity(256)).unwrap(), m);
        let small = matrix(2, 3);
        let p = prune_subcarriers(&small, &SubcarrierMask::new(vec![0, 2]).unwrap()).unwrap();
        assert_eq!(p.row(1), &[small.get(1, 0), small.get(1, 2)]);
        assert_eq!(
            prune_subcarriers(&small, &SubcarrierMask::new(vec![0, 3]).unwrap()),
            Err(PreprocessError::MaskOutOfRange { index: 3, cols: 3 })
        );
        assert_eq!(SubcarrierMask::new(vec![2, 1]), Err(PreprocessError::UnsortedMask));
    }

    #[test]
    fn amplitude_values() {
        let data = vec![ComplexValue::new(3.0, 4.0), ComplexValue::new(0.0, 0.0)];
        let m = CsiMatrix::new(1, 2, data, vec![0.0], SnifferId::S2).unwrap();
        let a = amplitude(&m, 30);
        assert_eq!(a.data(), &[5.0, 0.0]);
        assert_eq!(a.rate_hz(), 30);
    }

    #[test]
    fn downsample_rows_and_indices() {
        let w = window(360, 4);
        assert_eq!(downsample(&w, 30).unwrap(), w);
        let d10 = downsample(&w, 10).unwrap();
        assert_eq!(d10.rows(), 120);
        for k in 0..120 {
            assert_eq!(d10.row(k), w.row(3 * k));
        }
        let d25 = downsample(&w, 25).unwrap();
        assert_eq!(d25.rows(), 300);
        let idx: Vec<usize> = (0..300).map(|k| downsample_index(k, 30, 25)).collect();
        assert!(idx.windows(2).all(|p| p[0] <= p[1]));
        assert!(*idx.last().unwrap() < 360);
        for (k, &i) in idx.iter().enumerate() {
            assert_eq!(i, k * 30 / 25);
            assert_eq!(d25.row(k), w.row(i));
        }
        assert_eq!(
            downsample(&d10, 20),
            Err(PreprocessError::UnsupportedRate { from: 10, to: 20 })
        );
        assert!(downsample(&w, 12).is_err());
    }

    #[test]
    fn normalize_cases() {
        let w = window(10, 3);
        assert_eq!(normalize(&w, &NormStats::identity(3)).unwrap(), w);
        let constant = AmplitudeWindow::new(5, 1, vec![7.0; 5], 30).unwrap();
        let stats = NormStats::from_windows([&constant]).unwrap();
        assert_eq!(normalize(&constant, &stats).unwrap().data(), &[0.0; 5]);
        assert_eq!(
            normalize(&w, &NormStats::identity(2)),
            Err(PreprocessError::StatsShapeMismatch { stats: 2, cols: 3 })
        );
    }

    #[test]
    fn paper_shape_patch_grid() {
        let p = patchify(&window(360, 236), 45).unwrap();
        assert_eq!((p.grid_rows, p.grid_cols), (8, 6));
        assert_eq!(p.count(), 48);
        assert_eq!((p.pad_rows, p.pad_cols), (0, 34));
        // padded cells of the last tile column are zero
        let last = p.patch_values(5);
        for r in 0..45 {
            assert!(last[r * 45 + 11..(r + 1) * 45].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn patch_degenerate_cases() {
        let w = window(45, 45);
        let p = patchify(&w, 45).unwrap();
        assert_eq!(p.count(), 1);
        assert_eq!(p.patches, w.data());
        let w = window(2, 2);
        let p = patchify(&w, 1).unwrap();
        assert_eq!(p.count(), 4);
        assert_eq!(p.patches, w.data());
        assert_eq!(patchify(&w, 0), Err(PreprocessError::ZeroPatch));
    }

    #[test]
    fn unpatchify_round_trip_and_corruption() {
        let w = window(360, 236);
        let mut p = patchify(&w, 45).unwrap();
        assert_eq!(unpatchify(&p).unwrap(), w);
        p.origin_shape = (361, 236);
        assert_eq!(unpatchify(&p), Err(PreprocessError::InconsistentMetadata));
    }
}
