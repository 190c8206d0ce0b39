//! Monitor-style merge of two sniffer streams onto one timestamp grid.
//!
//! Grid ticks sit on integer multiples of the sampling period. The first
//! tick is the earliest multiple not before both streams have started; every
//! tick takes, from each stream, the packet nearest to it, provided that
//! packet lies within `max_skew_s` of the tick.

use alloc::vec::Vec;

use thiserror::Error;

use crate::capture::RawPacket;
use crate::types::{CsiMatrix, SnifferId, TypeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("stream {0:?} is empty")]
    EmptyStream(SnifferId),
    #[error("stream {sniffer:?} timestamps decrease at packet {index}")]
    UnsortedStream { sniffer: SnifferId, index: usize },
    #[error("rate {rate_hz} Hz x {window_s} s is not a whole number of ticks")]
    NonIntegralTickCount { rate_hz: u32, window_s: f64 },
    #[error("invalid skew bound {0}")]
    BadSkew(f64),
    #[error("no packet from {sniffer:?} within skew bound of tick {tick}")]
    GapTooLarge { tick: usize, sniffer: SnifferId },
    #[error("stream {sniffer:?} ends at {last:.4} s, before the window closes")]
    InsufficientDuration { sniffer: SnifferId, last: f64 },
    #[error("packets in stream {0:?} disagree on subcarrier count")]
    RaggedPackets(SnifferId),
    #[error(transparent)]
    Matrix(#[from] TypeError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    pub rate_hz: u32,
    pub window_s: f64,
    pub max_skew_s: f64,
}

impl AlignConfig {
    /// Skew bound defaults to half a sampling period.
    pub fn new(rate_hz: u32, window_s: f64) -> Self {
        Self { rate_hz, window_s, max_skew_s: 0.5 / rate_hz as f64 }
    }

    pub fn with_max_skew(mut self, max_skew_s: f64) -> Self {
        self.max_skew_s = max_skew_s;
        self
    }

    fn ticks(&self) -> Result<usize, AlignError> {
        let n = self.rate_hz as f64 * self.window_s;
        let rounded = libm::round(n);
        if self.rate_hz == 0 || rounded < 1.0 || libm::fabs(n - rounded) > 1e-9 {
            return Err(AlignError::NonIntegralTickCount {
                rate_hz: self.rate_hz,
                window_s: self.window_s,
            });
        }
        Ok(rounded as usize)
    }
}

/// Both sniffers' matrices on the shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub grid_timestamps: Vec<f64>,
    pub m1: CsiMatrix,
    pub m2: CsiMatrix,
    /// Per-tick `selected - tick` offsets for each stream.
    pub skew1: Vec<f64>,
    pub skew2: Vec<f64>,
}

impl AlignedPair {
    pub fn max_abs_skew(&self) -> f64 {
        self.skew1
            .iter()
            .chain(&self.skew2)
            .fold(0.0, |m, s| if libm::fabs(*s) > m { libm::fabs(*s) } else { m })
    }
}

/// Indices of packets that survive duplicate-timestamp removal (first wins).
fn dedup_sorted(stream: &[RawPacket], sniffer: SnifferId) -> Result<Vec<usize>, AlignError> {
    let mut kept: Vec<usize> = Vec::with_capacity(stream.len());
    for (i, p) in stream.iter().enumerate() {
        match kept.last() {
            Some(&j) if p.timestamp < stream[j].timestamp => {
                return Err(AlignError::UnsortedStream { sniffer, index: i })
            }
            Some(&j) if p.timestamp == stream[j].timestamp => {}
            _ => kept.push(i),
        }
    }
    Ok(kept)
}

/// Index into `kept` of the packet nearest `tick`; ties go to the earlier one.
fn nearest(stream: &[RawPacket], kept: &[usize], tick: f64) -> usize {
    let after = kept.partition_point(|&i| stream[i].timestamp < tick);
    if after == 0 {
        return 0;
    }
    if after == kept.len() {
        return after - 1;
    }
    let before_gap = tick - stream[kept[after - 1]].timestamp;
    let after_gap = stream[kept[after]].timestamp - tick;
    if before_gap <= after_gap {
        after - 1
    } else {
        after
    }
}

fn select(
    stream: &[RawPacket],
    kept: &[usize],
    grid: &[f64],
    cfg: &AlignConfig,
    sniffer: SnifferId,
) -> Result<(Vec<usize>, Vec<f64>), AlignError> {
    let mut picks = Vec::with_capacity(grid.len());
    let mut skews = Vec::with_capacity(grid.len());
    for (k, &tick) in grid.iter().enumerate() {
        let idx = kept[nearest(stream, kept, tick)];
        let skew = stream[idx].timestamp - tick;
        if libm::fabs(skew) > cfg.max_skew_s {
            return Err(AlignError::GapTooLarge { tick: k, sniffer });
        }
        picks.push(idx);
        skews.push(skew);
    }
    Ok((picks, skews))
}

fn gather(
    stream: &[RawPacket],
    picks: &[usize],
    grid: &[f64],
    sniffer: SnifferId,
) -> Result<CsiMatrix, AlignError> {
    let cols = stream[picks[0]].subcarriers.len();
    let mut data = Vec::with_capacity(picks.len() * cols);
    for &i in picks {
        let sc = &stream[i].subcarriers;
        if sc.len() != cols {
            return Err(AlignError::RaggedPackets(sniffer));
        }
        data.extend_from_slice(sc);
    }
    Ok(CsiMatrix::new(picks.len(), cols, data, grid.to_vec(), sniffer)?)
}

/// Aligns stream `a` (sniffer 1) and stream `b` (sniffer 2) onto a grid of
/// `rate_hz * window_s` ticks.
pub fn align_streams(a: &[RawPacket], b: &[RawPacket], cfg: &AlignConfig) -> Result<AlignedPair, AlignError> {
    let ticks = cfg.ticks()?;
    if !(cfg.max_skew_s >= 0.0 && cfg.max_skew_s.is_finite()) {
        return Err(AlignError::BadSkew(cfg.max_skew_s));
    }
    if a.is_empty() {
        return Err(AlignError::EmptyStream(SnifferId::S1));
    }
    if b.is_empty() {
        return Err(AlignError::EmptyStream(SnifferId::S2));
    }
    let kept_a = dedup_sorted(a, SnifferId::S1)?;
    let kept_b = dedup_sorted(b, SnifferId::S2)?;

    let rate = cfg.rate_hz as f64;
    let start = if a[0].timestamp > b[0].timestamp { a[0].timestamp } else { b[0].timestamp };
    // tolerate representation error when the start is already on the grid
    let first_tick = libm::ceil(start * rate - 1e-9) as i64;
    let grid: Vec<f64> = (0..ticks as i64).map(|k| (first_tick + k) as f64 / rate).collect();

    let last_tick = grid[ticks - 1];
    for (stream, sniffer) in [(a, SnifferId::S1), (b, SnifferId::S2)] {
        let last = stream[stream.len() - 1].timestamp;
        if last < last_tick - cfg.max_skew_s {
            return Err(AlignError::InsufficientDuration { sniffer, last });
        }
    }

    let (picks_a, skew1) = select(a, &kept_a, &grid, cfg, SnifferId::S1)?;
    let (picks_b, skew2) = select(b, &kept_b, &grid, cfg, SnifferId::S2)?;
    let m1 = gather(a, &picks_a, &grid, SnifferId::S1)?;
    let m2 = gather(b, &picks_b, &grid, SnifferId::S2)?;
    Ok(AlignedPair { grid_timestamps: grid, m1, m2, skew1, skew2 })
}
