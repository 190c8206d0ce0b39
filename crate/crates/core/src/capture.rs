//! Decoder and encoder for `RFSC` capture streams.
//!
//! Layout, all little-endian:
//!
//! ```text
//! header:  "RFSC" | u8 version (=1) | u16 subcarrier count (=256)
//! record:  u8 sniffer id | f64 local timestamp (s) | count x (f32 re, f32 im)
//! ```
//!
//! Records are packed back to back with no padding and no trailer.

use alloc::vec::Vec;

use thiserror::Error;

use crate::types::{ComplexValue, SnifferId, RAW_SUBCARRIERS};

pub const CAPTURE_MAGIC: &[u8; 4] = b"RFSC";
pub const CAPTURE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 7;
/// Sniffer id byte plus timestamp.
pub const RECORD_HEADER_LEN: usize = 9;
pub const RECORD_LEN: usize = RECORD_HEADER_LEN + RAW_SUBCARRIERS * 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaptureError {
    #[error("stream does not start with RFSC magic")]
    BadMagic,
    #[error("unsupported capture version {0}")]
    BadVersion(u8),
    #[error("record {index} truncated: {available} of {RECORD_LEN} bytes present")]
    TruncatedPacket { index: usize, available: usize },
    #[error("stream declares {0} subcarriers, expected 256")]
    BadSubcarrierCount(usize),
    #[error("record {index} has unknown sniffer id {id}")]
    BadSnifferId { index: usize, id: u8 },
    #[error("record {index} carries a non-finite value")]
    NonFinite { index: usize },
}

/// One CSI report as stamped by a sniffer's local clock.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPacket {
    pub sniffer: SnifferId,
    pub timestamp: f64,
    pub subcarriers: Vec<ComplexValue>,
}

impl RawPacket {
    pub fn new(sniffer: SnifferId, timestamp: f64, subcarriers: Vec<ComplexValue>) -> Result<Self, CaptureError> {
        if subcarriers.len() != RAW_SUBCARRIERS {
            return Err(CaptureError::BadSubcarrierCount(subcarriers.len()));
        }
        Ok(Self { sniffer, timestamp, subcarriers })
    }
}

fn f32_at(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Decodes a capture stream into packets in stream order.
pub fn parse_capture(bytes: &[u8]) -> Result<Vec<RawPacket>, CaptureError> {
    if bytes.len() < 4 || &bytes[..4] != CAPTURE_MAGIC {
        return Err(CaptureError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(CaptureError::TruncatedPacket { index: 0, available: 0 });
    }
    if bytes[4] != CAPTURE_VERSION {
        return Err(CaptureError::BadVersion(bytes[4]));
    }
    let count = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
    if count != RAW_SUBCARRIERS {
        return Err(CaptureError::BadSubcarrierCount(count));
    }

    let body = &bytes[HEADER_LEN..];
    let mut out = Vec::with_capacity(body.len() / RECORD_LEN);
    for (index, rec) in body.chunks(RECORD_LEN).enumerate() {
        if rec.len() < RECORD_LEN {
            return Err(CaptureError::TruncatedPacket { index, available: rec.len() });
        }
        let sniffer = SnifferId::from_index(rec[0])
            .ok_or(CaptureError::BadSnifferId { index, id: rec[0] })?;
        let mut ts = [0u8; 8];
        ts.copy_from_slice(&rec[1..9]);
        let timestamp = f64::from_le_bytes(ts);
        let subcarriers: Vec<ComplexValue> = (0..RAW_SUBCARRIERS)
            .map(|s| {
                let at = RECORD_HEADER_LEN + s * 8;
                ComplexValue::new(f32_at(rec, at) as f64, f32_at(rec, at + 4) as f64)
            })
            .collect();
        if !timestamp.is_finite() || subcarriers.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(CaptureError::NonFinite { index });
        }
        out.push(RawPacket { sniffer, timestamp, subcarriers });
    }
    Ok(out)
}

/// Encodes packets into a capture stream. Subcarrier values are narrowed to
/// `f32`.
pub fn encode_capture(packets: &[RawPacket]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + packets.len() * RECORD_LEN);
    out.extend_from_slice(CAPTURE_MAGIC);
    out.push(CAPTURE_VERSION);
    out.extend_from_slice(&(RAW_SUBCARRIERS as u16).to_le_bytes());
    for p in packets {
        out.push(p.sniffer.index());
        out.extend_from_slice(&p.timestamp.to_le_bytes());
        for c in &p.subcarriers {
            out.extend_from_slice(&(c.re as f32).to_le_bytes());
            out.extend_from_slice(&(c.im as f32).to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn packet(sniffer: SnifferId, t: f64, fill: f64) -> RawPacket {
        let mut sc = vec![ComplexValue::new(fill, -fill); RAW_SUBCARRIERS];
        sc[0] = ComplexValue::new(3.0, 4.0);
        RawPacket::new(sniffer, t, sc).unwrap()
    }

    #[test]
    fn three_records_decode_in_order() {
        let pkts = vec![
            packet(SnifferId::S1, 0.0, 1.0),
            packet(SnifferId::S2, 0.01, 2.0),
            packet(SnifferId::S1, 0.0333, 0.5),
        ];
        let bytes = encode_capture(&pkts);
        assert_eq!(bytes.len(), HEADER_LEN + 3 * RECORD_LEN);
        let back = parse_capture(&bytes).unwrap();
        assert_eq!(back, pkts);
        assert_eq!(back[0].subcarriers[0].norm(), 5.0);
    }

    #[test]
    fn truncated_record() {
        let mut bytes = encode_capture(&[packet(SnifferId::S1, 0.0, 1.0)]);
        bytes.extend_from_slice(&encode_capture(&[packet(SnifferId::S1, 1.0, 1.0)])[HEADER_LEN..HEADER_LEN + 100]);
        assert_eq!(
            parse_capture(&bytes),
            Err(CaptureError::TruncatedPacket { index: 1, available: 100 })
        );
    }

    #[test]
    fn bad_magic_and_count() {
        assert_eq!(parse_capture(b"NOPE\x01\x00\x01"), Err(CaptureError::BadMagic));
        let mut bytes = encode_capture(&[]);
        bytes[5..7].copy_from_slice(&255u16.to_le_bytes());
        assert_eq!(parse_capture(&bytes), Err(CaptureError::BadSubcarrierCount(255)));
        assert!(matches!(
            RawPacket::new(SnifferId::S1, 0.0, vec![ComplexValue::new(0.0, 0.0); 64]),
            Err(CaptureError::BadSubcarrierCount(64))
        ));
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(parse_capture(&encode_capture(&[])).unwrap().is_empty());
    }
}
