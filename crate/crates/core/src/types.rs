//! Shared domain vocabulary: CSI matrices, amplitude windows, labels and
//! sample metadata.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One complex channel gain `h_s[t]`.
pub type ComplexValue = num_complex::Complex64;

/// Number of activity classes. Classifier heads and confusion matrices are
/// sized from this constant.
pub const NUM_CLASSES: usize = 8;

/// Packet rates a window may be stored at.
pub const SUPPORTED_RATES: [u32; 5] = [30, 25, 20, 15, 10];

/// Capture rate of raw windows.
pub const BASE_RATE_HZ: u32 = 30;
/// Window length in seconds.
pub const WINDOW_SECONDS: f64 = 12.0;
/// Packets per raw window (30 Hz x 12 s).
pub const WINDOW_PACKETS: usize = 360;
/// Subcarriers reported in 80 MHz mode.
pub const RAW_SUBCARRIERS: usize = 256;
/// Subcarriers left after dropping pilot and null tones.
pub const KEPT_SUBCARRIERS: usize = 236;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SnifferId {
    S1,
    S2,
}

impl SnifferId {
    pub fn index(self) -> u8 {
        match self {
            SnifferId::S1 => 1,
            SnifferId::S2 => 2,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            1 => Some(SnifferId::S1),
            2 => Some(SnifferId::S2),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("data length {got} does not match {rows}x{cols}")]
    LengthMismatch { rows: usize, cols: usize, got: usize },
    #[error("{got} timestamps for {rows} rows")]
    TimestampCount { rows: usize, got: usize },
    #[error("timestamps not strictly increasing at row {0}")]
    UnsortedTimestamps(usize),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("unknown activity label `{0}`")]
    UnknownLabel(String),
}

/// Complex channel matrix for one sniffer: `rows` packets by `cols`
/// subcarriers, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiMatrix {
    rows: usize,
    cols: usize,
    data: Vec<ComplexValue>,
    timestamps: Vec<f64>,
    sniffer: SnifferId,
}

impl CsiMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        data: Vec<ComplexValue>,
        timestamps: Vec<f64>,
        sniffer: SnifferId,
    ) -> Result<Self, TypeError> {
        if data.len() != rows * cols {
            return Err(TypeError::LengthMismatch { rows, cols, got: data.len() });
        }
        if timestamps.len() != rows {
            return Err(TypeError::TimestampCount { rows, got: timestamps.len() });
        }
        if let Some(i) = data.iter().position(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(TypeError::NonFinite(i));
        }
        if let Some(i) = timestamps.iter().position(|t| !t.is_finite()) {
            return Err(TypeError::NonFinite(i));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(TypeError::UnsortedTimestamps(i + 1));
        }
        Ok(Self { rows, cols, data, timestamps, sniffer })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[ComplexValue] {
        &self.data
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn sniffer(&self) -> SnifferId {
        self.sniffer
    }

    pub fn row(&self, r: usize) -> &[ComplexValue] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> ComplexValue {
        self.data[r * self.cols + c]
    }
}

/// Real amplitude matrix `rows` packets by `cols` subcarriers, row-major.
///
/// Values are held in `f64` in memory. Containers store them as `f32`;
/// [`AmplitudeWindow::to_storage_precision`] rounds a window to what a
/// container can hold, so that write/read is bit-exact afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeWindow {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    rate_hz: u32,
}

impl AmplitudeWindow {
    /// Builds a window without checking value invariants; use
    /// [`validate_sample`] or [`AmplitudeWindow::violations`] for that.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, rate_hz: u32) -> Result<Self, TypeError> {
        if data.len() != rows * cols {
            return Err(TypeError::LengthMismatch { rows, cols, got: data.len() });
        }
        Ok(Self { rows, cols, data, rate_hz })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rate_hz(&self) -> u32 {
        self.rate_hz
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rounds every entry through `f32`.
    pub fn to_storage_precision(mut self) -> Self {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
        self
    }

    pub fn violations(&self, sniffer: SnifferId) -> Vec<Violation> {
        let mut out = Vec::new();
        if !SUPPORTED_RATES.contains(&self.rate_hz) {
            out.push(Violation::UnsupportedRate { sniffer, rate_hz: self.rate_hz });
        }
        if self.rate_hz == BASE_RATE_HZ
            && (self.rows != WINDOW_PACKETS || self.cols != KEPT_SUBCARRIERS)
        {
            out.push(Violation::BaseShape { sniffer, rows: self.rows, cols: self.cols });
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            out.push(Violation::NonFiniteValue { sniffer });
        } else if self.data.iter().any(|v| *v < 0.0) {
            out.push(Violation::NegativeValue { sniffer });
        }
        out
    }
}

/// The eight arm activities, in canonical class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActivityLabel {
    Arc,
    Elbow,
    Rectangle,
    Silence,
    #[serde(rename = "SLFW")]
    Slfw,
    #[serde(rename = "SLRL")]
    Slrl,
    #[serde(rename = "SLUD")]
    Slud,
    Triangle,
}

impl ActivityLabel {
    pub const ALL: [ActivityLabel; NUM_CLASSES] = [
        ActivityLabel::Arc,
        ActivityLabel::Elbow,
        ActivityLabel::Rectangle,
        ActivityLabel::Silence,
        ActivityLabel::Slfw,
        ActivityLabel::Slrl,
        ActivityLabel::Slud,
        ActivityLabel::Triangle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivityLabel::Arc => "Arc",
            ActivityLabel::Elbow => "Elbow",
            ActivityLabel::Rectangle => "Rectangle",
            ActivityLabel::Silence => "Silence",
            ActivityLabel::Slfw => "SLFW",
            ActivityLabel::Slrl => "SLRL",
            ActivityLabel::Slud => "SLUD",
            ActivityLabel::Triangle => "Triangle",
        }
    }

    /// Case-insensitive lookup over canonical names and the long forms
    /// ("SL-Forward", "Straight Line - Up Down", ...). Spaces, dashes and
    /// underscores are ignored.
    pub fn from_name(name: &str) -> Result<Self, TypeError> {
        let key: String = name
            .chars()
            .filter(|c| !matches!(c, ' ' | '-' | '_'))
            .flat_map(|c| c.to_lowercase())
            .collect();
        let label = match key.as_str() {
            "arc" => ActivityLabel::Arc,
            "elbow" => ActivityLabel::Elbow,
            "rectangle" | "rect" => ActivityLabel::Rectangle,
            "silence" => ActivityLabel::Silence,
            "slfw" | "slforward" | "straightlineforward" => ActivityLabel::Slfw,
            "slrl" | "slrightleft" | "straightlinerightleft" => ActivityLabel::Slrl,
            "slud" | "slupdown" | "straightlineupdown" => ActivityLabel::Slud,
            "triangle" => ActivityLabel::Triangle,
            _ => return Err(TypeError::UnknownLabel(String::from(name))),
        };
        Ok(label)
    }
}

impl fmt::Display for ActivityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Convenience wrapper matching the CLI and importer vocabulary.
pub fn label_from_name(name: &str) -> Result<ActivityLabel, TypeError> {
    ActivityLabel::from_name(name)
}

/// Arm speed tier; `V1` is slowest and each tier is 10% faster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Velocity {
    V1,
    V2,
    V3,
}

impl Velocity {
    pub const ALL: [Velocity; 3] = [Velocity::V1, Velocity::V2, Velocity::V3];

    /// Speed relative to `V1`.
    pub fn scale(self) -> f64 {
        match self {
            Velocity::V1 => 1.0,
            Velocity::V2 => 1.1,
            Velocity::V3 => 1.2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Velocity::V1 => "V1",
            Velocity::V2 => "V2",
            Velocity::V3 => "V3",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name().eq_ignore_ascii_case(s))
    }
}

/// Sniffer placement configuration on the 3x3 floor grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Location {
    L1,
    L2,
    L3,
    L4,
}

impl Location {
    pub const ALL: [Location; 4] = [Location::L1, Location::L2, Location::L3, Location::L4];

    pub fn name(self) -> &'static str {
        match self {
            Location::L1 => "L1",
            Location::L2 => "L2",
            Location::L3 => "L3",
            Location::L4 => "L4",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleMeta {
    pub label: ActivityLabel,
    pub velocity: Velocity,
    pub location: Location,
    pub source: Source,
}

/// A synchronized pair of amplitude windows with its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sniffer1: AmplitudeWindow,
    pub sniffer2: AmplitudeWindow,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn window(&self, sniffer: SnifferId) -> &AmplitudeWindow {
        match sniffer {
            SnifferId::S1 => &self.sniffer1,
            SnifferId::S2 => &self.sniffer2,
        }
    }

    pub fn rate_hz(&self) -> u32 {
        self.sniffer1.rate_hz
    }
}

/// A broken sample invariant. Reported as data by [`validate_sample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    ShapeMismatch { s1: (usize, usize), s2: (usize, usize) },
    RateMismatch { s1: u32, s2: u32 },
    UnsupportedRate { sniffer: SnifferId, rate_hz: u32 },
    BaseShape { sniffer: SnifferId, rows: usize, cols: usize },
    NonFiniteValue { sniffer: SnifferId },
    NegativeValue { sniffer: SnifferId },
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::ShapeMismatch { .. } => "ShapeMismatch",
            Violation::RateMismatch { .. } => "RateMismatch",
            Violation::UnsupportedRate { .. } => "UnsupportedRate",
            Violation::BaseShape { .. } => "BaseShape",
            Violation::NonFiniteValue { .. } => "NonFiniteValue",
            Violation::NegativeValue { .. } => "NegativeValue",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ShapeMismatch { s1, s2 } => {
                write!(f, "ShapeMismatch: sniffer1 {}x{} vs sniffer2 {}x{}", s1.0, s1.1, s2.0, s2.1)
            }
            Violation::RateMismatch { s1, s2 } => write!(f, "RateMismatch: {s1} Hz vs {s2} Hz"),
            Violation::UnsupportedRate { sniffer, rate_hz } => {
                write!(f, "UnsupportedRate: {sniffer:?} at {rate_hz} Hz")
            }
            Violation::BaseShape { sniffer, rows, cols } => {
                write!(f, "BaseShape: {sniffer:?} is {rows}x{cols}, expected 360x236 at 30 Hz")
            }
            Violation::NonFiniteValue { sniffer } => write!(f, "NonFiniteValue in {sniffer:?}"),
            Violation::NegativeValue { sniffer } => write!(f, "NegativeValue in {sniffer:?}"),
        }
    }
}

/// Lists every violated sample invariant; empty when the sample is valid.
pub fn validate_sample(s: &Sample) -> Vec<Violation> {
    let mut out = Vec::new();
    if s.sniffer1.shape() != s.sniffer2.shape() {
        out.push(Violation::ShapeMismatch { s1: s.sniffer1.shape(), s2: s.sniffer2.shape() });
    }
    if s.sniffer1.rate_hz != s.sniffer2.rate_hz {
        out.push(Violation::RateMismatch { s1: s.sniffer1.rate_hz, s2: s.sniffer2.rate_hz });
    }
    for (sniffer, w) in [(SnifferId::S1, &s.sniffer1), (SnifferId::S2, &s.sniffer2)] {
        for v in w.violations(sniffer) {
            // a 30 Hz shape problem on one side is already a ShapeMismatch
            if matches!(v, Violation::BaseShape { .. })
                && out.iter().any(|o| matches!(o, Violation::ShapeMismatch { .. }))
            {
                continue;
            }
            out.push(v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn window(rows: usize, cols: usize) -> AmplitudeWindow {
        AmplitudeWindow::new(rows, cols, vec![1.0; rows * cols], 30).unwrap()
    }

    fn meta() -> SampleMeta {
        SampleMeta {
            label: ActivityLabel::Arc,
            velocity: Velocity::V1,
            location: Location::L1,
            source: Source::Synthetic,
        }
    }

    #[test]
    fn label_names() {
        assert_eq!(ActivityLabel::from_name("Arc").unwrap(), ActivityLabel::Arc);
        assert_eq!(ActivityLabel::from_name("slud").unwrap(), ActivityLabel::Slud);
        assert_eq!(ActivityLabel::from_name("SL-Forward").unwrap(), ActivityLabel::Slfw);
        assert_eq!(
            ActivityLabel::from_name("Straight Line - Right Left").unwrap(),
            ActivityLabel::Slrl
        );
        assert!(matches!(
            ActivityLabel::from_name("Circle"),
            Err(TypeError::UnknownLabel(_))
        ));
    }

    #[test]
    fn label_index_is_bijective() {
        for (i, l) in ActivityLabel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(ActivityLabel::from_index(i), Some(*l));
            assert_eq!(ActivityLabel::from_name(l.name()).unwrap(), *l);
        }
        assert_eq!(ActivityLabel::from_index(8), None);
        assert_eq!(ActivityLabel::Triangle.index(), NUM_CLASSES - 1);
    }

    #[test]
    fn velocity_order() {
        assert!(Velocity::V1 < Velocity::V2 && Velocity::V2 < Velocity::V3);
        assert!(Velocity::V1.scale() < Velocity::V3.scale());
    }

    #[test]
    fn valid_sample_has_no_violations() {
        let s = Sample { sniffer1: window(360, 236), sniffer2: window(360, 236), meta: meta() };
        assert!(validate_sample(&s).is_empty());
    }

    #[test]
    fn column_mismatch_is_reported() {
        let s = Sample { sniffer1: window(360, 236), sniffer2: window(360, 235), meta: meta() };
        let v = validate_sample(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].code(), "ShapeMismatch");
    }

    #[test]
    fn nan_is_reported() {
        let mut w = window(360, 236);
        w.data_mut()[17] = f64::NAN;
        let s = Sample { sniffer1: w, sniffer2: window(360, 236), meta: meta() };
        let v = validate_sample(&s);
        assert_eq!(v, vec![Violation::NonFiniteValue { sniffer: SnifferId::S1 }]);
    }

    #[test]
    fn csi_matrix_rejects_unsorted_time() {
        let data = vec![ComplexValue::new(0.0, 0.0); 2];
        let err = CsiMatrix::new(2, 1, data, vec![1.0, 1.0], SnifferId::S1).unwrap_err();
        assert_eq!(err, TypeError::UnsortedTimestamps(1));
    }
}
