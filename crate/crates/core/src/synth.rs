//! Synthetic dual-sniffer captures: parametric end-effector trajectories for
//! the eight activities drive a static-plus-one-moving-reflector channel.
//!
//! Every sample is generated from its own forked random stream keyed by
//! (location, velocity, class, index), so datasets are reproducible and do
//! not depend on generation order.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{amplitude, prune_subcarriers, PreprocessError, SubcarrierMask};
use crate::rng::RngState;
use crate::types::{
    ActivityLabel, CsiMatrix, Location, Sample, SampleMeta, SnifferId, Source, TypeError, Velocity,
    BASE_RATE_HZ, RAW_SUBCARRIERS, WINDOW_PACKETS, WINDOW_SECONDS,
};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Side of one cell of the 3x3 placement grid, meters.
pub const CELL_SIZE_M: f64 = 1.2;
const MAX_START_OFFSET_S: f64 = 8.0;
/// Lateral offset of each class group in the split-occlusion scene.
const GROUP_OFFSET_M: f64 = 0.5;

pub type Point = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(&'static str),
    #[error("need {expected} positions, got {got}")]
    PositionCount { expected: usize, got: usize },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Type(#[from] TypeError),
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn distance(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
}

/// One activity execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub label: ActivityLabel,
    /// Duration of the motion at the slowest velocity tier, seconds.
    pub duration_s: f64,
    pub velocity_scale: f64,
    pub start_offset_s: f64,
    /// Rest position of the end-effector, meters.
    pub origin: Point,
    /// Multiplier on the nominal shape dimensions.
    pub size: f64,
}

impl TrajectorySpec {
    /// Seconds of actual motion, `duration / velocity_scale`.
    pub fn moving_s(&self) -> f64 {
        self.duration_s / self.velocity_scale
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let finite = self.duration_s.is_finite()
            && self.velocity_scale.is_finite()
            && self.start_offset_s.is_finite()
            && self.size.is_finite()
            && self.origin.iter().all(|v| v.is_finite());
        if !finite {
            return Err(SynthError::InvalidGeometry("non-finite trajectory parameter"));
        }
        if self.duration_s <= 0.0 || self.velocity_scale <= 0.0 || self.size <= 0.0 {
            return Err(SynthError::InvalidGeometry("duration, velocity scale and size must be positive"));
        }
        if self.start_offset_s < 0.0 || self.start_offset_s + self.moving_s() > WINDOW_SECONDS + 1e-9 {
            return Err(SynthError::InvalidGeometry("motion does not fit in the window"));
        }
        Ok(())
    }

    /// Waypoints of the shape relative to the origin. The path is the
    /// polyline through them (a dense polyline for the arc).
    pub fn waypoints(&self) -> Vec<Point> {
        let s = self.size;
        let pts: Vec<Point> = match self.label {
            ActivityLabel::Silence => alloc::vec![[0.0; 3]],
            ActivityLabel::Arc => {
                let r = 0.1 * s;
                (0..=64)
                    .map(|i| {
                        let a = PI * (1.0 - i as f64 / 64.0);
                        [r * libm::cos(a) + r, r * libm::sin(a), 0.0]
                    })
                    .collect()
            }
            ActivityLabel::Elbow => alloc::vec![[0.0; 3], [0.12 * s, 0.0, 0.0], [0.12 * s, 0.0, 0.1 * s]],
            ActivityLabel::Rectangle => {
                let (a, b) = (0.12 * s, 0.08 * s);
                alloc::vec![[0.0; 3], [a, 0.0, 0.0], [a, b, 0.0], [0.0, b, 0.0], [0.0; 3]]
            }
            ActivityLabel::Slfw => alloc::vec![[0.0; 3], [0.14 * s, 0.0, 0.0], [0.0; 3]],
            ActivityLabel::Slrl => alloc::vec![[0.0; 3], [0.0, 0.14 * s, 0.0], [0.0; 3]],
            ActivityLabel::Slud => alloc::vec![[0.0; 3], [0.0, 0.0, 0.12 * s], [0.0; 3]],
            ActivityLabel::Triangle => {
                let a = 0.12 * s;
                alloc::vec![[0.0; 3], [0.0, a, 0.0], [0.0, a / 2.0, a * 0.866_025_403_784_438_6], [0.0; 3]]
            }
        };
        pts
    }

    /// Length of the waypoint polyline.
    pub fn path_length(&self) -> f64 {
        self.waypoints().windows(2).map(|w| distance(w[0], w[1])).sum()
    }
}

/// Point at arc-length fraction `u` in `[0, 1]` along the polyline.
fn along(pts: &[Point], u: f64) -> Point {
    let lens: Vec<f64> = pts.windows(2).map(|w| distance(w[0], w[1])).collect();
    let total: f64 = lens.iter().sum();
    if total == 0.0 || u <= 0.0 {
        return pts[0];
    }
    if u >= 1.0 {
        return pts[pts.len() - 1];
    }
    let mut target = u.clamp(0.0, 1.0) * total;
    for (i, l) in lens.iter().enumerate() {
        if target <= *l || i == lens.len() - 1 {
            let f = if *l > 0.0 { (target / l).min(1.0) } else { 0.0 };
            return add(pts[i], scale(sub(pts[i + 1], pts[i]), f));
        }
        target -= l;
    }
    pts[pts.len() - 1]
}

/// Number of ticks the motion occupies at `rate_hz`.
pub fn moving_ticks(spec: &TrajectorySpec, rate_hz: u32) -> usize {
    libm::round(spec.moving_s() * rate_hz as f64).max(2.0) as usize
}

/// First moving tick at `rate_hz`.
pub fn start_tick(spec: &TrajectorySpec, rate_hz: u32) -> usize {
    libm::round(spec.start_offset_s * rate_hz as f64) as usize
}

/// End-effector position at every tick of the window. The motion follows a
/// cosine ease in arc length; before and after it the arm rests.
pub fn gen_trajectory(spec: &TrajectorySpec, rate_hz: u32) -> Result<Vec<Point>, SynthError> {
    spec.validate()?;
    if rate_hz == 0 {
        return Err(SynthError::InvalidGeometry("rate must be positive"));
    }
    let n = libm::round(WINDOW_SECONDS * rate_hz as f64) as usize;
    let pts: Vec<Point> = spec.waypoints().into_iter().map(|p| add(spec.origin, p)).collect();
    if spec.label == ActivityLabel::Silence {
        return Ok(alloc::vec![pts[0]; n]);
    }
    let k0 = start_tick(spec, rate_hz);
    let m = moving_ticks(spec, rate_hz);
    let end = pts[pts.len() - 1];
    Ok((0..n)
        .map(|k| {
            if k < k0 {
                pts[0]
            } else if k < k0 + m {
                let tau = (k - k0) as f64 / (m - 1) as f64;
                along(&pts, 0.5 * (1.0 - libm::cos(PI * tau)))
            } else {
                end
            }
        })
        .collect())
}

/// Which region hides the moving reflector from each sniffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occlusion {
    #[default]
    None,
    /// Sniffer 1 cannot see the arm at `x > 0` (relative to the robot base),
    /// sniffer 2 cannot see it at `x < 0`. Arc, Elbow, Rectangle and Silence
    /// are performed on the `+x` side, the rest on the `-x` side.
    SplitHalfSpaces,
}

/// Room layout for one location setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub tx: Point,
    pub sniffers: [Point; 2],
    pub robot_base: Point,
    /// `(row, col)` grid cells of the two sniffers.
    pub cells: [(usize, usize); 2],
    pub occlusion: Occlusion,
}

fn cell_center(cell: (usize, usize), z: f64) -> Point {
    [(cell.1 as f64 - 1.0) * CELL_SIZE_M, (cell.0 as f64 - 1.0) * CELL_SIZE_M, z]
}

impl SceneGeometry {
    /// The robot sits in the center cell; each location puts the two
    /// sniffers in a different pair of outer cells.
    pub fn for_location(location: Location) -> Self {
        let cells = match location {
            Location::L1 => [(0, 1), (1, 0)],
            Location::L2 => [(0, 0), (2, 2)],
            Location::L3 => [(1, 2), (2, 1)],
            Location::L4 => [(0, 2), (2, 0)],
        };
        Self {
            tx: [0.0, -2.4, 1.0],
            sniffers: [cell_center(cells[0], 0.8), cell_center(cells[1], 0.8)],
            robot_base: [0.0, 0.0, 0.0],
            cells,
            occlusion: Occlusion::None,
        }
    }

    pub fn with_occlusion(mut self, occlusion: Occlusion) -> Self {
        self.occlusion = occlusion;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.cells[0] == self.cells[1] {
            return Err(SynthError::InvalidGeometry("sniffers share a grid cell"));
        }
        if self.cells.iter().any(|c| c.0 > 2 || c.1 > 2 || *c == (1, 1)) {
            return Err(SynthError::InvalidGeometry("sniffer cell outside the grid or on the robot"));
        }
        Ok(())
    }

    pub fn sniffer(&self, id: SnifferId) -> Point {
        self.sniffers[usize::from(id.index() - 1)]
    }

    /// Rest position of the end-effector for `label`.
    pub fn rest_point(&self, label: ActivityLabel) -> Point {
        let base = add(self.robot_base, [0.0, 0.0, 0.6]);
        match self.occlusion {
            Occlusion::None => base,
            Occlusion::SplitHalfSpaces => {
                let side = if label.index() < 4 { 1.0 } else { -1.0 };
                // shapes extend up to 0.14 m along +x; keep them inside their half-space
                let x = if side > 0.0 { 0.15 } else { -GROUP_OFFSET_M - 0.15 };
                add(base, [x, 0.0, 0.0])
            }
        }
    }

    fn visible(&self, sniffer: SnifferId, p: Point) -> bool {
        match self.occlusion {
            Occlusion::None => true,
            Occlusion::SplitHalfSpaces => {
                let x = p[0] - self.robot_base[0];
                match sniffer {
                    SnifferId::S1 => x <= 0.0,
                    SnifferId::S2 => x >= 0.0,
                }
            }
        }
    }
}

/// Radio constants of the simulated channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub center_hz: f64,
    pub spacing_hz: f64,
    /// Gain of the arm reflection at the nominal path length.
    pub dynamic_gain: f64,
    /// Static reflectors per sniffer besides the direct path.
    pub clutter_paths: usize,
    pub clutter_seed: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self { center_hz: 5.21e9, spacing_hz: 312.5e3, dynamic_gain: 0.3, clutter_paths: 4, clutter_seed: 0x5eed }
    }
}

impl ChannelParams {
    pub fn frequency(&self, subcarrier: usize) -> f64 {
        self.center_hz + (subcarrier as f64 - (RAW_SUBCARRIERS / 2) as f64) * self.spacing_hz
    }

    /// Static channel per subcarrier for one sniffer: the direct path plus
    /// fixed clutter reflectors placed from the clutter seed.
    pub fn static_channel(&self, geom: &SceneGeometry, sniffer: SnifferId) -> Vec<Complex64> {
        let rx = geom.sniffer(sniffer);
        let mut rng = RngState::new(self.clutter_seed).fork(u64::from(sniffer.index()));
        let mut paths = alloc::vec![(Complex64::new(1.0, 0.0), distance(geom.tx, rx))];
        for _ in 0..self.clutter_paths {
            let q = [rng.uniform_range(-2.0, 2.0), rng.uniform_range(-2.0, 2.0), rng.uniform_range(0.0, 2.5)];
            let gain = rng.uniform_range(0.2, 0.5);
            let phase = rng.uniform_range(0.0, 2.0 * PI);
            paths.push((Complex64::from_polar(gain, phase), distance(geom.tx, q) + distance(q, rx)));
        }
        (0..RAW_SUBCARRIERS)
            .map(|s| {
                let f = self.frequency(s);
                paths.iter().map(|(g, d)| g * Complex64::from_polar(1.0, -2.0 * PI * f * d / SPEED_OF_LIGHT)).sum()
            })
            .collect()
    }
}

/// Complex channel of one sniffer over the window: static channel plus
/// the arm reflection `a1 * exp(-j 2 pi f tau(t))` plus complex Gaussian
/// noise of total standard deviation `noise_std`.
pub fn simulate_csi(
    positions: &[Point],
    geom: &SceneGeometry,
    params: &ChannelParams,
    sniffer: SnifferId,
    noise_std: f64,
    rng: &mut RngState,
) -> Result<CsiMatrix, SynthError> {
    if positions.len() != WINDOW_PACKETS {
        return Err(SynthError::PositionCount { expected: WINDOW_PACKETS, got: positions.len() });
    }
    let rx = geom.sniffer(sniffer);
    let stat = params.static_channel(geom, sniffer);
    let reference = distance(geom.tx, geom.rest_point(ActivityLabel::Silence))
        + distance(geom.rest_point(ActivityLabel::Silence), rx);
    let sigma = noise_std / core::f64::consts::SQRT_2;
    let mut data = Vec::with_capacity(WINDOW_PACKETS * RAW_SUBCARRIERS);
    for p in positions {
        let path = distance(geom.tx, *p) + distance(*p, rx);
        let a1 = if geom.visible(sniffer, *p) { params.dynamic_gain * reference / path } else { 0.0 };
        let tau = path / SPEED_OF_LIGHT;
        for (s, h0) in stat.iter().enumerate() {
            let f = params.frequency(s);
            let mut h = h0 + Complex64::from_polar(a1, -2.0 * PI * f * tau);
            if sigma > 0.0 {
                h += Complex64::new(sigma * rng.normal(), sigma * rng.normal());
            }
            data.push(h);
        }
    }
    let ts = (0..WINDOW_PACKETS).map(|k| k as f64 / BASE_RATE_HZ as f64).collect();
    Ok(CsiMatrix::new(WINDOW_PACKETS, RAW_SUBCARRIERS, data, ts, sniffer)?)
}

/// Nominal motion duration of each class at the slowest tier, seconds.
pub fn nominal_duration(label: ActivityLabel) -> f64 {
    match label {
        ActivityLabel::Arc => 3.0,
        ActivityLabel::Elbow => 2.6,
        ActivityLabel::Rectangle => 4.0,
        ActivityLabel::Silence => 3.0,
        ActivityLabel::Slfw => 2.2,
        ActivityLabel::Slrl => 2.4,
        ActivityLabel::Slud => 2.0,
        ActivityLabel::Triangle => 3.4,
    }
}

/// What to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub per_class: usize,
    pub velocities: Vec<Velocity>,
    pub locations: Vec<Location>,
    /// Complex noise standard deviation; the direct path has unit gain.
    pub noise_std: f64,
    pub occlusion: Occlusion,
    pub channel: ChannelParams,
    pub seed: u64,
    /// Relative jitter of durations (uniform, +-).
    pub duration_jitter: f64,
    /// Relative jitter of shape size (uniform, +-).
    pub size_jitter: f64,
    /// Jitter of the rest position per axis, meters.
    pub origin_jitter_m: f64,
    /// Multiplier on every shape's nominal dimensions.
    pub shape_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            per_class: 25,
            velocities: alloc::vec![Velocity::V2],
            locations: alloc::vec![Location::L1],
            noise_std: 0.05,
            occlusion: Occlusion::None,
            channel: ChannelParams::default(),
            seed: 0,
            duration_jitter: 0.0,
            size_jitter: 0.0,
            origin_jitter_m: 1e-4,
            shape_scale: 1.0,
        }
    }
}

fn velocity_index(v: Velocity) -> u64 {
    match v {
        Velocity::V1 => 0,
        Velocity::V2 => 1,
        Velocity::V3 => 2,
    }
}

fn location_index(l: Location) -> u64 {
    match l {
        Location::L1 => 0,
        Location::L2 => 1,
        Location::L3 => 2,
        Location::L4 => 3,
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.per_class == 0 || self.velocities.is_empty() || self.locations.is_empty() {
            return Err(SynthError::InvalidGeometry("counts must be positive"));
        }
        let jitters = [self.duration_jitter, self.size_jitter];
        if !(self.noise_std >= 0.0) || jitters.iter().any(|j| !(0.0..0.5).contains(j)) || !(self.origin_jitter_m >= 0.0)
            || !(self.shape_scale > 0.0 && self.shape_scale.is_finite())
        {
            return Err(SynthError::InvalidGeometry("noise and jitter must be non-negative and jitter below 0.5"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.per_class * ActivityLabel::ALL.len() * self.velocities.len() * self.locations.len()
    }

    /// Random stream of one sample, independent of every other sample.
    pub fn sample_rng(&self, location: Location, velocity: Velocity, label: ActivityLabel, index: usize) -> RngState {
        let key = ((location_index(location) * 3 + velocity_index(velocity)) * 8 + label.index() as u64)
            * 1_000_000_007
            + index as u64;
        RngState::new(self.seed).fork(key)
    }

    /// Draws the trajectory of one sample.
    pub fn trajectory(&self, geom: &SceneGeometry, label: ActivityLabel, velocity: Velocity, rng: &mut RngState) -> TrajectorySpec {
        let duration_s = nominal_duration(label) * (1.0 + rng.uniform_range(-self.duration_jitter, self.duration_jitter));
        let velocity_scale = velocity.scale();
        let latest = (WINDOW_SECONDS - duration_s / velocity_scale).clamp(0.0, MAX_START_OFFSET_S);
        let start_offset_s = rng.uniform_range(0.0, latest);
        let size = self.shape_scale * (1.0 + rng.uniform_range(-self.size_jitter, self.size_jitter));
        let j = self.origin_jitter_m;
        let jitter = [rng.uniform_range(-j, j), rng.uniform_range(-j, j), rng.uniform_range(-j, j)];
        let mut origin = add(geom.rest_point(label), jitter);
        if geom.occlusion == Occlusion::SplitHalfSpaces && label.index() < 4 {
            // never let jitter push a +x shape across the occluder plane
            origin[0] = origin[0].max(geom.robot_base[0] + 0.05);
        }
        TrajectorySpec { label, duration_s, velocity_scale, start_offset_s, origin, size }
    }

    /// Generates the `index`-th sample of one (location, velocity, class)
    /// cell: both sniffers observe the same trajectory from their own
    /// positions; output windows are pruned amplitudes at storage precision.
    pub fn generate_sample(
        &self,
        location: Location,
        velocity: Velocity,
        label: ActivityLabel,
        index: usize,
    ) -> Result<Sample, SynthError> {
        let geom = SceneGeometry::for_location(location).with_occlusion(self.occlusion);
        geom.validate()?;
        let mut rng = self.sample_rng(location, velocity, label, index);
        let spec = self.trajectory(&geom, label, velocity, &mut rng);
        let positions = gen_trajectory(&spec, BASE_RATE_HZ)?;
        let mask = SubcarrierMask::default_80mhz();
        let mut windows = Vec::with_capacity(2);
        for sniffer in [SnifferId::S1, SnifferId::S2] {
            let mut noise_rng = rng.fork(u64::from(sniffer.index()));
            let csi = simulate_csi(&positions, &geom, &self.channel, sniffer, self.noise_std, &mut noise_rng)?;
            let pruned = prune_subcarriers(&csi, &mask)?;
            windows.push(amplitude(&pruned, BASE_RATE_HZ).to_storage_precision());
        }
        let sniffer2 = windows.pop().expect("two windows");
        let sniffer1 = windows.pop().expect("two windows");
        Ok(Sample {
            sniffer1,
            sniffer2,
            meta: SampleMeta { label, velocity, location, source: Source::Synthetic },
        })
    }

    /// Cells in generation order: location, velocity, class, index.
    pub fn cells(&self) -> Vec<(Location, Velocity, ActivityLabel, usize)> {
        let mut out = Vec::with_capacity(self.total());
        for &l in &self.locations {
            for &v in &self.velocities {
                for label in ActivityLabel::ALL {
                    for i in 0..self.per_class {
                        out.push((l, v, label, i));
                    }
                }
            }
        }
        out
    }
}

/// Sequential generation of the whole dataset.
pub fn gen_dataset(spec: &SynthSpec) -> Result<Vec<Sample>, SynthError> {
    spec.validate()?;
    spec.cells().into_iter().map(|(l, v, c, i)| spec.generate_sample(l, v, c, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(label: ActivityLabel, scale: f64) -> TrajectorySpec {
        TrajectorySpec { label, duration_s: 3.0, velocity_scale: scale, start_offset_s: 2.0, origin: [0.0, 0.0, 0.6], size: 1.0 }
    }

    #[test]
    fn silence_is_constant() {
        let p = gen_trajectory(&spec(ActivityLabel::Silence, 1.0), 30).unwrap();
        assert_eq!(p.len(), 360);
        assert!(p.iter().all(|x| *x == p[0]));
    }

    #[test]
    fn rectangle_path_closes_with_perimeter_length() {
        let s = spec(ActivityLabel::Rectangle, 1.0);
        let p = gen_trajectory(&s, 30).unwrap();
        let (k0, m) = (start_tick(&s, 30), moving_ticks(&s, 30));
        let moving = &p[k0..k0 + m];
        assert_eq!(moving[0], moving[m - 1]);
        // the perimeter of a 0.12 x 0.08 loop; sampled chords cut corners only slightly
        let discrete: f64 = moving.windows(2).map(|w| distance(w[0], w[1])).sum();
        assert!((discrete - 2.0 * (0.12 + 0.08)).abs() < 0.01, "{discrete}");
        assert!((s.path_length() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn faster_tiers_use_fewer_ticks_on_the_same_path() {
        let slow = spec(ActivityLabel::Slfw, 1.0);
        let fast = spec(ActivityLabel::Slfw, 1.2);
        assert_eq!(moving_ticks(&slow, 30), 90);
        assert_eq!(moving_ticks(&fast, 30), 75);
        let a = gen_trajectory(&slow, 30).unwrap();
        let b = gen_trajectory(&fast, 30).unwrap();
        let far = |p: &[Point]| p.iter().map(|x| x[0]).fold(f64::MIN, f64::max);
        // the turning point falls between ticks for the slower tier
        assert!((far(&a) - far(&b)).abs() < 1e-2);
    }

    #[test]
    fn window_overflow_is_rejected() {
        let mut s = spec(ActivityLabel::Arc, 1.0);
        s.start_offset_s = 10.0;
        assert!(matches!(gen_trajectory(&s, 30), Err(SynthError::InvalidGeometry(_))));
    }

    #[test]
    fn motion_support_and_static_rows() {
        let geom = SceneGeometry::for_location(Location::L1);
        let params = ChannelParams::default();
        let s = spec(ActivityLabel::Triangle, 1.0);
        let pos = gen_trajectory(&s, 30).unwrap();
        let mut rng = RngState::new(1);
        let csi = simulate_csi(&pos, &geom, &params, SnifferId::S1, 0.0, &mut rng).unwrap();
        let amp = amplitude(&csi, 30);
        let (k0, m) = (start_tick(&s, 30), moving_ticks(&s, 30));
        let col = 40;
        let series: Vec<f64> = (0..360).map(|r| amp.get(r, col)).collect();
        let var = |xs: &[f64]| {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64
        };
        assert!(var(&series[..k0]) < 1e-20);
        assert!(var(&series[k0 + m..]) < 1e-20);
        assert!(var(&series[k0..k0 + m]) > 1e-6);
    }

    #[test]
    fn silence_gives_identical_rows_without_noise() {
        let geom = SceneGeometry::for_location(Location::L2);
        let pos = gen_trajectory(&spec(ActivityLabel::Silence, 1.0), 30).unwrap();
        let csi = simulate_csi(&pos, &geom, &ChannelParams::default(), SnifferId::S2, 0.0, &mut RngState::new(0)).unwrap();
        for r in 1..360 {
            assert_eq!(csi.row(r), csi.row(0));
        }
    }

    #[test]
    fn no_dynamic_path_means_constant_columns() {
        let geom = SceneGeometry::for_location(Location::L1);
        let params = ChannelParams { dynamic_gain: 0.0, ..ChannelParams::default() };
        let pos = gen_trajectory(&spec(ActivityLabel::Arc, 1.0), 30).unwrap();
        let csi = simulate_csi(&pos, &geom, &params, SnifferId::S1, 0.0, &mut RngState::new(0)).unwrap();
        let amp = amplitude(&csi, 30);
        for c in 0..256 {
            assert!((0..360).all(|r| amp.get(r, c) == amp.get(0, c)));
        }
    }

    #[test]
    fn occluded_half_space_hides_the_arm() {
        let geom = SceneGeometry::for_location(Location::L1).with_occlusion(Occlusion::SplitHalfSpaces);
        let synth = SynthSpec { occlusion: Occlusion::SplitHalfSpaces, noise_std: 0.0, ..SynthSpec::default() };
        let mut rng = RngState::new(4);
        let t = synth.trajectory(&geom, ActivityLabel::Rectangle, Velocity::V2, &mut rng);
        let pos = gen_trajectory(&t, 30).unwrap();
        assert!(pos.iter().all(|p| p[0] > 0.0));
        let csi = simulate_csi(&pos, &geom, &synth.channel, SnifferId::S1, 0.0, &mut rng).unwrap();
        assert!((1..360).all(|r| csi.row(r) == csi.row(0)));
        let csi2 = simulate_csi(&pos, &geom, &synth.channel, SnifferId::S2, 0.0, &mut rng).unwrap();
        assert!((1..360).any(|r| csi2.row(r) != csi2.row(0)));
        let u = synth.trajectory(&geom, ActivityLabel::Slud, Velocity::V2, &mut rng);
        assert!(gen_trajectory(&u, 30).unwrap().iter().all(|p| p[0] < 0.0));
    }

    #[test]
    fn dataset_is_balanced_and_deterministic() {
        let s = SynthSpec { per_class: 2, seed: 3, ..SynthSpec::default() };
        let a = gen_dataset(&s).unwrap();
        assert_eq!(a.len(), 16);
        let mut counts = [0; 8];
        for x in &a {
            counts[x.meta.label.index()] += 1;
            assert_eq!(x.sniffer1.shape(), (360, 236));
        }
        assert!(counts.iter().all(|c| *c == 2));
        let b = gen_dataset(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(s.generate_sample(Location::L1, Velocity::V2, ActivityLabel::Slrl, 1).unwrap(), a[11]);
    }
}
