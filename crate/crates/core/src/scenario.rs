//! Mission description: geometry, AAV limits, radio constants and solver
//! hyperparameters.
//!
//! Radio constants are stored in dB at this boundary (`h0_db`,
//! `noise_power_dbm`); every other module works in linear SI units through
//! the accessor methods.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Horizontal coordinate `[x, y]` in meters.
pub type Point = [f64; 2];

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Purposes for independent random substreams derived from the mission seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamPurpose {
    Users = 1,
    PathAngles = 2,
    SmallScale = 3,
    Swarm = 4,
}

/// Deterministic substream for `(purpose, a, b)` under `seed`.
///
/// Streams with different labels never share output, so per-user, per-slot
/// and per-iteration draws are independent of evaluation order.
pub fn substream(seed: u64, purpose: StreamPurpose, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) ^ ((a & 0x0fff_ffff) << 28) ^ (b & 0x0fff_ffff));
    rng
}

/// How the horizontal AoA is recovered from geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AzimuthMode {
    /// Two-argument angle; `cos φ`, `sin φ` reproduce the true direction.
    #[default]
    Signed,
    /// Raw `arccos` of the y-offset ratio, which folds `φ` into `[0, π]`.
    Arccos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoParams {
    pub particles: usize,
    pub iterations: usize,
    pub cognitive: f64,
    pub social: f64,
    pub chi_min: f64,
    pub chi_max: f64,
    pub penalty: f64,
    /// Draw `R1`, `R2` per coordinate instead of once per particle.
    pub per_coordinate_draws: bool,
    /// Score each candidate layout with MMSE combiners recomputed for it
    /// instead of the incumbent combiners.
    pub refit_combiners: bool,
}

impl Default for PsoParams {
    fn default() -> Self {
        Self {
            particles: 100,
            iterations: 100,
            cognitive: 1.4,
            social: 1.4,
            chi_min: 0.4,
            chi_max: 0.9,
            penalty: 20.0,
            per_coordinate_draws: false,
            refit_combiners: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BlockOrder {
    #[default]
    TrajectoryFirst,
    BeamformingFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AoParams {
    pub eps: f64,
    pub max_iters: usize,
    pub order: BlockOrder,
}

impl Default for AoParams {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_iters: 20,
            order: BlockOrder::TrajectoryFirst,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcaParams {
    pub eps: f64,
    pub max_sweeps: usize,
    /// After each sweep, keep doubling the power step while the true rate
    /// (with MMSE combiners) improves. Zero disables it.
    pub max_doublings: usize,
}

impl Default for BcaParams {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_sweeps: 50,
            max_doublings: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaParams {
    pub eps: f64,
    pub max_iters: usize,
    /// Initial trust radius in meters; `None` means `v_max * tau / 2`.
    pub initial_radius: Option<f64>,
    pub shrink: f64,
    pub min_radius: f64,
    /// A step is accepted only if the true gain is at least this fraction of
    /// the gain the surrogate predicted.
    pub accept_ratio: f64,
    /// Score candidate trajectories with MMSE combiners recomputed for them.
    pub refit_combiners: bool,
}

impl Default for ScaParams {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_iters: 30,
            initial_radius: None,
            shrink: 0.5,
            min_radius: 1e-3,
            accept_ratio: 0.5,
            refit_combiners: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmParams {
    pub eps: f64,
    pub max_sweeps: usize,
    /// Refresh `(beta, omega)` before every antenna instead of once per sweep.
    pub per_antenna_refresh: bool,
    /// Replace the combiners by MMSE combiners after every sweep.
    pub refit_combiners: bool,
    /// After an accepted move, keep doubling it while the surrogate improves,
    /// at most this many times.
    pub max_doublings: usize,
}

impl Default for MmParams {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_sweeps: 100,
            per_antenna_refresh: false,
            refit_combiners: true,
            max_doublings: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    /// Mission period `T` in seconds.
    pub mission_period: f64,
    pub num_slots: usize,
    pub num_users: usize,
    /// Explicit user coordinates; seeded uniform placement over the area when absent.
    pub user_positions: Option<Vec<Point>>,
    /// Side of the square mission area in meters.
    pub area_side: f64,
    pub altitude: f64,
    pub start: Point,
    pub end: Point,
    pub v_max: f64,
    pub a_max: f64,
    pub num_antennas: usize,
    /// Side `L` of the antenna region `[0, L]^2` in meters.
    pub region_side: f64,
    pub d_min: f64,
    pub wavelength: f64,
    pub num_paths: usize,
    /// Angular spread `Delta` in radians.
    pub angular_spread: f64,
    pub rician_kappa: f64,
    pub h0_db: f64,
    pub noise_power_dbm: f64,
    pub p_max: f64,
    pub rng_seed: u64,
    pub azimuth: AzimuthMode,
    pub pso: PsoParams,
    pub ao: AoParams,
    pub bca: BcaParams,
    pub sca: ScaParams,
    pub mm: MmParams,
}

impl Default for Scenario {
    fn default() -> Self {
        default_scenario()
    }
}

/// The reference mission: 40 s over 20 slots, 4 users, 4 antennas in a
/// `4λ x 4λ` region.
pub fn default_scenario() -> Scenario {
    let wavelength = 0.1;
    Scenario {
        mission_period: 40.0,
        num_slots: 20,
        num_users: 4,
        user_positions: None,
        area_side: 800.0,
        altitude: 50.0,
        start: [0.0, 400.0],
        end: [800.0, 400.0],
        v_max: 30.0,
        a_max: 10.0,
        num_antennas: 4,
        region_side: 4.0 * wavelength,
        d_min: 0.5 * wavelength,
        wavelength,
        num_paths: 4,
        angular_spread: std::f64::consts::PI / 12.0,
        rician_kappa: 15.0,
        h0_db: -60.0,
        noise_power_dbm: -110.0,
        p_max: 1.0,
        rng_seed: 1,
        azimuth: AzimuthMode::Signed,
        pso: PsoParams::default(),
        ao: AoParams::default(),
        bca: BcaParams::default(),
        sca: ScaParams::default(),
        mm: MmParams::default(),
    }
}

/// Reduced-cost variant used by the CLI and the sweeps.
pub fn desk_scenario() -> Scenario {
    let mut s = default_scenario();
    s.num_slots = 10;
    s.pso.particles = 40;
    s.pso.iterations = 40;
    s
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Slot duration `tau = T / N`.
    pub fn tau(&self) -> f64 {
        self.mission_period / self.num_slots as f64
    }

    pub fn h0(&self) -> f64 {
        db_to_linear(self.h0_db)
    }

    /// Noise power `sigma^2` in watts.
    pub fn noise_power(&self) -> f64 {
        dbm_to_watts(self.noise_power_dbm)
    }

    /// Largest displacement between consecutive waypoints.
    pub fn max_step(&self) -> f64 {
        self.v_max * self.tau()
    }

    /// Largest second difference of consecutive waypoints.
    pub fn max_second_difference(&self) -> f64 {
        self.a_max * self.tau() * self.tau()
    }

    /// User coordinates, drawing them from the seed when not given explicitly.
    pub fn users(&self) -> Vec<Point> {
        if let Some(users) = &self.user_positions {
            return users.clone();
        }
        let mut rng = substream(self.rng_seed, StreamPurpose::Users, 0, 0);
        (0..self.num_users)
            .map(|_| {
                [
                    rng.random::<f64>() * self.area_side,
                    rng.random::<f64>() * self.area_side,
                ]
            })
            .collect()
    }

    /// Validate and return `self`, or the first violation as an error.
    pub fn validated(self) -> Result<Self> {
        let report = validate(&self);
        if report.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidScenario(report.to_string()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositive(&'static str),
    ZeroCount(&'static str),
    UserCount { expected: usize, got: usize },
    EndpointUnreachable { distance: f64, reach: f64 },
    PlacementInfeasible { antennas: usize, capacity: usize },
    BadInertia,
    BadShrink,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositive(name) => write!(f, "{name} must be positive"),
            Violation::ZeroCount(name) => write!(f, "{name} must be at least 1"),
            Violation::UserCount { expected, got } => {
                write!(f, "user_positions has {got} entries, expected {expected}")
            }
            Violation::EndpointUnreachable { distance, reach } => write!(
                f,
                "endpoint unreachable: |qF - qI| = {distance:.3} m exceeds v_max*(N-1)*tau = {reach:.3} m"
            ),
            Violation::PlacementInfeasible { antennas, capacity } => write!(
                f,
                "placement infeasible: {antennas} antennas, grid of spacing d_min holds {capacity}"
            ),
            Violation::BadInertia => write!(f, "inertia bounds must satisfy 0 <= chi_min <= chi_max"),
            Violation::BadShrink => write!(f, "trust-region shrink must lie in (0, 1)"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Number of antennas a square grid of pitch `d_min` fits into `[0, side]^2`.
pub fn grid_capacity(side: f64, d_min: f64) -> usize {
    if d_min <= 0.0 {
        return usize::MAX;
    }
    let per_axis = (side / d_min + 1e-9).floor() as usize + 1;
    per_axis.saturating_mul(per_axis)
}

pub fn validate(s: &Scenario) -> ValidationReport {
    let mut v = Vec::new();
    let positive = [
        ("mission_period", s.mission_period),
        ("altitude", s.altitude),
        ("v_max", s.v_max),
        ("a_max", s.a_max),
        ("p_max", s.p_max),
        ("wavelength", s.wavelength),
        ("region_side", s.region_side),
        ("area_side", s.area_side),
    ];
    for (name, value) in positive {
        if !(value > 0.0) || !value.is_finite() {
            v.push(Violation::NonPositive(name));
        }
    }
    for (name, count) in [
        ("num_slots", s.num_slots),
        ("num_users", s.num_users),
        ("num_antennas", s.num_antennas),
        ("num_paths", s.num_paths),
        ("pso.particles", s.pso.particles),
    ] {
        if count == 0 {
            v.push(Violation::ZeroCount(name));
        }
    }
    if !(s.d_min >= 0.0) {
        v.push(Violation::NonPositive("d_min"));
    }
    if !(s.angular_spread >= 0.0) {
        v.push(Violation::NonPositive("angular_spread"));
    }
    if !(s.rician_kappa >= 0.0) {
        v.push(Violation::NonPositive("rician_kappa"));
    }
    if let Some(users) = &s.user_positions {
        if users.len() != s.num_users {
            v.push(Violation::UserCount {
                expected: s.num_users,
                got: users.len(),
            });
        }
    }
    if s.num_slots >= 1 && s.v_max > 0.0 && s.mission_period > 0.0 {
        let distance = norm(sub(s.end, s.start));
        let reach = s.v_max * s.tau() * (s.num_slots - 1) as f64;
        if distance > reach {
            v.push(Violation::EndpointUnreachable { distance, reach });
        }
    }
    if s.region_side > 0.0 {
        let capacity = grid_capacity(s.region_side, s.d_min);
        if s.num_antennas > capacity {
            v.push(Violation::PlacementInfeasible {
                antennas: s.num_antennas,
                capacity,
            });
        }
    }
    if !(0.0 <= s.pso.chi_min && s.pso.chi_min <= s.pso.chi_max) {
        v.push(Violation::BadInertia);
    }
    if !(s.sca.shrink > 0.0 && s.sca.shrink < 1.0) {
        v.push(Violation::BadShrink);
    }
    ValidationReport { violations: v }
}

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub(crate) fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}
