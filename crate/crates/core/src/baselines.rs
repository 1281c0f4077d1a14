//! The proposed scheme and its three benchmarks, all driven through the
//! same outer loop and channel realization.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::ao::{ao_solve, AoOutcome, Engines, PlacementEngine, TrajectoryEngine};
use crate::channel::MaLayout;
use crate::error::{Error, Result};
use crate::scenario::{Point, Scenario};
use crate::trajectory::straight_line;
use crate::Instance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// SCA trajectory with PSO placement.
    Proposed,
    /// SCA trajectory with MM placement.
    AoMm,
    /// Straight-line trajectory with PSO placement.
    FixedTraj,
    /// SCA trajectory with a fixed half-wavelength array.
    Fpa,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Proposed, Scheme::AoMm, Scheme::FixedTraj, Scheme::Fpa];

    pub fn tag(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::AoMm => "ao-mm",
            Scheme::FixedTraj => "fixed-traj",
            Scheme::Fpa => "fpa",
        }
    }

    pub fn engines(self, scenario: &Scenario) -> Result<Engines> {
        Ok(match self {
            Scheme::Proposed => Engines {
                trajectory: TrajectoryEngine::Sca,
                placement: PlacementEngine::Pso,
                initial_layout: None,
            },
            Scheme::AoMm => Engines {
                trajectory: TrajectoryEngine::Sca,
                placement: PlacementEngine::Mm,
                initial_layout: None,
            },
            Scheme::FixedTraj => Engines {
                trajectory: TrajectoryEngine::Fixed,
                placement: PlacementEngine::Pso,
                initial_layout: None,
            },
            Scheme::Fpa => Engines {
                trajectory: TrajectoryEngine::Sca,
                placement: PlacementEngine::Fixed,
                initial_layout: Some(fpa_layout(scenario)?),
            },
        })
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}' (expected proposed, ao-mm, fixed-traj or fpa)")))
    }
}

/// Straight line at constant speed between the endpoints.
pub fn fixed_trajectory(scenario: &Scenario) -> Vec<Point> {
    straight_line(scenario.start, scenario.end, scenario.num_slots)
}

/// `⌈√K⌉ x ⌈√K⌉` grid at half-wavelength pitch, anchored at the region's
/// corner so that it does not depend on the region size.
pub fn fpa_layout(scenario: &Scenario) -> Result<MaLayout> {
    let k = scenario.num_antennas;
    let per_axis = (k as f64).sqrt().ceil() as usize;
    let pitch = scenario.wavelength / 2.0;
    let span = (per_axis - 1) as f64 * pitch;
    if span > scenario.region_side || pitch < scenario.d_min {
        return Err(Error::InvalidScenario(format!(
            "a {per_axis}x{per_axis} half-wavelength array does not fit the region with spacing {}",
            scenario.d_min
        )));
    }
    Ok(MaLayout::new(
        (0..k)
            .map(|i| [(i % per_axis) as f64 * pitch, (i / per_axis) as f64 * pitch])
            .collect(),
    ))
}

pub fn run_scheme(instance: &Instance, scheme: Scheme) -> Result<AoOutcome> {
    ao_solve(instance, &scheme.engines(&instance.scenario)?)
}
