//! Sum-rate maximization for an aerial data collector carrying a movable
//! antenna array: channel model, WMMSE beamforming and power control, SCA
//! trajectory design, PSO and MM antenna placement, and the alternating
//! optimization that ties them together.

pub mod ao;
pub mod baselines;
pub mod channel;
pub mod error;
pub mod experiments;
pub mod mm;
pub mod pso;
pub mod rate;
pub mod scenario;
pub mod trajectory;
pub mod wmmse;

pub use channel::{ChannelModel, MaLayout, C64, CVec};
pub use error::{Error, Result};
pub use rate::Iterate;
pub use scenario::{Point, Scenario};

/// A validated scenario together with its users and channel realization.
#[derive(Debug, Clone)]
pub struct Instance {
    pub scenario: Scenario,
    pub users: Vec<Point>,
    pub model: ChannelModel,
}

impl Instance {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let scenario = scenario.validated()?;
        let users = scenario.users();
        let model = ChannelModel::new(&scenario, users.clone());
        Ok(Self {
            scenario,
            users,
            model,
        })
    }

    pub fn noise(&self) -> f64 {
        self.scenario.noise_power()
    }

    pub fn sum_rate(&self, iterate: &Iterate) -> Result<f64> {
        rate::sum_rate(iterate, &self.model, self.noise())
    }
}
