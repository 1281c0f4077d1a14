//! SINR and achievable rate of the uplink under linear receive combining.
//!
//! Everything the optimizers report is scored through [`sum_rate`].

use serde::{Deserialize, Serialize};

use crate::channel::{CVec, ChannelModel, MaLayout, C64};
use crate::error::{Error, Result};
use crate::scenario::Point;

/// Full optimization variable `(Q, W, P, U)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub trajectory: Vec<Point>,
    /// `beamformers[n][m]` has one entry per antenna.
    pub beamformers: Vec<Vec<CVec>>,
    /// `powers[n][m]` in watts.
    pub powers: Vec<Vec<f64>>,
    pub layouts: Vec<MaLayout>,
}

impl Iterate {
    pub fn num_slots(&self) -> usize {
        self.trajectory.len()
    }
}

/// `w^H h`.
pub fn inner(w: &[C64], h: &[C64]) -> C64 {
    w.iter().zip(h).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm_sqr(w: &[C64]) -> f64 {
    w.iter().map(|z| z.norm_sqr()).sum()
}

/// Interference-plus-noise seen by user `m`'s combiner.
pub fn interference_plus_noise(m: usize, w: &[C64], channels: &[CVec], powers: &[f64], noise: f64) -> f64 {
    let mut total = norm_sqr(w) * noise;
    for (r, h) in channels.iter().enumerate() {
        if r != m {
            total += powers[r] * inner(w, h).norm_sqr();
        }
    }
    total
}

/// SINR of user `m` given its combiner and the slot's channels and powers.
pub fn sinr(m: usize, w: &[C64], channels: &[CVec], powers: &[f64], noise: f64) -> Result<f64> {
    if norm_sqr(w) == 0.0 {
        return Err(Error::DegenerateBeamformer { user: m, slot: 0 });
    }
    let signal = powers[m] * inner(w, &channels[m]).norm_sqr();
    if signal == 0.0 {
        return Ok(0.0);
    }
    Ok(signal / interference_plus_noise(m, w, channels, powers, noise))
}

/// `log2(1 + γ)` in bps/Hz.
pub fn rate_from_sinr(gamma: f64) -> f64 {
    gamma.ln_1p() / std::f64::consts::LN_2
}

/// Rates of every user in one slot.
pub fn slot_rates(beamformers: &[CVec], channels: &[CVec], powers: &[f64], noise: f64) -> Result<Vec<f64>> {
    beamformers
        .iter()
        .enumerate()
        .map(|(m, w)| sinr(m, w, channels, powers, noise).map(rate_from_sinr))
        .collect()
}

pub fn slot_sum_rate(beamformers: &[CVec], channels: &[CVec], powers: &[f64], noise: f64) -> Result<f64> {
    Ok(slot_rates(beamformers, channels, powers, noise)?.iter().sum())
}

fn with_slot<T>(n: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::DegenerateBeamformer { user, .. } => Error::DegenerateBeamformer { user, slot: n },
        other => other,
    })
}

pub fn rate(m: usize, n: usize, iterate: &Iterate, model: &ChannelModel, noise: f64) -> Result<f64> {
    let channels = model.slot_channels(n, iterate.trajectory[n], &iterate.layouts[n]);
    with_slot(
        n,
        sinr(m, &iterate.beamformers[n][m], &channels, &iterate.powers[n], noise).map(rate_from_sinr),
    )
}

/// Per-slot, per-user rates `rates[n][m]`.
pub fn all_rates(iterate: &Iterate, model: &ChannelModel, noise: f64) -> Result<Vec<Vec<f64>>> {
    (0..iterate.num_slots())
        .map(|n| {
            let channels = model.slot_channels(n, iterate.trajectory[n], &iterate.layouts[n]);
            with_slot(n, slot_rates(&iterate.beamformers[n], &channels, &iterate.powers[n], noise))
        })
        .collect()
}

/// Mission sum rate `Σ_n Σ_m R_{m,n}`.
pub fn sum_rate(iterate: &Iterate, model: &ChannelModel, noise: f64) -> Result<f64> {
    Ok(all_rates(iterate, model, noise)?
        .iter()
        .map(|slot| slot.iter().sum::<f64>())
        .sum())
}
