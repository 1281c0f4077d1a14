//! Receive beamforming and transmit power by block-coordinate ascent on the
//! weighted-MSE reformulation of the sum rate.
//!
//! For user `m` with combiner `w`, MSE weight `ω` and receive scalar `β`,
//! the surrogate is
//!
//! ```text
//! Ṙ = log2(ω) + (1 - ω·e) / ln 2,
//! e = 1 - 2 Re{β* √p w^H h_m} + |β|² (Σ_r p_r |w^H h_r|² + ‖w‖² σ²)
//! ```
//!
//! which satisfies `max_{β,ω} Ṙ = log2(1 + γ)`, attained at the MMSE `β`
//! and `ω = 1 + γ`. Every block (`β`/`ω`, each `w_m`, the power vector) is
//! maximized exactly, so the surrogate never decreases.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{CVec, ChannelModel, C64};
use crate::error::{Error, Result};
use crate::rate::{inner, norm_sqr, sinr, slot_sum_rate, Iterate};
use crate::scenario::BcaParams;

/// Largest admissible condition number of the receive covariance.
pub const MAX_CONDITION: f64 = 1e12;
const NORM_TOL: f64 = 1e-10;

/// Auxiliary variables of one slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotAux {
    pub beta: Vec<C64>,
    pub omega: Vec<f64>,
}

/// Auxiliary variables for the mission, indexed `[n][m]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Auxiliaries {
    pub beta: Vec<Vec<C64>>,
    pub omega: Vec<Vec<f64>>,
}

/// `Σ_r p_r |w^H h_r|² + ‖w‖² σ²`.
pub fn total_received(w: &[C64], channels: &[CVec], powers: &[f64], noise: f64) -> f64 {
    channels
        .iter()
        .zip(powers)
        .map(|(h, p)| p * inner(w, h).norm_sqr())
        .sum::<f64>()
        + norm_sqr(w) * noise
}

/// Weighted-MSE surrogate of user `m`'s rate, in bps/Hz.
pub fn surrogate_rate(
    m: usize,
    w: &[C64],
    channels: &[CVec],
    powers: &[f64],
    beta: C64,
    omega: f64,
    noise: f64,
) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::NonPositiveWeight(omega));
    }
    let cross = beta.conj() * powers[m].sqrt() * inner(w, &channels[m]);
    let mse = 1.0 - 2.0 * cross.re + beta.norm_sqr() * total_received(w, channels, powers, noise);
    Ok(omega.log2() + (1.0 - omega * mse) / LN_2)
}

/// MMSE receive scalar `β* = √p_m w^H h_m / (Σ_r p_r |w^H h_r|² + ‖w‖² σ²)`.
pub fn update_beta(m: usize, w: &[C64], channels: &[CVec], powers: &[f64], noise: f64) -> C64 {
    let t = total_received(w, channels, powers, noise);
    if t == 0.0 {
        return C64::new(0.0, 0.0);
    }
    inner(w, &channels[m]) * powers[m].sqrt() / t
}

/// MSE weight `ω* = 1 + γ_m`.
pub fn update_omega(m: usize, w: &[C64], channels: &[CVec], powers: &[f64], noise: f64) -> Result<f64> {
    Ok(1.0 + sinr(m, w, channels, powers, noise)?)
}

pub fn refresh_aux(beamformers: &[CVec], channels: &[CVec], powers: &[f64], noise: f64) -> Result<SlotAux> {
    let mut beta = Vec::with_capacity(beamformers.len());
    let mut omega = Vec::with_capacity(beamformers.len());
    for (m, w) in beamformers.iter().enumerate() {
        beta.push(update_beta(m, w, channels, powers, noise));
        omega.push(update_omega(m, w, channels, powers, noise)?);
    }
    Ok(SlotAux { beta, omega })
}

/// Sum of the users' surrogates in one slot.
pub fn slot_surrogate(
    beamformers: &[CVec],
    channels: &[CVec],
    powers: &[f64],
    aux: &SlotAux,
    noise: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (m, w) in beamformers.iter().enumerate() {
        total += surrogate_rate(m, w, channels, powers, aux.beta[m], aux.omega[m], noise)?;
    }
    Ok(total)
}

/// Unit-norm matched filter `h / ‖h‖`; the first basis vector if `h = 0`.
pub fn matched_filter(h: &[C64]) -> CVec {
    let n = norm_sqr(h).sqrt();
    if n == 0.0 {
        let mut e = vec![C64::new(0.0, 0.0); h.len()];
        e[0] = C64::new(1.0, 0.0);
        return e;
    }
    h.iter().map(|z| z / n).collect()
}

/// Unit-norm MMSE combiners `C^{-1} h_m / ‖C^{-1} h_m‖`, which maximize every
/// user's SINR for the given channels and powers.
pub fn mmse_combiners(channels: &[CVec], powers: &[f64], noise: f64) -> Vec<CVec> {
    let cov = receive_covariance(channels, powers, noise);
    let chol = cov.cholesky();
    channels
        .iter()
        .map(|h| {
            let solved = chol
                .as_ref()
                .map(|c| c.solve(&DVector::from_column_slice(h)))
                .filter(|v| v.iter().all(|z| z.is_finite()) && v.norm() > 0.0);
            match solved {
                Some(v) => {
                    let n = v.norm();
                    v.iter().map(|z| z / n).collect()
                }
                None => matched_filter(h),
            }
        })
        .collect()
}

/// `Σ_r p_r h_r h_r^H + σ² I`.
pub fn receive_covariance(channels: &[CVec], powers: &[f64], noise: f64) -> DMatrix<C64> {
    let k = channels[0].len();
    let mut c = DMatrix::<C64>::identity(k, k) * C64::new(noise, 0.0);
    for (h, &p) in channels.iter().zip(powers) {
        let hv = DVector::from_column_slice(h);
        c += hv.clone() * hv.adjoint() * C64::new(p, 0.0);
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerUpdate {
    pub w: CVec,
    /// Multiplier of `‖w‖² ≤ 1` for the natural-log surrogate; zero when inactive.
    pub lambda: f64,
    /// False when the surrogate does not depend on `w` and the input was kept.
    pub changed: bool,
}

/// Exact maximizer of user `m`'s surrogate over `‖w‖ ≤ 1`:
/// `w = (ω|β|² C + λ I)^{-1} ω √p_m β* h_m`, with `λ = 0` when that is
/// feasible and otherwise the unique `λ > 0` giving `‖w‖ = 1`.
pub fn update_beamformer(
    m: usize,
    current: &[C64],
    channels: &[CVec],
    powers: &[f64],
    beta: C64,
    omega: f64,
    noise: f64,
) -> Result<BeamformerUpdate> {
    let k = channels[m].len();
    let curvature = omega * beta.norm_sqr();
    if beta == C64::new(0.0, 0.0) || !(omega > 0.0) || powers[m] == 0.0 || norm_sqr(&channels[m]) == 0.0 {
        return Ok(BeamformerUpdate {
            w: current.to_vec(),
            lambda: 0.0,
            changed: false,
        });
    }
    // Divide through by ω|β|² so that tiny powers cannot underflow the system:
    // w = (C + μ I)^{-1} (√p_m / β) h_m with λ = ω|β|² μ.
    let cov = receive_covariance(channels, powers, noise);
    let eig = SymmetricEigen::new(cov.clone()).eigenvalues;
    let (lo_eig, hi_eig) = eig
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| (a.min(e), b.max(e)));
    let condition = if lo_eig > 0.0 { hi_eig / lo_eig } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(Error::IllConditioned(condition));
    }
    let magnitude = beta.norm();
    let rhs_scale = (beta / magnitude).conj() * (powers[m].sqrt() / magnitude);
    let rhs = DVector::from_iterator(k, channels[m].iter().map(|h| h * rhs_scale));
    let solve = |mu: f64| -> Result<DVector<C64>> {
        let a = &cov + DMatrix::<C64>::identity(k, k) * C64::new(mu, 0.0);
        let chol = a.cholesky().ok_or(Error::IllConditioned(condition))?;
        Ok(chol.solve(&rhs))
    };

    let w0 = solve(0.0)?;
    if w0.norm() <= 1.0 {
        return Ok(BeamformerUpdate {
            w: w0.iter().copied().collect(),
            lambda: 0.0,
            changed: true,
        });
    }

    let mut hi = noise;
    if !(hi > 0.0) {
        hi = hi_eig.max(f64::MIN_POSITIVE);
    }
    let mut lo = 0.0;
    let mut w_hi = solve(hi)?;
    let mut doublings = 0;
    while w_hi.norm() >= 1.0 {
        lo = hi;
        hi *= 2.0;
        w_hi = solve(hi)?;
        doublings += 1;
        if doublings > 2000 || !hi.is_finite() {
            return Err(Error::Bracketing);
        }
    }
    for _ in 0..200 {
        if 1.0 - w_hi.norm() < NORM_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let w_mid = solve(mid)?;
        if w_mid.norm() > 1.0 {
            lo = mid;
        } else {
            hi = mid;
            w_hi = w_mid;
        }
    }
    Ok(BeamformerUpdate {
        w: w_hi.iter().copied().collect(),
        lambda: curvature * hi,
        changed: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PowerBound {
    Interior,
    Lower,
    Upper,
    /// Surrogate independent of this user's power; set to the maximum.
    Flat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerUpdate {
    pub powers: Vec<f64>,
    pub bounds: Vec<PowerBound>,
}

/// Exact box-constrained maximizer in the amplitudes `x_m = √p_m`:
/// `x_m = clamp(ω_m Re{β_m* w_m^H h_m} / Σ_r ω_r |β_r|² |w_r^H h_m|², 0, √P_max)`.
pub fn update_powers(beamformers: &[CVec], channels: &[CVec], aux: &SlotAux, p_max: f64) -> PowerUpdate {
    let m_users = channels.len();
    let mut powers = Vec::with_capacity(m_users);
    let mut bounds = Vec::with_capacity(m_users);
    let amp_max = p_max.sqrt();
    for m in 0..m_users {
        let num = aux.omega[m] * (aux.beta[m].conj() * inner(&beamformers[m], &channels[m])).re;
        let den: f64 = (0..m_users)
            .map(|r| aux.omega[r] * aux.beta[r].norm_sqr() * inner(&beamformers[r], &channels[m]).norm_sqr())
            .sum();
        let (x, bound) = if den <= 0.0 {
            (amp_max, PowerBound::Flat)
        } else {
            let x = num / den;
            if x <= 0.0 {
                (0.0, PowerBound::Lower)
            } else if x >= amp_max {
                (amp_max, PowerBound::Upper)
            } else {
                (x, PowerBound::Interior)
            }
        };
        powers.push(if bound == PowerBound::Upper || bound == PowerBound::Flat { p_max } else { x * x });
        bounds.push(bound);
    }
    PowerUpdate { powers, bounds }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcaSweep {
    pub sweep: usize,
    pub surrogate: f64,
    pub true_sum_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotBca {
    pub beamformers: Vec<CVec>,
    pub powers: Vec<f64>,
    pub initial_sum_rate: f64,
    pub trace: Vec<BcaSweep>,
    pub converged: bool,
}

/// Cycle `(β, ω) → W → P` in one slot until the surrogate stalls.
pub fn bca_solve_slot(
    channels: &[CVec],
    beamformers: &[CVec],
    powers: &[f64],
    noise: f64,
    p_max: f64,
    params: &BcaParams,
) -> Result<SlotBca> {
    let mut w = beamformers.to_vec();
    let mut p = powers.to_vec();
    let initial = slot_sum_rate(&w, channels, &p, noise)?;
    let mut previous = initial;
    let mut trace = Vec::new();
    let mut converged = false;
    for sweep in 1..=params.max_sweeps {
        let aux = refresh_aux(&w, channels, &p, noise)?;
        for m in 0..w.len() {
            let update = update_beamformer(m, &w[m], channels, &p, aux.beta[m], aux.omega[m], noise)?;
            w[m] = update.w;
        }
        let before = std::mem::replace(&mut p, update_powers(&w, channels, &aux, p_max).powers);
        let surrogate = slot_surrogate(&w, channels, &p, &aux, noise)?;
        let mut true_sum_rate = slot_sum_rate(&w, channels, &p, noise)?;
        if let Some((pe, we, rate)) = extrapolate_powers(&before, &p, channels, noise, p_max, true_sum_rate, params)? {
            p = pe;
            w = we;
            true_sum_rate = rate;
        }
        trace.push(BcaSweep {
            sweep,
            surrogate,
            true_sum_rate,
        });
        if (surrogate - previous).abs() < params.eps {
            converged = true;
            break;
        }
        previous = surrogate;
    }
    Ok(SlotBca {
        beamformers: w,
        powers: p,
        initial_sum_rate: initial,
        trace,
        converged,
    })
}

/// Doubles the last power step `after - before` inside the box, refitting
/// MMSE combiners, while the true rate strictly improves on `rate`.
fn extrapolate_powers(
    before: &[f64],
    after: &[f64],
    channels: &[CVec],
    noise: f64,
    p_max: f64,
    rate: f64,
    params: &BcaParams,
) -> Result<Option<(Vec<f64>, Vec<CVec>, f64)>> {
    let mut best: Option<(Vec<f64>, Vec<CVec>, f64)> = None;
    let mut best_rate = rate;
    let mut previous = after.to_vec();
    let mut t = 1.0;
    for _ in 0..params.max_doublings {
        t *= 2.0;
        let cand: Vec<f64> = before
            .iter()
            .zip(after)
            .map(|(&b, &a)| (b + t * (a - b)).clamp(0.0, p_max))
            .collect();
        if cand == previous {
            break;
        }
        let w = mmse_combiners(channels, &cand, noise);
        let r = slot_sum_rate(&w, channels, &cand, noise)?;
        if r <= best_rate {
            break;
        }
        best_rate = r;
        previous = cand.clone();
        best = Some((cand, w, r));
    }
    Ok(best)
}

#[derive(Debug, Clone)]
pub struct BcaOutcome {
    pub beamformers: Vec<Vec<CVec>>,
    pub powers: Vec<Vec<f64>>,
    pub slots: Vec<SlotBca>,
}

/// Run [`bca_solve_slot`] on every slot of `iterate` in parallel.
pub fn bca_solve(
    iterate: &Iterate,
    model: &ChannelModel,
    noise: f64,
    p_max: f64,
    params: &BcaParams,
) -> Result<BcaOutcome> {
    let slots: Vec<SlotBca> = (0..iterate.num_slots())
        .into_par_iter()
        .map(|n| {
            let channels = model.slot_channels(n, iterate.trajectory[n], &iterate.layouts[n]);
            bca_solve_slot(
                &channels,
                &iterate.beamformers[n],
                &iterate.powers[n],
                noise,
                p_max,
                params,
            )
            .map_err(|e| match e {
                Error::DegenerateBeamformer { user, .. } => Error::DegenerateBeamformer { user, slot: n },
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    Ok(BcaOutcome {
        beamformers: slots.iter().map(|s| s.beamformers.clone()).collect(),
        powers: slots.iter().map(|s| s.powers.clone()).collect(),
        slots,
    })
}
