//! Trajectory design by successive convex approximation inside a trust
//! region, with beamformers, powers and antenna layouts held fixed.
//!
//! At the expansion trajectory `Q_l` the path angles are frozen, so each
//! channel factors as `h_r(q) = h^Ξ_r / d_r(q)` with `h^Ξ_r` constant. With
//! `D_r = d_r²`, the rate of user `m` becomes
//! `log2(Σ_r a_r / D_r + c) - log2(Σ_{r≠m} a_r / D_r + c)`, where
//! `a_r = p_r |w^H h^Ξ_r|²` and `c = ‖w‖² σ²`. The first term is convex in
//! `D` and is replaced by its tangent plane; the second term is bounded
//! above through `e^{-η_r} ≤ D_r^l + 2 (q_l - s_r)ᵀ (q - q_l)`. Both bounds
//! are tight at `Q_l`, and the resulting surrogate is concave and
//! separable across slots, leaving the kinematics as the only coupling.

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::channel::{CVec, ChannelModel};
use crate::error::{Error, Result};
use crate::rate::{inner, norm_sqr, sum_rate, Iterate};
use crate::scenario::{norm, sub, Point, Scenario, ScaParams};
use crate::wmmse::mmse_combiners;

/// Waypoints on the straight segment from `start` to `end`, evenly spaced.
pub fn straight_line(start: Point, end: Point, num_slots: usize) -> Vec<Point> {
    if num_slots == 1 {
        return vec![start];
    }
    let last = (num_slots - 1) as f64;
    (0..num_slots)
        .map(|n| {
            let t = n as f64 / last;
            [start[0] + t * (end[0] - start[0]), start[1] + t * (end[1] - start[1])]
        })
        .collect()
}

/// Kinematic limits in waypoint units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub start: Point,
    pub end: Point,
    /// `V_max τ`.
    pub max_step: f64,
    /// `a_max τ²`.
    pub max_second: f64,
}

impl Kinematics {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            start: s.start,
            end: s.end,
            max_step: s.max_step(),
            max_second: s.max_second_difference(),
        }
    }

    /// First violated constraint, if any, with absolute slack `tol` on the
    /// step and second-difference norms.
    pub fn violation(&self, q: &[Point], tol: f64) -> Option<String> {
        let n = q.len();
        if n == 0 {
            return Some("empty trajectory".into());
        }
        if q[0] != self.start {
            return Some(format!("first waypoint {:?} is not the start {:?}", q[0], self.start));
        }
        if q[n - 1] != self.end {
            return Some(format!("last waypoint {:?} is not the end {:?}", q[n - 1], self.end));
        }
        for i in 1..n {
            let step = norm(sub(q[i], q[i - 1]));
            if step > self.max_step + tol {
                return Some(format!("step {i} has length {step} > {}", self.max_step));
            }
        }
        for i in 2..n {
            let acc = second_difference(q, i);
            if acc > self.max_second + tol {
                return Some(format!("second difference {i} is {acc} > {}", self.max_second));
            }
        }
        None
    }
}

fn second_difference(q: &[Point], i: usize) -> f64 {
    norm([
        q[i][0] - 2.0 * q[i - 1][0] + q[i - 2][0],
        q[i][1] - 2.0 * q[i - 1][1] + q[i - 2][1],
    ])
}

/// Per-slot speeds and accelerations `(‖v_n‖, ‖a_n‖)`; zero where undefined.
pub fn speeds_and_accels(q: &[Point], tau: f64) -> Vec<(f64, f64)> {
    (0..q.len())
        .map(|i| {
            let v = if i >= 1 { norm(sub(q[i], q[i - 1])) / tau } else { 0.0 };
            let a = if i >= 2 { second_difference(q, i) / (tau * tau) } else { 0.0 };
            (v, a)
        })
        .collect()
}

/// Distance-normalized channels `h^Ξ_{r} = d_r · h_r` of slot `n` at `q`,
/// with the path angles evaluated at `q`.
pub fn freeze_frv(model: &ChannelModel, n: usize, q: Point, iterate: &Iterate) -> Vec<CVec> {
    model
        .slot_links(n, q)
        .iter()
        .map(|link| {
            link.channel(&iterate.layouts[n])
                .into_iter()
                .map(|h| h * link.distance)
                .collect()
        })
        .collect()
}

/// Concave lower bound of one slot's sum rate as a function of its
/// waypoint, built at the expansion point `anchor`.
#[derive(Debug, Clone)]
pub struct SlotSurrogate {
    users: Vec<Point>,
    altitude_sq: f64,
    anchor: Point,
    /// `D_r` at the anchor.
    anchor_sq: Vec<f64>,
    /// `a[m][r] = p_r |w_m^H h^Ξ_r|²`.
    a: Vec<Vec<f64>>,
    /// `c[m] = ‖w_m‖² σ²`.
    c: Vec<f64>,
    /// Tangent weights `E[m][r]`.
    e: Vec<Vec<f64>>,
    /// First term at the anchor.
    first_at_anchor: Vec<f64>,
}

impl SlotSurrogate {
    pub fn new(
        h_xi: &[CVec],
        beamformers: &[CVec],
        powers: &[f64],
        noise: f64,
        users: &[Point],
        altitude: f64,
        anchor: Point,
    ) -> Self {
        let altitude_sq = altitude * altitude;
        let anchor_sq: Vec<f64> = users.iter().map(|&s| sq_distance(anchor, s, altitude_sq)).collect();
        let a: Vec<Vec<f64>> = beamformers
            .iter()
            .map(|w| {
                h_xi.iter()
                    .zip(powers)
                    .map(|(h, p)| p * inner(w, h).norm_sqr())
                    .collect()
            })
            .collect();
        let c: Vec<f64> = beamformers.iter().map(|w| norm_sqr(w) * noise).collect();
        let mut e = Vec::with_capacity(a.len());
        let mut first_at_anchor = Vec::with_capacity(a.len());
        for m in 0..a.len() {
            let total: f64 = a[m].iter().zip(&anchor_sq).map(|(a, d)| a / d).sum::<f64>() + c[m];
            first_at_anchor.push(total.log2());
            e.push(
                a[m].iter()
                    .zip(&anchor_sq)
                    .map(|(a, d)| a / (LN_2 * d * d * total))
                    .collect(),
            );
        }
        Self {
            users: users.to_vec(),
            altitude_sq,
            anchor,
            anchor_sq,
            a,
            c,
            e,
            first_at_anchor,
        }
    }

    pub fn anchor(&self) -> Point {
        self.anchor
    }

    pub fn num_users(&self) -> usize {
        self.a.len()
    }

    /// `E_{m,r} ≥ 0`.
    pub fn tangent_weights(&self, m: usize) -> &[f64] {
        &self.e[m]
    }

    pub fn sq_distance(&self, r: usize, q: Point) -> f64 {
        sq_distance(q, self.users[r], self.altitude_sq)
    }

    /// First-order expansion of `D_r(q)` at the anchor.
    pub fn linearized_sq_distance(&self, r: usize, q: Point) -> f64 {
        let s = self.users[r];
        self.anchor_sq[r]
            + 2.0 * ((self.anchor[0] - s[0]) * (q[0] - self.anchor[0]) + (self.anchor[1] - s[1]) * (q[1] - self.anchor[1]))
    }

    /// `log2(Σ_r a_r / D_r(q) + c)`.
    pub fn first_term(&self, m: usize, q: Point) -> f64 {
        let total: f64 = (0..self.a[m].len()).map(|r| self.a[m][r] / self.sq_distance(r, q)).sum();
        (total + self.c[m]).log2()
    }

    /// `log2(Σ_{r≠m} a_r / D_r(q) + c)`.
    pub fn second_term(&self, m: usize, q: Point) -> f64 {
        let total: f64 = (0..self.a[m].len())
            .filter(|&r| r != m)
            .map(|r| self.a[m][r] / self.sq_distance(r, q))
            .sum();
        (total + self.c[m]).log2()
    }

    /// Rate of user `m` with the angles frozen at the anchor.
    pub fn frozen_rate(&self, m: usize, q: Point) -> f64 {
        self.first_term(m, q) - self.second_term(m, q)
    }

    pub fn first_term_bound(&self, m: usize, q: Point) -> f64 {
        self.first_at_anchor[m]
            + (0..self.a[m].len())
                .map(|r| self.e[m][r] * (self.anchor_sq[r] - self.sq_distance(r, q)))
                .sum::<f64>()
    }

    pub fn second_term_bound(&self, m: usize, eta: &[f64]) -> f64 {
        let total: f64 = (0..self.a[m].len())
            .filter(|&r| r != m)
            .map(|r| eta[r].exp() * self.a[m][r])
            .sum();
        (total + self.c[m]).log2()
    }

    /// Whether `e^{-η_r} ≤` the linearized squared distance for every `r`,
    /// up to rounding in `exp(ln x)`.
    pub fn slack_feasible(&self, q: Point, eta: &[f64]) -> bool {
        (0..self.users.len()).all(|r| (-eta[r]).exp() <= self.linearized_sq_distance(r, q) * (1.0 + 1e-12))
    }

    /// The smallest feasible slack `η_r = -ln(D_r^l + ...)`, or `None` when a
    /// linearized distance is not positive.
    pub fn tight_eta(&self, q: Point) -> Option<Vec<f64>> {
        (0..self.users.len())
            .map(|r| {
                let l = self.linearized_sq_distance(r, q);
                (l > 0.0).then(|| -l.ln())
            })
            .collect()
    }

    /// Surrogate sum rate of the slot with the slack eliminated.
    pub fn value(&self, q: Point) -> Option<f64> {
        let eta = self.tight_eta(q)?;
        Some(
            (0..self.num_users())
                .map(|m| self.first_term_bound(m, q) - self.second_term_bound(m, &eta))
                .sum(),
        )
    }

    /// Gradient of [`Self::value`] with respect to `q`.
    pub fn gradient(&self, q: Point) -> Point {
        let mut g = [0.0, 0.0];
        let lin: Vec<f64> = (0..self.users.len()).map(|r| self.linearized_sq_distance(r, q)).collect();
        for m in 0..self.num_users() {
            for (r, s) in self.users.iter().enumerate() {
                g[0] -= 2.0 * self.e[m][r] * (q[0] - s[0]);
                g[1] -= 2.0 * self.e[m][r] * (q[1] - s[1]);
            }
            let mut total = self.c[m];
            let mut num = [0.0, 0.0];
            for (r, s) in self.users.iter().enumerate() {
                if r == m {
                    continue;
                }
                total += self.a[m][r] / lin[r];
                let f = -self.a[m][r] / (lin[r] * lin[r]) * 2.0;
                num[0] += f * (self.anchor[0] - s[0]);
                num[1] += f * (self.anchor[1] - s[1]);
            }
            g[0] -= num[0] / (total * LN_2);
            g[1] -= num[1] / (total * LN_2);
        }
        g
    }
}

fn sq_distance(q: Point, s: Point, altitude_sq: f64) -> f64 {
    let dx = q[0] - s[0];
    let dy = q[1] - s[1];
    dx * dx + dy * dy + altitude_sq
}

/// Surrogates for every slot at the trajectory of `iterate`.
pub fn build_surrogates(iterate: &Iterate, model: &ChannelModel, noise: f64) -> Vec<SlotSurrogate> {
    (0..iterate.num_slots())
        .map(|n| {
            let q = iterate.trajectory[n];
            let h_xi = freeze_frv(model, n, q, iterate);
            SlotSurrogate::new(
                &h_xi,
                &iterate.beamformers[n],
                &iterate.powers[n],
                noise,
                model.users(),
                model.altitude(),
                q,
            )
        })
        .collect()
}

pub fn total_surrogate(surrogates: &[SlotSurrogate], q: &[Point]) -> Option<f64> {
    surrogates.iter().zip(q).map(|(s, &p)| s.value(p)).sum()
}

/// `‖Σ_j c_j q_j - center‖ ≤ radius` over waypoints.
#[derive(Debug, Clone)]
struct BallSet {
    terms: Vec<(usize, f64)>,
    center: Point,
    radius: f64,
}

impl BallSet {
    /// Project `q` restricted to this set's waypoints; fixed waypoints stay put.
    fn project(&self, q: &mut [Point; 3], free: &[bool; 3]) {
        let mut v = [-self.center[0], -self.center[1]];
        let mut weight = 0.0;
        for (i, &(_, c)) in self.terms.iter().enumerate() {
            v[0] += c * q[i][0];
            v[1] += c * q[i][1];
            if free[i] {
                weight += c * c;
            }
        }
        let len = norm(v);
        if len <= self.radius || weight == 0.0 {
            return;
        }
        let excess = 1.0 - self.radius / len;
        let delta = [v[0] * excess, v[1] * excess];
        for (i, &(_, c)) in self.terms.iter().enumerate() {
            if free[i] {
                q[i][0] -= c * delta[0] / weight;
                q[i][1] -= c * delta[1] / weight;
            }
        }
    }
}

const RADIUS_MARGIN: f64 = 1e-7;
const DYKSTRA_SWEEPS: usize = 2000;

/// Euclidean projection onto kinematics ∩ trust region by Dykstra's method.
fn project_feasible(target: &[Point], anchor: &[Point], kin: &Kinematics, radius: f64) -> Vec<Point> {
    let n = target.len();
    let shrink = 1.0 - RADIUS_MARGIN;
    let mut sets = Vec::new();
    for i in 1..n {
        sets.push(BallSet {
            terms: vec![(i, 1.0), (i - 1, -1.0)],
            center: [0.0, 0.0],
            radius: kin.max_step * shrink,
        });
    }
    for i in 2..n {
        sets.push(BallSet {
            terms: vec![(i, 1.0), (i - 1, -2.0), (i - 2, 1.0)],
            center: [0.0, 0.0],
            radius: kin.max_second * shrink,
        });
    }
    for i in 1..n.saturating_sub(1) {
        sets.push(BallSet {
            terms: vec![(i, 1.0)],
            center: anchor[i],
            radius: radius * shrink,
        });
    }
    let free = |j: usize| j != 0 && j + 1 != n;
    let mut x = target.to_vec();
    x[0] = kin.start;
    x[n - 1] = kin.end;
    // Dykstra increments are zero outside each set's own waypoints.
    let mut increments: Vec<[Point; 3]> = vec![[[0.0; 2]; 3]; sets.len()];
    for _ in 0..DYKSTRA_SWEEPS {
        let mut moved = 0.0f64;
        for (set, inc) in sets.iter().zip(increments.iter_mut()) {
            let mut y = [[0.0; 2]; 3];
            let mut mask = [false; 3];
            for (i, &(j, _)) in set.terms.iter().enumerate() {
                y[i] = [x[j][0] + inc[i][0], x[j][1] + inc[i][1]];
                mask[i] = free(j);
            }
            let mut z = y;
            set.project(&mut z, &mask);
            for (i, &(j, _)) in set.terms.iter().enumerate() {
                inc[i] = [y[i][0] - z[i][0], y[i][1] - z[i][1]];
                moved = moved.max(norm(sub(z[i], x[j])));
                x[j] = z[i];
            }
        }
        if moved < 1e-12 * (1.0 + kin.max_step) {
            break;
        }
    }
    x
}

fn feasible_in_region(q: &[Point], anchor: &[Point], kin: &Kinematics, radius: f64) -> bool {
    kin.violation(q, 1e-9).is_none()
        && q.iter()
            .zip(anchor)
            .all(|(a, b)| norm(sub(*a, *b)) <= radius + 1e-9)
}

/// Result of one convex subproblem.
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub trajectory: Vec<Point>,
    pub eta: Vec<Vec<f64>>,
    pub surrogate: f64,
    pub surrogate_at_anchor: f64,
    pub iterations: usize,
}

/// Maximize the summed slot surrogates over kinematics ∩ trust region by
/// projected gradient ascent with Armijo backtracking.
pub fn solve_subproblem(surrogates: &[SlotSurrogate], kin: &Kinematics, radius: f64) -> Result<SubproblemSolution> {
    let anchor: Vec<Point> = surrogates.iter().map(|s| s.anchor()).collect();
    if let Some(v) = kin.violation(&anchor, 1e-9) {
        return Err(Error::NoFeasibleTrajectory(v));
    }
    let start_value = total_surrogate(surrogates, &anchor)
        .ok_or_else(|| Error::NoFeasibleTrajectory("expansion point has no valid slack".into()))?;
    let finish = |q: Vec<Point>, value: f64, iterations: usize| SubproblemSolution {
        eta: surrogates
            .iter()
            .zip(&q)
            .map(|(s, &p)| s.tight_eta(p).unwrap_or_default())
            .collect(),
        trajectory: q,
        surrogate: value,
        surrogate_at_anchor: start_value,
        iterations,
    };
    let n = anchor.len();
    if radius <= 0.0 || n <= 2 {
        return Ok(finish(anchor, start_value, 0));
    }

    let mut q = anchor.clone();
    let mut value = start_value;
    let mut step = f64::NAN;
    let mut iterations = 0;
    for _ in 0..200 {
        iterations += 1;
        let grad: Vec<Point> = surrogates.iter().zip(&q).map(|(s, &p)| s.gradient(p)).collect();
        let gmax = grad[1..n - 1].iter().map(|g| norm(*g)).fold(0.0, f64::max);
        if gmax == 0.0 || !gmax.is_finite() {
            break;
        }
        if step.is_nan() {
            step = radius / gmax;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let target: Vec<Point> = q
                .iter()
                .zip(&grad)
                .map(|(p, g)| [p[0] + step * g[0], p[1] + step * g[1]])
                .collect();
            let cand = project_feasible(&target, &anchor, kin, radius);
            if feasible_in_region(&cand, &anchor, kin, radius) {
                if let Some(v) = total_surrogate(surrogates, &cand) {
                    let predicted: f64 = cand
                        .iter()
                        .zip(&q)
                        .zip(&grad)
                        .map(|((c, p), g)| g[0] * (c[0] - p[0]) + g[1] * (c[1] - p[1]))
                        .sum();
                    if v >= value + 1e-4 * predicted && v >= value {
                        let gain = v - value;
                        let moved = cand.iter().zip(&q).map(|(a, b)| norm(sub(*a, *b))).fold(0.0, f64::max);
                        q = cand;
                        value = v;
                        accepted = true;
                        step *= 2.0;
                        if gain <= 1e-13 * value.abs().max(1.0) || moved < 1e-9 {
                            return Ok(finish(q, value, iterations));
                        }
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(finish(q, value, iterations))
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaStep {
    pub iteration: usize,
    pub radius: f64,
    pub accepted: bool,
    pub surrogate_gain: f64,
    pub true_sum_rate: f64,
}

#[derive(Debug, Clone)]
pub struct ScaOutcome {
    pub trajectory: Vec<Point>,
    /// Combiners matching `trajectory` when candidates were scored with refit
    /// combiners.
    pub beamformers: Option<Vec<Vec<CVec>>>,
    pub initial_sum_rate: f64,
    pub final_sum_rate: f64,
    pub trace: Vec<ScaStep>,
    pub converged: bool,
}

/// Trust-region SCA. Steps are accepted only when the exact sum rate does
/// not decrease; otherwise the radius shrinks.
/// `iterate` with every slot's combiners replaced by MMSE combiners.
pub fn with_mmse_combiners(iterate: &Iterate, model: &ChannelModel, noise: f64) -> Iterate {
    let mut out = iterate.clone();
    for n in 0..iterate.num_slots() {
        let channels = model.slot_channels(n, iterate.trajectory[n], &iterate.layouts[n]);
        out.beamformers[n] = mmse_combiners(&channels, &iterate.powers[n], noise);
    }
    out
}

pub fn sca_solve(
    iterate: &Iterate,
    model: &ChannelModel,
    noise: f64,
    kin: &Kinematics,
    params: &ScaParams,
) -> Result<ScaOutcome> {
    if let Some(v) = kin.violation(&iterate.trajectory, 1e-9) {
        return Err(Error::NoFeasibleTrajectory(v));
    }
    let refit = |it: Iterate| {
        if params.refit_combiners {
            with_mmse_combiners(&it, model, noise)
        } else {
            it
        }
    };
    let initial = sum_rate(iterate, model, noise)?;
    let mut current = refit(iterate.clone());
    let mut rate = sum_rate(&current, model, noise)?;
    let mut radius = params.initial_radius.unwrap_or(kin.max_step / 2.0);
    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 1..=params.max_iters {
        if radius < params.min_radius {
            converged = true;
            break;
        }
        let surrogates = build_surrogates(&current, model, noise);
        let sol = solve_subproblem(&surrogates, kin, radius)?;
        let mut candidate = current.clone();
        candidate.trajectory = sol.trajectory;
        let candidate = refit(candidate);
        let cand_rate = sum_rate(&candidate, model, noise)?;
        let predicted = (sol.surrogate - sol.surrogate_at_anchor).max(0.0);
        let accepted = cand_rate >= rate && cand_rate - rate >= params.accept_ratio * predicted;
        trace.push(ScaStep {
            iteration,
            radius,
            accepted,
            surrogate_gain: sol.surrogate - sol.surrogate_at_anchor,
            true_sum_rate: if accepted { cand_rate } else { rate },
        });
        if accepted {
            let delta = cand_rate - rate;
            current = candidate;
            rate = cand_rate;
            if delta < params.eps {
                converged = true;
                break;
            }
        } else {
            radius *= params.shrink;
        }
    }
    Ok(ScaOutcome {
        beamformers: params.refit_combiners.then(|| current.beamformers.clone()),
        trajectory: current.trajectory,
        initial_sum_rate: initial,
        final_sum_rate: rate,
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{MaLayout, C64};
    use crate::scenario::{default_scenario, desk_scenario};
    use crate::wmmse::matched_filter;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn initial_iterate(s: &Scenario, model: &ChannelModel) -> Iterate {
        let trajectory = straight_line(s.start, s.end, s.num_slots);
        let layout = MaLayout::new(
            (0..s.num_antennas)
                .map(|k| [(k % 2) as f64 * 0.2 + 0.1, (k / 2) as f64 * 0.2 + 0.1])
                .collect(),
        );
        let layouts = vec![layout; s.num_slots];
        let beamformers = (0..s.num_slots)
            .map(|n| {
                model
                    .slot_channels(n, trajectory[n], &layouts[n])
                    .iter()
                    .map(|h| matched_filter(h))
                    .collect()
            })
            .collect();
        Iterate {
            trajectory,
            beamformers,
            powers: vec![vec![s.p_max; s.num_users]; s.num_slots],
            layouts,
        }
    }

    fn setup(s: &Scenario) -> (ChannelModel, Iterate) {
        let model = ChannelModel::new(s, s.users());
        let it = initial_iterate(s, &model);
        (model, it)
    }

    #[test]
    fn straight_line_is_feasible_for_defaults() {
        for s in [default_scenario(), desk_scenario()] {
            let q = straight_line(s.start, s.end, s.num_slots);
            let kin = Kinematics::from_scenario(&s);
            assert!(kin.violation(&q, 0.0).is_none());
            let top = speeds_and_accels(&q, s.tau()).iter().map(|x| x.0).fold(0.0, f64::max);
            let expected = norm(sub(s.end, s.start)) / ((s.num_slots - 1) as f64 * s.tau());
            assert!((top - expected).abs() < 1e-9 && top < s.v_max);
        }
    }

    #[test]
    fn frozen_channels_match_exact_at_anchor() {
        let s = desk_scenario();
        let (model, it) = setup(&s);
        for n in 0..s.num_slots {
            let q = it.trajectory[n];
            let h_xi = freeze_frv(&model, n, q, &it);
            let exact = model.slot_channels(n, q, &it.layouts[n]);
            for m in 0..s.num_users {
                let d = crate::channel::distance(q, model.users()[m], s.altitude);
                for k in 0..s.num_antennas {
                    assert!((h_xi[m][k] / d - exact[m][k]).norm() <= 1e-12 * exact[m][k].norm().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn single_path_los_has_unit_normalized_gain() {
        let mut s = desk_scenario();
        s.num_paths = 1;
        s.num_antennas = 1;
        s.rician_kappa = f64::INFINITY;
        let (model, it) = setup(&s);
        let h_xi = freeze_frv(&model, 0, it.trajectory[0], &it);
        for h in h_xi {
            assert!((h[0].norm() - s.h0().sqrt()).abs() < 1e-15);
        }
    }

    fn random_surrogate(rng: &mut ChaCha8Rng, users: usize) -> SlotSurrogate {
        let s: Vec<Point> = (0..users).map(|_| [rng.random::<f64>() * 800.0, rng.random::<f64>() * 800.0]).collect();
        let h: Vec<CVec> = (0..users)
            .map(|_| {
                (0..3)
                    .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * 2e-3)
                    .collect()
            })
            .collect();
        let w: Vec<CVec> = (0..users)
            .map(|_| {
                let v: CVec = (0..3).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
                matched_filter(&v)
            })
            .collect();
        let p: Vec<f64> = (0..users).map(|_| rng.random::<f64>()).collect();
        let anchor = [rng.random::<f64>() * 800.0, rng.random::<f64>() * 800.0];
        SlotSurrogate::new(&h, &w, &p, 1e-14, &s, 50.0, anchor)
    }

    #[test]
    fn surrogate_sandwich() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let sur = random_surrogate(&mut rng, 3);
            let q0 = sur.anchor();
            let eta0 = sur.tight_eta(q0).unwrap();
            for m in 0..3 {
                assert!((sur.first_term_bound(m, q0) - sur.first_term(m, q0)).abs() < 1e-9);
                assert!((sur.second_term_bound(m, &eta0) - sur.second_term(m, q0)).abs() < 1e-9);
                assert!(sur.tangent_weights(m).iter().all(|&e| e >= 0.0));
            }
            for _ in 0..200 {
                let q = [q0[0] + (rng.random::<f64>() - 0.5) * 200.0, q0[1] + (rng.random::<f64>() - 0.5) * 200.0];
                let Some(eta) = sur.tight_eta(q) else { continue };
                for m in 0..3 {
                    assert!(sur.first_term_bound(m, q) <= sur.first_term(m, q) + 1e-9);
                    assert!(sur.second_term_bound(m, &eta) >= sur.second_term(m, q) - 1e-9);
                }
            }
        }
    }

    #[test]
    fn single_user_second_term_is_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sur = random_surrogate(&mut rng, 1);
        assert!((sur.second_term_bound(0, &[3.0]) - (sur.c[0]).log2()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let sur = random_surrogate(&mut rng, 3);
            let q = [sur.anchor()[0] + 3.0, sur.anchor()[1] - 2.0];
            let g = sur.gradient(q);
            let h = 1e-3;
            for d in 0..2 {
                let mut a = q;
                let mut b = q;
                a[d] += h;
                b[d] -= h;
                let fd = (sur.value(a).unwrap() - sur.value(b).unwrap()) / (2.0 * h);
                assert!((fd - g[d]).abs() <= 1e-5 * g[d].abs().max(1e-6), "{fd} vs {}", g[d]);
            }
        }
    }

    #[test]
    fn zero_radius_keeps_anchor() {
        let s = desk_scenario();
        let (model, it) = setup(&s);
        let sur = build_surrogates(&it, &model, s.noise_power());
        let sol = solve_subproblem(&sur, &Kinematics::from_scenario(&s), 0.0).unwrap();
        assert_eq!(sol.trajectory, it.trajectory);
    }

    #[test]
    fn subproblem_improves_surrogate_and_stays_feasible() {
        let s = desk_scenario();
        let (model, it) = setup(&s);
        let kin = Kinematics::from_scenario(&s);
        let sur = build_surrogates(&it, &model, s.noise_power());
        let radius = s.max_step() / 2.0;
        let sol = solve_subproblem(&sur, &kin, radius).unwrap();
        assert!(sol.surrogate >= sol.surrogate_at_anchor - 1e-9);
        assert!(kin.violation(&sol.trajectory, 1e-9).is_none());
        for (a, b) in sol.trajectory.iter().zip(&it.trajectory) {
            assert!(norm(sub(*a, *b)) <= radius + 1e-9);
        }
    }

    #[test]
    fn sca_is_monotone_and_feasible() {
        let s = desk_scenario();
        let (model, it) = setup(&s);
        let kin = Kinematics::from_scenario(&s);
        let out = sca_solve(&it, &model, s.noise_power(), &kin, &s.sca).unwrap();
        let mut last = out.initial_sum_rate;
        for step in &out.trace {
            assert!(step.true_sum_rate >= last - 1e-9);
            last = step.true_sum_rate;
        }
        assert!(out.final_sum_rate >= out.initial_sum_rate);
        assert!(kin.violation(&out.trajectory, 1e-9).is_none());
    }

    fn hover_scenario(user: Point) -> Scenario {
        let mut s = desk_scenario();
        s.num_users = 1;
        s.user_positions = Some(vec![user]);
        s.num_antennas = 1;
        s
    }

    #[test]
    fn drifts_toward_lone_user() {
        let mut s = hover_scenario([400.0, 400.0]);
        s.start = [100.0, 100.0];
        s.end = [100.0, 100.0];
        s.v_max = 1000.0;
        s.a_max = 1000.0;
        let (model, it) = setup(&s);
        let kin = Kinematics::from_scenario(&s);
        let out = sca_solve(&it, &model, s.noise_power(), &kin, &s.sca).unwrap();
        let user = model.users()[0];
        for n in 0..s.num_slots {
            let before = norm(sub(it.trajectory[n], user));
            let after = norm(sub(out.trajectory[n], user));
            assert!(after <= before + 1e-9);
        }
        assert!(norm(sub(out.trajectory[s.num_slots / 2], user)) < 300.0);
    }

    #[test]
    fn hovering_over_user_terminates_quickly() {
        let mut s = hover_scenario([400.0, 400.0]);
        s.start = [400.0, 400.0];
        s.end = [400.0, 400.0];
        let (model, it) = setup(&s);
        let kin = Kinematics::from_scenario(&s);
        let out = sca_solve(&it, &model, s.noise_power(), &kin, &s.sca).unwrap();
        assert!(out.converged);
        assert!(out.trace.len() <= 2);
    }

    #[test]
    fn infeasible_anchor_is_rejected() {
        let s = desk_scenario();
        let (model, mut it) = setup(&s);
        it.trajectory[3][0] += 500.0;
        let kin = Kinematics::from_scenario(&s);
        assert!(matches!(
            sca_solve(&it, &model, s.noise_power(), &kin, &s.sca),
            Err(Error::NoFeasibleTrajectory(_))
        ));
    }
}
