//! Antenna placement by minorization-maximization, one antenna at a time.
//!
//! With `β, ω, W, P` and the other antennas fixed, the slot's weighted-MSE
//! surrogate is a quadratic in the receive field responses `g_r(u)` of the
//! moving antenna, one per user `r` (each user has its own path angles):
//! `Σ_r [g_r^H E_r g_r + Re{F_r^H g_r}] + Υ`. `E_r` is rank one and
//! negative semidefinite. Replacing `E_r` by its smallest eigenvalue gives
//! a minorizer that is affine in `g_r`, and the phases of `Re{J_r^H g_r(u)}`
//! are then bounded below by a concave quadratic in `u`. The resulting
//! 2-D concave QP with box and linearized spacing constraints is solved
//! exactly.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{CVec, ChannelModel, Link, MaLayout, C64};
use crate::error::Result;
use crate::rate::{inner, norm_sqr, slot_sum_rate, Iterate};
use crate::scenario::{norm, sub, MmParams, Point};
use crate::wmmse::{mmse_combiners, refresh_aux, slot_surrogate, SlotAux};

/// Quadratic-in-FRV representation of the slot surrogate for antenna `k`.
#[derive(Debug, Clone)]
pub struct MmTerms {
    /// Path coefficients `σ_r` of each user.
    pub sigma: Vec<CVec>,
    /// `E_r = e_r σ_r σ_r^H` with `e_r ≤ 0`.
    pub e_scale: Vec<f64>,
    pub f: Vec<CVec>,
    /// `Σ_m Υ_m`: everything not depending on antenna `k`.
    pub constant: f64,
}

impl MmTerms {
    pub fn e_matrix(&self, r: usize) -> DMatrix<C64> {
        let s = DVector::from_column_slice(&self.sigma[r]);
        s.clone() * s.adjoint() * C64::new(self.e_scale[r], 0.0)
    }

    /// Value at the field responses `g[r]`.
    pub fn evaluate(&self, g: &[CVec]) -> f64 {
        let mut total = self.constant;
        for r in 0..self.sigma.len() {
            total += self.e_scale[r] * inner(&self.sigma[r], &g[r]).norm_sqr();
            total += inner(&self.f[r], &g[r]).re;
        }
        total
    }

    /// Curvature bound `ζ_r ≤ λ_min(E_r)`, confirmed by an eigen-check.
    pub fn zeta(&self, r: usize) -> f64 {
        let zeta = self.e_scale[r] * norm_sqr(&self.sigma[r]);
        let lmin = SymmetricEigen::new(self.e_matrix(r))
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        let tol = 1e-9 * zeta.abs().max(f64::MIN_POSITIVE);
        if zeta <= lmin + tol {
            zeta
        } else {
            lmin
        }
    }
}

/// Build the terms for antenna `k` of one slot.
pub fn build_terms(
    k: usize,
    links: &[Link],
    layout: &MaLayout,
    beamformers: &[CVec],
    powers: &[f64],
    aux: &SlotAux,
    noise: f64,
) -> MmTerms {
    let users = links.len();
    let channels: Vec<CVec> = links.iter().map(|l| l.channel(layout)).collect();
    let sigma: Vec<CVec> = links.iter().map(|l| l.response.sigma.clone()).collect();
    let paths: Vec<usize> = sigma.iter().map(|s| s.len()).collect();
    let mut e_scale = vec![0.0; users];
    let mut f: Vec<CVec> = paths.iter().map(|&l| vec![C64::new(0.0, 0.0); l]).collect();
    let mut constant = 0.0;
    for m in 0..users {
        let w = &beamformers[m];
        let beta = aux.beta[m];
        let omega = aux.omega[m];
        let c = omega / LN_2;
        let b2 = beta.norm_sqr();
        let wk = w[k];
        let others: Vec<C64> = (0..users)
            .map(|r| inner(w, &channels[r]) - wk.conj() * channels[r][k])
            .collect();
        let sp = powers[m].sqrt();
        for r in 0..users {
            e_scale[r] -= c * b2 * powers[r] * wk.norm_sqr();
            let coef = -c * b2 * powers[r] * 2.0 * wk.conj() * others[r].conj();
            for (fi, si) in f[r].iter_mut().zip(&sigma[r]) {
                *fi += coef * si;
            }
        }
        let coef = 2.0 * c * beta.conj() * sp * wk.conj();
        for (fi, si) in f[m].iter_mut().zip(&sigma[m]) {
            *fi += coef * si;
        }
        constant += omega.log2() + 1.0 / LN_2 - c * (1.0 + b2 * norm_sqr(w) * noise)
            + 2.0 * c * (beta.conj() * sp * others[m]).re
            - c * b2 * (0..users).map(|r| powers[r] * others[r].norm_sqr()).sum::<f64>();
    }
    MmTerms {
        sigma,
        e_scale,
        f,
        constant,
    }
}

/// Affine minorizer `Re{J^H g} + const` of one user block at `g_l`.
#[derive(Debug, Clone)]
pub struct Linearized {
    pub j: CVec,
    pub constant: f64,
}

/// `J = 2 (E - ζ I) g_l + F`, `const = ζ L - g_l^H (E - ζ I) g_l`.
pub fn lemma1_linearize(terms: &MmTerms, r: usize, g_l: &[C64]) -> Linearized {
    let zeta = terms.zeta(r);
    let proj = inner(&terms.sigma[r], g_l);
    let eg: CVec = terms.sigma[r]
        .iter()
        .zip(g_l)
        .map(|(s, g)| s * proj * terms.e_scale[r] - g * zeta)
        .collect();
    let j = eg.iter().zip(&terms.f[r]).map(|(a, b)| a * 2.0 + b).collect();
    let quad = inner(g_l, &eg).re;
    Linearized {
        j,
        constant: zeta * g_l.len() as f64 - quad,
    }
}

/// `Ψ(u) = Re{J^H g(u)}` for a link's path directions.
pub fn psi(j: &[C64], link: &Link, u: Point) -> f64 {
    inner(j, &link.frv(u)).re
}

pub fn psi_gradient(j: &[C64], link: &Link, u: Point) -> Point {
    let kappa = link.wavenumber();
    let g = link.frv(u);
    let mut grad = [0.0; 2];
    for (i, d) in link.directions.iter().enumerate() {
        let z = (C64::new(0.0, kappa) * j[i].conj() * g[i]).re;
        grad[0] += d[0] * z;
        grad[1] += d[1] * z;
    }
    grad
}

/// Concave quadratic lower bound `Ψ(u_l) + ∇ᵀΔ - curvature ‖Δ‖²`.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticModel {
    pub anchor: Point,
    pub value: f64,
    pub gradient: Point,
    pub curvature: f64,
}

impl QuadraticModel {
    pub fn evaluate(&self, u: Point) -> f64 {
        let d = sub(u, self.anchor);
        self.value + self.gradient[0] * d[0] + self.gradient[1] * d[1] - self.curvature * (d[0] * d[0] + d[1] * d[1])
    }

    pub fn maximizer(&self) -> Option<Point> {
        (self.curvature > 0.0).then(|| {
            [
                self.anchor[0] + self.gradient[0] / (2.0 * self.curvature),
                self.anchor[1] + self.gradient[1] / (2.0 * self.curvature),
            ]
        })
    }
}

pub fn lemma2_minorize(j: &[C64], link: &Link, u_l: Point, wavelength: f64) -> QuadraticModel {
    let l1: f64 = j.iter().map(|z| z.norm()).sum();
    QuadraticModel {
        anchor: u_l,
        value: psi(j, link, u_l),
        gradient: psi_gradient(j, link, u_l),
        curvature: 4.0 * PI * PI / (wavelength * wavelength) * l1,
    }
}

/// Half-plane `normal · u ≥ offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub normal: Point,
    pub offset: f64,
}

impl HalfPlane {
    pub fn slack(&self, u: Point) -> f64 {
        self.normal[0] * u[0] + self.normal[1] * u[1] - self.offset
    }
}

/// Linearized spacing constraints of a moving antenna at `u_l` against the
/// fixed antennas: `n_k'ᵀ (u - u_k') ≥ d_min`, `n_k' = (u_l - u_k') / ‖u_l - u_k'‖`.
/// Any `u` satisfying them is at least `d_min` from every fixed antenna.
pub fn distance_minorize(u_l: Point, others: &[Point], d_min: f64) -> Vec<HalfPlane> {
    let target = d_min * (1.0 + 1e-9);
    others
        .iter()
        .map(|&o| {
            let mut diff = sub(u_l, o);
            let mut len = norm(diff);
            if len < 1e-6 * d_min * 1e-3 {
                diff = [diff[0] + 1e-6 * d_min, diff[1]];
                len = norm(diff);
            }
            let n = [diff[0] / len, diff[1] / len];
            let current = n[0] * (u_l[0] - o[0]) + n[1] * (u_l[1] - o[1]);
            let rhs = if current >= d_min { target.min(current) } else { target };
            HalfPlane {
                normal: n,
                offset: rhs + n[0] * o[0] + n[1] * o[1],
            }
        })
        .collect()
}

fn box_planes(side: f64) -> [HalfPlane; 4] {
    [
        HalfPlane { normal: [1.0, 0.0], offset: 0.0 },
        HalfPlane { normal: [0.0, 1.0], offset: 0.0 },
        HalfPlane { normal: [-1.0, 0.0], offset: -side },
        HalfPlane { normal: [0.0, -1.0], offset: -side },
    ]
}

/// Euclidean projection of `target` onto the intersection of half-planes,
/// by enumerating active sets of size at most two.
pub fn project_polygon(target: Point, planes: &[HalfPlane]) -> Option<Point> {
    let tol = 1e-12;
    let feasible = |u: Point| planes.iter().all(|p| p.slack(u) >= -tol);
    let mut candidates = vec![target];
    for p in planes {
        let s = p.slack(target);
        let nn = p.normal[0] * p.normal[0] + p.normal[1] * p.normal[1];
        candidates.push([target[0] - s * p.normal[0] / nn, target[1] - s * p.normal[1] / nn]);
    }
    for i in 0..planes.len() {
        for j in i + 1..planes.len() {
            let (a, b) = (planes[i], planes[j]);
            let det = a.normal[0] * b.normal[1] - a.normal[1] * b.normal[0];
            if det.abs() < 1e-14 {
                continue;
            }
            let x = (a.offset * b.normal[1] - a.normal[1] * b.offset) / det;
            let y = (a.normal[0] * b.offset - a.offset * b.normal[0]) / det;
            candidates.push([x, y]);
        }
    }
    candidates
        .into_iter()
        .filter(|&u| feasible(u))
        .min_by(|a, b| {
            norm(sub(*a, target))
                .partial_cmp(&norm(sub(*b, target)))
                .expect("finite candidates")
        })
}

#[derive(Debug, Clone, Serialize)]
pub struct MmSweep {
    pub sweep: usize,
    pub surrogate: f64,
    pub true_sum_rate: f64,
    pub accepted_moves: usize,
}

#[derive(Debug, Clone)]
pub struct MmOutcome {
    pub layout: MaLayout,
    pub initial_sum_rate: f64,
    pub trace: Vec<MmSweep>,
    /// Combiners refit along the way, if enabled.
    pub beamformers: Option<Vec<CVec>>,
}

/// Fixed data of one slot's MM placement.
pub struct MmProblem<'a> {
    pub links: &'a [Link],
    pub beamformers: &'a [CVec],
    pub powers: &'a [f64],
    pub noise: f64,
    pub side: f64,
    pub d_min: f64,
    pub wavelength: f64,
}

impl MmProblem<'_> {
    fn channels(&self, layout: &MaLayout) -> Vec<CVec> {
        self.links.iter().map(|l| l.channel(layout)).collect()
    }

    fn surrogate(&self, layout: &MaLayout, aux: &SlotAux) -> Result<f64> {
        slot_surrogate(self.beamformers, &self.channels(layout), self.powers, aux, self.noise)
    }

    fn aux(&self, layout: &MaLayout) -> Result<SlotAux> {
        refresh_aux(self.beamformers, &self.channels(layout), self.powers, self.noise)
    }

    /// One MM step for antenna `k`; returns whether the antenna moved.
    fn step_antenna(&self, k: usize, layout: &mut MaLayout, aux: &SlotAux, max_doublings: usize) -> Result<bool> {
        let terms = build_terms(k, self.links, layout, self.beamformers, self.powers, aux, self.noise);
        let u_l = layout.positions[k];
        let mut total = QuadraticModel {
            anchor: u_l,
            value: 0.0,
            gradient: [0.0; 2],
            curvature: 0.0,
        };
        for (r, link) in self.links.iter().enumerate() {
            let lin = lemma1_linearize(&terms, r, &link.frv(u_l));
            let q = lemma2_minorize(&lin.j, link, u_l, self.wavelength);
            total.value += q.value + lin.constant;
            total.gradient[0] += q.gradient[0];
            total.gradient[1] += q.gradient[1];
            total.curvature += q.curvature;
        }
        let Some(target) = total.maximizer() else {
            return Ok(false);
        };
        let others: Vec<Point> = (0..layout.len()).filter(|&i| i != k).map(|i| layout.positions[i]).collect();
        let mut planes = box_planes(self.side).to_vec();
        planes.extend(distance_minorize(u_l, &others, self.d_min));
        let Some(mut u) = project_polygon(target, &planes) else {
            return Ok(false);
        };
        u = [u[0].clamp(0.0, self.side), u[1].clamp(0.0, self.side)];
        let before = self.surrogate(layout, aux)?;
        let mut moved = layout.clone();
        moved.positions[k] = u;
        let spaced = |u: Point| others.iter().all(|&o| norm(sub(u, o)) >= self.d_min);
        let mut best = self.surrogate(&moved, aux)?;
        if !spaced(u) || best < before {
            return Ok(false);
        }
        let step = sub(u, u_l);
        let mut scale = 1.0;
        for _ in 0..max_doublings {
            scale *= 2.0;
            let v = [
                (u_l[0] + scale * step[0]).clamp(0.0, self.side),
                (u_l[1] + scale * step[1]).clamp(0.0, self.side),
            ];
            if !spaced(v) {
                break;
            }
            let mut trial = moved.clone();
            trial.positions[k] = v;
            let value = self.surrogate(&trial, aux)?;
            if value <= best {
                break;
            }
            best = value;
            moved = trial;
        }
        *layout = moved;
        Ok(true)
    }
}

/// Round-robin MM over the antennas of one slot until the true slot sum
/// rate changes by less than `params.eps`.
pub fn mm_solve_slot(problem: &MmProblem, incumbent: &MaLayout, params: &MmParams) -> Result<MmOutcome> {
    let mut layout = incumbent.clone();
    let mut w = problem.beamformers.to_vec();
    let initial = slot_sum_rate(&w, &problem.channels(&layout), problem.powers, problem.noise)?;
    let mut previous = initial;
    let mut trace = Vec::new();
    for sweep in 1..=params.max_sweeps {
        let current = MmProblem { beamformers: &w, ..*problem };
        let mut aux = current.aux(&layout)?;
        let mut accepted_moves = 0;
        for k in 0..layout.len() {
            if params.per_antenna_refresh && k > 0 {
                aux = current.aux(&layout)?;
            }
            if current.step_antenna(k, &mut layout, &aux, params.max_doublings)? {
                accepted_moves += 1;
            }
        }
        let surrogate = current.surrogate(&layout, &aux)?;
        let channels = problem.channels(&layout);
        if params.refit_combiners {
            w = mmse_combiners(&channels, problem.powers, problem.noise);
        }
        let rate = slot_sum_rate(&w, &channels, problem.powers, problem.noise)?;
        trace.push(MmSweep {
            sweep,
            surrogate,
            true_sum_rate: rate,
            accepted_moves,
        });
        if (rate - previous).abs() < params.eps || accepted_moves == 0 {
            break;
        }
        previous = rate;
    }
    Ok(MmOutcome {
        layout,
        initial_sum_rate: initial,
        trace,
        beamformers: params.refit_combiners.then_some(w),
    })
}

/// MM placement for every slot in parallel.
pub fn mm_solve(
    iterate: &Iterate,
    model: &ChannelModel,
    noise: f64,
    side: f64,
    d_min: f64,
    params: &MmParams,
) -> Result<Vec<MmOutcome>> {
    (0..iterate.num_slots())
        .into_par_iter()
        .map(|n| {
            let links = model.slot_links(n, iterate.trajectory[n]);
            let problem = MmProblem {
                links: &links,
                beamformers: &iterate.beamformers[n],
                powers: &iterate.powers[n],
                noise,
                side,
                d_min,
                wavelength: model.wavelength(),
            };
            mm_solve_slot(&problem, &iterate.layouts[n], params)
        })
        .collect()
}
