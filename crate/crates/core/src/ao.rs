//! Alternating optimization over trajectory, beamforming and power, and
//! antenna placement.

use serde::Serialize;

use crate::channel::MaLayout;
use crate::error::{Error, Result};
use crate::mm::mm_solve;
use crate::pso::pso_solve;
use crate::rate::{norm_sqr, Iterate};
use crate::scenario::BlockOrder;
use crate::trajectory::{sca_solve, straight_line, Kinematics};
use crate::wmmse::{bca_solve, matched_filter};
use crate::Instance;

/// Absolute slack of the outer monotonicity audit.
pub const MONOTONICITY_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementEngine {
    Pso,
    Mm,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryEngine {
    Sca,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Engines {
    pub trajectory: TrajectoryEngine,
    pub placement: PlacementEngine,
    /// Layout used in every slot at initialization; a centered grid if `None`.
    pub initial_layout: Option<MaLayout>,
}

/// `K` antennas on a centered square grid of pitch `max(d_min, side / ⌈√K⌉)`.
pub fn uniform_grid(k: usize, side: f64, d_min: f64) -> MaLayout {
    let per_axis = (k as f64).sqrt().ceil() as usize;
    let pitch = d_min.max(side / per_axis as f64);
    let offset = ((side - (per_axis as f64 - 1.0) * pitch) / 2.0).max(0.0);
    MaLayout::new(
        (0..k)
            .map(|i| {
                let (row, col) = (i / per_axis, i % per_axis);
                [
                    (offset + col as f64 * pitch).min(side),
                    (offset + row as f64 * pitch).min(side),
                ]
            })
            .collect(),
    )
}

/// Straight-line trajectory, matched filters, full power.
pub fn initial_iterate(instance: &Instance, layout: &MaLayout) -> Iterate {
    let s = &instance.scenario;
    let trajectory = straight_line(s.start, s.end, s.num_slots);
    let layouts = vec![layout.clone(); s.num_slots];
    let beamformers = (0..s.num_slots)
        .map(|n| {
            instance
                .model
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

/// True once the last two entries of `trace` differ by less than `eps`.
pub fn convergence_check(trace: &[f64], eps: f64) -> bool {
    match trace {
        [.., a, b] => (b - a).abs() < eps,
        _ => false,
    }
}

/// Error on the first decrease larger than `slack`.
pub fn monotonicity_audit(trace: &[f64], slack: f64) -> Result<()> {
    for (i, w) in trace.windows(2).enumerate() {
        if w[1] < w[0] - slack {
            return Err(Error::MonotonicityViolation {
                iteration: i + 1,
                previous: w[0],
                current: w[1],
            });
        }
    }
    Ok(())
}

/// Kinematics, combiner norm, power box, region and spacing.
pub fn feasibility_audit(iterate: &Iterate, instance: &Instance, iteration: usize) -> Result<()> {
    let s = &instance.scenario;
    let fail = |detail: String| Err(Error::InfeasibleIterate { iteration, detail });
    if let Some(v) = Kinematics::from_scenario(s).violation(&iterate.trajectory, 1e-9) {
        return fail(v);
    }
    for n in 0..iterate.num_slots() {
        for m in 0..s.num_users {
            let w = norm_sqr(&iterate.beamformers[n][m]).sqrt();
            if w > 1.0 + 1e-9 {
                return fail(format!("combiner of user {m} in slot {n} has norm {w}"));
            }
            let p = iterate.powers[n][m];
            if !(0.0..=s.p_max).contains(&p) {
                return fail(format!("power of user {m} in slot {n} is {p}"));
            }
        }
        let layout = &iterate.layouts[n];
        if !layout.within_region(s.region_side) {
            return fail(format!("layout of slot {n} leaves the region"));
        }
        let d = layout.min_pairwise_distance();
        if d < s.d_min * (1.0 - 1e-12) {
            return fail(format!("layout of slot {n} has spacing {d} < {}", s.d_min));
        }
    }
    Ok(())
}

/// Upper bound on the mission sum rate from full power, the shortest
/// possible distance and coherent combining over antennas and paths.
pub fn rate_ceiling(instance: &Instance) -> f64 {
    let s = &instance.scenario;
    let scale = s.p_max * s.num_antennas as f64 * s.h0() / (s.altitude * s.altitude * s.noise_power());
    let mut total = 0.0;
    for m in 0..s.num_users {
        for n in 0..s.num_slots {
            let g: f64 = instance.model.small_scale_coefficients(m, n).iter().map(|z| z.norm_sqr()).sum();
            total += (scale * g).ln_1p() / std::f64::consts::LN_2;
        }
    }
    total
}

#[derive(Debug, Clone, Serialize)]
pub struct BcaRow {
    pub outer_iter: usize,
    pub slot: usize,
    pub sweep: usize,
    pub surrogate: f64,
    pub true_sum_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlacementRow {
    pub outer_iter: usize,
    pub slot: usize,
    pub step: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct AoOutcome {
    pub iterate: Iterate,
    /// `[R_0, R_1, ...]`, starting at the initialization.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub ceiling: f64,
    pub bca_rows: Vec<BcaRow>,
    pub placement_rows: Vec<PlacementRow>,
    /// Iterate after every outer iteration, starting with the initialization.
    pub history: Vec<Iterate>,
}

impl AoOutcome {
    pub fn final_sum_rate(&self) -> f64 {
        *self.trace.last().expect("trace starts with the initial value")
    }

    pub fn iterations(&self) -> usize {
        self.trace.len() - 1
    }
}

/// Run the outer loop until the sum rate changes by less than `eps`.
pub fn ao_solve(instance: &Instance, engines: &Engines) -> Result<AoOutcome> {
    let s = &instance.scenario;
    let noise = instance.noise();
    let kin = Kinematics::from_scenario(s);
    let layout = engines
        .initial_layout
        .clone()
        .unwrap_or_else(|| uniform_grid(s.num_antennas, s.region_side, s.d_min));
    let mut iterate = initial_iterate(instance, &layout);
    feasibility_audit(&iterate, instance, 0)?;
    let ceiling = rate_ceiling(instance);
    let mut trace = vec![instance.sum_rate(&iterate)?];
    let mut history = vec![iterate.clone()];
    let mut bca_rows = Vec::new();
    let mut placement_rows = Vec::new();
    let mut converged = false;

    for i in 1..=s.ao.max_iters {
        let trajectory_step = |it: &mut Iterate| -> Result<()> {
            if engines.trajectory == TrajectoryEngine::Sca {
                let out = sca_solve(it, &instance.model, noise, &kin, &s.sca)?;
                it.trajectory = out.trajectory;
                if let Some(w) = out.beamformers {
                    it.beamformers = w;
                }
            }
            Ok(())
        };
        let mut bca_step = |it: &mut Iterate| -> Result<()> {
            let out = bca_solve(it, &instance.model, noise, s.p_max, &s.bca)?;
            for (n, slot) in out.slots.iter().enumerate() {
                bca_rows.extend(slot.trace.iter().map(|r| BcaRow {
                    outer_iter: i,
                    slot: n,
                    sweep: r.sweep,
                    surrogate: r.surrogate,
                    true_sum_rate: r.true_sum_rate,
                }));
            }
            it.beamformers = out.beamformers;
            it.powers = out.powers;
            Ok(())
        };
        match s.ao.order {
            BlockOrder::TrajectoryFirst => {
                trajectory_step(&mut iterate)?;
                bca_step(&mut iterate)?;
            }
            BlockOrder::BeamformingFirst => {
                bca_step(&mut iterate)?;
                trajectory_step(&mut iterate)?;
            }
        }
        match engines.placement {
            PlacementEngine::Pso => {
                let out = pso_solve(
                    &iterate,
                    &instance.model,
                    noise,
                    s.region_side,
                    s.d_min,
                    &s.pso,
                    s.rng_seed,
                    i as u64,
                )?;
                for (n, slot) in out.into_iter().enumerate() {
                    placement_rows.extend(slot.trace.iter().map(|t| PlacementRow {
                        outer_iter: i,
                        slot: n,
                        step: t.t,
                        value: t.global_best_fitness,
                    }));
                    iterate.layouts[n] = slot.layout;
                    if let Some(w) = slot.beamformers {
                        iterate.beamformers[n] = w;
                    }
                }
            }
            PlacementEngine::Mm => {
                let out = mm_solve(&iterate, &instance.model, noise, s.region_side, s.d_min, &s.mm)?;
                for (n, slot) in out.into_iter().enumerate() {
                    placement_rows.extend(slot.trace.iter().map(|t| PlacementRow {
                        outer_iter: i,
                        slot: n,
                        step: t.sweep,
                        value: t.true_sum_rate,
                    }));
                    iterate.layouts[n] = slot.layout;
                    if let Some(w) = slot.beamformers {
                        iterate.beamformers[n] = w;
                    }
                }
            }
            PlacementEngine::Fixed => {}
        }
        feasibility_audit(&iterate, instance, i)?;
        let rate = instance.sum_rate(&iterate)?;
        if rate > ceiling * (1.0 + 1e-9) {
            return Err(Error::InfeasibleIterate {
                iteration: i,
                detail: format!("sum rate {rate} exceeds the ceiling {ceiling}"),
            });
        }
        trace.push(rate);
        history.push(iterate.clone());
        monotonicity_audit(&trace, MONOTONICITY_SLACK)?;
        if convergence_check(&trace, s.ao.eps) {
            converged = true;
            break;
        }
    }
    Ok(AoOutcome {
        iterate,
        trace,
        history,
        converged,
        ceiling,
        bca_rows,
        placement_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::desk_scenario;

    #[test]
    fn convergence_examples() {
        let eps = 1e-3;
        assert!(convergence_check(&[1.0, 1.0 + eps / 2.0], eps));
        assert!(!convergence_check(&[1.0, 3.0], 1.0));
        assert!(!convergence_check(&[1.0], 1.0));
    }

    #[test]
    fn audit_flags_decrease() {
        assert!(monotonicity_audit(&[1.0, 2.0, 2.0 - 1e-7], 1e-6).is_ok());
        assert!(matches!(
            monotonicity_audit(&[1.0, 2.0, 1.9], 1e-6),
            Err(Error::MonotonicityViolation { iteration: 2, .. })
        ));
    }

    #[test]
    fn grid_is_feasible() {
        for k in 1..=9 {
            let g = uniform_grid(k, 0.4, 0.05);
            assert_eq!(g.len(), k);
            assert!(g.within_region(0.4));
            assert!(g.min_pairwise_distance() >= 0.05);
        }
        let tight = uniform_grid(9, 0.1, 0.05);
        assert!(tight.within_region(0.1) && tight.min_pairwise_distance() >= 0.05 - 1e-15);
    }

    fn small() -> Instance {
        let mut s = desk_scenario();
        s.num_slots = 6;
        s.pso.particles = 10;
        s.pso.iterations = 10;
        Instance::new(s).unwrap()
    }

    #[test]
    fn infinite_eps_runs_once() {
        let mut inst = small();
        inst.scenario.ao.eps = f64::INFINITY;
        let engines = Engines {
            trajectory: TrajectoryEngine::Sca,
            placement: PlacementEngine::Pso,
            initial_layout: None,
        };
        let out = ao_solve(&inst, &engines).unwrap();
        assert_eq!(out.iterations(), 1);
    }

    #[test]
    fn fixed_engines_single_antenna_is_monotone() {
        let mut s = small().scenario;
        s.num_antennas = 1;
        let inst = Instance::new(s).unwrap();
        let engines = Engines {
            trajectory: TrajectoryEngine::Fixed,
            placement: PlacementEngine::Fixed,
            initial_layout: None,
        };
        let out = ao_solve(&inst, &engines).unwrap();
        assert!(out.trace.windows(2).all(|w| w[1] >= w[0] - MONOTONICITY_SLACK));
        assert!(out.final_sum_rate() <= out.ceiling);
        assert!(out.converged);
    }

    #[test]
    fn every_engine_pair_is_monotone_and_feasible() {
        let inst = small();
        for trajectory in [TrajectoryEngine::Sca, TrajectoryEngine::Fixed] {
            for placement in [PlacementEngine::Pso, PlacementEngine::Mm] {
                let out = ao_solve(
                    &inst,
                    &Engines {
                        trajectory,
                        placement,
                        initial_layout: None,
                    },
                )
                .unwrap();
                monotonicity_audit(&out.trace, MONOTONICITY_SLACK).unwrap();
                feasibility_audit(&out.iterate, &inst, out.iterations()).unwrap();
                assert!(out.final_sum_rate() > out.trace[0]);
            }
        }
    }

    #[test]
    fn beamforming_first_order_is_also_monotone() {
        let mut inst = small();
        inst.scenario.ao.order = BlockOrder::BeamformingFirst;
        let out = ao_solve(
            &inst,
            &Engines {
                trajectory: TrajectoryEngine::Sca,
                placement: PlacementEngine::Pso,
                initial_layout: None,
            },
        )
        .unwrap();
        monotonicity_audit(&out.trace, MONOTONICITY_SLACK).unwrap();
    }
}
