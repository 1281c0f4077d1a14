//! Per-slot antenna placement by particle swarm optimization with a penalty
//! on antenna pairs closer than the minimum spacing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{CVec, ChannelModel, Link, MaLayout};
use crate::error::Result;
use crate::rate::{slot_sum_rate, Iterate};
use crate::scenario::{norm, sub, substream, Point, PsoParams, StreamPurpose};
use crate::wmmse::mmse_combiners;

/// Number of unordered antenna pairs closer than `d_min`.
pub fn violating_pairs(layout: &MaLayout, d_min: f64) -> usize {
    let p = &layout.positions;
    let mut count = 0;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            if norm(sub(p[i], p[j])) < d_min {
                count += 1;
            }
        }
    }
    count
}

/// Slot sum rate at `layout` with beamformers and powers fixed, minus
/// `penalty` per violating pair.
pub fn fitness(
    layout: &MaLayout,
    links: &[Link],
    beamformers: &[CVec],
    powers: &[f64],
    noise: f64,
    d_min: f64,
    penalty: f64,
) -> Result<f64> {
    let channels: Vec<CVec> = links.iter().map(|l| l.channel(layout)).collect();
    let rate = slot_sum_rate(beamformers, &channels, powers, noise)?;
    Ok(rate - penalty * violating_pairs(layout, d_min) as f64)
}

/// Like [`fitness`], but with the combiners re-optimized for `layout`.
pub fn refit_fitness(
    layout: &MaLayout,
    links: &[Link],
    powers: &[f64],
    noise: f64,
    d_min: f64,
    penalty: f64,
) -> Result<f64> {
    let channels: Vec<CVec> = links.iter().map(|l| l.channel(layout)).collect();
    let w = mmse_combiners(&channels, powers, noise);
    let rate = slot_sum_rate(&w, &channels, powers, noise)?;
    Ok(rate - penalty * violating_pairs(layout, d_min) as f64)
}

/// Linearly decreasing inertia weight.
pub fn inertia(t: usize, t_max: usize, chi_min: f64, chi_max: f64) -> f64 {
    if t_max == 0 {
        return chi_max;
    }
    chi_max - (chi_max - chi_min) * t as f64 / t_max as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub pos: Vec<Point>,
    pub vel: Vec<Point>,
    pub best_pos: Vec<Point>,
    pub best_fitness: f64,
}

/// Random factors of one velocity update, one pair per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
}

impl Draws {
    pub fn sample(rng: &mut ChaCha8Rng, coords: usize, per_coordinate: bool) -> Self {
        if per_coordinate {
            let r1 = (0..coords).map(|_| rng.random::<f64>()).collect();
            let r2 = (0..coords).map(|_| rng.random::<f64>()).collect();
            Self { r1, r2 }
        } else {
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            Self {
                r1: vec![a; coords],
                r2: vec![b; coords],
            }
        }
    }
}

/// `χ v + L1 R1 (local - pos) + L2 R2 (global - pos)`, each component
/// clamped to `±v_clamp`.
pub fn step_velocity(
    p: &Particle,
    global_best: &[Point],
    chi: f64,
    cognitive: f64,
    social: f64,
    draws: &Draws,
    v_clamp: f64,
) -> Vec<Point> {
    (0..p.pos.len())
        .map(|k| {
            let mut v = [0.0; 2];
            for d in 0..2 {
                let i = 2 * k + d;
                let raw = chi * p.vel[k][d]
                    + cognitive * draws.r1[i] * (p.best_pos[k][d] - p.pos[k][d])
                    + social * draws.r2[i] * (global_best[k][d] - p.pos[k][d]);
                v[d] = raw.clamp(-v_clamp, v_clamp);
            }
            v
        })
        .collect()
}

pub fn step_position(pos: &[Point], vel: &[Point], side: f64) -> Vec<Point> {
    pos.iter()
        .zip(vel)
        .map(|(p, v)| [(p[0] + v[0]).clamp(0.0, side), (p[1] + v[1]).clamp(0.0, side)])
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SwarmStep {
    pub t: usize,
    pub global_best_fitness: f64,
}

#[derive(Debug, Clone)]
pub struct PsoOutcome {
    pub layout: MaLayout,
    pub fitness: f64,
    pub incumbent_fitness: f64,
    /// The swarm's best still violated the spacing and the incumbent was kept.
    pub fell_back: bool,
    pub trace: Vec<SwarmStep>,
    /// MMSE combiners at `layout`, present when candidates were scored with
    /// refit combiners.
    pub beamformers: Option<Vec<CVec>>,
}

/// Inputs of one slot's placement subproblem.
pub struct SlotProblem<'a> {
    pub links: &'a [Link],
    pub beamformers: &'a [CVec],
    pub powers: &'a [f64],
    pub noise: f64,
    pub side: f64,
    pub d_min: f64,
    pub refit_combiners: bool,
}

impl SlotProblem<'_> {
    fn refit(&self, layout: &MaLayout) -> Option<Vec<CVec>> {
        self.refit_combiners.then(|| {
            let channels: Vec<CVec> = self.links.iter().map(|l| l.channel(layout)).collect();
            mmse_combiners(&channels, self.powers, self.noise)
        })
    }

    fn fitness(&self, positions: &[Point], penalty: f64) -> Result<f64> {
        if self.refit_combiners {
            return refit_fitness(
                &MaLayout::new(positions.to_vec()),
                self.links,
                self.powers,
                self.noise,
                self.d_min,
                penalty,
            );
        }
        fitness(
            &MaLayout::new(positions.to_vec()),
            self.links,
            self.beamformers,
            self.powers,
            self.noise,
            self.d_min,
            penalty,
        )
    }
}

/// Run the swarm for one slot. Particle 0 starts at the incumbent with zero
/// velocity, so the returned fitness never falls below the incumbent's.
pub fn pso_solve_slot(
    problem: &SlotProblem,
    incumbent: &MaLayout,
    params: &PsoParams,
    rng: &mut ChaCha8Rng,
) -> Result<PsoOutcome> {
    let k = incumbent.len();
    let side = problem.side;
    let incumbent_fitness = problem.fitness(&incumbent.positions, params.penalty)?;
    let mut swarm = Vec::with_capacity(params.particles);
    for s in 0..params.particles {
        let pos: Vec<Point> = if s == 0 {
            incumbent.positions.clone()
        } else {
            (0..k).map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side]).collect()
        };
        let f = if s == 0 { incumbent_fitness } else { problem.fitness(&pos, params.penalty)? };
        swarm.push(Particle {
            vel: vec![[0.0; 2]; k],
            best_pos: pos.clone(),
            pos,
            best_fitness: f,
        });
    }
    let (mut g_pos, mut g_fit) = best_of(&swarm);
    let mut trace = vec![SwarmStep {
        t: 0,
        global_best_fitness: g_fit,
    }];
    for t in 0..params.iterations {
        let chi = inertia(t, params.iterations, params.chi_min, params.chi_max);
        for p in swarm.iter_mut() {
            let draws = Draws::sample(rng, 2 * k, params.per_coordinate_draws);
            p.vel = step_velocity(p, &g_pos, chi, params.cognitive, params.social, &draws, side / 2.0);
            p.pos = step_position(&p.pos, &p.vel, side);
        }
        for p in swarm.iter_mut() {
            let f = problem.fitness(&p.pos, params.penalty)?;
            if f > p.best_fitness {
                p.best_fitness = f;
                p.best_pos = p.pos.clone();
            }
        }
        let (pos, fit) = best_of(&swarm);
        if fit > g_fit {
            g_pos = pos;
            g_fit = fit;
        }
        trace.push(SwarmStep {
            t: t + 1,
            global_best_fitness: g_fit,
        });
    }
    let best = MaLayout::new(g_pos);
    if violating_pairs(&best, problem.d_min) > 0 {
        return Ok(PsoOutcome {
            beamformers: problem.refit(incumbent),
            layout: incumbent.clone(),
            fitness: incumbent_fitness,
            incumbent_fitness,
            fell_back: true,
            trace,
        });
    }
    Ok(PsoOutcome {
        beamformers: problem.refit(&best),
        layout: best,
        fitness: g_fit,
        incumbent_fitness,
        fell_back: false,
        trace,
    })
}

fn best_of(swarm: &[Particle]) -> (Vec<Point>, f64) {
    let mut best = 0;
    for (i, p) in swarm.iter().enumerate() {
        if p.best_fitness > swarm[best].best_fitness {
            best = i;
        }
    }
    (swarm[best].best_pos.clone(), swarm[best].best_fitness)
}

/// Placement for every slot, in parallel, each slot with its own substream
/// keyed by `(seed, round, slot)`.
pub fn pso_solve(
    iterate: &Iterate,
    model: &ChannelModel,
    noise: f64,
    side: f64,
    d_min: f64,
    params: &PsoParams,
    seed: u64,
    round: u64,
) -> Result<Vec<PsoOutcome>> {
    (0..iterate.num_slots())
        .into_par_iter()
        .map(|n| {
            let links = model.slot_links(n, iterate.trajectory[n]);
            let problem = SlotProblem {
                links: &links,
                beamformers: &iterate.beamformers[n],
                powers: &iterate.powers[n],
                noise,
                side,
                d_min,
                refit_combiners: params.refit_combiners,
            };
            let mut rng = substream(seed, StreamPurpose::Swarm, round, n as u64);
            pso_solve_slot(&problem, &iterate.layouts[n], params, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{PathAngles, PathResponse, C64};
    use crate::wmmse::matched_filter;
    use rand::SeedableRng;

    fn scattered_link(rng: &mut ChaCha8Rng, paths: usize) -> Link {
        let angles = PathAngles {
            theta: (0..paths).map(|_| rng.random::<f64>() * 1.5).collect(),
            phi: (0..paths).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect(),
        };
        let g = (0..paths)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        Link::new(angles, PathResponse::new(1e-7, g), 100.0, 0.1)
    }

    #[test]
    fn penalty_counts_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let links = vec![scattered_link(&mut rng, 3)];
        let p = [1.0];
        let two = MaLayout::new(vec![[0.1, 0.1]; 2]);
        let w2 = vec![matched_filter(&links[0].channel(&two))];
        let raw = fitness(&two, &links, &w2, &p, 1e-14, 0.05, 0.0).unwrap();
        let pen = fitness(&two, &links, &w2, &p, 1e-14, 0.05, 20.0).unwrap();
        assert!((raw - pen - 20.0).abs() < 1e-9);

        let three = MaLayout::new(vec![[0.2, 0.2]; 3]);
        assert_eq!(violating_pairs(&three, 0.05), 3);
        let one = MaLayout::new(vec![[0.2, 0.2]]);
        assert_eq!(violating_pairs(&one, 0.05), 0);
        let w1 = vec![matched_filter(&links[0].channel(&one))];
        let f = fitness(&one, &links, &w1, &p, 1e-14, 0.05, 20.0).unwrap();
        let h = links[0].channel(&one);
        let expected = slot_sum_rate(&w1, &[h], &p, 1e-14).unwrap();
        assert_eq!(f, expected);
    }

    #[test]
    fn inertia_schedule() {
        assert_eq!(inertia(0, 100, 0.4, 0.9), 0.9);
        assert!((inertia(100, 100, 0.4, 0.9) - 0.4).abs() < 1e-15);
        assert!((inertia(50, 100, 0.4, 0.9) - 0.65).abs() < 1e-15);
    }

    fn particle(pos: Point, vel: Point, best: Point) -> Particle {
        Particle {
            pos: vec![pos],
            vel: vec![vel],
            best_pos: vec![best],
            best_fitness: 0.0,
        }
    }

    #[test]
    fn velocity_examples() {
        let ones = Draws {
            r1: vec![1.0; 2],
            r2: vec![1.0; 2],
        };
        let p = particle([0.1, 0.2], [0.0, 0.0], [0.1, 0.2]);
        assert_eq!(step_velocity(&p, &[[0.1, 0.2]], 0.7, 2.0, 2.0, &ones, 1.0), vec![[0.0, 0.0]]);
        let p = particle([0.1, 0.2], [0.3, 0.3], [0.15, 0.1]);
        let v = step_velocity(&p, &[[0.15, 0.1]], 0.0, 1.0, 1.0, &ones, 1.0);
        assert!((v[0][0] - 0.1).abs() < 1e-15 && (v[0][1] + 0.2).abs() < 1e-15);
        let v = step_velocity(&p, &[[5.0, 5.0]], 0.0, 1.0, 1.0, &ones, 0.2);
        assert_eq!(v[0][0], 0.2);
    }

    #[test]
    fn position_clamps() {
        assert_eq!(step_position(&[[0.1, 0.1]], &[[0.05, -0.05]], 0.4), vec![[0.15000000000000002, 0.05]]);
        assert_eq!(step_position(&[[0.0, 0.0]], &[[-1.0, -1.0]], 0.4), vec![[0.0, 0.0]]);
        assert_eq!(step_position(&[[0.4, 0.4]], &[[1.0, 0.0]], 0.4), vec![[0.4, 0.4]]);
    }

    fn problem_parts(seed: u64, users: usize, k: usize) -> (Vec<Link>, Vec<CVec>, MaLayout) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let links: Vec<Link> = (0..users).map(|_| scattered_link(&mut rng, 4)).collect();
        let layout = MaLayout::new((0..k).map(|i| [0.05 + 0.1 * i as f64, 0.05]).collect());
        let w = links.iter().map(|l| matched_filter(&l.channel(&layout))).collect();
        (links, w, layout)
    }

    #[test]
    fn incumbent_dominance_and_determinism() {
        let (links, w, layout) = problem_parts(3, 2, 3);
        let powers = [1.0, 0.5];
        let problem = SlotProblem {
            links: &links,
            beamformers: &w,
            powers: &powers,
            noise: 1e-14,
            side: 0.4,
            d_min: 0.05,
            refit_combiners: false,
        };
        let params = PsoParams {
            particles: 20,
            iterations: 30,
            ..PsoParams::default()
        };
        let a = pso_solve_slot(&problem, &layout, &params, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = pso_solve_slot(&problem, &layout, &params, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.layout, b.layout);
        assert_eq!(
            a.trace.iter().map(|s| s.global_best_fitness.to_bits()).collect::<Vec<_>>(),
            b.trace.iter().map(|s| s.global_best_fitness.to_bits()).collect::<Vec<_>>()
        );
        assert!(a.fitness >= a.incumbent_fitness);
        assert!(a.trace.windows(2).all(|w| w[1].global_best_fitness >= w[0].global_best_fitness));
        assert!(a.layout.within_region(0.4));
        assert_eq!(violating_pairs(&a.layout, 0.05), 0);
    }

    #[test]
    fn huge_penalty_forces_spacing() {
        let (links, w, _) = problem_parts(4, 1, 4);
        let crowded = MaLayout::new(vec![[0.2, 0.2]; 4]);
        let powers = [1.0];
        let problem = SlotProblem {
            links: &links,
            beamformers: &w,
            powers: &powers,
            noise: 1e-14,
            side: 0.4,
            d_min: 0.05,
            refit_combiners: false,
        };
        let params = PsoParams {
            particles: 30,
            iterations: 40,
            penalty: 1e9,
            ..PsoParams::default()
        };
        let out = pso_solve_slot(&problem, &crowded, &params, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(!out.fell_back);
        assert_eq!(violating_pairs(&out.layout, 0.05), 0);
    }

    #[test]
    fn refit_fitness_dominates_fixed_combiners() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (links, w, _) = problem_parts(5, 3, 3);
        let powers = [1.0, 0.7, 0.2];
        for _ in 0..50 {
            let layout = MaLayout::new((0..3).map(|_| [rng.random::<f64>() * 0.4, rng.random::<f64>() * 0.4]).collect());
            let fixed = fitness(&layout, &links, &w, &powers, 1e-14, 0.05, 20.0).unwrap();
            let refit = refit_fitness(&layout, &links, &powers, 1e-14, 0.05, 20.0).unwrap();
            assert!(refit >= fixed - 1e-9, "{refit} < {fixed}");
        }
    }

    #[test]
    fn refit_outcome_carries_matching_combiners() {
        let (links, w, layout) = problem_parts(6, 2, 2);
        let powers = [1.0, 1.0];
        let problem = SlotProblem {
            links: &links,
            beamformers: &w,
            powers: &powers,
            noise: 1e-14,
            side: 0.4,
            d_min: 0.05,
            refit_combiners: true,
        };
        let params = PsoParams {
            particles: 10,
            iterations: 10,
            ..PsoParams::default()
        };
        let out = pso_solve_slot(&problem, &layout, &params, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let combiners = out.beamformers.expect("refit was requested");
        let channels: Vec<CVec> = links.iter().map(|l| l.channel(&out.layout)).collect();
        let rate = slot_sum_rate(&combiners, &channels, &powers, 1e-14).unwrap();
        assert!((rate - out.fitness).abs() <= 1e-9 * rate.abs());
    }
}
