//! Batch experiments: single runs of every scheme, parameter sweeps over
//! seeds, and pooled rate CDFs, with their CSV and JSON writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::ao::AoOutcome;
use crate::baselines::{run_scheme, Scheme};
use crate::error::{Error, Result};
use crate::rate::{all_rates, Iterate};
use crate::scenario::{Point, Scenario};
use crate::trajectory::speeds_and_accels;
use crate::Instance;

/// Outcome of one scheme on one instance.
#[derive(Debug, Clone)]
pub struct SchemeRun {
    pub scheme: Scheme,
    pub outcome: AoOutcome,
}

/// Run `schemes` on the same channel realization, in parallel, returning
/// results in the order given.
pub fn run_schemes(instance: &Instance, schemes: &[Scheme]) -> Result<Vec<SchemeRun>> {
    schemes
        .par_iter()
        .map(|&scheme| {
            Ok(SchemeRun {
                scheme,
                outcome: run_scheme(instance, scheme)?,
            })
        })
        .collect()
}

pub fn convergence_csv(runs: &[SchemeRun]) -> String {
    let mut out = String::from("outer_iter,scheme,sum_rate_bpshz\n");
    for run in runs {
        for (i, r) in run.outcome.trace.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{r}", run.scheme);
        }
    }
    out
}

pub fn trajectory_csv(runs: &[SchemeRun], tau: f64) -> String {
    let mut out = String::from("scheme,slot,x,y,speed,accel\n");
    for run in runs {
        let q = &run.outcome.iterate.trajectory;
        for (n, (p, (v, a))) in q.iter().zip(speeds_and_accels(q, tau)).enumerate() {
            let _ = writeln!(out, "{},{n},{},{},{v},{a}", run.scheme, p[0], p[1]);
        }
    }
    out
}

pub fn rates_csv(runs: &[SchemeRun], instance: &Instance) -> Result<String> {
    let mut out = String::from("scheme,slot,user,rate\n");
    for run in runs {
        let rates = all_rates(&run.outcome.iterate, &instance.model, instance.noise())?;
        for (n, slot) in rates.iter().enumerate() {
            for (m, r) in slot.iter().enumerate() {
                let _ = writeln!(out, "{},{n},{m},{r}", run.scheme);
            }
        }
    }
    Ok(out)
}

pub fn bca_trace_csv(runs: &[SchemeRun]) -> String {
    let mut out = String::from("scheme,outer_iter,slot,sweep,surrogate,true_sum_rate\n");
    for run in runs {
        for r in &run.outcome.bca_rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                run.scheme, r.outer_iter, r.slot, r.sweep, r.surrogate, r.true_sum_rate
            );
        }
    }
    out
}

pub fn placement_trace_csv(runs: &[SchemeRun]) -> String {
    let mut out = String::from("scheme,outer_iter,slot,step,value\n");
    for run in runs {
        for r in &run.outcome.placement_rows {
            let _ = writeln!(out, "{},{},{},{},{}", run.scheme, r.outer_iter, r.slot, r.step, r.value);
        }
    }
    out
}

#[derive(Serialize)]
struct SchemeState<'a> {
    scheme: Scheme,
    sum_rate: f64,
    iterations: usize,
    converged: bool,
    trajectory: &'a [Point],
    layouts: Vec<&'a [Point]>,
    /// `[slot][user][antenna] = [re, im]`.
    beamformers: Vec<Vec<Vec<[f64; 2]>>>,
    powers: &'a [Vec<f64>],
}

#[derive(Serialize)]
struct FinalState<'a> {
    scenario: &'a Scenario,
    users: &'a [Point],
    schemes: Vec<SchemeState<'a>>,
}

fn scheme_state(run: &SchemeRun) -> SchemeState<'_> {
    let it: &Iterate = &run.outcome.iterate;
    SchemeState {
        scheme: run.scheme,
        sum_rate: run.outcome.final_sum_rate(),
        iterations: run.outcome.iterations(),
        converged: run.outcome.converged,
        trajectory: &it.trajectory,
        layouts: it.layouts.iter().map(|l| l.positions.as_slice()).collect(),
        beamformers: it
            .beamformers
            .iter()
            .map(|slot| slot.iter().map(|w| w.iter().map(|z| [z.re, z.im]).collect()).collect())
            .collect(),
        powers: &it.powers,
    }
}

pub fn final_state_json(runs: &[SchemeRun], instance: &Instance) -> String {
    let state = FinalState {
        scenario: &instance.scenario,
        users: &instance.users,
        schemes: runs.iter().map(scheme_state).collect(),
    };
    serde_json::to_string_pretty(&state).expect("state serializes") + "\n"
}

/// Files of a `run`, rendered in memory so nothing is written on failure.
pub fn render_run(instance: &Instance, runs: &[SchemeRun], dump_channels: bool) -> Result<Vec<(String, String)>> {
    let mut files = vec![
        ("convergence.csv".to_string(), convergence_csv(runs)),
        ("trajectory.csv".to_string(), trajectory_csv(runs, instance.scenario.tau())),
        ("rates.csv".to_string(), rates_csv(runs, instance)?),
        ("final_state.json".to_string(), final_state_json(runs, instance)),
        ("bca_trace.csv".to_string(), bca_trace_csv(runs)),
        ("placement_trace.csv".to_string(), placement_trace_csv(runs)),
    ];
    if dump_channels {
        for run in runs {
            files.push((
                format!("channels_{}.csv", run.scheme),
                instance.model.dump_csv(&run.outcome.iterate.trajectory),
            ));
        }
    }
    Ok(files)
}

pub fn write_files(dir: &Path, files: &[(String, String)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, body) in files {
        fs::write(dir.join(name), body)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepParam {
    PMax,
    Antennas,
    Paths,
    /// Side of the antenna region in wavelengths.
    RegionSize,
    VMax,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::PMax => "p_max",
            SweepParam::Antennas => "K",
            SweepParam::Paths => "L_paths",
            SweepParam::RegionSize => "region_size",
            SweepParam::VMax => "v_max",
        }
    }

    /// Copy of `base` with the parameter set to `value`.
    pub fn apply(self, base: &Scenario, value: f64) -> Result<Scenario> {
        let mut s = base.clone();
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!("{} must be a positive integer, got {value}", self.name())))
            }
        };
        match self {
            SweepParam::PMax => s.p_max = value,
            SweepParam::Antennas => s.num_antennas = count()?,
            SweepParam::Paths => s.num_paths = count()?,
            SweepParam::RegionSize => s.region_side = value * s.wavelength,
            SweepParam::VMax => s.v_max = value,
        }
        Ok(s)
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepParam::PMax,
            SweepParam::Antennas,
            SweepParam::Paths,
            SweepParam::RegionSize,
            SweepParam::VMax,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown sweep parameter '{s}' (expected p_max, K, L_paths, region_size or v_max)")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub value: f64,
    pub seed: u64,
    pub sum_rate: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Seeds `base, base + 1, ...`.
pub fn seed_list(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Final sum rate of every scheme at every `(value, seed)` point. Seeds do
/// not depend on the value, so every curve sees the same user drops and
/// channel draws.
pub fn sweep(base: &Scenario, param: SweepParam, values: &[f64], seeds: &[u64], schemes: &[Scheme]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let instances: Vec<(f64, u64, Scenario)> = values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&seed| (v, seed)))
        .map(|(v, seed)| {
            let mut s = param.apply(base, v)?;
            s.rng_seed = seed;
            Ok((v, seed, s.validated()?))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<SweepRow>> = instances
        .into_par_iter()
        .map(|(value, seed, s)| {
            let instance = Instance::new(s)?;
            Ok(run_schemes(&instance, schemes)?
                .into_iter()
                .map(|r| SweepRow {
                    scheme: r.scheme,
                    value,
                    seed,
                    sum_rate: r.outcome.final_sum_rate(),
                    iterations: r.outcome.iterations(),
                    converged: r.outcome.converged,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = format!("scheme,{},seed,sum_rate_bpshz,outer_iters,converged\n", param.name());
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.scheme, r.value, r.seed, r.sum_rate, r.iterations, r.converged
        );
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub value: f64,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

/// Seed mean and sample standard deviation per `(scheme, value)`, in
/// scheme order then value order.
pub fn summarize(rows: &[SweepRow], schemes: &[Scheme], values: &[f64]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &scheme in schemes {
        for &value in values {
            let xs: Vec<f64> = rows
                .iter()
                .filter(|r| r.scheme == scheme && r.value == value)
                .map(|r| r.sum_rate)
                .collect();
            if xs.is_empty() {
                continue;
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let std = if xs.len() > 1 {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            out.push(SummaryRow {
                scheme,
                value,
                mean,
                std,
                seeds: xs.len(),
            });
        }
    }
    out
}

pub fn summary_csv(param: SweepParam, rows: &[SummaryRow]) -> String {
    let mut out = format!("scheme,{},mean_sum_rate_bpshz,std_sum_rate_bpshz,seeds\n", param.name());
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.scheme, r.value, r.mean, r.std, r.seeds);
    }
    out
}

pub const PLOT_STUB: &str = r#"# Plot a sweep summary: python3 plot.py sweep_summary.csv
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "sweep_summary.csv"
with open(path) as f:
    reader = csv.reader(f)
    header = next(reader)
    curves = defaultdict(list)
    for row in reader:
        curves[row[0]].append((float(row[1]), float(row[2])))
for scheme, pts in curves.items():
    pts.sort()
    plt.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=scheme)
plt.xlabel(header[1])
plt.ylabel("sum rate (bps/Hz)")
plt.legend()
plt.grid(True)
plt.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150)
"#;

/// Number of thresholds in a CDF.
pub const CDF_POINTS: usize = 200;

#[derive(Debug, Clone, Serialize)]
pub struct CdfRow {
    pub scheme: Scheme,
    pub threshold: f64,
    pub fraction: f64,
}

/// Per-(user, slot) rates of every scheme pooled over seeds.
pub fn pooled_rates(base: &Scenario, seeds: &[u64], schemes: &[Scheme]) -> Result<Vec<(Scheme, Vec<f64>)>> {
    if seeds.is_empty() {
        return Err(Error::Config("cdf needs at least one seed".into()));
    }
    let per_seed: Vec<Vec<Vec<f64>>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut s = base.clone();
            s.rng_seed = seed;
            let instance = Instance::new(s)?;
            run_schemes(&instance, schemes)?
                .iter()
                .map(|r| {
                    Ok(all_rates(&r.outcome.iterate, &instance.model, instance.noise())?
                        .into_iter()
                        .flatten()
                        .collect())
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(schemes
        .iter()
        .enumerate()
        .map(|(i, &scheme)| (scheme, per_seed.iter().flat_map(|s| s[i].iter().copied()).collect()))
        .collect())
}

/// Empirical CDF `P(rate ≤ t)` on `CDF_POINTS` thresholds evenly spaced
/// from 0 to the largest pooled rate.
pub fn empirical_cdf(pooled: &[(Scheme, Vec<f64>)]) -> Vec<CdfRow> {
    let top = pooled
        .iter()
        .flat_map(|(_, r)| r.iter().copied())
        .fold(0.0, f64::max);
    let mut out = Vec::new();
    for (scheme, rates) in pooled {
        let mut sorted = rates.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite rates"));
        for i in 0..CDF_POINTS {
            let t = top * i as f64 / (CDF_POINTS - 1) as f64;
            let below = sorted.partition_point(|&x| x <= t);
            out.push(CdfRow {
                scheme: *scheme,
                threshold: t,
                fraction: if sorted.is_empty() { 0.0 } else { below as f64 / sorted.len() as f64 },
            });
        }
    }
    out
}

pub fn cdf_csv(rows: &[CdfRow]) -> String {
    let mut out = String::from("scheme,threshold,fraction_below\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.scheme, r.threshold, r.fraction);
    }
    out
}
