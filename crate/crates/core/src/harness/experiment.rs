use serde::Serialize;

use crate::error::Result;

use super::cell::{RunOutput, SystemSim};
use super::config::{DrxMode, ExperimentConfig};
use super::kpi::{satisfaction_ratio, xr_capacity};

/// KPIs of one load, pooled over seeds and split per seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadSummary {
    pub ues_per_cell: usize,
    pub xr_ues: usize,
    pub satisfied_ues: usize,
    pub satisfied_ratio: Option<f64>,
    pub per_seed_ratio: Vec<Option<f64>>,
    pub mean_power: f64,
    /// Mean power of the same drops with DRX off; `None` when DRX is off.
    pub always_on_power: Option<f64>,
    pub power_saving_gain: Option<f64>,
    pub mean_padding_bytes: Option<f64>,
    pub xr_throughput_mbps: f64,
    pub mean_rb_utilization: f64,
    pub pser: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub seeds: Vec<u64>,
    /// Sorted by (load, seed).
    pub runs: Vec<RunOutput>,
    pub loads: Vec<LoadSummary>,
    pub capacity: usize,
}

fn run_points(cfg: &ExperimentConfig, points: &[(usize, u64)], events: bool) -> Result<Vec<RunOutput>> {
    let one = |&(n, seed): &(usize, u64)| SystemSim::new(cfg, seed, n, events)?.run();
    #[cfg(feature = "parallel")]
    let out: Result<Vec<RunOutput>> = {
        use rayon::prelude::*;
        points.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let out: Result<Vec<RunOutput>> = points.iter().map(one).collect();
    let mut out = out?;
    out.sort_by_key(|r| (r.ues_per_cell, r.seed));
    Ok(out)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn xr_power(runs: &[&RunOutput]) -> f64 {
    mean(runs.iter().flat_map(|r| r.xr_ues()).map(|u| u.mean_power)).unwrap_or(0.0)
}

/// Runs every (load, seed) pair of the scenario. With DRX enabled the same
/// drops are re-run with DRX off to obtain the always-on power reference.
pub fn run_experiment(cfg: &ExperimentConfig, record_events: bool) -> Result<ExperimentResult> {
    cfg.validate()?;
    let seeds = cfg.scenario.seeds.clone();
    let mut loads = cfg.scenario.ues_per_cell.clone();
    loads.sort_unstable();
    loads.dedup();
    let points: Vec<(usize, u64)> = loads.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let runs = run_points(cfg, &points, record_events)?;
    let reference = if cfg.drx.mode != DrxMode::Off {
        let mut off = cfg.clone();
        off.drx.mode = DrxMode::Off;
        Some(run_points(&off, &points, false)?)
    } else {
        None
    };

    let mut summaries = Vec::new();
    for &n in &loads {
        let rs: Vec<&RunOutput> = runs.iter().filter(|r| r.ues_per_cell == n).collect();
        let flags: Vec<Option<bool>> = rs.iter().flat_map(|r| r.xr_ues()).map(|u| u.satisfied).collect();
        let per_seed_ratio = seeds
            .iter()
            .map(|&s| {
                let f: Vec<Option<bool>> = rs.iter().filter(|r| r.seed == s).flat_map(|r| r.xr_ues()).map(|u| u.satisfied).collect();
                satisfaction_ratio(&f)
            })
            .collect();
        let mean_power = xr_power(&rs);
        let always_on_power = reference.as_ref().map(|refs| {
            let rr: Vec<&RunOutput> = refs.iter().filter(|r| r.ues_per_cell == n).collect();
            xr_power(&rr)
        });
        let power_saving_gain = always_on_power.and_then(|p_on| crate::drx::power_saving_gain(mean_power, p_on).ok());
        let (sets, lost) = rs
            .iter()
            .flat_map(|r| r.xr_ues())
            .fold((0usize, 0usize), |(t, l), u| (t + u.sets_total, l + u.sets_lost));
        summaries.push(LoadSummary {
            ues_per_cell: n,
            xr_ues: flags.iter().flatten().count(),
            satisfied_ues: flags.iter().flatten().filter(|&&b| b).count(),
            satisfied_ratio: satisfaction_ratio(&flags),
            per_seed_ratio,
            mean_power,
            always_on_power,
            power_saving_gain,
            mean_padding_bytes: mean(rs.iter().flat_map(|r| r.padding_samples.iter().copied())),
            xr_throughput_mbps: mean(rs.iter().flat_map(|r| r.xr_ues()).map(|u| u.throughput_mbps)).unwrap_or(0.0),
            mean_rb_utilization: mean(rs.iter().flat_map(|r| r.rb_utilization.iter().copied())).unwrap_or(0.0),
            pser: if sets == 0 { 0.0 } else { lost as f64 / sets as f64 },
        });
    }
    let capacity = xr_capacity(
        &summaries
            .iter()
            .filter_map(|s| s.satisfied_ratio.map(|r| (s.ues_per_cell, r)))
            .collect::<Vec<_>>(),
    );
    Ok(ExperimentResult {
        seeds,
        runs,
        loads: summaries,
        capacity,
    })
}
