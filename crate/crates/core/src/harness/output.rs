//! CSV writers. Every file has a header row; the csv crate applies
//! RFC 4180 quoting where a field needs it.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::Result;

use super::experiment::ExperimentResult;
use super::kpi::emit_cdf;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFiles {
    pub kpi: PathBuf,
    pub cdfs: Vec<PathBuf>,
    pub events: Option<PathBuf>,
}

fn fmt(x: f64) -> String {
    // shortest round-trip form; stable across runs and platforms
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn write_kpi(path: &Path, res: &ExperimentResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["ues_per_cell".to_string(), "metric".into(), "pooled".into()];
    header.extend(res.seeds.iter().map(|s| format!("seed_{s}")));
    w.write_record(&header)?;
    let blank = vec![String::new(); res.seeds.len()];
    for l in &res.loads {
        let n = l.ues_per_cell.to_string();
        let mut row = |metric: &str, pooled: String, per_seed: Vec<String>| -> Result<()> {
            let mut r = vec![n.clone(), metric.to_string(), pooled];
            r.extend(per_seed);
            w.write_record(&r)?;
            Ok(())
        };
        row("satisfied_ratio", opt(l.satisfied_ratio), l.per_seed_ratio.iter().map(|&x| opt(x)).collect())?;
        row("satisfied_ues", l.satisfied_ues.to_string(), blank.clone())?;
        row("xr_ues", l.xr_ues.to_string(), blank.clone())?;
        row("mean_power", fmt(l.mean_power), blank.clone())?;
        row("always_on_power", opt(l.always_on_power), blank.clone())?;
        row("power_saving_gain_pct", opt(l.power_saving_gain), blank.clone())?;
        row("mean_padding_bytes", opt(l.mean_padding_bytes), blank.clone())?;
        row("xr_throughput_mbps", fmt(l.xr_throughput_mbps), blank.clone())?;
        row("rb_utilization", fmt(l.mean_rb_utilization), blank.clone())?;
        row("pser", fmt(l.pser), blank.clone())?;
    }
    let mut r = vec!["all".to_string(), "xr_capacity".into(), res.capacity.to_string()];
    r.extend(blank);
    w.write_record(&r)?;
    w.flush()?;
    Ok(())
}

fn write_cdf(path: &Path, res: &ExperimentResult, samples: impl Fn(usize) -> Vec<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["ues_per_cell", "value", "cdf"])?;
    for l in &res.loads {
        for (v, p) in emit_cdf(&samples(l.ues_per_cell)) {
            w.write_record([l.ues_per_cell.to_string(), fmt(v), fmt(p)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_events(path: &Path, res: &ExperimentResult) -> Result<()> {
    let gz = GzEncoder::new(File::create(path)?, Compression::default());
    let mut w = csv::Writer::from_writer(gz);
    w.write_record(["ues_per_cell", "seed", "time_us", "ue", "event", "id", "value"])?;
    for r in &res.runs {
        for e in &r.events {
            w.write_record([
                r.ues_per_cell.to_string(),
                r.seed.to_string(),
                e.time_us.to_string(),
                e.ue.to_string(),
                e.event.to_string(),
                e.id.to_string(),
                fmt(e.value),
            ])?;
        }
    }
    let gz = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    gz.finish()?.flush()?;
    Ok(())
}

/// Writes `kpi.csv`, the `cdf_<name>.csv` files and, when asked for,
/// `events.csv.gz` into `dir`.
pub fn write_outputs(dir: impl AsRef<Path>, res: &ExperimentResult, events: bool) -> Result<OutputFiles> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let kpi = dir.join("kpi.csv");
    write_kpi(&kpi, res)?;

    let by_load = |n: usize| res.runs.iter().filter(move |r| r.ues_per_cell == n);
    let mut cdfs = Vec::new();
    let series: [(&str, Box<dyn Fn(usize) -> Vec<f64> + '_>); 4] = [
        ("padding_bytes", Box::new(|n| by_load(n).flat_map(|r| r.padding_samples.iter().copied()).collect())),
        (
            "ue_throughput_mbps",
            Box::new(|n| by_load(n).flat_map(|r| r.ues.iter().map(|u| u.throughput_mbps)).collect()),
        ),
        ("rb_utilization", Box::new(|n| by_load(n).flat_map(|r| r.rb_utilization.iter().copied()).collect())),
        ("frame_delay_ms", Box::new(|n| by_load(n).flat_map(|r| r.frame_delays_ms.iter().copied()).collect())),
    ];
    for (name, f) in series {
        let p = dir.join(format!("cdf_{name}.csv"));
        write_cdf(&p, res, f)?;
        cdfs.push(p);
    }
    let events = if events {
        let p = dir.join("events.csv.gz");
        write_events(&p, res)?;
        Some(p)
    } else {
        None
    };
    Ok(OutputFiles { kpi, cdfs, events })
}
