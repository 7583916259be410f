use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use xrsim::harness::{run_experiment, write_outputs, DrxMode, ExperimentConfig};
use xrsim::mac::SchedulerKind;

#[derive(Parser)]
#[command(name = "xrsim", version, about = "XR traffic over a 5G NR cell, slot by slot")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a load sweep and write kpi.csv and cdf_*.csv.
    Simulate(SimArgs),
    /// Closed-loop L4S run at a fixed bottleneck; writes l4s.csv.
    L4s(L4sArgs),
    /// Print the full default configuration as TOML.
    DefaultConfig,
}

#[derive(clap::Args)]
struct L4sArgs {
    /// TOML configuration; only `[l4s]` is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Simulated seconds.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SimArgs {
    /// TOML configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds, e.g. `1,2,3` or `1-5`.
    #[arg(long, value_parser = parse_list)]
    seeds: Option<List>,
    /// XR UEs per cell, e.g. `4-12`, `4-12:2` or `4,8,12`.
    #[arg(long, value_parser = parse_list)]
    ues_per_cell: Option<List>,
    #[arg(long, value_parser = parse_scheduler)]
    scheduler: Option<SchedulerKind>,
    #[arg(long, value_parser = parse_drx)]
    drx: Option<DrxMode>,
    /// Simulated seconds per run, warm-up included.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write events.csv.gz.
    #[arg(long)]
    events: bool,
}

fn parse_scheduler(s: &str) -> Result<SchedulerKind, String> {
    s.parse().map_err(|e: xrsim::Error| e.to_string())
}

fn parse_drx(s: &str) -> Result<DrxMode, String> {
    s.parse().map_err(|e: xrsim::Error| e.to_string())
}

#[derive(Debug, Clone)]
struct List(Vec<u64>);

fn parse_list(s: &str) -> Result<List, String> {
    expand(s).map(List)
}

/// Comma-separated items, each a number or an inclusive `a-b[:step]` range.
fn expand(s: &str) -> Result<Vec<u64>, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("`{t}` is not a non-negative integer"));
    let mut out = Vec::new();
    for item in s.split(',').filter(|t| !t.trim().is_empty()) {
        let (span, step) = match item.split_once(':') {
            Some((a, b)) => (a, num(b)?),
            None => (item, 1),
        };
        if step == 0 {
            return Err("range step must be positive".into());
        }
        match span.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty range {a}-{b}"));
                }
                out.extend((a..=b).step_by(step as usize));
            }
            None => out.push(num(span)?),
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

fn simulate(a: SimArgs) -> Result<(), String> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(List(s)) = a.seeds {
        cfg.scenario.seeds = s;
    }
    if let Some(List(n)) = a.ues_per_cell {
        cfg.scenario.ues_per_cell = n.into_iter().map(|x| x as usize).collect();
    }
    if let Some(k) = a.scheduler {
        cfg.scheduler.policy = k;
    }
    if let Some(d) = a.drx {
        cfg.drx.mode = d;
    }
    if let Some(t) = a.duration {
        cfg.scenario.duration_s = t;
    }
    if let Some(o) = a.out {
        cfg.output.dir = o.to_string_lossy().into_owned();
    }
    cfg.output.events |= a.events;

    let res = run_experiment(&cfg, cfg.output.events).map_err(|e| e.to_string())?;
    let files = write_outputs(&cfg.output.dir, &res, cfg.output.events).map_err(|e| e.to_string())?;
    for l in &res.loads {
        let ratio = l.satisfied_ratio.map_or("n/a".to_string(), |r| format!("{r:.3}"));
        match l.power_saving_gain {
            Some(g) => println!("N={:<3} satisfied {ratio}  power saving {g:.1}%", l.ues_per_cell),
            None => println!("N={:<3} satisfied {ratio}", l.ues_per_cell),
        }
    }
    println!("XR capacity: {} UEs per cell", res.capacity);
    println!("wrote {}", files.kpi.display());
    Ok(())
}

fn l4s(a: L4sArgs) -> Result<(), String> {
    let cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    let run = xrsim::l4s::run_l4s_loop(&cfg.l4s, a.duration * 1000.0, a.seed).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&a.out).map_err(|e| e.to_string())?;
    let path = a.out.join("l4s.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| e.to_string())?;
    for r in &run.intervals {
        w.serialize(r).map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())?;
    let p95 = xrsim::l4s::percentile(&run.sojourns_ms, 95.0);
    println!(
        "{} packets, {:.2}% marked, p95 sojourn {p95:.2} ms",
        run.packets,
        100.0 * run.marked as f64 / run.packets.max(1) as f64
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::L4s(a) => l4s(a),
        Cmd::DefaultConfig => {
            print!("{}", ExperimentConfig::default().to_toml());
            Ok(())
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
