use std::io::Read;

use flate2::read::GzDecoder;

use xrsim::harness::{run_experiment, write_outputs, ExperimentConfig, SystemSim};

const SMALL: &str = r#"
[scenario]
ues_per_cell = [2, 3]
seeds = [4, 9]
duration_s = 1.5
warmup_s = 0.5

[xr]
rate_mbps = 20.0

[embb]
ues_per_cell = 1
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml(SMALL).unwrap()
}

#[test]
fn same_seed_same_run() {
    let cfg = small();
    let a = SystemSim::new(&cfg, 4, 2, true).unwrap().run().unwrap();
    let b = SystemSim::new(&cfg, 4, 2, true).unwrap().run().unwrap();
    assert_eq!(a.events, b.events);
    assert_eq!(a.ues, b.ues);
    let c = SystemSim::new(&cfg, 5, 2, true).unwrap().run().unwrap();
    assert_ne!(a.events, c.events);
}

#[test]
fn kpi_csv_layout() {
    let res = run_experiment(&small(), false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_outputs(dir.path(), &res, false).unwrap();
    assert!(files.events.is_none());

    let mut rd = csv::Reader::from_path(&files.kpi).unwrap();
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["ues_per_cell", "metric", "pooled", "seed_4", "seed_9"]);
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    let metrics_per_load = rows.iter().filter(|r| &r[0] == "2").count();
    assert_eq!(rows.iter().filter(|r| &r[0] == "3").count(), metrics_per_load);
    let ratio = rows.iter().find(|r| &r[0] == "2" && &r[1] == "satisfied_ratio").unwrap();
    assert!(!ratio[3].is_empty() && !ratio[4].is_empty());
    let last = rows.last().unwrap();
    assert_eq!((&last[0], &last[1]), ("all", "xr_capacity"));
    assert_eq!(last[2].parse::<usize>().unwrap(), res.capacity);
}

#[test]
fn cdf_files_are_monotone() {
    let res = run_experiment(&small(), false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_outputs(dir.path(), &res, false).unwrap();
    let names: Vec<String> = files
        .cdfs
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert!(names.contains(&"cdf_frame_delay_ms.csv".to_string()));
    for p in &files.cdfs {
        let mut rd = csv::Reader::from_path(p).unwrap();
        assert_eq!(rd.headers().unwrap(), vec!["ues_per_cell", "value", "cdf"]);
        let mut prev: Option<(String, f64, f64)> = None;
        for r in rd.records() {
            let r = r.unwrap();
            let (v, c): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
            if let Some((load, pv, pc)) = &prev {
                if load == &r[0] {
                    assert!(v > *pv && c > *pc, "{p:?} not monotone");
                }
            }
            prev = Some((r[0].to_string(), v, c));
        }
    }
}

#[test]
fn event_log_round_trips_through_gzip() {
    let res = run_experiment(&small(), true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_outputs(dir.path(), &res, true).unwrap();
    let mut text = String::new();
    GzDecoder::new(std::fs::File::open(files.events.unwrap()).unwrap())
        .read_to_string(&mut text)
        .unwrap();
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        rd.headers().unwrap(),
        vec!["ues_per_cell", "seed", "time_us", "ue", "event", "id", "value"]
    );
    let n = rd.records().count();
    let want: usize = res.runs.iter().map(|r| r.events.len()).sum();
    assert_eq!(n, want);
    assert!(n > 0);
}

#[test]
fn unknown_keys_are_rejected_by_name() {
    for (text, key) in [
        ("[scenario]\nuesPerCell = [1]\n", "uesPerCell"),
        ("[drx.adaptive]\ntarget = 0.1\n", "target"),
        ("[bogus]\nx = 1\n", "bogus"),
    ] {
        let err = ExperimentConfig::from_toml(text).unwrap_err().to_string();
        assert!(err.contains(key), "{err}");
    }
}

#[test]
fn invalid_values_fail_before_running() {
    let mut cfg = small();
    cfg.scenario.seeds.clear();
    assert!(run_experiment(&cfg, false).is_err());
    let mut cfg = small();
    cfg.xr.psdb_ms = -1.0;
    assert!(run_experiment(&cfg, false).is_err());
}

#[test]
fn drx_run_reports_reference_power() {
    let mut cfg = small();
    cfg.drx.mode = xrsim::harness::DrxMode::Fixed;
    let res = run_experiment(&cfg, false).unwrap();
    for l in &res.loads {
        let p_on = l.always_on_power.unwrap();
        assert!(l.mean_power < p_on);
        assert!(l.power_saving_gain.unwrap() > 0.0);
    }
}
