//! wasm-bindgen entry points for the static demo page in `www/`.

use wasm_bindgen::prelude::*;

use xrsim::drx::{start_arrival_offsets, DrxConfig};
use xrsim::reporting::{make_bsr, BsTables, BsrFormat};
use xrsim::rng::RngStreams;
use xrsim::time::{ms, to_f64_ms, RationalMs};
use xrsim::traffic::{VideoSource, VideoStreamConfig};

/// `start_k - arrival_k` in ms for `cycles` on-durations of a cycle of
/// `num/den` ms against zero-jitter frames at `fps`.
#[wasm_bindgen]
pub fn drx_drift(cycle_num: i32, cycle_den: i32, fps: i32, cycles: u32) -> Result<Vec<f64>, JsError> {
    if cycle_num <= 0 || cycle_den <= 0 || fps <= 0 {
        return Err(JsError::new("cycle and frame rate must be positive"));
    }
    let mut cfg = DrxConfig::integer(16, 8, 8);
    cfg.cycle = RationalMs::new(cycle_num as i64, cycle_den as i64);
    cfg.on_duration = cfg.on_duration.min(cfg.cycle);
    let period = RationalMs::new(1000, fps as i64);
    Ok(start_arrival_offsets(&cfg, ms(0), period, cycles.min(100_000) as usize)
        .into_iter()
        .map(to_f64_ms)
        .collect())
}

/// Histogram of `n` generated frames: `bins` size counts between 0.5x and
/// 1.5x the mean, then `bins` jitter counts over the jitter range.
#[wasm_bindgen]
pub fn frame_histograms(rate_mbps: f64, fps: i32, jitter_std_ms: f64, n: u32, bins: u32, seed: u64) -> Result<Vec<u32>, JsError> {
    let cfg = VideoStreamConfig {
        rate_mbps,
        fps_num: fps as i64,
        jitter_std_ms,
        ..Default::default()
    };
    let mut src = VideoSource::new(cfg.clone(), ms(0)).map_err(|e| JsError::new(&e.to_string()))?;
    let mut rng = RngStreams::new(seed).stream("traffic");
    let bins = bins.clamp(1, 400) as usize;
    let mut out = vec![0u32; 2 * bins];
    let m = cfg.mean_frame_bytes();
    let (lo, hi) = (cfg.size_min_frac * m, cfg.size_max_frac * m);
    let (jlo, jhi) = (cfg.jitter_min_ms, cfg.jitter_max_ms);
    let slot = |x: f64, a: f64, b: f64| (((x - a) / (b - a) * bins as f64) as usize).min(bins - 1);
    for _ in 0..n.min(1_000_000) {
        let f = src.next_frame(&mut rng);
        out[slot(f.bytes as f64, lo, hi)] += 1;
        out[bins + slot(f.jitter_ms, jlo, jhi)] += 1;
    }
    Ok(out)
}

/// Bytes the gNB reads for a buffer of `bytes` under Short, Long and
/// Refined-Long reporting.
#[wasm_bindgen]
pub fn bsr_reports(bytes: f64) -> Vec<f64> {
    let tables = BsTables::default();
    let b = bytes.max(0.0) as u64;
    [BsrFormat::Short, BsrFormat::Long, BsrFormat::RefinedLong]
        .iter()
        .map(|&f| make_bsr(f, b, &tables, 0, 0).reported_bytes as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_of_integer_cycle() {
        let d = drx_drift(16, 1, 60, 4).unwrap();
        assert_eq!(d.len(), 4);
        assert!((d[3] + 2.0).abs() < 1e-12);
        assert!(drx_drift(50, 3, 60, 100).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn histograms_count_every_frame() {
        let h = frame_histograms(30.0, 60, 2.0, 5000, 20, 1).unwrap();
        assert_eq!(h[..20].iter().sum::<u32>(), 5000);
        assert_eq!(h[20..].iter().sum::<u32>(), 5000);
    }

    #[test]
    fn reports_cover_the_buffer() {
        let r = bsr_reports(12_345.0);
        assert!(r.iter().all(|&x| x >= 12_345.0));
    }
}
