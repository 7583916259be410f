//! ECN-CE marking at the RAN queue (Method 1) or at the UPF on the RAN's
//! behalf (Method 2), and a scalable rate-adaptive source.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStreams;
use crate::traffic::Pdu;
use crate::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkingMethod {
    /// Marked by the RAN at dequeue.
    Ran,
    /// Probability sent to the UPF, which marks arriving packets.
    Upf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct L4sConfig {
    pub t_low_ms: f64,
    pub t_high_ms: f64,
    pub rtt_ms: f64,
    pub signaling_delay_ms: f64,
    pub capacity_mbps: f64,
    pub min_rate_mbps: f64,
    pub max_rate_mbps: f64,
    pub initial_rate_mbps: f64,
    pub step_mbps: f64,
    pub packet_bytes: u32,
    /// `None` runs the loop without any marking.
    pub method: Option<MarkingMethod>,
}

impl Default for L4sConfig {
    fn default() -> Self {
        L4sConfig {
            t_low_ms: 2.0,
            t_high_ms: 10.0,
            rtt_ms: 20.0,
            signaling_delay_ms: 0.0,
            capacity_mbps: 50.0,
            min_rate_mbps: 1.0,
            max_rate_mbps: 100.0,
            initial_rate_mbps: 10.0,
            step_mbps: 1.0,
            packet_bytes: 1500,
            method: Some(MarkingMethod::Ran),
        }
    }
}

impl L4sConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.t_low_ms && self.t_low_ms < self.t_high_ms) {
            return Err(Error::config("l4s.t_low_ms", "need 0 <= t_low < t_high"));
        }
        if !(self.rtt_ms > 0.0) || !(self.signaling_delay_ms >= 0.0) {
            return Err(Error::config("l4s.rtt_ms", "delays must be positive"));
        }
        if !(0.0 < self.min_rate_mbps && self.min_rate_mbps <= self.max_rate_mbps) {
            return Err(Error::config("l4s.min_rate_mbps", "need 0 < min <= max"));
        }
        if !(self.capacity_mbps > 0.0) || !(self.step_mbps >= 0.0) || self.packet_bytes == 0 {
            return Err(Error::config("l4s.capacity_mbps", "capacity and packet size must be positive"));
        }
        Ok(())
    }
}

/// Linear ramp between the two sojourn thresholds.
pub fn marking_probability(sojourn_ms: f64, t_low_ms: f64, t_high_ms: f64) -> f64 {
    ((sojourn_ms - t_low_ms) / (t_high_ms - t_low_ms)).clamp(0.0, 1.0)
}

/// Sets ECN-CE with probability `p` on L4S flows. Returns the flag.
pub fn mark_method1<R: Rng + ?Sized>(pdu: &mut Pdu, l4s_flow: bool, p: f64, rng: &mut R) -> bool {
    if l4s_flow && rng.random::<f64>() < p {
        pdu.ecn_ce = true;
    }
    pdu.ecn_ce
}

/// UPF-side marker fed with probabilities the RAN reports after a delay.
#[derive(Debug, Clone)]
pub struct UpfMarker {
    delay_us: Micros,
    pending: VecDeque<(Micros, f64)>,
    p: f64,
}

impl UpfMarker {
    pub fn new(signaling_delay_us: Micros) -> Self {
        UpfMarker {
            delay_us: signaling_delay_us,
            pending: VecDeque::new(),
            p: 0.0,
        }
    }

    pub fn report(&mut self, now: Micros, p: f64) {
        self.pending.push_back((now + self.delay_us, p));
    }

    /// Probability in effect at `now`.
    pub fn probability(&mut self, now: Micros) -> f64 {
        while let Some(&(t, p)) = self.pending.front() {
            if t > now {
                break;
            }
            self.p = p;
            self.pending.pop_front();
        }
        self.p
    }

    pub fn mark<R: Rng + ?Sized>(&mut self, now: Micros, pdu: &mut Pdu, l4s_flow: bool, rng: &mut R) -> bool {
        let p = self.probability(now);
        mark_method1(pdu, l4s_flow, p, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveSource {
    rate_bps: f64,
    min_bps: f64,
    max_bps: f64,
    step_bps: f64,
}

impl AdaptiveSource {
    pub fn new(initial_bps: f64, min_bps: f64, max_bps: f64, step_bps: f64) -> Self {
        AdaptiveSource {
            rate_bps: initial_bps.clamp(min_bps, max_bps),
            min_bps,
            max_bps,
            step_bps,
        }
    }

    pub fn rate_bps(&self) -> f64 {
        self.rate_bps
    }

    /// One feedback interval with marked fraction `f`.
    pub fn adapt(&mut self, f: f64) -> f64 {
        let r = if f > 0.0 {
            self.rate_bps * (1.0 - f.min(1.0) / 2.0)
        } else {
            self.rate_bps + self.step_bps
        };
        self.rate_bps = r.clamp(self.min_bps, self.max_bps);
        self.rate_bps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalRecord {
    pub time_ms: f64,
    pub flow: u32,
    pub p: f64,
    pub f: f64,
    pub rate_mbps: f64,
    pub sojourn_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct L4sRun {
    pub intervals: Vec<IntervalRecord>,
    /// Per-packet queue sojourn in ms, in departure order.
    pub sojourns_ms: Vec<f64>,
    pub marked: u64,
    pub packets: u64,
}

/// Single flow through a fixed-capacity bottleneck, the feedback loop closed
/// with one RTT of pure delay. The sender adapts once per RTT using the marks
/// of packets whose feedback has arrived.
pub fn run_l4s_loop(cfg: &L4sConfig, duration_ms: f64, seed: u64) -> Result<L4sRun> {
    cfg.validate()?;
    let mut rng = RngStreams::new(seed).stream("l4s");
    let mut src = AdaptiveSource::new(
        cfg.initial_rate_mbps * 1e6,
        cfg.min_rate_mbps * 1e6,
        cfg.max_rate_mbps * 1e6,
        cfg.step_mbps * 1e6,
    );
    let bits = cfg.packet_bytes as f64 * 8.0;
    let service_ms = bits / (cfg.capacity_mbps * 1e6) * 1e3;
    let mut upf = UpfMarker::new((cfg.signaling_delay_ms * 1e3).round() as Micros);

    let mut out = L4sRun {
        intervals: Vec::new(),
        sojourns_ms: Vec::new(),
        marked: 0,
        packets: 0,
    };
    // (feedback arrival time ms, marked)
    let mut feedback: VecDeque<(f64, bool)> = VecDeque::new();
    let mut t_send = 0.0f64;
    let mut last_departure = 0.0f64;
    let mut next_update = cfg.rtt_ms;
    let mut last_p = 0.0;
    let mut last_sojourn = 0.0;
    while t_send < duration_ms {
        while next_update <= t_send {
            let (mut n, mut m) = (0u64, 0u64);
            while let Some(&(t, mk)) = feedback.front() {
                if t > next_update {
                    break;
                }
                n += 1;
                m += mk as u64;
                feedback.pop_front();
            }
            let f = if n == 0 { 0.0 } else { m as f64 / n as f64 };
            let rate = src.adapt(f);
            out.intervals.push(IntervalRecord {
                time_ms: next_update,
                flow: 0,
                p: last_p,
                f,
                rate_mbps: rate / 1e6,
                sojourn_ms: last_sojourn,
            });
            next_update += cfg.rtt_ms;
        }
        let now_us = (t_send * 1e3).round() as Micros;
        let mut marked = false;
        if cfg.method == Some(MarkingMethod::Upf) {
            marked = rng.random::<f64>() < upf.probability(now_us);
        }
        let departure = t_send.max(last_departure) + service_ms;
        let sojourn = departure - t_send;
        let p = marking_probability(sojourn, cfg.t_low_ms, cfg.t_high_ms);
        match cfg.method {
            Some(MarkingMethod::Ran) => marked = rng.random::<f64>() < p,
            Some(MarkingMethod::Upf) => upf.report((departure * 1e3).round() as Micros, p),
            None => {}
        }
        last_departure = departure;
        last_p = p;
        last_sojourn = sojourn;
        out.sojourns_ms.push(sojourn);
        out.packets += 1;
        out.marked += marked as u64;
        feedback.push_back((departure + cfg.rtt_ms / 2.0, marked));
        t_send += bits / src.rate_bps() * 1e3;
    }
    Ok(out)
}

/// Nearest-rank percentile of `xs` (0 < q <= 100).
pub fn percentile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use crate::traffic::Importance;
    use rand::SeedableRng;

    fn pdu() -> Pdu {
        Pdu {
            id: 0,
            pdu_set_id: 0,
            burst_id: 0,
            bytes: 1500,
            set_bytes: 1500,
            arrival_us: 0,
            psi: Importance::HIGH,
            last_of_set: true,
            end_of_burst: true,
            deadline_us: None,
            ecn_ce: false,
        }
    }

    #[test]
    fn ramp() {
        assert_eq!(marking_probability(1.0, 2.0, 10.0), 0.0);
        assert_eq!(marking_probability(6.0, 2.0, 10.0), 0.5);
        assert_eq!(marking_probability(12.0, 2.0, 10.0), 1.0);
    }

    #[test]
    fn method1_extremes_and_rate() {
        let mut rng = SimRng::seed_from_u64(1);
        assert!((0..1000).all(|_| !mark_method1(&mut pdu(), true, 0.0, &mut rng)));
        assert!((0..1000).all(|_| mark_method1(&mut pdu(), true, 1.0, &mut rng)));
        assert!((0..1000).all(|_| !mark_method1(&mut pdu(), false, 1.0, &mut rng)));
        let n = 100_000;
        let m = (0..n).filter(|_| mark_method1(&mut pdu(), true, 0.3, &mut rng)).count();
        assert!((m as f64 / n as f64 - 0.3).abs() < 0.01);
    }

    #[test]
    fn upf_lags_by_signaling_delay() {
        let mut upf = UpfMarker::new(10_000);
        upf.report(0, 0.0);
        upf.report(5_000, 1.0);
        assert_eq!(upf.probability(14_999), 0.0);
        assert_eq!(upf.probability(15_000), 1.0);
    }

    #[test]
    fn source_rules() {
        let mut s = AdaptiveSource::new(10e6, 1e6, 20e6, 1e6);
        assert_eq!(s.adapt(0.0), 11e6);
        assert_eq!(s.adapt(1.0), 5.5e6);
        for _ in 0..100 {
            s.adapt(0.0);
        }
        assert_eq!(s.rate_bps(), 20e6);
        for _ in 0..100 {
            s.adapt(1.0);
        }
        assert_eq!(s.rate_bps(), 1e6);
    }

    #[test]
    fn percentile_nearest_rank() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&xs, 95.0), 95.0);
        assert_eq!(percentile(&[3.0], 50.0), 3.0);
    }

    #[test]
    fn loop_settles_near_capacity() {
        let cfg = L4sConfig::default();
        let run = run_l4s_loop(&cfg, 20_000.0, 3).unwrap();
        let late: Vec<f64> = run.intervals.iter().filter(|r| r.time_ms > 5_000.0).map(|r| r.rate_mbps).collect();
        let mean = late.iter().sum::<f64>() / late.len() as f64;
        assert!(mean > 0.5 * cfg.capacity_mbps && mean < 1.2 * cfg.capacity_mbps, "{mean}");
        let off = run_l4s_loop(&L4sConfig { method: None, ..cfg }, 20_000.0, 3).unwrap();
        assert!(percentile(&run.sojourns_ms, 95.0) < percentile(&off.sojourns_ms, 95.0));
    }
}
