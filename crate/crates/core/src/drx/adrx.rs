use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdrxMode {
    /// Adapt the on-duration only.
    On,
    /// Adapt on-duration and start offset.
    OnStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdrxConfig {
    pub mode: AdrxMode,
    /// Weight of the power penalty (per second awake per cycle).
    pub v: f64,
    /// Tolerated violations per cycle.
    pub target_violations: f64,
    pub on_grid_ms: Vec<f64>,
    /// Start candidates relative to the expected nominal arrival.
    pub offset_grid_ms: Vec<f64>,
    /// Frames kept for the empirical prediction.
    pub history: usize,
    /// Arrivals closer than this to the end of the on-duration are predicted
    /// to miss it (slot alignment plus waiting out an uplink slot).
    pub guard_ms: f64,
}

impl Default for AdrxConfig {
    fn default() -> Self {
        AdrxConfig {
            mode: AdrxMode::OnStart,
            v: 10.0,
            target_violations: 0.005,
            on_grid_ms: vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0],
            offset_grid_ms: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            history: 120,
            guard_ms: 1.5,
        }
    }
}

impl AdrxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.on_grid_ms.is_empty() || self.on_grid_ms.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::config("adrx.on_grid_ms", "needs at least one positive on-duration"));
        }
        if self.offset_grid_ms.is_empty() {
            return Err(Error::config("adrx.offset_grid_ms", "needs at least one offset"));
        }
        if !(self.v >= 0.0) || !(self.target_violations >= 0.0) {
            return Err(Error::config("adrx.v", "weights must not be negative"));
        }
        if !(self.guard_ms >= 0.0) {
            return Err(Error::config("adrx.guard_ms", "must not be negative"));
        }
        if self.history == 0 {
            return Err(Error::config("adrx.history", "must be at least 1"));
        }
        Ok(())
    }
}

/// One frame as observed by the gNB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSample {
    /// Arrival minus the expected nominal arrival.
    pub phase_us: Micros,
    /// Time from when the frame could first be scheduled to its delivery.
    pub service_us: Micros,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CycleFeedback {
    pub frames: u32,
    pub violations: u32,
    pub samples: Vec<FrameSample>,
}

/// On-duration placement relative to the expected nominal arrival.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdrxDecision {
    pub offset_us: Micros,
    pub on_duration_us: Micros,
}

/// Drift-plus-penalty controller over a discrete (offset, on-duration) grid.
#[derive(Debug, Clone)]
pub struct AdrxController {
    cfg: AdrxConfig,
    q: f64,
    history: VecDeque<FrameSample>,
    psdb_us: Micros,
    cycle_us: Micros,
    inactivity_us: Micros,
    fixed_offset_us: Micros,
    current: AdrxDecision,
}

impl AdrxController {
    /// `initial` is also the fixed offset used in [`AdrxMode::On`].
    pub fn new(cfg: AdrxConfig, psdb_us: Micros, cycle_us: Micros, inactivity_us: Micros, initial: AdrxDecision) -> Result<Self> {
        cfg.validate()?;
        Ok(AdrxController {
            history: VecDeque::with_capacity(cfg.history),
            cfg,
            q: 0.0,
            psdb_us,
            cycle_us,
            inactivity_us,
            fixed_offset_us: initial.offset_us,
            current: initial,
        })
    }

    pub fn queue(&self) -> f64 {
        self.q
    }

    pub fn current(&self) -> AdrxDecision {
        self.current
    }

    fn candidates(&self) -> Vec<AdrxDecision> {
        let offsets: Vec<Micros> = match self.cfg.mode {
            AdrxMode::On => vec![self.fixed_offset_us],
            AdrxMode::OnStart => self.cfg.offset_grid_ms.iter().map(|&o| (o * 1000.0).round() as Micros).collect(),
        };
        let mut out = Vec::new();
        for &on in &self.cfg.on_grid_ms {
            for &offset_us in &offsets {
                out.push(AdrxDecision {
                    offset_us,
                    on_duration_us: (on * 1000.0).round() as Micros,
                });
            }
        }
        out
    }

    /// Expected violations per frame and awake seconds per cycle under `d`,
    /// replaying the stored frame history.
    pub fn predict(&self, d: AdrxDecision) -> (f64, f64) {
        if self.history.is_empty() {
            return (0.0, d.on_duration_us as f64 * 1e-6);
        }
        let (mut viol, mut awake) = (0.0, 0.0);
        let start = d.offset_us;
        let end = start + d.on_duration_us;
        let reach = end - (self.cfg.guard_ms * 1000.0).round() as Micros;
        for s in &self.history {
            let a = s.phase_us;
            let (delay, last_tx) = if a < start {
                (start - a + s.service_us, start + s.service_us)
            } else if a < reach {
                (s.service_us, a + s.service_us)
            } else {
                // waits for the next on-duration
                (start + self.cycle_us - a + s.service_us, end)
            };
            if delay > self.psdb_us {
                viol += 1.0;
            }
            let on_until = if a < reach { end.max(last_tx + self.inactivity_us) } else { end };
            awake += (on_until - start) as f64 * 1e-6;
        }
        let n = self.history.len() as f64;
        (viol / n, awake / n)
    }

    pub fn update(&mut self, fb: &CycleFeedback) -> AdrxDecision {
        self.q = (self.q + fb.violations as f64 - self.cfg.target_violations).max(0.0);
        for &s in &fb.samples {
            if self.history.len() == self.cfg.history {
                self.history.pop_front();
            }
            self.history.push_back(s);
        }
        let mut best: Option<(f64, AdrxDecision)> = None;
        for c in self.candidates() {
            let (viol, active) = self.predict(c);
            let score = self.q * viol + self.cfg.v * active;
            // ties keep the shorter on-duration, then the earlier start
            if best.is_none_or(|(b, _)| score < b - 1e-12) {
                best = Some((score, c));
            }
        }
        self.current = best.map(|(_, c)| c).unwrap_or(self.current);
        self.current
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctl(mode: AdrxMode, psdb_us: Micros) -> AdrxController {
        let cfg = AdrxConfig {
            mode,
            ..Default::default()
        };
        let init = AdrxDecision {
            offset_us: -4_000,
            on_duration_us: 8_000,
        };
        AdrxController::new(cfg, psdb_us, 16_667, 0, init).unwrap()
    }

    #[test]
    fn quiet_cycles_shrink_on_duration() {
        let mut c = ctl(AdrxMode::On, 10_000);
        let mut d = c.current();
        for _ in 0..50 {
            d = c.update(&CycleFeedback {
                frames: 1,
                violations: 0,
                samples: vec![FrameSample {
                    phase_us: -3_000,
                    service_us: 500,
                }],
            });
        }
        assert_eq!(d.on_duration_us, 2_000);
        assert_eq!(c.queue(), 0.0);
    }

    #[test]
    fn violations_expand_on_duration() {
        let mut c = ctl(AdrxMode::On, 5_000);
        let mut d = c.current();
        for k in 0..200 {
            // arrivals spread over [-4, 5] ms; with a 5 ms budget a frame
            // left for the next cycle is always late
            let phase = -4_000 + (k % 10) * 1_000;
            d = c.update(&CycleFeedback {
                frames: 1,
                violations: 1,
                samples: vec![FrameSample {
                    phase_us: phase,
                    service_us: 500,
                }],
            });
        }
        // the last arrival (+5 ms) needs the guard before the end: 12 ms
        assert_eq!(d.on_duration_us, 12_000);
        assert!(c.queue() > 100.0);
    }

    #[test]
    fn on_start_matches_jitter_span() {
        let mut c = ctl(AdrxMode::OnStart, 10_000);
        let mut d = c.current();
        for k in 0..400 {
            let phase = -4_000 + (k * 37 % 81) * 100; // [-4, 4] ms
            let (viol, _) = c.predict(d);
            let v = if viol > 0.0 && k % 7 == 0 { 1 } else { 0 };
            d = c.update(&CycleFeedback {
                frames: 1,
                violations: v,
                samples: vec![FrameSample {
                    phase_us: phase,
                    service_us: 1_000,
                }],
            });
        }
        // latest arrival (+4 ms) must fall inside the on-duration
        assert!(d.offset_us + d.on_duration_us > 4_000, "{d:?}");
        assert_eq!(c.predict(d).0, 0.0);
    }

    #[test]
    fn empty_grid_rejected() {
        let cfg = AdrxConfig {
            on_grid_ms: vec![],
            ..Default::default()
        };
        let init = AdrxDecision {
            offset_us: 0,
            on_duration_us: 1,
        };
        assert!(AdrxController::new(cfg, 1, 1, 0, init).is_err());
    }
}
