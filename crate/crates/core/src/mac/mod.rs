//! Per-slot resource allocation: downlink metric schedulers, uplink dynamic
//! grants and configured grants.

mod cg;
mod dl;
mod metrics;
mod ul;

pub use cg::{bitmap_string, build_uto_uci, cg_occasions, reclaim_unused, CgConfig, CgOccasion};
pub use dl::{allocate_dl, DlCandidate, HeadSet};
pub use metrics::{mlwdf_metric, mlwdf_weight, pduset_metric, pf_metric, PduSetScore, PfAverager};
pub use ul::{allocate_ul, UlCandidate};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traffic::Direction;
use crate::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    #[serde(alias = "pf")]
    ProportionalFair,
    Mlwdf,
    #[serde(alias = "pduset")]
    PduSetAware,
}

impl SchedulerKind {
    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::ProportionalFair => "pf",
            SchedulerKind::Mlwdf => "mlwdf",
            SchedulerKind::PduSetAware => "pduset",
        }
    }
}

impl std::str::FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pf" => Ok(SchedulerKind::ProportionalFair),
            "mlwdf" => Ok(SchedulerKind::Mlwdf),
            "pduset" => Ok(SchedulerKind::PduSetAware),
            other => Err(Error::config("scheduler.policy", format!("unknown scheduler `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerPolicy {
    pub policy: SchedulerKind,
    /// Averaging window of the PF throughput filter, in slots.
    pub pf_avg_window: f64,
    pub pduset_alpha: f64,
    /// Floor on the remaining budget in the PDU-set metric.
    pub epsilon_time_ms: f64,
    /// Expired sets score this fraction of the smallest positive metric.
    pub expired_floor_factor: f64,
}

impl Default for SchedulerPolicy {
    fn default() -> Self {
        SchedulerPolicy {
            policy: SchedulerKind::ProportionalFair,
            pf_avg_window: 100.0,
            pduset_alpha: 1.0,
            epsilon_time_ms: 1.0,
            expired_floor_factor: 1e-3,
        }
    }
}

impl SchedulerPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.pf_avg_window >= 1.0) {
            return Err(Error::config("scheduler.pf_avg_window", "must be at least one slot"));
        }
        if !(self.pduset_alpha > 0.0) || !(self.epsilon_time_ms > 0.0) || !(self.expired_floor_factor > 0.0) {
            return Err(Error::config("scheduler", "metric parameters must be positive"));
        }
        Ok(())
    }

    pub fn epsilon_time_us(&self) -> Micros {
        (self.epsilon_time_ms * 1000.0).round() as Micros
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct RbRange {
    pub start: u32,
    pub len: u32,
}

impl RbRange {
    pub fn end(&self) -> u32 {
        self.start + self.len
    }

    pub fn overlaps(&self, other: &RbRange) -> bool {
        self.start < other.end() && other.start < self.end()
    }
}

/// Free resource blocks of one slot, handed out lowest first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RbPool {
    ranges: Vec<RbRange>,
}

impl RbPool {
    pub fn full(n_rb: u32) -> Self {
        RbPool {
            ranges: vec![RbRange { start: 0, len: n_rb }],
        }
    }

    pub fn empty() -> Self {
        RbPool::default()
    }

    pub fn from_ranges(mut ranges: Vec<RbRange>) -> Self {
        ranges.retain(|r| r.len > 0);
        ranges.sort_by_key(|r| r.start);
        RbPool { ranges }
    }

    pub fn remaining(&self) -> u32 {
        self.ranges.iter().map(|r| r.len).sum()
    }

    pub fn ranges(&self) -> &[RbRange] {
        &self.ranges
    }

    /// Returns freed RBs to the pool.
    pub fn add(&mut self, r: RbRange) {
        if r.len == 0 {
            return;
        }
        self.ranges.push(r);
        self.ranges.sort_by_key(|r| r.start);
    }

    /// Removes `r` from the pool, returning false if any of it is not free.
    pub fn reserve(&mut self, r: RbRange) -> bool {
        let Some(i) = self.ranges.iter().position(|f| f.start <= r.start && r.end() <= f.end()) else {
            return false;
        };
        let f = self.ranges.remove(i);
        if r.start > f.start {
            self.ranges.push(RbRange {
                start: f.start,
                len: r.start - f.start,
            });
        }
        if f.end() > r.end() {
            self.ranges.push(RbRange {
                start: r.end(),
                len: f.end() - r.end(),
            });
        }
        self.ranges.sort_by_key(|r| r.start);
        true
    }

    pub fn take(&mut self, n: u32) -> Vec<RbRange> {
        let mut left = n;
        let mut out = Vec::new();
        while left > 0 && !self.ranges.is_empty() {
            let r = &mut self.ranges[0];
            let k = left.min(r.len);
            out.push(RbRange { start: r.start, len: k });
            r.start += k;
            r.len -= k;
            left -= k;
            if r.len == 0 {
                self.ranges.remove(0);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub ue: usize,
    pub direction: Direction,
    pub slot: u64,
    pub rbs: Vec<RbRange>,
    pub mcs: u8,
    pub tb_bits: u64,
    pub retransmission: bool,
}

impl Allocation {
    pub fn rb_count(&self) -> u32 {
        self.rbs.iter().map(|r| r.len).sum()
    }

    pub fn rb_start(&self) -> u32 {
        self.rbs.first().map_or(0, |r| r.start)
    }
}

/// True if no two allocations share an RB and all fit in `n_rb`.
pub fn allocations_disjoint(allocs: &[Allocation], n_rb: u32) -> bool {
    let ranges: Vec<&RbRange> = allocs.iter().flat_map(|a| a.rbs.iter()).collect();
    let total: u32 = ranges.iter().map(|r| r.len).sum();
    if total > n_rb || ranges.iter().any(|r| r.end() > n_rb) {
        return false;
    }
    for (i, a) in ranges.iter().enumerate() {
        for b in &ranges[i + 1..] {
            if a.overlaps(b) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_take_and_reserve() {
        let mut p = RbPool::full(273);
        assert!(p.reserve(RbRange { start: 200, len: 73 }));
        assert!(!p.reserve(RbRange { start: 250, len: 1 }));
        let a = p.take(50);
        assert_eq!(a, vec![RbRange { start: 0, len: 50 }]);
        assert_eq!(p.remaining(), 150);
        p.add(RbRange { start: 200, len: 73 });
        let b = p.take(200);
        assert_eq!(b.iter().map(|r| r.len).sum::<u32>(), 200);
        assert_eq!(b.len(), 2);
        assert_eq!(p.remaining(), 23);
    }

    #[test]
    fn scheduler_names_parse() {
        for k in [SchedulerKind::ProportionalFair, SchedulerKind::Mlwdf, SchedulerKind::PduSetAware] {
            assert_eq!(k.name().parse::<SchedulerKind>().unwrap(), k);
        }
        assert!("rr".parse::<SchedulerKind>().is_err());
    }
}
