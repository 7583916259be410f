//! PDU-set QoS handling: per-flow transmit queues with integrated (PSIHI),
//! differentiated (PSI) and timer-based discard, PSER accounting, PDU-set
//! metadata visibility per mapping alternative, and UE assistance
//! information.

use std::collections::{BTreeMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::RationalMs;
use crate::traffic::{Direction, Importance, Pdu};
use crate::Micros;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QosFlowProfile {
    pub pser: f64,
    /// Drop the rest of a PDU set once one of its PDUs is lost.
    pub psihi: bool,
    /// Drop low-importance PDU sets when the queue is congested.
    pub psi_discard: bool,
    /// Congestion when the projected sojourn exceeds this fraction of PSDB.
    pub congestion_frac: f64,
    /// `None` disables timer discard.
    pub discard_timer_ms: Option<f64>,
}

impl Default for QosFlowProfile {
    fn default() -> Self {
        QosFlowProfile {
            pser: 0.01,
            psihi: false,
            psi_discard: false,
            congestion_frac: 0.8,
            discard_timer_ms: None,
        }
    }
}

impl QosFlowProfile {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pser) {
            return Err(Error::config("qos.pser", "must be within [0, 1]"));
        }
        if let Some(t) = self.discard_timer_ms {
            if !(t > 0.0) {
                return Err(Error::config("qos.discard_timer_ms", "must be positive"));
            }
        }
        if !(self.congestion_frac > 0.0) {
            return Err(Error::config("qos.congestion_frac", "must be positive"));
        }
        Ok(())
    }

    pub fn discard_timer_us(&self) -> Option<Micros> {
        self.discard_timer_ms.map(|t| (t * 1000.0).round() as Micros)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardCause {
    Psihi,
    Psi,
    Timer,
}

impl DiscardCause {
    pub fn name(self) -> &'static str {
        match self {
            DiscardCause::Psihi => "psihi",
            DiscardCause::Psi => "psi",
            DiscardCause::Timer => "timer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiscardEvent {
    pub time_us: Micros,
    pub pdu_id: u64,
    pub set_id: u64,
    pub cause: DiscardCause,
}

/// A chunk of one PDU placed into a transport block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub pdu_id: u64,
    pub set_id: u64,
    pub bytes: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueuedPdu {
    pub pdu: Pdu,
    pub unsent: u32,
    pub in_flight: u32,
    pub delivered: u32,
}

impl QueuedPdu {
    fn fresh(&self) -> bool {
        self.unsent == self.pdu.bytes
    }
}

/// Transmit queue of one QoS flow.
#[derive(Debug, Clone, Default)]
pub struct FlowQueue {
    items: VecDeque<QueuedPdu>,
    unsent_bytes: u64,
}

impl FlowQueue {
    pub fn new() -> Self {
        FlowQueue::default()
    }

    pub fn push(&mut self, pdu: Pdu) {
        self.unsent_bytes += pdu.bytes as u64;
        self.items.push_back(QueuedPdu {
            unsent: pdu.bytes,
            in_flight: 0,
            delivered: 0,
            pdu,
        });
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = &QueuedPdu> {
        self.items.iter()
    }

    pub fn unsent_bytes(&self) -> u64 {
        self.unsent_bytes
    }

    pub fn has_unsent(&self) -> bool {
        self.unsent_bytes > 0
    }

    /// First PDU that still has bytes waiting for a first transmission.
    pub fn head(&self) -> Option<&QueuedPdu> {
        self.items.iter().find(|q| q.unsent > 0)
    }

    /// Bytes of the head PDU set already handed to HARQ, and its total size.
    pub fn head_set_progress(&self) -> Option<(u64, Pdu)> {
        let head = self.head()?;
        let set = head.pdu.pdu_set_id;
        let unsent: u64 = self
            .items
            .iter()
            .filter(|q| q.pdu.pdu_set_id == set)
            .map(|q| q.unsent as u64)
            .sum();
        let sent = (head.pdu.set_bytes as u64).saturating_sub(unsent);
        Some((sent, head.pdu.clone()))
    }

    /// Pulls up to `max_bytes` in queue order; PDUs may be segmented.
    pub fn take_bytes(&mut self, max_bytes: u64) -> Vec<Segment> {
        let mut left = max_bytes;
        let mut out = Vec::new();
        for q in self.items.iter_mut() {
            if left == 0 {
                break;
            }
            if q.unsent == 0 {
                continue;
            }
            let b = (q.unsent as u64).min(left) as u32;
            q.unsent -= b;
            q.in_flight += b;
            left -= b as u64;
            out.push(Segment {
                pdu_id: q.pdu.id,
                set_id: q.pdu.pdu_set_id,
                bytes: b,
            });
        }
        self.unsent_bytes -= max_bytes - left;
        out
    }

    fn position(&self, pdu_id: u64) -> Option<usize> {
        self.items.iter().position(|q| q.pdu.id == pdu_id)
    }

    /// Marks segments delivered. Returns PDUs that completed.
    pub fn on_delivered(&mut self, segments: &[Segment]) -> Vec<Pdu> {
        let mut done = Vec::new();
        for s in segments {
            let Some(i) = self.position(s.pdu_id) else { continue };
            let q = &mut self.items[i];
            q.in_flight -= s.bytes;
            q.delivered += s.bytes;
            if q.delivered == q.pdu.bytes {
                done.push(self.items.remove(i).expect("index valid").pdu);
            }
        }
        done
    }

    /// Segments whose HARQ process gave up. The whole PDU is dropped from the
    /// queue (no ARQ). Returns the affected PDUs.
    pub fn on_lost(&mut self, segments: &[Segment]) -> Vec<Pdu> {
        let mut lost = Vec::new();
        for s in segments {
            if let Some(i) = self.position(s.pdu_id) {
                let q = self.items.remove(i).expect("index valid");
                self.unsent_bytes -= q.unsent as u64;
                lost.push(q.pdu);
            }
        }
        lost
    }

    fn remove_where(&mut self, mut pred: impl FnMut(&QueuedPdu) -> bool) -> Vec<Pdu> {
        let mut removed = Vec::new();
        let mut kept = VecDeque::with_capacity(self.items.len());
        for q in self.items.drain(..) {
            if pred(&q) {
                self.unsent_bytes -= q.unsent as u64;
                removed.push(q.pdu);
            } else {
                kept.push_back(q);
            }
        }
        self.items = kept;
        removed
    }

    /// Integrated handling: once a PDU of a set is lost, every PDU of that set
    /// still waiting for its first transmission is dropped.
    pub fn psihi_discard(&mut self, lost: &Pdu, profile: &QosFlowProfile) -> Vec<u64> {
        if !profile.psihi {
            return Vec::new();
        }
        let set = lost.pdu_set_id;
        self.remove_where(|q| q.pdu.pdu_set_id == set && q.in_flight == 0 && q.delivered == 0)
            .into_iter()
            .map(|p| p.id)
            .collect()
    }

    /// Expected sojourn of the newest queued byte given a drain rate.
    pub fn projected_sojourn_us(&self, now: Micros, drain_bytes_per_us: f64) -> Micros {
        let Some(head) = self.head() else { return 0 };
        let age = now - head.pdu.arrival_us;
        let drain = if drain_bytes_per_us > 0.0 {
            (self.unsent_bytes as f64 / drain_bytes_per_us).ceil() as Micros
        } else {
            Micros::MAX / 4
        };
        age + drain
    }

    /// Differentiated handling: while the projected sojourn exceeds the
    /// congestion threshold, drop whole not-yet-started PDU sets of the
    /// lowest importance present, oldest first. Sets of the top importance
    /// level are never dropped.
    pub fn psi_discard(
        &mut self,
        now: Micros,
        threshold_us: Micros,
        drain_bytes_per_us: f64,
        profile: &QosFlowProfile,
    ) -> Vec<u64> {
        let mut dropped_sets = Vec::new();
        if !profile.psi_discard {
            return dropped_sets;
        }
        let top = match self.items.iter().map(|q| q.pdu.psi).max() {
            Some(t) => t.max(Importance::HIGH),
            None => return dropped_sets,
        };
        while self.projected_sojourn_us(now, drain_bytes_per_us) > threshold_us {
            // candidate sets: untouched, below top importance
            let mut touched: HashSet<u64> = HashSet::new();
            let mut seen: BTreeMap<(Importance, usize), u64> = BTreeMap::new();
            for (i, q) in self.items.iter().enumerate() {
                if !q.fresh() || q.in_flight > 0 {
                    touched.insert(q.pdu.pdu_set_id);
                }
                if q.pdu.psi < top {
                    seen.entry((q.pdu.psi, i)).or_insert(q.pdu.pdu_set_id);
                }
            }
            let victim = seen.values().copied().find(|s| !touched.contains(s));
            let Some(set) = victim else { break };
            self.remove_where(|q| q.pdu.pdu_set_id == set);
            dropped_sets.push(set);
        }
        dropped_sets
    }

    /// Timer discard: PDUs older than the discard timer that have nothing in
    /// flight are removed; with PSIHI the rest of their sets follow.
    pub fn discard_expired(&mut self, now: Micros, profile: &QosFlowProfile) -> Vec<DiscardEvent> {
        let Some(timer) = profile.discard_timer_us() else {
            return Vec::new();
        };
        let expired = self.remove_where(|q| now - q.pdu.arrival_us > timer && q.in_flight == 0);
        let mut events: Vec<DiscardEvent> = expired
            .iter()
            .map(|p| DiscardEvent {
                time_us: now,
                pdu_id: p.id,
                set_id: p.pdu_set_id,
                cause: DiscardCause::Timer,
            })
            .collect();
        if profile.psihi {
            for p in &expired {
                for id in self.psihi_discard(p, profile) {
                    events.push(DiscardEvent {
                        time_us: now,
                        pdu_id: id,
                        set_id: p.pdu_set_id,
                        cause: DiscardCause::Psihi,
                    });
                }
            }
        }
        events
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SetStatus {
    pub total_bytes: u64,
    pub delivered_bytes: u64,
    pub lost: bool,
    pub arrival_us: Micros,
    pub completed_us: Option<Micros>,
}

/// Per-PDU-set outcome bookkeeping for PSER.
#[derive(Debug, Clone, Default)]
pub struct SetLedger {
    sets: BTreeMap<u64, SetStatus>,
}

impl SetLedger {
    pub fn register(&mut self, set_id: u64, total_bytes: u64, arrival_us: Micros) {
        self.sets.entry(set_id).or_insert(SetStatus {
            total_bytes,
            arrival_us,
            ..Default::default()
        });
    }

    pub fn delivered(&mut self, set_id: u64, bytes: u64, now: Micros) {
        if let Some(s) = self.sets.get_mut(&set_id) {
            s.delivered_bytes += bytes;
            if s.delivered_bytes >= s.total_bytes && !s.lost {
                s.completed_us.get_or_insert(now);
            }
        }
    }

    /// Marks a set lost; returns true only the first time.
    pub fn mark_lost(&mut self, set_id: u64) -> bool {
        match self.sets.get_mut(&set_id) {
            Some(s) if !s.lost => {
                s.lost = true;
                true
            }
            _ => false,
        }
    }

    pub fn get(&self, set_id: u64) -> Option<&SetStatus> {
        self.sets.get(&set_id)
    }

    pub fn total(&self) -> usize {
        self.sets.len()
    }

    pub fn lost(&self) -> usize {
        self.sets.values().filter(|s| s.lost).count()
    }

    pub fn pser(&self) -> f64 {
        if self.sets.is_empty() {
            0.0
        } else {
            self.lost() as f64 / self.total() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingConfig {
    /// One PDU set stream per QoS flow per DRB.
    OneOneOne,
    /// Many PDU sets in one QoS flow on one DRB.
    NOneOne,
    /// Many PDU sets across many QoS flows multiplexed onto one DRB.
    NNOne,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedPdu {
    pub pdu: Pdu,
    /// PDU set id as visible to the scheduler, if any.
    pub visible_set_id: Option<u64>,
    pub set_bytes: u32,
    pub psi: Importance,
    pub last_of_set: bool,
    pub end_of_burst: bool,
}

/// Attaches the per-PDU metadata the user plane passes down to the RAN.
/// Under N:N:1 set identities are hidden from the scheduler unless
/// `nn1_visible` is set.
pub fn annotate_metadata(pdus: &[Pdu], mapping: MappingConfig, nn1_visible: bool) -> Vec<AnnotatedPdu> {
    let visible = match mapping {
        MappingConfig::OneOneOne | MappingConfig::NOneOne => true,
        MappingConfig::NNOne => nn1_visible,
    };
    pdus.iter()
        .map(|p| AnnotatedPdu {
            visible_set_id: visible.then_some(p.pdu_set_id),
            set_bytes: p.set_bytes,
            psi: p.psi,
            last_of_set: p.last_of_set,
            end_of_burst: p.end_of_burst,
            pdu: p.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UaiMessage {
    pub flow_id: u32,
    pub expected_arrival_us: Micros,
    /// Measured period snapped to a small-denominator fraction of ms.
    pub periodicity_ms: (i64, i64),
    pub jitter_min_us: Micros,
    pub jitter_max_us: Micros,
    pub psi_levels: Vec<Importance>,
}

/// UE side assistance-information generator with a prohibit timer.
#[derive(Debug, Clone)]
pub struct UaiReporter {
    pub flow_id: u32,
    pub prohibit_us: Micros,
    last_sent: Option<Micros>,
    arrivals: VecDeque<Micros>,
    psi_seen: Vec<Importance>,
    window: usize,
}

impl UaiReporter {
    pub fn new(flow_id: u32, prohibit_us: Micros) -> Self {
        UaiReporter {
            flow_id,
            prohibit_us,
            last_sent: None,
            arrivals: VecDeque::new(),
            psi_seen: Vec::new(),
            window: 64,
        }
    }

    /// Feed the arrival of a data burst.
    pub fn observe(&mut self, arrival_us: Micros, psi: Importance) {
        if self.arrivals.len() == self.window {
            self.arrivals.pop_front();
        }
        self.arrivals.push_back(arrival_us);
        if !self.psi_seen.contains(&psi) {
            self.psi_seen.push(psi);
            self.psi_seen.sort();
        }
    }

    pub fn build_uai(&mut self, now: Micros) -> Option<UaiMessage> {
        if self.arrivals.len() < 2 {
            return None;
        }
        if let Some(t) = self.last_sent {
            if now - t < self.prohibit_us {
                return None;
            }
        }
        let first = *self.arrivals.front()?;
        let last = *self.arrivals.back()?;
        let n = (self.arrivals.len() - 1) as f64;
        let period_us = (last - first) as f64 / n;
        let period = best_rational(period_us / 1000.0, 16);
        let period_exact_us = period.0 as f64 * 1000.0 / period.1 as f64;
        let (mut lo, mut hi) = (Micros::MAX, Micros::MIN);
        for (k, &a) in self.arrivals.iter().enumerate() {
            let predicted = first as f64 + k as f64 * period_exact_us;
            let dev = (a as f64 - predicted).round() as Micros;
            lo = lo.min(dev);
            hi = hi.max(dev);
        }
        self.last_sent = Some(now);
        Some(UaiMessage {
            flow_id: self.flow_id,
            expected_arrival_us: (first as f64 + (n + 1.0) * period_exact_us).round() as Micros,
            periodicity_ms: period,
            jitter_min_us: lo,
            jitter_max_us: hi,
            psi_levels: self.psi_seen.clone(),
        })
    }
}

/// Closest fraction to `x` with denominator at most `max_den`.
pub fn best_rational(x: f64, max_den: i64) -> (i64, i64) {
    let mut best = (x.round() as i64, 1i64);
    let mut best_err = (x - best.0 as f64).abs();
    for den in 2..=max_den {
        let num = (x * den as f64).round() as i64;
        let err = (x - num as f64 / den as f64).abs();
        if err + 1e-12 < best_err {
            best = (num, den);
            best_err = err;
        }
    }
    let r = RationalMs::new(best.0, best.1);
    (*r.numer(), *r.denom())
}

/// Queue of a flow in one direction tagged with its profile.
#[derive(Debug, Clone)]
pub struct Flow {
    pub direction: Direction,
    pub profile: QosFlowProfile,
    pub queue: FlowQueue,
}
