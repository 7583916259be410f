//! Uplink buffer status and delay status reporting.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BsTableKind {
    Short,
    Long,
    RefinedLong,
}

/// What the UE uses to report its buffer. `Ideal` gives the gNB the exact
/// byte count for free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BsrFormat {
    Ideal,
    Short,
    Long,
    RefinedLong,
}

impl BsrFormat {
    pub fn name(self) -> &'static str {
        match self {
            BsrFormat::Ideal => "ideal",
            BsrFormat::Short => "short",
            BsrFormat::Long => "long",
            BsrFormat::RefinedLong => "refined_long",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BsTable {
    pub kind: BsTableKind,
    pub entries: Vec<u64>,
}

impl BsTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_bytes(&self) -> u64 {
        *self.entries.last().expect("table has entries")
    }

    pub fn bytes(&self, index: usize) -> u64 {
        self.entries[index]
    }

    /// Per-index growth factor of the geometric part.
    pub fn step_ratio(&self) -> f64 {
        let n = self.entries.len();
        (self.entries[n - 1] as f64 / self.entries[1] as f64).powf(1.0 / (n - 2) as f64)
    }
}

/// Entry 0 is zero; entries 1..n are geometric from `b_min` to `b_max`,
/// rounded to bytes with a minimum step of one byte.
pub fn gen_bs_table(kind: BsTableKind, b_min: u64, b_max: u64, n: usize) -> Result<BsTable> {
    if b_min == 0 || b_min >= b_max {
        return Err(Error::config("bsr.table", "need 0 < b_min < b_max"));
    }
    if n < 3 {
        return Err(Error::config("bsr.table", "need at least 3 entries"));
    }
    let ratio = b_max as f64 / b_min as f64;
    let mut entries = Vec::with_capacity(n);
    entries.push(0u64);
    for k in 1..n {
        let v = (b_min as f64 * ratio.powf((k - 1) as f64 / (n - 2) as f64)).round() as u64;
        let prev = *entries.last().expect("non-empty");
        entries.push(v.max(prev + 1));
    }
    if *entries.last().expect("non-empty") != b_max {
        return Err(Error::config("bsr.table", "too many entries for the byte range"));
    }
    Ok(BsTable { kind, entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsTableBounds {
    pub short_min: u64,
    pub short_max: u64,
    pub long_min: u64,
    pub long_max: u64,
    pub refined_min: u64,
    pub refined_max: u64,
}

impl Default for BsTableBounds {
    fn default() -> Self {
        BsTableBounds {
            short_min: 10,
            short_max: 150_000,
            long_min: 10,
            long_max: 81_000_000,
            refined_min: 10,
            refined_max: 300_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BsTables {
    pub short: BsTable,
    pub long: BsTable,
    pub refined: BsTable,
}

impl BsTables {
    pub fn new(b: &BsTableBounds) -> Result<Self> {
        Ok(BsTables {
            short: gen_bs_table(BsTableKind::Short, b.short_min, b.short_max, 32)?,
            long: gen_bs_table(BsTableKind::Long, b.long_min, b.long_max, 256)?,
            refined: gen_bs_table(BsTableKind::RefinedLong, b.refined_min, b.refined_max, 256)?,
        })
    }

    pub fn get(&self, kind: BsTableKind) -> &BsTable {
        match kind {
            BsTableKind::Short => &self.short,
            BsTableKind::Long => &self.long,
            BsTableKind::RefinedLong => &self.refined,
        }
    }
}

impl Default for BsTables {
    fn default() -> Self {
        BsTables::new(&BsTableBounds::default()).expect("default bounds are valid")
    }
}

/// Smallest index whose entry covers `buffer_bytes`; the top index when the
/// buffer exceeds the table.
pub fn quantize_bsr(buffer_bytes: u64, table: &BsTable) -> usize {
    table
        .entries
        .partition_point(|&e| e < buffer_bytes)
        .min(table.len() - 1)
}

/// Refined table while the buffer fits in it, long table otherwise.
pub fn select_table(buffer_bytes: u64, refined_configured: bool, tables: &BsTables) -> BsTableKind {
    if refined_configured && buffer_bytes <= tables.refined.max_bytes() {
        BsTableKind::RefinedLong
    } else {
        BsTableKind::Long
    }
}

/// MAC CE bytes a BSR occupies inside the transport block.
pub fn bsr_ce_bytes(format: BsrFormat) -> u32 {
    match format {
        BsrFormat::Ideal => 0,
        BsrFormat::Short => 4,
        BsrFormat::Long | BsrFormat::RefinedLong => 8,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BsrReport {
    pub lcg_id: u8,
    pub table: Option<BsTableKind>,
    pub index: usize,
    /// Bytes the gNB reads from the report.
    pub reported_bytes: u64,
    pub time_us: Micros,
}

/// Builds the report a UE with `buffer_bytes` sends under `format`.
pub fn make_bsr(format: BsrFormat, buffer_bytes: u64, tables: &BsTables, lcg_id: u8, time_us: Micros) -> BsrReport {
    let kind = match format {
        BsrFormat::Ideal => {
            return BsrReport {
                lcg_id,
                table: None,
                index: 0,
                reported_bytes: buffer_bytes,
                time_us,
            }
        }
        BsrFormat::Short => BsTableKind::Short,
        BsrFormat::Long => BsTableKind::Long,
        BsrFormat::RefinedLong => select_table(buffer_bytes, true, tables),
    };
    let table = tables.get(kind);
    let index = quantize_bsr(buffer_bytes, table);
    BsrReport {
        lcg_id,
        table: Some(kind),
        index,
        reported_bytes: table.bytes(index),
        time_us,
    }
}

/// Padding added to fill a transport block.
pub fn realized_overhead(tb_capacity_bytes: u64, served_bytes: u64) -> u64 {
    tb_capacity_bytes.saturating_sub(served_bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DsrItem {
    pub pdu_id: u64,
    pub deadline_us: Micros,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DsrReport {
    pub lcg_id: u8,
    /// Remaining time before discard of the most urgent buffered data,
    /// referenced to the scheduled transmission instant.
    pub smallest_remaining_us: Micros,
    pub bytes_below_threshold: u64,
    pub reference_time_us: Micros,
}

/// Fires when some buffered PDU not yet covered by a DSR has at most
/// `threshold_us` left before discard. Values refer to `tx_time_us`, the
/// slot of the grant carrying the report. Covered PDUs are added to
/// `reported`.
pub fn trigger_dsr(
    buffered: &[DsrItem],
    reported: &mut HashSet<u64>,
    threshold_us: Micros,
    now_us: Micros,
    tx_time_us: Micros,
    lcg_id: u8,
) -> Option<DsrReport> {
    let fired = buffered
        .iter()
        .any(|p| !reported.contains(&p.pdu_id) && p.deadline_us - now_us <= threshold_us);
    if !fired {
        return None;
    }
    let mut smallest = Micros::MAX;
    let mut bytes = 0;
    for p in buffered {
        let remaining = (p.deadline_us - tx_time_us).max(0);
        smallest = smallest.min(remaining);
        if p.deadline_us - now_us <= threshold_us {
            bytes += p.bytes;
            reported.insert(p.pdu_id);
        }
    }
    Some(DsrReport {
        lcg_id,
        smallest_remaining_us: smallest,
        bytes_below_threshold: bytes,
        reference_time_us: tx_time_us,
    })
}

/// A DSR riding a PUSCH: a HARQ retransmission carries the same content as
/// the first transmission.
#[derive(Debug, Clone, Default)]
pub struct DsrCarrier {
    in_flight: Option<DsrReport>,
}

impl DsrCarrier {
    pub fn send(&mut self, report: DsrReport) -> &DsrReport {
        self.in_flight.insert(report)
    }

    pub fn retransmit(&self) -> Option<&DsrReport> {
        self.in_flight.as_ref()
    }

    pub fn acked(&mut self) {
        self.in_flight = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_are_valid() {
        let t = BsTables::default();
        for table in [&t.short, &t.long, &t.refined] {
            assert_eq!(table.entries[0], 0);
            assert!(table.entries.windows(2).all(|w| w[0] < w[1]));
        }
        assert_eq!(t.short.len(), 32);
        assert_eq!(t.long.len(), 256);
        assert_eq!(t.refined.len(), 256);
        assert_eq!(t.short.max_bytes(), 150_000);
        assert_eq!(t.long.max_bytes(), 81_000_000);
        assert_eq!(t.refined.max_bytes(), 300_000);
    }

    #[test]
    fn step_ratios() {
        let t = BsTables::default();
        assert!((t.short.step_ratio() - 15_000f64.powf(1.0 / 30.0)).abs() < 1e-9);
        assert!((t.short.step_ratio() - 1.378).abs() < 1e-3);
        assert!(t.refined.step_ratio() < t.long.step_ratio());
    }

    #[test]
    fn invalid_bounds() {
        assert!(gen_bs_table(BsTableKind::Short, 0, 10, 32).is_err());
        assert!(gen_bs_table(BsTableKind::Short, 100, 10, 32).is_err());
        assert!(gen_bs_table(BsTableKind::Short, 10, 100, 2).is_err());
    }

    #[test]
    fn quantize_rounds_up() {
        let t = BsTables::default().short;
        assert_eq!(quantize_bsr(0, &t), 0);
        let k = 12;
        assert_eq!(quantize_bsr(t.bytes(k), &t), k);
        assert_eq!(quantize_bsr(t.bytes(k) + 1, &t), k + 1);
        assert_eq!(quantize_bsr(10_000_000, &t), t.len() - 1);
    }

    #[test]
    fn table_selection() {
        let t = BsTables::default();
        assert_eq!(select_table(50_000, true, &t), BsTableKind::RefinedLong);
        assert_eq!(select_table(1_000_000, true, &t), BsTableKind::Long);
        assert_eq!(select_table(50_000, false, &t), BsTableKind::Long);
    }

    #[test]
    fn padding_from_round_up() {
        let t = BsTables::default().long;
        let k = 100;
        let exact = make_bsr(BsrFormat::Long, t.bytes(k), &BsTables::default(), 0, 0);
        assert_eq!(realized_overhead(exact.reported_bytes, t.bytes(k)), 0);
        let over = make_bsr(BsrFormat::Long, t.bytes(k) + 1, &BsTables::default(), 0, 0);
        assert_eq!(over.index, k + 1);
        assert_eq!(
            realized_overhead(over.reported_bytes, t.bytes(k) + 1),
            t.bytes(k + 1) - (t.bytes(k) + 1)
        );
        // grant smaller than the buffer: no padding
        assert_eq!(realized_overhead(5_000, 20_000), 0);
    }

    #[test]
    fn dsr_fires_at_threshold_crossing() {
        let item = DsrItem {
            pdu_id: 1,
            deadline_us: 30_000,
            bytes: 1500,
        };
        let mut reported = HashSet::new();
        let first = (0..=30_000)
            .step_by(500)
            .find(|&now| trigger_dsr(&[item], &mut reported.clone(), 10_000, now, now, 0).is_some());
        assert_eq!(first, Some(20_000));
        let r = trigger_dsr(&[item], &mut reported, 10_000, 20_000, 22_000, 0).unwrap();
        assert_eq!(r.smallest_remaining_us, 8_000);
        assert_eq!(r.bytes_below_threshold, 1500);
        // same data is not reported twice
        assert!(trigger_dsr(&[item], &mut reported, 10_000, 21_000, 22_000, 0).is_none());
    }

    #[test]
    fn dsr_nothing_urgent() {
        let item = DsrItem {
            pdu_id: 1,
            deadline_us: 100_000,
            bytes: 10,
        };
        assert!(trigger_dsr(&[item], &mut HashSet::new(), 10_000, 0, 0, 0).is_none());
    }

    #[test]
    fn dsr_retransmission_keeps_first_grant_reference() {
        let items = [DsrItem {
            pdu_id: 7,
            deadline_us: 25_000,
            bytes: 900,
        }];
        let mut carrier = DsrCarrier::default();
        let report = trigger_dsr(&items, &mut HashSet::new(), 10_000, 16_000, 17_500, 0).unwrap();
        carrier.send(report.clone());
        // PUSCH fails; retransmission four milliseconds later
        let re = carrier.retransmit().unwrap();
        assert_eq!(re, &report);
        assert_eq!(re.reference_time_us, 17_500);
        assert_eq!(re.smallest_remaining_us, 7_500);
        carrier.acked();
        assert!(carrier.retransmit().is_none());
    }
}
