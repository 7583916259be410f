use crate::engine::{slot_type, SlotType, SLOT_US};
use crate::error::{Error, Result};
use crate::time::RationalMs;
use crate::Micros;

use super::RbRange;

/// Spacing of UL slots in the DDDSU pattern.
const UL_SPACING_SLOTS: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct CgConfig {
    pub period: RationalMs,
    /// Start of the first period.
    pub offset: RationalMs,
    pub occasions_per_period: u32,
    pub rb_start: u32,
    pub rb_per_occasion: u32,
    pub mcs: u8,
    pub uto_uci_window: u32,
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.occasions_per_period == 0 {
            return Err(Error::config("cg.occasions_per_period", "must be at least 1"));
        }
        if self.uto_uci_window == 0 {
            return Err(Error::config("cg.uto_uci_window", "must be at least 1"));
        }
        if self.rb_per_occasion == 0 {
            return Err(Error::config("cg.rb_per_occasion", "must be at least 1"));
        }
        let span = RationalMs::new(self.occasions_per_period as i64 * UL_SPACING_SLOTS as i64 * SLOT_US, 1000);
        if self.period < span {
            return Err(Error::config(
                "cg.periodicity_ms",
                format!("{} occasions need at least {} ms per period", self.occasions_per_period, span),
            ));
        }
        Ok(())
    }

    pub fn rbs(&self) -> RbRange {
        RbRange {
            start: self.rb_start,
            len: self.rb_per_occasion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CgOccasion {
    pub slot: u64,
    pub period: u64,
    pub index_in_period: u32,
    pub rbs: RbRange,
}

fn first_ul_slot_at_or_after(t: RationalMs) -> u64 {
    let slot_ms = RationalMs::new(SLOT_US, 1000);
    let mut s = (t / slot_ms).ceil().to_integer().max(0) as u64;
    while slot_type(s) != SlotType::Uplink {
        s += 1;
    }
    s
}

/// All occasions whose slot starts before `horizon_us`.
pub fn cg_occasions(cfg: &CgConfig, horizon_us: Micros) -> Result<Vec<CgOccasion>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for period in 0u64.. {
        let start = cfg.offset + cfg.period * period as i64;
        let first = first_ul_slot_at_or_after(start);
        if first as i64 * SLOT_US >= horizon_us {
            break;
        }
        for k in 0..cfg.occasions_per_period {
            let slot = first + k as u64 * UL_SPACING_SLOTS;
            if slot as i64 * SLOT_US >= horizon_us {
                break;
            }
            out.push(CgOccasion {
                slot,
                period,
                index_in_period: k,
                rbs: cfg.rbs(),
            });
        }
    }
    Ok(out)
}

/// Drains `buffer_bytes` through the next occasions in order; `true` marks an
/// occasion that would carry no payload.
pub fn build_uto_uci(buffer_bytes: u64, capacities: &[u64], window: usize) -> Vec<bool> {
    let mut left = buffer_bytes;
    capacities
        .iter()
        .take(window)
        .map(|&cap| {
            if left == 0 {
                true
            } else {
                left = left.saturating_sub(cap);
                false
            }
        })
        .collect()
}

pub fn bitmap_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// RBs freed by a UTO-UCI bitmap. `occasions` are those the bitmap refers to,
/// chronologically; occasions before `now_slot` are ignored.
pub fn reclaim_unused(bits: &[bool], occasions: &[CgOccasion], now_slot: u64) -> Vec<(u64, RbRange)> {
    bits.iter()
        .zip(occasions)
        .filter(|(&unused, occ)| unused && occ.slot >= now_slot)
        .map(|(_, occ)| (occ.slot, occ.rbs))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::{ms, ms_frac};

    fn cfg(occ: u32) -> CgConfig {
        CgConfig {
            period: ms_frac(50, 3),
            offset: ms(0),
            occasions_per_period: occ,
            rb_start: 0,
            rb_per_occasion: 20,
            mcs: 10,
            uto_uci_window: 4,
        }
    }

    #[test]
    fn legacy_and_multi_pusch() {
        let one = cg_occasions(&cfg(1), 100_000).unwrap();
        // periods start at 0, 16.67, 33.33 ms → UL slots 4, 34, 69
        assert_eq!(one.iter().take(3).map(|o| o.slot).collect::<Vec<_>>(), vec![4, 34, 69]);
        let four = cg_occasions(&cfg(4), 100_000).unwrap();
        assert_eq!(four.iter().take(4).map(|o| o.slot).collect::<Vec<_>>(), vec![4, 9, 14, 19]);
        assert!(four.iter().all(|o| slot_type(o.slot) == SlotType::Uplink));
    }

    #[test]
    fn no_drift_over_ten_seconds() {
        let occ = cg_occasions(&cfg(1), 10_000_000).unwrap();
        assert_eq!(occ.len(), 600);
        for o in &occ {
            let start = ms_frac(50, 3) * o.period as i64;
            let start_us = (start * 1000).ceil().to_integer();
            let t = o.slot as i64 * SLOT_US;
            assert!(t >= start_us && t - start_us < 5 * SLOT_US);
        }
    }

    #[test]
    fn too_many_occasions_rejected() {
        assert!(cg_occasions(&cfg(7), 100_000).is_err());
        assert!(cg_occasions(&cfg(6), 100_000).is_ok());
    }

    #[test]
    fn uto_uci_examples() {
        assert_eq!(bitmap_string(&build_uto_uci(0, &[100; 4], 4)), "1111");
        assert_eq!(bitmap_string(&build_uto_uci(200, &[100; 4], 4)), "0011");
        assert_eq!(bitmap_string(&build_uto_uci(201, &[100; 4], 4)), "0001");
        assert_eq!(bitmap_string(&build_uto_uci(1000, &[100; 4], 4)), "0000");
    }

    #[test]
    fn reclaim() {
        let occ = cg_occasions(&cfg(4), 100_000).unwrap();
        let all = reclaim_unused(&[true; 4], &occ[..4], 0);
        assert_eq!(all.len(), 4);
        assert!(reclaim_unused(&[false; 4], &occ[..4], 0).is_empty());
        // the first occasion is already past
        assert_eq!(reclaim_unused(&[true; 4], &occ[..4], 5).len(), 3);
    }
}
