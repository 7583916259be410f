use crate::engine::SlotType;
use crate::radio::{rbs_for_bits, tb_bits};
use crate::traffic::Direction;
use crate::Micros;

use super::{Allocation, RbPool};

#[derive(Debug, Clone, PartialEq)]
pub struct UlCandidate {
    pub ue: usize,
    pub xr: bool,
    /// Buffer size as known at the gNB (from the last usable BSR).
    pub reported_bytes: u64,
    pub mcs: u8,
    pub se: f64,
    /// Largest RB count that keeps the UE out of power limitation.
    pub max_rbs: u32,
    pub hol_delay_us: Micros,
    pub psdb_us: Micros,
    /// Smallest remaining time from a DSR, when one has been received.
    pub dsr_remaining_us: Option<Micros>,
}

impl UlCandidate {
    /// Larger is more urgent. A DSR overrides the HOL estimate.
    fn urgency(&self) -> f64 {
        let budget = self.psdb_us.max(1) as f64;
        match self.dsr_remaining_us {
            Some(rem) => 1.0 + (budget - rem.max(0) as f64) / budget,
            None => self.hol_delay_us.max(0) as f64 / budget,
        }
    }
}

/// Splits `avail` RBs over `needs`, proportional to `weights` when not all
/// fit, then hands leftovers out in list order.
fn proportional_share(avail: u32, needs: &[u32], weights: &[u64]) -> Vec<u32> {
    let total_need: u64 = needs.iter().map(|&n| n as u64).sum();
    if total_need <= avail as u64 {
        return needs.to_vec();
    }
    let wsum: u64 = weights.iter().sum::<u64>().max(1);
    let mut share: Vec<u32> = needs
        .iter()
        .zip(weights)
        .map(|(&n, &w)| ((avail as u128 * w as u128 / wsum as u128) as u32).min(n))
        .collect();
    let mut left = avail - share.iter().sum::<u32>();
    for (s, &n) in share.iter_mut().zip(needs) {
        let extra = left.min(n - *s);
        *s += extra;
        left -= extra;
    }
    share
}

/// Dynamic grants for one UL slot. XR UEs come before eMBB; inside each
/// group UEs are taken in urgency order (ties rotate with the slot index)
/// and share the RBs in proportion to their reported bytes.
pub fn allocate_ul(slot: u64, slot_type: SlotType, pool: &mut RbPool, candidates: &[UlCandidate]) -> Vec<Allocation> {
    let symbols = slot_type.data_symbols();
    let mut out = Vec::new();
    let n = candidates.len().max(1) as u64;
    for xr in [true, false] {
        let mut group: Vec<&UlCandidate> = candidates
            .iter()
            .filter(|c| c.xr == xr && c.reported_bytes > 0)
            .collect();
        group.sort_by(|a, b| {
            b.urgency()
                .total_cmp(&a.urgency())
                .then(((a.ue as u64 + n - slot % n) % n).cmp(&((b.ue as u64 + n - slot % n) % n)))
        });
        let needs: Vec<u32> = group
            .iter()
            .map(|c| rbs_for_bits(c.reported_bytes * 8, c.se, symbols).min(c.max_rbs.max(1)))
            .collect();
        let weights: Vec<u64> = group.iter().map(|c| c.reported_bytes).collect();
        let share = proportional_share(pool.remaining(), &needs, &weights);
        for (c, k) in group.iter().zip(share) {
            if k == 0 {
                continue;
            }
            let rbs = pool.take(k);
            let got: u32 = rbs.iter().map(|r| r.len).sum();
            out.push(Allocation {
                ue: c.ue,
                direction: Direction::Ul,
                slot,
                rbs,
                mcs: c.mcs,
                tb_bits: tb_bits(c.se, got, symbols),
                retransmission: false,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::allocations_disjoint;
    use crate::radio::MCS_SE;

    fn cand(ue: usize, bytes: u64) -> UlCandidate {
        UlCandidate {
            ue,
            xr: true,
            reported_bytes: bytes,
            mcs: 18,
            se: MCS_SE[18],
            max_rbs: 273,
            hol_delay_us: 0,
            psdb_us: 30_000,
            dsr_remaining_us: None,
        }
    }

    #[test]
    fn fits_when_underloaded() {
        let mut pool = RbPool::full(273);
        let a = allocate_ul(4, SlotType::Uplink, &mut pool, &[cand(0, 1000), cand(1, 2000)]);
        assert_eq!(a.len(), 2);
        for al in &a {
            let want = if al.ue == 0 { 1000 } else { 2000 };
            assert!(al.tb_bits >= want * 8);
        }
        assert!(allocations_disjoint(&a, 273));
    }

    #[test]
    fn proportional_when_overloaded() {
        let mut pool = RbPool::full(273);
        let a = allocate_ul(4, SlotType::Uplink, &mut pool, &[cand(0, 1_000_000), cand(1, 3_000_000)]);
        let rb: Vec<u32> = a.iter().map(|x| x.rb_count()).collect();
        assert_eq!(rb.iter().sum::<u32>(), 273);
        let r0 = a.iter().find(|x| x.ue == 0).unwrap().rb_count();
        assert!((r0 as i32 - 68).abs() <= 1);
    }

    #[test]
    fn power_cap_and_priority() {
        let mut capped = cand(0, 1_000_000);
        capped.max_rbs = 20;
        let mut embb = cand(1, 1_000_000);
        embb.xr = false;
        let mut pool = RbPool::full(273);
        let a = allocate_ul(4, SlotType::Uplink, &mut pool, &[embb, capped]);
        assert_eq!((a[0].ue, a[0].rb_count()), (0, 20));
        assert_eq!((a[1].ue, a[1].rb_count()), (1, 253));
    }

    #[test]
    fn dsr_goes_first() {
        let mut urgent = cand(1, 1_000_000);
        urgent.dsr_remaining_us = Some(3_000);
        let mut pool = RbPool::full(273);
        let a = allocate_ul(4, SlotType::Uplink, &mut pool, &[cand(0, 1_000_000), urgent]);
        assert_eq!(a[0].ue, 1);
    }

    #[test]
    fn share_oracle() {
        assert_eq!(proportional_share(10, &[3, 4], &[1, 1]), vec![3, 4]);
        assert_eq!(proportional_share(10, &[10, 10], &[1, 1]), vec![5, 5]);
        assert_eq!(proportional_share(10, &[2, 10], &[1, 1]), vec![2, 8]);
    }
}
