use crate::engine::SlotType;
use crate::radio::{rbs_for_bits, tb_bits};
use crate::traffic::Direction;
use crate::Micros;

use super::metrics::{mlwdf_metric, pduset_metric, pf_metric, PduSetScore};
use super::{Allocation, RbPool, SchedulerKind, SchedulerPolicy};

/// Head PDU set of a UE's queue as seen by the scheduler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadSet {
    pub sent_bits: u64,
    pub set_bits: u64,
    pub remaining_us: Micros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlCandidate {
    pub ue: usize,
    pub xr: bool,
    /// Ignored when `full_buffer` is set.
    pub queued_bytes: u64,
    pub full_buffer: bool,
    pub mcs: u8,
    pub se: f64,
    pub avg_throughput: f64,
    pub hol_delay_us: Micros,
    pub psdb_us: Micros,
    pub head_set: Option<HeadSet>,
}

fn ordered(mut scored: Vec<(f64, usize)>) -> Vec<usize> {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Candidate indices (into `cands`) in descending metric order.
pub(crate) fn rank_xr(cands: &[&DlCandidate], policy: &SchedulerPolicy, inst_rate: impl Fn(&DlCandidate) -> f64) -> Vec<usize> {
    let scored: Vec<(f64, usize)> = match policy.policy {
        SchedulerKind::ProportionalFair => cands
            .iter()
            .enumerate()
            .map(|(i, c)| (pf_metric(inst_rate(c), c.avg_throughput), i))
            .collect(),
        SchedulerKind::Mlwdf => cands
            .iter()
            .enumerate()
            .map(|(i, c)| (mlwdf_metric(c.hol_delay_us, c.psdb_us, inst_rate(c), c.avg_throughput), i))
            .collect(),
        SchedulerKind::PduSetAware => {
            let raw: Vec<(PduSetScore, usize)> = cands
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let head = c.head_set.unwrap_or(HeadSet {
                        sent_bits: 0,
                        set_bits: c.queued_bytes * 8,
                        remaining_us: c.psdb_us - c.hol_delay_us,
                    });
                    (
                        pduset_metric(head.sent_bits, head.set_bits, head.remaining_us, policy.pduset_alpha, policy.epsilon_time_us()),
                        i,
                    )
                })
                .collect();
            let min_pos = raw
                .iter()
                .filter_map(|(s, _)| match s {
                    PduSetScore::Score(v) if *v > 0.0 => Some(*v),
                    _ => None,
                })
                .fold(f64::INFINITY, f64::min);
            let floor = if min_pos.is_finite() { min_pos } else { 1.0 } * policy.expired_floor_factor;
            raw.into_iter()
                .filter_map(|(s, i)| match s {
                    PduSetScore::Score(v) => Some((v, i)),
                    PduSetScore::Expired => Some((floor, i)),
                    PduSetScore::Skip => None,
                })
                .collect()
        }
    };
    ordered(scored)
}

/// One downlink slot: XR UEs first in metric order, each served greedily up
/// to its queue, then eMBB UEs by proportional fairness in what is left.
pub fn allocate_dl(
    slot: u64,
    slot_type: SlotType,
    pool: &mut RbPool,
    candidates: &[DlCandidate],
    policy: &SchedulerPolicy,
    n_rb_total: u32,
) -> Vec<Allocation> {
    let symbols = slot_type.data_symbols();
    let inst = |c: &DlCandidate| tb_bits(c.se, n_rb_total, symbols) as f64;
    let mut out = Vec::new();

    let xr: Vec<&DlCandidate> = candidates.iter().filter(|c| c.xr && (c.full_buffer || c.queued_bytes > 0)).collect();
    let embb: Vec<&DlCandidate> = candidates.iter().filter(|c| !c.xr && (c.full_buffer || c.queued_bytes > 0)).collect();

    let xr_order = rank_xr(&xr, policy, inst);
    let embb_order = ordered(
        embb.iter()
            .enumerate()
            .map(|(i, c)| (pf_metric(inst(c), c.avg_throughput), i))
            .collect(),
    );

    let groups = [(xr, xr_order), (embb, embb_order)];
    for (group, order) in groups.iter() {
        for &i in order {
            if pool.remaining() == 0 {
                return out;
            }
            let c = group[i];
            let need = if c.full_buffer {
                pool.remaining()
            } else {
                rbs_for_bits(c.queued_bytes * 8, c.se, symbols)
            };
            let rbs = pool.take(need.min(pool.remaining()));
            let n: u32 = rbs.iter().map(|r| r.len).sum();
            if n == 0 {
                continue;
            }
            out.push(Allocation {
                ue: c.ue,
                direction: Direction::Dl,
                slot,
                rbs,
                mcs: c.mcs,
                tb_bits: tb_bits(c.se, n, symbols),
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
    use crate::radio::{tb_bits, MCS_SE};

    fn xr(ue: usize, bytes: u64) -> DlCandidate {
        DlCandidate {
            ue,
            xr: true,
            queued_bytes: bytes,
            full_buffer: false,
            mcs: 27,
            se: MCS_SE[27],
            avg_throughput: 1000.0,
            hol_delay_us: 2_000,
            psdb_us: 10_000,
            head_set: None,
        }
    }

    fn embb(ue: usize) -> DlCandidate {
        DlCandidate {
            xr: false,
            full_buffer: true,
            ..xr(ue, 0)
        }
    }

    #[test]
    fn hard_priority_split() {
        // queue that needs exactly 50 RBs
        let bytes = tb_bits(MCS_SE[27], 50, 12) / 8;
        let mut pool = RbPool::full(273);
        let allocs = allocate_dl(0, SlotType::Downlink, &mut pool, &[embb(1), xr(0, bytes)], &SchedulerPolicy::default(), 273);
        assert_eq!(allocs.len(), 2);
        assert_eq!((allocs[0].ue, allocs[0].rb_count()), (0, 50));
        assert_eq!((allocs[1].ue, allocs[1].rb_count()), (1, 223));
        assert!(allocations_disjoint(&allocs, 273));
    }

    #[test]
    fn no_candidates() {
        let mut pool = RbPool::full(273);
        assert!(allocate_dl(0, SlotType::Downlink, &mut pool, &[], &SchedulerPolicy::default(), 273).is_empty());
        let mut pool = RbPool::full(273);
        assert!(allocate_dl(0, SlotType::Downlink, &mut pool, &[xr(0, 0)], &SchedulerPolicy::default(), 273).is_empty());
    }

    #[test]
    fn pduset_prefers_smaller_budget() {
        let policy = SchedulerPolicy {
            policy: SchedulerKind::PduSetAware,
            ..Default::default()
        };
        let mut a = xr(0, 200_000);
        let mut b = xr(1, 200_000);
        a.head_set = Some(HeadSet {
            sent_bits: 0,
            set_bits: 1_600_000,
            remaining_us: 8_000,
        });
        b.head_set = Some(HeadSet {
            remaining_us: 4_000,
            ..a.head_set.unwrap()
        });
        let mut pool = RbPool::full(273);
        let allocs = allocate_dl(0, SlotType::Downlink, &mut pool, &[a, b], &policy, 273);
        assert_eq!(allocs[0].ue, 1);
    }

    #[test]
    fn expired_sets_still_get_floor() {
        let policy = SchedulerPolicy {
            policy: SchedulerKind::PduSetAware,
            ..Default::default()
        };
        let mut late = xr(0, 1000);
        late.head_set = Some(HeadSet {
            sent_bits: 0,
            set_bits: 8000,
            remaining_us: -5,
        });
        let mut pool = RbPool::full(273);
        let allocs = allocate_dl(0, SlotType::Downlink, &mut pool, &[late.clone(), xr(1, 1000)], &policy, 273);
        assert_eq!(allocs.iter().map(|a| a.ue).collect::<Vec<_>>(), vec![1, 0]);
    }
}
