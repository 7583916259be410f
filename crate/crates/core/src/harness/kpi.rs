//! Satisfaction, capacity and CDF helpers.

use serde::Serialize;

use crate::Micros;

/// Satisfaction threshold on the in-budget frame fraction (strict).
pub const SATISFIED_FRACTION: f64 = 0.99;
/// Capacity threshold on the satisfied-UE ratio (inclusive).
pub const CAPACITY_RATIO: f64 = 0.90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FrameOutcome {
    pub arrival_us: Micros,
    /// `None` if the frame was lost or never completed.
    pub completed_us: Option<Micros>,
}

impl FrameOutcome {
    pub fn in_budget(&self, psdb_us: Micros) -> bool {
        self.completed_us.is_some_and(|c| c - self.arrival_us <= psdb_us)
    }
}

/// `None` when no frame was observed.
pub fn ue_satisfied(frames: &[FrameOutcome], psdb_us: Micros) -> Option<bool> {
    let ok = frames.iter().filter(|f| f.in_budget(psdb_us)).count();
    satisfied_from_counts(ok, frames.len())
}

pub fn satisfied_from_counts(in_budget: usize, total: usize) -> Option<bool> {
    if total == 0 {
        return None;
    }
    // integer comparison keeps the boundary exact: ok/total > 99/100
    Some(in_budget * 100 > total * 99)
}

/// Share of UEs satisfied; UEs without frames are left out.
pub fn satisfaction_ratio(flags: &[Option<bool>]) -> Option<f64> {
    let known: Vec<bool> = flags.iter().flatten().copied().collect();
    if known.is_empty() {
        return None;
    }
    Some(known.iter().filter(|&&b| b).count() as f64 / known.len() as f64)
}

fn meets_capacity(ratio: f64) -> bool {
    // 0.9 is not exact in binary; allow rounding noise from the division
    ratio >= CAPACITY_RATIO - 1e-12
}

/// Largest load whose satisfied ratio is at least 90 %; 0 if none.
pub fn xr_capacity(ratio_by_load: &[(usize, f64)]) -> usize {
    ratio_by_load
        .iter()
        .filter(|(_, r)| meets_capacity(*r))
        .map(|&(n, _)| n)
        .max()
        .unwrap_or(0)
}

/// Empirical CDF as sorted `(value, fraction ≤ value)` with one row per
/// distinct value; the last fraction is exactly 1.
pub fn emit_cdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        let frac = if i + 1 == n { 1.0 } else { (i + 1) as f64 / n as f64 };
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = frac,
            _ => out.push((x, frac)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(ok: usize, total: usize) -> Vec<FrameOutcome> {
        (0..total)
            .map(|i| FrameOutcome {
                arrival_us: 0,
                completed_us: Some(if i < ok { 1_000 } else { 50_000 }),
            })
            .collect()
    }

    #[test]
    fn strict_boundary() {
        assert_eq!(ue_satisfied(&frames(991, 1000), 10_000), Some(true));
        assert_eq!(ue_satisfied(&frames(990, 1000), 10_000), Some(false));
        assert_eq!(ue_satisfied(&frames(100, 100), 10_000), Some(true));
        assert_eq!(ue_satisfied(&[], 10_000), None);
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(xr_capacity(&[(7, 1.0), (8, 0.92), (9, 0.85)]), 8);
        assert_eq!(xr_capacity(&[(1, 0.5), (2, 0.1)]), 0);
        assert_eq!(xr_capacity(&[(9, 9.0 / 10.0), (10, 0.8)]), 9);
        assert_eq!(xr_capacity(&[(10, 27.0 / 30.0)]), 10);
    }

    #[test]
    fn cdf_shape() {
        assert_eq!(emit_cdf(&[0.0, 0.0, 0.0, 5.0]), vec![(0.0, 0.75), (5.0, 1.0)]);
        assert_eq!(emit_cdf(&[3.0]), vec![(3.0, 1.0)]);
        assert!(emit_cdf(&[]).is_empty());
    }

    #[test]
    fn ratio_skips_unknown() {
        assert_eq!(satisfaction_ratio(&[Some(true), None, Some(false)]), Some(0.5));
        assert_eq!(satisfaction_ratio(&[None]), None);
    }
}
