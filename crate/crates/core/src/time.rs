//! Exact rational time used where sub-millisecond drift matters
//! (frame periodicity, fractional DRX cycles, CG periodicities).

use num_rational::Ratio;

use crate::engine::SLOT_US;
use crate::Micros;

/// Milliseconds as an exact fraction.
pub type RationalMs = Ratio<i64>;

pub fn ms(n: i64) -> RationalMs {
    Ratio::from_integer(n)
}

pub fn ms_frac(num: i64, den: i64) -> RationalMs {
    Ratio::new(num, den)
}

/// Floor to whole microseconds.
pub fn to_micros(t: RationalMs) -> Micros {
    (t * 1000).floor().to_integer()
}

pub fn from_micros(us: Micros) -> RationalMs {
    Ratio::new(us, 1000)
}

/// Start of the slot containing `t`.
pub fn floor_to_slot(t: RationalMs) -> Micros {
    let us = to_micros(t);
    us.div_euclid(SLOT_US) * SLOT_US
}

pub fn to_f64_ms(t: RationalMs) -> f64 {
    *t.numer() as f64 / *t.denom() as f64
}
