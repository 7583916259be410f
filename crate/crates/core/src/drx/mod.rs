//! Connected-mode DRX with integer or fractional cycles, the adaptive DRX
//! controller and the UE power model.

mod adrx;
mod power;

pub use adrx::{AdrxConfig, AdrxController, AdrxDecision, AdrxMode, CycleFeedback, FrameSample};
pub use power::{classify_trace, power_for_run, power_saving_gain, Activity, PowerModel, PowerState};

use crate::engine::SLOT_US;
use crate::error::{Error, Result};
use crate::time::{floor_to_slot, ms, to_micros, RationalMs};
use crate::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShortCycle {
    pub cycle: RationalMs,
    /// Number of short cycles before falling back to the long cycle.
    pub timer_cycles: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrxConfig {
    pub cycle: RationalMs,
    pub on_duration: RationalMs,
    pub inactivity: RationalMs,
    pub start_offset: RationalMs,
    pub short_cycle: Option<ShortCycle>,
    /// Wake up for potential UL retransmissions of configured grants.
    pub retx_monitoring: bool,
}

impl DrxConfig {
    /// DRX(cycle, on, inactivity) in whole milliseconds.
    pub fn integer(cycle_ms: i64, on_ms: i64, inactivity_ms: i64) -> Self {
        DrxConfig {
            cycle: ms(cycle_ms),
            on_duration: ms(on_ms),
            inactivity: ms(inactivity_ms),
            start_offset: ms(0),
            short_cycle: None,
            retx_monitoring: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let zero = ms(0);
        if self.cycle <= zero {
            return Err(Error::config("drx.cycle_ms", "must be positive"));
        }
        if self.on_duration <= zero || self.on_duration > self.cycle {
            return Err(Error::config("drx.on_duration_ms", "must be positive and at most the cycle"));
        }
        if self.inactivity < zero {
            return Err(Error::config("drx.inactivity_ms", "must not be negative"));
        }
        if self.start_offset < zero {
            return Err(Error::config("drx.start_offset_ms", "must not be negative"));
        }
        if let Some(sc) = self.short_cycle {
            if sc.cycle <= zero || sc.cycle > self.cycle || self.on_duration > sc.cycle || sc.timer_cycles == 0 {
                return Err(Error::config("drx.short_cycle_ms", "must fit between on-duration and the long cycle"));
            }
        }
        Ok(())
    }

    /// Exact start of on-duration `k`.
    pub fn start_exact(&self, k: u64) -> RationalMs {
        self.start_offset + self.cycle * k as i64
    }

    pub fn start_slot(&self, k: u64) -> u64 {
        (floor_to_slot(self.start_exact(k)) / SLOT_US) as u64
    }

    pub fn on_duration_slots(&self) -> u64 {
        slots_ceil(self.on_duration)
    }

    pub fn inactivity_slots(&self) -> u64 {
        slots_ceil(self.inactivity)
    }
}

fn slots_ceil(t: RationalMs) -> u64 {
    let us = (t * 1000).ceil().to_integer();
    ((us + SLOT_US - 1) / SLOT_US).max(0) as u64
}

/// Slot-floored start times of the first `n` on-durations.
pub fn on_duration_starts(cfg: &DrxConfig, n: usize) -> Vec<Micros> {
    (0..n as u64).map(|k| floor_to_slot(cfg.start_exact(k))).collect()
}

/// Change per cycle of the gap between on-duration start and frame arrival.
pub fn drift_per_cycle(cycle: RationalMs, frame_period: RationalMs) -> RationalMs {
    cycle - frame_period
}

/// Exact `start_k − arrival_k` for zero-jitter frames arriving at
/// `first_frame + k·frame_period`.
pub fn start_arrival_offsets(cfg: &DrxConfig, first_frame: RationalMs, frame_period: RationalMs, n: usize) -> Vec<RationalMs> {
    (0..n as u64)
        .map(|k| cfg.start_exact(k) - (first_frame + frame_period * k as i64))
        .collect()
}

/// Offset wrapped into `[0, cycle)`, as seen by a UE that only looks at the
/// current cycle.
pub fn wrap_offset(offset: RationalMs, cycle: RationalMs) -> RationalMs {
    let q = (offset / cycle).floor();
    offset - cycle * q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrxMode {
    OnDuration,
    InactivityExtended,
    Sleep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrxState {
    next_cycle: u64,
    on_end: u64,
    inactivity_end: u64,
    short_starts: Vec<u64>,
    was_extended: bool,
    mode: DrxMode,
}

impl Default for DrxState {
    fn default() -> Self {
        DrxState::new()
    }
}

impl DrxState {
    pub fn new() -> Self {
        DrxState {
            next_cycle: 0,
            on_end: 0,
            inactivity_end: 0,
            short_starts: Vec::new(),
            was_extended: false,
            mode: DrxMode::Sleep,
        }
    }

    pub fn mode(&self) -> DrxMode {
        self.mode
    }

    pub fn next_cycle_index(&self) -> u64 {
        self.next_cycle
    }

    /// Advances timers to `slot` and reports whether the UE monitors PDCCH in it.
    pub fn begin_slot(&mut self, cfg: &DrxConfig, slot: u64) -> bool {
        let on = cfg.on_duration_slots();
        while cfg.start_slot(self.next_cycle) <= slot {
            let s = cfg.start_slot(self.next_cycle);
            self.on_end = self.on_end.max(s + on);
            self.next_cycle += 1;
            self.short_starts.clear();
        }
        while let Some(&s) = self.short_starts.first() {
            if s > slot {
                break;
            }
            self.on_end = self.on_end.max(s + on);
            self.short_starts.remove(0);
        }
        let in_inactivity = slot < self.inactivity_end;
        self.mode = if in_inactivity {
            DrxMode::InactivityExtended
        } else if slot < self.on_end {
            DrxMode::OnDuration
        } else {
            DrxMode::Sleep
        };
        if self.mode == DrxMode::Sleep && self.was_extended {
            self.was_extended = false;
            if let Some(sc) = cfg.short_cycle {
                let expiry = RationalMs::new(slot as i64 * SLOT_US, 1000);
                let next_long = cfg.start_slot(self.next_cycle);
                self.short_starts = (1..=sc.timer_cycles as i64)
                    .map(|j| (floor_to_slot(expiry + sc.cycle * j) / SLOT_US) as u64)
                    .filter(|&s| s < next_long)
                    .collect();
            }
        }
        self.mode != DrxMode::Sleep
    }

    /// A PDCCH scheduling new data was received in `slot`.
    pub fn on_new_grant(&mut self, cfg: &DrxConfig, slot: u64) {
        self.inactivity_end = self.inactivity_end.max(slot + 1 + cfg.inactivity_slots());
        if cfg.inactivity_slots() > 0 {
            self.was_extended = true;
        }
    }

    /// The exact time at which the current or most recent on-duration began.
    pub fn last_start(&self, cfg: &DrxConfig) -> Option<Micros> {
        self.next_cycle.checked_sub(1).map(|k| to_micros(cfg.start_exact(k)))
    }
}

/// Per-slot inputs to [`drx_step`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SlotEvents {
    pub new_data_grant: bool,
    /// PDSCH or PUSCH (including retransmissions) scheduled in the slot.
    pub scheduled: bool,
}

/// One slot of the DRX state machine. Returns whether the UE is awake; a
/// slot with a scheduled transmission is always awake.
pub fn drx_step(state: &mut DrxState, cfg: &DrxConfig, slot: u64, ev: SlotEvents) -> bool {
    let monitoring = state.begin_slot(cfg, slot);
    if ev.new_data_grant && monitoring {
        state.on_new_grant(cfg, slot);
    }
    monitoring || ev.scheduled
}
