//! Event queue and slot clock.
//!
//! Every other module runs on top of [`Engine`]: a min-heap of events keyed by
//! `(time, sequence)` and a clock that ticks in 0.5 ms slots (30 kHz SCS).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::EngineError;
use crate::Micros;

/// Slot duration at 30 kHz subcarrier spacing.
pub const SLOT_US: Micros = 500;

/// OFDM symbols per slot.
pub const SYMBOLS_PER_SLOT: u32 = 14;

/// Symbols of a special slot usable for downlink data, including control.
pub const SPECIAL_DL_SYMBOLS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SlotType {
    Downlink,
    Special,
    Uplink,
}

impl SlotType {
    pub fn carries_dl(self) -> bool {
        matches!(self, SlotType::Downlink | SlotType::Special)
    }

    /// Data symbols available for a shared-channel transport block. Two
    /// symbols per slot are taken by control and reference signals.
    pub fn data_symbols(self) -> u32 {
        match self {
            SlotType::Downlink | SlotType::Uplink => SYMBOLS_PER_SLOT - 2,
            SlotType::Special => SPECIAL_DL_SYMBOLS - 2,
        }
    }
}

/// TDD pattern DDDSU.
pub fn slot_type(slot_index: u64) -> SlotType {
    match slot_index % 5 {
        0..=2 => SlotType::Downlink,
        3 => SlotType::Special,
        _ => SlotType::Uplink,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimClock {
    slot_duration: Micros,
    now: Micros,
}

impl Default for SimClock {
    fn default() -> Self {
        SimClock::new(SLOT_US)
    }
}

impl SimClock {
    pub fn new(slot_duration: Micros) -> Self {
        assert!(slot_duration > 0, "slot duration must be positive");
        SimClock { slot_duration, now: 0 }
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn slot_duration(&self) -> Micros {
        self.slot_duration
    }

    /// Index of the slot containing `now`.
    pub fn slot_index(&self) -> u64 {
        (self.now / self.slot_duration) as u64
    }

    pub fn slot_start(&self, slot: u64) -> Micros {
        slot as Micros * self.slot_duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct EventId(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub struct Event<E> {
    pub id: EventId,
    pub time: Micros,
    pub kind: E,
}

struct Pending<E> {
    time: Micros,
    seq: u64,
    kind: E,
}

impl<E> PartialEq for Pending<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl<E> Eq for Pending<E> {}

impl<E> PartialOrd for Pending<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Pending<E> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub events_processed: u64,
    pub end_time: Micros,
    pub last_event_time: Option<Micros>,
}

pub struct Engine<E> {
    clock: SimClock,
    queue: BinaryHeap<Pending<E>>,
    next_seq: u64,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Engine::new(SimClock::default())
    }
}

impl<E> Engine<E> {
    pub fn new(clock: SimClock) -> Self {
        Engine {
            clock,
            queue: BinaryHeap::new(),
            next_seq: 0,
        }
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn now(&self) -> Micros {
        self.clock.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, time: Micros, kind: E) -> Result<EventId, EngineError> {
        if time < self.clock.now {
            return Err(EngineError::PastEvent {
                time,
                now: self.clock.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Pending { time, seq, kind });
        Ok(EventId(seq))
    }

    /// Pops and hands to `handler` every event with `time <= t_end`, then
    /// parks the clock at `t_end`.
    pub fn run_until<F>(&mut self, t_end: Micros, mut handler: F) -> Result<RunStats, EngineError>
    where
        F: FnMut(&mut Engine<E>, Event<E>),
    {
        if t_end < self.clock.now {
            return Err(EngineError::PastEvent {
                time: t_end,
                now: self.clock.now,
            });
        }
        let mut stats = RunStats::default();
        while self.queue.peek().is_some_and(|p| p.time <= t_end) {
            let Pending { time, seq, kind } = self.queue.pop().expect("peeked");
            debug_assert!(time >= self.clock.now);
            self.clock.now = time;
            stats.events_processed += 1;
            stats.last_event_time = Some(time);
            handler(
                self,
                Event {
                    id: EventId(seq),
                    time,
                    kind,
                },
            );
        }
        self.clock.now = t_end;
        stats.end_time = t_end;
        Ok(stats)
    }
}
