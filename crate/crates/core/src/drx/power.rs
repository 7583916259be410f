use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the UE did in a slot, as recorded by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Activity {
    Sleep,
    /// Monitoring PDCCH without data.
    Monitor,
    /// PDSCH reception or PUSCH transmission.
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PowerState {
    DeepSleep,
    LightSleep,
    PdcchOnly,
    PdcchPlusPdsch,
}

/// Relative per-slot power of each state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerModel {
    pub deep_sleep: f64,
    pub light_sleep: f64,
    pub pdcch_only: f64,
    pub pdcch_plus_pdsch: f64,
    /// Energy of one deep-sleep entry plus exit, in slot units.
    pub deep_transition_energy: f64,
    /// Shortest sleep run, in slots, that may use deep sleep.
    pub min_deep_dwell_slots: u32,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel {
            deep_sleep: 0.04,
            light_sleep: 0.4,
            pdcch_only: 1.0,
            pdcch_plus_pdsch: 3.0,
            deep_transition_energy: 4.0,
            min_deep_dwell_slots: 6,
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 <= self.deep_sleep
            && self.deep_sleep < self.light_sleep
            && self.light_sleep < self.pdcch_only
            && self.pdcch_only < self.pdcch_plus_pdsch;
        if !ordered {
            return Err(Error::config("power", "state powers must increase from deep sleep to PDSCH"));
        }
        if self.deep_transition_energy < 0.0 {
            return Err(Error::config("power.deep_transition_energy", "must not be negative"));
        }
        Ok(())
    }

    pub fn power(&self, s: PowerState) -> f64 {
        match s {
            PowerState::DeepSleep => self.deep_sleep,
            PowerState::LightSleep => self.light_sleep,
            PowerState::PdcchOnly => self.pdcch_only,
            PowerState::PdcchPlusPdsch => self.pdcch_plus_pdsch,
        }
    }
}

/// Maps an activity trace to power states. Sleep runs of at least the
/// minimum dwell become deep sleep, shorter ones light sleep.
pub fn classify_trace(trace: &[Activity], model: &PowerModel) -> Vec<PowerState> {
    let mut out = Vec::with_capacity(trace.len());
    let mut i = 0;
    while i < trace.len() {
        match trace[i] {
            Activity::Monitor => {
                out.push(PowerState::PdcchOnly);
                i += 1;
            }
            Activity::Data => {
                out.push(PowerState::PdcchPlusPdsch);
                i += 1;
            }
            Activity::Sleep => {
                let run = trace[i..].iter().take_while(|&&a| a == Activity::Sleep).count();
                let s = if run >= model.min_deep_dwell_slots as usize {
                    PowerState::DeepSleep
                } else {
                    PowerState::LightSleep
                };
                out.extend(std::iter::repeat_n(s, run));
                i += run;
            }
        }
    }
    out
}

/// Mean per-slot power, charging the transition energy once per deep-sleep run.
pub fn power_for_run(states: &[PowerState], model: &PowerModel) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    let mut total: f64 = states.iter().map(|&s| model.power(s)).sum();
    let entries = states
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s == PowerState::DeepSleep && (i == 0 || states[i - 1] != PowerState::DeepSleep))
        .count();
    total += entries as f64 * model.deep_transition_energy;
    total / states.len() as f64
}

/// Percent reduction of mean power against always-on.
pub fn power_saving_gain(p_technique: f64, p_always_on: f64) -> Result<f64> {
    if !(p_always_on > 0.0) || !(p_technique >= 0.0) {
        return Err(Error::config("power", "gain needs a positive always-on power"));
    }
    Ok((1.0 - p_technique / p_always_on) * 100.0)
}
