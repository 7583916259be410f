use crate::Micros;

/// Guard used when a UE has no throughput history yet.
const MIN_AVG: f64 = 1e-9;

/// Exponentially smoothed served throughput per UE, in bits per slot.
#[derive(Debug, Clone)]
pub struct PfAverager {
    avg: Vec<f64>,
    window: f64,
}

impl PfAverager {
    pub fn new(n_ues: usize, window_slots: f64) -> Self {
        PfAverager {
            avg: vec![0.0; n_ues],
            window: window_slots.max(1.0),
        }
    }

    pub fn get(&self, ue: usize) -> f64 {
        self.avg[ue]
    }

    /// Call once per slot for every UE, with zero for unserved UEs.
    pub fn update(&mut self, ue: usize, served_bits: f64) {
        let a = 1.0 / self.window;
        self.avg[ue] = (1.0 - a) * self.avg[ue] + a * served_bits;
    }
}

pub fn pf_metric(inst_rate: f64, avg_throughput: f64) -> f64 {
    inst_rate / avg_throughput.max(MIN_AVG)
}

/// Delay weight `-ln(delta) / PSDB` for a 1 % violation target.
pub fn mlwdf_weight(psdb_us: Micros) -> f64 {
    -(0.01f64).ln() / (psdb_us as f64 / 1000.0)
}

pub fn mlwdf_metric(hol_delay_us: Micros, psdb_us: Micros, inst_rate: f64, avg_throughput: f64) -> f64 {
    mlwdf_weight(psdb_us) * (hol_delay_us.max(0) as f64 / 1000.0) * pf_metric(inst_rate, avg_throughput)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PduSetScore {
    Score(f64),
    /// Remaining budget used up; scheduled with a floor priority.
    Expired,
    /// Zero-size set.
    Skip,
}

/// Grows with the fraction of the head set already sent and with the
/// inverse of its remaining budget (in ms, floored at `epsilon_us`).
pub fn pduset_metric(sent_bits: u64, set_bits: u64, remaining_us: Micros, alpha: f64, epsilon_us: Micros) -> PduSetScore {
    if set_bits == 0 {
        return PduSetScore::Skip;
    }
    if remaining_us <= 0 {
        return PduSetScore::Expired;
    }
    let progress = sent_bits as f64 / set_bits as f64;
    let tau_ms = remaining_us.max(epsilon_us) as f64 / 1000.0;
    PduSetScore::Score((alpha * progress).exp() / tau_ms)
}
