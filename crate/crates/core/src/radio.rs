//! Indoor-hotspot link budget, link adaptation and HARQ.
//!
//! Fast fading and spatial processing are not modelled: each UE–cell link is a
//! coupling loss (pathloss + shadowing − antenna gains) drawn once per drop.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SUBCARRIERS_PER_RB: u32 = 12;
pub const RB_BANDWIDTH_HZ: f64 = 360e3;
pub const THERMAL_NOISE_DBM_HZ: f64 = -174.0;

/// Top of the spectral-efficiency ladder: 8 bits/symbol at 0.975 efficiency.
pub const SE_CAP: f64 = 7.8;

/// Attenuation applied to Shannon capacity.
pub const SHANNON_ATTENUATION: f64 = 0.75;

/// HARQ round-trip in slots.
pub const HARQ_RTT_SLOTS: u64 = 8;

pub const MAX_RETX: u8 = 3;

/// Effective SINR gain per additional HARQ transmission (Chase combining).
pub const CHASE_GAIN_DB: f64 = 3.0;

/// Spectral efficiencies of the 28 MCS indices. Entries 0..=26 follow the
/// 256-QAM CQI/MCS table; the last entry is the [`SE_CAP`].
pub const MCS_SE: [f64; 28] = [
    0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.6953, 1.9141, 2.1602, 2.4063, 2.5703, 2.7305,
    3.0293, 3.3223, 3.6094, 3.9023, 4.2129, 4.5234, 4.8164, 5.1152, 5.3320, 5.5547, 5.8906, 6.2266,
    6.5703, 6.9141, 7.1602, SE_CAP,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioConfig {
    pub carrier_ghz: f64,
    pub n_rb: u32,
    pub isd_m: f64,
    pub bs_height_m: f64,
    pub ue_height_m: f64,
    pub bs_tx_dbm: f64,
    pub bs_antenna_dbi: f64,
    pub ue_antenna_dbi: f64,
    pub bs_noise_figure_db: f64,
    pub ue_noise_figure_db: f64,
    pub ue_max_tx_dbm: f64,
    pub p0_dbm: f64,
    pub alpha: f64,
    pub shadowing_db: f64,
    pub csi_period_slots: u64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            carrier_ghz: 4.0,
            n_rb: 273,
            isd_m: 20.0,
            bs_height_m: 3.0,
            ue_height_m: 1.5,
            bs_tx_dbm: 31.0,
            bs_antenna_dbi: 5.0,
            ue_antenna_dbi: 0.0,
            bs_noise_figure_db: 5.0,
            ue_noise_figure_db: 9.0,
            ue_max_tx_dbm: 23.0,
            p0_dbm: -93.0,
            alpha: 1.0,
            shadowing_db: 3.0,
            csi_period_slots: 4,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rb == 0 || self.n_rb > 273 {
            return Err(Error::config("radio.n_rb", "must be in 1..=273"));
        }
        if !(self.carrier_ghz > 0.0) || !(self.isd_m > 0.0) {
            return Err(Error::config("radio.carrier_ghz", "carrier and ISD must be positive"));
        }
        if self.csi_period_slots == 0 {
            return Err(Error::config("radio.csi_period_slots", "must be positive"));
        }
        Ok(())
    }

    pub fn noise_per_rb_dbm(&self, noise_figure_db: f64) -> f64 {
        THERMAL_NOISE_DBM_HZ + 10.0 * RB_BANDWIDTH_HZ.log10() + noise_figure_db
    }

    /// Downlink transmit power per RB, with total power spread over the carrier.
    pub fn bs_psd_dbm(&self) -> f64 {
        self.bs_tx_dbm - 10.0 * (self.n_rb as f64).log10()
    }
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// InH-Office LOS pathloss; distances below 1 m are clamped.
pub fn pathloss_db(distance_3d_m: f64, fc_ghz: f64) -> f64 {
    32.4 + 17.3 * distance_3d_m.max(1.0).log10() + 20.0 * fc_ghz.log10()
}

/// SINR from received signal, interferer powers and noise, all in dBm.
pub fn sinr_db(signal_dbm: f64, interferers_dbm: impl IntoIterator<Item = f64>, noise_dbm: f64) -> f64 {
    let i: f64 = interferers_dbm.into_iter().map(db_to_lin).sum();
    signal_dbm - lin_to_db(i + db_to_lin(noise_dbm))
}

/// Open-loop PUSCH power: `min(Pmax, P0 + 10log10(n_rb) + alpha·PL)`.
pub fn ul_tx_power_dbm(cfg: &RadioConfig, n_rb: u32, pathloss_db: f64) -> f64 {
    let n = n_rb.clamp(1, cfg.n_rb) as f64;
    (cfg.p0_dbm + 10.0 * n.log10() + cfg.alpha * pathloss_db).min(cfg.ue_max_tx_dbm)
}

/// Largest RB count for which the UE is not power limited (at least 1).
pub fn max_unlimited_rbs(cfg: &RadioConfig, pathloss_db: f64) -> u32 {
    let headroom = cfg.ue_max_tx_dbm - cfg.p0_dbm - cfg.alpha * pathloss_db;
    let n = db_to_lin(headroom).floor();
    if n < 1.0 {
        1
    } else {
        (n as u32).min(cfg.n_rb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mcs {
    pub index: u8,
    pub se: f64,
}

pub fn shannon_se(sinr_db: f64) -> f64 {
    (SHANNON_ATTENUATION * (1.0 + db_to_lin(sinr_db)).log2()).min(SE_CAP)
}

/// SINR at which MCS `index` reaches 10 % first-transmission BLER.
pub fn mcs_threshold_db(index: u8) -> f64 {
    let se = MCS_SE[index as usize];
    lin_to_db(2f64.powf(se / SHANNON_ATTENUATION) - 1.0)
}

/// Highest MCS whose 10 % BLER point lies at or below `csi_sinr_db`.
/// Below the lowest threshold MCS 0 is used anyway and HARQ absorbs the loss.
pub fn select_mcs(csi_sinr_db: f64) -> Mcs {
    let index = (0..MCS_SE.len() as u8)
        .rev()
        .find(|&i| mcs_threshold_db(i) <= csi_sinr_db)
        .unwrap_or(0);
    Mcs {
        index,
        se: MCS_SE[index as usize],
    }
}

pub fn tb_bits(se: f64, n_rb: u32, data_symbols: u32) -> u64 {
    (se * (n_rb * SUBCARRIERS_PER_RB * data_symbols) as f64).floor() as u64
}

/// RBs needed to carry `bits` (at least 1 when bits > 0).
pub fn rbs_for_bits(bits: u64, se: f64, data_symbols: u32) -> u32 {
    if bits == 0 {
        return 0;
    }
    let per_rb = se * (SUBCARRIERS_PER_RB * data_symbols) as f64;
    let mut n = (bits as f64 / per_rb).ceil() as u32;
    // guard against floor() in tb_bits leaving a few bits short
    while tb_bits(se, n, data_symbols) < bits {
        n += 1;
    }
    n.max(1)
}

/// Block error probability of transmission `attempt` (1-based).
///
/// Logistic in dB with one decade per dB in the tail, placed so the first
/// attempt sees 10 % at the MCS threshold.
pub fn bler(mcs: u8, sinr_db: f64, attempt: u8) -> f64 {
    let eff = sinr_db + CHASE_GAIN_DB * attempt.saturating_sub(1) as f64;
    let x = eff - mcs_threshold_db(mcs);
    1.0 / (1.0 + 9.0 * 10f64.powf(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HarqOutcome {
    Ack,
    Nack,
    /// Last allowed attempt failed.
    Dropped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarqProcess {
    pub tb_bits: u64,
    pub mcs: u8,
    pub attempts: u8,
    pub max_retx: u8,
    pub outcomes: Vec<HarqOutcome>,
}

impl HarqProcess {
    pub fn new(tb_bits: u64, mcs: u8) -> Self {
        HarqProcess {
            tb_bits,
            mcs,
            attempts: 0,
            max_retx: MAX_RETX,
            outcomes: Vec::new(),
        }
    }

    pub fn exhausted(&self) -> bool {
        self.attempts > self.max_retx
    }

    pub fn attempt<R: Rng + ?Sized>(&mut self, sinr_db: f64, rng: &mut R) -> HarqOutcome {
        assert!(!self.exhausted(), "HARQ attempts exhausted");
        self.attempts += 1;
        let fail = rng.random::<f64>() < bler(self.mcs, sinr_db, self.attempts);
        let out = match (fail, self.exhausted_after_this()) {
            (false, _) => HarqOutcome::Ack,
            (true, false) => HarqOutcome::Nack,
            (true, true) => HarqOutcome::Dropped,
        };
        self.outcomes.push(out);
        out
    }

    fn exhausted_after_this(&self) -> bool {
        self.attempts >= self.max_retx + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Cells on a 20 m grid in rows of up to six inside a rectangular hall, UEs
/// dropped uniformly and attached to the lowest coupling-loss cell.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub cells: Vec<Point>,
    pub ues: Vec<Point>,
    pub serving: Vec<usize>,
    /// `coupling_loss_db[ue][cell]`: pathloss + shadowing − antenna gains.
    pub coupling_loss_db: Vec<Vec<f64>>,
    pub hall: (Point, Point),
}

impl Deployment {
    pub fn cell_positions(n_cells: usize, isd_m: f64) -> Vec<Point> {
        let cols = n_cells.min(6).max(1);
        (0..n_cells)
            .map(|i| Point {
                x: (i % cols) as f64 * isd_m,
                y: (i / cols) as f64 * isd_m,
            })
            .collect()
    }

    /// Drops exactly `ues_per_cell` UEs into every cell.
    pub fn drop<R: Rng + ?Sized>(
        cfg: &RadioConfig,
        n_cells: usize,
        ues_per_cell: usize,
        rng: &mut R,
    ) -> Result<Deployment> {
        if n_cells == 0 {
            return Err(Error::config("scenario.cells", "need at least one cell"));
        }
        let cells = Self::cell_positions(n_cells, cfg.isd_m);
        let max_x = cells.iter().map(|c| c.x).fold(0.0, f64::max);
        let max_y = cells.iter().map(|c| c.y).fold(0.0, f64::max);
        let lo = Point { x: -cfg.isd_m / 2.0, y: -0.75 * cfg.isd_m };
        let hi = Point {
            x: max_x + cfg.isd_m / 2.0,
            y: max_y + 0.75 * cfg.isd_m,
        };
        let shadow = Normal::new(0.0, cfg.shadowing_db).map_err(|e| Error::config("radio.shadowing_db", e.to_string()))?;
        let dh = cfg.bs_height_m - cfg.ue_height_m;
        let mut per_cell = vec![0usize; n_cells];
        let (mut ues, mut serving, mut cl) = (Vec::new(), Vec::new(), Vec::new());
        let target = n_cells * ues_per_cell;
        let mut tries = 0usize;
        while ues.len() < target {
            tries += 1;
            if tries > 10_000 * (target + 1) {
                return Err(Error::config("scenario.ues_per_cell", "could not fill every cell"));
            }
            let p = Point {
                x: rng.random_range(lo.x..hi.x),
                y: rng.random_range(lo.y..hi.y),
            };
            let losses: Vec<f64> = cells
                .iter()
                .map(|c| {
                    let d2 = ((p.x - c.x).powi(2) + (p.y - c.y).powi(2) + dh * dh).sqrt();
                    pathloss_db(d2, cfg.carrier_ghz) + shadow.sample(rng) - cfg.bs_antenna_dbi - cfg.ue_antenna_dbi
                })
                .collect();
            let best = losses
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .expect("non-empty");
            if per_cell[best] >= ues_per_cell {
                continue;
            }
            per_cell[best] += 1;
            ues.push(p);
            serving.push(best);
            cl.push(losses);
        }
        Ok(Deployment {
            cells,
            ues,
            serving,
            coupling_loss_db: cl,
            hall: (lo, hi),
        })
    }

    /// Downlink SINR per RB for `ue` given which cells transmit in the slot.
    pub fn dl_sinr_db(&self, cfg: &RadioConfig, ue: usize, active_cells: &[bool]) -> f64 {
        let serving = self.serving[ue];
        let psd = cfg.bs_psd_dbm();
        let loss = &self.coupling_loss_db[ue];
        let interference = (0..self.cells.len())
            .filter(|&c| c != serving && active_cells.get(c).copied().unwrap_or(false))
            .map(|c| psd - loss[c]);
        sinr_db(psd - loss[serving], interference, cfg.noise_per_rb_dbm(cfg.ue_noise_figure_db))
    }

    pub fn serving_loss_db(&self, ue: usize) -> f64 {
        self.coupling_loss_db[ue][self.serving[ue]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStreams;

    #[test]
    fn pathloss_values() {
        assert!((pathloss_db(1.0, 4.0) - 44.44).abs() < 0.005);
        assert!((pathloss_db(10.0, 4.0) - 61.74).abs() < 0.005);
        assert!((pathloss_db(20.0, 4.0) - pathloss_db(10.0, 4.0) - 5.208).abs() < 1e-3);
        assert_eq!(pathloss_db(0.2, 4.0), pathloss_db(1.0, 4.0));
    }

    #[test]
    fn sinr_definitions() {
        assert!(sinr_db(-100.0, [], -100.0).abs() < 1e-12);
        assert!(sinr_db(-50.0, [-50.0], -200.0).abs() < 1e-9);
        let with = sinr_db(-60.0, [-80.0, -85.0], -100.0);
        let without = sinr_db(-60.0, [-80.0], -100.0);
        assert!(without >= with);
    }

    #[test]
    fn ul_power_control() {
        let cfg = RadioConfig::default();
        assert!(ul_tx_power_dbm(&cfg, 1, 93.0).abs() < 1e-12);
        assert_eq!(ul_tx_power_dbm(&cfg, 100, 100.0), 23.0);
        // received PSD at the BS equals P0 when not power limited
        for pl in [60.0, 70.0, 80.0] {
            for n in [1u32, 10, 50, 273] {
                let p = ul_tx_power_dbm(&cfg, n, pl);
                if p < 23.0 {
                    assert!((p - 10.0 * (n as f64).log10() - pl - cfg.p0_dbm).abs() < 1e-9);
                }
            }
        }
        let n = max_unlimited_rbs(&cfg, 100.0);
        assert!(ul_tx_power_dbm(&cfg, n, 100.0) < 23.0);
        assert!(ul_tx_power_dbm(&cfg, n + 1, 100.0) >= 23.0 - 1e-9);
    }

    #[test]
    fn mcs_ladder() {
        assert_eq!(select_mcs(f64::NEG_INFINITY).index, 0);
        assert_eq!(select_mcs(-30.0).index, 0);
        let top = select_mcs(60.0);
        assert_eq!(top.index, 27);
        assert_eq!(top.se, SE_CAP);
        assert!((mcs_threshold_db(27) - lin_to_db(2f64.powf(10.4) - 1.0)).abs() < 1e-9);
        let mut prev = 0.0;
        for s in -100..400 {
            let se = select_mcs(s as f64 / 10.0).se;
            assert!(se >= prev);
            prev = se;
        }
        for w in MCS_SE.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn tb_sizes() {
        assert_eq!(tb_bits(1.0, 1, 12), 144);
        assert_eq!(tb_bits(SE_CAP, 273, 12), 306_633);
        assert_eq!(tb_bits(2.0, 20, 12), 2 * tb_bits(2.0, 10, 12));
        let se = MCS_SE[18];
        for bits in [1u64, 100, 10_000, 166_664] {
            let n = rbs_for_bits(bits, se, 12);
            assert!(tb_bits(se, n, 12) >= bits);
            assert!(n == 1 || tb_bits(se, n - 1, 12) < bits);
        }
    }

    #[test]
    fn harq_bler_at_threshold() {
        let mut rng = RngStreams::new(11).stream("harq");
        let thr = mcs_threshold_db(10);
        let n = 100_000;
        let acks = (0..n)
            .filter(|_| HarqProcess::new(1000, 10).attempt(thr, &mut rng) == HarqOutcome::Ack)
            .count();
        let rate = acks as f64 / n as f64;
        assert!((rate - 0.9).abs() < 0.01, "ack rate {rate}");
        assert!(bler(10, thr + 20.0, 1) < 1e-15);
        assert!(bler(10, thr, 2) < bler(10, thr, 1));
    }

    #[test]
    fn harq_exhausts() {
        let mut rng = RngStreams::new(3).stream("harq");
        let mut p = HarqProcess::new(1000, 27);
        let mut last = HarqOutcome::Ack;
        for _ in 0..4 {
            last = p.attempt(-50.0, &mut rng);
        }
        assert_eq!(last, HarqOutcome::Dropped);
        assert!(p.exhausted());
        assert_eq!(p.outcomes.len(), (MAX_RETX + 1) as usize);
    }

    #[test]
    fn drop_fills_cells() {
        let cfg = RadioConfig::default();
        let mut rng = RngStreams::new(4).stream("deployment");
        let dep = Deployment::drop(&cfg, 3, 5, &mut rng).unwrap();
        for c in 0..3 {
            assert_eq!(dep.serving.iter().filter(|&&s| s == c).count(), 5);
        }
        for (u, losses) in dep.coupling_loss_db.iter().enumerate() {
            let best = dep.serving[u];
            assert!(losses.iter().all(|&l| l >= losses[best]));
        }
        let single = Deployment::drop(&cfg, 1, 4, &mut rng).unwrap();
        let s = single.dl_sinr_db(&cfg, 0, &[true]);
        assert!(s > 40.0, "isolated InH cell has high SINR, got {s}");
    }
}
