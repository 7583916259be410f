//! Experiment configuration file (TOML, one table per module).
//!
//! Every table rejects keys it does not know, so a typo fails loudly
//! instead of silently running the default.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::drx::{AdrxConfig, PowerModel};
use crate::error::{Error, Result};
use crate::l4s::L4sConfig;
use crate::mac::SchedulerPolicy;
use crate::qos::QosFlowProfile;
use crate::radio::RadioConfig;
use crate::reporting::{BsTableBounds, BsrFormat};
use crate::time::{ms, ms_frac, RationalMs};
use crate::traffic::{VideoStreamConfig, DEFAULT_MTU};

/// Exact millisecond value written as an integer, a float, or `"num/den"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RationalValue(pub RationalMs);

impl RationalValue {
    pub fn parse(s: &str) -> Option<RationalMs> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: i64 = n.trim().parse().ok()?;
            let d: i64 = d.trim().parse().ok()?;
            (d > 0).then(|| ms_frac(n, d))
        } else if let Ok(n) = s.parse::<i64>() {
            Some(ms(n))
        } else {
            s.parse::<f64>().ok().and_then(from_float)
        }
    }
}

// floats must be whole microseconds to stay exact
fn from_float(x: f64) -> Option<RationalMs> {
    let us = (x * 1000.0).round();
    ((x * 1000.0 - us).abs() < 1e-6 && us.is_finite()).then(|| ms_frac(us as i64, 1000))
}

impl fmt::Display for RationalValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.to_integer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl Serialize for RationalValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for RationalValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Str(String),
        }
        let v = match Raw::deserialize(d)? {
            Raw::Int(n) => Some(ms(n)),
            Raw::Float(x) => from_float(x),
            Raw::Str(s) => RationalValue::parse(&s),
        };
        v.map(RationalValue)
            .ok_or_else(|| serde::de::Error::custom("expected milliseconds as integer, float or \"num/den\""))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub cells: usize,
    /// XR UEs per cell; one simulation per entry.
    pub ues_per_cell: Vec<usize>,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub seeds: Vec<u64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            cells: 1,
            ues_per_cell: vec![4],
            duration_s: 10.0,
            warmup_s: 1.0,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FramingConfig {
    pub mtu: u32,
    pub sets_per_frame: u32,
    /// Importance per PDU set, repeated; larger is more important.
    pub psi_pattern: Vec<u8>,
}

impl Default for FramingConfig {
    fn default() -> Self {
        FramingConfig {
            mtu: DEFAULT_MTU,
            sets_per_frame: 1,
            psi_pattern: vec![1, 0, 0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseConfig {
    pub enabled: bool,
    pub period_ms: f64,
    pub bytes: u32,
}

impl Default for PoseConfig {
    fn default() -> Self {
        PoseConfig {
            enabled: false,
            period_ms: 4.0,
            bytes: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbbTraffic {
    Ftp3,
    FullBuffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbbConfig {
    /// Downlink best-effort UEs per cell.
    pub ues_per_cell: usize,
    pub traffic: EmbbTraffic,
    pub file_bytes: u32,
    pub mean_interarrival_s: f64,
}

impl Default for EmbbConfig {
    fn default() -> Self {
        EmbbConfig {
            ues_per_cell: 0,
            traffic: EmbbTraffic::Ftp3,
            file_bytes: 125_000,
            mean_interarrival_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsrConfig {
    pub format: BsrFormat,
    pub tables: BsTableBounds,
    pub dsr: bool,
    pub dsr_threshold_ms: f64,
}

impl Default for BsrConfig {
    fn default() -> Self {
        BsrConfig {
            format: BsrFormat::Long,
            tables: BsTableBounds::default(),
            dsr: false,
            dsr_threshold_ms: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CgSection {
    pub enabled: bool,
    pub periodicity_ms: RationalValue,
    pub occasions_per_period: u32,
    pub rb_per_occasion: u32,
    /// Fixed MCS; absent means the UE's current UL MCS.
    pub mcs: Option<u8>,
    pub uto_uci: bool,
    pub uto_uci_window: u32,
}

impl Default for CgSection {
    fn default() -> Self {
        CgSection {
            enabled: false,
            periodicity_ms: RationalValue(ms_frac(50, 3)),
            occasions_per_period: 1,
            rb_per_occasion: 40,
            mcs: None,
            uto_uci: false,
            uto_uci_window: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrxMode {
    Off,
    Fixed,
    Adaptive,
}

impl std::str::FromStr for DrxMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(DrxMode::Off),
            "fixed" => Ok(DrxMode::Fixed),
            "adaptive" => Ok(DrxMode::Adaptive),
            other => Err(Error::config("drx.mode", format!("unknown DRX mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrxSection {
    pub mode: DrxMode,
    pub cycle_ms: RationalValue,
    pub on_duration_ms: RationalValue,
    pub inactivity_ms: RationalValue,
    /// Start each on-duration this long before the UE's expected (nominal)
    /// frame arrival; absent starts on-durations at time zero.
    pub lead_ms: Option<RationalValue>,
    pub short_cycle_ms: Option<RationalValue>,
    pub short_cycle_timer: u32,
    pub retx_monitoring: bool,
    pub adaptive: AdrxConfig,
}

impl Default for DrxSection {
    fn default() -> Self {
        DrxSection {
            mode: DrxMode::Off,
            cycle_ms: RationalValue(ms_frac(50, 3)),
            on_duration_ms: RationalValue(ms(8)),
            inactivity_ms: RationalValue(ms(8)),
            lead_ms: Some(RationalValue(ms(0))),
            short_cycle_ms: None,
            short_cycle_timer: 2,
            retx_monitoring: true,
            adaptive: AdrxConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    /// Also write the gzipped per-event audit log.
    pub events: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "out".into(),
            events: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub xr: VideoStreamConfig,
    pub framing: FramingConfig,
    pub pose: PoseConfig,
    pub embb: EmbbConfig,
    pub radio: RadioConfig,
    pub scheduler: SchedulerPolicy,
    pub bsr: BsrConfig,
    pub qos: QosFlowProfile,
    pub cg: CgSection,
    pub drx: DrxSection,
    pub power: PowerModel,
    pub l4s: L4sConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        if s.cells == 0 {
            return Err(Error::config("scenario.cells", "need at least one cell"));
        }
        if s.ues_per_cell.is_empty() {
            return Err(Error::config("scenario.ues_per_cell", "need at least one load"));
        }
        if s.seeds.is_empty() {
            return Err(Error::config("scenario.seeds", "need at least one seed"));
        }
        if !(s.duration_s > 0.0) || !(s.warmup_s >= 0.0) || s.warmup_s >= s.duration_s {
            return Err(Error::config("scenario.warmup_s", "need 0 <= warmup < duration"));
        }
        self.xr.validate()?;
        if self.framing.mtu == 0 || self.framing.sets_per_frame == 0 {
            return Err(Error::config("framing.mtu", "MTU and sets per frame must be positive"));
        }
        if self.framing.psi_pattern.is_empty() {
            return Err(Error::config("framing.psi_pattern", "need at least one level"));
        }
        if self.pose.enabled && (!(self.pose.period_ms > 0.0) || self.pose.bytes == 0) {
            return Err(Error::config("pose.period_ms", "period and size must be positive"));
        }
        if self.embb.file_bytes == 0 || !(self.embb.mean_interarrival_s > 0.0) {
            return Err(Error::config("embb.file_bytes", "file size and inter-arrival must be positive"));
        }
        self.radio.validate()?;
        self.scheduler.validate()?;
        if !(self.bsr.dsr_threshold_ms > 0.0) {
            return Err(Error::config("bsr.dsr_threshold_ms", "must be positive"));
        }
        crate::reporting::BsTables::new(&self.bsr.tables)?;
        self.qos.validate()?;
        if self.cg.enabled {
            self.cg_config(0, ms(0), 0)?.validate()?;
        }
        if self.drx.mode != DrxMode::Off {
            self.drx_config(ms(0)).validate()?;
        }
        if self.drx.mode == DrxMode::Adaptive {
            self.drx.adaptive.validate()?;
        }
        self.power.validate()?;
        self.l4s.validate()?;
        Ok(())
    }

    pub fn cg_config(&self, rb_start: u32, offset: RationalMs, mcs: u8) -> Result<crate::mac::CgConfig> {
        if let Some(m) = self.cg.mcs {
            if m as usize >= crate::radio::MCS_SE.len() {
                return Err(Error::config("cg.mcs", "index out of range"));
            }
        }
        Ok(crate::mac::CgConfig {
            period: self.cg.periodicity_ms.0,
            offset,
            occasions_per_period: self.cg.occasions_per_period,
            rb_start,
            rb_per_occasion: self.cg.rb_per_occasion,
            mcs: self.cg.mcs.unwrap_or(mcs),
            uto_uci_window: self.cg.uto_uci_window,
        })
    }

    /// DRX parameters with the given start offset.
    pub fn drx_config(&self, start_offset: RationalMs) -> crate::drx::DrxConfig {
        crate::drx::DrxConfig {
            cycle: self.drx.cycle_ms.0,
            on_duration: self.drx.on_duration_ms.0,
            inactivity: self.drx.inactivity_ms.0,
            start_offset,
            short_cycle: self.drx.short_cycle_ms.map(|c| crate::drx::ShortCycle {
                cycle: c.0,
                timer_cycles: self.drx.short_cycle_timer,
            }),
            retx_monitoring: self.drx.retx_monitoring,
        }
    }
}
