//! XR video, pose/control, FTP3 and full-buffer sources, plus the
//! frame → PDU set → PDU structuring.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{self, RationalMs};
use crate::Micros;

pub const DEFAULT_MTU: u32 = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Dl,
    Ul,
}

/// Gaussian restricted to `[min, max]` by re-drawing.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedNormal {
    normal: Normal<f64>,
    min: f64,
    max: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, std: f64, min: f64, max: f64) -> Result<Self> {
        if !(min < max) || !(min <= mean && mean <= max) {
            return Err(Error::config("truncated_normal", "need min <= mean <= max and min < max"));
        }
        let normal = Normal::new(mean, std)
            .map_err(|e| Error::config("truncated_normal", e.to_string()))?;
        Ok(TruncatedNormal { normal, min, max })
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let x = self.normal.sample(rng);
            if x >= self.min && x <= self.max {
                return x;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VideoStreamConfig {
    pub rate_mbps: f64,
    /// Frame rate as `fps_num / fps_den` frames per second.
    pub fps_num: i64,
    pub fps_den: i64,
    pub size_std_frac: f64,
    pub size_min_frac: f64,
    pub size_max_frac: f64,
    pub jitter_std_ms: f64,
    pub jitter_min_ms: f64,
    pub jitter_max_ms: f64,
    pub psdb_ms: f64,
    pub direction: Direction,
}

impl Default for VideoStreamConfig {
    fn default() -> Self {
        VideoStreamConfig {
            rate_mbps: 30.0,
            fps_num: 60,
            fps_den: 1,
            size_std_frac: 0.105,
            size_min_frac: 0.5,
            size_max_frac: 1.5,
            jitter_std_ms: 2.0,
            jitter_min_ms: -4.0,
            jitter_max_ms: 4.0,
            psdb_ms: 10.0,
            direction: Direction::Dl,
        }
    }
}

impl VideoStreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_mbps > 0.0) {
            return Err(Error::config("xr.rate_mbps", "must be positive"));
        }
        if self.fps_num <= 0 || self.fps_den <= 0 {
            return Err(Error::config("xr.fps_num", "frame rate must be positive"));
        }
        if !(self.size_min_frac < 1.0 && 1.0 < self.size_max_frac) || self.size_min_frac <= 0.0 {
            return Err(Error::config("xr.size_min_frac", "need 0 < min < 1 < max"));
        }
        if !(self.jitter_min_ms <= 0.0 && 0.0 <= self.jitter_max_ms) {
            return Err(Error::config("xr.jitter_min_ms", "need min <= 0 <= max"));
        }
        if !(self.psdb_ms > 0.0) {
            return Err(Error::config("xr.psdb_ms", "must be positive"));
        }
        Ok(())
    }

    pub fn mean_frame_bytes(&self) -> f64 {
        self.rate_mbps * 1e6 * self.fps_den as f64 / self.fps_num as f64 / 8.0
    }

    pub fn period(&self) -> RationalMs {
        RationalMs::new(1000 * self.fps_den, self.fps_num)
    }

    pub fn psdb_us(&self) -> Micros {
        (self.psdb_ms * 1000.0).round() as Micros
    }

    pub fn size_distribution(&self) -> Result<TruncatedNormal> {
        let m = self.mean_frame_bytes();
        TruncatedNormal::new(m, self.size_std_frac * m, self.size_min_frac * m, self.size_max_frac * m)
    }

    /// `None` for uplink streams, which carry no jitter.
    pub fn jitter_distribution(&self) -> Result<Option<TruncatedNormal>> {
        if self.direction == Direction::Ul || self.jitter_std_ms == 0.0 {
            return Ok(None);
        }
        TruncatedNormal::new(0.0, self.jitter_std_ms, self.jitter_min_ms, self.jitter_max_ms).map(Some)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoFrame {
    pub index: u64,
    /// Un-jittered generation instant.
    pub nominal: RationalMs,
    pub jitter_ms: f64,
    pub arrival_us: Micros,
    pub bytes: u32,
}

#[derive(Debug, Clone)]
pub struct VideoSource {
    cfg: VideoStreamConfig,
    start: RationalMs,
    next_index: u64,
    size: TruncatedNormal,
    jitter: Option<TruncatedNormal>,
}

impl VideoSource {
    /// `start` shifts the whole frame grid (random per UE in system runs).
    pub fn new(cfg: VideoStreamConfig, start: RationalMs) -> Result<Self> {
        cfg.validate()?;
        Ok(VideoSource {
            size: cfg.size_distribution()?,
            jitter: cfg.jitter_distribution()?,
            cfg,
            start,
            next_index: 0,
        })
    }

    pub fn config(&self) -> &VideoStreamConfig {
        &self.cfg
    }

    pub fn start(&self) -> RationalMs {
        self.start
    }

    pub fn nominal_arrival(&self, index: u64) -> RationalMs {
        self.start + self.cfg.period() * index as i64
    }

    pub fn next_frame<R: Rng + ?Sized>(&mut self, rng: &mut R) -> VideoFrame {
        let index = self.next_index;
        self.next_index += 1;
        let bytes = self.size.sample(rng).round() as u32;
        let jitter_ms = self.jitter.as_ref().map_or(0.0, |j| j.sample(rng));
        let nominal = self.nominal_arrival(index);
        let arrival_us = time::to_micros(nominal) + (jitter_ms * 1000.0).round() as Micros;
        VideoFrame {
            index,
            nominal,
            jitter_ms,
            arrival_us,
            bytes,
        }
    }
}

/// PDU set importance; larger is more important.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Importance(pub u8);

impl Importance {
    pub const LOW: Importance = Importance(0);
    pub const HIGH: Importance = Importance(1);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pdu {
    pub id: u64,
    pub pdu_set_id: u64,
    pub burst_id: u64,
    pub bytes: u32,
    /// Size of the whole PDU set this PDU belongs to.
    pub set_bytes: u32,
    pub arrival_us: Micros,
    pub psi: Importance,
    pub last_of_set: bool,
    pub end_of_burst: bool,
    pub deadline_us: Option<Micros>,
    pub ecn_ce: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PduSet {
    pub id: u64,
    pub frame_id: u64,
    pub pdus: Vec<Pdu>,
    pub total_bytes: u32,
    pub psi: Importance,
    pub arrival_us: Micros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataBurst {
    pub id: u64,
    pub pdu_sets: Vec<PduSet>,
}

impl DataBurst {
    pub fn pdus(&self) -> impl Iterator<Item = &Pdu> {
        self.pdu_sets.iter().flat_map(|s| s.pdus.iter())
    }

    pub fn total_bytes(&self) -> u64 {
        self.pdu_sets.iter().map(|s| s.total_bytes as u64).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct IdAllocator {
    pdu: u64,
    set: u64,
    burst: u64,
}

impl IdAllocator {
    pub fn next_pdu(&mut self) -> u64 {
        self.pdu += 1;
        self.pdu
    }

    pub fn next_set(&mut self) -> u64 {
        self.set += 1;
        self.set
    }

    pub fn next_burst(&mut self) -> u64 {
        self.burst += 1;
        self.burst
    }
}

/// PSI labels handed out to consecutive PDU sets, cycling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PsiPattern {
    levels: Vec<Importance>,
    pos: usize,
}

impl Default for PsiPattern {
    fn default() -> Self {
        PsiPattern::new(vec![Importance::HIGH, Importance::LOW, Importance::LOW])
    }
}

impl PsiPattern {
    pub fn new(levels: Vec<Importance>) -> Self {
        assert!(!levels.is_empty());
        PsiPattern { levels, pos: 0 }
    }

    pub fn uniform(level: Importance) -> Self {
        PsiPattern::new(vec![level])
    }

    pub fn next_level(&mut self) -> Importance {
        let l = self.levels[self.pos];
        self.pos = (self.pos + 1) % self.levels.len();
        l
    }
}

/// Byte sizes of the PDUs of each set when `total` bytes are split evenly over
/// `sets` sets (remainder to the last) and each set is cut at `mtu`.
pub fn split_sizes(total: u32, mtu: u32, sets: u32) -> Vec<Vec<u32>> {
    assert!(mtu > 0 && sets >= 1);
    if total == 0 {
        return Vec::new();
    }
    let sets = sets.min(total);
    let base = total / sets;
    (0..sets)
        .map(|k| {
            let mut left = if k + 1 == sets { total - base * (sets - 1) } else { base };
            let mut pdus = Vec::with_capacity(left.div_ceil(mtu) as usize);
            while left > 0 {
                let b = left.min(mtu);
                pdus.push(b);
                left -= b;
            }
            pdus
        })
        .collect()
}

/// Turns frames into PDU sets, tagging PSI, last-of-set and end-of-burst.
#[derive(Debug, Clone)]
pub struct Fragmenter {
    pub mtu: u32,
    pub sets_per_frame: u32,
    pub psi: PsiPattern,
    pub ids: IdAllocator,
}

impl Fragmenter {
    pub fn new(mtu: u32, sets_per_frame: u32) -> Self {
        Fragmenter {
            mtu,
            sets_per_frame,
            psi: PsiPattern::default(),
            ids: IdAllocator::default(),
        }
    }

    pub fn with_psi(mut self, psi: PsiPattern) -> Self {
        self.psi = psi;
        self
    }

    pub fn fragment_frame(&mut self, frame: &VideoFrame, psdb_us: Option<Micros>) -> Vec<PduSet> {
        self.fragment_bytes(frame.index, frame.bytes, frame.arrival_us, psdb_us)
    }

    pub fn fragment_bytes(
        &mut self,
        frame_id: u64,
        bytes: u32,
        arrival_us: Micros,
        psdb_us: Option<Micros>,
    ) -> Vec<PduSet> {
        let layout = split_sizes(bytes, self.mtu, self.sets_per_frame);
        let burst_id = self.ids.next_burst();
        let n_sets = layout.len();
        let deadline_us = psdb_us.map(|d| arrival_us + d);
        layout
            .into_iter()
            .enumerate()
            .map(|(k, sizes)| {
                let set_id = self.ids.next_set();
                let psi = self.psi.next_level();
                let total_bytes: u32 = sizes.iter().sum();
                let n = sizes.len();
                let pdus = sizes
                    .into_iter()
                    .enumerate()
                    .map(|(i, b)| Pdu {
                        id: self.ids.next_pdu(),
                        pdu_set_id: set_id,
                        burst_id,
                        bytes: b,
                        set_bytes: total_bytes,
                        arrival_us,
                        psi,
                        last_of_set: i + 1 == n,
                        end_of_burst: i + 1 == n && k + 1 == n_sets,
                        deadline_us,
                        ecn_ce: false,
                    })
                    .collect();
                PduSet {
                    id: set_id,
                    frame_id,
                    pdus,
                    total_bytes,
                    psi,
                    arrival_us,
                }
            })
            .collect()
    }

    pub fn burst(&mut self, frame: &VideoFrame, psdb_us: Option<Micros>) -> DataBurst {
        let pdu_sets = self.fragment_frame(frame, psdb_us);
        let id = pdu_sets.first().map_or(0, |s| s.pdus[0].burst_id);
        DataBurst { id, pdu_sets }
    }
}

/// Fixed-size periodic pose/control packets; each packet is its own PDU set
/// and data burst.
#[derive(Debug, Clone)]
pub struct PoseSource {
    pub period_us: Micros,
    pub bytes: u32,
    pub start_us: Micros,
    next_index: u64,
}

impl Default for PoseSource {
    fn default() -> Self {
        PoseSource::new(4_000, 100, 0)
    }
}

impl PoseSource {
    pub fn new(period_us: Micros, bytes: u32, start_us: Micros) -> Self {
        assert!(period_us > 0 && bytes > 0);
        PoseSource {
            period_us,
            bytes,
            start_us,
            next_index: 0,
        }
    }

    pub fn next_arrival(&self) -> Micros {
        self.start_us + self.next_index as Micros * self.period_us
    }

    pub fn next_pdu(&mut self, ids: &mut IdAllocator, deadline: Option<Micros>) -> Pdu {
        let arrival_us = self.next_arrival();
        self.next_index += 1;
        Pdu {
            id: ids.next_pdu(),
            pdu_set_id: ids.next_set(),
            burst_id: ids.next_burst(),
            bytes: self.bytes,
            set_bytes: self.bytes,
            arrival_us,
            psi: Importance::HIGH,
            last_of_set: true,
            end_of_burst: true,
            deadline_us: deadline.map(|d| arrival_us + d),
            ecn_ce: false,
        }
    }

    /// Packets generated in `[0, horizon_us)`.
    pub fn count_until(&self, horizon_us: Micros) -> u64 {
        if horizon_us <= self.start_us {
            return 0;
        }
        ((horizon_us - self.start_us + self.period_us - 1) / self.period_us) as u64
    }
}

/// FTP model 3: fixed-size files with exponential inter-arrival times.
#[derive(Debug, Clone)]
pub struct Ftp3Source {
    pub file_bytes: u32,
    gap: Exp<f64>,
    next_us: f64,
}

impl Ftp3Source {
    pub fn new(file_bytes: u32, mean_interarrival_s: f64) -> Result<Self> {
        if file_bytes == 0 || !(mean_interarrival_s > 0.0) {
            return Err(Error::config("embb.ftp3", "file size and inter-arrival must be positive"));
        }
        let gap = Exp::new(1.0 / (mean_interarrival_s * 1e6))
            .map_err(|e| Error::config("embb.ftp3", e.to_string()))?;
        Ok(Ftp3Source {
            file_bytes,
            gap,
            next_us: 0.0,
        })
    }

    /// 0.125 MB every second on average, 1 Mbps offered.
    pub fn default_3gpp() -> Self {
        Ftp3Source::new(125_000, 1.0).expect("valid defaults")
    }

    pub fn sample_gap_us<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.gap.sample(rng)
    }

    /// Arrival time of the next file.
    pub fn next_arrival<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Micros {
        self.next_us += self.sample_gap_us(rng);
        self.next_us.round() as Micros
    }

    /// One file cut at `mtu`; plain PDUs with no deadline.
    pub fn file_pdus(&self, arrival_us: Micros, mtu: u32, ids: &mut IdAllocator) -> Vec<Pdu> {
        let set_id = ids.next_set();
        let burst_id = ids.next_burst();
        let sizes = split_sizes(self.file_bytes, mtu, 1).pop().unwrap_or_default();
        let n = sizes.len();
        sizes
            .into_iter()
            .enumerate()
            .map(|(i, b)| Pdu {
                id: ids.next_pdu(),
                pdu_set_id: set_id,
                burst_id,
                bytes: b,
                set_bytes: self.file_bytes,
                arrival_us,
                psi: Importance::LOW,
                last_of_set: i + 1 == n,
                end_of_burst: i + 1 == n,
                deadline_us: None,
                ecn_ce: false,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStreams;
    use crate::time::ms;

    #[test]
    fn frame_size_parameters() {
        let cfg = VideoStreamConfig::default();
        assert_eq!(cfg.mean_frame_bytes(), 62_500.0);
        let d = cfg.size_distribution().unwrap();
        assert_eq!((d.min(), d.max()), (31_250.0, 93_750.0));
        let cfg10 = VideoStreamConfig { rate_mbps: 10.0, ..cfg };
        assert!((cfg10.mean_frame_bytes() - 20_833.333).abs() < 1e-2);
    }

    #[test]
    fn zero_jitter_arrival_is_exact() {
        let cfg = VideoStreamConfig {
            direction: Direction::Ul,
            ..Default::default()
        };
        let mut src = VideoSource::new(cfg, ms(0)).unwrap();
        let mut rng = RngStreams::new(1).stream("traffic");
        let frames: Vec<_> = (0..4).map(|_| src.next_frame(&mut rng)).collect();
        assert_eq!(frames[3].nominal, ms(50));
        assert_eq!(frames[3].arrival_us, 50_000);
        assert!(frames.iter().all(|f| f.jitter_ms == 0.0));
    }

    #[test]
    fn dl_arrivals_strictly_increase() {
        let mut src = VideoSource::new(VideoStreamConfig::default(), ms(3)).unwrap();
        let mut rng = RngStreams::new(2).stream("traffic");
        let mut prev = Micros::MIN;
        for _ in 0..5_000 {
            let f = src.next_frame(&mut rng);
            assert!(f.arrival_us > prev);
            assert!(f.jitter_ms >= -4.0 && f.jitter_ms <= 4.0);
            prev = f.arrival_us;
        }
    }

    #[test]
    fn fragment_single_set() {
        let sizes = split_sizes(62_500, 1500, 1);
        assert_eq!(sizes.len(), 1);
        assert_eq!(sizes[0].len(), 42);
        assert_eq!(sizes[0].iter().filter(|&&b| b == 1500).count(), 41);
        assert_eq!(*sizes[0].last().unwrap(), 1000);
    }

    #[test]
    fn fragment_ten_sets() {
        let sizes = split_sizes(62_500, 1500, 10);
        assert_eq!(sizes.len(), 10);
        for s in &sizes {
            assert_eq!(s.iter().sum::<u32>(), 6250);
            assert_eq!(s.len(), 5);
        }
    }

    #[test]
    fn flags_on_fragmented_frame() {
        let frame = VideoFrame {
            index: 0,
            nominal: ms(0),
            jitter_ms: 0.0,
            arrival_us: 0,
            bytes: 62_500,
        };
        let mut fr = Fragmenter::new(1500, 1);
        let burst = fr.burst(&frame, Some(10_000));
        assert_eq!(burst.pdu_sets.len(), 1);
        let last = burst.pdus().last().unwrap();
        assert!(last.last_of_set && last.end_of_burst);

        let mut fr = Fragmenter::new(1500, 10);
        let burst = fr.burst(&frame, Some(10_000));
        assert_eq!(burst.pdus().filter(|p| p.end_of_burst).count(), 1);
        assert_eq!(burst.pdus().filter(|p| p.last_of_set).count(), 10);
        assert!(burst.pdus().all(|p| p.deadline_us == Some(10_000)));
    }

    #[test]
    fn zero_byte_frame_is_empty() {
        let mut fr = Fragmenter::new(1500, 3);
        assert!(fr.fragment_bytes(0, 0, 0, None).is_empty());
    }

    #[test]
    fn psi_pattern_cycles() {
        let mut p = PsiPattern::default();
        let v: Vec<_> = (0..6).map(|_| p.next_level()).collect();
        use Importance as I;
        assert_eq!(v, [I::HIGH, I::LOW, I::LOW, I::HIGH, I::LOW, I::LOW]);
    }

    #[test]
    fn pose_defaults() {
        let mut pose = PoseSource::default();
        assert_eq!(pose.count_until(10_000_000), 2500);
        let mut ids = IdAllocator::default();
        let a = pose.next_pdu(&mut ids, None);
        let b = pose.next_pdu(&mut ids, None);
        assert_eq!(b.arrival_us - a.arrival_us, 4_000);
        assert!(a.end_of_burst && a.last_of_set && a.bytes == 100);
        assert_ne!(a.pdu_set_id, b.pdu_set_id);
    }

    #[test]
    fn ftp3_mean_gap() {
        let src = Ftp3Source::default_3gpp();
        let mut rng = RngStreams::new(5).stream("traffic");
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| src.sample_gap_us(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean / 1e6 - 1.0).abs() < 0.03, "mean gap {mean}");
        // 1 Mbps offered load
        assert_eq!(src.file_bytes as f64 * 8.0 / 1.0, 1e6);
        let mut ids = IdAllocator::default();
        let pdus = src.file_pdus(0, 1500, &mut ids);
        assert_eq!(pdus.iter().map(|p| p.bytes).sum::<u32>(), 125_000);
        assert!(pdus.iter().all(|p| p.deadline_us.is_none()));
    }
}
