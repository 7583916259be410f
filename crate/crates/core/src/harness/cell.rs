//! One system-level run: a fixed drop of cells and UEs, simulated slot by
//! slot on top of the event engine.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::Rng;
use serde::Serialize;

use crate::drx::{classify_trace, power_for_run, Activity, AdrxController, AdrxDecision, CycleFeedback, DrxConfig, DrxState, FrameSample};
use crate::engine::{slot_type, Engine, SimClock, SlotType, SLOT_US};
use crate::error::{Error, Result};
use crate::mac::{
    allocate_dl, allocate_ul, cg_occasions, CgConfig, CgOccasion, DlCandidate, HeadSet, PfAverager, RbPool, RbRange, UlCandidate,
};
use crate::qos::{DiscardEvent, FlowQueue, Segment, SetLedger};
use crate::radio::{
    lin_to_db, max_unlimited_rbs, select_mcs, sinr_db, tb_bits, ul_tx_power_dbm, Deployment, HarqOutcome, HarqProcess, Mcs, MCS_SE,
};
use crate::reporting::{bsr_ce_bytes, make_bsr, realized_overhead, trigger_dsr, BsTables, DsrItem, DsrReport};
use crate::rng::{RngStreams, SimRng};
use crate::time::{from_micros, ms, ms_frac, to_micros, RationalMs};
use crate::traffic::{Direction, Fragmenter, Ftp3Source, Importance, PoseSource, PsiPattern, VideoFrame, VideoSource};
use crate::Micros;

use super::config::{DrxMode, EmbbTraffic, ExperimentConfig};
use super::kpi::satisfied_from_counts;

/// HARQ round trip in slots.
const HARQ_RTT_SLOTS: u64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UeReport {
    pub ue: usize,
    pub cell: usize,
    pub xr: bool,
    pub frames: usize,
    pub frames_in_budget: usize,
    pub satisfied: Option<bool>,
    pub mean_power: f64,
    pub throughput_mbps: f64,
    /// Mean padding per uplink transport block.
    pub mean_padding_bytes: Option<f64>,
    pub sets_total: usize,
    pub sets_lost: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub time_us: Micros,
    pub ue: usize,
    pub event: &'static str,
    pub id: u64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub seed: u64,
    pub ues_per_cell: usize,
    pub ues: Vec<UeReport>,
    /// Padding of every XR uplink transport block after warm-up.
    pub padding_samples: Vec<f64>,
    /// Used share of the carrier, per cell and downlink slot after warm-up.
    pub rb_utilization: Vec<f64>,
    /// Delay of every completed XR frame counted in the KPIs.
    pub frame_delays_ms: Vec<f64>,
    pub events: Vec<EventRecord>,
}

impl RunOutput {
    pub fn xr_ues(&self) -> impl Iterator<Item = &UeReport> {
        self.ues.iter().filter(|u| u.xr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    Slot(u64),
    Frame(usize),
    Pose(usize),
    Ftp(usize),
}

#[derive(Debug, Clone)]
struct FrameRec {
    arrival_us: Micros,
    nominal_us: Micros,
    sets_left: usize,
    failed: bool,
    completed_us: Option<Micros>,
    first_chance_us: Option<Micros>,
}

#[derive(Debug, Clone)]
struct Tb {
    ue: usize,
    dir: Direction,
    segments: Vec<Segment>,
    /// Payload carried, counted for throughput (full-buffer TBs have no segments).
    payload_bytes: u64,
    harq: HarqProcess,
    rbs: Vec<RbRange>,
    due_slot: u64,
    cg: bool,
}

impl Tb {
    fn rb_count(&self) -> u32 {
        self.rbs.iter().map(|r| r.len).sum()
    }
}

struct Adrx {
    ctl: AdrxController,
    /// Start of the on-duration at zero relative offset, for cycle 0.
    base: RationalMs,
    /// How far ahead of a cycle the decision is taken.
    lead_us: Micros,
    next_k: u64,
    fb: CycleFeedback,
}

struct Ue {
    cell: usize,
    xr: bool,
    dl: FlowQueue,
    ul: FlowQueue,
    ledger: SetLedger,
    frames: Vec<FrameRec>,
    open_frames: Vec<usize>,
    set_frame: HashMap<u64, usize>,
    video: Option<VideoSource>,
    next_frame: Option<VideoFrame>,
    frag: Fragmenter,
    traffic_rng: SimRng,
    harq_rng: SimRng,
    pose: Option<PoseSource>,
    ftp: Option<Ftp3Source>,
    full_buffer: bool,
    dl_mcs: Mcs,
    ul_mcs: Mcs,
    ul_sinr_est: f64,
    ul_max_rbs: u32,
    // uplink view at the gNB
    gnb_est: u64,
    est_since: Micros,
    unreported: bool,
    sr_pending: bool,
    dsr_covered: HashSet<u64>,
    dsr: Option<DsrReport>,
    // configured grant
    cg: Option<CgConfig>,
    cg_occ: VecDeque<CgOccasion>,
    cg_reclaimed: HashSet<u64>,
    cg_retx: Option<Tb>,
    // DRX
    drx_cfg: Option<DrxConfig>,
    drx: DrxState,
    adrx: Option<Adrx>,
    forced_awake: HashSet<u64>,
    activity: Vec<Activity>,
    delivered_bytes: u64,
    padding: Vec<u64>,
}

impl Ue {
    fn queue(&mut self, dir: Direction) -> &mut FlowQueue {
        match dir {
            Direction::Dl => &mut self.dl,
            Direction::Ul => &mut self.ul,
        }
    }
}

/// Drives one (seed, load) point of an experiment.
pub struct SystemSim<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    ues_per_cell: usize,
    dep: Deployment,
    ues: Vec<Ue>,
    cell_ues: Vec<Vec<usize>>,
    pf: PfAverager,
    tables: BsTables,
    pending_dl: Vec<Tb>,
    pending_ul: Vec<Tb>,
    last_active: Vec<bool>,
    psdb_us: Micros,
    xr_dir: Direction,
    warmup_us: Micros,
    end_us: Micros,
    record_events: bool,
    events: Vec<EventRecord>,
    padding_samples: Vec<f64>,
    rb_util: Vec<f64>,
}

fn secs_to_us(s: f64) -> Micros {
    (s * 1e6).round() as Micros
}

fn next_slot_of(from: u64, dir: Direction) -> u64 {
    let mut s = from;
    loop {
        let t = slot_type(s);
        let ok = match dir {
            Direction::Dl => t.carries_dl(),
            Direction::Ul => t == SlotType::Uplink,
        };
        if ok {
            return s;
        }
        s += 1;
    }
}

impl<'a> SystemSim<'a> {
    pub fn new(cfg: &'a ExperimentConfig, seed: u64, ues_per_cell: usize, record_events: bool) -> Result<Self> {
        cfg.validate()?;
        let streams = RngStreams::new(seed);
        let n_cells = cfg.scenario.cells;
        let n_embb = cfg.embb.ues_per_cell;
        let dep = Deployment::drop(&cfg.radio, n_cells, ues_per_cell + n_embb, &mut streams.stream("deploy"))?;
        let tables = BsTables::new(&cfg.bsr.tables)?;
        let psdb_us = cfg.xr.psdb_us();
        let period = cfg.xr.period();
        let period_us = to_micros(period);
        let end_us = secs_to_us(cfg.scenario.duration_s);

        // within each cell the first `ues_per_cell` dropped UEs carry XR
        let mut seen = vec![0usize; n_cells];
        let mut cell_ues = vec![Vec::new(); n_cells];
        let mut ues = Vec::with_capacity(dep.ues.len());
        let mut next_rb_start = vec![0u32; n_cells];
        for u in 0..dep.ues.len() {
            let cell = dep.serving[u];
            let xr = seen[cell] < ues_per_cell;
            seen[cell] += 1;
            cell_ues[cell].push(u);
            let mut traffic_rng = streams.indexed("traffic", u as u64);
            let phase_us = traffic_rng.random_range(0..period_us.max(1));
            let phase = ms_frac(phase_us, 1000);
            let psi = PsiPattern::new(cfg.framing.psi_pattern.iter().map(|&l| Importance(l)).collect());
            let frag = Fragmenter::new(cfg.framing.mtu, cfg.framing.sets_per_frame).with_psi(psi);

            let loss = dep.serving_loss_db(u);
            let ul_max_rbs = max_unlimited_rbs(&cfg.radio, loss);
            let ul_sinr_est = ul_sinr_alone(cfg, loss, ul_max_rbs);
            let dl_sinr = dep.dl_sinr_db(&cfg.radio, u, &vec![true; n_cells]);

            let (video, pose, ftp, full_buffer) = if xr {
                let video = VideoSource::new(cfg.xr.clone(), phase + period)?;
                let pose = cfg.pose.enabled.then(|| {
                    let p = secs_to_us(cfg.pose.period_ms / 1000.0);
                    PoseSource::new(p, cfg.pose.bytes, phase_us % p + p)
                });
                (Some(video), pose, None, false)
            } else {
                match cfg.embb.traffic {
                    EmbbTraffic::Ftp3 => (None, None, Some(Ftp3Source::new(cfg.embb.file_bytes, cfg.embb.mean_interarrival_s)?), false),
                    EmbbTraffic::FullBuffer => (None, None, None, true),
                }
            };

            let ul_mcs = select_mcs(ul_sinr_est);
            let uses_ul = xr && (cfg.xr.direction == Direction::Ul || cfg.pose.enabled);
            let cg = if cfg.cg.enabled && uses_ul {
                let start = next_rb_start[cell];
                next_rb_start[cell] = (start + cfg.cg.rb_per_occasion) % cfg.radio.n_rb.max(1);
                let offset = if cfg.xr.direction == Direction::Ul { phase + period } else { ms(0) };
                let c = cfg.cg_config(start.min(cfg.radio.n_rb.saturating_sub(cfg.cg.rb_per_occasion)), offset, ul_mcs.index)?;
                Some(c)
            } else {
                None
            };
            let cg_occ = match &cg {
                Some(c) => cg_occasions(c, end_us)?.into_iter().collect(),
                None => VecDeque::new(),
            };

            let (drx_cfg, adrx) = if xr {
                drx_setup(cfg, phase, psdb_us)?
            } else {
                (None, None)
            };

            ues.push(Ue {
                cell,
                xr,
                dl: FlowQueue::new(),
                ul: FlowQueue::new(),
                ledger: SetLedger::default(),
                frames: Vec::new(),
                open_frames: Vec::new(),
                set_frame: HashMap::new(),
                video,
                next_frame: None,
                frag,
                traffic_rng,
                harq_rng: streams.indexed("harq", u as u64),
                pose,
                ftp,
                full_buffer,
                dl_mcs: select_mcs(dl_sinr),
                ul_mcs,
                ul_sinr_est,
                ul_max_rbs,
                gnb_est: 0,
                est_since: 0,
                unreported: false,
                sr_pending: false,
                dsr_covered: HashSet::new(),
                dsr: None,
                cg,
                cg_occ,
                cg_reclaimed: HashSet::new(),
                cg_retx: None,
                drx_cfg,
                drx: DrxState::new(),
                adrx,
                forced_awake: HashSet::new(),
                activity: Vec::new(),
                delivered_bytes: 0,
                padding: Vec::new(),
            });
        }
        let n = ues.len();
        Ok(SystemSim {
            cfg,
            seed,
            ues_per_cell,
            dep,
            ues,
            cell_ues,
            pf: PfAverager::new(n, cfg.scheduler.pf_avg_window),
            tables,
            pending_dl: Vec::new(),
            pending_ul: Vec::new(),
            last_active: vec![true; n_cells],
            psdb_us,
            xr_dir: cfg.xr.direction,
            warmup_us: secs_to_us(cfg.scenario.warmup_s),
            end_us,
            record_events,
            events: Vec::new(),
            padding_samples: Vec::new(),
            rb_util: Vec::new(),
        })
    }

    pub fn run(mut self) -> Result<RunOutput> {
        let mut eng: Engine<Ev> = Engine::new(SimClock::default());
        for u in 0..self.ues.len() {
            let ue = &mut self.ues[u];
            if let Some(v) = ue.video.as_mut() {
                let f = v.next_frame(&mut ue.traffic_rng);
                eng.schedule(f.arrival_us, Ev::Frame(u))?;
                ue.next_frame = Some(f);
            }
            if let Some(p) = &ue.pose {
                eng.schedule(p.next_arrival(), Ev::Pose(u))?;
            }
            if let Some(f) = ue.ftp.as_mut() {
                eng.schedule(f.next_arrival(&mut ue.traffic_rng), Ev::Ftp(u))?;
            }
        }
        eng.schedule(0, Ev::Slot(0))?;
        let end_us = self.end_us;
        let mut failure: Option<Error> = None;
        eng.run_until(end_us - 1, |eng, ev| {
            if failure.is_some() {
                return;
            }
            let next = match ev.kind {
                Ev::Slot(s) => {
                    self.process_slot(s);
                    Some(((s + 1) as Micros * SLOT_US, Ev::Slot(s + 1)))
                }
                Ev::Frame(u) => self.on_frame(u, ev.time).map(|t| (t, Ev::Frame(u))),
                Ev::Pose(u) => self.on_pose(u).map(|t| (t, Ev::Pose(u))),
                Ev::Ftp(u) => self.on_ftp(u, ev.time).map(|t| (t, Ev::Ftp(u))),
            };
            if let Some((t, e)) = next {
                if t < end_us {
                    if let Err(e) = eng.schedule(t, e) {
                        failure = Some(e.into());
                    }
                }
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(self.finish())
    }

    fn log(&mut self, time_us: Micros, ue: usize, event: &'static str, id: u64, value: f64) {
        if self.record_events {
            self.events.push(EventRecord {
                time_us,
                ue,
                event,
                id,
                value,
            });
        }
    }

    // ---- arrivals ----

    fn on_frame(&mut self, u: usize, now: Micros) -> Option<Micros> {
        let psdb = self.psdb_us;
        let dir = self.xr_dir;
        let ue = &mut self.ues[u];
        let frame = ue.next_frame.take()?;
        let sets = ue.frag.fragment_frame(&frame, Some(psdb));
        let idx = ue.frames.len();
        ue.frames.push(FrameRec {
            arrival_us: frame.arrival_us,
            nominal_us: to_micros(frame.nominal),
            sets_left: sets.len(),
            failed: false,
            completed_us: None,
            first_chance_us: None,
        });
        ue.open_frames.push(idx);
        let mut logged = Vec::new();
        for set in sets {
            ue.ledger.register(set.id, set.total_bytes as u64, set.arrival_us);
            ue.set_frame.insert(set.id, idx);
            logged.push(("set", set.id, set.total_bytes));
            for p in set.pdus {
                logged.push(("arrival", p.id, p.bytes));
                ue.queue(dir).push(p);
            }
        }
        if dir == Direction::Ul {
            ue.unreported = true;
        }
        let video = ue.video.as_mut()?;
        let f = video.next_frame(&mut ue.traffic_rng);
        let t = f.arrival_us;
        ue.next_frame = Some(f);
        self.log(now, u, "frame", idx as u64, frame.bytes as f64);
        for (e, id, b) in logged {
            self.log(now, u, e, id, b as f64);
        }
        Some(t)
    }

    fn on_pose(&mut self, u: usize) -> Option<Micros> {
        let psdb = self.psdb_us;
        let ue = &mut self.ues[u];
        let pose = ue.pose.as_mut()?;
        let p = pose.next_pdu(&mut ue.frag.ids, Some(psdb));
        ue.ledger.register(p.pdu_set_id, p.bytes as u64, p.arrival_us);
        let (now, set, id, b) = (p.arrival_us, p.pdu_set_id, p.id, p.bytes as f64);
        ue.ul.push(p);
        ue.unreported = true;
        let next = pose.next_arrival();
        self.log(now, u, "set", set, b);
        self.log(now, u, "arrival", id, b);
        Some(next)
    }

    fn on_ftp(&mut self, u: usize, now: Micros) -> Option<Micros> {
        let mtu = self.cfg.framing.mtu;
        let ue = &mut self.ues[u];
        let ftp = ue.ftp.as_mut()?;
        for p in ftp.file_pdus(now, mtu, &mut ue.frag.ids) {
            ue.dl.push(p);
        }
        Some(ftp.next_arrival(&mut ue.traffic_rng))
    }

    // ---- slots ----

    fn process_slot(&mut self, s: u64) {
        let now = s as Micros * SLOT_US;
        let st = slot_type(s);
        for u in 0..self.ues.len() {
            self.run_discards(u, now);
        }
        let awake: Vec<bool> = (0..self.ues.len()).map(|u| self.drx_begin(u, s, now)).collect();
        let mut data = vec![false; self.ues.len()];
        let mut txs: Vec<Tb> = Vec::new();
        for c in 0..self.cell_ues.len() {
            if st.carries_dl() {
                self.schedule_dl(c, s, st, &awake, &mut data, &mut txs);
            } else {
                self.schedule_ul(c, s, st, &awake, &mut data, &mut txs);
            }
        }
        self.decode(s, st, txs);
        if s % self.cfg.radio.csi_period_slots == 0 {
            for u in 0..self.ues.len() {
                let sinr = self.dep.dl_sinr_db(&self.cfg.radio, u, &self.last_active);
                self.ues[u].dl_mcs = select_mcs(sinr);
                self.ues[u].ul_mcs = select_mcs(self.ues[u].ul_sinr_est);
            }
        }
        for u in 0..self.ues.len() {
            let ue = &mut self.ues[u];
            if awake[u] {
                for &f in &ue.open_frames {
                    let fr = &mut ue.frames[f];
                    if fr.first_chance_us.is_none() && fr.arrival_us <= now {
                        fr.first_chance_us = Some(now);
                    }
                }
            }
            if now >= self.warmup_us {
                ue.activity.push(if data[u] {
                    Activity::Data
                } else if awake[u] {
                    Activity::Monitor
                } else {
                    Activity::Sleep
                });
            }
        }
    }

    fn run_discards(&mut self, u: usize, now: Micros) {
        let profile = self.cfg.qos.clone();
        let mut dropped_sets: Vec<(u64, &'static str)> = Vec::new();
        let mut events: Vec<DiscardEvent> = Vec::new();
        {
            let n_xr = self.cell_ues[self.ues[u].cell].iter().filter(|&&v| self.ues[v].xr).count().max(1);
            let n_rb = self.cfg.radio.n_rb;
            let ue = &mut self.ues[u];
            for dir in [Direction::Dl, Direction::Ul] {
                let q = ue.queue(dir);
                if q.is_empty() {
                    continue;
                }
                events.extend(q.discard_expired(now, &profile));
                if profile.psi_discard && ue.xr {
                    let (se, share) = match dir {
                        Direction::Dl => (ue.dl_mcs.se, (3.0 * 12.0 + 8.0) / 60.0),
                        Direction::Ul => (ue.ul_mcs.se, 0.2),
                    };
                    let bits_per_slot = tb_bits(se, n_rb, 12) as f64 * share / n_xr as f64;
                    let drain = bits_per_slot / 8.0 / SLOT_US as f64;
                    let threshold = (profile.congestion_frac * self.psdb_us as f64) as Micros;
                    for set in ue.queue(dir).psi_discard(now, threshold, drain, &profile) {
                        dropped_sets.push((set, "discard_psi"));
                    }
                }
            }
        }
        for e in events {
            self.log(now, u, e.cause.name(), e.pdu_id, e.set_id as f64);
            self.set_lost(u, e.set_id);
        }
        for (set, name) in dropped_sets {
            self.log(now, u, name, set, set as f64);
            self.set_lost(u, set);
        }
    }

    fn set_lost(&mut self, u: usize, set: u64) {
        let ue = &mut self.ues[u];
        if ue.ledger.mark_lost(set) {
            if let Some(&f) = ue.set_frame.get(&set) {
                ue.frames[f].failed = true;
            }
        }
    }

    /// Advances DRX (and A-DRX) and tells whether the UE can be scheduled.
    fn drx_begin(&mut self, u: usize, s: u64, now: Micros) -> bool {
        let psdb = self.psdb_us;
        let ue = &mut self.ues[u];
        let Some(cfg) = ue.drx_cfg.as_mut() else { return true };
        if let Some(a) = ue.adrx.as_mut() {
            loop {
                let decide_at = to_micros(a.base + cfg.cycle * a.next_k as i64) - a.lead_us;
                if now < decide_at {
                    break;
                }
                let fb = std::mem::take(&mut a.fb);
                let d = a.ctl.update(&fb);
                cfg.start_offset = a.base + from_micros(d.offset_us);
                cfg.on_duration = from_micros(d.on_duration_us);
                a.next_k += 1;
            }
            // finalised frames feed the next decision
            let mut still_open = Vec::with_capacity(ue.open_frames.len());
            for &f in &ue.open_frames {
                let fr = &ue.frames[f];
                if fr.failed || fr.completed_us.is_some() {
                    a.fb.frames += 1;
                    let ok = fr.completed_us.is_some_and(|c| c - fr.arrival_us <= psdb) && !fr.failed;
                    if !ok {
                        a.fb.violations += 1;
                    }
                    if let (Some(c), false) = (fr.completed_us, fr.failed) {
                        let start = fr.first_chance_us.unwrap_or(fr.arrival_us).max(fr.arrival_us);
                        a.fb.samples.push(FrameSample {
                            phase_us: fr.arrival_us - fr.nominal_us,
                            service_us: c - start,
                        });
                    }
                } else {
                    still_open.push(f);
                }
            }
            ue.open_frames = still_open;
        } else {
            ue.open_frames.retain(|&f| !ue.frames[f].failed && ue.frames[f].completed_us.is_none());
        }
        let monitoring = ue.drx.begin_slot(cfg, s);
        monitoring || ue.sr_pending || ue.forced_awake.remove(&s)
    }

    fn schedule_dl(&mut self, c: usize, s: u64, st: SlotType, awake: &[bool], data: &mut [bool], txs: &mut Vec<Tb>) {
        let n_rb = self.cfg.radio.n_rb;
        let now = s as Micros * SLOT_US;
        let mut pool = RbPool::full(n_rb);
        let mut keep = Vec::new();
        for mut tb in std::mem::take(&mut self.pending_dl) {
            if self.ues[tb.ue].cell != c || tb.due_slot > s {
                keep.push(tb);
                continue;
            }
            let need = tb.rb_count();
            if pool.remaining() < need {
                keep.push(tb);
                continue;
            }
            tb.rbs = pool.take(need);
            data[tb.ue] = true;
            txs.push(tb);
        }
        self.pending_dl = keep;

        let mut cands = Vec::new();
        for &u in &self.cell_ues[c] {
            let ue = &self.ues[u];
            if !awake[u] || !(ue.full_buffer || ue.dl.has_unsent()) {
                continue;
            }
            let head = ue.dl.head().map(|q| q.pdu.clone());
            let head_set = if ue.xr {
                ue.dl.head_set_progress().map(|(sent, p)| HeadSet {
                    sent_bits: sent * 8,
                    set_bits: p.set_bytes as u64 * 8,
                    remaining_us: p.deadline_us.unwrap_or(p.arrival_us + self.psdb_us) - now,
                })
            } else {
                None
            };
            cands.push(DlCandidate {
                ue: u,
                xr: ue.xr,
                queued_bytes: ue.dl.unsent_bytes(),
                full_buffer: ue.full_buffer,
                mcs: ue.dl_mcs.index,
                se: ue.dl_mcs.se,
                avg_throughput: self.pf.get(u),
                hol_delay_us: head.as_ref().map_or(0, |p| now - p.arrival_us),
                psdb_us: self.psdb_us,
                head_set,
            });
        }
        let allocs = allocate_dl(s, st, &mut pool, &cands, &self.cfg.scheduler, n_rb);
        for a in allocs {
            let ue = &mut self.ues[a.ue];
            let (segments, payload) = if ue.full_buffer {
                (Vec::new(), a.tb_bits / 8)
            } else {
                let segs = ue.dl.take_bytes(a.tb_bits / 8);
                let b = segs.iter().map(|x| x.bytes as u64).sum();
                (segs, b)
            };
            if payload == 0 {
                continue;
            }
            if let Some(cfg) = &ue.drx_cfg {
                ue.drx.on_new_grant(cfg, s);
            }
            data[a.ue] = true;
            txs.push(Tb {
                ue: a.ue,
                dir: Direction::Dl,
                segments,
                payload_bytes: payload,
                harq: HarqProcess::new(a.tb_bits, a.mcs),
                rbs: a.rbs,
                due_slot: s,
                cg: false,
            });
        }
        if now >= self.warmup_us {
            self.rb_util.push((n_rb - pool.remaining()) as f64 / n_rb as f64);
        }
    }

    fn schedule_ul(&mut self, c: usize, s: u64, st: SlotType, awake: &[bool], data: &mut [bool], txs: &mut Vec<Tb>) {
        let n_rb = self.cfg.radio.n_rb;
        let now = s as Micros * SLOT_US;
        let format = self.cfg.bsr.format;
        let ce = bsr_ce_bytes(format) as u64;
        let record = now >= self.warmup_us;
        let mut pool = RbPool::full(n_rb);
        let mut reported: Vec<usize> = Vec::new();

        let mut keep = Vec::new();
        for mut tb in std::mem::take(&mut self.pending_ul) {
            if self.ues[tb.ue].cell != c || tb.due_slot > s {
                keep.push(tb);
                continue;
            }
            let need = tb.rb_count();
            if pool.remaining() < need {
                keep.push(tb);
                continue;
            }
            tb.rbs = pool.take(need);
            data[tb.ue] = true;
            txs.push(tb);
        }
        self.pending_ul = keep;

        // configured grants
        let uto = self.cfg.cg.uto_uci;
        for &u in &self.cell_ues[c].clone() {
            let ue = &mut self.ues[u];
            let Some(cg) = ue.cg.clone() else { continue };
            while ue.cg_occ.front().is_some_and(|o| o.slot < s) {
                ue.cg_occ.pop_front();
            }
            if ue.cg_occ.front().is_none_or(|o| o.slot != s) {
                continue;
            }
            let occ = ue.cg_occ.pop_front().expect("checked");
            if ue.cg_reclaimed.remove(&s) {
                continue; // left in the pool for dynamic grants
            }
            if !pool.reserve(occ.rbs) {
                continue;
            }
            let se = MCS_SE[cg.mcs as usize];
            if let Some(mut tb) = ue.cg_retx.take() {
                tb.rbs = vec![occ.rbs];
                data[u] = true;
                txs.push(tb);
                continue;
            }
            if !ue.ul.has_unsent() {
                continue;
            }
            let cap = tb_bits(se, occ.rbs.len, st.data_symbols()) / 8;
            let segs = ue.ul.take_bytes(cap.saturating_sub(ce));
            let payload: u64 = segs.iter().map(|x| x.bytes as u64).sum();
            let pad = realized_overhead(cap, payload);
            if record && ue.xr {
                ue.padding.push(pad);
                self.padding_samples.push(pad as f64);
            }
            ue.gnb_est = ue.gnb_est.saturating_sub(payload);
            data[u] = true;
            if uto {
                let window = cg.uto_uci_window as usize;
                let upcoming: Vec<CgOccasion> = ue.cg_occ.iter().take(window).copied().collect();
                let caps: Vec<u64> = upcoming
                    .iter()
                    .map(|o| (tb_bits(se, o.rbs.len, SlotType::Uplink.data_symbols()) / 8).saturating_sub(ce))
                    .collect();
                let bits = crate::mac::build_uto_uci(ue.ul.unsent_bytes(), &caps, window);
                for (slot, _) in crate::mac::reclaim_unused(&bits, &upcoming, s + 1) {
                    ue.cg_reclaimed.insert(slot);
                }
            }
            txs.push(Tb {
                ue: u,
                dir: Direction::Ul,
                segments: segs,
                payload_bytes: payload,
                harq: HarqProcess::new(cap * 8, cg.mcs),
                rbs: vec![occ.rbs],
                due_slot: s,
                cg: true,
            });
            reported.push(u);
        }

        // dynamic grants
        let mut cands = Vec::new();
        for &u in &self.cell_ues[c] {
            let ue = &self.ues[u];
            if !awake[u] || ue.gnb_est == 0 || reported.contains(&u) {
                continue;
            }
            cands.push(UlCandidate {
                ue: u,
                xr: ue.xr,
                reported_bytes: ue.gnb_est + ce,
                mcs: ue.ul_mcs.index,
                se: ue.ul_mcs.se,
                max_rbs: ue.ul_max_rbs,
                hol_delay_us: now - ue.est_since,
                psdb_us: self.psdb_us,
                dsr_remaining_us: ue.dsr.as_ref().map(|d| d.smallest_remaining_us - (now - d.reference_time_us)),
            });
        }
        for a in allocate_ul(s, st, &mut pool, &cands) {
            let ue = &mut self.ues[a.ue];
            let cap = a.tb_bits / 8;
            let segs = ue.ul.take_bytes(cap.saturating_sub(ce));
            let payload: u64 = segs.iter().map(|x| x.bytes as u64).sum();
            let pad = realized_overhead(cap, payload);
            if record && ue.xr {
                ue.padding.push(pad);
                self.padding_samples.push(pad as f64);
            }
            ue.gnb_est = ue.gnb_est.saturating_sub(cap.saturating_sub(ce));
            ue.sr_pending = false;
            if let Some(cfg) = &ue.drx_cfg {
                ue.drx.on_new_grant(cfg, s);
            }
            data[a.ue] = true;
            txs.push(Tb {
                ue: a.ue,
                dir: Direction::Ul,
                segments: segs,
                payload_bytes: payload,
                harq: HarqProcess::new(a.tb_bits, a.mcs),
                rbs: a.rbs,
                due_slot: s,
                cg: false,
            });
            reported.push(a.ue);
        }

        // buffer reports, usable from the next uplink slot
        let threshold = (self.cfg.bsr.dsr_threshold_ms * 1000.0).round() as Micros;
        for &u in &self.cell_ues[c] {
            let ue = &mut self.ues[u];
            let unsent = ue.ul.unsent_bytes();
            if reported.contains(&u) {
                let was_zero = ue.gnb_est == 0;
                ue.gnb_est = if unsent == 0 { 0 } else { make_bsr(format, unsent, &self.tables, 0, now).reported_bytes };
                if was_zero && ue.gnb_est > 0 {
                    ue.est_since = ue.ul.head().map_or(now, |q| q.pdu.arrival_us.max(now - self.psdb_us));
                }
                ue.unreported = false;
                if self.cfg.bsr.dsr {
                    let items: Vec<DsrItem> = ue
                        .ul
                        .items()
                        .filter(|q| q.unsent > 0)
                        .filter_map(|q| {
                            q.pdu.deadline_us.map(|d| DsrItem {
                                pdu_id: q.pdu.id,
                                deadline_us: d,
                                bytes: q.unsent as u64,
                            })
                        })
                        .collect();
                    if let Some(r) = trigger_dsr(&items, &mut ue.dsr_covered, threshold, now, now, 0) {
                        ue.dsr = Some(r);
                    }
                    if unsent == 0 {
                        ue.dsr = None;
                    }
                }
            } else if ue.unreported && unsent > 0 && ue.cg.is_none() {
                // scheduling request with a report on PUCCH
                ue.gnb_est = make_bsr(format, unsent, &self.tables, 0, now).reported_bytes;
                ue.est_since = now;
                ue.sr_pending = true;
                ue.unreported = false;
            }
        }
    }

    fn ul_sinr(&self, tb: &Tb, txs: &[Tb]) -> f64 {
        let radio = &self.cfg.radio;
        let u = tb.ue;
        let serving = self.dep.serving[u];
        let n = tb.rb_count().max(1);
        let loss = self.dep.serving_loss_db(u);
        let p_rb = ul_tx_power_dbm(radio, n, loss) - lin_to_db(n as f64);
        let interference: Vec<f64> = txs
            .iter()
            .filter(|o| o.dir == Direction::Ul && self.dep.serving[o.ue] != serving)
            .filter_map(|o| {
                let overlap: u32 = tb
                    .rbs
                    .iter()
                    .flat_map(|a| o.rbs.iter().map(move |b| a.end().min(b.end()).saturating_sub(a.start.max(b.start))))
                    .sum();
                if overlap == 0 {
                    return None;
                }
                let m = o.rb_count().max(1);
                let lo = self.dep.serving_loss_db(o.ue);
                let p = ul_tx_power_dbm(radio, m, lo) - lin_to_db(m as f64);
                Some(p - self.dep.coupling_loss_db[o.ue][serving] + lin_to_db(overlap as f64 / n as f64))
            })
            .collect();
        sinr_db(p_rb - loss, interference, radio.noise_per_rb_dbm(radio.bs_noise_figure_db))
    }

    fn decode(&mut self, s: u64, st: SlotType, txs: Vec<Tb>) {
        let done_at = (s + 1) as Micros * SLOT_US;
        if st.carries_dl() {
            let mut active = vec![false; self.cell_ues.len()];
            for tb in &txs {
                active[self.ues[tb.ue].cell] = true;
            }
            self.last_active = active;
        }
        let sinrs: Vec<f64> = txs
            .iter()
            .map(|tb| match tb.dir {
                Direction::Dl => self.dep.dl_sinr_db(&self.cfg.radio, tb.ue, &self.last_active),
                Direction::Ul => self.ul_sinr(tb, &txs),
            })
            .collect();
        let mut served = vec![0u64; self.ues.len()];
        for (mut tb, sinr) in txs.into_iter().zip(sinrs) {
            let u = tb.ue;
            if tb.dir == Direction::Ul {
                self.ues[u].ul_sinr_est = sinr;
            }
            let outcome = tb.harq.attempt(sinr, &mut self.ues[u].harq_rng);
            match outcome {
                HarqOutcome::Ack => {
                    if tb.dir == Direction::Dl {
                        served[u] += tb.payload_bytes * 8;
                    }
                    self.deliver(u, tb.dir, &tb.segments, tb.payload_bytes, done_at);
                }
                HarqOutcome::Nack => {
                    let ue = &self.ues[u];
                    let autonomous = tb.cg && ue.drx_cfg.as_ref().is_some_and(|d| !d.retx_monitoring);
                    if autonomous {
                        self.ues[u].cg_retx = Some(tb);
                    } else {
                        tb.due_slot = next_slot_of(s + HARQ_RTT_SLOTS, tb.dir);
                        if tb.cg && ue.drx_cfg.is_some() {
                            self.ues[u].forced_awake.insert(tb.due_slot);
                        }
                        match tb.dir {
                            Direction::Dl => self.pending_dl.push(tb),
                            Direction::Ul => self.pending_ul.push(tb),
                        }
                    }
                }
                HarqOutcome::Dropped => self.lose(u, tb.dir, &tb.segments, done_at),
            }
        }
        for (u, bits) in served.into_iter().enumerate() {
            if st.carries_dl() {
                self.pf.update(u, bits as f64);
            }
        }
    }

    fn deliver(&mut self, u: usize, dir: Direction, segments: &[Segment], payload: u64, at: Micros) {
        let record = at > self.warmup_us;
        let ue = &mut self.ues[u];
        if record {
            ue.delivered_bytes += payload;
        }
        let done = ue.queue(dir).on_delivered(segments);
        let mut log = Vec::new();
        for s in segments {
            ue.ledger.delivered(s.set_id, s.bytes as u64, at);
        }
        for p in &done {
            log.push(("served", p.id, p.bytes as f64));
            let set = p.pdu_set_id;
            let complete = ue.ledger.get(set).is_some_and(|st| st.completed_us.is_some() && !st.lost);
            if complete && p.last_of_set || complete && ue.set_frame.contains_key(&set) {
                if let Some(f) = ue.set_frame.remove(&set) {
                    let fr = &mut ue.frames[f];
                    fr.sets_left = fr.sets_left.saturating_sub(1);
                    if fr.sets_left == 0 && !fr.failed {
                        fr.completed_us = Some(at);
                        log.push(("frame_done", f as u64, (at - fr.arrival_us) as f64 / 1000.0));
                    }
                }
            }
        }
        for (e, id, v) in log {
            self.log(at, u, e, id, v);
        }
    }

    fn lose(&mut self, u: usize, dir: Direction, segments: &[Segment], at: Micros) {
        let profile = self.cfg.qos.clone();
        let lost = self.ues[u].queue(dir).on_lost(segments);
        for p in lost {
            self.log(at, u, "lost", p.id, p.pdu_set_id as f64);
            self.set_lost(u, p.pdu_set_id);
            let cascaded = self.ues[u].queue(dir).psihi_discard(&p, &profile);
            for id in cascaded {
                self.log(at, u, "discard_psihi", id, p.pdu_set_id as f64);
            }
        }
    }

    fn finish(self) -> RunOutput {
        let span_s = (self.end_us - self.warmup_us) as f64 / 1e6;
        let mut frame_delays_ms = Vec::new();
        let mut reports = Vec::with_capacity(self.ues.len());
        for (u, ue) in self.ues.iter().enumerate() {
            let (mut total, mut ok) = (0usize, 0usize);
            for f in &ue.frames {
                if f.arrival_us < self.warmup_us {
                    continue;
                }
                let deadline = f.arrival_us + self.psdb_us;
                let counted = f.failed || f.completed_us.is_some() || deadline <= self.end_us;
                if !counted {
                    continue;
                }
                total += 1;
                if let Some(c) = f.completed_us.filter(|_| !f.failed) {
                    frame_delays_ms.push((c - f.arrival_us) as f64 / 1000.0);
                    if c - f.arrival_us <= self.psdb_us {
                        ok += 1;
                    }
                }
            }
            let states = classify_trace(&ue.activity, &self.cfg.power);
            reports.push(UeReport {
                ue: u,
                cell: ue.cell,
                xr: ue.xr,
                frames: total,
                frames_in_budget: ok,
                satisfied: if ue.xr { satisfied_from_counts(ok, total) } else { None },
                mean_power: power_for_run(&states, &self.cfg.power),
                throughput_mbps: ue.delivered_bytes as f64 * 8.0 / span_s / 1e6,
                mean_padding_bytes: (!ue.padding.is_empty())
                    .then(|| ue.padding.iter().sum::<u64>() as f64 / ue.padding.len() as f64),
                sets_total: ue.ledger.total(),
                sets_lost: ue.ledger.lost(),
            });
        }
        RunOutput {
            seed: self.seed,
            ues_per_cell: self.ues_per_cell,
            ues: reports,
            padding_samples: self.padding_samples,
            rb_utilization: self.rb_util,
            frame_delays_ms,
            events: self.events,
        }
    }
}

/// UL SINR of a lone UE under full power control.
fn ul_sinr_alone(cfg: &ExperimentConfig, loss_db: f64, n_rb: u32) -> f64 {
    let r = &cfg.radio;
    let p_rb = ul_tx_power_dbm(r, n_rb, loss_db) - lin_to_db(n_rb.max(1) as f64);
    sinr_db(p_rb - loss_db, std::iter::empty(), r.noise_per_rb_dbm(r.bs_noise_figure_db))
}

fn drx_setup(cfg: &ExperimentConfig, phase: RationalMs, psdb_us: Micros) -> Result<(Option<DrxConfig>, Option<Adrx>)> {
    let period = cfg.xr.period();
    let first = phase + period;
    match cfg.drx.mode {
        DrxMode::Off => Ok((None, None)),
        DrxMode::Fixed => {
            let cycle = cfg.drx.cycle_ms.0;
            let offset = match cfg.drx.lead_ms {
                Some(l) => crate::drx::wrap_offset(first - l.0, cycle),
                None => ms(0),
            };
            let d = cfg.drx_config(offset);
            d.validate()?;
            Ok((Some(d), None))
        }
        DrxMode::Adaptive => {
            let mut d = cfg.drx_config(ms(0));
            let lead = cfg.drx.lead_ms.map_or(ms(0), |l| l.0);
            let initial = AdrxDecision {
                offset_us: -to_micros(lead),
                on_duration_us: to_micros(cfg.drx.on_duration_ms.0),
            };
            // cycle 0 covers the first frame
            let mut base = first;
            let min_offset = cfg
                .drx
                .adaptive
                .offset_grid_ms
                .iter()
                .map(|&o| (o * 1000.0).round() as Micros)
                .chain([initial.offset_us])
                .min()
                .unwrap_or(0);
            while to_micros(base) + min_offset < 0 {
                base += d.cycle;
            }
            d.start_offset = base + from_micros(initial.offset_us);
            d.validate()?;
            let ctl = AdrxController::new(
                cfg.drx.adaptive.clone(),
                psdb_us,
                to_micros(d.cycle),
                to_micros(d.inactivity),
                initial,
            )?;
            let lead_us = (-min_offset).max(0) + 1_000;
            Ok((
                Some(d),
                Some(Adrx {
                    ctl,
                    base,
                    lead_us,
                    next_k: 1,
                    fb: CycleFeedback::default(),
                }),
            ))
        }
    }
}
