//! The assembled platform: workload driver, HAMS controller, NVDIMM, NVMe
//! queues, interconnect and flash, advanced by one event queue.
//!
//! Each handler below is one dispatched event. State changes inside a
//! handler are atomic with respect to power failure; that is the unit the
//! crash harness injects between.

use std::collections::{BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::config::{Datapath, SystemConfig};
use crate::controller::{
    AccessKind, CompletionOutcome, ControllerError, HamsController, LookupOutcome, MemoryRequest, Mode,
};
use crate::flash::{FlashError, UllFlash};
use crate::interconnect::{Ddr4Bus, InterconnectError, Master, PcieLinks};
use crate::mos::PageContent;
use crate::nvdimm::{Nvdimm, NvdimmError, PinnedRegion, TagEntry, CQ_ENTRY_BYTES, SQ_ENTRY_BYTES};
use crate::nvme::{device_fetch, device_post, NvmeCommand, NvmeEngine, NvmeError, Opcode};
use crate::sim::{DeviceId, EventQueue, SimError, SimTime};
use crate::timeline::Timeline;
use crate::workload::energy::EnergyCounters;
use crate::workload::metrics::{LatencyBreakdown, MetricsReport, RequestRecord};
use crate::workload::trace::TraceRecord;

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Nvme(#[from] NvmeError),
    #[error(transparent)]
    Nvdimm(#[from] NvdimmError),
    #[error(transparent)]
    Flash(#[from] FlashError),
    #[error(transparent)]
    Interconnect(#[from] InterconnectError),
    #[error("request {req_id} at {addr:#x} is outside the MoS space")]
    OutOfRange { req_id: u64, addr: u64 },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ev {
    Issue,
    LineDone { rid: u64 },
    Doorbell,
    Fetched { fetch: SimTime },
    Arrive { cid: u16 },
    ReadReady { cid: u16 },
    DmaOutDone { cid: u16 },
    DmaIn { cid: u16 },
    LockGrant,
    LockRelease,
    WriteAck { cid: u16 },
    Commit { lba: u64, seq: u64, content: PageContent },
    CqPosted { cid: u16 },
    Msi,
    FillServed { txn: u64 },
}

impl Ev {
    fn target(&self) -> DeviceId {
        match self {
            Ev::Issue => DeviceId::Driver,
            Ev::LineDone { .. } | Ev::Msi | Ev::FillServed { .. } => DeviceId::Controller,
            Ev::Doorbell | Ev::Fetched { .. } | Ev::Arrive { .. } | Ev::CqPosted { .. } => DeviceId::NvmeEngine,
            Ev::ReadReady { .. } | Ev::WriteAck { .. } | Ev::Commit { .. } => DeviceId::Flash,
            Ev::DmaOutDone { .. } | Ev::DmaIn { .. } | Ev::LockGrant | Ev::LockRelease => DeviceId::Interconnect,
        }
    }

    fn key(&self) -> (u64, u64) {
        match *self {
            Ev::Issue => (0, 0),
            Ev::LineDone { rid } => (1, rid),
            Ev::Doorbell => (2, 0),
            Ev::Fetched { fetch } => (3, fetch.as_ps()),
            Ev::Arrive { cid } => (4, cid as u64),
            Ev::ReadReady { cid } => (5, cid as u64),
            Ev::DmaOutDone { cid } => (6, cid as u64),
            Ev::DmaIn { cid } => (7, cid as u64),
            Ev::LockGrant => (8, 0),
            Ev::LockRelease => (9, 0),
            Ev::WriteAck { cid } => (10, cid as u64),
            Ev::Commit { lba, seq, .. } => (11, lba ^ (seq << 40)),
            Ev::CqPosted { cid } => (12, cid as u64),
            Ev::Msi => (13, 0),
            Ev::FillServed { txn } => (14, txn),
        }
    }
}

/// Acknowledged-writes oracle: what every touched page must hold, given
/// the acknowledgements delivered so far.
#[derive(Clone, Debug, Default)]
pub struct AckOracle {
    initial: HashMap<u64, PageContent>,
    current: HashMap<u64, PageContent>,
    history: HashMap<u64, Vec<PageContent>>,
    touched: BTreeSet<u64>,
    acked_stores: u64,
}

impl AckOracle {
    pub fn seed(&mut self, page: u64, content: PageContent) {
        self.initial.insert(page, content);
        self.touched.insert(page);
    }

    pub fn expected(&self, page: u64) -> PageContent {
        self.current
            .get(&page)
            .or_else(|| self.initial.get(&page))
            .copied()
            .unwrap_or_default()
    }

    fn record(&mut self, page: u64, kind: AccessKind, req_id: u64, offset: u64, size: u64) {
        self.touched.insert(page);
        if kind == AccessKind::Store {
            let prev = self.expected(page);
            self.history.entry(page).or_default().push(prev);
            self.current.insert(page, prev.apply_store(req_id, offset, size));
            self.acked_stores += 1;
        }
    }

    /// True if `content` is a superseded acknowledged version of `page`.
    pub fn is_older_version(&self, page: u64, content: PageContent) -> bool {
        self.history.get(&page).is_some_and(|h| h.contains(&content))
    }

    /// Every page the workload touched or seeded, sorted.
    pub fn pages(&self) -> impl Iterator<Item = u64> + '_ {
        self.touched.iter().copied()
    }

    pub fn acked_stores(&self) -> u64 {
        self.acked_stores
    }
}

#[derive(Clone, Copy, Debug)]
struct ReqTrack {
    req: MemoryRequest,
    classes: LatencyBreakdown,
    missed: bool,
    acked: bool,
}

#[derive(Clone, Copy, Debug)]
struct DevCmd {
    cmd: NvmeCommand,
    seq: u64,
    content: PageContent,
    charges: LatencyBreakdown,
    mark: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LockKind {
    DmaIn,
    DmaOut,
    Completion,
}

#[derive(Clone, Copy, Debug)]
struct LockOp {
    cid: u16,
    kind: LockKind,
    bytes: u64,
}

/// Persistent state captured at a power failure, after the supercap flush.
#[derive(Clone, Debug)]
pub struct CrashImage {
    pub at: SimTime,
    pub events: u64,
    pub nvdimm: Nvdimm,
    pub flash: UllFlash,
    pub oracle: AckOracle,
    pub journaled: Vec<u16>,
}

const PRUNE_EVERY: u64 = 4096;

pub struct Platform {
    cfg: SystemConfig,
    q: EventQueue<Ev>,
    pub nv: Nvdimm,
    pub eng: NvmeEngine,
    pub ctrl: HamsController,
    pub flash: UllFlash,
    pub bus: Ddr4Bus,
    pcie: PcieLinks,
    reg_bus: Timeline,
    msi_latency: SimTime,
    recovering: bool,
    // device side
    fetching: bool,
    host_charges: HashMap<u16, LatencyBreakdown>,
    dev_cmds: HashMap<u16, DevCmd>,
    blocked_reads: HashMap<u64, Vec<u16>>,
    lock_queue: VecDeque<LockOp>,
    lock_active: Option<LockOp>,
    txn_charges: HashMap<u64, LatencyBreakdown>,
    // driver side
    trace: Vec<TraceRecord>,
    next: usize,
    in_flight: usize,
    max_outstanding: usize,
    issue_pending: bool,
    reqs: Vec<ReqTrack>,
    records: Vec<RequestRecord>,
    oracle: AckOracle,
    counters: EnergyCounters,
    digest: u64,
}

impl Platform {
    pub fn new(cfg: &SystemConfig, trace: Vec<TraceRecord>) -> Result<Self, PlatformError> {
        let pinned = PinnedRegion::new(
            &cfg.mos,
            cfg.nvme.queue_depth,
            cfg.nvme.prp_slots(),
            cfg.driver.wait_queue_capacity,
        )?;
        let nv = Nvdimm::new(&cfg.mos, cfg.ddr4.clone(), pinned);
        let buffer = match cfg.platform.datapath {
            Datapath::Baseline => Some(cfg.buffer.clone()),
            Datapath::Advanced => None,
        };
        let flash = UllFlash::new(cfg.flash.clone(), cfg.mos.page_size_bytes, cfg.mos.flash_bytes, buffer)?;
        Self::assemble(cfg, nv, flash, trace)
    }

    fn assemble(
        cfg: &SystemConfig,
        nv: Nvdimm,
        flash: UllFlash,
        trace: Vec<TraceRecord>,
    ) -> Result<Self, PlatformError> {
        let mode = cfg.platform.mode;
        let mut eng = NvmeEngine::new(cfg.nvme.queue_depth);
        eng.set_persist(mode == Mode::Persist);
        let mut q = EventQueue::new();
        if let Some(first) = trace.first() {
            q.schedule(first.tick, DeviceId::Driver, Ev::Issue)?;
        }
        Ok(Platform {
            q,
            ctrl: HamsController::new(&cfg.mos, mode),
            eng,
            nv,
            flash,
            bus: Ddr4Bus::new(cfg.ddr4.clone()),
            pcie: PcieLinks::new(cfg.pcie.clone()),
            reg_bus: Timeline::new(),
            msi_latency: SimTime::from_ns_f64(cfg.nvme.msi_latency_ns),
            recovering: false,
            fetching: false,
            host_charges: HashMap::new(),
            dev_cmds: HashMap::new(),
            blocked_reads: HashMap::new(),
            lock_queue: VecDeque::new(),
            lock_active: None,
            txn_charges: HashMap::new(),
            issue_pending: !trace.is_empty(),
            trace,
            next: 0,
            in_flight: 0,
            max_outstanding: cfg.driver.max_outstanding as usize,
            reqs: Vec::new(),
            records: Vec::new(),
            oracle: AckOracle::default(),
            counters: EnergyCounters::default(),
            digest: 0xcbf2_9ce4_8422_2325,
            cfg: cfg.clone(),
        })
    }

    /// Power-up on a crash image: restage the journaled commands and
    /// return the platform ready to drain them. Call [`Self::run`] and then
    /// [`Self::finish_recovery`].
    pub fn recover(cfg: &SystemConfig, image: CrashImage) -> Result<(Self, Vec<NvmeCommand>), PlatformError> {
        let mut p = Self::assemble(cfg, image.nvdimm, image.flash, Vec::new())?;
        p.recovering = true;
        p.oracle = image.oracle;
        let replay = p.eng.recover(&mut p.nv.pinned)?;
        p.counters.commands += replay.len() as u64;
        let now = SimTime::ZERO;
        match cfg.platform.datapath {
            Datapath::Baseline => {
                if !replay.is_empty() {
                    let (_, e) = p.pcie.send_down(now, 4, Master::Controller.id());
                    p.counters.pcie_bytes += 4;
                    p.schedule(e, Ev::Doorbell)?;
                }
            }
            Datapath::Advanced => {
                let mut t = now;
                for cmd in &replay {
                    let (_, e) = p.push_register(t);
                    p.schedule(e, Ev::Arrive { cid: cmd.cid })?;
                    t = e;
                }
            }
        }
        Ok((p, replay))
    }

    /// Ends recovery once every restaged command has drained.
    pub fn finish_recovery(&mut self) -> Result<(), PlatformError> {
        if self.eng.outstanding() != 0 || !self.q.is_empty() {
            return Err(PlatformError::Invariant(format!(
                "recovery drain incomplete: {} commands outstanding",
                self.eng.outstanding()
            )));
        }
        HamsController::finalize_recovery(&mut self.nv);
        self.recovering = false;
        Ok(())
    }

    /// Enables occupancy logging on every timed resource.
    pub fn enable_audit(&mut self) {
        self.bus.enable_audit();
        self.flash.enable_audit();
    }

    /// Seeds flash content for `page` before the run.
    pub fn preload_flash(&mut self, page: u64, content: PageContent) {
        self.flash.preload(page, content);
        self.oracle.seed(page, content);
    }

    /// Seeds `page` as a dirty resident line that flash does not yet hold.
    pub fn preload_dirty(&mut self, page: u64, content: PageContent) {
        let (tag, set) = self.cfg.mos.split_page(page);
        self.nv.set_tag(
            set,
            TagEntry {
                tag,
                valid: true,
                dirty: true,
                busy: false,
            },
        );
        self.nv.write_frame(set, content);
        self.oracle.seed(page, content);
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn now(&self) -> SimTime {
        self.q.now()
    }

    pub fn events_dispatched(&self) -> u64 {
        self.q.dispatched()
    }

    /// Running hash of the dispatched event sequence.
    pub fn event_digest(&self) -> u64 {
        self.digest
    }

    pub fn records(&self) -> &[RequestRecord] {
        &self.records
    }

    pub fn oracle(&self) -> &AckOracle {
        &self.oracle
    }

    pub fn counters(&self) -> EnergyCounters {
        let mut c = self.counters;
        c.flash_page_reads = self.flash.stats.unit_reads;
        c.flash_page_programs = self.flash.stats.unit_programs;
        c.buffer_page_accesses = self.flash.stats.buffer_accesses;
        c
    }

    pub fn report(&self, workload: &str) -> MetricsReport {
        let mut r = MetricsReport::from_records(
            self.cfg.kind().name(),
            workload,
            &self.records,
            Default::default(),
        );
        r.energy = self.cfg.energy.account(
            &self.counters(),
            r.makespan,
            self.cfg.platform.datapath == Datapath::Baseline,
        );
        r
    }

    /// What a reader of `page` would see: the cached line if resident,
    /// otherwise the device (buffer or medium).
    pub fn logical_content(&self, page: u64) -> PageContent {
        let (tag, set) = self.cfg.mos.split_page(page);
        let e = self.nv.tag(set);
        if e.valid && e.tag == tag {
            return self.nv.frame(set);
        }
        self.flash
            .buffer()
            .and_then(|b| b.lookup(page))
            .unwrap_or_else(|| self.flash.medium_content(page))
    }

    /// Power failure now: the NVDIMM image survives, the device flushes its
    /// buffer on supercap energy, everything else is lost.
    pub fn crash_image(&self) -> CrashImage {
        let mut flash = self.flash.clone();
        flash.supercap_flush();
        CrashImage {
            at: self.now(),
            events: self.events_dispatched(),
            nvdimm: self.nv.persist_snapshot().nvdimm().clone(),
            flash,
            oracle: self.oracle.clone(),
            journaled: self.eng.journaled(&self.nv.pinned),
        }
    }

    /// Dispatches one event. Returns false when the queue is empty.
    pub fn step(&mut self) -> Result<bool, PlatformError> {
        let Some(ev) = self.q.pop_until(SimTime::MAX) else {
            return Ok(false);
        };
        let (k, v) = ev.payload.key();
        for word in [ev.fire_at.as_ps(), k, v] {
            self.digest = (self.digest ^ word).wrapping_mul(0x0100_0000_01b3);
        }
        self.handle(ev.fire_at, ev.payload)?;
        if self.q.dispatched().is_multiple_of(PRUNE_EVERY) {
            let now = self.now();
            self.bus.prune(now);
            self.pcie.down.prune(now);
            self.pcie.up.prune(now);
            self.reg_bus.prune(now);
            self.flash.prune(now);
        }
        Ok(true)
    }

    /// Dispatches up to `k` events; returns true if the queue drained.
    pub fn run_events(&mut self, k: u64) -> Result<bool, PlatformError> {
        for _ in 0..k {
            if !self.step()? {
                return Ok(true);
            }
        }
        Ok(self.q.is_empty())
    }

    /// Runs to completion and checks the end-of-run invariants.
    pub fn run(&mut self) -> Result<(), PlatformError> {
        while self.step()? {}
        self.check_quiescent()
    }

    pub fn check_quiescent(&self) -> Result<(), PlatformError> {
        let inv = |m: String| Err(PlatformError::Invariant(m));
        if self.records.len() != self.trace.len() {
            return inv(format!(
                "{} of {} requests acknowledged",
                self.records.len(),
                self.trace.len()
            ));
        }
        if self.eng.outstanding() != 0 || self.ctrl.open_transactions() != 0 {
            return inv(format!(
                "{} commands, {} transactions still open",
                self.eng.outstanding(),
                self.ctrl.open_transactions()
            ));
        }
        if self.nv.pinned.wait_len() != 0 {
            return inv("wait queue not empty at end of run".into());
        }
        if let Some(set) = self.nv.tags().iter().position(|e| e.busy) {
            return inv(format!("set {set} still busy at end of run"));
        }
        self.eng
            .check_consistency(&self.nv.pinned)
            .map_err(PlatformError::Invariant)
    }

    fn schedule(&mut self, at: SimTime, ev: Ev) -> Result<(), PlatformError> {
        self.q.schedule(at, ev.target(), ev)?;
        Ok(())
    }

    fn handle(&mut self, now: SimTime, ev: Ev) -> Result<(), PlatformError> {
        match ev {
            Ev::Issue => {
                self.issue_pending = false;
                self.try_issue(now)
            }
            Ev::LineDone { rid } => self.on_line_done(now, rid),
            Ev::Doorbell => {
                if !self.fetching {
                    self.start_fetch(now)?;
                }
                Ok(())
            }
            Ev::Fetched { fetch } => {
                let cmd = device_fetch(&mut self.nv.pinned)
                    .ok_or_else(|| PlatformError::Invariant("fetch from empty SQ".into()))??;
                self.on_arrive(now, cmd, fetch)?;
                self.start_fetch(now)
            }
            Ev::Arrive { cid } => {
                let cmd = device_fetch(&mut self.nv.pinned)
                    .ok_or_else(|| PlatformError::Invariant("register push without SQ entry".into()))??;
                if cmd.cid != cid {
                    return Err(PlatformError::Invariant(format!(
                        "pushed cid {cid} but SQ head holds {}",
                        cmd.cid
                    )));
                }
                self.on_arrive(now, cmd, SimTime::ZERO)
            }
            Ev::ReadReady { cid } => self.on_read_ready(now, cid),
            Ev::DmaOutDone { cid } => self.on_dma_out_done(now, cid),
            Ev::DmaIn { cid } => self.on_dma_in(now, cid),
            Ev::LockGrant => Ok(self.bus.grant_lock(now)?),
            Ev::LockRelease => {
                self.bus.release_lock(Master::Nvme)?;
                let op = self
                    .lock_active
                    .take()
                    .ok_or_else(|| PlatformError::Invariant("release without lock op".into()))?;
                match op.kind {
                    LockKind::DmaIn => self.on_dma_in(now, op.cid)?,
                    LockKind::DmaOut => self.on_dma_out_done(now, op.cid)?,
                    LockKind::Completion => self.on_cq_posted(now, op.cid)?,
                }
                self.start_lock(now)
            }
            Ev::WriteAck { cid } => self.on_write_ack(now, cid),
            Ev::Commit { lba, seq, content } => {
                self.flash.commit(lba, seq, content);
                Ok(())
            }
            Ev::CqPosted { cid } => self.on_cq_posted(now, cid),
            Ev::Msi => self.on_msi(now),
            Ev::FillServed { txn } => self.on_fill_served(now, txn),
        }
    }

    // ---- driver ----

    fn try_issue(&mut self, now: SimTime) -> Result<(), PlatformError> {
        while self.in_flight < self.max_outstanding && self.next < self.trace.len() {
            let rec = self.trace[self.next];
            if rec.tick > now {
                if !self.issue_pending {
                    self.issue_pending = true;
                    self.schedule(rec.tick, Ev::Issue)?;
                }
                break;
            }
            let rid = self.next as u64;
            if rec.addr.0 + rec.size as u64 > self.cfg.mos.flash_bytes {
                return Err(PlatformError::OutOfRange {
                    req_id: rid,
                    addr: rec.addr.0,
                });
            }
            self.next += 1;
            self.in_flight += 1;
            self.reqs.push(ReqTrack {
                req: MemoryRequest {
                    issue_time: now,
                    kind: rec.op,
                    addr: rec.addr,
                    size_bytes: rec.size,
                    req_id: rid,
                },
                classes: LatencyBreakdown::default(),
                missed: false,
                acked: false,
            });
            self.serve(now, rid)?;
        }
        Ok(())
    }

    /// Line access carrying the tag; the lookup runs when it ends.
    fn serve(&mut self, now: SimTime, rid: u64) -> Result<(), PlatformError> {
        let track = &self.reqs[rid as usize];
        let bytes = track.req.fetch_bytes();
        let (s, e) = self.bus.transfer(now, bytes);
        self.counters.nvdimm_read_bytes += bytes;
        self.reqs[rid as usize].classes.nvdimm += e - s;
        self.schedule(e, Ev::LineDone { rid })
    }

    fn on_line_done(&mut self, now: SimTime, rid: u64) -> Result<(), PlatformError> {
        let req = self.reqs[rid as usize].req;
        match self.ctrl.lookup(&req, &mut self.nv, &mut self.eng)? {
            LookupOutcome::Hit { .. } => self.ack(now, rid),
            LookupOutcome::Queued(_) => Ok(()),
            LookupOutcome::Miss {
                txn,
                staged,
                clone_bytes,
            } => {
                self.reqs[rid as usize].missed = true;
                let mut charges = LatencyBreakdown::default();
                let mut t = now;
                if clone_bytes > 0 {
                    let (s1, e1) = self.bus.transfer(now, clone_bytes);
                    let (s2, e2) = self.bus.transfer(e1, clone_bytes);
                    self.counters.nvdimm_read_bytes += clone_bytes;
                    self.counters.nvdimm_write_bytes += clone_bytes;
                    charges.nvdimm += (e1 - s1) + (e2 - s2);
                    t = e2;
                }
                self.txn_charges.insert(txn, charges);
                self.stage(t, &staged)
            }
        }
    }

    fn ack(&mut self, now: SimTime, rid: u64) -> Result<(), PlatformError> {
        let track = &mut self.reqs[rid as usize];
        if track.acked {
            return Err(PlatformError::Invariant(format!("request {rid} acknowledged twice")));
        }
        track.acked = true;
        let req = track.req;
        let latency = now - req.issue_time;
        let mut classes = track.classes;
        let charged = classes.total();
        if charged > latency {
            return Err(PlatformError::Invariant(format!(
                "request {rid}: {charged} charged but only {latency} elapsed"
            )));
        }
        classes.queueing = latency - charged;
        self.records.push(RequestRecord {
            req_id: rid,
            kind: req.kind,
            addr: req.addr.0,
            issue: req.issue_time,
            ack: now,
            hit: !track.missed,
            classes,
        });
        let page_bytes = self.cfg.mos.page_size_bytes;
        let page = req.addr.0 / page_bytes;
        self.oracle
            .record(page, req.kind, rid, req.addr.0 % page_bytes, req.size_bytes as u64);
        let (_, set) = self.cfg.mos.split_page(page);
        if self.nv.frame(set) != self.oracle.expected(page) {
            return Err(PlatformError::Invariant(format!(
                "request {rid} observed stale data for page {page}"
            )));
        }
        self.in_flight -= 1;
        self.try_issue(now)
    }

    fn wake(&mut self, now: SimTime, woken: Vec<MemoryRequest>) -> Result<(), PlatformError> {
        for req in woken {
            if self.recovering {
                continue;
            }
            self.serve(now, req.req_id)?;
        }
        Ok(())
    }

    // ---- host side of the queue pair ----

    fn push_register(&mut self, earliest: SimTime) -> (SimTime, SimTime) {
        let reg = &self.cfg.register;
        if self.cfg.platform.shared_channel {
            self.bus.send_command(earliest, reg)
        } else {
            self.reg_bus.reserve(earliest, reg.command_latency(), Master::Controller.id())
        }
    }

    /// Writes staged commands into the SQ and notifies the device.
    fn stage(&mut self, now: SimTime, cmds: &[NvmeCommand]) -> Result<(), PlatformError> {
        let mut t = now;
        for cmd in cmds {
            let mut c = LatencyBreakdown::default();
            let (s, e) = self.bus.transfer(t, SQ_ENTRY_BYTES);
            self.counters.nvdimm_write_bytes += SQ_ENTRY_BYTES;
            self.counters.commands += 1;
            c.interface += e - s;
            t = e;
            if self.cfg.platform.datapath == Datapath::Advanced {
                let (s2, e2) = self.push_register(e);
                c.interface += e2 - s2;
                self.schedule(e2, Ev::Arrive { cid: cmd.cid })?;
            }
            self.host_charges.insert(cmd.cid, c);
        }
        if self.cfg.platform.datapath == Datapath::Baseline && !cmds.is_empty() {
            let (s, e) = self.pcie.send_down(t, 4, Master::Controller.id());
            self.counters.pcie_bytes += 4;
            for cmd in cmds {
                self.host_charges.entry(cmd.cid).or_default().interface += e - s;
            }
            self.schedule(e, Ev::Doorbell)?;
        }
        Ok(())
    }

    // ---- device ----

    fn start_fetch(&mut self, now: SimTime) -> Result<(), PlatformError> {
        let p = &self.nv.pinned;
        if p.sq_head == p.sq_tail {
            self.fetching = false;
            return Ok(());
        }
        self.fetching = true;
        let (s1, e1) = self.bus.reserve(now, SQ_ENTRY_BYTES, Master::Nvme);
        let (s2, e2) = self.pcie.send_down(e1, SQ_ENTRY_BYTES, Master::Nvme.id());
        self.counters.nvdimm_read_bytes += SQ_ENTRY_BYTES;
        self.counters.pcie_bytes += SQ_ENTRY_BYTES;
        self.schedule(
            e2,
            Ev::Fetched {
                fetch: (e1 - s1) + (e2 - s2),
            },
        )
    }

    fn on_arrive(&mut self, now: SimTime, cmd: NvmeCommand, fetch: SimTime) -> Result<(), PlatformError> {
        let mut charges = self.host_charges.remove(&cmd.cid).unwrap_or_default();
        charges.interface += fetch;
        let seq = match cmd.opcode {
            Opcode::Write => self.flash.begin_write(cmd.lba),
            Opcode::Read => 0,
        };
        self.dev_cmds.insert(
            cmd.cid,
            DevCmd {
                cmd,
                seq,
                content: PageContent::ZERO,
                charges,
                mark: now,
            },
        );
        match cmd.opcode {
            Opcode::Read => self.try_start_read(now, cmd.cid),
            Opcode::Write => {
                let len = cmd.length_bytes as u64;
                match self.cfg.platform.datapath {
                    Datapath::Baseline => {
                        let (s1, e1) = self.bus.reserve(now, len, Master::Nvme);
                        let (s2, e2) = self.pcie.send_down(e1, len, Master::Nvme.id());
                        self.counters.pcie_bytes += len;
                        self.dev(cmd.cid).charges.interface += (e1 - s1) + (e2 - s2);
                        self.schedule(e2, Ev::DmaIn { cid: cmd.cid })
                    }
                    Datapath::Advanced => self.lock_request(
                        now,
                        LockOp {
                            cid: cmd.cid,
                            kind: LockKind::DmaIn,
                            bytes: len,
                        },
                    ),
                }
            }
        }
    }

    fn dev(&mut self, cid: u16) -> &mut DevCmd {
        self.dev_cmds.get_mut(&cid).expect("command known to the device")
    }

    fn try_start_read(&mut self, now: SimTime, cid: u16) -> Result<(), PlatformError> {
        let cmd = self.dev(cid).cmd;
        if self.flash.read_blocked(cmd.lba) {
            self.blocked_reads.entry(cmd.lba).or_default().push(cid);
            return Ok(());
        }
        let plan = self.flash.plan_read(now, &cmd)?;
        self.schedule(plan.ready_at, Ev::ReadReady { cid })
    }

    fn on_read_ready(&mut self, now: SimTime, cid: u16) -> Result<(), PlatformError> {
        let lba = self.dev(cid).cmd.lba;
        let content = self.flash.read_content(lba);
        let d = self.dev(cid);
        d.charges.flash_array += now - d.mark;
        d.content = content;
        let len = d.cmd.length_bytes as u64;
        match self.cfg.platform.datapath {
            Datapath::Baseline => {
                let (s1, e1) = self.pcie.send_up(now, len, Master::Nvme.id());
                let (s2, e2) = self.bus.reserve(e1, len, Master::Nvme);
                self.counters.pcie_bytes += len;
                self.dev(cid).charges.interface += (e1 - s1) + (e2 - s2);
                self.schedule(e2, Ev::DmaOutDone { cid })
            }
            Datapath::Advanced => self.lock_request(
                now,
                LockOp {
                    cid,
                    kind: LockKind::DmaOut,
                    bytes: len,
                },
            ),
        }
    }

    /// Read data has landed in host memory.
    fn on_dma_out_done(&mut self, now: SimTime, cid: u16) -> Result<(), PlatformError> {
        let d = *self.dev(cid);
        let len = d.cmd.length_bytes as u64;
        self.counters.nvdimm_write_bytes += len;
        if let Some(slot) = self.nv.pinned.prp_slot_of(d.cmd.prp) {
            self.nv.pinned.prp_write(slot, d.content);
        } else if let Some(set) = self.nv.set_of_frame(d.cmd.prp) {
            if !self.recovering {
                self.ctrl.audit.dma_into_set(set, self.nv.tag(set));
            }
            self.nv.write_frame(set, d.content);
        } else {
            return Err(PlatformError::Invariant(format!("PRP {:#x} maps nowhere", d.cmd.prp)));
        }
        self.post_completion(now, cid)
    }

    /// Write data has reached the device.
    fn on_dma_in(&mut self, now: SimTime, cid: u16) -> Result<(), PlatformError> {
        let d = *self.dev(cid);
        let len = d.cmd.length_bytes as u64;
        self.counters.nvdimm_read_bytes += len;
        let content = if let Some(slot) = self.nv.pinned.prp_slot_of(d.cmd.prp) {
            self.nv.pinned.prp_read(slot)
        } else if let Some(set) = self.nv.set_of_frame(d.cmd.prp) {
            self.nv.frame(set)
        } else {
            return Err(PlatformError::Invariant(format!("PRP {:#x} maps nowhere", d.cmd.prp)));
        };
        let plan = self.flash.plan_write(now, &d.cmd, d.seq, content)?;
        let dm = self.dev(cid);
        dm.content = content;
        dm.mark = now;
        // commit first so an ack at the same instant sees the medium updated
        self.schedule(
            plan.commit_at,
            Ev::Commit {
                lba: d.cmd.lba,
                seq: d.seq,
                content,
            },
        )?;
        self.schedule(plan.ack_at, Ev::WriteAck { cid })
    }

    fn on_write_ack(&mut self, now: SimTime, cid: u16) -> Result<(), PlatformError> {
        let d = self.dev(cid);
        d.charges.flash_array += now - d.mark;
        let lba = d.cmd.lba;
        if self.flash.finish_write(lba) {
            for r in self.blocked_reads.remove(&lba).unwrap_or_default() {
                self.try_start_read(now, r)?;
            }
        }
        self.post_completion(now, cid)
    }

    fn post_completion(&mut self, now: SimTime, cid: u16) -> Result<(), PlatformError> {
        match self.cfg.platform.datapath {
            Datapath::Baseline => {
                let (s1, e1) = self.pcie.send_up(now, CQ_ENTRY_BYTES, Master::Nvme.id());
                let (s2, e2) = self.bus.reserve(e1, CQ_ENTRY_BYTES, Master::Nvme);
                self.counters.pcie_bytes += CQ_ENTRY_BYTES;
                self.dev(cid).charges.interface += (e1 - s1) + (e2 - s2);
                self.schedule(e2, Ev::CqPosted { cid })
            }
            Datapath::Advanced => self.lock_request(
                now,
                LockOp {
                    cid,
                    kind: LockKind::Completion,
                    bytes: CQ_ENTRY_BYTES,
                },
            ),
        }
    }

    fn on_cq_posted(&mut self, now: SimTime, cid: u16) -> Result<(), PlatformError> {
        device_post(&mut self.nv.pinned, cid);
        self.counters.nvdimm_write_bytes += CQ_ENTRY_BYTES;
        let msi = self.msi_latency;
        self.dev(cid).charges.interface += msi;
        self.schedule(now + msi, Ev::Msi)
    }

    // ---- lock register arbitration (advanced datapath) ----

    fn lock_request(&mut self, now: SimTime, op: LockOp) -> Result<(), PlatformError> {
        self.lock_queue.push_back(op);
        self.start_lock(now)
    }

    fn start_lock(&mut self, now: SimTime) -> Result<(), PlatformError> {
        if self.lock_active.is_some() {
            return Ok(());
        }
        let Some(op) = self.lock_queue.pop_front() else {
            return Ok(());
        };
        let (s, e) = self.bus.plan_nvme_window(now, op.bytes);
        self.dev(op.cid).charges.interface += e - s;
        self.lock_active = Some(op);
        self.schedule(s, Ev::LockGrant)?;
        self.schedule(e, Ev::LockRelease)
    }

    // ---- completion path back in the controller ----

    fn on_msi(&mut self, now: SimTime) -> Result<(), PlatformError> {
        let cmd = self.eng.on_msi(&mut self.nv.pinned)?;
        self.counters.nvdimm_read_bytes += CQ_ENTRY_BYTES;
        let d = self
            .dev_cmds
            .remove(&cmd.cid)
            .ok_or_else(|| PlatformError::Invariant(format!("completion for unknown cid {}", cmd.cid)))?;
        if self.recovering {
            // restaged commands belong to no live transaction
            let _ = self.ctrl.on_command_complete(&cmd, &mut self.nv, &mut self.eng)?;
            return Ok(());
        }
        match self.ctrl.on_command_complete(&cmd, &mut self.nv, &mut self.eng)? {
            CompletionOutcome::EvictDone { txn, staged, woken } => {
                if let Some(c) = self.txn_charges.get_mut(&txn) {
                    if self.ctrl.mode() == Mode::Persist {
                        add_device_charges(c, &d.charges);
                    }
                }
                if self.ctrl.transaction(txn).is_none() {
                    self.txn_charges.remove(&txn);
                }
                self.stage(now, &staged)?;
                self.wake(now, woken)
            }
            CompletionOutcome::FillDone { txn } => {
                let c = self.txn_charges.entry(txn).or_default();
                add_device_charges(c, &d.charges);
                let req = self
                    .ctrl
                    .transaction(txn)
                    .ok_or_else(|| PlatformError::Invariant(format!("fill for closed transaction {txn}")))?
                    .req;
                let bytes = req.fetch_bytes();
                let (s, e) = self.bus.transfer(now, bytes);
                match req.kind {
                    AccessKind::Load => self.counters.nvdimm_read_bytes += bytes,
                    AccessKind::Store => self.counters.nvdimm_write_bytes += bytes,
                }
                self.txn_charges.entry(txn).or_default().nvdimm += e - s;
                self.schedule(e, Ev::FillServed { txn })
            }
            CompletionOutcome::Recovered => Err(PlatformError::Invariant(format!(
                "completion for cid {} outside any transaction",
                cmd.cid
            ))),
        }
    }

    fn on_fill_served(&mut self, now: SimTime, txn: u64) -> Result<(), PlatformError> {
        let out = self.ctrl.finish_fill(txn, &mut self.nv);
        let rid = out.req.req_id;
        let charges = if self.ctrl.transaction(txn).is_some() {
            // eviction still in flight (extend mode); it is off the critical path
            self.txn_charges.get(&txn).copied().unwrap_or_default()
        } else {
            self.txn_charges.remove(&txn).unwrap_or_default()
        };
        let c = &mut self.reqs[rid as usize].classes;
        c.nvdimm += charges.nvdimm;
        c.flash_array += charges.flash_array;
        c.interface += charges.interface;
        self.ack(now, rid)?;
        self.wake(now, out.woken)
    }
}

fn add_device_charges(to: &mut LatencyBreakdown, from: &LatencyBreakdown) {
    to.nvdimm += from.nvdimm;
    to.flash_array += from.flash_array;
    to.interface += from.interface;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PlatformKind;
    use crate::mos::{MosAddress, KIB, MIB};

    fn small(kind: PlatformKind) -> SystemConfig {
        let mut cfg = SystemConfig::default().with_platform(kind);
        cfg.mos.page_size_bytes = 4 * KIB;
        cfg.mos.nvdimm_bytes = 2 * MIB + 64 * KIB;
        cfg.mos.pinned_bytes = 2 * MIB;
        cfg.mos.flash_bytes = 64 * MIB;
        cfg.validate().unwrap();
        cfg
    }

    fn rec(i: u64, op: AccessKind, addr: u64) -> TraceRecord {
        TraceRecord {
            tick: SimTime::from_ns(i),
            op,
            addr: MosAddress(addr),
            size: 8,
        }
    }

    #[test]
    fn store_then_load_hits_on_every_platform() {
        for kind in PlatformKind::ALL {
            let cfg = small(kind);
            let trace = vec![rec(0, AccessKind::Store, 0x40), rec(1, AccessKind::Load, 0x48)];
            let mut p = Platform::new(&cfg, trace).unwrap();
            p.run().unwrap();
            let r = p.records();
            assert_eq!(r.len(), 2, "{kind}");
            assert!(!r[0].hit);
            assert!(r[1].hit, "{kind}");
            assert_eq!(r[1].classes.flash_array, SimTime::ZERO);
        }
    }

    #[test]
    fn dirty_victim_is_written_back() {
        for kind in PlatformKind::ALL {
            let cfg = small(kind);
            let sets = cfg.mos.num_sets();
            let page = cfg.mos.page_size_bytes;
            let conflict = sets * page;
            let trace = vec![
                rec(0, AccessKind::Store, 0),
                rec(1, AccessKind::Load, conflict),
                rec(2, AccessKind::Load, 0),
            ];
            let mut p = Platform::new(&cfg, trace).unwrap();
            p.run().unwrap();
            assert_eq!(p.records().iter().filter(|r| !r.hit).count(), 3, "{kind}");
            assert_eq!(p.logical_content(0), p.oracle().expected(0));
            assert_ne!(p.flash.medium_content(0), PageContent::ZERO, "{kind}");
        }
    }

    #[test]
    fn classes_sum_to_latency() {
        let cfg = small(PlatformKind::BaselineExtend);
        let trace: Vec<_> = (0..64)
            .map(|i| rec(0, if i % 3 == 0 { AccessKind::Store } else { AccessKind::Load }, (i * 7919 % 40) * 4096))
            .collect();
        let mut p = Platform::new(&cfg, trace).unwrap();
        p.run().unwrap();
        for r in p.records() {
            assert_eq!(r.classes.total(), r.latency());
        }
    }
}
