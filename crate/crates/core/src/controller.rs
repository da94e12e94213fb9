//! The MoS address manager. It looks requests up in the in-line tag array,
//! composes fill/evict command pairs on a miss, and keeps the cache safe
//! against concurrent NVMe DMA with the busy bit, PRP-pool cloning and the
//! wait queue.
//!
//! The controller decides; the platform owns time. Every method here runs
//! inside a single dispatched event, which is what makes a tag update and
//! the data it describes atomic.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mos::{decompose, MosAddress, MosConfig};
use crate::nvdimm::{Nvdimm, NvdimmError, TagEntry, WAIT_RECORD_BYTES};
use crate::nvme::{NvmeCommand, NvmeEngine, NvmeError, Opcode};
use crate::sim::SimTime;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControllerError {
    #[error("mode change requested with {0} transactions outstanding")]
    ModeChangeWhileBusy(usize),
    #[error(transparent)]
    Nvme(#[from] NvmeError),
    #[error(transparent)]
    Nvdimm(#[from] NvdimmError),
    #[error("request {0} is not page-contained or out of range")]
    BadRequest(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// FUA writes, a single command on the fly.
    Persist,
    /// Parallel NVMe traffic, journal tags for recovery.
    Extend,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    Load,
    Store,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryRequest {
    pub issue_time: SimTime,
    pub kind: AccessKind,
    pub addr: MosAddress,
    pub size_bytes: u32,
    pub req_id: u64,
}

impl MemoryRequest {
    /// Wait-queue record. The issue time is volatile driver state and is
    /// not stored.
    pub fn encode(&self) -> [u8; WAIT_RECORD_BYTES as usize] {
        let mut b = [0u8; WAIT_RECORD_BYTES as usize];
        b[0..8].copy_from_slice(&self.req_id.to_le_bytes());
        b[8..16].copy_from_slice(&self.addr.0.to_le_bytes());
        b[16..20].copy_from_slice(&self.size_bytes.to_le_bytes());
        b[20] = match self.kind {
            AccessKind::Load => b'L',
            AccessKind::Store => b'S',
        };
        b
    }

    pub fn decode(b: &[u8; WAIT_RECORD_BYTES as usize]) -> Self {
        MemoryRequest {
            issue_time: SimTime::ZERO,
            req_id: u64::from_le_bytes(b[0..8].try_into().expect("8 bytes")),
            addr: MosAddress(u64::from_le_bytes(b[8..16].try_into().expect("8 bytes"))),
            size_bytes: u32::from_le_bytes(b[16..20].try_into().expect("4 bytes")),
            kind: if b[20] == b'S' {
                AccessKind::Store
            } else {
                AccessKind::Load
            },
        }
    }

    /// Bytes moved on the DDR4 bus to serve this request: whole beats, at
    /// least one (the tag rides along with the first).
    pub fn fetch_bytes(&self) -> u64 {
        (self.size_bytes as u64).div_ceil(64).max(1) * 64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxnState {
    Issued,
    Waiting,
    Filling,
    Done,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MissTransaction {
    pub id: u64,
    pub req: MemoryRequest,
    pub set: u64,
    pub new_tag: u64,
    pub victim_tag: Option<u64>,
    pub evict_cmd: Option<u16>,
    pub fill_cmd: Option<u16>,
    pub prp_clone_slot: Option<u32>,
    pub state: TxnState,
    evict_done: bool,
    fill_served: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WaitReason {
    SetBusy,
    GateClosed,
    QueueFull,
    PrpPoolExhausted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LookupOutcome {
    Hit { set: u64 },
    Queued(WaitReason),
    /// Commands were staged in the SQ; the caller rings the doorbell.
    Miss {
        txn: u64,
        staged: Vec<NvmeCommand>,
        /// Bytes copied into the PRP pool (read and written on the NVDIMM).
        clone_bytes: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CompletionOutcome {
    /// Eviction done. Persist mode stages the fill here.
    EvictDone {
        txn: u64,
        staged: Vec<NvmeCommand>,
        woken: Vec<MemoryRequest>,
    },
    /// Fill data is in the frame; serve the requester, then call
    /// [`HamsController::finish_fill`].
    FillDone { txn: u64 },
    /// A command restaged by recovery; no live transaction owns it.
    Recovered,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FinishOutcome {
    pub req: MemoryRequest,
    pub set: u64,
    pub woken: Vec<MemoryRequest>,
}

/// Safety audit counters, checked by the hazard property tests.
#[derive(Clone, Debug, Default)]
pub struct ControllerAudit {
    pub redundant_evictions: u64,
    pub hazard_violations: u64,
    pub busy_victims: u64,
    inflight_evicts: HashSet<(u64, u64)>,
    fill_targets: HashSet<u64>,
}

impl ControllerAudit {
    /// The device is about to write `set` by DMA.
    pub fn dma_into_set(&mut self, set: u64, entry: TagEntry) {
        if !entry.busy || !self.fill_targets.contains(&set) {
            self.hazard_violations += 1;
        }
    }

    fn cache_write(&mut self, set: u64) {
        if self.fill_targets.contains(&set) {
            self.hazard_violations += 1;
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ControllerStats {
    pub hits: u64,
    pub misses: u64,
    pub waits: u64,
    pub evictions: u64,
    pub fills: u64,
    pub recovered_completions: u64,
}

#[derive(Clone, Debug)]
pub struct HamsController {
    cfg: MosConfig,
    mode: Mode,
    txns: BTreeMap<u64, MissTransaction>,
    by_cid: HashMap<u16, u64>,
    next_txn: u64,
    pub audit: ControllerAudit,
    pub stats: ControllerStats,
}

impl HamsController {
    pub fn new(cfg: &MosConfig, mode: Mode) -> Self {
        HamsController {
            cfg: cfg.clone(),
            mode,
            txns: BTreeMap::new(),
            by_cid: HashMap::new(),
            next_txn: 0,
            audit: ControllerAudit::default(),
            stats: ControllerStats::default(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn open_transactions(&self) -> usize {
        self.txns.len()
    }

    pub fn transaction(&self, id: u64) -> Option<&MissTransaction> {
        self.txns.get(&id)
    }

    pub fn set_mode(&mut self, mode: Mode, eng: &mut NvmeEngine) -> Result<(), ControllerError> {
        if !self.txns.is_empty() || eng.outstanding() > 0 {
            return Err(ControllerError::ModeChangeWhileBusy(
                self.txns.len().max(eng.outstanding()),
            ));
        }
        self.mode = mode;
        eng.set_persist(mode == Mode::Persist);
        Ok(())
    }

    fn gate_open(&self, eng: &NvmeEngine) -> bool {
        match self.mode {
            Mode::Extend => true,
            Mode::Persist => self.txns.is_empty() && eng.outstanding() == 0,
        }
    }

    /// Tag lookup at the end of the line access. Hits are applied here, so
    /// the caller acknowledges them in the same event.
    pub fn lookup(
        &mut self,
        req: &MemoryRequest,
        nv: &mut Nvdimm,
        eng: &mut NvmeEngine,
    ) -> Result<LookupOutcome, ControllerError> {
        let parts = decompose(req.addr, &self.cfg).map_err(|_| ControllerError::BadRequest(req.req_id))?;
        if parts.offset + req.size_bytes as u64 > self.cfg.page_size_bytes || req.size_bytes == 0 {
            return Err(ControllerError::BadRequest(req.req_id));
        }
        let set = parts.index;
        let entry = nv.tag(set);
        if entry.busy {
            return self.defer(req, nv, WaitReason::SetBusy);
        }
        if entry.matches(parts.tag) {
            self.apply_access(req, set, nv);
            self.stats.hits += 1;
            return Ok(LookupOutcome::Hit { set });
        }
        if !self.gate_open(eng) {
            return self.defer(req, nv, WaitReason::GateClosed);
        }
        let needs_evict = entry.valid && entry.dirty;
        let commands = match (self.mode, needs_evict) {
            (Mode::Extend, true) => 2,
            _ => 1,
        };
        if eng.room(&nv.pinned) < commands || eng.free_cids() < commands {
            return self.defer(req, nv, WaitReason::QueueFull);
        }
        if needs_evict && nv.pinned.prp_free_slots() == 0 {
            return self.defer(req, nv, WaitReason::PrpPoolExhausted);
        }
        self.open_miss(req, parts.tag, set, entry, nv, eng)
    }

    fn defer(
        &mut self,
        req: &MemoryRequest,
        nv: &mut Nvdimm,
        reason: WaitReason,
    ) -> Result<LookupOutcome, ControllerError> {
        nv.pinned.wait_push(req.encode())?;
        self.stats.waits += 1;
        Ok(LookupOutcome::Queued(reason))
    }

    fn apply_access(&mut self, req: &MemoryRequest, set: u64, nv: &mut Nvdimm) {
        if req.kind == AccessKind::Store {
            self.audit.cache_write(set);
            let offset = req.addr.0 % self.cfg.page_size_bytes;
            let content = nv.frame(set).apply_store(req.req_id, offset, req.size_bytes as u64);
            nv.write_frame(set, content);
            let mut e = nv.tag(set);
            e.dirty = true;
            nv.set_tag(set, e);
        }
    }

    /// Opens a miss on a non-busy victim: marks the set busy, clones a dirty
    /// victim into the PRP pool and stages the commands.
    pub fn open_miss(
        &mut self,
        req: &MemoryRequest,
        new_tag: u64,
        set: u64,
        victim: TagEntry,
        nv: &mut Nvdimm,
        eng: &mut NvmeEngine,
    ) -> Result<LookupOutcome, ControllerError> {
        if victim.busy {
            self.audit.busy_victims += 1;
            return self.defer(req, nv, WaitReason::SetBusy);
        }
        let page = self.cfg.page_size_bytes;
        let len = page as u32;
        let id = self.next_txn;
        self.next_txn += 1;
        let mut txn = MissTransaction {
            id,
            req: *req,
            set,
            new_tag,
            victim_tag: None,
            evict_cmd: None,
            fill_cmd: None,
            prp_clone_slot: None,
            state: TxnState::Issued,
            evict_done: true,
            fill_served: false,
        };
        let mut staged = Vec::new();
        let mut clone_bytes = 0;
        if victim.valid && victim.dirty {
            let slot = nv.pinned.prp_alloc()?;
            nv.pinned.prp_write(slot, nv.frame(set));
            clone_bytes = page;
            let victim_page = self.cfg.page_from(victim.tag, set);
            let evict = eng.compose(Opcode::Write, nv.pinned.prp_addr(slot), victim_page, len)?;
            if !self.audit.inflight_evicts.insert((set, victim.tag)) {
                self.audit.redundant_evictions += 1;
            }
            eng.submit(&mut nv.pinned, evict)?;
            self.by_cid.insert(evict.cid, id);
            staged.push(evict);
            txn.victim_tag = Some(victim.tag);
            txn.evict_cmd = Some(evict.cid);
            txn.prp_clone_slot = Some(slot);
            txn.evict_done = false;
            self.stats.evictions += 1;
        }
        if self.mode == Mode::Persist && !txn.evict_done {
            // the fill waits for the eviction; the old tag stays, now busy
            nv.set_tag(set, TagEntry { busy: true, ..victim });
        } else {
            let fill = self.stage_fill(&mut txn, nv, eng)?;
            staged.push(fill);
        }
        self.stats.misses += 1;
        self.txns.insert(id, txn);
        Ok(LookupOutcome::Miss {
            txn: id,
            staged,
            clone_bytes,
        })
    }

    fn stage_fill(
        &mut self,
        txn: &mut MissTransaction,
        nv: &mut Nvdimm,
        eng: &mut NvmeEngine,
    ) -> Result<NvmeCommand, ControllerError> {
        let page = self.cfg.page_from(txn.new_tag, txn.set);
        let fill = eng.compose(
            Opcode::Read,
            nv.frame_addr(txn.set),
            page,
            self.cfg.page_size_bytes as u32,
        )?;
        eng.submit(&mut nv.pinned, fill)?;
        nv.set_tag(
            txn.set,
            TagEntry {
                tag: txn.new_tag,
                valid: true,
                dirty: false,
                busy: true,
            },
        );
        self.audit.fill_targets.insert(txn.set);
        self.by_cid.insert(fill.cid, txn.id);
        txn.fill_cmd = Some(fill.cid);
        txn.state = TxnState::Filling;
        self.stats.fills += 1;
        Ok(fill)
    }

    /// Reacts to one processed completion.
    pub fn on_command_complete(
        &mut self,
        cmd: &NvmeCommand,
        nv: &mut Nvdimm,
        eng: &mut NvmeEngine,
    ) -> Result<CompletionOutcome, ControllerError> {
        let Some(id) = self.by_cid.remove(&cmd.cid) else {
            self.stats.recovered_completions += 1;
            return Ok(CompletionOutcome::Recovered);
        };
        let mut txn = self.txns.remove(&id).expect("transaction for live cid");
        match cmd.opcode {
            Opcode::Write => {
                let victim = txn.victim_tag.expect("evict without victim");
                self.audit.inflight_evicts.remove(&(txn.set, victim));
                if let Some(slot) = txn.prp_clone_slot.take() {
                    nv.pinned.prp_free(slot);
                }
                txn.evict_done = true;
                let mut staged = Vec::new();
                if txn.fill_cmd.is_none() {
                    staged.push(self.stage_fill(&mut txn, nv, eng)?);
                }
                let woken = if txn.fill_served {
                    self.drain_wait_queue(nv)
                } else {
                    self.txns.insert(id, txn);
                    if self.mode == Mode::Extend {
                        self.drain_wait_queue(nv)
                    } else {
                        Vec::new()
                    }
                };
                Ok(CompletionOutcome::EvictDone { txn: id, staged, woken })
            }
            Opcode::Read => {
                self.audit.fill_targets.remove(&txn.set);
                self.txns.insert(id, txn);
                Ok(CompletionOutcome::FillDone { txn: id })
            }
        }
    }

    /// The requester's line transfer after a fill has ended: install the
    /// page, apply the access, clear busy and wake every waiter.
    pub fn finish_fill(&mut self, id: u64, nv: &mut Nvdimm) -> FinishOutcome {
        let mut txn = self.txns.remove(&id).expect("finish of unknown transaction");
        let mut entry = nv.tag(txn.set);
        debug_assert!(entry.busy && entry.tag == txn.new_tag);
        entry.busy = false;
        nv.set_tag(txn.set, entry);
        self.apply_access(&txn.req, txn.set, nv);
        txn.fill_served = true;
        if txn.evict_done {
            txn.state = TxnState::Done;
        } else {
            self.txns.insert(id, txn.clone());
        }
        FinishOutcome {
            req: txn.req,
            set: txn.set,
            woken: self.drain_wait_queue(nv),
        }
    }

    fn drain_wait_queue(&mut self, nv: &mut Nvdimm) -> Vec<MemoryRequest> {
        std::iter::from_fn(|| nv.pinned.wait_pop())
            .map(|r| MemoryRequest::decode(&r))
            .collect()
    }

    /// After the recovery drain: every restaged command has completed, so no
    /// set is in flight and no clone is needed. Waiters were never
    /// acknowledged and are dropped.
    pub fn finalize_recovery(nv: &mut Nvdimm) {
        for set in 0..nv.num_sets() {
            let mut e = nv.tag(set);
            if e.busy {
                e.busy = false;
                nv.set_tag(set, e);
            }
        }
        nv.pinned.prp_free_all();
        nv.pinned.wait_clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nvdimm::{Ddr4Timing, PinnedRegion};
    use crate::nvme::device_post;

    fn setup(mode: Mode) -> (HamsController, Nvdimm, NvmeEngine) {
        let cfg = MosConfig::toy();
        let pinned = PinnedRegion::new(&cfg, 16, 32, 64).unwrap();
        let nv = Nvdimm::new(&cfg, Ddr4Timing::default(), pinned);
        let mut eng = NvmeEngine::new(16);
        let mut ctrl = HamsController::new(&cfg, Mode::Extend);
        ctrl.set_mode(mode, &mut eng).unwrap();
        (ctrl, nv, eng)
    }

    fn req(id: u64, kind: AccessKind, addr: u64) -> MemoryRequest {
        MemoryRequest {
            issue_time: SimTime::ZERO,
            kind,
            addr: MosAddress(addr),
            size_bytes: 8,
            req_id: id,
        }
    }

    /// Completes `cmd` on the device side and processes its MSI.
    fn complete(
        ctrl: &mut HamsController,
        nv: &mut Nvdimm,
        eng: &mut NvmeEngine,
        cmd: &NvmeCommand,
    ) -> CompletionOutcome {
        crate::nvme::device_fetch(&mut nv.pinned);
        device_post(&mut nv.pinned, cmd.cid);
        let done = eng.on_msi(&mut nv.pinned).unwrap();
        assert_eq!(done.cid, cmd.cid);
        ctrl.on_command_complete(&done, nv, eng).unwrap()
    }

    #[test]
    fn cold_miss_composes_fill_for_lba_f() {
        let (mut ctrl, mut nv, mut eng) = setup(Mode::Extend);
        let out = ctrl.lookup(&req(1, AccessKind::Load, 0xF0), &mut nv, &mut eng).unwrap();
        let LookupOutcome::Miss { staged, clone_bytes, txn } = out else {
            panic!("expected miss, got {out:?}")
        };
        assert_eq!(clone_bytes, 0);
        assert_eq!(staged.len(), 1);
        assert_eq!((staged[0].opcode, staged[0].lba, staged[0].prp), (Opcode::Read, 0xF, 0));
        assert!(nv.tag(0).busy);
        // reload while filling waits
        let again = ctrl.lookup(&req(2, AccessKind::Load, 0xF0), &mut nv, &mut eng).unwrap();
        assert_eq!(again, LookupOutcome::Queued(WaitReason::SetBusy));
        let CompletionOutcome::FillDone { txn: t } = complete(&mut ctrl, &mut nv, &mut eng, &staged[0]) else {
            panic!()
        };
        assert_eq!(t, txn);
        let fin = ctrl.finish_fill(txn, &mut nv);
        assert_eq!(fin.woken.len(), 1);
        assert_eq!(fin.woken[0].req_id, 2);
        assert!(!nv.tag(0).busy);
        let hit = ctrl.lookup(&fin.woken[0], &mut nv, &mut eng).unwrap();
        assert_eq!(hit, LookupOutcome::Hit { set: 0 });
    }

    #[test]
    fn dirty_victim_is_cloned() {
        let (mut ctrl, mut nv, mut eng) = setup(Mode::Extend);
        nv.write_line(0, TagEntry { dirty: true, ..TagEntry::holding(0xE) }, crate::mos::PageContent(77), 16);
        let out = ctrl.lookup(&req(1, AccessKind::Store, 0xF0), &mut nv, &mut eng).unwrap();
        let LookupOutcome::Miss { staged, clone_bytes, .. } = out else { panic!() };
        assert_eq!(clone_bytes, 16);
        assert_eq!(staged.len(), 2);
        let evict = staged[0];
        assert_eq!((evict.opcode, evict.lba), (Opcode::Write, 0xE));
        let slot = nv.pinned.prp_slot_of(evict.prp).expect("evict PRP points into the pool");
        assert_ne!(evict.prp, nv.frame_addr(0));
        assert_eq!(nv.pinned.prp_read(slot), crate::mos::PageContent(77));
        assert_eq!(staged[1].lba, 0xF);
        assert_eq!(nv.tag(0), TagEntry { tag: 0xF, valid: true, dirty: false, busy: true });
    }

    #[test]
    fn persist_serializes_evict_then_fill() {
        let (mut ctrl, mut nv, mut eng) = setup(Mode::Persist);
        nv.write_line(0, TagEntry { dirty: true, ..TagEntry::holding(0xE) }, crate::mos::PageContent(77), 16);
        let LookupOutcome::Miss { staged, txn, .. } =
            ctrl.lookup(&req(1, AccessKind::Load, 0xF0), &mut nv, &mut eng).unwrap()
        else {
            panic!()
        };
        assert_eq!(staged.len(), 1);
        assert!(staged[0].fua);
        assert_eq!(nv.tag(0).tag, 0xE);
        assert!(nv.tag(0).busy);
        assert_eq!(eng.journaled(&nv.pinned).len(), 1);
        let CompletionOutcome::EvictDone { staged: fill, .. } = complete(&mut ctrl, &mut nv, &mut eng, &staged[0]) else {
            panic!()
        };
        assert_eq!(fill.len(), 1);
        assert_eq!(fill[0].opcode, Opcode::Read);
        assert_eq!(nv.tag(0).tag, 0xF);
        assert_eq!(nv.pinned.prp_free_slots(), 32);
        complete(&mut ctrl, &mut nv, &mut eng, &fill[0]);
        ctrl.finish_fill(txn, &mut nv);
        assert_eq!(ctrl.open_transactions(), 0);
    }

    #[test]
    fn persist_gate_defers_second_miss() {
        let cfg = MosConfig {
            nvdimm_bytes: 256 * 1024 + 64,
            ..MosConfig::toy()
        };
        let pinned = PinnedRegion::new(&cfg, 16, 32, 64).unwrap();
        let mut nv = Nvdimm::new(&cfg, Ddr4Timing::default(), pinned);
        let mut eng = NvmeEngine::new(16);
        let mut ctrl = HamsController::new(&cfg, Mode::Extend);
        ctrl.set_mode(Mode::Persist, &mut eng).unwrap();
        assert!(matches!(
            ctrl.lookup(&req(1, AccessKind::Load, 0), &mut nv, &mut eng).unwrap(),
            LookupOutcome::Miss { .. }
        ));
        assert_eq!(
            ctrl.lookup(&req(2, AccessKind::Load, 16), &mut nv, &mut eng).unwrap(),
            LookupOutcome::Queued(WaitReason::GateClosed)
        );
        assert!(matches!(
            ctrl.set_mode(Mode::Extend, &mut eng),
            Err(ControllerError::ModeChangeWhileBusy(_))
        ));
    }

    #[test]
    fn extend_allows_parallel_misses() {
        let cfg = MosConfig {
            nvdimm_bytes: 256 * 1024 + 64,
            ..MosConfig::toy()
        };
        let pinned = PinnedRegion::new(&cfg, 16, 32, 64).unwrap();
        let mut nv = Nvdimm::new(&cfg, Ddr4Timing::default(), pinned);
        let mut eng = NvmeEngine::new(16);
        let mut ctrl = HamsController::new(&cfg, Mode::Extend);
        for (i, a) in [0u64, 16].into_iter().enumerate() {
            assert!(matches!(
                ctrl.lookup(&req(i as u64, AccessKind::Load, a), &mut nv, &mut eng).unwrap(),
                LookupOutcome::Miss { .. }
            ));
        }
        assert_eq!(eng.outstanding(), 2);
    }

    #[test]
    fn wait_record_roundtrip() {
        let r = req(99, AccessKind::Store, 0xDEAD_BEEF);
        let back = MemoryRequest::decode(&r.encode());
        assert_eq!(back, r);
        assert_eq!(r.fetch_bytes(), 64);
        let big = MemoryRequest { size_bytes: 4096, ..r };
        assert_eq!(big.fetch_bytes(), 4096);
    }

    #[test]
    fn no_waiters_leaves_queue_empty() {
        let (mut ctrl, mut nv, mut eng) = setup(Mode::Extend);
        let LookupOutcome::Miss { staged, txn, .. } =
            ctrl.lookup(&req(1, AccessKind::Load, 0x10), &mut nv, &mut eng).unwrap()
        else {
            panic!()
        };
        complete(&mut ctrl, &mut nv, &mut eng, &staged[0]);
        let fin = ctrl.finish_fill(txn, &mut nv);
        assert!(fin.woken.is_empty());
        assert_eq!(nv.pinned.wait_len(), 0);
        assert_eq!(ctrl.audit.hazard_violations, 0);
    }
}
