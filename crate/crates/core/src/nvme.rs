//! Hardware NVMe queue engine: 64-byte command records, the SQ/CQ rings kept
//! in the pinned NVDIMM region, completion handling, and journal-tag based
//! recovery of commands cut short by a power failure.
//!
//! Command layout follows the NVMe submission entry. Fields the model does
//! not use stay zero. The journal tag lives in bit 0 of the reserved CDW2
//! and the transfer length in bytes in CDW13.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nvdimm::{PinnedRegion, CQ_ENTRY_BYTES, SQ_ENTRY_BYTES};

pub const OPC_WRITE: u8 = 0x01;
pub const OPC_READ: u8 = 0x02;
const NSID: u32 = 1;
const FUA_BIT: u32 = 1 << 30;
pub const MAX_QUEUE_DEPTH: u32 = 65_536;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NvmeError {
    #[error("no free command id")]
    CidExhausted,
    #[error("submission queue full")]
    QueueFull,
    #[error("completion for unknown command id {0}")]
    UnknownCid(u16),
    #[error("persist mode allows a single outstanding command")]
    GateClosed,
    #[error("completion queue empty")]
    NoCompletion,
    #[error("malformed command record: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NvmeConfig {
    pub queue_depth: u32,
    pub msi_latency_ns: f64,
}

impl Default for NvmeConfig {
    fn default() -> Self {
        NvmeConfig {
            queue_depth: 16,
            msi_latency_ns: 0.0,
        }
    }
}

impl NvmeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(2..=MAX_QUEUE_DEPTH).contains(&self.queue_depth) {
            return Err(format!("queue_depth must be in 2..={MAX_QUEUE_DEPTH}"));
        }
        if self.msi_latency_ns.is_nan() || self.msi_latency_ns < 0.0 {
            return Err("msi_latency_ns must be non-negative".into());
        }
        Ok(())
    }

    /// Clone slots: one clone plus one fill target per possible command.
    pub fn prp_slots(&self) -> u32 {
        2 * self.queue_depth
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Opcode {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NvmeCommand {
    pub cid: u16,
    pub opcode: Opcode,
    /// In MoS pages.
    pub lba: u64,
    /// NVDIMM byte address of the data (cache frame or PRP clone slot).
    pub prp: u64,
    pub length_bytes: u32,
    pub fua: bool,
    pub journal_tag: bool,
}

impl NvmeCommand {
    pub fn new(cid: u16, opcode: Opcode, lba: u64, prp: u64, length_bytes: u32, fua: bool) -> Self {
        NvmeCommand {
            cid,
            opcode,
            lba,
            prp,
            length_bytes,
            fua,
            journal_tag: false,
        }
    }

    pub fn encode(&self) -> [u8; SQ_ENTRY_BYTES as usize] {
        let mut b = [0u8; SQ_ENTRY_BYTES as usize];
        b[0] = match self.opcode {
            Opcode::Write => OPC_WRITE,
            Opcode::Read => OPC_READ,
        };
        b[2..4].copy_from_slice(&self.cid.to_le_bytes());
        b[4..8].copy_from_slice(&NSID.to_le_bytes());
        b[8..12].copy_from_slice(&(self.journal_tag as u32).to_le_bytes());
        b[24..32].copy_from_slice(&self.prp.to_le_bytes());
        b[40..48].copy_from_slice(&self.lba.to_le_bytes());
        let cdw12 = if self.fua { FUA_BIT } else { 0 };
        b[48..52].copy_from_slice(&cdw12.to_le_bytes());
        b[52..56].copy_from_slice(&self.length_bytes.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8; SQ_ENTRY_BYTES as usize]) -> Result<Self, NvmeError> {
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().expect("4 bytes"));
        let u64_at = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().expect("8 bytes"));
        let opcode = match b[0] {
            OPC_WRITE => Opcode::Write,
            OPC_READ => Opcode::Read,
            other => return Err(NvmeError::Malformed(format!("opcode {other:#04x}"))),
        };
        if u32_at(4) != NSID {
            return Err(NvmeError::Malformed(format!("namespace {}", u32_at(4))));
        }
        Ok(NvmeCommand {
            cid: u16::from_le_bytes([b[2], b[3]]),
            opcode,
            lba: u64_at(40),
            prp: u64_at(24),
            length_bytes: u32_at(52),
            fua: u32_at(48) & FUA_BIT != 0,
            journal_tag: u32_at(8) & 1 != 0,
        })
    }
}

/// Whether an SQ slot carries a journaled command.
fn slot_journaled(slot: &[u8; SQ_ENTRY_BYTES as usize]) -> bool {
    slot[0] != 0 && slot[8] & 1 != 0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CqEntry {
    pub cid: u16,
    pub sq_head: u16,
    pub status: u16,
}

impl CqEntry {
    pub fn encode(&self) -> [u8; CQ_ENTRY_BYTES as usize] {
        let mut b = [0u8; CQ_ENTRY_BYTES as usize];
        b[8..10].copy_from_slice(&self.sq_head.to_le_bytes());
        b[12..14].copy_from_slice(&self.cid.to_le_bytes());
        b[14..16].copy_from_slice(&self.status.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8; CQ_ENTRY_BYTES as usize]) -> Self {
        CqEntry {
            sq_head: u16::from_le_bytes([b[8], b[9]]),
            cid: u16::from_le_bytes([b[12], b[13]]),
            status: u16::from_le_bytes([b[14], b[15]]),
        }
    }
}

fn ring_next(i: u32, depth: u32) -> u32 {
    (i + 1) % depth
}

/// Host-side queue engine. Its own state is volatile; everything that must
/// survive a power failure sits in the [`PinnedRegion`].
#[derive(Clone, Debug)]
pub struct NvmeEngine {
    depth: u32,
    fua_writes: bool,
    max_outstanding: Option<usize>,
    free_cids: BTreeSet<u16>,
    /// cid → SQ slot
    outstanding: BTreeMap<u16, u32>,
    submitted: u64,
    completed: u64,
}

impl NvmeEngine {
    pub fn new(depth: u32) -> Self {
        NvmeEngine {
            depth,
            fua_writes: false,
            max_outstanding: None,
            free_cids: (0..depth.min(u16::MAX as u32 + 1)).map(|c| c as u16).collect(),
            outstanding: BTreeMap::new(),
            submitted: 0,
            completed: 0,
        }
    }

    /// Persist mode: FUA on writes, one command on the fly.
    pub fn set_persist(&mut self, persist: bool) {
        self.fua_writes = persist;
        self.max_outstanding = persist.then_some(1);
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    pub fn is_outstanding(&self, cid: u16) -> bool {
        self.outstanding.contains_key(&cid)
    }

    pub fn free_cids(&self) -> usize {
        self.free_cids.len()
    }

    pub fn counts(&self) -> (u64, u64) {
        (self.submitted, self.completed)
    }

    pub fn compose(
        &mut self,
        opcode: Opcode,
        prp: u64,
        lba: u64,
        length_bytes: u32,
    ) -> Result<NvmeCommand, NvmeError> {
        let cid = self.free_cids.pop_first().ok_or(NvmeError::CidExhausted)?;
        let fua = self.fua_writes && opcode == Opcode::Write;
        Ok(NvmeCommand::new(cid, opcode, lba, prp, length_bytes, fua))
    }

    /// Returns the id of a composed command that will not be submitted.
    pub fn discard(&mut self, cmd: &NvmeCommand) {
        debug_assert!(!self.outstanding.contains_key(&cmd.cid));
        self.free_cids.insert(cmd.cid);
    }

    /// Free SQ slots usable right now, honouring the persist gate.
    pub fn room(&self, pinned: &PinnedRegion) -> usize {
        // submit keeps outstanding below depth
        let cap = (self.depth as usize - 1).saturating_sub(self.outstanding.len());
        let mut room = 0;
        let mut tail = pinned.sq_tail;
        while room < cap {
            let next = ring_next(tail, self.depth);
            if next == pinned.sq_head || slot_journaled(&pinned.sq[tail as usize]) {
                break;
            }
            room += 1;
            tail = next;
        }
        match self.max_outstanding {
            Some(m) => room.min(m.saturating_sub(self.outstanding.len())),
            None => room,
        }
    }

    /// Stages `cmd` in the SQ with its journal tag set and advances the tail.
    /// Ringing the doorbell is the caller's job.
    pub fn submit(&mut self, pinned: &mut PinnedRegion, mut cmd: NvmeCommand) -> Result<u32, NvmeError> {
        if let Some(m) = self.max_outstanding {
            if self.outstanding.len() >= m {
                return Err(NvmeError::GateClosed);
            }
        }
        let tail = pinned.sq_tail;
        let next = ring_next(tail, self.depth);
        if next == pinned.sq_head
            || slot_journaled(&pinned.sq[tail as usize])
            || self.outstanding.len() + 1 >= self.depth as usize
        {
            return Err(NvmeError::QueueFull);
        }
        cmd.journal_tag = true;
        pinned.sq[tail as usize] = cmd.encode();
        pinned.sq_tail = next;
        self.outstanding.insert(cmd.cid, tail);
        self.submitted += 1;
        Ok(tail)
    }

    /// Consumes the CQ entry at the head: clears the command's journal tag,
    /// advances the CQ head and frees the command id.
    pub fn on_msi(&mut self, pinned: &mut PinnedRegion) -> Result<NvmeCommand, NvmeError> {
        if pinned.cq_head == pinned.cq_tail {
            return Err(NvmeError::NoCompletion);
        }
        let entry = CqEntry::decode(&pinned.cq[pinned.cq_head as usize]);
        let slot = *self
            .outstanding
            .get(&entry.cid)
            .ok_or(NvmeError::UnknownCid(entry.cid))?;
        let mut cmd = NvmeCommand::decode(&pinned.sq[slot as usize])?;
        cmd.journal_tag = false;
        pinned.sq[slot as usize][8] &= !1;
        pinned.cq_head = ring_next(pinned.cq_head, self.depth);
        self.outstanding.remove(&entry.cid);
        self.free_cids.insert(entry.cid);
        self.completed += 1;
        Ok(cmd)
    }

    /// Command ids whose SQ slot still carries the journal tag.
    pub fn journaled(&self, pinned: &PinnedRegion) -> Vec<u16> {
        pinned
            .sq
            .iter()
            .filter(|s| slot_journaled(s))
            .map(|s| u16::from_le_bytes([s[2], s[3]]))
            .collect()
    }

    /// Journal soundness plus the SQ/CQ pointer cross-check: outstanding
    /// commands are exactly the tagged slots, and their count equals the
    /// distance between the SQ tail and the CQ head.
    pub fn check_consistency(&self, pinned: &PinnedRegion) -> Result<(), String> {
        let tagged: BTreeSet<u16> = self.journaled(pinned).into_iter().collect();
        let live: BTreeSet<u16> = self.outstanding.keys().copied().collect();
        if tagged != live {
            return Err(format!("journaled {tagged:?} but outstanding {live:?}"));
        }
        let d = self.depth;
        let span = (pinned.sq_tail + d - pinned.cq_head) % d;
        if span as usize != live.len() {
            return Err(format!(
                "sq_tail {} / cq_head {} span {span} but {} outstanding",
                pinned.sq_tail,
                pinned.cq_head,
                live.len()
            ));
        }
        Ok(())
    }

    /// Power-up recovery. Scans the SQ oldest-first for journaled commands,
    /// moves them into a fresh queue pair and restages them with their
    /// original ids. The caller rings the doorbell.
    pub fn recover(&mut self, pinned: &mut PinnedRegion) -> Result<Vec<NvmeCommand>, NvmeError> {
        let d = self.depth;
        let mut pending = Vec::new();
        for k in 0..d {
            let slot = (pinned.sq_tail + k) % d;
            let raw = pinned.sq[slot as usize];
            if slot_journaled(&raw) {
                pending.push(NvmeCommand::decode(&raw)?);
            }
        }
        pinned.reset_rings();
        self.outstanding.clear();
        self.free_cids = (0..d.min(u16::MAX as u32 + 1)).map(|c| c as u16).collect();
        for cmd in &pending {
            let tail = pinned.sq_tail;
            pinned.sq[tail as usize] = cmd.encode();
            pinned.sq_tail = ring_next(tail, d);
            self.free_cids.remove(&cmd.cid);
            self.outstanding.insert(cmd.cid, tail);
        }
        Ok(pending)
    }
}

/// Device side: fetches the next SQ entry and advances the SQ head.
pub fn device_fetch(pinned: &mut PinnedRegion) -> Option<Result<NvmeCommand, NvmeError>> {
    if pinned.sq_head == pinned.sq_tail {
        return None;
    }
    let depth = pinned.depth();
    let cmd = NvmeCommand::decode(&pinned.sq[pinned.sq_head as usize]);
    pinned.sq_head = ring_next(pinned.sq_head, depth);
    Some(cmd)
}

/// Device side: posts a completion and advances the CQ tail.
pub fn device_post(pinned: &mut PinnedRegion, cid: u16) {
    let depth = pinned.depth();
    let entry = CqEntry {
        cid,
        sq_head: pinned.sq_head as u16,
        status: 0,
    };
    pinned.cq[pinned.cq_tail as usize] = entry.encode();
    pinned.cq_tail = ring_next(pinned.cq_tail, depth);
    debug_assert_ne!(pinned.cq_tail, pinned.cq_head, "CQ overflow");
}
