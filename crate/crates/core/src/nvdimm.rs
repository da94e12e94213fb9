//! NVDIMM model: the cache data region, its in-line tag array, and the
//! pinned region that holds the NVMe rings, PRP pool, MSI table and the
//! controller's wait queue.
//!
//! Everything in here is non-volatile: a power failure never changes it.
//! The pinned region is laid out, from its base at the top of the NVDIMM,
//! as SQ ring, CQ ring, PRP pool, MSI table, wait queue.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mos::{MosConfig, Page, PageContent};
use crate::sim::SimTime;

pub const SQ_ENTRY_BYTES: u64 = 64;
pub const CQ_ENTRY_BYTES: u64 = 16;
pub const MSI_ENTRY_BYTES: u64 = 16;
pub const WAIT_RECORD_BYTES: u64 = 32;
/// Data bus beat: 8 transfers on a 64-bit bus.
pub const BEAT_BYTES: u64 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NvdimmError {
    #[error("PRP pool exhausted ({slots} slots in use)")]
    PrpPoolExhausted { slots: usize },
    #[error("wait queue full ({capacity} records)")]
    WaitQueueFull { capacity: usize },
    #[error("pinned region needs {need} bytes but only {have} are reserved")]
    PinnedOverflow { need: u64, have: u64 },
}

/// DDR4 access timing. CAS latency and per-beat burst time are declared
/// defaults for a DDR4-2400-class part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ddr4Timing {
    pub t_cl_ps: u64,
    /// Time per 64-byte beat.
    pub t_burst_ps: u64,
    pub peak_bw_bytes_per_s: f64,
}

impl Default for Ddr4Timing {
    fn default() -> Self {
        Ddr4Timing {
            t_cl_ps: 14_000,
            t_burst_ps: 3_330,
            peak_bw_bytes_per_s: 20e9,
        }
    }
}

impl Ddr4Timing {
    pub fn validate(&self) -> Result<(), String> {
        if self.t_cl_ps == 0 || self.t_burst_ps == 0 || self.peak_bw_bytes_per_s.is_nan() || self.peak_bw_bytes_per_s <= 0.0 {
            return Err("DDR4 timing values must be positive".into());
        }
        Ok(())
    }

    /// Beat time, never faster than the peak bandwidth allows.
    pub fn beat(&self) -> SimTime {
        let floor = (BEAT_BYTES as f64 * 1e12 / self.peak_bw_bytes_per_s).ceil() as u64;
        SimTime::from_ps(self.t_burst_ps.max(floor))
    }

    /// `tCL + ceil(bytes / 64) * tBURST`.
    pub fn access_latency(&self, bytes: u64) -> SimTime {
        let beats = bytes.div_ceil(BEAT_BYTES);
        SimTime::from_ps(self.t_cl_ps + beats * self.beat().as_ps())
    }
}

/// One row of the MoS tag array.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagEntry {
    pub tag: u64,
    pub valid: bool,
    pub dirty: bool,
    pub busy: bool,
}

impl TagEntry {
    pub fn holding(tag: u64) -> Self {
        TagEntry {
            tag,
            valid: true,
            dirty: false,
            busy: false,
        }
    }

    /// busy and dirty both imply valid.
    pub fn is_consistent(&self) -> bool {
        (!self.busy || self.valid) && (!self.dirty || self.valid)
    }

    pub fn matches(&self, tag: u64) -> bool {
        self.valid && self.tag == tag
    }
}

/// Byte offsets of each structure inside the pinned region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PinnedLayout {
    pub sq_offset: u64,
    pub cq_offset: u64,
    pub prp_offset: u64,
    pub msi_offset: u64,
    pub wait_offset: u64,
    pub total: u64,
}

impl PinnedLayout {
    pub fn new(depth: u32, prp_slots: u32, page_bytes: u64, msi_vectors: u32, wait_capacity: u32) -> Self {
        let sq_offset = 0;
        let cq_offset = sq_offset + depth as u64 * SQ_ENTRY_BYTES;
        let prp_offset = cq_offset + depth as u64 * CQ_ENTRY_BYTES;
        let msi_offset = prp_offset + prp_slots as u64 * page_bytes;
        let wait_offset = msi_offset + msi_vectors as u64 * MSI_ENTRY_BYTES;
        let total = wait_offset + wait_capacity as u64 * WAIT_RECORD_BYTES;
        PinnedLayout {
            sq_offset,
            cq_offset,
            prp_offset,
            msi_offset,
            wait_offset,
            total,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsiVector {
    pub address: u64,
    pub data: u32,
    pub masked: bool,
}

/// MMU-invisible part of the NVDIMM.
#[derive(Clone, Debug)]
pub struct PinnedRegion {
    pub layout: PinnedLayout,
    base: u64,
    page_bytes: u64,
    pub sq: Vec<[u8; SQ_ENTRY_BYTES as usize]>,
    pub cq: Vec<[u8; CQ_ENTRY_BYTES as usize]>,
    pub sq_head: u32,
    pub sq_tail: u32,
    pub cq_head: u32,
    pub cq_tail: u32,
    prp_pool: Vec<PageContent>,
    prp_in_use: Vec<bool>,
    pub msi_table: Vec<MsiVector>,
    wait_queue: VecDeque<[u8; WAIT_RECORD_BYTES as usize]>,
    wait_capacity: usize,
}

impl PinnedRegion {
    pub fn new(
        cfg: &MosConfig,
        depth: u32,
        prp_slots: u32,
        wait_capacity: u32,
    ) -> Result<Self, NvdimmError> {
        let layout = PinnedLayout::new(depth, prp_slots, cfg.page_size_bytes, 1, wait_capacity);
        if layout.total > cfg.pinned_bytes {
            return Err(NvdimmError::PinnedOverflow {
                need: layout.total,
                have: cfg.pinned_bytes,
            });
        }
        let base = cfg.pinned_base();
        Ok(PinnedRegion {
            msi_table: vec![MsiVector {
                address: 0xFEE0_0000,
                data: 0,
                masked: false,
            }],
            layout,
            base,
            page_bytes: cfg.page_size_bytes,
            sq: vec![[0; SQ_ENTRY_BYTES as usize]; depth as usize],
            cq: vec![[0; CQ_ENTRY_BYTES as usize]; depth as usize],
            sq_head: 0,
            sq_tail: 0,
            cq_head: 0,
            cq_tail: 0,
            prp_pool: vec![PageContent::ZERO; prp_slots as usize],
            prp_in_use: vec![false; prp_slots as usize],
            wait_queue: VecDeque::new(),
            wait_capacity: wait_capacity as usize,
        })
    }

    pub fn depth(&self) -> u32 {
        self.sq.len() as u32
    }

    /// Clears both rings and their pointers, as when a fresh queue pair is created.
    pub fn reset_rings(&mut self) {
        self.sq.iter_mut().for_each(|s| *s = [0; SQ_ENTRY_BYTES as usize]);
        self.cq.iter_mut().for_each(|c| *c = [0; CQ_ENTRY_BYTES as usize]);
        self.sq_head = 0;
        self.sq_tail = 0;
        self.cq_head = 0;
        self.cq_tail = 0;
    }

    pub fn prp_slots(&self) -> usize {
        self.prp_pool.len()
    }

    pub fn prp_free_slots(&self) -> usize {
        self.prp_in_use.iter().filter(|u| !**u).count()
    }

    pub fn prp_alloc(&mut self) -> Result<u32, NvdimmError> {
        match self.prp_in_use.iter().position(|u| !*u) {
            Some(i) => {
                self.prp_in_use[i] = true;
                Ok(i as u32)
            }
            None => Err(NvdimmError::PrpPoolExhausted {
                slots: self.prp_pool.len(),
            }),
        }
    }

    pub fn prp_free(&mut self, slot: u32) {
        debug_assert!(self.prp_in_use[slot as usize], "double free of PRP slot {slot}");
        self.prp_in_use[slot as usize] = false;
    }

    pub fn prp_free_all(&mut self) {
        self.prp_in_use.iter_mut().for_each(|u| *u = false);
    }

    pub fn prp_write(&mut self, slot: u32, content: PageContent) {
        self.prp_pool[slot as usize] = content;
    }

    pub fn prp_read(&self, slot: u32) -> PageContent {
        self.prp_pool[slot as usize]
    }

    /// NVDIMM byte address of a PRP clone slot.
    pub fn prp_addr(&self, slot: u32) -> u64 {
        self.base + self.layout.prp_offset + slot as u64 * self.page_bytes
    }

    /// Inverse of [`Self::prp_addr`].
    pub fn prp_slot_of(&self, addr: u64) -> Option<u32> {
        let start = self.base + self.layout.prp_offset;
        let end = start + self.prp_pool.len() as u64 * self.page_bytes;
        (addr >= start && addr < end && (addr - start).is_multiple_of(self.page_bytes))
            .then(|| ((addr - start) / self.page_bytes) as u32)
    }

    pub fn wait_push(&mut self, record: [u8; WAIT_RECORD_BYTES as usize]) -> Result<(), NvdimmError> {
        if self.wait_queue.len() >= self.wait_capacity {
            return Err(NvdimmError::WaitQueueFull {
                capacity: self.wait_capacity,
            });
        }
        self.wait_queue.push_back(record);
        Ok(())
    }

    pub fn wait_pop(&mut self) -> Option<[u8; WAIT_RECORD_BYTES as usize]> {
        self.wait_queue.pop_front()
    }

    pub fn wait_len(&self) -> usize {
        self.wait_queue.len()
    }

    pub fn wait_capacity(&self) -> usize {
        self.wait_capacity
    }

    pub fn wait_clear(&mut self) {
        self.wait_queue.clear();
    }
}

/// Result of a tag-plus-data line fetch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LineRead {
    pub entry: TagEntry,
    pub page: Page,
    pub latency: SimTime,
}

/// The NVDIMM device. Cloning it is a full persistent snapshot.
#[derive(Clone, Debug)]
pub struct Nvdimm {
    cfg: MosConfig,
    timing: Ddr4Timing,
    tags: Vec<TagEntry>,
    frames: Vec<PageContent>,
    pub pinned: PinnedRegion,
}

/// Snapshot of the entire NVDIMM content.
#[derive(Clone, Debug)]
pub struct NvdimmImage(Nvdimm);

impl Nvdimm {
    pub fn new(cfg: &MosConfig, timing: Ddr4Timing, pinned: PinnedRegion) -> Self {
        let sets = cfg.num_sets() as usize;
        Nvdimm {
            cfg: cfg.clone(),
            timing,
            tags: vec![TagEntry::default(); sets],
            frames: vec![PageContent::ZERO; sets],
            pinned,
        }
    }

    pub fn timing(&self) -> &Ddr4Timing {
        &self.timing
    }

    pub fn num_sets(&self) -> u64 {
        self.tags.len() as u64
    }

    /// NVDIMM byte address of a cache frame.
    pub fn frame_addr(&self, set: u64) -> u64 {
        set * self.cfg.page_size_bytes
    }

    /// Inverse of [`Self::frame_addr`].
    pub fn set_of_frame(&self, addr: u64) -> Option<u64> {
        let page = self.cfg.page_size_bytes;
        (addr.is_multiple_of(page) && addr / page < self.num_sets()).then_some(addr / page)
    }

    pub fn tag(&self, set: u64) -> TagEntry {
        self.tags[set as usize]
    }

    pub fn set_tag(&mut self, set: u64, entry: TagEntry) {
        debug_assert!(entry.is_consistent(), "inconsistent tag entry {entry:?}");
        self.tags[set as usize] = entry;
    }

    pub fn frame(&self, set: u64) -> PageContent {
        self.frames[set as usize]
    }

    /// Raw data write into a frame (DMA landing, store merge).
    pub fn write_frame(&mut self, set: u64, content: PageContent) {
        self.frames[set as usize] = content;
    }

    /// Fetches the tag entry and data of `set`; the tag rides along with the
    /// data beats so the cost is one access of `fetch_bytes`.
    pub fn read_line(&self, set: u64, fetch_bytes: u64) -> LineRead {
        let entry = self.tags[set as usize];
        LineRead {
            entry,
            page: Page {
                frame_id: self.cfg.page_from(entry.tag, set),
                content: self.frames[set as usize],
            },
            latency: self.timing.access_latency(fetch_bytes),
        }
    }

    /// Writes tag and data of `set` in one transaction.
    pub fn write_line(
        &mut self,
        set: u64,
        entry: TagEntry,
        content: PageContent,
        write_bytes: u64,
    ) -> SimTime {
        self.set_tag(set, entry);
        self.frames[set as usize] = content;
        self.timing.access_latency(write_bytes)
    }

    pub fn tags(&self) -> &[TagEntry] {
        &self.tags
    }

    pub fn persist_snapshot(&self) -> NvdimmImage {
        NvdimmImage(self.clone())
    }

    pub fn restore_snapshot(image: NvdimmImage) -> Self {
        image.0
    }
}

impl NvdimmImage {
    pub fn nvdimm(&self) -> &Nvdimm {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Nvdimm {
        let cfg = MosConfig::toy();
        let pinned = PinnedRegion::new(&cfg, 16, 32, 64).unwrap();
        Nvdimm::new(&cfg, Ddr4Timing::default(), pinned)
    }

    #[test]
    fn line_latency_closed_form() {
        let t = Ddr4Timing::default();
        assert_eq!(t.access_latency(64), SimTime::from_ps(17_330));
        assert_eq!(t.access_latency(0), SimTime::from_ps(14_000));
        assert_eq!(t.access_latency(65), SimTime::from_ps(14_000 + 2 * 3_330));
        assert_eq!(t.access_latency(131_072), SimTime::from_ps(14_000 + 2048 * 3_330));
    }

    #[test]
    fn beat_respects_peak_bandwidth() {
        let t = Ddr4Timing {
            t_burst_ps: 1_000,
            ..Ddr4Timing::default()
        };
        // 64 B at 20 GB/s is 3.2 ns
        assert_eq!(t.beat(), SimTime::from_ps(3_200));
    }

    #[test]
    fn read_and_write_line() {
        let mut nv = toy();
        let r = nv.read_line(0, 64);
        assert_eq!(r.entry, TagEntry::default());
        assert_eq!(r.latency, SimTime::from_ps(17_330));
        let lat = nv.write_line(0, TagEntry::holding(0xF), PageContent(7), 64);
        assert_eq!(lat, SimTime::from_ps(17_330));
        let r = nv.read_line(0, 0);
        assert_eq!(r.entry.tag, 0xF);
        assert_eq!(r.page.frame_id, 0xF);
        assert_eq!(r.page.content, PageContent(7));
        assert_eq!(r.latency, SimTime::from_ps(14_000));
    }

    #[test]
    fn prp_pool_alloc_and_exhaustion() {
        let mut nv = toy();
        let slots: Vec<_> = (0..32).map(|_| nv.pinned.prp_alloc().unwrap()).collect();
        assert_eq!(slots.len(), 32);
        assert!(matches!(
            nv.pinned.prp_alloc(),
            Err(NvdimmError::PrpPoolExhausted { slots: 32 })
        ));
        nv.pinned.prp_free(5);
        assert_eq!(nv.pinned.prp_alloc().unwrap(), 5);
        let addr = nv.pinned.prp_addr(5);
        assert_eq!(nv.pinned.prp_slot_of(addr), Some(5));
        assert_eq!(nv.pinned.prp_slot_of(0), None);
    }

    #[test]
    fn pinned_layout_must_fit() {
        let mut cfg = MosConfig::toy();
        cfg.pinned_bytes = 1024;
        cfg.nvdimm_bytes = 1024 + 16;
        assert!(matches!(
            PinnedRegion::new(&cfg, 16, 32, 64),
            Err(NvdimmError::PinnedOverflow { .. })
        ));
    }

    #[test]
    fn pinned_layout_order() {
        let l = PinnedLayout::new(16, 32, 131_072, 1, 4096);
        assert_eq!(l.cq_offset, 1024);
        assert_eq!(l.prp_offset, 1024 + 256);
        assert_eq!(l.msi_offset, l.prp_offset + 32 * 131_072);
        assert_eq!(l.wait_offset, l.msi_offset + 16);
        assert!(l.total < 512 * crate::mos::MIB);
    }

    #[test]
    fn snapshot_restore_is_identity() {
        let mut nv = toy();
        nv.write_line(0, TagEntry::holding(3), PageContent(99), 64);
        nv.pinned.sq[2] = [0xAB; 64];
        nv.pinned.sq_tail = 3;
        let img = nv.persist_snapshot();
        let back = Nvdimm::restore_snapshot(img);
        assert_eq!(back.tag(0), nv.tag(0));
        assert_eq!(back.frame(0), nv.frame(0));
        assert_eq!(back.pinned.sq, nv.pinned.sq);
        assert_eq!(back.pinned.sq_tail, 3);
    }

    #[test]
    fn wait_queue_is_bounded_fifo() {
        let mut nv = toy();
        for i in 0..64u8 {
            nv.pinned.wait_push([i; 32]).unwrap();
        }
        assert!(nv.pinned.wait_push([0; 32]).is_err());
        assert_eq!(nv.pinned.wait_pop().unwrap()[0], 0);
        assert_eq!(nv.pinned.wait_pop().unwrap()[0], 1);
    }

    #[test]
    fn tag_invariants() {
        assert!(TagEntry::holding(1).is_consistent());
        let bad = TagEntry {
            tag: 0,
            valid: false,
            dirty: false,
            busy: true,
        };
        assert!(!bad.is_consistent());
    }
}
