//! ULL-Flash device model: command splitting (HIL), page-level mapping
//! (FTL), channel/die timing (FIL) and the optional internal DRAM buffer.
//!
//! Contents are tracked per MoS page, the unit of every NVMe command, while
//! timing and placement are tracked per flash page ("unit"). A write becomes
//! visible on the medium only when its last program finishes, so a power
//! failure never leaves a half-written page behind.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mos::{PageContent, MIB};
use crate::nvdimm::Ddr4Timing;
use crate::nvme::{NvmeCommand, Opcode};
use crate::sim::SimTime;
use crate::timeline::{Occupancy, Timeline};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FlashError {
    #[error("flash capacity exhausted while placing lpn {lpn}")]
    CapacityExhausted { lpn: u64 },
    #[error("lpn {lpn} beyond device capacity of {capacity} flash pages")]
    LpnOutOfRange { lpn: u64, capacity: u64 },
    #[error("invalid flash geometry: {0}")]
    InvalidGeometry(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlashGeometry {
    pub channels: u32,
    pub dies_per_channel: u32,
    pub planes_per_die: u32,
    pub flash_page_bytes: u64,
    /// 1 or 2 channels per flash page.
    pub channel_stripe: u32,
    pub read_us: f64,
    pub program_us: f64,
    pub channel_bytes_per_s: f64,
}

impl Default for FlashGeometry {
    fn default() -> Self {
        FlashGeometry {
            channels: 16,
            dies_per_channel: 4,
            planes_per_die: 2,
            flash_page_bytes: 4096,
            channel_stripe: 2,
            read_us: 3.0,
            program_us: 100.0,
            channel_bytes_per_s: 800e6,
        }
    }
}

impl FlashGeometry {
    pub fn validate(&self) -> Result<(), FlashError> {
        let bad = |m: &str| Err(FlashError::InvalidGeometry(m.into()));
        if self.channels == 0 || self.dies_per_channel == 0 || self.planes_per_die == 0 {
            return bad("channel, die and plane counts must be positive");
        }
        if self.flash_page_bytes == 0 {
            return bad("flash_page_bytes must be positive");
        }
        if !matches!(self.channel_stripe, 1 | 2) {
            return bad("channel_stripe must be 1 or 2");
        }
        if self.channel_stripe == 2 && self.channels < 2 {
            return bad("channel_stripe 2 needs at least two channels");
        }
        if !(self.read_us > 0.0 && self.program_us > 0.0 && self.channel_bytes_per_s > 0.0) {
            return bad("latencies and channel rate must be positive");
        }
        Ok(())
    }

    pub fn read_time(&self) -> SimTime {
        SimTime::from_us_f64(self.read_us)
    }

    pub fn program_time(&self) -> SimTime {
        SimTime::from_us_f64(self.program_us)
    }

    /// Channel DMA time for `bytes`.
    pub fn channel_dma(&self, bytes: u64) -> SimTime {
        SimTime::from_ps((bytes as f64 * 1e12 / self.channel_bytes_per_s).round() as u64)
    }

    pub fn num_dies(&self) -> u32 {
        self.channels * self.dies_per_channel
    }

    /// Channel carrying the second half of a page striped from `channel`.
    pub fn stripe_partner(&self, channel: u32) -> u32 {
        (channel + self.channels / 2) % self.channels
    }
}

/// Internal DRAM buffer of the baseline device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BufferConfig {
    pub capacity_bytes: u64,
    pub timing: Ddr4Timing,
}

impl Default for BufferConfig {
    fn default() -> Self {
        BufferConfig {
            capacity_bytes: 512 * MIB,
            timing: Ddr4Timing::default(),
        }
    }
}

/// Physical flash page.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Ppn {
    pub channel: u32,
    pub die: u32,
    pub page: u64,
}

/// One channel/die operation produced by the HIL.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubRequest {
    pub parent_cid: u16,
    pub lpn: u64,
    pub channel: u32,
    pub die: u32,
    pub ppn: Ppn,
    pub bytes: u64,
}

/// Splits one command over its flash pages, then each flash page over one
/// or two channels. `placement` holds the physical page of every unit of
/// the command, in order.
pub fn hil_split(
    geom: &FlashGeometry,
    cmd: &NvmeCommand,
    unit_bytes: u64,
    placement: &[(u64, Ppn)],
) -> Vec<SubRequest> {
    let mut out = Vec::with_capacity(placement.len() * geom.channel_stripe as usize);
    for &(lpn, ppn) in placement {
        let sub = |channel: u32, bytes: u64| SubRequest {
            parent_cid: cmd.cid,
            lpn,
            channel,
            die: ppn.die,
            ppn,
            bytes,
        };
        if geom.channel_stripe == 2 && unit_bytes >= 2 {
            let first = unit_bytes / 2;
            out.push(sub(ppn.channel, first));
            out.push(sub(geom.stripe_partner(ppn.channel), unit_bytes - first));
        } else {
            out.push(sub(ppn.channel, unit_bytes));
        }
    }
    out
}

/// Page-level mapping with round-robin allocation over (channel, die).
/// Writes go out of place. Superseded pages return to their die's free
/// list at once; reclaiming them costs no time (no GC model).
#[derive(Clone, Debug)]
pub struct Ftl {
    channels: u32,
    dies_per_channel: u32,
    capacity: u64,
    pages_per_die: u64,
    map: HashMap<u64, (Ppn, u64)>,
    next_page: Vec<u64>,
    reclaimed: Vec<Vec<u64>>,
    cursor: u64,
    invalid: u64,
}

impl Ftl {
    pub fn new(geom: &FlashGeometry, capacity_units: u64) -> Self {
        let dies = geom.num_dies() as u64;
        Ftl {
            channels: geom.channels,
            dies_per_channel: geom.dies_per_channel,
            capacity: capacity_units,
            pages_per_die: capacity_units.div_ceil(dies),
            map: HashMap::new(),
            next_page: vec![0; dies as usize],
            reclaimed: vec![Vec::new(); dies as usize],
            cursor: 0,
            invalid: 0,
        }
    }

    fn check(&self, lpn: u64) -> Result<(), FlashError> {
        if lpn >= self.capacity {
            return Err(FlashError::LpnOutOfRange {
                lpn,
                capacity: self.capacity,
            });
        }
        Ok(())
    }

    /// Current physical location of `lpn`. Never-written pages sit at a
    /// fixed default placement and read as zeros.
    pub fn translate(&self, lpn: u64) -> Result<Ppn, FlashError> {
        self.check(lpn)?;
        Ok(match self.map.get(&lpn) {
            Some(&(ppn, _)) => ppn,
            None => {
                let ch = self.channels as u64;
                Ppn {
                    channel: (lpn % ch) as u32,
                    die: ((lpn / ch) % self.dies_per_channel as u64) as u32,
                    page: u64::MAX,
                }
            }
        })
    }

    pub fn is_mapped(&self, lpn: u64) -> bool {
        self.map.contains_key(&lpn)
    }

    /// Picks the next free physical page, visiting channels first, then dies.
    pub fn allocate(&mut self, lpn: u64) -> Result<Ppn, FlashError> {
        self.check(lpn)?;
        let dies = self.next_page.len() as u64;
        for _ in 0..dies {
            let slot = self.cursor % dies;
            self.cursor += 1;
            let channel = (slot % self.channels as u64) as u32;
            let die = (slot / self.channels as u64) as u32;
            let idx = (channel * self.dies_per_channel + die) as usize;
            if self.next_page[idx] < self.pages_per_die {
                let page = self.next_page[idx];
                self.next_page[idx] += 1;
                return Ok(Ppn { channel, die, page });
            }
            if let Some(page) = self.reclaimed[idx].pop() {
                return Ok(Ppn { channel, die, page });
            }
        }
        Err(FlashError::CapacityExhausted { lpn })
    }

    /// Installs a completed program unless a newer write already landed.
    pub fn commit(&mut self, lpn: u64, ppn: Ppn, seq: u64) -> bool {
        match self.map.get(&lpn) {
            Some(&(_, cur)) if cur > seq => {
                self.invalid += 1;
                self.release(ppn);
                false
            }
            Some(_) => {
                self.invalid += 1;
                if let Some((old, _)) = self.map.insert(lpn, (ppn, seq)) {
                    self.release(old);
                }
                true
            }
            None => {
                self.map.insert(lpn, (ppn, seq));
                true
            }
        }
    }

    fn release(&mut self, ppn: Ppn) {
        let idx = (ppn.channel * self.dies_per_channel + ppn.die) as usize;
        self.reclaimed[idx].push(ppn.page);
    }

    pub fn invalid_pages(&self) -> u64 {
        self.invalid
    }

    pub fn mapped_pages(&self) -> usize {
        self.map.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct BufEntry {
    content: PageContent,
    seq: u64,
    dirty: bool,
    bytes: u64,
}

/// Volatile write-back buffer, keyed by MoS page. Clean pages are evicted
/// oldest first; dirty pages stay until their destage lands.
#[derive(Clone, Debug)]
pub struct InternalBuffer {
    cfg: BufferConfig,
    entries: HashMap<u64, BufEntry>,
    order: VecDeque<u64>,
    used: u64,
}

impl InternalBuffer {
    pub fn new(cfg: BufferConfig) -> Self {
        InternalBuffer {
            cfg,
            entries: HashMap::new(),
            order: VecDeque::new(),
            used: 0,
        }
    }

    pub fn occupancy(&self) -> u64 {
        self.used
    }

    pub fn capacity(&self) -> u64 {
        self.cfg.capacity_bytes
    }

    pub fn access_latency(&self, bytes: u64) -> SimTime {
        self.cfg.timing.access_latency(bytes)
    }

    pub fn lookup(&self, lba: u64) -> Option<PageContent> {
        self.entries.get(&lba).map(|e| e.content)
    }

    pub fn dirty_pages(&self) -> usize {
        self.entries.values().filter(|e| e.dirty).count()
    }

    fn remove(&mut self, lba: u64) {
        if let Some(e) = self.entries.remove(&lba) {
            self.used -= e.bytes;
            self.order.retain(|&l| l != lba);
        }
    }

    fn make_room(&mut self, bytes: u64) -> bool {
        while self.used + bytes > self.cfg.capacity_bytes {
            let victim = self
                .order
                .iter()
                .copied()
                .find(|l| !self.entries[l].dirty);
            match victim {
                Some(l) => self.remove(l),
                None => return false,
            }
        }
        true
    }

    fn insert(&mut self, lba: u64, entry: BufEntry) -> bool {
        if let Some(old) = self.entries.get(&lba) {
            if old.seq > entry.seq {
                return true;
            }
        }
        self.remove(lba);
        if entry.bytes > self.cfg.capacity_bytes || !self.make_room(entry.bytes) {
            return false;
        }
        self.used += entry.bytes;
        self.entries.insert(lba, entry);
        self.order.push_back(lba);
        true
    }

    /// Returns false when every resident page is dirty and there is no room.
    pub fn insert_dirty(&mut self, lba: u64, content: PageContent, seq: u64, bytes: u64) -> bool {
        self.insert(
            lba,
            BufEntry {
                content,
                seq,
                dirty: true,
                bytes,
            },
        )
    }

    pub fn insert_clean(&mut self, lba: u64, content: PageContent, seq: u64, bytes: u64) {
        self.insert(
            lba,
            BufEntry {
                content,
                seq,
                dirty: false,
                bytes,
            },
        );
    }

    /// A program of version `seq` reached the medium.
    pub fn on_commit(&mut self, lba: u64, content: PageContent, seq: u64) {
        if let Some(e) = self.entries.get_mut(&lba) {
            if e.seq <= seq {
                e.content = content;
                e.seq = seq;
                e.dirty = false;
            }
        }
    }

    fn drain_dirty(&mut self) -> Vec<(u64, PageContent, u64)> {
        let mut v: Vec<_> = self
            .entries
            .iter()
            .filter(|(_, e)| e.dirty)
            .map(|(&l, e)| (l, e.content, e.seq))
            .collect();
        v.sort_by_key(|x| x.0);
        self.entries.clear();
        self.order.clear();
        self.used = 0;
        v
    }
}

/// Outcome of planning a read command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReadPlan {
    /// Data is in the device and ready for DMA to the host.
    pub ready_at: SimTime,
    pub buffer_hit: bool,
}

/// Outcome of planning a write command whose data already sits in the device.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WritePlan {
    /// Completion can be posted.
    pub ack_at: SimTime,
    /// Last program finishes; the medium update happens here.
    pub commit_at: SimTime,
    pub buffered: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FlashStats {
    pub unit_reads: u64,
    pub unit_programs: u64,
    pub buffer_accesses: u64,
    pub buffer_hits: u64,
    pub sync_fallbacks: u64,
}

/// The whole device.
#[derive(Clone, Debug)]
pub struct UllFlash {
    pub geom: FlashGeometry,
    page_bytes: u64,
    unit_bytes: u64,
    units_per_page: u64,
    ftl: Ftl,
    channels: Vec<Timeline>,
    dies: Vec<Timeline>,
    buffer: Option<InternalBuffer>,
    medium: HashMap<u64, (PageContent, u64)>,
    pending_writes: HashMap<u64, u32>,
    allocations: HashMap<u64, Vec<(u64, Ppn)>>,
    next_seq: u64,
    pub stats: FlashStats,
}

impl UllFlash {
    /// `page_bytes` is the MoS page size (the command unit); `capacity` the
    /// flash size in bytes.
    pub fn new(
        geom: FlashGeometry,
        page_bytes: u64,
        capacity: u64,
        buffer: Option<BufferConfig>,
    ) -> Result<Self, FlashError> {
        geom.validate()?;
        let unit_bytes = page_bytes.min(geom.flash_page_bytes);
        let units_per_page = (page_bytes / geom.flash_page_bytes).max(1);
        let lanes = |n: u32| (0..n).map(|_| Timeline::new()).collect::<Vec<_>>();
        Ok(UllFlash {
            ftl: Ftl::new(&geom, capacity / unit_bytes),
            channels: lanes(geom.channels),
            dies: lanes(geom.num_dies()),
            buffer: buffer.map(InternalBuffer::new),
            geom,
            page_bytes,
            unit_bytes,
            units_per_page,
            medium: HashMap::new(),
            pending_writes: HashMap::new(),
            allocations: HashMap::new(),
            next_seq: 1,
            stats: FlashStats::default(),
        })
    }

    pub fn unit_bytes(&self) -> u64 {
        self.unit_bytes
    }

    pub fn ftl(&self) -> &Ftl {
        &self.ftl
    }

    pub fn buffer(&self) -> Option<&InternalBuffer> {
        self.buffer.as_ref()
    }

    fn units(&self, lba: u64) -> impl Iterator<Item = u64> {
        let n = self.units_per_page;
        (0..n).map(move |k| lba * n + k)
    }

    fn die_index(&self, channel: u32, die: u32) -> usize {
        (channel * self.geom.dies_per_channel + die) as usize
    }

    /// Read sub-request: array read on the die, then the channel transfer.
    /// The die holds the data in its page register until the transfer ends.
    fn schedule_read_sub(&mut self, ready: SimTime, sub: &SubRequest, owner: u32) -> SimTime {
        let array = self.geom.read_time();
        let dma = self.geom.channel_dma(sub.bytes);
        let di = self.die_index(sub.channel, sub.die);
        let mut s = ready;
        loop {
            s = self.dies[di].earliest_fit(s, array);
            let d = self.channels[sub.channel as usize].earliest_fit(s + array, dma);
            match self.dies[di].first_conflict_end(s, d + dma) {
                Some(e) => s = e,
                None => {
                    self.dies[di].reserve_exact(s, d + dma - s, owner);
                    self.channels[sub.channel as usize].reserve_exact(d, dma, owner);
                    return d + dma;
                }
            }
        }
    }

    /// Program sub-request: channel transfer into the die, then the program.
    fn schedule_program_sub(&mut self, ready: SimTime, sub: &SubRequest, owner: u32) -> SimTime {
        let prog = self.geom.program_time();
        let dma = self.geom.channel_dma(sub.bytes);
        let di = self.die_index(sub.channel, sub.die);
        let mut t = ready;
        loop {
            let d = self.channels[sub.channel as usize].earliest_fit(t, dma);
            match self.dies[di].first_conflict_end(d, d + dma + prog) {
                Some(e) => t = e,
                None => {
                    self.dies[di].reserve_exact(d, dma + prog, owner);
                    self.channels[sub.channel as usize].reserve_exact(d, dma, owner);
                    return d + dma + prog;
                }
            }
        }
    }

    /// HIL split of a command with FTL placement applied. Writes allocate
    /// fresh pages; the allocation becomes the mapping at commit.
    pub fn split(&mut self, cmd: &NvmeCommand, seq: u64) -> Result<Vec<SubRequest>, FlashError> {
        let lpns: Vec<u64> = self.units(cmd.lba).collect();
        let mut placement = Vec::with_capacity(lpns.len());
        for lpn in lpns {
            let ppn = match cmd.opcode {
                Opcode::Read => self.ftl.translate(lpn)?,
                Opcode::Write => self.ftl.allocate(lpn)?,
            };
            placement.push((lpn, ppn));
        }
        if cmd.opcode == Opcode::Write {
            self.allocations.insert(seq, placement.clone());
        }
        Ok(hil_split(&self.geom, cmd, self.unit_bytes, &placement))
    }

    /// True while a write to `lba` has arrived but is not yet readable.
    pub fn read_blocked(&self, lba: u64) -> bool {
        self.pending_writes.get(&lba).copied().unwrap_or(0) > 0
    }

    /// Plans a read. The caller must check [`Self::read_blocked`] first.
    pub fn plan_read(&mut self, now: SimTime, cmd: &NvmeCommand) -> Result<ReadPlan, FlashError> {
        debug_assert!(!self.read_blocked(cmd.lba));
        if let Some(buf) = &self.buffer {
            self.stats.buffer_accesses += 1;
            if buf.lookup(cmd.lba).is_some() {
                self.stats.buffer_hits += 1;
                let lat = buf.access_latency(cmd.length_bytes as u64);
                return Ok(ReadPlan {
                    ready_at: now + lat,
                    buffer_hit: true,
                });
            }
        }
        let subs = self.split(cmd, 0)?;
        let mut ready_at = now;
        for sub in &subs {
            ready_at = ready_at.max(self.schedule_read_sub(now, sub, cmd.cid as u32));
        }
        self.stats.unit_reads += self.units_per_page;
        Ok(ReadPlan {
            ready_at,
            buffer_hit: false,
        })
    }

    /// Content delivered by a read completing now. A buffer miss leaves a
    /// clean copy behind.
    pub fn read_content(&mut self, lba: u64) -> PageContent {
        if let Some(c) = self.buffer.as_ref().and_then(|b| b.lookup(lba)) {
            return c;
        }
        let (content, seq) = self.medium.get(&lba).copied().unwrap_or_default();
        if let Some(buf) = self.buffer.as_mut() {
            buf.insert_clean(lba, content, seq, self.page_bytes);
        }
        content
    }

    /// Registers an arriving write; reads of the same page wait for it.
    pub fn begin_write(&mut self, lba: u64) -> u64 {
        *self.pending_writes.entry(lba).or_insert(0) += 1;
        let seq = self.next_seq;
        self.next_seq += 1;
        seq
    }

    /// Plans a write whose data reached the device at `now`. Non-FUA writes
    /// are acknowledged once buffered and destaged in the background; FUA
    /// writes, and writes that find the buffer full of dirty pages, wait for
    /// the programs.
    pub fn plan_write(
        &mut self,
        now: SimTime,
        cmd: &NvmeCommand,
        seq: u64,
        content: PageContent,
    ) -> Result<WritePlan, FlashError> {
        let bytes = cmd.length_bytes as u64;
        let mut buffered = false;
        let mut ack_at = now;
        if let Some(buf) = self.buffer.as_mut() {
            if !cmd.fua {
                self.stats.buffer_accesses += 1;
                if buf.insert_dirty(cmd.lba, content, seq, bytes) {
                    buffered = true;
                    ack_at = now + buf.access_latency(bytes);
                } else {
                    self.stats.sync_fallbacks += 1;
                }
            }
        }
        let subs = self.split(cmd, seq)?;
        let start = if buffered { ack_at } else { now };
        let mut commit_at = start;
        for sub in &subs {
            commit_at = commit_at.max(self.schedule_program_sub(start, sub, cmd.cid as u32));
        }
        self.stats.unit_programs += self.units_per_page;
        if !buffered {
            ack_at = commit_at;
        }
        Ok(WritePlan {
            ack_at,
            commit_at,
            buffered,
        })
    }

    /// The write registered by [`Self::begin_write`] became readable. Returns
    /// true when no other write to `lba` is pending.
    pub fn finish_write(&mut self, lba: u64) -> bool {
        let n = self.pending_writes.get_mut(&lba).expect("finish without begin");
        *n -= 1;
        if *n == 0 {
            self.pending_writes.remove(&lba);
            true
        } else {
            false
        }
    }

    /// Programs of write `seq` finished: update mapping and medium.
    pub fn commit(&mut self, lba: u64, seq: u64, content: PageContent) {
        if let Some(placement) = self.allocations.remove(&seq) {
            for (lpn, ppn) in placement {
                self.ftl.commit(lpn, ppn, seq);
            }
        }
        let cur = self.medium.get(&lba).map(|e| e.1).unwrap_or(0);
        if seq >= cur {
            self.medium.insert(lba, (content, seq));
        }
        if let Some(buf) = self.buffer.as_mut() {
            buf.on_commit(lba, content, seq);
        }
    }

    /// Power failure: dirty buffered pages reach the medium on supercap
    /// energy; everything volatile is lost. Returns the pages flushed.
    pub fn supercap_flush(&mut self) -> usize {
        let dirty = match self.buffer.as_mut() {
            Some(buf) => buf.drain_dirty(),
            None => Vec::new(),
        };
        let n = dirty.len();
        for (lba, content, seq) in dirty {
            self.commit(lba, seq, content);
        }
        self.pending_writes.clear();
        self.allocations.clear();
        for t in self.channels.iter_mut().chain(self.dies.iter_mut()) {
            *t = Timeline::new();
        }
        n
    }

    /// Persistent content of a page (ignores the buffer).
    pub fn medium_content(&self, lba: u64) -> PageContent {
        self.medium.get(&lba).map(|e| e.0).unwrap_or_default()
    }

    /// Pages ever written to the medium, sorted.
    pub fn written_pages(&self) -> Vec<u64> {
        let mut v: Vec<_> = self.medium.keys().copied().collect();
        v.sort_unstable();
        v
    }

    /// Record every channel and die reservation from now on.
    pub fn enable_audit(&mut self) {
        for t in self.channels.iter_mut().chain(self.dies.iter_mut()) {
            t.enable_audit();
        }
    }

    /// Drops timeline history that ends before `horizon`.
    pub fn prune(&mut self, horizon: SimTime) {
        for t in self.channels.iter_mut().chain(self.dies.iter_mut()) {
            t.prune(horizon);
        }
    }

    pub fn channel_log(&self, channel: u32) -> &[Occupancy] {
        self.channels[channel as usize].audit_log()
    }

    pub fn die_log(&self, channel: u32, die: u32) -> &[Occupancy] {
        self.dies[self.die_index(channel, die)].audit_log()
    }

    pub fn channel_busy_total(&self) -> SimTime {
        self.channels.iter().map(|t| t.busy_total()).sum()
    }

    /// Seeds the medium directly (test scenarios and preloaded images).
    pub fn preload(&mut self, lba: u64, content: PageContent) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.medium.insert(lba, (content, seq));
    }
}
