//! Analytic memory-mapped-file comparator. Every access goes through the
//! host page cache; a miss is a page fault that pays the kernel software
//! path on top of a synchronous device access. No caching controller, no
//! overlap: the faulting thread blocks.

use std::collections::{BTreeMap, HashMap};

use crate::config::SystemConfig;
use crate::controller::AccessKind;
use crate::interconnect::{ddr4_transfer, pcie_transfer};
use crate::nvdimm::{CQ_ENTRY_BYTES, SQ_ENTRY_BYTES};
use crate::sim::SimTime;
use crate::workload::energy::EnergyCounters;
use crate::workload::metrics::{LatencyBreakdown, MetricsReport, RequestRecord};
use crate::workload::trace::TraceRecord;

/// Host page size of the page cache.
pub const HOST_PAGE: u64 = 4096;

struct PageCache {
    capacity: usize,
    clock: u64,
    resident: HashMap<u64, (u64, bool)>,
    lru: BTreeMap<u64, u64>,
}

impl PageCache {
    fn touch(&mut self, page: u64, dirty: bool) -> bool {
        self.clock += 1;
        match self.resident.get_mut(&page) {
            Some((stamp, d)) => {
                self.lru.remove(stamp);
                *stamp = self.clock;
                *d |= dirty;
                self.lru.insert(self.clock, page);
                true
            }
            None => false,
        }
    }

    /// Installs `page`; returns whether a dirty page had to be written back.
    fn install(&mut self, page: u64, dirty: bool) -> bool {
        let mut writeback = false;
        if self.resident.len() >= self.capacity {
            if let Some((_, victim)) = self.lru.pop_first() {
                writeback = self.resident.remove(&victim).is_some_and(|(_, d)| d);
            }
        }
        self.resident.insert(page, (self.clock, dirty));
        self.lru.insert(self.clock, page);
        writeback
    }
}

/// Interface cost of one synchronous NVMe transfer of `bytes` over PCIe.
fn nvme_interface(cfg: &SystemConfig, bytes: u64) -> SimTime {
    let (d, p) = (&cfg.ddr4, &cfg.pcie);
    ddr4_transfer(d, SQ_ENTRY_BYTES)
        + pcie_transfer(p, 4)
        + ddr4_transfer(d, SQ_ENTRY_BYTES)
        + pcie_transfer(p, SQ_ENTRY_BYTES)
        + pcie_transfer(p, bytes)
        + ddr4_transfer(d, bytes)
        + pcie_transfer(p, CQ_ENTRY_BYTES)
        + ddr4_transfer(d, CQ_ENTRY_BYTES)
}

/// Runs `trace` through the comparator. `overhead_us` is the software
/// cost of each fault.
pub fn mmap_baseline(cfg: &SystemConfig, trace: &[TraceRecord], overhead_us: f64, workload: &str) -> MetricsReport {
    let geom = &cfg.flash;
    let stripe = geom.channel_stripe as u64;
    let units = HOST_PAGE.div_ceil(geom.flash_page_bytes).max(1);
    let unit = HOST_PAGE.min(geom.flash_page_bytes);
    let read_dev = geom.read_time() + geom.channel_dma(unit / stripe);
    let write_dev = geom.channel_dma(unit / stripe) + geom.program_time();
    let io = nvme_interface(cfg, HOST_PAGE);
    let software = SimTime::from_us_f64(overhead_us);

    let mut cache = PageCache {
        capacity: (cfg.mos.cache_bytes() / HOST_PAGE).max(1) as usize,
        clock: 0,
        resident: HashMap::new(),
        lru: BTreeMap::new(),
    };
    let mut counters = EnergyCounters::default();
    let mut records = Vec::with_capacity(trace.len());
    let mut t = SimTime::ZERO;
    for (i, r) in trace.iter().enumerate() {
        let issue = t.max(r.tick);
        let page = r.addr.0 / HOST_PAGE;
        let store = r.op == AccessKind::Store;
        let line = (r.size as u64).div_ceil(64).max(1) * 64;
        let mut c = LatencyBreakdown {
            nvdimm: ddr4_transfer(&cfg.ddr4, line),
            ..Default::default()
        };
        if store {
            counters.nvdimm_write_bytes += line;
        } else {
            counters.nvdimm_read_bytes += line;
        }
        let hit = cache.touch(page, store);
        if !hit {
            c.software = software;
            c.flash_array = read_dev;
            c.interface = io;
            counters.flash_page_reads += units;
            counters.commands += 1;
            counters.pcie_bytes += HOST_PAGE + 84;
            counters.nvdimm_write_bytes += HOST_PAGE;
            counters.software_time += software;
            if cache.install(page, store) {
                c.flash_array += write_dev;
                c.interface += io;
                counters.flash_page_programs += units;
                counters.commands += 1;
                counters.pcie_bytes += HOST_PAGE + 84;
                counters.nvdimm_read_bytes += HOST_PAGE;
            }
        }
        let ack = issue + c.total();
        records.push(RequestRecord {
            req_id: i as u64,
            kind: r.op,
            addr: r.addr.0,
            issue,
            ack,
            hit,
            classes: c,
        });
        t = ack;
    }
    let mut report = MetricsReport::from_records("mmap", workload, &records, Default::default());
    report.energy = cfg.energy.account(&counters, report.makespan, false);
    report
}
