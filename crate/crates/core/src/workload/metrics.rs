//! Per-request completion records and the aggregate report.
//!
//! CSV column order is fixed by [`ReportRow`] and documented in the README.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::controller::AccessKind;
use crate::sim::SimTime;
use crate::workload::energy::EnergyReport;

/// Latency classes of one request, or their sum over a run. Each value is
/// the time the request spent waiting on that kind of resource.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub nvdimm: SimTime,
    pub flash_array: SimTime,
    pub interface: SimTime,
    pub queueing: SimTime,
    pub software: SimTime,
}

impl LatencyBreakdown {
    pub fn total(&self) -> SimTime {
        self.nvdimm + self.flash_array + self.interface + self.queueing + self.software
    }

    pub fn add(&mut self, o: &LatencyBreakdown) {
        self.nvdimm += o.nvdimm;
        self.flash_array += o.flash_array;
        self.interface += o.interface;
        self.queueing += o.queueing;
        self.software += o.software;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RequestRecord {
    pub req_id: u64,
    pub kind: AccessKind,
    pub addr: u64,
    pub issue: SimTime,
    pub ack: SimTime,
    pub hit: bool,
    pub classes: LatencyBreakdown,
}

impl RequestRecord {
    pub fn latency(&self) -> SimTime {
        self.ack - self.issue
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub platform: String,
    pub workload: String,
    pub requests: u64,
    pub hits: u64,
    pub classes: LatencyBreakdown,
    /// First issue to last acknowledgement.
    pub makespan: SimTime,
    pub energy: EnergyReport,
}

impl MetricsReport {
    pub fn from_records(
        platform: &str,
        workload: &str,
        records: &[RequestRecord],
        energy: EnergyReport,
    ) -> Self {
        let mut classes = LatencyBreakdown::default();
        let mut hits = 0;
        let (mut first, mut last) = (SimTime::MAX, SimTime::ZERO);
        for r in records {
            classes.add(&r.classes);
            hits += r.hit as u64;
            first = first.min(r.issue);
            last = last.max(r.ack);
        }
        MetricsReport {
            platform: platform.to_string(),
            workload: workload.to_string(),
            requests: records.len() as u64,
            hits,
            classes,
            makespan: if records.is_empty() { SimTime::ZERO } else { last - first },
            energy,
        }
    }

    pub fn misses(&self) -> u64 {
        self.requests - self.hits
    }

    pub fn hit_rate(&self) -> f64 {
        if self.requests == 0 {
            0.0
        } else {
            self.hits as f64 / self.requests as f64
        }
    }

    /// Sum of end-to-end request latencies: the total memory stall.
    pub fn total_latency(&self) -> SimTime {
        self.classes.total()
    }

    pub fn amat_ns(&self) -> f64 {
        if self.requests == 0 {
            0.0
        } else {
            self.total_latency().as_ns_f64() / self.requests as f64
        }
    }

    /// Requests per simulated second.
    pub fn throughput(&self) -> f64 {
        let s = self.makespan.as_secs_f64();
        if s == 0.0 {
            0.0
        } else {
            self.requests as f64 / s
        }
    }

    pub fn row(&self) -> ReportRow {
        ReportRow {
            workload: self.workload.clone(),
            platform: self.platform.clone(),
            requests: self.requests,
            hits: self.hits,
            hit_rate: format!("{:.6}", self.hit_rate()),
            amat_ns: format!("{:.3}", self.amat_ns()),
            throughput_rps: format!("{:.3}", self.throughput()),
            makespan_ps: self.makespan.as_ps(),
            nvdimm_ps: self.classes.nvdimm.as_ps(),
            flash_array_ps: self.classes.flash_array.as_ps(),
            interface_ps: self.classes.interface.as_ps(),
            queueing_ps: self.classes.queueing.as_ps(),
            software_ps: self.classes.software.as_ps(),
            nvdimm_pj: self.energy.nvdimm_pj,
            flash_pj: self.energy.flash_pj,
            buffer_pj: self.energy.buffer_pj,
            controller_pj: self.energy.controller_pj,
        }
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let total = self.total_latency().as_ps().max(1) as f64;
        let pct = |t: SimTime| 100.0 * t.as_ps() as f64 / total;
        let c = &self.classes;
        writeln!(s, "{} on {}", self.workload, self.platform).ok();
        writeln!(
            s,
            "  requests {}  hit rate {:.4}  AMAT {:.1} ns  throughput {:.0} req/s",
            self.requests,
            self.hit_rate(),
            self.amat_ns(),
            self.throughput()
        )
        .ok();
        writeln!(
            s,
            "  breakdown: nvdimm {:.1}%  flash {:.1}%  interface {:.1}%  queueing {:.1}%  software {:.1}%",
            pct(c.nvdimm),
            pct(c.flash_array),
            pct(c.interface),
            pct(c.queueing),
            pct(c.software)
        )
        .ok();
        writeln!(
            s,
            "  energy (pJ): nvdimm {}  flash {}  buffer {}  controller {}",
            self.energy.nvdimm_pj, self.energy.flash_pj, self.energy.buffer_pj, self.energy.controller_pj
        )
        .ok();
        s
    }
}

/// Flat CSV form of a report. Floats are pre-formatted so the output is
/// byte-stable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub workload: String,
    pub platform: String,
    pub requests: u64,
    pub hits: u64,
    pub hit_rate: String,
    pub amat_ns: String,
    pub throughput_rps: String,
    pub makespan_ps: u64,
    pub nvdimm_ps: u64,
    pub flash_array_ps: u64,
    pub interface_ps: u64,
    pub queueing_ps: u64,
    pub software_ps: u64,
    pub nvdimm_pj: u64,
    pub flash_pj: u64,
    pub buffer_pj: u64,
    pub controller_pj: u64,
}

impl ReportRow {
    /// Rebuilds the report a row was written from. Derived float columns
    /// are recomputed, not read.
    pub fn to_report(&self) -> MetricsReport {
        MetricsReport {
            platform: self.platform.clone(),
            workload: self.workload.clone(),
            requests: self.requests,
            hits: self.hits,
            classes: LatencyBreakdown {
                nvdimm: SimTime::from_ps(self.nvdimm_ps),
                flash_array: SimTime::from_ps(self.flash_array_ps),
                interface: SimTime::from_ps(self.interface_ps),
                queueing: SimTime::from_ps(self.queueing_ps),
                software: SimTime::from_ps(self.software_ps),
            },
            makespan: SimTime::from_ps(self.makespan_ps),
            energy: EnergyReport {
                nvdimm_pj: self.nvdimm_pj,
                flash_pj: self.flash_pj,
                buffer_pj: self.buffer_pj,
                controller_pj: self.controller_pj,
            },
        }
    }
}

pub fn reports_from_csv(text: &str) -> Result<Vec<MetricsReport>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize::<ReportRow>()
        .map(|r| r.map(|row| row.to_report()))
        .collect()
}

pub fn reports_to_csv(reports: &[MetricsReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(r.row()).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// Per-request CSV: req_id, op, addr, issue_ps, ack_ps, hit, and the classes.
pub fn records_to_csv(records: &[RequestRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "req_id", "op", "addr", "issue_ps", "ack_ps", "hit", "nvdimm_ps", "flash_array_ps",
        "interface_ps", "queueing_ps", "software_ps",
    ])
    .expect("in-memory csv");
    for r in records {
        let c = &r.classes;
        let op = match r.kind {
            AccessKind::Load => "L",
            AccessKind::Store => "S",
        };
        w.write_record([
            r.req_id.to_string(),
            op.to_string(),
            format!("0x{:X}", r.addr),
            r.issue.as_ps().to_string(),
            r.ack.as_ps().to_string(),
            (r.hit as u8).to_string(),
            c.nvdimm.as_ps().to_string(),
            c.flash_array.as_ps().to_string(),
            c.interface.as_ps().to_string(),
            c.queueing.as_ps().to_string(),
            c.software.as_ps().to_string(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}
