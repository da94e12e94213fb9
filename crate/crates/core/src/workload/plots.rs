//! Chart-ready tables: a stacked latency breakdown and a bar table, one
//! row per (workload, platform).

use serde::{Deserialize, Serialize};

use crate::workload::metrics::MetricsReport;

/// Fractions of total memory delay per class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub workload: String,
    pub platform: String,
    pub nvdimm: String,
    pub flash_array: String,
    pub interface: String,
    pub queueing: String,
    pub software: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarRow {
    pub workload: String,
    pub platform: String,
    pub amat_ns: String,
    pub throughput_rps: String,
    pub energy_pj: u64,
    /// Energy relative to the mmap row of the same workload; empty if absent.
    pub energy_vs_mmap: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlotBundle {
    pub breakdown_csv: String,
    pub bars_csv: String,
}

fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

fn from_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

pub fn breakdown_rows(reports: &[MetricsReport]) -> Vec<BreakdownRow> {
    reports
        .iter()
        .map(|r| {
            let total = r.total_latency().as_ps().max(1) as f64;
            let f = |t: crate::sim::SimTime| format!("{:.6}", t.as_ps() as f64 / total);
            BreakdownRow {
                workload: r.workload.clone(),
                platform: r.platform.clone(),
                nvdimm: f(r.classes.nvdimm),
                flash_array: f(r.classes.flash_array),
                interface: f(r.classes.interface),
                queueing: f(r.classes.queueing),
                software: f(r.classes.software),
            }
        })
        .collect()
}

pub fn bar_rows(reports: &[MetricsReport]) -> Vec<BarRow> {
    reports
        .iter()
        .map(|r| {
            let mmap = reports
                .iter()
                .find(|m| m.platform == "mmap" && m.workload == r.workload)
                .map(|m| m.energy.total_pj());
            BarRow {
                workload: r.workload.clone(),
                platform: r.platform.clone(),
                amat_ns: format!("{:.3}", r.amat_ns()),
                throughput_rps: format!("{:.3}", r.throughput()),
                energy_pj: r.energy.total_pj(),
                energy_vs_mmap: match mmap {
                    Some(m) if m > 0 => format!("{:.6}", r.energy.total_pj() as f64 / m as f64),
                    _ => String::new(),
                },
            }
        })
        .collect()
}

pub fn emit_plots(reports: &[MetricsReport]) -> PlotBundle {
    PlotBundle {
        breakdown_csv: to_csv(&breakdown_rows(reports)),
        bars_csv: to_csv(&bar_rows(reports)),
    }
}

pub fn parse_breakdown(text: &str) -> Result<Vec<BreakdownRow>, csv::Error> {
    from_csv(text)
}

pub fn parse_bars(text: &str) -> Result<Vec<BarRow>, csv::Error> {
    from_csv(text)
}
