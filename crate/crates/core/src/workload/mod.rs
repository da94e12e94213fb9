//! Workload side: traces, generators, metrics, energy, the mmap comparator
//! and plot tables.

pub mod energy;
pub mod generate;
pub mod metrics;
pub mod mmap;
pub mod plots;
pub mod trace;

use crate::config::SystemConfig;
use crate::system::{Platform, PlatformError};
use crate::workload::metrics::MetricsReport;
use crate::workload::trace::TraceRecord;

/// Simulates `trace` on the platform `cfg` selects and reports.
pub fn run(cfg: &SystemConfig, trace: &[TraceRecord], workload: &str) -> Result<MetricsReport, PlatformError> {
    let mut p = Platform::new(cfg, trace::split_pages(trace, cfg.mos.page_size_bytes))?;
    p.run()?;
    Ok(p.report(workload))
}
