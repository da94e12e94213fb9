//! Discrete-event model of a memory-over-storage system: an NVDIMM used as
//! an inclusive page cache in front of ultra-low-latency flash, managed by
//! a hardware controller that speaks NVMe to the device.
//!
//! Start with [`system::Platform`] for full runs, [`failure`] for crash
//! sweeps and [`workload`] for traces, the mmap comparator and reports.

pub mod bench;
pub mod config;
pub mod controller;
pub mod failure;
pub mod flash;
pub mod interconnect;
pub mod mos;
pub mod nvdimm;
pub mod nvme;
pub mod sim;
pub mod system;
pub mod timeline;
pub mod workload;

use thiserror::Error;

/// Top-level error for the command-line front end. Each class maps to its
/// own process exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Trace(#[from] workload::trace::TraceError),
    #[error(transparent)]
    Simulation(#[from] system::PlatformError),
    #[error("crash sweep found {0} unsound recovery points")]
    Unsound(usize),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Config(_) => 3,
            Error::Trace(_) => 4,
            Error::Io { .. } => 5,
            Error::Simulation(_) => 6,
            Error::Unsound(_) => 7,
        }
    }
}
