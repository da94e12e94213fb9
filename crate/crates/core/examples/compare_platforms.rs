//! Runs the four platforms over one random-read trace and prints the
//! latency breakdown of each.
//!
//!     cargo run --release --example compare_platforms

use hams_sim::config::{PlatformKind, SystemConfig};
use hams_sim::workload::generate::{generate, GenSpec, WorkloadKind};
use hams_sim::workload::run;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SystemConfig::default();
    // twice the NVDIMM cache; a run this short is mostly cold misses
    let footprint = 2 * cfg.mos.num_sets() * cfg.mos.page_size_bytes;
    let trace = generate(&GenSpec::new(WorkloadKind::RndRd, footprint, 5_000, 42));

    for kind in PlatformKind::ALL {
        let report = run(&cfg.clone().with_platform(kind), &trace, "rndRd")?;
        print!("{}", report.summary());
    }
    Ok(())
}
