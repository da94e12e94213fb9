//! Writes a synthetic trace to disk, loads it back and replays it, then
//! dumps the per-request records as CSV.
//!
//!     cargo run --release --example trace_replay [kind]

use hams_sim::config::SystemConfig;
use hams_sim::workload::generate::{generate, GenSpec, WorkloadKind};
use hams_sim::workload::metrics::records_to_csv;
use hams_sim::workload::trace::{load_trace, serialize_trace};
use hams_sim::system::Platform;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kind: WorkloadKind = std::env::args().nth(1).as_deref().unwrap_or("mixed").parse()?;
    let cfg = SystemConfig::default();
    let spec = GenSpec::new(kind, 4 * cfg.mos.num_sets() * cfg.mos.page_size_bytes, 2_000, 5);

    let dir = std::env::temp_dir().join("hams-trace-replay");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{kind}.trace"));
    std::fs::write(&path, serialize_trace(&generate(&spec)))?;

    let trace = load_trace(&path, cfg.mos.page_size_bytes)?;
    let mut p = Platform::new(&cfg, trace)?;
    p.run()?;
    print!("{}", p.report(&kind.to_string()).summary());

    let csv = dir.join("requests.csv");
    std::fs::write(&csv, records_to_csv(p.records()))?;
    println!("per-request records in {}", csv.display());
    Ok(())
}
