//! Cuts power at sampled points of a mixed workload, recovers from the
//! journal and checks every acknowledged store survived.
//!
//!     cargo run --release --example crash_sweep [platform]

use hams_sim::config::{PlatformKind, SystemConfig};
use hams_sim::failure::{sample_points, sweep, total_events};
use hams_sim::mos::{KIB, MIB};
use hams_sim::workload::generate::{generate, GenSpec, WorkloadKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kind: PlatformKind = match std::env::args().nth(1) {
        Some(name) => name.parse()?,
        None => PlatformKind::AdvancedExtend,
    };
    let mut cfg = SystemConfig::default().with_platform(kind);
    cfg.mos.page_size_bytes = 4 * KIB;
    cfg.mos.pinned_bytes = 2 * MIB;
    cfg.mos.nvdimm_bytes = 2 * MIB + 32 * 4 * KIB;
    cfg.mos.flash_bytes = 64 * MIB;
    cfg.validate()?;

    let spec = GenSpec {
        access_bytes: 64,
        ..GenSpec::new(WorkloadKind::Mixed, MIB, 1_000, 3)
    };
    let trace = generate(&spec);
    let total = total_events(&cfg, &trace, &|_| {})?;
    let points = sample_points(total, 300, 9);
    let verdicts = sweep(&cfg, &trace, &|_| {}, &points)?;

    let unsound: Vec<_> = verdicts.iter().filter(|v| !v.ok()).collect();
    let replayed: usize = verdicts.iter().map(|v| v.replayed.len()).sum();
    println!("{kind}: {} crash points over {total} events", verdicts.len());
    println!("  commands replayed from the journal: {replayed}");
    println!("  unsound recoveries: {}", unsound.len());
    for v in unsound.iter().take(5) {
        println!("    after {} events: lost {:?} spurious {:?}", v.crash_after, v.lost, v.spurious);
    }
    Ok(())
}
