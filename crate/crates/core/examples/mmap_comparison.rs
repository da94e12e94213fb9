//! Cold page faults through the hardware-managed path against a software
//! mmap path at several per-fault overheads.
//!
//!     cargo run --release --example mmap_comparison

use hams_sim::config::SystemConfig;
use hams_sim::controller::AccessKind;
use hams_sim::mos::MosAddress;
use hams_sim::sim::SimTime;
use hams_sim::workload::mmap::mmap_baseline;
use hams_sim::workload::run;
use hams_sim::workload::trace::TraceRecord;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SystemConfig::default();
    let page = cfg.mos.page_size_bytes;
    let trace: Vec<_> = (0..10_000)
        .map(|i| TraceRecord {
            tick: SimTime::ZERO,
            op: AccessKind::Load,
            addr: MosAddress(i * page),
            size: 64,
        })
        .collect();

    let hams = run(&cfg, &trace, "cold")?;
    println!("hams: {:.0} faults/s", hams.throughput());
    for overhead in [10.0, 15.0, 17.5, 20.0, 25.0] {
        let m = mmap_baseline(&cfg, &trace, overhead, "cold");
        println!(
            "mmap at {overhead:>4} us/fault: {:>6.0} faults/s ({:.2}x slower)",
            m.throughput(),
            hams.throughput() / m.throughput()
        );
    }
    Ok(())
}
