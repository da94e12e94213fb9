//! Sequential-read bandwidth of the flash device against queue depth.
//!
//!     cargo run --release --example queue_depth_sweep

use hams_sim::bench::sequential_read_throughput;
use hams_sim::config::SystemConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SystemConfig::default();
    for bytes in [4096, cfg.mos.page_size_bytes] {
        println!("{} KiB commands", bytes / 1024);
        for qd in [1, 2, 4, 8, 16, 32] {
            let p = sequential_read_throughput(&cfg, qd, bytes, 4_000)?;
            println!("  QD{qd:<3} {:>8.1} MB/s", p.bytes_per_s / 1e6);
        }
    }
    Ok(())
}
