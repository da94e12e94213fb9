//! Idle read latency of one 4 KiB page with and without channel striping,
//! and how it splits into array read and channel transfer.
//!
//!     cargo run --example flash_striping

use hams_sim::flash::{FlashGeometry, UllFlash};
use hams_sim::nvme::{NvmeCommand, Opcode};
use hams_sim::sim::SimTime;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for stripe in [1, 2] {
        let geom = FlashGeometry {
            channel_stripe: stripe,
            ..FlashGeometry::default()
        };
        let array = geom.read_time();
        let mut dev = UllFlash::new(geom, 4096, 1 << 30, None)?;
        let cmd = NvmeCommand::new(0, Opcode::Read, 0, 0, 4096, false);
        let plan = dev.plan_read(SimTime::ZERO, &cmd)?;
        println!(
            "stripe {stripe}: ready after {:.2} us (array {:.2} us, transfer {:.2} us)",
            plan.ready_at.as_us_f64(),
            array.as_us_f64(),
            (plan.ready_at - array).as_us_f64()
        );
    }
    Ok(())
}
