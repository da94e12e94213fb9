//! Device-only read benchmark over the PCIe path: a closed loop keeps a
//! fixed number of commands queued at the device, the way a synthetic
//! block benchmark drives an SSD.

use crate::config::SystemConfig;
use crate::flash::{FlashError, UllFlash};
use crate::interconnect::{Master, PcieLinks};
use crate::nvdimm::{CQ_ENTRY_BYTES, SQ_ENTRY_BYTES};
use crate::nvme::{NvmeCommand, Opcode};
use crate::sim::{DeviceId, EventQueue, SimTime};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThroughputPoint {
    pub queue_depth: u32,
    pub commands: u64,
    pub makespan: SimTime,
    pub bytes_per_s: f64,
}

struct Loop {
    dev: UllFlash,
    pcie: PcieLinks,
    q: EventQueue<u16>,
    cmd_bytes: u64,
    next_lba: u64,
}

impl Loop {
    /// Doorbell, fetch, device read, data and completion upstream.
    fn issue(&mut self, now: SimTime, slot: u16) -> Result<(), FlashError> {
        let cmd = NvmeCommand::new(slot, Opcode::Read, self.next_lba, 0, self.cmd_bytes as u32, false);
        self.next_lba += 1;
        let (_, db) = self.pcie.send_down(now, 4, Master::Controller.id());
        let (_, fetched) = self.pcie.send_down(db, SQ_ENTRY_BYTES, Master::Nvme.id());
        let ready = self.dev.plan_read(fetched, &cmd)?.ready_at;
        let (_, data) = self.pcie.send_up(ready, self.cmd_bytes, Master::Nvme.id());
        let (_, cq) = self.pcie.send_up(data, CQ_ENTRY_BYTES, Master::Nvme.id());
        self.q.schedule(cq, DeviceId::NvmeEngine, slot).expect("completion lies ahead");
        Ok(())
    }
}

/// Sequential reads of `cmd_bytes` each, `count` commands, `qd` in flight.
pub fn sequential_read_throughput(
    cfg: &SystemConfig,
    qd: u32,
    cmd_bytes: u64,
    count: u64,
) -> Result<ThroughputPoint, FlashError> {
    let mut l = Loop {
        dev: UllFlash::new(cfg.flash.clone(), cmd_bytes, cfg.mos.flash_bytes, None)?,
        pcie: PcieLinks::new(cfg.pcie.clone()),
        q: EventQueue::new(),
        cmd_bytes,
        next_lba: 0,
    };
    for slot in 0..qd.min(count as u32) {
        l.issue(SimTime::ZERO, slot as u16)?;
    }
    let mut done = 0u64;
    while let Some(ev) = l.q.pop_until(SimTime::MAX) {
        done += 1;
        if l.next_lba < count {
            l.issue(ev.fire_at, ev.payload)?;
        }
    }
    let makespan = l.q.now();
    Ok(ThroughputPoint {
        queue_depth: qd,
        commands: done,
        makespan,
        bytes_per_s: (done * cmd_bytes) as f64 / makespan.as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deeper_queue_is_not_slower() {
        let cfg = SystemConfig::default();
        let a = sequential_read_throughput(&cfg, 1, 4096, 256).unwrap();
        let b = sequential_read_throughput(&cfg, 8, 4096, 256).unwrap();
        assert_eq!(a.commands, 256);
        assert!(b.bytes_per_s >= a.bytes_per_s);
    }

    #[test]
    fn qd1_matches_idle_latency_chain() {
        let cfg = SystemConfig::default();
        let p = sequential_read_throughput(&cfg, 1, 4096, 1).unwrap();
        // doorbell, fetch, 5.56 us device read, data and completion upstream
        let expect = crate::interconnect::pcie_transfer(&cfg.pcie, 4)
            + crate::interconnect::pcie_transfer(&cfg.pcie, 64)
            + SimTime::from_ps(5_560_000)
            + crate::interconnect::pcie_transfer(&cfg.pcie, 4096)
            + crate::interconnect::pcie_transfer(&cfg.pcie, 16);
        assert_eq!(p.makespan, expect);
    }
}
