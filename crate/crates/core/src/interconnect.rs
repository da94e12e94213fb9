//! Transaction-level timing for the host-device links: the PCIe link of the
//! baseline datapath, the DDR4 bus with its lock register, and the 64-byte
//! register command interface of the advanced datapath.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nvdimm::Ddr4Timing;
use crate::sim::SimTime;
use crate::timeline::{Occupancy, Timeline};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InterconnectError {
    #[error("DDR4 bus locked by the NVMe controller until {release_at}")]
    BusLocked { release_at: SimTime },
    #[error("lock register granted while already held")]
    DoubleGrant,
    #[error("lock register released by a master that does not own it")]
    ReleaseWithoutOwnership,
    #[error("lock granted while a controller transaction is in flight until {until}")]
    ControllerInFlight { until: SimTime },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Master {
    Controller,
    Nvme,
}

impl Master {
    pub fn id(self) -> u32 {
        match self {
            Master::Controller => 0,
            Master::Nvme => 1,
        }
    }
}

/// PCIe link parameters. The per-TLP overhead stands in for the
/// transaction, data-link and physical layer costs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcieLink {
    pub lanes: u32,
    pub bytes_per_s: f64,
    pub tlp_payload: u64,
    pub per_tlp_overhead_ns: f64,
}

impl Default for PcieLink {
    fn default() -> Self {
        PcieLink {
            lanes: 4,
            bytes_per_s: 4e9,
            tlp_payload: 4096,
            per_tlp_overhead_ns: 200.0,
        }
    }
}

impl PcieLink {
    pub fn validate(&self) -> Result<(), String> {
        if self.lanes == 0
            || self.tlp_payload == 0
            || self.bytes_per_s.is_nan() || self.bytes_per_s <= 0.0
            || self.per_tlp_overhead_ns.is_nan() || self.per_tlp_overhead_ns < 0.0
        {
            return Err("PCIe link parameters must be positive".into());
        }
        Ok(())
    }
}

/// `ceil(bytes / tlp_payload) * per_tlp_overhead + bytes / bytes_per_s`.
pub fn pcie_transfer(link: &PcieLink, bytes: u64) -> SimTime {
    if bytes == 0 {
        return SimTime::ZERO;
    }
    let tlps = bytes.div_ceil(link.tlp_payload) as f64;
    let ns = tlps * link.per_tlp_overhead_ns + bytes as f64 * 1e9 / link.bytes_per_s;
    SimTime::from_ns_f64(ns)
}

/// `tCL + ceil(bytes / 64) * tBURST`.
pub fn ddr4_transfer(timing: &Ddr4Timing, bytes: u64) -> SimTime {
    timing.access_latency(bytes)
}

/// Full-duplex PCIe link with one occupancy timeline per direction.
#[derive(Clone, Debug)]
pub struct PcieLinks {
    pub link: PcieLink,
    /// Host to device.
    pub down: Timeline,
    /// Device to host.
    pub up: Timeline,
}

impl PcieLinks {
    pub fn new(link: PcieLink) -> Self {
        PcieLinks {
            link,
            down: Timeline::new(),
            up: Timeline::new(),
        }
    }

    pub fn send_down(&mut self, earliest: SimTime, bytes: u64, owner: u32) -> (SimTime, SimTime) {
        let dur = pcie_transfer(&self.link, bytes);
        self.down.reserve(earliest, dur, owner)
    }

    pub fn send_up(&mut self, earliest: SimTime, bytes: u64, owner: u32) -> (SimTime, SimTime) {
        let dur = pcie_transfer(&self.link, bytes);
        self.up.reserve(earliest, dur, owner)
    }
}

/// One-bit arbiter for DDR4 bus mastership.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LockRegister {
    value: bool,
}

impl LockRegister {
    pub fn value(&self) -> bool {
        self.value
    }

    pub fn owner(&self) -> Master {
        if self.value {
            Master::Nvme
        } else {
            Master::Controller
        }
    }

    /// Controller hands the bus to the NVMe controller.
    pub fn grant(&mut self) -> Result<(), InterconnectError> {
        if self.value {
            return Err(InterconnectError::DoubleGrant);
        }
        self.value = true;
        Ok(())
    }

    pub fn release(&mut self, by: Master) -> Result<(), InterconnectError> {
        if !self.value || by != Master::Nvme {
            return Err(InterconnectError::ReleaseWithoutOwnership);
        }
        self.value = false;
        Ok(())
    }
}

/// The DDR4 channel of the NVDIMM, shared by the memory controller and
/// (in the advanced datapath) the NVMe controller of the flash device.
#[derive(Clone, Debug)]
pub struct Ddr4Bus {
    pub timing: Ddr4Timing,
    timeline: Timeline,
    lock: LockRegister,
    /// Current or next NVMe window, `[start, end)`.
    window: Option<(SimTime, SimTime)>,
    controller_until: SimTime,
    grants: u64,
    releases: u64,
}

impl Ddr4Bus {
    pub fn new(timing: Ddr4Timing) -> Self {
        Ddr4Bus {
            timing,
            timeline: Timeline::new(),
            lock: LockRegister::default(),
            window: None,
            controller_until: SimTime::ZERO,
            grants: 0,
            releases: 0,
        }
    }

    pub fn lock(&self) -> LockRegister {
        self.lock
    }

    pub fn enable_audit(&mut self) {
        self.timeline.enable_audit();
    }

    pub fn occupancy_log(&self) -> &[Occupancy] {
        self.timeline.audit_log()
    }

    pub fn busy_total(&self) -> SimTime {
        self.timeline.busy_total()
    }

    pub fn grant_count(&self) -> (u64, u64) {
        (self.grants, self.releases)
    }

    /// Controller-side transfer. Fails while the lock is held at `now`.
    pub fn try_transfer(
        &mut self,
        now: SimTime,
        bytes: u64,
    ) -> Result<(SimTime, SimTime), InterconnectError> {
        if self.lock.value {
            let release_at = self.window.map(|w| w.1).unwrap_or(now);
            return Err(InterconnectError::BusLocked { release_at });
        }
        Ok(self.reserve(now, bytes, Master::Controller))
    }

    /// Controller-side transfer that waits out a held lock.
    pub fn transfer(&mut self, now: SimTime, bytes: u64) -> (SimTime, SimTime) {
        match self.try_transfer(now, bytes) {
            Ok(span) => span,
            Err(InterconnectError::BusLocked { release_at }) => {
                self.reserve(release_at.max(now), bytes, Master::Controller)
            }
            Err(e) => unreachable!("{e}"),
        }
    }

    /// Unarbitrated transfer, used when both masters go through the memory
    /// controller (baseline datapath).
    pub fn reserve(&mut self, earliest: SimTime, bytes: u64, master: Master) -> (SimTime, SimTime) {
        let dur = ddr4_transfer(&self.timing, bytes);
        let span = self.timeline.reserve(earliest, dur, master.id());
        if master == Master::Controller {
            self.controller_until = self.controller_until.max(span.1);
        }
        span
    }

    /// Register command push on this bus (shared-channel configuration).
    pub fn send_command(&mut self, now: SimTime, reg: &RegisterInterface) -> (SimTime, SimTime) {
        let release_at = self.window.map(|w| w.1).unwrap_or(now);
        let earliest = match send_command_over_ddr4(&mut self.timeline, self.lock, release_at, reg, now) {
            Ok(span) => {
                self.controller_until = self.controller_until.max(span.1);
                return span;
            }
            Err(_) => release_at.max(now),
        };
        let span = self
            .timeline
            .reserve(earliest, reg.command_latency(), Master::Controller.id());
        self.controller_until = self.controller_until.max(span.1);
        span
    }

    /// Plans an NVMe window of `bytes` starting no earlier than `earliest`.
    /// The window is carved out of the bus timeline now so the controller
    /// schedules around it; the lock itself flips at [`Self::grant_lock`].
    pub fn plan_nvme_window(&mut self, earliest: SimTime, bytes: u64) -> (SimTime, SimTime) {
        let dur = ddr4_transfer(&self.timing, bytes);
        let span = self.timeline.reserve(earliest, dur, Master::Nvme.id());
        self.window = Some(span);
        span
    }

    /// Sets the lock register at the start of a planned window.
    pub fn grant_lock(&mut self, now: SimTime) -> Result<(), InterconnectError> {
        if let Some(busy) = self.timeline.busy_at(now) {
            if busy.owner == Master::Controller.id() {
                return Err(InterconnectError::ControllerInFlight { until: busy.end });
            }
        }
        self.lock.grant()?;
        self.grants += 1;
        Ok(())
    }

    pub fn release_lock(&mut self, by: Master) -> Result<(), InterconnectError> {
        self.lock.release(by)?;
        self.window = None;
        self.releases += 1;
        Ok(())
    }

    pub fn prune(&mut self, horizon: SimTime) {
        self.timeline.prune(horizon);
    }
}

/// D[63:0]
const BUS_WIDTH_BYTES: usize = 8;

/// Register-based command interface parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegisterInterface {
    pub bus_clock_hz: f64,
}

impl Default for RegisterInterface {
    fn default() -> Self {
        RegisterInterface { bus_clock_hz: 1.2e9 }
    }
}

impl RegisterInterface {
    pub const CYCLES: u64 = 10;

    pub fn command_latency(&self) -> SimTime {
        SimTime::from_ps((Self::CYCLES as f64 * 1e12 / self.bus_clock_hz).round() as u64)
    }
}

/// Strobe levels for one bus cycle. `true` is high voltage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BusCycle {
    pub cs_n: bool,
    pub we_n: bool,
    pub cas_n: bool,
    pub ras_n: bool,
    pub addr: u16,
    pub data: u64,
}

/// Deselect, write command, then an 8-beat burst carrying the 64-byte command.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegisterCommandTransaction {
    pub cycles: Vec<BusCycle>,
}

impl RegisterCommandTransaction {
    /// `addr_noise` is whatever the address strobes happen to carry during
    /// the burst; it has no meaning.
    pub fn encode(cmd: &[u8; 64], addr_noise: u16) -> Self {
        let mut cycles = Vec::with_capacity(RegisterInterface::CYCLES as usize);
        let idle = BusCycle {
            cs_n: true,
            we_n: true,
            cas_n: true,
            ras_n: true,
            addr: addr_noise,
            data: 0,
        };
        cycles.push(idle);
        cycles.push(BusCycle {
            we_n: false,
            cas_n: false,
            ras_n: true,
            ..idle
        });
        for beat in cmd.chunks_exact(BUS_WIDTH_BYTES) {
            cycles.push(BusCycle {
                addr: addr_noise.rotate_left(cycles.len() as u32),
                data: u64::from_le_bytes(beat.try_into().expect("8-byte beat")),
                ..idle
            });
        }
        RegisterCommandTransaction { cycles }
    }

    /// Reassembles the command from the data strobes, ignoring A[15:0].
    pub fn decode(&self) -> Option<[u8; 64]> {
        if self.cycles.len() != RegisterInterface::CYCLES as usize {
            return None;
        }
        let (sel, wr) = (self.cycles[0], self.cycles[1]);
        if !sel.cs_n || wr.we_n || wr.cas_n || !wr.ras_n {
            return None;
        }
        let mut out = [0u8; 64];
        for (i, c) in self.cycles[2..].iter().enumerate() {
            out[i * 8..i * 8 + 8].copy_from_slice(&c.data.to_le_bytes());
        }
        Some(out)
    }
}

/// Pushes a 64-byte command over the DDR4 bus to the device's registers.
/// Fails while the NVMe controller holds the bus.
pub fn send_command_over_ddr4(
    bus: &mut Timeline,
    lock: LockRegister,
    release_at: SimTime,
    reg: &RegisterInterface,
    now: SimTime,
) -> Result<(SimTime, SimTime), InterconnectError> {
    if lock.value() {
        return Err(InterconnectError::BusLocked { release_at });
    }
    Ok(bus.reserve(now, reg.command_latency(), Master::Controller.id()))
}
