//! Event-count energy model. Every figure is a placeholder: the defaults
//! only support relative comparisons between platforms, which is why the
//! config carries an `assumed` flag.

use serde::{Deserialize, Serialize};

use crate::sim::SimTime;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyModel {
    /// Set while the values are placeholders rather than measured figures.
    pub assumed: bool,
    pub nvdimm_read_pj_per_64b: u64,
    pub nvdimm_write_pj_per_64b: u64,
    pub flash_read_pj_per_page: u64,
    pub flash_program_pj_per_page: u64,
    pub buffer_pj_per_page: u64,
    pub controller_pj_per_command: u64,
    pub pcie_pj_per_byte: u64,
    /// Host CPU power while running page-fault handling in software.
    pub host_software_mw: f64,
    pub idle_nvdimm_mw: f64,
    pub idle_flash_mw: f64,
    pub idle_buffer_mw: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            assumed: true,
            nvdimm_read_pj_per_64b: 8_000,
            nvdimm_write_pj_per_64b: 8_500,
            flash_read_pj_per_page: 1_000_000,
            flash_program_pj_per_page: 10_000_000,
            buffer_pj_per_page: 512_000,
            controller_pj_per_command: 50_000,
            pcie_pj_per_byte: 40,
            host_software_mw: 10_000.0,
            idle_nvdimm_mw: 1_500.0,
            idle_flash_mw: 1_000.0,
            idle_buffer_mw: 1_170.0,
        }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<(), String> {
        let powers = [
            ("host_software_mw", self.host_software_mw),
            ("idle_nvdimm_mw", self.idle_nvdimm_mw),
            ("idle_flash_mw", self.idle_flash_mw),
            ("idle_buffer_mw", self.idle_buffer_mw),
        ];
        for (name, v) in powers {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("energy.{name} must be a non-negative number"));
            }
        }
        Ok(())
    }

    /// Energy of `mw` milliwatts held for `t`, in picojoules.
    pub fn power_over(mw: f64, t: SimTime) -> u64 {
        // mW * ps = 1e-15 J = 1e-3 pJ
        (mw * t.as_ps() as f64 / 1000.0).round() as u64
    }

    pub fn account(&self, c: &EnergyCounters, makespan: SimTime, buffered: bool) -> EnergyReport {
        let beats = |bytes: u64| bytes.div_ceil(64);
        let nvdimm = beats(c.nvdimm_read_bytes) * self.nvdimm_read_pj_per_64b
            + beats(c.nvdimm_write_bytes) * self.nvdimm_write_pj_per_64b
            + Self::power_over(self.idle_nvdimm_mw, makespan);
        let flash = c.flash_page_reads * self.flash_read_pj_per_page
            + c.flash_page_programs * self.flash_program_pj_per_page
            + Self::power_over(self.idle_flash_mw, makespan);
        let buffer = if buffered {
            c.buffer_page_accesses * self.buffer_pj_per_page
                + Self::power_over(self.idle_buffer_mw, makespan)
        } else {
            0
        };
        let controller = c.commands * self.controller_pj_per_command
            + c.pcie_bytes * self.pcie_pj_per_byte
            + Self::power_over(self.host_software_mw, c.software_time);
        EnergyReport {
            nvdimm_pj: nvdimm,
            flash_pj: flash,
            buffer_pj: buffer,
            controller_pj: controller,
        }
    }
}

/// Raw event counts; energy is a linear function of these, so it does not
/// depend on the order events were dispatched in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EnergyCounters {
    pub nvdimm_read_bytes: u64,
    pub nvdimm_write_bytes: u64,
    pub flash_page_reads: u64,
    pub flash_page_programs: u64,
    pub buffer_page_accesses: u64,
    pub commands: u64,
    pub pcie_bytes: u64,
    pub software_time: SimTime,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub nvdimm_pj: u64,
    pub flash_pj: u64,
    pub buffer_pj: u64,
    pub controller_pj: u64,
}

impl EnergyReport {
    pub fn total_pj(&self) -> u64 {
        self.nvdimm_pj + self.flash_pj + self.buffer_pj + self.controller_pj
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idle_power_conversion() {
        // 1 W for 1 us is 1 uJ.
        assert_eq!(EnergyModel::power_over(1000.0, SimTime::from_us(1)), 1_000_000);
    }

    #[test]
    fn counts_are_linear() {
        let m = EnergyModel::default();
        let c = EnergyCounters {
            nvdimm_read_bytes: 128,
            flash_page_reads: 2,
            commands: 1,
            ..Default::default()
        };
        let r = m.account(&c, SimTime::ZERO, false);
        assert_eq!(r.nvdimm_pj, 16_000);
        assert_eq!(r.flash_pj, 2_000_000);
        assert_eq!(r.buffer_pj, 0);
        assert_eq!(r.controller_pj, 50_000);
    }

    #[test]
    fn negative_power_rejected() {
        let m = EnergyModel {
            idle_flash_mw: -1.0,
            ..Default::default()
        };
        assert!(m.validate().is_err());
    }
}
