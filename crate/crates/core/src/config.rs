//! Whole-system configuration, loadable from a TOML document whose tables
//! mirror the model parameter structs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::Mode;
use crate::flash::{BufferConfig, FlashGeometry};
use crate::interconnect::{PcieLink, RegisterInterface};
use crate::mos::MosConfig;
use crate::nvdimm::{Ddr4Timing, PinnedLayout};
use crate::nvme::NvmeConfig;
use crate::workload::energy::EnergyModel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Datapath {
    /// Flash behind PCIe, with its internal DRAM buffer.
    Baseline,
    /// Flash on the DDR4 channel, buffer removed, register command interface.
    Advanced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformConfig {
    pub datapath: Datapath,
    pub mode: Mode,
    /// Advanced datapath only: flash shares the NVDIMM's DDR4 channel.
    pub shared_channel: bool,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig {
            datapath: Datapath::Advanced,
            mode: Mode::Extend,
            shared_channel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriverConfig {
    /// Requests the workload driver keeps in flight.
    pub max_outstanding: u32,
    pub wait_queue_capacity: u32,
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig {
            max_outstanding: 16,
            wait_queue_capacity: 4096,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmapConfig {
    /// Software cost per page fault.
    pub overhead_us: f64,
}

impl Default for MmapConfig {
    fn default() -> Self {
        MmapConfig { overhead_us: 17.5 }
    }
}

/// The four evaluated platforms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlatformKind {
    BaselinePersist,
    BaselineExtend,
    AdvancedPersist,
    AdvancedExtend,
}

impl PlatformKind {
    pub const ALL: [PlatformKind; 4] = [
        PlatformKind::BaselinePersist,
        PlatformKind::BaselineExtend,
        PlatformKind::AdvancedPersist,
        PlatformKind::AdvancedExtend,
    ];

    pub fn datapath(self) -> Datapath {
        match self {
            PlatformKind::BaselinePersist | PlatformKind::BaselineExtend => Datapath::Baseline,
            _ => Datapath::Advanced,
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            PlatformKind::BaselinePersist | PlatformKind::AdvancedPersist => Mode::Persist,
            _ => Mode::Extend,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PlatformKind::BaselinePersist => "baseline-persist",
            PlatformKind::BaselineExtend => "baseline-extend",
            PlatformKind::AdvancedPersist => "advanced-persist",
            PlatformKind::AdvancedExtend => "advanced-extend",
        }
    }
}

impl fmt::Display for PlatformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlatformKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PlatformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown platform {s:?}"))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub mos: MosConfig,
    pub flash: FlashGeometry,
    pub buffer: BufferConfig,
    pub ddr4: Ddr4Timing,
    pub pcie: PcieLink,
    pub register: RegisterInterface,
    pub nvme: NvmeConfig,
    pub platform: PlatformConfig,
    pub driver: DriverConfig,
    pub energy: EnergyModel,
    pub mmap: MmapConfig,
}

impl SystemConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: SystemConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn with_platform(mut self, kind: PlatformKind) -> Self {
        self.platform.datapath = kind.datapath();
        self.platform.mode = kind.mode();
        self
    }

    pub fn kind(&self) -> PlatformKind {
        match (self.platform.datapath, self.platform.mode) {
            (Datapath::Baseline, Mode::Persist) => PlatformKind::BaselinePersist,
            (Datapath::Baseline, Mode::Extend) => PlatformKind::BaselineExtend,
            (Datapath::Advanced, Mode::Persist) => PlatformKind::AdvancedPersist,
            (Datapath::Advanced, Mode::Extend) => PlatformKind::AdvancedExtend,
        }
    }

    pub fn pinned_layout(&self) -> PinnedLayout {
        PinnedLayout::new(
            self.nvme.queue_depth,
            self.nvme.prp_slots(),
            self.mos.page_size_bytes,
            1,
            self.driver.wait_queue_capacity,
        )
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = ConfigError::Invalid;
        self.mos.validate().map_err(|e| inv(e.to_string()))?;
        self.flash.validate().map_err(|e| inv(e.to_string()))?;
        self.ddr4.validate().map_err(inv)?;
        self.buffer.timing.validate().map_err(inv)?;
        self.pcie.validate().map_err(inv)?;
        self.nvme.validate().map_err(inv)?;
        self.energy.validate().map_err(inv)?;
        if self.register.bus_clock_hz.is_nan() || self.register.bus_clock_hz <= 0.0 {
            return Err(inv("register bus clock must be positive".into()));
        }
        let (page, fpage) = (self.mos.page_size_bytes, self.flash.flash_page_bytes);
        if page % fpage != 0 && fpage % page != 0 {
            return Err(inv("MoS page and flash page sizes must divide one another".into()));
        }
        if self.mos.page_size_bytes > u32::MAX as u64 {
            return Err(inv("MoS page must fit a 32-bit transfer length".into()));
        }
        if self.driver.max_outstanding == 0 {
            return Err(inv("driver.max_outstanding must be positive".into()));
        }
        if self.driver.max_outstanding > self.driver.wait_queue_capacity {
            return Err(inv("wait queue must hold every outstanding request".into()));
        }
        let layout = self.pinned_layout();
        if layout.total > self.mos.pinned_bytes {
            return Err(inv(format!(
                "pinned region needs {} bytes, only {} reserved",
                layout.total, self.mos.pinned_bytes
            )));
        }
        if !(0.0..=1e6).contains(&self.mmap.overhead_us) {
            return Err(inv("mmap.overhead_us out of range".into()));
        }
        Ok(())
    }
}
