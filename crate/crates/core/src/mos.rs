//! Memory-over-storage address space: geometry, address decomposition and
//! the page unit shared by every datapath model.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * KIB;
pub const GIB: u64 = 1024 * MIB;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MosError {
    #[error("address {addr:#x} is outside the {limit:#x}-byte MoS space")]
    AddressOutOfRange { addr: u64, limit: u64 },
    #[error("address parts (tag {tag:#x}, index {index}, offset {offset}) out of range")]
    PartsOutOfRange { tag: u64, index: u64, offset: u64 },
    #[error("invalid MoS geometry: {0}")]
    InvalidConfig(String),
}

/// Geometry of the MoS space. The NVDIMM, minus its pinned region, is a
/// direct-mapped cache of `num_sets()` pages in front of the flash capacity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MosConfig {
    pub page_size_bytes: u64,
    pub nvdimm_bytes: u64,
    pub pinned_bytes: u64,
    pub flash_bytes: u64,
}

impl Default for MosConfig {
    fn default() -> Self {
        MosConfig {
            page_size_bytes: 128 * KIB,
            nvdimm_bytes: 8 * GIB,
            pinned_bytes: 512 * MIB,
            flash_bytes: 800_000_000_000,
        }
    }
}

impl MosConfig {
    /// Single-set geometry with 16-byte pages, handy for hand-worked examples.
    pub fn toy() -> Self {
        MosConfig {
            page_size_bytes: 16,
            nvdimm_bytes: 256 * KIB + 16,
            pinned_bytes: 256 * KIB,
            flash_bytes: MIB,
        }
    }

    pub fn num_sets(&self) -> u64 {
        (self.nvdimm_bytes - self.pinned_bytes) / self.page_size_bytes
    }

    /// Number of whole pages in the flash capacity.
    pub fn num_pages(&self) -> u64 {
        self.flash_bytes / self.page_size_bytes
    }

    /// Bytes of NVDIMM used as cache (whole pages only).
    pub fn cache_bytes(&self) -> u64 {
        self.num_sets() * self.page_size_bytes
    }

    /// First byte of the pinned region, which sits at the top of the NVDIMM.
    pub fn pinned_base(&self) -> u64 {
        self.nvdimm_bytes - self.pinned_bytes
    }

    pub fn validate(&self) -> Result<(), MosError> {
        let bad = |m: &str| Err(MosError::InvalidConfig(m.to_string()));
        if !self.page_size_bytes.is_power_of_two() {
            return bad("page_size_bytes must be a power of two");
        }
        if self.pinned_bytes >= self.nvdimm_bytes {
            return bad("pinned_bytes must be smaller than nvdimm_bytes");
        }
        if self.flash_bytes < self.nvdimm_bytes {
            return bad("flash_bytes must be at least nvdimm_bytes");
        }
        if self.num_sets() == 0 {
            return bad("NVDIMM leaves no room for a single cache page");
        }
        Ok(())
    }

    pub fn address(&self, value: u64) -> Result<MosAddress, MosError> {
        if value >= self.flash_bytes {
            return Err(MosError::AddressOutOfRange {
                addr: value,
                limit: self.flash_bytes,
            });
        }
        Ok(MosAddress(value))
    }

    pub fn page_of(&self, addr: MosAddress) -> u64 {
        addr.0 / self.page_size_bytes
    }

    /// (tag, set index) of a page number.
    pub fn split_page(&self, page: u64) -> (u64, u64) {
        let sets = self.num_sets();
        (page / sets, page % sets)
    }

    pub fn page_from(&self, tag: u64, index: u64) -> u64 {
        tag * self.num_sets() + index
    }
}

/// A byte address in the MoS space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MosAddress(pub u64);

impl fmt::LowerHex for MosAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerHex::fmt(&self.0, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AddressParts {
    pub tag: u64,
    pub index: u64,
    pub offset: u64,
}

/// Splits an address into (tag, index, offset). The set index is taken
/// modulo the set count, which need not be a power of two.
pub fn decompose(addr: MosAddress, cfg: &MosConfig) -> Result<AddressParts, MosError> {
    if addr.0 >= cfg.flash_bytes {
        return Err(MosError::AddressOutOfRange {
            addr: addr.0,
            limit: cfg.flash_bytes,
        });
    }
    let offset = addr.0 % cfg.page_size_bytes;
    let (tag, index) = cfg.split_page(addr.0 / cfg.page_size_bytes);
    Ok(AddressParts { tag, index, offset })
}

pub fn recompose(parts: AddressParts, cfg: &MosConfig) -> Result<MosAddress, MosError> {
    let out_of_range = || MosError::PartsOutOfRange {
        tag: parts.tag,
        index: parts.index,
        offset: parts.offset,
    };
    if parts.index >= cfg.num_sets() || parts.offset >= cfg.page_size_bytes {
        return Err(out_of_range());
    }
    let value = parts
        .tag
        .checked_mul(cfg.num_sets())
        .and_then(|p| p.checked_add(parts.index))
        .and_then(|p| p.checked_mul(cfg.page_size_bytes))
        .and_then(|b| b.checked_add(parts.offset))
        .ok_or_else(out_of_range)?;
    if value >= cfg.flash_bytes {
        return Err(out_of_range());
    }
    Ok(MosAddress(value))
}

/// Checksum shadow of a page's bytes.
///
/// Every store folds `(request id, offset, size)` into the digest, so two
/// pages compare equal only if they saw the same stores in the same order.
/// A page that was never written has the all-zero digest.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PageContent(pub u64);

impl PageContent {
    pub const ZERO: PageContent = PageContent(0);

    pub fn apply_store(self, req_id: u64, offset: u64, size: u64) -> PageContent {
        let word = splitmix64(req_id) ^ splitmix64((offset << 20) ^ size ^ 0x5bd1_e995);
        let next = splitmix64(self.0 ^ word);
        // keep zero reserved for never-written pages
        PageContent(if next == 0 { 1 } else { next })
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A flash-backed page of the MoS space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Page {
    pub frame_id: u64,
    pub content: PageContent,
}
