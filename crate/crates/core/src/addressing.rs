//! Bit-partitioned channel-end address formats.
//!
//! A virtual channel-end address is what applications hold. Its upper part
//! names the interconnect node responsible for translating it and its lower
//! part indexes that node's translation table:
//!
//! ```text
//! virtual:  [ node_part | index_part ]
//! physical: [ node_id | unit_slot | end_index | generation ]
//! ```
//!
//! Both layouts are most-significant part first. The physical layout carries
//! a generation tag so that a stale binding can be recognized from the
//! address alone after the mapping behind a virtual address has moved.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressError {
    #[error("field {field} = {value} does not fit in {bits} bits")]
    FieldOutOfRange {
        field: &'static str,
        value: u64,
        bits: u32,
    },
    #[error("packed word {word:#x} does not fit in {bits} bits")]
    WordOutOfRange { word: u64, bits: u32 },
    #[error("invalid address config: {0}")]
    InvalidConfig(String),
    #[error("malformed address literal {0:?}")]
    Malformed(String),
}

/// Bit widths of every address field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AddressConfig {
    pub node_bits: u32,
    pub index_bits: u32,
    pub slot_bits: u32,
    pub end_bits: u32,
    pub gen_bits: u32,
}

impl Default for AddressConfig {
    fn default() -> Self {
        Self {
            node_bits: 8,
            index_bits: 8,
            slot_bits: 4,
            end_bits: 4,
            gen_bits: 8,
        }
    }
}

impl AddressConfig {
    pub fn new(
        node_bits: u32,
        index_bits: u32,
        slot_bits: u32,
        end_bits: u32,
        gen_bits: u32,
    ) -> Result<Self, AddressError> {
        let cfg = Self {
            node_bits,
            index_bits,
            slot_bits,
            end_bits,
            gen_bits,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), AddressError> {
        let widths = [
            ("node_bits", self.node_bits),
            ("index_bits", self.index_bits),
            ("slot_bits", self.slot_bits),
            ("end_bits", self.end_bits),
            ("gen_bits", self.gen_bits),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, w)| *w == 0) {
            return Err(AddressError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if self.virtual_width() > 32 {
            return Err(AddressError::InvalidConfig(format!(
                "node_bits + index_bits = {} exceeds 32",
                self.virtual_width()
            )));
        }
        if self.physical_width() > 64 {
            return Err(AddressError::InvalidConfig(format!(
                "node_bits + slot_bits + end_bits + gen_bits = {} exceeds 64",
                self.physical_width()
            )));
        }
        Ok(())
    }

    pub fn virtual_width(&self) -> u32 {
        self.node_bits + self.index_bits
    }

    pub fn physical_width(&self) -> u32 {
        self.node_bits + self.slot_bits + self.end_bits + self.gen_bits
    }

    /// Number of distinct interconnect nodes addressable.
    pub fn max_nodes(&self) -> u64 {
        1u64 << self.node_bits
    }

    /// Entries per translation table.
    pub fn table_size(&self) -> u64 {
        1u64 << self.index_bits
    }

    pub fn max_units_per_node(&self) -> u64 {
        1u64 << self.slot_bits
    }

    pub fn ends_per_unit(&self) -> u64 {
        1u64 << self.end_bits
    }

    pub fn max_generation(&self) -> u64 {
        mask(self.gen_bits)
    }

    /// `v:` prefixed lowercase hex, zero padded to the virtual word width.
    pub fn format_virtual(&self, v: VirtualAddress) -> String {
        match encode_virtual(self, v) {
            Ok(w) => format!("v:{:0width$x}", w.0, width = hex_digits(self.virtual_width())),
            Err(_) => format!("v:?{}.{}", v.node_part, v.index_part),
        }
    }

    /// `p:` prefixed lowercase hex, zero padded to the physical word width.
    pub fn format_physical(&self, p: PhysicalAddress) -> String {
        match encode_physical(self, p) {
            Ok(w) => format!("p:{:0width$x}", w.0, width = hex_digits(self.physical_width())),
            Err(_) => format!(
                "p:?{}.{}.{}.{}",
                p.node_id, p.unit_slot, p.end_index, p.generation
            ),
        }
    }

    /// Parses a `v:` hex literal as produced by [`AddressConfig::format_virtual`].
    pub fn parse_virtual(&self, text: &str) -> Result<VirtualAddress, AddressError> {
        let hex = text
            .strip_prefix("v:")
            .ok_or_else(|| AddressError::Malformed(text.to_string()))?;
        let word = u64::from_str_radix(hex, 16).map_err(|_| AddressError::Malformed(text.to_string()))?;
        if word > u64::from(u32::MAX) {
            return Err(AddressError::WordOutOfRange {
                word,
                bits: self.virtual_width(),
            });
        }
        decode_virtual(self, PackedVirtual(word as u32))
    }
}

fn mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

fn hex_digits(bits: u32) -> usize {
    bits.div_ceil(4).max(1) as usize
}

fn check(field: &'static str, value: u64, bits: u32) -> Result<(), AddressError> {
    if value > mask(bits) {
        Err(AddressError::FieldOutOfRange { field, value, bits })
    } else {
        Ok(())
    }
}

/// Application-visible channel-end reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VirtualAddress {
    pub node_part: u32,
    pub index_part: u32,
}

impl VirtualAddress {
    pub const fn new(node_part: u32, index_part: u32) -> Self {
        Self {
            node_part,
            index_part,
        }
    }
}

impl fmt::Display for VirtualAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{{{},{}}}", self.node_part, self.index_part)
    }
}

/// Hardware-level channel-end address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PhysicalAddress {
    pub node_id: u32,
    pub unit_slot: u32,
    pub end_index: u32,
    /// Bumped every time the virtual address mapped here is remapped.
    pub generation: u32,
}

impl PhysicalAddress {
    pub const fn new(node_id: u32, unit_slot: u32, end_index: u32, generation: u32) -> Self {
        Self {
            node_id,
            unit_slot,
            end_index,
            generation,
        }
    }

    /// Same endpoint, ignoring generation.
    pub fn endpoint(&self) -> (u32, u32, u32) {
        (self.node_id, self.unit_slot, self.end_index)
    }
}

impl fmt::Display for PhysicalAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "p{{{},{},{},{}}}",
            self.node_id, self.unit_slot, self.end_index, self.generation
        )
    }
}

/// A packed virtual address word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PackedVirtual(pub u32);

/// A packed physical address word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PackedPhysical(pub u64);

pub fn encode_virtual(cfg: &AddressConfig, v: VirtualAddress) -> Result<PackedVirtual, AddressError> {
    check("node_part", v.node_part.into(), cfg.node_bits)?;
    check("index_part", v.index_part.into(), cfg.index_bits)?;
    let word = (u64::from(v.node_part) << cfg.index_bits) | u64::from(v.index_part);
    Ok(PackedVirtual(word as u32))
}

pub fn decode_virtual(cfg: &AddressConfig, w: PackedVirtual) -> Result<VirtualAddress, AddressError> {
    let word = u64::from(w.0);
    if word > mask(cfg.virtual_width()) {
        return Err(AddressError::WordOutOfRange {
            word,
            bits: cfg.virtual_width(),
        });
    }
    Ok(VirtualAddress {
        node_part: (word >> cfg.index_bits) as u32,
        index_part: (word & mask(cfg.index_bits)) as u32,
    })
}

pub fn encode_physical(cfg: &AddressConfig, p: PhysicalAddress) -> Result<PackedPhysical, AddressError> {
    check("node_id", p.node_id.into(), cfg.node_bits)?;
    check("unit_slot", p.unit_slot.into(), cfg.slot_bits)?;
    check("end_index", p.end_index.into(), cfg.end_bits)?;
    check("generation", p.generation.into(), cfg.gen_bits)?;
    let mut word = u64::from(p.node_id);
    word = (word << cfg.slot_bits) | u64::from(p.unit_slot);
    word = (word << cfg.end_bits) | u64::from(p.end_index);
    word = (word << cfg.gen_bits) | u64::from(p.generation);
    Ok(PackedPhysical(word))
}

pub fn decode_physical(cfg: &AddressConfig, w: PackedPhysical) -> Result<PhysicalAddress, AddressError> {
    if w.0 > mask(cfg.physical_width()) {
        return Err(AddressError::WordOutOfRange {
            word: w.0,
            bits: cfg.physical_width(),
        });
    }
    let mut word = w.0;
    let generation = word & mask(cfg.gen_bits);
    word >>= cfg.gen_bits;
    let end_index = word & mask(cfg.end_bits);
    word >>= cfg.end_bits;
    let unit_slot = word & mask(cfg.slot_bits);
    word >>= cfg.slot_bits;
    let node_id = word;
    // Any single field can be up to 61 bits wide; the struct holds u32s.
    for (field, value) in [
        ("node_id", node_id),
        ("unit_slot", unit_slot),
        ("end_index", end_index),
        ("generation", generation),
    ] {
        if value > u64::from(u32::MAX) {
            return Err(AddressError::FieldOutOfRange {
                field,
                value,
                bits: 32,
            });
        }
    }
    Ok(PhysicalAddress {
        node_id: node_id as u32,
        unit_slot: unit_slot as u32,
        end_index: end_index as u32,
        generation: generation as u32,
    })
}

/// The interconnect node that answers resolutions for `v`.
pub fn responsible_node(v: &VirtualAddress) -> u32 {
    v.node_part
}
