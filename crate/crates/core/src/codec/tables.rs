//! Quality-factor scaling and quantization tables.

use std::fmt;

use crate::error::{Error, Result};

/// Default luminance table from ITU-T T.81 Annex K (row = vertical frequency).
pub const BASE_LUMA: [[u16; 8]; 8] = [
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
];

/// Default chrominance table from ITU-T T.81 Annex K.
pub const BASE_CHROMA: [[u16; 8]; 8] = [
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelClass {
    Luma,
    Chroma,
}

impl ChannelClass {
    pub fn base_table(self) -> &'static [[u16; 8]; 8] {
        match self {
            ChannelClass::Luma => &BASE_LUMA,
            ChannelClass::Chroma => &BASE_CHROMA,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelClass::Luma => "luma",
            ChannelClass::Chroma => "chroma",
        }
    }
}

/// Scale percentage for a JPEG quality factor: `5000/q` up to 50, `200 - 2q` above.
pub fn quality_scale(q: u32) -> Result<f64> {
    match q {
        1..=50 => Ok(5000.0 / f64::from(q)),
        51..=100 => Ok(200.0 - 2.0 * f64::from(q)),
        _ => Err(Error::invalid(format!("quality {q} outside [1, 100]"))),
    }
}

/// An 8×8 table of quantization steps, indexed `[v][u]` (vertical, horizontal frequency).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantTable {
    entries: [[u16; 8]; 8],
    class: ChannelClass,
    quality: u32,
}

impl QuantTable {
    /// Scales the base table for `class` to quality `q`.
    pub fn for_quality(q: u32, class: ChannelClass) -> Result<Self> {
        let scale = quality_scale(q)?;
        let base = class.base_table();
        let mut entries = [[0u16; 8]; 8];
        for v in 0..8 {
            for u in 0..8 {
                // f64::round is half-away-from-zero.
                let step = (scale * f64::from(base[v][u]) / 100.0).round();
                entries[v][u] = step.clamp(1.0, 255.0) as u16;
            }
        }
        Ok(Self { entries, class, quality: q })
    }

    /// A table with arbitrary entries, for analysis and tests. Entries may be
    /// zero here; such tables are only valid as translation-kernel inputs.
    pub fn from_entries(entries: [[u16; 8]; 8], class: ChannelClass, quality: u32) -> Self {
        Self { entries, class, quality }
    }

    #[inline]
    pub fn get(&self, v: usize, u: usize) -> u16 {
        self.entries[v][u]
    }

    pub fn entries(&self) -> &[[u16; 8]; 8] {
        &self.entries
    }

    pub fn class(&self) -> ChannelClass {
        self.class
    }

    pub fn quality(&self) -> u32 {
        self.quality
    }

    /// Steps as `f64`, flattened `8v + u`.
    pub fn steps(&self) -> [f64; 64] {
        let mut out = [0.0; 64];
        for v in 0..8 {
            for u in 0..8 {
                out[8 * v + u] = f64::from(self.entries[v][u]);
            }
        }
        out
    }

    /// CRC-32 of the 64 entries in row-major order, used in manifests.
    pub fn checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for row in &self.entries {
            for &e in row {
                hasher.update(&e.to_le_bytes());
            }
        }
        hasher.finalize()
    }
}

/// Eight lines of eight whitespace-separated integers.
impl fmt::Display for QuantTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.entries {
            let line: Vec<String> = row.iter().map(|e| format!("{e:>3}")).collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Luma and chroma tables for one quality.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TablePair {
    pub luma: QuantTable,
    pub chroma: QuantTable,
}

impl TablePair {
    pub fn for_quality(q: u32) -> Result<Self> {
        Ok(Self {
            luma: QuantTable::for_quality(q, ChannelClass::Luma)?,
            chroma: QuantTable::for_quality(q, ChannelClass::Chroma)?,
        })
    }

    pub fn quality(&self) -> u32 {
        self.luma.quality()
    }

    pub fn get(&self, class: ChannelClass) -> &QuantTable {
        match class {
            ChannelClass::Luma => &self.luma,
            ChannelClass::Chroma => &self.chroma,
        }
    }

    pub fn checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&self.luma.checksum().to_le_bytes());
        hasher.update(&self.chroma.checksum().to_le_bytes());
        hasher.finalize()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_examples() {
        assert_eq!(quality_scale(50).unwrap(), 100.0);
        assert_eq!(quality_scale(10).unwrap(), 500.0);
        assert_eq!(quality_scale(95).unwrap(), 10.0);
        assert_eq!(quality_scale(100).unwrap(), 0.0);
        assert!(quality_scale(0).is_err());
        assert!(quality_scale(101).is_err());
    }

    #[test]
    fn scale_is_continuous_at_fifty() {
        // 5000/50 and 200 - 2*51 bracket the switch without a jump.
        assert_eq!(quality_scale(50).unwrap(), 100.0);
        assert_eq!(quality_scale(51).unwrap(), 98.0);
    }

    #[test]
    fn table_examples() {
        let t50 = QuantTable::for_quality(50, ChannelClass::Luma).unwrap();
        assert_eq!(t50.entries(), &BASE_LUMA);
        let c50 = QuantTable::for_quality(50, ChannelClass::Chroma).unwrap();
        assert_eq!(c50.entries(), &BASE_CHROMA);
        assert_eq!(QuantTable::for_quality(10, ChannelClass::Luma).unwrap().get(0, 0), 80);
        assert_eq!(QuantTable::for_quality(95, ChannelClass::Luma).unwrap().get(0, 0), 2);
    }

    #[test]
    fn extreme_qualities_are_clamped() {
        let q1 = QuantTable::for_quality(1, ChannelClass::Luma).unwrap();
        assert!(q1.entries().iter().flatten().all(|&e| e == 255));
        let q100 = QuantTable::for_quality(100, ChannelClass::Chroma).unwrap();
        assert!(q100.entries().iter().flatten().all(|&e| e == 1));
    }

    #[test]
    fn all_tables_in_range() {
        for q in 1..=100 {
            for class in [ChannelClass::Luma, ChannelClass::Chroma] {
                let t = QuantTable::for_quality(q, class).unwrap();
                assert!(t.entries().iter().flatten().all(|&e| (1..=255).contains(&e)), "q={q}");
            }
        }
    }

    #[test]
    fn display_is_eight_rows() {
        let s = QuantTable::for_quality(50, ChannelClass::Luma).unwrap().to_string();
        assert_eq!(s.lines().count(), 8);
        assert!(s.lines().next().unwrap().trim_start().starts_with("16"));
    }
}
