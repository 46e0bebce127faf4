use std::path::Path;

use super::{FieldId, Result, StoreError};
use crate::grid::GridSpec;
use crate::hours::EpochHour;

pub const MAGIC: [u8; 4] = *b"PDCH";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 64;
/// Only layout: f32 little-endian, `[time, lat, lon]` row-major.
pub const LAYOUT_TLL_F32LE: u8 = 0;

/// Fixed 64-byte chunk header.
///
/// | offset | size | field |
/// |---|---|---|
/// | 0 | 4 | magic `PDCH` |
/// | 4 | 2 | version (u16) |
/// | 6 | 1 | field code |
/// | 7 | 1 | layout tag |
/// | 8 | 32 | lat_min, lat_max, lon_min, lon_max (f64) |
/// | 40 | 8 | resolution (f64) |
/// | 48 | 4 | n_steps (u32) |
/// | 52 | 8 | start time, epoch hours (i64) |
/// | 60 | 4 | ensemble member (u32) |
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkHeader {
    pub field: FieldId,
    pub grid: GridSpec,
    pub n_steps: usize,
    pub start_time: EpochHour,
    pub member: u32,
}

impl ChunkHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&VERSION.to_le_bytes());
        b[6] = self.field.code();
        b[7] = LAYOUT_TLL_F32LE;
        let g = &self.grid;
        for (i, x) in [g.lat_min, g.lat_max, g.lon_min, g.lon_max, g.resolution]
            .into_iter()
            .enumerate()
        {
            b[8 + 8 * i..16 + 8 * i].copy_from_slice(&x.to_le_bytes());
        }
        b[48..52].copy_from_slice(&(self.n_steps as u32).to_le_bytes());
        b[52..60].copy_from_slice(&self.start_time.to_le_bytes());
        b[60..64].copy_from_slice(&self.member.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8; HEADER_LEN], path: &Path) -> Result<Self> {
        if b[0..4] != MAGIC {
            return Err(StoreError::BadMagic { path: path.into() });
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != VERSION {
            return Err(StoreError::Version {
                path: path.into(),
                version: version.into(),
            });
        }
        if b[7] != LAYOUT_TLL_F32LE {
            return Err(StoreError::Layout {
                path: path.into(),
                tag: b[7],
            });
        }
        let f = |i: usize| f64::from_le_bytes(b[8 + 8 * i..16 + 8 * i].try_into().unwrap());
        let grid = GridSpec::new(f(0), f(1), f(2), f(3), f(4))?;
        Ok(Self {
            field: FieldId::from_code(b[6])?,
            grid,
            n_steps: u32::from_le_bytes(b[48..52].try_into().unwrap()) as usize,
            start_time: i64::from_le_bytes(b[52..60].try_into().unwrap()),
            member: u32::from_le_bytes(b[60..64].try_into().unwrap()),
        })
    }

    pub fn payload_len(&self) -> usize {
        self.n_steps * self.grid.cells() * 4
    }
}

pub fn encode_payload(values: &[f32], out: &mut Vec<u8>) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn decode_payload(bytes: &[u8], out: &mut Vec<f32>) {
    out.extend(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
    );
}

/// Packs flags LSB-first; a set bit marks a missing value.
pub fn encode_bitmap(flags: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; flags.len().div_ceil(8)];
    for (i, _) in flags.iter().enumerate().filter(|(_, &m)| m) {
        out[i / 8] |= 1 << (i % 8);
    }
    out
}

pub fn bitmap_get(bits: &[u8], i: usize) -> bool {
    bits[i / 8] >> (i % 8) & 1 == 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{ProductId, VariableId};

    #[test]
    fn header_is_64_bytes_and_roundtrips() {
        let grid = GridSpec::new(-20.0, 20.0, -30.0, 70.0, 0.25).unwrap();
        let h = ChunkHeader {
            field: FieldId::Product(ProductId::ForecastPrecip),
            grid,
            n_steps: 744,
            start_time: 271_752,
            member: 7,
        };
        let bytes = h.encode();
        assert_eq!(&bytes[0..4], b"PDCH");
        assert_eq!(ChunkHeader::decode(&bytes, Path::new("x")).unwrap(), h);

        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(
            ChunkHeader::decode(&bad, Path::new("x")),
            Err(StoreError::BadMagic { .. })
        ));
        let h2 = ChunkHeader {
            field: VariableId::Tp.into(),
            ..h
        };
        assert_eq!(h2.encode()[6], 0);
    }

    #[test]
    fn bitmap_packing() {
        let flags: Vec<bool> = (0..19).map(|i| i % 3 == 0).collect();
        let bits = encode_bitmap(&flags);
        assert_eq!(bits.len(), 3);
        for (i, &f) in flags.iter().enumerate() {
            assert_eq!(bitmap_get(&bits, i), f);
        }
    }
}
