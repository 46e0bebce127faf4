use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, FieldId, Result, StoreError};
use crate::grid::GridSpec;
use crate::hours::{format_hour, EpochHour, HourRange};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "precip-downscale-store";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkEntry {
    pub field: FieldId,
    #[serde(default)]
    pub member: u32,
    /// Path relative to the store root, `/`-separated.
    pub file: String,
    pub start_time: EpochHour,
    pub n_steps: usize,
    pub grid: GridSpec,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_sha256: Option<String>,
}

impl ChunkEntry {
    pub fn time_range(&self) -> HourRange {
        HourRange::new(self.start_time, self.start_time + self.n_steps as i64)
    }

    pub fn mask_file(&self) -> Option<String> {
        self.mask_sha256.as_ref().map(|_| format!("{}.mask", self.file))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub chunks: Vec<ChunkEntry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            format: FORMAT.to_owned(),
            version: 1,
            chunks: Vec::new(),
        }
    }
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| StoreError::Json {
            path: path.into(),
            source,
        })
    }

    /// Writes to a sibling temp file then renames over the target.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(path, text.as_bytes())
    }

    /// Inserts `entry`, replacing an entry for the same file. Fails when the
    /// time range would overlap a different chunk of the same field and member.
    pub fn upsert(&mut self, entry: ChunkEntry) -> Result<()> {
        self.chunks.retain(|c| c.file != entry.file);
        let r = entry.time_range();
        let clash = self.chunks.iter().any(|c| {
            c.field == entry.field && c.member == entry.member && c.start_time < r.end && r.start < c.time_range().end
        });
        if clash {
            return Err(StoreError::Overlap {
                field: entry.field.to_string(),
                range: format!("{}..{}", format_hour(r.start), format_hour(r.end)),
            });
        }
        self.chunks.push(entry);
        self.chunks.sort_by_key(|c| (c.field, c.member, c.start_time));
        Ok(())
    }

    pub fn entries(&self, field: FieldId, member: u32) -> impl Iterator<Item = &ChunkEntry> {
        self.chunks
            .iter()
            .filter(move |c| c.field == field && c.member == member)
    }

    pub fn total_steps(&self, field: FieldId, member: u32) -> usize {
        self.entries(field, member).map(|c| c.n_steps).sum()
    }

    /// Contiguous span covered by the field, if its chunks have no holes.
    pub fn coverage(&self, field: FieldId, member: u32) -> Option<HourRange> {
        let mut it = self.entries(field, member);
        let first = it.next()?;
        let mut end = first.time_range().end;
        for c in it {
            if c.start_time != end {
                return None;
            }
            end = c.time_range().end;
        }
        Some(HourRange::new(first.start_time, end))
    }

    pub fn members(&self, field: FieldId) -> Vec<u32> {
        let mut m: Vec<u32> = self
            .chunks
            .iter()
            .filter(|c| c.field == field)
            .map(|c| c.member)
            .collect();
        m.dedup();
        m
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}
