//! Chunked flat-binary field store.
//!
//! Every field lives in monthly chunk files with a 64-byte header and a
//! little-endian `f32` payload laid out `[time, lat, lon]`. Missing cells are
//! recorded in a bitmap sidecar next to the chunk; the payload holds `0.0`
//! there. A JSON manifest lists every chunk with its SHA-256 checksum.

mod archive;
mod chunk;
mod ingest;
mod manifest;
mod store;
mod synth;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::grid::{GridError, GridSpec, HR_RESOLUTION, LR_RESOLUTION};
use crate::hours::{EpochHour, HourRange};

pub use archive::{ArchiveHeader, ArchiveVar, ArchiveWriter, GriddedArchive, GriddedVar};
pub use chunk::{ChunkHeader, HEADER_LEN, MAGIC};
pub use ingest::{ingest_predictors, ingest_static, ingest_target, IngestMap, IngestReport, SourceMapping};
pub use manifest::{sha256_hex, write_atomic, ChunkEntry, Manifest};
pub use store::Store;
pub use synth::{synth_generate, synth_summary, RegionParams, SynthConfig, SynthSummary};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: not a chunk file (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported format version {version}")]
    Version { path: PathBuf, version: u32 },
    #[error("{path}: unknown layout tag {tag}")]
    Layout { path: PathBuf, tag: u8 },
    #[error("unknown field code {0}")]
    UnknownField(u8),
    #[error("unknown field name {0:?}")]
    UnknownFieldName(String),
    #[error("checksum mismatch for {path}")]
    Checksum { path: PathBuf },
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },
    #[error("{field}: {missing} missing hour(s), first: {}", .first.join(", "))]
    Gap {
        field: String,
        missing: usize,
        first: Vec<String>,
    },
    #[error("{field}: {count} half-hourly steps cannot be paired into hours")]
    Pairing { field: String, count: usize },
    #[error("{field}: time {time} is not on a {step}-minute boundary")]
    Timestamp { field: String, time: i64, step: i64 },
    #[error("{field}: window {requested} outside stored extent {stored}")]
    OutsideExtent {
        field: String,
        requested: String,
        stored: String,
    },
    #[error("{field}: chunk {range} overlaps an existing chunk")]
    Overlap { field: String, range: String },
    #[error("{0} is not mapped to any source variable in the ingestion config")]
    Unmapped(VariableId),
    #[error("source variable {0:?} not found in any archive")]
    SourceMissing(String),
    #[error("grid extends outside the model domain: {0:?}")]
    OutOfDomain(GridSpec),
    #[error("malformed archive {path}: {reason}")]
    Archive { path: PathBuf, reason: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type Result<T> = std::result::Result<T, StoreError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> StoreError {
    let path = path.into();
    move |source| StoreError::Io { path, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariableKind {
    Predictor,
    Static,
    Target,
}

/// The twelve physical variables of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableId {
    Tp,
    Cp,
    Cape,
    Twc,
    Tlwc,
    Sp,
    Tisr,
    U700,
    V700,
    Lsm,
    Orog,
    TargetPrecip,
}

impl VariableId {
    /// Predictor channel order used everywhere downstream.
    pub const PREDICTORS: [VariableId; 9] = [
        VariableId::Tp,
        VariableId::Cp,
        VariableId::Cape,
        VariableId::Twc,
        VariableId::Tlwc,
        VariableId::Sp,
        VariableId::Tisr,
        VariableId::U700,
        VariableId::V700,
    ];
    /// Static channel order: orography then land-sea mask.
    pub const STATICS: [VariableId; 2] = [VariableId::Orog, VariableId::Lsm];
    pub const ALL: [VariableId; 12] = [
        VariableId::Tp,
        VariableId::Cp,
        VariableId::Cape,
        VariableId::Twc,
        VariableId::Tlwc,
        VariableId::Sp,
        VariableId::Tisr,
        VariableId::U700,
        VariableId::V700,
        VariableId::Lsm,
        VariableId::Orog,
        VariableId::TargetPrecip,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            VariableId::Tp => "tp",
            VariableId::Cp => "cp",
            VariableId::Cape => "cape",
            VariableId::Twc => "twc",
            VariableId::Tlwc => "tlwc",
            VariableId::Sp => "sp",
            VariableId::Tisr => "tisr",
            VariableId::U700 => "u700",
            VariableId::V700 => "v700",
            VariableId::Lsm => "lsm",
            VariableId::Orog => "orog",
            VariableId::TargetPrecip => "target_precip",
        }
    }

    pub fn kind(&self) -> VariableKind {
        match self {
            VariableId::Lsm | VariableId::Orog => VariableKind::Static,
            VariableId::TargetPrecip => VariableKind::Target,
            _ => VariableKind::Predictor,
        }
    }

    pub fn native_resolution(&self) -> f64 {
        match self.kind() {
            VariableKind::Predictor => LR_RESOLUTION,
            _ => HR_RESOLUTION,
        }
    }

    /// Precipitation-like variables are non-negative and log-transformed.
    pub fn is_precipitation(&self) -> bool {
        matches!(self, VariableId::Tp | VariableId::Cp | VariableId::TargetPrecip)
    }

    fn code(&self) -> u8 {
        Self::ALL.iter().position(|v| v == self).expect("listed") as u8
    }
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariableId {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| StoreError::UnknownFieldName(s.to_owned()))
    }
}

/// Fields produced by the pipeline itself rather than ingested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductId {
    BaselinePrecip,
    ForecastPrecip,
    CrpsMean,
    HoursCounted,
}

impl ProductId {
    pub const ALL: [ProductId; 4] = [
        ProductId::BaselinePrecip,
        ProductId::ForecastPrecip,
        ProductId::CrpsMean,
        ProductId::HoursCounted,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ProductId::BaselinePrecip => "baseline_precip",
            ProductId::ForecastPrecip => "forecast_precip",
            ProductId::CrpsMean => "crps_mean",
            ProductId::HoursCounted => "hours_counted",
        }
    }
}

/// Anything that can be stored as a chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldId {
    Variable(VariableId),
    Product(ProductId),
}

const PRODUCT_CODE_BASE: u8 = 100;

impl FieldId {
    pub fn name(&self) -> &'static str {
        match self {
            FieldId::Variable(v) => v.name(),
            FieldId::Product(p) => p.name(),
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            FieldId::Variable(v) => v.code(),
            FieldId::Product(p) => {
                PRODUCT_CODE_BASE + ProductId::ALL.iter().position(|x| x == p).expect("listed") as u8
            }
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        if code >= PRODUCT_CODE_BASE {
            ProductId::ALL
                .get((code - PRODUCT_CODE_BASE) as usize)
                .map(|&p| FieldId::Product(p))
        } else {
            VariableId::ALL.get(code as usize).map(|&v| FieldId::Variable(v))
        }
        .ok_or(StoreError::UnknownField(code))
    }

    pub fn is_static(&self) -> bool {
        matches!(self, FieldId::Variable(v) if v.kind() == VariableKind::Static)
            || matches!(self, FieldId::Product(ProductId::CrpsMean | ProductId::HoursCounted))
    }
}

impl From<VariableId> for FieldId {
    fn from(v: VariableId) -> Self {
        FieldId::Variable(v)
    }
}

impl From<ProductId> for FieldId {
    fn from(p: ProductId) -> Self {
        FieldId::Product(p)
    }
}

impl fmt::Display for FieldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FieldId {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(v) = s.parse::<VariableId>() {
            return Ok(FieldId::Variable(v));
        }
        ProductId::ALL
            .iter()
            .find(|p| p.name() == s)
            .map(|&p| FieldId::Product(p))
            .ok_or_else(|| StoreError::UnknownFieldName(s.to_owned()))
    }
}

impl Serialize for FieldId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for FieldId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A time-stamped block of one field on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldChunk {
    pub field: FieldId,
    /// Ensemble member for forecast products, 0 otherwise.
    pub member: u32,
    pub start_time: EpochHour,
    pub n_steps: usize,
    pub grid: GridSpec,
    /// `[time, lat, lon]` row-major.
    pub values: Vec<f32>,
    /// Per-value missing flags, same layout as `values`. `None` when complete.
    pub missing: Option<Vec<bool>>,
}

impl FieldChunk {
    pub fn new(field: impl Into<FieldId>, start_time: EpochHour, grid: GridSpec, values: Vec<f32>) -> Result<Self> {
        let cells = grid.cells();
        if cells == 0 || !values.len().is_multiple_of(cells) {
            return Err(StoreError::Shape {
                expected: format!("a multiple of {cells} values"),
                found: values.len().to_string(),
            });
        }
        Ok(Self {
            field: field.into(),
            member: 0,
            start_time,
            n_steps: values.len() / cells,
            grid,
            values,
            missing: None,
        })
    }

    pub fn with_member(mut self, member: u32) -> Self {
        self.member = member;
        self
    }

    pub fn with_missing(mut self, missing: Vec<bool>) -> Result<Self> {
        if missing.len() != self.values.len() {
            return Err(StoreError::Shape {
                expected: self.values.len().to_string(),
                found: missing.len().to_string(),
            });
        }
        self.missing = missing.iter().any(|&m| m).then_some(missing);
        Ok(self)
    }

    pub fn time_range(&self) -> HourRange {
        HourRange::new(self.start_time, self.start_time + self.n_steps as i64)
    }

    pub fn step(&self, t: usize) -> &[f32] {
        let c = self.grid.cells();
        &self.values[t * c..(t + 1) * c]
    }

    pub fn step_missing(&self, t: usize) -> Option<&[bool]> {
        let c = self.grid.cells();
        self.missing.as_ref().map(|m| &m[t * c..(t + 1) * c])
    }

    pub fn is_missing(&self, idx: usize) -> bool {
        self.missing.as_ref().is_some_and(|m| m[idx])
    }

    pub fn missing_count(&self) -> usize {
        self.missing.as_ref().map_or(0, |m| m.iter().filter(|&&x| x).count())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variable_inventory() {
        let kinds = |k| VariableId::ALL.iter().filter(|v| v.kind() == k).count();
        assert_eq!(kinds(VariableKind::Predictor), 9);
        assert_eq!(kinds(VariableKind::Static), 2);
        assert_eq!(kinds(VariableKind::Target), 1);
        for v in VariableId::PREDICTORS {
            assert_eq!(v.native_resolution(), 0.25);
        }
        assert_eq!(VariableId::Orog.native_resolution(), 0.1);
        assert_eq!(VariableId::TargetPrecip.native_resolution(), 0.1);
    }

    #[test]
    fn field_codes_roundtrip() {
        let all = VariableId::ALL
            .iter()
            .map(|&v| FieldId::from(v))
            .chain(ProductId::ALL.iter().map(|&p| FieldId::from(p)));
        for f in all {
            assert_eq!(FieldId::from_code(f.code()).unwrap(), f);
            assert_eq!(f.name().parse::<FieldId>().unwrap(), f);
        }
        assert!(FieldId::from_code(50).is_err());
    }
}
