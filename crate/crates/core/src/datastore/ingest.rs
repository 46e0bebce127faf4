use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::archive::GriddedArchive;
use super::{io_err, FieldChunk, Result, Store, StoreError, VariableId};
use crate::grid::{GridSpec, DOMAIN_LAT_MAX, DOMAIN_LAT_MIN, DOMAIN_LON_MAX, DOMAIN_LON_MIN};
use crate::hours::{format_hour, HourRange};

const GAP_LIST: usize = 12;

/// Which archive variable feeds a store variable, and a unit scale factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMapping {
    pub source: String,
    #[serde(default = "one")]
    pub scale: f32,
}

fn one() -> f32 {
    1.0
}

/// Ingestion config: store variable name to source mapping.
///
/// The defaults cover ERA5 short names (accumulated precipitation converted
/// from metres to millimetres) and IMERG `precipitation`. `twc` and `tlwc`
/// have no default; ingesting predictors without mapping them is an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestMap {
    pub variables: BTreeMap<VariableId, SourceMapping>,
}

impl Default for IngestMap {
    fn default() -> Self {
        let m = |s: &str, scale: f32| SourceMapping {
            source: s.to_owned(),
            scale,
        };
        let variables = BTreeMap::from([
            (VariableId::Tp, m("tp", 1000.0)),
            (VariableId::Cp, m("cp", 1000.0)),
            (VariableId::Cape, m("cape", 1.0)),
            (VariableId::Sp, m("sp", 1.0)),
            (VariableId::Tisr, m("tisr", 1.0)),
            (VariableId::U700, m("u700", 1.0)),
            (VariableId::V700, m("v700", 1.0)),
            (VariableId::Lsm, m("lsm", 1.0)),
            (VariableId::Orog, m("z", 1.0)),
            (VariableId::TargetPrecip, m("precipitation", 1.0)),
        ]);
        Self { variables }
    }
}

impl IngestMap {
    /// Identity mapping (store name = source name, unit scale) for every variable.
    pub fn identity() -> Self {
        let variables = VariableId::ALL
            .iter()
            .map(|&v| {
                (
                    v,
                    SourceMapping {
                        source: v.name().to_owned(),
                        scale: 1.0,
                    },
                )
            })
            .collect();
        Self { variables }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| StoreError::Json {
            path: path.into(),
            source,
        })
    }

    pub fn get(&self, v: VariableId) -> Result<&SourceMapping> {
        self.variables.get(&v).ok_or(StoreError::Unmapped(v))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub variables: Vec<IngestedVar>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestedVar {
    pub variable: VariableId,
    pub steps: usize,
    pub chunks: usize,
    pub missing_values: usize,
}

fn archives(src: &Path) -> Result<Vec<GriddedArchive>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(src)
        .map_err(io_err(src))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "grda"))
        .collect();
    paths.sort();
    paths.iter().map(GriddedArchive::open).collect()
}

fn gap_error(field: VariableId, missing: &[i64]) -> StoreError {
    StoreError::Gap {
        field: field.to_string(),
        missing: missing.len(),
        first: missing.iter().take(GAP_LIST).map(|&t| format_hour(t)).collect(),
    }
}

fn is_fill(x: f32, fill: Option<f32>) -> bool {
    x.is_nan() || fill == Some(x)
}

/// Ingests the nine predictors for `range` into monthly chunks.
pub fn ingest_predictors(
    store: &Store,
    src: &Path,
    range: HourRange,
    grid: &GridSpec,
    map: &IngestMap,
) -> Result<IngestReport> {
    let sources = archives(src)?;
    let cells = grid.cells();
    let mut report = IngestReport::default();
    for var in VariableId::PREDICTORS {
        let mapping = map.get(var)?;
        let mut values = vec![0f32; range.len() * cells];
        let mut missing = vec![false; range.len() * cells];
        let mut present = vec![false; range.len()];
        let mut found = false;
        for a in sources.iter().filter(|a| a.has_var(&mapping.source)) {
            found = true;
            let v = a.read_var(&mapping.source, grid)?;
            if v.times.is_empty() {
                return Err(StoreError::Shape {
                    expected: "a time dimension".into(),
                    found: format!("static {}", mapping.source),
                });
            }
            for (k, &tm) in v.times.iter().enumerate() {
                if tm.rem_euclid(60) != 0 {
                    return Err(StoreError::Timestamp {
                        field: var.to_string(),
                        time: tm,
                        step: 60,
                    });
                }
                let t = tm.div_euclid(60);
                if !range.contains(t) {
                    continue;
                }
                let i = (t - range.start) as usize;
                present[i] = true;
                let src_step = &v.values[k * cells..(k + 1) * cells];
                let dst = i * cells..(i + 1) * cells;
                for ((x, out), miss) in src_step.iter().zip(&mut values[dst.clone()]).zip(&mut missing[dst]) {
                    *miss = is_fill(*x, v.fill_value);
                    *out = if *miss {
                        0.0
                    } else if var.is_precipitation() {
                        // Packing noise can leave tiny negative accumulations.
                        (x * mapping.scale).max(0.0)
                    } else {
                        x * mapping.scale
                    };
                }
            }
        }
        if !found {
            return Err(StoreError::SourceMissing(mapping.source.clone()));
        }
        let gaps: Vec<i64> = (range.start..range.end)
            .filter(|&t| !present[(t - range.start) as usize])
            .collect();
        if !gaps.is_empty() {
            return Err(gap_error(var, &gaps));
        }
        let n_missing = missing.iter().filter(|&&m| m).count();
        let chunk = FieldChunk::new(var, range.start, *grid, values)?.with_missing(missing)?;
        let written = store.write_series(&chunk)?;
        log::info!("ingested {var}: {} hours in {} chunks", range.len(), written.len());
        report.variables.push(IngestedVar {
            variable: var,
            steps: range.len(),
            chunks: written.len(),
            missing_values: n_missing,
        });
    }
    Ok(report)
}

/// Ingests half-hourly target precipitation, averaging each (HH:00, HH:30)
/// pair into hour HH. Negative or fill values make the whole hour missing.
pub fn ingest_target(
    store: &Store,
    src: &Path,
    range: HourRange,
    grid: &GridSpec,
    map: &IngestMap,
) -> Result<IngestReport> {
    let var = VariableId::TargetPrecip;
    let mapping = map.get(var)?;
    let cells = grid.cells();
    let slots = range.len() * 2;
    let mut half = vec![0f32; slots * cells];
    let mut half_missing = vec![false; slots * cells];
    let mut present = vec![false; slots];
    let mut found = false;
    let mut count = 0usize;
    for a in archives(src)?.iter().filter(|a| a.has_var(&mapping.source)) {
        found = true;
        let v = a.read_var(&mapping.source, grid)?;
        for (k, &tm) in v.times.iter().enumerate() {
            if tm.rem_euclid(30) != 0 {
                return Err(StoreError::Timestamp {
                    field: var.to_string(),
                    time: tm,
                    step: 30,
                });
            }
            let slot = tm.div_euclid(30) - range.start * 2;
            if slot < 0 || slot >= slots as i64 {
                continue;
            }
            let s = slot as usize;
            if !present[s] {
                count += 1;
            }
            present[s] = true;
            let dst = s * cells..(s + 1) * cells;
            for ((x, out), miss) in v.values[k * cells..(k + 1) * cells]
                .iter()
                .zip(&mut half[dst.clone()])
                .zip(&mut half_missing[dst])
            {
                *miss = is_fill(*x, v.fill_value) || *x < 0.0;
                *out = if *miss { 0.0 } else { *x };
            }
        }
    }
    if !found {
        return Err(StoreError::SourceMissing(mapping.source.clone()));
    }
    if count % 2 == 1 {
        return Err(StoreError::Pairing {
            field: var.to_string(),
            count,
        });
    }
    let gaps: Vec<i64> = (0..range.len())
        .filter(|&h| !(present[2 * h] && present[2 * h + 1]))
        .map(|h| range.start + h as i64)
        .collect();
    if !gaps.is_empty() {
        return Err(gap_error(var, &gaps));
    }

    let mut values = vec![0f32; range.len() * cells];
    let mut missing = vec![false; range.len() * cells];
    for h in 0..range.len() {
        for c in 0..cells {
            let (i0, i1) = ((2 * h) * cells + c, (2 * h + 1) * cells + c);
            let o = h * cells + c;
            if half_missing[i0] || half_missing[i1] {
                missing[o] = true;
            } else {
                values[o] = (half[i0] + half[i1]) * 0.5 * mapping.scale;
            }
        }
    }
    let n_missing = missing.iter().filter(|&&m| m).count();
    let chunk = FieldChunk::new(var, range.start, *grid, values)?.with_missing(missing)?;
    let written = store.write_series(&chunk)?;
    Ok(IngestReport {
        variables: vec![IngestedVar {
            variable: var,
            steps: range.len(),
            chunks: written.len(),
            missing_values: n_missing,
        }],
    })
}

fn check_domain(grid: &GridSpec) -> Result<()> {
    let tol = 1e-9;
    let inside = grid.lat_min >= DOMAIN_LAT_MIN - tol
        && grid.lat_max <= DOMAIN_LAT_MAX + tol
        && grid.lon_min >= DOMAIN_LON_MIN - tol
        && grid.lon_max <= DOMAIN_LON_MAX + tol;
    if inside {
        Ok(())
    } else {
        Err(StoreError::OutOfDomain(*grid))
    }
}

/// Ingests orography (geopotential, stored as is) and the land-sea mask
/// (clamped to [0, 1]) as single-step chunks.
pub fn ingest_static(store: &Store, src: &Path, grid: &GridSpec, map: &IngestMap) -> Result<IngestReport> {
    check_domain(grid)?;
    let sources = archives(src)?;
    let mut report = IngestReport::default();
    for var in VariableId::STATICS {
        let mapping = map.get(var)?;
        let a = sources
            .iter()
            .find(|a| a.has_var(&mapping.source))
            .ok_or_else(|| StoreError::SourceMissing(mapping.source.clone()))?;
        let v = a.read_var(&mapping.source, grid)?;
        if v.values.len() != grid.cells() {
            return Err(StoreError::Shape {
                expected: format!("one step of {} cells", grid.cells()),
                found: format!("{} values", v.values.len()),
            });
        }
        let missing: Vec<bool> = v.values.iter().map(|&x| is_fill(x, v.fill_value)).collect();
        let values = v
            .values
            .iter()
            .zip(&missing)
            .map(|(&x, &m)| match (m, var) {
                (true, _) => 0.0,
                (false, VariableId::Lsm) => (x * mapping.scale).clamp(0.0, 1.0),
                (false, _) => x * mapping.scale,
            })
            .collect();
        let n_missing = missing.iter().filter(|&&m| m).count();
        let chunk = FieldChunk::new(var, 0, *grid, values)?.with_missing(missing)?;
        store.write_chunk(&chunk)?;
        report.variables.push(IngestedVar {
            variable: var,
            steps: 1,
            chunks: 1,
            missing_values: n_missing,
        });
    }
    Ok(report)
}
