//! Self-describing gridded archive files used as ingestion sources.
//!
//! Layout: magic `GRDA`, `u32` version, `u64` header length, a JSON header
//! naming dimensions, coordinate vectors and variables, then a little-endian
//! `f32` payload. Each variable records its element offset into the payload.
//! Time coordinates are minutes since 1970-01-01T00:00Z.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{chunk, io_err, Result, StoreError};
use crate::grid::GridSpec;

const MAGIC: [u8; 4] = *b"GRDA";
const VERSION: u32 = 1;
const PREFIX_LEN: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveVar {
    pub name: String,
    /// Dimension names, outermost first, e.g. `["time", "lat", "lon"]`.
    pub dims: Vec<String>,
    #[serde(default)]
    pub units: String,
    /// Values equal to this are treated as missing.
    #[serde(default)]
    pub fill_value: Option<f32>,
    /// Element offset into the payload.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub dims: BTreeMap<String, usize>,
    pub coords: BTreeMap<String, Vec<f64>>,
    pub variables: Vec<ArchiveVar>,
}

/// A variable read from an archive and aligned to a target grid: latitudes
/// ascending, values `[time, lat, lon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedVar {
    pub name: String,
    /// Minutes since epoch, one per step; empty for time-invariant fields.
    pub times: Vec<i64>,
    pub values: Vec<f32>,
    pub fill_value: Option<f32>,
}

#[derive(Debug, Clone)]
pub struct GriddedArchive {
    path: PathBuf,
    pub header: ArchiveHeader,
    payload_start: u64,
}

impl GriddedArchive {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let bad = |reason: &str| StoreError::Archive {
            path: path.clone(),
            reason: reason.to_owned(),
        };
        let mut f = File::open(&path).map_err(io_err(&path))?;
        let mut prefix = [0u8; PREFIX_LEN as usize];
        f.read_exact(&mut prefix).map_err(io_err(&path))?;
        if prefix[0..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(prefix[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(prefix[8..16].try_into().unwrap());
        let mut text = vec![0u8; len as usize];
        f.read_exact(&mut text).map_err(io_err(&path))?;
        let header: ArchiveHeader = serde_json::from_slice(&text).map_err(|source| StoreError::Json {
            path: path.clone(),
            source,
        })?;
        for v in &header.variables {
            for d in &v.dims {
                if !header.dims.contains_key(d) {
                    return Err(bad(&format!("variable {} uses undeclared dim {d}", v.name)));
                }
            }
        }
        for (name, c) in &header.coords {
            if header.dims.get(name) != Some(&c.len()) {
                return Err(bad(&format!("coordinate {name} length disagrees with its dim")));
            }
        }
        Ok(Self {
            path,
            header,
            payload_start: PREFIX_LEN + len,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn has_var(&self, name: &str) -> bool {
        self.header.variables.iter().any(|v| v.name == name)
    }

    /// Reads `name`, validating its lat/lon coordinates against `grid`.
    /// Descending latitude is flipped to the grid's south-to-north order.
    pub fn read_var(&self, name: &str, grid: &GridSpec) -> Result<GriddedVar> {
        let var = self
            .header
            .variables
            .iter()
            .find(|v| v.name == name)
            .ok_or_else(|| StoreError::SourceMissing(name.to_owned()))?;
        let dims: Vec<&str> = var.dims.iter().map(String::as_str).collect();
        let timed = match dims.as_slice() {
            ["time", "lat", "lon"] => true,
            ["lat", "lon"] => false,
            _ => {
                return Err(StoreError::Shape {
                    expected: "[time,] lat, lon".into(),
                    found: format!("{:?}", var.dims),
                })
            }
        };
        let lat = self.coord("lat")?;
        let lon = self.coord("lon")?;
        let descending = check_axis(lat, grid.lat_min, grid.resolution, grid.n_lat, "lat")?;
        if check_axis(lon, grid.lon_min, grid.resolution, grid.n_lon, "lon")? {
            return Err(StoreError::Shape {
                expected: "ascending longitude".into(),
                found: "descending longitude".into(),
            });
        }
        let times = if timed {
            self.coord("time")?.iter().map(|&t| t as i64).collect()
        } else {
            Vec::new()
        };
        let steps = times.len().max(1);
        let n = steps * grid.cells();

        let mut f = File::open(&self.path).map_err(io_err(&self.path))?;
        f.seek(SeekFrom::Start(self.payload_start + var.offset * 4))
            .map_err(io_err(&self.path))?;
        let mut bytes = vec![0u8; n * 4];
        f.read_exact(&mut bytes).map_err(io_err(&self.path))?;
        let mut values = Vec::with_capacity(n);
        chunk::decode_payload(&bytes, &mut values);
        if descending {
            let (rows, cols) = (grid.n_lat, grid.n_lon);
            for step in values.chunks_exact_mut(rows * cols) {
                for r in 0..rows / 2 {
                    let (a, b) = step.split_at_mut((rows - 1 - r) * cols);
                    a[r * cols..(r + 1) * cols].swap_with_slice(&mut b[..cols]);
                }
            }
        }
        Ok(GriddedVar {
            name: name.to_owned(),
            times,
            values,
            fill_value: var.fill_value,
        })
    }

    fn coord(&self, name: &str) -> Result<&[f64]> {
        self.header
            .coords
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| StoreError::Archive {
                path: self.path.clone(),
                reason: format!("missing coordinate {name}"),
            })
    }
}

/// Checks that `coord` holds the grid's cell centres in either order.
/// Returns whether the order is descending.
fn check_axis(coord: &[f64], origin: f64, res: f64, n: usize, axis: &str) -> Result<bool> {
    let shape_err = || StoreError::Shape {
        expected: format!("{n} {axis} centres from {} step {res}", origin + 0.5 * res),
        found: format!("{} values {:?}..{:?}", coord.len(), coord.first(), coord.last()),
    };
    if coord.len() != n {
        return Err(shape_err());
    }
    let centre = |i: usize| origin + (i as f64 + 0.5) * res;
    let tol = 1e-6 * res;
    let asc = coord.iter().enumerate().all(|(i, &c)| (c - centre(i)).abs() <= tol);
    if asc {
        return Ok(false);
    }
    let desc = coord
        .iter()
        .enumerate()
        .all(|(i, &c)| (c - centre(n - 1 - i)).abs() <= tol);
    if desc {
        Ok(true)
    } else {
        Err(shape_err())
    }
}

/// Builds archive files; used by tests and by tooling that converts
/// upstream data into the ingestion format.
#[derive(Debug, Clone)]
pub struct ArchiveWriter {
    header: ArchiveHeader,
    payload: Vec<f32>,
}

impl ArchiveWriter {
    /// Coordinates are cell centres of `grid`; pass `descending_lat` to
    /// write north-to-south rows (values must then be in that order too).
    pub fn new(grid: &GridSpec, times_minutes: Option<&[i64]>, descending_lat: bool) -> Self {
        let mut lat: Vec<f64> = (0..grid.n_lat).map(|i| grid.lat_center(i)).collect();
        if descending_lat {
            lat.reverse();
        }
        let lon: Vec<f64> = (0..grid.n_lon).map(|j| grid.lon_center(j)).collect();
        let mut dims = BTreeMap::from([("lat".to_owned(), lat.len()), ("lon".to_owned(), lon.len())]);
        let mut coords = BTreeMap::from([("lat".to_owned(), lat), ("lon".to_owned(), lon)]);
        if let Some(t) = times_minutes {
            dims.insert("time".into(), t.len());
            coords.insert("time".into(), t.iter().map(|&x| x as f64).collect());
        }
        Self {
            header: ArchiveHeader {
                dims,
                coords,
                variables: Vec::new(),
            },
            payload: Vec::new(),
        }
    }

    pub fn add_var(&mut self, name: &str, units: &str, fill_value: Option<f32>, values: &[f32]) -> &mut Self {
        let timed = self.header.dims.contains_key("time");
        let dims: Vec<String> = if timed {
            vec!["time", "lat", "lon"]
        } else {
            vec!["lat", "lon"]
        }
        .into_iter()
        .map(String::from)
        .collect();
        let expected: usize = dims.iter().map(|d| self.header.dims[d]).product();
        assert_eq!(values.len(), expected, "variable {name} has wrong length");
        self.header.variables.push(ArchiveVar {
            name: name.to_owned(),
            dims,
            units: units.to_owned(),
            fill_value,
            offset: self.payload.len() as u64,
        });
        self.payload.extend_from_slice(values);
        self
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec(&self.header).expect("header serializes");
        let mut bytes = Vec::with_capacity(PREFIX_LEN as usize + json.len() + self.payload.len() * 4);
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        chunk::encode_payload(&self.payload, &mut bytes);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(path, bytes).map_err(io_err(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descending_latitude_is_flipped() {
        let grid = GridSpec::new(0.0, 3.0, 0.0, 2.0, 1.0).unwrap();
        // North-to-south rows: row 0 is lat 2.5.
        let src = [30.0, 31.0, 20.0, 21.0, 10.0, 11.0];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.grda");
        ArchiveWriter::new(&grid, None, true)
            .add_var("orog", "m2 s-2", None, &src)
            .write(&p)
            .unwrap();
        let v = GriddedArchive::open(&p).unwrap().read_var("orog", &grid).unwrap();
        assert_eq!(v.values, vec![10.0, 11.0, 20.0, 21.0, 30.0, 31.0]);
    }

    #[test]
    fn coordinate_mismatch_is_shape_error() {
        let grid = GridSpec::new(0.0, 3.0, 0.0, 2.0, 1.0).unwrap();
        let other = GridSpec::new(0.0, 3.0, 0.5, 2.5, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.grda");
        ArchiveWriter::new(&grid, Some(&[0, 60]), false)
            .add_var("tp", "m", None, &[0.0; 12])
            .write(&p)
            .unwrap();
        let a = GriddedArchive::open(&p).unwrap();
        assert!(matches!(a.read_var("tp", &other), Err(StoreError::Shape { .. })));
        assert!(matches!(a.read_var("cp", &grid), Err(StoreError::SourceMissing(_))));
        assert_eq!(a.read_var("tp", &grid).unwrap().times, vec![0, 60]);
    }
}
