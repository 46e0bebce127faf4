//! Raster geometry, the nine-subregion partition of the study domain and the
//! fifteen training domains built from it.
//!
//! Grids are regular latitude/longitude rasters. Row `i` increases northward
//! from `lat_min`, column `j` increases eastward from `lon_min`, and cell
//! `(i, j)` is centred at `(lat_min + (i + 0.5) res, lon_min + (j + 0.5) res)`.
//! Longitudes live in `[-130, 170]` without wraparound.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DOMAIN_LAT_MIN: f64 = -60.0;
pub const DOMAIN_LAT_MAX: f64 = 60.0;
pub const DOMAIN_LON_MIN: f64 = -130.0;
pub const DOMAIN_LON_MAX: f64 = 170.0;

/// Native predictor resolution in degrees.
pub const LR_RESOLUTION: f64 = 0.25;
/// Native target and static-field resolution in degrees.
pub const HR_RESOLUTION: f64 = 0.1;

/// Default LR patch edge used by the training-crop sampler.
pub const DEFAULT_LR_PATCH: usize = 32;

// Tolerance, in cells, when checking that a coordinate falls on a cell edge.
const EDGE_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid resolution {0}: must be finite and positive")]
    InvalidResolution(f64),
    #[error("degenerate grid extent: lat [{lat_min}, {lat_max}], lon [{lon_min}, {lon_max}]")]
    Degenerate {
        lat_min: f64,
        lat_max: f64,
        lon_min: f64,
        lon_max: f64,
    },
    #[error("{edge} edge {value} is not aligned to the {resolution} degree grid")]
    Misaligned { edge: Edge, value: f64, resolution: f64 },
    #[error("{edge} edge {value} lies outside the grid")]
    OutOfBounds { edge: Edge, value: f64 },
    #[error("unknown region id {0:?}")]
    UnknownRegion(String),
    #[error("LR patch of {lr_size} cells maps to {hr_cells} HR cells, which is not integral")]
    NonIntegralPatch { lr_size: usize, hr_cells: f64 },
    #[error("patch of {lr_size} LR cells does not fit inside subregion {member} ({rows}x{cols} LR cells)")]
    PatchTooLarge {
        lr_size: usize,
        member: RegionId,
        rows: usize,
        cols: usize,
    },
    #[error("resolution ratio {0} between the LR and HR grids is not a small rational")]
    IrrationalRatio(f64),
    #[error("LR and HR grids do not share a common origin")]
    OriginMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    South,
    North,
    West,
    East,
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Edge::South => "south",
            Edge::North => "north",
            Edge::West => "west",
            Edge::East => "east",
        };
        f.write_str(s)
    }
}

/// Regular latitude/longitude raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub resolution: f64,
    pub n_lat: usize,
    pub n_lon: usize,
}

impl GridSpec {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64, resolution: f64) -> Result<Self, GridError> {
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(GridError::InvalidResolution(resolution));
        }
        let degenerate = GridError::Degenerate {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        };
        if !(lat_max > lat_min && lon_max > lon_min) {
            return Err(degenerate);
        }
        let n_lat = ((lat_max - lat_min) / resolution).round() as usize;
        let n_lon = ((lon_max - lon_min) / resolution).round() as usize;
        if n_lat == 0 || n_lon == 0 {
            return Err(degenerate);
        }
        Ok(Self {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
            resolution,
            n_lat,
            n_lon,
        })
    }

    pub fn cells(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn lat_center(&self, i: usize) -> f64 {
        self.lat_min + (i as f64 + 0.5) * self.resolution
    }

    pub fn lon_center(&self, j: usize) -> f64 {
        self.lon_min + (j as f64 + 0.5) * self.resolution
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (self.lat_center(i), self.lon_center(j))
    }

    /// Sub-grid covering `window`, with bounds on the window's cell edges.
    pub fn subgrid(&self, window: &Window) -> GridSpec {
        let res = self.resolution;
        GridSpec {
            lat_min: self.lat_min + window.lat.start as f64 * res,
            lat_max: self.lat_min + window.lat.end as f64 * res,
            lon_min: self.lon_min + window.lon.start as f64 * res,
            lon_max: self.lon_min + window.lon.end as f64 * res,
            resolution: res,
            n_lat: window.lat.len(),
            n_lon: window.lon.len(),
        }
    }

    pub fn full_window(&self) -> Window {
        Window {
            lat: 0..self.n_lat,
            lon: 0..self.n_lon,
        }
    }

    /// Same geometry up to floating-point noise in the bounds.
    pub fn approx_eq(&self, other: &GridSpec) -> bool {
        let tol = 1e-9 * self.resolution.max(1.0);
        self.n_lat == other.n_lat
            && self.n_lon == other.n_lon
            && (self.resolution - other.resolution).abs() <= tol
            && (self.lat_min - other.lat_min).abs() <= EDGE_TOL * self.resolution
            && (self.lon_min - other.lon_min).abs() <= EDGE_TOL * self.resolution
    }

    fn edge_index(&self, value: f64, origin: f64, n: usize, edge: Edge) -> Result<usize, GridError> {
        let x = (value - origin) / self.resolution;
        let k = x.round();
        if (x - k).abs() > EDGE_TOL {
            return Err(GridError::Misaligned {
                edge,
                value,
                resolution: self.resolution,
            });
        }
        if k < 0.0 || k > n as f64 {
            return Err(GridError::OutOfBounds { edge, value });
        }
        Ok(k as usize)
    }

    /// Half-open index window covering `bbox` exactly.
    pub fn window_for(&self, bbox: &BBox) -> Result<Window, GridError> {
        let s = self.edge_index(bbox.lat_min, self.lat_min, self.n_lat, Edge::South)?;
        let n = self.edge_index(bbox.lat_max, self.lat_min, self.n_lat, Edge::North)?;
        let w = self.edge_index(bbox.lon_min, self.lon_min, self.n_lon, Edge::West)?;
        let e = self.edge_index(bbox.lon_max, self.lon_min, self.n_lon, Edge::East)?;
        Ok(Window { lat: s..n, lon: w..e })
    }
}

/// Half-open cell-index window `[lat) x [lon)` on some grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub lat: Range<usize>,
    pub lon: Range<usize>,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.lat.len()
    }

    pub fn cols(&self) -> usize {
        self.lon.len()
    }

    pub fn cells(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn contains(&self, other: &Window) -> bool {
        other.lat.start >= self.lat.start
            && other.lat.end <= self.lat.end
            && other.lon.start >= self.lon.start
            && other.lon.end <= self.lon.end
    }
}

/// Geographic bounds. South/west edges are closed, north/east edges open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat < self.lat_max && lon >= self.lon_min && lon < self.lon_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionId {
    NW,
    NM,
    NE,
    TW,
    TM,
    TE,
    SW,
    SM,
    SE,
    N,
    T,
    S,
    W,
    M,
    E,
}

impl RegionId {
    pub const ATOMIC: [RegionId; 9] = [
        RegionId::NW,
        RegionId::NM,
        RegionId::NE,
        RegionId::TW,
        RegionId::TM,
        RegionId::TE,
        RegionId::SW,
        RegionId::SM,
        RegionId::SE,
    ];

    pub const COMPOSITE: [RegionId; 6] = [
        RegionId::N,
        RegionId::T,
        RegionId::S,
        RegionId::W,
        RegionId::M,
        RegionId::E,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RegionId::NW => "NW",
            RegionId::NM => "NM",
            RegionId::NE => "NE",
            RegionId::TW => "TW",
            RegionId::TM => "TM",
            RegionId::TE => "TE",
            RegionId::SW => "SW",
            RegionId::SM => "SM",
            RegionId::SE => "SE",
            RegionId::N => "N",
            RegionId::T => "T",
            RegionId::S => "S",
            RegionId::W => "W",
            RegionId::M => "M",
            RegionId::E => "E",
        }
    }

    pub fn is_atomic(&self) -> bool {
        Self::ATOMIC.contains(self)
    }

    /// Latitude band (0 = north, 1 = tropics, 2 = south) and longitude band
    /// (0 = west, 1 = middle, 2 = east) of an atomic region.
    pub fn bands(&self) -> Option<(usize, usize)> {
        let idx = Self::ATOMIC.iter().position(|r| r == self)?;
        Some((idx / 3, idx % 3))
    }

    pub fn members(&self) -> Vec<RegionId> {
        use RegionId::*;
        match self {
            N => vec![NW, NM, NE],
            T => vec![TW, TM, TE],
            S => vec![SW, SM, SE],
            W => vec![NW, TW, SW],
            M => vec![NM, TM, SM],
            E => vec![NE, TE, SE],
            atomic => vec![*atomic],
        }
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegionId {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RegionId::ATOMIC
            .iter()
            .chain(RegionId::COMPOSITE.iter())
            .find(|r| r.as_str().eq_ignore_ascii_case(s.trim()))
            .copied()
            .ok_or_else(|| GridError::UnknownRegion(s.to_string()))
    }
}

/// A named training or evaluation domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: RegionId,
    pub members: Vec<RegionId>,
    pub bbox: BBox,
}

const LAT_BANDS: [(f64, f64); 3] = [(20.0, 60.0), (-20.0, 20.0), (-60.0, -20.0)];
const LON_BANDS: [(f64, f64); 3] = [(-130.0, -30.0), (-30.0, 70.0), (70.0, 170.0)];

/// Bounding grid of the study domain at `resolution` degrees.
pub fn full_domain(resolution: f64) -> Result<GridSpec, GridError> {
    GridSpec::new(
        DOMAIN_LAT_MIN,
        DOMAIN_LAT_MAX,
        DOMAIN_LON_MIN,
        DOMAIN_LON_MAX,
        resolution,
    )
}

/// The nine atomic subregions, row-major from north-west to south-east.
pub fn partition() -> Vec<Region> {
    RegionId::ATOMIC
        .iter()
        .map(|&id| {
            let (row, col) = id.bands().expect("atomic");
            let (lat_min, lat_max) = LAT_BANDS[row];
            let (lon_min, lon_max) = LON_BANDS[col];
            Region {
                id,
                members: vec![id],
                bbox: BBox {
                    lat_min,
                    lat_max,
                    lon_min,
                    lon_max,
                },
            }
        })
        .collect()
}

/// The 9 atomic regions followed by the six three-member composites.
pub fn training_domains() -> Vec<Region> {
    let mut out = partition();
    out.extend(RegionId::COMPOSITE.iter().map(|&id| region(id)));
    out
}

pub fn region(id: RegionId) -> Region {
    let members = id.members();
    let atoms = partition();
    let boxes: Vec<BBox> = members
        .iter()
        .map(|m| atoms.iter().find(|r| r.id == *m).expect("atomic member").bbox)
        .collect();
    let bbox = BBox {
        lat_min: boxes.iter().map(|b| b.lat_min).fold(f64::INFINITY, f64::min),
        lat_max: boxes.iter().map(|b| b.lat_max).fold(f64::NEG_INFINITY, f64::max),
        lon_min: boxes.iter().map(|b| b.lon_min).fold(f64::INFINITY, f64::min),
        lon_max: boxes.iter().map(|b| b.lon_max).fold(f64::NEG_INFINITY, f64::max),
    };
    Region { id, members, bbox }
}

/// Index windows of each member subregion of `region` on `grid`.
pub fn slice(grid: &GridSpec, region: &Region) -> Result<Vec<(RegionId, Window)>, GridError> {
    region
        .members
        .iter()
        .map(|&m| {
            let member = self::region(m);
            grid.window_for(&member.bbox).map(|w| (m, w))
        })
        .collect()
}

/// LR/HR resolution ratio as a reduced fraction `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub fn between(lr: &GridSpec, hr: &GridSpec) -> Result<Self, GridError> {
        let r = lr.resolution / hr.resolution;
        for den in 1..=16usize {
            let num = r * den as f64;
            if (num - num.round()).abs() < 1e-9 && num.round() >= 1.0 {
                return Ok(Ratio {
                    num: num.round() as usize,
                    den,
                });
            }
        }
        Err(GridError::IrrationalRatio(r))
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Maps an LR cell count or edge index to HR, if integral.
    pub fn to_hr(&self, lr: usize) -> Option<usize> {
        (lr * self.num)
            .is_multiple_of(self.den)
            .then(|| lr * self.num / self.den)
    }
}

/// A co-located LR/HR training crop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchPair {
    pub member: RegionId,
    pub lr: Window,
    pub hr: Window,
}

/// Draws training crops from a region. Members of a composite are chosen
/// uniformly by area, then a crop is drawn uniformly among the LR offsets
/// whose HR image falls on an HR cell edge.
#[derive(Debug, Clone)]
pub struct PatchSampler {
    ratio: Ratio,
    lr_size: usize,
    hr_size: usize,
    // (member, LR window, valid row starts, valid col starts)
    members: Vec<(RegionId, Vec<usize>, Vec<usize>)>,
    weights: Vec<usize>,
}

impl PatchSampler {
    pub fn new(lr_grid: &GridSpec, hr_grid: &GridSpec, region: &Region, lr_size: usize) -> Result<Self, GridError> {
        let ratio = Ratio::between(lr_grid, hr_grid)?;
        let hr_size = ratio.to_hr(lr_size).ok_or(GridError::NonIntegralPatch {
            lr_size,
            hr_cells: lr_size as f64 * ratio.as_f64(),
        })?;
        if (lr_grid.lat_min - hr_grid.lat_min).abs() > EDGE_TOL || (lr_grid.lon_min - hr_grid.lon_min).abs() > EDGE_TOL
        {
            return Err(GridError::OriginMismatch);
        }
        let mut members = Vec::new();
        let mut weights = Vec::new();
        for (id, w) in slice(lr_grid, region)? {
            if lr_size == 0 || lr_size > w.rows() || lr_size > w.cols() {
                return Err(GridError::PatchTooLarge {
                    lr_size,
                    member: id,
                    rows: w.rows(),
                    cols: w.cols(),
                });
            }
            let starts = |r: &Range<usize>| -> Vec<usize> {
                (r.start..=r.end - lr_size)
                    .filter(|s| ratio.to_hr(*s).is_some())
                    .collect()
            };
            let rows = starts(&w.lat);
            let cols = starts(&w.lon);
            if rows.is_empty() || cols.is_empty() {
                return Err(GridError::PatchTooLarge {
                    lr_size,
                    member: id,
                    rows: w.rows(),
                    cols: w.cols(),
                });
            }
            weights.push(w.cells());
            members.push((id, rows, cols));
        }
        Ok(Self {
            ratio,
            lr_size,
            hr_size,
            members,
            weights,
        })
    }

    pub fn hr_size(&self) -> usize {
        self.hr_size
    }

    pub fn lr_size(&self) -> usize {
        self.lr_size
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PatchPair {
        let total: usize = self.weights.iter().sum();
        let mut pick = rng.random_range(0..total);
        let mut k = 0;
        while pick >= self.weights[k] {
            pick -= self.weights[k];
            k += 1;
        }
        let (member, rows, cols) = &self.members[k];
        let r0 = rows[rng.random_range(0..rows.len())];
        let c0 = cols[rng.random_range(0..cols.len())];
        let hr_r0 = self.ratio.to_hr(r0).expect("aligned start");
        let hr_c0 = self.ratio.to_hr(c0).expect("aligned start");
        PatchPair {
            member: *member,
            lr: Window {
                lat: r0..r0 + self.lr_size,
                lon: c0..c0 + self.lr_size,
            },
            hr: Window {
                lat: hr_r0..hr_r0 + self.hr_size,
                lon: hr_c0..hr_c0 + self.hr_size,
            },
        }
    }
}

/// One deterministic crop for `seed`.
pub fn sample_patch(
    lr_grid: &GridSpec,
    hr_grid: &GridSpec,
    region: &Region,
    lr_size: usize,
    seed: u64,
) -> Result<PatchPair, GridError> {
    let sampler = PatchSampler::new(lr_grid, hr_grid, region, lr_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sampler.sample(&mut rng))
}

#[derive(Serialize)]
struct RegionDoc<'a> {
    id: RegionId,
    kind: &'static str,
    members: &'a [RegionId],
    bbox: BBox,
}

/// JSON document describing all fifteen training domains.
pub fn regions_json() -> String {
    let domains = training_domains();
    let docs: Vec<RegionDoc<'_>> = domains
        .iter()
        .map(|r| RegionDoc {
            id: r.id,
            kind: if r.id.is_atomic() { "atomic" } else { "composite" },
            members: &r.members,
            bbox: r.bbox,
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({
        "domain": {
            "lat_min": DOMAIN_LAT_MIN,
            "lat_max": DOMAIN_LAT_MAX,
            "lon_min": DOMAIN_LON_MIN,
            "lon_max": DOMAIN_LON_MAX,
        },
        "regions": docs,
    }))
    .expect("region document serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_domain_sizes() {
        let hr = full_domain(0.1).unwrap();
        assert_eq!((hr.n_lat, hr.n_lon), (1200, 3000));
        let lr = full_domain(0.25).unwrap();
        assert_eq!((lr.n_lat, lr.n_lon), (480, 1200));
        assert_eq!(full_domain(-1.0), Err(GridError::InvalidResolution(-1.0)));
        assert!(full_domain(f64::NAN).is_err());
    }

    #[test]
    fn partition_bounds() {
        let parts = partition();
        let nw = &parts[0];
        assert_eq!(nw.id, RegionId::NW);
        assert_eq!(
            nw.bbox,
            BBox {
                lat_min: 20.0,
                lat_max: 60.0,
                lon_min: -130.0,
                lon_max: -30.0
            }
        );
        let tm = parts.iter().find(|r| r.id == RegionId::TM).unwrap();
        assert_eq!(
            (tm.bbox.lat_min, tm.bbox.lat_max, tm.bbox.lon_min, tm.bbox.lon_max),
            (-20.0, 20.0, -30.0, 70.0)
        );
        let hr = full_domain(0.1).unwrap();
        for r in &parts {
            let w = hr.window_for(&r.bbox).unwrap();
            assert_eq!((w.rows(), w.cols()), (400, 1000));
        }
    }

    #[test]
    fn composites() {
        let doms = training_domains();
        assert_eq!(doms.len(), 15);
        let s = doms.iter().find(|r| r.id == RegionId::S).unwrap();
        assert_eq!(s.members, vec![RegionId::SW, RegionId::SM, RegionId::SE]);
        for atom in RegionId::ATOMIC {
            let lat_hits = [RegionId::N, RegionId::T, RegionId::S]
                .iter()
                .filter(|c| c.members().contains(&atom))
                .count();
            let lon_hits = [RegionId::W, RegionId::M, RegionId::E]
                .iter()
                .filter(|c| c.members().contains(&atom))
                .count();
            assert_eq!((lat_hits, lon_hits), (1, 1), "{atom}");
        }
        assert_eq!(
            region(RegionId::W).bbox,
            BBox {
                lat_min: -60.0,
                lat_max: 60.0,
                lon_min: -130.0,
                lon_max: -30.0
            }
        );
    }

    #[test]
    fn region_ids_parse() {
        for r in training_domains() {
            assert_eq!(r.id.as_str().parse::<RegionId>().unwrap(), r.id);
        }
        assert!("XX".parse::<RegionId>().is_err());
        assert_eq!("nw".parse::<RegionId>().unwrap(), RegionId::NW);
    }

    #[test]
    fn misaligned_slice_reports_edge() {
        let grid = GridSpec::new(-60.0, 60.0, -130.0, 170.0, 0.3).unwrap();
        let err = slice(&grid, &region(RegionId::NW)).unwrap_err();
        assert!(matches!(err, GridError::Misaligned { edge: Edge::South, .. }), "{err}");
        let small = GridSpec::new(0.0, 10.0, 0.0, 10.0, 1.0).unwrap();
        assert!(matches!(
            slice(&small, &region(RegionId::TM)).unwrap_err(),
            GridError::OutOfBounds { .. }
        ));
    }

    #[test]
    fn patch_sizes() {
        let lr = full_domain(0.25).unwrap();
        let hr = full_domain(0.1).unwrap();
        let nw = region(RegionId::NW);
        let p = sample_patch(&lr, &hr, &nw, 32, 1).unwrap();
        assert_eq!((p.hr.rows(), p.hr.cols()), (80, 80));
        let p = sample_patch(&lr, &hr, &nw, 30, 1).unwrap();
        assert_eq!((p.hr.rows(), p.hr.cols()), (75, 75));
        assert!(matches!(
            sample_patch(&lr, &hr, &nw, 33, 1),
            Err(GridError::NonIntegralPatch { .. })
        ));
        assert!(matches!(
            sample_patch(&lr, &hr, &nw, 162, 1),
            Err(GridError::PatchTooLarge { .. })
        ));
    }

    #[test]
    fn patches_share_bbox() {
        let lr = full_domain(0.25).unwrap();
        let hr = full_domain(0.1).unwrap();
        for seed in 0..200 {
            let p = sample_patch(&lr, &hr, &region(RegionId::T), 32, seed).unwrap();
            let a = lr.subgrid(&p.lr);
            let b = hr.subgrid(&p.hr);
            assert!((a.lat_min - b.lat_min).abs() < 1e-9);
            assert!((a.lon_min - b.lon_min).abs() < 1e-9);
            assert!((a.lat_max - b.lat_max).abs() < 1e-9);
            assert!((a.lon_max - b.lon_max).abs() < 1e-9);
            let member = lr.window_for(&region(p.member).bbox).unwrap();
            assert!(member.contains(&p.lr));
        }
    }

    #[test]
    fn regions_document() {
        let doc: serde_json::Value = serde_json::from_str(&regions_json()).unwrap();
        let regions = doc["regions"].as_array().unwrap();
        assert_eq!(regions.len(), 15);
        assert_eq!(regions[9]["id"], "N");
        assert_eq!(regions[9]["members"].as_array().unwrap().len(), 3);
    }
}
