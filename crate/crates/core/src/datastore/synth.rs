//! Procedural miniature store with region-dependent precipitation.
//!
//! A smooth latent field `w(t, lat, lon)` (a sum of travelling waves) drives
//! every predictor. The HR target in atomic region `r` is
//!
//! `y = gain_r * max(0, w + k_oro * h_km) * exp(sigma * xi - sigma^2 / 2)`
//!
//! where `h` is a per-region orography ramp and `xi` is i.i.d. standard
//! normal. Predictor `tp` is `max(0, w)` on the LR grid, so the LR data carry
//! the timing and the statics carry the orographic enhancement, while the
//! per-region gain is only learnable from the target itself.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{io_err, manifest, FieldChunk, Result, Store, VariableId};
use crate::grid::{full_domain, partition, GridSpec, Region, RegionId};
use crate::hours::{month_spans, year_start, HourRange};

pub const SYNTH_CONFIG_FILE: &str = "synth.json";
const GRAVITY: f64 = 9.80665;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionParams {
    pub region: RegionId,
    /// Multiplier applied to the target precipitation.
    pub gain: f64,
    /// Peak height of the orography ramp in metres.
    pub relief_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub lr_resolution: f64,
    pub hr_resolution: f64,
    pub hours: usize,
    pub start_year: i32,
    pub waves: usize,
    /// Offset of the latent field; larger means wetter.
    pub base: f64,
    pub noise_sigma: f64,
    /// Target enhancement in latent units per km of orography.
    pub orographic_coeff: f64,
    pub regions: Vec<RegionParams>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let table = [
            (RegionId::NW, 0.45, 2500.0),
            (RegionId::NM, 0.60, 1500.0),
            (RegionId::NE, 2.40, 3000.0),
            (RegionId::TW, 3.20, 1000.0),
            (RegionId::TM, 1.80, 2000.0),
            (RegionId::TE, 4.20, 800.0),
            (RegionId::SW, 0.34, 2200.0),
            (RegionId::SM, 0.78, 300.0),
            (RegionId::SE, 1.40, 600.0),
        ];
        Self {
            lr_resolution: 5.0,
            hr_resolution: 2.0,
            hours: 2000,
            start_year: 2001,
            waves: 6,
            base: 1.0,
            noise_sigma: 0.35,
            orographic_coeff: 0.6,
            regions: table
                .into_iter()
                .map(|(region, gain, relief_m)| RegionParams { region, gain, relief_m })
                .collect(),
        }
    }
}

impl SynthConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| super::StoreError::Json {
            path: path.into(),
            source,
        })
    }

    pub fn lr_grid(&self) -> Result<GridSpec> {
        Ok(full_domain(self.lr_resolution)?)
    }

    pub fn hr_grid(&self) -> Result<GridSpec> {
        Ok(full_domain(self.hr_resolution)?)
    }

    pub fn time_range(&self) -> HourRange {
        let start = year_start(self.start_year);
        HourRange::new(start, start + self.hours as i64)
    }

    pub fn params(&self, id: RegionId) -> Option<&RegionParams> {
        self.regions.iter().find(|p| p.region == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub seed: u64,
    pub config: SynthConfig,
    pub lr_grid: GridSpec,
    pub hr_grid: GridSpec,
    pub hours: HourRange,
    pub chunks: usize,
}

struct Wave {
    amp: f64,
    kx: f64,
    ky: f64,
    omega: f64,
    phase: f64,
}

struct Latent {
    base: f64,
    waves: Vec<Wave>,
}

impl Latent {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut waves: Vec<Wave> = (0..cfg.waves)
            .map(|_| {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                Wave {
                    amp: rng.random_range(0.4..1.0),
                    kx: sign * 2.0 * PI / rng.random_range(20.0..60.0),
                    ky: 2.0 * PI / rng.random_range(20.0..60.0),
                    omega: 2.0 * PI / rng.random_range(24.0..120.0),
                    phase: rng.random_range(0.0..2.0 * PI),
                }
            })
            .collect();
        let var: f64 = waves.iter().map(|w| w.amp * w.amp / 2.0).sum();
        let norm = if var > 0.0 { var.sqrt().recip() } else { 0.0 };
        for w in &mut waves {
            w.amp *= norm;
        }
        Self { base: cfg.base, waves }
    }

    /// Latent value and its (lon, lat) gradient per degree.
    fn eval(&self, t: f64, lat: f64, lon: f64) -> (f64, f64, f64) {
        let mut v = self.base;
        let (mut gx, mut gy) = (0.0, 0.0);
        for w in &self.waves {
            let p = w.kx * lon + w.ky * lat - w.omega * t + w.phase;
            let (s, c) = p.sin_cos();
            v += w.amp * s;
            gx += w.amp * w.kx * c;
            gy += w.amp * w.ky * c;
        }
        (v, gx, gy)
    }
}

fn atomic_of(atoms: &[Region], lat: f64, lon: f64) -> Option<RegionId> {
    atoms.iter().find(|r| r.bbox.contains(lat, lon)).map(|r| r.id)
}

/// Orography in metres at a point of region `r`.
fn orography(cfg: &SynthConfig, atoms: &[Region], lat: f64, lon: f64) -> f64 {
    let Some(id) = atomic_of(atoms, lat, lon) else {
        return 0.0;
    };
    let bbox = atoms.iter().find(|r| r.id == id).expect("atomic").bbox;
    let relief = cfg.params(id).map_or(0.0, |p| p.relief_m);
    let ramp = (lon - bbox.lon_min) / (bbox.lon_max - bbox.lon_min);
    let bumps = 0.5 + 0.5 * (2.0 * PI * lon / 13.0 + 0.4).sin() * (2.0 * PI * lat / 11.0).cos();
    relief * ramp * bumps
}

fn land_sea(lat: f64, lon: f64) -> f64 {
    (0.5 + 1.2 * (2.0 * PI * lon / 47.0 + 0.7).sin() * (2.0 * PI * lat / 31.0 + 0.3).sin()).clamp(0.0, 1.0)
}

/// Writes a complete synthetic store to `store`, fully determined by `seed`.
pub fn synth_generate(store: &Store, cfg: &SynthConfig, seed: u64) -> Result<SynthSummary> {
    let lr = cfg.lr_grid()?;
    let hr = cfg.hr_grid()?;
    let atoms = partition();
    let range = cfg.time_range();
    let mut wave_rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = Latent::new(cfg, &mut wave_rng);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut chunks = 0;

    // Statics on the HR grid.
    let mut orog = Vec::with_capacity(hr.cells());
    let mut lsm = Vec::with_capacity(hr.cells());
    let mut hr_meta = Vec::with_capacity(hr.cells());
    for i in 0..hr.n_lat {
        for j in 0..hr.n_lon {
            let (lat, lon) = hr.cell_center(i, j);
            let h = orography(cfg, &atoms, lat, lon);
            orog.push((h * GRAVITY) as f32);
            lsm.push(land_sea(lat, lon) as f32);
            let gain = atomic_of(&atoms, lat, lon)
                .and_then(|id| cfg.params(id))
                .map_or(1.0, |p| p.gain);
            hr_meta.push((lat, lon, h / 1000.0, gain));
        }
    }
    store.write_chunk(&FieldChunk::new(VariableId::Orog, 0, hr, orog)?)?;
    store.write_chunk(&FieldChunk::new(VariableId::Lsm, 0, hr, lsm)?)?;
    chunks += 2;

    let lr_meta: Vec<(f64, f64, f64)> = (0..lr.n_lat)
        .flat_map(|i| (0..lr.n_lon).map(move |j| (i, j)))
        .map(|(i, j)| {
            let (lat, lon) = lr.cell_center(i, j);
            (lat, lon, orography(cfg, &atoms, lat, lon))
        })
        .collect();

    let sigma = cfg.noise_sigma;
    for span in month_spans(range) {
        let n = span.len();
        let mut pred: Vec<Vec<f32>> = (0..9).map(|_| Vec::with_capacity(n * lr.cells())).collect();
        let mut target = Vec::with_capacity(n * hr.cells());
        for t in span.start..span.end {
            let th = (t - range.start) as f64;
            let hod = t.rem_euclid(24) as f64;
            for &(lat, lon, h) in &lr_meta {
                let (w, gx, gy) = latent.eval(th, lat, lon);
                let tp = w.max(0.0);
                let conv_frac = 0.2 + 0.6 * (-(lat / 25.0).powi(2)).exp();
                let solar = ((2.0 * PI * (hod + lon / 15.0 - 12.0) / 24.0).cos() * lat.to_radians().cos()).max(0.0);
                let values = [
                    tp,
                    tp * conv_frac,
                    (300.0 + 900.0 * w + 200.0 * (2.0 * PI * hod / 24.0 + lon / 15.0).sin()).max(0.0),
                    20.0 + 8.0 * w + 5.0 * (2.0 * lat.to_radians()).cos(),
                    0.2 + 0.15 * tp,
                    101_325.0 - 11.5 * h,
                    1361.0 * 3600.0 * solar,
                    5.0 - 60.0 * gy,
                    60.0 * gx,
                ];
                for (p, v) in pred.iter_mut().zip(values) {
                    p.push(v as f32);
                }
            }
            for &(lat, lon, h_km, gain) in &hr_meta {
                let (w, _, _) = latent.eval(th, lat, lon);
                let xi: f64 = noise_rng.sample(StandardNormal);
                let wet = (w + cfg.orographic_coeff * h_km).max(0.0);
                target.push((gain * wet * (sigma * xi - 0.5 * sigma * sigma).exp()) as f32);
            }
        }
        for (var, values) in VariableId::PREDICTORS.into_iter().zip(pred) {
            store.write_chunk(&FieldChunk::new(var, span.start, lr, values)?)?;
            chunks += 1;
        }
        store.write_chunk(&FieldChunk::new(VariableId::TargetPrecip, span.start, hr, target)?)?;
        chunks += 1;
    }

    let summary = SynthSummary {
        seed,
        config: cfg.clone(),
        lr_grid: lr,
        hr_grid: hr,
        hours: range,
        chunks,
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    manifest::write_atomic(&store.root().join(SYNTH_CONFIG_FILE), text.as_bytes())?;
    Ok(summary)
}

/// Reads the summary written next to a synthetic store, if present.
pub fn synth_summary(store: &Store) -> Option<SynthSummary> {
    let text = fs::read_to_string(store.root().join(SYNTH_CONFIG_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}
