//! Log transform, per-variable standardization and batch assembly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{io_err, FieldChunk, Store, StoreError, VariableId};
use crate::grid::{self, GridError, GridSpec, PatchPair, Region, Window};
use crate::hours::{EpochHour, HourRange};
use crate::tape::Tensor;

/// Offset inside the precipitation log transform, mm/h.
pub const LOG_EPS: f64 = 1e-5;
pub const NOISE_CHANNELS: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("log transform undefined for negative precipitation {0}")]
    Domain(f64),
    #[error("no valid values for {0} in the selected region and period")]
    EmptySelection(VariableId),
    #[error("{0} has zero variance over the selection")]
    ZeroVariance(VariableId),
    #[error("no normalization stats for {0}")]
    MissingStats(VariableId),
    #[error("batch shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

pub fn log_fwd(x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(PreprocessError::Domain(x));
    }
    Ok((x + LOG_EPS).ln())
}

/// Inverse of [`log_fwd`], clamped so that `log_inv(log_fwd(0)) == 0`.
pub fn log_inv(z: f64) -> f64 {
    (z.exp() - LOG_EPS).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsScope {
    #[default]
    TrainRegion,
    FullDomain,
}

/// Streaming mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Chan et al. pairwise combination; associative up to rounding.
    pub fn merge(self, o: Welford) -> Welford {
        if self.n == 0 {
            return o;
        }
        if o.n == 0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        let mean = self.mean + d * (o.n as f64 / n as f64);
        let m2 = self.m2 + o.m2 + d * d * (self.n as f64 * o.n as f64 / n as f64);
        Welford { n, mean, m2 }
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).sqrt()
        }
    }
}

/// What a set of stats was computed over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSelection {
    pub scope: StatsScope,
    /// Region id, or `full_domain`.
    pub region: String,
    pub hours: HourRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarStats {
    pub mean: f64,
    pub std: f64,
    pub log_transformed: bool,
    pub count: u64,
}

impl VarStats {
    pub const IDENTITY: VarStats = VarStats {
        mean: 0.0,
        std: 1.0,
        log_transformed: false,
        count: 0,
    };

    pub fn normalize(&self, x: f64) -> f64 {
        let v = if self.log_transformed {
            (x.max(0.0) + LOG_EPS).ln()
        } else {
            x
        };
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        let v = z * self.std + self.mean;
        if self.log_transformed {
            log_inv(v)
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub selection: StatsSelection,
    pub variables: BTreeMap<VariableId, VarStats>,
}

impl NormStats {
    pub fn get(&self, v: VariableId) -> Result<&VarStats> {
        self.variables.get(&v).ok_or(PreprocessError::MissingStats(v))
    }

    pub fn normalize(&self, v: VariableId, values: &[f32], out: &mut [f32]) -> Result<()> {
        let s = *self.get(v)?;
        for (o, &x) in out.iter_mut().zip(values) {
            *o = s.normalize(x as f64) as f32;
        }
        Ok(())
    }

    pub fn denormalize(&self, v: VariableId, values: &[f32], out: &mut [f32]) -> Result<()> {
        let s = *self.get(v)?;
        for (o, &z) in out.iter_mut().zip(values) {
            *o = s.denormalize(z as f64) as f32;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("stats serialize");
        fs::write(path, text).map_err(|e| io_err(path)(e).into())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| {
            StoreError::Json {
                path: path.into(),
                source,
            }
            .into()
        })
    }
}

/// Windows of `region` on `grid`, or the whole grid.
fn selection_windows(grid: &GridSpec, region: &Region, scope: StatsScope) -> Result<Vec<Window>> {
    Ok(match scope {
        StatsScope::FullDomain => vec![grid.full_window()],
        StatsScope::TrainRegion => grid::slice(grid, region)?.into_iter().map(|(_, w)| w).collect(),
    })
}

fn accumulate(chunk: &FieldChunk, log: bool) -> Result<Welford> {
    let mut acc = Welford::default();
    for (i, &x) in chunk.values.iter().enumerate() {
        if chunk.is_missing(i) {
            continue;
        }
        let x = x as f64;
        acc.push(if log { log_fwd(x)? } else { x });
    }
    Ok(acc)
}

/// Streaming mean/std of every variable over `region` (or the full domain)
/// and `hours`, excluding missing cells. Work is split per (variable, month)
/// and merged in a fixed order, so results do not depend on thread count.
pub fn compute_stats(store: &Store, region: &Region, hours: HourRange, scope: StatsScope) -> Result<NormStats> {
    let manifest = store.manifest();
    let mut jobs: Vec<(VariableId, HourRange, Window)> = Vec::new();
    let timed: Vec<VariableId> = VariableId::PREDICTORS
        .into_iter()
        .chain([VariableId::TargetPrecip])
        .collect();
    for &v in &timed {
        let covered = store.coverage(v, 0).is_some_and(|c| c.covers(&hours));
        if !covered || hours.is_empty() {
            return Err(PreprocessError::EmptySelection(v));
        }
        let grid = store.grid(v)?;
        let windows = selection_windows(&grid, region, scope)?;
        for e in manifest.entries(v.into(), 0) {
            let span = e.time_range().intersect(&hours);
            if span.is_empty() {
                continue;
            }
            jobs.extend(windows.iter().map(|w| (v, span, w.clone())));
        }
    }
    let orog_grid = store.grid(VariableId::Orog)?;
    for w in selection_windows(&orog_grid, region, scope)? {
        jobs.push((VariableId::Orog, HourRange::new(0, 0), w));
    }

    let partials: Vec<(VariableId, Welford)> = jobs
        .par_iter()
        .map(|(v, span, w)| {
            let chunk = if *v == VariableId::Orog {
                store.read_static(*v, w)?
            } else {
                store.read_window(*v, 0, *span, w)?
            };
            Ok((*v, accumulate(&chunk, v.is_precipitation())?))
        })
        .collect::<Result<_>>()?;

    let mut variables = BTreeMap::new();
    for v in timed.iter().copied().chain([VariableId::Orog]) {
        let acc = partials
            .iter()
            .filter(|(p, _)| *p == v)
            .fold(Welford::default(), |a, (_, b)| a.merge(*b));
        if acc.n == 0 {
            return Err(PreprocessError::EmptySelection(v));
        }
        let std = acc.std();
        if !(std > 0.0 && std.is_finite()) {
            return Err(PreprocessError::ZeroVariance(v));
        }
        variables.insert(
            v,
            VarStats {
                mean: acc.mean,
                std,
                log_transformed: v.is_precipitation(),
                count: acc.n,
            },
        );
    }
    variables.insert(VariableId::Lsm, VarStats::IDENTITY);
    Ok(NormStats {
        selection: StatsSelection {
            scope,
            region: match scope {
                StatsScope::TrainRegion => region.id.to_string(),
                StatsScope::FullDomain => "full_domain".into(),
            },
            hours,
        },
        variables,
    })
}

/// Normalized model inputs for a batch of co-located crops, `[n, c, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    /// 9 predictors followed by the noise channels.
    pub lr: Tensor<f32>,
    /// Orography and land-sea mask.
    pub hr_static: Tensor<f32>,
    pub hr_target: Tensor<f32>,
    /// Per target value: true when the observation is missing.
    pub target_missing: Vec<bool>,
    pub times: Vec<EpochHour>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.lr.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Normalized fields of one rectangular LR/HR window pair over a time span,
/// held in memory for fast crop sampling.
#[derive(Debug, Clone)]
pub struct RegionData {
    pub hours: HourRange,
    pub lr_window: Window,
    pub hr_window: Window,
    /// Per predictor: `[t, rows, cols]` normalized.
    /// Missing predictor values are stored as 0 (the variable mean).
    predictors: Vec<Vec<f32>>,
    /// Orography and lsm `[rows, cols]` normalized.
    statics: [Vec<f32>; 2],
    target: Vec<f32>,
    target_missing: Option<Vec<bool>>,
}

fn normalize_chunk(stats: &NormStats, v: VariableId, chunk: &FieldChunk) -> Result<Vec<f32>> {
    let s = *stats.get(v)?;
    Ok(chunk
        .values
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if chunk.is_missing(i) {
                0.0
            } else {
                s.normalize(x as f64) as f32
            }
        })
        .collect())
}

impl RegionData {
    /// Loads and normalizes everything inside `lr_window`/`hr_window`.
    pub fn load(
        store: &Store,
        stats: &NormStats,
        lr_window: Window,
        hr_window: Window,
        hours: HourRange,
    ) -> Result<Self> {
        let mut predictors = Vec::with_capacity(9);
        for v in VariableId::PREDICTORS {
            let c = store.read_window(v, 0, hours, &lr_window)?;
            predictors.push(normalize_chunk(stats, v, &c)?);
        }
        let orog = store.read_static(VariableId::Orog, &hr_window)?;
        let lsm = store.read_static(VariableId::Lsm, &hr_window)?;
        let target = store.read_window(VariableId::TargetPrecip, 0, hours, &hr_window)?;
        Ok(Self {
            hours,
            statics: [
                normalize_chunk(stats, VariableId::Orog, &orog)?,
                normalize_chunk(stats, VariableId::Lsm, &lsm)?,
            ],
            target: normalize_chunk(stats, VariableId::TargetPrecip, &target)?,
            target_missing: target.missing,
            predictors,
            lr_window,
            hr_window,
        })
    }

    /// Loads the bounding windows of `region` on the store's LR and HR grids.
    pub fn load_region(store: &Store, stats: &NormStats, region: &Region, hours: HourRange) -> Result<Self> {
        let lr = store.grid(VariableId::Tp)?.window_for(&region.bbox)?;
        let hr = store.grid(VariableId::TargetPrecip)?.window_for(&region.bbox)?;
        Self::load(store, stats, lr, hr, hours)
    }

    fn local(outer: &Window, inner: &Window) -> Result<(usize, usize)> {
        if !outer.contains(inner) {
            return Err(PreprocessError::Shape(format!(
                "crop {inner:?} outside loaded window {outer:?}"
            )));
        }
        Ok((inner.lat.start - outer.lat.start, inner.lon.start - outer.lon.start))
    }

    fn time_index(&self, t: EpochHour) -> Result<usize> {
        if !self.hours.contains(t) {
            return Err(PreprocessError::Shape(format!("hour {t} outside {}", self.hours)));
        }
        Ok((t - self.hours.start) as usize)
    }

    /// True when any target value of the crop at hour `t` is missing.
    pub fn target_has_missing(&self, patch: &PatchPair, t: EpochHour) -> Result<bool> {
        let Some(mask) = &self.target_missing else {
            return Ok(false);
        };
        let ti = self.time_index(t)?;
        let (r0, c0) = Self::local(&self.hr_window, &patch.hr)?;
        let (rows, cols) = (self.hr_window.rows(), self.hr_window.cols());
        Ok((0..patch.hr.rows()).any(|r| {
            let base = (ti * rows + r0 + r) * cols + c0;
            mask[base..base + patch.hr.cols()].iter().any(|&m| m)
        }))
    }

    /// Assembles a batch; sample `k` uses crop `patches[k]` at hour `times[k]`
    /// with noise drawn from `ChaCha8Rng(noise_seed)` in sample order.
    pub fn batch(
        &self,
        patches: &[PatchPair],
        times: &[EpochHour],
        noise_seed: u64,
        noise_channels: usize,
    ) -> Result<TrainingBatch> {
        let crops: Vec<(&Window, &Window)> = patches.iter().map(|p| (&p.lr, &p.hr)).collect();
        self.assemble(&crops, times, noise_seed, noise_channels)
    }

    /// The whole loaded window, one sample per hour in `times`.
    pub fn full(&self, times: &[EpochHour], noise_seed: u64, noise_channels: usize) -> Result<TrainingBatch> {
        let crops = vec![(&self.lr_window, &self.hr_window); times.len()];
        self.assemble(&crops, times, noise_seed, noise_channels)
    }

    fn assemble(
        &self,
        patches: &[(&Window, &Window)],
        times: &[EpochHour],
        noise_seed: u64,
        noise_channels: usize,
    ) -> Result<TrainingBatch> {
        if patches.is_empty() || patches.len() != times.len() {
            return Err(PreprocessError::Shape(format!(
                "{} patches for {} times",
                patches.len(),
                times.len()
            )));
        }
        let (h, w) = (patches[0].0.rows(), patches[0].0.cols());
        let (hh, hw) = (patches[0].1.rows(), patches[0].1.cols());
        let n = patches.len();
        let c_lr = 9 + noise_channels;
        let mut lr = Vec::with_capacity(n * c_lr * h * w);
        let mut statics = Vec::with_capacity(n * 2 * hh * hw);
        let mut target = Vec::with_capacity(n * hh * hw);
        let mut target_missing = Vec::with_capacity(n * hh * hw);
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let (lr_rows, lr_cols) = (self.lr_window.rows(), self.lr_window.cols());
        let (hr_rows, hr_cols) = (self.hr_window.rows(), self.hr_window.cols());
        for (&(p_lr, p_hr), &t) in patches.iter().zip(times) {
            if (p_lr.rows(), p_lr.cols(), p_hr.rows(), p_hr.cols()) != (h, w, hh, hw) {
                return Err(PreprocessError::Shape("crops differ in size".into()));
            }
            let ti = self.time_index(t)?;
            let (r0, c0) = Self::local(&self.lr_window, p_lr)?;
            for field in &self.predictors {
                for r in 0..h {
                    let base = (ti * lr_rows + r0 + r) * lr_cols + c0;
                    lr.extend_from_slice(&field[base..base + w]);
                }
            }
            for _ in 0..noise_channels * h * w {
                lr.push(rng.sample::<f32, _>(StandardNormal));
            }
            let (r0, c0) = Self::local(&self.hr_window, p_hr)?;
            for field in &self.statics {
                for r in 0..hh {
                    let base = (r0 + r) * hr_cols + c0;
                    statics.extend_from_slice(&field[base..base + hw]);
                }
            }
            for r in 0..hh {
                let base = (ti * hr_rows + r0 + r) * hr_cols + c0;
                target.extend_from_slice(&self.target[base..base + hw]);
                match &self.target_missing {
                    Some(m) => target_missing.extend_from_slice(&m[base..base + hw]),
                    None => target_missing.extend(std::iter::repeat_n(false, hw)),
                }
            }
        }
        Ok(TrainingBatch {
            lr: Tensor::new(vec![n, c_lr, h, w], lr),
            hr_static: Tensor::new(vec![n, 2, hh, hw], statics),
            hr_target: Tensor::new(vec![n, 1, hh, hw], target),
            target_missing,
            times: times.to_vec(),
        })
    }
}

/// Single-crop batch straight from the store.
pub fn make_batch(
    store: &Store,
    stats: &NormStats,
    patch: &PatchPair,
    time: EpochHour,
    noise_seed: u64,
) -> Result<TrainingBatch> {
    let data = RegionData::load(
        store,
        stats,
        patch.lr.clone(),
        patch.hr.clone(),
        HourRange::new(time, time + 1),
    )?;
    data.batch(std::slice::from_ref(patch), &[time], noise_seed, NOISE_CHANNELS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_transform_examples() {
        assert!((log_fwd(0.0).unwrap() - (-11.512_925_464_970_228)).abs() < 1e-12);
        assert_eq!(log_fwd(1.0 - 1e-5).unwrap(), 0.0);
        assert!((log_fwd(2.5).unwrap() - 0.916_294_731_866_155_1).abs() < 1e-12);
        assert!(matches!(log_fwd(-0.1), Err(PreprocessError::Domain(_))));
        assert_eq!(log_inv((1e-5f64).ln()), 0.0);
        assert_eq!(log_inv(-1000.0), 0.0);
        let x = 3.7;
        assert!((log_inv(log_fwd(x).unwrap()) - x).abs() / x < 1e-6);
    }

    #[test]
    fn welford_matches_two_pass_and_merges() {
        let xs: Vec<f64> = (0..10_000).map(|i| 1e4 + ((i * 7919) % 1000) as f64 * 0.013).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        let mut whole = Welford::default();
        xs.iter().for_each(|&x| whole.push(x));
        let mut a = Welford::default();
        let mut b = Welford::default();
        xs[..3333].iter().for_each(|&x| a.push(x));
        xs[3333..].iter().for_each(|&x| b.push(x));
        let merged = a.merge(b);
        for w in [whole, merged] {
            assert!((w.mean - mean).abs() / mean < 1e-12);
            assert!((w.std() - var.sqrt()).abs() / var.sqrt() < 1e-10);
        }
    }

    #[test]
    fn var_stats_roundtrip() {
        let s = VarStats {
            mean: -3.2,
            std: 4.1,
            log_transformed: true,
            count: 1,
        };
        for x in [0.0, 1e-3, 0.5, 7.0, 480.0] {
            let back = s.denormalize(s.normalize(x));
            assert!((back - x).abs() <= 1e-6 * x.max(1e-12), "{x} -> {back}");
        }
        let lsm = VarStats::IDENTITY;
        assert_eq!(lsm.normalize(0.25), 0.25);
    }
}
