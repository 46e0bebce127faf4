use rand::Rng;
use rand_distr::StandardNormal;

use super::{seeded, Checkpoint, ModelError, Result, PREDICTOR_CHANNELS};
use crate::datastore::{FieldChunk, ProductId, Store, VariableId};
use crate::grid::Region;
use crate::hours::{EpochHour, HourRange};
use crate::preprocess::RegionData;
use crate::tape::Tensor;
use crate::verify::{ScoreAccumulator, ScoreGrid};

/// Rough per-generator-pass element budget; larger requests are split.
const PASS_BUDGET: usize = 1 << 25;
/// Hours assembled per inference block.
const HOUR_BLOCK: usize = 32;

/// `m` draws for each of `b` inputs, in mm/h, laid out `[m, b, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleForecast {
    pub members: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl EnsembleForecast {
    pub fn field(&self, member: usize, sample: usize) -> &[f32] {
        let n = self.height * self.width;
        let k = member * self.batch + sample;
        &self.values[k * n..(k + 1) * n]
    }
}

/// Tile origins covering `n` cells with tiles of `p`: multiples of `p`, plus
/// a final tile flush with the far edge when `p` does not divide `n`.
fn tile_starts(n: usize, p: usize) -> Vec<usize> {
    if p == 0 || n <= p {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..n / p).map(|k| k * p).collect();
    if !n.is_multiple_of(p) {
        v.push(n - p);
    }
    v
}

fn crop(t: &Tensor<f32>, r0: usize, c0: usize, rows: usize, cols: usize) -> Tensor<f32> {
    let s = &t.shape;
    let (h, w) = (s[2], s[3]);
    let mut data = Vec::with_capacity(s[0] * s[1] * rows * cols);
    for plane in t.data.chunks_exact(h * w) {
        for r in r0..r0 + rows {
            data.extend_from_slice(&plane[r * w + c0..r * w + c0 + cols]);
        }
    }
    Tensor::new(vec![s[0], s[1], rows, cols], data)
}

/// Draws `m` generator outputs per input with independent noise and converts
/// them to physical precipitation.
///
/// `lr` is `[b, >= 9, h, w]` normalized; any noise channels it carries are
/// replaced. Noise depends only on `seed`, the member and the sample index.
/// Inputs larger than the training crop are generated tile by tile with
/// crops of the training size, so every output pixel sees the same border
/// conditions as in training.
pub fn sample_ensemble(
    ck: &Checkpoint,
    lr: &Tensor<f32>,
    statics: &Tensor<f32>,
    m: usize,
    seed: u64,
) -> Result<EnsembleForecast> {
    let s = &lr.shape;
    if m == 0 || s.len() != 4 || s[1] < PREDICTOR_CHANNELS {
        return Err(ModelError::Shape(format!("cannot sample {m} members from {s:?}")));
    }
    let g = &ck.generator;
    let (b, h, w) = (s[0], s[2], s[3]);
    let plane = h * w;
    let cond = PREDICTOR_CHANNELS * plane;
    let c_in = g.in_channels();
    let (hh, hw) = (statics.shape[2], statics.shape[3]);
    let (hr_plane, st_sample) = (hh * hw, statics.numel() / b.max(1));
    let p = ck.config.train.lr_patch;
    let (rows, cols) = (tile_starts(h, p), tile_starts(w, p));
    let (th, tw) = (h.min(p), w.min(p));
    if rows.iter().chain(&cols).any(|&o| o % 2 != 0) || th % 2 != 0 || tw % 2 != 0 {
        return Err(ModelError::Shape(format!(
            "{h}x{w} cannot be tiled by even {p}-cell crops"
        )));
    }
    let (thh, thw) = (th * 5 / 2, tw * 5 / 2);
    let per_pass = (PASS_BUDGET / (12 * g.config.filters * thh * thw).max(1)).max(1);

    let mut rng = seeded(seed, 3);
    let jobs: Vec<(usize, usize)> = (0..m).flat_map(|k| (0..b).map(move |i| (k, i))).collect();
    let mut values = Vec::with_capacity(m * b * hr_plane);
    let target = *ck.stats.get(VariableId::TargetPrecip)?;
    for part in jobs.chunks(per_pass) {
        let n = part.len();
        let mut x = Vec::with_capacity(n * c_in * plane);
        let mut st = Vec::with_capacity(n * st_sample);
        for &(_, i) in part {
            let src = &lr.data[i * s[1] * plane..];
            x.extend_from_slice(&src[..cond]);
            x.extend((cond..c_in * plane).map(|_| rng.sample::<f32, _>(StandardNormal)));
            st.extend_from_slice(&statics.data[i * st_sample..(i + 1) * st_sample]);
        }
        let mut st_shape = statics.shape.clone();
        st_shape[0] = n;
        let x = Tensor::new(vec![n, c_in, h, w], x);
        let st = Tensor::new(st_shape, st);
        let mut out = vec![0.0f32; n * hr_plane];
        for &r0 in &rows {
            for &c0 in &cols {
                let (hr0, hc0) = (r0 * 5 / 2, c0 * 5 / 2);
                let y = g.run(&crop(&x, r0, c0, th, tw), Some(&crop(&st, hr0, hc0, thh, thw)))?;
                for (k, tile) in y.data.chunks_exact(thh * thw).enumerate() {
                    for r in 0..thh {
                        let dst = k * hr_plane + (hr0 + r) * hw + hc0;
                        out[dst..dst + thw].copy_from_slice(&tile[r * thw..(r + 1) * thw]);
                    }
                }
            }
        }
        values.extend(out.iter().map(|&z| target.denormalize(z as f64).max(0.0) as f32));
    }
    Ok(EnsembleForecast {
        members: m,
        batch: b,
        height: hh,
        width: hw,
        values,
    })
}

fn region_data(store: &Store, ck: &Checkpoint, region: &Region, hours: HourRange) -> Result<RegionData> {
    Ok(RegionData::load_region(store, &ck.stats, region, hours)?)
}

/// Contiguous `m`-member forecast over `region` as `ForecastPrecip` chunks,
/// one per member.
pub fn forecast_region(
    store: &Store,
    ck: &Checkpoint,
    region: &Region,
    hours: HourRange,
    m: usize,
    seed: u64,
) -> Result<Vec<FieldChunk>> {
    let data = region_data(store, ck, region, hours)?;
    let hr_grid = store.grid(VariableId::TargetPrecip)?.subgrid(&data.hr_window);
    let nc = ck.generator.config.noise_channels;
    let times: Vec<EpochHour> = (hours.start..hours.end).collect();
    let mut members = vec![Vec::with_capacity(hours.len() * hr_grid.cells()); m];
    for (blk, ts) in times.chunks(HOUR_BLOCK).enumerate() {
        let batch = data.full(ts, 0, nc)?;
        let f = sample_ensemble(ck, &batch.lr, &batch.hr_static, m, block_seed(seed, blk))?;
        for (k, dst) in members.iter_mut().enumerate() {
            for i in 0..ts.len() {
                dst.extend_from_slice(f.field(k, i));
            }
        }
    }
    members
        .into_iter()
        .enumerate()
        .map(|(k, v)| Ok(FieldChunk::new(ProductId::ForecastPrecip, hours.start, hr_grid, v)?.with_member(k as u32)))
        .collect()
}

fn block_seed(seed: u64, block: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(block as u64)
}

/// Scores an `m`-member forecast of `region` at `times` against the stored
/// target, without materializing the forecast.
pub fn score_checkpoint(
    store: &Store,
    ck: &Checkpoint,
    region: &Region,
    times: &[EpochHour],
    m: usize,
    seed: u64,
) -> Result<ScoreGrid> {
    let (Some(&first), Some(&last)) = (times.iter().min(), times.iter().max()) else {
        return Err(ModelError::Config("no hours to score".into()));
    };
    let span = HourRange::new(first, last + 1);
    let data = region_data(store, ck, region, span)?;
    let obs = store.read_window(VariableId::TargetPrecip, 0, span, &data.hr_window)?;
    let mut acc = ScoreAccumulator::new(obs.grid);
    let nc = ck.generator.config.noise_channels;
    for (blk, ts) in times.chunks(HOUR_BLOCK).enumerate() {
        let batch = data.full(ts, 0, nc)?;
        let f = sample_ensemble(ck, &batch.lr, &batch.hr_static, m, block_seed(seed, blk))?;
        for (i, &t) in ts.iter().enumerate() {
            let ti = (t - first) as usize;
            let fields: Vec<&[f32]> = (0..m).map(|k| f.field(k, i)).collect();
            acc.add_hour(&fields, obs.step(ti), obs.step_missing(ti))?;
        }
    }
    Ok(acc.finish(region.id.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::checkpoint::tests::unit_stats;
    use crate::model::ModelConfig;

    fn inputs(b: usize) -> (Tensor<f32>, Tensor<f32>) {
        let mut rng = seeded(11, 0);
        let lr = (0..b * 11 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let st = (0..b * 200).map(|_| rng.random_range(-1.0..1.0)).collect();
        (Tensor::new(vec![b, 11, 4, 4], lr), Tensor::new(vec![b, 2, 10, 10], st))
    }

    #[test]
    fn members_are_nonnegative_and_seeded() {
        let ck = Checkpoint::init(ModelConfig::desk(), unit_stats()).unwrap();
        let (lr, st) = inputs(3);
        let a = sample_ensemble(&ck, &lr, &st, 4, 9).unwrap();
        assert_eq!(a.values.len(), 4 * 3 * 100);
        assert!(a.values.iter().all(|&v| v >= 0.0 && v.is_finite()));
        assert_eq!(a, sample_ensemble(&ck, &lr, &st, 4, 9).unwrap());
        assert_ne!(a.field(0, 0), a.field(1, 0));
        assert!(sample_ensemble(&ck, &lr, &st, 0, 9).is_err());
    }

    #[test]
    fn larger_ensembles_have_steadier_means() {
        let ck = Checkpoint::init(ModelConfig::desk(), unit_stats()).unwrap();
        let (lr, st) = inputs(1);
        let mean_var = |m: usize| {
            let reps = 24;
            let means: Vec<f64> = (0..reps)
                .map(|r| {
                    let f = sample_ensemble(&ck, &lr, &st, m, 100 + r).unwrap();
                    (0..m).map(|k| f.field(k, 0)[55] as f64).sum::<f64>() / m as f64
                })
                .collect();
            let mu = means.iter().sum::<f64>() / reps as f64;
            means.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / reps as f64
        };
        assert!(mean_var(64) < mean_var(8));
    }
}
