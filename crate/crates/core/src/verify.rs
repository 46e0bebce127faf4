//! Ensemble CRPS, per-pixel score maps and regional aggregation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{FieldChunk, FieldId, ProductId, StoreError, VariableId};
use crate::grid::GridSpec;

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("non-finite input to crps")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0} is not a precipitation field in mm/h")]
    Units(FieldId),
    #[error("no scored pixels")]
    Empty,
    #[error("reference score must be positive, got {0}")]
    NonPositiveReference(f64),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type Result<T> = std::result::Result<T, VerifyError>;

/// CRPS of the empirical ensemble CDF against observation `y`:
/// `mean|x_i - y| - (1/2m^2) sum_ij |x_i - x_j|`, evaluated in O(m log m).
pub fn crps_empirical(members: &[f64], y: f64) -> Result<f64> {
    if members.is_empty() {
        return Err(VerifyError::EmptyEnsemble);
    }
    if !y.is_finite() || members.iter().any(|x| !x.is_finite()) {
        return Err(VerifyError::NonFinite);
    }
    let mut sorted = members.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(crps_sorted(&sorted, y))
}

/// [`crps_empirical`] on members already sorted ascending.
pub fn crps_sorted(sorted: &[f64], y: f64) -> f64 {
    let m = sorted.len() as f64;
    let x0 = sorted[0];
    let mut abs_err = 0.0;
    let mut spread = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        abs_err += (x - y).abs();
        // The coefficients sum to zero, so offsets from x0 give the same
        // value with less cancellation.
        spread += (2.0 * i as f64 + 1.0 - m) * (x - x0);
    }
    // sum_ij |x_i - x_j| = 2 * spread; the score cannot be negative.
    (abs_err / m - spread / (m * m)).max(0.0)
}

/// Direct quadrature of `int (F(z) - 1{z >= y})^2 dz` with `F` the empirical
/// CDF, over `[min - 1, max + 1]`. Each interval between breakpoints is cut
/// into pieces no longer than `step` and integrated with the midpoint rule,
/// so the integrand is never sampled on a jump.
pub fn crps_integral_oracle(members: &[f64], y: f64, step: f64) -> f64 {
    let m = members.len() as f64;
    let cdf = |z: f64| members.iter().filter(|&&x| x <= z).count() as f64 / m;
    let mut knots: Vec<f64> = members.iter().copied().chain([y]).collect();
    knots.sort_by(f64::total_cmp);
    let lo = knots[0] - 1.0;
    let hi = knots[knots.len() - 1] + 1.0;
    let mut edges = vec![lo];
    edges.extend(knots);
    edges.push(hi);
    edges.dedup();
    let mut total = 0.0;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let pieces = ((b - a) / step).ceil().max(1.0) as usize;
        let h = (b - a) / pieces as f64;
        for k in 0..pieces {
            let z = a + (k as f64 + 0.5) * h;
            let heaviside = if z >= y { 1.0 } else { 0.0 };
            total += (cdf(z) - heaviside).powi(2) * h;
        }
    }
    total
}

/// Sum in a fixed binary-tree order; stable to rounding and reproducible.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Per-pixel mean CRPS over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreGrid {
    pub region: String,
    pub grid: GridSpec,
    pub mean_crps: Vec<f64>,
    pub hours_counted: Vec<u64>,
}

impl ScoreGrid {
    /// Whether every scored pixel saw the same number of hours, in which case
    /// time-then-space and pooled averaging coincide.
    pub fn counts_equal(&self) -> bool {
        let mut it = self.hours_counted.iter().filter(|&&c| c > 0);
        let first = it.next();
        it.all(|c| Some(c) == first)
    }

    /// Mean over all scored (pixel, hour) pairs.
    pub fn pooled_mean(&self) -> Result<f64> {
        let total: u64 = self.hours_counted.iter().sum();
        if total == 0 {
            return Err(VerifyError::Empty);
        }
        let sums: Vec<f64> = self
            .mean_crps
            .iter()
            .zip(&self.hours_counted)
            .map(|(m, &c)| m * c as f64)
            .collect();
        Ok(pairwise_sum(&sums) / total as f64)
    }

    /// Stores the map as two single-step chunks (CRPS and hour counts).
    pub fn to_chunks(&self) -> Result<(FieldChunk, FieldChunk)> {
        let missing: Vec<bool> = self.hours_counted.iter().map(|&c| c == 0).collect();
        let crps = FieldChunk::new(
            ProductId::CrpsMean,
            0,
            self.grid,
            self.mean_crps.iter().map(|&x| x as f32).collect(),
        )?
        .with_missing(missing)?;
        let hours = FieldChunk::new(
            ProductId::HoursCounted,
            0,
            self.grid,
            self.hours_counted.iter().map(|&c| c as f32).collect(),
        )?;
        Ok((crps, hours))
    }
}

/// Running per-pixel CRPS sums; feed one hour at a time.
#[derive(Debug, Clone)]
pub struct ScoreAccumulator {
    grid: GridSpec,
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl ScoreAccumulator {
    pub fn new(grid: GridSpec) -> Self {
        Self {
            grid,
            sums: vec![0.0; grid.cells()],
            counts: vec![0; grid.cells()],
        }
    }

    /// `members[k]` is member k's field for this hour (one value per pixel).
    pub fn add_hour(&mut self, members: &[&[f32]], obs: &[f32], obs_missing: Option<&[bool]>) -> Result<()> {
        let cells = self.grid.cells();
        if members.is_empty() {
            return Err(VerifyError::EmptyEnsemble);
        }
        if obs.len() != cells || members.iter().any(|m| m.len() != cells) {
            return Err(VerifyError::Shape(format!(
                "expected {cells} values per field, observation has {}",
                obs.len()
            )));
        }
        let scores: Vec<Option<f64>> = (0..cells)
            .into_par_iter()
            .with_min_len(256)
            .map(|c| {
                if obs_missing.is_some_and(|m| m[c]) {
                    return Ok(None);
                }
                let mut xs: Vec<f64> = members.iter().map(|m| m[c] as f64).collect();
                if !obs[c].is_finite() || xs.iter().any(|x| !x.is_finite()) {
                    return Err(VerifyError::NonFinite);
                }
                xs.sort_by(f64::total_cmp);
                Ok(Some(crps_sorted(&xs, obs[c] as f64)))
            })
            .collect::<Result<_>>()?;
        for (c, s) in scores.into_iter().enumerate() {
            if let Some(s) = s {
                self.sums[c] += s;
                self.counts[c] += 1;
            }
        }
        Ok(())
    }

    pub fn finish(self, region: impl Into<String>) -> ScoreGrid {
        let mean_crps = self
            .sums
            .iter()
            .zip(&self.counts)
            .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        ScoreGrid {
            region: region.into(),
            grid: self.grid,
            mean_crps,
            hours_counted: self.counts,
        }
    }
}

fn check_units(field: FieldId) -> Result<()> {
    match field {
        FieldId::Product(ProductId::ForecastPrecip | ProductId::BaselinePrecip)
        | FieldId::Variable(VariableId::TargetPrecip | VariableId::Tp) => Ok(()),
        other => Err(VerifyError::Units(other)),
    }
}

/// Scores an ensemble (one chunk per member, physical units) against
/// observations over the same hours and grid. Missing observations are
/// skipped and not counted.
pub fn score_region(members: &[FieldChunk], obs: &FieldChunk, region: &str) -> Result<ScoreGrid> {
    let first = members.first().ok_or(VerifyError::EmptyEnsemble)?;
    check_units(obs.field)?;
    for m in members {
        check_units(m.field)?;
        if m.time_range() != obs.time_range() || !m.grid.approx_eq(&obs.grid) {
            return Err(VerifyError::Shape(format!(
                "member {} covers {} on {}x{}, observations {} on {}x{}",
                m.member,
                m.time_range(),
                m.grid.n_lat,
                m.grid.n_lon,
                obs.time_range(),
                obs.grid.n_lat,
                obs.grid.n_lon
            )));
        }
    }
    let mut acc = ScoreAccumulator::new(first.grid);
    for t in 0..obs.n_steps {
        let fields: Vec<&[f32]> = members.iter().map(|m| m.step(t)).collect();
        acc.add_hour(&fields, obs.step(t), obs.step_missing(t))?;
    }
    Ok(acc.finish(region))
}

/// Mean of per-pixel CRPS over pixels with at least one scored hour.
/// With `lat_weighted`, pixels are weighted by the cosine of their latitude.
pub fn aggregate(grid: &ScoreGrid, lat_weighted: bool) -> Result<f64> {
    let g = &grid.grid;
    let mut vals = Vec::new();
    let mut weights = Vec::new();
    for i in 0..g.n_lat {
        let w = if lat_weighted {
            g.lat_center(i).to_radians().cos()
        } else {
            1.0
        };
        for j in 0..g.n_lon {
            let k = i * g.n_lon + j;
            if grid.hours_counted[k] > 0 {
                vals.push(grid.mean_crps[k] * w);
                weights.push(w);
            }
        }
    }
    if vals.is_empty() {
        return Err(VerifyError::Empty);
    }
    if lat_weighted {
        Ok(pairwise_sum(&vals) / pairwise_sum(&weights))
    } else {
        // Shifted by the first value so a constant map returns that constant.
        let x0 = vals[0];
        let dev: Vec<f64> = vals.iter().map(|v| v - x0).collect();
        Ok(x0 + pairwise_sum(&dev) / vals.len() as f64)
    }
}

/// Fractional CRPS improvement over a reference, `1 - model / baseline`.
pub fn improvement(model: f64, baseline: f64) -> Result<f64> {
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(VerifyError::NonPositiveReference(baseline));
    }
    Ok(1.0 - model / baseline)
}

/// Relative degradation of a transferred model, `transfer / direct - 1`.
/// Negative when the transferred model wins.
pub fn drop_vs_direct(transfer: f64, direct: f64) -> Result<f64> {
    if direct.is_nan() || direct <= 0.0 {
        return Err(VerifyError::NonPositiveReference(direct));
    }
    Ok(transfer / direct - 1.0)
}

/// One cell of the transfer matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionalScore {
    pub train_region: String,
    pub eval_region: String,
    pub crps: f64,
    pub baseline_crps: f64,
    pub improvement: f64,
    pub direct_crps: Option<f64>,
    pub drop: Option<f64>,
}

impl RegionalScore {
    pub fn new(train: &str, eval: &str, crps: f64, baseline_crps: f64, direct_crps: Option<f64>) -> Result<Self> {
        Ok(Self {
            train_region: train.to_owned(),
            eval_region: eval.to_owned(),
            crps,
            baseline_crps,
            improvement: improvement(crps, baseline_crps)?,
            drop: direct_crps.map(|d| drop_vs_direct(crps, d)).transpose()?,
            direct_crps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_examples() {
        assert_eq!(crps_empirical(&[2.0], 0.5).unwrap(), 1.5);
        assert_eq!(crps_empirical(&[0.0, 1.0], 0.0).unwrap(), 0.25);
        assert_eq!(crps_empirical(&[1.3; 5], 1.3).unwrap(), 0.0);
        assert!(matches!(crps_empirical(&[], 1.0), Err(VerifyError::EmptyEnsemble)));
    }

    #[test]
    fn oracle_matches_by_hand() {
        let q = crps_integral_oracle(&[0.0, 1.0], 0.0, 1e-3);
        assert!((q - 0.25).abs() < 1e-12);
        let q = crps_integral_oracle(&[2.0], 0.5, 0.1);
        assert!((q - 1.5).abs() < 1e-12);
    }

    #[test]
    fn improvement_and_drop() {
        assert!((improvement(0.09, 0.12).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(improvement(0.3, 0.3).unwrap(), 0.0);
        assert!((improvement(0.58 * 0.2, 0.2).unwrap() - 0.42).abs() < 1e-12);
        assert_eq!(drop_vs_direct(0.4, 0.4).unwrap(), 0.0);
        assert!((drop_vs_direct(1.25 * 0.16, 0.16).unwrap() - 0.25).abs() < 1e-12);
        assert!(drop_vs_direct(0.1, 0.2).unwrap() < 0.0);
        assert!(improvement(0.1, 0.0).is_err());
    }

    #[test]
    fn constant_grid_aggregates_exactly() {
        let grid = GridSpec::new(0.0, 3.0, 0.0, 7.0, 1.0).unwrap();
        let c = 0.123_456_789;
        let s = ScoreGrid {
            region: "NW".into(),
            grid,
            mean_crps: vec![c; grid.cells()],
            hours_counted: vec![5; grid.cells()],
        };
        assert_eq!(aggregate(&s, false).unwrap(), c);
        assert!(s.counts_equal());
        assert!((s.pooled_mean().unwrap() - c).abs() < 1e-15);
    }
}
