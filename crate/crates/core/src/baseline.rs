//! Bilinear interpolation of coarse total precipitation onto the HR grid.

use rayon::prelude::*;

use crate::datastore::{FieldChunk, ProductId, Store, StoreError, VariableId};
use crate::grid::{GridError, GridSpec, Region, Window};
use crate::hours::HourRange;

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("target grid {target:?} extends beyond source grid {coarse:?}")]
    Extent { coarse: GridSpec, target: GridSpec },
    #[error("field has {found} values, grid needs {expected}")]
    Shape { expected: usize, found: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// Per-axis interpolation stencil: lower index and weight of the upper one.
fn stencil(coord: f64, origin: f64, res: f64, n: usize) -> (usize, usize, f64) {
    let x = ((coord - origin) / res - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = (x.floor() as usize).min(n.saturating_sub(2));
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, x - i0 as f64)
}

fn check_extent(source: &GridSpec, target: &GridSpec) -> Result<()> {
    let tol = 1e-9 * source.resolution;
    let inside = target.lat_min >= source.lat_min - tol
        && target.lat_max <= source.lat_max + tol
        && target.lon_min >= source.lon_min - tol
        && target.lon_max <= source.lon_max + tol;
    if inside {
        Ok(())
    } else {
        Err(BaselineError::Extent {
            coarse: *source,
            target: *target,
        })
    }
}

/// Bilinear interpolation between cell centres. HR centres beyond the
/// outermost LR centres take the edge value.
pub fn bilinear_upsample(field: &[f32], source: &GridSpec, target: &GridSpec) -> Result<Vec<f32>> {
    if field.len() != source.cells() {
        return Err(BaselineError::Shape {
            expected: source.cells(),
            found: field.len(),
        });
    }
    check_extent(source, target)?;
    let cols: Vec<_> = (0..target.n_lon)
        .map(|j| stencil(target.lon_center(j), source.lon_min, source.resolution, source.n_lon))
        .collect();
    let mut out = Vec::with_capacity(target.cells());
    for i in 0..target.n_lat {
        let (r0, r1, fy) = stencil(target.lat_center(i), source.lat_min, source.resolution, source.n_lat);
        let (row0, row1) = (&field[r0 * source.n_lon..], &field[r1 * source.n_lon..]);
        for &(c0, c1, fx) in &cols {
            let lo = row0[c0] as f64 * (1.0 - fx) + row0[c1] as f64 * fx;
            let hi = row1[c0] as f64 * (1.0 - fx) + row1[c1] as f64 * fx;
            out.push((lo * (1.0 - fy) + hi * fy) as f32);
        }
    }
    Ok(out)
}

/// LR window covering `hr_grid` plus a one-cell halo, clipped to `lr_grid`.
fn halo_window(lr_grid: &GridSpec, hr_grid: &GridSpec) -> Window {
    let r = lr_grid.resolution;
    let lo = |x: f64, o: f64| (((x - o) / r + 1e-9).floor() as isize - 1).max(0) as usize;
    let hi = |x: f64, o: f64, n: usize| ((((x - o) / r - 1e-9).ceil() as isize + 1) as usize).min(n);
    Window {
        lat: lo(hr_grid.lat_min, lr_grid.lat_min)..hi(hr_grid.lat_max, lr_grid.lat_min, lr_grid.n_lat),
        lon: lo(hr_grid.lon_min, lr_grid.lon_min)..hi(hr_grid.lon_max, lr_grid.lon_min, lr_grid.n_lon),
    }
}

/// Hourly bilinear forecast of raw `tp` over the HR cells of `region`.
pub fn baseline_forecast(store: &Store, region: &Region, hours: HourRange) -> Result<FieldChunk> {
    let lr_grid = store.grid(VariableId::Tp)?;
    let hr_full = store.grid(VariableId::TargetPrecip)?;
    let hr_window = hr_full.window_for(&region.bbox)?;
    let hr_grid = hr_full.subgrid(&hr_window);
    let lr_window = halo_window(&lr_grid, &hr_grid);
    let lr_sub = lr_grid.subgrid(&lr_window);
    let tp = store.read_window(VariableId::Tp, 0, hours, &lr_window)?;
    let steps: Vec<Vec<f32>> = (0..tp.n_steps)
        .into_par_iter()
        .map(|t| bilinear_upsample(tp.step(t), &lr_sub, &hr_grid))
        .collect::<Result<_>>()?;
    Ok(FieldChunk::new(
        ProductId::BaselinePrecip,
        hours.start,
        hr_grid,
        steps.concat(),
    )?)
}

/// The baseline as a one-member "ensemble" for scoring.
pub fn baseline_members(store: &Store, region: &Region, hours: HourRange) -> Result<Vec<FieldChunk>> {
    Ok(vec![baseline_forecast(store, region, hours)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lr() -> GridSpec {
        GridSpec::new(0.0, 2.5, 0.0, 5.0, 0.25).unwrap()
    }

    fn hr() -> GridSpec {
        GridSpec::new(0.0, 2.5, 0.0, 5.0, 0.1).unwrap()
    }

    #[test]
    fn constant_field_is_preserved() {
        let f = vec![3.25f32; lr().cells()];
        let out = bilinear_upsample(&f, &lr(), &hr()).unwrap();
        assert!(out.iter().all(|&x| x == 3.25));
    }

    #[test]
    fn linear_in_longitude_is_exact_inside() {
        let (s, t) = (lr(), hr());
        let f: Vec<f32> = (0..s.cells())
            .map(|k| (s.lon_center(k % s.n_lon) * 2.0) as f32)
            .collect();
        let out = bilinear_upsample(&f, &s, &t).unwrap();
        let first = s.lon_center(0);
        let last = s.lon_center(s.n_lon - 1);
        for i in 0..t.n_lat {
            for j in 0..t.n_lon {
                let lon = t.lon_center(j);
                let v = out[i * t.n_lon + j] as f64;
                let want = 2.0 * lon.clamp(first, last);
                assert!((v - want).abs() < 1e-5, "lon {lon}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn midpoint_of_four_centres() {
        let s = GridSpec::new(0.0, 2.0, 0.0, 2.0, 1.0).unwrap();
        // Corners {0, 1, 1, 2} at centres (0.5,0.5), (0.5,1.5), (1.5,0.5), (1.5,1.5).
        let f = [0.0, 1.0, 1.0, 2.0];
        let t = GridSpec::new(0.5, 1.5, 0.5, 1.5, 1.0).unwrap();
        assert_eq!(bilinear_upsample(&f, &s, &t).unwrap(), vec![1.0]);
    }

    #[test]
    fn extent_violation() {
        let s = lr();
        let t = GridSpec::new(0.0, 3.0, 0.0, 5.0, 0.1).unwrap();
        let f = vec![0.0; s.cells()];
        assert!(matches!(
            bilinear_upsample(&f, &s, &t),
            Err(BaselineError::Extent { .. })
        ));
    }

    #[test]
    fn halo_is_clipped() {
        let l = GridSpec::new(-60.0, 60.0, -130.0, 170.0, 5.0).unwrap();
        let h = GridSpec::new(20.0, 60.0, -130.0, -30.0, 2.0).unwrap();
        let w = halo_window(&l, &h);
        assert_eq!(w.lat, 15..24);
        assert_eq!(w.lon, 0..21);
    }
}
