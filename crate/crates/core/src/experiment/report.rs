use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::Serialize;

use super::matrix::cell_name;
use super::{io_err, transfer_properties, ExperimentError, Result, TransferMatrix, Winner};
use crate::datastore::write_atomic;
use crate::verify::ScoreGrid;

/// Fixed colour range of the CRPS maps, log10 mm/h.
pub const MAP_LOG10_RANGE: (f64, f64) = (-3.0, 1.0);
/// Output pixels per grid cell along each axis.
const MAP_SCALE: u32 = 4;
const UNSCORED: Rgb<u8> = Rgb([128, 128, 128]);
/// Dark blue through teal and green to yellow.
const RAMP: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub cells: usize,
    pub expected_cells: usize,
    pub failures: usize,
    /// Cells beating the baseline.
    pub improved: usize,
    pub improved_10pct: usize,
    pub diagonal_wins: usize,
    pub diagonal_checked: usize,
    pub superset_pass: usize,
    pub superset_checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationSummary {
    pub geo_wins: usize,
    pub nogeo_wins: usize,
    pub ties: usize,
    pub undecided: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub variants: Vec<VariantSummary>,
    pub ablation: Option<AblationSummary>,
}

fn color(log10: f64) -> Rgb<u8> {
    let (lo, hi) = MAP_LOG10_RANGE;
    let x = ((log10 - lo) / (hi - lo)).clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let k = (x.floor() as usize).min(RAMP.len() - 2);
    let f = x - k as f64;
    let c = |i: usize| (RAMP[k][i] + f * (RAMP[k + 1][i] - RAMP[k][i])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Per-pixel CRPS on a log10 scale with a fixed range, north up.
pub fn render_map(grid: &ScoreGrid) -> RgbImage {
    let g = &grid.grid;
    let (w, h) = (g.n_lon as u32 * MAP_SCALE, g.n_lat as u32 * MAP_SCALE);
    RgbImage::from_fn(w, h, |x, y| {
        let i = g.n_lat - 1 - (y / MAP_SCALE) as usize;
        let k = i * g.n_lon + (x / MAP_SCALE) as usize;
        if grid.hours_counted[k] == 0 {
            UNSCORED
        } else {
            color(grid.mean_crps[k].max(1e-12).log10())
        }
    })
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(path)(e.into_error()))?;
    Ok(write_atomic(path, &bytes)?)
}

fn fmt(v: Option<f64>, digits: usize) -> String {
    v.filter(|x| x.is_finite())
        .map_or(String::new(), |x| format!("{x:.digits$}"))
}

fn table(
    m: &TransferMatrix,
    value: impl Fn(&TransferMatrix, usize, usize) -> String,
) -> (Vec<String>, Vec<Vec<String>>) {
    let header = std::iter::once("train_region".to_string())
        .chain(m.eval_regions.iter().map(|e| e.to_string()))
        .collect();
    let rows = (0..m.train_regions.len())
        .map(|i| {
            std::iter::once(m.train_regions[i].to_string())
                .chain((0..m.eval_regions.len()).map(|j| value(m, i, j)))
                .collect()
        })
        .collect();
    (header, rows)
}

fn emit_map(results: &Path, maps: &Path, name: &str) -> Result<()> {
    let src = results.join("grids").join(format!("{name}.json"));
    let Ok(text) = fs::read(&src) else {
        return Ok(());
    };
    let grid: ScoreGrid =
        serde_json::from_slice(&text).map_err(|e| ExperimentError::Plan(format!("{}: {e}", src.display())))?;
    let g = &grid.grid;
    let rows: Vec<Vec<String>> = (0..g.n_lat)
        .flat_map(|i| (0..g.n_lon).map(move |j| (i, j)))
        .map(|(i, j)| {
            let k = i * g.n_lon + j;
            let (lat, lon) = g.cell_center(i, j);
            let scored = grid.hours_counted[k] > 0;
            vec![
                format!("{lat:.4}"),
                format!("{lon:.4}"),
                fmt(scored.then_some(grid.mean_crps[k]), 6),
                grid.hours_counted[k].to_string(),
            ]
        })
        .collect();
    let header = ["lat", "lon", "crps", "hours"].map(String::from);
    write_csv(&maps.join(format!("{name}.csv")), &header, &rows)?;
    let png = maps.join(format!("{name}.png"));
    let mut bytes = Vec::new();
    render_map(&grid)
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|source| ExperimentError::Image {
            path: png.clone(),
            source,
        })?;
    Ok(write_atomic(&png, &bytes)?)
}

/// Writes, per variant, the raw / vs-baseline / vs-direct CRPS tables, the
/// flat score rows, the failures and one CSV + PNG map per cell; plus the
/// ablation table when both variants are present and a JSON summary.
/// Output depends only on the matrices and the stored score grids.
pub fn emit_report(matrices: &[TransferMatrix], results: &Path, out: &Path) -> Result<ReportSummary> {
    let maps = out.join("maps");
    fs::create_dir_all(&maps).map_err(io_err(&maps))?;
    let mut variants = Vec::new();
    for m in matrices {
        let v = &m.variant;
        let (h, r) = table(m, |m, i, j| fmt(m.crps(m.train_regions[i], m.eval_regions[j]), 6));
        write_csv(&out.join(format!("crps_{v}.csv")), &h, &r)?;
        let scores = m.scores()?;
        let lookup = |i: usize, j: usize| {
            let (t, e) = (m.train_regions[i].as_str(), m.eval_regions[j].as_str());
            scores.iter().find(|s| s.train_region == t && s.eval_region == e)
        };
        let (h, r) = table(m, |_, i, j| fmt(lookup(i, j).map(|s| s.improvement), 4));
        write_csv(&out.join(format!("improvement_{v}.csv")), &h, &r)?;
        let (h, r) = table(m, |_, i, j| fmt(lookup(i, j).and_then(|s| s.drop), 4));
        write_csv(&out.join(format!("drop_vs_direct_{v}.csv")), &h, &r)?;

        let header = [
            "train_region",
            "eval_region",
            "crps",
            "baseline_crps",
            "improvement",
            "direct_crps",
            "drop",
        ]
        .map(String::from);
        let rows: Vec<Vec<String>> = scores
            .iter()
            .map(|s| {
                vec![
                    s.train_region.clone(),
                    s.eval_region.clone(),
                    fmt(Some(s.crps), 6),
                    fmt(Some(s.baseline_crps), 6),
                    fmt(Some(s.improvement), 4),
                    fmt(s.direct_crps, 6),
                    fmt(s.drop, 4),
                ]
            })
            .collect();
        write_csv(&out.join(format!("scores_{v}.csv")), &header, &rows)?;
        let failures = m.failures();
        let rows: Vec<Vec<String>> = failures
            .iter()
            .map(|(t, e, c)| vec![t.to_string(), e.to_string(), (*c).to_string()])
            .collect();
        write_csv(
            &out.join(format!("failures_{v}.csv")),
            &["train_region", "eval_region", "cause"].map(String::from),
            &rows,
        )?;

        for t in &m.train_regions {
            for e in &m.eval_regions {
                emit_map(results, &maps, &cell_name(t.as_str(), e.as_str(), v))?;
            }
        }
        let props = transfer_properties(std::slice::from_ref(m));
        variants.push(VariantSummary {
            variant: v.clone(),
            cells: m.cells.len(),
            expected_cells: m.train_regions.len() * m.eval_regions.len(),
            failures: failures.len(),
            improved: scores.iter().filter(|s| s.improvement > 0.0).count(),
            improved_10pct: scores.iter().filter(|s| s.improvement >= 0.1).count(),
            diagonal_wins: props.diagonal_wins,
            diagonal_checked: props.diagonal_checked,
            superset_pass: props.superset_pass,
            superset_checked: props.superset_checked,
        });
    }
    let mut evals: Vec<_> = matrices.iter().flat_map(|m| m.eval_regions.iter().copied()).collect();
    evals.sort();
    evals.dedup();
    for e in evals {
        emit_map(results, &maps, &cell_name("baseline", e.as_str(), "bilinear"))?;
    }

    let geo = matrices.iter().find(|m| m.variant == "geo");
    let nogeo = matrices.iter().find(|m| m.variant == "nogeo");
    let ablation = match (geo, nogeo) {
        (Some(g), Some(n)) => {
            let mut rows = Vec::new();
            let mut s = AblationSummary {
                geo_wins: 0,
                nogeo_wins: 0,
                ties: 0,
                undecided: 0,
            };
            for &t in g.train_regions.iter().filter(|t| n.train_regions.contains(t)) {
                for &e in g.eval_regions.iter().filter(|e| n.eval_regions.contains(e)) {
                    let w = Winner::between(g.cell(t, e), n.cell(t, e));
                    match w {
                        Winner::Geo => s.geo_wins += 1,
                        Winner::NoGeo => s.nogeo_wins += 1,
                        Winner::Tie => s.ties += 1,
                        Winner::Undecided => s.undecided += 1,
                    }
                    let label = serde_json::to_value(w).expect("winner serializes");
                    rows.push(vec![
                        t.to_string(),
                        e.to_string(),
                        fmt(g.crps(t, e), 6),
                        fmt(n.crps(t, e), 6),
                        label.as_str().unwrap_or_default().to_string(),
                    ]);
                }
            }
            let header = ["train_region", "eval_region", "geo_crps", "nogeo_crps", "winner"].map(String::from);
            write_csv(&out.join("ablation.csv"), &header, &rows)?;
            Some(s)
        }
        _ => None,
    };
    let summary = ReportSummary { variants, ablation };
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    write_atomic(&out.join("summary.json"), text.as_bytes())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn colour_range_is_fixed_and_clamped() {
        assert_eq!(color(-3.0), Rgb([68, 1, 84]));
        assert_eq!(color(-10.0), color(-3.0));
        assert_eq!(color(1.0), Rgb([253, 231, 37]));
        assert_eq!(color(5.0), color(1.0));
        assert_eq!(color(-1.0), Rgb([33, 145, 140]));
    }

    #[test]
    fn map_is_north_up_with_unscored_gray() {
        let grid = ScoreGrid {
            region: "X".into(),
            grid: GridSpec::new(0.0, 2.0, 0.0, 1.0, 1.0).unwrap(),
            mean_crps: vec![0.001, 10.0],
            hours_counted: vec![3, 0],
        };
        let img = render_map(&grid);
        assert_eq!(img.dimensions(), (MAP_SCALE, 2 * MAP_SCALE));
        assert_eq!(*img.get_pixel(0, 0), UNSCORED);
        assert_eq!(*img.get_pixel(0, MAP_SCALE), color(-3.0));
    }
}
