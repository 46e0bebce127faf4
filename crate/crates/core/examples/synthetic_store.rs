//! Writes the procedural store and prints per-region wetness.

use precip_downscale::datastore::{synth_generate, Store, SynthConfig, VariableId};
use precip_downscale::grid::{region, RegionId};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let store = Store::create(dir.path())?;
    let cfg = SynthConfig {
        hours: 240,
        ..SynthConfig::default()
    };
    let summary = synth_generate(&store, &cfg, 7)?;
    println!(
        "{} chunks, LR {}x{}, HR {}x{}, hours {}",
        summary.chunks,
        summary.lr_grid.n_lat,
        summary.lr_grid.n_lon,
        summary.hr_grid.n_lat,
        summary.hr_grid.n_lon,
        summary.hours
    );
    let hr = store.grid(VariableId::TargetPrecip)?;
    for id in RegionId::ATOMIC {
        let w = hr.window_for(&region(id).bbox)?;
        let obs = store.read_window(VariableId::TargetPrecip, 0, summary.hours, &w)?;
        let n = obs.values.len() as f64;
        let mean = obs.values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let dry = obs.values.iter().filter(|&&v| v == 0.0).count() as f64 / n;
        println!("{}: mean {mean:.3} mm/h, dry fraction {dry:.2}", id.as_str());
    }
    Ok(())
}
