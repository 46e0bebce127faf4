//! Bilinear upsampling of the coarse `tp` field, scored against the target.

use precip_downscale::baseline::{baseline_members, bilinear_upsample};
use precip_downscale::datastore::{synth_generate, Store, SynthConfig, VariableId};
use precip_downscale::grid::{region, GridSpec, RegionId};
use precip_downscale::verify::{aggregate, score_region};

fn main() -> anyhow::Result<()> {
    let coarse = GridSpec::new(0.0, 1.0, 0.0, 1.0, 0.5)?;
    let fine = GridSpec::new(0.0, 1.0, 0.0, 1.0, 0.25)?;
    let up = bilinear_upsample(&[0.0, 1.0, 2.0, 3.0], &coarse, &fine)?;
    for row in up.chunks(fine.n_lon).rev() {
        println!("{row:?}");
    }

    let dir = tempfile::tempdir()?;
    let store = Store::create(dir.path())?;
    let cfg = SynthConfig {
        hours: 96,
        ..SynthConfig::default()
    };
    let s = synth_generate(&store, &cfg, 1)?;
    let hr = store.grid(VariableId::TargetPrecip)?;
    for id in RegionId::ATOMIC {
        let r = region(id);
        let obs = store.read_window(VariableId::TargetPrecip, 0, s.hours, &hr.window_for(&r.bbox)?)?;
        let grid = score_region(&baseline_members(&store, &r, s.hours)?, &obs, id.as_str())?;
        println!("{}: baseline CRPS {:.4} mm/h", id.as_str(), aggregate(&grid, false)?);
    }
    Ok(())
}
