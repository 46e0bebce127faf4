//! Log transform and standardization statistics of a training region.

use precip_downscale::datastore::{synth_generate, Store, SynthConfig, VariableId};
use precip_downscale::grid::{region, RegionId};
use precip_downscale::preprocess::{compute_stats, log_fwd, log_inv, StatsScope};

fn main() -> anyhow::Result<()> {
    for x in [0.0, 0.1, 12.5, 500.0] {
        let z = log_fwd(x)?;
        println!("log_fwd({x}) = {z:.6}, log_inv back = {:.6}", log_inv(z));
    }
    let dir = tempfile::tempdir()?;
    let store = Store::create(dir.path())?;
    let cfg = SynthConfig {
        hours: 120,
        ..SynthConfig::default()
    };
    let summary = synth_generate(&store, &cfg, 3)?;
    for scope in [StatsScope::TrainRegion, StatsScope::FullDomain] {
        let stats = compute_stats(&store, &region(RegionId::TM), summary.hours, scope)?;
        println!("{scope:?}:");
        for (v, s) in &stats.variables {
            println!(
                "  {:<6} mean {:>12.4} std {:>10.4} log {}",
                v.name(),
                s.mean,
                s.std,
                s.log_transformed
            );
        }
        let t = stats.get(VariableId::TargetPrecip)?;
        println!("  2 mm/h normalizes to {:.4}", t.normalize(2.0));
    }
    Ok(())
}
