//! Short training run, then an 8-member forecast written to a store and
//! scored member by member.

use precip_downscale::datastore::{synth_generate, ProductId, Store, SynthConfig, VariableId};
use precip_downscale::experiment::{temporal_split, SplitSpec};
use precip_downscale::grid::{region, RegionId};
use precip_downscale::model::{forecast_region, train, ModelConfig, TrainSplit};
use precip_downscale::preprocess::{compute_stats, StatsScope};
use precip_downscale::verify::{aggregate, score_region};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let store = Store::create(dir.path().join("store"))?;
    let synth = synth_generate(
        &store,
        &SynthConfig {
            hours: 400,
            ..SynthConfig::default()
        },
        2,
    )?;
    let s = temporal_split(&SplitSpec::default(), synth.hours)?;
    let r = region(RegionId::TM);
    let stats = compute_stats(&store, &r, s.train, StatsScope::FullDomain)?;
    let mut config = ModelConfig::desk();
    config.train.epochs = 2;
    config.train.steps_per_epoch = Some(40);
    let ck = train(
        &store,
        &r,
        stats,
        &config,
        TrainSplit {
            train: s.train,
            val: s.val,
        },
        None,
    )?
    .best;

    let out = Store::create(dir.path().join("forecast"))?;
    let members = forecast_region(&store, &ck, &r, s.test, 8, 5)?;
    for m in &members {
        out.write_series(m)?;
    }
    println!(
        "wrote {} members over {} to {}",
        members.len(),
        s.test,
        out.root().display()
    );

    let hr = store.grid(VariableId::TargetPrecip)?;
    let obs = store.read_window(VariableId::TargetPrecip, 0, s.test, &hr.window_for(&r.bbox)?)?;
    let grid = out.grid(ProductId::ForecastPrecip)?;
    let read: Vec<_> = (0..8)
        .map(|k| out.read_window(ProductId::ForecastPrecip, k, s.test, &grid.full_window()))
        .collect::<Result<_, _>>()?;
    let ens = aggregate(&score_region(&read, &obs, "TM")?, false)?;
    let single = aggregate(&score_region(&read[..1], &obs, "TM")?, false)?;
    println!("CRPS: 8 members {ens:.4} mm/h, first member alone (MAE) {single:.4} mm/h");
    Ok(())
}
