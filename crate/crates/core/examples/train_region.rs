//! Trains a desk-scale model on one synthetic region and compares it with
//! the bilinear baseline on the test hours.
//!
//! Usage: `train_region [REGION] [model-config.json]`

use std::time::Instant;

use precip_downscale::baseline::baseline_members;
use precip_downscale::datastore::{synth_generate, Store, SynthConfig, VariableId};
use precip_downscale::experiment::{temporal_split, SplitSpec};
use precip_downscale::grid::{region, RegionId};
use precip_downscale::model::{score_checkpoint, train, ModelConfig, TrainSplit};
use precip_downscale::preprocess::{compute_stats, StatsScope};
use precip_downscale::verify::{aggregate, improvement, score_region};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let id: RegionId = args.next().unwrap_or_else(|| "TE".into()).parse()?;
    let config = match args.next() {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => ModelConfig::desk(),
    };
    let dir = tempfile::tempdir()?;
    let store = Store::create(dir.path())?;
    let synth = synth_generate(&store, &SynthConfig::default(), 1)?;
    let s = temporal_split(&SplitSpec::default(), synth.hours)?;
    let r = region(id);
    let stats = compute_stats(&store, &r, s.train, StatsScope::FullDomain)?;

    let t0 = Instant::now();
    let out = train(
        &store,
        &r,
        stats,
        &config,
        TrainSplit {
            train: s.train,
            val: s.val,
        },
        None,
    )?;
    println!(
        "trained in {:.1?}; validation CRPS per epoch {:?}",
        t0.elapsed(),
        out.val_crps
    );

    let times: Vec<i64> = (s.test.start..s.test.end).collect();
    let model = aggregate(&score_checkpoint(&store, &out.best, &r, &times, 8, 99)?, false)?;
    let hr = store.grid(VariableId::TargetPrecip)?;
    let obs = store.read_window(VariableId::TargetPrecip, 0, s.test, &hr.window_for(&r.bbox)?)?;
    let baseline = aggregate(
        &score_region(&baseline_members(&store, &r, s.test)?, &obs, id.as_str())?,
        false,
    )?;
    println!(
        "{id}: model {model:.4} mm/h, baseline {baseline:.4} mm/h, improvement {:.1}%",
        100.0 * improvement(model, baseline)?
    );
    Ok(())
}
