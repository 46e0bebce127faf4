//! Matched runs with and without the orography / land-sea inputs.

use precip_downscale::datastore::{synth_generate, Store, SynthConfig};
use precip_downscale::experiment::{run_ablation, ExperimentPlan, RunOptions};
use precip_downscale::grid::RegionId;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let store = Store::create(dir.path().join("store"))?;
    synth_generate(
        &store,
        &SynthConfig {
            hours: 400,
            ..SynthConfig::default()
        },
        6,
    )?;
    let mut plan = ExperimentPlan {
        train_regions: vec![RegionId::NE],
        eval_regions: vec![RegionId::NE, RegionId::TE],
        ..ExperimentPlan::default()
    };
    plan.model.train.epochs = 2;
    plan.model.train.steps_per_epoch = Some(30);
    let run = run_ablation(&store, &plan, &dir.path().join("results"), RunOptions::default())?;
    for (t, e, w) in &run.winners {
        println!(
            "{t} -> {e}: geo {:?}, no geo {:?}, winner {w:?}",
            run.geo.matrix.crps(*t, *e),
            run.nogeo.matrix.crps(*t, *e)
        );
    }
    Ok(())
}
