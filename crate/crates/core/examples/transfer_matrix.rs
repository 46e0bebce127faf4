//! A reduced transfer matrix (two training regions, three evaluation
//! regions), interrupted and resumed, then rendered as a report.

use precip_downscale::datastore::{synth_generate, Store, SynthConfig};
use precip_downscale::experiment::{emit_report, load_results, run_matrix, ExperimentPlan, RunOptions};
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
        4,
    )?;
    let mut plan = ExperimentPlan {
        train_regions: vec![RegionId::SW, RegionId::S],
        eval_regions: vec![RegionId::SW, RegionId::SM, RegionId::SE],
        ..ExperimentPlan::default()
    };
    plan.model.train.epochs = 2;
    plan.model.train.steps_per_epoch = Some(30);
    let results = dir.path().join("results");

    let first = run_matrix(&store, &plan, &results, RunOptions { max_new_cells: Some(4) })?;
    println!(
        "first pass stopped after {} cells (complete: {})",
        first.new_cells,
        first.is_complete()
    );
    let done = run_matrix(&store, &plan, &results, RunOptions::default())?;
    println!(
        "resumed: {} more cells (complete: {})",
        done.new_cells,
        done.is_complete()
    );
    for s in done.matrix.scores()? {
        println!(
            "{} -> {}: CRPS {:.4}, baseline {:.4}, improvement {:+.1}%",
            s.train_region,
            s.eval_region,
            s.crps,
            s.baseline_crps,
            100.0 * s.improvement
        );
    }
    let report = dir.path().join("report");
    let summary = emit_report(&load_results(&results)?, &results, &report)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
