#![allow(dead_code)]

use std::path::Path;

use precip_downscale::datastore::{synth_generate, ArchiveWriter, Store, SynthConfig, SynthSummary};
use precip_downscale::experiment::ExperimentPlan;
use precip_downscale::grid::{GridSpec, RegionId};
use precip_downscale::hours::{year_start, HourRange};

/// Six hours at the start of 2001.
pub fn six_hours() -> HourRange {
    HourRange::new(year_start(2001), year_start(2001) + 6)
}

pub fn small_grids() -> (GridSpec, GridSpec) {
    (
        GridSpec::new(20.0, 25.0, -130.0, -120.0, 0.25).unwrap(),
        GridSpec::new(20.0, 25.0, -130.0, -120.0, 0.1).unwrap(),
    )
}

/// Half-hourly target archive for `hours`; `value(slot, cell)` gives each value.
pub fn write_target(dir: &Path, name: &str, grid: &GridSpec, hours: HourRange, value: impl Fn(usize, usize) -> f32) {
    let half: Vec<i64> = (hours.start * 2..hours.end * 2).map(|s| s * 30).collect();
    let values: Vec<f32> = (0..half.len())
        .flat_map(|s| (0..grid.cells()).map(move |c| (s, c)))
        .map(|(s, c)| value(s, c))
        .collect();
    ArchiveWriter::new(grid, Some(&half), false)
        .add_var("target_precip", "mm/h", Some(-9999.9), &values)
        .write(dir.join(name))
        .unwrap();
}

/// A synthetic store of `hours` hours.
pub fn synth_store(root: &Path, hours: usize, seed: u64) -> (Store, SynthSummary) {
    let store = Store::create(root).unwrap();
    let s = synth_generate(
        &store,
        &SynthConfig {
            hours,
            ..SynthConfig::default()
        },
        seed,
    )
    .unwrap();
    (store, s)
}

/// A plan with very short training, for plumbing tests.
pub fn quick_plan(train: &[RegionId], eval: &[RegionId]) -> ExperimentPlan {
    let mut plan = ExperimentPlan {
        train_regions: train.to_vec(),
        eval_regions: eval.to_vec(),
        ..ExperimentPlan::default()
    };
    plan.model.train.epochs = 2;
    plan.model.train.steps_per_epoch = Some(10);
    plan
}
