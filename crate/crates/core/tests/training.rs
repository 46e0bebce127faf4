mod common;

use common::synth_store;
use precip_downscale::datastore::{FieldChunk, Store, VariableId};
use precip_downscale::experiment::{temporal_split, SplitSpec};
use precip_downscale::grid::{region, RegionId};
use precip_downscale::hours::HourRange;
use precip_downscale::model::{forecast_region, Checkpoint, ModelConfig, Trainer};
use precip_downscale::preprocess::{compute_stats, StatsScope};

fn loss_curve(store: &Store, train: HourRange, seed: u64, steps: usize) -> Vec<[u64; 5]> {
    let r = region(RegionId::TM);
    let stats = compute_stats(store, &r, train, StatsScope::FullDomain).unwrap();
    let mut config = ModelConfig::desk();
    config.train.seed = seed;
    let mut t = Trainer::new(store, &r, stats, config, train).unwrap();
    (0..steps)
        .map(|_| {
            let l = t.step().unwrap();
            [l.critic, l.generator, l.content, l.gp, l.wasserstein].map(f64::to_bits)
        })
        .collect()
}

#[test]
fn fixed_seed_gives_identical_loss_curves() {
    let dir = tempfile::tempdir().unwrap();
    let (store, s) = synth_store(dir.path(), 240, 2);
    let train = temporal_split(&SplitSpec::default(), s.hours).unwrap().train;
    let a = loss_curve(&store, train, 7, 50);
    assert_eq!(a, loss_curve(&store, train, 7, 50));
    assert_ne!(a, loss_curve(&store, train, 8, 50));
}

fn perturb_statics(store: &Store) {
    for v in [VariableId::Orog, VariableId::Lsm] {
        let grid = store.grid(v).unwrap();
        let c = store.read_static(v, &grid.full_window()).unwrap();
        let values = c
            .values
            .iter()
            .enumerate()
            .map(|(i, x)| x * 0.5 + (i % 7) as f32 * 0.1)
            .collect();
        store
            .write_chunk(&FieldChunk::new(v, c.start_time, c.grid, values).unwrap())
            .unwrap();
    }
}

#[test]
fn disabled_static_inputs_ignore_orography_and_land_sea() {
    let dir = tempfile::tempdir().unwrap();
    let (store, s) = synth_store(dir.path(), 96, 3);
    let r = region(RegionId::SE);
    let hours = HourRange::new(s.hours.start, s.hours.start + 6);
    let stats = compute_stats(&store, &r, s.hours, StatsScope::FullDomain).unwrap();
    let with = Checkpoint::init(ModelConfig::desk(), stats.clone()).unwrap();
    let without = Checkpoint::init(ModelConfig::desk().with_static_inputs(false), stats).unwrap();
    let run = |ck: &Checkpoint| -> Vec<Vec<u32>> {
        forecast_region(&store, ck, &r, hours, 3, 11)
            .unwrap()
            .iter()
            .map(|m| m.values.iter().map(|x| x.to_bits()).collect())
            .collect()
    };
    let (with_before, without_before) = (run(&with), run(&without));
    perturb_statics(&store);
    assert_eq!(run(&without), without_before);
    assert_ne!(run(&with), with_before);
}
