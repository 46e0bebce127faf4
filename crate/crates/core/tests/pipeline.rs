mod common;

use common::{six_hours, small_grids, synth_store, write_target};
use precip_downscale::datastore::{
    ingest_predictors, ingest_target, sha256_hex, ArchiveWriter, FieldChunk, IngestMap, Store, StoreError, VariableId,
};
use precip_downscale::grid::{region, RegionId};
use precip_downscale::hours::{year_start, HourRange};
use precip_downscale::preprocess::{compute_stats, log_fwd, log_inv, StatsScope};

#[test]
fn chunk_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::create(dir.path()).unwrap();
    let (_, hr) = small_grids();
    let n = 40 * hr.cells();
    let values: Vec<f32> = (0..n)
        .map(|i| f32::from_bits(0x3a00_0000 + (i as u32).wrapping_mul(2_654_435_761) % 0x0800_0000))
        .collect();
    let start = year_start(2001) + 24 * 31 - 20;
    let chunk = FieldChunk::new(VariableId::TargetPrecip, start, hr, values.clone()).unwrap();
    assert_eq!(store.write_series(&chunk).unwrap().len(), 2);
    let reopened = Store::open(dir.path()).unwrap();
    let back = reopened
        .read_window(VariableId::TargetPrecip, 0, chunk.time_range(), &hr.full_window())
        .unwrap();
    assert!(back.values.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(reopened.verify().unwrap(), 2);
}

#[test]
fn half_hour_pair_is_averaged() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    let store = Store::create(dir.path().join("store")).unwrap();
    let (_, hr) = small_grids();
    write_target(
        &src,
        "imerg.grda",
        &hr,
        six_hours(),
        |s, _| if s % 2 == 0 { 1.0 } else { 3.0 },
    );
    ingest_target(&store, &src, six_hours(), &hr, &IngestMap::identity()).unwrap();
    let c = store
        .read_window(VariableId::TargetPrecip, 0, six_hours(), &hr.full_window())
        .unwrap();
    assert!(c.values.iter().all(|&v| v == 2.0));
    assert_eq!(c.missing_count(), 0);
}

#[test]
fn a_negative_half_hour_masks_the_hour() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    let store = Store::create(dir.path().join("store")).unwrap();
    let (_, hr) = small_grids();
    write_target(&src, "imerg.grda", &hr, six_hours(), |s, c| {
        if s == 3 && c == 0 {
            -9999.9
        } else {
            0.5
        }
    });
    let report = ingest_target(&store, &src, six_hours(), &hr, &IngestMap::identity()).unwrap();
    assert_eq!(report.variables[0].missing_values, 1);
    let c = store
        .read_window(VariableId::TargetPrecip, 0, six_hours(), &hr.full_window())
        .unwrap();
    assert!(c.is_missing(hr.cells()));
}

#[test]
fn missing_predictor_hour_is_a_gap_error() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    let store = Store::create(dir.path().join("store")).unwrap();
    let (lr, _) = small_grids();
    let hours = six_hours();
    let minutes: Vec<i64> = (hours.start..hours.end)
        .filter(|&t| t != hours.start + 2)
        .map(|t| t * 60)
        .collect();
    let mut w = ArchiveWriter::new(&lr, Some(&minutes), true);
    let zeros = vec![0.0; minutes.len() * lr.cells()];
    for v in VariableId::PREDICTORS {
        w.add_var(v.name(), "", None, &zeros);
    }
    w.write(src.join("era5.grda")).unwrap();
    let err = ingest_predictors(&store, &src, hours, &lr, &IngestMap::identity()).unwrap_err();
    assert!(matches!(err, StoreError::Gap { missing: 1, .. }), "{err}");
}

#[test]
fn synthetic_store_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let digest = |sub: &str, seed| {
        let (store, _) = synth_store(&dir.path().join(sub), 48, seed);
        let mut shas: Vec<String> = store.manifest().chunks.iter().map(|c| c.sha256.clone()).collect();
        shas.sort();
        sha256_hex(shas.concat().as_bytes())
    };
    assert_eq!(digest("a", 3), digest("b", 3));
    assert_ne!(digest("a", 3), digest("c", 4));
}

#[test]
fn log_transform_inverts_on_the_physical_range() {
    for k in 0..=5000 {
        let x = k as f64 * 0.1;
        let back = log_inv(log_fwd(x).unwrap());
        assert!((back - x).abs() <= 1e-6 * x.max(1e-5), "{x} -> {back}");
    }
}

#[test]
fn renormalized_training_fields_are_standard() {
    let dir = tempfile::tempdir().unwrap();
    let (store, s) = synth_store(dir.path(), 96, 5);
    let train = HourRange::new(s.hours.start, s.hours.start + 72);
    for (scope, id) in [
        (StatsScope::FullDomain, RegionId::NW),
        (StatsScope::TrainRegion, RegionId::T),
    ] {
        let r = region(id);
        let stats = compute_stats(&store, &r, train, scope).unwrap();
        let again = compute_stats(&store, &r, train, scope).unwrap();
        assert_eq!(stats, again);
        for v in VariableId::PREDICTORS.into_iter().chain([VariableId::TargetPrecip]) {
            let grid = store.grid(v).unwrap();
            let windows = match scope {
                StatsScope::FullDomain => vec![grid.full_window()],
                StatsScope::TrainRegion => precip_downscale::grid::slice(&grid, &r)
                    .unwrap()
                    .into_iter()
                    .map(|(_, w)| w)
                    .collect(),
            };
            let mut z = Vec::new();
            for w in windows {
                let c = store.read_window(v, 0, train, &w).unwrap();
                let mut out = vec![0.0; c.values.len()];
                stats.normalize(v, &c.values, &mut out).unwrap();
                z.extend(out.iter().map(|&x| x as f64));
            }
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let std = (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(
                mean.abs() < 1e-4 && (std - 1.0).abs() < 1e-4,
                "{v}: mean {mean} std {std}"
            );
        }
    }
}
