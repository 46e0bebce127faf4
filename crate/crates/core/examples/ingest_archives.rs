//! Writes small gridded archives for a sub-domain and ingests them:
//! hourly predictors, half-hourly target pairs and static fields.

use precip_downscale::datastore::{
    ingest_predictors, ingest_static, ingest_target, ArchiveWriter, IngestMap, Store, VariableId,
};
use precip_downscale::grid::GridSpec;
use precip_downscale::hours::{year_start, HourRange};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let src = dir.path().join("src");
    let store = Store::create(dir.path().join("store"))?;
    let hours = HourRange::new(year_start(2001), year_start(2001) + 6);
    let lr = GridSpec::new(20.0, 25.0, -130.0, -120.0, 0.25)?;
    let hr = GridSpec::new(20.0, 25.0, -130.0, -120.0, 0.1)?;

    let minutes: Vec<i64> = (hours.start..hours.end).map(|t| t * 60).collect();
    let mut pred = ArchiveWriter::new(&lr, Some(&minutes), true);
    let n = minutes.len() * lr.cells();
    let fields: Vec<Vec<f32>> = VariableId::PREDICTORS
        .iter()
        .enumerate()
        .map(|(k, _)| (0..n).map(|i| ((i + k) % 17) as f32 * 0.1).collect())
        .collect();
    for (v, f) in VariableId::PREDICTORS.iter().zip(&fields) {
        pred.add_var(v.name(), "", None, f);
    }
    pred.write(src.join("era5.grda"))?;

    let half: Vec<i64> = (hours.start * 2..hours.end * 2).map(|s| s * 30).collect();
    let values: Vec<f32> = (0..half.len() * hr.cells()).map(|i| (i % 5) as f32).collect();
    ArchiveWriter::new(&hr, Some(&half), false)
        .add_var("precipitation", "mm/h", Some(-9999.9), &values)
        .write(src.join("imerg.grda"))?;
    let orog = vec![1500.0; hr.cells()];
    let lsm = vec![1.0; hr.cells()];
    ArchiveWriter::new(&hr, None, false)
        .add_var("orog", "m2 s-2", None, &orog)
        .add_var("lsm", "1", None, &lsm)
        .write(src.join("static.grda"))?;

    let mut map = IngestMap::identity();
    map.variables.get_mut(&VariableId::TargetPrecip).expect("mapped").source = "precipitation".into();
    for report in [
        ingest_predictors(&store, &src, hours, &lr, &map)?,
        ingest_target(&store, &src, hours, &hr, &map)?,
        ingest_static(&store, &src, &hr, &map)?,
    ] {
        for v in report.variables {
            println!(
                "{:<6} {} steps in {} chunk(s), {} missing",
                v.variable, v.steps, v.chunks, v.missing_values
            );
        }
    }
    println!("verified {} chunk files", store.verify()?);
    Ok(())
}
