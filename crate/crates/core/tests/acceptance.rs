//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.
//!
//! The transfer-matrix criteria train 45 desk-scale models on the 2 000-hour
//! synthetic store and take most of the runtime.

mod common;

use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::{quick_plan, six_hours, small_grids, synth_store, write_target};
use precip_downscale::baseline::bilinear_upsample;
use precip_downscale::datastore::{
    ingest_target, synth_generate, FieldChunk, IngestMap, Store, SynthConfig, VariableId,
};
use precip_downscale::experiment::{
    emit_report, load_results, run_ablation, run_matrix, temporal_split, transfer_properties, ExperimentPlan,
    RunOptions, SplitSpec, TransferMatrix, JOURNAL_FILE,
};
use precip_downscale::grid::{full_domain, partition, region, training_domains, GridSpec, RegionId, HR_RESOLUTION};
use precip_downscale::hours::HourRange;
use precip_downscale::model::{
    content_loss, forecast_region, grad_check, gradient_penalty, tiny_config, Checkpoint, ModelConfig, TrainConfig,
    Trainer,
};
use precip_downscale::preprocess::{compute_stats, log_fwd, log_inv, StatsScope, VarStats};
use precip_downscale::tape::{Tape, Tensor};
use precip_downscale::verify::{crps_empirical, crps_integral_oracle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Check + 'a>);
type AnyResult<T> = Result<T, Box<dyn Error>>;

const MATRIX_SEEDS: [u64; 3] = [1, 2, 3];
const STORE_SEED: u64 = 1;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn flatten(r: AnyResult<Check>) -> Check {
    r.unwrap_or_else(|e| Err(format!("error: {e}")))
}

fn crps_oracle() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let m = 1 + k % 16;
        let members: Vec<f64> = (0..m).map(|_| rng.random_range(-20.0..20.0)).collect();
        let y = rng.random_range(-25.0..25.0);
        let closed = crps_empirical(&members, y).map_err(|e| e.to_string())?;
        let quad = crps_integral_oracle(&members, y, 0.05);
        worst = worst.max((closed - quad).abs() / quad.abs().max(1e-12));
    }
    let dt = t0.elapsed();
    ensure(
        worst <= 1e-6 && dt < Duration::from_secs(10),
        format!("max relative difference {worst:.2e} over 1000 ensembles in {dt:.2?}"),
    )
}

fn deterministic_reduction() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bad = (0..1000)
        .filter(|_| {
            let (x, y) = (rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
            crps_empirical(&[x], y).ok() != Some((x - y).abs())
        })
        .count();
    ensure(bad == 0, format!("{bad} of 1000 pairs differ from |x - y|"))
}

fn gradient_contract() -> Check {
    let t0 = Instant::now();
    let r = grad_check(&tiny_config(), 11, None).map_err(|e| e.to_string())?;
    let dt = t0.elapsed();
    let worst = r
        .tensors
        .iter()
        .max_by(|a, b| a.max_rel_f32.total_cmp(&b.max_rel_f32))
        .map(|t| format!("{} {}", t.loss, t.name))
        .unwrap_or_default();
    ensure(
        r.max_rel_f32 <= 1e-3 && dt < Duration::from_secs(60),
        format!(
            "{} tensors, max relative error {:.2e} (f32, at {worst}) / {:.2e} (f64) in {dt:.1?}",
            r.tensors.len(),
            r.max_rel_f32,
            r.max_rel_f64
        ),
    )
}

fn loss_terms() -> AnyResult<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tape = Tape::<f64>::new();
    // Members target +/- d, with d a multiple of 1/8, so the mean is exact.
    let target: Vec<f64> = (0..2 * 25).map(|_| rng.random_range(-4i32..4) as f64 * 0.5).collect();
    let mut ens = Vec::new();
    for b in 0..2 {
        let t = &target[b * 25..(b + 1) * 25];
        for k in 0..8 {
            let d = (k / 2) as f64 * 0.125 * if k % 2 == 0 { 1.0 } else { -1.0 };
            ens.extend(t.iter().map(|v| v + d));
        }
    }
    let tv = tape.leaf(Tensor::new(vec![2, 1, 5, 5], target));
    let ev = tape.leaf(Tensor::new(vec![16, 1, 5, 5], ens));
    let content = content_loss(&mut tape, ev, 8, tv, None)?;
    let content = tape.value(content).item();

    let w: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let real = tape.leaf(Tensor::new(
        vec![3, 1, 2, 6],
        (0..36).map(|_| rng.random_range(-1.0..1.0)).collect(),
    ));
    let fake = tape.leaf(Tensor::new(
        vec![3, 1, 2, 6],
        (0..36).map(|_| rng.random_range(-1.0..1.0)).collect(),
    ));
    let gp = gradient_penalty(&mut tape, real, fake, &[0.1, 0.5, 0.8], |t, x| {
        let n = t.shape(x)[0];
        let wv = t.leaf(Tensor::new(vec![n, 1, 2, 6], w.repeat(n)));
        let p = t.mul(x, wv);
        Ok(t.sum_per_sample(p))
    })?;
    let gp = tape.value(gp).item();
    let want = (norm - 1.0).powi(2);
    let c = TrainConfig::default();
    let weights = (c.content_weight, c.gp_weight, c.content_ensemble);
    Ok(ensure(
        content == 0.0 && (gp - want).abs() <= 1e-12 * want.max(1.0) && weights == (300.0, 10.0, 8),
        format!("content loss {content}, penalty {gp:.12} vs (|w| - 1)^2 = {want:.12}, weights {weights:?}"),
    ))
}

fn matrix_plan(seed: u64, train: &[RegionId]) -> ExperimentPlan {
    ExperimentPlan {
        train_regions: train.to_vec(),
        seed,
        ..ExperimentPlan::default()
    }
}

fn own_region_improvement(work: &Path, store: &Store) -> AnyResult<Check> {
    let t0 = Instant::now();
    let run = run_matrix(
        store,
        &matrix_plan(MATRIX_SEEDS[0], &RegionId::ATOMIC),
        &work.join(format!("matrix_seed{}", MATRIX_SEEDS[0])),
        RunOptions::default(),
    )?;
    let dt = t0.elapsed();
    let scores = run.matrix.scores()?;
    let own: Vec<(RegionId, f64)> = RegionId::ATOMIC
        .iter()
        .map(|&r| {
            let s = scores
                .iter()
                .find(|s| s.train_region == r.as_str() && s.eval_region == r.as_str());
            (r, s.map_or(f64::NEG_INFINITY, |s| s.improvement))
        })
        .collect();
    let listed: Vec<String> = own.iter().map(|(r, v)| format!("{r} {:+.0}%", 100.0 * v)).collect();
    Ok(ensure(
        own.iter().all(|(_, v)| *v >= 0.10) && dt < Duration::from_secs(30 * 60),
        format!(
            "{} hours, {} epochs, {dt:.0?}: {}",
            run.splits.span().len(),
            ModelConfig::desk().train.epochs,
            listed.join(", ")
        ),
    ))
}

fn transfer_matrix_properties(work: &Path, store: &Store) -> AnyResult<Check> {
    let all: Vec<RegionId> = RegionId::ATOMIC.iter().chain(&RegionId::COMPOSITE).copied().collect();
    let mut matrices: Vec<TransferMatrix> = Vec::new();
    for seed in MATRIX_SEEDS {
        let run = run_matrix(
            store,
            &matrix_plan(seed, &all),
            &work.join(format!("matrix_seed{seed}")),
            RunOptions::default(),
        )?;
        if !run.is_complete() {
            return Ok(Err(format!("seed {seed}: matrix incomplete")));
        }
        matrices.push(run.matrix);
    }
    let p = transfer_properties(&matrices);
    let failures: Vec<String> = p.superset_failures.iter().map(|(c, r)| format!("{c}->{r}")).collect();
    Ok(ensure(
        p.diagonal_checked == 9
            && p.diagonal_wins >= 7
            && p.superset_checked > 0
            && p.superset_pass == p.superset_checked,
        format!(
            "diagonal {}/{} (losing {:?}), superset {}/{}{}",
            p.diagonal_wins,
            p.diagonal_checked,
            p.diagonal_losers,
            p.superset_pass,
            p.superset_checked,
            if failures.is_empty() {
                String::new()
            } else {
                format!(" (failing {})", failures.join(", "))
            }
        ),
    ))
}

fn region_algebra() -> AnyResult<Check> {
    let t0 = Instant::now();
    let domains = training_domains();
    let hr = full_domain(HR_RESOLUTION)?;
    let mut owner = vec![0u8; hr.cells()];
    let mut shapes_ok = true;
    for r in partition() {
        let w = hr.window_for(&r.bbox)?;
        shapes_ok &= (w.rows(), w.cols()) == (400, 1000);
        for i in w.lat.clone() {
            for j in w.lon.clone() {
                owner[i * hr.n_lon + j] += 1;
                shapes_ok &= r.bbox.contains(hr.lat_center(i), hr.lon_center(j));
            }
        }
    }
    let exact_once = owner.iter().all(|&n| n == 1);
    let nw = region(RegionId::NW).bbox;
    let nw_ok = (nw.lat_min, nw.lat_max, nw.lon_min, nw.lon_max) == (20.0, 60.0, -130.0, -30.0);
    let dt = t0.elapsed();
    Ok(ensure(
        domains.len() == 15 && (hr.n_lat, hr.n_lon) == (1200, 3000) && exact_once && shapes_ok && nw_ok && dt.as_secs() < 5,
        format!(
            "{} domains, HR {}x{}, every cell owned once: {exact_once}, 400x1000 subregions: {shapes_ok}, NW bounds: {nw_ok}, {dt:.2?}",
            domains.len(),
            hr.n_lat,
            hr.n_lon
        ),
    ))
}

fn pipeline_exactness(work: &Path) -> AnyResult<Check> {
    let dir = work.join("pipeline");
    let store = Store::create(dir.join("store"))?;
    let (_, hr) = small_grids();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let values: Vec<f32> = (0..30 * hr.cells())
        .map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff))
        .collect();
    let chunk = FieldChunk::new(VariableId::Tp, six_hours().start, hr, values.clone())?;
    store.write_series(&chunk)?;
    let back = Store::open(dir.join("store"))?.read_window(VariableId::Tp, 0, chunk.time_range(), &hr.full_window())?;
    let round_trip = back.values.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits());

    let src = dir.join("src");
    write_target(
        &src,
        "imerg.grda",
        &hr,
        six_hours(),
        |s, _| if s % 2 == 0 { 1.0 } else { 3.0 },
    );
    ingest_target(&store, &src, six_hours(), &hr, &IngestMap::identity())?;
    let paired = store.read_window(VariableId::TargetPrecip, 0, six_hours(), &hr.full_window())?;
    let pairing = paired.values.iter().all(|&v| v == 2.0);

    let log_err = (0..=50_000)
        .map(|k| {
            let x = k as f64 * 0.01;
            (log_inv(log_fwd(x).unwrap()) - x).abs() / x.max(1e-5)
        })
        .fold(0.0, f64::max);
    let s = VarStats {
        mean: 1.7,
        std: 3.2,
        log_transformed: false,
        count: 1,
    };
    let norm_err = (0..10_000)
        .map(|_| {
            let z: f64 = rng.random_range(-8.0..8.0);
            (s.normalize(s.denormalize(z)) - z).abs() / z.abs().max(1e-5)
        })
        .fold(0.0, f64::max);

    let (synth, summary) = synth_store(&dir.join("synth"), 240, 3);
    let train = temporal_split(&SplitSpec::default(), summary.hours)?.train;
    let stats = compute_stats(&synth, &region(RegionId::TM), train, StatsScope::FullDomain)?;
    let mut worst = 0.0f64;
    for v in VariableId::PREDICTORS.into_iter().chain([VariableId::TargetPrecip]) {
        let c = synth.read_window(v, 0, train, &synth.grid(v)?.full_window())?;
        let mut z = vec![0.0; c.values.len()];
        stats.normalize(v, &c.values, &mut z)?;
        let n = z.len() as f64;
        let mean = z.iter().map(|&x| x as f64).sum::<f64>() / n;
        let std = (z.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst = worst.max(mean.abs()).max((std - 1.0).abs());
    }
    Ok(ensure(
        round_trip && pairing && log_err <= 1e-6 && norm_err <= 1e-6 && worst <= 1e-4,
        format!(
            "round trip {round_trip}, (1.0, 3.0) -> 2.0 {pairing}, log {log_err:.1e}, normalize {norm_err:.1e}, renormalized stats off by {worst:.1e}"
        ),
    ))
}

fn bilinear_baseline() -> AnyResult<Check> {
    let coarse = GridSpec::new(0.0, 5.0, 0.0, 10.0, 0.25)?;
    let fine = GridSpec::new(0.0, 5.0, 0.0, 10.0, 0.1)?;
    let (lat_lo, lat_hi) = (coarse.lat_center(0), coarse.lat_center(coarse.n_lat - 1));
    let (lon_lo, lon_hi) = (coarse.lon_center(0), coarse.lon_center(coarse.n_lon - 1));
    let interior: Vec<(usize, f64, f64)> = (0..fine.n_lat)
        .flat_map(|i| (0..fine.n_lon).map(move |j| (i, j)))
        .map(|(i, j)| (i * fine.n_lon + j, fine.lat_center(i), fine.lon_center(j)))
        .filter(|&(_, la, lo)| (lat_lo..=lat_hi).contains(&la) && (lon_lo..=lon_hi).contains(&lo))
        .collect();

    let constant = bilinear_upsample(&vec![2.75; coarse.cells()], &coarse, &fine)?;
    let const_ok = constant.iter().all(|&v| v == 2.75);
    let plane = |la: f64, lo: f64| 0.5 + 0.25 * la - 0.125 * lo;
    let f: Vec<f32> = (0..coarse.cells())
        .map(|k| plane(coarse.lat_center(k / coarse.n_lon), coarse.lon_center(k % coarse.n_lon)) as f32)
        .collect();
    let up = bilinear_upsample(&f, &coarse, &fine)?;
    let lin_err = interior
        .iter()
        .map(|&(k, la, lo)| (up[k] as f64 - plane(la, lo)).abs())
        .fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let small = GridSpec::new(0.0, 1.0, 0.0, 1.5, 0.25)?;
    let small_fine = GridSpec::new(0.0, 1.0, 0.0, 1.5, 0.1)?;
    let mut hull_violations = 0;
    for _ in 0..1000 {
        let v: Vec<f32> = (0..small.cells()).map(|_| rng.random_range(-50.0..50.0)).collect();
        let lo = v.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let out = bilinear_upsample(&v, &small, &small_fine)?;
        hull_violations += out.iter().filter(|&&x| x < lo || x > hi).count();
    }
    Ok(ensure(
        const_ok && lin_err <= 1e-5 && hull_violations == 0,
        format!(
            "constant exact {const_ok}, linear max error {lin_err:.1e} at {} interior centres (f32 storage), {hull_violations} hull violations in 1000 fields",
            interior.len()
        ),
    ))
}

fn static_bits(store: &Store, ck: &Checkpoint, hours: HourRange) -> AnyResult<Vec<u32>> {
    Ok(forecast_region(store, ck, &region(RegionId::NE), hours, 2, 5)?
        .iter()
        .flat_map(|m| m.values.iter().map(|x| x.to_bits()))
        .collect())
}

fn ablation_plumbing(work: &Path) -> AnyResult<Check> {
    let (store, s) = synth_store(&work.join("ablation_store"), 300, 6);
    let stats = compute_stats(&store, &region(RegionId::NE), s.hours, StatsScope::FullDomain)?;
    let off = Checkpoint::init(ModelConfig::desk().with_static_inputs(false), stats.clone())?;
    let on = Checkpoint::init(ModelConfig::desk(), stats)?;
    let hours = HourRange::new(s.hours.start, s.hours.start + 4);
    let (off0, on0) = (static_bits(&store, &off, hours)?, static_bits(&store, &on, hours)?);
    for v in [VariableId::Orog, VariableId::Lsm] {
        let c = store.read_static(v, &store.grid(v)?.full_window())?;
        let values = c.values.iter().map(|x| 1.0 - x * 0.3).collect();
        store.write_chunk(&FieldChunk::new(v, c.start_time, c.grid, values)?)?;
    }
    let off_same = static_bits(&store, &off, hours)? == off0;
    let on_moves = static_bits(&store, &on, hours)? != on0;

    let plan = quick_plan(&[RegionId::NE], &RegionId::ATOMIC);
    let run = run_ablation(&store, &plan, &work.join("ablation"), RunOptions::default())?;
    let matched = run.geo.matrix.train_regions == run.nogeo.matrix.train_regions
        && run.geo.matrix.eval_regions == run.nogeo.matrix.eval_regions;
    let complete = run.geo.is_complete() && run.nogeo.is_complete();
    Ok(ensure(
        off_same && on_moves && matched && complete && run.winners.len() == 9,
        format!(
            "static-off outputs bit-identical {off_same} (static-on outputs change {on_moves}); geo {} + nogeo {} cells, matched {matched}",
            run.geo.matrix.cells.len(),
            run.nogeo.matrix.cells.len()
        ),
    ))
}

fn loss_curve(store: &Store, train: HourRange) -> AnyResult<Vec<[u64; 5]>> {
    let r = region(RegionId::SW);
    let stats = compute_stats(store, &r, train, StatsScope::FullDomain)?;
    let mut t = Trainer::new(store, &r, stats, ModelConfig::desk(), train)?;
    (0..50)
        .map(|_| {
            let l = t.step()?;
            Ok([l.critic, l.generator, l.content, l.gp, l.wasserstein].map(f64::to_bits))
        })
        .collect()
}

fn read_tree(dir: &Path) -> AnyResult<Vec<(PathBuf, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir)?.to_path_buf(), fs::read(&p)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn journal_lines(path: &Path) -> usize {
    fs::read_to_string(path).map_or(0, |t| t.lines().count())
}

fn determinism_and_resume(work: &Path) -> AnyResult<Check> {
    let root = work.join("resume");
    let (store, s) = synth_store(&root.join("store"), 300, 10);
    let train = temporal_split(&SplitSpec::default(), s.hours)?.train;
    let curves_equal = loss_curve(&store, train)? == loss_curve(&store, train)?;

    let plan = quick_plan(
        &[RegionId::TW, RegionId::W],
        &[RegionId::NW, RegionId::TW, RegionId::SW],
    );
    let plan_path = root.join("plan.json");
    fs::write(&plan_path, serde_json::to_vec(&plan)?)?;
    let whole = root.join("whole");
    run_matrix(&store, &plan, &whole, RunOptions::default())?;

    // Kill a separate process once it has journaled at least one cell.
    let parts = root.join("parts");
    let mut child = Command::new(env!("CARGO_BIN_EXE_precip-downscale"))
        .args(["matrix", "--plan"])
        .arg(&plan_path)
        .arg("--store")
        .arg(root.join("store"))
        .arg("--out")
        .arg(&parts)
        .env("RUST_LOG", "warn")
        .spawn()?;
    let journal = parts.join(JOURNAL_FILE);
    let mut interrupted = false;
    while child.try_wait()?.is_none() {
        if journal_lines(&journal) >= 5 {
            child.kill()?;
            interrupted = true;
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    child.wait()?;
    let at_kill = journal_lines(&journal);
    let resumed = run_matrix(&store, &plan, &parts, RunOptions::default())?;

    let (ra, rb) = (root.join("report_whole"), root.join("report_resumed"));
    emit_report(&load_results(&whole)?, &whole, &ra)?;
    emit_report(&load_results(&parts)?, &parts, &rb)?;
    let identical = read_tree(&ra)? == read_tree(&rb)?;
    Ok(ensure(
        curves_equal && interrupted && resumed.is_complete() && identical,
        format!(
            "50-step loss curves identical {curves_equal}; killed after {at_kill} journal lines (interrupted {interrupted}), resumed {} cells, report byte-identical {identical}",
            resumed.new_cells
        ),
    ))
}

fn main() -> ExitCode {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let tmp = tempfile::tempdir().expect("temp dir");
    let work = tmp.path();
    let store = Store::create(work.join("synthetic")).expect("store");
    synth_generate(&store, &SynthConfig::default(), STORE_SEED).expect("synthetic store");

    let checks: Vec<Criterion<'_>> = vec![
        ("CRPS oracle equivalence", Box::new(crps_oracle)),
        (
            "single-member CRPS is absolute error",
            Box::new(deterministic_reduction),
        ),
        ("gradient contract", Box::new(gradient_contract)),
        ("loss-term unit checks", Box::new(|| flatten(loss_terms()))),
        (
            "own-region improvement over bilinear",
            Box::new(|| flatten(own_region_improvement(work, &store))),
        ),
        (
            "diagonal and superset transfer properties",
            Box::new(|| flatten(transfer_matrix_properties(work, &store))),
        ),
        ("region algebra", Box::new(|| flatten(region_algebra()))),
        ("pipeline exactness", Box::new(|| flatten(pipeline_exactness(work)))),
        ("bilinear baseline", Box::new(|| flatten(bilinear_baseline()))),
        ("ablation plumbing", Box::new(|| flatten(ablation_plumbing(work)))),
        (
            "determinism and resumability",
            Box::new(|| flatten(determinism_and_resume(work))),
        ),
    ];
    // Optional criterion numbers on the command line restrict the run.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in checks.into_iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {:>2} {name} ({:.1?}): {detail}", i + 1, t0.elapsed());
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
