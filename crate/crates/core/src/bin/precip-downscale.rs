use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use precip_downscale::baseline::baseline_forecast;
use precip_downscale::datastore::{
    ingest_predictors, ingest_static, ingest_target, synth_generate, IngestMap, ProductId, Store, SynthConfig,
    VariableId,
};
use precip_downscale::experiment::{
    emit_report, load_results, run_ablation, run_matrix, store_coverage, temporal_split, ExperimentPlan, RunOptions,
    SplitSpec,
};
use precip_downscale::grid::{full_domain, region, GridSpec, RegionId, HR_RESOLUTION, LR_RESOLUTION};
use precip_downscale::hours::HourRange;
use precip_downscale::model::{forecast_region, grad_check, tiny_config, train, Checkpoint, ModelConfig, TrainSplit};
use precip_downscale::preprocess::{compute_stats, NormStats, StatsScope};
use precip_downscale::verify::{aggregate, score_region, RegionalScore};

#[derive(Parser)]
#[command(
    name = "precip-downscale",
    version,
    about = "Stochastic precipitation downscaling and transfer benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Predictors,
    Target,
    Static,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    TrainRegion,
    FullDomain,
}

impl From<Scope> for StatsScope {
    fn from(s: Scope) -> Self {
        match s {
            Scope::TrainRegion => StatsScope::TrainRegion,
            Scope::FullDomain => StatsScope::FullDomain,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    /// 80/10/10 of the store's coverage.
    Proportional,
    /// 2001-2018 / 2019-2020 / 2021-2022.
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Convert gridded archive files into the chunked store.
    Ingest {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Inclusive year span `A:B`; not used for static fields.
        #[arg(long)]
        years: Option<String>,
        /// Variable mapping JSON; defaults to ERA5/IMERG names.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Sub-domain `lat_min,lat_max,lon_min,lon_max`; defaults to the full domain.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        bbox: Option<Vec<f64>>,
    },
    /// Write a procedural store with region-dependent precipitation.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compute normalization statistics.
    Stats {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        region: RegionId,
        /// Inclusive year span `A:B`; defaults to the training split.
        #[arg(long)]
        years: Option<String>,
        #[arg(long, value_enum, default_value = "full-domain")]
        scope: Scope,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one region and keep per-epoch checkpoints.
    Train {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        region: RegionId,
        /// ModelConfig JSON; defaults to the desk-scale config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Precomputed statistics; computed over the training split otherwise.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "proportional")]
        split: Split,
    },
    /// Compare analytic and finite-difference gradients of both losses.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probe at most this many elements per tensor.
        #[arg(long)]
        max_per_tensor: Option<usize>,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
    /// Bilinear-interpolated `tp` over a region, written as store chunks.
    Baseline {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        region: RegionId,
        #[arg(long)]
        years: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample an ensemble forecast from a checkpoint into a store.
    Forecast {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        region: RegionId,
        #[arg(long)]
        years: Option<String>,
        #[arg(long, default_value_t = 8)]
        members: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a stored ensemble forecast against observations.
    Score {
        #[arg(long)]
        forecasts: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        region: RegionId,
        #[arg(long, default_value_t = 8)]
        members: u32,
        /// Row label for the score line; defaults to the evaluation region.
        #[arg(long)]
        train_region: Option<RegionId>,
        /// Store receiving the CRPS map; defaults to the forecast store.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the transfer matrix of a plan.
    Matrix {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_new_cells: Option<usize>,
    },
    /// Run the plan with and without static inputs.
    Ablate {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_new_cells: Option<usize>,
    },
    /// Render CSV tables and maps from a results directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_years(s: &str) -> Result<HourRange> {
    let (a, b) = s.split_once(':').context("years must look like A:B")?;
    Ok(HourRange::years(a.trim().parse()?, b.trim().parse()?))
}

fn open(store: &Path) -> Result<Store> {
    Store::open(store).with_context(|| format!("opening store {}", store.display()))
}

/// `years` when given, otherwise everything the store covers.
fn hours(store: &Store, years: Option<&str>) -> Result<HourRange> {
    match years {
        Some(y) => parse_years(y),
        None => store_coverage(store).context("store has no complete coverage"),
    }
}

fn splits(store: &Store, split: Split) -> Result<TrainSplit> {
    let spec = match split {
        Split::Proportional => SplitSpec::default(),
        Split::Paper => SplitSpec::paper(),
    };
    let s = temporal_split(&spec, store_coverage(store).context("store has no complete coverage")?)?;
    Ok(TrainSplit {
        train: s.train,
        val: s.val,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest {
            kind,
            src,
            store,
            years,
            map,
            bbox,
        } => {
            let store = Store::create(&store)?;
            let map = map.map_or_else(|| Ok(IngestMap::default()), |p| IngestMap::load(&p))?;
            let res = match kind {
                Kind::Predictors => LR_RESOLUTION,
                Kind::Target | Kind::Static => HR_RESOLUTION,
            };
            let grid = match bbox.as_deref() {
                Some(&[a, b, c, d]) => GridSpec::new(a, b, c, d, res)?,
                Some(_) => bail!("bbox needs four values"),
                None => full_domain(res)?,
            };
            let span = || years.as_deref().context("--years is required").and_then(parse_years);
            let report = match kind {
                Kind::Predictors => ingest_predictors(&store, &src, span()?, &grid, &map)?,
                Kind::Target => ingest_target(&store, &src, span()?, &grid, &map)?,
                Kind::Static => ingest_static(&store, &src, &grid, &map)?,
            };
            print_json(&report)?;
        }
        Command::Synth { config, store, seed } => {
            let cfg = config.map_or_else(|| Ok(SynthConfig::default()), |p| SynthConfig::load(&p))?;
            let store = Store::create(&store)?;
            print_json(&synth_generate(&store, &cfg, seed)?)?;
        }
        Command::Stats {
            store,
            region: id,
            years,
            scope,
            out,
        } => {
            let store = open(&store)?;
            let span = match years {
                Some(y) => parse_years(&y)?,
                None => splits(&store, Split::Proportional)?.train,
            };
            let stats = compute_stats(&store, &region(id), span, scope.into())?;
            stats.save(&out)?;
            info!("wrote {}", out.display());
        }
        Command::Train {
            store,
            region: id,
            config,
            out,
            stats,
            split,
        } => {
            let store = open(&store)?;
            let config: ModelConfig = config.map_or_else(|| Ok(ModelConfig::desk()), |p| read_json(&p))?;
            let split = splits(&store, split)?;
            let stats = match stats {
                Some(p) => NormStats::load(&p)?,
                None => compute_stats(&store, &region(id), split.train, StatsScope::FullDomain)?,
            };
            std::fs::create_dir_all(&out)?;
            let outcome = train(&store, &region(id), stats, &config, split, Some(&out))?;
            let best = out.join("best.ckpt");
            outcome.best.save(&best)?;
            print_json(&serde_json::json!({
                "best": best,
                "best_epoch": outcome.best.epoch,
                "val_crps": outcome.val_crps,
            }))?;
        }
        Command::Gradcheck {
            config,
            seed,
            max_per_tensor,
            tolerance,
        } => {
            let config: ModelConfig = config.map_or_else(|| Ok(tiny_config()), |p| read_json(&p))?;
            let report = grad_check(&config, seed, max_per_tensor)?;
            for t in &report.tensors {
                println!(
                    "{:<9} {:<16} {:>6} probed  f32 {:.2e}  f64 {:.2e}",
                    t.loss, t.name, t.checked, t.max_rel_f32, t.max_rel_f64
                );
            }
            println!(
                "max relative error: f32 {:.3e}, f64 {:.3e}",
                report.max_rel_f32, report.max_rel_f64
            );
            if !report.passes(tolerance, tolerance) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Baseline {
            store,
            region: id,
            years,
            out,
        } => {
            let store = open(&store)?;
            let span = hours(&store, years.as_deref())?;
            let chunk = baseline_forecast(&store, &region(id), span)?;
            let entries = Store::create(&out)?.write_series(&chunk)?;
            info!("wrote {} chunks to {}", entries.len(), out.display());
        }
        Command::Forecast {
            store,
            checkpoint,
            region: id,
            years,
            members,
            seed,
            out,
        } => {
            let store = open(&store)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let span = hours(&store, years.as_deref())?;
            let dst = Store::create(&out)?;
            for chunk in forecast_region(&store, &ck, &region(id), span, members, seed)? {
                dst.write_series(&chunk)?;
            }
            info!("wrote {members} members over {span} to {}", out.display());
        }
        Command::Score {
            forecasts,
            obs,
            region: id,
            members,
            train_region,
            out,
        } => {
            let fc = open(&forecasts)?;
            let obs = open(&obs)?;
            let r = region(id);
            let span = fc
                .coverage(ProductId::ForecastPrecip, 0)
                .context("forecast store holds no forecast")?;
            let grid = fc.grid(ProductId::ForecastPrecip)?;
            let ens = (0..members)
                .map(|k| fc.read_window(ProductId::ForecastPrecip, k, span, &grid.full_window()))
                .collect::<Result<Vec<_>, _>>()?;
            let hr = obs.grid(VariableId::TargetPrecip)?;
            let truth = obs.read_window(VariableId::TargetPrecip, 0, span, &hr.window_for(&r.bbox)?)?;
            let scores = score_region(&ens, &truth, id.as_str())?;
            let base = baseline_forecast(&obs, &r, span)?;
            let base_grid = score_region(&[base], &truth, id.as_str())?;
            let train_id = train_region.unwrap_or(id);
            let row = RegionalScore::new(
                train_id.as_str(),
                id.as_str(),
                aggregate(&scores, false)?,
                aggregate(&base_grid, false)?,
                None,
            )?;
            let (crps, counts) = scores.to_chunks()?;
            let dst = match out {
                Some(p) => Store::create(&p)?,
                None => fc,
            };
            dst.write_chunk(&crps)?;
            dst.write_chunk(&counts)?;
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.serialize(row)?;
            w.flush()?;
        }
        Command::Matrix {
            plan,
            store,
            out,
            max_new_cells,
        } => {
            let plan = ExperimentPlan::load(&plan)?;
            let run = run_matrix(&open(&store)?, &plan, &out, RunOptions { max_new_cells })?;
            info!(
                "{} of {} cells done, {} new",
                run.matrix.cells.len(),
                run.matrix.train_regions.len() * run.matrix.eval_regions.len(),
                run.new_cells
            );
            if run.has_failures() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Ablate {
            plan,
            store,
            out,
            max_new_cells,
        } => {
            let plan = ExperimentPlan::load(&plan)?;
            let run = run_ablation(&open(&store)?, &plan, &out, RunOptions { max_new_cells })?;
            for (t, e, w) in &run.winners {
                println!("{t},{e},{}", serde_json::to_value(w)?.as_str().unwrap_or_default());
            }
            if run.geo.has_failures() || run.nogeo.has_failures() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report { input, out } => {
            let matrices = load_results(&input)?;
            let summary = emit_report(&matrices, &input, &out)?;
            print_json(&summary)?;
            if summary.variants.iter().any(|v| v.failures > 0) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
