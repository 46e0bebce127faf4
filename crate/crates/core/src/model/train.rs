use std::path::{Path, PathBuf};

use log::{debug, info};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    critic_loss, generator_loss, score_checkpoint, seeded, Checkpoint, ModelConfig, ModelError, Result, StepInputs,
    StepLosses,
};
use crate::datastore::{Store, VariableId};
use crate::grid::{PatchSampler, Region};
use crate::hours::{EpochHour, HourRange};
use crate::preprocess::{NormStats, RegionData};
use crate::tape::{Tape, Tensor, Var};
use crate::verify::aggregate;

/// Attempts at finding a crop with a fully observed target before a
/// partially observed one is accepted (its missing pixels are masked).
const MISSING_RETRIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSplit {
    pub train: HourRange,
    pub val: HourRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: StepLosses,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The checkpoint with the lowest validation CRPS.
    pub best: Checkpoint,
    /// Saved per-epoch checkpoints (empty when no output directory was given).
    pub checkpoints: Vec<PathBuf>,
    pub best_path: Option<PathBuf>,
    /// Validation CRPS per epoch, mm/h.
    pub val_crps: Vec<f64>,
    pub history: Vec<LossRecord>,
}

/// Optimizer state plus in-memory training data for one region.
pub struct Trainer {
    ck: Checkpoint,
    data: RegionData,
    sampler: PatchSampler,
    rng: ChaCha8Rng,
    hours: HourRange,
}

fn grads_of(tape: &mut Tape<f32>, loss: Var, wrt: &[Var]) -> Vec<Tensor<f32>> {
    let g = tape.grad(loss, wrt);
    g.iter().map(|&v| tape.value(v).clone()).collect()
}

fn finite(gs: &[Tensor<f32>]) -> bool {
    gs.iter().all(Tensor::is_finite)
}

impl Trainer {
    /// Loads `region` over `hours` and initializes both networks from the
    /// config seed.
    pub fn new(
        store: &Store,
        region: &Region,
        stats: NormStats,
        config: ModelConfig,
        hours: HourRange,
    ) -> Result<Self> {
        if hours.is_empty() {
            return Err(ModelError::Config("empty training range".into()));
        }
        let lr_grid = store.grid(VariableId::Tp)?;
        let hr_grid = store.grid(VariableId::TargetPrecip)?;
        let sampler = PatchSampler::new(&lr_grid, &hr_grid, region, config.train.lr_patch)?;
        let data = RegionData::load_region(store, &stats, region, hours)?;
        let rng = seeded(config.train.seed, 10);
        let ck = Checkpoint::init(config, stats)?;
        Ok(Self {
            ck,
            data,
            sampler,
            rng,
            hours,
        })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ck
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.ck
    }

    fn draw_inputs(&mut self) -> Result<StepInputs> {
        use rand::Rng;
        let t = &self.ck.config.train;
        let (b, n, nc) = (
            t.batch_size,
            t.content_ensemble,
            self.ck.config.generator.noise_channels,
        );
        let mut patches = Vec::with_capacity(b);
        let mut times: Vec<EpochHour> = Vec::with_capacity(b);
        for _ in 0..b {
            let mut pick = None;
            for _ in 0..MISSING_RETRIES {
                let p = self.sampler.sample(&mut self.rng);
                let h = self.rng.random_range(self.hours.start..self.hours.end);
                let clean = !self.data.target_has_missing(&p, h)?;
                pick = Some((p, h));
                if clean {
                    break;
                }
            }
            let (p, h) = pick.expect("at least one attempt");
            patches.push(p);
            times.push(h);
        }
        let batch = self.data.batch(&patches, &times, 0, nc)?;
        StepInputs::draw(&batch, n, &mut self.rng)
    }

    fn diverged(&self, what: &str) -> ModelError {
        ModelError::Divergence {
            what: what.into(),
            step: self.ck.step as usize,
            last_good: None,
        }
    }

    /// One generator update preceded by `critic_steps_per_gen` critic updates.
    pub fn step(&mut self) -> Result<StepLosses> {
        let cfg = self.ck.config.train.clone();
        let mut out = StepLosses::default();
        for _ in 0..cfg.critic_steps_per_gen {
            let inputs = self.draw_inputs()?;
            let fake = self.ck.generator.run(&inputs.lr, Some(&inputs.statics))?;
            let mut tape = Tape::<f32>::new();
            let cp = self.ck.critic.params.leaves(&mut tape);
            let terms = critic_loss(&mut tape, &self.ck.critic, &cp, &inputs, &fake, cfg.gp_weight)?;
            out.critic = tape.value(terms.loss).item() as f64;
            out.gp = tape.value(terms.gp).item() as f64;
            out.wasserstein = tape.value(terms.wasserstein).item() as f64;
            let grads = grads_of(&mut tape, terms.loss, &cp);
            if !out.critic.is_finite() || !finite(&grads) {
                return Err(self.diverged("critic loss"));
            }
            self.ck.opt_critic.update(&mut self.ck.critic.params, &grads)?;
        }
        let inputs = self.draw_inputs()?;
        let mut tape = Tape::<f32>::new();
        let gp = self.ck.generator.params.leaves(&mut tape);
        let cp = self.ck.critic.params.leaves(&mut tape);
        let terms = generator_loss(
            &mut tape,
            &self.ck.generator,
            &gp,
            &self.ck.critic,
            &cp,
            &inputs,
            cfg.content_weight,
        )?;
        out.generator = tape.value(terms.loss).item() as f64;
        out.content = tape.value(terms.content).item() as f64;
        let grads = grads_of(&mut tape, terms.loss, &gp);
        if !out.generator.is_finite() || !finite(&grads) {
            return Err(self.diverged("generator loss"));
        }
        self.ck.opt_gen.update(&mut self.ck.generator.params, &grads)?;
        self.ck.step += 1;
        Ok(out)
    }
}

/// Mean regional CRPS of `ck` over every `stride`-th validation hour.
pub fn validation_crps(store: &Store, ck: &Checkpoint, region: &Region, val: HourRange) -> Result<f64> {
    let t = &ck.config.train;
    let times: Vec<EpochHour> = val.stepped(t.val_stride).collect();
    let grid = score_checkpoint(store, ck, region, &times, t.val_members, t.seed ^ 0x5A17)?;
    Ok(aggregate(&grid, false)?)
}

/// Trains on `split.train`, checkpoints after each epoch (to `out_dir` when
/// given) and returns the epoch with the lowest validation CRPS.
pub fn train(
    store: &Store,
    region: &Region,
    stats: NormStats,
    config: &ModelConfig,
    split: TrainSplit,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(store, region, stats, config.clone(), split.train)?;
    let t = &config.train;
    let steps = t.steps_per_epoch.unwrap_or(split.train.len() / t.batch_size).max(1);
    let mut history = Vec::with_capacity(steps * t.epochs);
    let mut checkpoints = Vec::new();
    let mut val_crps = Vec::new();
    let mut best: Option<(f64, Checkpoint, Option<PathBuf>)> = None;
    let mut last_good: Option<PathBuf> = None;
    info!(
        "training {} for {} epochs x {steps} steps on {}",
        region.id.as_str(),
        t.epochs,
        split.train
    );
    for epoch in 1..=t.epochs.max(1) {
        for _ in 0..steps {
            let losses = trainer.step().map_err(|e| match e {
                ModelError::Divergence { what, step, .. } => ModelError::Divergence {
                    what,
                    step,
                    last_good: last_good.clone(),
                },
                other => other,
            })?;
            history.push(LossRecord {
                step: trainer.ck.step,
                epoch,
                losses,
            });
        }
        trainer.ck.epoch = epoch;
        let score = validation_crps(store, &trainer.ck, region, split.val)?;
        trainer.ck.val_crps = Some(score);
        debug!("epoch {epoch}: validation CRPS {score:.5}");
        let path = match out_dir {
            Some(dir) => {
                let p = dir.join(format!("epoch-{epoch:03}.ckpt"));
                trainer.ck.save(&p)?;
                checkpoints.push(p.clone());
                last_good = Some(p.clone());
                Some(p)
            }
            None => None,
        };
        val_crps.push(score);
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, trainer.ck.clone(), path));
        }
    }
    let (_, best, best_path) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        checkpoints,
        best_path,
        val_crps,
        history,
    })
}
