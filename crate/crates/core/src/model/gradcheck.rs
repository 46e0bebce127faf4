use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{critic_loss, generator_loss, seeded, Critic, Generator, ModelConfig, Result, StepInputs};
use crate::preprocess::TrainingBatch;
use crate::tape::{Scalar, Tape, Tensor};

/// Central-difference step in parameter space.
const FD_STEP: f64 = 1e-6;
/// Lower bound on a tensor's error scale, relative to the largest gradient
/// of the same loss. Tensors whose true gradient vanishes (the critic's
/// output bias under the Wasserstein term) are compared at this level.
const SCALE_FLOOR: f64 = 1e-5;

/// Agreement for one parameter tensor.
///
/// Errors are `max_i |analytic_i - numeric_i| / max_i |numeric_i|`, i.e.
/// relative to the tensor's largest gradient component, with the scale
/// floored at a small fraction of the loss's largest gradient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub loss: &'static str,
    pub name: String,
    pub numel: usize,
    pub checked: usize,
    pub max_rel_f32: f64,
    pub max_rel_f64: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_f32: f64,
    pub max_rel_f64: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol_f32: f64, tol_f64: f64) -> bool {
        self.max_rel_f32 <= tol_f32 && self.max_rel_f64 <= tol_f64
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Which {
    Critic,
    Generator,
}

struct Problem {
    generator: Generator,
    critic: Critic,
    inputs: StepInputs,
    fake: Tensor<f32>,
    content_weight: f64,
    gp_weight: f64,
}

impl Problem {
    /// Loss value and, optionally, its gradient w.r.t. the checked network.
    fn eval<T: Scalar>(
        &self,
        which: Which,
        gen: &[Tensor<T>],
        crit: &[Tensor<T>],
        with_grad: bool,
    ) -> Result<(f64, Vec<Tensor<T>>)> {
        let mut tape = Tape::<T>::new();
        let gp: Vec<_> = gen.iter().map(|t| tape.leaf(t.clone())).collect();
        let cp: Vec<_> = crit.iter().map(|t| tape.leaf(t.clone())).collect();
        let (loss, wrt) = match which {
            Which::Critic => {
                let t = critic_loss(&mut tape, &self.critic, &cp, &self.inputs, &self.fake, self.gp_weight)?;
                (t.loss, cp)
            }
            Which::Generator => {
                let t = generator_loss(
                    &mut tape,
                    &self.generator,
                    &gp,
                    &self.critic,
                    &cp,
                    &self.inputs,
                    self.content_weight,
                )?;
                (t.loss, gp)
            }
        };
        let value = tape.value(loss).item().to_f64_lossy();
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        let grads = tape.grad(loss, &wrt);
        Ok((value, grads.iter().map(|&g| tape.value(g).clone()).collect()))
    }
}

fn slot<'a>(which: Which, gen: &'a mut [Tensor<f64>], crit: &'a mut [Tensor<f64>], k: usize, i: usize) -> &'a mut f64 {
    match which {
        Which::Critic => &mut crit[k].data[i],
        Which::Generator => &mut gen[k].data[i],
    }
}

fn random_batch(cfg: &ModelConfig, seed: u64) -> TrainingBatch {
    let mut rng = seeded(seed, 7);
    let b = cfg.train.batch_size;
    let h = cfg.train.lr_patch;
    let hh = h * 5 / 2;
    let c = 9 + cfg.generator.noise_channels;
    let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let mut missing = vec![false; b * hh * hh];
    missing[0] = true;
    TrainingBatch {
        lr: Tensor::new(vec![b, c, h, h], draw(b * c * h * h)),
        hr_static: Tensor::new(vec![b, 2, hh, hh], draw(b * 2 * hh * hh)),
        hr_target: Tensor::new(vec![b, 1, hh, hh], draw(b * hh * hh)),
        target_missing: missing,
        times: vec![0; b],
    }
}

/// Compares analytic gradients of both losses against central finite
/// differences evaluated in `f64`, once with `f32` and once with `f64`
/// analytic gradients. At most `max_per_tensor` randomly chosen elements of
/// each tensor are probed (`None` probes all).
pub fn grad_check(config: &ModelConfig, seed: u64, max_per_tensor: Option<usize>) -> Result<GradCheckReport> {
    config.validate()?;
    let generator = Generator::new(config.generator.clone(), seed);
    let critic = Critic::new(config.critic.clone(), seed);
    let batch = random_batch(config, seed);
    let mut rng = seeded(seed, 8);
    let inputs = StepInputs::draw(&batch, config.train.content_ensemble, &mut rng)?;
    let fake = generator.run(&inputs.lr, Some(&inputs.statics))?;
    let p = Problem {
        generator,
        critic,
        inputs,
        fake,
        content_weight: config.train.content_weight,
        gp_weight: config.train.gp_weight,
    };
    let g32 = p.generator.params.tensors.clone();
    let c32 = p.critic.params.tensors.clone();
    let g64: Vec<Tensor<f64>> = g32.iter().map(Tensor::cast).collect();
    let c64: Vec<Tensor<f64>> = c32.iter().map(Tensor::cast).collect();

    let mut tensors = Vec::new();
    for (which, label, names) in [
        (Which::Critic, "critic", &p.critic.params.names),
        (Which::Generator, "generator", &p.generator.params.names),
    ] {
        let (_, a32) = p.eval::<f32>(which, &g32, &c32, true)?;
        let (_, a64) = p.eval::<f64>(which, &g64, &c64, true)?;
        let mut probes = Vec::with_capacity(names.len());
        for (k, a) in a64[..names.len()].iter().enumerate() {
            let numel = a.numel();
            let idx: Vec<usize> = match max_per_tensor {
                Some(cap) if cap < numel => rand::seq::index::sample(&mut rng, numel, cap).into_vec(),
                _ => (0..numel).collect(),
            };
            let (mut gen, mut crit) = (g64.clone(), c64.clone());
            let mut numeric = Vec::with_capacity(idx.len());
            for &i in &idx {
                let x0 = *slot(which, &mut gen, &mut crit, k, i);
                *slot(which, &mut gen, &mut crit, k, i) = x0 + FD_STEP;
                let plus = p.eval::<f64>(which, &gen, &crit, false)?.0;
                *slot(which, &mut gen, &mut crit, k, i) = x0 - FD_STEP;
                let minus = p.eval::<f64>(which, &gen, &crit, false)?.0;
                *slot(which, &mut gen, &mut crit, k, i) = x0;
                numeric.push((plus - minus) / (2.0 * FD_STEP));
            }
            probes.push((idx, numeric));
        }
        let abs_max = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let floor = (SCALE_FLOOR * probes.iter().map(|(_, n)| abs_max(n)).fold(0.0, f64::max)).max(f64::MIN_POSITIVE);
        for (k, (name, (idx, numeric))) in names.iter().zip(&probes).enumerate() {
            let scale = abs_max(numeric).max(floor);
            let err = |analytic: &dyn Fn(usize) -> f64| {
                idx.iter()
                    .zip(numeric)
                    .map(|(&i, n)| (analytic(i) - n).abs())
                    .fold(0.0f64, f64::max)
                    / scale
            };
            tensors.push(TensorCheck {
                loss: label,
                name: name.clone(),
                numel: a64[k].numel(),
                checked: idx.len(),
                max_rel_f32: err(&|i| a32[k].data[i] as f64),
                max_rel_f64: err(&|i| a64[k].data[i]),
            });
        }
    }
    let max_rel_f32 = tensors.iter().map(|t| t.max_rel_f32).fold(0.0, f64::max);
    let max_rel_f64 = tensors.iter().map(|t| t.max_rel_f64).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensors,
        max_rel_f32,
        max_rel_f64,
    })
}

/// The smallest configuration the checker is meant for: 4x4 LR crops,
/// 8 filters, one residual block, batch 2.
pub fn tiny_config() -> ModelConfig {
    let mut c = ModelConfig::desk();
    c.train.batch_size = 2;
    c.train.lr_patch = 4;
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_check_agrees() {
        let r = grad_check(&tiny_config(), 3, Some(4)).unwrap();
        assert_eq!(r.tensors.len(), 20);
        for t in &r.tensors {
            assert!(t.max_rel_f64 < 1e-6, "{} {}: {}", t.loss, t.name, t.max_rel_f64);
            assert!(t.max_rel_f32 < 1e-3, "{} {}: {}", t.loss, t.name, t.max_rel_f32);
        }
    }
}
