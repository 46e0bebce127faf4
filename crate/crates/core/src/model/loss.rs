use rand::Rng;
use rand_distr::StandardNormal;

use super::{Critic, Generator, ModelError, Result, PREDICTOR_CHANNELS};
use crate::preprocess::TrainingBatch;
use crate::tape::{Scalar, Tape, Tensor, Var};

/// All data and randomness for one loss evaluation, drawn up front so the
/// losses are deterministic functions of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInputs {
    /// `[b, 9 + noise, h, w]`; conditioning plus noise for the adversarial draw.
    pub lr: Tensor<f32>,
    /// `[b * n, 9 + noise, h, w]`; each sample repeated `n` times with fresh noise.
    pub lr_ensemble: Tensor<f32>,
    /// `[b, 2, H, W]`.
    pub statics: Tensor<f32>,
    /// `[b, 1, H, W]`.
    pub target: Tensor<f32>,
    /// `[b, 1, H, W]`; 1 where the target is observed, 0 where missing.
    pub target_weight: Tensor<f32>,
    /// Interpolation weights for the gradient penalty, one per sample.
    pub eps: Vec<f32>,
    /// Members per sample in `lr_ensemble`.
    pub ensemble: usize,
}

impl StepInputs {
    /// Takes the conditioning from `batch` and redraws every noise channel.
    pub fn draw<R: Rng>(batch: &TrainingBatch, ensemble: usize, rng: &mut R) -> Result<Self> {
        let s = &batch.lr.shape;
        if s.len() != 4 || s[1] < PREDICTOR_CHANNELS || ensemble == 0 {
            return Err(ModelError::Shape(format!("bad batch {s:?} or ensemble {ensemble}")));
        }
        let (b, c) = (s[0], s[1]);
        let plane = s[2] * s[3];
        let sample = c * plane;
        let cond = PREDICTOR_CHANNELS * plane;
        let mut fill = |dst: &mut Vec<f32>, src: &[f32]| {
            dst.extend_from_slice(&src[..cond]);
            dst.extend((cond..sample).map(|_| rng.sample::<f32, _>(StandardNormal)));
        };
        let mut lr = Vec::with_capacity(b * sample);
        let mut ens = Vec::with_capacity(b * ensemble * sample);
        for k in 0..b {
            let src = &batch.lr.data[k * sample..(k + 1) * sample];
            fill(&mut lr, src);
            for _ in 0..ensemble {
                fill(&mut ens, src);
            }
        }
        let mut ens_shape = s.clone();
        ens_shape[0] = b * ensemble;
        let weight = batch
            .target_missing
            .iter()
            .map(|&m| if m { 0.0 } else { 1.0 })
            .collect();
        Ok(Self {
            lr: Tensor::new(s.clone(), lr),
            lr_ensemble: Tensor::new(ens_shape, ens),
            statics: batch.hr_static.clone(),
            target: batch.hr_target.clone(),
            target_weight: Tensor::new(batch.hr_target.shape.clone(), weight),
            eps: (0..b).map(|_| rng.random::<f32>()).collect(),
            ensemble,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.lr.shape[0]
    }
}

/// Scalar values of one evaluation of both losses.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct StepLosses {
    pub critic: f64,
    pub generator: f64,
    /// Unweighted content MSE.
    pub content: f64,
    /// Unweighted gradient penalty.
    pub gp: f64,
    /// `mean C(real) - mean C(fake)` from the critic step.
    pub wasserstein: f64,
}

impl StepLosses {
    pub fn is_finite(&self) -> bool {
        [self.critic, self.generator, self.content, self.gp, self.wasserstein]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Masked MSE between the mean of each group of `n` consecutive members in
/// `ensemble` (`[b * n, ...]`) and `target` (`[b, ...]`).
pub fn content_loss<T: Scalar>(
    tape: &mut Tape<T>,
    ensemble: Var,
    n: usize,
    target: Var,
    weight: Option<Var>,
) -> Result<Var> {
    let es = tape.shape(ensemble).to_vec();
    let ts = tape.shape(target).to_vec();
    if n == 0 || es.is_empty() || es[0] != ts[0] * n || es[1..] != ts[1..] {
        return Err(ModelError::Shape(format!(
            "ensemble {es:?} is not {n} members of target {ts:?}"
        )));
    }
    let sum = tape.group_sum(ensemble, n);
    let mean = tape.scale(sum, 1.0 / n as f64);
    let diff = tape.sub(mean, target);
    let sq = tape.square(diff);
    match weight {
        None => Ok(tape.mean_all(sq)),
        Some(w) => {
            if tape.shape(w) != ts.as_slice() {
                return Err(ModelError::Shape("weight does not match target".into()));
            }
            let total: f64 = tape.value(w).data.iter().map(|v| v.to_f64_lossy()).sum();
            let masked = tape.mul(sq, w);
            let s = tape.sum_all(masked);
            Ok(tape.scale(s, 1.0 / total.max(1.0)))
        }
    }
}

/// `mean_k (|d critic / d x_k|_2 - 1)^2` at `xhat = eps * real + (1 - eps) * fake`.
///
/// `critic` maps an `[b, ...]` batch to `[b]` scores; samples must be scored
/// independently for the per-sample gradient to be meaningful.
pub fn gradient_penalty<T, F>(tape: &mut Tape<T>, real: Var, fake: Var, eps: &[f32], mut critic: F) -> Result<Var>
where
    T: Scalar,
    F: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    let shape = tape.shape(real).to_vec();
    if tape.shape(fake) != shape.as_slice() || shape.first() != Some(&eps.len()) {
        return Err(ModelError::Shape(format!(
            "real {shape:?}, fake {:?}, {} eps",
            tape.shape(fake),
            eps.len()
        )));
    }
    let inner = tape.value(real).numel() / eps.len().max(1);
    let (r, f) = (&tape.value(real).data, &tape.value(fake).data);
    let data = (0..r.len())
        .map(|i| {
            let e = T::of(eps[i / inner] as f64);
            e * r[i] + (T::one() - e) * f[i]
        })
        .collect();
    let xhat = tape.leaf(Tensor::new(shape, data));
    let scores = critic(tape, xhat)?;
    let total = tape.sum_all(scores);
    let g = tape.grad(total, &[xhat])[0];
    let sq = tape.square(g);
    let norm2 = tape.sum_per_sample(sq);
    let norm = tape.sqrt(norm2);
    let dev = tape.add_scalar(norm, -1.0);
    let pen = tape.square(dev);
    Ok(tape.mean_all(pen))
}

/// Critic loss parts built on `tape`.
#[derive(Debug, Clone, Copy)]
pub struct CriticTerms {
    pub loss: Var,
    pub gp: Var,
    pub wasserstein: Var,
}

/// `mean C(fake) - mean C(real) + gp_weight * GP`, with `fake` held constant.
pub fn critic_loss<T: Scalar>(
    tape: &mut Tape<T>,
    critic: &Critic,
    params: &[Var],
    inputs: &StepInputs,
    fake: &Tensor<f32>,
    gp_weight: f64,
) -> Result<CriticTerms> {
    let b = inputs.batch_size();
    let lr = tape.leaf(inputs.lr.cast());
    let st = tape.leaf(inputs.statics.cast());
    let real = tape.leaf(inputs.target.cast());
    let fake = tape.leaf(fake.cast());
    let both = tape.concat(&[real, fake], 0);
    let lr2 = tape.concat(&[lr, lr], 0);
    let st2 = tape.concat(&[st, st], 0);
    let scores = critic.forward(tape, params, both, lr2, Some(st2))?;
    let s_real = tape.slice(scores, 0, 0, b);
    let s_fake = tape.slice(scores, 0, b, b);
    let m_real = tape.mean_all(s_real);
    let m_fake = tape.mean_all(s_fake);
    let wasserstein = tape.sub(m_real, m_fake);
    let gp = gradient_penalty(tape, real, fake, &inputs.eps, |t, x| {
        critic.forward(t, params, x, lr, Some(st))
    })?;
    let wgp = tape.scale(gp, gp_weight);
    let neg = tape.scale(wasserstein, -1.0);
    let loss = tape.add(neg, wgp);
    Ok(CriticTerms { loss, gp, wasserstein })
}

/// Generator loss parts built on `tape`.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorTerms {
    pub loss: Var,
    pub content: Var,
    /// The adversarial draw, `[b, 1, H, W]`.
    pub fake: Var,
}

/// `-mean C(fake) + content_weight * content_loss`.
///
/// One generator pass covers both the `n`-member content ensemble and a
/// separate adversarial draw per sample; only the latter reaches the critic.
pub fn generator_loss<T: Scalar>(
    tape: &mut Tape<T>,
    generator: &Generator,
    gen_params: &[Var],
    critic: &Critic,
    critic_params: &[Var],
    inputs: &StepInputs,
    content_weight: f64,
) -> Result<GeneratorTerms> {
    let (b, n) = (inputs.batch_size(), inputs.ensemble);
    let lr = tape.leaf(inputs.lr.cast());
    let lr_ens = tape.leaf(inputs.lr_ensemble.cast());
    let st = tape.leaf(inputs.statics.cast());
    let target = tape.leaf(inputs.target.cast());
    let weight = tape.leaf(inputs.target_weight.cast());
    let st_ens = tape.group_repeat(st, n);
    let x = tape.concat(&[lr_ens, lr], 0);
    let s = tape.concat(&[st_ens, st], 0);
    let out = generator.forward(tape, gen_params, x, Some(s))?;
    let ens = tape.slice(out, 0, 0, b * n);
    let fake = tape.slice(out, 0, b * n, b);
    let content = content_loss(tape, ens, n, target, Some(weight))?;
    let scores = critic.forward(tape, critic_params, fake, lr, Some(st))?;
    let adv = tape.mean_all(scores);
    let adv = tape.scale(adv, -1.0);
    let wc = tape.scale(content, content_weight);
    let loss = tape.add(adv, wc);
    Ok(GeneratorTerms { loss, content, fake })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{seeded, ModelConfig};

    fn t64(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data)
    }

    #[test]
    fn content_loss_cases() {
        let mut tape = Tape::<f64>::new();
        let target = tape.leaf(t64(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let same = tape.leaf(t64(&[2, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]));
        let l = content_loss(&mut tape, same, 2, target, None).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        let pm = tape.leaf(t64(&[2, 1, 2, 2], vec![2.0, 3.0, 4.0, 5.0, 0.0, 1.0, 2.0, 3.0]));
        let l = content_loss(&mut tape, pm, 2, target, None).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        let c = tape.leaf(t64(&[1, 1, 2, 2], vec![2.5; 4]));
        let t = tape.leaf(t64(&[1, 1, 2, 2], vec![0.5; 4]));
        let l = content_loss(&mut tape, c, 1, t, None).unwrap();
        assert_eq!(tape.value(l).item(), 4.0);
        assert!(content_loss(&mut tape, c, 2, t, None).is_err());
    }

    #[test]
    fn content_loss_ignores_masked_pixels() {
        let mut tape = Tape::<f64>::new();
        let e = tape.leaf(t64(&[1, 1, 1, 2], vec![1.0, 9.0]));
        let t = tape.leaf(t64(&[1, 1, 1, 2], vec![0.0, 0.0]));
        let w = tape.leaf(t64(&[1, 1, 1, 2], vec![1.0, 0.0]));
        let l = content_loss(&mut tape, e, 1, t, Some(w)).unwrap();
        assert_eq!(tape.value(l).item(), 1.0);
    }

    fn linear_critic(w: Vec<f64>) -> impl FnMut(&mut Tape<f64>, Var) -> Result<Var> {
        move |t, x| {
            let shape = t.shape(x).to_vec();
            let n = shape[0];
            let wv = t.leaf(Tensor::new(
                shape.clone(),
                (0..n).flat_map(|_| w.iter().copied()).collect(),
            ));
            let p = t.mul(x, wv);
            Ok(t.sum_per_sample(p))
        }
    }

    #[test]
    fn gradient_penalty_of_linear_critics() {
        let cases: [(Vec<f64>, f64); 3] = [
            (vec![1.0; 4], 1.0),
            (vec![0.0; 4], 1.0),
            (vec![1.0, 0.0, 0.0, 0.0], 0.0),
        ];
        for (w, want) in cases {
            let mut tape = Tape::<f64>::new();
            let real = tape.leaf(t64(&[2, 1, 2, 2], (0..8).map(f64::from).collect()));
            let fake = tape.leaf(t64(&[2, 1, 2, 2], vec![0.5; 8]));
            let gp = gradient_penalty(&mut tape, real, fake, &[0.3, 0.9], linear_critic(w)).unwrap();
            assert_eq!(tape.value(gp).item(), want);
        }
        let w = vec![0.5, -1.5, 2.0, 0.25];
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut tape = Tape::<f64>::new();
        let real = tape.leaf(t64(&[1, 1, 2, 2], vec![1.0; 4]));
        let fake = tape.leaf(t64(&[1, 1, 2, 2], vec![0.0; 4]));
        let gp = gradient_penalty(&mut tape, real, fake, &[0.5], linear_critic(w)).unwrap();
        assert!((tape.value(gp).item() - (norm - 1.0).powi(2)).abs() < 1e-12);
    }

    fn tiny_batch(b: usize) -> TrainingBatch {
        let mut rng = seeded(5, 0);
        let mut r = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        TrainingBatch {
            lr: Tensor::new(vec![b, 11, 4, 4], r(b * 11 * 16)),
            hr_static: Tensor::new(vec![b, 2, 10, 10], r(b * 200)),
            hr_target: Tensor::new(vec![b, 1, 10, 10], r(b * 100)),
            target_missing: vec![false; b * 100],
            times: vec![0; b],
        }
    }

    #[test]
    fn step_inputs_keep_conditioning_and_redraw_noise() {
        let batch = tiny_batch(2);
        let s = StepInputs::draw(&batch, 3, &mut seeded(1, 0)).unwrap();
        assert_eq!(s.lr_ensemble.shape, vec![6, 11, 4, 4]);
        let cond = 9 * 16;
        for k in 0..6 {
            let src = &batch.lr.data[(k / 3) * 176..(k / 3) * 176 + cond];
            assert_eq!(&s.lr_ensemble.data[k * 176..k * 176 + cond], src);
        }
        assert_ne!(&s.lr_ensemble.data[cond..176], &s.lr_ensemble.data[176 + cond..352]);
        assert_ne!(&s.lr.data[cond..176], &batch.lr.data[cond..176]);
        assert!(s.eps.iter().all(|e| (0.0..1.0).contains(e)));
    }

    #[test]
    fn losses_are_finite_on_random_init() {
        let cfg = ModelConfig::desk();
        let g = Generator::new(cfg.generator.clone(), 0);
        let c = Critic::new(cfg.critic.clone(), 0);
        let inputs = StepInputs::draw(&tiny_batch(2), 4, &mut seeded(2, 0)).unwrap();
        let mut tape = Tape::<f32>::new();
        let gp = g.params.leaves(&mut tape);
        let cp = c.params.leaves(&mut tape);
        let gt = generator_loss(&mut tape, &g, &gp, &c, &cp, &inputs, 300.0).unwrap();
        assert!(tape.value(gt.loss).is_finite());
        let fake = tape.value(gt.fake).clone();
        let ct = critic_loss(&mut tape, &c, &cp, &inputs, &fake, 10.0).unwrap();
        assert!(tape.value(ct.loss).is_finite());
        assert!(tape.value(ct.gp).item() >= 0.0);
    }
}
