use super::{
    seeded, CriticConfig, GeneratorConfig, ModelError, ParamSet, Result, LEAK, POOL, PREDICTOR_CHANNELS, UPSAMPLE,
};
use crate::tape::{Scalar, Tape, Tensor, Var};

const KERNEL: usize = 3;
const STATIC_CHANNELS: usize = 2;

fn conv_b<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Var {
    let y = tape.conv2d(x, w);
    tape.add_channel_bias(y, b)
}

/// `x + conv(lrelu(conv(x)))` followed by leaky ReLU; consumes 4 params.
fn residual<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &[Var]) -> Var {
    let h = conv_b(tape, x, p[0], p[1]);
    let h = tape.leaky_relu(h, LEAK);
    let h = conv_b(tape, h, p[2], p[3]);
    let s = tape.add(x, h);
    tape.leaky_relu(s, LEAK)
}

/// Nearest x5 then 2x2 average: a 2.5x resize with no interpolation.
fn resize_lr_to_hr<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    let up = tape.upsample(x, UPSAMPLE);
    tape.avg_pool(up, POOL)
}

fn hr_size(h: usize) -> Option<usize> {
    (h * UPSAMPLE).is_multiple_of(POOL).then_some(h * UPSAMPLE / POOL)
}

fn shape_err(msg: String) -> ModelError {
    ModelError::Shape(msg)
}

/// Conditional generator mapping LR predictors plus noise to one HR field.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamSet,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Self {
        let mut rng = seeded(seed, 1);
        let f = config.filters;
        let mut p = ParamSet::new();
        p.conv(
            &mut rng,
            "gen.in",
            f,
            PREDICTOR_CHANNELS + config.noise_channels,
            KERNEL,
            1.0,
        );
        for r in 0..config.residual_blocks {
            p.conv(&mut rng, &format!("gen.res{r}.a"), f, f, KERNEL, 1.0);
            p.conv(&mut rng, &format!("gen.res{r}.b"), f, f, KERNEL, 0.5);
        }
        let hr_in = f + if config.use_static_inputs { STATIC_CHANNELS } else { 0 };
        p.conv(&mut rng, "gen.hr", f, hr_in, KERNEL, 1.0);
        p.conv(&mut rng, "gen.out", 1, f, KERNEL, 0.5);
        Self { config, params: p }
    }

    pub fn in_channels(&self) -> usize {
        PREDICTOR_CHANNELS + self.config.noise_channels
    }

    /// `lr: [n, 9 + noise, h, w]`, `statics: [n, 2, 2.5h, 2.5w]` (ignored
    /// unless static inputs are enabled). Returns `[n, 1, 2.5h, 2.5w]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], lr: Var, statics: Option<Var>) -> Result<Var> {
        let s = tape.shape(lr).to_vec();
        if s.len() != 4 || s[1] != self.in_channels() {
            return Err(shape_err(format!(
                "generator expects [n, {}, h, w], got {s:?}",
                self.in_channels()
            )));
        }
        let (hh, hw) = match (hr_size(s[2]), hr_size(s[3])) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(shape_err(format!("LR size {}x{} must be even", s[2], s[3]))),
        };
        let statics = if self.config.use_static_inputs {
            let st = statics.ok_or_else(|| shape_err("static inputs enabled but not given".into()))?;
            let ss = tape.shape(st);
            if ss != [s[0], STATIC_CHANNELS, hh, hw] {
                return Err(shape_err(format!(
                    "statics {ss:?} do not match [{}, 2, {hh}, {hw}]",
                    s[0]
                )));
            }
            Some(st)
        } else {
            None
        };
        let mut x = conv_b(tape, lr, p[0], p[1]);
        x = tape.leaky_relu(x, LEAK);
        let mut k = 2;
        for _ in 0..self.config.residual_blocks {
            x = residual(tape, x, &p[k..k + 4]);
            k += 4;
        }
        x = resize_lr_to_hr(tape, x);
        if let Some(st) = statics {
            x = tape.concat(&[x, st], 1);
        }
        x = conv_b(tape, x, p[k], p[k + 1]);
        x = tape.leaky_relu(x, LEAK);
        Ok(conv_b(tape, x, p[k + 2], p[k + 3]))
    }

    /// Plain `f32` forward pass.
    pub fn run(&self, lr: &Tensor<f32>, statics: Option<&Tensor<f32>>) -> Result<Tensor<f32>> {
        let mut tape = Tape::<f32>::new();
        let p = self.params.leaves(&mut tape);
        let x = tape.leaf(lr.clone());
        let st = statics.map(|s| tape.leaf(s.clone()));
        let y = self.forward(&mut tape, &p, x, st)?;
        Ok(tape.value(y).clone())
    }
}

/// Critic scoring an HR candidate given its LR predictors and statics.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub config: CriticConfig,
    pub params: ParamSet,
}

impl Critic {
    pub fn new(config: CriticConfig, seed: u64) -> Self {
        let mut rng = seeded(seed, 2);
        let f = config.filters;
        let mut p = ParamSet::new();
        let c_in = 1 + PREDICTOR_CHANNELS + if config.use_static_inputs { STATIC_CHANNELS } else { 0 };
        p.conv(&mut rng, "critic.in", f, c_in, KERNEL, 1.0);
        for r in 0..config.residual_blocks {
            p.conv(&mut rng, &format!("critic.res{r}.a"), f, f, KERNEL, 1.0);
            p.conv(&mut rng, &format!("critic.res{r}.b"), f, f, KERNEL, 0.5);
        }
        p.dense(&mut rng, "critic.fc", f, f);
        p.dense(&mut rng, "critic.score", 1, f);
        Self { config, params: p }
    }

    /// `candidate: [n, 1, H, W]`; `lr: [n, >= 9, h, w]` (channels past the
    /// ninth are ignored); `statics: [n, 2, H, W]`. Returns `[n]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        candidate: Var,
        lr: Var,
        statics: Option<Var>,
    ) -> Result<Var> {
        let cs = tape.shape(candidate).to_vec();
        let ls = tape.shape(lr).to_vec();
        if cs.len() != 4 || cs[1] != 1 || ls.len() != 4 || ls[1] < PREDICTOR_CHANNELS || ls[0] != cs[0] {
            return Err(shape_err(format!("critic inputs {cs:?} and {ls:?} are inconsistent")));
        }
        if hr_size(ls[2]) != Some(cs[2]) || hr_size(ls[3]) != Some(cs[3]) {
            return Err(shape_err(format!("candidate {cs:?} is not 2.5x the LR grid {ls:?}")));
        }
        let preds = if ls[1] == PREDICTOR_CHANNELS {
            lr
        } else {
            tape.slice(lr, 1, 0, PREDICTOR_CHANNELS)
        };
        let up = resize_lr_to_hr(tape, preds);
        let mut parts = vec![candidate, up];
        if self.config.use_static_inputs {
            let st = statics.ok_or_else(|| shape_err("static inputs enabled but not given".into()))?;
            if tape.shape(st) != [cs[0], STATIC_CHANNELS, cs[2], cs[3]] {
                return Err(shape_err(format!("statics {:?} do not match {cs:?}", tape.shape(st))));
            }
            parts.push(st);
        }
        let x = tape.concat(&parts, 1);
        let mut x = conv_b(tape, x, p[0], p[1]);
        x = tape.leaky_relu(x, LEAK);
        let mut k = 2;
        for _ in 0..self.config.residual_blocks {
            x = residual(tape, x, &p[k..k + 4]);
            k += 4;
        }
        let pooled = tape.mean_spatial(x);
        let h = tape.linear(pooled, p[k], p[k + 1]);
        let h = tape.leaky_relu(h, LEAK);
        let score = tape.linear(h, p[k + 2], p[k + 3]);
        Ok(tape.reshape(score, &[cs[0]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::Rng;

    fn randn(shape: &[usize], seed: u64) -> Tensor<f32> {
        let mut rng = seeded(seed, 9);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn generator_output_is_two_and_a_half_times_input() {
        let cfg = ModelConfig::desk();
        let g = Generator::new(cfg.generator.clone(), 1);
        for (h, w) in [(4, 4), (8, 20), (32, 32)] {
            let lr = randn(&[2, 11, h, w], 3);
            let st = randn(&[2, 2, h * 5 / 2, w * 5 / 2], 4);
            let y = g.run(&lr, Some(&st)).unwrap();
            assert_eq!(y.shape, vec![2, 1, h * 5 / 2, w * 5 / 2]);
            assert!(y.is_finite());
        }
        assert!(g.run(&randn(&[1, 11, 5, 4], 3), None).is_err());
    }

    #[test]
    fn generator_is_pure_and_noise_sensitive() {
        let g = Generator::new(ModelConfig::desk().generator, 7);
        let lr = randn(&[1, 11, 4, 4], 5);
        let st = randn(&[1, 2, 10, 10], 6);
        let a = g.run(&lr, Some(&st)).unwrap();
        let b = g.run(&lr, Some(&st)).unwrap();
        assert_eq!(a, b);
        let mut lr2 = lr.clone();
        for v in &mut lr2.data[9 * 16..] {
            *v += 0.5;
        }
        let c = g.run(&lr2, Some(&st)).unwrap();
        let diff = a
            .data
            .iter()
            .zip(&c.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max);
        assert!(diff > 0.0);
    }

    #[test]
    fn critic_scores_each_sample() {
        let cfg = ModelConfig::desk();
        let c = Critic::new(cfg.critic, 2);
        let mut tape = Tape::<f32>::new();
        let p = c.params.leaves(&mut tape);
        let cand = tape.leaf(randn(&[3, 1, 10, 10], 1));
        let lr = tape.leaf(randn(&[3, 11, 4, 4], 2));
        let st = tape.leaf(randn(&[3, 2, 10, 10], 3));
        let s = c.forward(&mut tape, &p, cand, lr, Some(st)).unwrap();
        assert_eq!(tape.shape(s), [3]);
        assert!(tape.value(s).is_finite());
    }
}
