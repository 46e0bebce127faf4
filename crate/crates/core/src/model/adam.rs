use super::{ModelError, ParamSet, Result};
use crate::tape::Tensor;

const EPS: f64 = 1e-8;

/// Bias-corrected Adam with per-tensor first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros = || params.tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update in place.
    pub fn update(&mut self, params: &mut ParamSet, grads: &[Tensor<f32>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(ModelError::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.tensors.iter_mut().zip(grads).enumerate() {
            if p.shape != g.shape {
                return Err(ModelError::Shape(format!(
                    "gradient {:?} for parameter {:?}",
                    g.shape, p.shape
                )));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.data.len() {
                let gi = g.data[i] as f64;
                let mi = self.beta1 * m[i] as f64 + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v[i] as f64 + (1.0 - self.beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let upd = self.lr * (mi / c1) / ((vi / c2).sqrt() + EPS);
                p.data[i] = (p.data[i] as f64 - upd) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: f32) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("x".into(), Tensor::new(vec![1], vec![x]));
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = one(1.0);
        let mut a = Adam::new(&p, 0.1, 0.5, 0.9);
        a.update(&mut p, &[Tensor::new(vec![1], vec![3.0])]).unwrap();
        assert!((p.tensors[0].data[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = one(4.0);
        let mut a = Adam::new(&p, 0.05, 0.5, 0.9);
        for _ in 0..500 {
            let x = p.tensors[0].data[0];
            a.update(&mut p, &[Tensor::new(vec![1], vec![2.0 * (x - 1.5)])])
                .unwrap();
        }
        assert!((p.tensors[0].data[0] - 1.5).abs() < 0.05);
        assert!(a.update(&mut p, &[]).is_err());
    }
}
