use crate::error::{Error, Result};
use crate::numerics::{Parameters, Tensor};

/// Adam with decoupled weight decay:
/// `p ← p − lr · (m̂ / (√v̂ + ε) + wd · p)` for decaying tensors,
/// without the `wd` term otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// First- and second-moment accumulators, in parameter order.
    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// One update. `grads` must follow the order of `params.entries()`.
    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &[Tensor]) -> Result<()> {
        let decays: Vec<bool> = params.entries().iter().map(|(_, _, d)| *d).collect();
        let tensors = params.tensors_mut();
        if tensors.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                tensors.len()
            )));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Tensor::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in tensors.into_iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient {i}: {:?} vs parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let wd = if decays[i] { self.weight_decay } else { 0.0 };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (pj, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
                *pj -= self.lr * (update + wd * *pj);
            }
        }
        Ok(())
    }
}
