use super::Tensor4;
use crate::{Error, Result};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// One update of `params` in place.
    pub fn update(&mut self, params: &mut [Tensor4], grads: &[Tensor4]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!("{} parameters, {} gradients", params.len(), grads.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.dims() != g.dims() {
                return Err(Error::Shape(format!("parameter {:?} vs gradient {:?}", p.dims(), g.dims())));
            }
        }
        let mut views: Vec<(&mut [f64], &[f64])> =
            params.iter_mut().zip(grads).map(|(p, g)| (p.data_mut(), g.data())).collect();
        self.update_slices(&mut views)
    }

    /// Same as [`AdamState::update`] on raw slices.
    pub fn update_slices(&mut self, params: &mut [(&mut [f64], &[f64])]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, (p, _))| m.len() != p.len())
        {
            return Err(Error::Shape("parameter layout changed between optimizer steps".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            if p.len() != g.len() {
                return Err(Error::Shape(format!("{} values, {} gradients", p.len(), g.len())));
            }
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                p[i] -= self.lr * (update + self.weight_decay * p[i]);
            }
        }
        Ok(())
    }
}
