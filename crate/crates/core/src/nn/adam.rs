use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected ADAM moments for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter with `mask[i]` set (all when `mask` is
    /// `None`). Missing gradients count as zero.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Option<Tensor>],
        lr: f64,
        mask: Option<&[bool]>,
    ) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::shape(format!(
                "{} gradients and {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.index();
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let p = store.get_mut(id);
            if let Some(g) = &grads[i] {
                if g.len() != p.len() {
                    return Err(Error::shape(format!(
                        "gradient {:?} for parameter {:?}",
                        g.shape(),
                        p.shape()
                    )));
                }
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let g = grads[i].as_ref().map_or(0.0, |g| g.data()[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p.data_mut()[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
