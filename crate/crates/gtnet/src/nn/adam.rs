//! Adam optimizer over a [`ParamStore`].

use indexmap::IndexMap;
use ndarray::ArrayD;

use super::params::ParamStore;

struct Moments {
    m: ArrayD<f64>,
    v: ArrayD<f64>,
    t: u64,
}

/// Adaptive-moment optimizer. Only parameters that received a gradient in a
/// step are touched, so freezing a branch is just not routing gradients to it.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    state: IndexMap<String, Moments>,
}

impl Adam {
    pub fn new() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, state: IndexMap::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &IndexMap<String, ArrayD<f64>>, lr: f64) {
        for (name, grad) in grads {
            let param = store
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter '{name}'"));
            let entry = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: ArrayD::zeros(grad.raw_dim()),
                v: ArrayD::zeros(grad.raw_dim()),
                t: 0,
            });
            entry.t += 1;
            let t = entry.t as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            for ((p, g), (m, v)) in param
                .iter_mut()
                .zip(grad.iter())
                .zip(entry.m.iter_mut().zip(entry.v.iter_mut()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new()
    }
}
