use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::model::HcmsParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state, one moment pair per parameter tensor in
/// [`crate::model::Hcms::visit`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

pub(crate) fn flatten<T>(p: &HcmsParams<T>) -> Vec<&Tensor<T>> {
    let mut out = Vec::new();
    p.visit(&mut |_, t| out.push(t));
    out
}

impl Adam {
    pub fn new<T: Real>(config: AdamConfig, params: &HcmsParams<T>) -> Self {
        let zeros: Vec<Vec<f64>> = flatten(params).iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// One bias-corrected update with learning rate `lr`.
    pub fn update<T: Real>(&mut self, params: &mut HcmsParams<T>, grads: &HcmsParams<T>, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let grads = flatten(grads);
        let mut k = 0;
        params.visit_mut(&mut |p| {
            let g = grads[k].data();
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g[i].as_f64();
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
                *w = T::of(w.as_f64() - step);
            }
            k += 1;
        });
    }
}

/// `acc += g`, tensor by tensor.
pub(crate) fn accumulate<T: Real>(acc: &mut HcmsParams<T>, g: &HcmsParams<T>) {
    let g = flatten(g);
    let mut k = 0;
    acc.visit_mut(&mut |a| {
        for (x, y) in a.data_mut().iter_mut().zip(g[k].data()) {
            *x = *x + *y;
        }
        k += 1;
    });
}

pub(crate) fn scale<T: Real>(p: &mut HcmsParams<T>, c: f64) {
    let c = T::of(c);
    p.visit_mut(&mut |t| t.data_mut().iter_mut().for_each(|x| *x = *x * c));
}
