use serde::{Deserialize, Serialize};

use crate::ParamStore;

/// Scales `grads` so their global L2 norm is at most `cap`.
pub fn clip_global_norm(grads: &ParamStore, cap: f64) -> ParamStore {
    assert!(cap > 0.0, "clip cap must be positive");
    let norm = grads.global_norm();
    let mut out = grads.clone();
    if norm > cap {
        out.scale(cap / norm);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adam with bias correction. Moment buffers are created lazily per name.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: ParamStore,
    second: ParamStore,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: ParamStore::new(),
            second: ParamStore::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every entry of `params` that has a gradient.
    pub fn update(&mut self, params: &mut ParamStore, grads: &ParamStore) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, g) in grads.iter() {
            let Some(p) = params.get_mut(name) else { continue };
            if !self.first.contains(name) {
                self.first.set(name, crate::Tensor::zeros(g.shape()));
                self.second.set(name, crate::Tensor::zeros(g.shape()));
            }
            let m = self.first.get_mut(name).unwrap().data_mut();
            for (mi, gi) in m.iter_mut().zip(g.data()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
            }
            let v = self.second.get_mut(name).unwrap().data_mut();
            for (vi, gi) in v.iter_mut().zip(g.data()) {
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            }
            let m = self.first.get(name).unwrap().data();
            let v = self.second.get(name).unwrap().data();
            for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m).zip(v) {
                *pi -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn one(name: &str, data: Vec<f64>) -> ParamStore {
        [(name.to_string(), Tensor::vector(data))].into_iter().collect()
    }

    #[test]
    fn small_norm_is_untouched() {
        let g = one("a", vec![0.3, 0.4]);
        assert_eq!(clip_global_norm(&g, 1.0), g);
    }

    #[test]
    fn large_norm_is_rescaled_to_the_cap() {
        let g = one("a", vec![3.0, 4.0]);
        let c = clip_global_norm(&g, 2.5);
        assert_eq!(c.get("a").unwrap().data(), &[1.5, 2.0]);
    }

    #[test]
    fn zero_gradients_stay_zero() {
        let g = one("a", vec![0.0, 0.0, 0.0]);
        assert_eq!(clip_global_norm(&g, 0.1), g);
    }

    #[test]
    fn clipping_spans_all_entries() {
        let mut g = one("a", vec![3.0]);
        g.set("b", Tensor::vector(vec![4.0]));
        let c = clip_global_norm(&g, 1.0);
        assert!((c.global_norm() - 1.0).abs() < 1e-15);
        assert!((c.get("a").unwrap().data()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr_against_the_gradient_sign() {
        let mut p = one("a", vec![1.0, -1.0]);
        let g = one("a", vec![0.5, -2.0]);
        let mut opt = Adam::new(AdamConfig::with_lr(0.1));
        opt.update(&mut p, &g);
        let d = p.get("a").unwrap().data();
        assert!((d[0] - 0.9).abs() < 1e-6);
        assert!((d[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut p = one("a", vec![1.0, -1.0]);
        let before = p.clone();
        let mut opt = Adam::new(AdamConfig::with_lr(0.0));
        opt.update(&mut p, &one("a", vec![10.0, 10.0]));
        assert_eq!(p, before);
    }
}
