use crate::params::ParamSet;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub max_iters: usize,
    pub power: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            max_iters: 10_000,
            power: 0.5,
        }
    }
}

/// Polynomial decay `lr0 * (1 - step / max_iters)^power`.
pub fn poly_lr(step: usize, cfg: &AdamWConfig) -> f64 {
    if cfg.max_iters == 0 {
        return cfg.lr0;
    }
    let frac = (step.min(cfg.max_iters) as f64) / cfg.max_iters as f64;
    cfg.lr0 * (1.0 - frac).powf(cfg.power)
}

/// AdamW with bias correction and decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    pub step: usize,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, params: &ParamSet<T>) -> Self {
        let zeros = || {
            params
                .entries
                .iter()
                .map(|e| vec![T::zero(); e.value.len()])
                .collect()
        };
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn current_lr(&self) -> f64 {
        poly_lr(self.step, &self.cfg)
    }

    /// Applies one update from the accumulated gradients.
    pub fn step(&mut self, params: &mut ParamSet<T>) {
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let decay = T::from_f64(1.0 - lr * c.weight_decay);
        for (i, e) in params.entries.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..e.grad.len() {
                let g = e.grad[j];
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let mh = m[j].as_f64() / bc1;
                let vh = v[j].as_f64() / bc2;
                let theta = e.value.data[j] * decay;
                e.value.data[j] = theta - T::from_f64(lr * mh / (vh.sqrt() + c.eps));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(v: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.add("x", Tensor::scalar(v));
        ps
    }

    #[test]
    fn schedule_points() {
        let cfg = AdamWConfig {
            max_iters: 1000,
            ..Default::default()
        };
        assert_eq!(poly_lr(0, &cfg), 1e-4);
        assert_eq!(poly_lr(1000, &cfg), 0.0);
        assert!((poly_lr(500, &cfg) - 7.0711e-5).abs() < 1e-9);
    }

    #[test]
    fn zero_grad_updates() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            max_iters: 0,
            ..Default::default()
        };
        let mut ps = one_param(2.5);
        let mut opt = AdamW::new(cfg, &ps);
        opt.step(&mut ps);
        assert_eq!(ps.entries[0].value.data[0], 2.5);
        let cfg = AdamWConfig {
            max_iters: 0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &ps);
        opt.step(&mut ps);
        assert_eq!(ps.entries[0].value.data[0], 2.5 * (1.0 - 1e-6));
    }
}
