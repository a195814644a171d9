//! AdamW with decoupled weight decay and a linear warmup/decay schedule.

use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub total_steps: usize,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            warmup_fraction: 0.05,
            total_steps: 1,
        }
    }
}

impl AdamWConfig {
    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).round() as usize
    }

    /// Learning-rate multiplier for the update taken after `step` completed
    /// updates: rises linearly to 1 over the warmup, then falls linearly to 0
    /// at `total_steps`.
    pub fn schedule(&self, step: usize) -> f64 {
        let warmup = self.warmup_steps();
        if step < warmup {
            return step as f64 / warmup as f64;
        }
        if step >= self.total_steps {
            return 0.0;
        }
        (self.total_steps - step) as f64 / (self.total_steps - warmup) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub config: AdamWConfig,
    pub m: Grads,
    pub v: Grads,
    pub step: usize,
    pub skipped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Applied { lr: f64 },
    /// The gradient held a non-finite value; nothing changed.
    Skipped,
}

impl OptimState {
    pub fn new(params: &ParamStore, config: AdamWConfig) -> Self {
        OptimState {
            config,
            m: params.zero_grads(),
            v: params.zero_grads(),
            step: 0,
            skipped: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) -> StepOutcome {
        if !grads.all_finite() {
            self.skipped += 1;
            return StepOutcome::Skipped;
        }
        let c = &self.config;
        let lr = c.lr * c.schedule(self.step);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (ti, tensor) in params.tensors_mut().iter_mut().enumerate() {
            let g = &grads.data[ti];
            let m = &mut self.m.data[ti];
            let v = &mut self.v.data[ti];
            for i in 0..tensor.data.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let p = &mut tensor.data[i];
                *p -= lr * c.weight_decay * *p;
                *p -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        StepOutcome::Applied { lr }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Init;
    use rand::SeedableRng;

    fn scalar(v: f64) -> ParamStore {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let id = s.add("p", &[1], Init::Zeros, &mut rng);
        s.get_mut(id)[0] = v;
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = scalar(0.7);
        let mut st = OptimState::new(&p, AdamWConfig { lr: 0.1, total_steps: 10, ..Default::default() });
        let g = p.zero_grads();
        for _ in 0..5 {
            st.step(&mut p, &g);
        }
        assert_eq!(p.tensors()[0].data[0], 0.7);
    }

    #[test]
    fn multiplier_is_one_at_warmup_end() {
        let c = AdamWConfig { warmup_fraction: 0.05, total_steps: 200, ..Default::default() };
        assert_eq!(c.warmup_steps(), 10);
        assert_eq!(c.schedule(10), 1.0);
        assert_eq!(c.schedule(0), 0.0);
        assert_eq!(c.schedule(5), 0.5);
        assert_eq!(c.schedule(105), 0.5);
        assert_eq!(c.schedule(200), 0.0);
    }

    #[test]
    fn two_steps_match_hand_computation() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.01,
            warmup_fraction: 0.0,
            total_steps: 2,
            ..Default::default()
        };
        let mut p = scalar(1.0);
        let mut st = OptimState::new(&p, cfg);
        let mut g = p.zero_grads();
        g.data[0][0] = 1.0;

        // step 1: multiplier 2/2, m = 0.1, v = 0.001, bias-corrected both 1
        st.step(&mut p, &g);
        let lr1 = 0.1;
        let p1 = 1.0 - lr1 * 0.01 * 1.0 - lr1 * 1.0 / (1.0 + 1e-8);
        assert!((p.tensors()[0].data[0] - p1).abs() < 1e-12);

        // step 2: multiplier 1/2; m = 0.19, v = 0.001999
        st.step(&mut p, &g);
        let lr2 = 0.05;
        let m_hat = 0.19 / (1.0 - 0.81);
        let v_hat: f64 = 0.001999 / (1.0 - 0.998001);
        let p2 = p1 - lr2 * 0.01 * p1 - lr2 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p.tensors()[0].data[0] - p2).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut p = scalar(1.0);
        let mut st = OptimState::new(&p, AdamWConfig { lr: 0.1, total_steps: 4, ..Default::default() });
        let mut g = p.zero_grads();
        g.data[0][0] = f64::NAN;
        assert_eq!(st.step(&mut p, &g), StepOutcome::Skipped);
        assert_eq!(st.skipped, 1);
        assert_eq!(st.step, 0);
        assert_eq!(p.tensors()[0].data[0], 1.0);
    }
}
