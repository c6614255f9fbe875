use super::params::{ParamGrads, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW) weight decay.
    pub weight_decay: f64,
    /// Global-norm gradient clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: Some(1.0),
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let m = store.iter().map(|(_, e)| vec![0.0; e.value.len()]).collect();
        let v = store.iter().map(|(_, e)| vec![0.0; e.value.len()]).collect();
        Self { config, step: 0, m, v }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update at learning rate `lr` (schedulers pass their value
    /// here). Parameters without gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        self.step += 1;
        let c = self.config;
        let clip = match c.clip_norm {
            Some(max) => {
                let norm = grads.global_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if !store.entry(id).trainable {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g[i] * clip;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * p[i]);
            }
        }
    }
}

/// Linear warmup followed by cosine decay to zero.
pub fn warmup_cosine(step: usize, total: usize, warmup_ratio: f64, base_lr: f64) -> f64 {
    let total = total.max(1);
    let warmup = ((total as f64) * warmup_ratio).round() as usize;
    if step < warmup {
        return base_lr * (step + 1) as f64 / warmup as f64;
    }
    let span = (total - warmup).max(1) as f64;
    let t = ((step - warmup) as f64 / span).min(1.0);
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Graph, Tensor};

    #[test]
    fn adam_minimises_quadratic() {
        let mut store = ParamStore::new();
        let id = store.insert("x", Tensor::from_vec(&[2], vec![3.0, -2.0]), true);
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.1,
                clip_norm: None,
                ..Default::default()
            },
            &store,
        );
        for _ in 0..500 {
            let mut g = Graph::new();
            let x = g.param(&store, id);
            let l = g.mean_square(x);
            let grads = g.backward(l);
            let mut pg = ParamGrads::new(store.len());
            g.accumulate_param_grads(&grads, &mut pg);
            opt.step(&mut store, &pg, 0.1);
        }
        assert!(store.get(id).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn schedule_shape() {
        assert!(warmup_cosine(0, 100, 0.1, 1.0) < warmup_cosine(9, 100, 0.1, 1.0));
        assert!((warmup_cosine(10, 100, 0.1, 1.0) - 1.0).abs() < 1e-12);
        assert!(warmup_cosine(99, 100, 0.1, 1.0) < 0.01);
    }
}
