//! Adam and the learning-rate schedule.

use crate::array::Array;
use crate::config::TrainConfig;

/// Linear warm-up from `lr_base` to `lr_warmup_target` over
/// `lr_warmup_iters` optimizer steps, halved from `lr_halve_epoch` onward.
pub fn lr_schedule(iteration: usize, epoch: usize, cfg: &TrainConfig) -> f64 {
    let ramp = if cfg.lr_warmup_iters == 0 {
        1.0
    } else {
        (iteration as f64 / cfg.lr_warmup_iters as f64).min(1.0)
    };
    let lr = cfg.lr_base + (cfg.lr_warmup_target - cfg.lr_base) * ramp;
    if epoch >= cfg.lr_halve_epoch {
        lr * 0.5
    } else {
        lr
    }
}

/// Adam with bias correction; beta1 0.9, beta2 0.999.
pub struct Adam {
    m: Vec<Array<f32>>,
    v: Vec<Array<f32>>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(shapes: &[&[usize]]) -> Self {
        Adam {
            m: shapes.iter().map(|s| Array::zeros(s)).collect(),
            v: shapes.iter().map(|s| Array::zeros(s)).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Array<f32>], grads: &[Array<f32>], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - (self.beta1).powi(self.t);
        let c2 = 1.0 - (self.beta2).powi(self.t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        for i in 0..params.len() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = grads[i].data();
            let p = params[i].data_mut();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let mh = m[j] as f64 / c1;
                let vh = v[j] as f64 / c2;
                p[j] -= (lr * mh / (vh.sqrt() + self.eps)) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_reproduces_warmup_and_halving() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, 0, &cfg), 3e-5);
        assert_eq!(lr_schedule(250, 0, &cfg), 3e-5 + (1e-4 - 3e-5) * 0.5);
        assert_eq!(lr_schedule(500, 3, &cfg), 1e-4);
        assert_eq!(lr_schedule(10_000, 14, &cfg), 1e-4);
        assert_eq!(lr_schedule(10_000, 15, &cfg), 5e-5);
        assert_eq!(lr_schedule(10_000, 19, &cfg), 5e-5);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(x) = sum (x - 3)^2
        let mut x = Array::<f32>::zeros(&[4]);
        let mut opt = Adam::new(&[&[4]]);
        for _ in 0..800 {
            let g = Array::from_fn(&[4], |i| 2.0 * (x.data()[i] - 3.0));
            opt.step(&mut [&mut x], &[g], 0.05);
        }
        for &v in x.iter() {
            assert!((v - 3.0).abs() < 1e-2, "{v}");
        }
    }

    #[test]
    fn adam_first_step_size_is_lr() {
        // bias-corrected first step moves by ~lr regardless of gradient scale
        let mut x = Array::<f32>::zeros(&[1]);
        let mut opt = Adam::new(&[&[1]]);
        opt.step(&mut [&mut x], &[Array::scalar(1234.5)], 0.01);
        assert!((x.data()[0] + 0.01).abs() < 1e-6);
    }
}
