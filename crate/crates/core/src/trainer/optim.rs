use ndarray::Array2;

use crate::model::checkpoint::Checkpoint;
use crate::model::layers::Param;

/// Adaptive-moment optimizer with global gradient-norm clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    pub step_count: u64,
    moments: Vec<(String, Array2<f64>, Array2<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64, clip_norm: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm,
            step_count: 0,
            moments: Vec::new(),
        }
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(params: &[&mut Param]) -> f64 {
        params.iter().map(|p| p.grad.iter().map(|g| g * g).sum::<f64>()).sum::<f64>().sqrt()
    }

    /// One update. Returns the gradient norm before clipping.
    pub fn step(&mut self, mut params: Vec<&mut Param>) -> f64 {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (p.name.clone(), Array2::zeros(p.value.dim()), Array2::zeros(p.value.dim())))
                .collect();
        }
        let norm = Self::grad_norm(&params);
        let scale = if self.clip_norm > 0.0 && norm > self.clip_norm {
            self.clip_norm / norm
        } else {
            1.0
        };
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);
        for (p, (_, m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    let g = g * scale;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
        norm
    }

    pub fn save_into(&self, ckpt: &mut Checkpoint) {
        for (name, m, v) in &self.moments {
            ckpt.push(format!("adam.m.{name}"), m.clone());
            ckpt.push(format!("adam.v.{name}"), v.clone());
        }
    }

    /// Restores moments for `names` from a checkpoint; missing entries leave the state empty.
    pub fn load_from(&mut self, ckpt: &Checkpoint, names: &[String], step_count: u64) -> bool {
        let mut moments = Vec::with_capacity(names.len());
        for name in names {
            match (ckpt.array(&format!("adam.m.{name}")), ckpt.array(&format!("adam.v.{name}"))) {
                (Some(m), Some(v)) => moments.push((name.clone(), m.clone(), v.clone())),
                _ => return false,
            }
        }
        self.moments = moments;
        self.step_count = step_count;
        true
    }
}
