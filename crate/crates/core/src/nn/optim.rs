use super::{collect, collect_mut, is_buffer, Params};

/// Adam with L2 weight decay folded into the gradient. Buffers are skipped.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    steps: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(learning_rate: f32, weight_decay: f32) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn step<T: Params>(&mut self, model: &mut T, grads: &T) {
        let g = collect(grads);
        let mut p = collect_mut(model);
        if self.m.is_empty() {
            self.m = g.iter().map(|(_, x)| vec![0.0; x.len()]).collect();
            self.v = self.m.clone();
        }
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (i, ((name, w), (_, gw))) in p.iter_mut().zip(&g).enumerate() {
            if is_buffer(name) {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..w.len() {
                let grad = gw[j] + self.weight_decay * w[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * grad;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * grad * grad;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

pub fn global_norm<T: Params + ?Sized>(grads: &T) -> f64 {
    collect(grads)
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|v| (*v as f64) * (*v as f64))
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm<T: Params + ?Sized>(grads: &mut T, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = (max_norm / norm) as f32;
        for (_, g) in collect_mut(grads) {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array1};

    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        let mut w: Array1<f32> = array![3.0, -2.0];
        let mut opt = Adam::new(0.1, 0.0);
        for _ in 0..300 {
            let g = w.mapv(|v| 2.0 * v);
            opt.step(&mut w, &g);
        }
        assert!(w.iter().all(|v| v.abs() < 0.05), "{w}");
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut w: Array1<f32> = array![1.0];
        let mut opt = Adam::new(0.01, 0.0);
        opt.step(&mut w, &array![5.0]);
        assert!((w[0] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g: Array1<f32> = array![30.0, 40.0];
        assert_eq!(clip_global_norm(&mut g, 10.0), 50.0);
        assert!((global_norm(&g) - 10.0).abs() < 1e-5);
    }
}
