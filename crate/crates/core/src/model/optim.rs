//! Adam optimizer over the model's parameter/gradient visitation order.

use super::layers::ParamGrad;

pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    /// First and second moments per parameter tensor, keyed by visitation
    /// order; lazily sized on the first step.
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            moments: Vec::new(),
        }
    }

    pub fn step(&mut self, mut params: Vec<ParamGrad<'_>>) {
        self.step_count += 1;
        if self.moments.is_empty() {
            self.moments =
                params.iter().map(|pg| (vec![0.0; pg.grad.len()], vec![0.0; pg.grad.len()])).collect();
        }
        assert_eq!(self.moments.len(), params.len(), "parameter layout changed mid-task");
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (pg, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            assert_eq!(pg.grad.len(), m.len(), "parameter shape changed mid-task");
            for i in 0..pg.grad.len() {
                let g = pg.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                pg.param[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(p) = sum((p - target)^2): Adam should walk p toward target.
        let target = [1.0, -2.0, 0.5];
        let mut p = vec![0.0f64; 3];
        let mut opt = Adam::new(0.05);
        for _ in 0..500 {
            let grad: Vec<f64> = p.iter().zip(&target).map(|(pi, t)| 2.0 * (pi - t)).collect();
            opt.step(vec![ParamGrad { param: &mut p, grad: &grad }]);
        }
        for (pi, t) in p.iter().zip(&target) {
            assert!((pi - t).abs() < 1e-2, "{pi} vs {t}");
        }
    }

    #[test]
    fn zero_learning_rate_freezes_params() {
        let mut p = vec![0.3f64, -0.7];
        let grad = vec![1.0, -5.0];
        let mut opt = Adam::new(0.0);
        opt.step(vec![ParamGrad { param: &mut p, grad: &grad }]);
        assert_eq!(p, vec![0.3, -0.7]);
    }
}
