//! Plain Adam with bias correction.

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> AdamState {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// One update over a parameter block.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        // Minimize (x - 3)^2.
        let mut params = vec![0.0];
        let mut adam = AdamState::new(1, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let g = 2.0 * (params[0] - 3.0);
            adam.step(&mut params, &[g], 0.01);
        }
        assert!((params[0] - 3.0).abs() < 1e-2, "x = {}", params[0]);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![1.5, -0.5];
        let mut adam = AdamState::new(2, 0.9, 0.999, 1e-8);
        adam.step(&mut params, &[0.0, 0.0], 0.1);
        assert_eq!(params, vec![1.5, -0.5]);
    }
}
