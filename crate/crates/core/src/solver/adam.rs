/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64]) {
        debug_assert_eq!(x.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            x[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_has_learning_rate_size() {
        let mut a = Adam::new(2, 0.1);
        let mut x = [1.0, -1.0];
        a.step(&mut x, &[3.0, -0.001]);
        assert!((x[0] - 0.9).abs() < 1e-6);
        assert!((x[1] + 0.9).abs() < 1e-4);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut a = Adam::new(1, 0.05);
        let mut x = [2.0];
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 0.5)];
            a.step(&mut x, &g);
        }
        assert!((x[0] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut a = Adam::new(3, 0.1);
        let mut x = [0.1, 0.2, 0.3];
        a.step(&mut x, &[0.0; 3]);
        assert_eq!(x, [0.1, 0.2, 0.3]);
    }
}
