//! Adam optimizer over the flattened parameter vector.

use super::lstm::LstmParams;

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut LstmParams, grads: &LstmParams) {
        self.t += 1;
        let mut flat = params.to_flat();
        let gflat = grads.to_flat();
        debug_assert_eq!(flat.len(), self.m.len());
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..flat.len() {
            let g = gflat[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            flat[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        params.assign_from_flat(&flat);
    }
}
