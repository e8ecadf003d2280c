//! Bias-corrected Adam.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Moment buffers sized for `params`, with the usual defaults
    /// (`beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`).
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(shape_err("adam_step", &[params.len()], &[grads.len(), self.m.len()]));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.numel() != self.m[i].len() {
                return Err(shape_err("adam_step", p.shape(), g.shape()));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gv;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gv * gv;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_null_update() {
        let mut p = vec![Tensor::from_vec([3], vec![1.0, -2.0, 0.5])];
        let before = p.clone();
        let mut adam = AdamState::new(&p, 1e-3);
        adam.step(&mut p, &[Tensor::zeros([3])]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::from_vec([2], vec![0.0, 0.0])];
        let mut adam = AdamState::new(&p, 1e-3);
        let g = Tensor::from_vec([2], vec![3.0, -0.5]);
        adam.step(&mut p, std::slice::from_ref(&g)).unwrap();
        for (pv, gv) in p[0].data().iter().zip(g.data()) {
            let expected = 1e-3 * gv.abs() / (gv.abs() + 1e-8);
            assert!((pv.abs() - expected).abs() < 1e-15);
            assert!((pv.abs() - 1e-3).abs() < 1e-10);
            assert_eq!(pv.signum(), -gv.signum());
        }
    }

    #[test]
    fn scalar_descent_converges() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut adam = AdamState::new(&p, 0.1);
        for _ in 0..100 {
            let x = p[0].item();
            adam.step(&mut p, &[Tensor::scalar(2.0 * (x - 2.0))]).unwrap();
        }
        assert!((p[0].item() - 2.0).abs() < 1e-2, "x = {}", p[0].item());
        assert_eq!(adam.step_count(), 100);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![Tensor::zeros([2])];
        let mut adam = AdamState::new(&p, 1e-3);
        assert!(adam.step(&mut p, &[Tensor::zeros([3])]).is_err());
    }
}
