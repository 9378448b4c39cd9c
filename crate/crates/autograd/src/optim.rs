//! First-order optimizers over a [`ParamStore`].

use crate::float::Float;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Adaptive-moment optimizer (bias-corrected first and second moments).
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(params: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<_> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            steps: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.steps += 1;
        let c = T::from_f64c;
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let bc1 = c(1.0 - self.beta1.powi(self.steps as i32));
        let bc2 = c(1.0 - self.beta2.powi(self.steps as i32));
        let (lr, eps) = (c(self.lr), c(self.eps));
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Root-mean-square propagation (no momentum, no centering).
#[derive(Clone, Debug)]
pub struct RmsProp<T> {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    pub steps: u64,
    pub square_avg: Vec<Tensor<T>>,
}

impl<T: Float> RmsProp<T> {
    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        Self {
            lr,
            alpha: 0.99,
            eps: 1e-8,
            steps: 0,
            square_avg: params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.steps += 1;
        let c = T::from_f64c;
        let (a, lr, eps) = (c(self.alpha), c(self.lr), c(self.eps));
        for ((p, g), s) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.square_avg)
        {
            let (p, s) = (p.data_mut(), s.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                s[i] = a * s[i] + (T::one() - a) * gi * gi;
                p[i] -= lr * gi / (s[i].sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::from_vec(vec![2], vec![3.0, -2.0]));
        s
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = quadratic_store();
        let mut opt = Adam::new(&s, 0.1, 0.9, 0.999);
        let g = s.tensors()[0].map(|x| 2.0 * x);
        opt.step(&mut s, &[g]);
        // bias-corrected first step is lr * sign(g)
        assert!((s.tensors()[0].data()[0] - 2.9).abs() < 1e-6);
        assert!((s.tensors()[0].data()[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn optimizers_descend_a_bowl() {
        let mut s = quadratic_store();
        let mut adam = Adam::new(&s, 0.01, 0.5, 0.9);
        let mut r = quadratic_store();
        let mut rms = RmsProp::new(&r, 0.01);
        for _ in 0..2000 {
            let g = s.tensors()[0].map(|x| 2.0 * x);
            adam.step(&mut s, &[g]);
            let g = r.tensors()[0].map(|x| 2.0 * x);
            rms.step(&mut r, &[g]);
        }
        assert!(s.tensors()[0].max_abs() < 5e-2);
        assert!(r.tensors()[0].max_abs() < 1e-1);
    }
}
