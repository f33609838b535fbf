use serde::{Deserialize, Serialize};

use super::layers::ParamSet;
use super::tensor::Tensor;

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.shape());
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: params.tensors().iter().map(zeros).collect(),
            v: params.tensors().iter().map(zeros).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// First and second moment estimates, index-aligned with the parameters.
    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Rebuilds an optimizer from saved state.
    pub fn from_state(lr: f64, beta1: f64, beta2: f64, eps: f64, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Self {
        assert_eq!(m.len(), v.len(), "moment count");
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step,
            m,
            v,
        }
    }

    /// One update; `grads[i]` of `None` leaves parameter `i` untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>]) {
        assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pv, gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mh = *mv / c1;
                let vh = *vv / c2;
                *pv -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut ps = ParamSet::new();
        ps.add("x", Tensor::from_vec(&[2], vec![3.0, -2.0]));
        let mut opt = Adam::new(&ps, 0.1, 0.9, 0.999);
        for _ in 0..500 {
            let g = ps.get(0).map(|x| 2.0 * (x - 1.0));
            opt.step(&mut ps, &[Some(g)]);
        }
        for v in ps.get(0).data() {
            assert!((v - 1.0).abs() < 1e-3, "{v}");
        }
    }
}
