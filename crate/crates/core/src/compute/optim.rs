//! SGD with momentum and decoupled-by-kind weight decay.

use crate::compute::params::{ParamKind, ParamStore};
use crate::compute::tensor::Tensor;
use crate::error::{Error, Result};

/// v ← momentum·v + grad + weight_decay·θ;  θ ← θ − lr·v.
/// Decay applies to weights only unless `decay_biases` is set.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_biases: bool,
    velocity: Vec<Tensor>,
}

impl SgdMomentum {
    pub fn new(store: &ParamStore, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        let velocity = store
            .iter()
            .map(|(_, p)| Tensor::zeros_like(&p.value))
            .collect();
        SgdMomentum { lr, momentum, weight_decay, decay_biases: false, velocity }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut [Tensor] {
        &mut self.velocity
    }

    /// Applies one update from the gradients accumulated in the store.
    /// A non-finite gradient aborts before any parameter is touched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for (_, p) in store.iter() {
            if p.trainable && !p.grad.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter {:?}",
                    p.name
                )));
            }
        }
        for (id, p) in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            let decay = if p.kind == ParamKind::Weight || self.decay_biases {
                self.weight_decay
            } else {
                0.0
            };
            let v = self.velocity[id.index()].data_mut();
            let theta = p.value.data_mut();
            let grad = p.grad.data();
            for k in 0..theta.len() {
                v[k] = self.momentum * v[k] + grad[k] + decay * theta[k];
                theta[k] -= self.lr * v[k];
            }
        }
        Ok(())
    }
}

/// Scales all trainable gradients so their global L2 norm is at most
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, p) in store.iter() {
        if p.trainable {
            sq += p.grad.data().iter().map(|v| v * v).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, p) in store.iter_mut() {
            if p.trainable {
                for v in p.grad.data_mut() {
                    *v *= s;
                }
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: Vec<f64>) -> (ParamStore, crate::compute::params::ParamId) {
        let mut s = ParamStore::new();
        let id = s
            .register(
                "theta",
                Tensor::vector(value).unwrap(),
                ParamKind::Weight,
                true,
            )
            .unwrap();
        (s, id)
    }

    #[test]
    fn plain_gradient_step() {
        let (mut s, id) = one_param(vec![0.0]);
        s.get_mut(id).grad = Tensor::vector(vec![1.0]).unwrap();
        let mut opt = SgdMomentum::new(&s, 0.1, 0.0, 0.0);
        opt.step(&mut s).unwrap();
        assert!((s.get(id).value.data()[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let (mut s, id) = one_param(vec![2.5]);
        let mut opt = SgdMomentum::new(&s, 0.1, 0.0, 0.0);
        opt.step(&mut s).unwrap();
        assert_eq!(s.get(id).value.data()[0], 2.5);
    }

    #[test]
    fn two_momentum_steps_hand_recurrence() {
        // v1 = 1 → θ = −0.1; v2 = 0.95 + 1 = 1.95 → θ = −0.295
        let (mut s, id) = one_param(vec![0.0]);
        let mut opt = SgdMomentum::new(&s, 0.1, 0.95, 0.0);
        for _ in 0..2 {
            s.get_mut(id).grad = Tensor::vector(vec![1.0]).unwrap();
            opt.step(&mut s).unwrap();
            s.zero_grads();
        }
        assert!((s.get(id).value.data()[0] + 0.295).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let (mut s, id) = one_param(vec![1.0]);
        s.get_mut(id).grad.data_mut()[0] = f64::NAN;
        let mut opt = SgdMomentum::new(&s, 0.1, 0.9, 0.0);
        assert!(opt.step(&mut s).is_err());
        assert_eq!(s.get(id).value.data()[0], 1.0);
    }

    #[test]
    fn biases_skip_decay_by_default() {
        let mut s = ParamStore::new();
        let w = s
            .register("w", Tensor::vector(vec![1.0]).unwrap(), ParamKind::Weight, true)
            .unwrap();
        let b = s
            .register("b", Tensor::vector(vec![1.0]).unwrap(), ParamKind::Bias, true)
            .unwrap();
        let mut opt = SgdMomentum::new(&s, 1.0, 0.0, 0.5);
        opt.step(&mut s).unwrap();
        assert!((s.get(w).value.data()[0] - 0.5).abs() < 1e-15);
        assert_eq!(s.get(b).value.data()[0], 1.0);
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let (mut s, id) = one_param(vec![0.0, 0.0]);
        s.get_mut(id).grad = Tensor::vector(vec![3.0, 4.0]).unwrap();
        let norm = clip_global_norm(&mut s, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let g = s.get(id).grad.data();
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
