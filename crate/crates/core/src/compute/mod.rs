//! Differentiable-compute substrate: tensors, a reverse-mode tape,
//! parameterized layers, gradient checking, and the optimizer.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckEntry, GradReport};
pub use graph::{Gradients, Graph, Var, EPS};
pub use layers::{Linear, LstmParams};
pub use optim::{clip_global_norm, SgdMomentum};
pub use params::{ParamGrads, ParamId, ParamKind, ParamStore, Parameter};
pub use tensor::Tensor;

#[cfg(test)]
mod prop_tests {
    use super::*;
    use crate::compute::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn vec_strategy(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0f64..3.0, 1..=max_len)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn softmax_is_a_distribution(v in vec_strategy(12)) {
            let store = ParamStore::new();
            let mut g = Graph::new(&store);
            let x = g.input_vec(v);
            let y = g.softmax(x, None).unwrap();
            let out = g.val(y);
            prop_assert!(out.iter().all(|&p| p >= 0.0));
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmax_shift_invariant(v in vec_strategy(8), c in -50.0f64..50.0) {
            let store = ParamStore::new();
            let mut g = Graph::new(&store);
            let x = g.input_vec(v.clone());
            let y = g.softmax(x, None).unwrap();
            let xs = g.affine(x, 1.0, c);
            let ys = g.softmax(xs, None).unwrap();
            let (a, b) = (g.val(y).to_vec(), g.val(ys).to_vec());
            for (p, q) in a.iter().zip(b.iter()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn l2norm_output_norm_at_most_one(v in vec_strategy(12)) {
            let store = ParamStore::new();
            let mut g = Graph::new(&store);
            let x = g.input_vec(v.clone());
            let y = g.l2norm(x);
            let norm = g.val(y).iter().map(|a| a * a).sum::<f64>().sqrt();
            prop_assert!(norm <= 1.0 + 1e-12);
            let input_norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if input_norm > 1.0 {
                prop_assert!((norm - 1.0).abs() < 1e-7);
            }
        }

        // Composite of every differentiable op, checked against central
        // differences over random parameter values.
        #[test]
        fn random_composite_gradients_match_fd(seed in 0u64..500) {
            let mut store = ParamStore::new();
            let mut rng = stream(seed, "init", 0);
            let w = Linear::register(&mut store, "fc", 3, 4, &mut rng).unwrap();
            let cell = LstmParams::register(&mut store, "cell", 3, 2, &mut rng).unwrap();
            let v = store.register(
                "v",
                params::xavier_matrix(1, 6, &mut rng),
                ParamKind::Weight,
                true,
            ).unwrap();
            let xs: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let report = grad_check(&mut store, 1e-5, move |g| {
                let x = g.input_vec(xs.clone());
                let fx = w.apply(g, x)?;
                let nx = g.l2norm(fx);
                let sm = g.softmax(nx, None)?;
                let state = cell.zero_state(g);
                let (h, c) = cell.step(g, sm, state)?;
                let hc = g.concat(&[h, c, sm]);
                let sliced = g.slice(hc, 1, 6);
                let vm = g.param(v);
                let out = g.matvec(vm, sliced)?;
                let lsm = g.log_softmax(hc, None)?;
                let picked = g.pick(lsm, 2);
                let total = g.add(out, picked);
                Ok(g.sum(total))
            }).unwrap();
            prop_assert!(report.max_rel_err() < 1e-4, "max rel err {}", report.max_rel_err());
        }
    }
}
