//! Central finite-difference gradient checking against the tape.

use crate::compute::graph::{Graph, Var};
use crate::compute::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradReport {
    pub entries: Vec<GradCheckEntry>,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Relative error with a small denominator floor so that near-zero
/// gradients compare on an absolute scale.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Checks analytic gradients of a scalar loss against central differences,
/// one perturbation per trainable scalar. `build` must be deterministic.
pub fn grad_check<F>(store: &mut ParamStore, step: f64, build: F) -> Result<GradReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::Invalid("grad_check step must be positive".into()));
    }

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        let v = g.scalar_value(loss);
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite loss during grad check".into()));
        }
        Ok(v)
    };

    // Analytic pass.
    let analytic = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        g.backward(loss)?.params
    };

    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, p)| (id, p.name.clone(), p.value.len()))
        .collect();

    let mut entries = Vec::with_capacity(ids.len());
    for (id, name, len) in ids {
        let mut worst = 0.0f64;
        for k in 0..len {
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + step;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = orig - step;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.get(id).map_or(0.0, |g| g[k]);
            worst = worst.max(rel_err(a, numeric));
        }
        entries.push(GradCheckEntry { name, max_rel_err: worst });
    }

    Ok(GradReport { entries, step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::params::ParamKind;
    use crate::compute::tensor::Tensor;

    #[test]
    fn quadratic_loss_matches_analytic() {
        let mut store = ParamStore::new();
        let p = store
            .register(
                "theta",
                Tensor::vector(vec![0.7, -1.3, 2.1]).unwrap(),
                ParamKind::Weight,
                true,
            )
            .unwrap();
        let report = grad_check(&mut store, 1e-5, |g| {
            let v = g.param(p);
            Ok(g.dot(v, v))
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-6, "{}", report.max_rel_err());
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut store = ParamStore::new();
        let p = store
            .register("theta", Tensor::vector(vec![0.4]).unwrap(), ParamKind::Weight, true)
            .unwrap();
        let mut g = Graph::new(&store);
        let _unused = g.param(p);
        let loss = g.scalar(5.0);
        let grads = g.backward(loss).unwrap();
        assert!(grads.params.get(p).is_none() || grads.params.get(p).unwrap().iter().all(|&v| v == 0.0));
        // And the finite-difference check agrees.
        let report = grad_check(&mut store, 1e-5, |g| Ok(g.scalar(5.0))).unwrap();
        assert_eq!(report.max_rel_err(), 0.0);
    }

    #[test]
    fn rejects_non_positive_step() {
        let mut store = ParamStore::new();
        assert!(grad_check(&mut store, 0.0, |g| Ok(g.scalar(1.0))).is_err());
    }

    #[test]
    fn lstm_chain_of_three_steps() {
        use crate::compute::layers::LstmParams;
        use crate::compute::rng::stream;
        let mut store = ParamStore::new();
        let mut rng = stream(11, "init", 0);
        let cell = LstmParams::register(&mut store, "lstm", 2, 3, &mut rng).unwrap();
        let inputs = [vec![0.5, -0.2], vec![-1.0, 0.3], vec![0.1, 0.9]];
        let report = grad_check(&mut store, 1e-5, |g| {
            let mut state = cell.zero_state(g);
            for x in &inputs {
                let xv = g.input_vec(x.clone());
                state = cell.step(g, xv, state)?;
            }
            Ok(g.sum(state.0))
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-4, "{}", report.max_rel_err());
    }
}
