//! Parameterized building blocks: fully-connected layers and LSTM cells.

use rand::Rng;

use crate::compute::graph::{Graph, Var};
use crate::compute::params::{xavier_matrix, ParamId, ParamKind, ParamStore};
use crate::compute::tensor::Tensor;
use crate::error::{Error, Result};

/// y = W x + b. Weights are Xavier-initialized, biases zero.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub out_dim: usize,
    pub in_dim: usize,
}

impl Linear {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        out_dim: usize,
        in_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.register(
            &format!("{name}.w"),
            xavier_matrix(out_dim, in_dim, rng),
            ParamKind::Weight,
            true,
        )?;
        let b = store.register(
            &format!("{name}.b"),
            Tensor::zeros(vec![out_dim]),
            ParamKind::Bias,
            true,
        )?;
        Ok(Linear { w, b, out_dim, in_dim })
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        if g.len_of(x) != self.in_dim {
            return Err(Error::Shape(format!(
                "fc expects input of length {}, got {}",
                self.in_dim,
                g.len_of(x)
            )));
        }
        let w = g.param(self.w);
        let b = g.param(self.b);
        let wx = g.matvec(w, x)?;
        Ok(g.add(wx, b))
    }
}

/// One LSTM cell. Gate order on the stacked 4H axis: input, forget,
/// candidate, output. Single bias vector.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w_ih = store.register(
            &format!("{name}.w_ih"),
            xavier_matrix(4 * hidden, input_dim, rng),
            ParamKind::Weight,
            true,
        )?;
        let w_hh = store.register(
            &format!("{name}.w_hh"),
            xavier_matrix(4 * hidden, hidden, rng),
            ParamKind::Weight,
            true,
        )?;
        let b = store.register(
            &format!("{name}.b"),
            Tensor::zeros(vec![4 * hidden]),
            ParamKind::Bias,
            true,
        )?;
        Ok(LstmParams { w_ih, w_hh, b, input_dim, hidden })
    }

    pub fn zero_state(&self, g: &mut Graph) -> (Var, Var) {
        let h = g.input(Tensor::zeros(vec![self.hidden]));
        let c = g.input(Tensor::zeros(vec![self.hidden]));
        (h, c)
    }

    /// Standard cell update from input x_t and state (h, c).
    pub fn step(&self, g: &mut Graph, x: Var, state: (Var, Var)) -> Result<(Var, Var)> {
        let (h, c) = state;
        if g.len_of(x) != self.input_dim {
            return Err(Error::Shape(format!(
                "lstm_step expects input of length {}, got {}",
                self.input_dim,
                g.len_of(x)
            )));
        }
        if g.len_of(h) != self.hidden || g.len_of(c) != self.hidden {
            return Err(Error::Shape(format!(
                "lstm_step expects state of length {}, got ({}, {})",
                self.hidden,
                g.len_of(h),
                g.len_of(c)
            )));
        }
        let hsz = self.hidden;
        let w_ih = g.param(self.w_ih);
        let w_hh = g.param(self.w_hh);
        let b = g.param(self.b);
        let gx = g.matvec(w_ih, x)?;
        let gh = g.matvec(w_hh, h)?;
        let pre = g.add(gx, gh);
        let gates = g.add(pre, b);
        let i_pre = g.slice(gates, 0, hsz);
        let f_pre = g.slice(gates, hsz, hsz);
        let g_pre = g.slice(gates, 2 * hsz, hsz);
        let o_pre = g.slice(gates, 3 * hsz, hsz);
        let i = g.sigmoid(i_pre);
        let f = g.sigmoid(f_pre);
        let cand = g.tanh(g_pre);
        let o = g.sigmoid(o_pre);
        let fc_old = g.mul(f, c);
        let ig = g.mul(i, cand);
        let c_new = g.add(fc_old, ig);
        let c_act = g.tanh(c_new);
        let h_new = g.mul(o, c_act);
        Ok((h_new, c_new))
    }
}
