//! Recurrent building blocks on top of [`Graph`].

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::tensor::{Tensor, TensorError};

/// Graph handles for one LSTM layer. Gate column order is `i, f, g, o`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    /// `input × 4H`
    pub w_ih: Var,
    /// `H × 4H`
    pub w_hh: Var,
    /// `4H`
    pub bias: Var,
}

impl LstmWeights {
    pub fn hidden(&self, g: &Graph) -> Result<usize, TensorError> {
        let (h, four_h) = g.value(self.w_hh).dims2("lstm")?;
        if four_h != 4 * h {
            return Err(TensorError::dim("lstm", format!("w_hh is {h}×{four_h}, expected H×4H")));
        }
        if g.value(self.bias).len() != four_h {
            return Err(TensorError::dim(
                "lstm",
                format!("bias length {} vs {four_h}", g.value(self.bias).len()),
            ));
        }
        Ok(h)
    }
}

/// Projects the input part of the gates: `x · W_ih + b`.
pub fn lstm_input_projection(g: &mut Graph, x: Var, w: &LstmWeights) -> Result<Var, TensorError> {
    let xw = g.matmul(x, w.w_ih)?;
    g.add_row(xw, w.bias)
}

/// One LSTM step given a precomputed input projection.
pub fn lstm_step(g: &mut Graph, x_proj: Var, h: Var, c: Var, w: &LstmWeights) -> Result<(Var, Var), TensorError> {
    let hidden = w.hidden(g)?;
    let (_, hc) = g.value(h).dims2("lstm")?;
    if hc != hidden || g.value(c).shape() != g.value(h).shape() {
        return Err(TensorError::dim(
            "lstm",
            format!(
                "state {:?}/{:?} vs hidden {hidden}",
                g.value(h).shape(),
                g.value(c).shape()
            ),
        ));
    }
    let hw = g.matmul(h, w.w_hh)?;
    let gates = g.add(x_proj, hw)?;
    let i = g.slice_cols(gates, 0, hidden)?;
    let f = g.slice_cols(gates, hidden, hidden)?;
    let cand = g.slice_cols(gates, 2 * hidden, hidden)?;
    let o = g.slice_cols(gates, 3 * hidden, hidden)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let cand = g.tanh(cand)?;
    let o = g.sigmoid(o)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next)?;
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Standard LSTM cell: `x: B×in`, `h, c: B×H`.
pub fn lstm_cell(g: &mut Graph, x: Var, h: Var, c: Var, w: &LstmWeights) -> Result<(Var, Var), TensorError> {
    let proj = lstm_input_projection(g, x, w)?;
    lstm_step(g, proj, h, c, w)
}

/// Uniform initialization in `[-1/√fan_in, 1/√fan_in]`.
pub fn init_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape, bound, rng)
}
