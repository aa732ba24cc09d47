use super::array::NdArray;
use super::rng::Rng;
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

/// Weights of one LSTM cell. Gate rows are stacked input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct LstmWeights {
    /// `[4H, E]`
    pub w_input: NdArray,
    /// `[4H, H]`
    pub w_hidden: NdArray,
    /// `[4H]`
    pub bias: NdArray,
}

impl LstmWeights {
    /// Uniform `±1/sqrt(H)` weights, zero bias except forget gate bias 1.0.
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.uniform_range(-bound, bound)).collect::<Vec<_>>();
        let w_input = NdArray::from_vec(&[4 * hidden, input], draw(4 * hidden * input));
        let w_hidden = NdArray::from_vec(&[4 * hidden, hidden], draw(4 * hidden * hidden));
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Self {
            w_input,
            w_hidden,
            bias: NdArray::from_vec(&[4 * hidden], bias),
        }
    }
}

/// Tape nodes holding one cell's weights.
#[derive(Clone, Copy, Debug)]
pub struct LstmNodes {
    pub w_input: NodeId,
    pub w_hidden: NodeId,
    pub bias: NodeId,
}

/// One LSTM step: `(h', c')` from input `x: [N,E]` and state `h, c: [N,H]`.
pub fn lstm_cell(tape: &mut Tape, x: NodeId, h: NodeId, c: NodeId, p: &LstmNodes) -> Result<(NodeId, NodeId)> {
    let hidden = tape.value(p.w_hidden).dim(1);
    if tape.value(p.w_hidden).dim(0) != 4 * hidden {
        return Err(Error::shape("lstm_cell", format!("hidden weights {:?} not [4H,H]", tape.value(p.w_hidden).shape())));
    }
    if tape.value(h).shape() != tape.value(c).shape() || tape.value(h).dim(1) != hidden {
        return Err(Error::shape(
            "lstm_cell",
            format!("state shapes {:?}/{:?} vs hidden {hidden}", tape.value(h).shape(), tape.value(c).shape()),
        ));
    }
    let from_input = tape.linear(x, p.w_input, Some(p.bias))?;
    let from_hidden = tape.linear(h, p.w_hidden, None)?;
    let gates = tape.add(from_input, from_hidden)?;
    let i = tape.slice_cols(gates, 0, hidden)?;
    let f = tape.slice_cols(gates, hidden, hidden)?;
    let g = tape.slice_cols(gates, 2 * hidden, hidden)?;
    let o = tape.slice_cols(gates, 3 * hidden, hidden)?;
    let (i, f, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.sigmoid(o));
    let g = tape.tanh(g);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}
