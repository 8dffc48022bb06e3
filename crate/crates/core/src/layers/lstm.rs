use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{ParamId, ParamSet, Tape, Tensor, Var};

/// One LSTM direction. Gate blocks are stacked in the order input, forget,
/// cell candidate, output: `W` is `4H×input`, `U` is `4H×H`, `b` is `4H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub input_weights: ParamId,
    pub recurrent_weights: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Hidden and cell state after a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Glorot-uniform bound for one gate block.
fn block_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

impl LstmParams {
    /// Register a freshly initialised direction under `name`.
    pub fn register<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let h4 = 4 * hidden_dim;
        let w = Tensor::uniform(vec![h4, input_dim], block_bound(hidden_dim, input_dim), rng);
        let u = Tensor::uniform(
            vec![h4, hidden_dim],
            block_bound(hidden_dim, hidden_dim),
            rng,
        );
        LstmParams {
            input_weights: params.add(format!("{name}.input_weights"), w),
            recurrent_weights: params.add(format!("{name}.recurrent_weights"), u),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(vec![h4])),
            input_dim,
            hidden_dim,
        }
    }

    /// Re-attach handles to tensors already stored under `name`.
    pub fn lookup(params: &ParamSet, name: &str) -> Result<Self> {
        let find = |suffix: &str| {
            params
                .find(&format!("{name}.{suffix}"))
                .ok_or_else(|| Error::Config(format!("missing parameter {name}.{suffix}")))
        };
        let w = find("input_weights")?;
        let shape = params.get(w).shape();
        Ok(LstmParams {
            input_weights: w,
            recurrent_weights: find("recurrent_weights")?,
            bias: find("bias")?,
            input_dim: shape[1],
            hidden_dim: shape[0] / 4,
        })
    }
}

/// `W x + b`, the input half of every gate pre-activation.
pub fn project_input(tape: &mut Tape<'_>, x: Var, p: &LstmParams) -> Result<Var> {
    tape.affine(p.input_weights, x, Some(p.bias))
}

/// Input projection of an all-zero input (padding positions).
pub fn project_zero_input(tape: &mut Tape<'_>, p: &LstmParams) -> Var {
    tape.param(p.bias)
}

/// Advance one step given an input projection from [`project_input`].
/// A `None` state is the zero initial state.
pub fn lstm_step(
    tape: &mut Tape<'_>,
    projected: Var,
    state: Option<LstmState>,
    p: &LstmParams,
) -> Result<LstmState> {
    let gates = match state {
        Some(s) => tape.affine_onto(p.recurrent_weights, s.h, projected)?,
        None => projected,
    };
    let c = tape.lstm_state(gates, state.map(|s| s.c))?;
    let h = tape.lstm_hidden(gates, c)?;
    Ok(LstmState { h, c })
}

/// Standard LSTM cell: `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_cell(
    tape: &mut Tape<'_>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmParams,
) -> Result<LstmState> {
    let projected = project_input(tape, x, p)?;
    lstm_step(
        tape,
        projected,
        Some(LstmState {
            h: h_prev,
            c: c_prev,
        }),
        p,
    )
}

/// Hidden states of a left-to-right pass over pre-projected inputs.
pub fn run_projected(tape: &mut Tape<'_>, projected: &[Var], p: &LstmParams) -> Result<Vec<Var>> {
    let mut state = None;
    let mut out = Vec::with_capacity(projected.len());
    for &x in projected {
        let s = lstm_step(tape, x, state, p)?;
        out.push(s.h);
        state = Some(s);
    }
    Ok(out)
}

/// Hidden states of a left-to-right pass from the zero state.
pub fn run_lstm(tape: &mut Tape<'_>, inputs: &[Var], p: &LstmParams) -> Result<Vec<Var>> {
    let projected = inputs
        .iter()
        .map(|&x| project_input(tape, x, p))
        .collect::<Result<Vec<_>>>()?;
    run_projected(tape, &projected, p)
}

/// Forward and backward hidden states aligned by position.
pub fn bilstm_states(
    tape: &mut Tape<'_>,
    seq: &[Var],
    fwd: &LstmParams,
    bwd: &LstmParams,
) -> Result<(Vec<Var>, Vec<Var>)> {
    if seq.is_empty() {
        return Err(Error::Domain("biLSTM over an empty sequence".into()));
    }
    let forward = run_lstm(tape, seq, fwd)?;
    let reversed: Vec<Var> = seq.iter().rev().copied().collect();
    let mut backward = run_lstm(tape, &reversed, bwd)?;
    backward.reverse();
    Ok((forward, backward))
}

/// Position `t` output is `[forward_h[t]; backward_h[t]]`, width `2H`.
pub fn bilstm(
    tape: &mut Tape<'_>,
    seq: &[Var],
    fwd: &LstmParams,
    bwd: &LstmParams,
) -> Result<Vec<Var>> {
    let (f, b) = bilstm_states(tape, seq, fwd, bwd)?;
    f.iter()
        .zip(&b)
        .map(|(&x, &y)| tape.concat(&[x, y]))
        .collect()
}

/// Character-level token encoding: `[final forward state; final backward state]`.
pub fn char_encode(
    tape: &mut Tape<'_>,
    char_ids: &[usize],
    char_table: ParamId,
    fwd: &LstmParams,
    bwd: &LstmParams,
) -> Result<Var> {
    let embedded = char_ids
        .iter()
        .map(|&c| tape.row(char_table, c))
        .collect::<Result<Vec<_>>>()?;
    let (f, b) = bilstm_states(tape, &embedded, fwd, bwd)?;
    tape.concat(&[f[f.len() - 1], b[0]])
}
