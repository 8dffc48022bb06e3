use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{ParamId, ParamSet, Tape, Tensor, Var};

/// Additive attention: `e_j = v · tanh(Q s_t + K s_j)` followed by a
/// learned merge of `[s_t; context]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionParams {
    /// `A×D`
    pub query_proj: ParamId,
    /// `A×D`
    pub key_proj: ParamId,
    /// `1×A`
    pub score_vector: ParamId,
    /// `D×2D`
    pub output_proj: ParamId,
    pub state_dim: usize,
    pub attention_dim: usize,
}

impl AttentionParams {
    pub fn register<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        state_dim: usize,
        attention_dim: usize,
        rng: &mut R,
    ) -> Self {
        AttentionParams {
            query_proj: params.add(
                format!("{name}.query_proj"),
                Tensor::glorot(attention_dim, state_dim, rng),
            ),
            key_proj: params.add(
                format!("{name}.key_proj"),
                Tensor::glorot(attention_dim, state_dim, rng),
            ),
            score_vector: params.add(
                format!("{name}.score_vector"),
                Tensor::glorot(1, attention_dim, rng),
            ),
            output_proj: params.add(
                format!("{name}.output_proj"),
                Tensor::glorot(state_dim, 2 * state_dim, rng),
            ),
            state_dim,
            attention_dim,
        }
    }

    pub fn lookup(params: &ParamSet, name: &str) -> Result<Self> {
        let find = |suffix: &str| {
            params
                .find(&format!("{name}.{suffix}"))
                .ok_or_else(|| Error::Config(format!("missing parameter {name}.{suffix}")))
        };
        let q = find("query_proj")?;
        let shape = params.get(q).shape();
        Ok(AttentionParams {
            query_proj: q,
            key_proj: find("key_proj")?,
            score_vector: find("score_vector")?,
            output_proj: find("output_proj")?,
            state_dim: shape[1],
            attention_dim: shape[0],
        })
    }
}

/// Key projections `K s_j` for every state, computed once per sequence.
pub fn attention_keys(
    tape: &mut Tape<'_>,
    states: &[Var],
    p: &AttentionParams,
) -> Result<Vec<Var>> {
    states
        .iter()
        .map(|&s| tape.affine(p.key_proj, s, None))
        .collect()
}

/// Positions `[t - window, t + window]` clipped to the sequence.
pub fn window_range(len: usize, t: usize, window: usize) -> std::ops::RangeInclusive<usize> {
    t.saturating_sub(window)..=(t + window).min(len - 1)
}

/// Attention over the window around `t` using precomputed keys.
/// Returns `(context, weights)`.
pub fn attend(
    tape: &mut Tape<'_>,
    states: &[Var],
    keys: &[Var],
    t: usize,
    window: usize,
    p: &AttentionParams,
) -> Result<(Var, Var)> {
    if t >= states.len() {
        return Err(Error::Index {
            index: t,
            len: states.len(),
        });
    }
    if window == 0 {
        return Err(Error::Domain("attention window must be at least 1".into()));
    }
    let range = window_range(states.len(), t, window);
    attend_query(tape, states[t], &states[range.clone()], &keys[range], p)
}

/// Attention of `query` over `states` with their precomputed `keys`.
pub fn attend_query(
    tape: &mut Tape<'_>,
    query: Var,
    states: &[Var],
    keys: &[Var],
    p: &AttentionParams,
) -> Result<(Var, Var)> {
    if states.is_empty() || states.len() != keys.len() {
        return Err(Error::dimension(
            "attention keys",
            &[states.len()],
            &[keys.len()],
        ));
    }
    let query = tape.affine(p.query_proj, query, None)?;
    let mut scores = Vec::with_capacity(keys.len());
    for &k in keys {
        let mixed = tape.add(query, k)?;
        let act = tape.tanh(mixed);
        scores.push(tape.affine(p.score_vector, act, None)?);
    }
    let scores = tape.concat(&scores)?;
    let weights = tape.softmax(scores)?;
    let context = tape.weighted_sum(weights, states)?;
    Ok((context, weights))
}

/// `merge(query, attention of query over states)`: an attention-pooled
/// summary of `states` with the width of `query`.
pub fn pool(tape: &mut Tape<'_>, query: Var, states: &[Var], p: &AttentionParams) -> Result<Var> {
    let keys = attention_keys(tape, states, p)?;
    let (context, _) = attend_query(tape, query, states, &keys, p)?;
    merge(tape, query, context, p)
}

/// Attention at position `t` of `states`; see [`attend`].
pub fn attention(
    tape: &mut Tape<'_>,
    states: &[Var],
    t: usize,
    window: usize,
    p: &AttentionParams,
) -> Result<(Var, Var)> {
    if t >= states.len() {
        return Err(Error::Index {
            index: t,
            len: states.len(),
        });
    }
    let range = window_range(states.len(), t, window.max(1));
    let mut keys = vec![states[range.start().to_owned()]; states.len()];
    for j in range {
        keys[j] = tape.affine(p.key_proj, states[j], None)?;
    }
    attend(tape, states, &keys, t, window, p)
}

/// `output_proj · [state; context]`.
pub fn merge(tape: &mut Tape<'_>, state: Var, context: Var, p: &AttentionParams) -> Result<Var> {
    let joined = tape.concat(&[state, context])?;
    tape.affine(p.output_proj, joined, None)
}
