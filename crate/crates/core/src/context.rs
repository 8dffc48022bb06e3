//! Forward and backward n-gram context embeddings computed over the raw
//! token stream. Line and sentence structure is never consulted.

use rand::Rng;

use crate::corpus::{Document, Lexicon, PAD};
use crate::error::{Error, Result};
use crate::layers::{
    lstm_step, pool, project_input, project_zero_input, AttentionParams, LstmParams, LstmState,
};
use crate::numeric::{ParamId, ParamSet, Tape, Tensor, Var};

/// Token ids feeding one position's context LSTMs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NgramWindow {
    /// `x_{t-n}, …, x_{t-1}, x_t`
    pub forward_ids: Vec<usize>,
    /// `x_{t+n}, …, x_{t+1}, x_t`
    pub backward_ids: Vec<usize>,
}

/// Parameters of the context encoder. The token table is separate from the
/// pretrained token table and shared by both directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextTables {
    pub token_table: ParamId,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl ContextTables {
    /// Random `U[±√(3/dim)]` token rows with a frozen zero PAD row and
    /// Glorot-initialised LSTMs.
    pub fn register<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        vocab_len: usize,
        embed_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut table = Tensor::uniform(
            vec![vocab_len, embed_dim],
            (3.0 / embed_dim as f64).sqrt(),
            rng,
        );
        table.freeze_row(PAD);
        let token_table = params.add(format!("{name}.token_table"), table);
        let fwd = LstmParams::register(params, &format!("{name}.fwd"), embed_dim, hidden_dim, rng);
        let bwd = LstmParams::register(params, &format!("{name}.bwd"), embed_dim, hidden_dim, rng);
        ContextTables {
            token_table,
            fwd,
            bwd,
        }
    }

    pub fn lookup(params: &ParamSet, name: &str) -> Result<Self> {
        let token_table = params
            .find(&format!("{name}.token_table"))
            .ok_or_else(|| Error::Config(format!("missing parameter {name}.token_table")))?;
        Ok(ContextTables {
            token_table,
            fwd: LstmParams::lookup(params, &format!("{name}.fwd"))?,
            bwd: LstmParams::lookup(params, &format!("{name}.bwd"))?,
        })
    }

    /// Width of [`context_embedding`] outputs.
    pub fn output_dim(&self) -> usize {
        self.fwd.hidden_dim + self.bwd.hidden_dim
    }
}

/// Context-vocabulary ids of every token in `doc`.
pub fn token_ids(doc: &Document, vocab: &Lexicon) -> Vec<usize> {
    doc.tokens.iter().map(|t| vocab.id(&t.lower)).collect()
}

/// Window around `t` in an id stream, PAD beyond either edge.
pub fn window_from_ids(ids: &[usize], t: usize, n: usize) -> Result<NgramWindow> {
    if t >= ids.len() {
        return Err(Error::Index {
            index: t,
            len: ids.len(),
        });
    }
    let at = |j: isize| {
        if j < 0 || j as usize >= ids.len() {
            PAD
        } else {
            ids[j as usize]
        }
    };
    let t = t as isize;
    let n = n as isize;
    Ok(NgramWindow {
        forward_ids: (t - n..=t).map(at).collect(),
        backward_ids: (t..=t + n).rev().map(at).collect(),
    })
}

/// Window around token `t` of `doc`, resolved through `vocab`.
pub fn extract_window(doc: &Document, vocab: &Lexicon, t: usize, n: usize) -> Result<NgramWindow> {
    window_from_ids(&token_ids(doc, vocab), t, n)
}

fn project(tape: &mut Tape<'_>, id: usize, table: ParamId, p: &LstmParams) -> Result<Var> {
    if id == PAD {
        return Ok(project_zero_input(tape, p));
    }
    let x = tape.row(table, id)?;
    project_input(tape, x, p)
}

/// Optional attention over the hidden states of each direction's window,
/// replacing the final state with a pooled summary of the same width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NgramAttention {
    pub fwd: AttentionParams,
    pub bwd: AttentionParams,
}

fn run_window(
    tape: &mut Tape<'_>,
    projected: &[Var],
    p: &LstmParams,
    att: Option<&AttentionParams>,
) -> Result<Var> {
    let mut state: Option<LstmState> = None;
    let mut hidden = Vec::new();
    for &x in projected {
        let s = lstm_step(tape, x, state, p)?;
        if att.is_some() {
            hidden.push(s.h);
        }
        state = Some(s);
    }
    let last = state
        .map(|s| s.h)
        .ok_or_else(|| Error::Domain("empty n-gram window".into()))?;
    match att {
        Some(a) => pool(tape, last, &hidden, a),
        None => Ok(last),
    }
}

/// Final hidden state of the forward LSTM over `forward_ids`.
pub fn forward_context(
    tape: &mut Tape<'_>,
    window: &NgramWindow,
    tables: &ContextTables,
) -> Result<Var> {
    let projected = window
        .forward_ids
        .iter()
        .map(|&id| project(tape, id, tables.token_table, &tables.fwd))
        .collect::<Result<Vec<_>>>()?;
    run_window(tape, &projected, &tables.fwd, None)
}

/// Final hidden state of the backward LSTM over `backward_ids`.
pub fn backward_context(
    tape: &mut Tape<'_>,
    window: &NgramWindow,
    tables: &ContextTables,
) -> Result<Var> {
    let projected = window
        .backward_ids
        .iter()
        .map(|&id| project(tape, id, tables.token_table, &tables.bwd))
        .collect::<Result<Vec<_>>>()?;
    run_window(tape, &projected, &tables.bwd, None)
}

/// `[forward_context; backward_context]` for token `t`.
pub fn context_embedding(
    tape: &mut Tape<'_>,
    doc: &Document,
    vocab: &Lexicon,
    t: usize,
    n: usize,
    tables: &ContextTables,
) -> Result<Var> {
    let window = extract_window(doc, vocab, t, n)?;
    window_embedding(tape, &window, tables, None)
}

/// Context embedding of one window, optionally attention-pooled.
pub fn window_embedding(
    tape: &mut Tape<'_>,
    window: &NgramWindow,
    tables: &ContextTables,
    attention: Option<&NgramAttention>,
) -> Result<Var> {
    let mut halves = [None, None];
    for (half, (ids, lstm, att)) in [
        (&window.forward_ids, &tables.fwd, attention.map(|a| &a.fwd)),
        (&window.backward_ids, &tables.bwd, attention.map(|a| &a.bwd)),
    ]
    .into_iter()
    .enumerate()
    {
        let projected = ids
            .iter()
            .map(|&id| project(tape, id, tables.token_table, lstm))
            .collect::<Result<Vec<_>>>()?;
        halves[half] = Some(run_window(tape, &projected, lstm, att)?);
    }
    let [Some(f), Some(b)] = halves else {
        unreachable!("both halves are always computed")
    };
    tape.concat(&[f, b])
}

/// Context embeddings for every position of an id stream. Input projections
/// are shared between overlapping windows; each output equals the
/// corresponding [`context_embedding`] exactly.
pub fn context_embeddings(
    tape: &mut Tape<'_>,
    ids: &[usize],
    n: usize,
    tables: &ContextTables,
) -> Result<Vec<Var>> {
    context_embeddings_with(tape, ids, n, tables, None)
}

/// [`context_embeddings`] with optional attention pooling inside each window.
pub fn context_embeddings_with(
    tape: &mut Tape<'_>,
    ids: &[usize],
    n: usize,
    tables: &ContextTables,
    attention: Option<&NgramAttention>,
) -> Result<Vec<Var>> {
    if ids.is_empty() {
        return Err(Error::Domain(
            "context embeddings of an empty document".into(),
        ));
    }
    let pad_f = project_zero_input(tape, &tables.fwd);
    let pad_b = project_zero_input(tape, &tables.bwd);
    let mut proj_f = Vec::with_capacity(ids.len());
    let mut proj_b = Vec::with_capacity(ids.len());
    for &id in ids {
        proj_f.push(project(tape, id, tables.token_table, &tables.fwd)?);
        proj_b.push(project(tape, id, tables.token_table, &tables.bwd)?);
    }
    let len = ids.len() as isize;
    let pick = |proj: &[Var], pad: Var, j: isize| {
        if j < 0 || j >= len {
            pad
        } else {
            proj[j as usize]
        }
    };
    let mut out = Vec::with_capacity(ids.len());
    let mut seq = Vec::with_capacity(n + 1);
    for t in 0..len {
        let n = n as isize;
        seq.clear();
        seq.extend((t - n..=t).map(|j| pick(&proj_f, pad_f, j)));
        let f = run_window(tape, &seq, &tables.fwd, attention.map(|a| &a.fwd))?;
        seq.clear();
        seq.extend((t..=t + n).rev().map(|j| pick(&proj_b, pad_b, j)));
        let b = run_window(tape, &seq, &tables.bwd, attention.map(|a| &a.bwd))?;
        out.push(tape.concat(&[f, b])?);
    }
    Ok(out)
}
