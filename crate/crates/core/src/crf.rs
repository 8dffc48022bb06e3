//! Linear-chain conditional random field: path scores, the forward algorithm,
//! negative log-likelihood with forward-backward gradients, and Viterbi.
//!
//! Tags are dense indices `0..K`. A path `y` over `T` positions scores
//! `start[y_0] + Σ_t emission[t][y_t] + Σ_{t>0} transition[y_{t-1}][y_t] + end[y_{T-1}]`.

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Transition, start and end scores over `K` tags.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams {
    num_tags: usize,
    /// Row-major `K×K`; entry `[i][j]` scores tag `i` followed by tag `j`.
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl CrfParams {
    pub fn zeros(num_tags: usize) -> Self {
        CrfParams {
            num_tags,
            transitions: vec![0.0; num_tags * num_tags],
            start: vec![0.0; num_tags],
            end: vec![0.0; num_tags],
        }
    }

    pub fn new(
        num_tags: usize,
        transitions: Vec<f64>,
        start: Vec<f64>,
        end: Vec<f64>,
    ) -> Result<Self> {
        if num_tags == 0 {
            return Err(Error::Domain("CRF needs at least one tag".into()));
        }
        if transitions.len() != num_tags * num_tags {
            return Err(Error::dimension(
                "crf transitions",
                &[num_tags, num_tags],
                &[transitions.len()],
            ));
        }
        if start.len() != num_tags || end.len() != num_tags {
            return Err(Error::dimension(
                "crf start/end",
                &[num_tags],
                &[start.len(), end.len()],
            ));
        }
        Ok(CrfParams {
            num_tags,
            transitions,
            start,
            end,
        })
    }

    pub(crate) fn from_tensors(transitions: &Tensor, start: &Tensor, end: &Tensor) -> Result<Self> {
        Self::new(
            start.len(),
            transitions.values().to_vec(),
            start.values().to_vec(),
            end.values().to_vec(),
        )
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    #[inline]
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * self.num_tags + to]
    }
}

/// `T×K` unnormalised label scores, one row per token.
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionMatrix {
    len: usize,
    num_tags: usize,
    scores: Vec<f64>,
}

impl EmissionMatrix {
    pub fn new(len: usize, num_tags: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != len * num_tags {
            return Err(Error::dimension(
                "emissions",
                &[len, num_tags],
                &[scores.len()],
            ));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Domain(format!("non-finite emission score {bad}")));
        }
        Ok(EmissionMatrix {
            len,
            num_tags,
            scores,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        let mut scores = Vec::with_capacity(rows.len() * k);
        for r in rows {
            if r.len() != k {
                return Err(Error::dimension("emission rows", &[k], &[r.len()]));
            }
            scores.extend_from_slice(r);
        }
        Self::new(rows.len(), k, scores)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.scores[t * self.num_tags..(t + 1) * self.num_tags]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.scores[t * self.num_tags..(t + 1) * self.num_tags]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

fn check(emissions: &EmissionMatrix, crf: &CrfParams) -> Result<()> {
    if emissions.is_empty() {
        return Err(Error::Domain("CRF over an empty sequence".into()));
    }
    if emissions.num_tags() != crf.num_tags() {
        return Err(Error::dimension(
            "emissions vs crf",
            &[emissions.num_tags()],
            &[crf.num_tags()],
        ));
    }
    Ok(())
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Additive score of one tag path.
pub fn sequence_score(emissions: &EmissionMatrix, crf: &CrfParams, tags: &[usize]) -> Result<f64> {
    check(emissions, crf)?;
    if tags.len() != emissions.len() {
        return Err(Error::dimension(
            "tag path",
            &[emissions.len()],
            &[tags.len()],
        ));
    }
    if let Some(&bad) = tags.iter().find(|&&y| y >= crf.num_tags()) {
        return Err(Error::Domain(format!(
            "tag id {bad} out of range for {} tags",
            crf.num_tags()
        )));
    }
    let mut score = crf.start[tags[0]] + crf.end[tags[tags.len() - 1]];
    for (t, &y) in tags.iter().enumerate() {
        score += emissions.row(t)[y];
        if t > 0 {
            score += crf.transition(tags[t - 1], y);
        }
    }
    Ok(score)
}

/// Forward recursion in log space. Returns the `T×K` alpha table.
fn forward_table(emissions: &EmissionMatrix, crf: &CrfParams) -> Vec<f64> {
    let (n, k) = (emissions.len(), crf.num_tags());
    let mut alpha = vec![0.0; n * k];
    for j in 0..k {
        alpha[j] = crf.start[j] + emissions.row(0)[j];
    }
    let mut scratch = vec![0.0; k];
    for t in 1..n {
        let (prev, cur) = alpha.split_at_mut(t * k);
        let prev = &prev[(t - 1) * k..];
        let e = emissions.row(t);
        for j in 0..k {
            for (i, s) in scratch.iter_mut().enumerate() {
                *s = prev[i] + crf.transition(i, j);
            }
            cur[j] = log_sum_exp(&scratch) + e[j];
        }
    }
    alpha
}

/// Backward recursion; `beta[t][i]` is the log-mass of all suffixes after position `t` given tag `i`.
fn backward_table(emissions: &EmissionMatrix, crf: &CrfParams) -> Vec<f64> {
    let (n, k) = (emissions.len(), crf.num_tags());
    let mut beta = vec![0.0; n * k];
    beta[(n - 1) * k..].copy_from_slice(&crf.end);
    let mut scratch = vec![0.0; k];
    for t in (0..n - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * k);
        let cur = &mut cur[t * k..];
        let next = &next[..k];
        let e = emissions.row(t + 1);
        for i in 0..k {
            for (j, s) in scratch.iter_mut().enumerate() {
                *s = crf.transition(i, j) + e[j] + next[j];
            }
            cur[i] = log_sum_exp(&scratch);
        }
    }
    beta
}

/// `log Σ_y exp(score(y))` by the forward algorithm.
pub fn log_partition(emissions: &EmissionMatrix, crf: &CrfParams) -> Result<f64> {
    check(emissions, crf)?;
    let k = crf.num_tags();
    let alpha = forward_table(emissions, crf);
    let last = &alpha[(emissions.len() - 1) * k..];
    let terminal: Vec<f64> = last.iter().zip(&crf.end).map(|(a, e)| a + e).collect();
    Ok(log_sum_exp(&terminal))
}

/// Negative log-likelihood of the gold path.
pub fn nll(emissions: &EmissionMatrix, crf: &CrfParams, gold: &[usize]) -> Result<f64> {
    let gold_score = sequence_score(emissions, crf, gold)?;
    Ok((log_partition(emissions, crf)? - gold_score).max(0.0))
}

/// Partial derivatives of the NLL.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfGradients {
    /// Row-major `T×K`.
    pub emissions: Vec<f64>,
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

/// NLL together with its gradient: expected feature counts under the model
/// minus the gold counts.
pub fn nll_with_gradients(
    emissions: &EmissionMatrix,
    crf: &CrfParams,
    gold: &[usize],
) -> Result<(f64, CrfGradients)> {
    let gold_score = sequence_score(emissions, crf, gold)?;
    let (n, k) = (emissions.len(), crf.num_tags());
    let alpha = forward_table(emissions, crf);
    let beta = backward_table(emissions, crf);
    let terminal: Vec<f64> = alpha[(n - 1) * k..]
        .iter()
        .zip(&crf.end)
        .map(|(a, e)| a + e)
        .collect();
    let log_z = log_sum_exp(&terminal);

    let mut d_em = vec![0.0; n * k];
    for t in 0..n {
        for i in 0..k {
            d_em[t * k + i] = (alpha[t * k + i] + beta[t * k + i] - log_z).exp();
        }
    }
    let mut d_trans = vec![0.0; k * k];
    for t in 1..n {
        let e = emissions.row(t);
        for i in 0..k {
            let a = alpha[(t - 1) * k + i];
            for j in 0..k {
                d_trans[i * k + j] +=
                    (a + crf.transition(i, j) + e[j] + beta[t * k + j] - log_z).exp();
            }
        }
    }
    let mut d_start = d_em[..k].to_vec();
    let mut d_end = d_em[(n - 1) * k..].to_vec();

    for (t, &y) in gold.iter().enumerate() {
        d_em[t * k + y] -= 1.0;
        if t > 0 {
            d_trans[gold[t - 1] * k + y] -= 1.0;
        }
    }
    d_start[gold[0]] -= 1.0;
    d_end[gold[n - 1]] -= 1.0;

    Ok((
        (log_z - gold_score).max(0.0),
        CrfGradients {
            emissions: d_em,
            transitions: d_trans,
            start: d_start,
            end: d_end,
        },
    ))
}

/// Max-product decoding. Ties resolve to the lowest tag id.
pub fn viterbi(emissions: &EmissionMatrix, crf: &CrfParams) -> Result<(Vec<usize>, f64)> {
    check(emissions, crf)?;
    let (n, k) = (emissions.len(), crf.num_tags());
    let mut delta: Vec<f64> = (0..k).map(|j| crf.start[j] + emissions.row(0)[j]).collect();
    let mut back = vec![0usize; n * k];
    let mut next = vec![0.0; k];
    for t in 1..n {
        let e = emissions.row(t);
        for j in 0..k {
            let mut best = 0;
            let mut best_score = delta[0] + crf.transition(0, j);
            for (i, d) in delta.iter().enumerate().skip(1) {
                let s = d + crf.transition(i, j);
                if s > best_score {
                    best = i;
                    best_score = s;
                }
            }
            back[t * k + j] = best;
            next[j] = best_score + e[j];
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0;
    let mut best_score = delta[0] + crf.end[0];
    for j in 1..k {
        let s = delta[j] + crf.end[j];
        if s > best_score {
            last = j;
            best_score = s;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = back[t * k + path[t]];
    }
    Ok((path, best_score))
}

const BRUTE_FORCE_LIMIT: f64 = 1e6;

fn enumerate_paths(
    emissions: &EmissionMatrix,
    crf: &CrfParams,
    mut visit: impl FnMut(&[usize], f64),
) -> Result<()> {
    check(emissions, crf)?;
    let (n, k) = (emissions.len(), crf.num_tags());
    if (k as f64).powi(n as i32) > BRUTE_FORCE_LIMIT {
        return Err(Error::Domain(format!(
            "brute force over {k}^{n} paths exceeds the enumeration limit"
        )));
    }
    let mut path = vec![0usize; n];
    loop {
        let s = sequence_score(emissions, crf, &path)?;
        visit(&path, s);
        // advance odometer; the last position varies fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            path[pos] += 1;
            if path[pos] < k {
                break;
            }
            path[pos] = 0;
        }
    }
}

/// Log-partition by explicit enumeration of every path (test oracle).
pub fn brute_force_partition(emissions: &EmissionMatrix, crf: &CrfParams) -> Result<f64> {
    let mut scores = Vec::new();
    enumerate_paths(emissions, crf, |_, s| scores.push(s))?;
    Ok(log_sum_exp(&scores))
}

/// Highest-scoring path by explicit enumeration; ties go to the
/// lexicographically smallest path (test oracle).
pub fn brute_force_best(emissions: &EmissionMatrix, crf: &CrfParams) -> Result<(Vec<usize>, f64)> {
    let mut best: Option<(Vec<usize>, f64)> = None;
    enumerate_paths(emissions, crf, |p, s| {
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((p.to_vec(), s));
        }
    })?;
    Ok(best.expect("at least one path"))
}
