//! Entity- and token-level micro P/R/F1, per-label breakdowns and the
//! approximate randomization significance test.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::EntitySpan;
use crate::error::{Error, Result};

/// How predictions are credited.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum EvalMode {
    /// Exact `(first, last, label)` match.
    #[default]
    Entity,
    /// Per-token label agreement.
    Token,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Entity => "entity",
            EvalMode::Token => "token",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "entity" => Ok(EvalMode::Entity),
            "token" => Ok(EvalMode::Token),
            other => Err(Error::Config(format!("unknown evaluation mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn prf(&self) -> Prf {
        Prf::from_counts(self.tp, self.fp, self.fn_)
    }
}

/// Precision, recall and F1. Empty denominators score 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TypeScore {
    pub prf: Prf,
    pub counts: Counts,
    /// Gold items of this label.
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub micro: Prf,
    pub counts: Counts,
    /// Labels present in gold or predictions, sorted.
    pub per_type: BTreeMap<String, TypeScore>,
}

impl EvalReport {
    fn from_label_counts(mode: EvalMode, labels: HashMap<String, (Counts, usize)>) -> Self {
        let mut counts = Counts::default();
        let per_type = labels
            .into_iter()
            .map(|(label, (c, support))| {
                counts.add(c);
                (
                    label,
                    TypeScore {
                        prf: c.prf(),
                        counts: c,
                        support,
                    },
                )
            })
            .collect();
        EvalReport {
            mode,
            micro: counts.prf(),
            counts,
            per_type,
        }
    }

    fn support(&self) -> usize {
        self.per_type.values().map(|t| t.support).sum()
    }

    /// Aligned human-readable table with a trailing micro row.
    pub fn table(&self) -> String {
        let width = self
            .per_type
            .keys()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(5);
        let mut out = String::new();
        let _ = writeln!(out, "{} evaluation", self.mode);
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
            "label", "precision", "recall", "f1", "support"
        );
        let row = |out: &mut String, label: &str, p: &Prf, support: usize| {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
                label, p.precision, p.recall, p.f1, support
            );
        };
        for (label, t) in &self.per_type {
            row(&mut out, label, &t.prf, t.support);
        }
        row(&mut out, "micro", &self.micro, self.support());
        let _ = writeln!(
            out,
            "tp={} fp={} fn={}",
            self.counts.tp, self.counts.fp, self.counts.fn_
        );
        out
    }

    /// `label<TAB>P<TAB>R<TAB>F1<TAB>support` lines, micro row last.
    pub fn machine(&self) -> String {
        let mut out = String::new();
        let row = |out: &mut String, label: &str, p: &Prf, support: usize| {
            let _ = writeln!(
                out,
                "{label}\t{:.6}\t{:.6}\t{:.6}\t{support}",
                p.precision, p.recall, p.f1
            );
        };
        for (label, t) in &self.per_type {
            row(&mut out, label, &t.prf, t.support);
        }
        row(&mut out, "micro", &self.micro, self.support());
        out
    }
}

fn check_aligned(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Domain(format!(
            "gold has {} documents, predictions have {}",
            gold.len(),
            pred.len()
        )));
    }
    Ok(())
}

type LabelCounts = HashMap<String, (Counts, usize)>;

fn entity_counts(gold: &[EntitySpan], pred: &[EntitySpan], into: &mut LabelCounts) {
    let gold_keys: HashSet<_> = gold.iter().map(EntitySpan::key).collect();
    let pred_keys: HashSet<_> = pred.iter().map(EntitySpan::key).collect();
    for key in &gold_keys {
        let e = into.entry(key.2.to_string()).or_default();
        e.1 += 1;
        if pred_keys.contains(key) {
            e.0.tp += 1;
        } else {
            e.0.fn_ += 1;
        }
    }
    for key in pred_keys.difference(&gold_keys) {
        into.entry(key.2.to_string()).or_default().0.fp += 1;
    }
}

fn token_labels(spans: &[EntitySpan]) -> HashMap<usize, &str> {
    spans
        .iter()
        .flat_map(|s| (s.first_token..=s.last_token).map(move |t| (t, s.label.as_str())))
        .collect()
}

fn token_counts(gold: &[EntitySpan], pred: &[EntitySpan], into: &mut LabelCounts) {
    let g = token_labels(gold);
    let p = token_labels(pred);
    for (t, label) in &g {
        let e = into.entry(label.to_string()).or_default();
        e.1 += 1;
        if p.get(t) == Some(label) {
            e.0.tp += 1;
        } else {
            e.0.fn_ += 1;
        }
    }
    for (t, label) in &p {
        if g.get(t) != Some(label) {
            into.entry(label.to_string()).or_default().0.fp += 1;
        }
    }
}

fn doc_counts(mode: EvalMode, gold: &[EntitySpan], pred: &[EntitySpan], into: &mut LabelCounts) {
    match mode {
        EvalMode::Entity => entity_counts(gold, pred, into),
        EvalMode::Token => token_counts(gold, pred, into),
    }
}

/// Micro-averaged scores over aligned per-document span lists.
pub fn evaluate(
    mode: EvalMode,
    gold: &[Vec<EntitySpan>],
    pred: &[Vec<EntitySpan>],
) -> Result<EvalReport> {
    check_aligned(gold, pred)?;
    let mut labels = LabelCounts::new();
    for (g, p) in gold.iter().zip(pred) {
        doc_counts(mode, g, p, &mut labels);
    }
    Ok(EvalReport::from_label_counts(mode, labels))
}

/// Exact span-and-label matching.
pub fn entity_prf(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Result<EvalReport> {
    evaluate(EvalMode::Entity, gold, pred)
}

/// Per-token labelled matching; partial span overlap earns partial credit.
pub fn token_prf(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Result<EvalReport> {
    evaluate(EvalMode::Token, gold, pred)
}

/// Per-label table in the given mode; same numbers as [`evaluate`].
pub fn per_type_report(
    gold: &[Vec<EntitySpan>],
    pred: &[Vec<EntitySpan>],
    mode: EvalMode,
) -> Result<EvalReport> {
    evaluate(mode, gold, pred)
}

/// Micro TP/FP/FN of each document separately.
pub fn per_document_counts(
    mode: EvalMode,
    gold: &[Vec<EntitySpan>],
    pred: &[Vec<EntitySpan>],
) -> Result<Vec<Counts>> {
    check_aligned(gold, pred)?;
    Ok(gold
        .iter()
        .zip(pred)
        .map(|(g, p)| {
            let mut labels = LabelCounts::new();
            doc_counts(mode, g, p, &mut labels);
            let mut c = Counts::default();
            labels.values().for_each(|(x, _)| c.add(*x));
            c
        })
        .collect())
}

/// Swap decisions of one shuffle: document `i` is swapped when `true`.
/// Each shuffle draws from its own stream, so results do not depend on
/// evaluation order.
fn swaps(seed: u64, shuffle: u64, docs: usize) -> impl Iterator<Item = bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shuffle);
    (0..docs).map(move |_| rng.gen::<bool>())
}

fn p_value(at_least: usize, shuffles: usize) -> f64 {
    (at_least + 1) as f64 / (shuffles + 1) as f64
}

fn check_shuffles(shuffles: usize) -> Result<()> {
    if shuffles < 1 {
        return Err(Error::Domain(
            "approximate randomization needs at least one shuffle".into(),
        ));
    }
    Ok(())
}

/// Approximate randomization test on `|metric(A) - metric(B)|`, swapping
/// the two systems' outputs per document with probability 1/2.
/// Returns `(count + 1) / (shuffles + 1)`.
pub fn approx_randomization<M>(
    metric: M,
    gold: &[Vec<EntitySpan>],
    pred_a: &[Vec<EntitySpan>],
    pred_b: &[Vec<EntitySpan>],
    shuffles: usize,
    seed: u64,
) -> Result<f64>
where
    M: Fn(&[Vec<EntitySpan>], &[Vec<EntitySpan>]) -> Result<f64>,
{
    check_shuffles(shuffles)?;
    check_aligned(gold, pred_a)?;
    check_aligned(gold, pred_b)?;
    let observed = (metric(gold, pred_a)? - metric(gold, pred_b)?).abs();
    let mut at_least = 0;
    let mut a = pred_a.to_vec();
    let mut b = pred_b.to_vec();
    for s in 0..shuffles {
        for (i, swap) in swaps(seed, s as u64, gold.len()).enumerate() {
            let (x, y) = if swap {
                (&pred_b[i], &pred_a[i])
            } else {
                (&pred_a[i], &pred_b[i])
            };
            a[i].clone_from(x);
            b[i].clone_from(y);
        }
        let diff = (metric(gold, &a)? - metric(gold, &b)?).abs();
        if diff >= observed {
            at_least += 1;
        }
    }
    Ok(p_value(at_least, shuffles))
}

/// [`approx_randomization`] specialised to micro-F1 in `mode`. Works on
/// per-document counts, which makes each shuffle linear in the number of
/// documents; the result is identical to the generic form.
pub fn f1_randomization(
    mode: EvalMode,
    gold: &[Vec<EntitySpan>],
    pred_a: &[Vec<EntitySpan>],
    pred_b: &[Vec<EntitySpan>],
    shuffles: usize,
    seed: u64,
) -> Result<f64> {
    check_shuffles(shuffles)?;
    let ca = per_document_counts(mode, gold, pred_a)?;
    let cb = per_document_counts(mode, gold, pred_b)?;
    counts_randomization(&ca, &cb, shuffles, seed)
}

/// Randomization test over precomputed per-document counts.
pub fn counts_randomization(a: &[Counts], b: &[Counts], shuffles: usize, seed: u64) -> Result<f64> {
    check_shuffles(shuffles)?;
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "{} documents against {}",
            a.len(),
            b.len()
        )));
    }
    let total = |cs: &mut dyn Iterator<Item = Counts>| {
        let mut t = Counts::default();
        cs.for_each(|c| t.add(c));
        t
    };
    let observed =
        (total(&mut a.iter().copied()).prf().f1 - total(&mut b.iter().copied()).prf().f1).abs();
    let mut at_least = 0;
    for s in 0..shuffles {
        let mut ta = Counts::default();
        let mut tb = Counts::default();
        for (i, swap) in swaps(seed, s as u64, a.len()).enumerate() {
            let (x, y) = if swap { (b[i], a[i]) } else { (a[i], b[i]) };
            ta.add(x);
            tb.add(y);
        }
        if (ta.prf().f1 - tb.prf().f1).abs() >= observed {
            at_least += 1;
        }
    }
    Ok(p_value(at_least, shuffles))
}
