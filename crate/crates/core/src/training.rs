//! SGD epochs with validation-driven early stopping and repeated seeded runs.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_vocab, Document, EmbeddingTable, EntitySpan};
use crate::error::{Error, Result};
use crate::evaluation::{entity_prf, EvalReport, Prf};
use crate::model::{CediConfig, CediModel, EncodedDoc};
use crate::numeric::sgd_step;

/// Smallest validation F1 gain that counts as an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-document training loss, measured before each update.
    pub train_loss: f64,
    pub valid: Prf,
    pub patience_used: usize,
}

impl EpochRecord {
    /// `epoch<TAB>train_loss<TAB>valid_P<TAB>valid_R<TAB>valid_F1<TAB>patience_used`
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.epoch,
            self.train_loss,
            self.valid.precision,
            self.valid.recall,
            self.valid.f1,
            self.patience_used
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub best_valid_f1: f64,
    pub best_epoch: usize,
    pub patience_used: usize,
    pub history: Vec<EpochRecord>,
    pub rng_seed: u64,
}

/// Generator for one epoch. Streams are keyed by epoch so a resumed run
/// replays the same shuffles and dropout masks.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Look up features and gold tags for every document.
pub fn encode_all(model: &CediModel, docs: &[Document]) -> Result<Vec<EncodedDoc>> {
    docs.iter()
        .filter(|d| !d.is_empty())
        .map(|d| model.encode(d))
        .collect()
}

/// One shuffled pass with one SGD step per document. Returns the mean loss.
pub fn train_epoch(model: &mut CediModel, docs: &[EncodedDoc], epoch: usize) -> Result<f64> {
    if docs.is_empty() {
        return Err(Error::Domain("no training documents".into()));
    }
    let mut rng = epoch_rng(model.config.seed, epoch);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut rng);
    let (lr, clip) = (model.config.lr, model.config.clip_norm);
    let mut total = 0.0;
    for i in order {
        let (loss, grads) = model.loss_and_gradients(&docs[i], true, &mut rng)?;
        total += loss;
        model.params.accumulate(&grads);
        sgd_step(&mut model.params, lr, clip)?;
    }
    Ok(total / docs.len() as f64)
}

/// Predicted spans for every document, in order.
pub fn predict_all(model: &CediModel, docs: &[Document]) -> Result<Vec<Vec<EntitySpan>>> {
    docs.iter().map(|d| model.predict(d)).collect()
}

pub fn gold_spans(docs: &[Document]) -> Vec<Vec<EntitySpan>> {
    docs.iter().map(|d| d.gold_spans.clone()).collect()
}

/// Entity-level evaluation of `model` on `docs`.
pub fn evaluate_model(model: &CediModel, docs: &[Document]) -> Result<EvalReport> {
    entity_prf(&gold_spans(docs), &predict_all(model, docs)?)
}

/// Train with entity micro-F1 on `valid` as the stopping signal.
pub fn train(
    model: CediModel,
    train_docs: &[Document],
    valid_docs: &[Document],
) -> Result<(CediModel, TrainState)> {
    train_logged(model, train_docs, valid_docs, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_logged<L>(
    model: CediModel,
    train_docs: &[Document],
    valid_docs: &[Document],
    on_epoch: L,
) -> Result<(CediModel, TrainState)>
where
    L: FnMut(&EpochRecord),
{
    if valid_docs.is_empty() {
        return Err(Error::Domain("no validation documents".into()));
    }
    train_with_scorer(
        model,
        train_docs,
        |m, _| Ok(evaluate_model(m, valid_docs)?.micro),
        on_epoch,
    )
}

/// Training loop with a pluggable validation scorer `(model, epoch) -> Prf`.
/// The returned model is the snapshot taken at the best-scoring epoch.
pub fn train_with_scorer<S, L>(
    mut model: CediModel,
    train_docs: &[Document],
    mut scorer: S,
    mut on_epoch: L,
) -> Result<(CediModel, TrainState)>
where
    S: FnMut(&CediModel, usize) -> Result<Prf>,
    L: FnMut(&EpochRecord),
{
    let encoded = encode_all(&model, train_docs)?;
    if encoded.is_empty() {
        return Err(Error::Domain("no training documents".into()));
    }
    let max_epochs = model.config.max_epochs;
    let patience = model.config.patience;
    let mut state = TrainState {
        epoch: 0,
        best_valid_f1: f64::NEG_INFINITY,
        best_epoch: 0,
        patience_used: 0,
        history: Vec::new(),
        rng_seed: model.config.seed,
    };
    let mut best = model.clone();
    for epoch in 1..=max_epochs {
        let train_loss = train_epoch(&mut model, &encoded, epoch)?;
        let valid = scorer(&model, epoch)?;
        state.epoch = epoch;
        let improved = valid.f1 - state.best_valid_f1 >= MIN_IMPROVEMENT;
        if improved {
            state.best_valid_f1 = valid.f1;
            state.best_epoch = epoch;
            state.patience_used = 0;
            best = model.clone();
        } else if state.patience_used < patience {
            state.patience_used += 1;
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            valid,
            patience_used: state.patience_used,
        };
        log::info!("{}", record.log_line());
        on_epoch(&record);
        state.history.push(record);
        if !improved && state.patience_used == patience {
            break;
        }
    }
    Ok((best, state))
}

/// Tab-separated log of every epoch with a header line.
pub fn format_log(state: &TrainState) -> String {
    let mut out = String::from("epoch\ttrain_loss\tvalid_P\tvalid_R\tvalid_F1\tpatience_used\n");
    for r in &state.history {
        let _ = writeln!(out, "{}", r.log_line());
    }
    out
}

/// Train/validation/test documents of one experiment.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<Document>,
    pub valid: Vec<Document>,
    pub test: Vec<Document>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub test: Prf,
    pub best_epoch: usize,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepeatedReport {
    pub runs: Vec<SeedResult>,
    /// Arithmetic mean of the per-seed scores.
    pub mean: Prf,
}

impl RepeatedReport {
    /// One row per seed and a final mean row.
    pub fn table(&self) -> String {
        let mut out = String::from("seed\tP\tR\tF1\tbest_epoch\tepochs\n");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
                r.seed, r.test.precision, r.test.recall, r.test.f1, r.best_epoch, r.epochs
            );
        }
        let _ = writeln!(
            out,
            "mean\t{:.6}\t{:.6}\t{:.6}\t\t",
            self.mean.precision, self.mean.recall, self.mean.f1
        );
        out
    }

    pub fn f1_values(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.test.f1).collect()
    }
}

/// Train once per seed (with `config.seed` replaced) and score each best
/// model on the test split. `pretrained` supplies token rows for a
/// vocabulary and seed when given.
pub fn run_repeated<P>(
    splits: &Splits,
    config: &CediConfig,
    seeds: &[u64],
    mut pretrained: P,
) -> Result<RepeatedReport>
where
    P: FnMut(&crate::corpus::Vocabulary, u64) -> Result<Option<EmbeddingTable>>,
{
    if seeds.is_empty() {
        return Err(Error::Domain("run_repeated needs at least one seed".into()));
    }
    let vocab = build_vocab(
        &splits.train,
        config.prefix_threshold,
        config.affix_length,
        config.tag_scheme,
    )?;
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let config = CediConfig {
            seed,
            ..config.clone()
        };
        let table = pretrained(&vocab, seed)?;
        let model = CediModel::build(config, vocab.clone(), table.as_ref())?;
        let (best, state) = train(model, &splits.train, &splits.valid)?;
        let test = evaluate_model(&best, &splits.test)?.micro;
        log::info!(
            "seed {seed}: test F1 {:.4} (best epoch {})",
            test.f1,
            state.best_epoch
        );
        runs.push(SeedResult {
            seed,
            test,
            best_epoch: state.best_epoch,
            epochs: state.epoch,
        });
    }
    let n = runs.len() as f64;
    let mean = Prf {
        precision: runs.iter().map(|r| r.test.precision).sum::<f64>() / n,
        recall: runs.iter().map(|r| r.test.recall).sum::<f64>() / n,
        f1: runs.iter().map(|r| r.test.f1).sum::<f64>() / n,
    };
    Ok(RepeatedReport { runs, mean })
}
