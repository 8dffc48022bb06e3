//! The full tagger: per-token feature embedding, document-level biLSTM,
//! windowed attention merge, emission projection and CRF head.

mod checkpoint;
mod config;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{parse_pairs, CediConfig, Features, CONFIG_KEYS};

use crate::context::{
    context_embeddings_with, window_embedding, window_from_ids, ContextTables, NgramAttention,
};
use crate::corpus::{
    spans_to_tags, tags_to_spans, Document, EmbeddingTable, EntitySpan, Vocabulary, PAD,
};
use crate::crf::{self, CrfParams, EmissionMatrix};
use crate::error::{Error, Result};
use crate::layers::{
    attend, attention_keys, bilstm_states, merge, pool, AttentionParams, LstmParams,
};
use crate::numeric::{Gradients, ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct CharBlock {
    table: ParamId,
    fwd: LstmParams,
    bwd: LstmParams,
    attention: Option<AttentionParams>,
}

#[derive(Clone, Copy, Debug)]
struct Blocks {
    chars: Option<CharBlock>,
    token: Option<ParamId>,
    prefix: Option<ParamId>,
    suffix: Option<ParamId>,
    context: Option<ContextTables>,
    ngram_attention: Option<NgramAttention>,
    main_fwd: LstmParams,
    main_bwd: LstmParams,
    attention: Option<AttentionParams>,
    emission_weights: ParamId,
    emission_bias: ParamId,
    crf_transitions: ParamId,
    crf_start: ParamId,
    crf_end: ParamId,
}

/// Parameter-independent lookups for one document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedDoc {
    pub token_ids: Vec<usize>,
    pub char_ids: Vec<Vec<usize>>,
    pub prefix_ids: Vec<usize>,
    pub suffix_ids: Vec<usize>,
    /// CRF state per token, when the document carries gold spans.
    pub gold: Option<Vec<usize>>,
}

impl EncodedDoc {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// A trainable tagger together with its vocabulary and configuration.
#[derive(Clone, Debug)]
pub struct CediModel {
    pub config: CediConfig,
    pub vocab: Vocabulary,
    pub params: ParamSet,
    blocks: Blocks,
}

fn embedding_table<R: Rng>(rows: usize, dim: usize, rng: &mut R) -> Tensor {
    let table = EmbeddingTable::random(rows, dim, rng);
    let mut t = Tensor::new(vec![rows, dim], table.rows).expect("shape matches generated rows");
    t.freeze_row(PAD);
    t
}

impl CediModel {
    /// Fresh model. Token rows come from `pretrained` when given, otherwise
    /// from the seeded generator like every other block.
    pub fn build(
        config: CediConfig,
        vocab: Vocabulary,
        pretrained: Option<&EmbeddingTable>,
    ) -> Result<Self> {
        config.validate()?;
        if vocab.scheme != config.tag_scheme {
            return Err(Error::Config(format!(
                "vocabulary uses {} tags, configuration asks for {}",
                vocab.scheme, config.tag_scheme
            )));
        }
        if vocab.affix_length != config.affix_length {
            return Err(Error::Config(format!(
                "vocabulary affix length {} differs from configured {}",
                vocab.affix_length, config.affix_length
            )));
        }
        if let Some(p) = pretrained {
            if p.dim != config.token_dim || p.len() != vocab.tokens.len() {
                return Err(Error::Config(format!(
                    "pretrained table is {}×{}, model expects {}×{}",
                    p.len(),
                    p.dim,
                    vocab.tokens.len(),
                    config.token_dim
                )));
            }
        }
        let f = config.features;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParamSet::new();

        let chars = if f.char {
            let table = ps.add(
                "char.table",
                embedding_table(vocab.chars.len(), config.char_dim, &mut rng),
            );
            let fwd = LstmParams::register(
                &mut ps,
                "char.fwd",
                config.char_dim,
                config.char_hidden,
                &mut rng,
            );
            let bwd = LstmParams::register(
                &mut ps,
                "char.bwd",
                config.char_dim,
                config.char_hidden,
                &mut rng,
            );
            let attention = f.char_attention.then(|| {
                AttentionParams::register(
                    &mut ps,
                    "char.attention",
                    2 * config.char_hidden,
                    config.attention_dim,
                    &mut rng,
                )
            });
            Some(CharBlock {
                table,
                fwd,
                bwd,
                attention,
            })
        } else {
            None
        };
        let token = f.token.then(|| {
            let mut t = match pretrained {
                Some(p) => {
                    Tensor::new(vec![p.len(), p.dim], p.rows.clone()).expect("checked shape")
                }
                None => embedding_table(vocab.tokens.len(), config.token_dim, &mut rng),
            };
            t.freeze_row(PAD);
            t.requires_grad = config.tune_token_embeddings;
            ps.add("token.table", t)
        });
        let prefix = f.prefix.then(|| {
            ps.add(
                "prefix.table",
                embedding_table(vocab.prefixes.len(), config.prefix_dim, &mut rng),
            )
        });
        let suffix = f.suffix.then(|| {
            ps.add(
                "suffix.table",
                embedding_table(vocab.suffixes.len(), config.prefix_dim, &mut rng),
            )
        });
        let context = f.context.then(|| {
            ContextTables::register(
                &mut ps,
                "context",
                vocab.tokens.len(),
                config.token_dim,
                config.context_hidden,
                &mut rng,
            )
        });
        let ngram_attention = (f.context && f.ngram_attention).then(|| NgramAttention {
            fwd: AttentionParams::register(
                &mut ps,
                "context.attention.fwd",
                config.context_hidden,
                config.attention_dim,
                &mut rng,
            ),
            bwd: AttentionParams::register(
                &mut ps,
                "context.attention.bwd",
                config.context_hidden,
                config.attention_dim,
                &mut rng,
            ),
        });

        let input_dim = Self::input_width_for(&config);
        let main_fwd =
            LstmParams::register(&mut ps, "main.fwd", input_dim, config.main_hidden, &mut rng);
        let main_bwd =
            LstmParams::register(&mut ps, "main.bwd", input_dim, config.main_hidden, &mut rng);
        let state_dim = 2 * config.main_hidden;
        let attention = f.attention.then(|| {
            AttentionParams::register(
                &mut ps,
                "attention",
                state_dim,
                config.attention_dim,
                &mut rng,
            )
        });
        let k = vocab.num_crf_tags();
        let emission_weights = ps.add("emission.weights", Tensor::glorot(k, state_dim, &mut rng));
        let emission_bias = ps.add("emission.bias", Tensor::zeros(vec![k]));
        let crf_transitions = ps.add("crf.transitions", Tensor::zeros(vec![k, k]));
        let crf_start = ps.add("crf.start", Tensor::zeros(vec![k]));
        let crf_end = ps.add("crf.end", Tensor::zeros(vec![k]));

        Ok(CediModel {
            config,
            vocab,
            params: ps,
            blocks: Blocks {
                chars,
                token,
                prefix,
                suffix,
                context,
                ngram_attention,
                main_fwd,
                main_bwd,
                attention,
                emission_weights,
                emission_bias,
                crf_transitions,
                crf_start,
                crf_end,
            },
        })
    }

    /// Width of `e_t` implied by a configuration.
    pub fn input_width_for(config: &CediConfig) -> usize {
        let f = config.features;
        let mut w = 0;
        if f.char {
            w += 2 * config.char_hidden;
        }
        if f.token {
            w += config.token_dim;
        }
        if f.prefix {
            w += config.prefix_dim;
        }
        if f.suffix {
            w += config.prefix_dim;
        }
        if f.context {
            w += 2 * config.context_hidden;
        }
        w
    }

    pub fn input_width(&self) -> usize {
        Self::input_width_for(&self.config)
    }

    pub fn num_tags(&self) -> usize {
        self.vocab.num_crf_tags()
    }

    pub fn crf_params(&self) -> Result<CrfParams> {
        CrfParams::from_tensors(
            self.params.get(self.blocks.crf_transitions),
            self.params.get(self.blocks.crf_start),
            self.params.get(self.blocks.crf_end),
        )
    }

    /// Look up every feature id of `doc`, and its gold CRF states.
    pub fn encode(&self, doc: &Document) -> Result<EncodedDoc> {
        let v = &self.vocab;
        let mut prefix_ids = Vec::with_capacity(doc.len());
        let mut suffix_ids = Vec::with_capacity(doc.len());
        for t in &doc.tokens {
            let (p, s) = v.affix_ids(t);
            prefix_ids.push(p);
            suffix_ids.push(s);
        }
        let tags = spans_to_tags(doc, self.config.tag_scheme)?;
        Ok(EncodedDoc {
            token_ids: doc.tokens.iter().map(|t| v.token_id(t)).collect(),
            char_ids: doc.tokens.iter().map(|t| v.char_ids(t)).collect(),
            prefix_ids,
            suffix_ids,
            gold: Some(tags.iter().map(|t| v.crf_tag(t)).collect()),
        })
    }

    fn char_feature(&self, tape: &mut Tape<'_>, block: &CharBlock, ids: &[usize]) -> Result<Var> {
        let embedded = ids
            .iter()
            .map(|&c| tape.row(block.table, c))
            .collect::<Result<Vec<_>>>()?;
        let (f, b) = bilstm_states(tape, &embedded, &block.fwd, &block.bwd)?;
        let last = tape.concat(&[f[f.len() - 1], b[0]])?;
        match &block.attention {
            None => Ok(last),
            Some(att) => {
                let states = f
                    .iter()
                    .zip(&b)
                    .map(|(&x, &y)| tape.concat(&[x, y]))
                    .collect::<Result<Vec<_>>>()?;
                pool(tape, last, &states, att)
            }
        }
    }

    /// `e_t` for position `t` with an already computed context embedding.
    fn token_feature<R: Rng>(
        &self,
        tape: &mut Tape<'_>,
        enc: &EncodedDoc,
        t: usize,
        context: Option<Var>,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let b = &self.blocks;
        let mut parts = Vec::with_capacity(5);
        if let Some(block) = &b.chars {
            parts.push(self.char_feature(tape, block, &enc.char_ids[t])?);
        }
        if let Some(table) = b.token {
            parts.push(tape.row(table, enc.token_ids[t])?);
        }
        if let Some(table) = b.prefix {
            parts.push(tape.row(table, enc.prefix_ids[t])?);
        }
        if let Some(table) = b.suffix {
            parts.push(tape.row(table, enc.suffix_ids[t])?);
        }
        if let Some(c) = context {
            parts.push(c);
        }
        let e = tape.concat(&parts)?;
        tape.dropout(e, self.config.dropout, training, rng)
    }

    fn features_on_tape<R: Rng>(
        &self,
        tape: &mut Tape<'_>,
        enc: &EncodedDoc,
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        if enc.is_empty() {
            return Err(Error::Domain("cannot tag an empty document".into()));
        }
        let contexts = match &self.blocks.context {
            Some(tables) => Some(context_embeddings_with(
                tape,
                &enc.token_ids,
                self.config.ngram_size,
                tables,
                self.blocks.ngram_attention.as_ref(),
            )?),
            None => None,
        };
        (0..enc.len())
            .map(|t| {
                self.token_feature(tape, enc, t, contexts.as_ref().map(|c| c[t]), training, rng)
            })
            .collect()
    }

    /// `e_t` for one position of `doc`.
    pub fn featurize<R: Rng>(
        &self,
        doc: &Document,
        t: usize,
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if t >= doc.len() {
            return Err(Error::Index {
                index: t,
                len: doc.len(),
            });
        }
        let enc = self.encode(doc)?;
        let mut tape = Tape::new(&self.params);
        let context = match &self.blocks.context {
            Some(tables) => {
                let window = window_from_ids(&enc.token_ids, t, self.config.ngram_size)?;
                Some(window_embedding(
                    &mut tape,
                    &window,
                    tables,
                    self.blocks.ngram_attention.as_ref(),
                )?)
            }
            None => None,
        };
        let e = self.token_feature(&mut tape, &enc, t, context, training, rng)?;
        Ok(tape.value(e).to_vec())
    }

    /// Token ranges the main biLSTM and CRF process independently.
    pub fn chunks(&self, len: usize) -> Vec<std::ops::Range<usize>> {
        let step = self.config.chunk_length;
        (0..len)
            .step_by(step)
            .map(|s| s..(s + step).min(len))
            .collect()
    }

    /// Emission rows per chunk, recorded on `tape`.
    pub fn emissions_on_tape<R: Rng>(
        &self,
        tape: &mut Tape<'_>,
        enc: &EncodedDoc,
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<Vec<Var>>> {
        let features = self.features_on_tape(tape, enc, training, rng)?;
        let b = &self.blocks;
        let window = self.config.attention_window();
        let mut out = Vec::new();
        for range in self.chunks(enc.len()) {
            let (f, bw) = bilstm_states(tape, &features[range], &b.main_fwd, &b.main_bwd)?;
            let h = f
                .iter()
                .zip(&bw)
                .map(|(&x, &y)| tape.concat(&[x, y]))
                .collect::<Result<Vec<_>>>()?;
            let keys = match &b.attention {
                Some(att) => Some(attention_keys(tape, &h, att)?),
                None => None,
            };
            let mut rows = Vec::with_capacity(h.len());
            for t in 0..h.len() {
                let d = match (&b.attention, &keys) {
                    (Some(att), Some(keys)) => {
                        let (c, _) = attend(tape, &h, keys, t, window, att)?;
                        merge(tape, h[t], c, att)?
                    }
                    _ => h[t],
                };
                rows.push(tape.affine(b.emission_weights, d, Some(b.emission_bias))?);
            }
            out.push(rows);
        }
        Ok(out)
    }

    /// `T×K` emission scores for `doc`.
    pub fn forward<R: Rng>(
        &self,
        doc: &Document,
        training: bool,
        rng: &mut R,
    ) -> Result<EmissionMatrix> {
        let enc = self.encode(doc)?;
        self.forward_encoded(&enc, training, rng)
    }

    pub fn forward_encoded<R: Rng>(
        &self,
        enc: &EncodedDoc,
        training: bool,
        rng: &mut R,
    ) -> Result<EmissionMatrix> {
        let mut tape = Tape::new(&self.params);
        let chunks = self.emissions_on_tape(&mut tape, enc, training, rng)?;
        let k = self.num_tags();
        let mut scores = Vec::with_capacity(enc.len() * k);
        for v in chunks.iter().flatten() {
            scores.extend_from_slice(tape.value(*v));
        }
        EmissionMatrix::new(enc.len(), k, scores)
    }

    /// Viterbi tag strings, chunk by chunk.
    pub fn predict_tags(&self, doc: &Document) -> Result<Vec<String>> {
        let enc = self.encode(doc)?;
        self.predict_tags_encoded(&enc)
    }

    pub fn predict_tags_encoded(&self, enc: &EncodedDoc) -> Result<Vec<String>> {
        // inference draws nothing from the generator
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emissions = self.forward_encoded(enc, false, &mut rng)?;
        let crf = self.crf_params()?;
        let k = self.num_tags();
        let mut tags = Vec::with_capacity(enc.len());
        for range in self.chunks(enc.len()) {
            let chunk = EmissionMatrix::new(
                range.len(),
                k,
                emissions.scores()[range.start * k..range.end * k].to_vec(),
            )?;
            let (path, _) = crf::viterbi(&chunk, &crf)?;
            tags.extend(
                path.into_iter()
                    .map(|s| self.vocab.crf_tag_name(s).to_string()),
            );
        }
        Ok(tags)
    }

    /// Predicted entity spans with character offsets.
    pub fn predict(&self, doc: &Document) -> Result<Vec<EntitySpan>> {
        if doc.is_empty() {
            return Ok(Vec::new());
        }
        let tags = self.predict_tags(doc)?;
        let mut spans = tags_to_spans(&tags, self.config.tag_scheme);
        doc.attach_offsets(&mut spans);
        Ok(spans)
    }

    fn loss_on_tape<R: Rng>(
        &self,
        tape: &mut Tape<'_>,
        enc: &EncodedDoc,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let gold = enc
            .gold
            .as_ref()
            .ok_or_else(|| Error::Domain("document has no gold tags".into()))?;
        let chunks = self.emissions_on_tape(tape, enc, training, rng)?;
        let b = &self.blocks;
        let mut total: Option<Var> = None;
        for (rows, range) in chunks.iter().zip(self.chunks(enc.len())) {
            let l = tape.crf_nll(
                rows,
                b.crf_transitions,
                b.crf_start,
                b.crf_end,
                &gold[range],
            )?;
            total = Some(match total {
                Some(acc) => tape.add(acc, l)?,
                None => l,
            });
        }
        total.ok_or_else(|| Error::Domain("cannot compute the loss of an empty document".into()))
    }

    /// CRF negative log-likelihood of the gold tags, summed over chunks.
    pub fn loss<R: Rng>(&self, doc: &Document, training: bool, rng: &mut R) -> Result<f64> {
        let enc = self.encode(doc)?;
        self.loss_encoded(&enc, training, rng)
    }

    pub fn loss_encoded<R: Rng>(
        &self,
        enc: &EncodedDoc,
        training: bool,
        rng: &mut R,
    ) -> Result<f64> {
        let mut tape = Tape::new(&self.params);
        let l = self.loss_on_tape(&mut tape, enc, training, rng)?;
        Ok(tape.scalar(l))
    }

    /// Loss and parameter gradients for one document.
    pub fn loss_and_gradients<R: Rng>(
        &self,
        enc: &EncodedDoc,
        training: bool,
        rng: &mut R,
    ) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(&self.params);
        let l = self.loss_on_tape(&mut tape, enc, training, rng)?;
        let value = tape.scalar(l);
        let grads = tape.backward(l)?;
        Ok((value, grads))
    }
}
