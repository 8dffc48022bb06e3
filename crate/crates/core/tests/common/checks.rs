//! Checks shared by the topic test files and the acceptance runner. Each
//! returns a short summary on success and a description of the first
//! violation on failure.

use cedi::context::{context_embedding, context_embeddings_with, ContextTables, NgramAttention};
use cedi::corpus::{build_vocab, Document, Lexicon, TagScheme, Token, UNK};
use cedi::crf::{log_partition, viterbi, CrfParams, EmissionMatrix};
use cedi::layers::{
    attend, attention_keys, bilstm, char_encode, lstm_cell, merge, pool, AttentionParams,
    LstmParams,
};
use cedi::model::{CediConfig, CediModel};
use cedi::numeric::{ParamSet, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_model, check_tape_fn, five_token_doc, model_for, resegment, tiny_config, GradCheck,
};

pub type Outcome = Result<String, String>;

pub const GRAD_TOLERANCE: f64 = 1e-4;

fn randomize_biases(ps: &mut ParamSet, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        if ps.name(id).ends_with("bias") {
            ps.get_mut(id)
                .values_mut()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn grad_lstm_cell() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ps = ParamSet::new();
    let p = LstmParams::register(&mut ps, "cell", 3, 4, &mut rng);
    randomize_biases(&mut ps, &mut rng);
    let (x, h, c) = (
        random_vec(&mut rng, 3),
        random_vec(&mut rng, 4),
        random_vec(&mut rng, 4),
    );
    check_tape_fn(&ps, |tape| {
        let x = tape.constant(x.clone());
        let h0 = tape.constant(h.clone());
        let c0 = tape.constant(c.clone());
        let s = lstm_cell(tape, x, h0, c0, &p).unwrap();
        let both = tape.concat(&[s.h, s.c]).unwrap();
        tape.sum(both)
    })
}

pub fn grad_bilstm() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ps = ParamSet::new();
    let f = LstmParams::register(&mut ps, "f", 3, 4, &mut rng);
    let b = LstmParams::register(&mut ps, "b", 3, 4, &mut rng);
    randomize_biases(&mut ps, &mut rng);
    let seq: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 3)).collect();
    let probe = random_vec(&mut rng, 8);
    check_tape_fn(&ps, |tape| {
        let inputs: Vec<_> = seq.iter().map(|v| tape.constant(v.clone())).collect();
        let out = bilstm(tape, &inputs, &f, &b).unwrap();
        let w = tape.constant(probe.clone());
        let dots: Vec<_> = out.iter().map(|&o| tape.dot(o, w).unwrap()).collect();
        let all = tape.concat(&dots).unwrap();
        tape.sum(all)
    })
}

pub fn grad_char_encoder() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ps = ParamSet::new();
    let mut table = Tensor::uniform(vec![6, 4], 0.8, &mut rng);
    table.freeze_row(0);
    let table = ps.add("chars", table);
    let f = LstmParams::register(&mut ps, "f", 4, 3, &mut rng);
    let b = LstmParams::register(&mut ps, "b", 4, 3, &mut rng);
    randomize_biases(&mut ps, &mut rng);
    let probe = random_vec(&mut rng, 6);
    check_tape_fn(&ps, |tape| {
        let e = char_encode(tape, &[2, 5, 1, 2], table, &f, &b).unwrap();
        let w = tape.constant(probe.clone());
        tape.dot(e, w).unwrap()
    })
}

pub fn grad_attention() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ps = ParamSet::new();
    let p = AttentionParams::register(&mut ps, "att", 4, 3, &mut rng);
    let states: Vec<Vec<f64>> = (0..6).map(|_| random_vec(&mut rng, 4)).collect();
    let probe = random_vec(&mut rng, 4);
    check_tape_fn(&ps, |tape| {
        let s: Vec<_> = states.iter().map(|v| tape.constant(v.clone())).collect();
        let keys = attention_keys(tape, &s, &p).unwrap();
        let mut outs = Vec::new();
        for t in [0, 2, 5] {
            let (c, _) = attend(tape, &s, &keys, t, 2, &p).unwrap();
            outs.push(merge(tape, s[t], c, &p).unwrap());
        }
        outs.push(pool(tape, s[1], &s, &p).unwrap());
        let w = tape.constant(probe.clone());
        let dots: Vec<_> = outs.iter().map(|&o| tape.dot(o, w).unwrap()).collect();
        let all = tape.concat(&dots).unwrap();
        tape.sum(all)
    })
}

/// Context encoder without and with attention pooling inside the windows.
pub fn grad_context(pooled: bool) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ps = ParamSet::new();
    let tables = ContextTables::register(&mut ps, "ctx", 7, 3, 4, &mut rng);
    let att = NgramAttention {
        fwd: AttentionParams::register(&mut ps, "af", 4, 2, &mut rng),
        bwd: AttentionParams::register(&mut ps, "ab", 4, 2, &mut rng),
    };
    randomize_biases(&mut ps, &mut rng);
    let probe = random_vec(&mut rng, 8);
    let attention = pooled.then_some(&att);
    check_tape_fn(&ps, |tape| {
        let out = context_embeddings_with(tape, &[2, 3, 1, 6, 2], 2, &tables, attention).unwrap();
        let w = tape.constant(probe.clone());
        let dots: Vec<_> = out.iter().map(|&o| tape.dot(o, w).unwrap()).collect();
        let all = tape.concat(&dots).unwrap();
        tape.sum(all)
    })
}

pub fn grad_crf_head() -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ps = ParamSet::new();
    let k = 4;
    let w = ps.add("w", Tensor::uniform(vec![k, 3], 1.0, &mut rng));
    let trans = ps.add("trans", Tensor::uniform(vec![k, k], 1.0, &mut rng));
    let start = ps.add("start", Tensor::uniform(vec![k], 1.0, &mut rng));
    let end = ps.add("end", Tensor::uniform(vec![k], 1.0, &mut rng));
    let xs: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, 3)).collect();
    check_tape_fn(&ps, |tape| {
        let rows: Vec<_> = xs
            .iter()
            .map(|x| {
                let x = tape.constant(x.clone());
                tape.affine(w, x, None).unwrap()
            })
            .collect();
        tape.crf_nll(&rows, trans, start, end, &[0, 2, 2, 1, 3])
            .unwrap()
    })
}

/// Full model loss on the five-token document, default feature set.
pub fn grad_model_default() -> GradCheck {
    let doc = five_token_doc();
    check_model(&model_for(tiny_config(), std::slice::from_ref(&doc)), &doc)
}

/// Full model loss with every optional feature and chunking enabled.
pub fn grad_model_optional() -> GradCheck {
    let doc = five_token_doc();
    let config = CediConfig {
        features: "char,token,prefix,suffix,context,attention,char_attention,ngram_attention"
            .parse()
            .unwrap(),
        chunk_length: 3,
        ..tiny_config()
    };
    check_model(&model_for(config, std::slice::from_ref(&doc)), &doc)
}

pub fn all_grad_checks() -> Vec<(&'static str, GradCheck)> {
    vec![
        ("lstm cell", grad_lstm_cell()),
        ("bilstm", grad_bilstm()),
        ("char encoder", grad_char_encoder()),
        ("attention", grad_attention()),
        ("context embedding", grad_context(false)),
        ("pooled context embedding", grad_context(true)),
        ("crf head", grad_crf_head()),
        ("model, default features", grad_model_default()),
        ("model, all features", grad_model_optional()),
    ]
}

/// One random CRF problem with `T ≤ 5` and `K ≤ 4`.
pub struct CrfInstance {
    pub rows: Vec<Vec<f64>>,
    pub trans: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl CrfInstance {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let t = rng.gen_range(1..=5);
        let k = rng.gen_range(1..=4);
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect() };
        let rows = (0..t).map(|_| draw(k)).collect();
        CrfInstance {
            rows,
            trans: draw(k * k),
            start: draw(k),
            end: draw(k),
        }
    }

    pub fn crf(&self) -> (EmissionMatrix, CrfParams) {
        (
            EmissionMatrix::from_rows(&self.rows).unwrap(),
            CrfParams::new(
                self.start.len(),
                self.trans.clone(),
                self.start.clone(),
                self.end.clone(),
            )
            .unwrap(),
        )
    }

    /// Path score written out directly from the parameter vectors.
    pub fn score(&self, path: &[usize]) -> f64 {
        let k = self.start.len();
        let mut s = self.start[path[0]] + self.end[path[path.len() - 1]];
        for (t, &y) in path.iter().enumerate() {
            s += self.rows[t][y];
            if t > 0 {
                s += self.trans[path[t - 1] * k + y];
            }
        }
        s
    }

    /// Every path with its score, in lexicographic order.
    pub fn scored_paths(&self) -> Vec<(Vec<usize>, f64)> {
        let mut paths = vec![Vec::new()];
        for _ in 0..self.rows.len() {
            paths = paths
                .into_iter()
                .flat_map(|p| {
                    (0..self.start.len()).map(move |y| {
                        let mut q = p.clone();
                        q.push(y);
                        q
                    })
                })
                .collect();
        }
        paths
            .into_iter()
            .map(|p| {
                let s = self.score(&p);
                (p, s)
            })
            .collect()
    }
}

pub fn naive_log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Forward algorithm and Viterbi against enumeration on `n` random instances.
pub fn crf_oracle(n: usize, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_z: f64 = 0.0;
    for case in 0..n {
        let inst = CrfInstance::random(&mut rng);
        let (e, c) = inst.crf();
        let scored = inst.scored_paths();
        let oracle_z = naive_log_sum_exp(&scored.iter().map(|(_, s)| *s).collect::<Vec<_>>());
        let z = log_partition(&e, &c).map_err(|e| e.to_string())?;
        worst_z = worst_z.max((z - oracle_z).abs());
        if (z - oracle_z).abs() >= 1e-9 {
            return Err(format!(
                "case {case}: log partition {z} vs enumeration {oracle_z}"
            ));
        }
        // first maximum in lexicographic order
        let (best_path, best_score) = scored
            .iter()
            .fold(None::<&(Vec<usize>, f64)>, |acc, x| match acc {
                Some(a) if a.1 >= x.1 => Some(a),
                _ => Some(x),
            })
            .unwrap();
        let (path, score) = viterbi(&e, &c).map_err(|e| e.to_string())?;
        if &path != best_path || (score - best_score).abs() >= 1e-9 {
            return Err(format!(
                "case {case}: viterbi {path:?} ({score}) vs enumeration {best_path:?} ({best_score})"
            ));
        }
    }
    Ok(format!("{n} instances, max |log Z error| {worst_z:.1e}"))
}

/// Context encoder over a synthetic vocabulary for locality checks.
pub struct LocalityFixture {
    pub docs: Vec<Document>,
    pub vocab: Lexicon,
    pub params: ParamSet,
    pub tables: ContextTables,
    pub n: usize,
}

impl LocalityFixture {
    pub fn new(n: usize) -> Self {
        let docs = super::synthetic(77, 30);
        let vocab = build_vocab(&docs, 20, 3, TagScheme::Bioes).unwrap().tokens;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = ParamSet::new();
        let tables = ContextTables::register(&mut params, "ctx", vocab.len(), 25, 32, &mut rng);
        LocalityFixture {
            docs,
            vocab,
            params,
            tables,
            n,
        }
    }

    pub fn embed(&self, doc: &Document, t: usize) -> Vec<f64> {
        let mut tape = Tape::new(&self.params);
        let v = context_embedding(&mut tape, doc, &self.vocab, t, self.n, &self.tables).unwrap();
        tape.value(v).to_vec()
    }

    /// `doc` with token `j` replaced by a vocabulary word of a different id.
    pub fn perturb(&self, doc: &Document, j: usize, rng: &mut ChaCha8Rng) -> Document {
        let old = self.vocab.id(&doc.tokens[j].lower);
        let replacement = loop {
            let id = rng.gen_range(UNK + 1..self.vocab.len());
            if id != old {
                break self.vocab.symbol(id).to_string();
            }
        };
        let mut out = doc.clone();
        out.tokens[j] = Token::new(&replacement, doc.tokens[j].start);
        out
    }

    /// Random (document, position, perturbed position) triples drawn with
    /// `pick(t, len)` choosing the perturbed token, skipping draws where it
    /// returns `None`.
    pub fn trials(
        &self,
        count: usize,
        seed: u64,
        pick: impl Fn(usize, usize, &mut ChaCha8Rng) -> Option<usize>,
    ) -> Vec<(usize, usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let d = rng.gen_range(0..self.docs.len());
            let t = rng.gen_range(0..self.docs[d].len());
            if let Some(j) = pick(t, self.docs[d].len(), &mut rng) {
                out.push((d, t, j));
            }
        }
        out
    }
}

/// Perturbing tokens outside `[t-n, t+n]` never changes the embedding at `t`.
pub fn locality_outside(f: &LocalityFixture, trials: usize) -> Outcome {
    let n = f.n;
    let draws = f.trials(trials, 1, |t, len, rng| {
        let outside: Vec<usize> = (0..len).filter(|&j| j + n < t || j > t + n).collect();
        (!outside.is_empty()).then(|| outside[rng.gen_range(0..outside.len())])
    });
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (d, t, j) in draws {
        let doc = &f.docs[d];
        let changed = f.perturb(doc, j, &mut rng);
        if f.embed(doc, t) != f.embed(&changed, t) {
            return Err(format!(
                "{}: token {j} changed the embedding at {t}",
                doc.id
            ));
        }
    }
    Ok(format!("{trials}/{trials} bit-identical"))
}

/// Fraction of in-window perturbations that change the embedding.
pub fn locality_inside(f: &LocalityFixture, trials: usize) -> (usize, usize) {
    let n = f.n;
    let draws = f.trials(trials, 2, |t, len, rng| {
        Some(rng.gen_range(t.saturating_sub(n)..=(t + n).min(len - 1)))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let moved = draws
        .into_iter()
        .filter(|&(d, t, j)| {
            let doc = &f.docs[d];
            let changed = f.perturb(doc, j, &mut rng);
            f.embed(doc, t) != f.embed(&changed, t)
        })
        .count();
    (moved, trials)
}

/// `doc` with every inter-token gap replaced by a random whitespace run.
pub fn random_resegment(doc: &Document, seed: u64) -> Document {
    const GAPS: [&str; 6] = [" ", "\n", "\t", "\n\n", "  ", " \n "];
    let picks: Vec<usize> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..doc.len())
            .map(|_| rng.gen_range(0..GAPS.len()))
            .collect()
    };
    resegment(doc, |i| GAPS[picks[i]])
}

/// Re-segmented copies of each document give bit-identical emissions and
/// identical predicted token spans.
pub fn boundary_invariance(model: &CediModel, docs: &[Document]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut spans = 0;
    for (i, doc) in docs.iter().enumerate() {
        let moved = random_resegment(doc, i as u64);
        if moved.text == doc.text {
            return Err(format!("{}: resegmenting left the text unchanged", doc.id));
        }
        let a = model
            .forward(doc, false, &mut rng)
            .map_err(|e| e.to_string())?;
        let b = model
            .forward(&moved, false, &mut rng)
            .map_err(|e| e.to_string())?;
        let bits = |m: &EmissionMatrix| m.scores().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(&a) != bits(&b) {
            return Err(format!("{}: emissions differ after resegmenting", doc.id));
        }
        let key = |d: &Document| -> Result<Vec<(usize, usize, String)>, String> {
            Ok(model
                .predict(d)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|s| (s.first_token, s.last_token, s.label))
                .collect())
        };
        let (pa, pb) = (key(doc)?, key(&moved)?);
        if pa != pb {
            return Err(format!("{}: predictions differ after resegmenting", doc.id));
        }
        spans += pa.len();
    }
    Ok(format!(
        "{} documents, {spans} predicted spans, all identical",
        docs.len()
    ))
}

/// Independent random relabeling of `gold`: each span is kept, dropped or
/// given another label.
pub fn relabel(
    gold: &[Vec<cedi::corpus::EntitySpan>],
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<cedi::corpus::EntitySpan>> {
    const LABELS: [&str; 7] = cedi::corpus::synthetic::SYNTHETIC_LABELS;
    gold.iter()
        .map(|doc| {
            doc.iter()
                .filter_map(|s| match rng.gen_range(0..10) {
                    0..=5 => Some(s.clone()),
                    6 | 7 => None,
                    _ => {
                        let mut t = s.clone();
                        t.label = LABELS[rng.gen_range(0..LABELS.len())].to_string();
                        Some(t)
                    }
                })
                .collect()
        })
        .collect()
}

/// Null trials where both systems are relabelings of the same gold; returns
/// how many trials gave `p ≤ 0.05`.
pub fn null_calibration(trials: usize, shuffles: usize) -> (usize, usize) {
    let gold: Vec<_> = super::synthetic(500, 40)
        .into_iter()
        .map(|d| d.gold_spans)
        .collect();
    let hits = (0..trials as u64)
        .filter(|&trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let a = relabel(&gold, &mut rng);
            let b = relabel(&gold, &mut rng);
            let p = cedi::evaluation::f1_randomization(
                cedi::evaluation::EvalMode::Entity,
                &gold,
                &a,
                &b,
                shuffles,
                trial,
            )
            .unwrap();
            p <= 0.05
        })
        .count();
    (hits, trials)
}
