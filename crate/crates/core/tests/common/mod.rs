#![allow(dead_code)]

pub mod checks;

use cedi::corpus::{build_vocab, generate_synthetic_corpus, Document, EntitySpan};
use cedi::model::{CediConfig, CediModel};
use cedi::numeric::{Gradients, ParamSet, Tape, Var};

pub const FD_EPS: f64 = 1e-5;
/// Denominator floor of the relative error. Central differences of a loss
/// near 10 carry about 1e-10 of rounding, so gradients below the floor
/// compare by absolute difference.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences for every value of every parameter of `base`,
/// compared with `analytic`. `loss` must be deterministic.
pub fn check_against<T: Clone>(
    base: &T,
    params: fn(&mut T) -> &mut ParamSet,
    analytic: &Gradients,
    loss: impl Fn(&T) -> f64,
) -> GradCheck {
    let mut work = base.clone();
    let ids: Vec<_> = params(&mut work).ids().collect();
    let mut result = GradCheck {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for id in ids {
        let len = params(&mut work).get(id).len();
        let name = params(&mut work).name(id).to_string();
        let grad = analytic.get(id);
        for j in 0..len {
            let original = params(&mut work).get(id).values()[j];
            params(&mut work).get_mut(id).values_mut()[j] = original + FD_EPS;
            let up = loss(&work);
            params(&mut work).get_mut(id).values_mut()[j] = original - FD_EPS;
            let down = loss(&work);
            params(&mut work).get_mut(id).values_mut()[j] = original;
            let numeric = (up - down) / (2.0 * FD_EPS);
            let a = grad.map_or(0.0, |g| g[j]);
            let e = rel_error(a, numeric);
            result.checked += 1;
            if e > result.max_rel_error {
                result.max_rel_error = e;
                result.worst = format!("{name}[{j}]: analytic {a:e}, numeric {numeric:e}");
            }
        }
    }
    result
}

fn identity(p: &mut ParamSet) -> &mut ParamSet {
    p
}

/// Gradient check of a scalar function built on a tape over `params`.
pub fn check_tape_fn<F>(params: &ParamSet, f: F) -> GradCheck
where
    F: Fn(&mut Tape<'_>) -> Var,
{
    let mut tape = Tape::new(params);
    let out = f(&mut tape);
    let analytic = tape.backward(out).expect("scalar output");
    check_against(params, identity, &analytic, |p| {
        let mut tape = Tape::new(p);
        let out = f(&mut tape);
        tape.scalar(out)
    })
}

fn model_params(m: &mut CediModel) -> &mut ParamSet {
    &mut m.params
}

/// Gradient check of the full model loss on `doc` with dropout off.
pub fn check_model(model: &CediModel, doc: &Document) -> GradCheck {
    use rand::SeedableRng;
    let enc = model.encode(doc).expect("encodable document");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let (_, analytic) = model
        .loss_and_gradients(&enc, false, &mut rng)
        .expect("loss");
    check_against(model, model_params, &analytic, |m| {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        m.loss_encoded(&enc, false, &mut rng).expect("loss")
    })
}

/// Reduced configuration used by the overfitting and generalization gates.
pub fn reduced_config() -> CediConfig {
    CediConfig {
        ngram_size: 3,
        context_hidden: 32,
        main_hidden: 25,
        token_dim: 25,
        ..CediConfig::default()
    }
}

/// Tiny configuration with every hidden width at most 8.
pub fn tiny_config() -> CediConfig {
    CediConfig {
        ngram_size: 2,
        char_dim: 4,
        prefix_dim: 3,
        prefix_threshold: 1,
        token_dim: 5,
        char_hidden: 3,
        prefix_hidden: 3,
        context_hidden: 4,
        main_hidden: 4,
        attention_dim: 3,
        dropout: 0.0,
        max_epochs: 10,
        patience: 3,
        ..CediConfig::default()
    }
}

pub fn model_for(config: CediConfig, docs: &[Document]) -> CediModel {
    let vocab = build_vocab(
        docs,
        config.prefix_threshold,
        config.affix_length,
        config.tag_scheme,
    )
    .expect("vocab");
    CediModel::build(config, vocab, None).expect("model")
}

/// Synthetic corpus shortcut.
pub fn synthetic(seed: u64, n: usize) -> Vec<Document> {
    generate_synthetic_corpus(seed, n)
}

/// `doc` with its line structure rewritten: runs of whitespace between
/// tokens become one of space, newline, tab or blank line, chosen by
/// `choose(gap index)`. Tokens and labels are unchanged.
pub fn resegment(doc: &Document, choose: impl Fn(usize) -> &'static str) -> Document {
    let mut text = String::new();
    for (i, t) in doc.tokens.iter().enumerate() {
        if i > 0 {
            text.push_str(choose(i));
        }
        text.push_str(&t.surface);
    }
    let mut out = Document::from_text(doc.id.clone(), text);
    assert_eq!(
        out.len(),
        doc.len(),
        "resegmenting must keep the token stream"
    );
    out.gold_spans = doc
        .gold_spans
        .iter()
        .map(|s| EntitySpan::over(&out.tokens, s.first_token, s.last_token, s.label.clone()))
        .collect();
    out
}

/// Five tokens with a multi-token and a single-token entity.
pub fn five_token_doc() -> Document {
    let mut doc = Document::from_text("five", "Dr. Smith saw\n12345");
    assert_eq!(doc.len(), 5, "{:?}", doc.tokens);
    doc.gold_spans = vec![
        EntitySpan::over(&doc.tokens, 0, 2, "DOCTOR"),
        EntitySpan::over(&doc.tokens, 4, 4, "IDNUM"),
    ];
    doc
}

pub fn span(first: usize, last: usize, label: &str) -> EntitySpan {
    EntitySpan::tokens_only(first, last, label)
}

/// A hand-counted scoring case: per-document gold and predictions with the
/// expected `(tp, fp, fn)` in entity and token mode.
pub struct ScoringCase {
    pub name: &'static str,
    pub gold: Vec<Vec<EntitySpan>>,
    pub pred: Vec<Vec<EntitySpan>>,
    pub entity: (usize, usize, usize),
    pub token: (usize, usize, usize),
}

pub fn scoring_cases() -> Vec<ScoringCase> {
    let case = |name, gold, pred, entity, token| ScoringCase {
        name,
        gold,
        pred,
        entity,
        token,
    };
    vec![
        case(
            "boundary error on one of two entities",
            vec![vec![span(0, 1, "PATIENT"), span(5, 5, "DATE")]],
            vec![vec![span(0, 1, "PATIENT"), span(5, 6, "DATE")]],
            (1, 1, 1),
            (3, 1, 0),
        ),
        case(
            "prediction one token too long",
            vec![vec![span(5, 5, "DATE")]],
            vec![vec![span(5, 6, "DATE")]],
            (0, 1, 1),
            (1, 1, 0),
        ),
        case(
            "perfect prediction over two documents",
            vec![
                vec![span(0, 1, "PATIENT")],
                vec![span(2, 2, "DATE"), span(4, 6, "HOSPITAL")],
            ],
            vec![
                vec![span(0, 1, "PATIENT")],
                vec![span(2, 2, "DATE"), span(4, 6, "HOSPITAL")],
            ],
            (3, 0, 0),
            (6, 0, 0),
        ),
        case(
            "no predictions",
            vec![vec![span(0, 0, "PATIENT"), span(2, 3, "DATE")]],
            vec![vec![]],
            (0, 0, 2),
            (0, 0, 3),
        ),
        case(
            "prediction without gold",
            vec![vec![]],
            vec![vec![span(1, 1, "DATE")]],
            (0, 1, 0),
            (0, 1, 0),
        ),
        case(
            "right span wrong label",
            vec![vec![span(0, 1, "PATIENT")]],
            vec![vec![span(0, 1, "DOCTOR")]],
            (0, 1, 1),
            (0, 2, 2),
        ),
        case(
            "entity split in two",
            vec![vec![span(3, 5, "HOSPITAL")]],
            vec![vec![span(3, 3, "HOSPITAL"), span(4, 5, "HOSPITAL")]],
            (0, 2, 1),
            (3, 0, 0),
        ),
        case(
            "two entities merged",
            vec![vec![span(0, 0, "PATIENT"), span(1, 1, "PATIENT")]],
            vec![vec![span(0, 1, "PATIENT")]],
            (0, 1, 2),
            (2, 0, 0),
        ),
        case(
            "partial overlap with another label",
            vec![vec![span(2, 4, "DATE")]],
            vec![vec![span(3, 4, "IDNUM")]],
            (0, 1, 1),
            (0, 2, 3),
        ),
        case(
            "mixed documents",
            vec![
                vec![span(0, 1, "PATIENT")],
                vec![span(3, 3, "DATE")],
                vec![],
            ],
            vec![
                vec![span(0, 1, "PATIENT")],
                vec![],
                vec![span(2, 4, "PHONE")],
            ],
            (1, 1, 1),
            (2, 3, 1),
        ),
        case(
            "prediction widened on both sides",
            vec![vec![span(2, 3, "PATIENT")]],
            vec![vec![span(1, 4, "PATIENT")]],
            (0, 1, 1),
            (2, 2, 0),
        ),
        case(
            "adjacent entities one missed",
            vec![vec![
                span(0, 1, "DOCTOR"),
                span(2, 2, "HOSPITAL"),
                span(7, 7, "PHONE"),
            ]],
            vec![vec![span(0, 1, "DOCTOR"), span(7, 7, "PHONE")]],
            (2, 0, 1),
            (3, 0, 1),
        ),
    ]
}
