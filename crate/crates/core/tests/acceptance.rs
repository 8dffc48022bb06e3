//! End-to-end acceptance gates. Runs every criterion, prints one PASS/FAIL
//! line each and exits non-zero if any fail.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cedi::corpus::standoff::write_standoff;
use cedi::corpus::Document;
use cedi::model::{CediConfig, CediModel};
use cedi::training::{encode_all, evaluate_model, run_repeated, train_epoch, Splits};
use common::checks::{self, Outcome, GRAD_TOLERANCE};
use common::{model_for, reduced_config, scoring_cases, synthetic};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CONTEXT_N: usize = 10;
const LOCALITY_TRIALS: usize = 1000;
const OVERFIT_DOCS: usize = 20;
const PROBE_MODEL_EPOCHS: usize = 40;
const OVERFIT_EPOCHS: usize = 100;
const OVERFIT_SECONDS: f64 = 300.0;
const GENERALIZATION_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const GENERALIZATION_EPOCHS: usize = 10;
const GENERALIZATION_PATIENCE: usize = 4;
const GENERALIZATION_SECONDS: f64 = 1800.0;

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let results = checks::all_grad_checks();
    let secs = start.elapsed().as_secs_f64();
    let mut worst = 0.0f64;
    let mut values = 0;
    for (name, check) in &results {
        if check.max_rel_error >= GRAD_TOLERANCE {
            return Err(format!("{name}: {check:?}"));
        }
        worst = worst.max(check.max_rel_error);
        values += check.checked;
    }
    if secs >= 60.0 {
        return Err(format!("took {secs:.1}s"));
    }
    Ok(format!(
        "{} checks over {values} values, max rel error {worst:.1e}, {secs:.1}s",
        results.len()
    ))
}

fn crf_oracle() -> Outcome {
    let start = Instant::now();
    let summary = checks::crf_oracle(100, 2718)?;
    let secs = start.elapsed().as_secs_f64();
    if secs >= 10.0 {
        return Err(format!("took {secs:.1}s"));
    }
    Ok(format!("{summary}, {secs:.2}s"))
}

/// Reduced-configuration model trained briefly on synthetic notes.
fn trained_model() -> CediModel {
    let docs = synthetic(42, OVERFIT_DOCS);
    let mut model = model_for(reduced_config(), &docs);
    let enc = encode_all(&model, &docs).unwrap();
    for epoch in 1..=PROBE_MODEL_EPOCHS {
        train_epoch(&mut model, &enc, epoch).unwrap();
    }
    model
}

fn boundary_invariance(model: &CediModel) -> Outcome {
    checks::boundary_invariance(model, &synthetic(3030, 50))
}

fn context_locality() -> Outcome {
    let fixture = checks::LocalityFixture::new(CONTEXT_N);
    let outside = checks::locality_outside(&fixture, LOCALITY_TRIALS)?;
    let (moved, trials) = checks::locality_inside(&fixture, LOCALITY_TRIALS);
    if moved * 100 < trials * 99 {
        return Err(format!(
            "only {moved}/{trials} in-window perturbations changed the embedding"
        ));
    }
    Ok(format!(
        "outside {outside}; inside {moved}/{trials} changed"
    ))
}

fn overfit_gate() -> Outcome {
    let start = Instant::now();
    let docs = synthetic(42, OVERFIT_DOCS);
    let mut model = model_for(reduced_config(), &docs);
    let enc = encode_all(&model, &docs).unwrap();
    let mut last = 0.0;
    for epoch in 1..=OVERFIT_EPOCHS {
        train_epoch(&mut model, &enc, epoch).map_err(|e| e.to_string())?;
        last = evaluate_model(&model, &docs)
            .map_err(|e| e.to_string())?
            .micro
            .f1;
        if last >= 0.99 {
            let secs = start.elapsed().as_secs_f64();
            if secs >= OVERFIT_SECONDS {
                return Err(format!(
                    "reached F1 {last:.4} at epoch {epoch} but took {secs:.0}s"
                ));
            }
            return Ok(format!(
                "training F1 {last:.4} at epoch {epoch}, {secs:.0}s"
            ));
        }
    }
    Err(format!(
        "training F1 {last:.4} after {OVERFIT_EPOCHS} epochs"
    ))
}

fn generalization_gate() -> Outcome {
    let start = Instant::now();
    let docs = synthetic(2024, 500);
    let splits = Splits {
        train: docs[..300].to_vec(),
        valid: docs[300..400].to_vec(),
        test: docs[400..].to_vec(),
    };
    let run = |features: &str| {
        let config = CediConfig {
            max_epochs: GENERALIZATION_EPOCHS,
            patience: GENERALIZATION_PATIENCE,
            features: features.parse().unwrap(),
            ..reduced_config()
        };
        run_repeated(&splits, &config, &GENERALIZATION_SEEDS, |_, _| Ok(None))
            .map_err(|e| e.to_string())
    };
    let full = run("char,token,prefix,context,attention")?;
    let ablated = run("char,token,prefix,attention")?;
    let secs = start.elapsed().as_secs_f64();
    let fmt = |v: Vec<f64>| {
        v.iter()
            .map(|f| format!("{f:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let summary = format!(
        "full mean {:.4} [{}], without context mean {:.4} [{}], {secs:.0}s",
        full.mean.f1,
        fmt(full.f1_values()),
        ablated.mean.f1,
        fmt(ablated.f1_values())
    );
    println!("{}", full.table());
    println!("{}", ablated.table());
    if let Some(low) = full.runs.iter().find(|r| r.test.f1 < 0.90) {
        return Err(format!(
            "seed {} F1 {:.4} below 0.90; {summary}",
            low.seed, low.test.f1
        ));
    }
    if ablated.mean.f1 >= full.mean.f1 {
        return Err(format!("ablation did not lower mean F1; {summary}"));
    }
    if secs >= GENERALIZATION_SECONDS {
        return Err(format!("too slow; {summary}"));
    }
    Ok(summary)
}

fn evaluator_oracle() -> Outcome {
    let cases = scoring_cases();
    for case in &cases {
        let e = cedi::evaluation::entity_prf(&case.gold, &case.pred).map_err(|e| e.to_string())?;
        let t = cedi::evaluation::token_prf(&case.gold, &case.pred).map_err(|e| e.to_string())?;
        let ec = (e.counts.tp, e.counts.fp, e.counts.fn_);
        let tc = (t.counts.tp, t.counts.fp, t.counts.fn_);
        if ec != case.entity || tc != case.token {
            return Err(format!(
                "{}: entity {ec:?} (want {:?}), token {tc:?} (want {:?})",
                case.name, case.entity, case.token
            ));
        }
    }
    Ok(format!("{} crafted cases exact", cases.len()))
}

fn cedi(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cedi"))
        .args(args)
        .env_remove("RUST_LOG")
        .arg("--quiet")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "cedi {}: exit {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn significance_sanity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let gold_dir = dir.path().join("gold");
    let sys_dir = dir.path().join("sys");
    let docs: Vec<Document> = synthetic(808, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sys = checks::relabel(
        &docs
            .iter()
            .map(|d| d.gold_spans.clone())
            .collect::<Vec<_>>(),
        &mut rng,
    );
    for (doc, spans) in docs.iter().zip(&sys) {
        write_standoff(&gold_dir, doc, &doc.gold_spans, true).map_err(|e| e.to_string())?;
        write_standoff(&sys_dir, doc, spans, false).map_err(|e| e.to_string())?;
    }
    let (g, s) = (path_str(&gold_dir), path_str(&sys_dir));
    let out = cedi(&["compare", &g, &s, &s])?;
    let p_line = out
        .lines()
        .find(|l| l.starts_with("p = "))
        .ok_or("no p line")?
        .to_string();
    let p: f64 = p_line[4..]
        .split_whitespace()
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or("bad p value")?;
    if p != 1.0 {
        return Err(format!("self comparison printed {p_line:?}"));
    }
    let (hits, trials) = checks::null_calibration(200, 999);
    let rate = hits as f64 / trials as f64;
    if !(0.01..=0.10).contains(&rate) {
        return Err(format!("{hits}/{trials} null trials had p <= 0.05"));
    }
    Ok(format!(
        "self comparison {p_line:?}; null rate p <= 0.05 is {hits}/{trials}"
    ))
}

fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = entry.map_err(|e| e.to_string())?.path();
        let name = p
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        files.push((name, fs::read(&p).map_err(|e| e.to_string())?));
    }
    files.sort();
    Ok(files)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = |rel: &str| path_str(&dir.path().join(rel));
    cedi(&[
        "generate",
        &root("data"),
        "--split",
        "14,6,6",
        "--seed",
        "17",
    ])?;
    let config = CediConfig {
        max_epochs: 3,
        patience: 3,
        ..reduced_config()
    };
    let text = format!(
        "{}train_dir = {}\nvalid_dir = {}\n",
        config.to_text(),
        root("data/train"),
        root("data/valid")
    );
    fs::write(dir.path().join("run.conf"), text).map_err(|e| e.to_string())?;
    for name in ["a.ckpt", "b.ckpt"] {
        cedi(&[
            "train",
            "--config",
            &root("run.conf"),
            "--checkpoint",
            &root(name),
        ])?;
    }
    let a = fs::read(dir.path().join("a.ckpt")).map_err(|e| e.to_string())?;
    let b = fs::read(dir.path().join("b.ckpt")).map_err(|e| e.to_string())?;
    if a != b {
        return Err("checkpoints differ between identical training runs".into());
    }
    let test = root("data/test");
    for run in ["1", "2"] {
        cedi(&[
            "predict",
            &root("a.ckpt"),
            &test,
            &root(&format!("pred{run}")),
        ])?;
        cedi(&["redact", &root("a.ckpt"), &test, &root(&format!("ph{run}"))])?;
        cedi(&[
            "redact",
            &root("a.ckpt"),
            &test,
            &root(&format!("mask{run}")),
            "--style",
            "mask",
        ])?;
    }
    for kind in ["pred", "ph", "mask"] {
        let first = dir_bytes(&dir.path().join(format!("{kind}1")))?;
        if first.is_empty() || first != dir_bytes(&dir.path().join(format!("{kind}2")))? {
            return Err(format!("{kind} outputs differ between runs"));
        }
    }
    Ok(format!(
        "checkpoint of {} bytes reproduced; predict and redact outputs identical",
        a.len()
    ))
}

fn checkpoint_round_trip(model: &CediModel) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.ckpt");
    model.save(&path).map_err(|e| e.to_string())?;
    let loaded = CediModel::load(&path).map_err(|e| e.to_string())?;
    let probe = synthetic(4040, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut spans = 0;
    for doc in &probe {
        let a = model
            .forward(doc, false, &mut rng)
            .map_err(|e| e.to_string())?;
        let b = loaded
            .forward(doc, false, &mut rng)
            .map_err(|e| e.to_string())?;
        let bits = |m: &cedi::crf::EmissionMatrix| {
            m.scores().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        if bits(&a) != bits(&b) {
            return Err(format!("{}: emissions differ after reload", doc.id));
        }
        let pa = model.predict(doc).map_err(|e| e.to_string())?;
        if pa != loaded.predict(doc).map_err(|e| e.to_string())? {
            return Err(format!("{}: predictions differ after reload", doc.id));
        }
        spans += pa.len();
    }
    Ok(format!(
        "{} probe documents, {spans} spans, bit-identical",
        probe.len()
    ))
}

fn report(number: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("criterion {number} {name}: PASS ({detail}) [{secs:.1}s]");
            true
        }
        Err(detail) => {
            println!("criterion {number} {name}: FAIL ({detail}) [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    let model = trained_model();
    let results = [
        report(1, "gradient integrity", gradient_integrity),
        report(2, "crf oracle equivalence", crf_oracle),
        report(3, "boundary invariance", || boundary_invariance(&model)),
        report(4, "context locality", context_locality),
        report(5, "overfit gate", overfit_gate),
        report(6, "generalization gate", generalization_gate),
        report(7, "evaluator oracle", evaluator_oracle),
        report(8, "significance sanity", significance_sanity),
        report(9, "determinism", determinism),
        report(10, "checkpoint round trip", || {
            checkpoint_round_trip(&model)
        }),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
