//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit status
//! when any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use cogdiag::checkpoint;
use cogdiag::config::Config;
use cogdiag::data::{make_split, SplitMode};
use cogdiag::eval::{
    ablation_variants, eval_new_exercises, eval_new_students, eval_standard, fit, new_exercise_control,
    new_exercise_model, new_student_control, Corpus,
};
use cogdiag::synth::{bayes_optimal_auc, generate, SynthConfig};
use common::Check;

/// Width of the pseudo-embeddings used by every benchmark.
const TEXT_DIM: usize = 256;
const SPLIT_SEED: u64 = 0;
/// Records per student in the cold-start cohort; the largest history is 100.
const COLD_PER_STUDENT: usize = 150;

fn benchmark_corpus(per_student: usize) -> Result<(cogdiag::synth::SynthDataset, Corpus), String> {
    let cfg = SynthConfig {
        per_student,
        ..SynthConfig::default()
    };
    let ds = generate(&cfg).map_err(|e| e.to_string())?;
    let corpus = Corpus::synthetic(&ds, TEXT_DIM, 0).map_err(|e| e.to_string())?;
    Ok((ds, corpus))
}

fn gradients() -> Check {
    let start = Instant::now();
    let ops = common::check_op_gradients()?;
    let model = common::check_model_gradients()?;
    let secs = start.elapsed().as_secs_f64();
    if secs >= 30.0 {
        return Err(format!("{ops}; {model}; took {secs:.1}s (limit 30s)"));
    }
    Ok(format!("{ops}; {model}; {secs:.1}s"))
}

fn synthetic_benchmark() -> Check {
    let start = Instant::now();
    let (ds, corpus) = benchmark_corpus(SynthConfig::default().per_student)?;
    let split = make_split(&corpus.log, SplitMode::Standard, SPLIT_SEED, None).map_err(|e| e.to_string())?;
    let cfg = Config::default();
    let fitted = fit(&corpus, &cfg, &split).map_err(|e| e.to_string())?;
    let report = eval_standard(fitted.model(), &corpus, &split).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let bayes = bayes_optimal_auc(&ds.truth_of(&split.test), &ds.labels(&split.test)).map_err(|e| e.to_string())?;
    let epochs = fitted.outcome.epochs.len();
    let detail = format!(
        "test auc {:.4}, bayes {bayes:.4}, gap {:.4}, {epochs} epochs (best {}), {secs:.1}s",
        report.auc,
        bayes - report.auc,
        fitted.outcome.best_epoch
    );
    if report.auc >= 0.72 && bayes - report.auc <= 0.05 && epochs <= 30 && secs < 180.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cold_start() -> Check {
    let (_, corpus) = benchmark_corpus(COLD_PER_STUDENT)?;
    let base = Config::default();
    let control = new_student_control(&base);
    let mut aucs = Vec::new();
    let mut detail = Vec::new();
    let mut gap_20 = f64::NAN;
    for k in [20, 50, 100] {
        let split = make_split(&corpus.log, SplitMode::NewStudent, SPLIT_SEED, Some(k)).map_err(|e| e.to_string())?;
        let full = fit(&corpus, &base, &split).map_err(|e| e.to_string())?;
        let auc = eval_new_students(full.model(), &corpus, &split)
            .map_err(|e| e.to_string())?
            .auc;
        if k == 20 {
            let ids = fit(&corpus, &control, &split).map_err(|e| e.to_string())?;
            let id_auc = eval_new_students(ids.model(), &corpus, &split)
                .map_err(|e| e.to_string())?
                .auc;
            gap_20 = auc - id_auc;
            detail.push(format!("K=20 text {auc:.4} vs id-only {id_auc:.4} (gap {gap_20:.4})"));
        } else {
            detail.push(format!("K={k} {auc:.4}"));
        }
        aucs.push(auc);
    }
    let monotone = aucs.windows(2).all(|w| w[1] >= w[0] - 0.01);

    let split = make_split(&corpus.log, SplitMode::NewExercise, SPLIT_SEED, None).map_err(|e| e.to_string())?;
    let text = fit(&corpus, &new_exercise_model(&base), &split).map_err(|e| e.to_string())?;
    let text_auc = eval_new_exercises(text.model(), &corpus, &split)
        .map_err(|e| e.to_string())?
        .auc;
    let ids = fit(&corpus, &new_exercise_control(&base), &split).map_err(|e| e.to_string())?;
    let id_auc = eval_new_exercises(ids.model(), &corpus, &split)
        .map_err(|e| e.to_string())?
        .auc;
    let gap_ex = text_auc - id_auc;
    detail.push(format!(
        "new exercises text {text_auc:.4} vs id-only {id_auc:.4} (gap {gap_ex:.4})"
    ));

    let detail = detail.join("; ");
    if gap_20 >= 0.10 && monotone && gap_ex >= 0.08 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ablation_ordering() -> Check {
    let (_, corpus) = benchmark_corpus(SynthConfig::default().per_student)?;
    let split = make_split(&corpus.log, SplitMode::Standard, SPLIT_SEED, None).map_err(|e| e.to_string())?;
    let mut results = Vec::new();
    for (name, cfg) in ablation_variants(&Config::default()) {
        let fitted = fit(&corpus, &cfg, &split).map_err(|e| e.to_string())?;
        let auc = eval_standard(fitted.model(), &corpus, &split)
            .map_err(|e| e.to_string())?
            .auc;
        results.push((name, auc));
    }
    let auc = |n: &str| {
        results
            .iter()
            .find(|(m, _)| *m == n)
            .map(|r| r.1)
            .expect("variant present")
    };
    let full = auc("full");
    let mut problems = Vec::new();
    for (name, a) in &results[1..] {
        if *a > full {
            problems.push(format!("{name} beats full"));
        }
    }
    let ids = auc("id_embeddings");
    for other in ["no_text", "no_moe"] {
        if auc(other) < ids {
            problems.push(format!("{other} below id_embeddings"));
        }
    }
    let table = results
        .iter()
        .map(|(n, a)| format!("{n} {a:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    if problems.is_empty() {
        Ok(table)
    } else {
        Err(format!("{table}: {}", problems.join(", ")))
    }
}

fn determinism() -> Check {
    let (_, corpus) = benchmark_corpus(SynthConfig::default().per_student)?;
    let split = make_split(&corpus.log, SplitMode::Standard, SPLIT_SEED, None).map_err(|e| e.to_string())?;
    let mut cfg = Config::default();
    cfg.train.epochs = 3;
    cfg.train.seed = 11;
    let meta = serde_json::json!({"seed": cfg.train.seed});
    let a = fit(&corpus, &cfg, &split).map_err(|e| e.to_string())?;
    let b = fit(&corpus, &cfg, &split).map_err(|e| e.to_string())?;
    let bytes_a = checkpoint::to_bytes(a.model(), &meta).map_err(|e| e.to_string())?;
    let bytes_b = checkpoint::to_bytes(b.model(), &meta).map_err(|e| e.to_string())?;
    if bytes_a != bytes_b {
        return Err("two runs with one seed produced different checkpoints".into());
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.ckpt");
    checkpoint::save(a.model(), &meta, &path).map_err(|e| e.to_string())?;
    let (loaded, _) = checkpoint::load(&path).map_err(|e| e.to_string())?;
    let before = eval_standard(a.model(), &corpus, &split).map_err(|e| e.to_string())?;
    let after = eval_standard(&loaded, &corpus, &split).map_err(|e| e.to_string())?;
    if before != after || before.auc.to_bits() != after.auc.to_bits() {
        return Err(format!("reloaded auc {} vs {}", after.auc, before.auc));
    }
    Ok(format!(
        "{} checkpoint bytes identical; reloaded auc {} bit-exact",
        bytes_a.len(),
        after.auc
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("gradient correctness", gradients),
        ("equation oracles", || common::check_equation_oracles(100)),
        ("metric oracles", || common::check_metric_oracles(200)),
        ("permutation invariance", || common::check_permutation_invariance(64)),
        ("synthetic benchmark", synthetic_benchmark),
        ("cold-start superiority", cold_start),
        ("ablation ordering", ablation_ordering),
        ("determinism and persistence", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS: {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL: {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
