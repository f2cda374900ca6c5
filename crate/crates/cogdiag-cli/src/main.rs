use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cogdiag::checkpoint;
use cogdiag::config::Config;
use cogdiag::data::{make_split, DatasetSplit, SplitMode};
use cogdiag::embedding::PseudoEmbedder;
use cogdiag::eval::{
    ablation_variants, diagnose, eval_new_exercises, eval_new_students, eval_standard, fit, new_exercise_control,
    new_exercise_model, new_student_control, Corpus, EvalReport, Fitted,
};
use cogdiag::model::Model;
use cogdiag::synth::{bayes_optimal_auc, generate, SynthConfig};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "cogdiag",
    version,
    about = "Cognitive diagnosis with text and concept-graph representations"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with known response probabilities.
    Synth(SynthArgs),
    /// Train on a standard split and save the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test part of its split.
    Eval(EvalArgs),
    /// Train and evaluate on held-out students or exercises.
    Coldstart(ColdArgs),
    /// Per-concept mastery report for one student.
    Diagnose(DiagnoseArgs),
    /// Train the full model and every single-component ablation.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding interactions.jsonl, graph.tsv and optionally embeddings.txt.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    interactions: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Width of the pseudo-embedder that fills in missing text vectors;
    /// defaults to the width of the embeddings file.
    #[arg(long)]
    pseudo_dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pseudo_seed: u64,
    /// Fail on missing text vectors instead of pseudo-embedding them.
    #[arg(long, conflicts_with = "pseudo_dim")]
    strict: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Corpus> {
        let in_dir = |name: &str| self.data.as_ref().map(|d| d.join(name));
        let interactions = self
            .interactions
            .clone()
            .or_else(|| in_dir("interactions.jsonl"))
            .context("pass --data or --interactions")?;
        let graph = self
            .graph
            .clone()
            .or_else(|| in_dir("graph.tsv"))
            .context("pass --data or --graph")?;
        let embeddings = self
            .embeddings
            .clone()
            .or_else(|| in_dir("embeddings.txt").filter(|p| p.exists()));
        let pseudo_dim = match (&embeddings, self.pseudo_dim) {
            (_, Some(d)) => Some(d),
            (Some(path), None) if !self.strict => Some(table_dim(path)?),
            (Some(_), None) => None,
            (None, None) => bail!("no embeddings file found; pass --embeddings or --pseudo-dim"),
        };
        let corpus = Corpus::load(
            &interactions,
            &graph,
            embeddings.as_deref(),
            pseudo_dim.map(|d| (d, self.pseudo_seed)),
        )
        .with_context(|| format!("loading {}", interactions.display()))?;
        Ok(corpus)
    }
}

/// Reads the `dim=<D>` header of an embeddings file.
fn table_dim(path: &Path) -> Result<usize> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut header = String::new();
    BufReader::new(file).read_line(&mut header)?;
    header
        .trim()
        .strip_prefix("dim=")
        .and_then(|d| d.parse().ok())
        .with_context(|| format!("{}: missing `dim=<D>` header", path.display()))
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lr=0.005 --set ablation.llm=true`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for the data split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => Config::default(),
        };
        for o in &self.overrides {
            cfg.set(o).with_context(|| format!("applying --set {o}"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON generator settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    students: Option<usize>,
    #[arg(long)]
    exercises: Option<usize>,
    #[arg(long)]
    concepts: Option<usize>,
    #[arg(long)]
    per_student: Option<usize>,
    /// Dimension of the emitted embedding file.
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Run directory for the checkpoint, run.json and plots/.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ColdMode {
    Students,
    Exercises,
}

#[derive(Args)]
struct ColdArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, value_enum)]
    mode: ColdMode,
    /// History lengths for held-out students (repeatable).
    #[arg(long = "k", default_values_t = [20usize])]
    k: Vec<usize>,
    /// Also train the ID-based control and report the difference.
    #[arg(long)]
    control: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Student id as it appears in the interaction file.
    #[arg(long)]
    student: String,
    /// Comma-separated concept ids; all concepts when omitted.
    #[arg(long, value_delimiter = ',')]
    concepts: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map_or_else(|| "unknown".to_owned(), |s| s.trim().to_owned())
}

fn write_run(out: &Path, command: &str, config: Value, seed: Option<u64>, metrics: Value) -> Result<()> {
    fs::create_dir_all(out)?;
    let run = json!({
        "command": command,
        "config": config,
        "seed": seed,
        "git_describe": git_describe(),
        "metrics": metrics,
    });
    fs::write(out.join("run.json"), serde_json::to_string_pretty(&run)? + "\n")?;
    Ok(())
}

fn write_csv(out: &Path, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let dir = out.join("plots");
    fs::create_dir_all(&dir)?;
    let mut text = format!("{header}\n");
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn epochs_csv(out: &Path, name: &str, fitted: &Fitted) -> Result<()> {
    write_csv(
        out,
        name,
        "epoch,lr,train_loss,valid_auc",
        fitted.outcome.epochs.iter().map(|e| {
            format!(
                "{},{},{},{}",
                e.epoch,
                e.lr,
                e.train_loss,
                e.valid.map_or(String::new(), |m| m.auc.to_string())
            )
        }),
    )
}

fn split_meta(split: &DatasetSplit) -> Value {
    json!({"mode": split.mode, "seed": split.seed, "history_len": split.history_len})
}

fn print_report(label: &str, r: &EvalReport) {
    println!(
        "{label}: auc {:.4}  acc {:.4}  rmse {:.4}  (n = {})",
        r.auc, r.acc, r.rmse, r.n
    );
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => SynthConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.students {
        cfg.n_students = v;
    }
    if let Some(v) = a.exercises {
        cfg.n_exercises = v;
    }
    if let Some(v) = a.concepts {
        cfg.n_concepts = v;
    }
    if let Some(v) = a.per_student {
        cfg.per_student = v;
    }
    let ds = generate(&cfg)?;
    ds.write(&a.out, &PseudoEmbedder::new(a.dim, a.embed_seed))?;
    let all: Vec<usize> = (0..ds.log.len()).collect();
    let bayes = bayes_optimal_auc(&ds.truth, &ds.labels(&all))?;
    println!(
        "wrote {} interactions ({} students, {} exercises, {} concepts) to {}; bayes-optimal auc {bayes:.4}",
        ds.log.len(),
        ds.log.n_students(),
        ds.log.n_exercises(),
        ds.log.n_concepts(),
        a.out.display()
    );
    write_run(
        &a.out,
        "synth",
        serde_json::to_value(&cfg)?,
        Some(cfg.seed),
        json!({"bayes_optimal_auc": bayes}),
    )
}

fn train(a: TrainArgs) -> Result<()> {
    let corpus = a.data.load()?;
    let cfg = a.cfg.load()?;
    let split = make_split(&corpus.log, SplitMode::Standard, a.cfg.split_seed, None)?;
    let fitted = fit(&corpus, &cfg, &split)?;
    let report = eval_standard(fitted.model(), &corpus, &split)?;
    fs::create_dir_all(&a.out)?;
    let meta = json!({"train": cfg.train, "split": split_meta(&split), "best_epoch": fitted.outcome.best_epoch});
    checkpoint::save(fitted.model(), &meta, a.out.join("model.ckpt"))?;
    epochs_csv(&a.out, "epochs.csv", &fitted)?;
    print_report("test", &report);
    write_run(
        &a.out,
        "train",
        serde_json::to_value(&cfg)?,
        Some(cfg.train.seed),
        json!({
            "test": report,
            "best_epoch": fitted.outcome.best_epoch,
            "best_valid_auc": fitted.outcome.best_valid_auc,
            "stopped_early": fitted.outcome.stopped_early,
            "epochs": fitted.outcome.epochs,
        }),
    )
}

fn split_from_meta(corpus: &Corpus, meta: &Value) -> Result<DatasetSplit> {
    let s = &meta["split"];
    let mode: SplitMode = serde_json::from_value(s["mode"].clone()).context("checkpoint has no split mode")?;
    let seed = s["seed"].as_u64().context("checkpoint has no split seed")?;
    let k = s["history_len"].as_u64().map(|k| k as usize);
    Ok(make_split(&corpus.log, mode, seed, k)?)
}

fn evaluate(model: &Model, corpus: &Corpus, split: &DatasetSplit) -> Result<EvalReport> {
    Ok(match split.mode {
        SplitMode::Standard => eval_standard(model, corpus, split)?,
        SplitMode::NewStudent => eval_new_students(model, corpus, split)?,
        SplitMode::NewExercise => eval_new_exercises(model, corpus, split)?,
    })
}

fn eval(a: EvalArgs) -> Result<()> {
    let corpus = a.data.load()?;
    let (model, meta) =
        checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let split = split_from_meta(&corpus, &meta)?;
    let report = evaluate(&model, &corpus, &split)?;
    print_report(&split.describe(), &report);
    write_csv(
        &a.out,
        "per_concept.csv",
        "concept,n,auc,acc,mean_prediction",
        report.per_concept.iter().map(|c| {
            format!(
                "{},{},{},{},{}",
                c.concept,
                c.n,
                c.auc.map_or(String::new(), |v| v.to_string()),
                c.acc,
                c.mean_prediction
            )
        }),
    )?;
    write_run(
        &a.out,
        "eval",
        serde_json::to_value(model.config())?,
        meta["train"]["seed"].as_u64(),
        serde_json::to_value(&report)?,
    )
}

fn coldstart(a: ColdArgs) -> Result<()> {
    let corpus = a.data.load()?;
    let mut cfg = a.cfg.load()?;
    let control = match a.mode {
        ColdMode::Students => new_student_control(&cfg),
        ColdMode::Exercises => {
            let c = new_exercise_control(&cfg);
            cfg = new_exercise_model(&cfg);
            c
        }
    };
    let runs: Vec<(SplitMode, Option<usize>)> = match a.mode {
        ColdMode::Students => a.k.iter().map(|&k| (SplitMode::NewStudent, Some(k))).collect(),
        ColdMode::Exercises => vec![(SplitMode::NewExercise, None)],
    };
    let mut results = Vec::new();
    let mut rows = Vec::new();
    for (mode, k) in runs {
        let split = make_split(&corpus.log, mode, a.cfg.split_seed, k)?;
        let fitted = fit(&corpus, &cfg, &split)?;
        let report = evaluate(fitted.model(), &corpus, &split)?;
        print_report(&split.describe(), &report);
        let control = if a.control {
            let c = fit(&corpus, &control, &split)?;
            let r = evaluate(c.model(), &corpus, &split)?;
            print_report(&format!("{} control", split.describe()), &r);
            Some(r)
        } else {
            None
        };
        rows.push(format!(
            "{},{},{}",
            k.map_or(String::new(), |k| k.to_string()),
            report.auc,
            control.as_ref().map_or(String::new(), |r| r.auc.to_string())
        ));
        let dir = a
            .out
            .join(k.map_or_else(|| "new_exercise".to_owned(), |k| format!("k{k}")));
        fs::create_dir_all(&dir)?;
        checkpoint::save(
            fitted.model(),
            &json!({"train": cfg.train, "split": split_meta(&split)}),
            dir.join("model.ckpt"),
        )?;
        results.push(json!({"split": split.describe(), "report": report, "control": control}));
    }
    write_csv(&a.out, "auc_by_k.csv", "k,auc,control_auc", rows)?;
    write_run(
        &a.out,
        "coldstart",
        serde_json::to_value(&cfg)?,
        Some(cfg.train.seed),
        Value::Array(results),
    )
}

fn diagnose_cmd(a: DiagnoseArgs) -> Result<()> {
    let corpus = a.data.load()?;
    let (model, _) = checkpoint::load(&a.checkpoint)?;
    let student = corpus
        .log
        .students
        .get(&a.student)
        .with_context(|| format!("unknown student `{}`", a.student))?;
    let concepts: Vec<usize> = if a.concepts.is_empty() {
        (0..corpus.log.n_concepts()).collect()
    } else {
        a.concepts
            .iter()
            .map(|c| {
                corpus
                    .log
                    .concepts
                    .get(c)
                    .with_context(|| format!("unknown concept `{c}`"))
            })
            .collect::<Result<_>>()?
    };
    // The student is described by their whole log.
    let all: Vec<usize> = (0..corpus.log.len()).collect();
    let inputs = corpus.inputs(&all)?;
    let report = diagnose(&model, &corpus, &inputs, student, &concepts)?;
    for d in &report {
        println!("{:<24} {:.3}  ({} probes)", d.concept, d.probability, d.probes);
    }
    write_csv(
        &a.out,
        "diagnosis.csv",
        "concept,probability,probes",
        report
            .iter()
            .map(|d| format!("{},{},{}", d.concept, d.probability, d.probes)),
    )?;
    write_run(
        &a.out,
        "diagnose",
        serde_json::to_value(model.config())?,
        None,
        json!({"student": a.student, "diagnosis": report}),
    )
}

fn ablate(a: AblateArgs) -> Result<()> {
    let corpus = a.data.load()?;
    let base = a.cfg.load()?;
    let split = make_split(&corpus.log, SplitMode::Standard, a.cfg.split_seed, None)?;
    let mut rows = Vec::new();
    let mut results = serde_json::Map::new();
    for (name, cfg) in ablation_variants(&base) {
        let fitted = fit(&corpus, &cfg, &split)?;
        let report = eval_standard(fitted.model(), &corpus, &split)?;
        print_report(name, &report);
        rows.push(format!("{name},{},{},{}", report.auc, report.acc, report.rmse));
        results.insert(name.to_owned(), serde_json::to_value(&report)?);
    }
    write_csv(&a.out, "ablation.csv", "variant,auc,acc,rmse", rows)?;
    write_run(
        &a.out,
        "ablate",
        serde_json::to_value(&base)?,
        Some(base.train.seed),
        Value::Object(results),
    )
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Cmd::Synth(a) => synth(a),
        Cmd::Train(a) => train(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Coldstart(a) => coldstart(a),
        Cmd::Diagnose(a) => diagnose_cmd(a),
        Cmd::Ablate(a) => ablate(a),
    }
}
