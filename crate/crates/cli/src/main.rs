use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use rxfew_core::config::SNAPSHOT_FILE;
use rxfew_core::evaluation::{compare, EvaluationReport};
use rxfew_core::knowledge::BaseEmbeddingTable;
use rxfew_core::model::drug_view;
use rxfew_core::pipeline::{comparison_table, evaluate_model, test_episodes, train_model};
use rxfew_core::synthgen::{generate_assets, generate_cohort, write_corpus};
use rxfew_core::{Ablation, Checkpoint, Corpus, Error, RunConfig, ABLATION_VARIANTS};

#[derive(Parser, Debug)]
#[command(name = "rxfew", version, about = "Few-shot recommendation for newly introduced drugs")]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for generation, training and evaluation episodes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory with the asset files and records (overrides RXFEW_ASSETS).
    #[arg(long, global = true)]
    assets: Option<PathBuf>,
    /// Extra `section.key=value` override; repeatable.
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic assets, records and ground truth.
    Generate,
    /// Train a model and write checkpoints plus a training log.
    Train(TrainArgs),
    /// Score test episodes with a checkpoint.
    Evaluate(EvaluateArgs),
    /// Train and evaluate the full model and its ablation variants.
    Ablate(AblateArgs),
    /// Write learned code embeddings and drug representations.
    ExportEmbeddings(ExportArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    episodes: Option<u64>,
    /// Named variant: full, protonet, no-ontology, no-multi-phenotype,
    /// no-drug-importance or no-kb-sampling.
    #[arg(long)]
    ablation: Option<String>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Defaults to `<out>/ckpt/best`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Second checkpoint scored on the same episodes; adds Welch t-tests.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Comma-separated variants to run besides `full`; default the four
    /// single-component removals. `protonet` adds the plain baseline.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Defaults to `<out>/ckpt/best`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_validation() { 1 } else { 2 },
            msg: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 2,
        msg: format!("{}: {e}", path.display()),
    }
}

fn named_ablation(name: &str) -> Result<Ablation, Failure> {
    if name == "protonet" {
        return Ok(Ablation::PROTONET);
    }
    ABLATION_VARIANTS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, a)| *a)
        .ok_or_else(|| {
            let names: Vec<&str> = ABLATION_VARIANTS.iter().map(|(n, _)| *n).collect();
            usage(format!("unknown ablation `{name}`; expected protonet or one of {names:?}"))
        })
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(dir) = &cli.assets {
        overrides.push(("assets.dir".into(), dir.display().to_string()));
    }
    if let Some(seed) = cli.seed {
        for k in ["gen.seed", "train.seed", "eval.seed"] {
            overrides.push((k.into(), seed.to_string()));
        }
    }
    if let Some(out) = &cli.out {
        overrides.push(("run.out".into(), out.display().to_string()));
    }
    if let Some(w) = cli.workers {
        overrides.push(("run.workers".into(), w.to_string()));
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        overrides.push((k.trim().into(), v.trim().into()));
    }
    match &cli.command {
        Command::Train(a) => {
            if let Some(n) = a.episodes {
                overrides.push(("train.episodes".into(), n.to_string()));
            }
        }
        Command::Evaluate(a) => {
            if let Some(n) = a.episodes {
                overrides.push(("eval.episodes".into(), n.to_string()));
            }
        }
        _ => {}
    }
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), |k| std::env::var(k).ok(), &overrides)?;
    if let Command::Train(TrainArgs { ablation: Some(name), .. }) = &cli.command {
        cfg.ablation = named_ablation(name)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_failure(path, e))
}

fn write_report(dir: &Path, report: &EvaluationReport, extra: &str) -> Result<(), Failure> {
    let mut jsonl = Vec::new();
    report.write_jsonl(&mut jsonl).map_err(|e| io_failure(dir, e))?;
    write_file(&dir.join("report.jsonl"), &jsonl)?;
    let text = format!("{}{extra}", report.table());
    write_file(&dir.join("report.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn cmd_generate(cfg: &RunConfig) -> Result<(), Failure> {
    let world = generate_assets(&cfg.gen)?;
    let cohort = generate_cohort(&cfg.gen, &world)?;
    write_corpus(&cfg.run.out, &world, &cohort)?;
    println!(
        "wrote {} records, {} drugs, {} phenotypes to {}",
        cohort.records.len(),
        cfg.gen.n_drugs,
        cfg.gen.n_phenotypes,
        cfg.run.out.display()
    );
    Ok(())
}

fn describe(corpus: &Corpus) {
    let s = &corpus.split;
    info!(
        "drugs {}/{}/{} and records {}/{}/{} (train/valid/test)",
        s.train_drugs.len(),
        s.valid_drugs.len(),
        s.test_drugs.len(),
        s.train.len(),
        s.valid.len(),
        s.test.len()
    );
}

fn cmd_train(cfg: &RunConfig) -> Result<(), Failure> {
    let corpus = Corpus::load(cfg)?;
    describe(&corpus);
    println!("ablation: {}", serde_json::to_string(&cfg.ablation).expect("ablation serializes"));
    let out = train_model(cfg, cfg.ablation, &corpus, Some(&cfg.run.out))?;
    let last = out.losses.iter().rev().find(|x| x.is_finite());
    println!(
        "trained {} episodes; last loss {}; best step {}; skipped {}",
        out.state.step,
        last.map_or("-".into(), |l| format!("{l:.4}")),
        out.state.best_step.map_or("-".into(), |s| s.to_string()),
        out.skipped.len()
    );
    Ok(())
}

fn default_checkpoint(cfg: &RunConfig, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| cfg.run.out.join("ckpt").join("best"))
}

fn load_checkpoint(path: &Path, corpus: &Corpus) -> Result<Checkpoint, Failure> {
    let ck = Checkpoint::load(path)?;
    ck.check_vocabulary(&corpus.assets.vocab)?;
    if ck.params.hyper.n_phenotypes != corpus.assets.n_phenotypes() {
        return Err(usage(format!(
            "checkpoint expects {} phenotypes but the phenotype map declares {}",
            ck.params.hyper.n_phenotypes,
            corpus.assets.n_phenotypes()
        )));
    }
    Ok(ck)
}

fn cmd_evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> Result<(), Failure> {
    let corpus = Corpus::load(cfg)?;
    describe(&corpus);
    let ours = load_checkpoint(&default_checkpoint(cfg, &args.checkpoint), &corpus)?;
    let episodes = test_episodes(cfg, &corpus)?;
    let mut report = evaluate_model(cfg, &ours.params, ours.meta.ablation, &corpus, &episodes)?;
    let mut extra = String::new();
    if let Some(path) = &args.compare {
        let theirs = load_checkpoint(path, &corpus)?;
        let other = evaluate_model(cfg, &theirs.params, theirs.meta.ablation, &corpus, &episodes)?;
        let label = path.display().to_string();
        report.comparisons = compare(&report.per_episode, &other.per_episode, &label)?;
        let metrics: Vec<String> = report.aggregates.keys().cloned().collect();
        let metrics: Vec<&str> = metrics.iter().map(String::as_str).collect();
        extra = format!("\n{}", comparison_table(&[("model", &report), ("compared", &other)], &metrics));
    }
    write_report(&cfg.run.out.join("eval"), &report, &extra)
}

fn cmd_ablate(cfg: &RunConfig, args: &AblateArgs) -> Result<(), Failure> {
    for v in args.variants.iter().filter(|v| *v != "protonet") {
        named_ablation(v)?;
    }
    let mut chosen: Vec<(&str, Ablation)> = ABLATION_VARIANTS
        .iter()
        .copied()
        .filter(|(n, _)| *n == "full" || args.variants.is_empty() || args.variants.iter().any(|v| v == n))
        .collect();
    if args.variants.iter().any(|v| v == "protonet") {
        chosen.push(("protonet", Ablation::PROTONET));
    }
    let corpus = Corpus::load(cfg)?;
    describe(&corpus);
    let episodes = test_episodes(cfg, &corpus)?;
    let mut reports = Vec::new();
    for (name, ablation) in &chosen {
        info!("variant {name}");
        let dir = cfg.run.out.join(name);
        let out = train_model(cfg, *ablation, &corpus, Some(&dir))?;
        let report = evaluate_model(cfg, &out.best, *ablation, &corpus, &episodes)?;
        let mut jsonl = Vec::new();
        report.write_jsonl(&mut jsonl).map_err(|e| io_failure(&dir, e))?;
        write_file(&dir.join("report.jsonl"), &jsonl)?;
        reports.push((*name, report));
    }
    let k = cfg.eval.ks.first().copied();
    let pk = k.map(|k| format!("p@{k}"));
    let mut metrics = vec!["roc_auc", "pr_auc"];
    metrics.extend(pk.as_deref());
    let rows: Vec<(&str, &EvaluationReport)> = reports.iter().map(|(n, r)| (*n, r)).collect();
    let table = comparison_table(&rows, &metrics);
    write_file(&cfg.run.out.join("ablation.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn cmd_export(cfg: &RunConfig, args: &ExportArgs) -> Result<(), Failure> {
    let corpus = Corpus::load(cfg)?;
    let ck = load_checkpoint(&default_checkpoint(cfg, &args.checkpoint), &corpus)?;
    let p = &ck.params;
    let dim = p.hyper.embedding_dim;
    let mut codes = BaseEmbeddingTable::new(dim, cfg.assets.fallback_seed);
    for (i, code) in corpus.assets.vocab.codes().iter().enumerate() {
        codes.insert(code.id.clone(), p.embeddings.row(i).to_vec())?;
    }
    let mut drugs = BaseEmbeddingTable::new(dim, cfg.assets.fallback_seed);
    for d in corpus.assets.drug_ids() {
        let view = drug_view(p, &corpus.assets, d, ck.meta.ablation)?;
        drugs.insert(corpus.assets.vocab.code(d).id.clone(), view.h)?;
    }
    for (name, table) in [("embeddings.tsv", &codes), ("drug_representations.tsv", &drugs)] {
        let path = cfg.run.out.join(name);
        let mut buf = Vec::new();
        table.write_to(&mut buf).map_err(|e| io_failure(&path, e))?;
        write_file(&path, &buf)?;
    }
    println!(
        "wrote {} code embeddings and {} drug representations to {}",
        codes.len(),
        drugs.len(),
        cfg.run.out.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = resolve(cli)?;
    if cfg.run.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.workers)
            .build_global()
            .map_err(|e| usage(format!("cannot start {} workers: {e}", cfg.run.workers)))?;
    }
    cfg.write_snapshot(&cfg.run.out)?;
    info!("config snapshot at {}", cfg.run.out.join(SNAPSHOT_FILE).display());
    match &cli.command {
        Command::Generate => cmd_generate(&cfg),
        Command::Train(_) => cmd_train(&cfg),
        Command::Evaluate(a) => cmd_evaluate(&cfg, a),
        Command::Ablate(a) => cmd_ablate(&cfg, a),
        Command::ExportEmbeddings(a) => cmd_export(&cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
