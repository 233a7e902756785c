use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use ptransr::evaluator::{self, EvalConfig, Split, TiePolicy};
use ptransr::kgdata::{augment_inverse, load_dataset, write_split, ColumnOrder, KnowledgeGraph};
use ptransr::models::{path_vector, ModelParams};
use ptransr::paths::{PathConfig, PathTable, DEFAULT_PATH_CAP, DEFAULT_RELIABILITY_FLOOR};
use ptransr::synth::{self, CompositionRule, SyntheticKgSpec};
use ptransr::trainer::{self, Stage, TrainConfig, TrainOptions};

const DATA_ENV: &str = "PTRANSR_DATA_DIR";
const PATHS_FILE: &str = "paths.ptbl";

#[derive(Parser)]
#[command(name = "ptransr", version, about = "Path-augmented translation embeddings for knowledge graphs")]
struct Cli {
    /// Worker threads for path extraction, training and evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalise raw triple files into a dataset directory.
    Prepare(PrepareArgs),
    /// Mine reliable relation paths into a PTBL file.
    ExtractPaths(ExtractArgs),
    /// Train a TransE, TransR or PTransR model.
    Train(TrainArgs),
    /// Rank the entities of a split and write the report.
    Evaluate(EvaluateArgs),
    /// Generate a composition-rule synthetic dataset.
    SynthKg(SynthArgs),
    /// Print nearest entities and path-to-relation distances.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct DataArg {
    /// Prepared dataset directory.
    #[arg(long, env = DATA_ENV)]
    data: PathBuf,
}

#[derive(Args)]
struct RunDirArgs {
    /// Output directory; defaults to a fresh run directory under --runs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parent of timestamped run directories.
    #[arg(long, default_value = "runs")]
    runs: PathBuf,
}

impl RunDirArgs {
    fn resolve(&self, seed: u64) -> Result<PathBuf> {
        let dir = match &self.out {
            Some(dir) => dir.clone(),
            None => {
                let secs = SystemTime::now().duration_since(UNIX_EPOCH)?.as_secs();
                self.runs.join(format!("run-{secs}-seed{seed}"))
            }
        };
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Column order of the raw files.
    #[arg(long, default_value = "hrt")]
    order: ColumnOrder,
    /// Dataset directory to create.
    #[arg(long, env = DATA_ENV)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    data: DataArg,
    /// Paths with reliability at or below this value are dropped.
    #[arg(long, default_value_t = DEFAULT_RELIABILITY_FLOOR)]
    floor: f64,
    /// Maximum paths kept per entity pair.
    #[arg(long, default_value_t = DEFAULT_PATH_CAP)]
    cap: usize,
    /// Output file; defaults to paths.ptbl in the dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a sorted TSV dump next to the table.
    #[arg(long)]
    tsv: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArg,
    /// Config file of key=value lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    stage: Option<Stage>,
    /// Starting model for TransR/PTransR.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Path table for PTransR; defaults to paths.ptbl in the dataset directory.
    #[arg(long)]
    paths: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    entity_dim: Option<usize>,
    #[arg(long)]
    relation_dim: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Any other config key as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(flatten)]
    run: RunDirArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    Raw,
    Filter,
    Both,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    model: PathBuf,
    /// Path table for the reranking stage; without it the path term is zero.
    #[arg(long)]
    paths: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = evaluator::DEFAULT_RERANK_K)]
    rerank_k: usize,
    #[arg(long, default_value = "pessimistic")]
    ties: TiePolicy,
    /// Which headline metrics to print; the report files hold both.
    #[arg(long, value_enum, default_value = "both")]
    protocol: Protocol,
    #[command(flatten)]
    run: RunDirArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    entities: usize,
    #[arg(long, default_value_t = 3)]
    relations: usize,
    /// Composition rule `a,b->c` over relation ids; repeatable.
    #[arg(long = "rule", value_parser = parse_rule, default_value = "0,1->2")]
    rules: Vec<CompositionRule>,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
    #[arg(long, default_value_t = 0.2)]
    valid_share: f64,
    /// Latent geometry dimension; 0 draws unstructured random relations.
    #[arg(long, default_value_t = 0)]
    latent_dim: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    model: PathBuf,
    /// Entity whose nearest neighbours are listed.
    #[arg(long)]
    entity: Option<String>,
    /// Relation whose most related paths are listed with their distances.
    #[arg(long)]
    relation: Option<String>,
    #[arg(long)]
    paths: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

fn parse_rule(s: &str) -> std::result::Result<CompositionRule, String> {
    let err = || format!("expected `a,b->c`, got `{s}`");
    let (body, head) = s.split_once("->").ok_or_else(err)?;
    let (a, b) = body.split_once(',').ok_or_else(err)?;
    let id = |x: &str| x.trim().parse::<u32>().map_err(|_| err());
    Ok(CompositionRule {
        first: id(a)?,
        second: id(b)?,
        composed: id(head)?,
    })
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} not found: {}", path.display());
    }
    Ok(())
}

fn load_graph(dir: &Path) -> Result<KnowledgeGraph> {
    let split = |name: &str| dir.join(format!("{name}.tsv"));
    for name in ["train", "valid", "test"] {
        require_file(&split(name), "dataset split")?;
    }
    let g = load_dataset(&split("train"), &split("valid"), &split("test"), ColumnOrder::Hrt)?;
    Ok(augment_inverse(g)?)
}

fn load_model(path: &Path, g: &KnowledgeGraph) -> Result<ModelParams> {
    require_file(path, "model")?;
    let params = ModelParams::load(path)?;
    if params.n_entities() != g.n_entities() || params.n_relations() != g.n_relations() {
        bail!(
            "model {} has {} entities and {} relations; dataset has {} and {}",
            path.display(),
            params.n_entities(),
            params.n_relations(),
            g.n_entities(),
            g.n_relations()
        );
    }
    Ok(params)
}

fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    for p in [&args.train, &args.valid, &args.test] {
        require_file(p, "input file")?;
    }
    let g = load_dataset(&args.train, &args.valid, &args.test, args.order)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_split(&args.out.join("train.tsv"), g.vocab(), g.train())?;
    write_split(&args.out.join("valid.tsv"), g.vocab(), g.valid())?;
    write_split(&args.out.join("test.tsv"), g.vocab(), g.test())?;
    g.vocab().write_tsv(&args.out)?;
    let stats = json!({
        "entities": g.n_entities(),
        "relations": g.n_relations(),
        "train": g.train().len(),
        "valid": g.valid().len(),
        "test": g.test().len(),
        "sources": {
            "train": args.train.display().to_string(),
            "valid": args.valid.display().to_string(),
            "test": args.test.display().to_string(),
            "order": format!("{:?}", args.order).to_lowercase(),
        },
    });
    write_json(&args.out.join("stats.json"), &stats)?;
    println!("{:<12}{:>10}", "entities", g.n_entities());
    println!("{:<12}{:>10}", "relations", g.n_relations());
    println!("{:<12}{:>10}", "train", g.train().len());
    println!("{:<12}{:>10}", "valid", g.valid().len());
    println!("{:<12}{:>10}", "test", g.test().len());
    Ok(())
}

fn cmd_extract_paths(args: &ExtractArgs, workers: Option<usize>) -> Result<()> {
    let cfg = PathConfig {
        reliability_floor: args.floor,
        cap: args.cap,
        workers: workers.unwrap_or(0),
    };
    cfg.validate()?;
    let g = load_graph(&args.data.data)?;
    let out = args.out.clone().unwrap_or_else(|| args.data.data.join(PATHS_FILE));
    let (table, summary) = PathTable::build(&g, &cfg)?;
    table.save(&out)?;
    if args.tsv {
        let tsv = out.with_extension("tsv");
        fs::write(&tsv, table.to_tsv()).with_context(|| format!("writing {}", tsv.display()))?;
    }
    let meta = json!({
        "data": args.data.data.display().to_string(),
        "floor": args.floor,
        "cap": args.cap,
        "linked_pairs": summary.linked_pairs,
        "pairs": table.n_pairs(),
        "entries": table.n_entries(),
        "candidate_entries": summary.candidate_entries,
        "filtered_entries": summary.filtered_entries,
        "capped_entries": summary.capped_entries,
        "drop_rate": summary.drop_rate(),
    });
    write_json(&out.with_extension("json"), &meta)?;
    println!(
        "{}: {} pairs, {} paths, drop rate {:.4}",
        out.display(),
        table.n_pairs(),
        table.n_entries(),
        summary.drop_rate()
    );
    Ok(())
}

fn train_config(args: &TrainArgs, workers: Option<usize>) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            require_file(path, "config file")?;
            TrainConfig::load(path)?
        }
        None => TrainConfig::default(),
    };
    if let Some(stage) = args.stage {
        cfg.stage = stage;
    }
    let flags = [
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("lr", args.lr.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("entity_dim", args.entity_dim.map(|v| v.to_string())),
        ("relation_dim", args.relation_dim.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("workers", workers.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(value) = value {
            cfg.set(key, &value)?;
        }
    }
    for kv in &args.overrides {
        let (key, value) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(key.trim(), value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: &TrainArgs, workers: Option<usize>) -> Result<()> {
    let cfg = train_config(args, workers)?;
    let paths_file = args.paths.clone().unwrap_or_else(|| args.data.data.join(PATHS_FILE));
    if cfg.stage == Stage::PTransR && !paths_file.is_file() {
        bail!(
            "stage ptransr needs a path table, but {} does not exist (run `ptransr extract-paths` or pass --paths)",
            paths_file.display()
        );
    }
    if let Some(init) = &args.init {
        require_file(init, "initial model")?;
    }
    let g = load_graph(&args.data.data)?;
    let table = if cfg.stage == Stage::PTransR {
        Some(PathTable::load(&paths_file)?)
    } else {
        None
    };
    let init = args.init.as_deref().map(|p| load_model(p, &g)).transpose()?;

    let dir = args.run.resolve(cfg.seed)?;
    fs::write(dir.join("config.txt"), cfg.render())?;
    let opts = TrainOptions {
        init,
        checkpoint_dir: (cfg.checkpoint_every > 0).then(|| dir.join("checkpoints")),
        log_path: Some(dir.join("train.log.jsonl")),
    };
    let outcome = trainer::train(&g, table.as_ref(), &cfg, &opts)?;
    outcome.params.save(&dir.join("model.ptrm"))?;
    let meta = json!({
        "data": args.data.data.display().to_string(),
        "init": args.init.as_ref().map(|p| p.display().to_string()),
        "paths": table.as_ref().map(|_| paths_file.display().to_string()),
        "config": cfg,
        "epochs_run": outcome.log.len(),
        "stopped_early": outcome.stopped_early,
        "final_loss": outcome.log.last().map(|s| s.loss),
    });
    write_json(&dir.join("run.json"), &meta)?;
    eprint!("{}", cfg.render());
    if let Some(last) = outcome.log.last() {
        println!("epoch {} loss {:.6}", last.epoch, last.loss);
    }
    println!("model written to {}", dir.join("model.ptrm").display());
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs, workers: Option<usize>) -> Result<()> {
    if args.rerank_k < 1 {
        bail!("--rerank-k must be at least 1");
    }
    if let Some(p) = &args.paths {
        require_file(p, "path table")?;
    }
    let g = load_graph(&args.data.data)?;
    let params = load_model(&args.model, &g)?;
    let table = match &args.paths {
        Some(p) => PathTable::load(p)?,
        None => PathTable::empty(),
    };
    let cfg = EvalConfig {
        rerank_k: args.rerank_k,
        tie_policy: args.ties,
        workers: workers.unwrap_or(0),
        ..EvalConfig::default()
    };
    let ev = evaluator::evaluate(&params, &table, &g, args.split, &cfg)?;
    let dir = args.run.resolve(0)?;
    ev.write_all(&dir)?;
    let meta = json!({
        "data": args.data.data.display().to_string(),
        "model": args.model.display().to_string(),
        "paths": args.paths.as_ref().map(|p| p.display().to_string()),
        "split": args.split,
        "rerank_k": args.rerank_k,
        "ties": args.ties,
        "category_cutoff": cfg.category_cutoff,
    });
    write_json(&dir.join("config.json"), &meta)?;
    let r = &ev.report;
    match args.protocol {
        Protocol::Raw => println!("raw     MeanRank {:.1}  Hits@10 {:.1}", r.mean_rank_raw, r.hits10_raw),
        Protocol::Filter => println!("filter  MeanRank {:.1}  Hits@10 {:.1}", r.mean_rank_filter, r.hits10_filter),
        Protocol::Both => print!("{}", r.to_table()),
    }
    println!("report written to {}", dir.display());
    Ok(())
}

fn cmd_synth_kg(args: &SynthArgs) -> Result<()> {
    let spec = SyntheticKgSpec {
        n_entities: args.entities,
        n_relations: args.relations,
        rules: args.rules.clone(),
        noise: args.noise,
        holdout: args.holdout,
        valid_share: args.valid_share,
        latent_dim: args.latent_dim,
        seed: args.seed,
    };
    let kg = synth::generate(&spec)?;
    kg.write(&args.out)?;
    write_json(&args.out.join("synth.json"), &serde_json::to_value(&spec)?)?;
    let g = &kg.graph;
    println!(
        "{}: {} train ({} noise), {} valid, {} test",
        args.out.display(),
        g.train().len(),
        kg.noise_facts,
        g.valid().len(),
        g.test().len()
    );
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    if args.entity.is_none() && args.relation.is_none() {
        bail!("inspect needs --entity or --relation");
    }
    if args.relation.is_some() && args.paths.is_none() {
        bail!("--relation needs --paths");
    }
    let g = load_graph(&args.data.data)?;
    let params = load_model(&args.model, &g)?;
    let vocab = g.vocab();

    if let Some(name) = &args.entity {
        let e = vocab.entity_id(name).with_context(|| format!("unknown entity `{name}`"))?;
        let x = params.entity(e);
        let mut dists: Vec<(f64, u32)> = (0..g.n_entities() as u32)
            .filter(|&o| o != e)
            .map(|o| {
                let d: f64 = x
                    .iter()
                    .zip(params.entity(o))
                    .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                    .sum();
                (d.sqrt(), o)
            })
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        println!("nearest entities to {name}");
        for (d, o) in dists.iter().take(args.top) {
            println!("{:>10.4}  {}", d, vocab.entity_name(*o));
        }
    }

    if let (Some(name), Some(paths)) = (&args.relation, &args.paths) {
        require_file(paths, "path table")?;
        let table = PathTable::load(paths)?;
        let r = vocab.relation_id(name).with_context(|| format!("unknown relation `{name}`"))?;
        let rv = params.relation(r);
        println!("paths related to {name}: P(r|p), |p - r|");
        for (p, rel) in table.related_paths(r).into_iter().filter(|(p, _)| !p.is_direct(r)).take(args.top) {
            let dist: f64 = path_vector(&params, p)
                .iter()
                .zip(rv)
                .map(|(&a, &b)| (a - b as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            let label: Vec<&str> = p.relations().map(|x| vocab.relation_name(x)).collect();
            println!("{:>8.4}  {:>10.4}  {}", rel, dist, label.join(" -> "));
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if cli.workers == Some(0) {
        bail!("--workers must be at least 1");
    }
    match &cli.command {
        Command::Prepare(a) => cmd_prepare(a),
        Command::ExtractPaths(a) => cmd_extract_paths(a, cli.workers),
        Command::Train(a) => cmd_train(a, cli.workers),
        Command::Evaluate(a) => cmd_evaluate(a, cli.workers),
        Command::SynthKg(a) => cmd_synth_kg(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}
