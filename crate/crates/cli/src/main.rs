//! Command-line front end: graph checks, embedding training and scoring,
//! single-question runs, and dataset evaluation.
//!
//! Exit codes: 0 ok, 2 usage/config, 3 data, 4 backend.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kgrag_core::config::{ConfigFile, Overrides};
use kgrag_core::error::Error;
use kgrag_core::eval::{evaluate, load_dataset};
use kgrag_core::kg::{load_kg, map_triple, KnowledgeGraph};
use kgrag_core::kge::{
    filtered_mrr, load_checkpoint, save_checkpoint, train_on_triples, triple_score_detail,
    TrainConfig,
};
use kgrag_core::sim::TrigramTfidf;

#[derive(Parser)]
#[command(name = "kgrag", version, about = "Knowledge-graph-guided retrieval-augmented QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge graph utilities.
    Kg {
        #[command(subcommand)]
        command: KgCommand,
    },
    /// Embedding training and scoring.
    Kge {
        #[command(subcommand)]
        command: KgeCommand,
    },
    /// Answer one question through the full loop.
    Ask(AskArgs),
    /// Run a QA dataset and report EM/F1, turn distribution, and usage.
    Eval(EvalArgs),
}

#[derive(Subcommand)]
enum KgCommand {
    /// Load a triples file, validate it, and print vocabulary counts.
    LoadCheck(KgLoadCheckArgs),
}

#[derive(Subcommand)]
enum KgeCommand {
    /// Train embeddings and write a checkpoint.
    Train(KgeTrainArgs),
    /// Score one (head, relation, tail) triple against a checkpoint.
    Score(KgeScoreArgs),
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Text,
    Records,
}

#[derive(Args)]
struct KgLoadCheckArgs {
    /// Tab-separated triples file (head<TAB>relation<TAB>tail).
    #[arg(long)]
    triples: Option<PathBuf>,
    /// Alias file (alias<TAB>canonical_label).
    #[arg(long)]
    aliases: Option<PathBuf>,
    /// Read [kg] paths from a run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write entities.tsv and relations.tsv into this directory.
    #[arg(long)]
    dump_vocab: Option<PathBuf>,
}

#[derive(Args)]
struct KgeTrainArgs {
    #[arg(long)]
    triples: Option<PathBuf>,
    #[arg(long)]
    aliases: Option<PathBuf>,
    /// Read [kg]/[kge] defaults from a run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint output path; the vocabulary TSVs land next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    l2_weight: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of triples held out for the reported filtered MRR (0 trains
    /// on everything).
    #[arg(long, default_value_t = 0.1)]
    holdout: f64,
}

#[derive(Args)]
struct KgeScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    triples: Option<PathBuf>,
    #[arg(long)]
    aliases: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    head: String,
    #[arg(long)]
    relation: String,
    #[arg(long)]
    tail: String,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct AskArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    question: String,
    /// Base threshold override.
    #[arg(long)]
    theta0: Option<f64>,
    #[arg(long)]
    max_turns: Option<usize>,
    /// Training seed override for in-process embedding training.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the full run record (JSON) here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Suppress wall-clock output so identical runs print identical bytes.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    /// JSON-lines dataset of {id, question, answers}.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    limit: Option<usize>,
    /// Write the per-item record stream here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    theta0: Option<f64>,
    #[arg(long)]
    max_turns: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Kg {
            command: KgCommand::LoadCheck(args),
        } => cmd_kg_load_check(args),
        Command::Kge {
            command: KgeCommand::Train(args),
        } => cmd_kge_train(args),
        Command::Kge {
            command: KgeCommand::Score(args),
        } => cmd_kge_score(args),
        Command::Ask(args) => cmd_ask(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidInput(_) | Error::Template(_) | Error::Io { .. } => 2,
        Error::Parse { .. } | Error::Data(_) => 3,
        Error::Backend { .. } => 4,
    }
}

/// Resolve graph paths from flags, falling back to an optional config file.
fn kg_paths(
    triples: Option<PathBuf>,
    aliases: Option<PathBuf>,
    config: Option<&Path>,
) -> Result<(PathBuf, Option<PathBuf>), Error> {
    let cfg = config.map(ConfigFile::load).transpose()?;
    let triples = triples
        .or_else(|| cfg.as_ref().map(|c| c.kg.triples.clone()))
        .ok_or_else(|| Error::Config("no triples file: pass --triples or --config".into()))?;
    let aliases = aliases.or_else(|| cfg.as_ref().and_then(|c| c.kg.aliases.clone()));
    Ok((triples, aliases))
}

fn load_graph(triples: &Path, aliases: Option<&Path>) -> Result<KnowledgeGraph, Error> {
    load_kg(triples, aliases)
}

fn cmd_kg_load_check(args: KgLoadCheckArgs) -> Result<(), Error> {
    let (triples, aliases) = kg_paths(args.triples, args.aliases, args.config.as_deref())?;
    let kg = load_graph(&triples, aliases.as_deref())?;
    println!("entities: {}", kg.entity_count());
    println!("relations: {}", kg.relation_count());
    println!("triples: {}", kg.triple_count());
    if let Some(dir) = args.dump_vocab {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        kg.dump_vocab(&dir)?;
        println!("vocabulary written to {}", dir.display());
    }
    Ok(())
}

fn cmd_kge_train(args: KgeTrainArgs) -> Result<(), Error> {
    let cfg = args.config.as_deref().map(ConfigFile::load).transpose()?;
    let kge = cfg.as_ref().map(|c| c.kge.clone()).unwrap_or_default();
    let (triples_path, aliases) = kg_paths(args.triples, args.aliases, args.config.as_deref())?;
    let kg = load_graph(&triples_path, aliases.as_deref())?;

    let train_cfg = TrainConfig {
        dim: args.dim.unwrap_or(kge.dim),
        learning_rate: args.learning_rate.unwrap_or(kge.learning_rate),
        epochs: args.epochs.unwrap_or(kge.epochs),
        negatives_per_positive: args.negatives.unwrap_or(kge.negatives_per_positive),
        l2_weight: args.l2_weight.unwrap_or(kge.l2_weight),
        batch_size: args.batch_size.unwrap_or(kge.batch_size),
        seed: args.seed.unwrap_or(kge.seed),
    };
    if !(0.0..1.0).contains(&args.holdout) {
        return Err(Error::Config("--holdout must be in [0, 1)".into()));
    }

    // Deterministic held-out split keyed off the training seed.
    let all = kg.triples().to_vec();
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0x9e37_79b9));
    let n_hold = ((all.len() as f64) * args.holdout).floor() as usize;
    let n_hold = n_hold.min(all.len().saturating_sub(1));
    let hold_idx: HashSet<usize> = order[..n_hold].iter().copied().collect();
    let train_set: Vec<_> = (0..all.len())
        .filter(|i| !hold_idx.contains(i))
        .map(|i| all[i])
        .collect();
    let held: Vec<_> = (0..all.len())
        .filter(|i| hold_idx.contains(i))
        .map(|i| all[i])
        .collect();

    let outcome = train_on_triples(&train_set, kg.entity_count(), kg.relation_count(), &train_cfg)?;
    println!(
        "triples: {} (train {}, holdout {})",
        all.len(),
        train_set.len(),
        held.len()
    );
    println!("final loss: {:.6}", outcome.epoch_losses.last().unwrap());
    if held.is_empty() {
        println!("filtered MRR (holdout): n/a");
    } else {
        let known: HashSet<_> = all.iter().copied().collect();
        let mrr = filtered_mrr(&outcome.model, &known, &held)?;
        println!("filtered MRR (holdout): {mrr:.4}");
    }
    save_checkpoint(&args.out, &outcome.model, kg.entity_labels(), kg.relation_labels())?;
    println!("checkpoint: {}", args.out.display());
    Ok(())
}

fn cmd_kge_score(args: KgeScoreArgs) -> Result<(), Error> {
    let (triples, aliases) = kg_paths(args.triples, args.aliases, args.config.as_deref())?;
    let kg = load_graph(&triples, aliases.as_deref())?;
    let (model, entities, relations) = load_checkpoint(&args.checkpoint)?;
    if entities != kg.entity_labels() || relations != kg.relation_labels() {
        return Err(Error::Data(
            "checkpoint vocabulary does not match the graph".into(),
        ));
    }
    let sim = TrigramTfidf::from_kg(&kg);
    let mapped = map_triple(&args.head, &args.relation, &args.tail, &kg, &sim);
    match mapped {
        None => match args.format {
            Format::Text => println!("unverifiable"),
            Format::Records => println!("{}", serde_json::json!({"verdict": "unverifiable"})),
        },
        Some(tri) => {
            let detail = triple_score_detail(&model, &kg, &tri)?;
            match args.format {
                Format::Text => {
                    println!("kge_score: {:.6}", detail.kge_score);
                    match detail.reference_mean {
                        Some(m) => println!("reference_mean: {m:.6}"),
                        None => println!("reference_mean: n/a"),
                    }
                    match detail.relative_score {
                        Some(s) => println!("relative_score: {s:.6}"),
                        None => println!("relative_score: unverifiable"),
                    }
                }
                Format::Records => {
                    println!("{}", serde_json::to_string(&detail).expect("detail serializes"))
                }
            }
        }
    }
    Ok(())
}

fn cmd_ask(args: AskArgs) -> Result<(), Error> {
    let cfg = ConfigFile::load(&args.config)?;
    let overrides = Overrides {
        theta0: args.theta0,
        max_turns: args.max_turns,
        seed: args.seed,
        trace: None,
    };
    let started = std::time::Instant::now();
    let pipeline = cfg.build_pipeline(&overrides)?;
    let record = pipeline.run(&args.question)?;

    if let Some(path) = &args.trace {
        let line = serde_json::to_string(&record).expect("record serializes");
        std::fs::write(path, format!("{line}\n"))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    match args.format {
        Format::Records => {
            println!("{}", serde_json::to_string(&record).expect("record serializes"));
        }
        Format::Text => {
            println!("answer: {}", record.final_answer);
            println!(
                "stop reason: {} (t = {})",
                record.stop_reason.as_str(),
                record.turns.len().saturating_sub(1)
            );
            let last = record.turns.last().expect("at least one turn");
            println!(
                "reliability: s = {:.6}, theta = {:.6}, verified = {}, unverifiable = {}",
                last.reliability.score,
                last.decision.theta_t,
                last.reliability.verified,
                last.reliability.unverifiable
            );
            println!("references used: {}", last.accepted_refs.len());
            if !args.deterministic {
                println!("elapsed: {:?}", started.elapsed());
            }
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let cfg = ConfigFile::load(&args.config)?;
    let overrides = Overrides {
        theta0: args.theta0,
        max_turns: args.max_turns,
        seed: args.seed,
        trace: None,
    };
    let pipeline = cfg.build_pipeline(&overrides)?;
    let items = load_dataset(&args.dataset)?;
    let workers = args.workers.unwrap_or(cfg.eval.workers);
    let report = evaluate(&pipeline, &items, args.limit, workers)?;
    if let Some(path) = &args.report {
        report.write_records(path)?;
    }
    match args.format {
        Format::Records => {
            let summary = serde_json::json!({
                "items": report.items.len(),
                "mean_em": report.mean_em,
                "mean_f1": report.mean_f1,
                "turn_histogram": report.turn_histogram,
                "turn_fractions": report.turn_fractions,
                "model_usage": report.model_usage,
            });
            println!("{summary}");
        }
        Format::Text => print!("{}", report.render_table()),
    }
    Ok(())
}
