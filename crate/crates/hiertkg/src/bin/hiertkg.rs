//! Command-line entry point: dataset ingestion, training, evaluation,
//! and the pooling/fusion ablation grid.

use clap::{Parser, Subcommand, ValueEnum};
use hiertkg::data::EventDataset;
use hiertkg::ingest;
use hiertkg::model::{
    self, AblationScenario, Checkpoint, EvalProtocol, TrainConfig,
};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "hiertkg", about = "Temporal knowledge graph link prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetKind {
    /// Tab-separated quadruples with YYYY-MM-DD or numeric timestamps.
    Icews,
    /// Interaction CSV with user_id/item_id/timestamp columns.
    Wikidata,
    /// Thread directory tree of tweet JSON files.
    Pheme,
    /// Canonical events.tsv + vocab JSON directory written by `ingest`.
    Canonical,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Sampled,
    AllEntities,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw dataset and write the canonical TSV + vocabularies.
    Ingest {
        /// Raw input: a file for icews/wikidata, a directory for pheme.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: DatasetKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset and write checkpoint + reports.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip the loss/AUC chart.
        #[arg(long)]
        no_plot: bool,
    },
    /// Evaluate a checkpoint on the validation or test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "sampled")]
        protocol: ProtocolArg,
    },
    /// Train and evaluate one pooling/fusion scenario.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_dataset(path: &Path, kind: DatasetKind) -> hiertkg::Result<EventDataset> {
    match kind {
        DatasetKind::Icews => ingest::load_icews(path),
        DatasetKind::Wikidata => ingest::load_wikidata(path),
        DatasetKind::Pheme => {
            let (ds, warnings) = ingest::build_pheme_kg(path)?;
            if warnings.dropped_reply_edges > 0 {
                eprintln!(
                    "warning: dropped {} reply edges with missing parents",
                    warnings.dropped_reply_edges
                );
            }
            Ok(ds)
        }
        DatasetKind::Canonical => EventDataset::load(path),
    }
}

fn kind_from_str(s: &str) -> hiertkg::Result<DatasetKind> {
    match s {
        "icews" => Ok(DatasetKind::Icews),
        "wikidata" => Ok(DatasetKind::Wikidata),
        "pheme" => Ok(DatasetKind::Pheme),
        "canonical" => Ok(DatasetKind::Canonical),
        other => Err(hiertkg::HierError::Config(format!(
            "unknown dataset_kind {other:?}"
        ))),
    }
}

fn load_config(path: &Path) -> hiertkg::Result<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| hiertkg::HierError::io(path.display().to_string(), e))?;
    let mut cfg = TrainConfig::from_kv(&text)?;
    if let Ok(seed) = std::env::var("HIERTKG_SEED") {
        cfg.seed = seed.parse().map_err(|_| {
            hiertkg::HierError::Config(format!("bad HIERTKG_SEED value {seed:?}"))
        })?;
    }
    Ok(cfg)
}

fn dataset_from_config(cfg: &TrainConfig) -> hiertkg::Result<EventDataset> {
    let path = cfg.dataset_path.as_deref().ok_or_else(|| {
        hiertkg::HierError::Config("config is missing dataset_path".into())
    })?;
    let kind = kind_from_str(cfg.dataset_kind.as_deref().unwrap_or("canonical"))?;
    load_dataset(Path::new(path), kind)
}

fn print_report(label: &str, r: &hiertkg::metrics::MetricReport) {
    match r.win_fraction {
        Some(w) => println!(
            "{label}: AP {:.4}  AUC {:.4}  MRR {:.4}  win {:.4}  (n={})",
            r.ap, r.auc, r.mrr, w, r.n_queries
        ),
        None => println!(
            "{label}: AP {:.4}  AUC {:.4}  MRR {:.4}  (n={})",
            r.ap, r.auc, r.mrr, r.n_queries
        ),
    }
}

fn run() -> hiertkg::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest { input, kind, out } => {
            let ds = load_dataset(&input, kind)?;
            ds.save(&out)?;
            if matches!(kind, DatasetKind::Pheme) {
                let summary = ingest::ingest_summary(&ds);
                println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            }
            println!(
                "wrote {} events, {} entities, {} relations to {}",
                ds.events.len(),
                ds.num_entities(),
                ds.num_relations(),
                out.display()
            );
        }
        Command::Train {
            config,
            out,
            no_plot,
        } => {
            let cfg = load_config(&config)?;
            let ds = dataset_from_config(&cfg)?;
            let (tr, va, _te) = ds.chronological_split(cfg.train_frac, cfg.val_frac)?;
            let result = model::train(&cfg, &tr, &va)?;
            std::fs::create_dir_all(&out)
                .map_err(|e| hiertkg::HierError::io(out.display().to_string(), e))?;
            result.checkpoint.save(&out.join("checkpoint.bin"))?;
            if !result.history.is_empty() {
                model::emit_reports(&result.history, &out, no_plot)?;
            }
            if let Some(last) = result.history.last() {
                println!("trained {} epochs; best epoch {}", result.history.len(), result.checkpoint.best_epoch);
                print_report("final val", &last.val);
            } else {
                println!("epochs = 0: wrote untrained checkpoint");
            }
        }
        Command::Eval {
            checkpoint,
            split,
            protocol,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let ds = dataset_from_config(&ckpt.config)?;
            let (tr, va, te) =
                ds.chronological_split(ckpt.config.train_frac, ckpt.config.val_frac)?;
            let protocol = match protocol {
                ProtocolArg::Sampled => EvalProtocol::Sampled,
                ProtocolArg::AllEntities => EvalProtocol::AllEntities,
            };
            let report = match split {
                SplitArg::Val => {
                    model::evaluate(&ckpt, &[&tr], &va, protocol, ckpt.best_epoch)?
                }
                SplitArg::Test => {
                    model::evaluate(&ckpt, &[&tr, &va], &te, protocol, ckpt.best_epoch)?
                }
            };
            print_report(&report.split.clone(), &report);
            println!("{}", serde_json::to_string(&report).unwrap());
        }
        Command::Ablate {
            config,
            scenario,
            out,
        } => {
            let cfg = load_config(&config)?;
            let scenario = AblationScenario::parse(&scenario)?;
            let ds = dataset_from_config(&cfg)?;
            let (tr, va, te) = ds.chronological_split(cfg.train_frac, cfg.val_frac)?;
            let row = model::run_ablation(&cfg, scenario, &tr, &va, &te)?;
            std::fs::create_dir_all(&out)
                .map_err(|e| hiertkg::HierError::io(out.display().to_string(), e))?;
            let path = out.join(format!("ablation_{}.json", row.scenario.to_lowercase()));
            std::fs::write(&path, serde_json::to_string_pretty(&row).unwrap())
                .map_err(|e| hiertkg::HierError::io(path.display().to_string(), e))?;
            println!("scenario {}", row.scenario);
            print_report("val", &row.val);
            print_report("test", &row.test);
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
