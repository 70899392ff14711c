use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use pairmine_core::evalharness::{generate, SyntheticSpec};
use pairmine_core::pipeline::{
    paths, run_all, run_stage, PipelineConfig, PipelineStage, StageArtifact, StageOutcome, Workdir,
};
use pairmine_core::Error;

#[derive(Parser)]
#[command(name = "pairmine", version, about = "Mine aligned input/output pairs from unaligned corpora")]
struct Cli {
    #[command(flatten)]
    global: Global,
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `workdir` from the config.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Overrides `rng_seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key=value` config override; dotted keys reach tables (`margin.k=8`).
    #[arg(long = "stage-override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Reads, normalizes and splits the corpora and seeds.
    Ingest,
    /// Trains the biencoder and prefilter on the seeds.
    TrainBiencoder,
    /// Prefilters and embeds both sides.
    Embed,
    /// Builds one kNN index pair per shard.
    Index,
    /// Proposes candidates by kNN margin.
    Mine,
    /// Trains the crossencoder on the seeds.
    TrainCross,
    /// Re-ranks candidates and keeps the top `final_top_n`.
    Filter,
    /// Writes the mined dataset as JSONL plus a manifest.
    Export,
    /// Scores both rankings against held-out gold pairs.
    Evaluate,
    /// Every stage in order.
    RunAll {
        /// Skip stages whose artifacts are still current.
        #[arg(long)]
        resume: bool,
    },
    /// Writes a synthetic corpus with planted gold pairs.
    Synth {
        /// `separable` or `lexical-trap`.
        #[arg(long, default_value = "separable")]
        preset: String,
        #[arg(long)]
        out: PathBuf,
        /// Gold pairs used as seeds; the rest go to gold.jsonl.
        #[arg(long, default_value_t = 100)]
        num_seeds: usize,
    },
    /// Prints the counters of every finished stage.
    Report,
}

fn load_config(g: &Global) -> anyhow::Result<PipelineConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = PipelineConfig::load(path, &g.overrides)?;
    if let Some(w) = &g.workdir {
        cfg.workdir = w.clone();
    }
    if let Some(s) = g.seed {
        cfg.rng_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_artifact(art: &StageArtifact) {
    for (name, c) in &art.counters {
        println!(
            "{}: {name} {} -> {} (filtered {}, degenerate {})",
            art.stage, c.records_in, c.records_out, c.filtered, c.degenerate
        );
    }
}

fn print_metrics(work: &Workdir) -> anyhow::Result<()> {
    let path = work.path(paths::EVAL_METRICS);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let doc: serde_json::Value = serde_json::from_str(&text)?;
    for ranking in ["biencoder", "crossencoder"] {
        let m = &doc[ranking];
        for (kind, label) in [("recall", "recall@"), ("precision", "precision@")] {
            for a in m[kind].as_array().into_iter().flatten() {
                println!(
                    "evaluate: {ranking} {label}{} = {}/{} ({:.4})",
                    a["cutoff"], a["num"], a["den"], a["value"].as_f64().unwrap_or(f64::NAN)
                );
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let stage = match &cli.command {
        Command::Ingest => Some(PipelineStage::Ingest),
        Command::TrainBiencoder => Some(PipelineStage::TrainBiencoder),
        Command::Embed => Some(PipelineStage::Embed),
        Command::Index => Some(PipelineStage::Index),
        Command::Mine => Some(PipelineStage::Mine),
        Command::TrainCross => Some(PipelineStage::TrainCross),
        Command::Filter => Some(PipelineStage::Filter),
        Command::Export => Some(PipelineStage::Export),
        Command::Evaluate => Some(PipelineStage::Evaluate),
        _ => None,
    };
    if let Some(stage) = stage {
        let cfg = load_config(&cli.global)?;
        let art = run_stage(&cfg, stage)?;
        print_artifact(&art);
        if stage == PipelineStage::Evaluate {
            print_metrics(&Workdir::new(&cfg.workdir))?;
        }
        return Ok(());
    }
    match cli.command {
        Command::RunAll { resume } => {
            let cfg = load_config(&cli.global)?;
            for (stage, outcome) in run_all(&cfg, resume)? {
                match outcome {
                    StageOutcome::Ran(art) => print_artifact(&art),
                    StageOutcome::Current => println!("{stage}: current"),
                    StageOutcome::Skipped => println!("{stage}: skipped (no gold)"),
                }
            }
            if cfg.gold.is_some() {
                print_metrics(&Workdir::new(&cfg.workdir))?;
            }
            println!("exported {}", cfg.workdir.join(paths::EXPORT_MINED).display());
        }
        Command::Synth {
            preset,
            out,
            num_seeds,
        } => {
            let spec = SyntheticSpec::preset(&preset)
                .ok_or_else(|| Error::Config(format!("unknown synthetic preset {preset:?}")))?;
            let corpus = generate(&spec)?;
            corpus.write_dir(&out, num_seeds)?;
            println!(
                "wrote {} inputs, {} outputs and {} gold pairs to {}",
                corpus.inputs.len(),
                corpus.outputs.len(),
                corpus.gold.len(),
                out.display()
            );
        }
        Command::Report => {
            let cfg = load_config(&cli.global)?;
            let work = Workdir::new(&cfg.workdir);
            for stage in PipelineStage::ALL {
                if work.artifact_path(stage).exists() {
                    print_artifact(&work.load_artifact(stage)?);
                } else {
                    println!("{stage}: not run");
                }
            }
            if work.path(paths::EVAL_METRICS).exists() {
                print_metrics(&work)?;
            }
        }
        _ => unreachable!("stage commands handled above"),
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::MissingArtifact(_) | Error::StaleArtifact(_)) => 3,
        Some(e) if e.is_numeric() => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
