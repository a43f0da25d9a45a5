//! Command-line pipeline: ingest, anonymize, sample, annotate, classify,
//! evaluate, analyze and report. Each stage reads and writes files under the
//! configured work directory and leaves a manifest in `work/manifests/`.

pub mod commands;
pub mod config;

use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand, ValueEnum};

use pehlens::classifier::PromptMode;
use pehlens::corpus::SourceKind;

use commands::{DocSet, Filters};
use config::Loaded;

#[derive(Debug, Parser)]
#[command(name = "pehlens", version, about = "Classify local civic discourse by topic and tone")]
pub struct Cli {
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured significance level.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Restrict to these sources (repeatable).
    #[arg(long = "source", global = true, value_parser = parse_source)]
    pub sources: Vec<SourceKind>,
    /// Restrict to these cities (repeatable).
    #[arg(long = "city", global = true)]
    pub cities: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Zero,
    Few,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<PromptMode> {
        match self {
            ModeArg::Zero => vec![PromptMode::ZeroShot],
            ModeArg::Few => vec![PromptMode::FewShot],
            ModeArg::Both => PromptMode::ALL.to_vec(),
        }
    }

    fn single(self) -> Option<PromptMode> {
        match self {
            ModeArg::Zero => Some(PromptMode::ZeroShot),
            ModeArg::Few => Some(PromptMode::FewShot),
            ModeArg::Both => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SetArg {
    Gold,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read raw record files, apply the date window and segment into units.
    Ingest,
    /// Mask personal information in every document.
    Anonymize,
    /// Draw the stratified annotation sample.
    Sample,
    /// Write one blank annotation sheet per annotator.
    ExportSheets {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate and collect completed sheets, or the service log.
    ImportSheets {
        #[arg(long, conflicts_with = "from_service")]
        dir: Option<PathBuf>,
        #[arg(long)]
        from_service: bool,
    },
    /// Soft-label the annotations and measure agreement.
    Gold,
    /// Run configured models over the documents.
    Classify {
        /// Model id (repeatable); all configured models when omitted.
        #[arg(long = "model")]
        models: Vec<String>,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "all")]
        set: SetArg,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Score predictions against the gold standard.
    Evaluate {
        #[arg(long = "model")]
        models: Vec<String>,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
    },
    /// Co-occurrence and group comparisons for one prediction set.
    Analyze {
        /// Defaults to the leaderboard leader.
        #[arg(long)]
        model: Option<String>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Render tables, figures and a checksummed manifest.
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the annotation service.
    Serve {
        #[arg(long, default_value_t = SocketAddr::from(pehlens_annotate::DEFAULT_ADDR))]
        addr: SocketAddr,
    },
    /// Nearest counties by socioeconomic profile.
    KnnCities {
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_source(s: &str) -> Result<SourceKind, String> {
    SourceKind::parse(s).ok_or_else(|| format!("unknown source {s:?}; expected reddit, x, news or council"))
}

pub fn load(cli: &Cli) -> Result<Loaded> {
    let mut cfg = match &cli.config {
        Some(p) => Loaded::from_file(p)?,
        None => Loaded::defaults(),
    };
    if let Some(s) = cli.seed {
        cfg.config.seed = s;
    }
    if let Some(a) = cli.alpha {
        cfg.config.alpha = a;
    }
    cfg.config.validate()?;
    cfg.check_paths()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load(&cli)?;
    let alpha = cfg.config.alpha;
    let ctx = commands::Ctx::new(
        cfg,
        Filters {
            sources: cli.sources.clone(),
            cities: cli.cities.clone(),
        },
    );
    match cli.command {
        Command::Ingest => commands::ingest_cmd(&ctx),
        Command::Anonymize => commands::anonymize_cmd(&ctx),
        Command::Sample => commands::sample_cmd(&ctx),
        Command::ExportSheets { out } => commands::export_sheets_cmd(&ctx, out.as_deref()),
        Command::ImportSheets { dir, from_service } => commands::import_sheets_cmd(&ctx, dir.as_deref(), from_service),
        Command::Gold => commands::gold_cmd(&ctx),
        Command::Classify {
            models,
            mode,
            set,
            workers,
        } => {
            let set = match set {
                SetArg::Gold => DocSet::Gold,
                SetArg::All => DocSet::All,
            };
            if workers == Some(0) {
                return Err(anyhow!("--workers must be positive"));
            }
            commands::classify_cmd(&ctx, &models, &mode.modes(), set, workers)
        }
        Command::Evaluate { models, mode } => commands::evaluate_cmd(&ctx, &models, &mode.modes()),
        Command::Analyze { model, mode } => {
            commands::analyze_cmd(&ctx, model.as_deref(), mode.and_then(ModeArg::single), alpha)
        }
        Command::Report { out } => commands::report_cmd(&ctx, out.as_deref()).map(|_| ()),
        Command::Serve { addr } => commands::serve_cmd(&ctx, addr),
        Command::KnnCities { target, k, out } => commands::knn_cmd(&ctx, &target, k, out.as_deref()).map(|_| ()),
    }
}
