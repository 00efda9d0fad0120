//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use neurosteer_core::identify::Method;
use neurosteer_core::synthetic::DataSpec;

use crate::artifacts::Stage;
use crate::config::{parse_factors, parse_layers, Overrides, RunConfig};
use crate::error::{CliError, ExitCode, Result};
use crate::pipeline::run_pipeline;
use crate::report::emit_report;
use crate::synth::write_synthetic_setup;

#[derive(Debug, Parser)]
#[command(name = "neurosteer", version, about = "Language-specific neuron identification and steering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Profile activations and select language-specific neurons.
    Identify(RunArgs),
    /// Identification plus steering values for each factor.
    Factors(RunArgs),
    /// Language steering scores for each factor.
    Lss(RunArgs),
    /// Perplexity, accuracy and BLEU deltas under the evaluation factor.
    Eval(RunArgs),
    /// Every stage.
    Run(RunArgs),
    /// SVG heatmaps for a completed artifact directory.
    Report {
        /// Artifact directory; the config's output directory when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the synthetic bilingual model, data and config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = neurosteer_core::synthetic::DEFAULT_BOOST)]
        boost: f32,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated factor names, e.g. `pmax,=10p`.
    #[arg(long)]
    pub factors: Option<String>,
    /// Comma-separated layer indices where steering applies.
    #[arg(long)]
    pub layers: Option<String>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    /// Activation-probability percentile.
    #[arg(long)]
    pub m: Option<f64>,
    /// Fraction of neurons kept by lowest LAPE.
    #[arg(long)]
    pub n: Option<f64>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown method {s:?}"))
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            out: self.out.clone(),
            threads: self.threads,
            seed: self.seed,
            factors: self.factors.as_deref().map(parse_factors).transpose()?,
            layers: self.layers.as_deref().map(parse_layers).transpose()?,
            method: self.method,
            m: self.m,
            n: self.n,
        });
        Ok(cfg)
    }
}

fn stages_through(last: Stage) -> Vec<Stage> {
    Stage::ALL.into_iter().take_while(|s| *s <= last).collect()
}

fn execute(command: Command) -> Result<()> {
    let (args, stages) = match command {
        Command::Identify(a) => (a, stages_through(Stage::Identify)),
        Command::Factors(a) => (a, stages_through(Stage::Factors)),
        Command::Lss(a) => (a, stages_through(Stage::Lss)),
        Command::Eval(a) => (a, vec![Stage::Profiles, Stage::Identify, Stage::Factors, Stage::Eval]),
        Command::Run(a) => (a, Stage::ALL.to_vec()),
        Command::Report { out, config } => {
            let dir = match (out, config) {
                (Some(dir), _) => dir,
                (None, Some(config)) => RunConfig::load(&config)?.out_dir(),
                (None, None) => return Err(CliError::Config("report needs --out or --config".into())),
            };
            for path in emit_report(&dir)? {
                info!("wrote {}", path.display());
            }
            return Ok(());
        }
        Command::Synth { out, seed, boost } => {
            let spec = DataSpec {
                seed,
                ..DataSpec::default()
            };
            let path = write_synthetic_setup(&out, &spec, boost)?;
            println!("{}", path.display());
            return Ok(());
        }
    };
    let cfg = args.load()?;
    let summary = run_pipeline(&cfg, &stages)?;
    for (kind, mean) in &summary.lss_means {
        println!("lss {kind}: {mean:.4}");
    }
    println!("{}", summary.out_dir.display());
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::Config } else { ExitCode::Success };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::Success,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

