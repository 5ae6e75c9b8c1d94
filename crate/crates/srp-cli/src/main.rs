//! `srp` — command-line front end for the SRP pipeline.
//!
//! Subcommands mirror the pipeline stages (`gen-synthetic`, `synthesize`,
//! `retrieve`, `build-graph`, `train`, `evaluate`) plus the two sweep
//! drivers (`ablate`, `search`). Offline artifacts land under `--out`,
//! tracked by `manifest.txt`; a stage re-runs only when its inputs change,
//! and a staged pipeline is bitwise-identical to a one-shot `train`.

mod manifest;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use srp_core::graph::GraphMode;
use srp_core::model::{load_config, SrpConfig};
use srp_core::synthgen::SynthConfig;

use pipeline::{gen_synthetic, CliError, Run};

#[derive(Parser)]
#[command(name = "srp", version, about = "Predictive modeling over relational databases")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every command that reads a database and writes
/// artifacts. Flag overrides beat the config file, which beats defaults.
#[derive(Args)]
struct Common {
    /// Database directory: schema.json plus one CSV per table.
    #[arg(long, default_value = "db")]
    db: PathBuf,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, default_value = "srp-out")]
    out: PathBuf,
    /// JSON configuration file (missing fields take defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Similar rows linked per query (retrieval top-K) override.
    #[arg(long)]
    k: Option<usize>,
    /// Quantile bins for numeric match keys override.
    #[arg(long)]
    bins: Option<usize>,
    /// Frequency-aware encoding size override.
    #[arg(long)]
    m: Option<usize>,
    /// Graph construction override: r2n | r2ne.
    #[arg(long, value_name = "MODE")]
    graph_mode: Option<String>,
    /// Module toggles override: a comma-separated subset of s,r,p (or
    /// `none`).
    #[arg(long)]
    toggles: Option<String>,
    /// Disable the temporal leakage filter (negative control only).
    #[arg(long)]
    no_time_filter: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the planted-signal synthetic benchmark database.
    GenSynthetic {
        /// Directory the schema and table CSVs are written into.
        #[arg(long, default_value = "db")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 100)]
        items: usize,
        #[arg(long, default_value_t = 5000)]
        interactions: usize,
        /// Strength of the single-entity signal, in [0, 1].
        #[arg(long, default_value_t = 0.8)]
        unary: f64,
        /// Strength of the cross-row cohort signal, in [0, 1].
        #[arg(long, default_value_t = 0.8)]
        composite: f64,
        /// Probability a label is replaced by a fair coin, in [0, 1].
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
    },
    /// Materialize the synthesized feature table.
    Synthesize {
        #[command(flatten)]
        common: Common,
    },
    /// Materialize retrieval's dummy link tables.
    Retrieve {
        #[command(flatten)]
        common: Common,
    },
    /// Materialize the heterogeneous graph (summary plus edge lists).
    BuildGraph {
        #[command(flatten)]
        common: Common,
    },
    /// Run the offline stages as needed, then train and checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Re-score a trained checkpoint on every split.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Train every module combination and summarize mean metric and rank.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// How many seeds to average over (seeds 0..N).
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Random hyper-parameter search over a grid of ranges.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Grid file (JSON); the published ranges when omitted.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
}

fn parse_toggles(text: &str) -> Result<(bool, bool, bool), CliError> {
    let mut toggles = (false, false, false);
    if text.trim() == "none" || text.trim().is_empty() {
        return Ok(toggles);
    }
    for part in text.split(',') {
        match part.trim() {
            "s" => toggles.0 = true,
            "r" => toggles.1 = true,
            "p" => toggles.2 = true,
            other => {
                return Err(CliError::Config(format!(
                    "unknown toggle `{other}` (expected a subset of s,r,p or `none`)"
                )))
            }
        }
    }
    Ok(toggles)
}

/// Config file (or defaults) with the command-line overrides applied.
fn effective_config(common: &Common) -> Result<SrpConfig, CliError> {
    config_with_base(common, common.config.as_deref())
}

fn config_with_base(
    common: &Common,
    base: Option<&std::path::Path>,
) -> Result<SrpConfig, CliError> {
    let mut config = match base {
        Some(path) => load_config(path).map_err(CliError::from)?,
        None => SrpConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(k) = common.k {
        config.retrieved_k = k;
    }
    if let Some(bins) = common.bins {
        config.bins = bins;
    }
    if let Some(m) = common.m {
        config.fa_m = m;
    }
    if let Some(mode) = &common.graph_mode {
        config.graph_mode = match mode.as_str() {
            "r2n" => GraphMode::RowToNode,
            "r2ne" => GraphMode::RowToNodeOrEdge,
            other => {
                return Err(CliError::Config(format!(
                    "unknown graph mode `{other}` (expected r2n or r2ne)"
                )))
            }
        };
    }
    if let Some(text) = &common.toggles {
        let (s, r, p) = parse_toggles(text)?;
        config = config.with_toggles(s, r, p);
    }
    if common.no_time_filter {
        config.time_filter = false;
    }
    config.validate().map_err(CliError::from)?;
    Ok(config)
}

/// `evaluate` defaults to the config the checkpoint was trained with.
fn evaluate_config(common: &Common) -> Result<SrpConfig, CliError> {
    let trained = common.out.join("config.json");
    if common.config.is_none() && trained.exists() {
        return config_with_base(common, Some(&trained));
    }
    effective_config(common)
}

fn open(common: &Common, config: SrpConfig) -> Result<Run, CliError> {
    Run::open(&common.db, &common.out, config)
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::GenSynthetic { out, seed, users, items, interactions, unary, composite, noise } => {
            let config = SynthConfig {
                users,
                items,
                interactions,
                unary_signal: unary,
                composite_signal: composite,
                noise_rate: noise,
                seed,
            };
            gen_synthetic(&out, &config)
        }
        Cmd::Synthesize { common } => {
            open(&common, effective_config(&common)?)?.ensure_synthesize()
        }
        Cmd::Retrieve { common } => open(&common, effective_config(&common)?)?.ensure_retrieve(),
        Cmd::BuildGraph { common } => open(&common, effective_config(&common)?)?.ensure_graph(),
        Cmd::Train { common } => open(&common, effective_config(&common)?)?.ensure_train(),
        Cmd::Evaluate { common } => open(&common, evaluate_config(&common)?)?.evaluate_cmd(),
        Cmd::Ablate { common, seeds } => {
            open(&common, effective_config(&common)?)?.ablate_cmd(seeds)
        }
        Cmd::Search { common, trials, grid } => {
            open(&common, effective_config(&common)?)?.search_cmd(trials, grid.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toggles_parse_subsets_and_reject_junk() {
        assert_eq!(parse_toggles("s,r,p").unwrap(), (true, true, true));
        assert_eq!(parse_toggles("r,p").unwrap(), (false, true, true));
        assert_eq!(parse_toggles("s").unwrap(), (true, false, false));
        assert_eq!(parse_toggles("none").unwrap(), (false, false, false));
        assert!(parse_toggles("s,q").is_err());
    }

    #[test]
    fn overrides_beat_defaults() {
        let common = Common {
            db: "db".into(),
            out: "o".into(),
            config: None,
            seed: Some(9),
            k: Some(3),
            bins: Some(7),
            m: Some(4),
            graph_mode: Some("r2n".into()),
            toggles: Some("r,p".into()),
            no_time_filter: true,
        };
        let cfg = effective_config(&common).unwrap();
        assert_eq!(
            (cfg.seed, cfg.retrieved_k, cfg.bins, cfg.fa_m),
            (9, 3, 7, 4)
        );
        assert_eq!(cfg.graph_mode, GraphMode::RowToNode);
        assert!(!cfg.synthesis && cfg.retrieval && cfg.propagation);
        assert!(!cfg.time_filter);
    }

    #[test]
    fn bad_graph_mode_is_a_config_error() {
        let common = Common {
            db: "db".into(),
            out: "o".into(),
            config: None,
            seed: None,
            k: None,
            bins: None,
            m: None,
            graph_mode: Some("hyper".into()),
            toggles: None,
            no_time_filter: false,
        };
        let err = effective_config(&common).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn cli_declaration_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
