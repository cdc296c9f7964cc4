use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use solar_bess::ddpg::{training_log_csv, AgentSelection};
use solar_bess::io::config::ExperimentConfig;
use solar_bess::io::data::{write_market_csv, write_solar_csv};
use solar_bess::io::experiment::{
    evaluate_policy, hourly_csv, load_checkpoints, load_intervals, metrics_csv, run_experiment, save_checkpoints,
    split_intervals, summary_text, trace_csv, train_agents, write_file_atomic, write_staged, Report,
};
use solar_bess::io::synth::synth_generate;
use solar_bess::policy::{AcdrlPolicy, PolicyKind};

#[derive(Parser)]
#[command(name = "solar-bess", version, about = "Solar farm and battery bidding on a real-time spot market")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured number of training days
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    agent: Option<AgentSelection>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic market.csv and solar.csv
    GenerateData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 33)]
        days: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the agents and write checkpoints/ and training_log.csv
    Train(Common),
    /// Evaluate one policy on the held-out range; acdrl reads <out>/checkpoints
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "acdrl")]
        policy: PolicyKind,
    },
    /// Evaluate a non-learning policy on the held-out range
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PolicyKind,
    },
    /// Train, evaluate every policy and write the full report
    Report(Common),
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(days) = c.days {
        cfg.train_days = days;
    }
    if let Some(agent) = c.agent {
        cfg.agent = agent;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let data = load_intervals(&cfg)?;
    let (train_data, _) = split_intervals(&cfg, &data)?;
    let trained = train_agents(&cfg, train_data)?;
    std::fs::create_dir_all(&c.out)?;
    let dir = c.out.join("checkpoints");
    write_staged(&dir, |staged| save_checkpoints(staged, &AcdrlPolicy::from_trained(&trained)))?;
    write_file_atomic(&c.out.join("training_log.csv"), &training_log_csv(&trained.log))?;
    info!("checkpoints written to {}", dir.display());
    Ok(())
}

fn evaluate_cmd(c: &Common, kind: PolicyKind) -> Result<()> {
    let cfg = load_config(c)?;
    let acdrl =
        if kind == PolicyKind::Acdrl { Some(load_checkpoints(&c.out.join("checkpoints"), cfg.agent)?) } else { None };
    let data = load_intervals(&cfg)?;
    let (_, eval_data) = split_intervals(&cfg, &data)?;
    let ev = evaluate_policy(&cfg, kind, eval_data, acdrl.as_ref())?;
    let report = Report { evaluations: vec![ev], upper_bound: None, training_log: Vec::new(), acdrl: None };
    std::fs::create_dir_all(&c.out)?;
    write_file_atomic(&c.out.join("metrics.csv"), &metrics_csv(&report.evaluations))?;
    write_file_atomic(&c.out.join("hourly.csv"), &hourly_csv(&report.evaluations))?;
    write_file_atomic(&c.out.join("trace.csv"), &trace_csv(&report.evaluations))?;
    write_file_atomic(&c.out.join("summary.txt"), &summary_text(&cfg, &report))?;
    print!("{}", summary_text(&cfg, &report));
    Ok(())
}

fn report_cmd(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let report = run_experiment(&cfg, &c.out)?;
    print!("{}", summary_text(&cfg, &report));
    Ok(())
}

fn generate_cmd(seed: u64, days: usize, out: &Path, config: Option<&Path>) -> Result<()> {
    if days == 0 {
        bail!("--days must be at least 1");
    }
    let synth = match config {
        Some(p) => ExperimentConfig::load(p)?.synth,
        None => ExperimentConfig::default().synth,
    };
    let (market, solar) = synth_generate(seed, days, &synth);
    write_staged(out, |dir| {
        write_market_csv(&dir.join("market.csv"), &market)?;
        write_solar_csv(&dir.join("solar.csv"), &solar)
    })?;
    info!("{} intervals written to {}", market.prices.len(), out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenerateData { seed, days, out, config } => generate_cmd(seed, days, &out, config.as_deref()),
        Command::Train(c) => train_cmd(&c),
        Command::Evaluate { common, policy } => evaluate_cmd(&common, policy),
        Command::Baseline { common, policy } => {
            if policy == PolicyKind::Acdrl {
                bail!("baseline takes a non-learning policy; use `evaluate --policy acdrl`");
            }
            evaluate_cmd(&common, policy)
        }
        Command::Report(c) => report_cmd(&c),
    }
}
