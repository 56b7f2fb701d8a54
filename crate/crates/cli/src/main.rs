//! Command-line front end: `gmr train | eval | compare | export`.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gmr_core::harness::{
    checkpoint_dir, compare_policies, evaluate_trained, export_plot_data, report_path, run_gps,
    write_comparison, write_json, write_run, ExperimentConfig, PolicyKind, TrainedPolicy,
    OUT_ENV, SEED_ENV,
};

#[derive(Parser)]
#[command(name = "gmr", version, about = "Guided policy search with generative motor reflexes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run guided policy search and write the run directory.
    Train(Common),
    /// Robustness evaluation of a trained policy from random initial states.
    Eval(Common),
    /// Train GMR and baseline on identical data and compare robustness.
    Compare(Common),
    /// Write plot-ready CSVs for an existing run directory.
    Export(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults to the point-mass preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = SEED_ENV)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["gmr", "baseline"])]
    policy: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Named preset used when no config file is given.
    #[arg(long, default_value = "point-mass", value_parser = ["point-mass", "two-link-arm"])]
    preset: String,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None if self.preset == "two-link-arm" => ExperimentConfig::two_link_arm(),
            None => ExperimentConfig::point_mass(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        if let Some(p) = &self.policy {
            config.policy = p.parse::<PolicyKind>()?;
        }
        if let Some(n) = self.trials {
            config.robustness_trials = n;
        }
        if let Some(t) = self.threshold {
            config.success_threshold = t;
        }
        config.validate()?;
        Ok(config)
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => {
            let config = args.config()?;
            let out = &config.output_dir;
            let run = run_gps(&config).context("training failed")?;
            write_run(&config, &run, out)?;
            let kind = config.policy.name();
            let curve = run.metrics.series(&format!("{kind}_mse"));
            let lqr = run.metrics.series("lqr_mse");
            println!("iteration,{kind}_mse,lqr_mse");
            for (i, (p, l)) in curve.iter().zip(&lqr).enumerate() {
                println!("{},{p},{l}", i + 1);
            }
            println!("wrote {}", out.display());
        }
        Command::Eval(args) => {
            let config = args.config()?;
            let out = &config.output_dir;
            let dir = checkpoint_dir(out, config.policy);
            if !dir.exists() {
                bail!("no {} checkpoint in {}; run `gmr train` first", config.policy.name(), out.display());
            }
            let mut policy = TrainedPolicy::load(&dir)?;
            let report =
                evaluate_trained(&mut policy, &config, config.robustness_trials, config.success_threshold)?;
            let path = report_path(out, policy.kind());
            write_json(&report, &path)?;
            println!(
                "{}: {}/{} successes at threshold {}",
                policy.kind().name(),
                report.successes,
                report.total,
                report.threshold
            );
            println!("wrote {}", path.display());
        }
        Command::Compare(args) => {
            let config = args.config()?;
            let out = &config.output_dir;
            let cmp = compare_policies(&config).context("comparison failed")?;
            write_comparison(&config, &cmp, out)?;
            println!("threshold,gmr,baseline,total");
            for row in &cmp.summary.rows {
                println!("{},{},{},{}", row.threshold, row.gmr_successes, row.baseline_successes, row.total);
            }
            println!("training data sha256 {}", cmp.summary.gmr_dataset_sha256);
            println!("wrote {}", out.display());
        }
        Command::Export(args) => {
            let config = args.config()?;
            for path in export_plot_data(&config.output_dir)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}
