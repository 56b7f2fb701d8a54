//! Run directory layout:
//!
//! ```text
//! <out>/config.toml            config snapshot
//! <out>/diagnostics.jsonl      one JSON object per C-step
//! <out>/metrics.csv            iteration,metric,value
//! <out>/losses.csv             iteration,policy,epoch,loss
//! <out>/exploration.csv        exploration rollouts (trajectory log schema)
//! <out>/checkpoints/<kind>/    trained policies
//! <out>/robustness_<kind>.json robustness reports
//! <out>/comparison.json        comparison summary
//! <out>/plots/                 exported plot data
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, PolicyKind};
use super::robustness::{Comparison, ComparisonSummary, RobustnessReport};
use super::run::{CStepDiagnostic, MetricRow, Metrics, RunResult};
use crate::dynamics::write_trajectory_log;
use crate::error::{Error, Result};

pub fn checkpoint_dir(out: &Path, kind: PolicyKind) -> PathBuf {
    out.join("checkpoints").join(kind.name())
}

pub fn report_path(out: &Path, kind: PolicyKind) -> PathBuf {
    out.join(format!("robustness_{}.json", kind.name()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::from(e).context(format!("creating {}", path.display())))
}

pub fn write_metrics_csv(metrics: &Metrics, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    w.write_record(["iteration", "metric", "value"])?;
    for r in &metrics.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Metrics> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize::<MetricRow>().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Metrics { rows })
}

fn write_diagnostics(diagnostics: &[CStepDiagnostic], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for d in diagnostics {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<CStepDiagnostic>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn write_losses(losses: &[(usize, PolicyKind, Vec<f64>)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["iteration", "policy", "epoch", "loss"])?;
    for (n, kind, history) in losses {
        for (e, loss) in history.iter().enumerate() {
            w.write_record([n.to_string(), kind.name().to_string(), (e + 1).to_string(), loss.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<RobustnessReport> {
    let report: RobustnessReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    report.validate()?;
    Ok(report)
}

/// Writes every artifact of a GPS run into `out`.
pub fn write_run(config: &ExperimentConfig, run: &RunResult, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), config.to_toml()?)?;
    write_diagnostics(&run.diagnostics, &out.join("diagnostics.jsonl"))?;
    write_metrics_csv(&run.metrics, &out.join("metrics.csv"))?;
    write_losses(&run.losses, &out.join("losses.csv"))?;
    write_trajectory_log(&run.exploration, create(&out.join("exploration.csv"))?)?;
    run.policy.save(config, &checkpoint_dir(out, run.policy.kind()))?;
    if let Some(sh) = &run.shadow {
        sh.save(config, &checkpoint_dir(out, sh.kind()))?;
    }
    Ok(())
}

pub fn write_comparison(config: &ExperimentConfig, cmp: &Comparison, out: &Path) -> Result<()> {
    write_run(config, &cmp.run, out)?;
    write_json(&cmp.gmr, &report_path(out, PolicyKind::Gmr))?;
    write_json(&cmp.baseline, &report_path(out, PolicyKind::Baseline))?;
    write_json(&cmp.summary, &out.join("comparison.json"))?;
    Ok(())
}

pub fn read_comparison(out: &Path) -> Result<ComparisonSummary> {
    Ok(serde_json::from_str(&std::fs::read_to_string(out.join("comparison.json"))?)?)
}

/// Learning curve as `iteration,metric,value`, grouped by metric.
pub fn export_learning_curve(metrics: &Metrics, path: &Path) -> Result<()> {
    let mut grouped = Metrics::default();
    for name in metrics.names() {
        grouped
            .rows
            .extend(metrics.rows.iter().filter(|r| r.metric == name).cloned());
    }
    write_metrics_csv(&grouped, path)
}

/// Planar paths of a robustness report as `trial,step,x,y`.
pub fn export_trajectories(report: &RobustnessReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["trial", "step", "x", "y"])?;
    for t in &report.trials {
        for (step, [x, y]) in t.path.iter().enumerate() {
            w.write_record([t.trial.to_string(), step.to_string(), x.to_string(), y.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Exports whatever plot data exists in a run directory into
/// `<out>/plots/`. Returns the files written.
pub fn export_plot_data(out: &Path) -> Result<Vec<PathBuf>> {
    let plots = out.join("plots");
    let mut written = Vec::new();
    let metrics = out.join("metrics.csv");
    if metrics.exists() {
        let p = plots.join("learning_curve.csv");
        export_learning_curve(&read_metrics_csv(&metrics)?, &p)?;
        written.push(p);
    }
    for kind in [PolicyKind::Gmr, PolicyKind::Baseline] {
        let report = report_path(out, kind);
        if report.exists() {
            let p = plots.join(format!("trajectories_{}.csv", kind.name()));
            export_trajectories(&read_report(&report)?, &p)?;
            written.push(p);
        }
    }
    if written.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "nothing to export in {}",
            out.display()
        )));
    }
    Ok(written)
}
