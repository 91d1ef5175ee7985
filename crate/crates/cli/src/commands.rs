//! The four subcommands.

use std::fs::File;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use seqratio::eval::{compare_losses, estimate_all, np_balanced_error, sat_curve, SatCurve, SyntheticTask};
use seqratio::losses::LlrLossKind;
use seqratio::model::{train, train_from, TraceRow, TrainRun, TrainedModel};
use seqratio::msprt::{run_msprt, ErrorStats};
use seqratio::tandem::{TandemConfig, TandemFormula};
use seqratio::{Decision, SequenceBatch, ThresholdMatrix};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::dataset;
use crate::error::{CliError, CliResult};

type CsvWriter = csv::Writer<File>;

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn csv_writer(path: &Path, header: &[&str]) -> CliResult<CsvWriter> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    Ok(w)
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::format(path, format!("{other:?}")),
    }
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv_writer(path, header)?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub const SAT_HEADER: [&str; 5] = ["threshold", "mean_hitting_time", "balanced_error", "sem_mht", "sem_err"];
pub const TRACE_HEADER: [&str; 4] = ["iteration", "L_total", "L_mult", "L_llr"];

pub fn write_sat_curve(path: &Path, curve: &SatCurve) -> CliResult<()> {
    write_rows(
        path,
        &SAT_HEADER,
        curve.points.iter().map(|p| {
            vec![
                p.threshold.to_string(),
                p.mean_hitting_time.to_string(),
                p.balanced_error.to_string(),
                p.sem_mht.to_string(),
                p.sem_err.to_string(),
            ]
        }),
    )
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> CliResult<()> {
    write_rows(
        path,
        &TRACE_HEADER,
        trace.iter().map(|r| {
            vec![
                r.iteration.to_string(),
                r.total.to_string(),
                r.mult.to_string(),
                r.llr.to_string(),
            ]
        }),
    )
}

/// Writes a dataset drawn from the configured source; returns its digest.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> CliResult<String> {
    let source = cfg.source()?;
    let batch = source.sample_sequences(cfg.data_sequences, cfg.data_length, cfg.seed()?)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    dataset::write(out, &batch)
}

/// Paths written by [`train_cmd`].
pub fn checkpoint_path(out: &Path) -> PathBuf {
    out.join("checkpoint.sqck")
}

pub fn trace_path(out: &Path) -> PathBuf {
    out.join("trace.csv")
}

/// Trains from scratch or from `resume`, then writes the checkpoint and the
/// loss trace. A divergence still writes both (holding the last finite
/// state) before failing.
pub fn train_cmd(cfg: &ExperimentConfig, data: &Path, out: &Path, resume: Option<&Path>) -> CliResult<TrainRun> {
    let tc = cfg.train_config()?;
    let batch = dataset::read(data)?;
    if tc.order + 1 > batch.len() {
        return Err(CliError::Config(format!(
            "model.order = {} needs sequences of at least {} frames",
            tc.order,
            tc.order + 1
        )));
    }
    let run = match resume {
        Some(path) => {
            let ck = Checkpoint::read(path)?;
            let shape = ck.params.shape();
            if shape.hidden != tc.hidden || shape.dim != batch.dim() || shape.classes != batch.num_classes() {
                return Err(CliError::Config(format!(
                    "checkpoint shape {shape:?} does not match the data and config"
                )));
            }
            train_from(&tc, &batch, ck.params, ck.optimizer, tc.iterations)?
        }
        None => {
            if tc.iterations == 0 {
                return Err(CliError::Config("train.iterations = 0 needs --resume".into()));
            }
            train(&tc, &batch)?
        }
    };
    create_dir(out)?;
    write_trace(&trace_path(out), &run.trace)?;
    let ck = Checkpoint {
        params: run.params.clone(),
        optimizer: run.optimizer.clone(),
        class_counts: batch.labels().counts(),
        config: tc,
    };
    ck.write(&checkpoint_path(out))?;
    match run.divergence {
        Some(e) => Err(e.into()),
        None => Ok(run),
    }
}

/// Where [`eval_cmd`] takes its LLRs from.
pub enum LlrSource<'a> {
    Oracle,
    Checkpoint(&'a Path),
}

/// Summary printed by [`eval_cmd`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub points: usize,
    pub np_error_at_end: f64,
    pub curve: SatCurve,
}

fn tandem_override(base: TandemConfig, order: Option<usize>, formula: Option<TandemFormula>) -> TandemConfig {
    TandemConfig {
        order: order.unwrap_or(base.order),
        formula: formula.unwrap_or(base.formula),
        ..base
    }
}

/// Sweeps thresholds over the data and writes the SAT curve, per-threshold
/// error statistics and per-sequence decisions.
pub fn eval_cmd(
    cfg: &ExperimentConfig,
    data: &Path,
    llr_source: LlrSource<'_>,
    order: Option<usize>,
    formula: Option<TandemFormula>,
    out: &Path,
) -> CliResult<EvalSummary> {
    let batch = dataset::read(data)?;
    let llrs = match llr_source {
        LlrSource::Oracle => {
            let source = cfg.source()?;
            check_shape(&batch, source.dim(), source.num_classes())?;
            estimate_all(&source, &batch)?
        }
        LlrSource::Checkpoint(path) => {
            let ck = Checkpoint::read(path)?;
            let shape = ck.params.shape();
            check_shape(&batch, shape.dim, shape.classes)?;
            let tandem = tandem_override(ck.config.tandem(), order, formula);
            if tandem.order + 1 > batch.len() {
                return Err(CliError::Config("order exceeds the sequence length".into()));
            }
            let model = TrainedModel {
                priors: Some(ck.priors()),
                params: ck.params,
                tandem,
            };
            estimate_all(&model, &batch)?
        }
    };
    let labels = batch.labels();
    let curve = sat_curve(&llrs, labels, cfg.eval_thresholds)?;
    let k = batch.num_classes();

    let per_threshold = curve
        .points
        .par_iter()
        .map(|p| {
            let a = ThresholdMatrix::scalar(k, p.threshold)?;
            let d = llrs.iter().map(|s| run_msprt(s, &a)).collect::<seqratio::Result<Vec<Decision>>>()?;
            let stats = ErrorStats::from_decisions(&d, labels)?;
            Ok((p.threshold, d, stats))
        })
        .collect::<seqratio::Result<Vec<_>>>()?;

    create_dir(out)?;
    write_sat_curve(&out.join("sat_curve.csv"), &curve)?;
    let mut stats_rows = Vec::new();
    let mut decision_rows = Vec::new();
    for (a, decisions, stats) in &per_threshold {
        for true_class in 0..k {
            for decided in 0..k {
                stats_rows.push(vec![
                    a.to_string(),
                    (true_class + 1).to_string(),
                    (decided + 1).to_string(),
                    stats.confusion()[true_class * k + decided].to_string(),
                    stats.alpha(true_class, decided).to_string(),
                    stats.alpha_se(true_class, decided).to_string(),
                ]);
            }
        }
        for (i, (d, &y)) in decisions.iter().zip(labels.as_slice()).enumerate() {
            decision_rows.push(vec![
                a.to_string(),
                i.to_string(),
                (y + 1).to_string(),
                (d.predicted + 1).to_string(),
                d.hitting_time.to_string(),
                d.forced.to_string(),
            ]);
        }
    }
    write_rows(
        &out.join("error_stats.csv"),
        &["threshold", "true_class", "decided_class", "count", "rate", "rate_se"],
        stats_rows,
    )?;
    write_rows(
        &out.join("decisions.csv"),
        &["threshold", "sequence", "label", "predicted", "hitting_time", "forced"],
        decision_rows,
    )?;
    Ok(EvalSummary {
        points: curve.points.len(),
        np_error_at_end: np_balanced_error(&llrs, labels, batch.len())?,
        curve,
    })
}

fn check_shape(batch: &SequenceBatch, dim: usize, classes: usize) -> CliResult<()> {
    if batch.dim() != dim || batch.num_classes() != classes {
        return Err(CliError::Config(format!(
            "data has d={} K={} but the LLR source expects d={dim} K={classes}",
            batch.dim(),
            batch.num_classes()
        )));
    }
    Ok(())
}

/// Trains every `(loss, seed)` pair on the configured synthetic task and
/// writes per-run traces and curves plus the ranked summary.
pub fn compare_cmd(
    cfg: &ExperimentConfig,
    losses: &[String],
    out: &Path,
) -> CliResult<seqratio::eval::LossComparison> {
    if losses.is_empty() {
        return Err(CliError::Config("the loss list is empty".into()));
    }
    let kinds = losses
        .iter()
        .map(|n| LlrLossKind::parse(n, cfg.train_beta, cfg.train_penalty))
        .collect::<seqratio::Result<Vec<_>>>()
        .map_err(|e| CliError::Config(e.to_string()))?;
    if cfg.compare_seeds.is_empty() {
        return Err(CliError::Config("compare.seeds is empty".into()));
    }
    let mut base = cfg.train_config()?;
    if base.iterations == 0 {
        return Err(CliError::Config("train.iterations must be positive".into()));
    }
    base.use_multiplet = cfg.compare_multiplet;
    let task = SyntheticTask {
        source: cfg.source()?,
        len: cfg.data_length,
        train_size: cfg.compare_train_sequences,
        valid_size: cfg.compare_valid_sequences,
        valid_seed: cfg.compare_valid_seed,
    };
    if base.order + 1 > task.len {
        return Err(CliError::Config("model.order exceeds data.length".into()));
    }
    let cmp = compare_losses(&task, &base, &kinds, &cfg.compare_seeds, cfg.eval_thresholds)?;

    create_dir(out)?;
    for run in &cmp.runs {
        let stem = format!("{}_seed{}", run.loss.name(), run.seed);
        write_trace(&out.join(format!("trace_{stem}.csv")), &run.trace)?;
        if let Some(curve) = &run.curve {
            write_sat_curve(&out.join(format!("curve_{stem}.csv")), curve)?;
        }
    }
    write_rows(
        &out.join("runs.csv"),
        &["loss", "seed", "final_error", "diverged", "reason"],
        cmp.runs.iter().map(|r| {
            vec![
                r.loss.name().to_string(),
                r.seed.to_string(),
                r.final_error.to_string(),
                r.divergence.is_some().to_string(),
                r.divergence.clone().unwrap_or_default(),
            ]
        }),
    )?;
    let mut ranked: Vec<_> = cmp.summary.iter().collect();
    ranked.sort_by_key(|s| s.rank);
    write_rows(
        &out.join("summary.csv"),
        &["rank", "loss", "median_final_error", "mean_curve_error", "diverged_runs"],
        ranked.iter().map(|s| {
            vec![
                s.rank.to_string(),
                s.loss.name().to_string(),
                s.median_error.to_string(),
                s.mean_curve_error.map(|v| v.to_string()).unwrap_or_default(),
                s.diverged_runs.to_string(),
            ]
        }),
    )?;
    Ok(cmp)
}
