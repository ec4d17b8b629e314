//! Multi-run studies: term ablation, training-set size, and pass count.
//!
//! Runs are independent, so they fan out over a bounded worker pool. Results
//! come back in job order, which keeps every table independent of scheduling.

use rayon::prelude::*;
use serde::Serialize;

use super::stats::{compare_runs, mean, std_dev, Comparison};
use super::train::{eval_loss, prepare_data, run_seed_on, RunOutput, RunResult};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::landscape::{
    evaluate_surface, flatness_metrics, sample_directions, FlatnessMetrics, SurfaceGrid,
};

/// A rectangular table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Space-aligned columns for a terminal.
    pub fn to_text(&self) -> String {
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|i| {
                self.rows
                    .iter()
                    .map(|r| r[i].len())
                    .chain([self.columns[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:<w$}"))
                .collect();
            padded.join("  ").trim_end().to_string()
        };
        let mut out = line(&self.columns);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

pub fn fmt_acc(x: f64) -> String {
    format!("{x:.4}")
}

/// One labelled configuration run over all its seeds.
#[derive(Debug, Clone)]
pub struct Arm {
    pub label: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunOutput>,
}

impl Arm {
    pub fn results(&self) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().map(|r| &r.result)
    }

    pub fn best_accuracies(&self) -> Vec<f64> {
        self.results().map(|r| r.best_test_accuracy).collect()
    }

    pub fn final_accuracies(&self) -> Vec<f64> {
        self.results().map(|r| r.final_test_accuracy).collect()
    }
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub table: Table,
    pub arms: Vec<Arm>,
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))
}

/// Runs every `(label, config)` pair over its seeds on `workers` threads.
pub fn run_arms(arms: Vec<(String, ExperimentConfig)>, workers: usize) -> Result<Vec<Arm>> {
    let mut jobs = Vec::new();
    let mut data = Vec::new();
    for (i, (_, cfg)) in arms.iter().enumerate() {
        cfg.validate()?;
        data.push(prepare_data(cfg)?);
        jobs.extend(cfg.seeds.iter().map(|&s| (i, s)));
    }
    let pool = worker_pool(workers)?;
    let outputs: Vec<RunOutput> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| run_seed_on(&arms[i].1, seed, &data[i]))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut outputs = outputs.into_iter();
    Ok(arms
        .into_iter()
        .map(|(label, config)| {
            let runs = outputs.by_ref().take(config.seeds.len()).collect();
            Arm {
                label,
                config,
                runs,
            }
        })
        .collect())
}

pub const ABLATION_ROWS: [&str; 4] = ["full", "w/o HSR", "w/o MHAR", "w/o OR"];

/// The configuration of one ablation row: all three terms on, except the one
/// the row removes.
pub fn ablation_variant(base: &ExperimentConfig, row: usize) -> ExperimentConfig {
    ExperimentConfig {
        k: base.k.max(2),
        hsr_on: row != 1,
        mhar_on: row != 2,
        or_on: row != 3,
        ..base.clone()
    }
}

pub fn run_ablation(base: &ExperimentConfig) -> Result<StudyOutput> {
    let arms = ABLATION_ROWS
        .iter()
        .enumerate()
        .map(|(i, name)| (name.to_string(), ablation_variant(base, i)))
        .collect();
    let arms = run_arms(arms, base.workers)?;
    let mut table = Table::new(&[
        "variant",
        "hsr",
        "mhar",
        "or",
        "runs",
        "mean_best_acc",
        "std_best_acc",
        "mean_final_acc",
    ]);
    for arm in &arms {
        let best = arm.best_accuracies();
        let on = |b: bool| if b { "on" } else { "off" }.to_string();
        table.rows.push(vec![
            arm.label.clone(),
            on(arm.config.hsr_on),
            on(arm.config.mhar_on),
            on(arm.config.or_on),
            best.len().to_string(),
            fmt_acc(mean(&best)),
            fmt_acc(std_dev(&best)),
            fmt_acc(mean(&arm.final_accuracies())),
        ]);
    }
    Ok(StudyOutput { table, arms })
}

/// Plain dropout training: one pass, cross-entropy only.
pub fn baseline_variant(base: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        k: 1,
        ..base.clone()
    }
}

pub fn lrdrop_variant(base: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        k: base.k.max(2),
        ..base.clone()
    }
}

/// Baseline against LR-Drop at each training-set size. Every size trains on a
/// prefix of the same training split, so smaller sets nest in larger ones.
pub fn run_size_study(
    base: &ExperimentConfig,
    sizes: &[usize],
) -> Result<(StudyOutput, Vec<Comparison>)> {
    if sizes.is_empty() {
        return Err(Error::Config("sizes: must list at least one size".into()));
    }
    let pool = base.train_pool();
    if let Some(&s) = sizes.iter().find(|&&s| s == 0 || s > pool) {
        return Err(Error::Config(format!(
            "sizes: {s} exceeds the training pool of {pool}"
        )));
    }
    let mut arms = Vec::new();
    for &size in sizes {
        let sized = ExperimentConfig {
            train_size: Some(size),
            ..base.clone()
        };
        arms.push((format!("baseline/{size}"), baseline_variant(&sized)));
        arms.push((format!("lrdrop/{size}"), lrdrop_variant(&sized)));
    }
    let arms = run_arms(arms, base.workers)?;
    let mut table = Table::new(&[
        "size",
        "baseline_mean",
        "baseline_std",
        "lrdrop_mean",
        "lrdrop_std",
        "gap",
        "welch_t",
        "df",
        "p",
    ]);
    let mut comparisons = Vec::new();
    for (pair, &size) in arms.chunks(2).zip(sizes) {
        let (b, l) = (pair[0].best_accuracies(), pair[1].best_accuracies());
        let (t, df, p, cmp) = if b.len() >= 2 {
            let c = compare_runs(&l, &b)?;
            (
                format!("{:.4}", c.t),
                format!("{:.2}", c.df),
                format!("{:.4}", c.p),
                Some(c),
            )
        } else {
            ("nan".into(), "nan".into(), "nan".into(), None)
        };
        comparisons.extend(cmp);
        table.rows.push(vec![
            size.to_string(),
            fmt_acc(mean(&b)),
            fmt_acc(std_dev(&b)),
            fmt_acc(mean(&l)),
            fmt_acc(std_dev(&l)),
            fmt_acc(mean(&l) - mean(&b)),
            t,
            df,
            p,
        ]);
    }
    Ok((StudyOutput { table, arms }, comparisons))
}

pub const KPASS_VALUES: [usize; 3] = [1, 2, 3];

pub fn run_kpass(base: &ExperimentConfig) -> Result<StudyOutput> {
    let arms = KPASS_VALUES
        .iter()
        .map(|&k| (format!("k={k}"), ExperimentConfig { k, ..base.clone() }))
        .collect();
    let arms = run_arms(arms, base.workers)?;
    let mut table = Table::new(&[
        "k",
        "runs",
        "mean_best_acc",
        "std_best_acc",
        "mean_final_acc",
    ]);
    for arm in &arms {
        let best = arm.best_accuracies();
        table.rows.push(vec![
            arm.config.k.to_string(),
            best.len().to_string(),
            fmt_acc(mean(&best)),
            fmt_acc(std_dev(&best)),
            fmt_acc(mean(&arm.final_accuracies())),
        ]);
    }
    Ok(StudyOutput { table, arms })
}

/// The surface around one trained model.
#[derive(Debug, Clone)]
pub struct SurfaceRecord {
    pub label: String,
    pub seed: u64,
    pub grid: SurfaceGrid,
    pub metrics: FlatnessMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmFlatness {
    pub label: String,
    pub seeds: Vec<u64>,
    pub mean_rise: Vec<f64>,
    /// `None` stands for an infinite value.
    pub max_rise: Vec<Option<f64>>,
    pub radius_at_2x: Vec<Option<f64>>,
    pub mean_of_mean_rise: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlatnessReport {
    pub grid_points: usize,
    pub grid_range: f64,
    pub eval_examples: usize,
    pub arms: Vec<ArmFlatness>,
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Slices the loss surface around the final parameters of every run in
/// `arms`. Directions are sampled with the run's seed, and the surface loss
/// is inference cross-entropy on the first `landscape_eval_size` test
/// examples.
pub fn run_flatness_study(
    cfg: &ExperimentConfig,
    arms: &[Arm],
) -> Result<(FlatnessReport, Vec<SurfaceRecord>)> {
    let data = prepare_data(cfg)?;
    let n = cfg
        .landscape_eval_size
        .unwrap_or(data.test.len())
        .min(data.test.len());
    let eval = &data.test.examples[..n];
    let jobs: Vec<(&Arm, &RunOutput)> = arms
        .iter()
        .flat_map(|a| a.runs.iter().map(move |r| (a, r)))
        .collect();
    let pool = worker_pool(cfg.workers)?;
    let records = pool.install(|| {
        jobs.par_iter()
            .map(|(arm, run)| {
                let model = arm.config.model_config();
                let seed = run.result.seed;
                let dirs = sample_directions(&run.final_params, seed, cfg.direction_norm)?;
                let grid = evaluate_surface(
                    &run.final_params,
                    &dirs,
                    cfg.grid_range,
                    cfg.grid_points,
                    |p| eval_loss(p, &model, eval),
                )?;
                let metrics = flatness_metrics(&grid)?;
                Ok(SurfaceRecord {
                    label: arm.label.clone(),
                    seed,
                    grid,
                    metrics,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let report_arms = arms
        .iter()
        .map(|arm| {
            let mine: Vec<&SurfaceRecord> =
                records.iter().filter(|r| r.label == arm.label).collect();
            let mean_rise: Vec<f64> = mine.iter().map(|r| r.metrics.mean_rise).collect();
            ArmFlatness {
                label: arm.label.clone(),
                seeds: mine.iter().map(|r| r.seed).collect(),
                mean_of_mean_rise: mean(&mean_rise),
                mean_rise,
                max_rise: mine
                    .iter()
                    .map(|r| finite_or_none(r.metrics.max_rise))
                    .collect(),
                radius_at_2x: mine
                    .iter()
                    .map(|r| finite_or_none(r.metrics.radius_at_2x))
                    .collect(),
            }
        })
        .collect();
    Ok((
        FlatnessReport {
            grid_points: cfg.grid_points,
            grid_range: cfg.grid_range,
            eval_examples: n,
            arms: report_arms,
        },
        records,
    ))
}

/// LR-Drop and the plain-dropout baseline over every seed, then the surface
/// around each trained model.
pub fn run_landscape(
    cfg: &ExperimentConfig,
) -> Result<(Vec<Arm>, FlatnessReport, Vec<SurfaceRecord>)> {
    let arms = run_arms(
        vec![
            ("lrdrop".into(), lrdrop_variant(cfg)),
            ("baseline".into(), baseline_variant(cfg)),
        ],
        cfg.workers,
    )?;
    let (report, records) = run_flatness_study(cfg, &arms)?;
    Ok((arms, report, records))
}
