//! Command-line front end. Every subcommand writes only inside its output
//! directory, and every run leaves a `manifest.json` that reproduces it when
//! passed back as `--config`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::losses::{batch_objective, ExampleTraces, LossWeights, TermSwitches};
use crate::tensor::gradcheck::{DEFAULT_STEP, MIN_COORDINATES};
use crate::tensor::rng::stream_key;
use crate::tensor::{finite_diff_report, GradCheckReport, RngStream};
use crate::trainer::study::{run_landscape, StudyOutput};
use crate::trainer::{run_ablation, run_kpass, run_size_study, run_training};
use crate::transformer::{checkpoint, forward_pass, init_params, ModelConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "lrdrop",
    version,
    about = "Layer-wise regularized dropout experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run this single seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every seed of one config.
    Train(RunArgs),
    /// Full objective against each single-term removal.
    Ablate(RunArgs),
    /// Baseline against LR-Drop over nested training-set sizes.
    SizeStudy(RunArgs),
    /// Compare k = 1, 2, 3 passes.
    Kpass(RunArgs),
    /// Loss-surface slices around LR-Drop and baseline minima.
    Landscape(RunArgs),
    /// Check tape gradients of the full objective against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) => EXIT_NUMERIC,
        Error::Config(_) | Error::InvalidArgument(_) | Error::Json(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Parses `argv` (program name first), runs the subcommand, and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    let out = PathBuf::from(&cfg.out_dir);
    Ok((cfg, out))
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

/// Creates the output directory and records the resolved config.
fn start(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    write(out, "manifest.json", cfg.to_json() + "\n")
}

fn emit_table(study: &StudyOutput, out: &Path) -> Result<()> {
    print!("{}", study.table.to_text());
    write(out, "results.csv", study.table.to_csv())
}

fn run(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train(args) => {
            let (cfg, out) = resolve(&args)?;
            start(&cfg, &out)?;
            train(&cfg, &out)?;
        }
        Command::Ablate(args) => {
            let (cfg, out) = resolve(&args)?;
            start(&cfg, &out)?;
            emit_table(&run_ablation(&cfg)?, &out)?;
        }
        Command::SizeStudy(args) => {
            let (cfg, out) = resolve(&args)?;
            start(&cfg, &out)?;
            let (study, _) = run_size_study(&cfg, &cfg.sizes)?;
            emit_table(&study, &out)?;
        }
        Command::Kpass(args) => {
            let (cfg, out) = resolve(&args)?;
            start(&cfg, &out)?;
            emit_table(&run_kpass(&cfg)?, &out)?;
        }
        Command::Landscape(args) => {
            let (cfg, out) = resolve(&args)?;
            start(&cfg, &out)?;
            landscape(&cfg, &out)?;
        }
        Command::Gradcheck { seed } => {
            let report = tiny_gradcheck(seed)?;
            println!(
                "max relative error {:.3e} over {} coordinates",
                report.max_rel_error, report.coordinates
            );
            if report.max_rel_error >= GRADCHECK_TOLERANCE {
                if let Some((name, i, a, n)) = &report.worst {
                    eprintln!("worst: {name}[{i}] analytic {a:e} numeric {n:e}");
                }
                return Ok(EXIT_NUMERIC);
            }
        }
    }
    Ok(EXIT_OK)
}

fn train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let runs = run_training(cfg)?;
    let mut log = String::new();
    let mut csv = String::from("seed,best_epoch,best_test_accuracy,final_test_accuracy\n");
    for run in &runs {
        for line in &run.log {
            log.push_str(line);
            log.push('\n');
        }
        let r = &run.result;
        csv.push_str(&format!(
            "{},{},{:.4},{:.4}\n",
            r.seed, r.best_epoch, r.best_test_accuracy, r.final_test_accuracy
        ));
        checkpoint::save(
            &run.best_params,
            &out.join(format!("checkpoint_seed{}.lrdc", r.seed)),
        )?;
    }
    write(out, "train_log.jsonl", log)?;
    write(out, "results.csv", &csv)?;
    let results: Vec<_> = runs.iter().map(|r| &r.result).collect();
    write(
        out,
        "run_results.json",
        serde_json::to_string_pretty(&results)? + "\n",
    )?;
    print!("{}", csv.replace(',', "\t"));
    Ok(())
}

fn landscape(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let (_, report, records) = run_landscape(cfg)?;
    let mut csv = String::from("arm,seed,mean_rise,max_rise,radius_at_2x\n");
    for r in &records {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.label, r.seed, r.metrics.mean_rise, r.metrics.max_rise, r.metrics.radius_at_2x
        ));
        let name = format!("surface_{}_seed{}.csv", r.label, r.seed);
        write(out, &name, r.grid.to_csv())?;
    }
    // The first LR-Drop seed doubles as the headline surface.
    if let Some(first) = records.iter().find(|r| r.label == "lrdrop") {
        write(out, "surface.csv", first.grid.to_csv())?;
    }
    write(out, "results.csv", &csv)?;
    write(
        out,
        "metrics.json",
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    for arm in &report.arms {
        println!("{:<9} mean_rise {:.6}", arm.label, arm.mean_of_mean_rise);
    }
    Ok(())
}

/// The model `gradcheck` differentiates.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        vocab_size: 11,
        max_len: 5,
        hidden_size: 8,
        num_layers: 2,
        num_heads: 2,
        ffn_size: 16,
        num_classes: 2,
        dropout_rate: 0.1,
        attention_capture: Default::default(),
    }
}

/// Finite-difference check of the full objective (all three regularizers on,
/// two passes) on a tiny model and a fixed batch. Masks come from fixed
/// streams, so the loss is a deterministic function of the parameters.
pub fn tiny_gradcheck(seed: u64) -> Result<GradCheckReport> {
    let cfg = tiny_model();
    let params = init_params(&cfg, seed)?;
    let batch: [(&[usize], usize); 3] =
        [(&[1, 4, 9, 2, 7], 1), (&[3, 3, 10], 0), (&[0, 5, 8, 6], 1)];
    let weights = LossWeights::uniform(0.5);
    let switches = TermSwitches::default();
    finite_diff_report(
        |tape, p| {
            let mut examples = Vec::new();
            for (j, (tokens, label)) in batch.iter().enumerate() {
                let traces = (0..2u64)
                    .map(|pass| {
                        let mut rng = RngStream::new(seed, stream_key(&[j as u64, pass]));
                        forward_pass(tape, tokens, p, &cfg, Some(&mut rng), pass)
                    })
                    .collect::<Result<Vec<_>>>()?;
                examples.push(ExampleTraces {
                    traces,
                    label: *label,
                });
            }
            Ok(batch_objective(tape, &examples, &weights, &switches, 1.0)?.0)
        },
        &params,
        DEFAULT_STEP,
        MIN_COORDINATES,
        seed,
    )
}
