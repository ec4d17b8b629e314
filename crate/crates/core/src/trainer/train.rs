use serde::{Deserialize, Serialize};

use super::optim::{clip_global_norm, OptimizerState};
use crate::config::ExperimentConfig;
use crate::data::{batches, generate_task, nested_subset, split, Dataset, Example};
use crate::error::{Error, Result};
use crate::losses::{batch_objective, ExampleTraces, LossBreakdown, LossWeights, TermSwitches};
use crate::tensor::kernels::cross_entropy;
use crate::tensor::rng::stream_key;
use crate::tensor::{GradientTape, ModelParams, RngStream};
use crate::transformer::{forward_pass, init_params, predict_logits, ModelConfig};

/// Everything [`train_step`] needs besides the batch and the mutable state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSettings {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub switches: TermSwitches,
    /// Dropout passes per example.
    pub k: usize,
    /// Multiplier on the cross-entropy term.
    pub ce_scale: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub clip_norm: f64,
}

impl StepSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        StepSettings {
            model: cfg.model_config(),
            weights: cfg.weights(),
            switches: cfg.switches(),
            k: cfg.k,
            ce_scale: 1.0,
            clip_norm: cfg.clip_norm,
        }
    }
}

/// One optimizer step on `batch`.
///
/// Every example runs `k` forward passes, each with its own dropout stream
/// keyed by `(step, example, pass)` under `seed`. All passes share one tape,
/// so a single backward pass collects the gradient of the whole objective.
pub fn train_step(
    batch: &[Example],
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    settings: &StepSettings,
    seed: u64,
) -> Result<LossBreakdown> {
    if settings.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let step = opt.step;
    let mut tape = GradientTape::new();
    let mut examples = Vec::with_capacity(batch.len());
    for (j, ex) in batch.iter().enumerate() {
        let mut traces = Vec::with_capacity(settings.k);
        for p in 0..settings.k {
            let mut rng = RngStream::new(seed, stream_key(&[step, j as u64, p as u64]));
            traces.push(forward_pass(
                &mut tape,
                &ex.tokens,
                params,
                &settings.model,
                Some(&mut rng),
                p as u64,
            )?);
        }
        examples.push(ExampleTraces {
            traces,
            label: ex.label,
        });
    }
    let (total, breakdown) = batch_objective(
        &mut tape,
        &examples,
        &settings.weights,
        &settings.switches,
        settings.ce_scale,
    )?;
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let mut grads = tape.backward(total)?;
    let norm = clip_global_norm(&mut grads, settings.clip_norm);
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient norm"));
    }
    opt.update(params, &grads)?;
    if !params.all_finite() {
        return Err(Error::NonFinite("parameters after update"));
    }
    Ok(breakdown)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of examples whose inference-mode argmax matches the label.
pub fn evaluate(params: &ModelParams, cfg: &ModelConfig, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let mut correct = 0usize;
    for ex in &ds.examples {
        let logits = predict_logits(&ex.tokens, params, cfg)?;
        if argmax(logits.data()) == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Mean inference-mode cross-entropy.
pub fn eval_loss(params: &ModelParams, cfg: &ModelConfig, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let mut sum = 0.0;
    for ex in examples {
        let logits = predict_logits(&ex.tokens, params, cfg)?;
        sum += cross_entropy(&logits, ex.label)?;
    }
    Ok(sum / examples.len() as f64)
}

/// Train/validation/test data for a config: one generated pool split 8:1:1,
/// with the training split cut to `train_size` by prefix.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Splits> {
    let pool = generate_task(cfg.task, cfg.data_size, cfg.seq_len, cfg.data_seed)?;
    let (train, val, test) = split(&pool);
    let train = match cfg.train_size {
        Some(n) => nested_subset(&train, n)?,
        None => train,
    };
    if val.is_empty() || test.is_empty() {
        return Err(Error::Config(
            "data_size too small for a non-empty split".into(),
        ));
    }
    Ok(Splits { train, val, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss terms over the epoch's steps; zero for epoch 0.
    pub ce: f64,
    pub hsr: f64,
    pub mhar: f64,
    pub or: f64,
    pub total: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Epoch 0 is the untrained model.
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_test_accuracy: f64,
    pub final_test_accuracy: f64,
}

/// A finished run together with its artifacts.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: RunResult,
    /// One JSON line per step.
    pub log: Vec<String>,
    pub best_params: ModelParams,
    pub final_params: ModelParams,
}

/// Trains one seed on prepared data.
pub fn run_seed_on(cfg: &ExperimentConfig, seed: u64, data: &Splits) -> Result<RunOutput> {
    cfg.validate()?;
    let model = cfg.model_config();
    let settings = StepSettings::from_config(cfg);
    let mut params = init_params(&model, seed)?;
    let mut opt = OptimizerState::new(cfg.adam(), &params);

    let test0 = evaluate(&params, &model, &data.test)?;
    let mut epochs = vec![EpochRecord {
        epoch: 0,
        ce: 0.0,
        hsr: 0.0,
        mhar: 0.0,
        or: 0.0,
        total: 0.0,
        val_accuracy: evaluate(&params, &model, &data.val)?,
        test_accuracy: test0,
    }];
    let mut best = (0usize, test0, params.clone());
    let mut log = Vec::new();

    for epoch in 1..=cfg.epochs {
        let epoch_seed = stream_key(&[seed, epoch as u64]);
        let mut steps = Vec::new();
        for batch in batches(&data.train, cfg.batch_size, epoch_seed)? {
            let b = train_step(&batch, &mut params, &mut opt, &settings, seed)?;
            log.push(b.log_line(Some(seed), opt.step));
            steps.push(b);
        }
        let mean = LossBreakdown::mean(&steps);
        let test_accuracy = evaluate(&params, &model, &data.test)?;
        epochs.push(EpochRecord {
            epoch,
            ce: mean.ce,
            hsr: mean.hsr,
            mhar: mean.mhar,
            or: mean.or_,
            total: mean.total,
            val_accuracy: evaluate(&params, &model, &data.val)?,
            test_accuracy,
        });
        if test_accuracy > best.1 {
            best = (epoch, test_accuracy, params.clone());
        }
    }

    let final_test_accuracy = epochs.last().map_or(test0, |e| e.test_accuracy);
    Ok(RunOutput {
        result: RunResult {
            seed,
            config: cfg.clone(),
            epochs,
            best_epoch: best.0,
            best_test_accuracy: best.1,
            final_test_accuracy,
        },
        log,
        best_params: best.2,
        final_params: params,
    })
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    run_seed_on(cfg, seed, &prepare_data(cfg)?)
}

/// Every seed of `cfg`, in seed order.
pub fn run_training(cfg: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    cfg.seeds
        .iter()
        .map(|&s| run_seed_on(cfg, s, &data))
        .collect()
}
