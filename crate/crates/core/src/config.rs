//! Experiment configuration: one flat JSON document.
//!
//! Every field except `task` has a default. Unknown keys are rejected, and
//! serde reports the line and column of the offending key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::landscape::DirectionNorm;
use crate::losses::{HsrLayers, LossWeights, TermSwitches};
use crate::trainer::AdamSettings;
use crate::transformer::{AttentionCapture, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Total generated examples before the 8:1:1 split.
    pub data_size: usize,
    pub seq_len: usize,
    pub data_seed: u64,
    /// Training examples used, a prefix of the training split. `None` uses
    /// the whole split.
    pub train_size: Option<usize>,

    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub dropout_rate: f64,
    pub attention_capture: AttentionCapture,

    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub hsr_on: bool,
    pub mhar_on: bool,
    pub or_on: bool,
    pub hsr_layers: HsrLayers,
    /// Number of dropout-sampled passes per example.
    pub k: usize,
    /// Candidate coefficient values, recorded with each run.
    pub coefficient_grid: Vec<f64>,

    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,

    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Parallel runs within a study.
    pub workers: usize,
    pub out_dir: String,

    /// Training-set sizes for `size-study`, checked against the training
    /// pool when that study runs.
    pub sizes: Vec<usize>,

    pub grid_points: usize,
    pub grid_range: f64,
    pub direction_norm: DirectionNorm,
    /// Test examples used for surface evaluation; `None` uses all of them.
    pub landscape_eval_size: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::Parity,
            data_size: 1000,
            seq_len: 8,
            data_seed: 0,
            train_size: None,
            hidden_size: 16,
            num_layers: 2,
            num_heads: 2,
            ffn_size: 32,
            dropout_rate: 0.1,
            attention_capture: AttentionCapture::PreDropout,
            alpha: 0.1,
            beta: 0.1,
            gamma: 0.1,
            hsr_on: true,
            mhar_on: true,
            or_on: true,
            hsr_layers: HsrLayers::All,
            k: 2,
            coefficient_grid: vec![0.01, 0.05, 0.1, 0.5],
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: 1.0,
            seeds: vec![1, 2, 3, 4, 5],
            epochs: 10,
            batch_size: 16,
            workers: 1,
            out_dir: "out".into(),
            sizes: vec![64, 128, 256, 512],
            grid_points: 21,
            grid_range: 1.0,
            direction_norm: DirectionNorm::Filter,
            landscape_eval_size: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: self.task.vocab_size(),
            max_len: self.seq_len,
            hidden_size: self.hidden_size,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ffn_size: self.ffn_size,
            num_classes: self.task.num_classes(),
            dropout_rate: self.dropout_rate,
            attention_capture: self.attention_capture,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn switches(&self) -> TermSwitches {
        TermSwitches {
            hsr_on: self.hsr_on,
            mhar_on: self.mhar_on,
            or_on: self.or_on,
            hsr_layers: self.hsr_layers,
        }
    }

    pub fn adam(&self) -> AdamSettings {
        AdamSettings {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Training examples available after the split.
    pub fn train_pool(&self) -> usize {
        self.data_size * 8 / 10
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                problems.push(msg);
            }
        };
        need(
            self.data_size >= 10,
            format!("data_size: must be at least 10, got {}", self.data_size),
        );
        need(self.seq_len >= 1, "seq_len: must be positive".into());
        if let Some(n) = self.train_size {
            need(
                n >= 1 && n <= self.train_pool(),
                format!("train_size: must be in 1..={}, got {n}", self.train_pool()),
            );
        }
        for (name, v) in [
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_size", self.ffn_size),
            ("k", self.k),
            ("batch_size", self.batch_size),
            ("workers", self.workers),
            ("grid_points", self.grid_points),
        ] {
            need(v >= 1, format!("{name}: must be positive"));
        }
        need(
            self.num_heads == 0 || self.hidden_size % self.num_heads == 0,
            format!(
                "num_heads: {} does not divide hidden_size {}",
                self.num_heads, self.hidden_size
            ),
        );
        need(
            (0.0..1.0).contains(&self.dropout_rate),
            format!("dropout_rate: must be in [0, 1), got {}", self.dropout_rate),
        );
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            need(
                v.is_finite() && v >= 0.0,
                format!("{name}: must be finite and >= 0, got {v}"),
            );
        }
        need(
            self.lr.is_finite() && self.lr > 0.0,
            format!("lr: must be positive, got {}", self.lr),
        );
        need(
            (0.0..1.0).contains(&self.beta1),
            format!("beta1: must be in [0, 1), got {}", self.beta1),
        );
        need(
            (0.0..1.0).contains(&self.beta2),
            format!("beta2: must be in [0, 1), got {}", self.beta2),
        );
        need(
            self.eps > 0.0,
            format!("eps: must be positive, got {}", self.eps),
        );
        need(
            self.weight_decay.is_finite() && self.weight_decay >= 0.0,
            format!("weight_decay: must be >= 0, got {}", self.weight_decay),
        );
        need(
            self.clip_norm.is_finite() && self.clip_norm >= 0.0,
            format!("clip_norm: must be >= 0, got {}", self.clip_norm),
        );
        need(
            !self.seeds.is_empty(),
            "seeds: must list at least one seed".into(),
        );
        need(
            self.grid_points % 2 == 1,
            format!("grid_points: must be odd, got {}", self.grid_points),
        );
        need(
            self.grid_range.is_finite() && self.grid_range > 0.0,
            format!("grid_range: must be positive, got {}", self.grid_range),
        );
        if let Some(n) = self.landscape_eval_size {
            need(n >= 1, "landscape_eval_size: must be positive".into());
        }
        need(
            !self.out_dir.is_empty(),
            "out_dir: must not be empty".into(),
        );

        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"task": "majority", "epochs": 3}"#).unwrap();
        assert_eq!(cfg.task, Task::Majority);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.k, 2);
    }

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig {
            train_size: Some(100),
            seeds: vec![9, 10],
            landscape_eval_size: Some(50),
            ..Default::default()
        };
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json(), cfg.to_json());
    }

    #[test]
    fn unknown_key_reports_location() {
        let err = ExperimentConfig::from_json("{\n  \"task\": \"parity\",\n  \"alpah\": 0.5\n}")
            .unwrap_err()
            .to_string();
        assert!(err.contains("alpah"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn field_level_messages() {
        let err =
            ExperimentConfig::from_json(r#"{"dropout_rate": 1.5, "num_heads": 3, "seeds": []}"#)
                .unwrap_err()
                .to_string();
        assert!(err.contains("dropout_rate"), "{err}");
        assert!(err.contains("num_heads"), "{err}");
        assert!(err.contains("seeds"), "{err}");
    }

    #[test]
    fn even_grid_rejected() {
        let err = ExperimentConfig::from_json(r#"{"grid_points": 4}"#).unwrap_err();
        assert!(err.to_string().contains("grid_points"));
    }

    #[test]
    fn bad_task_name() {
        assert!(ExperimentConfig::from_json(r#"{"task": "sorting"}"#).is_err());
    }
}
