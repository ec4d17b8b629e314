//! Deterministic synthetic sequence-classification tasks.
//!
//! | task          | tokens      | label                                        |
//! |---------------|-------------|----------------------------------------------|
//! | `parity`      | `{0, 1}`    | number of `1` tokens mod 2                   |
//! | `majority`    | `{0, 1, 2}` | 0 if `1`s are at least as frequent as `2`s, else 1 |
//! | `first-token` | `{0..4}`    | the first token                              |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::rng::stream_key;
use crate::tensor::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Parity,
    Majority,
    FirstToken,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Parity => "parity",
            Task::Majority => "majority",
            Task::FirstToken => "first-token",
        }
    }

    pub fn vocab_size(self) -> usize {
        match self {
            Task::Parity => 2,
            Task::Majority => 3,
            Task::FirstToken => 4,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            Task::Parity | Task::Majority => 2,
            Task::FirstToken => 4,
        }
    }

    pub fn label(self, tokens: &[usize]) -> usize {
        match self {
            Task::Parity => tokens.iter().filter(|&&t| t == 1).count() % 2,
            Task::Majority => {
                let ones = tokens.iter().filter(|&&t| t == 1).count();
                let twos = tokens.iter().filter(|&&t| t == 2).count();
                usize::from(twos > ones)
            }
            Task::FirstToken => tokens[0],
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parity" => Ok(Task::Parity),
            "majority" => Ok(Task::Majority),
            "first-token" => Ok(Task::FirstToken),
            other => Err(Error::InvalidArgument(format!(
                "unknown task {other:?} (expected parity, majority or first-token)"
            ))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub vocab_size: usize,
    pub num_classes: usize,
    pub task: Task,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn with_examples(&self, examples: Vec<Example>) -> Dataset {
        Dataset {
            examples,
            ..self.clone()
        }
    }

    /// Line-delimited text: `label<TAB>space-separated token ids`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            let toks: Vec<String> = ex.tokens.iter().map(usize::to_string).collect();
            out.push_str(&format!("{}\t{}\n", ex.label, toks.join(" ")));
        }
        out
    }

    pub fn from_text(text: &str, task: Task, seed: u64) -> Result<Dataset> {
        let mut examples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::InvalidArgument(format!("line {}: {what}", n + 1));
            let (label, toks) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let label: usize = label.parse().map_err(|_| bad("bad label"))?;
            let tokens = toks
                .split(' ')
                .map(|t| t.parse::<usize>().map_err(|_| bad("bad token id")))
                .collect::<Result<Vec<_>>>()?;
            if tokens.iter().any(|&t| t >= task.vocab_size()) {
                return Err(bad("token id out of vocabulary"));
            }
            if label >= task.num_classes() {
                return Err(bad("label out of range"));
            }
            examples.push(Example { tokens, label });
        }
        Ok(Dataset {
            examples,
            vocab_size: task.vocab_size(),
            num_classes: task.num_classes(),
            task,
            seed,
        })
    }
}

/// `size` i.i.d. sequences of length `seq_len`, uniform over the task's
/// vocabulary, labelled by the task rule.
pub fn generate_task(task: Task, size: usize, seq_len: usize, seed: u64) -> Result<Dataset> {
    if size == 0 || seq_len == 0 {
        return Err(Error::InvalidArgument(
            "dataset size and sequence length must be positive".into(),
        ));
    }
    let mut rng = RngStream::new(seed, stream_key(&[0x6461_7461, task as u64]));
    let vocab = task.vocab_size();
    let examples = (0..size)
        .map(|_| {
            let tokens: Vec<usize> = (0..seq_len).map(|_| rng.below(vocab)).collect();
            let label = task.label(&tokens);
            Example { tokens, label }
        })
        .collect();
    Ok(Dataset {
        examples,
        vocab_size: vocab,
        num_classes: task.num_classes(),
        task,
        seed,
    })
}

/// Train/validation/test split in ratio 8:1:1 by prefix, after one seeded
/// shuffle.
pub fn split(ds: &Dataset) -> (Dataset, Dataset, Dataset) {
    let mut examples = ds.examples.clone();
    RngStream::new(ds.seed, 0x7370_6c69_74).shuffle(&mut examples);
    let n = examples.len();
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = examples.split_off(n_train + n_val);
    let val = examples.split_off(n_train);
    (
        ds.with_examples(examples),
        ds.with_examples(val),
        ds.with_examples(test),
    )
}

/// The first `size` examples. Subsets of one dataset nest by construction.
pub fn nested_subset(ds: &Dataset, size: usize) -> Result<Dataset> {
    if size == 0 {
        return Err(Error::InvalidArgument(
            "subset size must be positive".into(),
        ));
    }
    if size > ds.len() {
        return Err(Error::InvalidArgument(format!(
            "subset size {size} exceeds dataset size {}",
            ds.len()
        )));
    }
    Ok(ds.with_examples(ds.examples[..size].to_vec()))
}

/// Shuffles with `epoch_seed` and cuts into batches of `batch_size`; the last
/// batch may be short.
pub fn batches(ds: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<Example>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument(
            "batch_size must be at least 1".into(),
        ));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    RngStream::new(epoch_seed, 0x6261_7463_68).shuffle(&mut order);
    Ok(order
        .chunks(batch_size)
        .map(|chunk| chunk.iter().map(|&i| ds.examples[i].clone()).collect())
        .collect())
}
