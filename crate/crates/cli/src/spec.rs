//! Run specifications: flat `key=value` files describing a dataset, a
//! model, and a training recipe.
//!
//! `#` starts a comment, blank lines are skipped, every key is optional
//! (defaults describe the synthetic classifier demo), unknown or repeated
//! keys are errors. `Display` writes the canonical form; parsing that
//! output reproduces the original exactly.

use std::fmt;
use std::path::PathBuf;

use glua_core::attention::AttentionVariant;
use glua_core::data::BYTE_VOCAB;
use glua_core::dtype::Dtype;
use glua_core::model::{ModelConfig, TaskKind};
use glua_core::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskChoice {
    Classifier,
    Lm,
}

impl TaskChoice {
    fn as_str(self) -> &'static str {
        match self {
            TaskChoice::Classifier => "classifier",
            TaskChoice::Lm => "lm",
        }
    }
}

/// What train runs: one attention variant, or an A/B pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantChoice {
    Baseline,
    Glu,
    Both,
}

impl VariantChoice {
    fn as_str(self) -> &'static str {
        match self {
            VariantChoice::Baseline => "baseline",
            VariantChoice::Glu => "glu",
            VariantChoice::Both => "both",
        }
    }

    /// Concrete variants to run, in reporting order.
    pub fn variants(self) -> &'static [AttentionVariant] {
        match self {
            VariantChoice::Baseline => &[AttentionVariant::Baseline],
            VariantChoice::Glu => &[AttentionVariant::Glu],
            VariantChoice::Both => &[AttentionVariant::Baseline, AttentionVariant::Glu],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetChoice {
    /// Generated in memory from the run seed.
    Synth,
    /// CIFAR-10 binary batches at `data_path`.
    Cifar10,
    /// UTF-8 text at `data_path`, tokenized as bytes.
    Text,
}

impl DatasetChoice {
    fn as_str(self) -> &'static str {
        match self {
            DatasetChoice::Synth => "synth",
            DatasetChoice::Cifar10 => "cifar10",
            DatasetChoice::Text => "text",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub task: TaskChoice,
    pub dataset: DatasetChoice,
    pub data_path: Option<PathBuf>,
    pub train_count: usize,
    pub val_count: usize,
    pub image_dim: usize,
    pub patch: usize,
    pub n_classes: usize,
    /// Language-model context length; text windows carry one extra target
    /// token.
    pub seq_len: usize,
    pub vocab: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_hidden: usize,
    pub variant: VariantChoice,
    pub final_layer_norm: bool,
    pub dtype: Dtype,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    /// Global-norm gradient clipping threshold; absent means no clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunSpec {
    fn default() -> RunSpec {
        RunSpec {
            task: TaskChoice::Classifier,
            dataset: DatasetChoice::Synth,
            data_path: None,
            train_count: 64,
            val_count: 16,
            image_dim: 8,
            patch: 4,
            n_classes: 4,
            seq_len: 12,
            vocab: BYTE_VOCAB,
            d_model: 48,
            n_heads: 4,
            n_layers: 2,
            ffn_hidden: 128,
            variant: VariantChoice::Both,
            final_layer_norm: false,
            dtype: Dtype::F32,
            epochs: 75,
            batch_size: 16,
            lr_max: 1e-3,
            lr_min: 1e-5,
            weight_decay: 0.01,
            grad_clip: None,
            seed: 0,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl RunSpec {
    pub fn parse(text: &str) -> Result<RunSpec, String> {
        let mut spec = RunSpec::default();
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!(
                    "line {}: expected key=value, got {raw:?}",
                    lineno + 1
                ));
            };
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(format!("line {}: repeated key {key:?}", lineno + 1));
            }
            seen.push(key.to_string());
            spec.set(key, value)
                .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        }
        Ok(spec)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            value
                .parse()
                .map_err(|e| format!("key {key}: cannot parse {value:?} ({e})"))
        }
        match key {
            "task" => {
                self.task = match value {
                    "classifier" => TaskChoice::Classifier,
                    "lm" => TaskChoice::Lm,
                    _ => return Err(format!("task must be classifier or lm, got {value:?}")),
                }
            }
            "dataset" => {
                self.dataset = match value {
                    "synth" => DatasetChoice::Synth,
                    "cifar10" => DatasetChoice::Cifar10,
                    "text" => DatasetChoice::Text,
                    _ => {
                        return Err(format!(
                            "dataset must be synth, cifar10, or text, got {value:?}"
                        ))
                    }
                }
            }
            "data_path" => self.data_path = Some(PathBuf::from(value)),
            "train_count" => self.train_count = num(key, value)?,
            "val_count" => self.val_count = num(key, value)?,
            "image_dim" => self.image_dim = num(key, value)?,
            "patch" => self.patch = num(key, value)?,
            "n_classes" => self.n_classes = num(key, value)?,
            "seq_len" => self.seq_len = num(key, value)?,
            "vocab" => self.vocab = num(key, value)?,
            "d_model" => self.d_model = num(key, value)?,
            "n_heads" => self.n_heads = num(key, value)?,
            "n_layers" => self.n_layers = num(key, value)?,
            "ffn_hidden" => self.ffn_hidden = num(key, value)?,
            "variant" => {
                self.variant = match value {
                    "baseline" => VariantChoice::Baseline,
                    "glu" => VariantChoice::Glu,
                    "both" => VariantChoice::Both,
                    _ => {
                        return Err(format!(
                            "variant must be baseline, glu, or both, got {value:?}"
                        ))
                    }
                }
            }
            "final_layer_norm" => {
                self.final_layer_norm = match value {
                    "true" => true,
                    "false" => false,
                    _ => {
                        return Err(format!(
                            "final_layer_norm must be true or false, got {value:?}"
                        ))
                    }
                }
            }
            "dtype" => {
                self.dtype = match value {
                    "f32" => Dtype::F32,
                    "f64" => Dtype::F64,
                    _ => return Err(format!("dtype must be f32 or f64, got {value:?}")),
                }
            }
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr_max" => self.lr_max = num(key, value)?,
            "lr_min" => self.lr_min = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "grad_clip" => self.grad_clip = Some(num(key, value)?),
            "seed" => self.seed = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Model shape for this spec, with the variant swapped in (train can
    /// run either variant, or both, from one spec).
    pub fn model_config(&self, variant: AttentionVariant) -> ModelConfig {
        let task = match self.task {
            TaskChoice::Classifier => TaskKind::Classifier {
                image_dim: self.image_dim,
                channels: 3,
                patch: self.patch,
                n_classes: self.n_classes,
            },
            TaskChoice::Lm => TaskKind::Lm { vocab: self.vocab },
        };
        ModelConfig {
            task,
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            ffn_hidden: self.ffn_hidden,
            variant,
            final_layer_norm: self.final_layer_norm,
            max_seq_len: self.seq_len,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            weight_decay: self.weight_decay,
            grad_clip: self.grad_clip,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

impl fmt::Display for RunSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "task = {}", self.task.as_str())?;
        writeln!(f, "dataset = {}", self.dataset.as_str())?;
        if let Some(p) = &self.data_path {
            writeln!(f, "data_path = {}", p.display())?;
        }
        writeln!(f, "train_count = {}", self.train_count)?;
        writeln!(f, "val_count = {}", self.val_count)?;
        writeln!(f, "image_dim = {}", self.image_dim)?;
        writeln!(f, "patch = {}", self.patch)?;
        writeln!(f, "n_classes = {}", self.n_classes)?;
        writeln!(f, "seq_len = {}", self.seq_len)?;
        writeln!(f, "vocab = {}", self.vocab)?;
        writeln!(f, "d_model = {}", self.d_model)?;
        writeln!(f, "n_heads = {}", self.n_heads)?;
        writeln!(f, "n_layers = {}", self.n_layers)?;
        writeln!(f, "ffn_hidden = {}", self.ffn_hidden)?;
        writeln!(f, "variant = {}", self.variant.as_str())?;
        writeln!(f, "final_layer_norm = {}", self.final_layer_norm)?;
        writeln!(f, "dtype = {}", self.dtype)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "lr_max = {}", self.lr_max)?;
        writeln!(f, "lr_min = {}", self.lr_min)?;
        writeln!(f, "weight_decay = {}", self.weight_decay)?;
        if let Some(c) = self.grad_clip {
            writeln!(f, "grad_clip = {c}")?;
        }
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "out_dir = {}", self.out_dir.display())?;
        Ok(())
    }
}
