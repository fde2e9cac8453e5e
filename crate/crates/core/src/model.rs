//! Task models: a patch classifier and a byte-level language model, both
//! thin stacks of pre-norm residual blocks around the two attention
//! variants.
//!
//! Parameters live in the model; each forward pass binds them onto a tape
//! as leaves in one canonical walk order. Everything that enumerates
//! parameters (optimizer state, checkpoints, gradient reduction, binding)
//! relies on that order being identical, so all of it goes through
//! `visit_params`.

use crate::attention::{causal_mask, matched_dims, AttentionVariant, AttnVars, AttnWeights};
use crate::data::Sample;
use crate::dtype::Element;
use crate::error::{Error, Result};
use crate::nn::{Embedding, GluFfn, GluFfnVars, LayerNorm, LayerNormVars, Linear};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classifier {
        image_dim: usize,
        channels: usize,
        patch: usize,
        n_classes: usize,
    },
    Lm {
        vocab: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub task: TaskKind,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_hidden: usize,
    pub variant: AttentionVariant,
    /// Normalize once more after the last block (off by default; the
    /// pre-norm blocks already keep activations in range at these depths).
    pub final_layer_norm: bool,
    /// Longest language-model sequence; sizes the position table.
    pub max_seq_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        matched_dims(self.d_model, self.n_heads, self.variant)?;
        if self.n_layers == 0 {
            return Err(Error::invalid("model needs at least one block"));
        }
        if self.ffn_hidden == 0 {
            return Err(Error::invalid("ffn_hidden must be nonzero"));
        }
        match self.task {
            TaskKind::Classifier {
                image_dim,
                channels,
                patch,
                n_classes,
            } => {
                if patch == 0 || image_dim % patch != 0 {
                    return Err(Error::invalid(format!(
                        "patch {patch} must divide image_dim {image_dim}"
                    )));
                }
                if channels == 0 {
                    return Err(Error::invalid("images need at least one channel"));
                }
                if n_classes < 2 {
                    return Err(Error::invalid("classification needs at least two classes"));
                }
            }
            TaskKind::Lm { vocab } => {
                if vocab < 2 {
                    return Err(Error::invalid(
                        "language model needs a vocabulary of at least two",
                    ));
                }
                if self.max_seq_len < 1 {
                    return Err(Error::invalid("max_seq_len must be at least 1"));
                }
            }
        }
        Ok(())
    }

    /// Sequence length the model sees: patch count for images, up to
    /// `max_seq_len` for text.
    pub fn seq_len(&self) -> usize {
        match self.task {
            TaskKind::Classifier {
                image_dim, patch, ..
            } => (image_dim / patch) * (image_dim / patch),
            TaskKind::Lm { .. } => self.max_seq_len,
        }
    }

    pub fn patch_dim(&self) -> Option<usize> {
        match self.task {
            TaskKind::Classifier {
                channels, patch, ..
            } => Some(patch * patch * channels),
            TaskKind::Lm { .. } => None,
        }
    }

    pub fn output_classes(&self) -> usize {
        match self.task {
            TaskKind::Classifier { n_classes, .. } => n_classes,
            TaskKind::Lm { vocab } => vocab,
        }
    }
}

#[derive(Debug, Clone)]
enum InputEmbed<T: Element> {
    Patch(Linear<T>),
    Token(Embedding<T>),
}

#[derive(Debug, Clone)]
pub struct Block<T: Element> {
    pub ln1: LayerNorm<T>,
    pub attn: AttnWeights<T>,
    pub ln2: LayerNorm<T>,
    pub ffn: GluFfn<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub ln1: LayerNormVars,
    pub attn: AttnVars,
    pub ln2: LayerNormVars,
    pub ffn: GluFfnVars,
}

impl<T: Element> Block<T> {
    fn init(prefix: &str, config: &ModelConfig, seed: u64) -> Result<Block<T>> {
        Ok(Block {
            ln1: LayerNorm::init(format!("{prefix}.ln1"), config.d_model),
            attn: AttnWeights::init(
                &format!("{prefix}.attn"),
                config.d_model,
                config.n_heads,
                config.variant,
                seed,
            )?,
            ln2: LayerNorm::init(format!("{prefix}.ln2"), config.d_model),
            ffn: GluFfn::init(
                &format!("{prefix}.ffn"),
                config.d_model,
                config.ffn_hidden,
                seed,
            ),
        })
    }

    /// Pre-norm residual: x + attn(ln(x)), then x + ffn(ln(x)).
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: BlockVars,
        x: Var,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let normed = LayerNorm::forward(tape, vars.ln1, x)?;
        let attended = self.attn.forward(tape, vars.attn, normed, mask)?;
        let x = tape.add(x, attended)?;
        let normed = LayerNorm::forward(tape, vars.ln2, x)?;
        let fed = GluFfn::forward(tape, vars.ffn, normed)?;
        tape.add(x, fed)
    }
}

/// Names and weight-decay eligibility, in canonical walk order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamMeta {
    pub name: String,
    pub decay: bool,
}

/// Tape handles for every parameter, in canonical walk order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

/// Loss and prediction tallies for one sample.
pub struct SampleEval {
    pub loss: Var,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone)]
pub struct Model<T: Element> {
    config: ModelConfig,
    embed: InputEmbed<T>,
    pos: Embedding<T>,
    blocks: Vec<Block<T>>,
    final_ln: Option<LayerNorm<T>>,
    head: Linear<T>,
}

impl<T: Element> Model<T> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Model<T>> {
        config.validate()?;
        let d = config.d_model;
        let embed = match config.task {
            TaskKind::Classifier { .. } => InputEmbed::Patch(Linear::init(
                "embed.patch",
                config.patch_dim().unwrap(),
                d,
                seed,
            )),
            TaskKind::Lm { vocab } => {
                InputEmbed::Token(Embedding::init("embed.token", vocab, d, seed))
            }
        };
        let pos = Embedding::init("embed.pos", config.seq_len(), d, seed);
        let blocks = (0..config.n_layers)
            .map(|i| Block::init(&format!("block{i}"), config, seed))
            .collect::<Result<Vec<_>>>()?;
        let final_ln = config
            .final_layer_norm
            .then(|| LayerNorm::init("final_ln", d));
        let head = Linear::init("head", d, config.output_classes(), seed);
        Ok(Model {
            config: *config,
            embed,
            pos,
            blocks,
            final_ln,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    // ── canonical parameter walk ────────────────────────────────────

    /// Visits every parameter as (name, decays, tensor). Layer norms and
    /// embedding tables are exempt from weight decay; matrices decay.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, bool, &Tensor<T>)) {
        match &self.embed {
            InputEmbed::Patch(lin) => f(&lin.name, true, &lin.weight),
            InputEmbed::Token(emb) => f(&emb.name, false, &emb.table),
        }
        f(&self.pos.name, false, &self.pos.table);
        for b in &self.blocks {
            f(&format!("{}.gain", b.ln1.name), false, &b.ln1.gain);
            f(&format!("{}.shift", b.ln1.name), false, &b.ln1.shift);
            f(&b.attn.w_q.name, true, &b.attn.w_q.weight);
            f(&b.attn.w_k.name, true, &b.attn.w_k.weight);
            f(&b.attn.w_v.name, true, &b.attn.w_v.weight);
            f(&b.attn.w_o.name, true, &b.attn.w_o.weight);
            f(&format!("{}.gain", b.ln2.name), false, &b.ln2.gain);
            f(&format!("{}.shift", b.ln2.name), false, &b.ln2.shift);
            f(&b.ffn.expand.name, true, &b.ffn.expand.weight);
            f(&b.ffn.contract.name, true, &b.ffn.contract.weight);
        }
        if let Some(ln) = &self.final_ln {
            f(&format!("{}.gain", ln.name), false, &ln.gain);
            f(&format!("{}.shift", ln.name), false, &ln.shift);
        }
        f(&self.head.name, true, &self.head.weight);
    }

    /// Mutable twin of [`Model::visit_params`]; must walk the same order.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, bool, &mut Tensor<T>)) {
        match &mut self.embed {
            InputEmbed::Patch(lin) => f(&lin.name, true, &mut lin.weight),
            InputEmbed::Token(emb) => f(&emb.name, false, &mut emb.table),
        }
        f(&self.pos.name, false, &mut self.pos.table);
        for b in &mut self.blocks {
            f(&format!("{}.gain", b.ln1.name), false, &mut b.ln1.gain);
            f(&format!("{}.shift", b.ln1.name), false, &mut b.ln1.shift);
            f(&b.attn.w_q.name, true, &mut b.attn.w_q.weight);
            f(&b.attn.w_k.name, true, &mut b.attn.w_k.weight);
            f(&b.attn.w_v.name, true, &mut b.attn.w_v.weight);
            f(&b.attn.w_o.name, true, &mut b.attn.w_o.weight);
            f(&format!("{}.gain", b.ln2.name), false, &mut b.ln2.gain);
            f(&format!("{}.shift", b.ln2.name), false, &mut b.ln2.shift);
            f(&b.ffn.expand.name, true, &mut b.ffn.expand.weight);
            f(&b.ffn.contract.name, true, &mut b.ffn.contract.weight);
        }
        if let Some(ln) = &mut self.final_ln {
            f(&format!("{}.gain", ln.name), false, &mut ln.gain);
            f(&format!("{}.shift", ln.name), false, &mut ln.shift);
        }
        f(&self.head.name, true, &mut self.head.weight);
    }

    pub fn param_meta(&self) -> Vec<ParamMeta> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, decay, _| {
            out.push(ParamMeta {
                name: name.to_string(),
                decay,
            })
        });
        out
    }

    pub fn param_tensors(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, _, t| out.push(t.clone()));
        out
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, _, t| out.push(t.shape().to_vec()));
        out
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, _, t| n += t.numel());
        n
    }

    /// Creates one leaf per parameter, in walk order.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        let mut vars = Vec::new();
        self.visit_params(&mut |_, _, t| {
            // leaf() needs &mut tape, which the closure can't also borrow;
            // clone the tensors first, then push leaves.
            vars.push(t.clone());
        });
        let vars = vars.into_iter().map(|t| tape.leaf(t, true)).collect();
        BoundParams { vars }
    }

    /// Logits for one sample, through bound parameters: one row per
    /// predicted position (a single row for the classifier, one per
    /// context position for the language model).
    pub fn logits_with(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        sample: &Sample<T>,
    ) -> Result<Var> {
        let mut cursor = bound.vars.iter().copied();
        let mut next = move || cursor.next().expect("bound parameter walk out of sync");
        let embed_var = next();
        let pos_var = next();
        let mut block_vars = Vec::with_capacity(self.blocks.len());
        for _ in &self.blocks {
            block_vars.push(BlockVars {
                ln1: LayerNormVars {
                    gain: next(),
                    shift: next(),
                },
                attn: AttnVars {
                    w_q: next(),
                    w_k: next(),
                    w_v: next(),
                    w_o: next(),
                },
                ln2: LayerNormVars {
                    gain: next(),
                    shift: next(),
                },
                ffn: GluFfnVars {
                    expand: next(),
                    contract: next(),
                },
            });
        }
        let final_ln_vars = self.final_ln.as_ref().map(|_| LayerNormVars {
            gain: next(),
            shift: next(),
        });
        let head_var = next();

        match (&self.config.task, sample) {
            (TaskKind::Classifier { .. }, Sample::Image { patches, .. }) => {
                let x = tape.constant(patches.clone());
                let mut h = tape.matmul(x, embed_var)?;
                let seq = self.config.seq_len();
                let positions: Vec<usize> = (0..seq).collect();
                let pos = tape.gather_rows(pos_var, &positions)?;
                h = tape.add(h, pos)?;
                for (b, vars) in self.blocks.iter().zip(&block_vars) {
                    h = b.forward(tape, *vars, h, None)?;
                }
                if let Some(vars) = final_ln_vars {
                    h = LayerNorm::forward(tape, vars, h)?;
                }
                let pooled = tape.mean_rows(h)?;
                tape.matmul(pooled, head_var)
            }
            (TaskKind::Lm { vocab }, Sample::Text { tokens }) => {
                if tokens.len() < 2 {
                    return Err(Error::invalid(
                        "text sample needs at least two tokens (context and target)",
                    ));
                }
                let n = tokens.len() - 1;
                if n > self.config.max_seq_len {
                    return Err(Error::invalid(format!(
                        "sequence of {n} tokens exceeds max_seq_len {}",
                        self.config.max_seq_len
                    )));
                }
                for &t in tokens {
                    if t >= *vocab {
                        return Err(Error::IndexOutOfRange {
                            what: "token",
                            index: t,
                            size: *vocab,
                        });
                    }
                }
                let input = &tokens[..n];
                let mut h = tape.gather_rows(embed_var, input)?;
                let positions: Vec<usize> = (0..n).collect();
                let pos = tape.gather_rows(pos_var, &positions)?;
                h = tape.add(h, pos)?;
                let mask = causal_mask::<T>(n);
                for (b, vars) in self.blocks.iter().zip(&block_vars) {
                    h = b.forward(tape, *vars, h, Some(&mask))?;
                }
                if let Some(vars) = final_ln_vars {
                    h = LayerNorm::forward(tape, vars, h)?;
                }
                tape.matmul(h, head_var)
            }
            (task, _) => Err(Error::invalid(format!(
                "sample kind does not match task {task:?}"
            ))),
        }
    }

    /// Loss and accuracy tallies for one sample, through bound parameters.
    /// Reads all values from the tape, so it also serves finite-difference
    /// probes of any parameter.
    pub fn loss_with(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        sample: &Sample<T>,
    ) -> Result<SampleEval> {
        let logits = self.logits_with(tape, bound, sample)?;
        match (&self.config.task, sample) {
            (TaskKind::Classifier { n_classes, .. }, Sample::Image { label, .. }) => {
                if *label >= *n_classes {
                    return Err(Error::IndexOutOfRange {
                        what: "class label",
                        index: *label,
                        size: *n_classes,
                    });
                }
                let loss = tape.cross_entropy(logits, &[*label])?;
                let correct = (argmax(tape.value(logits).data()) == *label) as usize;
                Ok(SampleEval {
                    loss,
                    correct,
                    total: 1,
                })
            }
            (TaskKind::Lm { vocab }, Sample::Text { tokens }) => {
                let targets = &tokens[1..];
                let loss = tape.cross_entropy(logits, targets)?;
                let v = tape.value(logits);
                let mut correct = 0;
                for (i, &t) in targets.iter().enumerate() {
                    if argmax(&v.data()[i * *vocab..(i + 1) * *vocab]) == t {
                        correct += 1;
                    }
                }
                Ok(SampleEval {
                    loss,
                    correct,
                    total: targets.len(),
                })
            }
            (task, _) => Err(Error::invalid(format!(
                "sample kind does not match task {task:?}"
            ))),
        }
    }

    /// Binds parameters and evaluates one sample on a fresh region of the
    /// tape.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape<T>,
        sample: &Sample<T>,
    ) -> Result<(BoundParams, SampleEval)> {
        let bound = self.bind(tape);
        let eval = self.loss_with(tape, &bound, sample)?;
        Ok((bound, eval))
    }

    /// Forward multiply-accumulate estimate for one sample at sequence
    /// length n, counting each [m x k][k x n] product as 2*m*k*n.
    pub fn flop_estimate(&self) -> u64 {
        let n = self.config.seq_len() as u64;
        let d = self.config.d_model as u64;
        let dims = self.blocks[0].attn.dims;
        let (v_out, inner) = (dims.v_proj_out as u64, dims.attn_inner as u64);
        let h = self.config.ffn_hidden as u64;
        let mut total = 0u64;
        if let Some(pd) = self.config.patch_dim() {
            total += 2 * n * pd as u64 * d;
        }
        for _ in &self.blocks {
            total += 2 * n * d * d * 2; // queries, keys
            total += 2 * n * d * v_out; // values
            total += 2 * n * n * d; // scores across heads
            total += 2 * n * n * inner; // attention-weighted values
            total += 2 * n * inner * d; // output projection
            total += 2 * n * d * (2 * h) + 2 * n * h * d; // ffn
        }
        let out_rows = match self.config.task {
            TaskKind::Classifier { .. } => 1,
            TaskKind::Lm { .. } => n,
        };
        total += 2 * out_rows * d * self.config.output_classes() as u64;
        total
    }
}

/// First index of the largest value; ties break to the lowest index.
pub fn argmax<T: Element>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
