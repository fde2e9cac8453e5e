//! Named gradient-check suites over the op set, the attention variants,
//! and the full models.
//!
//! Reductions that feed the checks multiply by a random constant before
//! summing where a plain mean would have a structurally zero gradient
//! (softmax's gradient annihilates constant upstream signals row-wise).

use crate::attention::{causal_mask, AttentionVariant, AttnVars, AttnWeights};
use crate::data::{synth_images, Sample};
use crate::dtype::Element;
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, GradCheckReport, LossBuilder, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::model::{BoundParams, Model, ModelConfig, TaskKind};
use crate::nn::glu_packed;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Attention,
    Model,
    All,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Ops => "ops",
            Scope::Attention => "attention",
            Scope::Model => "model",
            Scope::All => "all",
        }
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scope> {
        match s {
            "ops" => Ok(Scope::Ops),
            "attention" => Ok(Scope::Attention),
            "model" => Ok(Scope::Model),
            "all" => Ok(Scope::All),
            other => Err(Error::invalid(format!(
                "unknown check scope {other:?} (expected ops, attention, model, or all)"
            ))),
        }
    }
}

type BuildFn =
    Box<dyn Fn(&mut crate::tape::Tape<f64>, &[crate::tape::Var]) -> Result<crate::tape::Var>>;

struct Check {
    name: String,
    inputs: Vec<(String, Tensor<f64>)>,
    build: BuildFn,
}

fn uniform(rng: &mut Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::rand_uniform(shape, lo, hi, rng)
}

/// Uniform magnitudes in [0.1, 1.5] with random signs: keeps every
/// coordinate a safe distance from relu's kink at zero, where central
/// differences straddle the non-differentiable point.
fn kink_free(rng: &mut Rng, n: usize) -> Tensor<f64> {
    let data = (0..n)
        .map(|_| {
            let mag = rng.uniform(0.1, 1.5);
            if rng.below(2) == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(vec![n], data).unwrap()
}

fn ops_checks(seed: u64) -> Vec<Check> {
    let mut checks: Vec<Check> = Vec::new();
    let mut add = |name: &str, inputs: Vec<(String, Tensor<f64>)>, build: BuildFn| {
        checks.push(Check {
            name: format!("ops.{name}"),
            inputs,
            build,
        });
    };
    let rng_for = |name: &str| Rng::for_name(seed, &format!("check.ops.{name}"));

    {
        let mut rng = rng_for("matmul");
        add(
            "matmul",
            vec![
                ("x".into(), uniform(&mut rng, vec![3, 4], -1.0, 1.0)),
                ("w".into(), uniform(&mut rng, vec![4, 5], -1.0, 1.0)),
            ],
            Box::new(|tape, v| {
                let y = tape.matmul(v[0], v[1])?;
                Ok(tape.mean(y))
            }),
        );
    }
    {
        let mut rng = rng_for("add_mul");
        add(
            "add_mul",
            vec![
                ("a".into(), uniform(&mut rng, vec![2, 6], -2.0, 2.0)),
                ("b".into(), uniform(&mut rng, vec![2, 6], -2.0, 2.0)),
            ],
            Box::new(|tape, v| {
                let prod = tape.mul(v[0], v[1])?;
                let y = tape.add(prod, v[0])?;
                Ok(tape.mean(y))
            }),
        );
    }
    {
        let mut rng = rng_for("mul_scalar");
        add(
            "mul_scalar",
            vec![("x".into(), uniform(&mut rng, vec![7], -3.0, 3.0))],
            Box::new(|tape, v| {
                let y = tape.mul_scalar(v[0], 1.7);
                Ok(tape.sum(y))
            }),
        );
    }
    {
        let mut rng = rng_for("relu");
        add(
            "relu",
            vec![("x".into(), kink_free(&mut rng, 40))],
            Box::new(|tape, v| {
                let y = tape.relu(v[0]);
                Ok(tape.mean(y))
            }),
        );
    }
    {
        let mut rng = rng_for("sigmoid");
        add(
            "sigmoid",
            vec![("x".into(), uniform(&mut rng, vec![3, 5], -4.0, 4.0))],
            Box::new(|tape, v| {
                let y = tape.sigmoid(v[0]);
                Ok(tape.mean(y))
            }),
        );
    }
    {
        let mut rng = rng_for("silu");
        add(
            "silu",
            vec![("x".into(), uniform(&mut rng, vec![3, 5], -4.0, 4.0))],
            Box::new(|tape, v| {
                let y = tape.silu(v[0]);
                Ok(tape.mean(y))
            }),
        );
    }
    {
        let mut rng = rng_for("glu_packed");
        add(
            "glu_packed",
            vec![("x".into(), uniform(&mut rng, vec![4, 8], -2.0, 2.0))],
            Box::new(|tape, v| {
                let y = glu_packed(tape, v[0])?;
                Ok(tape.mean(y))
            }),
        );
    }
    {
        let mut rng = rng_for("softmax");
        add(
            "softmax",
            vec![
                ("x".into(), uniform(&mut rng, vec![4, 7], -5.0, 5.0)),
                ("w".into(), uniform(&mut rng, vec![4, 7], -1.0, 1.0)),
            ],
            Box::new(|tape, v| {
                let p = tape.softmax_last(v[0], None)?;
                let y = tape.mul(p, v[1])?;
                Ok(tape.sum(y))
            }),
        );
    }
    {
        let mut rng = rng_for("softmax_masked");
        add(
            "softmax_masked",
            vec![
                ("x".into(), uniform(&mut rng, vec![3, 3], -5.0, 5.0)),
                ("w".into(), uniform(&mut rng, vec![3, 3], -1.0, 1.0)),
            ],
            Box::new(|tape, v| {
                let mask = causal_mask::<f64>(3);
                let p = tape.softmax_last(v[0], Some(&mask))?;
                let y = tape.mul(p, v[1])?;
                Ok(tape.sum(y))
            }),
        );
    }
    {
        let mut rng = rng_for("transpose_reshape");
        add(
            "transpose_reshape",
            vec![
                ("x".into(), uniform(&mut rng, vec![3, 4], -2.0, 2.0)),
                ("w".into(), uniform(&mut rng, vec![2, 6], -1.0, 1.0)),
            ],
            Box::new(|tape, v| {
                let t = tape.transpose(v[0])?;
                let r = tape.reshape(t, vec![2, 6])?;
                let y = tape.mul(r, v[1])?;
                Ok(tape.sum(y))
            }),
        );
    }
    {
        let mut rng = rng_for("slice_concat");
        add(
            "slice_concat",
            vec![
                ("x".into(), uniform(&mut rng, vec![3, 8], -2.0, 2.0)),
                ("w".into(), uniform(&mut rng, vec![3, 8], -1.0, 1.0)),
            ],
            Box::new(|tape, v| {
                let (lo, hi) = tape.split_half_last(v[0])?;
                let swapped = tape.concat_last(&[hi, lo])?;
                let y = tape.mul(swapped, v[1])?;
                Ok(tape.sum(y))
            }),
        );
    }
    {
        let mut rng = rng_for("mean_rows");
        add(
            "mean_rows",
            vec![
                ("x".into(), uniform(&mut rng, vec![5, 4], -2.0, 2.0)),
                ("w".into(), uniform(&mut rng, vec![1, 4], -1.0, 1.0)),
            ],
            Box::new(|tape, v| {
                let m = tape.mean_rows(v[0])?;
                let y = tape.mul(m, v[1])?;
                Ok(tape.sum(y))
            }),
        );
    }
    {
        // sum and mean appear in every builder as the terminal reduction;
        // this one makes each carry a non-unit upstream gradient.
        let mut rng = rng_for("sum_mean");
        add(
            "sum_mean",
            vec![
                ("x".into(), uniform(&mut rng, vec![3, 4], -2.0, 2.0)),
                ("y".into(), uniform(&mut rng, vec![2, 5], -2.0, 2.0)),
            ],
            Box::new(|tape, v| {
                let s = tape.sum(v[0]);
                let m = tape.mean(v[1]);
                tape.mul(s, m)
            }),
        );
    }
    {
        let mut rng = rng_for("gather_rows");
        add(
            "gather_rows",
            vec![
                ("table".into(), uniform(&mut rng, vec![6, 3], -2.0, 2.0)),
                ("w".into(), uniform(&mut rng, vec![4, 3], -1.0, 1.0)),
            ],
            Box::new(|tape, v| {
                // repeated index 2 exercises scatter accumulation
                let g = tape.gather_rows(v[0], &[0, 2, 2, 5])?;
                let y = tape.mul(g, v[1])?;
                Ok(tape.sum(y))
            }),
        );
    }
    {
        let mut rng = rng_for("layer_norm");
        add(
            "layer_norm",
            vec![
                ("x".into(), uniform(&mut rng, vec![4, 5], -3.0, 3.0)),
                ("gain".into(), uniform(&mut rng, vec![5], 0.5, 1.5)),
                ("shift".into(), uniform(&mut rng, vec![5], -0.5, 0.5)),
                ("w".into(), uniform(&mut rng, vec![4, 5], -1.0, 1.0)),
            ],
            Box::new(|tape, v| {
                let y = tape.layer_norm(v[0], v[1], v[2], crate::nn::LN_EPS)?;
                let weighted = tape.mul(y, v[3])?;
                Ok(tape.sum(weighted))
            }),
        );
    }
    {
        let mut rng = rng_for("cross_entropy");
        add(
            "cross_entropy",
            vec![("logits".into(), uniform(&mut rng, vec![5, 7], -3.0, 3.0))],
            Box::new(|tape, v| tape.cross_entropy(v[0], &[2, 0, 6, 3, 3])),
        );
    }
    checks
}

fn attention_checks(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for variant in AttentionVariant::ALL {
        for n_heads in [1usize, 2] {
            for masked in [false, true] {
                let name = format!(
                    "attention.{variant}.h{n_heads}{}",
                    if masked { ".causal" } else { "" }
                );
                let weights = AttnWeights::<f64>::init(&name, 6, n_heads, variant, seed)?;
                let mut rng = Rng::for_name(seed, &format!("check.{name}"));
                let n = 4;
                let inputs = vec![
                    ("x".to_string(), uniform(&mut rng, vec![n, 6], -1.0, 1.0)),
                    ("w_q".to_string(), weights.w_q.weight.clone()),
                    ("w_k".to_string(), weights.w_k.weight.clone()),
                    ("w_v".to_string(), weights.w_v.weight.clone()),
                    ("w_o".to_string(), weights.w_o.weight.clone()),
                    ("w".to_string(), uniform(&mut rng, vec![n, 6], -1.0, 1.0)),
                ];
                checks.push(Check {
                    name,
                    inputs,
                    build: Box::new(move |tape, v| {
                        let vars = AttnVars {
                            w_q: v[1],
                            w_k: v[2],
                            w_v: v[3],
                            w_o: v[4],
                        };
                        let mask = masked.then(|| causal_mask::<f64>(n));
                        let y = weights.forward(tape, vars, v[0], mask.as_ref())?;
                        let weighted = tape.mul(y, v[5])?;
                        Ok(tape.sum(weighted))
                    }),
                });
            }
        }
    }
    Ok(checks)
}

fn model_checks(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for variant in AttentionVariant::ALL {
        // classifier
        {
            let config = ModelConfig {
                task: TaskKind::Classifier {
                    image_dim: 4,
                    channels: 3,
                    patch: 2,
                    n_classes: 2,
                },
                d_model: 6,
                n_heads: 1,
                n_layers: 1,
                ffn_hidden: 4,
                variant,
                final_layer_norm: false,
                max_seq_len: 4,
            };
            let model = Model::<f64>::init(&config, seed)?;
            let sample = synth_images::<f64>(1, 4, 2, 2, seed)?.remove(0);
            checks.push(model_check(
                format!("model.classifier.{variant}"),
                model,
                sample,
            ));
        }
        // language model
        {
            let config = ModelConfig {
                task: TaskKind::Lm { vocab: 7 },
                d_model: 6,
                n_heads: 2,
                n_layers: 1,
                ffn_hidden: 4,
                variant,
                final_layer_norm: true,
                max_seq_len: 4,
            };
            let model = Model::<f64>::init(&config, seed)?;
            let sample = Sample::Text {
                tokens: vec![1, 3, 5, 2],
            };
            checks.push(model_check(format!("model.lm.{variant}"), model, sample));
        }
    }
    Ok(checks)
}

fn model_check(name: String, model: Model<f64>, sample: Sample<f64>) -> Check {
    let mut inputs = Vec::new();
    model.visit_params(&mut |pname, _, t| inputs.push((pname.to_string(), t.clone())));
    Check {
        name,
        inputs,
        build: Box::new(move |tape, v| {
            let bound = BoundParams { vars: v.to_vec() };
            let eval = model.loss_with(tape, &bound, &sample)?;
            Ok(eval.loss)
        }),
    }
}

fn checks_for(scope: Scope, seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    if matches!(scope, Scope::Ops | Scope::All) {
        checks.extend(ops_checks(seed));
    }
    if matches!(scope, Scope::Attention | Scope::All) {
        checks.extend(attention_checks(seed)?);
    }
    if matches!(scope, Scope::Model | Scope::All) {
        checks.extend(model_checks(seed)?);
    }
    Ok(checks)
}

/// Names of the checks a scope runs, in run order.
pub fn check_names(scope: Scope, seed: u64) -> Result<Vec<String>> {
    Ok(checks_for(scope, seed)?
        .into_iter()
        .map(|c| c.name)
        .collect())
}

/// Runs every check in the scope. A report is produced per check whether
/// it passes or fails; errors are reserved for broken check setups.
pub fn run_checks(scope: Scope, seed: u64) -> Result<Vec<GradCheckReport>> {
    checks_for(scope, seed)?
        .into_iter()
        .map(|check| {
            let inputs: Vec<(&str, Tensor<f64>)> = check
                .inputs
                .iter()
                .map(|(n, t)| (n.as_str(), t.clone()))
                .collect();
            let build: &LossBuilder = &*check.build;
            grad_check(&check.name, &inputs, build, DEFAULT_STEP, DEFAULT_TOLERANCE)
        })
        .collect()
}

/// True when every element is finite.
pub fn all_finite<T: Element>(t: &Tensor<T>) -> bool {
    t.data().iter().all(|v| v.is_finite())
}
