//! Layers: bias-free linear maps, embeddings, layer norm, and the gated
//! linear unit that both the attention value path and the feed-forward
//! blocks build on.
//!
//! Every layer draws its initial weights from a generator keyed by the
//! layer's name, so adding or reordering layers elsewhere in a model never
//! shifts another layer's initialization. Draws happen in f64 and are then
//! cast, so an f32 and an f64 model start from the same numbers.

use crate::dtype::Element;
use crate::error::Result;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;
const EMBED_STD: f64 = 0.02;

/// x * silu(gate), elementwise.
pub fn glu<T: Element>(tape: &mut Tape<T>, x: Var, gate: Var) -> Result<Var> {
    let s = tape.silu(gate);
    tape.mul(x, s)
}

/// GLU over a packed tensor: the first half of the last dimension carries
/// the values, the second half the gates. Output is half as wide.
pub fn glu_packed<T: Element>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let (value, gate) = tape.split_half_last(x)?;
    glu(tape, value, gate)
}

/// Bias-free linear map; weight is [d_in x d_out].
#[derive(Debug, Clone)]
pub struct Linear<T: Element> {
    pub name: String,
    pub weight: Tensor<T>,
}

impl<T: Element> Linear<T> {
    /// Uniform init on (-1/sqrt(d_in), 1/sqrt(d_in)).
    pub fn init(name: impl Into<String>, d_in: usize, d_out: usize, seed: u64) -> Linear<T> {
        let name = name.into();
        let mut rng = Rng::for_name(seed, &name);
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = Tensor::rand_uniform(vec![d_in, d_out], -bound, bound, &mut rng);
        Linear { name, weight }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Var {
        tape.leaf(self.weight.clone(), true)
    }

    pub fn forward(tape: &mut Tape<T>, weight: Var, x: Var) -> Result<Var> {
        tape.matmul(x, weight)
    }
}

/// Lookup table of [vocab x dim] rows.
#[derive(Debug, Clone)]
pub struct Embedding<T: Element> {
    pub name: String,
    pub table: Tensor<T>,
}

impl<T: Element> Embedding<T> {
    /// Normal init with standard deviation 0.02.
    pub fn init(name: impl Into<String>, vocab: usize, dim: usize, seed: u64) -> Embedding<T> {
        let name = name.into();
        let mut rng = Rng::for_name(seed, &name);
        let table = Tensor::rand_normal(vec![vocab, dim], 0.0, EMBED_STD, &mut rng);
        Embedding { name, table }
    }

    pub fn vocab(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Var {
        tape.leaf(self.table.clone(), true)
    }

    pub fn forward(tape: &mut Tape<T>, table: Var, indices: &[usize]) -> Result<Var> {
        tape.gather_rows(table, indices)
    }
}

/// Normalization over the last dimension with learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm<T: Element> {
    pub name: String,
    pub gain: Tensor<T>,
    pub shift: Tensor<T>,
}

/// Tape handles for one layer norm's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerNormVars {
    pub gain: Var,
    pub shift: Var,
}

impl<T: Element> LayerNorm<T> {
    pub fn init(name: impl Into<String>, dim: usize) -> LayerNorm<T> {
        LayerNorm {
            name: name.into(),
            gain: Tensor::full(vec![dim], T::ONE),
            shift: Tensor::zeros(vec![dim]),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> LayerNormVars {
        LayerNormVars {
            gain: tape.leaf(self.gain.clone(), true),
            shift: tape.leaf(self.shift.clone(), true),
        }
    }

    pub fn forward(tape: &mut Tape<T>, vars: LayerNormVars, x: Var) -> Result<Var> {
        tape.layer_norm(x, vars.gain, vars.shift, LN_EPS)
    }
}

/// Feed-forward block: expand to twice the hidden width, gate down to the
/// hidden width with a GLU, contract back to the model width.
#[derive(Debug, Clone)]
pub struct GluFfn<T: Element> {
    pub expand: Linear<T>,
    pub contract: Linear<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct GluFfnVars {
    pub expand: Var,
    pub contract: Var,
}

impl<T: Element> GluFfn<T> {
    pub fn init(prefix: &str, d_model: usize, hidden: usize, seed: u64) -> GluFfn<T> {
        GluFfn {
            expand: Linear::init(format!("{prefix}.expand"), d_model, 2 * hidden, seed),
            contract: Linear::init(format!("{prefix}.contract"), hidden, d_model, seed),
        }
    }

    pub fn hidden(&self) -> usize {
        self.contract.d_in()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> GluFfnVars {
        GluFfnVars {
            expand: self.expand.bind(tape),
            contract: self.contract.bind(tape),
        }
    }

    pub fn forward(tape: &mut Tape<T>, vars: GluFfnVars, x: Var) -> Result<Var> {
        let wide = tape.matmul(x, vars.expand)?;
        let gated = glu_packed(tape, wide)?;
        tape.matmul(gated, vars.contract)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, DEFAULT_STEP, DEFAULT_TOLERANCE};

    #[test]
    fn linear_init_bound_scales_with_fan_in() {
        let layer = Linear::<f64>::init("w", 64, 32, 1);
        let bound = 1.0 / 8.0;
        for &v in layer.weight.data() {
            assert!(v.abs() < bound);
        }
        assert_eq!(layer.weight.shape(), &[64, 32]);
    }

    #[test]
    fn init_depends_on_name_not_declaration_order() {
        let a1 = Linear::<f64>::init("a", 4, 4, 7);
        let _other = Linear::<f64>::init("b", 4, 4, 7);
        let a2 = Linear::<f64>::init("a", 4, 4, 7);
        assert!(a1.weight.bitwise_eq(&a2.weight));

        let b = Linear::<f64>::init("b", 4, 4, 7);
        assert!(!a1.weight.bitwise_eq(&b.weight));
    }

    #[test]
    fn f32_and_f64_init_share_the_stream() {
        let w32 = Linear::<f32>::init("w", 6, 6, 3);
        let w64 = Linear::<f64>::init("w", 6, 6, 3);
        for (a, b) in w32.weight.data().iter().zip(w64.weight.data()) {
            assert_eq!(*a, *b as f32);
        }
    }

    #[test]
    fn glu_known_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2], vec![2.0, 3.0]).unwrap());
        let g = tape.constant(Tensor::new(vec![2], vec![0.0, 10.0]).unwrap());
        let y = glu(&mut tape, x, g).unwrap();
        let v = tape.value(y).data();
        // silu(0) = 0; 3 * silu(10) = 29.998638063938928
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 29.998638063938928).abs() < 1e-12);
    }

    #[test]
    fn saturated_gate_acts_linearly() {
        // At gate 30, sigmoid is within 1e-13 of one, so silu(30) is 30 to
        // better than 1e-9 relative and the GLU reduces to x * gate.
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3], vec![1.5, -2.0, 0.25]).unwrap());
        let g = tape.constant(Tensor::full(vec![3], 30.0));
        let y = glu(&mut tape, x, g).unwrap();
        for (out, raw) in tape.value(y).data().iter().zip([1.5, -2.0, 0.25]) {
            assert!((out / (raw * 30.0) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn glu_packed_halves_width() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(vec![5, 8]));
        let y = glu_packed(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[5, 4]);
    }

    #[test]
    fn ffn_shapes_and_gradients() {
        let ffn = GluFfn::<f64>::init("ffn", 6, 4, 11);
        assert_eq!(ffn.expand.weight.shape(), &[6, 8]);
        assert_eq!(ffn.contract.weight.shape(), &[4, 6]);

        let mut rng = Rng::from_seed(12);
        let x = Tensor::rand_uniform(vec![3, 6], -1.0, 1.0, &mut rng);
        let report = grad_check(
            "ffn",
            &[
                ("x", x),
                ("expand", ffn.expand.weight.clone()),
                ("contract", ffn.contract.weight.clone()),
            ],
            &|tape, vars| {
                let ffn_vars = GluFfnVars {
                    expand: vars[1],
                    contract: vars[2],
                };
                let y = GluFfn::forward(tape, ffn_vars, vars[0])?;
                Ok(tape.mean(y))
            },
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let ln = LayerNorm::<f64>::init("ln", 4);
        let mut tape = Tape::new();
        let vars = ln.bind(&mut tape);
        let x = tape.constant(
            Tensor::new(vec![2, 4], vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]).unwrap(),
        );
        let y = LayerNorm::forward(&mut tape, vars, x).unwrap();
        for i in 0..2 {
            let row = &tape.value(y).data()[i * 4..(i + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4, "variance {var}");
        }
    }
}
