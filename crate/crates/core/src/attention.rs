//! Multi-head self-attention in two variants with identical parameter
//! budgets.
//!
//! The baseline projects values to `d_model` and back. The gated variant
//! widens the value projection to `4*d_model/3`, applies a GLU that halves
//! it to `2*d_model/3`, and contracts from there. Both value paths then
//! cost `2*d_model^2` weights:
//!
//! ```text
//! baseline: d*d         + d*d         = 2*d^2
//! gated:    d*(4*d/3)   + (2*d/3)*d   = 2*d^2
//! ```
//!
//! so any quality difference is attributable to the gate, not to capacity.
//! The query and key paths are identical in both variants. The gate applies
//! to the full widened value projection before it is split across heads.

use crate::dtype::Element;
use crate::error::{Error, Result};
use crate::nn::{glu_packed, Linear};
use crate::tape::{Tape, Var, MASK_SENTINEL};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionVariant {
    Baseline,
    Glu,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 2] = [AttentionVariant::Baseline, AttentionVariant::Glu];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionVariant::Baseline => "baseline",
            AttentionVariant::Glu => "glu",
        }
    }
}

impl std::fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<AttentionVariant> {
        match s {
            "baseline" => Ok(AttentionVariant::Baseline),
            "glu" => Ok(AttentionVariant::Glu),
            other => Err(Error::invalid(format!(
                "unknown attention variant {other:?} (expected baseline or glu)"
            ))),
        }
    }
}

/// Widths derived from `(d_model, n_heads, variant)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionDims {
    /// Per-head width of the query and key paths: d_model / n_heads.
    pub head_dim: usize,
    /// Output width of the value projection (pre-gate).
    pub v_proj_out: usize,
    /// Width entering the output projection (post-gate).
    pub attn_inner: usize,
    /// Per-head width of the value path: attn_inner / n_heads.
    pub per_head_v: usize,
}

/// Validates a width/head combination and returns the derived dims.
///
/// Both variants need `n_heads` to divide `d_model`. The gated variant
/// additionally needs `d_model` divisible by 3 (the value projection
/// widens to 4/3 of it) and `n_heads` to divide the gated width
/// `2*d_model/3`.
pub fn matched_dims(
    d_model: usize,
    n_heads: usize,
    variant: AttentionVariant,
) -> Result<AttentionDims> {
    if d_model == 0 || n_heads == 0 {
        return Err(Error::invalid(format!(
            "attention needs nonzero dimensions, got d_model {d_model} with {n_heads} heads"
        )));
    }
    if !d_model.is_multiple_of(n_heads) {
        return Err(Error::invalid(format!(
            "n_heads {n_heads} must divide d_model {d_model}"
        )));
    }
    let head_dim = d_model / n_heads;
    match variant {
        AttentionVariant::Baseline => Ok(AttentionDims {
            head_dim,
            v_proj_out: d_model,
            attn_inner: d_model,
            per_head_v: head_dim,
        }),
        AttentionVariant::Glu => {
            if !d_model.is_multiple_of(3) {
                return Err(Error::invalid(format!(
                    "gated attention widens the value projection to 4*d_model/3, \
                     so d_model must be divisible by 3; got {d_model}"
                )));
            }
            let attn_inner = 2 * d_model / 3;
            if !attn_inner.is_multiple_of(n_heads) {
                return Err(Error::invalid(format!(
                    "n_heads {n_heads} must divide the gated value width \
                     2*d_model/3 = {attn_inner}"
                )));
            }
            Ok(AttentionDims {
                head_dim,
                v_proj_out: 2 * attn_inner,
                attn_inner,
                per_head_v: attn_inner / n_heads,
            })
        }
    }
}

/// Weight count of one attention block (queries, keys, values, output).
pub fn param_count(d_model: usize, n_heads: usize, variant: AttentionVariant) -> Result<usize> {
    let dims = matched_dims(d_model, n_heads, variant)?;
    Ok(d_model * d_model * 2 + d_model * dims.v_proj_out + dims.attn_inner * d_model)
}

/// Additive causal mask for a sequence of length n: position i may attend
/// to positions j <= i; the rest carry the finite stand-in for -inf.
pub fn causal_mask<T: Element>(n: usize) -> Tensor<T> {
    let sentinel = T::from_f64(MASK_SENTINEL);
    let mut data = vec![T::ZERO; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            data[i * n + j] = sentinel;
        }
    }
    Tensor::new(vec![n, n], data).unwrap()
}

/// One attention block's weights.
#[derive(Debug, Clone)]
pub struct AttnWeights<T: Element> {
    pub variant: AttentionVariant,
    pub n_heads: usize,
    pub dims: AttentionDims,
    pub w_q: Linear<T>,
    pub w_k: Linear<T>,
    pub w_v: Linear<T>,
    pub w_o: Linear<T>,
}

/// Tape handles for one attention block's weights.
#[derive(Debug, Clone, Copy)]
pub struct AttnVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
}

impl<T: Element> AttnWeights<T> {
    pub fn init(
        prefix: &str,
        d_model: usize,
        n_heads: usize,
        variant: AttentionVariant,
        seed: u64,
    ) -> Result<AttnWeights<T>> {
        let dims = matched_dims(d_model, n_heads, variant)?;
        Ok(AttnWeights {
            variant,
            n_heads,
            dims,
            w_q: Linear::init(format!("{prefix}.w_q"), d_model, d_model, seed),
            w_k: Linear::init(format!("{prefix}.w_k"), d_model, d_model, seed),
            w_v: Linear::init(format!("{prefix}.w_v"), d_model, dims.v_proj_out, seed),
            w_o: Linear::init(format!("{prefix}.w_o"), dims.attn_inner, d_model, seed),
        })
    }

    pub fn d_model(&self) -> usize {
        self.w_q.d_in()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> AttnVars {
        AttnVars {
            w_q: self.w_q.bind(tape),
            w_k: self.w_k.bind(tape),
            w_v: self.w_v.bind(tape),
            w_o: self.w_o.bind(tape),
        }
    }

    /// Self-attention over x: [n x d_model] -> [n x d_model]. The mask, if
    /// given, is added to every head's scores.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: AttnVars,
        x: Var,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let q = tape.matmul(x, vars.w_q)?;
        let k = tape.matmul(x, vars.w_k)?;
        let v = tape.matmul(x, vars.w_v)?;
        let v = match self.variant {
            AttentionVariant::Baseline => v,
            AttentionVariant::Glu => glu_packed(tape, v)?,
        };

        let dims = self.dims;
        let scale = T::from_f64(1.0 / (dims.head_dim as f64).sqrt());
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = tape.slice_cols(q, h * dims.head_dim, dims.head_dim)?;
            let kh = tape.slice_cols(k, h * dims.head_dim, dims.head_dim)?;
            let vh = tape.slice_cols(v, h * dims.per_head_v, dims.per_head_v)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.mul_scalar(scores, scale);
            let attn = tape.softmax_last(scores, mask)?;
            heads.push(tape.matmul(attn, vh)?);
        }
        let merged = tape.concat_last(&heads)?;
        tape.matmul(merged, vars.w_o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_dims() {
        let dims = matched_dims(384, 8, AttentionVariant::Baseline).unwrap();
        assert_eq!(dims.head_dim, 48);
        assert_eq!(dims.v_proj_out, 384);
        assert_eq!(dims.attn_inner, 384);
        assert_eq!(dims.per_head_v, 48);
    }

    #[test]
    fn gated_dims_widen_then_halve() {
        let dims = matched_dims(384, 8, AttentionVariant::Glu).unwrap();
        assert_eq!(dims.head_dim, 48);
        assert_eq!(dims.v_proj_out, 512);
        assert_eq!(dims.attn_inner, 256);
        assert_eq!(dims.per_head_v, 32);
    }

    #[test]
    fn param_budgets_match() {
        for (d, h) in [(6, 1), (6, 2), (12, 4), (48, 4), (96, 8), (384, 8)] {
            let base = param_count(d, h, AttentionVariant::Baseline).unwrap();
            let glu = param_count(d, h, AttentionVariant::Glu).unwrap();
            assert_eq!(base, glu, "budget mismatch at d={d} h={h}");
            assert_eq!(base, 4 * d * d);
        }
    }

    #[test]
    fn indivisible_width_is_rejected_with_the_rule() {
        let err = matched_dims(8, 1, AttentionVariant::Glu).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("divisible by 3"), "got: {msg}");

        assert!(matched_dims(8, 1, AttentionVariant::Baseline).is_ok());

        let err = matched_dims(12, 3, AttentionVariant::Glu).unwrap_err();
        assert!(err.to_string().contains("2*d_model/3"), "got: {err}");
    }

    #[test]
    fn causal_mask_shape() {
        let m = causal_mask::<f64>(3);
        let s = MASK_SENTINEL;
        assert_eq!(m.data(), &[0.0, s, s, 0.0, 0.0, s, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_output_shape_both_variants() {
        for variant in AttentionVariant::ALL {
            let attn = AttnWeights::<f64>::init("attn", 12, 2, variant, 5).unwrap();
            let mut tape = Tape::new();
            let vars = attn.bind(&mut tape);
            let mut rng = crate::rng::Rng::from_seed(8);
            let x = tape.constant(Tensor::rand_uniform(vec![7, 12], -1.0, 1.0, &mut rng));
            let y = attn.forward(&mut tape, vars, x, None).unwrap();
            assert_eq!(tape.value(y).shape(), &[7, 12]);
        }
    }
}
