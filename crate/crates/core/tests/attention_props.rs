//! Cross-cutting attention properties: parameter parity across widths,
//! bitwise causality under the mask, and a from-scratch oracle for the
//! gated variant at the smallest width.

use glua_core::attention::{causal_mask, matched_dims, param_count, AttentionVariant, AttnWeights};
use glua_core::{Rng, Tape, Tensor};

#[test]
fn parity_holds_across_the_width_lattice() {
    for d in [6usize, 12, 48, 96, 384] {
        let mut combos = 0;
        for h in 1..=d {
            let (Ok(b), Ok(g)) = (
                param_count(d, h, AttentionVariant::Baseline),
                param_count(d, h, AttentionVariant::Glu),
            ) else {
                continue;
            };
            assert_eq!(b, g, "parity broken at d_model={d}, n_heads={h}");
            combos += 1;
        }
        assert!(combos >= 2, "width {d} admits too few head counts");
    }
    assert_eq!(
        param_count(384, 8, AttentionVariant::Baseline).unwrap(),
        589_824
    );
    assert_eq!(param_count(384, 8, AttentionVariant::Glu).unwrap(), 589_824);
}

fn random_rows(rng: &mut Rng, n: usize, d: usize) -> Tensor<f32> {
    let data = (0..n * d).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
    Tensor::new(vec![n, d], data).unwrap()
}

fn forward_f32(weights: &AttnWeights<f32>, x: &Tensor<f32>, n: usize) -> Vec<f32> {
    let mut tape = Tape::new();
    let vars = weights.bind(&mut tape);
    let xv = tape.leaf(x.clone(), false);
    let mask = causal_mask::<f32>(n);
    let out = weights.forward(&mut tape, vars, xv, Some(&mask)).unwrap();
    tape.value(out).data().to_vec()
}

/// Under the causal mask, output row i only sees input rows 0..=i, so
/// feeding a truncated context reproduces the leading rows bit for bit.
#[test]
fn masked_forward_matches_truncated_context_bitwise() {
    let d = 12;
    let n = 8;
    for variant in AttentionVariant::ALL {
        let weights = AttnWeights::<f32>::init("attn", d, 2, variant, 42).unwrap();
        let mut rng = Rng::for_name(7, "truncation.x");
        let x = random_rows(&mut rng, n, d);
        let full = forward_f32(&weights, &x, n);
        for t in 1..=n {
            let head = Tensor::new(vec![t, d], x.data()[..t * d].to_vec()).unwrap();
            let truncated = forward_f32(&weights, &head, t);
            assert_eq!(
                full[..t * d].to_vec(),
                truncated,
                "{variant}: first {t} rows diverge"
            );
        }
    }
}

fn hand_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0f64;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// The whole gated path recomputed with nothing but loops: projections,
/// value/gate split, silu gating, scaled scores, row softmax, context,
/// output projection.
#[test]
fn hand_rolled_glu_attention_oracle() {
    let d = 6;
    let n = 4;
    let dims = matched_dims(d, 1, AttentionVariant::Glu).unwrap();
    assert_eq!((dims.v_proj_out, dims.attn_inner), (8, 4));

    let weights = AttnWeights::<f64>::init("attn", d, 1, AttentionVariant::Glu, 3).unwrap();
    let mut rng = Rng::for_name(5, "oracle.x");
    let x: Vec<f64> = (0..n * d).map(|_| rng.uniform(-1.0, 1.0)).collect();

    let q = hand_matmul(&x, weights.w_q.weight.data(), n, d, d);
    let k = hand_matmul(&x, weights.w_k.weight.data(), n, d, d);
    let v_raw = hand_matmul(&x, weights.w_v.weight.data(), n, d, dims.v_proj_out);
    let half = dims.attn_inner;
    let mut v = vec![0f64; n * half];
    for i in 0..n {
        for j in 0..half {
            let value = v_raw[i * dims.v_proj_out + j];
            let gate = v_raw[i * dims.v_proj_out + half + j];
            let silu = gate / (1.0 + (-gate).exp());
            v[i * half + j] = value * silu;
        }
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut probs = vec![0f64; n * n];
    for i in 0..n {
        let row: Vec<f64> = (0..n)
            .map(|j| (0..d).map(|p| q[i * d + p] * k[j * d + p]).sum::<f64>() * scale)
            .collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for j in 0..n {
            probs[i * n + j] = exps[j] / sum;
        }
    }
    let ctx = hand_matmul(&probs, &v, n, n, half);
    let expected = hand_matmul(&ctx, weights.w_o.weight.data(), n, half, d);

    let mut tape = Tape::new();
    let vars = weights.bind(&mut tape);
    let xv = tape.leaf(Tensor::new(vec![n, d], x.clone()).unwrap(), false);
    let out = weights.forward(&mut tape, vars, xv, None).unwrap();
    let got = tape.value(out).data().to_vec();

    for (i, (a, b)) in expected.iter().zip(&got).enumerate() {
        assert!(
            (a - b).abs() <= 1e-12,
            "element {i}: hand {a} vs forward {b}"
        );
    }
}
