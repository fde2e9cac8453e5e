//! Finite-difference sweeps across seeds. The unit tests pin each
//! backward rule once; these runs shake out input-dependent slips (kinks,
//! cancellation, index bugs that only certain shapes reach).

use glua_core::verify::{check_names, run_checks, Scope};

fn assert_all_pass(scope: Scope, seed: u64) {
    for report in run_checks(scope, seed).unwrap() {
        assert!(report.passed(), "seed {seed}: {report}");
    }
}

#[test]
fn every_op_across_twenty_seeds() {
    for seed in 0..20 {
        assert_all_pass(Scope::Ops, seed);
    }
}

#[test]
fn attention_both_variants_across_seeds() {
    for seed in 0..10 {
        assert_all_pass(Scope::Attention, seed);
    }
}

#[test]
fn full_models_across_seeds() {
    for seed in 0..5 {
        assert_all_pass(Scope::Model, seed);
    }
}

#[test]
fn scopes_cover_what_they_claim() {
    let ops = check_names(Scope::Ops, 0).unwrap();
    for op in [
        "matmul",
        "add",
        "mul",
        "relu",
        "sigmoid",
        "silu",
        "softmax",
        "layer_norm",
        "cross_entropy",
        "gather",
        "mean",
        "sum",
    ] {
        assert!(
            ops.iter().any(|n| n.contains(op)),
            "no ops check mentions {op}: {ops:?}"
        );
    }
    let attention = check_names(Scope::Attention, 0).unwrap();
    for variant in ["baseline", "glu"] {
        assert!(attention.iter().any(|n| n.contains(variant)));
    }
    let model = check_names(Scope::Model, 0).unwrap();
    for piece in ["classifier", "lm", "baseline", "glu"] {
        assert!(
            model.iter().any(|n| n.contains(piece)),
            "no model check mentions {piece}: {model:?}"
        );
    }
    let all = check_names(Scope::All, 0).unwrap();
    assert_eq!(all.len(), ops.len() + attention.len() + model.len());
}
