//! Command implementations. Argument parsing happens in `main`; every
//! command here returns `Ok(())` or a [`CliError`] carrying the process
//! exit code.
//!
//! All file writes go through a write-temp-then-rename helper so a killed
//! run never leaves a half-written CSV or checkpoint behind.

use std::env;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use glua_core::attention::{matched_dims, param_count, AttentionVariant};
use glua_core::data::{
    byte_tokenize, parse_cifar10, synth_images, synth_text, text_windows, Sample,
};
use glua_core::dtype::{Dtype, Element};
use glua_core::model::Model;
use glua_core::train::{fit, FitReport, StepRecord};
use glua_core::verify::{run_checks, Scope};

use crate::checkpoint::{self, CkptError};
use crate::spec::{DatasetChoice, RunSpec, TaskChoice};

/// Environment variable that overrides the run spec's output directory.
pub const OUT_DIR_ENV: &str = "GLUA_OUT_DIR";

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const COMPARISON_FILE: &str = "comparison.csv";

pub const CSV_HEADER: &str = "epoch,step,phase,loss,accuracy,lr";

/// Failure classes, one per nonzero exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or an invalid spec: exit 1.
    Usage(String),
    /// Numeric failure (divergence, failed check, broken parity): exit 2.
    Numeric(String),
    /// File system trouble: exit 3.
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<glua_core::Error> for CliError {
    fn from(e: glua_core::Error) -> CliError {
        match e {
            glua_core::Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<CkptError> for CliError {
    fn from(e: CkptError) -> CliError {
        CliError::Io(e.to_string())
    }
}

pub type CmdResult = Result<(), CliError>;

fn io_at(path: &Path, e: io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| io_at(path, e))
}

/// Writes a sibling temp file, then renames it over the target.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Io(format!("{}: not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| io_at(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_at(path, e))
}

// ---------------------------------------------------------------- train

pub fn cmd_train(spec_path: &Path) -> CmdResult {
    let text = String::from_utf8(read_bytes(spec_path)?)
        .map_err(|e| CliError::Usage(format!("{}: not UTF-8 ({e})", spec_path.display())))?;
    let spec = RunSpec::parse(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", spec_path.display())))?;
    validate_pairing(&spec)?;
    let out_dir = env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| spec.out_dir.clone());
    match spec.dtype {
        Dtype::F32 => train_all::<f32>(&spec, &out_dir),
        Dtype::F64 => train_all::<f64>(&spec, &out_dir),
    }
}

fn validate_pairing(spec: &RunSpec) -> Result<(), CliError> {
    let usage = |m: String| Err(CliError::Usage(m));
    match (spec.task, spec.dataset) {
        (TaskChoice::Classifier, DatasetChoice::Text) => {
            usage("the text dataset drives the lm task, not classifier".into())
        }
        (TaskChoice::Lm, DatasetChoice::Cifar10) => {
            usage("the cifar10 dataset drives the classifier task, not lm".into())
        }
        (TaskChoice::Classifier, DatasetChoice::Cifar10) => {
            if spec.data_path.is_none() {
                return usage("dataset cifar10 needs data_path".into());
            }
            if spec.image_dim != 32 || spec.n_classes != 10 {
                return usage(format!(
                    "cifar10 is 32x32 with 10 classes; spec says image_dim={} n_classes={}",
                    spec.image_dim, spec.n_classes
                ));
            }
            Ok(())
        }
        (TaskChoice::Lm, DatasetChoice::Text) if spec.data_path.is_none() => {
            usage("dataset text needs data_path".into())
        }
        _ => Ok(()),
    }
}

struct RunOutcome {
    variant: AttentionVariant,
    params: usize,
    report: FitReport,
}

fn train_all<T: Element>(spec: &RunSpec, out_dir: &Path) -> CmdResult {
    let (train_data, val_data) = load_data::<T>(spec)?;
    let mut outcomes: Vec<RunOutcome> = Vec::new();
    for &variant in spec.variant.variants() {
        let dir = out_dir.join(variant.as_str());
        let outcome = run_one::<T>(spec, variant, &train_data, &val_data, &dir)?;
        let r = &outcome.report;
        if r.steps == 0 {
            println!(
                "{}: {} params, 0 epochs requested, wrote initial checkpoint",
                variant, outcome.params
            );
        } else {
            println!(
                "{}: {} params, {} steps, final train loss {:.6}, val loss {:.6}, val accuracy {:.4}",
                variant, outcome.params, r.steps, r.final_train_loss, r.final_val_loss,
                r.final_val_accuracy
            );
        }
        outcomes.push(outcome);
    }
    if let [a, b] = &outcomes[..] {
        if a.params != b.params {
            return Err(CliError::Numeric(format!(
                "parameter parity violated: {} has {} params, {} has {}",
                a.variant, a.params, b.variant, b.params
            )));
        }
        atomic_write(
            &out_dir.join(COMPARISON_FILE),
            comparison_csv(a, b).as_bytes(),
        )?;
        if a.report.steps > 0 && b.report.steps > 0 {
            let (ra, rb) = (&a.report, &b.report);
            let direction = if rb.final_train_loss < ra.final_train_loss {
                "glu reaches the lower final train loss"
            } else if rb.final_train_loss > ra.final_train_loss {
                "baseline reaches the lower final train loss"
            } else {
                "final train losses are equal"
            };
            println!(
                "comparison: baseline {:.6} vs glu {:.6}; {direction}",
                ra.final_train_loss, rb.final_train_loss
            );
        }
    }
    Ok(())
}

fn run_one<T: Element>(
    spec: &RunSpec,
    variant: AttentionVariant,
    train_data: &[Sample<T>],
    val_data: &[Sample<T>],
    dir: &Path,
) -> Result<RunOutcome, CliError> {
    let config = spec.model_config(variant);
    let mut model = Model::<T>::init(&config, spec.seed)?;
    let params = model.param_count();
    fs::create_dir_all(dir).map_err(|e| io_at(dir, e))?;
    let report = fit(&mut model, train_data, val_data, &spec.train_config())?;
    atomic_write(
        &dir.join(METRICS_FILE),
        metrics_csv(&report.history).as_bytes(),
    )?;
    let mut buf = Vec::new();
    checkpoint::save_model(&mut buf, &model).map_err(|e| io_at(&dir.join(CHECKPOINT_FILE), e))?;
    atomic_write(&dir.join(CHECKPOINT_FILE), &buf)?;
    Ok(RunOutcome {
        variant,
        params,
        report,
    })
}

/// Floats rendered with `{}` use Rust's shortest round-trip form.
fn metrics_csv(history: &[StepRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.step, r.phase, r.loss, r.accuracy, r.lr
        ));
    }
    out
}

fn comparison_csv(a: &RunOutcome, b: &RunOutcome) -> String {
    let mut out = String::from("metric,baseline,glu\n");
    out.push_str(&format!("param_count,{},{}\n", a.params, b.params));
    if a.report.steps > 0 && b.report.steps > 0 {
        let (ra, rb) = (&a.report, &b.report);
        out.push_str(&format!(
            "final_train_loss,{},{}\n",
            ra.final_train_loss, rb.final_train_loss
        ));
        out.push_str(&format!(
            "final_val_loss,{},{}\n",
            ra.final_val_loss, rb.final_val_loss
        ));
        out.push_str(&format!(
            "final_val_accuracy,{},{}\n",
            ra.final_val_accuracy, rb.final_val_accuracy
        ));
    }
    out
}

type SplitData<T> = (Vec<Sample<T>>, Vec<Sample<T>>);

fn load_data<T: Element>(spec: &RunSpec) -> Result<SplitData<T>, CliError> {
    let want = spec.train_count + spec.val_count;
    let samples: Vec<Sample<T>> = match (spec.task, spec.dataset) {
        (TaskChoice::Classifier, DatasetChoice::Synth) => {
            synth_images(want, spec.image_dim, spec.patch, spec.n_classes, spec.seed)?
        }
        (TaskChoice::Lm, DatasetChoice::Synth) => {
            check_vocab(&[], spec.vocab, 128)?;
            synth_text(want, spec.seq_len + 1, spec.seed)?
        }
        (TaskChoice::Classifier, DatasetChoice::Cifar10) => {
            let path = spec.data_path.as_ref().unwrap();
            parse_cifar10(&read_bytes(path)?, spec.patch, Some(want))?
        }
        (TaskChoice::Lm, DatasetChoice::Text) => {
            let path = spec.data_path.as_ref().unwrap();
            let tokens = byte_tokenize(&read_bytes(path)?);
            check_vocab(&tokens, spec.vocab, 0)?;
            text_windows(&tokens, spec.seq_len + 1, spec.seq_len)
        }
        _ => unreachable!("rejected by validate_pairing"),
    };
    if samples.len() < want {
        return Err(CliError::Usage(format!(
            "spec needs {want} samples (train_count + val_count) but the dataset provides {}",
            samples.len()
        )));
    }
    let mut train = samples;
    train.truncate(want);
    let val = train.split_off(spec.train_count);
    Ok((train, val))
}

/// The synthetic corpus stays within ASCII, so `floor` lets the synth arm
/// validate before generating.
fn check_vocab(tokens: &[usize], vocab: usize, floor: usize) -> Result<(), CliError> {
    let top = tokens.iter().copied().max().map_or(floor, |t| t + 1);
    if top > vocab {
        return Err(CliError::Usage(format!(
            "corpus needs vocab >= {top}, spec says {vocab}"
        )));
    }
    Ok(())
}

// ------------------------------------------------------------ gradcheck

pub fn cmd_gradcheck(scope: &str, seed: u64) -> CmdResult {
    let scope: Scope = scope.parse()?;
    let reports = run_checks(scope, seed)?;
    let mut failed = Vec::new();
    let mut worst = 0f64;
    for report in &reports {
        println!("{report}");
        worst = worst.max(report.max_rel_err);
        if !report.passed() {
            failed.push(report.name.clone());
        }
    }
    println!(
        "{} components checked, worst relative error {:.3e}",
        reports.len(),
        worst
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed for: {}",
            failed.join(", ")
        )))
    }
}

// --------------------------------------------------------------- params

pub fn cmd_params(d_model: usize, n_heads: usize) -> CmdResult {
    let mut dims = Vec::new();
    let mut totals = Vec::new();
    for variant in AttentionVariant::ALL {
        dims.push(matched_dims(d_model, n_heads, variant)?);
        totals.push(param_count(d_model, n_heads, variant)?);
    }
    let shapes = |i: usize| {
        let d = &dims[i];
        [
            (d_model, d_model),
            (d_model, d_model),
            (d_model, d.v_proj_out),
            (d.attn_inner, d_model),
        ]
    };
    println!("attention projections at d_model={d_model}, n_heads={n_heads}");
    println!();
    println!(
        "{:<8} {:<16} {:>10}   {:<16} {:>10}",
        "matrix", "baseline", "params", "glu", "params"
    );
    for (row, name) in ["w_q", "w_k", "w_v", "w_o"].iter().enumerate() {
        let (bi, bo) = shapes(0)[row];
        let (gi, go) = shapes(1)[row];
        println!(
            "{:<8} {:<16} {:>10}   {:<16} {:>10}",
            name,
            format!("{bi}->{bo}"),
            bi * bo,
            format!("{gi}->{go}"),
            gi * go
        );
    }
    println!(
        "{:<8} {:<16} {:>10}   {:<16} {:>10}",
        "total", "", totals[0], "", totals[1]
    );
    println!();
    let flops = |i: usize| -> u64 {
        shapes(i)
            .iter()
            .map(|&(k, n)| 2 * k as u64 * n as u64)
            .sum()
    };
    println!(
        "projection flops per token: baseline {}, glu {}",
        flops(0),
        flops(1)
    );
    if totals[0] == totals[1] {
        println!(
            "parity: ok, both variants hold {} attention parameters",
            totals[0]
        );
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "parity violated: baseline {} vs glu {}",
            totals[0], totals[1]
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(CliError::Usage(String::new()).code(), 1);
        assert_eq!(CliError::Numeric(String::new()).code(), 2);
        assert_eq!(CliError::Io(String::new()).code(), 3);
    }

    #[test]
    fn core_errors_map_by_kind() {
        let usage: CliError = glua_core::Error::invalid("bad dims").into();
        assert_eq!(usage.code(), 1);
        let numeric: CliError = glua_core::Error::Diverged { step: 7 }.into();
        assert_eq!(numeric.code(), 2);
        assert!(numeric.to_string().contains('7'));
    }

    #[test]
    fn metrics_csv_has_fixed_header() {
        assert_eq!(metrics_csv(&[]), "epoch,step,phase,loss,accuracy,lr\n");
    }

    #[test]
    fn pairing_rules() {
        let mut spec = RunSpec {
            task: TaskChoice::Classifier,
            dataset: DatasetChoice::Text,
            ..RunSpec::default()
        };
        assert!(validate_pairing(&spec).is_err());
        spec.dataset = DatasetChoice::Cifar10;
        assert!(validate_pairing(&spec).is_err());
        spec.data_path = Some(PathBuf::from("x.bin"));
        // Path present but synth-sized dims.
        assert!(validate_pairing(&spec).is_err());
        spec.image_dim = 32;
        spec.n_classes = 10;
        assert!(validate_pairing(&spec).is_ok());
    }

    #[test]
    fn synth_split_is_disjoint_and_sized() {
        let spec = RunSpec {
            train_count: 6,
            val_count: 3,
            ..RunSpec::default()
        };
        let (train, val) = load_data::<f32>(&spec).unwrap();
        assert_eq!(train.len(), 6);
        assert_eq!(val.len(), 3);
    }
}
