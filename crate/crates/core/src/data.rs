//! Data plumbing: patchification, byte tokenization, deterministic epoch
//! shuffles, synthetic desk-scale corpora, and parsers for the on-disk
//! CIFAR-10 binary format and plain-text language-model corpora.
//!
//! Everything here is pure; reading files is the caller's job.

use crate::dtype::Element;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// One training example.
#[derive(Debug, Clone)]
pub enum Sample<T: Element> {
    /// Patchified image: [n_patches x patch_dim] plus a class label.
    Image { patches: Tensor<T>, label: usize },
    /// Token window; the model predicts each token from its predecessors.
    Text { tokens: Vec<usize> },
}

impl<T: Element> Sample<T> {
    pub fn cast<U: Element>(&self) -> Sample<U> {
        match self {
            Sample::Image { patches, label } => Sample::Image {
                patches: patches.cast(),
                label: *label,
            },
            Sample::Text { tokens } => Sample::Text {
                tokens: tokens.clone(),
            },
        }
    }
}

// ── patchification ──────────────────────────────────────────────────

/// Splits an [h x w x c] image into non-overlapping p x p patches:
/// [n_patches x p*p*c]. Patches scan the grid row-major; within a patch,
/// pixels are row-major with channels fastest.
pub fn patchify<T: Element>(image: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(Error::invalid(format!(
            "patchify expects an [h x w x c] image, got shape {shape:?}"
        )));
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::invalid(format!(
            "patch size {p} must divide image dimensions {h}x{w}"
        )));
    }
    let (gh, gw) = (h / p, w / p);
    let mut data = Vec::with_capacity(h * w * c);
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..p {
                for px in 0..p {
                    let (y, x) = (gy * p + py, gx * p + px);
                    let base = (y * w + x) * c;
                    data.extend_from_slice(&image.data()[base..base + c]);
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, p * p * c], data)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Element>(
    patches: &Tensor<T>,
    h: usize,
    w: usize,
    c: usize,
    p: usize,
) -> Result<Tensor<T>> {
    let expected = [h / p.max(1) * (w / p.max(1)), p * p * c];
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) || patches.shape() != expected {
        return Err(Error::invalid(format!(
            "unpatchify of shape {:?} into {h}x{w}x{c} with patch {p}",
            patches.shape()
        )));
    }
    let gw = w / p;
    let mut data = vec![T::ZERO; h * w * c];
    for (i, patch) in patches.data().chunks(p * p * c).enumerate() {
        let (gy, gx) = (i / gw, i % gw);
        for py in 0..p {
            for px in 0..p {
                let (y, x) = (gy * p + py, gx * p + px);
                let src = (py * p + px) * c;
                let dst = (y * w + x) * c;
                data[dst..dst + c].copy_from_slice(&patch[src..src + c]);
            }
        }
    }
    Tensor::new(vec![h, w, c], data)
}

// ── tokenization ────────────────────────────────────────────────────

pub const BYTE_VOCAB: usize = 256;

pub fn byte_tokenize(bytes: &[u8]) -> Vec<usize> {
    bytes.iter().map(|&b| b as usize).collect()
}

pub fn byte_detokenize(tokens: &[usize]) -> Result<Vec<u8>> {
    tokens
        .iter()
        .map(|&t| {
            u8::try_from(t).map_err(|_| Error::IndexOutOfRange {
                what: "byte token",
                index: t,
                size: BYTE_VOCAB,
            })
        })
        .collect()
}

/// Overlapping windows of `window` tokens advancing by `stride`.
pub fn text_windows<T: Element>(tokens: &[usize], window: usize, stride: usize) -> Vec<Sample<T>> {
    if window < 2 || stride == 0 || tokens.len() < window {
        return Vec::new();
    }
    (0..=tokens.len() - window)
        .step_by(stride)
        .map(|start| Sample::Text {
            tokens: tokens[start..start + window].to_vec(),
        })
        .collect()
}

// ── deterministic batching ──────────────────────────────────────────

/// Index batches for one epoch: a seeded shuffle of 0..n chunked by
/// `batch_size`, the final batch possibly short. The shuffle is keyed by
/// (seed, epoch) so every run and every thread count sees the same order.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = Rng::for_name(seed, &format!("shuffle.epoch{epoch}"));
    rng.shuffle(&mut indices);
    indices
        .chunks(batch_size.max(1))
        .map(|c| c.to_vec())
        .collect()
}

// ── synthetic corpora ───────────────────────────────────────────────

/// Number of image motif classes [`synth_images`] can draw.
pub const SYNTH_IMAGE_CLASSES: usize = 4;

/// Class-balanced 3-channel images built from four motifs (horizontal
/// stripes, vertical stripes, checkerboard, diagonal bands) plus uniform
/// noise of amplitude 0.1, already patchified. Labels cycle 0..n_classes.
pub fn synth_images<T: Element>(
    count: usize,
    image_dim: usize,
    patch: usize,
    n_classes: usize,
    seed: u64,
) -> Result<Vec<Sample<T>>> {
    if n_classes == 0 || n_classes > SYNTH_IMAGE_CLASSES {
        return Err(Error::invalid(format!(
            "synth_images supports 1..={SYNTH_IMAGE_CLASSES} classes, got {n_classes}"
        )));
    }
    let mut rng = Rng::for_name(seed, "synth_images");
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % n_classes;
        let mut data = Vec::with_capacity(image_dim * image_dim * 3);
        for y in 0..image_dim {
            for x in 0..image_dim {
                let bright = match label {
                    0 => y % 2 == 0,
                    1 => x % 2 == 0,
                    2 => (x + y) % 2 == 0,
                    _ => ((x + y) / 2) % 2 == 0,
                };
                let base = if bright { 0.85 } else { 0.15 };
                for _ in 0..3 {
                    let v = base + rng.uniform(-0.1, 0.1);
                    data.push(T::from_f64(v));
                }
            }
        }
        let image = Tensor::new(vec![image_dim, image_dim, 3], data)?;
        out.push(Sample::Image {
            patches: patchify(&image, patch)?,
            label,
        });
    }
    Ok(out)
}

const SYNTH_WORDS: [&str; 4] = ["alpha ", "bravo ", "gamma ", "delta "];

/// Byte windows of one word repeated end to end, entered at a random
/// phase. After the first few bytes the continuation is fully determined,
/// so a working model drives next-byte loss far below the corpus unigram
/// entropy while a broken one cannot.
pub fn synth_text<T: Element>(count: usize, window: usize, seed: u64) -> Result<Vec<Sample<T>>> {
    if window < 2 {
        return Err(Error::invalid(format!(
            "text windows need at least 2 tokens, got {window}"
        )));
    }
    let mut rng = Rng::for_name(seed, "synth_text");
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let word = SYNTH_WORDS[i % SYNTH_WORDS.len()].as_bytes();
        let phase = rng.below(word.len());
        let tokens: Vec<usize> = (0..window)
            .map(|k| word[(phase + k) % word.len()] as usize)
            .collect();
        out.push(Sample::Text { tokens });
    }
    Ok(out)
}

/// Empirical unigram cross-entropy (nats per token) of the prediction
/// targets in a text corpus: the loss floor for any context-free model.
pub fn unigram_entropy<T: Element>(samples: &[Sample<T>]) -> f64 {
    let mut counts = [0u64; BYTE_VOCAB];
    let mut total = 0u64;
    for s in samples {
        if let Sample::Text { tokens } = s {
            for &t in &tokens[1..] {
                counts[t] += 1;
                total += 1;
            }
        }
    }
    if total == 0 {
        return 0.0;
    }
    let mut h = 0.0;
    for &c in counts.iter() {
        if c > 0 {
            let p = c as f64 / total as f64;
            h -= p * p.ln();
        }
    }
    h
}

// ── on-disk formats ─────────────────────────────────────────────────

/// Bytes per record in the CIFAR-10 binary format: one label byte, then
/// 3*1024 pixels stored as full-image planes (red, green, blue).
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const CIFAR_DIM: usize = 32;
pub const CIFAR_CLASSES: usize = 10;

/// Parses CIFAR-10 binary records into patchified samples with pixel
/// values scaled to [0, 1]. `limit` caps how many records are read.
pub fn parse_cifar10<T: Element>(
    bytes: &[u8],
    patch: usize,
    limit: Option<usize>,
) -> Result<Vec<Sample<T>>> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        return Err(Error::invalid(format!(
            "CIFAR-10 data length {} is not a multiple of the {CIFAR_RECORD_BYTES}-byte record",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let n = limit.map_or(n, |l| l.min(n));
    let plane = CIFAR_DIM * CIFAR_DIM;
    let mut out = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD_BYTES).take(n) {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::IndexOutOfRange {
                what: "CIFAR-10 label",
                index: label,
                size: CIFAR_CLASSES,
            });
        }
        let pixels = &rec[1..];
        let mut data = Vec::with_capacity(plane * 3);
        for i in 0..plane {
            for ch in 0..3 {
                data.push(T::from_f64(pixels[ch * plane + i] as f64 / 255.0));
            }
        }
        let image = Tensor::new(vec![CIFAR_DIM, CIFAR_DIM, 3], data)?;
        out.push(Sample::Image {
            patches: patchify(&image, patch)?,
            label,
        });
    }
    Ok(out)
}
