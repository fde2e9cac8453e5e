//! Compute kernels behind the tape ops.
//!
//! Every kernel has a sequential path and (with the `parallel` feature) a
//! rayon path. The parallel paths split work at row or element granularity
//! and run the exact same per-row/per-element code as the sequential loops,
//! so the two produce bitwise identical results; reductions always
//! accumulate in ascending index order.

use crate::dtype::Element;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many multiply-adds the rayon dispatch overhead dominates and
/// the sequential path is used directly.
#[cfg(feature = "parallel")]
const PAR_MATMUL_THRESHOLD: usize = 64 * 64 * 32;
#[cfg(feature = "parallel")]
const PAR_MAP_THRESHOLD: usize = 1 << 14;

/// One output row of C = A x B: `out_row[j] = sum_p a_row[p] * b[p, j]`,
/// accumulated in ascending p.
fn matmul_row<T: Element>(a_row: &[T], b: &[T], out_row: &mut [T], k: usize, n: usize) {
    for v in out_row.iter_mut() {
        *v = T::ZERO;
    }
    for p in 0..k {
        let a_ip = a_row[p];
        let b_row = &b[p * n..(p + 1) * n];
        for (o, bv) in out_row.iter_mut().zip(b_row) {
            *o += a_ip * *bv;
        }
    }
}

pub fn matmul_seq<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    for (i, out_row) in out.chunks_mut(n.max(1)).enumerate().take(m) {
        matmul_row(&a[i * k..(i + 1) * k], b, out_row, k, n);
    }
    out
}

#[cfg(feature = "parallel")]
pub fn matmul_par<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    if n == 0 || m == 0 {
        return vec![T::ZERO; m * n];
    }
    let mut out = vec![T::ZERO; m * n];
    out.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, out_row)| matmul_row(&a[i * k..(i + 1) * k], b, out_row, k, n));
    out
}

/// C[m x n] = A[m x k] x B[k x n] over flat row-major slices.
pub fn matmul<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        if m * k * n >= PAR_MATMUL_THRESHOLD && m > 1 {
            return matmul_par(a, b, m, k, n);
        }
    }
    matmul_seq(a, b, m, k, n)
}

pub fn map_seq<T: Element>(x: &[T], f: impl Fn(T) -> T + Sync) -> Vec<T> {
    x.iter().map(|v| f(*v)).collect()
}

#[cfg(feature = "parallel")]
pub fn map_par<T: Element>(x: &[T], f: impl Fn(T) -> T + Sync) -> Vec<T> {
    x.par_iter().map(|v| f(*v)).collect()
}

/// Elementwise map; parallel for large inputs when the feature is on.
pub fn map<T: Element>(x: &[T], f: impl Fn(T) -> T + Sync) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        if x.len() >= PAR_MAP_THRESHOLD {
            return map_par(x, f);
        }
    }
    map_seq(x, f)
}

/// One softmax row with an optional additive mask, numerically stable:
/// the row max (after masking) is subtracted before exponentiation.
/// Returns false if every entry sits at or below the mask sentinel.
fn softmax_row<T: Element>(
    x: &[T],
    mask: Option<&[T]>,
    out: &mut [T],
    full_mask_floor: f64,
) -> bool {
    let masked = |j: usize| -> T {
        match mask {
            Some(m) => x[j] + m[j],
            None => x[j],
        }
    };
    let mut row_max = masked(0);
    for j in 1..x.len() {
        row_max = row_max.max(masked(j));
    }
    if row_max.to_f64() <= full_mask_floor {
        return false;
    }
    let mut sum = T::ZERO;
    for (j, slot) in out.iter_mut().enumerate() {
        let e = (masked(j) - row_max).exp();
        *slot = e;
        sum += e;
    }
    for v in out.iter_mut() {
        *v = *v / sum;
    }
    true
}

pub fn softmax_rows_seq<T: Element>(
    x: &[T],
    mask: Option<&[T]>,
    rows: usize,
    cols: usize,
    full_mask_floor: f64,
) -> Result<Vec<T>, usize> {
    let mut out = vec![T::ZERO; rows * cols];
    for i in 0..rows {
        let row_mask = mask.map(|m| &m[i * cols..(i + 1) * cols]);
        if !softmax_row(
            &x[i * cols..(i + 1) * cols],
            row_mask,
            &mut out[i * cols..(i + 1) * cols],
            full_mask_floor,
        ) {
            return Err(i);
        }
    }
    Ok(out)
}

#[cfg(feature = "parallel")]
pub fn softmax_rows_par<T: Element>(
    x: &[T],
    mask: Option<&[T]>,
    rows: usize,
    cols: usize,
    full_mask_floor: f64,
) -> Result<Vec<T>, usize> {
    let mut out = vec![T::ZERO; rows * cols];
    let bad: Vec<usize> = out
        .par_chunks_mut(cols)
        .enumerate()
        .filter_map(|(i, out_row)| {
            let row_mask = mask.map(|m| &m[i * cols..(i + 1) * cols]);
            if softmax_row(
                &x[i * cols..(i + 1) * cols],
                row_mask,
                out_row,
                full_mask_floor,
            ) {
                None
            } else {
                Some(i)
            }
        })
        .collect();
    match bad.into_iter().min() {
        Some(row) => Err(row),
        None => Ok(out),
    }
}

/// Row-wise softmax; `Err(row)` reports the first fully masked row.
pub fn softmax_rows<T: Element>(
    x: &[T],
    mask: Option<&[T]>,
    rows: usize,
    cols: usize,
    full_mask_floor: f64,
) -> Result<Vec<T>, usize> {
    #[cfg(feature = "parallel")]
    {
        if rows * cols >= PAR_MAP_THRESHOLD && rows > 1 {
            return softmax_rows_par(x, mask, rows, cols, full_mask_floor);
        }
    }
    softmax_rows_seq(x, mask, rows, cols, full_mask_floor)
}

/// out[j, i] = x[i, j] for a rows x cols input.
pub fn transpose<T: Element>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[cfg(feature = "parallel")]
    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn matmul_identity() {
        let a = [1.0, 0.0, 0.0, 1.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn matmul_1x2_2x1() {
        let a = [1.0, 2.0];
        let b = [3.0, 4.0];
        assert_eq!(matmul(&a, &b, 1, 2, 1), vec![11.0]);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn par_paths_bitwise_match_seq() {
        use crate::rng::Rng;
        let mut rng = Rng::from_seed(17);
        let (m, k, n) = (37, 53, 29);
        let a: Vec<f64> = (0..m * k).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.uniform(-2.0, 2.0)).collect();
        assert_eq!(
            bits(&matmul_seq(&a, &b, m, k, n)),
            bits(&matmul_par(&a, &b, m, k, n))
        );

        let xs: Vec<f64> = (0..4097).map(|_| rng.uniform(-4.0, 4.0)).collect();
        let f = |v: f64| v * (1.0 / (1.0 + (-v).exp()));
        assert_eq!(bits(&map_seq(&xs, f)), bits(&map_par(&xs, f)));

        let rows = 41;
        let cols = 19;
        let sm: Vec<f64> = (0..rows * cols).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let s = softmax_rows_seq(&sm, None, rows, cols, -1e29).unwrap();
        let p = softmax_rows_par(&sm, None, rows, cols, -1e29).unwrap();
        assert_eq!(bits(&s), bits(&p));
    }

    #[test]
    fn transpose_round_trip() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let t = transpose(&x, 2, 3);
        assert_eq!(t, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(transpose(&t, 3, 2), x.to_vec());
    }
}
