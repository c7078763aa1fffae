//! Blocked pairwise Euclidean distance scans over row matrices.
//!
//! Squared distances come from the expansion |x - y|^2 =
//! |x|^2 - 2<x, y> + |y|^2 with precomputed row norms, so a scan over P
//! pairs streams the matrix through the dot-product kernel instead of
//! touching each coordinate pair twice. Results do not depend on the
//! execution mode: each block task walks its pairs in a fixed order and
//! the per-task pieces are merged in task order.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec;
use crate::kernel::{self, TILE};

pub(crate) struct PairStats {
    pub max: f64,
    pub median: f64,
    pub mean: f64,
}

const ROW_BLOCK: usize = 128;

/// Uniform subsample of `k` rows without replacement: a partial
/// Fisher-Yates pass over the index vector, seeded with ChaCha so the
/// selection is reproducible across platforms. `k >= n` keeps every row
/// in order.
pub(crate) fn subsample_rows(data: ArrayView2<'_, f64>, k: usize, seed: u64) -> Array2<f64> {
    let n = data.nrows();
    if k >= n {
        return data.to_owned();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut out = Array2::zeros((k, data.ncols()));
    for (r, &i) in idx[..k].iter().enumerate() {
        out.row_mut(r).assign(&data.row(i));
    }
    out
}

/// Max, median, and mean over all pairwise distances of a (possibly
/// subsampled) row matrix.
pub(crate) fn pair_stats(
    data: ArrayView2<'_, f64>,
    subsample: usize,
    seed: u64,
) -> Result<PairStats> {
    if data.nrows() < 2 || subsample < 2 {
        return Err(Error::invalid(
            "pairwise statistics need at least two points",
        ));
    }
    if data.ncols() == 0 {
        return Err(Error::invalid(
            "pairwise statistics need at least one column",
        ));
    }
    let rows = subsample_rows(data, subsample, seed);
    let n = rows.nrows();
    let d = rows.ncols();
    let flat = rows
        .as_slice()
        .expect("subsampled matrix is standard layout");
    let sq: Vec<f64> = (0..n)
        .map(|i| kernel::sq_norm(&flat[i * d..(i + 1) * d]))
        .collect();

    let nblocks = n.div_ceil(ROW_BLOCK);
    let mut tasks = Vec::with_capacity(nblocks * (nblocks + 1) / 2);
    for bi in 0..nblocks {
        for bj in bi..nblocks {
            tasks.push((bi, bj));
        }
    }
    let pieces = exec::run_blocks(tasks.len(), |t| {
        let (bi, bj) = tasks[t];
        scan_block_pair(rows.view(), flat, &sq, bi, bj)
    });

    let total_pairs = n * (n - 1) / 2;
    let mut dists = Vec::with_capacity(total_pairs);
    let mut max = 0.0f64;
    let mut sum = 0.0f64;
    for (piece, piece_max, piece_sum) in pieces {
        if piece_max > max {
            max = piece_max;
        }
        sum += piece_sum;
        dists.extend_from_slice(&piece);
    }
    debug_assert_eq!(dists.len(), total_pairs);
    let median = median_in_place(&mut dists);
    Ok(PairStats {
        max,
        median,
        mean: sum / total_pairs as f64,
    })
}

// Distances for all pairs (i, j) with i < j, i in block bi, j in bj.
// `flat` is the row-major backing slice of `rows`.
fn scan_block_pair(
    rows: ArrayView2<'_, f64>,
    flat: &[f64],
    sq: &[f64],
    bi: usize,
    bj: usize,
) -> (Vec<f64>, f64, f64) {
    let n = rows.nrows();
    let d = rows.ncols();
    let (i0, i1) = (bi * ROW_BLOCK, ((bi + 1) * ROW_BLOCK).min(n));
    let (j0, j1) = (bj * ROW_BLOCK, ((bj + 1) * ROW_BLOCK).min(n));
    let mut out = Vec::with_capacity((i1 - i0) * (j1 - j0));
    let mut max = 0.0f64;
    let mut sum = 0.0f64;
    let mut dots = [0.0f64; TILE];

    let mut t0 = j0;
    while t0 < j1 {
        let w = TILE.min(j1 - t0);
        let tile = kernel::transpose_tile(rows, t0, w);
        for i in i0..i1 {
            if t0 + w <= i + 1 {
                continue; // every j in this tile is <= i
            }
            kernel::tile_dots(&tile, &flat[i * d..(i + 1) * d], &mut dots);
            for m in 0..w {
                let j = t0 + m;
                if j <= i {
                    continue;
                }
                // Cancellation in the expansion can produce a tiny
                // negative value for near-identical rows.
                let d2 = (sq[i] - 2.0 * dots[m] + sq[j]).max(0.0);
                let d = d2.sqrt();
                if d > max {
                    max = d;
                }
                sum += d;
                out.push(d);
            }
        }
        t0 += w;
    }
    (out, max, sum)
}

// Median as the mean of the two central order statistics for even
// counts, via in-place selection.
fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    assert!(n > 0);
    if n % 2 == 1 {
        let (_, mid, _) = v.select_nth_unstable_by(n / 2, |a, b| a.total_cmp(b));
        *mid
    } else {
        let (_, lower, rest) = v.select_nth_unstable_by(n / 2 - 1, |a, b| a.total_cmp(b));
        let lo = *lower;
        let hi = rest.iter().copied().fold(f64::INFINITY, f64::min);
        0.5 * (lo + hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn right_triangle_distances() {
        let pts = array![[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]];
        let s = pair_stats(pts.view(), 100, 7).unwrap();
        assert_eq!(s.max, 5.0);
        assert_eq!(s.median, 4.0);
        assert!((s.mean - 4.0).abs() < 1e-15);
    }

    #[test]
    fn median_even_count_averages_central_pair() {
        // Four collinear points: distances 1, 1, 1, 2, 2, 3.
        let pts = array![[0.0], [1.0], [2.0], [3.0]];
        let s = pair_stats(pts.view(), 100, 7).unwrap();
        assert_eq!(s.max, 3.0);
        assert_eq!(s.median, 1.5);
    }

    #[test]
    fn subsampling_is_seed_deterministic() {
        let data = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 7 + j * 3) as f64).sin());
        let a = pair_stats(data.view(), 10, 42).unwrap();
        let b = pair_stats(data.view(), 10, 42).unwrap();
        assert_eq!(a.max.to_bits(), b.max.to_bits());
        assert_eq!(a.median.to_bits(), b.median.to_bits());
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let one = Array2::from_shape_fn((1, 3), |_| 0.0);
        assert!(pair_stats(one.view(), 10, 0).is_err());
        let two = Array2::from_shape_fn((5, 3), |_| 0.0);
        assert!(pair_stats(two.view(), 1, 0).is_err());
    }
}
