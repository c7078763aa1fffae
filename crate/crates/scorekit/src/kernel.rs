//! Dot-product micro-kernels with a fixed accumulation order.
//!
//! Every output element accumulates strictly along ascending index of
//! the shared dimension, one independent chain per output. Tiling and
//! vectorization only add more independent chains, never reassociate
//! one, so a row's result is bit-identical whether it is computed
//! alone, inside a tile, or under any execution mode.

use ndarray::ArrayView2;

/// Rows per tile in blocked batch kernels.
pub(crate) const TILE: usize = 16;

/// Copies rows `r0..r0 + w` of `rows` into a column-major tile of width
/// `TILE` (lanes `w..TILE` are zero-padded; their outputs are garbage
/// and ignored by callers). Layout: element `(k, m)` at `k * TILE + m`.
pub(crate) fn transpose_tile(rows: ArrayView2<'_, f64>, r0: usize, w: usize) -> Vec<f64> {
    let dims = rows.ncols();
    let mut tile = vec![0.0; dims * TILE];
    for m in 0..w {
        let row = rows.row(r0 + m);
        for k in 0..dims {
            tile[k * TILE + m] = row[k];
        }
    }
    tile
}

/// `out[m] = sum_k c[k] * tile[k * TILE + m]`, k ascending per lane.
#[inline]
pub(crate) fn tile_dots(tile: &[f64], c: &[f64], out: &mut [f64; TILE]) {
    debug_assert_eq!(tile.len(), c.len() * TILE);
    let mut acc = [0.0f64; TILE];
    for (row, &ck) in tile.chunks_exact(TILE).zip(c) {
        for m in 0..TILE {
            acc[m] += ck * row[m];
        }
    }
    *out = acc;
}

/// Plain dot product, eight independent chains combined in a fixed
/// order. Fast and deterministic, but a different summation order than
/// `tile_dots`; the two are never mixed for the same quantity.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (xa, xb) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for m in 0..8 {
            acc[m] += xa[m] * xb[m];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let p0 = (acc[0] + acc[4]) + (acc[1] + acc[5]);
    let p1 = (acc[2] + acc[6]) + (acc[3] + acc[7]);
    (p0 + p1) + tail
}

/// Squared Euclidean norm with the same chain structure as [`dot`].
#[inline]
pub(crate) fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn tile_lanes_match_single_row_exactly() {
        // The per-lane chain must not depend on which rows share a tile.
        let mut v = 0.37_f64;
        let rows = Array2::from_shape_fn((TILE, 53), |_| {
            v = (v * 997.0 + 1.3).sin();
            v * 3.0
        });
        let c: Vec<f64> = (0..53).map(|k| ((k * k) as f64).cos()).collect();

        let full = transpose_tile(rows.view(), 0, TILE);
        let mut batch = [0.0; TILE];
        tile_dots(&full, &c, &mut batch);

        for m in 0..TILE {
            let solo = transpose_tile(rows.view(), m, 1);
            let mut one = [0.0; TILE];
            tile_dots(&solo, &c, &mut one);
            assert_eq!(batch[m].to_bits(), one[0].to_bits(), "lane {m}");
        }
    }

    #[test]
    fn dot_agrees_with_reference_sum() {
        let a: Vec<f64> = (0..101).map(|i| (i as f64 * 0.11).sin()).collect();
        let b: Vec<f64> = (0..101).map(|i| (i as f64 * 0.07).cos()).collect();
        let reference: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - reference).abs() < 1e-12);
        assert!((sq_norm(&a) - a.iter().map(|x| x * x).sum::<f64>()).abs() < 1e-12);
    }
}
