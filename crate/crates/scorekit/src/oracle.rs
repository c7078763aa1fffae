//! Exact score fields for distributions with closed-form densities.
//!
//! These are the ground-truth references the sampler and the trained
//! network are measured against. Every model scores the *perturbed*
//! density: the data distribution convolved with isotropic Gaussian
//! noise of scale `sigma`, which is the family of targets annealed
//! Langevin dynamics walks through.

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec;
use crate::kernel::{self, TILE};

/// Score of a noise-perturbed density, indexed by the noise scale.
pub trait ScoreModel {
    /// Data dimension.
    fn dims(&self) -> usize;

    /// Score at one point, written into `out`. Both slices must have
    /// length [`ScoreModel::dims`]; the noise variance added to the
    /// data distribution is `sigma^2`.
    fn score_at(&self, x: &[f64], sigma: f64, out: &mut [f64]);

    /// Scores for a batch of rows. The default loops over rows;
    /// implementations may tile or parallelize, but every row of the
    /// result must be bit-identical to a [`ScoreModel::score_at`] call
    /// on that row alone.
    fn score_batch_at(&self, xs: ArrayView2<'_, f64>, sigma: f64) -> Array2<f64> {
        let mut out = Array2::zeros(xs.raw_dim());
        for (row, mut dst) in xs.rows().into_iter().zip(out.rows_mut()) {
            self.score_at(
                row.to_slice().expect("batch rows are contiguous"),
                sigma,
                dst.as_slice_mut().expect("output rows are contiguous"),
            );
        }
        out
    }
}

impl<T: ScoreModel + ?Sized> ScoreModel for &T {
    fn dims(&self) -> usize {
        (**self).dims()
    }
    fn score_at(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        (**self).score_at(x, sigma, out)
    }
    fn score_batch_at(&self, xs: ArrayView2<'_, f64>, sigma: f64) -> Array2<f64> {
        (**self).score_batch_at(xs, sigma)
    }
}

/// Isotropic Gaussian data `N(mean, variance I)`. Perturbed at scale
/// `sigma` it stays Gaussian with variance `variance + sigma^2`, so the
/// score is `(mean - x) / (variance + sigma^2)`. `variance = 0` is a
/// point mass.
#[derive(Debug, Clone)]
pub struct GaussianScore {
    mean: Array1<f64>,
    variance: f64,
}

impl GaussianScore {
    pub fn new(mean: Array1<f64>, variance: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::invalid("mean must have at least one coordinate"));
        }
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(Error::invalid("variance must be finite and nonnegative"));
        }
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

impl ScoreModel for GaussianScore {
    fn dims(&self) -> usize {
        self.mean.len()
    }

    fn score_at(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        assert_eq!(x.len(), self.dims());
        assert_eq!(out.len(), self.dims());
        let v = self.variance + sigma * sigma;
        assert!(v > 0.0, "a point mass needs a positive noise scale");
        for ((o, &xi), &mi) in out.iter_mut().zip(x).zip(self.mean.iter()) {
            *o = (mi - xi) / v;
        }
    }
}

/// Mixture of isotropic Gaussians with shared component variance.
/// `variance = 0` makes it an empirical distribution over the center
/// rows, the standard stand-in for a finite data set.
#[derive(Debug, Clone)]
pub struct MixtureScore {
    centers: Array2<f64>,
    log_weights: Vec<f64>,
    center_sq: Vec<f64>,
    variance: f64,
}

// Streaming softmax terms whose weight relative to the running maximum
// falls below this are dropped; the rule is part of the deterministic
// result, not a fast path.
const TERM_CUT: f64 = 1e-18;

impl MixtureScore {
    pub fn new(centers: Array2<f64>, weights: &[f64], variance: f64) -> Result<Self> {
        if centers.nrows() == 0 || centers.ncols() == 0 {
            return Err(Error::invalid("mixture needs at least one center"));
        }
        if weights.len() != centers.nrows() {
            return Err(Error::invalid("one weight per center"));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("weights must not all be zero"));
        }
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(Error::invalid("variance must be finite and nonnegative"));
        }
        let centers = ensure_standard(centers);
        let d = centers.ncols();
        let flat = centers.as_slice().expect("standard layout");
        let center_sq = (0..centers.nrows())
            .map(|k| kernel::sq_norm(&flat[k * d..(k + 1) * d]))
            .collect();
        let log_weights = weights.iter().map(|&w| (w / total).ln()).collect();
        Ok(Self {
            centers,
            log_weights,
            center_sq,
            variance,
        })
    }

    /// Equal-weight mixture over the center rows.
    pub fn uniform(centers: Array2<f64>, variance: f64) -> Result<Self> {
        let w = vec![1.0; centers.nrows()];
        Self::new(centers, &w, variance)
    }

    pub fn centers(&self) -> ArrayView2<'_, f64> {
        self.centers.view()
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Posterior component probabilities at `x` under the perturbed
    /// mixture. Reference implementation with per-center squared
    /// distances; it is not bit-coupled to the tiled score path.
    pub fn responsibilities(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        assert_eq!(x.len(), self.dims());
        let v = self.variance + sigma * sigma;
        assert!(v > 0.0, "a point mass needs a positive noise scale");
        let mut lw: Vec<f64> = self
            .centers
            .rows()
            .into_iter()
            .zip(&self.log_weights)
            .map(|(c, &lp)| {
                let d2: f64 = c
                    .iter()
                    .zip(x)
                    .map(|(&ci, &xi)| (xi - ci) * (xi - ci))
                    .sum();
                lp - d2 / (2.0 * v)
            })
            .collect();
        let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in lw.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        for l in lw.iter_mut() {
            *l /= total;
        }
        lw
    }

    /// Monte Carlo estimate of the mean responsibility of component
    /// `other` over draws from component `component` perturbed at
    /// `sigma`. Returns the mean and its standard error.
    pub fn mean_responsibility_from(
        &self,
        component: usize,
        other: usize,
        sigma: f64,
        n: usize,
        seed: u64,
    ) -> Result<(f64, f64)> {
        let k = self.centers.nrows();
        if component >= k || other >= k {
            return Err(Error::invalid("component index out of range"));
        }
        if n < 2 {
            return Err(Error::invalid("need at least two draws"));
        }
        let spread = (self.variance + sigma * sigma).sqrt();
        let center: Vec<f64> = self.centers.row(component).iter().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.0; self.dims()];
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            for (xi, &ci) in x.iter_mut().zip(&center) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *xi = ci + spread * z;
            }
            let r = self.responsibilities(&x, sigma)[other];
            sum += r;
            sum_sq += r * r;
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        Ok((mean, (var / n as f64).sqrt()))
    }

    // Scores for rows [r0, r0 + w) of `xs`, written into `out` in the
    // same order. One streaming pass over the centers per row tile;
    // per-lane state is scalar, so lane m sees exactly the arithmetic
    // a single-row call sees.
    fn score_tile(&self, xs: ArrayView2<'_, f64>, r0: usize, w: usize, v: f64, out: &mut [f64]) {
        let d = self.dims();
        let flat_x = xs.to_slice().expect("batch is standard layout");
        let flat_c = self.centers.as_slice().expect("standard layout");
        let tile = kernel::transpose_tile(xs, r0, w);
        let mut xsq = [0.0f64; TILE];
        for (m, s) in xsq.iter_mut().take(w).enumerate() {
            *s = kernel::sq_norm(&flat_x[(r0 + m) * d..(r0 + m + 1) * d]);
        }

        let mut max = [f64::NEG_INFINITY; TILE];
        let mut sumexp = [0.0f64; TILE];
        let mut wsum = vec![0.0f64; w * d];
        let mut dots = [0.0f64; TILE];
        let two_v = 2.0 * v;

        for k in 0..self.centers.nrows() {
            let c = &flat_c[k * d..(k + 1) * d];
            kernel::tile_dots(&tile, c, &mut dots);
            for m in 0..w {
                let lw = self.log_weights[k] + (2.0 * dots[m] - xsq[m] - self.center_sq[k]) / two_v;
                let lane = &mut wsum[m * d..(m + 1) * d];
                if lw <= max[m] {
                    let t = (lw - max[m]).exp();
                    if t >= TERM_CUT {
                        sumexp[m] += t;
                        for (acc, &cj) in lane.iter_mut().zip(c) {
                            *acc += t * cj;
                        }
                    }
                } else {
                    // New maximum: rescale the accumulated mass. The
                    // first center lands here with r = exp(-inf) = 0,
                    // which initializes the state cleanly.
                    let r = (max[m] - lw).exp();
                    sumexp[m] = sumexp[m] * r + 1.0;
                    for (acc, &cj) in lane.iter_mut().zip(c) {
                        *acc = *acc * r + cj;
                    }
                    max[m] = lw;
                }
            }
        }

        for m in 0..w {
            let x = &flat_x[(r0 + m) * d..(r0 + m + 1) * d];
            let lane = &wsum[m * d..(m + 1) * d];
            let dst = &mut out[m * d..(m + 1) * d];
            let se = sumexp[m];
            for ((o, &acc), &xj) in dst.iter_mut().zip(lane).zip(x) {
                *o = (acc / se - xj) / v;
            }
        }
    }
}

fn ensure_standard(m: Array2<f64>) -> Array2<f64> {
    if m.is_standard_layout() {
        m
    } else {
        m.as_standard_layout().to_owned()
    }
}

impl ScoreModel for MixtureScore {
    fn dims(&self) -> usize {
        self.centers.ncols()
    }

    fn score_at(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        assert_eq!(x.len(), self.dims());
        assert_eq!(out.len(), self.dims());
        let v = self.variance + sigma * sigma;
        assert!(v > 0.0, "a point mass needs a positive noise scale");
        let xs = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        self.score_tile(xs, 0, 1, v, out);
    }

    fn score_batch_at(&self, xs: ArrayView2<'_, f64>, sigma: f64) -> Array2<f64> {
        assert_eq!(xs.ncols(), self.dims());
        let v = self.variance + sigma * sigma;
        assert!(v > 0.0, "a point mass needs a positive noise scale");
        let n = xs.nrows();
        let d = self.dims();
        if n == 0 {
            return Array2::zeros((0, d));
        }
        let xs = if xs.is_standard_layout() {
            xs.to_owned()
        } else {
            xs.as_standard_layout().to_owned()
        };
        let ntiles = n.div_ceil(TILE);
        let pieces = exec::run_blocks(ntiles, |t| {
            let r0 = t * TILE;
            let w = TILE.min(n - r0);
            let mut buf = vec![0.0f64; w * d];
            self.score_tile(xs.view(), r0, w, v, &mut buf);
            buf
        });
        let mut flat = Vec::with_capacity(n * d);
        for piece in pieces {
            flat.extend_from_slice(&piece);
        }
        Array2::from_shape_vec((n, d), flat).expect("tile output shape")
    }
}

/// Upper bound on how much probability mass one mode of a perturbed
/// two-point mixture assigns to the basin of the other: for centers a
/// Euclidean distance `distance` apart and noise scale `sigma`, the
/// expected responsibility of the far component over draws from the
/// near one is at most `exp(-distance^2 / (8 sigma^2)) / 2`. A noise
/// scale comparable to the distance keeps modes coupled; a much
/// smaller one decouples them exponentially fast.
pub fn mode_coupling_bound(distance: f64, sigma: f64) -> f64 {
    assert!(distance >= 0.0 && sigma > 0.0);
    0.5 * (-distance * distance / (8.0 * sigma * sigma)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    // Log density of the perturbed mixture by direct summation; the
    // independent route the score implementations are checked against.
    fn mixture_log_density(centers: &Array2<f64>, weights: &[f64], v: f64, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        let total: f64 = weights.iter().sum();
        let terms: Vec<f64> = centers
            .rows()
            .into_iter()
            .zip(weights)
            .map(|(c, &w)| {
                let d2: f64 = c
                    .iter()
                    .zip(x)
                    .map(|(&ci, &xi)| (xi - ci) * (xi - ci))
                    .sum();
                (w / total).ln() - d2 / (2.0 * v) - 0.5 * d * (2.0 * std::f64::consts::PI * v).ln()
            })
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let dn = f(&xp);
            xp[i] = x[i];
            g[i] = (up - dn) / (2.0 * h);
        }
        g
    }

    #[test]
    fn gaussian_score_matches_log_density_gradient() {
        let m = GaussianScore::new(array![0.3, -1.2, 0.8], 0.16).unwrap();
        let x = [0.9, -0.4, 0.1];
        let sigma = 0.5;
        let v = 0.16 + 0.25;
        let centers = array![[0.3, -1.2, 0.8]];
        let logp = |y: &[f64]| mixture_log_density(&centers, &[1.0], v, y);
        let fd = fd_gradient(logp, &x, 1e-5);
        let mut got = [0.0; 3];
        m.score_at(&x, sigma, &mut got);
        for (g, f) in got.iter().zip(&fd) {
            assert_relative_eq!(g, f, max_relative = 1e-7, epsilon = 1e-9);
        }
    }

    #[test]
    fn mixture_score_matches_log_density_gradient() {
        let centers = array![[0.0, 0.0], [1.0, 0.5], [-0.5, 2.0]];
        let weights = [0.5, 0.3, 0.2];
        let mix = MixtureScore::new(centers.clone(), &weights, 0.04).unwrap();
        let sigma = 0.3;
        let v = 0.04 + 0.09;
        for x in [[0.2, 0.1], [0.9, 0.6], [-0.4, 1.5], [3.0, -2.0]] {
            let logp = |y: &[f64]| mixture_log_density(&centers, &weights, v, y);
            let fd = fd_gradient(logp, &x, 1e-5);
            let mut got = [0.0; 2];
            mix.score_at(&x, sigma, &mut got);
            for (g, f) in got.iter().zip(&fd) {
                assert_relative_eq!(g, f, max_relative = 1e-6, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn single_component_mixture_matches_gaussian() {
        let mix = MixtureScore::uniform(array![[0.4, -0.7]], 0.0).unwrap();
        let g = GaussianScore::new(array![0.4, -0.7], 0.0).unwrap();
        let x = [2.0, 1.0];
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        mix.score_at(&x, 0.8, &mut a);
        g.score_at(&x, 0.8, &mut b);
        for (ai, bi) in a.iter().zip(&b) {
            assert_relative_eq!(ai, bi, max_relative = 1e-14);
        }
    }

    #[test]
    fn far_field_is_dominated_by_nearest_center() {
        let mix = MixtureScore::uniform(array![[0.0, 0.0], [100.0, 0.0]], 0.0).unwrap();
        let near = GaussianScore::new(array![0.0, 0.0], 0.0).unwrap();
        let x = [1.0, -0.5];
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        mix.score_at(&x, 1.0, &mut a);
        near.score_at(&x, 1.0, &mut b);
        for (ai, bi) in a.iter().zip(&b) {
            assert_relative_eq!(ai, bi, max_relative = 1e-10);
        }
    }

    #[test]
    fn batch_rows_are_bit_identical_to_single_calls() {
        let centers =
            Array2::from_shape_fn((37, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin() * 2.0);
        let mix = MixtureScore::uniform(centers, 0.01).unwrap();
        let xs = Array2::from_shape_fn((50, 5), |(i, j)| ((i * 7 + j) as f64 * 0.13).cos());
        let batch = mix.score_batch_at(xs.view(), 0.6);
        let mut solo = vec![0.0; 5];
        for (i, row) in xs.rows().into_iter().enumerate() {
            mix.score_at(row.to_slice().unwrap(), 0.6, &mut solo);
            for (a, b) in batch.row(i).iter().zip(&solo) {
                assert_eq!(a.to_bits(), b.to_bits(), "row {i}");
            }
        }
    }

    #[test]
    fn parallel_and_sequential_batches_agree_bitwise() {
        let centers = Array2::from_shape_fn((23, 4), |(i, j)| ((i + 3 * j) as f64 * 0.11).sin());
        let mix = MixtureScore::uniform(centers, 0.0).unwrap();
        let xs = Array2::from_shape_fn((40, 4), |(i, j)| ((i * 4 + j) as f64 * 0.29).cos());
        let par = mix.score_batch_at(xs.view(), 0.5);
        exec::set_sequential(true);
        let seq = mix.score_batch_at(xs.view(), 0.5);
        exec::set_sequential(false);
        for (a, b) in par.iter().zip(seq.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn responsibilities_are_a_distribution() {
        let mix = MixtureScore::new(
            array![[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]],
            &[1.0, 2.0, 1.0],
            0.0,
        )
        .unwrap();
        let r = mix.responsibilities(&[0.4, 0.2], 1.0);
        assert_eq!(r.len(), 3);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert!(r[0] > r[1] && r[0] > r[2]);
    }

    #[test]
    fn coupling_bound_frozen_values() {
        // Distance 18 at unit noise: the bound drops below 1e-17.
        let b = mode_coupling_bound(18.0, 1.0);
        assert_relative_eq!(b, 0.5 * (-40.5f64).exp(), max_relative = 1e-14);
        assert!(b < 1e-17);
        // Noise comparable to the distance keeps the bound order one.
        assert!(mode_coupling_bound(1.0, 1.0) > 0.4);
    }

    #[test]
    fn mean_responsibility_respects_coupling_bound() {
        let mix = MixtureScore::uniform(array![[0.0], [3.0]], 0.0).unwrap();
        let (mean, se) = mix.mean_responsibility_from(0, 1, 1.0, 4000, 11).unwrap();
        let bound = mode_coupling_bound(3.0, 1.0);
        assert!(mean < bound + 3.0 * se, "mean = {mean}, bound = {bound}");
        assert!(mean > 1e-3, "coupling should be nontrivial at this scale");
    }

    #[test]
    fn constructor_rejects_bad_mixtures() {
        let c = array![[0.0, 0.0]];
        assert!(MixtureScore::new(c.clone(), &[1.0, 1.0], 0.0).is_err());
        assert!(MixtureScore::new(c.clone(), &[-1.0], 0.0).is_err());
        assert!(MixtureScore::new(c.clone(), &[0.0], 0.0).is_err());
        assert!(MixtureScore::new(c, &[1.0], -0.5).is_err());
        assert!(MixtureScore::new(Array2::zeros((0, 2)), &[], 0.0).is_err());
    }
}
