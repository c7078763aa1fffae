//! Trainable score network with hand-derived gradients.
//!
//! The network is a plain tanh MLP `f` mapping `R^D -> R^D`; the score
//! estimate at noise scale `sigma` is `f(x) / sigma`. Dividing a
//! single unconditional body by the scale is what lets one network
//! cover a whole schedule: the target score of data perturbed at scale
//! `sigma` has magnitude proportional to `1 / sigma`, so the body only
//! has to learn the direction field.
//!
//! Training minimizes the denoising objective. For a data point `x`,
//! scale `sigma`, and noise draw `z`, the perturbed point is
//! `x~ = x + sigma z` and the per-example loss is
//! `|f(x~) + z|^2 / 2`: the scale-weighted denoising score-matching
//! loss with the `1 / sigma` factors cancelled analytically, which
//! keeps every scale's contribution the same order of magnitude.
//!
//! Gradients are explicit backpropagation with no autograd; the
//! example loop is sequential and fixed-order, so training is
//! deterministic for a given seed.

use std::io::{BufReader, BufWriter, Read as _, Write as _};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::ScoreModel;

/// Tanh MLP over flat parameter storage. `hidden_layers = 0` degrades
/// to a single linear map, handy when a closed-form optimum is needed
/// as an independent check.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpScoreNet {
    dims: usize,
    hidden: usize,
    hidden_layers: usize,
    params: Vec<f64>,
}

// (rows, cols) of each weight matrix, in forward order.
fn layer_shapes(dims: usize, hidden: usize, hidden_layers: usize) -> Vec<(usize, usize)> {
    if hidden_layers == 0 {
        return vec![(dims, dims)];
    }
    let mut shapes = Vec::with_capacity(hidden_layers + 1);
    shapes.push((hidden, dims));
    for _ in 1..hidden_layers {
        shapes.push((hidden, hidden));
    }
    shapes.push((dims, hidden));
    shapes
}

impl MlpScoreNet {
    /// Uniform Xavier initialization for the weights, zero biases.
    pub fn new(dims: usize, hidden: usize, hidden_layers: usize, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(dims, hidden, hidden_layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = layer_shapes(dims, hidden, hidden_layers);
        let mut off = 0;
        for (rows, cols) in shapes {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            for w in net.params[off..off + rows * cols].iter_mut() {
                *w = rng.random_range(-limit..limit);
            }
            off += rows * (cols + 1); // biases stay zero
        }
        Ok(net)
    }

    /// All-zero parameters; `f` is identically zero.
    pub fn zeroed(dims: usize, hidden: usize, hidden_layers: usize) -> Result<Self> {
        if dims == 0 {
            return Err(Error::invalid("network dimension must be at least one"));
        }
        if hidden_layers > 0 && hidden == 0 {
            return Err(Error::invalid("hidden width must be at least one"));
        }
        let count: usize = layer_shapes(dims, hidden, hidden_layers)
            .iter()
            .map(|&(r, c)| r * (c + 1))
            .sum();
        Ok(Self {
            dims,
            hidden,
            hidden_layers,
            params: vec![0.0; count],
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn hidden_layers(&self) -> usize {
        self.hidden_layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Same architecture with replaced parameters.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    // y = W x + b for the layer starting at `off`.
    fn affine(&self, off: usize, rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), cols);
        debug_assert_eq!(y.len(), rows);
        let w = &self.params[off..off + rows * cols];
        let b = &self.params[off + rows * cols..off + rows * (cols + 1)];
        for r in 0..rows {
            let wrow = &w[r * cols..(r + 1) * cols];
            let mut acc = b[r];
            for (wi, xi) in wrow.iter().zip(x) {
                acc += wi * xi;
            }
            y[r] = acc;
        }
    }

    /// Network output `f(x)`.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dims);
        let shapes = layer_shapes(self.dims, self.hidden, self.hidden_layers);
        let mut off = 0;
        let mut cur = x.to_vec();
        for (l, &(rows, cols)) in shapes.iter().enumerate() {
            let mut next = vec![0.0; rows];
            self.affine(off, rows, cols, &cur, &mut next);
            if l + 1 < shapes.len() {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
            }
            off += rows * (cols + 1);
            cur = next;
        }
        cur
    }

    // Forward pass keeping the post-tanh activation of every hidden
    // layer, for backpropagation.
    fn forward_with_acts(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let shapes = layer_shapes(self.dims, self.hidden, self.hidden_layers);
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.hidden_layers);
        let mut off = 0;
        let mut cur = x.to_vec();
        for (l, &(rows, cols)) in shapes.iter().enumerate() {
            let mut next = vec![0.0; rows];
            self.affine(off, rows, cols, &cur, &mut next);
            if l + 1 < shapes.len() {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
                acts.push(next.clone());
            }
            off += rows * (cols + 1);
            cur = next;
        }
        (acts, cur)
    }

    /// Mean denoising loss over a batch.
    pub fn dsm_loss(&self, batch: &DsmBatch) -> f64 {
        let mut loss = 0.0;
        for (x, z) in batch.rows() {
            let f = self.forward(x);
            loss += 0.5
                * f.iter()
                    .zip(z)
                    .map(|(&fi, &zi)| (fi + zi) * (fi + zi))
                    .sum::<f64>();
        }
        loss / batch.len() as f64
    }

    /// Mean denoising loss and its gradient with respect to every
    /// parameter, by explicit backpropagation.
    pub fn dsm_grad(&self, batch: &DsmBatch) -> (f64, Vec<f64>) {
        let shapes = layer_shapes(self.dims, self.hidden, self.hidden_layers);
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for &(r, c) in &shapes {
            offsets.push(off);
            off += r * (c + 1);
        }

        let inv_n = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;

        for (x, z) in batch.rows() {
            let (acts, f) = self.forward_with_acts(x);
            // delta at the output: the residual of the denoising loss.
            let mut delta: Vec<f64> = f
                .iter()
                .zip(z)
                .map(|(&fi, &zi)| (fi + zi) * inv_n)
                .collect();
            loss += 0.5
                * inv_n
                * f.iter()
                    .zip(z)
                    .map(|(&fi, &zi)| (fi + zi) * (fi + zi))
                    .sum::<f64>();

            for l in (0..shapes.len()).rev() {
                let (rows, cols) = shapes[l];
                let off = offsets[l];
                let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
                let (gw, gb) = grad[off..off + rows * (cols + 1)].split_at_mut(rows * cols);
                for r in 0..rows {
                    let dr = delta[r];
                    gb[r] += dr;
                    for (g, &xi) in gw[r * cols..(r + 1) * cols].iter_mut().zip(input) {
                        *g += dr * xi;
                    }
                }
                if l > 0 {
                    // Pull delta through W, then through the tanh.
                    let w = &self.params[off..off + rows * cols];
                    let mut prev = vec![0.0; cols];
                    for r in 0..rows {
                        let dr = delta[r];
                        for (p, &wi) in prev.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                            *p += wi * dr;
                        }
                    }
                    for (p, &h) in prev.iter_mut().zip(input) {
                        *p *= 1.0 - h * h;
                    }
                    delta = prev;
                }
            }
        }
        (loss, grad)
    }
}

impl ScoreModel for MlpScoreNet {
    fn dims(&self) -> usize {
        self.dims
    }

    fn score_at(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        assert_eq!(x.len(), self.dims);
        assert_eq!(out.len(), self.dims);
        assert!(sigma > 0.0, "score needs a positive noise scale");
        let f = self.forward(x);
        for (o, &fi) in out.iter_mut().zip(&f) {
            *o = fi / sigma;
        }
    }
}

/// Fixed draw of a denoising batch: perturbed inputs and their noise
/// targets. Keeping the draw separate from loss and gradient lets
/// finite differences re-evaluate the identical batch.
#[derive(Debug, Clone)]
pub struct DsmBatch {
    noisy: Array2<f64>,
    targets: Array2<f64>,
}

impl DsmBatch {
    /// Draw `batch` examples: pick a data row and a scale uniformly,
    /// perturb, and record the noise as the regression target.
    pub fn draw(
        data: ArrayView2<'_, f64>,
        sigmas: &[f64],
        batch: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::draw_with(data, sigmas, batch, &mut rng)
    }

    pub(crate) fn draw_with(
        data: ArrayView2<'_, f64>,
        sigmas: &[f64],
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid("data must be nonempty"));
        }
        if sigmas.is_empty() || sigmas.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("scales must be positive and finite"));
        }
        if batch == 0 {
            return Err(Error::invalid("batch size must be at least one"));
        }
        let d = data.ncols();
        let mut noisy = Array2::zeros((batch, d));
        let mut targets = Array2::zeros((batch, d));
        for e in 0..batch {
            let row = data.row(rng.random_range(0..data.nrows()));
            let sigma = sigmas[rng.random_range(0..sigmas.len())];
            for j in 0..d {
                let z: f64 = StandardNormal.sample(rng);
                targets[[e, j]] = z;
                noisy[[e, j]] = row[j] + sigma * z;
            }
        }
        Ok(Self { noisy, targets })
    }

    pub fn len(&self) -> usize {
        self.noisy.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn noisy(&self) -> ArrayView2<'_, f64> {
        self.noisy.view()
    }

    pub fn targets(&self) -> ArrayView2<'_, f64> {
        self.targets.view()
    }

    fn rows(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        let d = self.noisy.ncols();
        let x = self.noisy.as_slice().expect("standard layout");
        let z = self.targets.as_slice().expect("standard layout");
        (0..self.len()).map(move |e| (&x[e * d..(e + 1) * d], &z[e * d..(e + 1) * d]))
    }
}

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(lr: f64, param_count: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Exponential moving average of the parameter vector. The shadow
/// trails the raw parameters and is the weight set actually used for
/// sampling and evaluation.
#[derive(Debug, Clone)]
pub struct EmaTracker {
    decay: f64,
    shadow: Vec<f64>,
}

impl EmaTracker {
    pub fn new(decay: f64, initial: Vec<f64>) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::invalid("decay must lie strictly inside (0, 1)"));
        }
        Ok(Self {
            decay,
            shadow: initial,
        })
    }

    pub fn update(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.shadow.len());
        let d = self.decay;
        for (s, &p) in self.shadow.iter_mut().zip(params) {
            *s = d * *s + (1.0 - d) * p;
        }
    }

    pub fn shadow(&self) -> &[f64] {
        &self.shadow
    }

    pub fn into_shadow(self) -> Vec<f64> {
        self.shadow
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ema_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 128,
            learning_rate: 1e-3,
            ema_decay: 0.999,
            seed: 0,
        }
    }
}

/// Finished training run: per-iteration losses, the raw network, and
/// its EMA companion.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub losses: Vec<f64>,
    pub net: MlpScoreNet,
    pub ema: MlpScoreNet,
}

/// Denoising training loop: Adam on the batch gradient, EMA tracked
/// every step. One ChaCha stream drives all batch draws, so a seed
/// pins the whole run.
pub fn train(
    net: MlpScoreNet,
    data: ArrayView2<'_, f64>,
    sigmas: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    if cfg.iterations == 0 {
        return Err(Error::invalid("need at least one iteration"));
    }
    if data.ncols() != net.dims {
        return Err(Error::invalid(format!(
            "data dimension {} does not match network dimension {}",
            data.ncols(),
            net.dims
        )));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::invalid("learning rate must be positive and finite"));
    }
    let mut net = net;
    let mut adam = Adam::new(cfg.learning_rate, net.params.len());
    let mut ema = EmaTracker::new(cfg.ema_decay, net.params.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch = DsmBatch::draw_with(data, sigmas, cfg.batch_size, &mut rng)?;
        let (loss, grad) = net.dsm_grad(&batch);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { iteration: it });
        }
        adam.step(&mut net.params, &grad);
        ema.update(&net.params);
        losses.push(loss);
    }
    let ema_net = net.with_params(ema.into_shadow())?;
    Ok(TrainRun {
        losses,
        net,
        ema: ema_net,
    })
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SKNT";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    dims: usize,
    hidden: usize,
    hidden_layers: usize,
}

/// Write raw and EMA parameter sets of one architecture to a
/// checkpoint file: magic, JSON header, then both parameter vectors as
/// little-endian f64.
pub fn save_checkpoint(path: &Path, net: &MlpScoreNet, ema: &MlpScoreNet) -> Result<()> {
    if net.dims != ema.dims || net.hidden != ema.hidden || net.hidden_layers != ema.hidden_layers {
        return Err(Error::invalid(
            "raw and EMA networks must share an architecture",
        ));
    }
    let header = serde_json::to_vec(&CheckpointHeader {
        version: 1,
        dims: net.dims,
        hidden: net.hidden,
        hidden_layers: net.hidden_layers,
    })
    .expect("header serializes");
    let file =
        std::fs::File::create(path).map_err(|e| Error::format(path.to_owned(), e.to_string()))?;
    let mut w = BufWriter::new(file);
    let go = |w: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for &p in net.params.iter().chain(ema.params.iter()) {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()
    };
    go(&mut w).map_err(|e| Error::format(path.to_owned(), e.to_string()))
}

/// Read a checkpoint back as `(raw, ema)`.
pub fn load_checkpoint(path: &Path) -> Result<(MlpScoreNet, MlpScoreNet)> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::format(path.to_owned(), e.to_string()))?;
    let mut r = BufReader::new(file);
    let bad = |reason: &str| Error::format(path.to_owned(), reason.to_string());

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| bad(&e.to_string()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let mut lenbuf = [0u8; 4];
    r.read_exact(&mut lenbuf).map_err(|e| bad(&e.to_string()))?;
    let hlen = u32::from_le_bytes(lenbuf) as usize;
    if hlen > 1 << 20 {
        return Err(bad("unreasonable header length"));
    }
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf).map_err(|e| bad(&e.to_string()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&hbuf).map_err(|e| bad(&e.to_string()))?;
    if header.version != 1 {
        return Err(bad("unsupported checkpoint version"));
    }
    let arch = MlpScoreNet::zeroed(header.dims, header.hidden, header.hidden_layers)
        .map_err(|e| bad(&e.to_string()))?;
    let count = arch.param_count();
    let mut payload = vec![0u8; 2 * count * 8];
    r.read_exact(&mut payload)
        .map_err(|e| bad(&e.to_string()))?;
    let mut tail = [0u8; 1];
    if r.read(&mut tail).map_err(|e| bad(&e.to_string()))? != 0 {
        return Err(bad("trailing bytes after checkpoint payload"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let net = arch.with_params(values[..count].to_vec())?;
    let ema = arch.with_params(values[count..].to_vec())?;
    Ok((net, ema))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};
    use tempfile::tempdir;

    fn tiny_batch(seed: u64) -> DsmBatch {
        let data = array![[0.2, 0.8], [0.6, 0.4], [0.9, 0.1]];
        DsmBatch::draw(data.view(), &[0.5, 0.25, 0.125], 16, seed).unwrap()
    }

    #[test]
    fn zero_network_loss_sits_at_the_noise_floor() {
        // With f = 0 the loss is half the mean squared norm of a
        // standard normal vector: D / 2.
        let data = Array2::zeros((4, 3));
        let batch = DsmBatch::draw(data.view(), &[0.3], 2048, 7).unwrap();
        let net = MlpScoreNet::zeroed(3, 8, 1).unwrap();
        let loss = net.dsm_loss(&batch);
        assert!((loss - 1.5).abs() < 0.1, "loss = {loss}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let batch = tiny_batch(3);
        for hidden_layers in [0usize, 1, 2] {
            let mut net = MlpScoreNet::new(2, 5, hidden_layers, 11).unwrap();
            // Perturb biases away from zero so their gradients are
            // exercised at a generic point.
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for p in net.params.iter_mut() {
                *p += 0.05 * rng.random_range(-1.0..1.0);
            }
            let (loss, grad) = net.dsm_grad(&batch);
            assert_relative_eq!(loss, net.dsm_loss(&batch), max_relative = 1e-12);
            let h = 1e-6;
            for i in 0..net.param_count() {
                let orig = net.params[i];
                net.params[i] = orig + h;
                let up = net.dsm_loss(&batch);
                net.params[i] = orig - h;
                let dn = net.dsm_loss(&batch);
                net.params[i] = orig;
                let fd = (up - dn) / (2.0 * h);
                assert!(
                    (grad[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                    "layers {hidden_layers} param {i}: grad {} vs fd {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn linear_network_gradient_vanishes_at_the_least_squares_optimum() {
        // One-dimensional linear network: loss = mean (w x + b + z)^2 / 2
        // has a closed-form stationary point from the normal equations.
        let data = array![[0.3], [0.7], [0.1], [0.9]];
        let batch = DsmBatch::draw(data.view(), &[0.4, 0.2], 64, 13).unwrap();
        let xs: Vec<f64> = batch.noisy().column(0).to_vec();
        let zs: Vec<f64> = batch.targets().column(0).to_vec();
        let n = xs.len() as f64;
        let (sx, sz) = (xs.iter().sum::<f64>(), zs.iter().sum::<f64>());
        let sxx = xs.iter().map(|x| x * x).sum::<f64>();
        let sxz = xs.iter().zip(&zs).map(|(x, z)| x * z).sum::<f64>();
        // Solve d/dw = 0, d/db = 0: w (sxx) + b (sx) = -sxz; w (sx) + b n = -sz.
        let det = sxx * n - sx * sx;
        let w = (-sxz * n + sx * sz) / det;
        let b = (-sz * sxx + sx * sxz) / det;

        let net = MlpScoreNet::zeroed(1, 0, 0).unwrap();
        let net = net.with_params(vec![w, b]).unwrap();
        let (_, grad) = net.dsm_grad(&batch);
        for g in grad {
            assert!(g.abs() < 1e-12, "gradient {g} at optimum");
        }
    }

    #[test]
    fn score_is_forward_scaled_by_the_scale() {
        let net = MlpScoreNet::new(3, 6, 2, 2).unwrap();
        let x = [0.4, -0.2, 0.9];
        let f = net.forward(&x);
        let mut s = [0.0; 3];
        net.score_at(&x, 0.5, &mut s);
        for (si, fi) in s.iter().zip(&f) {
            // Dividing by a power of two only shifts the exponent.
            assert_eq!(si.to_bits(), (fi / 0.5).to_bits());
        }
    }

    #[test]
    fn batch_scoring_matches_single_rows_bitwise() {
        let net = MlpScoreNet::new(2, 8, 1, 4).unwrap();
        let xs = Array2::from_shape_fn((9, 2), |(i, j)| ((i * 2 + j) as f64 * 0.41).sin());
        let batch = net.score_batch_at(xs.view(), 0.3);
        let mut solo = [0.0; 2];
        for (i, row) in xs.rows().into_iter().enumerate() {
            net.score_at(row.to_slice().unwrap(), 0.3, &mut solo);
            for (a, b) in batch.row(i).iter().zip(&solo) {
                assert_eq!(a.to_bits(), b.to_bits(), "row {i}");
            }
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // Minimize |p - target|^2 / 2; Adam must close most of the gap.
        let target = [3.0, -1.0, 0.5];
        let mut p = vec![0.0; 3];
        let mut adam = Adam::new(0.05, 3);
        for _ in 0..2000 {
            let grad: Vec<f64> = p.iter().zip(&target).map(|(&pi, &t)| pi - t).collect();
            adam.step(&mut p, &grad);
        }
        for (pi, t) in p.iter().zip(&target) {
            assert!((pi - t).abs() < 1e-3, "p = {pi}, target = {t}");
        }
    }

    #[test]
    fn ema_trails_and_converges() {
        let mut ema = EmaTracker::new(0.9, vec![0.0]).unwrap();
        for _ in 0..5 {
            ema.update(&[1.0]);
        }
        let after5 = ema.shadow()[0];
        assert!(after5 > 0.0 && after5 < 1.0);
        assert_relative_eq!(after5, 1.0 - 0.9f64.powi(5), max_relative = 1e-12);
        for _ in 0..200 {
            ema.update(&[1.0]);
        }
        assert!((ema.shadow()[0] - 1.0).abs() < 1e-9);
        assert!(EmaTracker::new(1.0, vec![0.0]).is_err());
    }

    #[test]
    fn training_reduces_the_loss_deterministically() {
        let data = array![[0.5, 0.5]];
        let sigmas = [0.4, 0.2, 0.1];
        let cfg = TrainConfig {
            iterations: 400,
            batch_size: 32,
            learning_rate: 5e-3,
            ema_decay: 0.99,
            seed: 17,
        };
        let net = MlpScoreNet::new(2, 16, 1, 8).unwrap();
        let run1 = train(net.clone(), data.view(), &sigmas, &cfg).unwrap();
        let run2 = train(net, data.view(), &sigmas, &cfg).unwrap();
        // Bit-level reproducibility of the whole run.
        assert_eq!(run1.losses, run2.losses);
        assert_eq!(run1.net.params(), run2.net.params());
        assert_eq!(run1.ema.params(), run2.ema.params());

        let head: f64 = run1.losses[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 = run1.losses[run1.losses.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(tail < head, "head {head}, tail {tail}");
        assert_ne!(run1.net.params(), run1.ema.params());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = MlpScoreNet::new(2, 6, 2, 3).unwrap();
        let ema = net
            .with_params(net.params().iter().map(|p| p * 0.5).collect())
            .unwrap();
        save_checkpoint(&path, &net, &ema).unwrap();
        let (net2, ema2) = load_checkpoint(&path).unwrap();
        assert_eq!(net, net2);
        assert_eq!(ema, ema2);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = MlpScoreNet::new(1, 3, 1, 0).unwrap();
        save_checkpoint(&path, &net, &net).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());

        save_checkpoint(&path, &net, &net).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(load_checkpoint(&path).is_err());

        save_checkpoint(&path, &net, &net).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(7);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn draw_validation() {
        let data = array![[0.1, 0.2]];
        assert!(DsmBatch::draw(data.view(), &[], 4, 0).is_err());
        assert!(DsmBatch::draw(data.view(), &[0.0], 4, 0).is_err());
        assert!(DsmBatch::draw(data.view(), &[0.5], 0, 0).is_err());
        assert!(DsmBatch::draw(Array2::zeros((0, 2)).view(), &[0.5], 4, 0).is_err());
    }
}
