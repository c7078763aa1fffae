//! Annealed Langevin sampling with replayable noise tapes.
//!
//! The sampler walks a [`NoiseSchedule`] from its widest scale to its
//! narrowest. At scale `sigma_i` it takes `steps_per_scale` Langevin
//! steps with step size `alpha_i = epsilon * sigma_i^2 / sigma_L^2`:
//!
//! `x <- x + alpha_i s(x, sigma_i) + sqrt(2 alpha_i) z`
//!
//! and finishes with one deterministic denoising move
//! `x <- x + sigma_L^2 s(x, sigma_L)`, the posterior-mean correction
//! that strips the residual noise of the last scale.
//!
//! Determinism contract: chain `c` draws its noise from a ChaCha
//! stream with id `c` over the run's seed, and every per-chain update
//! uses scalar arithmetic plus score rows that are bit-identical to
//! single-row calls. A batch of `M` chains therefore produces exactly
//! the same trajectories as `M` one-chain runs, and a recorded
//! [`NoiseTape`] replays its chain bit for bit.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec;
use crate::oracle::ScoreModel;
use crate::schedule::{LangevinConfig, NoiseSchedule};

/// A chain whose coordinates leave `[-threshold, threshold]` is
/// reported as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

const TAPE_MAGIC: &[u8; 4] = b"SKTP";

/// Every random input of one chain: the initial state and the noise of
/// each Langevin step, in `(scale, step)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTape {
    dims: usize,
    scales: usize,
    steps_per_scale: usize,
    init: Vec<f64>,
    noise: Vec<f64>,
}

impl NoiseTape {
    fn with_capacity(dims: usize, scales: usize, steps_per_scale: usize, init: Vec<f64>) -> Self {
        Self {
            dims,
            scales,
            steps_per_scale,
            init,
            noise: Vec::with_capacity(dims * scales * steps_per_scale),
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn steps_per_scale(&self) -> usize {
        self.steps_per_scale
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    /// Noise vector of one `(scale, step)` slot.
    pub fn noise_at(&self, scale: usize, step: usize) -> &[f64] {
        let slot = scale * self.steps_per_scale + step;
        &self.noise[slot * self.dims..(slot + 1) * self.dims]
    }

    /// Write the tape: magic, version, shape, then init and noise as
    /// little-endian f64.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write as _;
        let file = std::fs::File::create(path)
            .map_err(|e| Error::format(path.to_owned(), e.to_string()))?;
        let mut w = std::io::BufWriter::new(file);
        let go = |w: &mut std::io::BufWriter<std::fs::File>| -> std::io::Result<()> {
            w.write_all(TAPE_MAGIC)?;
            w.write_all(&1u32.to_le_bytes())?;
            for n in [self.dims, self.scales, self.steps_per_scale] {
                w.write_all(&(n as u64).to_le_bytes())?;
            }
            for &v in self.init.iter().chain(self.noise.iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()
        };
        go(&mut w).map_err(|e| Error::format(path.to_owned(), e.to_string()))
    }

    /// Read a tape written by [`NoiseTape::save`].
    pub fn load(path: &std::path::Path) -> Result<Self> {
        use std::io::Read as _;
        let bad = |reason: String| Error::format(path.to_owned(), reason);
        let file = std::fs::File::open(path).map_err(|e| bad(e.to_string()))?;
        let mut r = std::io::BufReader::new(file);

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
        if &magic != TAPE_MAGIC {
            return Err(bad("not a noise tape (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|e| bad(e.to_string()))?;
        if u32::from_le_bytes(word) != 1 {
            return Err(bad("unsupported tape version".into()));
        }
        let mut shape = [0usize; 3];
        for n in shape.iter_mut() {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf).map_err(|e| bad(e.to_string()))?;
            *n = usize::try_from(u64::from_le_bytes(buf))
                .map_err(|_| bad("tape shape overflows".into()))?;
        }
        let [dims, scales, steps_per_scale] = shape;
        if dims == 0 {
            return Err(bad("tape dimension must be at least one".into()));
        }
        let count = dims
            .checked_mul(scales)
            .and_then(|n| n.checked_mul(steps_per_scale))
            .and_then(|n| n.checked_add(dims))
            .ok_or_else(|| bad("tape shape overflows".into()))?;
        let mut payload = vec![0u8; count * 8];
        r.read_exact(&mut payload).map_err(|e| bad(e.to_string()))?;
        let mut tail = [0u8; 1];
        if r.read(&mut tail).map_err(|e| bad(e.to_string()))? != 0 {
            return Err(bad("trailing bytes after tape payload".into()));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let init: Vec<f64> = values.by_ref().take(dims).collect();
        Ok(Self {
            dims,
            scales,
            steps_per_scale,
            init,
            noise: values.collect(),
        })
    }

    fn matches(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.scales == other.scales
            && self.steps_per_scale == other.steps_per_scale
    }
}

/// Output of a sampling run.
#[derive(Debug, Clone)]
pub struct SampleRun {
    /// Final chain states, after denoising when the configuration asks
    /// for it.
    pub samples: Array2<f64>,
    /// Chain states before the denoising move; equal to `samples` when
    /// denoising is disabled.
    pub raw: Array2<f64>,
    /// One tape per chain when the run was traced.
    pub tapes: Option<Vec<NoiseTape>>,
}

/// Uniform `[0, 1)^D` initial states, one ChaCha stream per chain, so
/// chain `c`'s row does not depend on how many chains are requested.
pub fn uniform_init(dims: usize, chains: usize, seed: u64) -> Array2<f64> {
    let mut out = Array2::zeros((chains, dims));
    for (c, mut row) in out.rows_mut().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        for x in row.iter_mut() {
            *x = rng.random::<f64>();
        }
    }
    out
}

/// Posterior-mean denoising: `x + sigma^2 s(x, sigma)` per row.
pub fn denoise<S: ScoreModel>(model: &S, x: ArrayView2<'_, f64>, sigma: f64) -> Array2<f64> {
    let scores = model.score_batch_at(x, sigma);
    let mut out = x.to_owned();
    let v = sigma * sigma;
    for (mut row, srow) in out.rows_mut().into_iter().zip(scores.rows()) {
        for (xi, &si) in row.iter_mut().zip(srow) {
            *xi += v * si;
        }
    }
    out
}

/// Annealed Langevin run over all chains in `x0` (one per row).
pub fn anneal_sample<S: ScoreModel>(
    model: &S,
    schedule: &NoiseSchedule,
    cfg: &LangevinConfig,
    x0: ArrayView2<'_, f64>,
    seed: u64,
) -> Result<SampleRun> {
    run(model, schedule, cfg, x0, seed, false)
}

/// As [`anneal_sample`], recording a [`NoiseTape`] per chain. Tapes
/// hold `scales * steps_per_scale * dims` values each; trace small
/// runs, not image-scale batches.
pub fn anneal_sample_traced<S: ScoreModel>(
    model: &S,
    schedule: &NoiseSchedule,
    cfg: &LangevinConfig,
    x0: ArrayView2<'_, f64>,
    seed: u64,
) -> Result<SampleRun> {
    run(model, schedule, cfg, x0, seed, true)
}

fn validate<S: ScoreModel>(
    model: &S,
    schedule: &NoiseSchedule,
    cfg: &LangevinConfig,
    dims: usize,
) -> Result<()> {
    if model.dims() != schedule.dims() {
        return Err(Error::invalid(format!(
            "model dimension {} does not match schedule dimension {}",
            model.dims(),
            schedule.dims()
        )));
    }
    if dims != model.dims() {
        return Err(Error::invalid(format!(
            "state dimension {dims} does not match model dimension {}",
            model.dims()
        )));
    }
    if cfg.steps_per_scale == 0 {
        return Err(Error::invalid("need at least one step per scale"));
    }
    let sl = schedule.sigma_l();
    let limit = 2.0 * sl * sl;
    if !(cfg.epsilon > 0.0 && cfg.epsilon < limit) {
        return Err(Error::DivergentRegime {
            epsilon: cfg.epsilon,
            limit,
        });
    }
    Ok(())
}

// Shared per-row update; replay must round exactly like the batched
// path, so both go through this one function.
#[inline]
fn langevin_update(x: &mut [f64], s: &[f64], z: &[f64], alpha: f64, root: f64) {
    for ((xi, &si), &zi) in x.iter_mut().zip(s).zip(z) {
        *xi += alpha * si + root * zi;
    }
}

fn check_row(x: &[f64]) -> bool {
    x.iter().all(|&v| v.abs() < DIVERGENCE_THRESHOLD)
}

fn run<S: ScoreModel>(
    model: &S,
    schedule: &NoiseSchedule,
    cfg: &LangevinConfig,
    x0: ArrayView2<'_, f64>,
    seed: u64,
    record: bool,
) -> Result<SampleRun> {
    let (m, d) = x0.dim();
    if m == 0 {
        return Err(Error::invalid("need at least one chain"));
    }
    validate(model, schedule, cfg, d)?;

    let mut x = x0.as_standard_layout().to_owned();
    let scales = schedule.len();
    let steps = cfg.steps_per_scale;
    let mut rngs: Vec<ChaCha8Rng> = (0..m)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            rng
        })
        .collect();
    let mut tapes: Option<Vec<NoiseTape>> = record.then(|| {
        (0..m)
            .map(|c| NoiseTape::with_capacity(d, scales, steps, x.row(c).to_vec()))
            .collect()
    });

    let sl2 = schedule.sigma_l() * schedule.sigma_l();
    let mut z = vec![0.0f64; d];
    for (i, &sigma) in schedule.sigmas().iter().enumerate() {
        let alpha = cfg.epsilon * (sigma * sigma) / sl2;
        let root = (2.0 * alpha).sqrt();
        for t in 0..steps {
            let scores = model.score_batch_at(x.view(), sigma);
            for c in 0..m {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(&mut rngs[c]);
                }
                if let Some(tapes) = tapes.as_mut() {
                    tapes[c].noise.extend_from_slice(&z);
                }
                let row = x.row_mut(c).into_slice().expect("standard layout");
                let srow = scores.row(c);
                langevin_update(
                    row,
                    srow.to_slice().expect("standard layout"),
                    &z,
                    alpha,
                    root,
                );
                if !check_row(row) {
                    return Err(Error::DivergedChain {
                        chain: c,
                        scale: i,
                        scales,
                        step: t,
                        steps,
                        threshold: DIVERGENCE_THRESHOLD,
                    });
                }
            }
        }
    }

    let raw = x;
    let samples = if cfg.denoise {
        denoise(model, raw.view(), schedule.sigma_l())
    } else {
        raw.clone()
    };
    Ok(SampleRun {
        samples,
        raw,
        tapes,
    })
}

/// Re-run one chain from its tape. With the same model, schedule, and
/// configuration this reproduces the recorded chain bit for bit.
pub fn replay<S: ScoreModel>(
    model: &S,
    schedule: &NoiseSchedule,
    cfg: &LangevinConfig,
    tape: &NoiseTape,
) -> Result<Vec<f64>> {
    validate(model, schedule, cfg, tape.dims)?;
    if tape.scales != schedule.len() || tape.steps_per_scale != cfg.steps_per_scale {
        return Err(Error::invalid(
            "tape shape does not match schedule and configuration",
        ));
    }
    let d = tape.dims;
    let mut x = tape.init.clone();
    let mut s = vec![0.0f64; d];
    let sl2 = schedule.sigma_l() * schedule.sigma_l();
    for (i, &sigma) in schedule.sigmas().iter().enumerate() {
        let alpha = cfg.epsilon * (sigma * sigma) / sl2;
        let root = (2.0 * alpha).sqrt();
        for t in 0..cfg.steps_per_scale {
            model.score_at(&x, sigma, &mut s);
            langevin_update(&mut x, &s, tape.noise_at(i, t), alpha, root);
            if !check_row(&x) {
                return Err(Error::DivergedChain {
                    chain: 0,
                    scale: i,
                    scales: tape.scales,
                    step: t,
                    steps: cfg.steps_per_scale,
                    threshold: DIVERGENCE_THRESHOLD,
                });
            }
        }
    }
    if cfg.denoise {
        let sigma = schedule.sigma_l();
        model.score_at(&x, sigma, &mut s);
        let v = sigma * sigma;
        for (xi, &si) in x.iter_mut().zip(&s) {
            *xi += v * si;
        }
    }
    Ok(x)
}

/// `k` interior tapes on the great-circle arc between two tapes of
/// equal shape: tape `j` (1-based) mixes with angle
/// `theta = j pi / (2 (k + 1))` as `cos(theta) a + sin(theta) b`,
/// elementwise over both the initial state and every noise slot. The
/// rotation preserves the Gaussian law of the step noise, so each
/// interior tape is as probable as the originals.
pub fn interpolate_tapes(a: &NoiseTape, b: &NoiseTape, k: usize) -> Result<Vec<NoiseTape>> {
    if !a.matches(b) {
        return Err(Error::invalid("tapes have different shapes"));
    }
    if k == 0 {
        return Err(Error::invalid("need at least one interior point"));
    }
    let mut out = Vec::with_capacity(k);
    for j in 1..=k {
        let theta = j as f64 * std::f64::consts::FRAC_PI_2 / (k + 1) as f64;
        let (c, s) = (theta.cos(), theta.sin());
        let mix = |p: &[f64], q: &[f64]| -> Vec<f64> {
            p.iter().zip(q).map(|(&x, &y)| c * x + s * y).collect()
        };
        out.push(NoiseTape {
            dims: a.dims,
            scales: a.scales,
            steps_per_scale: a.steps_per_scale,
            init: mix(&a.init, &b.init),
            noise: mix(&a.noise, &b.noise),
        });
    }
    Ok(out)
}

/// Replay the `k` interior tapes between `a` and `b`; row `j` of the
/// result is the sample of interior tape `j + 1`.
pub fn interpolate<S: ScoreModel + Sync>(
    model: &S,
    schedule: &NoiseSchedule,
    cfg: &LangevinConfig,
    a: &NoiseTape,
    b: &NoiseTape,
    k: usize,
) -> Result<Array2<f64>> {
    let tapes = interpolate_tapes(a, b, k)?;
    let rows = exec::run_blocks(k, |j| replay(model, schedule, cfg, &tapes[j]));
    let mut flat = Vec::with_capacity(k * a.dims());
    for row in rows {
        flat.extend_from_slice(&row?);
    }
    Array2::from_shape_vec((k, a.dims()), flat).map_err(|e| Error::invalid(e.to_string()))
}
