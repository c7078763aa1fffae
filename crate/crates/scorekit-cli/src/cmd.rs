//! Subcommand implementations.
//!
//! Every command that writes files goes through [`OutDir`]: outputs
//! are registered as they are produced, and the run finishes by
//! writing the fully resolved configuration echo plus a manifest of
//! everything in the directory. Identical configuration and seeds
//! produce identical bytes; nothing here records wall-clock state.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2};
use scorekit::data;
use scorekit::net::{self, MlpScoreNet};
use scorekit::oracle::{MixtureScore, ScoreModel};
use scorekit::sampler::{self, NoiseTape};
use scorekit::schedule::{self, LangevinConfig, NoiseSchedule};
use scorekit::theory;
use scorekit::verify;

use crate::config::{Config, Data, Init, Model, Sampler, Setting};
use crate::CliError;

struct OutDir {
    path: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    fn create(path: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(path)
            .map_err(|e| CliError::Other(format!("cannot create {}: {e}", path.display())))?;
        Ok(Self {
            path: path.to_owned(),
            files: Vec::new(),
        })
    }

    /// Path of an output file, registered in the manifest. Also used
    /// to register files a library call writes on its own.
    fn file(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.path.join(name)
    }

    fn finish(mut self, command: &str, echo: &str) -> Result<(), CliError> {
        let echo_path = self.file("resolved-config.toml");
        std::fs::write(&echo_path, echo)
            .map_err(|e| CliError::Other(format!("cannot write config echo: {e}")))?;
        self.files.push("manifest.json".to_string());
        self.files.sort();
        self.files.dedup();
        let manifest = serde_json::json!({ "command": command, "files": self.files });
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(self.path.join("manifest.json"), text + "\n")
            .map_err(|e| CliError::Other(format!("cannot write manifest: {e}")))
    }
}

fn as_data_err(e: scorekit::Error) -> CliError {
    CliError::Data(e.to_string())
}

fn centers_to_array(centers: &[Vec<f64>], dims: usize) -> Result<Array2<f64>, CliError> {
    if centers.is_empty() {
        return Err(CliError::Config("need at least one center".to_string()));
    }
    for (i, row) in centers.iter().enumerate() {
        if row.len() != dims {
            return Err(CliError::Config(format!(
                "center {i} has dimension {}, expected {dims}",
                row.len()
            )));
        }
    }
    let mut a = Array2::zeros((centers.len(), dims));
    for (i, row) in centers.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            a[[i, j]] = v;
        }
    }
    Ok(a)
}

fn load_data(d: &Data, dims: usize, seed: u64) -> Result<Array2<f64>, CliError> {
    let table = match d {
        Data::Cifar10 { path } => {
            require_image_dims(dims)?;
            data::load_cifar10(path).map_err(as_data_err)?
        }
        Data::Cifar10Test { path } => {
            require_image_dims(dims)?;
            data::load_cifar10_test(path).map_err(as_data_err)?
        }
        Data::Matrix { path } => data::read_matrix(path).map_err(as_data_err)?,
        Data::GaussianMixture {
            centers,
            weights,
            component_sigma,
            count,
        } => {
            let arr = centers_to_array(centers, dims)?;
            let w = weights.clone().unwrap_or_else(|| vec![1.0; arr.nrows()]);
            data::sample_gaussian_mixture(arr.view(), &w, *component_sigma, *count, seed)?
        }
    };
    if table.ncols() != dims {
        return Err(CliError::Config(format!(
            "data dimension {} does not match experiment.dims {dims}",
            table.ncols()
        )));
    }
    Ok(table)
}

fn require_image_dims(dims: usize) -> Result<(), CliError> {
    if dims != data::IMAGE_DIMS {
        return Err(CliError::Config(format!(
            "image batches have dimension {}, but experiment.dims is {dims}",
            data::IMAGE_DIMS
        )));
    }
    Ok(())
}

/// Resolve the schedule section: the widest scale comes either from a
/// literal or from a pairwise-distance scan of the configured data.
fn resolve_schedule(
    cfg: &Config,
    seed: u64,
    data: Option<ArrayView2<'_, f64>>,
) -> Result<(NoiseSchedule, f64), CliError> {
    let sched = cfg.schedule()?;
    let dims = cfg.experiment.dims;
    let sigma1 = match (sched.sigma1.expect("schedule.sigma1", "from-data")?, data) {
        (Some(v), _) => v,
        (None, Some(view)) => schedule::max_pairwise_distance(view, sched.subsample, seed)?,
        (None, None) => {
            let owned = load_data(cfg.data()?, dims, seed)?;
            schedule::max_pairwise_distance(owned.view(), sched.subsample, seed)?
        }
    };
    let schedule = match sched.length {
        Some(len) => NoiseSchedule::geometric(sigma1, sched.sigma_l, len, dims)?,
        None => NoiseSchedule::from_overlap(sigma1, sched.sigma_l, dims, sched.target_c)?,
    };
    Ok((schedule, sigma1))
}

fn resolve_epsilon(s: &Sampler, sched: &NoiseSchedule) -> Result<LangevinConfig, CliError> {
    match s.epsilon.expect("sampler.epsilon", "solve")? {
        Some(epsilon) => Ok(LangevinConfig {
            epsilon,
            steps_per_scale: s.steps_per_scale,
            denoise: s.denoise,
        }),
        None => {
            let mut cfg = schedule::solve_epsilon(sched, s.steps_per_scale)?;
            cfg.denoise = s.denoise;
            Ok(cfg)
        }
    }
}

/// Clone of the configuration with every strategy field replaced by
/// the value it resolved to, ready to echo.
fn resolved_echo(
    cfg: &Config,
    seed: u64,
    sigma1: Option<f64>,
    sampler: Option<(&Sampler, f64)>,
) -> Config {
    let mut out = cfg.clone();
    out.experiment.seed = seed;
    if let (Some(v), Some(s)) = (sigma1, out.schedule.as_mut()) {
        s.sigma1 = Setting::Literal(v);
    }
    if let Some((section, epsilon)) = sampler {
        let mut s = section.clone();
        s.epsilon = Setting::Literal(epsilon);
        out.sampler = Some(s);
    }
    out
}

pub fn schedule_cmd(cfg: &Config, seed: u64, out: &Path) -> Result<(), CliError> {
    let mut dir = OutDir::create(out)?;
    let (sched, sigma1) = resolve_schedule(cfg, seed, None)?;
    let sampler_cfg = cfg.sampler.clone().unwrap_or_default();
    let lcfg = resolve_epsilon(&sampler_cfg, &sched)?;

    sched.save(&dir.file("schedule.json"))?;
    let alphas = sched.step_sizes(lcfg.epsilon);
    let rows = sched
        .sigmas()
        .iter()
        .zip(&alphas)
        .enumerate()
        .map(|(i, (&s, &a))| vec![i as f64, s, a]);
    data::write_csv(&dir.file("steps.csv"), &["index", "sigma", "alpha"], rows)?;

    println!(
        "schedule: {} scales, sigma1 = {}, sigmaL = {}, gamma = {}",
        sched.len(),
        sched.sigma1(),
        sched.sigma_l(),
        sched.gamma()
    );
    println!("realized overlap = {:.6}", sched.realized_c());
    println!(
        "steps: T = {}, epsilon = {:e}, denoise = {}",
        lcfg.steps_per_scale, lcfg.epsilon, lcfg.denoise
    );
    println!("schedule id: {}", sched.id());

    let echo = resolved_echo(cfg, seed, Some(sigma1), Some((&sampler_cfg, lcfg.epsilon)));
    dir.finish("schedule", &echo.to_toml())
}

pub fn stats_cmd(cfg: &Config, seed: u64, out: &Path) -> Result<(), CliError> {
    let mut dir = OutDir::create(out)?;
    let table = load_data(cfg.data()?, cfg.experiment.dims, seed)?;
    let subsample = cfg.schedule.as_ref().map_or(10_000, |s| s.subsample);
    let stats = data::distance_stats(table.view(), subsample, seed)?;

    data::write_csv(
        &dir.file("stats.csv"),
        &["max", "median", "mean"],
        [vec![stats.max, stats.median, stats.mean]],
    )?;
    println!("rows = {}, dims = {}", table.nrows(), table.ncols());
    println!("max pairwise distance = {}", stats.max);
    println!("median pairwise distance = {}", stats.median);
    println!("mean pairwise distance = {}", stats.mean);

    let echo = resolved_echo(cfg, seed, None, None);
    dir.finish("stats", &echo.to_toml())
}

pub fn verify_cmd(suite: &str, seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let checks = match suite {
        "coupling" => verify::coupling_battery(50, seed)?,
        "concentration" => verify::concentration_battery(seed)?,
        "variance-flow" => verify::variance_flow_battery(seed)?,
        "all" => {
            let mut v = verify::coupling_battery(50, seed)?;
            v.extend(verify::concentration_battery(seed)?);
            v.extend(verify::variance_flow_battery(seed)?);
            v
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown suite \"{other}\"; expected coupling, concentration, variance-flow, or all"
            )))
        }
    };
    let pass = verify::all_pass(&checks);
    let report = serde_json::json!({
        "suite": suite,
        "seed": seed,
        "pass": pass,
        "checks": checks,
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");

    if let Some(p) = out {
        let mut dir = OutDir::create(p)?;
        std::fs::write(dir.file("report.json"), text + "\n")
            .map_err(|e| CliError::Other(format!("cannot write report: {e}")))?;
        dir.finish(
            "verify",
            &format!("[verify]\nsuite = \"{suite}\"\nseed = {seed}\n"),
        )?;
    }

    if pass {
        Ok(())
    } else {
        let failed = checks.iter().filter(|c| !c.pass).count();
        Err(CliError::Verification(format!(
            "{failed} of {} checks failed",
            checks.len()
        )))
    }
}

pub fn train_cmd(cfg: &Config, seed: u64, out: &Path) -> Result<(), CliError> {
    let mut dir = OutDir::create(out)?;
    let dims = cfg.experiment.dims;
    let table = load_data(cfg.data()?, dims, seed)?;
    let (sched, sigma1) = resolve_schedule(cfg, seed, Some(table.view()))?;
    let tc = cfg.train.clone().unwrap_or_default();

    let net = MlpScoreNet::new(dims, tc.hidden, tc.hidden_layers, seed)?;
    let train_cfg = net::TrainConfig {
        iterations: tc.iterations,
        batch_size: tc.batch_size,
        learning_rate: tc.learning_rate,
        ema_decay: tc.ema_decay,
        seed,
    };
    let run = net::train(net, table.view(), sched.sigmas(), &train_cfg)?;

    net::save_checkpoint(&dir.file("checkpoint.ckpt"), &run.net, &run.ema)?;
    sched.save(&dir.file("schedule.json"))?;
    data::write_csv(
        &dir.file("loss.csv"),
        &["iteration", "loss"],
        run.losses
            .iter()
            .enumerate()
            .map(|(i, &l)| vec![i as f64, l]),
    )?;

    let head = run.losses.first().expect("at least one iteration");
    let tail = run.losses.last().expect("at least one iteration");
    println!(
        "trained {} iterations on {} rows: loss {head} -> {tail}",
        run.losses.len(),
        table.nrows()
    );

    let mut echo = resolved_echo(cfg, seed, Some(sigma1), None);
    echo.train = Some(tc);
    dir.finish("train", &echo.to_toml())
}

fn build_model(m: &Model, dims: usize) -> Result<Box<dyn ScoreModel + Sync>, CliError> {
    match m {
        Model::Checkpoint { path, use_ema } => {
            let (raw, ema) = net::load_checkpoint(path).map_err(as_data_err)?;
            let picked = if *use_ema { ema } else { raw };
            if picked.dims() != dims {
                return Err(CliError::Config(format!(
                    "checkpoint dimension {} does not match experiment.dims {dims}",
                    picked.dims()
                )));
            }
            Ok(Box::new(picked))
        }
        Model::Mixture {
            centers,
            weights,
            component_sigma,
        } => {
            let arr = centers_to_array(centers, dims)?;
            let w = weights.clone().unwrap_or_else(|| vec![1.0; arr.nrows()]);
            let mix = MixtureScore::new(arr, &w, component_sigma * component_sigma)?;
            Ok(Box::new(mix))
        }
    }
}

fn initial_states(s: &Sampler, dims: usize, seed: u64) -> Result<Array2<f64>, CliError> {
    match s.init {
        Init::Uniform => Ok(sampler::uniform_init(dims, s.chains, seed + 1)),
        Init::Gaussian => Ok(data::sample_gaussian(
            Array1::zeros(dims).view(),
            1.0,
            s.chains,
            seed + 1,
        )?),
        Init::FromFile => {
            let path = s.init_path.as_ref().ok_or_else(|| {
                CliError::Config("init = \"from-file\" needs sampler.init_path".to_string())
            })?;
            let m = data::read_matrix(path).map_err(as_data_err)?;
            if m.ncols() != dims {
                return Err(CliError::Config(format!(
                    "initial states have dimension {}, expected {dims}",
                    m.ncols()
                )));
            }
            Ok(m)
        }
    }
}

fn write_samples(
    dir: &mut OutDir,
    stem: &str,
    rows: ArrayView2<'_, f64>,
    meta: Option<&data::SampleMeta>,
) -> Result<(), CliError> {
    let matrix_path = dir.file(&format!("{stem}.skmx"));
    data::write_matrix(&matrix_path, rows)?;
    if let Some(meta) = meta {
        data::write_sample_meta(&matrix_path, meta)?;
        dir.file(&format!("{stem}.json"));
    }
    let header: Vec<String> = (0..rows.ncols()).map(|j| format!("x{j}")).collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    data::write_csv(
        &dir.file(&format!("{stem}.csv")),
        &header_refs,
        rows.rows().into_iter().map(|r| r.to_vec()),
    )?;
    Ok(())
}

pub fn sample_cmd(cfg: &Config, seed: u64, out: &Path) -> Result<(), CliError> {
    let mut dir = OutDir::create(out)?;
    let dims = cfg.experiment.dims;
    let model = build_model(cfg.model()?, dims)?;
    let (sched, sigma1) = resolve_schedule(cfg, seed, None)?;
    let sampler_cfg = cfg.sampler.clone().unwrap_or_default();
    let lcfg = resolve_epsilon(&sampler_cfg, &sched)?;
    let x0 = initial_states(&sampler_cfg, dims, seed)?;

    let model: &(dyn ScoreModel + Sync) = model.as_ref();
    let run = if sampler_cfg.trace {
        sampler::anneal_sample_traced(&model, &sched, &lcfg, x0.view(), seed + 2)?
    } else {
        sampler::anneal_sample(&model, &sched, &lcfg, x0.view(), seed + 2)?
    };

    let meta = data::SampleMeta {
        version: 1,
        rows: run.samples.nrows(),
        dims,
        seed,
        schedule_id: sched.id(),
    };
    write_samples(&mut dir, "samples", run.samples.view(), Some(&meta))?;
    if let Some(tapes) = &run.tapes {
        for (c, tape) in tapes.iter().enumerate() {
            tape.save(&dir.file(&format!("tape-{c:03}.sktp")))?;
        }
    }
    sched.save(&dir.file("schedule.json"))?;

    println!("sampled {} chains of dimension {dims}", run.samples.nrows());
    println!(
        "mean square per dimension = {}",
        theory::mean_sq_per_dim(run.samples.view())
    );

    let echo = resolved_echo(cfg, seed, Some(sigma1), Some((&sampler_cfg, lcfg.epsilon)));
    dir.finish("sample", &echo.to_toml())
}

pub fn interpolate_cmd(cfg: &Config, seed: u64, out: &Path) -> Result<(), CliError> {
    let mut dir = OutDir::create(out)?;
    let dims = cfg.experiment.dims;
    let spec = cfg.interpolate()?;
    let model = build_model(cfg.model()?, dims)?;
    let (sched, sigma1) = resolve_schedule(cfg, seed, None)?;
    let sampler_cfg = cfg.sampler.clone().unwrap_or_default();
    let lcfg = resolve_epsilon(&sampler_cfg, &sched)?;

    let a = NoiseTape::load(&spec.tape_a).map_err(as_data_err)?;
    let b = NoiseTape::load(&spec.tape_b).map_err(as_data_err)?;
    let model: &(dyn ScoreModel + Sync) = model.as_ref();
    let rows = sampler::interpolate(&model, &sched, &lcfg, &a, &b, spec.count)?;
    write_samples(&mut dir, "interpolated", rows.view(), None)?;

    println!(
        "blended {} interior chains between two recorded tapes",
        rows.nrows()
    );

    let echo = resolved_echo(cfg, seed, Some(sigma1), Some((&sampler_cfg, lcfg.epsilon)));
    dir.finish("interpolate", &echo.to_toml())
}

/// Exact-score sampling study on a mixture of point masses at the data
/// rows: one wide and one narrow schedule from the same uniform
/// initialization, judged by mean pairwise sample distance against the
/// data's own spread.
pub fn fig2_cmd(cfg: &Config, seed: u64, out: &Path) -> Result<(), CliError> {
    let mut dir = OutDir::create(out)?;
    let dims = cfg.experiment.dims;
    let table = load_data(cfg.data()?, dims, seed)?;
    let f2 = cfg.fig2.clone().unwrap_or_default();
    let (sigma_l, target_c, length, subsample) = match &cfg.schedule {
        Some(s) => (s.sigma_l, s.target_c, s.length, s.subsample),
        None => (0.01, 0.5, None, 10_000),
    };
    let sampler_cfg = cfg.sampler.clone().unwrap_or_default();

    let baseline = data::distance_stats(table.view(), subsample, seed)?;
    let rows = table.nrows();
    let oracle = MixtureScore::uniform(table, 0.0)?;

    let mut lines = String::from("run,sigma1,mean,median,max\n");
    use std::fmt::Write as _;
    for (label, sigma1) in [("wide", f2.sigma1_wide), ("narrow", f2.sigma1_narrow)] {
        let sched = match length {
            Some(len) => NoiseSchedule::geometric(sigma1, sigma_l, len, dims)?,
            None => NoiseSchedule::from_overlap(sigma1, sigma_l, dims, target_c)?,
        };
        let lcfg = resolve_epsilon(&sampler_cfg, &sched)?;
        let x0 = sampler::uniform_init(dims, sampler_cfg.chains, seed + 1);
        let run = sampler::anneal_sample(&oracle, &sched, &lcfg, x0.view(), seed + 2)?;
        let stats = data::distance_stats(run.samples.view(), subsample, seed)?;
        println!(
            "{label} (sigma1 = {sigma1}, {} scales): mean pairwise distance = {}",
            sched.len(),
            stats.mean
        );
        writeln!(
            lines,
            "{label},{sigma1},{},{},{}",
            stats.mean, stats.median, stats.max
        )
        .expect("string write");
    }
    println!(
        "data baseline ({rows} rows): mean pairwise distance = {}",
        baseline.mean
    );
    writeln!(
        lines,
        "data,0,{},{},{}",
        baseline.mean, baseline.median, baseline.max
    )
    .expect("string write");
    std::fs::write(dir.file("fig2.csv"), lines)
        .map_err(|e| CliError::Other(format!("cannot write table: {e}")))?;

    let echo = resolved_echo(cfg, seed, None, None);
    dir.finish("fig2", &echo.to_toml())
}
