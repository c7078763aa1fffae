//! Randomized verification batteries for the closed-form results.
//!
//! Each battery compares Monte-Carlo estimates against an exact
//! expression from the schedule or oracle modules and reports one
//! [`Check`] per comparison. The batteries are seeded, so a report is
//! reproducible, and every check carries the numbers it was judged on.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::oracle::{mode_coupling_bound, MixtureScore};
use crate::schedule::{langevin_variance_ratio, NoiseSchedule};
use crate::theory::{self, RadialLaw};

/// One verdict: the quantities that were compared and whether the
/// comparison passed at the stated tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub tolerance: f64,
    pub values: BTreeMap<String, f64>,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, tolerance: f64, pairs: &[(&str, f64)]) -> Self {
        Self {
            name: name.into(),
            pass,
            tolerance,
            values: pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

// Per-config seed, decorrelated from the battery seed.
fn sub_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Mode-coupling battery: over random two-point-mass configurations,
/// the posterior weight of the far component, averaged over draws
/// around the near one, must stay under the closed-form bound with
/// three standard errors of slack. Includes the frozen wide-separation
/// value: at separation 18 and unit scale the bound is below 1e-17.
pub fn coupling_battery(configs: usize, seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::with_capacity(configs + 1);
    let far = mode_coupling_bound(18.0, 1.0);
    checks.push(Check::new(
        "coupling-bound-at-separation-18",
        far < 1e-17,
        1e-17,
        &[("bound", far)],
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..configs {
        let dims = [2usize, 16, 256][i % 3];
        let sigma = 10f64.powf(rng.random_range(-1.0..1.0));
        let separation = rng.random_range(2.0..10.0) * sigma;
        let mut centers = Array2::zeros((2, dims));
        centers[[1, 0]] = separation;
        let mix = MixtureScore::uniform(centers, 0.0)?;
        let (mean, stderr) = mix.mean_responsibility_from(0, 1, sigma, 2000, sub_seed(seed, i))?;
        let bound = mode_coupling_bound(separation, sigma);
        checks.push(Check::new(
            format!("coupling-{dims}d-{i:02}"),
            mean <= bound + 3.0 * stderr,
            3.0,
            &[
                ("dims", dims as f64),
                ("sigma", sigma),
                ("separation", separation),
                ("mean_responsibility", mean),
                ("stderr", stderr),
                ("bound", bound),
            ],
        ));
    }
    Ok(checks)
}

/// Radial-concentration battery: the radial density integrates to one,
/// exact radial samples in high dimension pass a KS test against the
/// thin-shell normal approximation, and the approximation improves
/// monotonically with dimension.
pub fn concentration_battery(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    for dims in [2usize, 10, 3072] {
        let law = RadialLaw::new(dims, 1.0)?;
        let (mean, sd) = law.normal_approx();
        let mass = law.mass(0.0, mean + 12.0 * sd);
        checks.push(Check::new(
            format!("radial-mass-{dims}d"),
            (mass - 1.0).abs() < 1e-8,
            1e-8,
            &[("mass", mass)],
        ));
    }

    let n = 10_000;
    let ks_at = |dims: usize, s: u64| -> Result<f64> {
        let mut sorted = theory::sample_radial(dims, 1.0, n, s)?;
        sorted.sort_by(f64::total_cmp);
        let (mean, sd) = RadialLaw::new(dims, 1.0)?.normal_approx();
        let cdf = theory::normal_cdf_values(&sorted, mean, sd);
        Ok(theory::ks_statistic(&sorted, &cdf))
    };

    let ks_image = ks_at(3072, sub_seed(seed, 0))?;
    let critical = theory::ks_critical(n, 0.01);
    checks.push(Check::new(
        "shell-approximation-ks-3072d",
        ks_image < critical,
        critical,
        &[("ks", ks_image), ("critical", critical)],
    ));

    let ladder = [8usize, 64, 512, 3072];
    let mut values = Vec::with_capacity(ladder.len());
    let mut monotone = true;
    let mut prev = f64::INFINITY;
    for (j, &dims) in ladder.iter().enumerate() {
        let ks = ks_at(dims, sub_seed(seed, 1 + j))?;
        monotone &= ks < prev;
        prev = ks;
        values.push((format!("ks_{dims}d"), ks));
    }
    let pairs: Vec<(&str, f64)> = values.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    checks.push(Check::new(
        "shell-approximation-improves-with-dimension",
        monotone,
        0.0,
        &pairs,
    ));
    Ok(checks)
}

/// Variance-flow battery: empirical terminal chain variance against
/// the closed-form ratio over a grid of step fractions and schedule
/// ratios, judged by a pooled-chi-square z-score. Also checks that the
/// closed form is indifferent to the scale index within a geometric
/// schedule and to the data dimension.
pub fn variance_flow_battery(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let gammas = [1.05, 1.2, 1.6, 2.0, 3.0];
    let fractions = [0.002, 0.05, 0.5, 1.5];
    let mut i = 0usize;
    for &gamma in &gammas {
        for &fraction in &fractions {
            let dims = [4usize, 16][i % 2];
            let sigma = [0.1, 1.0][(i / 2) % 2];
            let steps = [5usize, 20][(i / 4) % 2];
            let epsilon = fraction * sigma * sigma;
            let rep = theory::verify_variance_flow(
                gamma,
                epsilon,
                sigma,
                steps,
                dims,
                3000,
                sub_seed(seed, i),
            )?;
            checks.push(Check::new(
                format!("variance-flow-{i:02}"),
                rep.z_score.abs() <= 4.0,
                4.0,
                &[
                    ("gamma", gamma),
                    ("epsilon", epsilon),
                    ("sigma", sigma),
                    ("steps", steps as f64),
                    ("dims", dims as f64),
                    ("empirical_ratio", rep.empirical_ratio),
                    ("closed_form_ratio", rep.closed_form_ratio),
                    ("z", rep.z_score),
                ],
            ));
            i += 1;
        }
    }

    // The per-scale step rule alpha_i = epsilon sigma_i^2 / sigma_L^2
    // makes alpha_i / sigma_i^2 constant, so the ratio must not move
    // across scale indices; the closed form takes no dimension at all,
    // so schedules differing only in dimension must agree exactly.
    let epsilon = 0.5 * 0.05 * 0.05;
    let mut spread: f64 = 0.0;
    let mut across_dims: f64 = 0.0;
    let mut reference = f64::NAN;
    for (j, dims) in [2usize, 1024].iter().enumerate() {
        let schedule = NoiseSchedule::geometric(2.0, 0.05, 8, *dims)?;
        let alphas = schedule.step_sizes(epsilon);
        let base = langevin_variance_ratio(schedule.gamma(), alphas[0], schedule.sigmas()[0], 10)?;
        for (&alpha, &s) in alphas.iter().zip(schedule.sigmas()) {
            let r = langevin_variance_ratio(schedule.gamma(), alpha, s, 10)?;
            spread = spread.max((r / base - 1.0).abs());
        }
        if j == 0 {
            reference = base;
        } else {
            across_dims = (base / reference - 1.0).abs();
        }
    }
    checks.push(Check::new(
        "variance-ratio-ignores-scale-index-and-dimension",
        spread <= 1e-12 && across_dims <= 1e-12,
        1e-12,
        &[
            ("max_spread_across_scales", spread),
            ("spread_across_dimensions", across_dims),
        ],
    ));
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupling_battery_passes_and_reports() {
        let checks = coupling_battery(50, 20260822).unwrap();
        assert_eq!(checks.len(), 51);
        assert!(all_pass(&checks), "failing: {:?}", failing(&checks));
        assert!(checks[1].values.contains_key("bound"));
    }

    #[test]
    fn concentration_battery_passes() {
        let checks = concentration_battery(7).unwrap();
        assert!(all_pass(&checks), "failing: {:?}", failing(&checks));
    }

    #[test]
    fn variance_flow_battery_passes() {
        let checks = variance_flow_battery(11).unwrap();
        assert_eq!(checks.len(), 21);
        assert!(all_pass(&checks), "failing: {:?}", failing(&checks));
    }

    #[test]
    fn reports_serialize_and_reproduce() {
        let a = coupling_battery(6, 5).unwrap();
        let b = coupling_battery(6, 5).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    fn failing(checks: &[Check]) -> Vec<&Check> {
        checks.iter().filter(|c| !c.pass).collect()
    }
}
