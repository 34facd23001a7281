//! Analytic identity suites run by `sdrisk check`.
//!
//! Each suite computes exact risks on random finite SD distributions and
//! random networks, then compares them against the closed-form relation the
//! loss design promises.

use serde::Serialize;

use crate::data::{Pair, PairDataset, PointDataset};
use crate::error::Result;
use crate::losses::{loss_value, scaling_constant, LossKind, NoiseSpec, Priors};
use crate::net::Mlp;
use crate::risk::{
    analytic_clean_risk, analytic_noisy_risk, analytic_noisy_risk_prior_weighted,
    empirical_sd_risk, empirical_sd_risk_grad, FiniteSdDistribution, RiskMode,
};
use crate::rng::Rng;

pub const SYMMETRIC_DIFFERENTIABLE: [LossKind; 4] = [
    LossKind::Ramp,
    LossKind::Sigmoid,
    LossKind::Probit,
    LossKind::AbsoluteError,
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst observed discrepancy.
    pub metric: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, metric: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: metric <= tolerance,
            metric,
            tolerance,
            detail,
        }
    }
}

/// `max_z |l(z,1) + l(z,−1) − K|` over `z ∈ [−10, 10]`, step 0.1.
pub fn symmetry_residual(kind: LossKind) -> Result<f64> {
    let k = kind.symmetry_constant().unwrap_or(0.0);
    let mut worst: f64 = 0.0;
    for i in -100..=100 {
        let z = f64::from(i) / 10.0;
        let s = loss_value(kind, z, 1)? + loss_value(kind, z, -1)?;
        worst = worst.max((s - k).abs());
    }
    Ok(worst)
}

pub fn check_symmetry() -> Result<Vec<CheckOutcome>> {
    LossKind::ALL
        .iter()
        .filter(|k| k.is_symmetric())
        .map(|&kind| {
            let tol = if kind == LossKind::Probit { 1e-6 } else { 1e-9 };
            let r = symmetry_residual(kind)?;
            Ok(CheckOutcome::new(
                &format!("symmetry/{kind}"),
                r,
                tol,
                format!("K = {}", kind.symmetry_constant().unwrap_or(f64::NAN)),
            ))
        })
        .collect()
}

fn random_net(rng: &mut Rng, dims: &[usize]) -> Result<Mlp> {
    Mlp::init(dims, rng.next_u64())
}

/// Random class prior away from 1/2, its SD prior, and a matching
/// distribution.
fn random_setup(rng: &mut Rng, dim: usize, noise: &NoiseSpec) -> Result<(Priors, FiniteSdDistribution)> {
    let pi_plus = rng.uniform_range(0.55, 0.9);
    let priors = Priors::derive(pi_plus, noise)?;
    let dist = FiniteSdDistribution::random(rng, dim, 12, priors.pi_s, 1.5)?;
    Ok((priors, dist))
}

/// Uniform noise: `R^η = ηK + (1−2η)R` for every symmetric loss, plus a
/// control showing Squared loss breaks it.
pub fn check_uniform_identity(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = Rng::new(seed);
    let dim = 3;
    let dims = [dim, 6, 1];
    let mut worst: f64 = 0.0;
    let mut control: f64 = 0.0;
    let mut cases = 0usize;
    for _ in 0..10 {
        let net = random_net(&mut rng, &dims)?;
        for _ in 0..5 {
            let (priors, dist) = random_setup(&mut rng, dim, &NoiseSpec::None)?;
            for eta in [0.1, 0.3, 0.45] {
                let noise = NoiseSpec::Uniform { eta };
                for kind in SYMMETRIC_DIFFERENTIABLE {
                    let k = kind.symmetry_constant().unwrap_or(0.0);
                    let mode = RiskMode::UniformRobust;
                    let clean = analytic_clean_risk(&net, &dist, &priors, kind, &mode)?;
                    let noisy = analytic_noisy_risk(&net, &dist, &priors, kind, &noise, &mode)?;
                    worst = worst.max((noisy - (eta * k + (1.0 - 2.0 * eta) * clean)).abs());
                    cases += 1;
                }
                let kind = LossKind::Squared;
                let clean = analytic_clean_risk(&net, &dist, &priors, kind, &RiskMode::Clean)?;
                let noisy = analytic_noisy_risk(&net, &dist, &priors, kind, &noise, &RiskMode::Clean)?;
                // Squared has no K; use its pair sum at z = 0.
                let k = loss_value(kind, 0.0, 1)? + loss_value(kind, 0.0, -1)?;
                control = control.max((noisy - (eta * k + (1.0 - 2.0 * eta) * clean)).abs());
            }
        }
    }
    Ok(vec![
        CheckOutcome::new("uniform_identity", worst, 1e-9, format!("{cases} cases")),
        CheckOutcome {
            name: "uniform_identity/squared_control".into(),
            passed: control > 1e-3,
            metric: control,
            tolerance: 1e-3,
            detail: "must exceed tolerance".into(),
        },
    ])
}

/// Least-squares line through `(x, y)`; returns slope, intercept and the
/// largest absolute residual.
pub fn affine_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let resid = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).abs())
        .fold(0.0, f64::max);
    (slope, intercept, resid)
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0)
}

/// Conditional noise: with the scaled loss, the prior-weighted noisy risk is
/// an increasing affine function of the clean risk, so both rank a set of
/// networks identically.
pub fn check_conditional_affine(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = Rng::new(seed);
    let dim = 3;
    let dims = [dim, 6, 1];
    let configs = [(0.7, 0.2, 0.1), (0.8, 0.15, 0.2), (0.6, 0.3, 0.25)];
    let mut out = Vec::new();
    for (pi_plus, eta_s, eta_d) in configs {
        let noise = NoiseSpec::Conditional { eta_s, eta_d };
        let priors = Priors::derive(pi_plus, &noise)?;
        let c = scaling_constant(&priors, eta_s, eta_d)?;
        let dist = FiniteSdDistribution::random(&mut rng, dim, 12, priors.pi_s, 1.5)?;
        let nets = (0..10)
            .map(|_| random_net(&mut rng, &dims))
            .collect::<Result<Vec<_>>>()?;
        for kind in SYMMETRIC_DIFFERENTIABLE {
            let mut clean = Vec::with_capacity(nets.len());
            let mut noisy = Vec::with_capacity(nets.len());
            for net in &nets {
                clean.push(analytic_clean_risk(net, &dist, &priors, kind, &RiskMode::Clean)?);
                noisy.push(analytic_noisy_risk_prior_weighted(
                    net,
                    &dist,
                    &priors,
                    kind,
                    &noise,
                    &RiskMode::ConditionalRobust { c },
                )?);
            }
            let (slope, _, resid) = affine_fit(&clean, &noisy);
            let same_argmin = argmin(&clean) == argmin(&noisy);
            let ok = resid <= 1e-8 && slope > 0.0 && same_argmin;
            out.push(CheckOutcome {
                name: format!("conditional_affine/{kind}/pi{pi_plus}/s{eta_s}/d{eta_d}"),
                passed: ok,
                metric: resid,
                tolerance: 1e-8,
                detail: format!("C = {c:.6}, slope = {slope:.6}, same argmin = {same_argmin}"),
            });
        }
    }
    Ok(out)
}

/// The backward-corrected loss has noisy expectation equal to the clean `L`.
pub fn check_backward_unbiased(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = Rng::new(seed);
    let dim = 3;
    let mut worst: f64 = 0.0;
    let kinds: Vec<LossKind> = LossKind::DIFFERENTIABLE.to_vec();
    for case in 0..100 {
        let eta_s = rng.uniform_range(0.0, 0.45);
        let eta_d = rng.uniform_range(0.0, 0.45);
        let noise = NoiseSpec::Conditional { eta_s, eta_d };
        let (priors, dist) = random_setup(&mut rng, dim, &noise)?;
        let net = random_net(&mut rng, &[dim, 5, 1])?;
        let kind = kinds[case % kinds.len()];
        let clean = analytic_clean_risk(&net, &dist, &priors, kind, &RiskMode::Clean)?;
        let noisy = analytic_noisy_risk(
            &net,
            &dist,
            &priors,
            kind,
            &noise,
            &RiskMode::LcnipCorrected { eta_s, eta_d },
        )?;
        worst = worst.max((noisy - clean).abs());
    }
    Ok(vec![CheckOutcome::new(
        "backward_unbiased",
        worst,
        1e-10,
        "100 random configurations".into(),
    )])
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error between backprop and central differences of the
/// full-batch objective.
pub fn gradient_residual(
    mlp: &Mlp,
    points: &PointDataset,
    pairs: &PairDataset,
    priors: &Priors,
    kind: LossKind,
    mode: &RiskMode,
    step: f64,
) -> Result<f64> {
    let (_, grads) = empirical_sd_risk_grad(mlp, points, pairs, priors, kind, mode)?;
    let analytic = grads.flat();
    let mut probe = mlp.clone();
    let mut worst: f64 = 0.0;
    for (idx, &a) in analytic.iter().enumerate() {
        let orig = *probe.param_mut(idx);
        *probe.param_mut(idx) = orig + step;
        let up = empirical_sd_risk(&probe, points, pairs, priors, kind, mode)?;
        *probe.param_mut(idx) = orig - step;
        let down = empirical_sd_risk(&probe, points, pairs, priors, kind, mode)?;
        *probe.param_mut(idx) = orig;
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max(relative_error(a, numeric, 1e-4));
    }
    Ok(worst)
}

/// Random `[2, 4, 1]` problem with 8 pairs over 6 points.
pub fn gradient_fixture(seed: u64) -> Result<(Mlp, PointDataset, PairDataset)> {
    let mut rng = Rng::new(seed);
    let features = (0..6)
        .map(|_| vec![rng.standard_normal(), rng.standard_normal()])
        .collect();
    let labels = vec![1, 1, 1, -1, -1, 1];
    let points = PointDataset::new(features, labels)?;
    let pairs = (0..8)
        .map(|k| {
            let i = rng.index(6);
            let j = (i + 1 + rng.index(5)) % 6;
            Pair {
                i,
                j,
                tau: if k % 2 == 0 { 1 } else { -1 },
            }
        })
        .collect();
    let pairs = PairDataset {
        pairs,
        n_points: 6,
        noise_applied: NoiseSpec::None,
        seed,
        noise_seed: None,
        warnings: vec![],
    };
    let mlp = Mlp::init(&[2, 4, 1], rng.next_u64())?;
    Ok((mlp, points, pairs))
}

pub fn check_gradients(seed: u64) -> Result<Vec<CheckOutcome>> {
    let (mlp, points, pairs) = gradient_fixture(seed)?;
    let noise = NoiseSpec::Conditional {
        eta_s: 0.2,
        eta_d: 0.1,
    };
    let priors = Priors::derive(0.7, &noise)?;
    let c = scaling_constant(&priors, 0.2, 0.1)?;
    let modes = [
        RiskMode::Clean,
        RiskMode::UniformRobust,
        RiskMode::ConditionalRobust { c },
        RiskMode::LcnipCorrected {
            eta_s: 0.2,
            eta_d: 0.1,
        },
    ];
    let mut out = Vec::new();
    for kind in LossKind::DIFFERENTIABLE {
        for mode in &modes {
            let r = gradient_residual(&mlp, &points, &pairs, &priors, kind, mode, 1e-5)?;
            out.push(CheckOutcome::new(
                &format!("gradient/{kind}/{}", mode.name()),
                r,
                1e-4,
                "central differences, step 1e-5".into(),
            ));
        }
    }
    Ok(out)
}

/// All suites in a fixed order.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = check_symmetry()?;
    out.extend(check_uniform_identity(seed)?);
    out.extend(check_conditional_affine(seed)?);
    out.extend(check_backward_unbiased(seed)?);
    out.extend(check_gradients(seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let (s, b, r) = affine_fit(&x, &y);
        assert!((s - 3.0).abs() < 1e-12 && (b + 1.0).abs() < 1e-12 && r < 1e-12);
    }

    #[test]
    fn all_suites_pass() {
        for o in run_all(1).unwrap() {
            assert!(o.passed, "{o:?}");
        }
    }
}
