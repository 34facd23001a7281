//! Pairwise SD risks: empirical risks over pair data, exact risks over finite
//! distributions with and without label noise, and the training loop.
//!
//! A pair `(x, x′, τ)` contributes `[Λ(f(x), τ) + Λ(f(x′), τ)] / 2`, where
//! `Λ` is chosen by the [`RiskMode`]:
//!
//! | mode                | `Λ`                                   |
//! |---------------------|---------------------------------------|
//! | `Clean`             | `L`                                   |
//! | `UniformRobust`     | `L` (robustness comes from symmetry)  |
//! | `ConditionalRobust` | `L̂` with the dissimilar branch × `C`  |
//! | `LcnipCorrected`    | backward-corrected `L`                |

use serde::{Deserialize, Serialize};

use crate::data::{PairDataset, PointDataset};
use crate::error::{Error, Result};
use crate::losses::{
    check_conditional_rates, check_scale, raw_corrected, raw_corrected_grad, unmix, LossKind,
    NoiseSpec, Priors,
};
use crate::net::{adam_step, AdamState, Gradients, Mlp, TrainConfig};
use crate::rng::Rng;

const MASS_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RiskMode {
    Clean,
    UniformRobust,
    ConditionalRobust { c: f64 },
    LcnipCorrected { eta_s: f64, eta_d: f64 },
}

impl RiskMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RiskMode::Clean | RiskMode::UniformRobust => Ok(()),
            RiskMode::ConditionalRobust { c } => check_scale(c),
            RiskMode::LcnipCorrected { eta_s, eta_d } => check_conditional_rates(eta_s, eta_d),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RiskMode::Clean => "clean",
            RiskMode::UniformRobust => "uniform_robust",
            RiskMode::ConditionalRobust { .. } => "conditional_robust",
            RiskMode::LcnipCorrected { .. } => "lcnip_corrected",
        }
    }
}

/// `Λ(z, t)` for the mode. Inputs are assumed validated.
pub fn pair_loss(kind: LossKind, priors: &Priors, mode: &RiskMode, z: f64, t: i8) -> f64 {
    let tf = f64::from(t);
    match *mode {
        RiskMode::Clean | RiskMode::UniformRobust => raw_corrected(kind, priors, z, tf),
        RiskMode::ConditionalRobust { c } => {
            let l = raw_corrected(kind, priors, z, tf);
            if t > 0 {
                l
            } else {
                c * l
            }
        }
        RiskMode::LcnipCorrected { eta_s, eta_d } => unmix(
            eta_s,
            eta_d,
            raw_corrected(kind, priors, z, 1.0),
            raw_corrected(kind, priors, z, -1.0),
            t,
        ),
    }
}

/// `∂Λ(z, t)/∂z`.
pub fn pair_loss_grad(kind: LossKind, priors: &Priors, mode: &RiskMode, z: f64, t: i8) -> f64 {
    let tf = f64::from(t);
    match *mode {
        RiskMode::Clean | RiskMode::UniformRobust => raw_corrected_grad(kind, priors, z, tf),
        RiskMode::ConditionalRobust { c } => {
            let g = raw_corrected_grad(kind, priors, z, tf);
            if t > 0 {
                g
            } else {
                c * g
            }
        }
        RiskMode::LcnipCorrected { eta_s, eta_d } => unmix(
            eta_s,
            eta_d,
            raw_corrected_grad(kind, priors, z, 1.0),
            raw_corrected_grad(kind, priors, z, -1.0),
            t,
        ),
    }
}

fn check_pairs(points: &PointDataset, pairs: &PairDataset) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Data("no pairs".into()));
    }
    pairs.check_against(points)
}

/// Mean pair loss over all pairs.
///
/// The unconditional mean equals `π̂_S·mean_S + π̂_D·mean_D` with empirical
/// SD priors, so no per-group division is needed.
pub fn empirical_sd_risk(
    mlp: &Mlp,
    points: &PointDataset,
    pairs: &PairDataset,
    priors: &Priors,
    kind: LossKind,
    mode: &RiskMode,
) -> Result<f64> {
    priors.validate()?;
    mode.validate()?;
    check_pairs(points, pairs)?;
    let mut total = 0.0;
    for p in &pairs.pairs {
        let zi = mlp.forward(points.row(p.i))?;
        let zj = mlp.forward(points.row(p.j))?;
        total += 0.5 * (pair_loss(kind, priors, mode, zi, p.tau) + pair_loss(kind, priors, mode, zj, p.tau));
    }
    Ok(total / pairs.len() as f64)
}

/// Empirical SD risk and its exact gradient over all pairs.
pub fn empirical_sd_risk_grad(
    mlp: &Mlp,
    points: &PointDataset,
    pairs: &PairDataset,
    priors: &Priors,
    kind: LossKind,
    mode: &RiskMode,
) -> Result<(f64, Gradients)> {
    if !kind.is_differentiable() {
        return Err(Error::UnsupportedLoss(format!("{kind} cannot be differentiated")));
    }
    priors.validate()?;
    mode.validate()?;
    check_pairs(points, pairs)?;
    let mut grads = mlp.zero_gradients();
    let indices: Vec<usize> = (0..pairs.len()).collect();
    let risk = accumulate_batch(mlp, points, pairs, &indices, priors, kind, mode, &mut grads)?;
    Ok((risk, grads))
}

/// Adds the batch-mean gradient into `grads`; returns the batch-mean loss.
#[allow(clippy::too_many_arguments)]
fn accumulate_batch(
    mlp: &Mlp,
    points: &PointDataset,
    pairs: &PairDataset,
    batch: &[usize],
    priors: &Priors,
    kind: LossKind,
    mode: &RiskMode,
    grads: &mut Gradients,
) -> Result<f64> {
    // Λ depends only on a point's own score and the pair label, so each
    // distinct point is scored once with its similar/dissimilar counts.
    let mut counts: Vec<(u32, u32)> = vec![(0, 0); points.len()];
    let mut touched = Vec::new();
    for &b in batch {
        let p = pairs.pairs[b];
        for idx in [p.i, p.j] {
            let c = &mut counts[idx];
            if *c == (0, 0) {
                touched.push(idx);
            }
            if p.tau > 0 {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
    }
    let scale = 0.5 / batch.len() as f64;
    let mut loss = 0.0;
    for idx in touched {
        let (n_pos, n_neg) = counts[idx];
        let (w_pos, w_neg) = (f64::from(n_pos), f64::from(n_neg));
        let cache = mlp.forward_cached(points.row(idx), None)?;
        let z = cache.score();
        let mut g = 0.0;
        if n_pos > 0 {
            loss += w_pos * pair_loss(kind, priors, mode, z, 1);
            g += w_pos * pair_loss_grad(kind, priors, mode, z, 1);
        }
        if n_neg > 0 {
            loss += w_neg * pair_loss(kind, priors, mode, z, -1);
            g += w_neg * pair_loss_grad(kind, priors, mode, z, -1);
        }
        if g != 0.0 {
            mlp.backward(&cache, scale * g, grads)?;
        }
    }
    Ok(loss * scale)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub mlp: Mlp,
    /// Mean batch objective for each epoch.
    pub trace: Vec<f64>,
}

/// Mini-batch Adam on the empirical SD risk.
///
/// Pair order is reshuffled every epoch from a generator seeded with
/// `config.seed`; the last short batch is kept.
pub fn train(
    mlp: &Mlp,
    points: &PointDataset,
    pairs: &PairDataset,
    priors: &Priors,
    kind: LossKind,
    mode: &RiskMode,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if !kind.is_differentiable() {
        return Err(Error::UnsupportedLoss(format!(
            "{kind} is evaluation-only and cannot be trained on"
        )));
    }
    config.validate()?;
    priors.validate()?;
    mode.validate()?;
    check_pairs(points, pairs)?;
    if mlp.input_dim() != points.dim() {
        return Err(Error::Shape(format!(
            "network takes {} features, data has {}",
            mlp.input_dim(),
            points.dim()
        )));
    }

    let mut model = mlp.clone();
    let mut state = AdamState::new(&model);
    let mut grads = model.zero_gradients();
    let mut rng = Rng::new(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            grads.zero();
            let loss = accumulate_batch(&model, points, pairs, batch, priors, kind, mode, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("objective diverged at epoch {epoch}")));
            }
            adam_step(&mut model, &grads, &mut state, config)?;
            epoch_loss += loss;
            batches += 1;
        }
        trace.push(epoch_loss / batches as f64);
    }
    Ok(TrainOutcome { mlp: model, trace })
}

/// Fraction of points with `sign(f(x)) = y`; a zero score predicts +1.
pub fn evaluate_accuracy(mlp: &Mlp, points: &PointDataset) -> Result<f64> {
    let mut correct = 0usize;
    for (x, &y) in points.features().iter().zip(points.labels()) {
        let predicted = if mlp.forward(x)? >= 0.0 { 1 } else { -1 };
        if predicted == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / points.len() as f64)
}

/// One support point of a finite pair distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdAtom {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub tau: i8,
    pub weight: f64,
}

/// Finitely supported joint law of `(x, x′, τ)`; the similar atoms restricted
/// and renormalised give `p_S`, the dissimilar ones `p_D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteSdDistribution {
    atoms: Vec<SdAtom>,
}

impl FiniteSdDistribution {
    pub fn new(atoms: Vec<SdAtom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Data("distribution has no atoms".into()));
        }
        let d = atoms[0].x.len();
        for (k, a) in atoms.iter().enumerate() {
            if a.x.len() != d || a.x_prime.len() != d {
                return Err(Error::Shape(format!("atom {k} has inconsistent feature width")));
            }
            if a.tau != 1 && a.tau != -1 {
                return Err(Error::Data(format!("atom {k} has tau {}", a.tau)));
            }
            if !(a.weight.is_finite() && a.weight >= 0.0) {
                return Err(Error::Data(format!("atom {k} has weight {}", a.weight)));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Data(format!("atom weights sum to {total}, not 1")));
        }
        Ok(Self { atoms })
    }

    /// Random atoms with features `~ N(0, scale²)`, both SD classes present,
    /// and similar mass exactly `pi_s`.
    pub fn random(rng: &mut Rng, dim: usize, n_atoms: usize, pi_s: f64, scale: f64) -> Result<Self> {
        if n_atoms < 2 {
            return Err(Error::Config("need at least two atoms".into()));
        }
        let mut atoms: Vec<SdAtom> = (0..n_atoms)
            .map(|k| SdAtom {
                x: (0..dim).map(|_| scale * rng.standard_normal()).collect(),
                x_prime: (0..dim).map(|_| scale * rng.standard_normal()).collect(),
                tau: if k % 2 == 0 { 1 } else { -1 },
                weight: rng.uniform_range(0.1, 1.0),
            })
            .collect();
        for (tau, mass) in [(1, pi_s), (-1, 1.0 - pi_s)] {
            let raw: f64 = atoms.iter().filter(|a| a.tau == tau).map(|a| a.weight).sum();
            for a in atoms.iter_mut().filter(|a| a.tau == tau) {
                a.weight *= mass / raw;
            }
        }
        // Push the rounding residue onto the heaviest atom.
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        let heaviest = (0..atoms.len())
            .max_by(|&a, &b| atoms[a].weight.total_cmp(&atoms[b].weight))
            .unwrap();
        atoms[heaviest].weight += 1.0 - total;
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &[SdAtom] {
        &self.atoms
    }

    pub fn similar_mass(&self) -> f64 {
        self.atoms.iter().filter(|a| a.tau > 0).map(|a| a.weight).sum()
    }

    fn check_priors(&self, priors: &Priors) -> Result<()> {
        priors.validate()?;
        let m = self.similar_mass();
        if (m - priors.pi_s).abs() > MASS_TOL {
            return Err(Error::Config(format!(
                "distribution has similar mass {m}, priors say pi_s = {}",
                priors.pi_s
            )));
        }
        Ok(())
    }
}

/// Pair scores for every atom, computed once.
fn atom_scores(mlp: &Mlp, dist: &FiniteSdDistribution) -> Result<Vec<(f64, f64)>> {
    dist.atoms
        .iter()
        .map(|a| Ok((mlp.forward(&a.x)?, mlp.forward(&a.x_prime)?)))
        .collect()
}

fn half_pair(kind: LossKind, priors: &Priors, mode: &RiskMode, z: (f64, f64), t: i8) -> f64 {
    0.5 * (pair_loss(kind, priors, mode, z.0, t) + pair_loss(kind, priors, mode, z.1, t))
}

/// Exact noise-free risk `Σ w·[Λ(f(x), τ) + Λ(f(x′), τ)] / 2`.
pub fn analytic_clean_risk(
    mlp: &Mlp,
    dist: &FiniteSdDistribution,
    priors: &Priors,
    kind: LossKind,
    mode: &RiskMode,
) -> Result<f64> {
    dist.check_priors(priors)?;
    mode.validate()?;
    let scores = atom_scores(mlp, dist)?;
    Ok(dist
        .atoms
        .iter()
        .zip(scores)
        .map(|(a, z)| a.weight * half_pair(kind, priors, mode, z, a.tau))
        .sum())
}

/// Exact expected risk when labels are observed through the flip process.
///
/// Each atom `(x, x′, τ, w)` becomes `(x, x′, τ, w·(1−η_τ))` and
/// `(x, x′, −τ, w·η_τ)`; no sampling is involved.
pub fn analytic_noisy_risk(
    mlp: &Mlp,
    dist: &FiniteSdDistribution,
    priors: &Priors,
    kind: LossKind,
    noise: &NoiseSpec,
    mode: &RiskMode,
) -> Result<f64> {
    noise.validate().map_err(|e| Error::Config(e.to_string()))?;
    dist.check_priors(priors)?;
    mode.validate()?;
    let scores = atom_scores(mlp, dist)?;
    Ok(dist
        .atoms
        .iter()
        .zip(scores)
        .map(|(a, z)| {
            let eta = noise.flip_rate(a.tau);
            a.weight
                * ((1.0 - eta) * half_pair(kind, priors, mode, z, a.tau)
                    + eta * half_pair(kind, priors, mode, z, -a.tau))
        })
        .sum())
}

/// Noisy risk in the prior-weighted form
///
/// `π_S^η [(1−η_S) E_S g(1) + η_D E_D g(1)] + π_D^η [η_S E_S g(−1) + (1−η_D) E_D g(−1)]`,
///
/// where `E_S`, `E_D` are expectations under the renormalised similar and
/// dissimilar atoms. For a symmetric loss under uniform noise both this and
/// [`analytic_noisy_risk`] equal `ηK + (1−2η)·clean`. Under conditional noise
/// this is the functional for which the scaling constant `C` makes the noisy
/// risk an increasing affine function of the clean risk.
pub fn analytic_noisy_risk_prior_weighted(
    mlp: &Mlp,
    dist: &FiniteSdDistribution,
    priors: &Priors,
    kind: LossKind,
    noise: &NoiseSpec,
    mode: &RiskMode,
) -> Result<f64> {
    noise.validate().map_err(|e| Error::Config(e.to_string()))?;
    dist.check_priors(priors)?;
    if !priors.is_consistent_with(noise) {
        return Err(Error::Config(format!(
            "noisy SD priors do not match noise {noise}"
        )));
    }
    mode.validate()?;
    let (eta_s, eta_d) = noise.rates();
    let scores = atom_scores(mlp, dist)?;
    let (mut es_pos, mut es_neg, mut ed_pos, mut ed_neg) = (0.0, 0.0, 0.0, 0.0);
    let mass_s = dist.similar_mass();
    let mass_d = 1.0 - mass_s;
    for (a, z) in dist.atoms.iter().zip(scores) {
        let pos = half_pair(kind, priors, mode, z, 1);
        let neg = half_pair(kind, priors, mode, z, -1);
        if a.tau > 0 {
            es_pos += a.weight * pos / mass_s;
            es_neg += a.weight * neg / mass_s;
        } else {
            ed_pos += a.weight * pos / mass_d;
            ed_neg += a.weight * neg / mass_d;
        }
    }
    Ok(priors.pi_s_eta * ((1.0 - eta_s) * es_pos + eta_d * ed_pos)
        + priors.pi_d_eta * (eta_s * es_neg + (1.0 - eta_d) * ed_neg))
}
