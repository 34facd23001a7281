//! Pointwise losses, the class-prior correction `L`, the scaled loss `L̂`
//! used under similar/dissimilar-conditional noise, and the backward
//! (unbiased-estimator) correction used by the loss-correction baseline.
//!
//! Every loss takes a raw score `z` and a ±1 label `t`. A loss is
//! *symmetric* when `l(z, 1) + l(z, -1)` is the same constant `K` for every
//! score; only symmetric losses carry the noise-tolerance guarantees.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible |π₊ − π₋|; the correction divides by it.
pub const MIN_PRIOR_GAP: f64 = 1e-3;

const SUM_TOL: f64 = 1e-12;
const MIXTURE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ZeroOne,
    Ramp,
    Sigmoid,
    Probit,
    AbsoluteError,
    Hinge,
    Squared,
    Logistic,
}

impl LossKind {
    pub const ALL: [LossKind; 8] = [
        LossKind::ZeroOne,
        LossKind::Ramp,
        LossKind::Sigmoid,
        LossKind::Probit,
        LossKind::AbsoluteError,
        LossKind::Hinge,
        LossKind::Squared,
        LossKind::Logistic,
    ];

    pub const DIFFERENTIABLE: [LossKind; 7] = [
        LossKind::Ramp,
        LossKind::Sigmoid,
        LossKind::Probit,
        LossKind::AbsoluteError,
        LossKind::Hinge,
        LossKind::Squared,
        LossKind::Logistic,
    ];

    /// The constant `K` with `l(z, 1) + l(z, -1) = K`, if the loss has one.
    pub fn symmetry_constant(self) -> Option<f64> {
        match self {
            LossKind::ZeroOne
            | LossKind::Sigmoid
            | LossKind::Probit
            | LossKind::AbsoluteError => Some(1.0),
            LossKind::Ramp => Some(2.0),
            LossKind::Hinge | LossKind::Squared | LossKind::Logistic => None,
        }
    }

    pub fn is_symmetric(self) -> bool {
        self.symmetry_constant().is_some()
    }

    /// The 0-1 loss is evaluation-only.
    pub fn is_differentiable(self) -> bool {
        self != LossKind::ZeroOne
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::ZeroOne => "zero_one",
            LossKind::Ramp => "ramp",
            LossKind::Sigmoid => "sigmoid",
            LossKind::Probit => "probit",
            LossKind::AbsoluteError => "absolute_error",
            LossKind::Hinge => "hinge",
            LossKind::Squared => "squared",
            LossKind::Logistic => "logistic",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown loss kind `{s}`")))
    }
}

/// Similar/dissimilar label noise process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    None,
    /// Every pair flips with rate `eta`.
    Uniform { eta: f64 },
    /// Similar pairs flip with `eta_s`, dissimilar pairs with `eta_d`.
    Conditional { eta_s: f64, eta_d: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::None => Ok(()),
            NoiseSpec::Uniform { eta } => {
                if !(eta.is_finite() && (0.0..0.5).contains(&eta)) {
                    return Err(Error::InfeasibleNoise(format!(
                        "uniform rate must satisfy 0 <= eta < 0.5, got {eta}"
                    )));
                }
                Ok(())
            }
            NoiseSpec::Conditional { eta_s, eta_d } => check_conditional_rates(eta_s, eta_d),
        }
    }

    /// `(η_S, η_D)`: flip probabilities of similar and dissimilar pairs.
    pub fn rates(&self) -> (f64, f64) {
        match *self {
            NoiseSpec::None => (0.0, 0.0),
            NoiseSpec::Uniform { eta } => (eta, eta),
            NoiseSpec::Conditional { eta_s, eta_d } => (eta_s, eta_d),
        }
    }

    pub fn flip_rate(&self, tau: i8) -> f64 {
        let (eta_s, eta_d) = self.rates();
        if tau > 0 {
            eta_s
        } else {
            eta_d
        }
    }

    pub fn is_none(&self) -> bool {
        let (s, d) = self.rates();
        s == 0.0 && d == 0.0
    }

    /// Zero-rate specs collapse to `None`.
    pub fn normalized(self) -> Self {
        if self.is_none() {
            NoiseSpec::None
        } else {
            self
        }
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NoiseSpec::None => f.write_str("none"),
            NoiseSpec::Uniform { eta } => write!(f, "uniform({eta})"),
            NoiseSpec::Conditional { eta_s, eta_d } => write!(f, "conditional({eta_s},{eta_d})"),
        }
    }
}

pub(crate) fn check_conditional_rates(eta_s: f64, eta_d: f64) -> Result<()> {
    if !(eta_s.is_finite() && eta_d.is_finite()) || eta_s < 0.0 || eta_d < 0.0 {
        return Err(Error::InfeasibleNoise(format!(
            "rates must be finite and non-negative, got ({eta_s}, {eta_d})"
        )));
    }
    if eta_s + eta_d >= 1.0 {
        return Err(Error::InfeasibleNoise(format!(
            "eta_s + eta_d must be < 1, got {eta_s} + {eta_d}"
        )));
    }
    Ok(())
}

/// Class priors, clean SD priors and noisy SD priors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub pi_plus: f64,
    pub pi_minus: f64,
    pub pi_s: f64,
    pub pi_d: f64,
    pub pi_s_eta: f64,
    pub pi_d_eta: f64,
}

impl Priors {
    /// Priors for pairs drawn independently: `π_S = π₊² + π₋²`.
    pub fn derive(pi_plus: f64, noise: &NoiseSpec) -> Result<Self> {
        check_probability("pi_plus", pi_plus)?;
        let pi_minus = 1.0 - pi_plus;
        Self::with_sd_prior(pi_plus, pi_plus * pi_plus + pi_minus * pi_minus, noise)
    }

    /// Priors with an explicitly given clean similar-pair prior.
    pub fn with_sd_prior(pi_plus: f64, pi_s: f64, noise: &NoiseSpec) -> Result<Self> {
        check_probability("pi_plus", pi_plus)?;
        check_probability("pi_s", pi_s)?;
        noise.validate()?;
        let (eta_s, eta_d) = noise.rates();
        let pi_d = 1.0 - pi_s;
        let pi_s_eta = (1.0 - eta_s) * pi_s + eta_d * pi_d;
        let priors = Priors {
            pi_plus,
            pi_minus: 1.0 - pi_plus,
            pi_s,
            pi_d,
            pi_s_eta,
            pi_d_eta: 1.0 - pi_s_eta,
        };
        priors.validate()?;
        Ok(priors)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pi_plus", self.pi_plus),
            ("pi_minus", self.pi_minus),
            ("pi_s", self.pi_s),
            ("pi_d", self.pi_d),
            ("pi_s_eta", self.pi_s_eta),
            ("pi_d_eta", self.pi_d_eta),
        ] {
            check_probability(name, v)?;
        }
        let sums = [
            self.pi_plus + self.pi_minus,
            self.pi_s + self.pi_d,
            self.pi_s_eta + self.pi_d_eta,
        ];
        if sums.iter().any(|s| (s - 1.0).abs() > SUM_TOL) {
            return Err(Error::Config(format!("priors do not sum to one: {self:?}")));
        }
        if self.class_gap().abs() < MIN_PRIOR_GAP - 1e-15 {
            return Err(Error::DegeneratePrior(format!(
                "|pi_plus - pi_minus| = {} is below {MIN_PRIOR_GAP}",
                self.class_gap().abs()
            )));
        }
        Ok(())
    }

    /// True when the noisy SD priors are the mixture of the clean ones
    /// under `noise`.
    pub fn is_consistent_with(&self, noise: &NoiseSpec) -> bool {
        let (eta_s, eta_d) = noise.rates();
        let expected = (1.0 - eta_s) * self.pi_s + eta_d * self.pi_d;
        (self.pi_s_eta - expected).abs() <= MIXTURE_TOL
    }

    pub fn class_gap(&self) -> f64 {
        self.pi_plus - self.pi_minus
    }
}

fn check_probability(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
    }
}

fn check_label(t: i8) -> Result<()> {
    if t == 1 || t == -1 {
        Ok(())
    } else {
        Err(Error::Domain(format!("label must be +1 or -1, got {t}")))
    }
}

fn check_score(z: f64) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("score must be finite, got {z}")))
    }
}

/// Logistic function, evaluated without overflow.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Standard normal CDF.
///
/// Hart's rational approximation (algorithm 5666 as arranged by West);
/// absolute error is below 1e-14 everywhere. The lower tail is computed for
/// `|x|` and reflected, so `Φ(x) + Φ(-x) = 1` up to one rounding.
pub fn normal_cdf(x: f64) -> f64 {
    let a = x.abs();
    let tail = if a > 37.0 {
        0.0
    } else {
        let e = (-a * a / 2.0).exp();
        if a < 7.071_067_811_865_47 {
            let mut num = 3.526_249_659_989_11e-2 * a + 0.700_383_064_443_688;
            num = num * a + 6.373_962_203_531_65;
            num = num * a + 33.912_866_078_383;
            num = num * a + 112.079_291_497_871;
            num = num * a + 221.213_596_169_931;
            num = num * a + 220.206_867_912_376;
            let mut den = 8.838_834_764_831_84e-2 * a + 1.755_667_163_182_64;
            den = den * a + 16.064_177_579_207;
            den = den * a + 86.780_732_202_946_1;
            den = den * a + 296.564_248_779_674;
            den = den * a + 637.333_633_378_831;
            den = den * a + 793.826_512_519_948;
            den = den * a + 440.413_735_824_752;
            e * num / den
        } else {
            let mut b = a + 0.65;
            b = a + 4.0 / b;
            b = a + 3.0 / b;
            b = a + 2.0 / b;
            b = a + 1.0 / b;
            e / b / 2.506_628_274_631
        }
    };
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `l(z, t)`.
pub fn loss_value(kind: LossKind, z: f64, t: i8) -> Result<f64> {
    check_score(z)?;
    check_label(t)?;
    Ok(raw_value(kind, z, f64::from(t)))
}

/// `∂l(z, t)/∂z`. Kinks of ramp and hinge take the subgradient 0.
pub fn loss_grad(kind: LossKind, z: f64, t: i8) -> Result<f64> {
    if kind == LossKind::ZeroOne {
        return Err(Error::UnsupportedLoss(
            "the 0-1 loss has no useful derivative".into(),
        ));
    }
    check_score(z)?;
    check_label(t)?;
    Ok(raw_grad(kind, z, f64::from(t)))
}

pub(crate) fn raw_value(kind: LossKind, z: f64, t: f64) -> f64 {
    let m = t * z;
    match kind {
        // Misclassification indicator; a zero score predicts +1.
        LossKind::ZeroOne => {
            let predicted = if z >= 0.0 { 1.0 } else { -1.0 };
            if predicted == t {
                0.0
            } else {
                1.0
            }
        }
        LossKind::Ramp => (1.0 - m).max(0.0) - (-1.0 - m).max(0.0),
        LossKind::Sigmoid => sigmoid(-m),
        LossKind::Probit => normal_cdf(-m),
        LossKind::AbsoluteError => {
            let y = if t > 0.0 { 1.0 } else { 0.0 };
            (y - sigmoid(z)).abs()
        }
        LossKind::Hinge => (1.0 - m).max(0.0),
        LossKind::Squared => (z - t) * (z - t),
        LossKind::Logistic => softplus(-m),
    }
}

pub(crate) fn raw_grad(kind: LossKind, z: f64, t: f64) -> f64 {
    let m = t * z;
    match kind {
        LossKind::ZeroOne => 0.0,
        LossKind::Ramp => {
            if m > -1.0 && m < 1.0 {
                -t
            } else {
                0.0
            }
        }
        LossKind::Sigmoid => {
            let s = sigmoid(-m);
            -t * s * (1.0 - s)
        }
        LossKind::Probit => -t * normal_pdf(m),
        LossKind::AbsoluteError => {
            let s = sigmoid(z);
            -t * s * (1.0 - s)
        }
        LossKind::Hinge => {
            if m < 1.0 {
                -t
            } else {
                0.0
            }
        }
        LossKind::Squared => 2.0 * (z - t),
        LossKind::Logistic => -t * sigmoid(-m),
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `L(z, t) = [π₊ l(z, t) − π₋ l(z, −t)] / (π₊ − π₋)`.
pub fn corrected_loss(kind: LossKind, priors: &Priors, z: f64, t: i8) -> Result<f64> {
    priors.validate()?;
    check_score(z)?;
    check_label(t)?;
    Ok(raw_corrected(kind, priors, z, f64::from(t)))
}

pub fn corrected_loss_grad(kind: LossKind, priors: &Priors, z: f64, t: i8) -> Result<f64> {
    if !kind.is_differentiable() {
        return loss_grad(kind, z, t);
    }
    priors.validate()?;
    check_score(z)?;
    check_label(t)?;
    Ok(raw_corrected_grad(kind, priors, z, f64::from(t)))
}

pub(crate) fn raw_corrected(kind: LossKind, priors: &Priors, z: f64, t: f64) -> f64 {
    let gap = priors.class_gap();
    (priors.pi_plus * raw_value(kind, z, t) - priors.pi_minus * raw_value(kind, z, -t)) / gap
}

pub(crate) fn raw_corrected_grad(kind: LossKind, priors: &Priors, z: f64, t: f64) -> f64 {
    let gap = priors.class_gap();
    (priors.pi_plus * raw_grad(kind, z, t) - priors.pi_minus * raw_grad(kind, z, -t)) / gap
}

/// Constant `C` that rescales the dissimilar branch of `L` under
/// SD-conditional noise:
///
/// `C = π_S^η [(1−η_S) π_D + η_D π_S] / (π_D^η [η_S π_D + (1−η_D) π_S])`.
///
/// `priors` must carry the noisy SD priors for these same rates.
pub fn scaling_constant(priors: &Priors, eta_s: f64, eta_d: f64) -> Result<f64> {
    check_conditional_rates(eta_s, eta_d)?;
    priors.validate()?;
    let noise = NoiseSpec::Conditional { eta_s, eta_d };
    if !priors.is_consistent_with(&noise) {
        return Err(Error::Config(format!(
            "noisy SD priors {:.6}/{:.6} do not match rates ({eta_s}, {eta_d})",
            priors.pi_s_eta, priors.pi_d_eta
        )));
    }
    let num = priors.pi_s_eta * ((1.0 - eta_s) * priors.pi_d + eta_d * priors.pi_s);
    let den = priors.pi_d_eta * (eta_s * priors.pi_d + (1.0 - eta_d) * priors.pi_s);
    let c = num / den;
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::DegeneratePrior(format!(
            "scaling constant is not a positive finite number ({num} / {den})"
        )));
    }
    Ok(c)
}

/// `L̂(z, 1) = L(z, 1)`, `L̂(z, −1) = C·L(z, −1)`.
pub fn scaled_loss(kind: LossKind, priors: &Priors, c: f64, z: f64, t: i8) -> Result<f64> {
    check_scale(c)?;
    let l = corrected_loss(kind, priors, z, t)?;
    Ok(if t > 0 { l } else { c * l })
}

pub fn scaled_loss_grad(kind: LossKind, priors: &Priors, c: f64, z: f64, t: i8) -> Result<f64> {
    check_scale(c)?;
    let g = corrected_loss_grad(kind, priors, z, t)?;
    Ok(if t > 0 { g } else { c * g })
}

pub(crate) fn check_scale(c: f64) -> Result<()> {
    if c.is_finite() && c > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "scaling constant must be positive and finite, got {c}"
        )))
    }
}

/// Backward-corrected loss for an observed noisy label.
///
/// With `d = 1 − η_S − η_D`:
/// `l̃(z, +1) = [(1−η_D) L(z, +1) − η_S L(z, −1)] / d` and
/// `l̃(z, −1) = [(1−η_S) L(z, −1) − η_D L(z, +1)] / d`,
/// so its expectation over the flip process equals `L` under the clean label.
pub fn backward_corrected_loss(
    kind: LossKind,
    priors: &Priors,
    eta_s: f64,
    eta_d: f64,
    z: f64,
    t_noisy: i8,
) -> Result<f64> {
    check_conditional_rates(eta_s, eta_d)?;
    let plus = corrected_loss(kind, priors, z, 1)?;
    let minus = corrected_loss(kind, priors, z, -1)?;
    check_label(t_noisy)?;
    Ok(unmix(eta_s, eta_d, plus, minus, t_noisy))
}

pub fn backward_corrected_loss_grad(
    kind: LossKind,
    priors: &Priors,
    eta_s: f64,
    eta_d: f64,
    z: f64,
    t_noisy: i8,
) -> Result<f64> {
    check_conditional_rates(eta_s, eta_d)?;
    let plus = corrected_loss_grad(kind, priors, z, 1)?;
    let minus = corrected_loss_grad(kind, priors, z, -1)?;
    check_label(t_noisy)?;
    Ok(unmix(eta_s, eta_d, plus, minus, t_noisy))
}

pub(crate) fn unmix(eta_s: f64, eta_d: f64, plus: f64, minus: f64, t_noisy: i8) -> f64 {
    let d = 1.0 - eta_s - eta_d;
    if t_noisy > 0 {
        ((1.0 - eta_d) * plus - eta_s * minus) / d
    } else {
        ((1.0 - eta_s) * minus - eta_d * plus) / d
    }
}
