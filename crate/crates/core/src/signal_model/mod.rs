//! Conditional signal distributions and every log-likelihood-ratio
//! computation the engine relies on.
//!
//! A [`SignalModel`] is the pair of measures `mu_0`, `mu_1` from which private
//! signals are drawn given the state of the world. Agents never reason about
//! raw signals directly: everything goes through the private log-likelihood
//! ratio `X = ln(d mu_1 / d mu_0)(A)` and its two conditional laws `nu_0`,
//! `nu_1`, exposed here as [`LlrDistributions`].
//!
//! The central quantity is the interval LLR
//!
//! ```text
//! x(a, b) = ln [ (F1(b) - F1(a)) / (F0(b) - F0(a)) ]
//! ```
//!
//! where `Fs` is the CDF of `X` under state `s`. Intervals are half-open,
//! `(a, b]`, everywhere in this crate.

mod normal;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Tolerance on the column sums of a discrete table.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// Errors raised by signal-model construction and LLR evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid signal model: {0}")]
    Invalid(String),
    #[error("signal {0} is outside the model's support")]
    OutsideSupport(String),
    #[error("interval ({lower}, {upper}] has zero probability under some state; the vote history is inconsistent")]
    EmptyInterval { lower: f64, upper: f64 },
}

/// The hidden state of the world.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WorldState {
    Zero,
    One,
}

impl WorldState {
    pub const BOTH: [WorldState; 2] = [WorldState::Zero, WorldState::One];

    /// The vote that matches this state (`true` is a vote for 1).
    pub fn as_vote(self) -> bool {
        self == WorldState::One
    }

    pub fn from_bit(bit: bool) -> Self {
        if bit {
            WorldState::One
        } else {
            WorldState::Zero
        }
    }

    pub fn as_u8(self) -> u8 {
        self.as_vote() as u8
    }

    /// Uniform prior over the two states.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::from_bit(rng.random::<bool>())
    }
}

impl fmt::Display for WorldState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// A private signal: a real number for the Gaussian family, an atom index
/// for discrete tables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Signal {
    Real(f64),
    Atom(usize),
}

/// Two normal laws with a shared standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianShift {
    pub mean0: f64,
    pub mean1: f64,
    pub sd: f64,
}

impl GaussianShift {
    /// Separation `|mean1 - mean0| / sd`. Under state `s` the LLR is normal
    /// with variance `d^2` and mean `+d^2/2` (s = 1) or `-d^2/2` (s = 0).
    pub fn separation(&self) -> f64 {
        (self.mean1 - self.mean0).abs() / self.sd
    }

    fn llr_mean(&self, state: WorldState) -> f64 {
        let half = 0.5 * self.separation().powi(2);
        match state {
            WorldState::One => half,
            WorldState::Zero => -half,
        }
    }

    fn llr(&self, omega: f64) -> f64 {
        let slope = (self.mean1 - self.mean0) / (self.sd * self.sd);
        slope * (omega - 0.5 * (self.mean0 + self.mean1))
    }

    fn standardize(&self, state: WorldState, x: f64) -> f64 {
        (x - self.llr_mean(state)) / self.separation()
    }
}

/// One outcome of a discrete signal space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub label: String,
    /// Probability under state 0.
    pub p0: f64,
    /// Probability under state 1.
    pub p1: f64,
}

impl Atom {
    pub fn new(label: impl Into<String>, p0: f64, p1: f64) -> Self {
        Atom { label: label.into(), p0, p1 }
    }

    fn mass(&self, state: WorldState) -> f64 {
        match state {
            WorldState::Zero => self.p0,
            WorldState::One => self.p1,
        }
    }
}

/// A finite signal space given as a table of atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteTable {
    atoms: Vec<Atom>,
    llrs: Vec<f64>,
}

impl DiscreteTable {
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Per-atom log-likelihood ratios, in atom order.
    pub fn llrs(&self) -> &[f64] {
        &self.llrs
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    fn interval_mass(&self, state: WorldState, lower: f64, upper: f64) -> f64 {
        self.atoms
            .iter()
            .zip(&self.llrs)
            .filter(|(_, &l)| lower < l && l <= upper)
            .map(|(atom, _)| atom.mass(state))
            .sum()
    }
}

/// The pair of conditional signal laws `(mu_0, mu_1)`.
#[derive(Clone, Debug, PartialEq)]
pub enum SignalModel {
    Gaussian(GaussianShift),
    Discrete(DiscreteTable),
}

impl SignalModel {
    /// Normal signals `N(mean0, sd^2)` under state 0 and `N(mean1, sd^2)`
    /// under state 1.
    pub fn gaussian(mean0: f64, mean1: f64, sd: f64) -> Result<Self, ModelError> {
        let model = SignalModel::Gaussian(GaussianShift { mean0, mean1, sd });
        model.validate_model().into_result(model)
    }

    /// A discrete table, rejected unless it passes [`SignalModel::validate_model`].
    pub fn discrete(atoms: Vec<Atom>) -> Result<Self, ModelError> {
        let model = Self::discrete_unchecked(atoms);
        model.validate_model().into_result(model)
    }

    /// Builds a discrete table without checking it. Useful for feeding broken
    /// tables to [`SignalModel::validate_model`].
    pub fn discrete_unchecked(atoms: Vec<Atom>) -> Self {
        let llrs = atoms.iter().map(|a| (a.p1 / a.p0).ln()).collect();
        SignalModel::Discrete(DiscreteTable { atoms, llrs })
    }

    /// The interview example with continuous impressions: `N(-1, 1)` for a bad
    /// candidate, `N(1, 1)` for a good one.
    pub fn hiring_gaussian() -> Self {
        SignalModel::Gaussian(GaussianShift { mean0: -1.0, mean1: 1.0, sd: 1.0 })
    }

    /// The interview example with binary impressions: a good candidate makes a
    /// favorable impression 9 times out of 10, a bad one 6 times out of 10.
    pub fn hiring_discrete() -> Self {
        Self::discrete_unchecked(vec![Atom::new("favorable", 0.6, 0.9), Atom::new("unfavorable", 0.4, 0.1)])
    }

    /// The same model with the roles of the two states exchanged.
    pub fn swapped(&self) -> Self {
        match self {
            SignalModel::Gaussian(g) => {
                SignalModel::Gaussian(GaussianShift { mean0: g.mean1, mean1: g.mean0, sd: g.sd })
            }
            SignalModel::Discrete(t) => {
                Self::discrete_unchecked(t.atoms.iter().map(|a| Atom::new(a.label.clone(), a.p1, a.p0)).collect())
            }
        }
    }

    /// Pointwise log-likelihood ratio `ln (d mu_1 / d mu_0)(signal)`.
    pub fn llr(&self, signal: &Signal) -> Result<f64, ModelError> {
        match (self, signal) {
            (SignalModel::Gaussian(g), Signal::Real(omega)) if omega.is_finite() => Ok(g.llr(*omega)),
            (SignalModel::Discrete(t), Signal::Atom(k)) if *k < t.len() => Ok(t.llrs[*k]),
            _ => Err(ModelError::OutsideSupport(format!("{signal:?}"))),
        }
    }

    /// Draws a signal from `mu_state`.
    pub fn sample_signal<R: Rng + ?Sized>(&self, state: WorldState, rng: &mut R) -> Signal {
        match self {
            SignalModel::Gaussian(g) => {
                let mean = match state {
                    WorldState::Zero => g.mean0,
                    WorldState::One => g.mean1,
                };
                let z: f64 = StandardNormal.sample(rng);
                Signal::Real(mean + g.sd * z)
            }
            SignalModel::Discrete(t) => {
                let total: f64 = t.atoms.iter().map(|a| a.mass(state)).sum();
                let mut u = rng.random::<f64>() * total;
                for (k, atom) in t.atoms.iter().enumerate() {
                    u -= atom.mass(state);
                    if u < 0.0 {
                        return Signal::Atom(k);
                    }
                }
                Signal::Atom(t.len() - 1)
            }
        }
    }

    /// Draws a signal from `mu_state` and returns its LLR.
    pub fn sample_llr<R: Rng + ?Sized>(&self, state: WorldState, rng: &mut R) -> f64 {
        match self {
            // sampling X directly skips a multiply-add and keeps the same law
            SignalModel::Gaussian(g) => {
                let z: f64 = StandardNormal.sample(rng);
                g.llr_mean(state) + g.separation() * z
            }
            SignalModel::Discrete(t) => match self.sample_signal(state, rng) {
                Signal::Atom(k) => t.llrs[k],
                Signal::Real(_) => unreachable!("discrete models only emit atoms"),
            },
        }
    }

    /// The conditional laws `nu_0`, `nu_1` of the private LLR.
    pub fn llr_distributions(&self) -> LlrDistributions<'_> {
        LlrDistributions { model: self }
    }

    /// The interval LLR `x(a, b)`: the log-likelihood ratio of the event
    /// `a < X <= b`.
    ///
    /// Either bound may be infinite. For the Gaussian family, when both
    /// conditional masses underflow even in log space, the midpoint of the
    /// interval (clamped to its finite end) is returned instead.
    pub fn interval_llr(&self, lower: f64, upper: f64) -> Result<f64, ModelError> {
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(ModelError::EmptyInterval { lower, upper });
        }
        let dists = self.llr_distributions();
        let ln1 = dists.ln_interval_mass(WorldState::One, lower, upper);
        let ln0 = dists.ln_interval_mass(WorldState::Zero, lower, upper);
        if ln1.is_finite() && ln0.is_finite() {
            return Ok(ln1 - ln0);
        }
        match self {
            SignalModel::Gaussian(_) => Ok(underflow_fallback(lower, upper)),
            SignalModel::Discrete(_) => Err(ModelError::EmptyInterval { lower, upper }),
        }
    }

    /// `P(X > 0 | S = state)`: the chance that a first-round vote is 1.
    pub fn first_round_yes_rate(&self, state: WorldState) -> f64 {
        1.0 - self.llr_distributions().cdf(state, 0.0)
    }

    /// Checks the model's invariants and reports every violation found.
    pub fn validate_model(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let inverse_likelihood_mean = match self {
            SignalModel::Gaussian(g) => {
                if !(g.sd.is_finite() && g.sd > 0.0) {
                    violations.push(format!("standard deviation must be positive and finite, got {}", g.sd));
                }
                if !(g.mean0.is_finite() && g.mean1.is_finite()) {
                    violations.push("means must be finite".to_string());
                }
                if g.mean0 == g.mean1 {
                    violations.push("mean0 equals mean1: the two states are indistinguishable".to_string());
                }
                if violations.is_empty() {
                    gaussian_inverse_likelihood_mean(g)
                } else {
                    f64::NAN
                }
            }
            SignalModel::Discrete(t) => {
                validate_table(t, &mut violations);
                t.atoms.iter().zip(&t.llrs).map(|(a, l)| a.p1 * (-l).exp()).sum()
            }
        };
        if violations.is_empty() && (inverse_likelihood_mean - 1.0).abs() > 1e-6 {
            violations.push(format!("E[exp(-X) | S=1] = {inverse_likelihood_mean} differs from 1"));
        }
        ValidationReport { violations, inverse_likelihood_mean }
    }
}

fn underflow_fallback(lower: f64, upper: f64) -> f64 {
    match (lower.is_finite(), upper.is_finite()) {
        (true, true) => {
            let mid = 0.5 * (lower + upper);
            if mid > lower {
                mid
            } else {
                upper
            }
        }
        (false, true) => upper,
        (true, false) => lower.next_up(),
        (false, false) => 0.0,
    }
}

fn validate_table(t: &DiscreteTable, violations: &mut Vec<String>) {
    if t.len() < 2 {
        violations.push(format!("a discrete table needs at least two atoms, got {}", t.len()));
    }
    for atom in &t.atoms {
        if !(atom.p0 > 0.0 && atom.p0.is_finite() && atom.p1 > 0.0 && atom.p1.is_finite()) {
            violations.push(format!(
                "atom {:?} must have strictly positive mass under both states (p0={}, p1={})",
                atom.label, atom.p0, atom.p1
            ));
        }
    }
    for state in WorldState::BOTH {
        let total: f64 = t.atoms.iter().map(|a| a.mass(state)).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            violations.push(format!("p{} column sums to {total}, not 1", state.as_u8()));
        }
    }
    if t.llrs.windows(2).all(|w| w[0] == w[1]) {
        violations.push("every atom has the same likelihood ratio: the two states are indistinguishable".to_string());
    }
    // the law of X must itself have log-likelihood ratio X
    let mut distinct: Vec<f64> = t.llrs.iter().copied().filter(|l| l.is_finite()).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    for x in distinct {
        let (m0, m1) = t
            .atoms
            .iter()
            .zip(&t.llrs)
            .filter(|(_, &l)| l == x)
            .fold((0.0, 0.0), |(m0, m1), (a, _)| (m0 + a.p0, m1 + a.p1));
        if ((m1 / m0).ln() - x).abs() > 1e-9 {
            violations.push(format!("llr value {x} is not the log mass ratio of its level set"));
        }
    }
}

/// `E[exp(-X) | S=1]` by composite Simpson quadrature over the normal law of X.
fn gaussian_inverse_likelihood_mean(g: &GaussianShift) -> f64 {
    let mean = g.llr_mean(WorldState::One);
    let sd = g.separation();
    // the integrand peaks at mean - sd^2
    let lo = (mean - sd * sd).min(mean) - 14.0 * sd;
    let hi = (mean - sd * sd).max(mean) + 14.0 * sd;
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let f = |x: f64| {
        let z = (x - mean) / sd;
        norm * (-x - 0.5 * z * z).exp()
    };
    simpson(f, lo, hi, 40_000)
}

pub(crate) fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let panels = panels + panels % 2;
    let h = (hi - lo) / panels as f64;
    let mut acc = f(lo) + f(hi);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + k as f64 * h);
    }
    acc * h / 3.0
}

/// Diagnostics produced by [`SignalModel::validate_model`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    /// `E[exp(-X) | S=1]`, which equals 1 for any valid model.
    pub inverse_likelihood_mean: f64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn into_result(self, model: SignalModel) -> Result<SignalModel, ModelError> {
        if self.is_valid() {
            Ok(model)
        } else {
            Err(ModelError::Invalid(self.violations.join("; ")))
        }
    }
}

/// Read-only view of the conditional laws `nu_0`, `nu_1` of the private LLR.
#[derive(Clone, Copy, Debug)]
pub struct LlrDistributions<'a> {
    model: &'a SignalModel,
}

impl LlrDistributions<'_> {
    /// `P(X <= x | S = state)`.
    pub fn cdf(&self, state: WorldState, x: f64) -> f64 {
        match self.model {
            SignalModel::Gaussian(g) => normal::cdf(g.standardize(state, x)),
            SignalModel::Discrete(t) => t.interval_mass(state, f64::NEG_INFINITY, x),
        }
    }

    pub fn cdf0(&self, x: f64) -> f64 {
        self.cdf(WorldState::Zero, x)
    }

    pub fn cdf1(&self, x: f64) -> f64 {
        self.cdf(WorldState::One, x)
    }

    /// `ln P(lower < X <= upper | S = state)`; `-inf` for an empty event.
    pub fn ln_interval_mass(&self, state: WorldState, lower: f64, upper: f64) -> f64 {
        match self.model {
            SignalModel::Gaussian(g) => {
                normal::ln_interval_mass(g.standardize(state, lower), g.standardize(state, upper))
            }
            SignalModel::Discrete(t) => t.interval_mass(state, lower, upper).ln(),
        }
    }
}
