//! Exhaustive reference for the vote rule on finite signal spaces.
//!
//! The oracle never looks at interval bounds. For every signal vector it
//! replays the whole process, and an agent's round-`t` vote is obtained by
//! summing the prior mass of all signal vectors that share the agent's own
//! signal and produce the same public history so far. This costs
//! `O(T * n * m^n)` and exists only to certify the engine.

use crate::engine::{EngineError, Simulation, TieRule};
use crate::signal_model::{Atom, ModelError, SignalModel, WorldState};
use rand::Rng;
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

/// Largest number of signal vectors the oracle will enumerate.
pub const ENUMERATION_BUDGET: usize = 1_000_000;

/// Posteriors closer than this to one half count as numerical ties.
pub const TIE_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("the oracle needs a discrete signal model")]
    NotDiscrete,
    #[error("instance needs at least one agent and one round")]
    Empty,
    #[error("{atoms}^{agents} signal vectors exceed the enumeration budget of {ENUMERATION_BUDGET}")]
    OverBudget { atoms: usize, agents: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A finite model small enough to enumerate.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteInstance {
    model: SignalModel,
    agents: usize,
    horizon: usize,
}

impl DiscreteInstance {
    pub fn new(model: SignalModel, agents: usize, horizon: usize) -> Result<Self, OracleError> {
        let atoms = match &model {
            SignalModel::Discrete(t) => t.len(),
            SignalModel::Gaussian(_) => return Err(OracleError::NotDiscrete),
        };
        if agents == 0 || horizon == 0 {
            return Err(OracleError::Empty);
        }
        let report = model.validate_model();
        if !report.is_valid() {
            return Err(ModelError::Invalid(report.violations.join("; ")).into());
        }
        let within =
            u32::try_from(agents).ok().and_then(|a| atoms.checked_pow(a)).is_some_and(|v| v <= ENUMERATION_BUDGET);
        if !within {
            return Err(OracleError::OverBudget { atoms, agents });
        }
        Ok(DiscreteInstance { model, agents, horizon })
    }

    /// The binary interview model.
    pub fn hiring(agents: usize, horizon: usize) -> Result<Self, OracleError> {
        Self::new(SignalModel::hiring_discrete(), agents, horizon)
    }

    pub fn model(&self) -> &SignalModel {
        &self.model
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn atoms(&self) -> &[Atom] {
        match &self.model {
            SignalModel::Discrete(t) => t.atoms(),
            SignalModel::Gaussian(_) => unreachable!("checked at construction"),
        }
    }

    pub fn n_vectors(&self) -> usize {
        self.atoms().len().pow(self.agents as u32)
    }

    /// Decodes a vector index into per-agent atom indices (agent 0 is the
    /// least significant digit).
    pub fn vector(&self, mut index: usize) -> Vec<usize> {
        let m = self.atoms().len();
        (0..self.agents)
            .map(|_| {
                let digit = index % m;
                index /= m;
                digit
            })
            .collect()
    }
}

/// Votes of every agent, at every round, for every signal vector.
#[derive(Clone, Debug)]
pub struct VoteFunctionTable {
    agents: usize,
    horizon: usize,
    n_vectors: usize,
    votes: Vec<bool>,
    /// `history_class[t][v]`: which public history vector `v` produces
    /// through round `t` (round 0 is the empty history).
    history_class: Vec<Vec<u32>>,
    min_margin: f64,
    max_normalization_error: f64,
}

impl VoteFunctionTable {
    /// Vote of `agent` at 1-based `round` when the signals are vector `vector`.
    pub fn vote(&self, vector: usize, round: usize, agent: usize) -> bool {
        self.votes[self.slot(vector, round, agent)]
    }

    fn slot(&self, vector: usize, round: usize, agent: usize) -> usize {
        ((round - 1) * self.n_vectors + vector) * self.agents + agent
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_vectors(&self) -> usize {
        self.n_vectors
    }

    /// History class of each vector after `round` rounds.
    pub fn history_classes(&self, round: usize) -> &[u32] {
        &self.history_class[round]
    }

    /// Smallest `|P(S=1 | own signal, history) - 1/2|` encountered.
    pub fn min_margin(&self) -> f64 {
        self.min_margin
    }

    /// Largest `|P(S=0 | ...) + P(S=1 | ...) - 1|` encountered.
    pub fn max_normalization_error(&self) -> f64 {
        self.max_normalization_error
    }

    /// Whether a posterior fell inside the tie guard band.
    pub fn has_near_tie(&self) -> bool {
        self.min_margin < TIE_GUARD
    }
}

/// Builds the full vote table by direct Bayesian summation.
pub fn enumerate_vote_table(instance: &DiscreteInstance) -> VoteFunctionTable {
    let atoms = instance.atoms();
    let n = instance.agents;
    let n_vectors = instance.n_vectors();
    let vectors: Vec<Vec<usize>> = (0..n_vectors).map(|v| instance.vector(v)).collect();
    let weight = |v: &[usize], state: WorldState| -> f64 {
        v.iter()
            .map(|&k| match state {
                WorldState::Zero => atoms[k].p0,
                WorldState::One => atoms[k].p1,
            })
            .product()
    };
    let w0: Vec<f64> = vectors.iter().map(|v| weight(v, WorldState::Zero)).collect();
    let w1: Vec<f64> = vectors.iter().map(|v| weight(v, WorldState::One)).collect();

    let mut votes = vec![false; instance.horizon * n_vectors * n];
    let mut history_class = vec![vec![0u32; n_vectors]];
    let mut min_margin = f64::INFINITY;
    let mut max_normalization_error: f64 = 0.0;

    for round in 1..=instance.horizon {
        let classes = history_class.last().expect("round 0 present");
        // (agent, own atom, history so far) -> unnormalized (mass0, mass1)
        let mut evidence: HashMap<(usize, usize, u32), (f64, f64)> = HashMap::new();
        for (v, signals) in vectors.iter().enumerate() {
            for (agent, &own) in signals.iter().enumerate() {
                let e = evidence.entry((agent, own, classes[v])).or_default();
                e.0 += w0[v];
                e.1 += w1[v];
            }
        }
        let mut next_class: HashMap<(u32, Vec<bool>), u32> = HashMap::new();
        let mut next = Vec::with_capacity(n_vectors);
        for (v, signals) in vectors.iter().enumerate() {
            let round_votes: Vec<bool> = signals
                .iter()
                .enumerate()
                .map(|(agent, &own)| {
                    let (m0, m1) = evidence[&(agent, own, classes[v])];
                    let p1 = m1 / (m0 + m1);
                    let p0 = m0 / (m0 + m1);
                    min_margin = min_margin.min((p1 - 0.5).abs());
                    max_normalization_error = max_normalization_error.max((p0 + p1 - 1.0).abs());
                    p1 > 0.5
                })
                .collect();
            let base = ((round - 1) * n_vectors + v) * n;
            votes[base..base + n].copy_from_slice(&round_votes);
            let fresh = next_class.len() as u32;
            next.push(*next_class.entry((classes[v], round_votes)).or_insert(fresh));
        }
        history_class.push(next);
    }

    VoteFunctionTable {
        agents: n,
        horizon: instance.horizon,
        n_vectors,
        votes,
        history_class,
        min_margin,
        max_normalization_error,
    }
}

/// Where the engine and the oracle first disagree.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Match,
    Diverge { vector: Vec<usize>, round: usize, agent: usize },
    EngineFailure { vector: Vec<usize>, round: usize, error: EngineError },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub vectors: usize,
    pub rounds: usize,
    pub outcome: Outcome,
}

impl EquivalenceReport {
    pub fn is_match(&self) -> bool {
        self.outcome == Outcome::Match
    }

    /// One line of `verify` output for the instance labelled `id`.
    pub fn line(&self, id: &str) -> String {
        format!("instance={id} vectors={} rounds={} result={}", self.vectors, self.rounds, self.outcome)
    }
}

fn fmt_vector(v: &[usize]) -> String {
    let parts: Vec<String> = v.iter().map(|k| k.to_string()).collect();
    format!("[{}]", parts.join(" "))
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Match => write!(f, "MATCH"),
            Outcome::Diverge { vector, round, agent } => {
                write!(f, "DIVERGE({},{round},{agent})", fmt_vector(vector))
            }
            Outcome::EngineFailure { vector, round, .. } => {
                write!(f, "DIVERGE({},{round},engine-error)", fmt_vector(vector))
            }
        }
    }
}

/// Runs the engine on every signal vector and compares it with the oracle.
pub fn check_equivalence(instance: &DiscreteInstance) -> EquivalenceReport {
    check_equivalence_with(instance, &enumerate_vote_table(instance), TieRule::VoteZero)
}

/// Like [`check_equivalence`], with a precomputed oracle table and an
/// explicit engine tie rule.
pub fn check_equivalence_with(
    instance: &DiscreteInstance,
    table: &VoteFunctionTable,
    tie_rule: TieRule,
) -> EquivalenceReport {
    let model = instance.model();
    let report = |outcome| EquivalenceReport { vectors: table.n_vectors, rounds: instance.horizon, outcome };
    for v in 0..table.n_vectors {
        let signals = instance.vector(v);
        let llrs = signals
            .iter()
            .map(|&k| match model {
                SignalModel::Discrete(t) => t.llrs()[k],
                SignalModel::Gaussian(_) => unreachable!("checked at construction"),
            })
            .collect();
        let mut sim = match Simulation::new(model, WorldState::One, llrs) {
            Ok(sim) => sim.with_tie_rule(tie_rule),
            Err(error) => return report(Outcome::EngineFailure { vector: signals, round: 1, error }),
        };
        for round in 1..=instance.horizon {
            let record = match sim.run_round() {
                Ok(r) => r,
                Err(error) => return report(Outcome::EngineFailure { vector: signals, round, error }),
            };
            if let Some(agent) = (0..instance.agents).find(|&i| record.votes[i] != table.vote(v, round, i)) {
                return report(Outcome::Diverge { vector: signals, round, agent });
            }
        }
    }
    report(Outcome::Match)
}

/// Draws a random discrete table with `2..=max_atoms` atoms. Both columns
/// are uniform draws renormalized to 1; atoms lighter than `min_mass` under
/// either state are rejected by redrawing.
pub fn random_table<R: Rng + ?Sized>(rng: &mut R, max_atoms: usize, min_mass: f64) -> SignalModel {
    let max_atoms = max_atoms.max(2);
    loop {
        let m = rng.random_range(2..=max_atoms);
        let raw0: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let raw1: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let (s0, s1) = (raw0.iter().sum::<f64>(), raw1.iter().sum::<f64>());
        let atoms: Vec<Atom> =
            raw0.iter().zip(&raw1).enumerate().map(|(k, (a, b))| Atom::new(format!("a{k}"), a / s0, b / s1)).collect();
        if atoms.iter().any(|a| a.p0 < min_mass || a.p1 < min_mass) {
            continue;
        }
        let model = SignalModel::discrete_unchecked(atoms);
        if model.validate_model().is_valid() {
            return model;
        }
    }
}

/// A discrete model with an atom whose likelihood ratio is exactly one, so
/// an agent holding it faces an exact tie in the first round.
pub fn tie_model() -> SignalModel {
    SignalModel::discrete_unchecked(vec![
        Atom::new("neutral", 0.5, 0.5),
        Atom::new("low", 0.3, 0.1),
        Atom::new("high", 0.2, 0.4),
    ])
}

/// Parameters of the randomized equivalence suite.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyBudget {
    pub instances: usize,
    pub agents: usize,
    pub max_atoms: usize,
    pub rounds: usize,
    pub seed: u64,
}

impl Default for VerifyBudget {
    fn default() -> Self {
        VerifyBudget { instances: 1000, agents: 3, max_atoms: 4, rounds: 5, seed: 0 }
    }
}

/// Runs the randomized suite: the fixed hiring and tie instances, then
/// `budget.instances` random tables, regenerating any random table whose
/// oracle posteriors come within [`TIE_GUARD`] of one half. An empty budget
/// runs nothing.
pub fn run_verification(
    budget: &VerifyBudget,
    tie_rule: TieRule,
) -> Result<Vec<(String, EquivalenceReport)>, OracleError> {
    use rand::SeedableRng;

    if budget.instances == 0 {
        return Ok(Vec::new());
    }
    let mut reports = Vec::with_capacity(budget.instances + 2);
    for (id, model) in [("hiring", SignalModel::hiring_discrete()), ("tie", tie_model())] {
        let instance = DiscreteInstance::new(model, budget.agents, budget.rounds)?;
        let table = enumerate_vote_table(&instance);
        reports.push((id.to_string(), check_equivalence_with(&instance, &table, tie_rule)));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(budget.seed);
    for k in 0..budget.instances {
        let (instance, table) = loop {
            let model = random_table(&mut rng, budget.max_atoms, 1e-3);
            let instance = DiscreteInstance::new(model, budget.agents, budget.rounds)?;
            let table = enumerate_vote_table(&instance);
            if !table.has_near_tie() {
                break (instance, table);
            }
        };
        reports.push((k.to_string(), check_equivalence_with(&instance, &table, tie_rule)));
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_one_is_the_single_signal_posterior() {
        let inst = DiscreteInstance::hiring(3, 1).unwrap();
        let table = enumerate_vote_table(&inst);
        for v in 0..inst.n_vectors() {
            for (agent, &own) in inst.vector(v).iter().enumerate() {
                // favorable is atom 0 with positive llr
                assert_eq!(table.vote(v, 1, agent), own == 0);
            }
        }
    }

    #[test]
    fn all_favorable_round_two_is_unanimous_yes() {
        let inst = DiscreteInstance::hiring(3, 2).unwrap();
        let table = enumerate_vote_table(&inst);
        let all_favorable = 0; // every digit 0
        assert_eq!(inst.vector(all_favorable), vec![0, 0, 0]);
        assert!((0..3).all(|a| table.vote(all_favorable, 2, a)));
    }

    #[test]
    fn lone_agent_never_changes() {
        let inst = DiscreteInstance::hiring(1, 6).unwrap();
        let table = enumerate_vote_table(&inst);
        for v in 0..inst.n_vectors() {
            let first = table.vote(v, 1, 0);
            assert!((1..=6).all(|t| table.vote(v, t, 0) == first));
        }
    }

    #[test]
    fn hiring_matches_engine() {
        let inst = DiscreteInstance::hiring(3, 5).unwrap();
        let report = check_equivalence(&inst);
        assert!(report.is_match(), "{report:?}");
        assert_eq!(report.line("hiring"), "instance=hiring vectors=8 rounds=5 result=MATCH");
    }

    #[test]
    fn eleven_member_committee_round_two() {
        // agent 0 favorable, six peers favorable, four unfavorable: vote 0
        let inst = DiscreteInstance::hiring(11, 2).unwrap();
        let table = enumerate_vote_table(&inst);
        let signals = [0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1];
        let index = signals.iter().rev().fold(0, |acc, &d| acc * 2 + d);
        assert_eq!(inst.vector(index), signals);
        assert!(table.vote(index, 1, 0));
        assert!(!table.vote(index, 2, 0));
        assert!(check_equivalence(&inst).is_match());
    }

    #[test]
    fn posteriors_are_normalized() {
        let table = enumerate_vote_table(&DiscreteInstance::hiring(4, 4).unwrap());
        assert!(table.max_normalization_error() < 1e-12);
        assert!(table.min_margin() > 0.0);
    }

    #[test]
    fn history_classes_partition_the_mass() {
        let inst = DiscreteInstance::new(tie_model(), 3, 4).unwrap();
        let table = enumerate_vote_table(&inst);
        let atoms = inst.atoms();
        for t in 0..=4 {
            let classes = table.history_classes(t);
            assert_eq!(classes.len(), inst.n_vectors());
            let mut mass: HashMap<u32, f64> = HashMap::new();
            for (v, &c) in classes.iter().enumerate() {
                let signals = inst.vector(v);
                let p0: f64 = signals.iter().map(|&k| atoms[k].p0).product();
                let p1: f64 = signals.iter().map(|&k| atoms[k].p1).product();
                let w = 0.5 * (p0 + p1);
                *mass.entry(c).or_default() += w;
            }
            let total: f64 = mass.values().sum();
            assert!((total - 1.0).abs() < 1e-12, "round {t}: {total}");
        }
        assert_eq!(table.history_classes(0).iter().max(), Some(&0));
    }

    #[test]
    fn flipped_tie_rule_is_caught() {
        let inst = DiscreteInstance::new(tie_model(), 3, 5).unwrap();
        let table = enumerate_vote_table(&inst);
        assert!(check_equivalence_with(&inst, &table, TieRule::VoteZero).is_match());
        let report = check_equivalence_with(&inst, &table, TieRule::VoteOne);
        match &report.outcome {
            Outcome::Diverge { vector, round, agent } => {
                assert_eq!(*round, 1);
                assert_eq!(vector[*agent], 0, "the neutral atom causes the tie");
            }
            other => panic!("expected divergence, got {other:?}"),
        }
        assert!(report.line("tie").starts_with("instance=tie vectors=27 rounds=5 result=DIVERGE([0 0 0],1,0)"));
    }

    #[test]
    fn budget_and_model_checks() {
        assert_eq!(DiscreteInstance::hiring(20, 5), Err(OracleError::OverBudget { atoms: 2, agents: 20 }));
        assert!(DiscreteInstance::hiring(19, 5).is_ok());
        assert_eq!(DiscreteInstance::new(SignalModel::hiring_gaussian(), 3, 5), Err(OracleError::NotDiscrete));
        assert_eq!(DiscreteInstance::hiring(0, 5), Err(OracleError::Empty));
        assert!(DiscreteInstance::new(SignalModel::hiring_discrete(), 3, 0).is_err());
    }

    #[test]
    fn random_tables_are_valid() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let m = random_table(&mut rng, 4, 1e-3);
            assert!(m.validate_model().is_valid());
            match &m {
                SignalModel::Discrete(t) => assert!((2..=4).contains(&t.len())),
                SignalModel::Gaussian(_) => unreachable!(),
            }
        }
    }

    #[test]
    fn empty_budget_runs_nothing() {
        let budget = VerifyBudget { instances: 0, ..VerifyBudget::default() };
        assert!(run_verification(&budget, TieRule::VoteZero).unwrap().is_empty());
    }
}
