//! The tractable vote computation and the simulation loop built on it.
//!
//! Every agent's votes reveal an interval `(lower, upper]` containing its
//! private LLR, and those intervals are public: any observer can recompute
//! them from the vote history alone. An agent's posterior log-odds before
//! round `t` is its own LLR plus the interval LLRs of all its peers,
//!
//! ```text
//! Y_i(t) = X_i + sum_{j != i} x(lower_j(t-1), upper_j(t-1))
//! ```
//!
//! and it votes 1 exactly when `Y_i(t) > 0`. Hence voting 1 tells everyone
//! `X_i > -sum_{j != i} x(...)` and voting 0 tells them the opposite. Keeping
//! the sum over all agents once and subtracting each agent's own term makes a
//! whole round `O(n)`.

mod transcript;

pub use transcript::{Transcript, TranscriptError};

use crate::signal_model::{ModelError, SignalModel, WorldState};
use rand::Rng;
use serde::Serialize;
use std::cmp::Ordering;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("a simulation needs at least one agent")]
    NoAgents,
    #[error("expected {expected} votes, got {got}")]
    VoteCount { expected: usize, got: usize },
    #[error("inconsistent vote history: agent {agent} would have bounds ({lower}, {upper}]")]
    InconsistentHistory { agent: usize, lower: f64, upper: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What an agent does when its posterior is exactly one half.
///
/// Only [`TieRule::VoteZero`] is correct; the other variant exists so tests
/// can check that the oracle comparison notices a wrong tie rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TieRule {
    #[default]
    VoteZero,
    VoteOne,
}

/// Public knowledge about one agent's private LLR.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AgentBounds {
    /// Strict lower bound; `-inf` until the agent first votes 1.
    pub lower: f64,
    /// Inclusive upper bound; `+inf` until the agent first votes 0.
    pub upper: f64,
    /// `x(lower, upper)`, cached.
    pub interval_llr: f64,
}

impl AgentBounds {
    pub const UNINFORMED: AgentBounds =
        AgentBounds { lower: f64::NEG_INFINITY, upper: f64::INFINITY, interval_llr: 0.0 };

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, llr: f64) -> bool {
        self.lower < llr && llr <= self.upper
    }
}

/// Bounds for `n` agents before anyone has voted.
pub fn init_bounds(n: usize) -> Result<Vec<AgentBounds>, EngineError> {
    if n == 0 {
        return Err(EngineError::NoAgents);
    }
    Ok(vec![AgentBounds::UNINFORMED; n])
}

/// The bounds of all agents together with the running sum of their interval
/// LLRs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PublicBounds {
    agents: Vec<AgentBounds>,
    interval_llr_sum: f64,
}

impl PublicBounds {
    pub fn new(n: usize) -> Result<Self, EngineError> {
        Ok(PublicBounds { agents: init_bounds(n)?, interval_llr_sum: 0.0 })
    }

    /// Bounds from explicit `(lower, upper)` intervals, one per agent.
    pub fn from_intervals(model: &SignalModel, intervals: &[(f64, f64)]) -> Result<Self, EngineError> {
        if intervals.is_empty() {
            return Err(EngineError::NoAgents);
        }
        let mut agents = Vec::with_capacity(intervals.len());
        for (agent, &(lower, upper)) in intervals.iter().enumerate() {
            if lower.partial_cmp(&upper) != Some(Ordering::Less) {
                return Err(EngineError::InconsistentHistory { agent, lower, upper });
            }
            agents.push(AgentBounds { lower, upper, interval_llr: model.interval_llr(lower, upper)? });
        }
        let interval_llr_sum = agents.iter().map(|b| b.interval_llr).sum();
        Ok(PublicBounds { agents, interval_llr_sum })
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn agents(&self) -> &[AgentBounds] {
        &self.agents
    }

    /// `sum_j x(lower_j, upper_j)` over all agents.
    pub fn interval_llr_sum(&self) -> f64 {
        self.interval_llr_sum
    }

    /// What agent `agent`'s peers have revealed: `sum_{j != agent} x(lower_j, upper_j)`.
    pub fn peer_evidence(&self, agent: usize) -> f64 {
        self.interval_llr_sum - self.agents[agent].interval_llr
    }

    /// Posterior log-odds of agent `agent` given its private LLR.
    pub fn posterior_log_odds(&self, private_llr: f64, agent: usize) -> f64 {
        private_llr + self.peer_evidence(agent)
    }

    /// The vote of agent `agent`: 1 iff its posterior log-odds are positive.
    pub fn compute_vote(&self, private_llr: f64, agent: usize) -> bool {
        self.compute_vote_with(private_llr, agent, TieRule::VoteZero)
    }

    pub fn compute_vote_with(&self, private_llr: f64, agent: usize, tie: TieRule) -> bool {
        let y = self.posterior_log_odds(private_llr, agent);
        match tie {
            TieRule::VoteZero => y > 0.0,
            TieRule::VoteOne => y >= 0.0,
        }
    }

    /// Folds one round of published votes into the bounds.
    ///
    /// An agent voting 1 reveals `X > -peer_evidence`, one voting 0 reveals
    /// `X <= -peer_evidence`, with the peer evidence taken from the bounds
    /// *before* this round.
    pub fn update(&mut self, model: &SignalModel, votes: &[bool]) -> Result<(), EngineError> {
        if votes.len() != self.agents.len() {
            return Err(EngineError::VoteCount { expected: self.agents.len(), got: votes.len() });
        }
        let thresholds: Vec<f64> = (0..self.agents.len()).map(|i| -self.peer_evidence(i)).collect();
        for (agent, (bounds, (&vote, threshold))) in
            self.agents.iter_mut().zip(votes.iter().zip(thresholds)).enumerate()
        {
            let (lower, upper) = if vote {
                (bounds.lower.max(threshold), bounds.upper)
            } else {
                (bounds.lower, bounds.upper.min(threshold))
            };
            if lower.partial_cmp(&upper) != Some(Ordering::Less) {
                return Err(EngineError::InconsistentHistory { agent, lower, upper });
            }
            if (lower, upper) != (bounds.lower, bounds.upper) {
                bounds.interval_llr = model.interval_llr(lower, upper)?;
                bounds.lower = lower;
                bounds.upper = upper;
            }
        }
        self.interval_llr_sum = self.agents.iter().map(|b| b.interval_llr).sum();
        Ok(())
    }

    /// `sum_i (upper_i - lower_i)`; infinite while any bound is.
    pub fn total_width(&self) -> f64 {
        self.agents.iter().map(AgentBounds::width).sum()
    }
}

/// The votes of one round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RoundRecord {
    /// 1-based round number.
    pub round: usize,
    pub votes: Vec<bool>,
    pub unanimous: bool,
    /// Permanent unanimity was guaranteed once this round's votes were known.
    pub certified: bool,
    /// The bound-width inequality `sum_i (upper_i - lower_i) < |sum_i X_i|`
    /// held after this round.
    pub width_certified: bool,
}

impl RoundRecord {
    /// The common vote, if the round was unanimous.
    pub fn consensus(&self) -> Option<bool> {
        self.unanimous.then(|| self.votes[0])
    }

    pub fn bitstring(&self) -> String {
        self.votes.iter().map(|&v| if v { '1' } else { '0' }).collect()
    }
}

/// A single run of the voting process with known ground truth.
#[derive(Clone, Debug)]
pub struct Simulation<'m> {
    model: &'m SignalModel,
    true_state: WorldState,
    private_llrs: Vec<f64>,
    bounds: PublicBounds,
    history: Vec<RoundRecord>,
    tie_rule: TieRule,
}

impl<'m> Simulation<'m> {
    pub fn new(model: &'m SignalModel, true_state: WorldState, private_llrs: Vec<f64>) -> Result<Self, EngineError> {
        let bounds = PublicBounds::new(private_llrs.len())?;
        Ok(Simulation { model, true_state, private_llrs, bounds, history: Vec::new(), tie_rule: TieRule::VoteZero })
    }

    /// Draws the state of the world uniformly and `n` private signals given it.
    pub fn sample<R: Rng + ?Sized>(model: &'m SignalModel, n: usize, rng: &mut R) -> Result<Self, EngineError> {
        if n == 0 {
            return Err(EngineError::NoAgents);
        }
        let state = WorldState::sample(rng);
        Self::sample_given(model, state, n, rng)
    }

    /// Draws `n` private signals given a fixed state of the world.
    pub fn sample_given<R: Rng + ?Sized>(
        model: &'m SignalModel,
        state: WorldState,
        n: usize,
        rng: &mut R,
    ) -> Result<Self, EngineError> {
        let llrs = (0..n).map(|_| model.sample_llr(state, rng)).collect();
        Self::new(model, state, llrs)
    }

    pub fn with_tie_rule(mut self, tie_rule: TieRule) -> Self {
        self.tie_rule = tie_rule;
        self
    }

    pub fn true_state(&self) -> WorldState {
        self.true_state
    }

    pub fn private_llrs(&self) -> &[f64] {
        &self.private_llrs
    }

    pub fn bounds(&self) -> &PublicBounds {
        &self.bounds
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    /// Number of completed rounds.
    pub fn round(&self) -> usize {
        self.history.len()
    }

    pub fn n_agents(&self) -> usize {
        self.private_llrs.len()
    }

    /// The bound-width inequality `sum_i (upper_i - lower_i) < |sum_i X_i|`.
    /// It uses the private LLRs, so only the simulator can evaluate it.
    pub fn width_condition(&self) -> bool {
        let total: f64 = self.private_llrs.iter().sum();
        self.bounds.total_width() < total.abs()
    }

    /// True when every later round is guaranteed to repeat one common vote.
    ///
    /// Two sufficient conditions are checked. The width inequality forces all
    /// posteriors to share the sign of `sum_i X_i` from the next round on. A
    /// unanimous round is absorbing on its own: after a unanimous vote for 1
    /// lower bounds can only rise and upper bounds stay put, so every interval
    /// LLR and every posterior is non-decreasing (symmetrically for 0).
    pub fn consensus_certificate(&self) -> bool {
        self.width_condition() || self.history.last().is_some_and(|r| r.unanimous)
    }

    /// Votes of the next round, computed from the current bounds.
    pub fn next_votes(&self) -> Vec<bool> {
        self.private_llrs.iter().enumerate().map(|(i, &x)| self.bounds.compute_vote_with(x, i, self.tie_rule)).collect()
    }

    /// Plays one round: every agent votes, the record is appended and the
    /// public bounds absorb the new votes.
    pub fn run_round(&mut self) -> Result<&RoundRecord, EngineError> {
        let votes = self.next_votes();
        self.bounds.update(self.model, &votes)?;
        let unanimous = votes.windows(2).all(|w| w[0] == w[1]);
        let width_certified = self.width_condition();
        self.history.push(RoundRecord {
            round: self.history.len() + 1,
            votes,
            unanimous,
            certified: unanimous || width_certified,
            width_certified,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn run_rounds(&mut self, rounds: usize) -> Result<(), EngineError> {
        for _ in 0..rounds {
            self.run_round()?;
        }
        Ok(())
    }

    /// Plays rounds until a unanimous round at or after certification is
    /// observed, or `max_rounds` have been played.
    pub fn run_until_consensus(&mut self, max_rounds: usize) -> Result<(), EngineError> {
        while self.round() < max_rounds && convergence_round(&self.history).is_none() {
            self.run_round()?;
        }
        Ok(())
    }

    pub fn result(&self) -> SimulationResult {
        let convergence = convergence_round(&self.history);
        let consensus_vote = convergence.map(|t| self.history[t - 1].votes[0]);
        SimulationResult {
            true_state: self.true_state,
            private_llrs: self.private_llrs.clone(),
            rounds: self.history.clone(),
            convergence_round: convergence,
            first_unanimous_round: self.history.iter().find(|r| r.unanimous).map(|r| r.round),
            first_certified_round: self.history.iter().find(|r| r.certified).map(|r| r.round),
            first_width_certified_round: self.history.iter().find(|r| r.width_certified).map(|r| r.round),
            certified: convergence.is_some(),
            consensus_vote,
            correct: consensus_vote == Some(self.true_state.as_vote()),
        }
    }
}

/// First round that is unanimous and at or after the first certified round.
fn convergence_round(history: &[RoundRecord]) -> Option<usize> {
    let certified = history.iter().position(|r| r.certified)?;
    history[certified..].iter().find(|r| r.unanimous).map(|r| r.round)
}

/// Outcome of [`run_to_consensus`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationResult {
    pub true_state: WorldState,
    pub private_llrs: Vec<f64>,
    pub rounds: Vec<RoundRecord>,
    /// `t_u`: first unanimous round at or after certification.
    pub convergence_round: Option<usize>,
    pub first_unanimous_round: Option<usize>,
    pub first_certified_round: Option<usize>,
    pub first_width_certified_round: Option<usize>,
    /// Whether permanent unanimity was certified within the round cap.
    pub certified: bool,
    pub consensus_vote: Option<bool>,
    pub correct: bool,
}

impl SimulationResult {
    pub fn transcript(&self) -> Transcript {
        Transcript::from_result(self)
    }
}

/// Samples a world and signals, then plays until certified consensus or
/// `max_rounds`. Hitting the cap is not an error: the result is simply
/// marked uncertified.
pub fn run_to_consensus<R: Rng + ?Sized>(
    model: &SignalModel,
    n: usize,
    max_rounds: usize,
    rng: &mut R,
) -> Result<SimulationResult, EngineError> {
    let mut sim = Simulation::sample(model, n, rng)?;
    sim.run_until_consensus(max_rounds)?;
    Ok(sim.result())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const FAVORABLE: f64 = 0.405_465_108_108_164_4; // ln 1.5
    const UNFAVORABLE: f64 = -1.386_294_361_119_890_6; // ln 0.25

    #[test]
    fn init_bounds_are_uninformed() {
        let b = init_bounds(3).unwrap();
        assert_eq!(b.len(), 3);
        assert!(b.iter().all(|a| *a == AgentBounds::UNINFORMED));
        assert_eq!(init_bounds(0), Err(EngineError::NoAgents));
        assert_eq!(PublicBounds::new(4).unwrap().interval_llr_sum(), 0.0);
    }

    #[test]
    fn first_round_votes_follow_own_llr() {
        let b = PublicBounds::new(3).unwrap();
        assert!(b.compute_vote(0.1, 0));
        assert!(!b.compute_vote(-0.1, 1));
        // exact tie resolves to 0
        assert!(!b.compute_vote(0.0, 2));
        assert!(b.compute_vote_with(0.0, 2, TieRule::VoteOne));
    }

    #[test]
    fn first_round_update_thresholds_at_zero() {
        let model = SignalModel::hiring_gaussian();
        let mut b = PublicBounds::new(3).unwrap();
        b.update(&model, &[true, false, true]).unwrap();
        let a = b.agents();
        assert_eq!((a[0].lower, a[0].upper), (0.0, f64::INFINITY));
        assert_eq!((a[1].lower, a[1].upper), (f64::NEG_INFINITY, 0.0));
        let up = model.interval_llr(0.0, f64::INFINITY).unwrap();
        assert!((a[0].interval_llr - up).abs() < 1e-15);
        assert!((a[1].interval_llr + up).abs() < 1e-12);
        assert!((b.interval_llr_sum() - up).abs() < 1e-12);
    }

    #[test]
    fn replaying_votes_with_unchanged_thresholds_is_idempotent() {
        let model = SignalModel::hiring_gaussian();
        // a lone agent has no peers, so its threshold is always 0
        let mut b = PublicBounds::new(1).unwrap();
        b.update(&model, &[true]).unwrap();
        let once = b.clone();
        b.update(&model, &[true]).unwrap();
        assert_eq!(b, once);

        // with peers, two identical rounds move the thresholds once the
        // caches change, but a third round with the same caches does not
        let mut b = PublicBounds::new(3).unwrap();
        b.update(&model, &[true, true, true]).unwrap();
        let before = b.clone();
        b.update(&model, &[true, true, true]).unwrap();
        assert!(b.agents().iter().zip(before.agents()).all(|(n, o)| n.lower >= o.lower));
    }

    #[test]
    fn unanimous_yes_only_raises_lower_bounds() {
        let model = SignalModel::hiring_gaussian();
        let mut b = PublicBounds::new(4).unwrap();
        b.update(&model, &[true, false, true, false]).unwrap();
        let before = b.clone();
        b.update(&model, &[true; 4]).unwrap();
        for (old, new) in before.agents().iter().zip(b.agents()) {
            assert_eq!(old.upper, new.upper);
            assert!(new.lower >= old.lower);
            assert!(new.interval_llr >= old.interval_llr);
        }
    }

    #[test]
    fn vote_count_mismatch() {
        let model = SignalModel::hiring_gaussian();
        let mut b = PublicBounds::new(2).unwrap();
        assert_eq!(b.update(&model, &[true]), Err(EngineError::VoteCount { expected: 2, got: 1 }));
    }

    #[test]
    fn corrupted_history_is_rejected() {
        let model = SignalModel::hiring_gaussian();
        let mut b = PublicBounds::new(1).unwrap();
        b.update(&model, &[true]).unwrap();
        // a lone agent's threshold stays 0; voting 0 after 1 collapses (0, 0]
        assert!(matches!(b.update(&model, &[false]), Err(EngineError::InconsistentHistory { agent: 0, .. })));
    }

    #[test]
    fn hiring_round_two_decomposition() {
        // 11 agents; agent 0 had a favorable impression, and of its 10 peers
        // 6 voted 1 in round one.
        let model = SignalModel::hiring_discrete();
        let mut b = PublicBounds::new(11).unwrap();
        let mut votes = vec![true; 7];
        votes.extend([false; 4]);
        b.update(&model, &votes).unwrap();
        let y = b.posterior_log_odds(FAVORABLE, 0);
        let expected = 7.0 * FAVORABLE + 4.0 * UNFAVORABLE;
        assert!((y - expected).abs() < 1e-12, "{y} vs {expected}");
        assert!((y - -2.706_921_687_722_412).abs() < 1e-12);
        assert!(!b.compute_vote(FAVORABLE, 0));
    }

    #[test]
    fn single_agent_never_changes_its_mind() {
        let model = SignalModel::hiring_gaussian();
        for x in [-0.7, 0.3] {
            let mut sim = Simulation::new(&model, WorldState::One, vec![x]).unwrap();
            sim.run_rounds(5).unwrap();
            let first = sim.history()[0].votes[0];
            assert!(sim.history().iter().all(|r| r.votes == vec![first]));
            assert_eq!(first, x > 0.0);
            // the width inequality never fires: one bound stays infinite
            assert!(!sim.width_condition());
            assert!(sim.history().iter().all(|r| !r.width_certified));
            assert_eq!(sim.result().convergence_round, Some(1));
        }
    }

    #[test]
    fn certificate_is_false_with_infinite_bounds() {
        let model = SignalModel::hiring_gaussian();
        let sim = Simulation::new(&model, WorldState::Zero, vec![0.5, -1.0, 2.0]).unwrap();
        assert!(!sim.width_condition());
        assert!(!sim.consensus_certificate());
    }

    #[test]
    fn disagreement_then_consensus() {
        // Two agents with opposite first votes: the stronger signal wins.
        let model = SignalModel::hiring_gaussian();
        let mut sim = Simulation::new(&model, WorldState::One, vec![3.0, -0.5]).unwrap();
        sim.run_until_consensus(50).unwrap();
        let r = sim.result();
        assert!(r.certified);
        assert_eq!(r.consensus_vote, Some(true));
        assert!(r.correct);
        assert_eq!(r.rounds[0].votes, vec![true, false]);
        assert!(r.convergence_round.unwrap() >= 2);
    }

    #[test]
    fn bounds_contain_private_llrs_every_round() {
        let model = SignalModel::hiring_gaussian();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut sim = Simulation::sample(&model, 7, &mut rng).unwrap();
            for _ in 0..12 {
                let previous = sim.bounds().clone();
                sim.run_round().unwrap();
                for ((b, old), &x) in sim.bounds().agents().iter().zip(previous.agents()).zip(sim.private_llrs()) {
                    assert!(b.contains(x), "{b:?} misses {x}");
                    assert!(b.lower >= old.lower && b.upper <= old.upper);
                }
                let resum: f64 = sim.bounds().agents().iter().map(|b| b.interval_llr).sum();
                assert!((resum - sim.bounds().interval_llr_sum()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn run_to_consensus_is_reproducible() {
        let model = SignalModel::hiring_gaussian();
        let a = run_to_consensus(&model, 11, 100, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = run_to_consensus(&model, 11, 100, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.transcript().to_string(), b.transcript().to_string());
    }

    #[test]
    fn cap_without_consensus_is_uncertified() {
        let model = SignalModel::hiring_gaussian();
        let mut sim = Simulation::new(&model, WorldState::One, vec![3.0, -0.5]).unwrap();
        sim.run_until_consensus(1).unwrap();
        let r = sim.result();
        assert_eq!(r.rounds.len(), 1);
        assert!(!r.certified);
        assert_eq!(r.consensus_vote, None);
        assert!(!r.correct);
    }
}
