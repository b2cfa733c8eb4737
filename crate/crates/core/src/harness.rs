//! Seeded Monte Carlo experiments.
//!
//! Every trial draws from its own ChaCha8 stream, seeded by
//! [`derive_trial_seed`] from the master seed, the experiment cell (kind,
//! agent count, conditioning state) and the trial index. Trials run on a
//! rayon pool of the configured size, and only integer counts or per-trial
//! values collected in index order feed the estimates, so the output does
//! not depend on the number of workers or on scheduling.

use crate::config::{ExperimentConfig, ExperimentKind, ModelSpec};
use crate::engine::{EngineError, Simulation};
use crate::signal_model::{SignalModel, WorldState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use thiserror::Error;

pub const CSV_HEADER: &str = "experiment,n,round,estimate,stderr,trials,extra";

/// Failures needed before a learning-curve point enters the slope fit.
pub const MIN_FIT_FAILURES: u64 = 10;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `index` under `master`.
///
/// The splitmix64 finalizer is a bijection on `u64`, so for a fixed master
/// seed distinct indices always map to distinct seeds:
/// `splitmix64(master ^ splitmix64(index))`.
///
/// ```
/// use consensus_core::derive_trial_seed;
/// assert_eq!(derive_trial_seed(1, 2), derive_trial_seed(1, 2));
/// assert_ne!(derive_trial_seed(1, 2), derive_trial_seed(1, 3));
/// ```
pub fn derive_trial_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

fn cell_seed(master: u64, kind: ExperimentKind, n: usize, stream: u64) -> u64 {
    let k = derive_trial_seed(master, kind as u64);
    derive_trial_seed(derive_trial_seed(k, n as u64), stream)
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub round: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub trials: usize,
    /// `key=value` pairs joined by `;`.
    pub extra: String,
}

impl ResultRow {
    /// A proportion `successes / trials` with its binomial standard error.
    pub fn proportion(
        experiment: ExperimentKind,
        n: usize,
        round: usize,
        successes: u64,
        trials: usize,
        extra: String,
    ) -> Self {
        let p = successes as f64 / trials as f64;
        ResultRow { experiment, n, round, estimate: p, stderr: binomial_stderr(p, trials), trials, extra }
    }
}

pub fn binomial_stderr(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.experiment, r.n, r.round, r.estimate, r.stderr, r.trials, r.extra
            );
        }
        s
    }

    /// Rows for one agent count, in table order.
    pub fn for_n(&self, n: usize) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(move |r| r.n == n)
    }

    /// Value of `key` in a row's extra column.
    pub fn extra_value<'a>(row: &'a ResultRow, key: &str) -> Option<&'a str> {
        row.extra.split(';').find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
    }
}

/// Decay of the round-2 failure rate with the committee size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LearningRateEstimate {
    /// `P(X > 0 | S = 1)`.
    pub alpha1: f64,
    /// `P(X > 0 | S = 0)`.
    pub alpha0: f64,
    /// KL divergence of Bernoulli(alpha1) from Bernoulli(alpha0).
    pub kl_divergence: f64,
    /// Least-squares slope of `ln(failure rate)` against `n`.
    pub fitted_slope: Option<f64>,
    /// Points with at least [`MIN_FIT_FAILURES`] failures used in the fit.
    pub fit_points: usize,
    /// When some `n` saw no failures: the slope from the last point with
    /// failures down to the rule-of-three rate `3 / trials`. The true slope
    /// is below it with roughly 95% confidence.
    pub slope_bound: Option<f64>,
}

/// KL divergence `D(Bern(a1) || Bern(a0))`.
pub fn bernoulli_kl(a1: f64, a0: f64) -> f64 {
    let term = |p: f64, q: f64| if p == 0.0 { 0.0 } else { p * (p / q).ln() };
    term(a1, a0) + term(1.0 - a1, 1.0 - a0)
}

impl LearningRateEstimate {
    pub fn for_model(model: &SignalModel) -> Self {
        let alpha1 = model.first_round_yes_rate(WorldState::One);
        let alpha0 = model.first_round_yes_rate(WorldState::Zero);
        LearningRateEstimate {
            alpha1,
            alpha0,
            kl_divergence: bernoulli_kl(alpha1, alpha0),
            fitted_slope: None,
            fit_points: 0,
            slope_bound: None,
        }
    }

    /// Fills in the slope fields from `(n, failures)` pairs over `trials` each.
    pub fn fit(mut self, points: &[(usize, u64)], trials: usize) -> Self {
        let fit: Vec<(f64, f64)> = points
            .iter()
            .filter(|(_, f)| *f >= MIN_FIT_FAILURES)
            .map(|&(n, f)| (n as f64, (f as f64 / trials as f64).ln()))
            .collect();
        self.fit_points = fit.len();
        if fit.len() >= 2 {
            let k = fit.len() as f64;
            let mx = fit.iter().map(|p| p.0).sum::<f64>() / k;
            let my = fit.iter().map(|p| p.1).sum::<f64>() / k;
            let sxy: f64 = fit.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
            let sxx: f64 = fit.iter().map(|(x, _)| (x - mx).powi(2)).sum();
            self.fitted_slope = Some(sxy / sxx);
        }
        let last_seen = points.iter().filter(|(_, f)| *f > 0).max_by_key(|(n, _)| *n);
        let first_clean = points.iter().filter(|(_, f)| *f == 0).min_by_key(|(n, _)| *n);
        if let (Some(&(na, fa)), Some(&(nb, _))) = (last_seen, first_clean) {
            if nb > na {
                let pa = fa as f64 / trials as f64;
                self.slope_bound = Some(((3.0 / trials as f64).ln() - pa.ln()) / (nb - na) as f64);
            }
        }
        self
    }
}

/// Table plus kind-specific summary.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub table: ResultTable,
    pub learning_rate: Option<LearningRateEstimate>,
    /// Trials that hit the round cap without certified consensus.
    pub uncertified: u64,
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    experiment: Option<ExperimentKind>,
    model: String,
    agents: &'a [usize],
    trials: usize,
    max_rounds: usize,
    seed: u64,
}

#[derive(Serialize)]
struct Summary<'a> {
    run_id: String,
    config: ConfigEcho<'a>,
    rows: usize,
    uncertified: u64,
    learning_rate: Option<&'a LearningRateEstimate>,
}

/// Short hex digest of the canonical config, in the style of a git
/// abbreviated object id.
pub fn run_id(config: &ExperimentConfig) -> String {
    let digest = Sha256::digest(config.canonical().as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// The `summary.json` document.
pub fn summary_json(config: &ExperimentConfig, output: &ExperimentOutput) -> String {
    let summary = Summary {
        run_id: run_id(config),
        config: ConfigEcho {
            experiment: config.kind,
            model: ModelSpec(&config.model).to_string(),
            agents: &config.agents,
            trials: config.trials,
            max_rounds: config.max_rounds,
            seed: config.seed,
        },
        rows: output.table.rows.len(),
        uncertified: output.uncertified,
        learning_rate: output.learning_rate.as_ref(),
    };
    let mut s = serde_json::to_string_pretty(&summary).expect("summary serializes");
    s.push('\n');
    s
}

struct Runner {
    pool: rayon::ThreadPool,
}

impl Runner {
    fn new(workers: Option<usize>) -> Result<Self, HarnessError> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(w) = workers {
            builder = builder.num_threads(w);
        }
        let pool = builder.build().map_err(|e| HarnessError::Pool(e.to_string()))?;
        Ok(Runner { pool })
    }

    /// Per-trial values in trial order.
    fn collect<T, F>(&self, seed: u64, trials: usize, f: F) -> Result<Vec<T>, HarnessError>
    where
        T: Send,
        F: Fn(&mut ChaCha8Rng) -> Result<T, EngineError> + Sync,
    {
        let out = self.pool.install(|| {
            (0..trials as u64)
                .into_par_iter()
                .map(|k| f(&mut ChaCha8Rng::seed_from_u64(derive_trial_seed(seed, k))))
                .collect::<Result<Vec<T>, EngineError>>()
        })?;
        Ok(out)
    }

    /// Sums `width` integer counters over all trials.
    fn tally<F>(&self, seed: u64, trials: usize, width: usize, f: F) -> Result<Vec<u64>, HarnessError>
    where
        F: Fn(&mut ChaCha8Rng, &mut [u64]) -> Result<(), EngineError> + Sync,
    {
        let out = self.pool.install(|| {
            (0..trials as u64)
                .into_par_iter()
                .try_fold(
                    || vec![0u64; width],
                    |mut acc, k| {
                        f(&mut ChaCha8Rng::seed_from_u64(derive_trial_seed(seed, k)), &mut acc)?;
                        Ok::<_, EngineError>(acc)
                    },
                )
                .try_reduce(
                    || vec![0u64; width],
                    |mut a, b| {
                        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                        Ok(a)
                    },
                )
        })?;
        Ok(out)
    }
}

fn check(config: &ExperimentConfig) -> Result<Runner, HarnessError> {
    config.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    Runner::new(config.workers)
}

/// Runs the experiment named by `config.kind`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let kind = config.kind.ok_or_else(|| HarnessError::Config("missing `experiment` key".into()))?;
    match kind {
        ExperimentKind::Consensus => run_consensus(config),
        ExperimentKind::RoundAccuracy => Ok(plain(run_round_accuracy(config)?)),
        ExperimentKind::LearningCurve => {
            let (table, estimate) = run_learning_curve(config)?;
            Ok(ExperimentOutput { table, learning_rate: Some(estimate), uncertified: 0 })
        }
        ExperimentKind::MajorityBaseline => Ok(plain(run_majority_baseline(config)?)),
    }
}

fn plain(table: ResultTable) -> ExperimentOutput {
    ExperimentOutput { table, learning_rate: None, uncertified: 0 }
}

#[derive(Clone, Copy)]
struct ConsensusTrial {
    convergence: Option<usize>,
    first_unanimous: Option<usize>,
    width_certified: bool,
    correct: bool,
}

fn nearest_rank(sorted: &[usize], q: f64) -> usize {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Per `n`: fraction of runs reaching certified consensus within
/// `max_rounds`, with the distribution of the convergence round `t_u`.
///
/// The `extra` column carries `tu_mean`, `tu_p50`, `tu_p90`, `tu_p99`,
/// `tu_max` (over certified runs), `first_unanimous_mean`, `correct` (share
/// of all runs ending in a correct consensus) and `width_certified` (share of
/// runs where the bound-width inequality alone held at some round).
pub fn run_consensus_experiment(config: &ExperimentConfig) -> Result<ResultTable, HarnessError> {
    Ok(run_consensus(config)?.table)
}

fn run_consensus(config: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let runner = check(config)?;
    let kind = ExperimentKind::Consensus;
    let mut table = ResultTable::default();
    let mut uncertified = 0;
    for &n in &config.agents {
        let trials = runner.collect(cell_seed(config.seed, kind, n, 0), config.trials, |rng| {
            let mut sim = Simulation::sample(&config.model, n, rng)?;
            sim.run_until_consensus(config.max_rounds)?;
            let r = sim.result();
            Ok(ConsensusTrial {
                convergence: r.convergence_round,
                first_unanimous: r.first_unanimous_round,
                width_certified: r.first_width_certified_round.is_some(),
                correct: r.correct,
            })
        })?;
        let mut tu: Vec<usize> = trials.iter().filter_map(|t| t.convergence).collect();
        tu.sort_unstable();
        let unanimous: Vec<usize> = trials.iter().filter_map(|t| t.first_unanimous).collect();
        let share = |k: usize| k as f64 / config.trials as f64;
        let correct = trials.iter().filter(|t| t.correct).count();
        let width = trials.iter().filter(|t| t.width_certified).count();
        uncertified += (config.trials - tu.len()) as u64;

        let mut extra = String::new();
        if tu.is_empty() {
            extra.push_str("tu_mean=NA;tu_p50=NA;tu_p90=NA;tu_p99=NA;tu_max=NA");
        } else {
            let mean = tu.iter().sum::<usize>() as f64 / tu.len() as f64;
            let _ = write!(
                extra,
                "tu_mean={mean:.4};tu_p50={};tu_p90={};tu_p99={};tu_max={}",
                nearest_rank(&tu, 0.5),
                nearest_rank(&tu, 0.9),
                nearest_rank(&tu, 0.99),
                tu[tu.len() - 1]
            );
        }
        if !unanimous.is_empty() {
            let mean = unanimous.iter().sum::<usize>() as f64 / unanimous.len() as f64;
            let _ = write!(extra, ";first_unanimous_mean={mean:.4}");
        }
        let _ = write!(extra, ";correct={};width_certified={}", share(correct), share(width));
        table.rows.push(ResultRow::proportion(kind, n, config.max_rounds, tu.len() as u64, config.trials, extra));
    }
    Ok(ExperimentOutput { table, learning_rate: None, uncertified })
}

/// Per `(n, t)` for `t = 1..=max_rounds`: share of runs where agent 0 votes
/// for the true state in round `t`. The `extra` column adds the same share
/// averaged over all agents.
///
/// Once a run has reached certified consensus its votes can no longer
/// change, so the remaining rounds repeat the last vote without being played.
pub fn run_round_accuracy(config: &ExperimentConfig) -> Result<ResultTable, HarnessError> {
    let runner = check(config)?;
    let kind = ExperimentKind::RoundAccuracy;
    let rounds = config.max_rounds;
    let mut table = ResultTable::default();
    for &n in &config.agents {
        // counters: [agent 0 correct at t] then [agents correct at t]
        let counts = runner.tally(cell_seed(config.seed, kind, n, 0), config.trials, 2 * rounds, |rng, acc| {
            let mut sim = Simulation::sample(&config.model, n, rng)?;
            let truth = sim.true_state().as_vote();
            for t in 0..rounds {
                if !sim.history().last().is_some_and(|r| r.unanimous) {
                    sim.run_round()?;
                }
                let votes = &sim.history().last().expect("at least one round").votes;
                acc[t] += (votes[0] == truth) as u64;
                acc[rounds + t] += votes.iter().filter(|&&v| v == truth).count() as u64;
            }
            Ok(())
        })?;
        for t in 0..rounds {
            let all = counts[rounds + t] as f64 / (n * config.trials) as f64;
            table.rows.push(ResultRow::proportion(
                kind,
                n,
                t + 1,
                counts[t],
                config.trials,
                format!("agent=0;all_agents={all}"),
            ));
        }
    }
    Ok(table)
}

/// Per `n`: share of runs in which every agent votes for the true state in
/// round 2, plus the decay estimate of the failure rate. Needs at least four
/// agent counts.
pub fn run_learning_curve(config: &ExperimentConfig) -> Result<(ResultTable, LearningRateEstimate), HarnessError> {
    let runner = check(config)?;
    if config.agents.len() < 4 {
        return Err(HarnessError::Config("learning_curve needs at least four agent counts".into()));
    }
    let kind = ExperimentKind::LearningCurve;
    let estimate = LearningRateEstimate::for_model(&config.model);
    if estimate.kl_divergence <= 0.0 {
        return Err(HarnessError::Config("signals are uninformative: P(X>0) is the same in both states".into()));
    }
    let mut table = ResultTable::default();
    let mut points = Vec::new();
    for &n in &config.agents {
        let counts = runner.tally(cell_seed(config.seed, kind, n, 0), config.trials, 1, |rng, acc| {
            let mut sim = Simulation::sample(&config.model, n, rng)?;
            sim.run_rounds(2)?;
            let truth = sim.true_state().as_vote();
            acc[0] += sim.history()[1].votes.iter().all(|&v| v == truth) as u64;
            Ok(())
        })?;
        let failures = config.trials as u64 - counts[0];
        points.push((n, failures));
        table.rows.push(ResultRow::proportion(kind, n, 2, counts[0], config.trials, format!("failures={failures}")));
    }
    Ok((table, estimate.fit(&points, config.trials)))
}

/// Per odd `n` and per state of the world: share of runs where the
/// one-round majority is correct (round 1, `rule=majority`) and share where
/// every round-2 vote is correct (round 2, `rule=consensus`), on the same
/// trials.
pub fn run_majority_baseline(config: &ExperimentConfig) -> Result<ResultTable, HarnessError> {
    let runner = check(config)?;
    if let Some(n) = config.agents.iter().find(|&&n| n % 2 == 0) {
        return Err(HarnessError::Config(format!("majority_baseline needs odd agent counts, got {n}")));
    }
    let kind = ExperimentKind::MajorityBaseline;
    let mut table = ResultTable::default();
    for &n in &config.agents {
        for state in WorldState::BOTH {
            let counts =
                runner.tally(cell_seed(config.seed, kind, n, state.as_u8() as u64), config.trials, 2, |rng, acc| {
                    let mut sim = Simulation::sample_given(&config.model, state, n, rng)?;
                    sim.run_rounds(2)?;
                    let truth = state.as_vote();
                    let yes = sim.history()[0].votes.iter().filter(|&&v| v).count();
                    acc[0] += ((2 * yes > n) == truth) as u64;
                    acc[1] += sim.history()[1].votes.iter().all(|&v| v == truth) as u64;
                    Ok(())
                })?;
            table.rows.push(ResultRow::proportion(
                kind,
                n,
                1,
                counts[0],
                config.trials,
                format!("state={state};rule=majority"),
            ));
            table.rows.push(ResultRow::proportion(
                kind,
                n,
                2,
                counts[1],
                config.trials,
                format!("state={state};rule=consensus"),
            ));
        }
    }
    Ok(table)
}
