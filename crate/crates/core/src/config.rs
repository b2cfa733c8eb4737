//! Flat `key = value` experiment files.
//!
//! ```text
//! # learning curve on the continuous interview model
//! experiment = learning_curve
//! model = gaussian mean0=-1 mean1=1 sd=1
//! agents = 5, 10, 20, 40
//! trials = 100000
//! max_rounds = 2
//! seed = 2024
//! out = results/learning
//! ```
//!
//! Discrete models list their atoms as `(label,p0,p1)` groups:
//! `model = discrete atoms=[(favorable,0.6,0.9),(unfavorable,0.4,0.1)]`.

use crate::signal_model::{Atom, GaussianShift, SignalModel};
use serde::Serialize;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use thiserror::Error;

pub const DEFAULT_MAX_ROUNDS: usize = 200;
pub const DEFAULT_TRIALS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
}

fn at(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Line { line, message: message.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Consensus,
    RoundAccuracy,
    LearningCurve,
    MajorityBaseline,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Consensus => "consensus",
            ExperimentKind::RoundAccuracy => "round_accuracy",
            ExperimentKind::LearningCurve => "learning_curve",
            ExperimentKind::MajorityBaseline => "majority_baseline",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "consensus" => Ok(ExperimentKind::Consensus),
            "round_accuracy" => Ok(ExperimentKind::RoundAccuracy),
            "learning_curve" => Ok(ExperimentKind::LearningCurve),
            "majority_baseline" => Ok(ExperimentKind::MajorityBaseline),
            other => Err(format!(
                "unknown experiment `{other}` (expected consensus, round_accuracy, learning_curve or majority_baseline)"
            )),
        }
    }
}

/// A parsed experiment file.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Absent for files only used with `simulate`.
    pub kind: Option<ExperimentKind>,
    pub model: SignalModel,
    pub agents: Vec<usize>,
    pub trials: usize,
    pub max_rounds: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    /// A config with defaults for everything but the model, agent counts and seed.
    pub fn new(model: SignalModel, agents: Vec<usize>, seed: u64) -> Self {
        ExperimentConfig {
            kind: None,
            model,
            agents,
            trials: DEFAULT_TRIALS,
            max_rounds: DEFAULT_MAX_ROUNDS,
            seed,
            out: None,
            workers: None,
        }
    }

    pub fn with_kind(mut self, kind: ExperimentKind) -> Self {
        self.kind = Some(kind);
        self
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_max_rounds(mut self, max_rounds: usize) -> Self {
        self.max_rounds = max_rounds;
        self
    }

    /// Checks the invariants that do not depend on the experiment kind.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.agents.is_empty() {
            return Err(ConfigError::Invalid("`agents` lists no agent counts".into()));
        }
        if self.agents.contains(&0) {
            return Err(ConfigError::Invalid("agent counts must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(ConfigError::Invalid("`trials` must be at least 1".into()));
        }
        if self.max_rounds == 0 {
            return Err(ConfigError::Invalid("`max_rounds` must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(ConfigError::Invalid("`workers` must be at least 1".into()));
        }
        let report = self.model.validate_model();
        if !report.is_valid() {
            return Err(ConfigError::Invalid(format!("invalid model: {}", report.violations.join("; "))));
        }
        Ok(())
    }

    /// Everything that determines the experiment's output, in file syntax.
    /// Output directory and worker count are left out on purpose: neither
    /// changes the results.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        if let Some(kind) = self.kind {
            s.push_str(&format!("experiment = {kind}\n"));
        }
        let agents: Vec<String> = self.agents.iter().map(|n| n.to_string()).collect();
        s.push_str(&format!("model = {}\n", ModelSpec(&self.model)));
        s.push_str(&format!("agents = {}\n", agents.join(", ")));
        s.push_str(&format!("trials = {}\n", self.trials));
        s.push_str(&format!("max_rounds = {}\n", self.max_rounds));
        s.push_str(&format!("seed = {}\n", self.seed));
        s
    }
}

/// Formats a model in config-file syntax.
pub struct ModelSpec<'a>(pub &'a SignalModel);

impl fmt::Display for ModelSpec<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            SignalModel::Gaussian(g) => write!(f, "gaussian mean0={} mean1={} sd={}", g.mean0, g.mean1, g.sd),
            SignalModel::Discrete(t) => {
                let atoms: Vec<String> = t.atoms().iter().map(|a| format!("({},{},{})", a.label, a.p0, a.p1)).collect();
                write!(f, "discrete atoms=[{}]", atoms.join(","))
            }
        }
    }
}

/// Parses the right-hand side of a `model =` line and validates the model.
pub fn parse_model(spec: &str) -> Result<SignalModel, String> {
    let model = parse_model_unchecked(spec)?;
    let report = model.validate_model();
    if report.is_valid() {
        Ok(model)
    } else {
        Err(format!("invalid model: {}", report.violations.join("; ")))
    }
}

/// Syntax-only parse of a model spec; the result may violate the model
/// invariants.
pub fn parse_model_unchecked(spec: &str) -> Result<SignalModel, String> {
    let spec = spec.trim();
    let (family, rest) = spec.split_once(char::is_whitespace).unwrap_or((spec, ""));
    match family {
        "gaussian" => {
            let (mut mean0, mut mean1, mut sd) = (None, None, None);
            for part in rest.split_whitespace() {
                let (key, value) = part.split_once('=').ok_or_else(|| format!("expected key=value, found `{part}`"))?;
                let value: f64 = value.parse().map_err(|_| format!("`{key}` is not a number: `{value}`"))?;
                match key {
                    "mean0" => mean0 = Some(value),
                    "mean1" => mean1 = Some(value),
                    "sd" => sd = Some(value),
                    other => return Err(format!("unknown gaussian parameter `{other}`")),
                }
            }
            let need = |v: Option<f64>, name: &str| v.ok_or_else(|| format!("gaussian model needs `{name}`"));
            Ok(SignalModel::Gaussian(GaussianShift {
                mean0: need(mean0, "mean0")?,
                mean1: need(mean1, "mean1")?,
                sd: need(sd, "sd")?,
            }))
        }
        "discrete" => {
            let body = rest
                .trim()
                .strip_prefix("atoms=")
                .and_then(|b| b.trim().strip_prefix('['))
                .and_then(|b| b.trim_end().strip_suffix(']'))
                .ok_or("discrete model needs `atoms=[(label,p0,p1),...]`")?;
            Ok(SignalModel::discrete_unchecked(parse_atoms(body)?))
        }
        "" => Err("empty model".into()),
        other => Err(format!("unknown model family `{other}` (expected gaussian or discrete)")),
    }
}

fn parse_atoms(body: &str) -> Result<Vec<Atom>, String> {
    let mut atoms = Vec::new();
    let mut rest = body.trim();
    while !rest.is_empty() {
        let open = rest.strip_prefix('(').ok_or_else(|| format!("expected `(` at `{rest}`"))?;
        let close = open.find(')').ok_or("unclosed atom group")?;
        let fields: Vec<&str> = open[..close].split(',').map(str::trim).collect();
        let [label, p0, p1] = fields[..] else {
            return Err(format!("atom `({})` needs label,p0,p1", &open[..close]));
        };
        let prob = |v: &str| v.parse::<f64>().map_err(|_| format!("atom `{label}`: `{v}` is not a number"));
        atoms.push(Atom::new(label, prob(p0)?, prob(p1)?));
        rest = open[close + 1..].trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
        }
    }
    Ok(atoms)
}

/// Finds the `model` line of a config file and parses it without
/// validation. Other keys are ignored.
pub fn model_from_file(text: &str) -> Result<SignalModel, ConfigError> {
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if let Some((key, value)) = content.split_once('=') {
            if key.trim() == "model" {
                return parse_model_unchecked(value).map_err(|e| at(i + 1, e));
            }
        }
    }
    Err(ConfigError::Missing("model"))
}

impl FromStr for ExperimentConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut kind = None;
        let mut model = None;
        let mut agents = None;
        let mut trials = None;
        let mut max_rounds = None;
        let mut seed = None;
        let mut out = None;
        let mut workers = None;
        let mut seen: Vec<(String, usize)> = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| at(line, format!("expected `key = value`, found `{content}`")))?;
            if let Some((_, first)) = seen.iter().find(|(k, _)| k == key) {
                return Err(at(line, format!("duplicate key `{key}` (first set on line {first})")));
            }
            seen.push((key.to_string(), line));
            let count = |v: &str| {
                v.parse::<usize>().map_err(|_| at(line, format!("`{key}` must be a non-negative integer, found `{v}`")))
            };
            match key {
                "experiment" => kind = Some(value.parse().map_err(|e: String| at(line, e))?),
                "model" => model = Some(parse_model(value).map_err(|e| at(line, e))?),
                "agents" | "n" => {
                    agents = Some(value.split(',').map(|v| count(v.trim())).collect::<Result<Vec<_>, _>>()?)
                }
                "trials" => trials = Some(count(value)?),
                "max_rounds" => max_rounds = Some(count(value)?),
                "seed" => {
                    seed = Some(
                        value.parse::<u64>().map_err(|_| at(line, format!("`seed` must be a u64, found `{value}`")))?,
                    )
                }
                "out" => out = Some(PathBuf::from(value)),
                "workers" => workers = Some(count(value)?),
                other => return Err(at(line, format!("unknown key `{other}`"))),
            }
        }

        let config = ExperimentConfig {
            kind,
            model: model.ok_or(ConfigError::Missing("model"))?,
            agents: agents.ok_or(ConfigError::Missing("agents"))?,
            trials: trials.unwrap_or(DEFAULT_TRIALS),
            max_rounds: max_rounds.unwrap_or(DEFAULT_MAX_ROUNDS),
            seed: seed.ok_or(ConfigError::Missing("seed"))?,
            out,
            workers,
        };
        config.validate()?;
        Ok(config)
    }
}
