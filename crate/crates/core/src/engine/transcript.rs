//! Line-oriented run transcripts.
//!
//! ```text
//! n=3 state=1 llrs=1.25,-0.5,3.75
//! t=1 votes=101 unanimous=0 certified=0
//! t=2 votes=111 unanimous=1 certified=1
//! ```
//!
//! Character `i` of `votes` is agent `i`'s vote. LLRs are written with the
//! shortest representation that parses back to the same `f64`.

use super::{EngineError, PublicBounds, RoundRecord, Simulation, SimulationResult};
use crate::signal_model::{SignalModel, WorldState};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TranscriptError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("round {round}: recorded {field} does not match the replay")]
    Mismatch { round: usize, field: &'static str },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// One `t=` line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptRound {
    pub round: usize,
    pub votes: Vec<bool>,
    pub unanimous: bool,
    pub certified: bool,
}

impl From<&RoundRecord> for TranscriptRound {
    fn from(r: &RoundRecord) -> Self {
        TranscriptRound { round: r.round, votes: r.votes.clone(), unanimous: r.unanimous, certified: r.certified }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub state: WorldState,
    pub llrs: Vec<f64>,
    pub rounds: Vec<TranscriptRound>,
}

impl Transcript {
    pub fn from_result(result: &SimulationResult) -> Self {
        Transcript {
            state: result.true_state,
            llrs: result.private_llrs.clone(),
            rounds: result.rounds.iter().map(TranscriptRound::from).collect(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.llrs.len()
    }

    /// Folds the recorded votes into fresh public bounds. Fails if the votes
    /// could not have been produced by any signal vector.
    pub fn public_bounds(&self, model: &SignalModel) -> Result<PublicBounds, EngineError> {
        let mut bounds = PublicBounds::new(self.n_agents())?;
        for round in &self.rounds {
            bounds.update(model, &round.votes)?;
        }
        Ok(bounds)
    }

    /// Re-runs the engine from the recorded LLRs and checks every round.
    pub fn replay(&self, model: &SignalModel) -> Result<(), TranscriptError> {
        let mut sim = Simulation::new(model, self.state, self.llrs.clone())?;
        for recorded in &self.rounds {
            let r = sim.run_round()?;
            if r.round != recorded.round {
                return Err(TranscriptError::Mismatch { round: recorded.round, field: "round number" });
            }
            if r.votes != recorded.votes {
                return Err(TranscriptError::Mismatch { round: r.round, field: "votes" });
            }
            if r.unanimous != recorded.unanimous {
                return Err(TranscriptError::Mismatch { round: r.round, field: "unanimous" });
            }
            if r.certified != recorded.certified {
                return Err(TranscriptError::Mismatch { round: r.round, field: "certified" });
            }
        }
        Ok(())
    }
}

fn flag(b: bool) -> u8 {
    b as u8
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let llrs: Vec<String> = self.llrs.iter().map(|x| x.to_string()).collect();
        writeln!(f, "n={} state={} llrs={}", self.llrs.len(), self.state, llrs.join(","))?;
        for r in &self.rounds {
            let bits: String = r.votes.iter().map(|&v| if v { '1' } else { '0' }).collect();
            writeln!(
                f,
                "t={} votes={} unanimous={} certified={}",
                r.round,
                bits,
                flag(r.unanimous),
                flag(r.certified)
            )?;
        }
        Ok(())
    }
}

fn fields<'a>(line: &'a str, lineno: usize, keys: &[&str]) -> Result<Vec<&'a str>, TranscriptError> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != keys.len() {
        return Err(TranscriptError::Syntax {
            line: lineno,
            message: format!("expected {} fields, found {}", keys.len(), parts.len()),
        });
    }
    parts
        .iter()
        .zip(keys)
        .map(|(part, key)| {
            part.strip_prefix(key).and_then(|rest| rest.strip_prefix('=')).ok_or_else(|| TranscriptError::Syntax {
                line: lineno,
                message: format!("expected `{key}=`, found `{part}`"),
            })
        })
        .collect()
}

fn parse_flag(value: &str, lineno: usize) -> Result<bool, TranscriptError> {
    match value {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(TranscriptError::Syntax { line: lineno, message: format!("expected 0 or 1, found `{value}`") }),
    }
}

fn syntax(line: usize, message: impl Into<String>) -> TranscriptError {
    TranscriptError::Syntax { line, message: message.into() }
}

impl FromStr for Transcript {
    type Err = TranscriptError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
        let (lineno, header) = lines.next().ok_or_else(|| syntax(1, "empty transcript"))?;
        let head = fields(header, lineno, &["n", "state", "llrs"])?;
        let n: usize = head[0].parse().map_err(|_| syntax(lineno, format!("bad agent count `{}`", head[0])))?;
        let state = WorldState::from_bit(parse_flag(head[1], lineno)?);
        let llrs = head[2]
            .split(',')
            .map(|x| x.parse::<f64>().map_err(|_| syntax(lineno, format!("bad llr `{x}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        if llrs.len() != n {
            return Err(syntax(lineno, format!("n={n} but {} llrs given", llrs.len())));
        }
        let mut rounds = Vec::new();
        for (lineno, line) in lines {
            let f = fields(line, lineno, &["t", "votes", "unanimous", "certified"])?;
            let round: usize = f[0].parse().map_err(|_| syntax(lineno, format!("bad round `{}`", f[0])))?;
            if round != rounds.len() + 1 {
                return Err(syntax(lineno, format!("expected round {}, found {round}", rounds.len() + 1)));
            }
            let votes = f[1]
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(syntax(lineno, format!("bad vote character `{c}`"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            if votes.len() != n {
                return Err(syntax(lineno, format!("expected {n} votes, found {}", votes.len())));
            }
            rounds.push(TranscriptRound {
                round,
                votes,
                unanimous: parse_flag(f[2], lineno)?,
                certified: parse_flag(f[3], lineno)?,
            });
        }
        Ok(Transcript { state, llrs, rounds })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (SignalModel, Transcript) {
        let model = SignalModel::hiring_gaussian();
        let mut sim = Simulation::new(&model, WorldState::One, vec![3.0, -0.5, 0.25]).unwrap();
        sim.run_until_consensus(50).unwrap();
        let t = sim.result().transcript();
        (model, t)
    }

    #[test]
    fn exact_text_format() {
        let model = SignalModel::hiring_gaussian();
        let mut sim = Simulation::new(&model, WorldState::Zero, vec![-1.5, 0.125]).unwrap();
        sim.run_round().unwrap();
        let text = sim.result().transcript().to_string();
        assert_eq!(text, "n=2 state=0 llrs=-1.5,0.125\nt=1 votes=01 unanimous=0 certified=0\n");
    }

    #[test]
    fn parse_and_replay() {
        let (model, t) = sample();
        let parsed: Transcript = t.to_string().parse().unwrap();
        assert_eq!(parsed, t);
        parsed.replay(&model).unwrap();
        assert!(parsed.public_bounds(&model).is_ok());
    }

    #[test]
    fn tampered_votes_are_detected() {
        let (model, t) = sample();
        let text = t.to_string().replacen("t=1 votes=101", "t=1 votes=100", 1);
        let parsed: Transcript = text.parse().unwrap();
        assert!(matches!(parsed.replay(&model), Err(TranscriptError::Mismatch { round: 1, field: "votes" })));
    }

    #[test]
    fn impossible_history_is_rejected() {
        let model = SignalModel::hiring_gaussian();
        let text = "n=1 state=1 llrs=0.5\nt=1 votes=1 unanimous=1 certified=1\nt=2 votes=0 unanimous=1 certified=1\n";
        let t: Transcript = text.parse().unwrap();
        assert!(matches!(t.public_bounds(&model), Err(EngineError::InconsistentHistory { .. })));
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = "n=2 state=1 llrs=0.5\n".parse::<Transcript>().unwrap_err();
        assert!(matches!(err, TranscriptError::Syntax { line: 1, .. }));
        let err = "n=1 state=1 llrs=0.5\nt=1 votes=2 unanimous=1 certified=1\n".parse::<Transcript>().unwrap_err();
        assert!(matches!(err, TranscriptError::Syntax { line: 2, .. }));
        let err = "n=1 state=1 llrs=0.5\nt=2 votes=1 unanimous=1 certified=1\n".parse::<Transcript>().unwrap_err();
        assert!(matches!(err, TranscriptError::Syntax { line: 2, .. }));
    }
}
