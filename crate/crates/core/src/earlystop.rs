//! Action-set stability monitoring for stopping the search early.

use std::collections::VecDeque;
use std::io::Write;

use crate::archspace::ActionVector;
use crate::controller::ControllerPolicy;
use crate::error::{Error, Result};

/// Defaults for the window length and the per-site frequency threshold.
pub const DEFAULT_WINDOW: usize = 20;
pub const DEFAULT_P_STOP: f64 = 0.9;

/// One round's monitor state, as exported to `actions.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionRow {
    pub round: usize,
    /// Window frequency of action 1 at each site.
    pub p_one: Vec<f64>,
    pub greedy: ActionVector,
    pub stable: bool,
}

/// Sliding window of sampled action vectors plus the greedy-vector streak.
#[derive(Clone, Debug)]
pub struct ActionHistory {
    window: usize,
    p_stop: f64,
    candidates: Vec<usize>,
    buffer: VecDeque<ActionVector>,
    greedy: Option<ActionVector>,
    streak: usize,
    counts: Vec<Vec<u64>>,
    rounds: usize,
    rows: Vec<ActionRow>,
}

impl ActionHistory {
    pub fn new(candidates: Vec<usize>, window: usize, p_stop: f64) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config {
                key: "window".into(),
                message: "must be at least 1".into(),
            });
        }
        if !(p_stop > 0.5 && p_stop <= 1.0) {
            return Err(Error::Config {
                key: "p_stop".into(),
                message: format!("{p_stop} is outside (0.5, 1]"),
            });
        }
        Ok(Self {
            window,
            p_stop,
            counts: candidates.iter().map(|&n| vec![0; n]).collect(),
            candidates,
            buffer: VecDeque::with_capacity(window),
            greedy: None,
            streak: 0,
            rounds: 0,
            rows: Vec::new(),
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn p_stop(&self) -> f64 {
        self.p_stop
    }

    /// Rounds recorded so far.
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Consecutive rounds, up to now, with the current greedy vector.
    pub fn greedy_streak(&self) -> usize {
        self.streak
    }

    pub fn rows(&self) -> &[ActionRow] {
        &self.rows
    }

    fn check(&self, a: &ActionVector) -> Result<()> {
        if a.len() != self.candidates.len() {
            return Err(Error::Action(format!(
                "expected {} actions, got {}",
                self.candidates.len(),
                a.len()
            )));
        }
        if let Some((i, (&v, &n))) = a.0.iter().zip(&self.candidates).enumerate().find(|(_, (&v, &n))| v >= n) {
            return Err(Error::Action(format!("action {v} at site {i} out of range for {n} candidates")));
        }
        Ok(())
    }

    /// Adds one round and returns its exported row.
    pub fn record(&mut self, sampled: &ActionVector, greedy: &ActionVector) -> Result<&ActionRow> {
        self.check(sampled)?;
        self.check(greedy)?;
        if self.buffer.len() == self.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back(sampled.clone());
        for (c, &a) in self.counts.iter_mut().zip(&sampled.0) {
            c[a] += 1;
        }
        if self.greedy.as_ref() == Some(greedy) {
            self.streak += 1;
        } else {
            self.greedy = Some(greedy.clone());
            self.streak = 1;
        }
        self.rounds += 1;
        let row = ActionRow {
            round: self.rounds,
            p_one: self.window_frequencies().iter().map(|f| f.get(1).copied().unwrap_or(0.0)).collect(),
            greedy: greedy.clone(),
            stable: self.is_stable(),
        };
        self.rows.push(row);
        Ok(self.rows.last().unwrap())
    }

    /// Per site, the fraction of buffered samples choosing each candidate.
    pub fn window_frequencies(&self) -> Vec<Vec<f64>> {
        let n = self.buffer.len().max(1) as f64;
        self.candidates
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let mut f = vec![0.0; c];
                for a in &self.buffer {
                    f[a.0[k]] += 1.0;
                }
                f.iter().map(|v| v / n).collect()
            })
            .collect()
    }

    /// Per site, the fraction of all samples so far choosing each candidate.
    pub fn run_frequencies(&self) -> Vec<Vec<f64>> {
        let n = self.rounds.max(1) as f64;
        self.counts.iter().map(|c| c.iter().map(|&v| v as f64 / n).collect()).collect()
    }

    /// Full window, greedy vector unchanged for the last `W` rounds, and at
    /// every site the greedy action holds at least `p_stop` of the window.
    pub fn is_stable(&self) -> bool {
        let Some(greedy) = &self.greedy else {
            return false;
        };
        if self.buffer.len() < self.window || self.streak < self.window {
            return false;
        }
        let freq = self.window_frequencies();
        greedy.0.iter().zip(&freq).all(|(&a, f)| f[a] >= self.p_stop)
    }

    /// Decision with an explicit final vector. Errors unless the history is
    /// stable or `budget` rounds have run.
    pub fn decide(&self, a_star: ActionVector, budget: usize) -> Result<StopDecision> {
        let reason = if self.is_stable() {
            StopReason::Stable
        } else if self.rounds >= budget {
            StopReason::BudgetExhausted
        } else {
            return Err(Error::Invalid(format!(
                "cannot finalize at round {} of {budget}: action set not stable",
                self.rounds
            )));
        };
        Ok(StopDecision {
            stopped: true,
            stop_round: self.rounds,
            a_star,
            reason,
        })
    }

    /// Decision whose final vector is the policy's greedy episode.
    pub fn finalize(&self, policy: &ControllerPolicy, budget: usize) -> Result<StopDecision> {
        self.decide(policy.greedy_episode().actions, budget)
    }

    /// Writes `round,p_1..p_K,greedy,stable`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["round".to_string()];
        header.extend((1..=self.candidates.len()).map(|k| format!("p_a{k}_1")));
        header.extend(["greedy".into(), "stable".into()]);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.round.to_string()];
            rec.extend(r.p_one.iter().map(|p| format!("{p:.4}")));
            rec.push(r.greedy.to_bitstring());
            rec.push(u8::from(r.stable).to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("actions.csv", e))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Stable,
    BudgetExhausted,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Stable => "stable",
            StopReason::BudgetExhausted => "budget_exhausted",
        })
    }
}

impl std::str::FromStr for StopReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stable" => Ok(Self::Stable),
            "budget_exhausted" => Ok(Self::BudgetExhausted),
            other => Err(Error::Invalid(format!("unknown stop reason `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub stopped: bool,
    pub stop_round: usize,
    pub a_star: ActionVector,
    pub reason: StopReason,
}

impl StopDecision {
    /// `1 - stop_round / budget`, or 0 when the budget ran out.
    pub fn search_saving(&self, budget: usize) -> f64 {
        match self.reason {
            StopReason::Stable => search_saving(self.stop_round, budget),
            StopReason::BudgetExhausted => 0.0,
        }
    }
}

/// `1 - stop_round / budget`, clamped at 0.
pub fn search_saving(stop_round: usize, budget: usize) -> f64 {
    if budget == 0 || stop_round >= budget {
        0.0
    } else {
        1.0 - stop_round as f64 / budget as f64
    }
}
