//! Leaderboard and analysis tables built from episode and oracle records.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::agents::EpisodeRecord;
use crate::oracle::{normalized_score, OracleRecord};
use crate::scenario::{RESOLUTION_MINUTES, STEPS_PER_DAY};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub scenario: String,
    pub agent: String,
    pub score: f64,
    pub dn_score: f64,
    pub oracle_score: f64,
    /// `100 × (agent − dn) / (oracle − dn)`; absent when oracle = dn.
    pub normalized: Option<f64>,
    pub game_over_step: Option<usize>,
    pub time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreTotal {
    pub agent: String,
    pub score: f64,
    pub dn_score: f64,
    pub oracle_score: f64,
    /// Mean normalized score over the scenarios where it is defined.
    pub normalized: Option<f64>,
    pub game_overs: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreReport {
    pub rows: Vec<ScoreRow>,
    pub totals: Vec<ScoreTotal>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("no {kind} record for scenario `{scenario}`")]
    MissingReference { kind: &'static str, scenario: String },
    #[error("cannot write report: {0}")]
    Write(String),
}

impl From<csv::Error> for ReportError {
    fn from(e: csv::Error) -> Self {
        ReportError::Write(e.to_string())
    }
}

impl From<std::io::Error> for ReportError {
    fn from(e: std::io::Error) -> Self {
        ReportError::Write(e.to_string())
    }
}

/// Rows in the order of `records`; every scenario needs a DN and an oracle
/// reference.
pub fn score_report(
    records: &[EpisodeRecord],
    dn: &[EpisodeRecord],
    oracle: &[OracleRecord],
) -> Result<ScoreReport, ReportError> {
    let dn: BTreeMap<&str, f64> = dn.iter().map(|r| (r.scenario_id.as_str(), r.score)).collect();
    let oracle: BTreeMap<&str, f64> = oracle.iter().map(|r| (r.scenario_id.as_str(), r.score)).collect();
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let id = r.scenario_id.as_str();
        let dn_score = *dn.get(id).ok_or_else(|| ReportError::MissingReference {
            kind: "do-nothing",
            scenario: id.to_string(),
        })?;
        let oracle_score = *oracle.get(id).ok_or_else(|| ReportError::MissingReference {
            kind: "oracle",
            scenario: id.to_string(),
        })?;
        rows.push(ScoreRow {
            scenario: id.to_string(),
            agent: r.agent.clone(),
            score: r.score,
            dn_score,
            oracle_score,
            normalized: normalized_score(r.score, dn_score, oracle_score).ok().map(|v| 100.0 * v),
            game_over_step: r.game_over_step,
            time_s: r.time_consumed_s,
        });
    }
    let mut by_agent: BTreeMap<&str, Vec<&ScoreRow>> = BTreeMap::new();
    for row in &rows {
        by_agent.entry(row.agent.as_str()).or_default().push(row);
    }
    let totals = by_agent
        .into_iter()
        .map(|(agent, rs)| {
            let defined: Vec<f64> = rs.iter().filter_map(|r| r.normalized).collect();
            ScoreTotal {
                agent: agent.to_string(),
                score: rs.iter().map(|r| r.score).sum(),
                dn_score: rs.iter().map(|r| r.dn_score).sum(),
                oracle_score: rs.iter().map(|r| r.oracle_score).sum(),
                normalized: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
                game_overs: rs.iter().filter(|r| r.game_over_step.is_some()).count(),
            }
        })
        .collect();
    Ok(ScoreReport { rows, totals })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl ScoreReport {
    /// CSV with one row per (scenario, agent) followed by one `total` row
    /// per agent.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ReportError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record([
            "scenario",
            "agent",
            "score",
            "dn_score",
            "oracle_score",
            "normalized",
            "game_over_step",
            "time_s",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.scenario.clone(),
                r.agent.clone(),
                r.score.to_string(),
                r.dn_score.to_string(),
                r.oracle_score.to_string(),
                opt(r.normalized),
                opt(r.game_over_step),
                opt(r.time_s),
            ])?;
        }
        for t in &self.totals {
            w.write_record([
                "total".to_string(),
                t.agent.clone(),
                t.score.to_string(),
                t.dn_score.to_string(),
                t.oracle_score.to_string(),
                opt(t.normalized),
                t.game_overs.to_string(),
                String::new(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Overloaded line-timesteps per (day, hour of day).
pub fn overload_histogram<W: Write>(records: &[EpisodeRecord], out: W) -> Result<(), ReportError> {
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for r in records {
        for s in &r.steps {
            let day = s.t / STEPS_PER_DAY;
            let hour = (s.t % STEPS_PER_DAY) * RESOLUTION_MINUTES as usize / 60;
            *counts.entry((day, hour)).or_default() += s.overloaded.len();
        }
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["day", "hour", "overloads"])?;
    for ((day, hour), n) in counts {
        w.write_record([day.to_string(), hour.to_string(), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Legal non-trivial actions per agent and asset.
pub fn action_usage<W: Write>(records: &[EpisodeRecord], out: W) -> Result<(), ReportError> {
    let mut counts: BTreeMap<(String, crate::grid::Asset), usize> = BTreeMap::new();
    for r in records {
        for s in r.steps.iter().skip(1).filter(|s| s.legal && !s.diverged) {
            if let Some(asset) = s.action.asset() {
                *counts.entry((r.agent.clone(), asset)).or_default() += 1;
            }
        }
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["agent", "asset", "actions"])?;
    for ((agent, asset), n) in counts {
        w.write_record([agent, asset.to_string(), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Topology depth at every timestep of every record.
pub fn action_depth_trace<W: Write>(records: &[EpisodeRecord], out: W) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["scenario", "agent", "t", "depth"])?;
    for r in records {
        for s in &r.steps {
            w.write_record([r.scenario_id.clone(), r.agent.clone(), s.t.to_string(), s.action_depth.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
