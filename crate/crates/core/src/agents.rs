//! Agent interface, baseline policies and the episode runner.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Environment, IllegalReason, Mode, Observation, StepResult};
use crate::grid::{Action, GridCase, Topology};
use crate::scenario::{Scenario, ScenarioAssessment};

/// Failure raised by agent code; the runner substitutes `DoNothing`.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("agent fault: {0}")]
pub struct AgentFault(pub String);

/// One-step lookahead on the forecast of the next injections.
pub trait Simulator {
    fn simulate(&mut self, action: &Action) -> Result<StepResult, EnvError>;
}

impl Simulator for Environment {
    fn simulate(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        Environment::simulate(self, action)
    }
}

struct EnvSimulator<'a> {
    env: &'a Environment,
}

impl Simulator for EnvSimulator<'_> {
    fn simulate(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        self.env.simulate(action)
    }
}

pub trait Agent {
    fn name(&self) -> String;

    /// Called once before the first `act` of an episode.
    fn reset(&mut self, _case: &GridCase) {}

    fn act(&mut self, observation: &Observation, simulator: &mut dyn Simulator) -> Result<Action, AgentFault>;
}

/// Never acts: stays in the reference topology.
#[derive(Debug, Clone, Default)]
pub struct DoNothingAgent;

impl Agent for DoNothingAgent {
    fn name(&self) -> String {
        "dn".into()
    }

    fn act(&mut self, _: &Observation, _: &mut dyn Simulator) -> Result<Action, AgentFault> {
        Ok(Action::DoNothing)
    }
}

/// Moves to a fixed target topology with legal unitary actions, then does
/// nothing.
#[derive(Debug, Clone)]
pub struct ConstantTopologyAgent {
    target: Topology,
    label: String,
    plan: Vec<Action>,
    reached: bool,
    case: Option<Arc<GridCase>>,
}

impl ConstantTopologyAgent {
    pub fn new(target: Topology, label: impl Into<String>) -> Self {
        ConstantTopologyAgent {
            target,
            label: label.into(),
            plan: Vec::new(),
            reached: false,
            case: None,
        }
    }

    pub fn target(&self) -> &Topology {
        &self.target
    }

    fn satisfied(&self, case: &GridCase, topology: &Topology, action: &Action) -> bool {
        match action {
            Action::SwitchLine { line } => {
                let l = case.line_index(*line).expect("planned line");
                topology.line_in_service(l) == self.target.line_in_service(l)
            }
            Action::SetSubstation { substation, .. } => {
                let s = case.substation_index(*substation).expect("planned substation");
                topology.substation(s) == self.target.substation(s)
            }
            Action::DoNothing => true,
        }
    }
}

/// Unitary actions turning `from` into `to`: substations first, then lines,
/// each by ascending id.
pub fn plan_actions(case: &GridCase, from: &Topology, to: &Topology) -> Vec<Action> {
    let subs = to.differing_substations(from).into_iter().map(|s| Action::SetSubstation {
        substation: case.substations()[s].id,
        buses: to.substation(s).to_vec(),
    });
    let lines = to
        .differing_lines(from)
        .into_iter()
        .map(|l| Action::SwitchLine { line: case.lines()[l].id });
    subs.chain(lines).collect()
}

impl Agent for ConstantTopologyAgent {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn reset(&mut self, case: &GridCase) {
        self.plan = plan_actions(case, &Topology::reference(case), &self.target);
        self.reached = self.plan.is_empty();
        self.case = Some(Arc::new(case.clone()));
    }

    fn act(&mut self, obs: &Observation, _: &mut dyn Simulator) -> Result<Action, AgentFault> {
        if self.reached {
            return Ok(Action::DoNothing);
        }
        let case = self.case.clone().ok_or_else(|| AgentFault("agent used before reset".into()))?;
        let case = case.as_ref();
        let pending: Vec<&Action> = self
            .plan
            .iter()
            .filter(|a| !self.satisfied(case, &obs.topology, a))
            .collect();
        if pending.is_empty() {
            self.reached = true;
            return Ok(Action::DoNothing);
        }
        for a in pending {
            let asset = a.asset().expect("plan holds unitary actions");
            if obs.cooldown_of(case, asset) == Some(0) {
                return Ok(a.clone());
            }
        }
        Ok(Action::DoNothing)
    }
}

/// Simulates do-nothing and every legal dictionary action, keeping the
/// first strictly better simulated step score.
#[derive(Debug, Clone)]
pub struct GreedyAgent {
    candidates: Vec<Action>,
    case: Option<Arc<GridCase>>,
}

impl GreedyAgent {
    /// Candidates are tried in asset order (substations before lines, then
    /// by id), keeping the dictionary order within an asset.
    pub fn new(dictionary: Vec<Action>) -> Self {
        let mut candidates: Vec<Action> = dictionary.into_iter().filter(|a| !a.is_do_nothing()).collect();
        candidates.sort_by_key(|a| a.asset());
        GreedyAgent { candidates, case: None }
    }

    pub fn candidates(&self) -> &[Action] {
        &self.candidates
    }
}

impl Agent for GreedyAgent {
    fn name(&self) -> String {
        "greedy".into()
    }

    fn reset(&mut self, case: &GridCase) {
        self.case = Some(Arc::new(case.clone()));
    }

    fn act(&mut self, obs: &Observation, sim: &mut dyn Simulator) -> Result<Action, AgentFault> {
        let case = self.case.clone().ok_or_else(|| AgentFault("agent used before reset".into()))?;
        let fault = |e: EnvError| AgentFault(e.to_string());
        let mut best = Action::DoNothing;
        let mut best_score = sim.simulate(&Action::DoNothing).map_err(fault)?.score;
        for a in &self.candidates {
            let asset = a.asset().expect("unitary candidate");
            if obs.cooldown_of(&case, asset) != Some(0) {
                continue;
            }
            let score = sim.simulate(a).map_err(fault)?.score;
            if score > best_score {
                best_score = score;
                best = a.clone();
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub action: Action,
    pub legal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub illegal_reason: Option<IllegalReason>,
    pub score: f64,
    /// Unitary actions separating the topology from the reference.
    pub action_depth: usize,
    /// Line ids at or above their limit after the step.
    pub overloaded: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tripped: Vec<u32>,
    #[serde(default)]
    pub diverged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub agent: String,
    pub scenario_id: String,
    pub mode: Mode,
    /// Entry 0 is the reset state; entry `t` is the step into timestep `t`.
    pub steps: Vec<StepRecord>,
    pub score: f64,
    #[serde(default)]
    pub game_over_step: Option<usize>,
    #[serde(default)]
    pub budget_exceeded: bool,
    /// Wall-clock seconds spent in agent code, when recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_consumed_s: Option<f64>,
}

impl EpisodeRecord {
    pub fn step_scores(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.score).collect()
    }

    pub fn actions(&self) -> impl Iterator<Item = &Action> {
        self.steps.iter().skip(1).map(|s| &s.action)
    }

    pub fn completed(&self) -> bool {
        self.game_over_step.is_none() && !self.budget_exceeded
    }
}

/// Number of assets in which `topology` differs from `reference`: every
/// bus configuration of a substation is one unitary action away.
pub fn unitary_depth(topology: &Topology, reference: &Topology) -> usize {
    topology.differing_substations(reference).len() + topology.differing_lines(reference).len()
}

/// Drives one episode from reset to horizon or game over.
///
/// Only wall-clock time spent inside `Agent::act` (simulations included) is
/// charged to `budget`. An exhausted budget, or a zero budget, ends the
/// episode with score 0.
pub fn run_episode(
    agent: &mut dyn Agent,
    case: Arc<GridCase>,
    scenario: Arc<Scenario>,
    mode: Mode,
    budget: Option<Duration>,
) -> Result<EpisodeRecord, EnvError> {
    let mut env = Environment::reset(case.clone(), scenario.clone(), mode)?;
    let reference = Topology::reference(&case);
    agent.reset(&case);
    let mut steps = vec![StepRecord {
        t: 0,
        action: Action::DoNothing,
        legal: true,
        illegal_reason: None,
        score: env.initial_score(),
        action_depth: 0,
        overloaded: env.observation().overloaded_lines(&case),
        tripped: Vec::new(),
        diverged: false,
        fault: None,
    }];
    let mut consumed = Duration::ZERO;
    let mut budget_exceeded = budget == Some(Duration::ZERO);
    let mut game_over_step = None;

    while !budget_exceeded && !env.at_horizon() && !env.is_done() {
        let obs = env.observation();
        let started = Instant::now();
        let decision = {
            let mut sim = EnvSimulator { env: &env };
            agent.act(&obs, &mut sim)
        };
        consumed += started.elapsed();
        if budget.is_some_and(|b| consumed > b) {
            budget_exceeded = true;
            break;
        }
        let (action, fault) = match decision {
            Ok(a) => (a, None),
            Err(f) => (Action::DoNothing, Some(f.0)),
        };
        let r = env.step(&action)?;
        let t = r.observation.t;
        steps.push(StepRecord {
            t,
            legal: r.info.illegal.is_none(),
            illegal_reason: r.info.illegal.clone(),
            score: r.score,
            action_depth: unitary_depth(&r.observation.topology, &reference),
            overloaded: r.observation.overloaded_lines(&case),
            tripped: r.info.tripped.clone(),
            diverged: r.info.diverged,
            fault,
            action,
        });
        if r.done {
            game_over_step = Some(t);
        }
    }

    let score = if budget_exceeded {
        0.0
    } else {
        crate::env::score_episode(&steps.iter().map(|s| s.score).collect::<Vec<_>>(), game_over_step.is_some())
    };
    Ok(EpisodeRecord {
        agent: agent.name(),
        scenario_id: scenario.id.clone(),
        mode,
        steps,
        score,
        game_over_step,
        budget_exceeded,
        time_consumed_s: Some(consumed.as_secs_f64()),
    })
}

/// `Σ_k γ^k r[k]` over the rewards following the current step.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    assert!((0.0..=1.0).contains(&gamma), "discount must lie in [0, 1], got {gamma}");
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// Runs the DN baseline (easy and hard) and one constant-topology baseline
/// per target (hard) to label a scenario for selection.
pub fn assess_scenario(
    case: &Arc<GridCase>,
    scenario: &Arc<Scenario>,
    targets: &[Topology],
) -> Result<ScenarioAssessment, EnvError> {
    let easy = run_episode(&mut DoNothingAgent, case.clone(), scenario.clone(), Mode::Easy, None)?;
    let dn_overload_times = easy
        .steps
        .iter()
        .filter(|s| !s.overloaded.is_empty())
        .map(|s| s.t)
        .collect();
    let hard = run_episode(&mut DoNothingAgent, case.clone(), scenario.clone(), Mode::Hard, None)?;
    let mut dn_tau_finishes = Vec::with_capacity(targets.len());
    for (i, target) in targets.iter().enumerate() {
        let mut agent = ConstantTopologyAgent::new(target.clone(), format!("dn-tau-{i}"));
        let r = run_episode(&mut agent, case.clone(), scenario.clone(), Mode::Hard, None)?;
        dn_tau_finishes.push(r.game_over_step.is_none());
    }
    Ok(ScenarioAssessment {
        id: scenario.id.clone(),
        horizon: scenario.horizon(),
        start_weekday: scenario.start_weekday,
        dn_overload_times,
        dn_finishes: hard.game_over_step.is_none(),
        dn_tau_finishes,
    })
}
