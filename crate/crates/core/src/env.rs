//! The episodic topology-control environment.
//!
//! One [`Environment`] is a sequential state machine over a scenario: each
//! step checks legality, applies the action, solves the flows for the next
//! injections, runs protections (hard mode) and scores the resulting state.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{apply_action, expand_topology, Action, Asset, GridCase, Topology, TopologyError};
use crate::power_flow::{DcModel, Injections, PowerFlowError, PowerFlowResult};
use crate::scenario::Scenario;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("scenario does not match case: {0}")]
    ScenarioMismatch(String),
    #[error("power flow diverges at t=0 in the initial topology")]
    SetupDiverged,
    #[error("episode is over (game over)")]
    GameOver,
    #[error("scenario horizon reached at t={0}")]
    HorizonReached(usize),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// No protections and no game over.
    Easy,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleParams {
    /// Consecutive overloaded steps a line survives before protections trip it.
    pub reaction_time: u32,
    /// Steps an asset stays unactionable after being acted on.
    pub cooldown: u32,
    pub max_actions_per_step: u32,
    /// Lines at or above this multiple of their limit trip immediately.
    pub hard_overload_factor: f64,
}

impl Default for RuleParams {
    fn default() -> Self {
        RuleParams {
            reaction_time: 2,
            cooldown: 3,
            max_actions_per_step: 1,
            hard_overload_factor: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub t: usize,
    pub topology: Topology,
    pub overload_streak: Vec<u32>,
    /// Steps remaining before each line may be switched again.
    pub line_cooldown: Vec<u32>,
    pub substation_cooldown: Vec<u32>,
    pub game_over: bool,
    pub mode: Mode,
    pub rules: RuleParams,
}

impl EnvState {
    pub fn initial(case: &GridCase, topology: Topology, mode: Mode, rules: RuleParams) -> Self {
        EnvState {
            t: 0,
            topology,
            overload_streak: vec![0; case.lines().len()],
            line_cooldown: vec![0; case.lines().len()],
            substation_cooldown: vec![0; case.substations().len()],
            game_over: false,
            mode,
            rules,
        }
    }

    /// Remaining cooldown of an asset, `None` when the asset is unknown.
    pub fn cooldown_of(&self, case: &GridCase, asset: Asset) -> Option<u32> {
        match asset {
            Asset::Line(id) => case.line_index(id).map(|i| self.line_cooldown[i]),
            Asset::Substation(id) => case.substation_index(id).map(|i| self.substation_cooldown[i]),
        }
    }

    fn set_cooldown(&mut self, case: &GridCase, asset: Asset) {
        let c = self.rules.cooldown;
        match asset {
            Asset::Line(id) => self.line_cooldown[case.line_index(id).expect("known line")] = c,
            Asset::Substation(id) => {
                self.substation_cooldown[case.substation_index(id).expect("known substation")] = c
            }
        }
    }

    fn tick_cooldowns(&mut self) {
        for c in self.line_cooldown.iter_mut().chain(self.substation_cooldown.iter_mut()) {
            *c = c.saturating_sub(1);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub t: usize,
    pub injections: Injections,
    /// Forecast of the next injections; absent on the last timestep.
    pub forecast: Option<Injections>,
    pub topology: Topology,
    pub currents: Vec<f64>,
    /// `max(0, 1 − i/imax)` per line, 0 for lines out of service.
    pub margins: Vec<f64>,
    pub overload_streaks: Vec<u32>,
    pub line_cooldowns: Vec<u32>,
    pub substation_cooldowns: Vec<u32>,
}

impl Observation {
    pub fn cooldown_of(&self, case: &GridCase, asset: Asset) -> Option<u32> {
        match asset {
            Asset::Line(id) => case.line_index(id).map(|i| self.line_cooldowns[i]),
            Asset::Substation(id) => case.substation_index(id).map(|i| self.substation_cooldowns[i]),
        }
    }

    /// Line ids at or above their thermal limit.
    pub fn overloaded_lines(&self, case: &GridCase) -> Vec<u32> {
        case.lines()
            .iter()
            .zip(&self.currents)
            .filter(|(line, &i)| i >= line.imax)
            .map(|(line, _)| line.id)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum IllegalReason {
    Cooldown { asset: Asset, remaining: u32 },
    Malformed { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Legality {
    Legal,
    Illegal(IllegalReason),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub illegal: Option<IllegalReason>,
    pub diverged: bool,
    /// Line ids disconnected this step (protections and cascade).
    pub tripped: Vec<u32>,
    /// Lines tripped by each cascade round.
    pub cascade: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub score: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// `f(x) = 1 − (1 − x)²`.
pub fn margin_score(margin: f64) -> f64 {
    1.0 - (1.0 - margin) * (1.0 - margin)
}

pub fn margin(current: f64, imax: f64) -> f64 {
    (1.0 - current / imax).max(0.0)
}

/// Σ_l f(margin_l); out-of-service lines contribute 0. Zero when the action
/// was illegal or the flow diverged.
pub fn score_step(result: &PowerFlowResult, case: &GridCase, illegal: bool) -> f64 {
    if illegal || result.diverged {
        return 0.0;
    }
    case.lines()
        .iter()
        .enumerate()
        .filter(|&(l, _)| result.line_in_service[l])
        .map(|(l, line)| margin_score(margin(result.currents_a[l], line.imax)))
        .sum()
}

/// Sum of step scores, or 0 when the episode ended in game over.
pub fn score_episode(step_scores: &[f64], game_over: bool) -> f64 {
    if game_over {
        0.0
    } else {
        step_scores.iter().sum()
    }
}

pub fn legality_check(case: &GridCase, state: &EnvState, action: &Action) -> Legality {
    if let Err(e) = action.validate(case) {
        return Legality::Illegal(IllegalReason::Malformed { message: e.to_string() });
    }
    match action.asset() {
        None => Legality::Legal,
        Some(asset) => match state.cooldown_of(case, asset) {
            Some(0) => Legality::Legal,
            Some(remaining) => Legality::Illegal(IllegalReason::Cooldown { asset, remaining }),
            None => unreachable!("validated action"),
        },
    }
}

#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
pub enum CascadeOutcome {
    Stable {
        topology: Topology,
        /// New factorization, `None` when nothing tripped.
        model: Option<DcModel>,
        flows: PowerFlowResult,
        tripped: Vec<usize>,
        rounds: Vec<Vec<u32>>,
    },
    GameOver {
        tripped: Vec<usize>,
        rounds: Vec<Vec<u32>>,
    },
}

/// Fixpoint of instant protection trips: re-solve, disconnect every line at
/// or above `factor × imax`, repeat. Any diverging solve is a game over.
///
/// `flows` may carry an existing solution for `topology`; otherwise the
/// topology is solved first.
pub fn cascade(
    case: &GridCase,
    mut topology: Topology,
    injections: &Injections,
    factor: f64,
    flows: Option<PowerFlowResult>,
) -> Result<CascadeOutcome, EnvError> {
    let mut model = None;
    let mut flows = match flows {
        Some(f) => f,
        None => {
            let m = DcModel::new(case, expand_topology(case, &topology));
            let f = m.solve(injections)?;
            model = Some(m);
            f
        }
    };
    let mut tripped = Vec::new();
    let mut rounds = Vec::new();
    loop {
        if flows.diverged {
            return Ok(CascadeOutcome::GameOver { tripped, rounds });
        }
        let over: Vec<usize> = case
            .lines()
            .iter()
            .enumerate()
            .filter(|&(l, line)| flows.line_in_service[l] && flows.currents_a[l] >= factor * line.imax)
            .map(|(l, _)| l)
            .collect();
        if over.is_empty() {
            return Ok(CascadeOutcome::Stable {
                topology,
                model,
                flows,
                tripped,
                rounds,
            });
        }
        for &l in &over {
            topology.set_line(l, false);
        }
        rounds.push(over.iter().map(|&l| case.lines()[l].id).collect());
        tripped.extend(over);
        let m = DcModel::new(case, expand_topology(case, &topology));
        flows = m.solve(injections)?;
        model = Some(m);
    }
}

struct Transition {
    state: EnvState,
    model: Option<DcModel>,
    flows: PowerFlowResult,
    score: f64,
    info: StepInfo,
}

fn transition(
    case: &GridCase,
    state: &EnvState,
    model: &DcModel,
    action: &Action,
    next: &Injections,
) -> Result<Transition, EnvError> {
    let hard = state.mode == Mode::Hard;
    let mut ns = state.clone();
    ns.t += 1;
    let mut info = StepInfo::default();
    let mut zero = false;

    let effective = match legality_check(case, state, action) {
        Legality::Legal => action.clone(),
        Legality::Illegal(reason) => {
            info.illegal = Some(reason);
            zero = true;
            Action::DoNothing
        }
    };

    let mut new_model = None;
    let mut flows = match effective.asset() {
        None => model.solve(next)?,
        Some(asset) => {
            let topology = apply_action(case, &state.topology, &effective)?;
            let m = DcModel::new(case, expand_topology(case, &topology));
            let f = m.solve(next)?;
            if f.diverged {
                // revert the action, keep the previous topology
                info.diverged = true;
                zero = true;
                model.solve(next)?
            } else {
                ns.topology = topology;
                ns.set_cooldown(case, asset);
                new_model = Some(m);
                f
            }
        }
    };

    if flows.diverged {
        info.diverged = true;
        if hard {
            ns.game_over = true;
        }
        ns.tick_cooldowns();
        return Ok(Transition {
            state: ns,
            model: new_model,
            flows,
            score: 0.0,
            info,
        });
    }

    for (l, line) in case.lines().iter().enumerate() {
        if flows.line_in_service[l] && flows.currents_a[l] >= line.imax {
            ns.overload_streak[l] += 1;
        } else {
            ns.overload_streak[l] = 0;
        }
    }

    if hard {
        let mut topology = ns.topology.clone();
        let mut protection = Vec::new();
        for l in 0..case.lines().len() {
            if ns.overload_streak[l] > ns.rules.reaction_time {
                topology.set_line(l, false);
                protection.push(l);
            }
        }
        let current = if protection.is_empty() { Some(flows.clone()) } else { None };
        let outcome = cascade(case, topology, next, ns.rules.hard_overload_factor, current)?;
        let (cascaded, rounds) = match outcome {
            CascadeOutcome::Stable {
                topology,
                model,
                flows: f,
                tripped,
                rounds,
            } => {
                ns.topology = topology;
                if model.is_some() {
                    new_model = model;
                }
                flows = f;
                (tripped, rounds)
            }
            CascadeOutcome::GameOver { tripped, rounds } => {
                ns.game_over = true;
                info.diverged = true;
                for &l in protection.iter().chain(&tripped) {
                    ns.topology.set_line(l, false);
                }
                zero = true;
                (tripped, rounds)
            }
        };
        for &l in protection.iter().chain(&cascaded) {
            ns.overload_streak[l] = 0;
            ns.line_cooldown[l] = ns.rules.cooldown;
            info.tripped.push(case.lines()[l].id);
        }
        info.cascade = rounds;
        if ns.game_over {
            ns.tick_cooldowns();
            return Ok(Transition {
                state: ns,
                model: new_model,
                flows,
                score: 0.0,
                info,
            });
        }
    }

    let score = score_step(&flows, case, zero);
    ns.tick_cooldowns();
    Ok(Transition {
        state: ns,
        model: new_model,
        flows,
        score,
        info,
    })
}

fn observe(
    case: &GridCase,
    state: &EnvState,
    flows: &PowerFlowResult,
    injections: &Injections,
    forecast: Option<&Injections>,
) -> Observation {
    let margins = case
        .lines()
        .iter()
        .enumerate()
        .map(|(l, line)| {
            if flows.line_in_service[l] && !flows.diverged {
                margin(flows.currents_a[l], line.imax)
            } else {
                0.0
            }
        })
        .collect();
    Observation {
        t: state.t,
        injections: injections.clone(),
        forecast: forecast.cloned(),
        topology: state.topology.clone(),
        currents: flows.currents_a.clone(),
        margins,
        overload_streaks: state.overload_streak.clone(),
        line_cooldowns: state.line_cooldown.clone(),
        substation_cooldowns: state.substation_cooldown.clone(),
    }
}

/// A running episode over one scenario.
#[derive(Debug, Clone)]
pub struct Environment {
    case: Arc<GridCase>,
    scenario: Arc<Scenario>,
    state: EnvState,
    model: DcModel,
    flows: PowerFlowResult,
    initial_score: f64,
}

impl Environment {
    /// Starts an episode in the reference topology with default rules.
    pub fn reset(case: Arc<GridCase>, scenario: Arc<Scenario>, mode: Mode) -> Result<Self, EnvError> {
        let reference = Topology::reference(&case);
        Environment::with_topology(case, scenario, mode, RuleParams::default(), reference)
    }

    /// Starts an episode from an arbitrary topology.
    pub fn with_topology(
        case: Arc<GridCase>,
        scenario: Arc<Scenario>,
        mode: Mode,
        rules: RuleParams,
        topology: Topology,
    ) -> Result<Self, EnvError> {
        scenario
            .check_case(&case)
            .map_err(|e| EnvError::ScenarioMismatch(e.to_string()))?;
        let model = DcModel::new(&case, expand_topology(&case, &topology));
        let flows = model.solve(&scenario.injections[0])?;
        if flows.diverged {
            return Err(EnvError::SetupDiverged);
        }
        let initial_score = score_step(&flows, &case, false);
        let state = EnvState::initial(&case, topology, mode, rules);
        Ok(Environment {
            case,
            scenario,
            state,
            model,
            flows,
            initial_score,
        })
    }

    pub fn case(&self) -> &Arc<GridCase> {
        &self.case
    }
    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }
    pub fn state(&self) -> &EnvState {
        &self.state
    }
    pub fn flows(&self) -> &PowerFlowResult {
        &self.flows
    }

    /// Score of the initial state at t = 0.
    pub fn initial_score(&self) -> f64 {
        self.initial_score
    }

    pub fn is_done(&self) -> bool {
        self.state.game_over
    }

    /// True when no further step is possible within the scenario.
    pub fn at_horizon(&self) -> bool {
        self.state.t + 1 >= self.scenario.horizon()
    }

    pub fn observation(&self) -> Observation {
        let t = self.state.t;
        observe(
            &self.case,
            &self.state,
            &self.flows,
            &self.scenario.injections[t],
            self.scenario.forecasts.get(t + 1),
        )
    }

    fn precheck(&self) -> Result<(), EnvError> {
        if self.state.game_over {
            return Err(EnvError::GameOver);
        }
        if self.at_horizon() {
            return Err(EnvError::HorizonReached(self.state.t));
        }
        Ok(())
    }

    /// Advances one timestep using the true next injections.
    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        self.precheck()?;
        let next = &self.scenario.injections[self.state.t + 1];
        let tr = transition(&self.case, &self.state, &self.model, action, next)?;
        self.state = tr.state;
        if let Some(m) = tr.model {
            self.model = m;
        }
        self.flows = tr.flows;
        Ok(StepResult {
            observation: self.observation(),
            score: tr.score,
            done: self.state.game_over,
            info: tr.info,
        })
    }

    /// Same pipeline as [`Environment::step`] on the forecast of the next
    /// injections; the environment is left untouched.
    pub fn simulate(&self, action: &Action) -> Result<StepResult, EnvError> {
        self.precheck()?;
        let forecast = &self.scenario.forecasts[self.state.t + 1];
        let tr = transition(&self.case, &self.state, &self.model, action, forecast)?;
        let observation = observe(&self.case, &tr.state, &tr.flows, forecast, None);
        Ok(StepResult {
            observation,
            score: tr.score,
            done: tr.state.game_over,
            info: tr.info,
        })
    }
}
