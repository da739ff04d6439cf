//! Hindsight upper bound over a finite dictionary of unitary actions.
//!
//! Every combination of at most one dictionary action per asset defines a
//! topology; together they form a mixed-radix lattice where choice 0 of an
//! asset is its reference state. Each topology is run for the whole
//! scenario without acting (a "chain"), which yields a reward matrix
//! `r(τ, t)`. A longest path through the time-layered graph of topologies,
//! where one step may change at most one asset, gives the best action
//! course in hindsight.
//!
//! Cooldowns are enforced exactly: a node carries the window of assets
//! acted on during the last `cooldown − 1` steps, which is precisely the set
//! of assets the environment would reject.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{score_step, EnvError, Environment, Mode, RuleParams};
use crate::grid::{apply_action, expand_topology, normalize_buses, Action, Asset, GridCase, Topology, TopologyError};
use crate::power_flow::{DcModel, PowerFlowError};
use crate::scenario::Scenario;

/// Default cap on the number of enumerated topologies.
pub const DEFAULT_TOPOLOGY_CAP: usize = 20_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("dictionary entry `{0}` is not a unitary action")]
    NotUnitary(String),
    #[error("dictionary entry `{0}` appears twice")]
    DuplicateAction(String),
    #[error("dictionary entry `{0}` leaves the reference topology unchanged")]
    NoOpAction(String),
    #[error("dictionary entry `{action}`")]
    InvalidAction {
        action: String,
        #[source]
        source: TopologyError,
    },
    #[error("dictionary spans {count} topologies, above the cap of {cap}")]
    TooManyTopologies { count: u128, cap: usize },
    #[error("no feasible path to the horizon; furthest reachable timestep: {}", furthest.map_or("none".to_string(), |t| t.to_string()))]
    NoFeasiblePath { furthest: Option<usize> },
    #[error("reward matrix does not match the topology space: {0}")]
    ShapeMismatch(String),
    #[error("too many assets or options for the compact back-pointer encoding ({needed} codes)")]
    BackpointerOverflow { needed: usize },
    #[error("oracle and do-nothing scores coincide; normalized score undefined")]
    ZeroDenominator,
    #[error("reward cache {path}: {message}")]
    Cache { path: String, message: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

/// The reconfigurations used by the default oracle dictionary on the
/// 14-bus case, in asset order.
const IEEE14_SUBSTATION_CONFIGS: &[(u32, &[u8])] = &[
    (6, &[0, 0, 0, 0, 1, 1]),
    (6, &[0, 1, 0, 0, 1, 1]),
    (5, &[0, 1, 0, 0, 1]),
    (5, &[0, 0, 1, 0, 1]),
    (4, &[0, 0, 1, 0, 1, 0]),
    (4, &[0, 0, 0, 1, 1, 0]),
    (4, &[1, 0, 1, 0, 1, 1]),
    (4, &[1, 0, 1, 0, 1, 0]),
    (9, &[1, 0, 1, 0, 1]),
    (9, &[0, 0, 1, 0, 1]),
    (9, &[1, 1, 0, 1, 1]),
    (2, &[1, 1, 0, 1, 0, 1]),
    (2, &[1, 1, 0, 1, 0, 0]),
];

/// Lines 2-4, 5-6, 10-11 and 13-14.
const IEEE14_LINE_SWITCHES: &[u32] = &[4, 10, 18, 20];

/// A list of distinct unitary actions, bus vectors normalized.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionDictionary {
    actions: Vec<Action>,
}

impl ActionDictionary {
    pub fn new(case: &GridCase, actions: Vec<Action>) -> Result<Self, OracleError> {
        let reference = Topology::reference(case);
        let mut out: Vec<Action> = Vec::with_capacity(actions.len());
        for action in actions {
            let action = match action {
                Action::DoNothing => return Err(OracleError::NotUnitary(action.to_string())),
                Action::SetSubstation { substation, mut buses } => {
                    normalize_buses(&mut buses);
                    Action::SetSubstation { substation, buses }
                }
                a => a,
            };
            let applied = apply_action(case, &reference, &action).map_err(|source| OracleError::InvalidAction {
                action: action.to_string(),
                source,
            })?;
            if applied == reference {
                return Err(OracleError::NoOpAction(action.to_string()));
            }
            if out.contains(&action) {
                return Err(OracleError::DuplicateAction(action.to_string()));
            }
            out.push(action);
        }
        Ok(ActionDictionary { actions: out })
    }

    /// Bus reconfigurations at substations 6, 5, 4, 9 and 2 plus four line
    /// switches on the 14-bus case.
    pub fn ieee14_default() -> Self {
        ActionDictionary::new(&GridCase::ieee14(), ieee14_default_actions()).expect("shipped dictionary is valid")
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Assets in order of first appearance.
    pub fn assets(&self) -> Vec<Asset> {
        let mut assets = Vec::new();
        for a in &self.actions {
            let asset = a.asset().expect("unitary");
            if !assets.contains(&asset) {
                assets.push(asset);
            }
        }
        assets
    }

    /// Each dictionary action applied alone to the reference topology.
    pub fn single_action_topologies(&self, case: &GridCase) -> Vec<Topology> {
        let reference = Topology::reference(case);
        self.actions
            .iter()
            .map(|a| apply_action(case, &reference, a).expect("validated"))
            .collect()
    }
}

pub fn ieee14_default_actions() -> Vec<Action> {
    IEEE14_SUBSTATION_CONFIGS
        .iter()
        .map(|&(substation, buses)| Action::SetSubstation {
            substation,
            buses: buses.to_vec(),
        })
        .chain(IEEE14_LINE_SWITCHES.iter().map(|&line| Action::SwitchLine { line }))
        .collect()
}

/// Mixed-radix index over per-asset choices; asset 0 is the most
/// significant digit and index 0 is the all-reference combination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoiceLattice {
    radices: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl ChoiceLattice {
    pub fn new(radices: Vec<usize>) -> Self {
        assert!(radices.iter().all(|&r| r >= 1), "every asset needs at least its reference choice");
        let mut strides = vec![1; radices.len()];
        for a in (0..radices.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * radices[a + 1];
        }
        let len = radices.iter().product();
        ChoiceLattice { radices, strides, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_assets(&self) -> usize {
        self.radices.len()
    }

    pub fn radix(&self, asset: usize) -> usize {
        self.radices[asset]
    }

    pub fn choice(&self, index: usize, asset: usize) -> usize {
        index / self.strides[asset] % self.radices[asset]
    }

    pub fn with_choice(&self, index: usize, asset: usize, choice: usize) -> usize {
        index - self.choice(index, asset) * self.strides[asset] + choice * self.strides[asset]
    }

    pub fn choices(&self, index: usize) -> Vec<usize> {
        (0..self.n_assets()).map(|a| self.choice(index, a)).collect()
    }

    /// Number of assets whose choices differ.
    pub fn distance(&self, a: usize, b: usize) -> usize {
        (0..self.n_assets()).filter(|&k| self.choice(a, k) != self.choice(b, k)).count()
    }
}

/// Topologies reachable by applying at most one dictionary action per
/// asset to the reference.
#[derive(Debug, Clone)]
pub struct TopologySpace {
    dictionary: ActionDictionary,
    assets: Vec<Asset>,
    /// `options[a][c − 1]` sets asset `a` to choice `c`.
    options: Vec<Vec<Action>>,
    lattice: ChoiceLattice,
    topologies: Vec<Topology>,
}

impl TopologySpace {
    pub fn dictionary(&self) -> &ActionDictionary {
        &self.dictionary
    }
    pub fn assets(&self) -> &[Asset] {
        &self.assets
    }
    pub fn lattice(&self) -> &ChoiceLattice {
        &self.lattice
    }
    pub fn topologies(&self) -> &[Topology] {
        &self.topologies
    }
    pub fn len(&self) -> usize {
        self.topologies.len()
    }
    pub fn is_empty(&self) -> bool {
        self.topologies.is_empty()
    }
    pub fn reference_index(&self) -> usize {
        0
    }

    /// Action moving `asset` to `choice` from any other choice.
    pub fn transition_action(&self, asset: usize, choice: usize) -> Action {
        if choice > 0 {
            return self.options[asset][choice - 1].clone();
        }
        match (self.assets[asset], &self.options[asset][0]) {
            (Asset::Line(line), _) => Action::SwitchLine { line },
            (Asset::Substation(substation), Action::SetSubstation { buses, .. }) => Action::SetSubstation {
                substation,
                buses: vec![0; buses.len()],
            },
            _ => unreachable!("substation options are bus reconfigurations"),
        }
    }

    pub fn index_of(&self, topology: &Topology) -> Option<usize> {
        self.topologies.iter().position(|t| t == topology)
    }

    /// Concrete actions of a lattice path, one per transition.
    pub fn course(&self, path: &LatticePath) -> Vec<Action> {
        path.moves
            .iter()
            .map(|m| match *m {
                None => Action::DoNothing,
                Some((asset, choice)) => self.transition_action(asset, choice),
            })
            .collect()
    }
}

/// Applies every per-asset combination of dictionary actions to the
/// reference topology.
pub fn enumerate_topologies(case: &GridCase, dictionary: &ActionDictionary, cap: usize) -> Result<TopologySpace, OracleError> {
    let assets = dictionary.assets();
    let options: Vec<Vec<Action>> = assets
        .iter()
        .map(|asset| {
            dictionary
                .actions()
                .iter()
                .filter(|a| a.asset() == Some(*asset))
                .cloned()
                .collect()
        })
        .collect();
    let count: u128 = options.iter().map(|o| o.len() as u128 + 1).product();
    if count > cap as u128 {
        return Err(OracleError::TooManyTopologies { count, cap });
    }
    let lattice = ChoiceLattice::new(options.iter().map(|o| o.len() + 1).collect());
    let reference = Topology::reference(case);
    let topologies = (0..lattice.len())
        .map(|index| {
            let mut t = reference.clone();
            for (a, opts) in options.iter().enumerate() {
                let c = lattice.choice(index, a);
                if c > 0 {
                    t = apply_action(case, &t, &opts[c - 1]).expect("validated dictionary");
                }
            }
            t
        })
        .collect();
    Ok(TopologySpace {
        dictionary: dictionary.clone(),
        assets,
        options,
        lattice,
        topologies,
    })
}

/// `r(τ, t)` with a feasibility mask, topology-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardMatrix {
    n_topologies: usize,
    horizon: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl RewardMatrix {
    pub fn new(n_topologies: usize, horizon: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self, OracleError> {
        let n = n_topologies * horizon;
        if values.len() != n || mask.len() != n {
            return Err(OracleError::ShapeMismatch(format!(
                "{} values and {} mask entries for {n_topologies} × {horizon}",
                values.len(),
                mask.len()
            )));
        }
        Ok(RewardMatrix {
            n_topologies,
            horizon,
            values,
            mask,
        })
    }

    /// One row per topology; `None` marks an infeasible timestep.
    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self, OracleError> {
        let horizon = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != horizon) {
            return Err(OracleError::ShapeMismatch("ragged rows".into()));
        }
        let values = rows.iter().flatten().map(|v| v.unwrap_or(0.0)).collect();
        let mask = rows.iter().flatten().map(Option::is_some).collect();
        RewardMatrix::new(rows.len(), horizon, values, mask)
    }

    pub fn n_topologies(&self) -> usize {
        self.n_topologies
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn get(&self, topology: usize, t: usize) -> Option<f64> {
        let i = topology * self.horizon + t;
        self.mask[i].then_some(self.values[i])
    }

    pub fn feasible(&self, topology: usize, t: usize) -> bool {
        self.mask[topology * self.horizon + t]
    }

    pub fn row(&self, topology: usize) -> Vec<Option<f64>> {
        (0..self.horizon).map(|t| self.get(topology, t)).collect()
    }
}

/// Rewards of one topology held fixed over the scenario; infeasible from
/// the first diverged or game-over timestep on.
pub fn evaluate_chain(
    case: &Arc<GridCase>,
    scenario: &Arc<Scenario>,
    topology: &Topology,
    mode: Mode,
    rules: RuleParams,
) -> Result<Vec<Option<f64>>, OracleError> {
    let horizon = scenario.horizon();
    let mut row = vec![None; horizon];
    match mode {
        // Without protections the topology never changes, so the chain is
        // one factorization and a solve per timestep.
        Mode::Easy => {
            let model = DcModel::new(case, expand_topology(case, topology));
            for (t, x) in scenario.injections.iter().enumerate() {
                let flows = model.solve(x)?;
                if flows.diverged {
                    break;
                }
                row[t] = Some(score_step(&flows, case, false));
            }
        }
        Mode::Hard => {
            let mut env = match Environment::with_topology(case.clone(), scenario.clone(), mode, rules, topology.clone()) {
                Ok(env) => env,
                Err(EnvError::SetupDiverged) => return Ok(row),
                Err(e) => return Err(e.into()),
            };
            row[0] = Some(env.initial_score());
            for slot in row.iter_mut().skip(1) {
                let r = env.step(&Action::DoNothing)?;
                if r.done || r.info.diverged {
                    break;
                }
                *slot = Some(r.score);
            }
        }
    }
    Ok(row)
}

/// Chains of every topology of `space`, evaluated in parallel.
pub fn evaluate_chains(
    case: &Arc<GridCase>,
    scenario: &Arc<Scenario>,
    space: &TopologySpace,
    mode: Mode,
    rules: RuleParams,
) -> Result<RewardMatrix, OracleError> {
    let rows: Vec<Vec<Option<f64>>> = space
        .topologies()
        .par_iter()
        .map(|t| evaluate_chain(case, scenario, t, mode, rules))
        .collect::<Result<_, _>>()?;
    RewardMatrix::from_rows(&rows)
}

const NONE: u8 = 0;

/// A node of the layered graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Node {
    pub topology: usize,
    /// Index into [`OracleGraph::windows`].
    pub window: usize,
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: Node,
    /// `(asset, new choice)`, `None` for staying.
    pub action: Option<(usize, usize)>,
    pub weight: f64,
}

/// Layered DAG over (topology, recent-action window, timestep).
///
/// A window lists the assets acted on at the previous `cooldown − 1`
/// steps, most recent first (`0` = no action, `a + 1` = asset `a`).
#[derive(Debug, Clone)]
pub struct OracleGraph<'m> {
    lattice: ChoiceLattice,
    matrix: &'m RewardMatrix,
    window_len: usize,
    windows: Vec<Vec<u8>>,
    window_index: HashMap<Vec<u8>, usize>,
}

fn sequences(n_assets: usize, len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        let mut next = Vec::new();
        for w in &out {
            for x in 0..=n_assets as u8 {
                if x == NONE || !w.contains(&x) {
                    let mut v = w.clone();
                    v.push(x);
                    next.push(v);
                }
            }
        }
        out = next;
    }
    out
}

/// Builds the transition graph. `relaxed` drops the cooldown bookkeeping,
/// which can only raise the bound.
pub fn build_graph<'m>(
    lattice: &ChoiceLattice,
    matrix: &'m RewardMatrix,
    rules: RuleParams,
    relaxed: bool,
) -> Result<OracleGraph<'m>, OracleError> {
    if matrix.n_topologies() != lattice.len() {
        return Err(OracleError::ShapeMismatch(format!(
            "{} reward rows for {} topologies",
            matrix.n_topologies(),
            lattice.len()
        )));
    }
    if matrix.horizon() == 0 {
        return Err(OracleError::ShapeMismatch("empty horizon".into()));
    }
    let n = lattice.n_assets();
    let max_radix = (0..n).map(|a| lattice.radix(a)).max().unwrap_or(1);
    let needed = (n + 1) * max_radix;
    if needed > 256 {
        return Err(OracleError::BackpointerOverflow { needed });
    }
    let window_len = if relaxed { 0 } else { rules.cooldown.saturating_sub(1) as usize };
    let windows = sequences(n, window_len);
    let window_index = windows.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    Ok(OracleGraph {
        lattice: lattice.clone(),
        matrix,
        window_len,
        windows,
        window_index,
    })
}

/// Result of the longest-path search on the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePath {
    pub score: f64,
    pub n_actions: usize,
    /// Topology index at every timestep.
    pub topologies: Vec<usize>,
    /// Transition `t → t+1`: `(asset, new choice)` or `None`.
    pub moves: Vec<Option<(usize, usize)>>,
}

#[derive(Clone, Copy)]
struct Cand {
    value: f64,
    actions: u32,
    topology: usize,
    z: u8,
}

impl Cand {
    /// Higher value, then fewer actions, then lower topology, then lower
    /// dropped window entry.
    fn beats(&self, other: &Cand) -> bool {
        if self.value != other.value {
            return self.value > other.value;
        }
        (self.actions, self.topology, self.z) < (other.actions, other.topology, other.z)
    }
}

impl<'m> OracleGraph<'m> {
    pub fn windows(&self) -> &[Vec<u8>] {
        &self.windows
    }

    pub fn horizon(&self) -> usize {
        self.matrix.horizon()
    }

    pub fn start(&self) -> Node {
        Node {
            topology: 0,
            window: self.window_index[&vec![NONE; self.window_len]],
            t: 0,
        }
    }

    pub fn is_feasible(&self, node: Node) -> bool {
        self.matrix.feasible(node.topology, node.t)
    }

    fn shifted(&self, window: usize, head: u8) -> usize {
        let w = &self.windows[window];
        if self.window_len == 0 {
            return 0;
        }
        let mut v = Vec::with_capacity(self.window_len);
        v.push(head);
        v.extend_from_slice(&w[..self.window_len - 1]);
        self.window_index[&v]
    }

    /// Outgoing edges of a node, listed explicitly.
    pub fn out_edges(&self, node: Node) -> Vec<Edge> {
        let t1 = node.t + 1;
        if t1 >= self.horizon() {
            return Vec::new();
        }
        let mut edges = Vec::new();
        if let Some(w) = self.matrix.get(node.topology, t1) {
            edges.push(Edge {
                to: Node {
                    topology: node.topology,
                    window: self.shifted(node.window, NONE),
                    t: t1,
                },
                action: None,
                weight: w,
            });
        }
        let blocked = &self.windows[node.window];
        for a in 0..self.lattice.n_assets() {
            if blocked.contains(&(a as u8 + 1)) {
                continue;
            }
            let current = self.lattice.choice(node.topology, a);
            for c in (0..self.lattice.radix(a)).filter(|&c| c != current) {
                let dest = self.lattice.with_choice(node.topology, a, c);
                if let Some(w) = self.matrix.get(dest, t1) {
                    edges.push(Edge {
                        to: Node {
                            topology: dest,
                            window: self.shifted(node.window, a as u8 + 1),
                            t: t1,
                        },
                        action: Some((a, c)),
                        weight: w,
                    });
                }
            }
        }
        edges
    }
}

/// Best total reward `r(τ_ref, 0) + Σ edge weights` to the horizon and the
/// matching path; ties go to fewer actions, then lower topology indices.
pub fn longest_path(graph: &OracleGraph<'_>) -> Result<LatticePath, OracleError> {
    let lat = &graph.lattice;
    let matrix = graph.matrix;
    let horizon = matrix.horizon();
    let n_topo = lat.len();
    let n_assets = lat.n_assets();
    let n_win = graph.windows.len();
    let l = graph.window_len;
    let start = graph.start();
    let Some(r0) = matrix.get(start.topology, 0) else {
        return Err(OracleError::NoFeasiblePath { furthest: None });
    };

    // Windows grouped by their first `l − 1` entries; for each window, the
    // group its tail falls in (as a destination) and its own group and last
    // entry (as a source).
    let prefixes = sequences(n_assets, l.saturating_sub(1));
    let prefix_index: HashMap<Vec<u8>, usize> = prefixes.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
    let n_groups = prefixes.len();
    let mut group_members: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
    let mut head = vec![NONE; n_win];
    let mut tail_group = vec![0usize; n_win];
    let mut last = vec![NONE; n_win];
    if l > 0 {
        for (i, w) in graph.windows.iter().enumerate() {
            group_members[prefix_index[&w[..l - 1]]].push(i);
            head[i] = w[0];
            tail_group[i] = prefix_index[&w[1..]];
            last[i] = w[l - 1];
        }
    }

    let width = n_topo * n_win;
    let mut value = vec![f64::NEG_INFINITY; width];
    let mut actions = vec![0u32; width];
    let mut next_value = vec![f64::NEG_INFINITY; width];
    let mut next_actions = vec![0u32; width];
    let mut back = vec![0u8; width * (horizon - 1)];
    value[start.topology * n_win + start.window] = r0;

    const EMPTY: u32 = u32::MAX;
    let mut best1 = vec![EMPTY; n_topo * n_groups];
    let mut best2 = vec![EMPTY; n_topo * n_groups];
    let max_radix = (0..n_assets).map(|a| lat.radix(a)).max().unwrap_or(1);

    for t in 0..horizon - 1 {
        let bp = &mut back[t * width..(t + 1) * width];
        next_value.fill(f64::NEG_INFINITY);
        let cand_at = |value: &[f64], actions: &[u32], topology: usize, w: usize| Cand {
            value: value[topology * n_win + w],
            actions: actions[topology * n_win + w],
            topology,
            z: if l > 0 { last[w] } else { 0 },
        };

        if l > 0 {
            for tau in 0..n_topo {
                for g in 0..n_groups {
                    let (mut b1, mut b2) = (EMPTY, EMPTY);
                    for &w in &group_members[g] {
                        if value[tau * n_win + w] == f64::NEG_INFINITY {
                            continue;
                        }
                        let c = cand_at(&value, &actions, tau, w);
                        if b1 == EMPTY || c.beats(&cand_at(&value, &actions, tau, b1 as usize)) {
                            b2 = b1;
                            b1 = w as u32;
                        } else if b2 == EMPTY || c.beats(&cand_at(&value, &actions, tau, b2 as usize)) {
                            b2 = w as u32;
                        }
                    }
                    best1[tau * n_groups + g] = b1;
                    best2[tau * n_groups + g] = b2;
                }
            }
        }

        let mut reached = false;
        for dest in 0..n_topo {
            let Some(r) = matrix.get(dest, t + 1) else { continue };
            for wd in 0..n_win {
                let mut best: Option<(Cand, u8)> = None;
                let mut offer = |c: Cand, extra: u32, code: u8| {
                    let c = Cand { actions: c.actions + extra, ..c };
                    if best.as_ref().is_none_or(|(b, _)| c.beats(b)) {
                        best = Some((c, code));
                    }
                };
                if l == 0 {
                    if value[dest] != f64::NEG_INFINITY {
                        offer(cand_at(&value, &actions, dest, 0), 0, 0);
                    }
                    for a in 0..n_assets {
                        let current = lat.choice(dest, a);
                        for c in (0..lat.radix(a)).filter(|&c| c != current) {
                            let src = lat.with_choice(dest, a, c);
                            if value[src] != f64::NEG_INFINITY {
                                offer(cand_at(&value, &actions, src, 0), 1, ((a + 1) * max_radix + c) as u8);
                            }
                        }
                    }
                } else {
                    let g = tail_group[wd];
                    let x = head[wd];
                    if x == NONE {
                        let b = best1[dest * n_groups + g];
                        if b != EMPTY {
                            let c = cand_at(&value, &actions, dest, b as usize);
                            offer(c, 0, c.z);
                        }
                    } else {
                        let a = (x - 1) as usize;
                        let current = lat.choice(dest, a);
                        for c in (0..lat.radix(a)).filter(|&c| c != current) {
                            let src = lat.with_choice(dest, a, c);
                            let mut b = best1[src * n_groups + g];
                            if b != EMPTY && last[b as usize] == x {
                                b = best2[src * n_groups + g];
                            }
                            if b != EMPTY {
                                let cand = cand_at(&value, &actions, src, b as usize);
                                offer(cand, 1, (c * (n_assets + 1) + cand.z as usize) as u8);
                            }
                        }
                    }
                }
                if let Some((c, code)) = best {
                    let i = dest * n_win + wd;
                    next_value[i] = c.value + r;
                    next_actions[i] = c.actions;
                    bp[i] = code;
                    reached = true;
                }
            }
        }
        if !reached {
            return Err(OracleError::NoFeasiblePath { furthest: Some(t) });
        }
        std::mem::swap(&mut value, &mut next_value);
        std::mem::swap(&mut actions, &mut next_actions);
    }

    let mut end: Option<(Cand, usize)> = None;
    for tau in 0..n_topo {
        for w in 0..n_win {
            let i = tau * n_win + w;
            if value[i] == f64::NEG_INFINITY {
                continue;
            }
            let c = Cand {
                value: value[i],
                actions: actions[i],
                topology: tau,
                z: 0,
            };
            if end.as_ref().is_none_or(|(b, _)| c.beats(b)) {
                end = Some((c, w));
            }
        }
    }
    let (best, mut w) = end.expect("last layer reached");
    let mut tau = best.topology;
    let mut topologies = vec![0; horizon];
    let mut moves = vec![None; horizon - 1];
    topologies[horizon - 1] = tau;
    for t in (1..horizon).rev() {
        let code = back[(t - 1) * width + tau * n_win + w] as usize;
        if l == 0 {
            if code != 0 {
                let a = code / max_radix - 1;
                moves[t - 1] = Some((a, lat.choice(tau, a)));
                tau = lat.with_choice(tau, a, code % max_radix);
            }
        } else {
            let win = &graph.windows[w];
            let z = (code % (n_assets + 1)) as u8;
            let mut src = win[1..].to_vec();
            src.push(z);
            if win[0] != NONE {
                let a = (win[0] - 1) as usize;
                moves[t - 1] = Some((a, lat.choice(tau, a)));
                tau = lat.with_choice(tau, a, code / (n_assets + 1));
            }
            w = graph.window_index[&src];
        }
        topologies[t - 1] = tau;
    }
    debug_assert_eq!(tau, start.topology);
    Ok(LatticePath {
        score: best.value,
        n_actions: best.actions as usize,
        topologies,
        moves,
    })
}

/// `(agent − dn) / (oracle − dn)`.
pub fn normalized_score(agent: f64, dn: f64, oracle: f64) -> Result<f64, OracleError> {
    if oracle == dn {
        return Err(OracleError::ZeroDenominator);
    }
    Ok((agent - dn) / (oracle - dn))
}

/// One `(t, action)` entry of an action course; `t` is the timestep at
/// which the action is played.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CourseEntry {
    pub t: usize,
    pub action: Action,
}

/// Oracle output for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub scenario_id: String,
    pub mode: Mode,
    pub relaxed: bool,
    pub score: f64,
    pub n_topologies: usize,
    pub n_actions: usize,
    /// Non-trivial actions only; every other step is do-nothing.
    pub course: Vec<CourseEntry>,
}

impl OracleRecord {
    /// The full action sequence over `horizon − 1` steps.
    pub fn actions(&self, horizon: usize) -> Vec<Action> {
        let mut out = vec![Action::DoNothing; horizon.saturating_sub(1)];
        for e in &self.course {
            if e.t < out.len() {
                out[e.t] = e.action.clone();
            }
        }
        out
    }
}

/// Key of a cached reward matrix: everything the chains depend on.
pub fn cache_key(case: &GridCase, dictionary: &ActionDictionary, mode: Mode, rules: RuleParams, scenario: &Scenario) -> String {
    let mut h = Sha256::new();
    h.update(case.to_case_string().as_bytes());
    h.update(serde_json::to_vec(dictionary).expect("dictionary serializes"));
    h.update(serde_json::to_vec(&(mode, rules)).expect("rules serialize"));
    h.update(scenario.id.as_bytes());
    for x in &scenario.injections {
        for v in x.generators.iter().chain(&x.loads) {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

const CACHE_MAGIC: &[u8; 8] = b"GARWMX01";

pub fn save_matrix(path: &Path, matrix: &RewardMatrix) -> Result<(), OracleError> {
    let mut buf = Vec::with_capacity(24 + matrix.values.len() * 9);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(matrix.n_topologies as u64).to_le_bytes());
    buf.extend_from_slice(&(matrix.horizon as u64).to_le_bytes());
    for v in &matrix.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend(matrix.mask.iter().map(|&m| m as u8));
    fs::write(path, buf).map_err(|e| OracleError::Cache {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_matrix(path: &Path) -> Result<RewardMatrix, OracleError> {
    let err = |message: &str| OracleError::Cache {
        path: path.display().to_string(),
        message: message.to_string(),
    };
    let bytes = fs::read(path).map_err(|e| err(&e.to_string()))?;
    if bytes.len() < 24 || &bytes[..8] != CACHE_MAGIC {
        return Err(err("bad magic"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes")) as usize;
    let (n, horizon) = (word(8), word(16));
    let cells = n.checked_mul(horizon).ok_or_else(|| err("bad dimensions"))?;
    if bytes.len() != 24 + cells * 9 {
        return Err(err("truncated"));
    }
    let values = bytes[24..24 + cells * 8]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mask = bytes[24 + cells * 8..].iter().map(|&b| b != 0).collect();
    RewardMatrix::new(n, horizon, values, mask)
}

/// Like [`evaluate_chains`], reading and writing `cache_dir` when given.
pub fn evaluate_chains_cached(
    case: &Arc<GridCase>,
    scenario: &Arc<Scenario>,
    space: &TopologySpace,
    mode: Mode,
    rules: RuleParams,
    cache_dir: Option<&Path>,
) -> Result<RewardMatrix, OracleError> {
    let path: Option<PathBuf> = cache_dir.map(|d| {
        let key = cache_key(case, space.dictionary(), mode, rules, scenario);
        d.join(format!("{}-{}.rmx", scenario.id, &key[..16]))
    });
    if let Some(p) = &path {
        if p.is_file() {
            let m = load_matrix(p)?;
            if m.n_topologies() == space.len() && m.horizon() == scenario.horizon() {
                return Ok(m);
            }
        }
    }
    let m = evaluate_chains(case, scenario, space, mode, rules)?;
    if let Some(p) = &path {
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| OracleError::Cache {
                path: dir.display().to_string(),
                message: e.to_string(),
            })?;
        }
        save_matrix(p, &m)?;
    }
    Ok(m)
}

/// Full pipeline for one scenario: chains, graph, longest path.
pub fn solve_oracle(
    case: &Arc<GridCase>,
    scenario: &Arc<Scenario>,
    space: &TopologySpace,
    mode: Mode,
    rules: RuleParams,
    relaxed: bool,
    cache_dir: Option<&Path>,
) -> Result<OracleRecord, OracleError> {
    let matrix = evaluate_chains_cached(case, scenario, space, mode, rules, cache_dir)?;
    let graph = build_graph(space.lattice(), &matrix, rules, relaxed)?;
    let path = longest_path(&graph)?;
    let course = space
        .course(&path)
        .into_iter()
        .enumerate()
        .filter(|(_, a)| !a.is_do_nothing())
        .map(|(t, action)| CourseEntry { t, action })
        .collect();
    Ok(OracleRecord {
        scenario_id: scenario.id.clone(),
        mode,
        relaxed,
        score: path.score,
        n_topologies: space.len(),
        n_actions: path.n_actions,
        course,
    })
}
