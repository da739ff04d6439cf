//! DC power flow over an [`ElectricalGraph`].
//!
//! Branch flow is `b · (θ_from − θ_to)`; each island is solved against its
//! own slack node by a dense LU factorization of the reduced susceptance
//! matrix. Islands holding load but no generator are reported as
//! de-energized and flag the solve as diverged.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{largest_generator, ElectricalGraph, GridCase, UnionFind};

/// Pivot magnitude below which the reduced susceptance matrix is singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("injection shape mismatch: expected {expected_generators} generators and {expected_loads} loads, got {generators} and {loads}")]
    ShapeMismatch {
        expected_generators: usize,
        expected_loads: usize,
        generators: usize,
        loads: usize,
    },
    #[error("overloads requested on a diverged power flow")]
    Diverged,
}

/// Productions and consumptions in MW (loads are positive consumption).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injections {
    pub generators: Vec<f64>,
    pub loads: Vec<f64>,
}

impl Injections {
    pub fn zeros(case: &GridCase) -> Self {
        Injections {
            generators: vec![0.0; case.generators().len()],
            loads: vec![0.0; case.loads().len()],
        }
    }

    pub fn total_production(&self) -> f64 {
        self.generators.iter().sum()
    }

    pub fn total_load(&self) -> f64 {
        self.loads.iter().sum()
    }

    pub fn check_shape(&self, case: &GridCase) -> Result<(), PowerFlowError> {
        if self.generators.len() != case.generators().len() || self.loads.len() != case.loads().len() {
            return Err(PowerFlowError::ShapeMismatch {
                expected_generators: case.generators().len(),
                expected_loads: case.loads().len(),
                generators: self.generators.len(),
                loads: self.loads.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowResult {
    /// Voltage angle per electrical node, radians.
    pub angles: Vec<f64>,
    /// Active flow per case line in MW, signed from → to; 0 when out of service.
    pub flows_mw: Vec<f64>,
    /// Current magnitude per case line in Amperes.
    pub currents_a: Vec<f64>,
    pub line_in_service: Vec<bool>,
    pub diverged: bool,
    /// Electrical nodes left without generation.
    pub de_energized: Vec<usize>,
}

/// Line ids with `i ≥ imax`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverloadSet(pub BTreeSet<u32>);

impl OverloadSet {
    pub fn contains(&self, line_id: u32) -> bool {
        self.0.contains(&line_id)
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Three-phase current magnitude at nominal voltage.
pub fn flows_to_amps(flow_mw: f64, base_kv: f64) -> f64 {
    flow_mw.abs() * 1000.0 / (3f64.sqrt() * base_kv)
}

pub fn check_overloads(result: &PowerFlowResult, case: &GridCase) -> Result<OverloadSet, PowerFlowError> {
    if result.diverged {
        return Err(PowerFlowError::Diverged);
    }
    Ok(OverloadSet(
        case.lines()
            .iter()
            .zip(&result.currents_a)
            .filter(|(line, &i)| i >= line.imax)
            .map(|(line, _)| line.id)
            .collect(),
    ))
}

/// Dense LU with partial pivoting for the small reduced systems.
#[derive(Debug, Clone)]
struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl DenseLu {
    fn factor(mut a: Vec<f64>, n: usize) -> Option<Self> {
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut max = a[k * n + k].abs();
            for r in k + 1..n {
                let v = a[r * n + k].abs();
                if v > max {
                    max = v;
                    p = r;
                }
            }
            if max < PIVOT_TOLERANCE {
                return None;
            }
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = a[k * n + k];
            for r in k + 1..n {
                let factor = a[r * n + k] / pivot;
                if factor == 0.0 {
                    continue;
                }
                a[r * n + k] = factor;
                for c in k + 1..n {
                    a[r * n + c] -= factor * a[k * n + c];
                }
            }
        }
        Some(DenseLu { n, lu: a, perm })
    }

    fn solve(&self, b: &[f64], x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            x[i] = row.iter().zip(&x[..i]).fold(b[self.perm[i]], |s, (l, xj)| s - l * xj);
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            let s = row.iter().zip(&x[i + 1..]).fold(x[i], |s, (u, xj)| s - u * xj);
            x[i] = s / self.lu[i * n + i];
        }
    }
}

#[derive(Debug, Clone)]
struct Island {
    slack: usize,
    /// Non-slack nodes in reduced-matrix order.
    reduced: Vec<usize>,
    lu: Option<DenseLu>,
}

/// A factorized electrical graph; solving for new injections only needs
/// triangular solves.
#[derive(Debug, Clone)]
pub struct DcModel {
    graph: ElectricalGraph,
    islands: Vec<Island>,
    de_energized: Vec<usize>,
    singular: bool,
    line_kv: Vec<f64>,
    base_mva: f64,
    n_lines: usize,
}

impl DcModel {
    pub fn new(case: &GridCase, graph: ElectricalGraph) -> Self {
        let n = graph.nodes.len();
        let mut uf = UnionFind::new(n);
        for br in &graph.branches {
            uf.union(br.from, br.to);
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut island_of = vec![0; n];
        for (v, island) in island_of.iter_mut().enumerate() {
            let root = uf.find(v);
            *island = root;
            members[root].push(v);
        }
        let mut has_load = vec![false; n];
        for &node in &graph.load_node {
            has_load[node] = true;
        }

        let mut islands = Vec::new();
        let mut de_energized = Vec::new();
        let mut singular = false;
        let mut local = vec![usize::MAX; n];
        for (root, nodes) in members.iter().enumerate().filter(|(_, m)| !m.is_empty()) {
            let slack = match graph.slack {
                Some(s) if island_of[s] == root => Some(s),
                _ => {
                    let gens = (0..graph.generator_node.len()).filter(|&g| island_of[graph.generator_node[g]] == root);
                    largest_generator(case, gens).map(|g| graph.generator_node[g])
                }
            };
            let slack = match slack {
                Some(s) => s,
                None if nodes.iter().any(|&v| has_load[v]) => {
                    de_energized.extend(nodes.iter().copied());
                    continue;
                }
                None => nodes[0],
            };
            let reduced: Vec<usize> = nodes.iter().copied().filter(|&v| v != slack).collect();
            for (i, &v) in reduced.iter().enumerate() {
                local[v] = i;
            }
            let m = reduced.len();
            let lu = if m == 0 {
                None
            } else {
                let mut b = vec![0.0; m * m];
                for br in graph.branches.iter().filter(|br| island_of[br.from] == root) {
                    let li = (br.from != slack).then(|| local[br.from]);
                    let lj = (br.to != slack).then(|| local[br.to]);
                    if let Some(li) = li {
                        b[li * m + li] += br.susceptance;
                    }
                    if let Some(lj) = lj {
                        b[lj * m + lj] += br.susceptance;
                    }
                    if let (Some(li), Some(lj)) = (li, lj) {
                        b[li * m + lj] -= br.susceptance;
                        b[lj * m + li] -= br.susceptance;
                    }
                }
                let lu = DenseLu::factor(b, m);
                if lu.is_none() {
                    singular = true;
                }
                lu
            };
            islands.push(Island { slack, reduced, lu });
        }
        de_energized.sort_unstable();

        let line_kv = (0..case.lines().len())
            .map(|l| case.substations()[case.line_ends(l).0].base_kv)
            .collect();
        DcModel {
            graph,
            islands,
            de_energized,
            singular,
            line_kv,
            base_mva: case.base_mva(),
            n_lines: case.lines().len(),
        }
    }

    pub fn graph(&self) -> &ElectricalGraph {
        &self.graph
    }

    /// True when the topology alone makes every solve diverge.
    pub fn is_structurally_diverged(&self) -> bool {
        self.singular || !self.de_energized.is_empty()
    }

    pub fn solve(&self, injections: &Injections) -> Result<PowerFlowResult, PowerFlowError> {
        let g = &self.graph;
        if injections.generators.len() != g.generator_node.len() || injections.loads.len() != g.load_node.len() {
            return Err(PowerFlowError::ShapeMismatch {
                expected_generators: g.generator_node.len(),
                expected_loads: g.load_node.len(),
                generators: injections.generators.len(),
                loads: injections.loads.len(),
            });
        }
        let n = g.nodes.len();
        let mut angles = vec![0.0; n];
        let mut flows_mw = vec![0.0; self.n_lines];
        let mut currents_a = vec![0.0; self.n_lines];
        if self.is_structurally_diverged() {
            return Ok(PowerFlowResult {
                angles,
                flows_mw,
                currents_a,
                line_in_service: g.line_in_service.clone(),
                diverged: true,
                de_energized: self.de_energized.clone(),
            });
        }

        let mut p = vec![0.0; n];
        for (&node, &mw) in g.generator_node.iter().zip(&injections.generators) {
            p[node] += mw / self.base_mva;
        }
        for (&node, &mw) in g.load_node.iter().zip(&injections.loads) {
            p[node] -= mw / self.base_mva;
        }
        let mut rhs = Vec::new();
        let mut theta = Vec::new();
        for island in &self.islands {
            if let Some(lu) = &island.lu {
                rhs.clear();
                rhs.extend(island.reduced.iter().map(|&v| p[v]));
                theta.clear();
                theta.resize(rhs.len(), 0.0);
                lu.solve(&rhs, &mut theta);
                for (&v, &th) in island.reduced.iter().zip(&theta) {
                    angles[v] = th;
                }
            }
            angles[island.slack] = 0.0;
        }
        for br in &g.branches {
            let f = br.susceptance * (angles[br.from] - angles[br.to]) * self.base_mva;
            flows_mw[br.line] = f;
            currents_a[br.line] = flows_to_amps(f, self.line_kv[br.line]);
        }
        Ok(PowerFlowResult {
            angles,
            flows_mw,
            currents_a,
            line_in_service: g.line_in_service.clone(),
            diverged: false,
            de_energized: Vec::new(),
        })
    }
}

/// Solves the DC power flow for one set of injections.
pub fn solve_dc(case: &GridCase, graph: &ElectricalGraph, injections: &Injections) -> Result<PowerFlowResult, PowerFlowError> {
    DcModel::new(case, graph.clone()).solve(injections)
}
