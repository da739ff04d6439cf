//! Static grid description, the 2-busbar topology model and its expansion
//! into an electrical graph.
//!
//! Every substation owns an ordered list of elements (line ends and
//! injections). A [`Topology`] assigns each element to bus 0 or bus 1 and
//! carries one in-service flag per line. The element order is fixed per
//! substation: line ends sorted by line id (origin before extremity), then
//! generators by id, then loads by id.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The IEEE 14-bus case shipped with the crate (placeholder thermal limits).
pub const IEEE14_CASE: &str = include_str!("../data/ieee14.case");

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read case file {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed case file: {0}")]
    Parse(String),
    #[error("invalid case field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl CaseError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CaseError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("unknown substation {0}")]
    UnknownSubstation(u32),
    #[error("unknown line {0}")]
    UnknownLine(u32),
    #[error("substation {substation} has {expected} elements, got a vector of length {got}")]
    BadVectorLength {
        substation: u32,
        expected: usize,
        got: usize,
    },
    #[error("substation {substation}: bus value {value} is not 0 or 1")]
    BadBusValue { substation: u32, value: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Nuclear,
    Thermal,
    Wind,
    Solar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substation {
    pub id: u32,
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: u32,
    pub from: u32,
    pub to: u32,
    /// Series reactance in p.u. on the case base power.
    pub reactance: f64,
    /// Thermal limit in Amperes.
    pub imax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: u32,
    pub substation: u32,
    pub kind: GeneratorKind,
    pub pmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub id: u32,
    pub substation: u32,
    /// Share of the total demand carried by this load.
    pub key_factor: f64,
}

/// One element attached to a substation; indices point into the case vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Element {
    LineOrigin(usize),
    LineExtremity(usize),
    Generator(usize),
    Load(usize),
}

#[derive(Serialize, Deserialize)]
struct CaseFile {
    slack: u32,
    base_mva: f64,
    substations: Vec<Substation>,
    lines: Vec<Line>,
    generators: Vec<Generator>,
    loads: Vec<Load>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    sub_index: HashMap<u32, usize>,
    line_index: HashMap<u32, usize>,
    elements: Vec<Element>,
    offsets: Arc<[usize]>,
    line_origin_pos: Vec<usize>,
    line_extremity_pos: Vec<usize>,
    generator_pos: Vec<usize>,
    load_pos: Vec<usize>,
    line_from: Vec<usize>,
    line_to: Vec<usize>,
    generator_sub: Vec<usize>,
    load_sub: Vec<usize>,
    slack: usize,
}

/// Validated static grid description.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    substations: Vec<Substation>,
    lines: Vec<Line>,
    generators: Vec<Generator>,
    loads: Vec<Load>,
    slack: u32,
    base_mva: f64,
    layout: Layout,
}

/// Parses the structured-text case format.
impl FromStr for GridCase {
    type Err = CaseError;

    fn from_str(text: &str) -> Result<Self, CaseError> {
        let file: CaseFile = toml::from_str(text).map_err(|e| CaseError::Parse(e.to_string()))?;
        GridCase::new(
            file.substations,
            file.lines,
            file.generators,
            file.loads,
            file.slack,
            file.base_mva,
        )
    }
}

impl GridCase {
    pub fn new(
        substations: Vec<Substation>,
        lines: Vec<Line>,
        generators: Vec<Generator>,
        loads: Vec<Load>,
        slack: u32,
        base_mva: f64,
    ) -> Result<Self, CaseError> {
        let layout = validate(&substations, &lines, &generators, &loads, slack, base_mva)?;
        Ok(GridCase {
            substations,
            lines,
            generators,
            loads,
            slack,
            base_mva,
            layout,
        })
    }

    pub fn ieee14() -> Self {
        GridCase::from_str(IEEE14_CASE).expect("shipped IEEE14 case is valid")
    }

    pub fn to_case_string(&self) -> String {
        let file = CaseFile {
            slack: self.slack,
            base_mva: self.base_mva,
            substations: self.substations.clone(),
            lines: self.lines.clone(),
            generators: self.generators.clone(),
            loads: self.loads.clone(),
        };
        toml::to_string(&file).expect("case serializes")
    }

    pub fn substations(&self) -> &[Substation] {
        &self.substations
    }
    pub fn lines(&self) -> &[Line] {
        &self.lines
    }
    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }
    pub fn loads(&self) -> &[Load] {
        &self.loads
    }
    pub fn slack(&self) -> u32 {
        self.slack
    }
    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn substation_index(&self, id: u32) -> Option<usize> {
        self.layout.sub_index.get(&id).copied()
    }
    pub fn line_index(&self, id: u32) -> Option<usize> {
        self.layout.line_index.get(&id).copied()
    }
    pub fn slack_index(&self) -> usize {
        self.layout.slack
    }

    /// Elements of substation `sub` (by index) in canonical order.
    pub fn substation_elements(&self, sub: usize) -> &[Element] {
        let o = &self.layout.offsets;
        &self.layout.elements[o[sub]..o[sub + 1]]
    }

    pub fn element_count(&self, sub: usize) -> usize {
        let o = &self.layout.offsets;
        o[sub + 1] - o[sub]
    }

    /// Substation indices at both ends of line `line` (by index).
    pub fn line_ends(&self, line: usize) -> (usize, usize) {
        (self.layout.line_from[line], self.layout.line_to[line])
    }
    pub fn generator_substation(&self, gen: usize) -> usize {
        self.layout.generator_sub[gen]
    }
    pub fn load_substation(&self, load: usize) -> usize {
        self.layout.load_sub[load]
    }

    /// Returns a copy with the given per-line thermal limits.
    pub fn with_thermal_limits(&self, imax: &[f64]) -> Result<GridCase, CaseError> {
        if imax.len() != self.lines.len() {
            return Err(CaseError::invalid(
                "lines.imax",
                format!("expected {} limits, got {}", self.lines.len(), imax.len()),
            ));
        }
        let mut lines = self.lines.clone();
        for (line, &limit) in lines.iter_mut().zip(imax) {
            line.imax = limit;
        }
        GridCase::new(
            self.substations.clone(),
            lines,
            self.generators.clone(),
            self.loads.clone(),
            self.slack,
            self.base_mva,
        )
    }

    /// Flat positions of each line origin/extremity, generator and load
    /// inside a topology bus vector.
    pub(crate) fn line_origin_pos(&self, line: usize) -> usize {
        self.layout.line_origin_pos[line]
    }
    pub(crate) fn line_extremity_pos(&self, line: usize) -> usize {
        self.layout.line_extremity_pos[line]
    }
    pub(crate) fn generator_pos(&self, gen: usize) -> usize {
        self.layout.generator_pos[gen]
    }
    pub(crate) fn load_pos(&self, load: usize) -> usize {
        self.layout.load_pos[load]
    }
}

/// Reads and validates a case file.
pub fn load_case(path: impl AsRef<Path>) -> Result<GridCase, CaseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    GridCase::from_str(&text).map_err(|e| match e {
        CaseError::Parse(m) => CaseError::Parse(format!("{}: {m}", path.display())),
        CaseError::Invalid { field, reason } => CaseError::Invalid {
            field,
            reason: format!("{reason} (in {})", path.display()),
        },
        e => e,
    })
}

fn index_ids<I: Iterator<Item = u32>>(ids: I, field: &str) -> Result<HashMap<u32, usize>, CaseError> {
    let mut map = HashMap::new();
    for (i, id) in ids.enumerate() {
        if map.insert(id, i).is_some() {
            return Err(CaseError::invalid(format!("{field}.id"), format!("duplicate id {id}")));
        }
    }
    Ok(map)
}

fn validate(
    substations: &[Substation],
    lines: &[Line],
    generators: &[Generator],
    loads: &[Load],
    slack: u32,
    base_mva: f64,
) -> Result<Layout, CaseError> {
    if substations.is_empty() {
        return Err(CaseError::invalid("substations", "no substations"));
    }
    if !(base_mva > 0.0 && base_mva.is_finite()) {
        return Err(CaseError::invalid("base_mva", format!("must be positive, got {base_mva}")));
    }
    let sub_index = index_ids(substations.iter().map(|s| s.id), "substations")?;
    let line_index = index_ids(lines.iter().map(|l| l.id), "lines")?;
    index_ids(generators.iter().map(|g| g.id), "generators")?;
    index_ids(loads.iter().map(|l| l.id), "loads")?;

    for s in substations {
        if !(s.base_kv > 0.0 && s.base_kv.is_finite()) {
            return Err(CaseError::invalid(
                "substations.base_kv",
                format!("substation {}: must be positive, got {}", s.id, s.base_kv),
            ));
        }
    }
    let sub_of = |field: &str, owner: String, id: u32| {
        sub_index
            .get(&id)
            .copied()
            .ok_or_else(|| CaseError::invalid(field, format!("{owner}: unknown substation {id}")))
    };
    let mut line_from = Vec::with_capacity(lines.len());
    let mut line_to = Vec::with_capacity(lines.len());
    for l in lines {
        let f = sub_of("lines.from", format!("line {}", l.id), l.from)?;
        let t = sub_of("lines.to", format!("line {}", l.id), l.to)?;
        if f == t {
            return Err(CaseError::invalid(
                "lines.to",
                format!("line {} connects substation {} to itself", l.id, l.from),
            ));
        }
        if !(l.reactance > 0.0 && l.reactance.is_finite()) {
            return Err(CaseError::invalid(
                "lines.reactance",
                format!("line {}: must be positive, got {}", l.id, l.reactance),
            ));
        }
        if !(l.imax > 0.0 && l.imax.is_finite()) {
            return Err(CaseError::invalid(
                "lines.imax",
                format!("line {}: must be positive, got {}", l.id, l.imax),
            ));
        }
        line_from.push(f);
        line_to.push(t);
    }
    let mut generator_sub = Vec::with_capacity(generators.len());
    for g in generators {
        generator_sub.push(sub_of("generators.substation", format!("generator {}", g.id), g.substation)?);
        if !(g.pmax >= 0.0 && g.pmax.is_finite()) {
            return Err(CaseError::invalid(
                "generators.pmax",
                format!("generator {}: must be non-negative, got {}", g.id, g.pmax),
            ));
        }
    }
    let mut load_sub = Vec::with_capacity(loads.len());
    let mut key_sum = 0.0;
    for l in loads {
        load_sub.push(sub_of("loads.substation", format!("load {}", l.id), l.substation)?);
        if !(l.key_factor > 0.0 && l.key_factor.is_finite()) {
            return Err(CaseError::invalid(
                "loads.key_factor",
                format!("load {}: must be positive, got {}", l.id, l.key_factor),
            ));
        }
        key_sum += l.key_factor;
    }
    if !loads.is_empty() && (key_sum - 1.0).abs() > 1e-6 {
        return Err(CaseError::invalid(
            "loads.key_factor",
            format!("key factors sum to {key_sum}, expected 1"),
        ));
    }
    let slack_idx = *sub_index
        .get(&slack)
        .ok_or_else(|| CaseError::invalid("slack", format!("unknown substation {slack}")))?;

    // Reference topology must be connected.
    let mut uf = UnionFind::new(substations.len());
    for (&f, &t) in line_from.iter().zip(&line_to) {
        uf.union(f, t);
    }
    let root = uf.find(0);
    if let Some(s) = (0..substations.len()).find(|&s| uf.find(s) != root) {
        return Err(CaseError::invalid(
            "lines",
            format!("reference grid is disconnected (substation {} unreachable)", substations[s].id),
        ));
    }

    // Canonical element order per substation.
    let n_sub = substations.len();
    let mut per_sub: Vec<Vec<Element>> = vec![Vec::new(); n_sub];
    let mut line_order: Vec<usize> = (0..lines.len()).collect();
    line_order.sort_by_key(|&i| lines[i].id);
    for &i in &line_order {
        per_sub[line_from[i]].push(Element::LineOrigin(i));
        per_sub[line_to[i]].push(Element::LineExtremity(i));
    }
    let mut gen_order: Vec<usize> = (0..generators.len()).collect();
    gen_order.sort_by_key(|&i| generators[i].id);
    for &i in &gen_order {
        per_sub[generator_sub[i]].push(Element::Generator(i));
    }
    let mut load_order: Vec<usize> = (0..loads.len()).collect();
    load_order.sort_by_key(|&i| loads[i].id);
    for &i in &load_order {
        per_sub[load_sub[i]].push(Element::Load(i));
    }

    let mut offsets = Vec::with_capacity(n_sub + 1);
    let mut elements = Vec::new();
    let mut line_origin_pos = vec![0; lines.len()];
    let mut line_extremity_pos = vec![0; lines.len()];
    let mut generator_pos = vec![0; generators.len()];
    let mut load_pos = vec![0; loads.len()];
    for list in per_sub {
        offsets.push(elements.len());
        for e in list {
            let pos = elements.len();
            match e {
                Element::LineOrigin(i) => line_origin_pos[i] = pos,
                Element::LineExtremity(i) => line_extremity_pos[i] = pos,
                Element::Generator(i) => generator_pos[i] = pos,
                Element::Load(i) => load_pos[i] = pos,
            }
            elements.push(e);
        }
    }
    offsets.push(elements.len());

    Ok(Layout {
        sub_index,
        line_index,
        elements,
        offsets: offsets.into(),
        line_origin_pos,
        line_extremity_pos,
        generator_pos,
        load_pos,
        line_from,
        line_to,
        generator_sub,
        load_sub,
        slack: slack_idx,
    })
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }
    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root so island order is stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Flips a bus vector so that its first element sits on bus 0.
pub fn normalize_buses(buses: &mut [u8]) {
    if buses.first() == Some(&1) {
        for b in buses.iter_mut() {
            *b ^= 1;
        }
    }
}

/// Busbar assignments of every substation element plus line status.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Topology {
    offsets: Arc<[usize]>,
    buses: Vec<u8>,
    lines: Vec<bool>,
}

impl Topology {
    /// All elements on bus 0, every line in service.
    pub fn reference(case: &GridCase) -> Self {
        Topology {
            offsets: case.layout.offsets.clone(),
            buses: vec![0; case.layout.elements.len()],
            lines: vec![true; case.lines.len()],
        }
    }

    pub fn n_substations(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn substation(&self, sub: usize) -> &[u8] {
        &self.buses[self.offsets[sub]..self.offsets[sub + 1]]
    }

    pub fn line_in_service(&self, line: usize) -> bool {
        self.lines[line]
    }

    pub fn lines_in_service(&self) -> &[bool] {
        &self.lines
    }

    pub(crate) fn bus_at(&self, pos: usize) -> u8 {
        self.buses[pos]
    }

    pub(crate) fn set_line(&mut self, line: usize, in_service: bool) {
        self.lines[line] = in_service;
    }

    pub(crate) fn set_substation(&mut self, sub: usize, buses: &[u8]) {
        let range = self.offsets[sub]..self.offsets[sub + 1];
        self.buses[range].copy_from_slice(buses);
    }

    /// Substation indices whose bus vector differs from `other`.
    pub fn differing_substations(&self, other: &Topology) -> Vec<usize> {
        (0..self.n_substations())
            .filter(|&s| self.substation(s) != other.substation(s))
            .collect()
    }

    /// Line indices whose status differs from `other`.
    pub fn differing_lines(&self, other: &Topology) -> Vec<usize> {
        (0..self.lines.len()).filter(|&l| self.lines[l] != other.lines[l]).collect()
    }
}

/// A controllable asset: a substation (bus reconfiguration) or a line
/// (status switching).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Asset {
    Substation(u32),
    Line(u32),
}

impl fmt::Display for Asset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Asset::Substation(id) => write!(f, "sub {id}"),
            Asset::Line(id) => write!(f, "line {id}"),
        }
    }
}

/// A unitary topological action.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    DoNothing,
    SwitchLine { line: u32 },
    SetSubstation { substation: u32, buses: Vec<u8> },
}

impl Action {
    pub fn asset(&self) -> Option<Asset> {
        match self {
            Action::DoNothing => None,
            Action::SwitchLine { line } => Some(Asset::Line(*line)),
            Action::SetSubstation { substation, .. } => Some(Asset::Substation(*substation)),
        }
    }

    pub fn is_do_nothing(&self) -> bool {
        matches!(self, Action::DoNothing)
    }

    /// Checks that the action refers to existing assets with a well-formed
    /// bus vector.
    pub fn validate(&self, case: &GridCase) -> Result<(), TopologyError> {
        match self {
            Action::DoNothing => Ok(()),
            Action::SwitchLine { line } => case
                .line_index(*line)
                .map(|_| ())
                .ok_or(TopologyError::UnknownLine(*line)),
            Action::SetSubstation { substation, buses } => {
                let sub = case
                    .substation_index(*substation)
                    .ok_or(TopologyError::UnknownSubstation(*substation))?;
                let expected = case.element_count(sub);
                if buses.len() != expected {
                    return Err(TopologyError::BadVectorLength {
                        substation: *substation,
                        expected,
                        got: buses.len(),
                    });
                }
                if let Some(&value) = buses.iter().find(|&&b| b > 1) {
                    return Err(TopologyError::BadBusValue {
                        substation: *substation,
                        value,
                    });
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::DoNothing => write!(f, "do-nothing"),
            Action::SwitchLine { line } => write!(f, "switch line {line}"),
            Action::SetSubstation { substation, buses } => {
                write!(f, "sub {substation} {buses:?}")
            }
        }
    }
}

/// Pure topology transform. No legality check beyond asset existence and
/// vector shape.
pub fn apply_action(case: &GridCase, topology: &Topology, action: &Action) -> Result<Topology, TopologyError> {
    action.validate(case)?;
    let mut next = topology.clone();
    match action {
        Action::DoNothing => {}
        Action::SwitchLine { line } => {
            let idx = case.line_index(*line).expect("validated");
            next.lines[idx] = !next.lines[idx];
        }
        Action::SetSubstation { substation, buses } => {
            let idx = case.substation_index(*substation).expect("validated");
            let mut v = buses.clone();
            normalize_buses(&mut v);
            next.set_substation(idx, &v);
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElectricalNode {
    pub substation: usize,
    pub bus: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    /// Line index in the case.
    pub line: usize,
    pub from: usize,
    pub to: usize,
    /// 1 / reactance, p.u.
    pub susceptance: f64,
}

/// Realization of a topology for the power-flow solver.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectricalGraph {
    pub nodes: Vec<ElectricalNode>,
    pub branches: Vec<Branch>,
    pub generator_node: Vec<usize>,
    pub load_node: Vec<usize>,
    pub slack: Option<usize>,
    /// Per-line in-service flag (indexed like the case lines).
    pub line_in_service: Vec<bool>,
}

/// Builds the electrical graph: one node per (substation, bus) holding at
/// least one injection or in-service line end.
pub fn expand_topology(case: &GridCase, topology: &Topology) -> ElectricalGraph {
    assert_eq!(topology.buses.len(), case.layout.elements.len(), "topology shape does not match case");
    let n_sub = case.substations.len();
    let mut used = vec![[false; 2]; n_sub];
    for (l, &in_service) in topology.lines.iter().enumerate() {
        if in_service {
            let (f, t) = case.line_ends(l);
            used[f][topology.bus_at(case.line_origin_pos(l)) as usize] = true;
            used[t][topology.bus_at(case.line_extremity_pos(l)) as usize] = true;
        }
    }
    for g in 0..case.generators.len() {
        used[case.generator_substation(g)][topology.bus_at(case.generator_pos(g)) as usize] = true;
    }
    for d in 0..case.loads.len() {
        used[case.load_substation(d)][topology.bus_at(case.load_pos(d)) as usize] = true;
    }

    let mut node_of = vec![[usize::MAX; 2]; n_sub];
    let mut nodes = Vec::with_capacity(n_sub + 2);
    for (s, u) in used.iter().enumerate() {
        for bus in 0..2u8 {
            if u[bus as usize] {
                node_of[s][bus as usize] = nodes.len();
                nodes.push(ElectricalNode { substation: s, bus });
            }
        }
    }

    let mut branches = Vec::with_capacity(case.lines.len());
    for (l, line) in case.lines.iter().enumerate() {
        if topology.lines[l] {
            let (f, t) = case.line_ends(l);
            branches.push(Branch {
                line: l,
                from: node_of[f][topology.bus_at(case.line_origin_pos(l)) as usize],
                to: node_of[t][topology.bus_at(case.line_extremity_pos(l)) as usize],
                susceptance: 1.0 / line.reactance,
            });
        }
    }
    let generator_node: Vec<usize> = (0..case.generators.len())
        .map(|g| node_of[case.generator_substation(g)][topology.bus_at(case.generator_pos(g)) as usize])
        .collect();
    let load_node: Vec<usize> = (0..case.loads.len())
        .map(|d| node_of[case.load_substation(d)][topology.bus_at(case.load_pos(d)) as usize])
        .collect();

    let slack_sub = case.slack_index();
    let slack = largest_generator(case, (0..case.generators.len()).filter(|&g| case.generator_substation(g) == slack_sub))
        .map(|g| generator_node[g])
        .or_else(|| nodes.iter().position(|n| n.substation == slack_sub));

    ElectricalGraph {
        nodes,
        branches,
        generator_node,
        load_node,
        slack,
        line_in_service: topology.lines.clone(),
    }
}

/// Largest-pmax generator among `candidates`, lowest index on ties.
pub(crate) fn largest_generator(case: &GridCase, candidates: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for g in candidates {
        match best {
            Some(b) if case.generators[b].pmax >= case.generators[g].pmax => {}
            _ => best = Some(g),
        }
    }
    best
}

/// Minimal number of dictionary actions turning `reference` into
/// `topology`, or `None` when no composition reaches it.
///
/// Bus reconfigurations overwrite a whole substation and line switches
/// toggle, so the minimum is one action per differing asset provided each
/// differing asset's target state is produced by a single dictionary action.
pub fn action_depth(case: &GridCase, topology: &Topology, reference: &Topology, dictionary: &[Action]) -> Option<usize> {
    let mut depth = 0;
    for l in topology.differing_lines(reference) {
        let id = case.lines[l].id;
        if !dictionary.iter().any(|a| matches!(a, Action::SwitchLine { line } if *line == id)) {
            return None;
        }
        depth += 1;
    }
    for s in topology.differing_substations(reference) {
        let id = case.substations[s].id;
        let target = topology.substation(s);
        let reachable = dictionary.iter().any(|a| match a {
            Action::SetSubstation { substation, buses } if *substation == id => {
                let mut v = buses.clone();
                normalize_buses(&mut v);
                v == target
            }
            _ => false,
        });
        if !reachable {
            return None;
        }
        depth += 1;
    }
    Some(depth)
}

/// Assets touched by a set of actions, sorted.
pub fn assets_of(actions: &[Action]) -> BTreeSet<Asset> {
    actions.iter().filter_map(Action::asset).collect()
}
