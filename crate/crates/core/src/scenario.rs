//! Patient-flow state graph, parameter registry and scenario configuration.
//!
//! A scenario is a directed graph of patient states. Every edge carries a
//! branching probability and a mean sojourn time, both of which are looked up
//! by name in a [`ParameterRegistry`]. A [`ParameterVector`] holds one value per
//! registry entry, in registry order; binding a vector to the graph yields a
//! [`BoundGraph`] that the simulation engine walks.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::arrivals::PeakEvent;
use crate::error::{Error, Result};

/// Tolerance used when checking that outgoing probabilities sum to one.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-12;

pub mod states {
    pub const INF: &str = "INF";
    pub const NOR: &str = "NOR";
    pub const ICU: &str = "ICU";
    pub const VEN: &str = "VEN";
    pub const AFT: &str = "AFT";
    pub const HEA: &str = "HEA";
    pub const DEA: &str = "DEA";
}

/// Symbolic patient state identifier.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(String);

impl StateId {
    pub fn new(id: impl Into<String>) -> Self {
        StateId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for StateId {
    fn from(s: &str) -> Self {
        StateId(s.to_owned())
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Where an edge takes its branching probability from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbabilitySource {
    /// Named registry parameter.
    Param(String),
    /// One minus the sum of the sibling edges' probabilities.
    Complement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub from: StateId,
    pub to: StateId,
    pub probability: ProbabilitySource,
    /// Registry parameter holding the mean sojourn time in days.
    pub duration: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    states: Vec<StateId>,
    start: StateId,
    edges: Vec<Transition>,
}

/// Directed graph of patient states. States without outgoing edges are absorbing.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GraphFile", into = "GraphFile")]
pub struct StateGraph {
    states: Vec<StateId>,
    start: usize,
    edges: Vec<Transition>,
    // edge indices per state index
    outgoing: Vec<Vec<usize>>,
    edge_endpoints: Vec<(usize, usize)>,
}

impl PartialEq for StateGraph {
    fn eq(&self, other: &Self) -> bool {
        self.states == other.states && self.start == other.start && self.edges == other.edges
    }
}

impl TryFrom<GraphFile> for StateGraph {
    type Error = Error;

    fn try_from(file: GraphFile) -> Result<Self> {
        StateGraph::new(file.states, file.start, file.edges)
    }
}

impl From<StateGraph> for GraphFile {
    fn from(g: StateGraph) -> Self {
        GraphFile {
            start: g.states[g.start].clone(),
            states: g.states,
            edges: g.edges,
        }
    }
}

impl StateGraph {
    pub fn new(states: Vec<StateId>, start: StateId, edges: Vec<Transition>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &states {
            if !seen.insert(s) {
                return Err(Error::Config(format!("duplicate state id {s}")));
            }
        }
        let index = |id: &StateId| {
            states
                .iter()
                .position(|s| s == id)
                .ok_or_else(|| Error::Config(format!("edge references unknown state {id}")))
        };
        let start_idx = index(&start)?;
        let mut outgoing = vec![Vec::new(); states.len()];
        let mut edge_endpoints = Vec::with_capacity(edges.len());
        for (e, t) in edges.iter().enumerate() {
            let (from, to) = (index(&t.from)?, index(&t.to)?);
            if outgoing[from].iter().any(|&o| edge_endpoints[o] == (from, to)) {
                return Err(Error::Config(format!("duplicate edge {} -> {}", t.from, t.to)));
            }
            outgoing[from].push(e);
            edge_endpoints.push((from, to));
        }
        for (s, out) in outgoing.iter().enumerate() {
            let complements = out
                .iter()
                .filter(|&&e| edges[e].probability == ProbabilitySource::Complement)
                .count();
            if complements > 1 {
                return Err(Error::Config(format!(
                    "state {} has {complements} complement edges, at most one allowed",
                    states[s]
                )));
            }
        }
        Ok(StateGraph {
            states,
            start: start_idx,
            edges,
            outgoing,
            edge_endpoints,
        })
    }

    pub fn states(&self) -> &[StateId] {
        &self.states
    }

    pub fn edges(&self) -> &[Transition] {
        &self.edges
    }

    pub fn start(&self) -> &StateId {
        &self.states[self.start]
    }

    pub fn start_index(&self) -> usize {
        self.start
    }

    pub fn state_index(&self, id: &str) -> Option<usize> {
        self.states.iter().position(|s| s.as_str() == id)
    }

    /// Edges leaving `state`, in declaration order.
    pub fn outgoing(&self, state: &str) -> Vec<&Transition> {
        match self.state_index(state) {
            Some(i) => self.outgoing[i].iter().map(|&e| &self.edges[e]).collect(),
            None => Vec::new(),
        }
    }

    pub fn is_absorbing(&self, state: &str) -> bool {
        self.state_index(state)
            .is_some_and(|i| self.outgoing[i].is_empty())
    }

    /// True when some cycle is reachable from the start state.
    pub fn has_reachable_cycle(&self) -> bool {
        // 0 = unvisited, 1 = on stack, 2 = done
        fn visit(g: &StateGraph, s: usize, mark: &mut [u8]) -> bool {
            mark[s] = 1;
            for &e in &g.outgoing[s] {
                let to = g.edge_endpoints[e].1;
                if mark[to] == 1 || (mark[to] == 0 && visit(g, to, mark)) {
                    return true;
                }
            }
            mark[s] = 2;
            false
        }
        let mut mark = vec![0u8; self.states.len()];
        visit(self, self.start, &mut mark)
    }

    /// Checks that every parameter the graph refers to exists in `registry` with a
    /// matching kind.
    pub fn check_registry(&self, registry: &ParameterRegistry) -> Result<()> {
        for t in &self.edges {
            let d = registry
                .get(&t.duration)
                .ok_or_else(|| Error::Config(format!("unknown duration parameter {}", t.duration)))?;
            if d.kind != ParameterKind::Duration {
                return Err(Error::Config(format!("{} is not a duration parameter", t.duration)));
            }
            if let ProbabilitySource::Param(p) = &t.probability {
                let spec = registry
                    .get(p)
                    .ok_or_else(|| Error::Config(format!("unknown probability parameter {p}")))?;
                if spec.kind != ParameterKind::Probability {
                    return Err(Error::Config(format!("{p} is not a probability parameter")));
                }
            }
        }
        let shapes = registry
            .entries()
            .iter()
            .filter(|e| e.kind == ParameterKind::Shape)
            .count();
        if shapes != 1 {
            return Err(Error::Config(format!(
                "registry must contain exactly one shape parameter, found {shapes}"
            )));
        }
        Ok(())
    }

    /// Resolves every edge probability and duration against `vector`.
    ///
    /// Fails with [`Error::Validation`] if the vector violates any invariant.
    pub fn bind(&self, registry: &ParameterRegistry, vector: &ParameterVector) -> Result<BoundGraph> {
        let report = validate(self, registry, vector)?;
        if !report.is_valid() {
            return Err(Error::Validation(report));
        }
        self.check_registry(registry)?;
        let value = |name: &str| vector.values[registry.index_of(name).expect("checked")];
        let shape_idx = registry
            .entries()
            .iter()
            .position(|e| e.kind == ParameterKind::Shape)
            .expect("checked");
        let mut outgoing = Vec::with_capacity(self.states.len());
        for out in &self.outgoing {
            let mut edges: Vec<BoundEdge> = out
                .iter()
                .map(|&e| {
                    let t = &self.edges[e];
                    let probability = match &t.probability {
                        ProbabilitySource::Param(p) => value(p),
                        ProbabilitySource::Complement => f64::NAN,
                    };
                    BoundEdge {
                        to: self.edge_endpoints[e].1,
                        probability,
                        mean_days: value(&t.duration),
                    }
                })
                .collect();
            let free: f64 = edges
                .iter()
                .filter(|e| !e.probability.is_nan())
                .map(|e| e.probability)
                .sum();
            for e in edges.iter_mut().filter(|e| e.probability.is_nan()) {
                e.probability = (1.0 - free).max(0.0);
            }
            outgoing.push(edges);
        }
        Ok(BoundGraph {
            start: self.start,
            outgoing,
            gamma_shape: vector.values[shape_idx],
        })
    }

    /// The seven-state, thirteen-edge hospital graph together with its registry.
    pub fn canonical() -> (StateGraph, ParameterRegistry) {
        use states::*;
        use ProbabilitySource::{Complement, Param};
        let edge = |from: &str, to: &str, p: ProbabilitySource, d: &str| Transition {
            from: from.into(),
            to: to.into(),
            probability: p,
            duration: d.to_owned(),
        };
        let p = |name: &str| Param(name.to_owned());
        let edges = vec![
            edge(INF, NOR, p("PercentageInfectedToHospital"), "DaysInfectedToHospital"),
            edge(INF, HEA, Complement, "DaysInfectedToHealthy"),
            edge(NOR, HEA, Complement, "DaysNormalToHealthy"),
            edge(NOR, ICU, p("PercentageHospitalToIntensive"), "DaysNormalToIntensive"),
            edge(NOR, VEN, p("PercentageHospitalToVentilation"), "DaysNormalToVentilation"),
            edge(NOR, DEA, p("PercentageHospitalToDeath"), "DaysNormalToDeath"),
            edge(ICU, VEN, p("PercentageIntensiveToVentilation"), "DaysIntensiveToVentilation"),
            edge(ICU, AFT, Complement, "DaysIntensiveToAftercare"),
            edge(ICU, DEA, p("PercentageIntensiveToDeath"), "DaysIntensiveToDeath"),
            edge(VEN, AFT, Complement, "DaysVentilationToAftercare"),
            edge(VEN, DEA, p("PercentageVentilationToDeath"), "DaysVentilationToDeath"),
            edge(AFT, HEA, Complement, "DaysAftercareToHealthy"),
            edge(AFT, DEA, p("PercentageAftercareToDeath"), "DaysAftercareToDeath"),
        ];
        let graph = StateGraph::new(
            [INF, NOR, ICU, VEN, AFT, HEA, DEA].map(StateId::from).to_vec(),
            INF.into(),
            edges,
        )
        .expect("canonical graph is well formed");
        (graph, ParameterRegistry::canonical())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundEdge {
    pub to: usize,
    pub probability: f64,
    pub mean_days: f64,
}

/// A state graph with all probabilities and durations resolved to numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundGraph {
    pub start: usize,
    pub outgoing: Vec<Vec<BoundEdge>>,
    pub gamma_shape: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParameterKind {
    Probability,
    Duration,
    Shape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub default: f64,
    pub kind: ParameterKind,
}

/// Ordered, named model parameters with plausible intervals. Entry order
/// defines the layout of every [`ParameterVector`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ParameterSpec>", into = "Vec<ParameterSpec>")]
pub struct ParameterRegistry {
    entries: Vec<ParameterSpec>,
}

impl TryFrom<Vec<ParameterSpec>> for ParameterRegistry {
    type Error = Error;

    fn try_from(entries: Vec<ParameterSpec>) -> Result<Self> {
        ParameterRegistry::new(entries)
    }
}

impl From<ParameterRegistry> for Vec<ParameterSpec> {
    fn from(r: ParameterRegistry) -> Self {
        r.entries
    }
}

impl ParameterRegistry {
    pub fn new(entries: Vec<ParameterSpec>) -> Result<Self> {
        let mut names = HashSet::new();
        for e in &entries {
            if !names.insert(e.name.as_str()) {
                return Err(Error::Config(format!("duplicate parameter {}", e.name)));
            }
            if !(e.lower.is_finite() && e.upper.is_finite() && e.default.is_finite()) {
                return Err(Error::Config(format!("{}: bounds must be finite", e.name)));
            }
            if !(e.lower <= e.default && e.default <= e.upper) {
                return Err(Error::Config(format!(
                    "{}: default {} outside [{}, {}]",
                    e.name, e.default, e.lower, e.upper
                )));
            }
            if e.kind == ParameterKind::Probability && (e.lower < 0.0 || e.upper > 1.0) {
                return Err(Error::Config(format!(
                    "{}: probability bounds must lie in [0, 1]",
                    e.name
                )));
            }
            if e.kind != ParameterKind::Probability && e.lower <= 0.0 {
                return Err(Error::Config(format!("{}: lower bound must be > 0", e.name)));
            }
        }
        Ok(ParameterRegistry { entries })
    }

    pub fn canonical() -> Self {
        use ParameterKind::*;
        let spec = |name: &str, lower, upper, default, kind| ParameterSpec {
            name: name.to_owned(),
            lower,
            upper,
            default,
            kind,
        };
        // Order is part of the file format: analyses refer to parameters by
        // position (x_1 is DaysInfectedToHospital, x_16 GammaShapeParameter).
        Self::new(vec![
            spec("DaysInfectedToHospital", 3.0, 14.0, 7.0, Duration),
            spec("DaysNormalToHealthy", 4.0, 20.0, 10.0, Duration),
            spec("DaysInfectedToHealthy", 7.0, 21.0, 14.0, Duration),
            spec("DaysNormalToIntensive", 1.0, 10.0, 3.0, Duration),
            spec("DaysNormalToVentilation", 1.0, 10.0, 3.0, Duration),
            spec("DaysNormalToDeath", 2.0, 20.0, 8.0, Duration),
            spec("DaysIntensiveToVentilation", 1.0, 10.0, 3.0, Duration),
            spec("DaysIntensiveToAftercare", 2.0, 20.0, 7.0, Duration),
            spec("DaysIntensiveToDeath", 2.0, 20.0, 10.0, Duration),
            spec("DaysVentilationToAftercare", 4.0, 30.0, 12.0, Duration),
            spec("DaysVentilationToDeath", 4.0, 30.0, 12.0, Duration),
            spec("DaysAftercareToHealthy", 2.0, 20.0, 7.0, Duration),
            spec("DaysAftercareToDeath", 2.0, 20.0, 10.0, Duration),
            spec("PercentageInfectedToHospital", 0.05, 0.3, 0.135, Probability),
            spec("PercentageHospitalToIntensive", 0.0, 0.3, 0.1, Probability),
            spec("GammaShapeParameter", 0.5, 5.0, 1.0, Shape),
            spec("PercentageHospitalToDeath", 0.0, 0.3, 0.05, Probability),
            spec("PercentageIntensiveToVentilation", 0.0, 0.5, 0.1, Probability),
            spec("PercentageHospitalToVentilation", 0.0, 0.3, 0.1, Probability),
            spec("PercentageIntensiveToDeath", 0.0, 0.5, 0.1, Probability),
            spec("PercentageVentilationToDeath", 0.0, 0.5, 0.2, Probability),
            spec("PercentageAftercareToDeath", 0.0, 0.5, 0.1, Probability),
        ])
        .expect("canonical registry is well formed")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParameterSpec] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ParameterSpec> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.entries.iter().map(|e| (e.lower, e.upper)).collect()
    }

    pub fn defaults(&self) -> ParameterVector {
        ParameterVector::from_raw(self.entries.iter().map(|e| e.default).collect())
    }

    /// Builds a vector, rejecting wrong lengths and out-of-bounds values.
    pub fn vector(&self, values: Vec<f64>) -> Result<ParameterVector> {
        if values.len() != self.len() {
            return Err(Error::Structural(format!(
                "parameter vector has {} values, registry has {}",
                values.len(),
                self.len()
            )));
        }
        for (e, &v) in self.entries.iter().zip(&values) {
            if !(v >= e.lower && v <= e.upper) {
                return Err(Error::param(format!(
                    "{} = {v} outside plausible interval [{}, {}]",
                    e.name, e.lower, e.upper
                )));
            }
        }
        Ok(ParameterVector { values })
    }

    /// Builds a vector from defaults overridden by `(name, value)` pairs.
    pub fn vector_with<'a>(
        &self,
        overrides: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Result<ParameterVector> {
        let mut values = self.defaults().values;
        for (name, v) in overrides {
            let i = self
                .index_of(name)
                .ok_or_else(|| Error::param(format!("unknown parameter {name}")))?;
            values[i] = v;
        }
        self.vector(values)
    }
}

/// One value per registry entry, in registry order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector {
    values: Vec<f64>,
}

impl ParameterVector {
    /// Wraps raw values without any bounds check. Use [`ParameterRegistry::vector`]
    /// for checked construction.
    pub fn from_raw(values: Vec<f64>) -> Self {
        ParameterVector { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, registry: &ParameterRegistry, name: &str) -> Option<f64> {
        registry.index_of(name).map(|i| self.values[i])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    ProbabilitySum { state: StateId, sum: f64 },
    NegativeComplement { state: StateId, free_sum: f64 },
    NonPositiveDuration { param: String, value: f64 },
    OutOfBounds { param: String, value: f64, lower: f64, upper: f64 },
    UnknownParameter { param: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ProbabilitySum { state, sum } => {
                write!(f, "state {state}: outgoing probabilities sum to {sum}, expected 1")
            }
            Violation::NegativeComplement { state, free_sum } => write!(
                f,
                "state {state}: free probabilities sum to {free_sum} > 1, complement would be negative"
            ),
            Violation::NonPositiveDuration { param, value } => {
                write!(f, "{param} = {value}: duration must be > 0")
            }
            Violation::OutOfBounds { param, value, lower, upper } => {
                write!(f, "{param} = {value} outside [{lower}, {upper}]")
            }
            Violation::UnknownParameter { param } => write!(f, "unknown parameter {param}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// True when some violation concerns the given state.
    pub fn mentions_state(&self, state: &str) -> bool {
        self.violations.iter().any(|v| match v {
            Violation::ProbabilitySum { state: s, .. }
            | Violation::NegativeComplement { state: s, .. } => s.as_str() == state,
            _ => false,
        })
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Reports every invariant `vector` violates when bound to `graph`.
///
/// A length mismatch is a structural error rather than a report entry.
pub fn validate(
    graph: &StateGraph,
    registry: &ParameterRegistry,
    vector: &ParameterVector,
) -> Result<ValidationReport> {
    if vector.len() != registry.len() {
        return Err(Error::Structural(format!(
            "parameter vector has {} values, registry has {}",
            vector.len(),
            registry.len()
        )));
    }
    let mut report = ValidationReport::default();
    for (e, &v) in registry.entries().iter().zip(vector.as_slice()) {
        if !(v >= e.lower && v <= e.upper) {
            report.violations.push(Violation::OutOfBounds {
                param: e.name.clone(),
                value: v,
                lower: e.lower,
                upper: e.upper,
            });
        }
        if e.kind != ParameterKind::Probability && !(v > 0.0) {
            report.violations.push(Violation::NonPositiveDuration {
                param: e.name.clone(),
                value: v,
            });
        }
    }
    let lookup = |name: &str| registry.index_of(name).map(|i| vector.as_slice()[i]);
    for state in graph.states() {
        let out = graph.outgoing(state.as_str());
        if out.is_empty() {
            continue;
        }
        let mut free = 0.0;
        let mut has_complement = false;
        for t in &out {
            match &t.probability {
                ProbabilitySource::Param(p) => match lookup(p) {
                    Some(v) => free += v,
                    None => report
                        .violations
                        .push(Violation::UnknownParameter { param: p.clone() }),
                },
                ProbabilitySource::Complement => has_complement = true,
            }
            if lookup(&t.duration).is_none() {
                report.violations.push(Violation::UnknownParameter {
                    param: t.duration.clone(),
                });
            }
        }
        if has_complement {
            if free > 1.0 + PROBABILITY_SUM_TOLERANCE {
                report.violations.push(Violation::NegativeComplement {
                    state: state.clone(),
                    free_sum: free,
                });
            }
        } else if (free - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            report.violations.push(Violation::ProbabilitySum {
                state: state.clone(),
                sum: free,
            });
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceKind {
    Bed,
    Icu,
    Vent,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 3] = [ResourceKind::Bed, ResourceKind::Icu, ResourceKind::Vent];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ResourceKind::Bed => "bed",
            ResourceKind::Icu => "icu",
            ResourceKind::Vent => "vent",
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which resource a patient consumes while in a given state. Unmapped states
/// consume nothing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceMapping(BTreeMap<StateId, ResourceKind>);

impl ResourceMapping {
    pub fn new(map: BTreeMap<StateId, ResourceKind>) -> Self {
        ResourceMapping(map)
    }

    pub fn canonical() -> Self {
        use states::*;
        ResourceMapping(
            [
                (NOR, ResourceKind::Bed),
                (AFT, ResourceKind::Bed),
                (ICU, ResourceKind::Icu),
                (VEN, ResourceKind::Vent),
            ]
            .into_iter()
            .map(|(s, r)| (StateId::from(s), r))
            .collect(),
        )
    }

    pub fn resource(&self, state: &str) -> Option<ResourceKind> {
        self.0.get(&StateId::from(state)).copied()
    }

    /// Per-state-index lookup table for `graph`.
    pub fn table(&self, graph: &StateGraph) -> Vec<Option<ResourceKind>> {
        graph.states().iter().map(|s| self.0.get(s).copied()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    pub days: usize,
    pub start_date: NaiveDate,
}

/// Ground-truth demand rates per resource (fractions of windowed incidence).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    pub bed: f64,
    pub icu: f64,
    pub vent: f64,
}

impl Rates {
    pub fn get(&self, kind: ResourceKind) -> f64 {
        match kind {
            ResourceKind::Bed => self.bed,
            ResourceKind::Icu => self.icu,
            ResourceKind::Vent => self.vent,
        }
    }
}

impl Default for Rates {
    fn default() -> Self {
        Rates {
            bed: 0.10,
            icu: 0.03,
            vent: 0.015,
        }
    }
}

/// Synthetic infection scenario: Poisson base rate plus peak events.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalConfig {
    pub lambda: f64,
    #[serde(default)]
    pub peaks: Vec<PeakEvent>,
}

impl Default for ArrivalConfig {
    fn default() -> Self {
        ArrivalConfig {
            lambda: 4.0,
            peaks: vec![
                PeakEvent { day_index: 20, extra_count: 30 },
                PeakEvent { day_index: 50, extra_count: 40 },
                PeakEvent { day_index: 80, extra_count: 50 },
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    graph: StateGraph,
    registry: ParameterRegistry,
    mapping: ResourceMapping,
    horizon: Horizon,
    rates: Rates,
    replications: usize,
    seed: u64,
    #[serde(default)]
    arrivals: ArrivalConfig,
}

/// Everything needed to run the simulator on one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioFile", into = "ScenarioFile")]
pub struct ScenarioConfig {
    pub graph: StateGraph,
    pub registry: ParameterRegistry,
    pub mapping: ResourceMapping,
    pub horizon: Horizon,
    pub rates: Rates,
    pub replications: usize,
    pub seed: u64,
    pub arrivals: ArrivalConfig,
}

impl TryFrom<ScenarioFile> for ScenarioConfig {
    type Error = Error;

    fn try_from(f: ScenarioFile) -> Result<Self> {
        let config = ScenarioConfig {
            graph: f.graph,
            registry: f.registry,
            mapping: f.mapping,
            horizon: f.horizon,
            rates: f.rates,
            replications: f.replications,
            seed: f.seed,
            arrivals: f.arrivals,
        };
        config.check()?;
        Ok(config)
    }
}

impl From<ScenarioConfig> for ScenarioFile {
    fn from(c: ScenarioConfig) -> Self {
        ScenarioFile {
            graph: c.graph,
            registry: c.registry,
            mapping: c.mapping,
            horizon: c.horizon,
            rates: c.rates,
            replications: c.replications,
            seed: c.seed,
            arrivals: c.arrivals,
        }
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::canonical()
    }
}

impl ScenarioConfig {
    /// Canonical scenario: 91 days from 2020-09-01, default rates, 10 replications.
    pub fn canonical() -> Self {
        let (graph, registry) = StateGraph::canonical();
        ScenarioConfig {
            graph,
            registry,
            mapping: ResourceMapping::canonical(),
            horizon: Horizon {
                days: 91,
                start_date: NaiveDate::from_ymd_opt(2020, 9, 1).expect("valid date"),
            },
            rates: Rates::default(),
            replications: 10,
            seed: 20200901,
            arrivals: ArrivalConfig::default(),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.horizon.days == 0 {
            return Err(Error::Config("horizon must be at least one day".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        for k in ResourceKind::ALL {
            let r = self.rates.get(k);
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("rate for {k} = {r} outside [0, 1]")));
            }
        }
        if !(self.arrivals.lambda > 0.0) {
            return Err(Error::Config("arrival rate lambda must be > 0".into()));
        }
        for p in &self.arrivals.peaks {
            if p.day_index >= self.horizon.days {
                return Err(Error::Config(format!(
                    "peak at day {} outside horizon of {} days",
                    p.day_index, self.horizon.days
                )));
            }
        }
        self.graph.check_registry(&self.registry)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical() -> (StateGraph, ParameterRegistry) {
        StateGraph::canonical()
    }

    #[test]
    fn canonical_graph_shape() {
        let (g, r) = canonical();
        assert_eq!(g.states().len(), 7);
        assert_eq!(g.edges().len(), 13);
        assert_eq!(r.len(), 22);
        let nor = g.outgoing("NOR");
        assert_eq!(nor.len(), 4);
        let complements = nor
            .iter()
            .filter(|t| t.probability == ProbabilitySource::Complement)
            .count();
        assert_eq!(complements, 1);
        assert!(g.is_absorbing("HEA"));
        assert!(g.is_absorbing("DEA"));
        assert!(!g.has_reachable_cycle());

        let kinds = |k| r.entries().iter().filter(|e| e.kind == k).count();
        assert_eq!(kinds(ParameterKind::Probability), 8);
        assert_eq!(kinds(ParameterKind::Duration), 13);
        assert_eq!(kinds(ParameterKind::Shape), 1);
    }

    #[test]
    fn canonical_registry_names() {
        let r = ParameterRegistry::canonical();
        for name in [
            "DaysInfectedToHospital",
            "DaysNormalToHealthy",
            "PercentageHospitalToVentilation",
            "GammaShapeParameter",
        ] {
            assert!(r.get(name).is_some(), "{name}");
        }
        let (g, _) = canonical();
        let inf_nor = &g.outgoing("INF")[0];
        assert_eq!(inf_nor.duration, "DaysInfectedToHospital");
        let nor_hea = g.outgoing("NOR").into_iter().find(|t| t.to.as_str() == "HEA").unwrap();
        assert_eq!(nor_hea.duration, "DaysNormalToHealthy");
        let nor_ven = g.outgoing("NOR").into_iter().find(|t| t.to.as_str() == "VEN").unwrap();
        assert_eq!(
            nor_ven.probability,
            ProbabilitySource::Param("PercentageHospitalToVentilation".into())
        );
    }

    #[test]
    fn every_graph_parameter_has_one_registry_entry() {
        let (g, r) = canonical();
        let mut used: Vec<&str> = g.edges().iter().map(|t| t.duration.as_str()).collect();
        used.extend(g.edges().iter().filter_map(|t| match &t.probability {
            ProbabilitySource::Param(p) => Some(p.as_str()),
            ProbabilitySource::Complement => None,
        }));
        used.push("GammaShapeParameter");
        for name in &used {
            assert_eq!(r.names().filter(|n| n == name).count(), 1, "{name}");
        }
        used.sort_unstable();
        used.dedup();
        assert_eq!(used.len(), r.len());
    }

    #[test]
    fn defaults_are_valid() {
        let (g, r) = canonical();
        let report = validate(&g, &r, &r.defaults()).unwrap();
        assert!(report.is_valid(), "{report}");
    }

    #[test]
    fn over_unity_probabilities_name_the_state() {
        let (g, r) = canonical();
        // NOR free siblings: 0.3 + 0.3 + 0.6 = 1.2
        let mut v = r.defaults().into_inner();
        v[r.index_of("PercentageHospitalToIntensive").unwrap()] = 0.3;
        v[r.index_of("PercentageHospitalToVentilation").unwrap()] = 0.3;
        v[r.index_of("PercentageHospitalToDeath").unwrap()] = 0.6;
        let report = validate(&g, &r, &ParameterVector::from_raw(v)).unwrap();
        assert!(report.mentions_state("NOR"), "{report}");
        assert!(!report.mentions_state("ICU"));
    }

    #[test]
    fn zero_duration_is_flagged() {
        let (g, r) = canonical();
        let mut v = r.defaults().into_inner();
        v[r.index_of("DaysNormalToHealthy").unwrap()] = 0.0;
        let report = validate(&g, &r, &ParameterVector::from_raw(v)).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|x| matches!(x, Violation::NonPositiveDuration { param, .. } if param == "DaysNormalToHealthy")));
        assert!(report.to_string().contains("duration must be > 0"));
    }

    #[test]
    fn length_mismatch_is_structural() {
        let (g, r) = canonical();
        let err = validate(&g, &r, &ParameterVector::from_raw(vec![1.0; 3])).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
        assert!(matches!(r.vector(vec![1.0; 3]), Err(Error::Structural(_))));
    }

    #[test]
    fn out_of_bounds_construction_fails() {
        let r = ParameterRegistry::canonical();
        let err = r.vector_with([("GammaShapeParameter", 50.0)]).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
        assert!(r.vector_with([("Nope", 1.0)]).is_err());
    }

    #[test]
    fn bound_probabilities_sum_to_one() {
        let (g, r) = canonical();
        let bound = g.bind(&r, &r.defaults()).unwrap();
        for (s, out) in bound.outgoing.iter().enumerate() {
            if out.is_empty() {
                continue;
            }
            let sum: f64 = out.iter().map(|e| e.probability).sum();
            assert!((sum - 1.0).abs() < PROBABILITY_SUM_TOLERANCE, "state {s}: {sum}");
        }
        assert_eq!(bound.gamma_shape, 1.0);
    }

    #[test]
    fn box_corners_are_valid() {
        // Every vector inside the plausible box binds, so the optimizer never
        // proposes an invalid parameter set.
        let (g, r) = canonical();
        let upper = ParameterVector::from_raw(r.entries().iter().map(|e| e.upper).collect());
        let lower = ParameterVector::from_raw(r.entries().iter().map(|e| e.lower).collect());
        assert!(validate(&g, &r, &upper).unwrap().is_valid());
        assert!(validate(&g, &r, &lower).unwrap().is_valid());
    }

    #[test]
    fn malformed_graphs_are_rejected() {
        let two = |p1, p2| {
            StateGraph::new(
                vec!["A".into(), "B".into(), "C".into()],
                "A".into(),
                vec![
                    Transition { from: "A".into(), to: "B".into(), probability: p1, duration: "d".into() },
                    Transition { from: "A".into(), to: "C".into(), probability: p2, duration: "d".into() },
                ],
            )
        };
        assert!(two(ProbabilitySource::Complement, ProbabilitySource::Complement).is_err());
        assert!(two(ProbabilitySource::Param("p".into()), ProbabilitySource::Complement).is_ok());
        assert!(StateGraph::new(vec!["A".into(), "A".into()], "A".into(), vec![]).is_err());
    }

    #[test]
    fn registry_rejects_bad_entries() {
        let e = |lower, upper, default, kind| ParameterSpec {
            name: "x".into(),
            lower,
            upper,
            default,
            kind,
        };
        assert!(ParameterRegistry::new(vec![e(0.0, 1.0, 2.0, ParameterKind::Probability)]).is_err());
        assert!(ParameterRegistry::new(vec![e(0.0, 1.5, 0.5, ParameterKind::Probability)]).is_err());
        assert!(ParameterRegistry::new(vec![e(0.0, 5.0, 1.0, ParameterKind::Duration)]).is_err());
        assert!(ParameterRegistry::new(vec![
            e(0.0, 1.0, 0.5, ParameterKind::Probability),
            e(0.0, 1.0, 0.5, ParameterKind::Probability)
        ])
        .is_err());
    }

    #[test]
    fn scenario_json_round_trip() {
        let c = ScenarioConfig::canonical();
        let text = c.to_json().unwrap();
        let back = ScenarioConfig::from_json(&text).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn scenario_json_rejects_unknown_keys() {
        let c = ScenarioConfig::canonical();
        let mut v: serde_json::Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        v["surprise"] = serde_json::json!(1);
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());

        let mut v: serde_json::Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        v["horizon"]["hours"] = serde_json::json!(3);
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn scenario_check_rejects_bad_values() {
        let mut c = ScenarioConfig::canonical();
        c.rates.icu = 1.5;
        assert!(c.check().is_err());
        let mut c = ScenarioConfig::canonical();
        c.replications = 0;
        assert!(c.check().is_err());
        let mut c = ScenarioConfig::canonical();
        c.horizon.days = 0;
        assert!(c.check().is_err());
    }
}
