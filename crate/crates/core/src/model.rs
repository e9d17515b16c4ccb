//! Cost and constraint model of a vRAN split placement.
//!
//! Everything here is a pure function of a [`Scenario`] and a
//! [`SplitAssignment`]: flows per split, path delays, the per-BS DU, CU and
//! routing costs, and the normalized dissatisfaction of every constraint.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::TopologyError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("penalty coefficient {index} is negative ({value})")]
    NegativeCoefficient { index: usize, value: f64 },
    #[error("edge {index} has neither an explicit length nor endpoint coordinates")]
    MissingGeometry { index: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("scenario json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Functional split of one base station, ordered by centralization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SplitOption {
    /// Everything but RF at the DU (D-RAN).
    S0,
    /// PDCP-RLC.
    S1,
    /// MAC-PHY.
    S2,
    /// PHY-RF, everything but RF at the CU (C-RAN).
    S3,
}

impl SplitOption {
    pub const ALL: [SplitOption; 4] = [Self::S0, Self::S1, Self::S2, Self::S3];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl std::fmt::Display for SplitOption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "S{}", self.index())
    }
}

/// System constants. Compute loads are in reference cores per Mbps, capacities
/// in reference cores, delays in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    pub rho_du: [f64; 4],
    pub rho_cu: [f64; 4],
    pub cap_cu: f64,
    pub cap_du: f64,
    pub inst_cost_du: f64,
    pub inst_cost_cu: f64,
    pub proc_cost_du: f64,
    pub proc_cost_cu: f64,
    pub delay_max: [f64; 4],
    pub split3_flow: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            rho_du: [0.05, 0.04, 0.00325, 0.0],
            rho_cu: [0.0, 0.001, 0.00175, 0.05],
            cap_cu: 75.0,
            cap_du: 7.5,
            inst_cost_du: 1.0,
            inst_cost_cu: 0.5,
            proc_cost_du: 1.0,
            proc_cost_cu: 0.017,
            delay_max: [30.0, 30.0, 2.0, 0.25],
            split3_flow: 2500.0,
        }
    }
}

impl SystemParams {
    /// Rejects negative or non-finite constants and `cap_cu < cap_du`.
    /// Returns warnings for load tables that are not monotone in
    /// centralization order.
    pub fn validate(&self) -> Result<Vec<String>> {
        let scalars = [
            ("cap_cu", self.cap_cu),
            ("cap_du", self.cap_du),
            ("inst_cost_du", self.inst_cost_du),
            ("inst_cost_cu", self.inst_cost_cu),
            ("proc_cost_du", self.proc_cost_du),
            ("proc_cost_cu", self.proc_cost_cu),
            ("split3_flow", self.split3_flow),
        ];
        for (name, v) in scalars {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ModelError::InvalidParams(format!("{name} = {v}")));
            }
        }
        for (name, table) in [
            ("rho_du", &self.rho_du),
            ("rho_cu", &self.rho_cu),
            ("delay_max", &self.delay_max),
        ] {
            if let Some(v) = table.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(ModelError::InvalidParams(format!("{name} contains {v}")));
            }
        }
        if self.cap_cu < self.cap_du {
            return Err(ModelError::InvalidParams(format!(
                "cap_cu ({}) < cap_du ({})",
                self.cap_cu, self.cap_du
            )));
        }
        let mut warnings = Vec::new();
        if self.rho_du.windows(2).any(|w| w[1] > w[0]) {
            warnings.push("rho_du is not non-increasing in split order".to_string());
        }
        if self.rho_cu.windows(2).any(|w| w[1] < w[0]) {
            warnings.push("rho_cu is not non-decreasing in split order".to_string());
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(warnings)
    }
}

/// DU-to-CU flow (Mbps) produced by a split at the given load.
pub fn split_flow(split: SplitOption, load: f64, params: &SystemParams) -> f64 {
    match split {
        SplitOption::S0 | SplitOption::S1 => load,
        SplitOption::S2 => 1.02 * load + 1.5,
        SplitOption::S3 => params.split3_flow,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    CU,
    DU,
    Router,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_km: Option<f64>,
}

impl Node {
    pub fn coords(&self) -> Option<(f64, f64)> {
        Some((self.x_km?, self.y_km?))
    }
}

/// Undirected capacitated link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub a: usize,
    pub b: usize,
    pub capacity_mbps: f64,
    pub cost_per_mbps: f64,
    /// Overrides the coordinate distance when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_km: Option<f64>,
}

impl Link {
    pub fn other(&self, end: usize) -> usize {
        if end == self.a {
            self.b
        } else {
            self.a
        }
    }
}

/// Route of one DU to the CU.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    /// Node sequence from the DU to the CU.
    pub nodes: Vec<usize>,
    /// Link indices in traversal order.
    pub links: Vec<usize>,
    /// One-way store-and-forward delay in milliseconds.
    pub delay_ms: f64,
    /// Sum of link routing-cost weights (monetary units per Mbps).
    pub routing_cost: f64,
}

/// One CU at node 0, DUs, routers, links, and one path per DU.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    /// Node indices of the DUs in ascending order; DU ordinal `k` is `dus[k]`.
    pub dus: Vec<usize>,
    /// `paths[k]` belongs to DU ordinal `k`.
    pub paths: Vec<Path>,
}

impl Topology {
    pub fn du_count(&self) -> usize {
        self.dus.len()
    }

    /// Length of a link: explicit value first, then the planar distance
    /// between its endpoints.
    pub fn link_length(&self, index: usize) -> Option<f64> {
        let link = &self.links[index];
        if let Some(len) = link.length_km {
            return Some(len);
        }
        let (ax, ay) = self.nodes[link.a].coords()?;
        let (bx, by) = self.nodes[link.b].coords()?;
        Some((ax - bx).hypot(ay - by))
    }

    /// Scales every link routing cost and every path routing cost by `gamma`.
    /// Paths are kept as they are; a uniform scale does not change which
    /// path is cheapest.
    pub fn with_routing_scale(&self, gamma: f64) -> Topology {
        let mut t = self.clone();
        for l in &mut t.links {
            l.cost_per_mbps *= gamma;
        }
        for p in &mut t.paths {
            p.routing_cost *= gamma;
        }
        t
    }
}

/// Transmission time of a 12000-bit packet, in microseconds per Mbps of capacity.
pub const PACKET_BITS: f64 = 12_000.0;
/// Propagation delay in microseconds per km.
pub const PROPAGATION_US_PER_KM: f64 = 4.0;
/// Per-hop processing delay in microseconds.
pub const PROCESSING_US_PER_HOP: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeGeometry {
    pub capacity_mbps: f64,
    pub length_km: Option<f64>,
}

/// Store-and-forward delay of a path in milliseconds.
pub fn path_delay(edges: &[EdgeGeometry]) -> Result<f64> {
    let mut us = 0.0;
    for (index, e) in edges.iter().enumerate() {
        let len = e.length_km.ok_or(ModelError::MissingGeometry { index })?;
        us += PACKET_BITS / e.capacity_mbps
            + PROPAGATION_US_PER_KM * len
            + PROCESSING_US_PER_HOP;
    }
    Ok(us / 1000.0)
}

/// A complete problem instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub topology: Topology,
    /// Uplink load per DU ordinal in Mbps.
    pub traffic: Vec<f64>,
    pub params: SystemParams,
}

impl Scenario {
    pub fn new(topology: Topology, traffic: Vec<f64>, params: SystemParams) -> Result<Self> {
        let s = Self {
            topology,
            traffic,
            params,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn du_count(&self) -> usize {
        self.topology.du_count()
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.traffic.len() != self.du_count() {
            return Err(ModelError::DimensionMismatch {
                what: "traffic",
                got: self.traffic.len(),
                expected: self.du_count(),
            });
        }
        if let Some(v) = self.traffic.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(ModelError::InvalidScenario(format!("traffic entry {v}")));
        }
        Ok(())
    }

    pub fn with_routing_scale(&self, gamma: f64) -> Scenario {
        Scenario {
            topology: self.topology.with_routing_scale(gamma),
            traffic: self.traffic.clone(),
            params: self.params.clone(),
        }
    }

    pub fn with_uniform_traffic(&self, load: f64) -> Scenario {
        Scenario {
            topology: self.topology.clone(),
            traffic: vec![load; self.du_count()],
            params: self.params.clone(),
        }
    }
}

/// One split per DU ordinal.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SplitAssignment(pub Vec<SplitOption>);

impl SplitAssignment {
    pub fn uniform(split: SplitOption, n: usize) -> Self {
        Self(vec![split; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Compact digit form, e.g. `"0132"`.
    pub fn to_digits(&self) -> String {
        self.0
            .iter()
            .map(|s| char::from(b'0' + s.index() as u8))
            .collect()
    }

    pub fn from_digits(s: &str) -> Option<Self> {
        s.chars()
            .map(|c| c.to_digit(10).and_then(|d| SplitOption::from_index(d as usize)))
            .collect::<Option<Vec<_>>>()
            .map(Self)
    }
}

/// Number of constraint families: CU compute, DU compute, link, delay.
pub const FAMILIES: usize = 4;

/// Normalized positive excess of every constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintVector {
    pub cu_compute: f64,
    pub du_compute: Vec<f64>,
    pub link: Vec<f64>,
    pub delay: Vec<f64>,
}

impl ConstraintVector {
    /// Per-family maxima in the order (cu, du, link, delay).
    pub fn family_aggregates(&self) -> [f64; FAMILIES] {
        let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        [
            self.cu_compute,
            max(&self.du_compute),
            max(&self.link),
            max(&self.delay),
        ]
    }

    pub fn is_zero(&self) -> bool {
        self.cu_compute == 0.0
            && self
                .du_compute
                .iter()
                .chain(&self.link)
                .chain(&self.delay)
                .all(|&v| v == 0.0)
    }
}

/// `max(0, (used - cap) / cap)`, or the absolute excess when `cap == 0`.
pub fn normalized_excess(used: f64, cap: f64) -> f64 {
    if used <= cap {
        0.0
    } else if cap > 0.0 {
        (used - cap) / cap
    } else {
        used - cap
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total_cost: f64,
    pub du_costs: Vec<f64>,
    pub cu_costs: Vec<f64>,
    pub routing_costs: Vec<f64>,
    pub flows: Vec<f64>,
    pub violations: ConstraintVector,
    pub feasible: bool,
}

/// Cost components `(V_n, U_n0, V_n0)` of one BS under one split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BsCost {
    pub du: f64,
    pub routing: f64,
    pub cu: f64,
}

impl BsCost {
    /// The summation order every caller must use for bit-identical totals.
    pub fn total(&self) -> f64 {
        self.du + self.routing + self.cu
    }
}

pub fn bs_cost(scenario: &Scenario, du: usize, split: SplitOption) -> BsCost {
    let p = &scenario.params;
    let load = scenario.traffic[du];
    let o = split.index();
    BsCost {
        du: p.inst_cost_du + p.proc_cost_du * load * p.rho_du[o],
        routing: scenario.topology.paths[du].routing_cost * split_flow(split, load, p),
        cu: p.inst_cost_cu + load * p.proc_cost_cu * p.rho_cu[o],
    }
}

pub fn evaluate(scenario: &Scenario, assignment: &SplitAssignment) -> Result<EvalReport> {
    let n = scenario.du_count();
    if assignment.len() != n {
        return Err(ModelError::DimensionMismatch {
            what: "assignment",
            got: assignment.len(),
            expected: n,
        });
    }
    if scenario.traffic.len() != n {
        return Err(ModelError::DimensionMismatch {
            what: "traffic",
            got: scenario.traffic.len(),
            expected: n,
        });
    }
    let p = &scenario.params;
    let topo = &scenario.topology;

    let mut total = 0.0;
    let mut du_costs = Vec::with_capacity(n);
    let mut cu_costs = Vec::with_capacity(n);
    let mut routing_costs = Vec::with_capacity(n);
    let mut flows = Vec::with_capacity(n);
    let mut cu_load = 0.0;
    let mut du_viol = Vec::with_capacity(n);
    let mut delay_viol = Vec::with_capacity(n);
    let mut link_load = vec![0.0; topo.links.len()];

    for (k, &split) in assignment.0.iter().enumerate() {
        let o = split.index();
        let load = scenario.traffic[k];
        let c = bs_cost(scenario, k, split);
        total += c.total();
        du_costs.push(c.du);
        routing_costs.push(c.routing);
        cu_costs.push(c.cu);

        let flow = split_flow(split, load, p);
        flows.push(flow);
        for &l in &topo.paths[k].links {
            link_load[l] += flow;
        }
        cu_load += load * p.rho_cu[o];
        du_viol.push(normalized_excess(load * p.rho_du[o], p.cap_du));
        delay_viol.push(normalized_excess(topo.paths[k].delay_ms, p.delay_max[o]));
    }

    let link_viol = link_load
        .iter()
        .zip(&topo.links)
        .map(|(&used, l)| normalized_excess(used, l.capacity_mbps))
        .collect();
    let violations = ConstraintVector {
        cu_compute: normalized_excess(cu_load, p.cap_cu),
        du_compute: du_viol,
        link: link_viol,
        delay: delay_viol,
    };
    let feasible = violations.is_zero();
    Ok(EvalReport {
        total_cost: total,
        du_costs,
        cu_costs,
        routing_costs,
        flows,
        violations,
        feasible,
    })
}

/// Weighted constraint dissatisfaction `sum_i mu_i * C_i` over the family
/// aggregates.
pub fn penalization(report: &EvalReport, mu: &[f64; FAMILIES]) -> Result<f64> {
    if let Some((index, &value)) = mu.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(ModelError::NegativeCoefficient { index, value });
    }
    Ok(report
        .violations
        .family_aggregates()
        .iter()
        .zip(mu)
        .map(|(c, m)| c * m)
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMode {
    /// Every BS on S0.
    Dran,
    /// Every BS on S3. Reported even when infeasible.
    Cran,
}

pub fn fixed_baseline_cost(scenario: &Scenario, mode: BaselineMode) -> EvalReport {
    let split = match mode {
        BaselineMode::Dran => SplitOption::S0,
        BaselineMode::Cran => SplitOption::S3,
    };
    evaluate(scenario, &SplitAssignment::uniform(split, scenario.du_count()))
        .expect("uniform assignment matches DU count")
}
