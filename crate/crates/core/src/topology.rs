//! Topology construction: validation, DU-to-CU shortest paths, Waxman
//! generation, and ingestion of coordinate-based network files.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{path_delay, EdgeGeometry, Link, Node, NodeKind, Path, Topology};
use crate::rng::SplitRng;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("DU node {du} has no path to the CU")]
    Unreachable { du: usize },
    #[error("link {link} has neither an explicit length nor endpoint coordinates")]
    MissingGeometry { link: usize },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("generation failed: {0}")]
    GenerationFailed(String),
    #[error("line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TopologyError> = std::result::Result<T, E>;

/// Validates nodes and links and computes the DU paths.
///
/// Requirements: node `i` carries id `i`, node 0 is the only CU, link
/// endpoints exist and differ, capacities are positive and costs
/// nonnegative.
pub fn build_topology(nodes: Vec<Node>, links: Vec<Link>) -> Result<Topology> {
    if nodes.is_empty() {
        return Err(TopologyError::Invalid("no nodes".into()));
    }
    for (i, n) in nodes.iter().enumerate() {
        if n.id != i {
            return Err(TopologyError::Invalid(format!(
                "node at position {i} has id {}",
                n.id
            )));
        }
    }
    let cu_count = nodes.iter().filter(|n| n.kind == NodeKind::CU).count();
    if cu_count != 1 || nodes[0].kind != NodeKind::CU {
        return Err(TopologyError::Invalid(
            "exactly one CU is required and it must be node 0".into(),
        ));
    }
    for (i, l) in links.iter().enumerate() {
        if l.a >= nodes.len() || l.b >= nodes.len() || l.a == l.b {
            return Err(TopologyError::Invalid(format!(
                "link {i} has bad endpoints ({}, {})",
                l.a, l.b
            )));
        }
        if !(l.capacity_mbps > 0.0) {
            return Err(TopologyError::Invalid(format!(
                "link {i} capacity {} is not positive",
                l.capacity_mbps
            )));
        }
        if !(l.cost_per_mbps.is_finite() && l.cost_per_mbps >= 0.0) {
            return Err(TopologyError::Invalid(format!(
                "link {i} cost {} is not a nonnegative number",
                l.cost_per_mbps
            )));
        }
        if let Some(len) = l.length_km {
            if !(len.is_finite() && len >= 0.0) {
                return Err(TopologyError::Invalid(format!("link {i} length {len}")));
            }
        }
    }
    let dus = nodes
        .iter()
        .filter(|n| n.kind == NodeKind::DU)
        .map(|n| n.id)
        .collect();
    let mut topo = Topology {
        nodes,
        links,
        dus,
        paths: Vec::new(),
    };
    topo.paths = shortest_paths(&topo)?;
    Ok(topo)
}

#[derive(Clone, Copy, PartialEq)]
struct Label {
    cost: f64,
    hops: usize,
    node: usize,
}

impl Eq for Label {}

impl Ord for Label {
    // Reversed so BinaryHeap pops the smallest (cost, hops, node).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then(other.hops.cmp(&self.hops))
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum routing-cost path from every DU to the CU.
///
/// Ties on cost go to fewer hops, then to the lexicographically smallest
/// DU-to-CU node sequence. Paths are computed from the `nodes` and `links`
/// of `topology`; any existing `paths` are ignored.
pub fn shortest_paths(topology: &Topology) -> Result<Vec<Path>> {
    let n = topology.nodes.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, l) in topology.links.iter().enumerate() {
        adj[l.a].push((l.b, i));
        adj[l.b].push((l.a, i));
    }
    for list in &mut adj {
        list.sort_unstable();
    }

    let mut dist = vec![f64::INFINITY; n];
    let mut hops = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[0] = 0.0;
    hops[0] = 0;
    heap.push(Label { cost: 0.0, hops: 0, node: 0 });
    while let Some(Label { cost, hops: h, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        for &(next, li) in &adj[node] {
            let c = cost + topology.links[li].cost_per_mbps;
            let better = match c.total_cmp(&dist[next]) {
                Ordering::Less => true,
                Ordering::Equal => h + 1 < hops[next],
                Ordering::Greater => false,
            };
            if better && !done[next] {
                dist[next] = c;
                hops[next] = h + 1;
                heap.push(Label { cost: c, hops: h + 1, node: next });
            }
        }
    }

    // Next hop toward the CU: the smallest neighbor id that realizes the label.
    let mut next_hop: Vec<Option<(usize, usize)>> = vec![None; n];
    for v in 1..n {
        if !done[v] {
            continue;
        }
        next_hop[v] = adj[v].iter().copied().find(|&(u, li)| {
            done[u]
                && hops[u] != usize::MAX
                && hops[u] + 1 == hops[v]
                && dist[u] + topology.links[li].cost_per_mbps == dist[v]
        });
    }

    let mut paths = Vec::with_capacity(topology.dus.len());
    for &du in &topology.dus {
        if !done[du] {
            return Err(TopologyError::Unreachable { du });
        }
        let mut nodes = vec![du];
        let mut links = Vec::new();
        let mut v = du;
        while v != 0 {
            let (u, li) = next_hop[v].ok_or(TopologyError::Unreachable { du })?;
            links.push(li);
            nodes.push(u);
            v = u;
        }
        let geometry: Vec<EdgeGeometry> = links
            .iter()
            .map(|&li| EdgeGeometry {
                capacity_mbps: topology.links[li].capacity_mbps,
                length_km: topology.link_length(li),
            })
            .collect();
        let delay_ms = path_delay(&geometry).map_err(|e| match e {
            crate::model::ModelError::MissingGeometry { index } => {
                TopologyError::MissingGeometry { link: links[index] }
            }
            other => TopologyError::Invalid(other.to_string()),
        })?;
        paths.push(Path {
            nodes,
            links,
            delay_ms,
            routing_cost: dist[du],
        });
    }
    Ok(paths)
}

/// Parameters of the Waxman generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaxmanConfig {
    pub n_du: usize,
    pub n_router: usize,
    /// Link probability scale, in (0, 1].
    pub alpha: f64,
    /// Edge-length control, in (0, 1].
    pub beta: f64,
    /// Side of the square placement area in km.
    pub area_km: f64,
    pub capacity_range: (f64, f64),
    pub link_cost_range: (f64, f64),
    pub seed: u64,
}

impl Default for WaxmanConfig {
    fn default() -> Self {
        Self {
            n_du: 10,
            n_router: 5,
            alpha: 0.5,
            beta: 0.1,
            area_km: 200.0,
            capacity_range: (1_000.0, 100_000.0),
            link_cost_range: (0.001, 0.01),
            seed: 0,
        }
    }
}

impl WaxmanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TopologyError::InvalidConfig(m));
        if self.n_du == 0 {
            return bad("n_du must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} not in (0, 1]", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("beta {} not in (0, 1]", self.beta));
        }
        if !(self.area_km.is_finite() && self.area_km >= 0.0) {
            return bad(format!("area {}", self.area_km));
        }
        let (cl, ch) = self.capacity_range;
        if !(cl > 0.0 && cl <= ch && ch.is_finite()) {
            return bad(format!("capacity range ({cl}, {ch})"));
        }
        let (rl, rh) = self.link_cost_range;
        if !(rl >= 0.0 && rl <= rh && rh.is_finite()) {
            return bad(format!("link cost range ({rl}, {rh})"));
        }
        Ok(())
    }
}

/// Link probability `alpha * exp(-d / (beta * d_max))`; `alpha` when all
/// nodes coincide.
pub fn waxman_probability(distance: f64, max_distance: f64, alpha: f64, beta: f64) -> f64 {
    if max_distance <= 0.0 {
        alpha
    } else {
        alpha * (-distance / (beta * max_distance)).exp()
    }
}

#[derive(Clone, Debug)]
pub struct WaxmanOutcome {
    pub topology: Topology,
    /// Links created by the Waxman draw.
    pub sampled_links: usize,
    /// Links added afterwards to connect components.
    pub repair_links: usize,
}

pub fn generate_waxman(config: &WaxmanConfig) -> Result<Topology> {
    generate_waxman_detailed(config).map(|o| o.topology)
}

/// Places `1 + n_du + n_router` nodes uniformly in the square, makes the node
/// nearest the centre the CU (node 0), numbers DUs `1..=n_du` and routers
/// after them, then links every pair `u < v` with the Waxman probability.
/// Disconnected draws are repaired by repeatedly adding the shortest
/// inter-component edge.
pub fn generate_waxman_detailed(config: &WaxmanConfig) -> Result<WaxmanOutcome> {
    config.validate()?;
    let mut rng = SplitRng::new(config.seed);
    let m = 1 + config.n_du + config.n_router;
    let raw: Vec<(f64, f64)> = (0..m)
        .map(|_| {
            let x = rng.range(0.0, config.area_km);
            let y = rng.range(0.0, config.area_km);
            (x, y)
        })
        .collect();
    let centre = config.area_km / 2.0;
    let cu = (0..m)
        .min_by(|&a, &b| {
            let da = (raw[a].0 - centre).hypot(raw[a].1 - centre);
            let db = (raw[b].0 - centre).hypot(raw[b].1 - centre);
            da.total_cmp(&db).then(a.cmp(&b))
        })
        .expect("at least one node");
    let order: Vec<usize> = std::iter::once(cu)
        .chain((0..m).filter(|&i| i != cu))
        .collect();
    let points: Vec<(f64, f64)> = order.iter().map(|&i| raw[i]).collect();
    let nodes: Vec<Node> = points
        .iter()
        .enumerate()
        .map(|(id, &(x, y))| Node {
            id,
            kind: if id == 0 {
                NodeKind::CU
            } else if id <= config.n_du {
                NodeKind::DU
            } else {
                NodeKind::Router
            },
            x_km: Some(x),
            y_km: Some(y),
        })
        .collect();

    let dist = |a: usize, b: usize| (points[a].0 - points[b].0).hypot(points[a].1 - points[b].1);
    let mut d_max: f64 = 0.0;
    for u in 0..m {
        for v in u + 1..m {
            d_max = d_max.max(dist(u, v));
        }
    }

    let mut links = Vec::new();
    let new_link = |rng: &mut SplitRng, a: usize, b: usize| Link {
        a,
        b,
        capacity_mbps: rng.range(config.capacity_range.0, config.capacity_range.1),
        cost_per_mbps: rng.range(config.link_cost_range.0, config.link_cost_range.1),
        length_km: None,
    };
    for u in 0..m {
        for v in u + 1..m {
            let p = waxman_probability(dist(u, v), d_max, config.alpha, config.beta);
            if rng.uniform() < p {
                links.push(new_link(&mut rng, u, v));
            }
        }
    }
    let sampled_links = links.len();

    let mut comp = UnionFind::new(m);
    for l in &links {
        comp.union(l.a, l.b);
    }
    let mut repair_links = 0;
    while comp.components > 1 {
        if repair_links >= m {
            return Err(TopologyError::GenerationFailed(
                "connectivity repair did not converge".into(),
            ));
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for u in 0..m {
            for v in u + 1..m {
                if comp.find(u) == comp.find(v) {
                    continue;
                }
                let d = dist(u, v);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, u, v));
                }
            }
        }
        let (_, u, v) = best.expect("more than one component implies a candidate pair");
        links.push(new_link(&mut rng, u, v));
        comp.union(u, v);
        repair_links += 1;
    }

    let topology = build_topology(nodes, links)?;
    Ok(WaxmanOutcome {
        topology,
        sampled_links,
        repair_links,
    })
}

struct UnionFind {
    parent: Vec<usize>,
    components: usize,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            components: n,
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
            self.components -= 1;
        }
    }
}

/// Routing cost charged per Mbps per km when a network file gives none.
pub const COST_PER_MBPS_KM: f64 = 0.01;
const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance between two `(lon, lat)` points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lon1, lat1) = (a.0.to_radians(), a.1.to_radians());
    let (lon2, lat2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((lat2 - lat1) / 2.0).sin().powi(2)
        + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Parses a line-oriented network description.
///
/// ```text
/// # comment
/// coords geo            # or `planar` (km); default planar
/// cu  <name>            # defaults to the first node
/// node <name> <x|lon> <y|lat>
/// link <a> <b> <capacity_mbps> [cost_per_mbps]
/// ```
///
/// Every non-CU node becomes a DU (routers are co-located with DUs). Link
/// lengths come from the coordinates; a missing cost becomes
/// `0.01 * length_km`.
pub fn ingest_real(text: &str) -> Result<Topology> {
    #[derive(PartialEq)]
    enum Coords {
        Geo,
        Planar,
    }
    let mut coords = Coords::Planar;
    let mut cu_name: Option<(usize, String)> = None;
    let mut names: Vec<String> = Vec::new();
    let mut points: Vec<(f64, f64)> = Vec::new();
    struct RawLink {
        line: usize,
        a: String,
        b: String,
        cap: f64,
        cost: Option<f64>,
    }
    let mut raw_links: Vec<RawLink> = Vec::new();

    let perr = |line: usize, field: &str, message: String| TopologyError::Parse {
        line,
        field: field.to_string(),
        message,
    };
    let num = |line: usize, field: &str, tok: Option<&str>| -> Result<f64> {
        let tok = tok.ok_or_else(|| perr(line, field, "missing value".into()))?;
        let v: f64 = tok
            .parse()
            .map_err(|_| perr(line, field, format!("`{tok}` is not a number")))?;
        if !v.is_finite() {
            return Err(perr(line, field, format!("`{tok}` is not finite")));
        }
        Ok(v)
    };

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tok = content.split_whitespace();
        let keyword = tok.next().expect("non-empty line has a token");
        match keyword {
            "coords" => {
                coords = match tok.next() {
                    Some("geo") => Coords::Geo,
                    Some("planar") => Coords::Planar,
                    other => {
                        return Err(perr(
                            line,
                            "coords",
                            format!("expected `geo` or `planar`, got {other:?}"),
                        ))
                    }
                }
            }
            "cu" => {
                let name = tok
                    .next()
                    .ok_or_else(|| perr(line, "cu", "missing node name".into()))?;
                cu_name = Some((line, name.to_string()));
            }
            "node" => {
                let name = tok
                    .next()
                    .ok_or_else(|| perr(line, "name", "missing node name".into()))?;
                if names.iter().any(|n| n == name) {
                    return Err(perr(line, "name", format!("duplicate node `{name}`")));
                }
                let x = num(line, "x", tok.next())?;
                let y = num(line, "y", tok.next())?;
                names.push(name.to_string());
                points.push((x, y));
            }
            "link" => {
                let a = tok
                    .next()
                    .ok_or_else(|| perr(line, "a", "missing endpoint".into()))?;
                let b = tok
                    .next()
                    .ok_or_else(|| perr(line, "b", "missing endpoint".into()))?;
                let cap = num(line, "capacity_mbps", tok.next())?;
                let cost = match tok.next() {
                    Some(t) => Some(num(line, "cost_per_mbps", Some(t))?),
                    None => None,
                };
                raw_links.push(RawLink {
                    line,
                    a: a.to_string(),
                    b: b.to_string(),
                    cap,
                    cost,
                });
            }
            other => {
                return Err(perr(line, "keyword", format!("unknown keyword `{other}`")));
            }
        }
        if let Some(extra) = tok.next() {
            return Err(perr(line, "trailing", format!("unexpected token `{extra}`")));
        }
    }

    if names.is_empty() {
        return Err(perr(0, "node", "no nodes declared".into()));
    }
    let cu_index = match &cu_name {
        Some((line, name)) => names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| perr(*line, "cu", format!("unknown node `{name}`")))?,
        None => 0,
    };
    // CU first, then the rest in file order.
    let order: Vec<usize> = std::iter::once(cu_index)
        .chain((0..names.len()).filter(|&i| i != cu_index))
        .collect();
    let mut new_index = vec![0; names.len()];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    let nodes: Vec<Node> = order
        .iter()
        .enumerate()
        .map(|(id, &old)| {
            let (x, y) = match coords {
                Coords::Planar => (Some(points[old].0), Some(points[old].1)),
                Coords::Geo => (None, None),
            };
            Node {
                id,
                kind: if id == 0 { NodeKind::CU } else { NodeKind::DU },
                x_km: x,
                y_km: y,
            }
        })
        .collect();

    let lookup = |line: usize, field: &str, name: &str| -> Result<usize> {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| perr(line, field, format!("unknown node `{name}`")))
    };
    let mut links = Vec::with_capacity(raw_links.len());
    for rl in &raw_links {
        let a = lookup(rl.line, "a", &rl.a)?;
        let b = lookup(rl.line, "b", &rl.b)?;
        if a == b {
            return Err(perr(rl.line, "b", "self loop".into()));
        }
        if !(rl.cap > 0.0) {
            return Err(perr(rl.line, "capacity_mbps", "must be positive".into()));
        }
        let length = match coords {
            Coords::Geo => haversine_km(points[a], points[b]),
            Coords::Planar => (points[a].0 - points[b].0).hypot(points[a].1 - points[b].1),
        };
        let cost = match rl.cost {
            Some(c) if c < 0.0 => {
                return Err(perr(rl.line, "cost_per_mbps", "must be nonnegative".into()))
            }
            Some(c) => c,
            None => COST_PER_MBPS_KM * length,
        };
        links.push(Link {
            a: new_index[a],
            b: new_index[b],
            capacity_mbps: rl.cap,
            cost_per_mbps: cost,
            length_km: Some(length),
        });
    }
    build_topology(nodes, links)
}

pub fn ingest_real_file(path: &std::path::Path) -> Result<Topology> {
    ingest_real(&std::fs::read_to_string(path)?)
}
