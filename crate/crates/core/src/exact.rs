//! Exact solvers for the split placement problem.
//!
//! [`solve_exact`] is a depth-first branch and bound over per-BS split
//! choices. Splits that violate a per-BS constraint (DU compute, path delay,
//! or a link that the BS alone would overload) are removed before the
//! search. The bound of a node is its accumulated cost plus, for every
//! unassigned BS, the cost of its cheapest remaining split; shared CU and
//! link capacities are checked as flows accumulate.
//!
//! [`solve_bruteforce`] walks all `4^N` assignments in lexicographic order
//! and serves as a test oracle.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    bs_cost, evaluate, split_flow, EvalReport, ModelError, Scenario, SplitAssignment, SplitOption,
};

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("no assignment satisfies every constraint")]
    Infeasible,
    #[error("time budget exhausted before any feasible assignment was found")]
    Timeout,
    #[error("brute force supports at most {max} DUs, got {n}")]
    TooLarge { n: usize, max: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = ExactError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Proof {
    Optimal,
    BestFound,
}

#[derive(Clone, Debug)]
pub struct ExactSolution {
    pub assignment: SplitAssignment,
    pub report: EvalReport,
    pub proof: Proof,
    pub nodes_expanded: u64,
}

pub const BRUTE_FORCE_MAX_N: usize = 12;

/// Relative slack used when partial sums are compared in a different order
/// than the canonical evaluation.
const REL_TOL: f64 = 1e-9;

/// Per-BS data shared by both solvers.
struct Prepared {
    /// `cost[k][o]`, summed in the canonical component order.
    cost: Vec<[f64; 4]>,
    flow: Vec<[f64; 4]>,
    cu_load: Vec<[f64; 4]>,
    /// Whether split `o` passes every constraint that involves BS `k` alone.
    allowed: Vec<[bool; 4]>,
}

fn prepare(scenario: &Scenario) -> Prepared {
    let p = &scenario.params;
    let topo = &scenario.topology;
    let n = scenario.du_count();
    let mut out = Prepared {
        cost: Vec::with_capacity(n),
        flow: Vec::with_capacity(n),
        cu_load: Vec::with_capacity(n),
        allowed: Vec::with_capacity(n),
    };
    for k in 0..n {
        let load = scenario.traffic[k];
        let path = &topo.paths[k];
        let mut cost = [0.0; 4];
        let mut flow = [0.0; 4];
        let mut cu = [0.0; 4];
        let mut allowed = [false; 4];
        for s in SplitOption::ALL {
            let o = s.index();
            cost[o] = bs_cost(scenario, k, s).total();
            flow[o] = split_flow(s, load, p);
            cu[o] = load * p.rho_cu[o];
            allowed[o] = load * p.rho_du[o] <= p.cap_du
                && path.delay_ms <= p.delay_max[o]
                && cu[o] <= p.cap_cu
                && path
                    .links
                    .iter()
                    .all(|&l| flow[o] <= topo.links[l].capacity_mbps);
        }
        out.cost.push(cost);
        out.flow.push(flow);
        out.cu_load.push(cu);
        out.allowed.push(allowed);
    }
    out
}

fn lex_better(j: f64, a: &[SplitOption], best_j: f64, best: &[SplitOption]) -> bool {
    j < best_j || (j == best_j && a < best)
}

/// Exhaustive minimum over all `4^N` assignments.
///
/// The cost of an assignment is summed over DUs in index order exactly as
/// [`evaluate`] does, so the returned report is bit-identical to
/// `evaluate(scenario, &assignment)`. Ties go to the lexicographically
/// smallest split vector.
pub fn solve_bruteforce(scenario: &Scenario) -> Result<(SplitAssignment, EvalReport)> {
    scenario.validate()?;
    let n = scenario.du_count();
    if n > BRUTE_FORCE_MAX_N {
        return Err(ExactError::TooLarge { n, max: BRUTE_FORCE_MAX_N });
    }
    let prep = prepare(scenario);
    let topo = &scenario.topology;
    let cap_cu = scenario.params.cap_cu;

    struct Walk<'a> {
        prep: &'a Prepared,
        scenario: &'a Scenario,
        cap_cu: f64,
        current: Vec<SplitOption>,
        link_load: Vec<f64>,
        best: Option<(f64, Vec<SplitOption>)>,
    }

    impl Walk<'_> {
        fn visit(&mut self, k: usize, j: f64, cu: f64) {
            let n = self.prep.cost.len();
            if k == n {
                let better = match &self.best {
                    None => true,
                    Some((bj, ba)) => lex_better(j, &self.current, *bj, ba),
                };
                if better {
                    self.best = Some((j, self.current.clone()));
                }
                return;
            }
            let links = &self.scenario.topology.paths[k].links;
            for s in SplitOption::ALL {
                let o = s.index();
                if !self.prep.allowed[k][o] {
                    continue;
                }
                // Prefix sums are accumulated in DU order like `evaluate`, and
                // adding nonnegative terms never decreases them, so an
                // exceeded capacity stays exceeded.
                let cu_next = cu + self.prep.cu_load[k][o];
                if cu_next > self.cap_cu {
                    continue;
                }
                let f = self.prep.flow[k][o];
                let saved: Vec<f64> = links.iter().map(|&l| self.link_load[l]).collect();
                let mut ok = true;
                for &l in links {
                    self.link_load[l] += f;
                    if self.link_load[l] > self.scenario.topology.links[l].capacity_mbps {
                        ok = false;
                    }
                }
                if ok {
                    self.current.push(s);
                    self.visit(k + 1, j + self.prep.cost[k][o], cu_next);
                    self.current.pop();
                }
                for (&l, v) in links.iter().zip(saved) {
                    self.link_load[l] = v;
                }
            }
        }
    }

    let mut walk = Walk {
        prep: &prep,
        scenario,
        cap_cu,
        current: Vec::with_capacity(n),
        link_load: vec![0.0; topo.links.len()],
        best: None,
    };
    walk.visit(0, 0.0, 0.0);
    let (_, best) = walk.best.ok_or(ExactError::Infeasible)?;
    let assignment = SplitAssignment(best);
    let report = evaluate(scenario, &assignment)?;
    debug_assert!(report.feasible);
    Ok((assignment, report))
}

struct Search<'a> {
    scenario: &'a Scenario,
    prep: Prepared,
    /// BS indices in branching order.
    order: Vec<usize>,
    /// Allowed options of each BS sorted by cost, then index.
    options: Vec<Vec<usize>>,
    /// `suffix_min[d]`: sum of cheapest allowed costs of `order[d..]`.
    suffix_min: Vec<f64>,
    current: Vec<SplitOption>,
    link_load: Vec<f64>,
    cu_load: f64,
    incumbent: Option<(f64, Vec<SplitOption>)>,
    deadline: Option<Instant>,
    timed_out: bool,
    nodes: u64,
    #[cfg(debug_assertions)]
    bound_stack: Vec<f64>,
}

impl Search<'_> {
    fn threshold(&self) -> f64 {
        match &self.incumbent {
            Some((j, _)) => j + REL_TOL * j.abs().max(1.0),
            None => f64::INFINITY,
        }
    }

    fn over(used: f64, cap: f64) -> bool {
        used > cap + REL_TOL * cap.abs().max(1.0)
    }

    fn dfs(&mut self, depth: usize, acc: f64) {
        if self.timed_out {
            return;
        }
        self.nodes += 1;
        if self.nodes % 1024 == 0 {
            if let Some(d) = self.deadline {
                if Instant::now() >= d {
                    self.timed_out = true;
                    return;
                }
            }
        }
        if depth == self.order.len() {
            self.leaf();
            return;
        }
        let k = self.order[depth];
        let links = &self.scenario.topology.paths[k].links;
        let options = self.options[k].clone();
        for o in options {
            let bound = acc + self.prep.cost[k][o] + self.suffix_min[depth + 1];
            if bound > self.threshold() {
                // Options are sorted by cost, so later ones are no better.
                break;
            }
            let cu_before = self.cu_load;
            let cu_next = cu_before + self.prep.cu_load[k][o];
            if Self::over(cu_next, self.scenario.params.cap_cu) {
                continue;
            }
            let f = self.prep.flow[k][o];
            let saved: Vec<f64> = links.iter().map(|&l| self.link_load[l]).collect();
            let mut ok = true;
            for &l in links {
                self.link_load[l] += f;
                if Self::over(self.link_load[l], self.scenario.topology.links[l].capacity_mbps) {
                    ok = false;
                }
            }
            if ok {
                self.cu_load = cu_next;
                self.current[k] = SplitOption::ALL[o];
                #[cfg(debug_assertions)]
                self.bound_stack.push(bound);
                self.dfs(depth + 1, acc + self.prep.cost[k][o]);
                #[cfg(debug_assertions)]
                self.bound_stack.pop();
                self.cu_load = cu_before;
            }
            for (&l, v) in links.iter().zip(saved) {
                self.link_load[l] = v;
            }
            if self.timed_out {
                return;
            }
        }
    }

    fn leaf(&mut self) {
        let assignment = SplitAssignment(self.current.clone());
        let report = evaluate(self.scenario, &assignment).expect("dimensions match");
        if !report.feasible {
            return;
        }
        let j = report.total_cost;
        #[cfg(debug_assertions)]
        for &b in &self.bound_stack {
            debug_assert!(
                b <= j + REL_TOL * j.abs().max(1.0),
                "bound {b} exceeds leaf cost {j}"
            );
        }
        let better = match &self.incumbent {
            None => true,
            Some((bj, ba)) => lex_better(j, &assignment.0, *bj, ba),
        };
        if better {
            self.incumbent = Some((j, assignment.0));
        }
    }
}

/// Per-BS cheapest allowed split, taken in DU order while keeping shared
/// capacities satisfied.
fn greedy_start(scenario: &Scenario, prep: &Prepared) -> Option<Vec<SplitOption>> {
    let topo = &scenario.topology;
    let mut link_load = vec![0.0; topo.links.len()];
    let mut cu = 0.0;
    let mut out = Vec::with_capacity(prep.cost.len());
    for k in 0..prep.cost.len() {
        let mut opts: Vec<usize> = (0..4).filter(|&o| prep.allowed[k][o]).collect();
        opts.sort_by(|&a, &b| prep.cost[k][a].total_cmp(&prep.cost[k][b]).then(a.cmp(&b)));
        let links = &topo.paths[k].links;
        let pick = opts.into_iter().find(|&o| {
            cu + prep.cu_load[k][o] <= scenario.params.cap_cu
                && links
                    .iter()
                    .all(|&l| link_load[l] + prep.flow[k][o] <= topo.links[l].capacity_mbps)
        })?;
        cu += prep.cu_load[k][pick];
        for &l in links {
            link_load[l] += prep.flow[k][pick];
        }
        out.push(SplitOption::ALL[pick]);
    }
    Some(out)
}

/// Branch-and-bound optimum of the placement problem.
///
/// With `time_budget = None` the search always completes and the result is
/// [`Proof::Optimal`]. When the budget runs out the best assignment found so
/// far is returned as [`Proof::BestFound`]. Among equal-cost optima the
/// lexicographically smallest split vector is returned, so the result
/// matches [`solve_bruteforce`] exactly.
pub fn solve_exact(scenario: &Scenario, time_budget: Option<Duration>) -> Result<ExactSolution> {
    scenario.validate()?;
    let start = Instant::now();
    let n = scenario.du_count();
    let prep = prepare(scenario);

    let mut options = Vec::with_capacity(n);
    let mut spread = Vec::with_capacity(n);
    for k in 0..n {
        let mut opts: Vec<usize> = (0..4).filter(|&o| prep.allowed[k][o]).collect();
        if opts.is_empty() {
            return Err(ExactError::Infeasible);
        }
        opts.sort_by(|&a, &b| prep.cost[k][a].total_cmp(&prep.cost[k][b]).then(a.cmp(&b)));
        let lo = prep.cost[k][opts[0]];
        let hi = prep.cost[k][*opts.last().unwrap()];
        spread.push(hi - lo);
        options.push(opts);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| spread[b].total_cmp(&spread[a]).then(a.cmp(&b)));
    let mut suffix_min = vec![0.0; n + 1];
    for d in (0..n).rev() {
        let k = order[d];
        suffix_min[d] = suffix_min[d + 1] + prep.cost[k][options[k][0]];
    }

    let dran = SplitAssignment::uniform(SplitOption::S0, n);
    let mut incumbent = None;
    let dran_report = evaluate(scenario, &dran)?;
    if dran_report.feasible {
        incumbent = Some((dran_report.total_cost, dran.0));
    } else if let Some(g) = greedy_start(scenario, &prep) {
        let r = evaluate(scenario, &SplitAssignment(g.clone()))?;
        if r.feasible {
            incumbent = Some((r.total_cost, g));
        }
    }

    let link_count = scenario.topology.links.len();
    let mut search = Search {
        scenario,
        prep,
        order,
        options,
        suffix_min,
        current: vec![SplitOption::S0; n],
        link_load: vec![0.0; link_count],
        cu_load: 0.0,
        incumbent,
        deadline: time_budget.map(|b| start + b),
        timed_out: false,
        nodes: 0,
        #[cfg(debug_assertions)]
        bound_stack: Vec::new(),
    };
    search.dfs(0, 0.0);

    let proof = if search.timed_out {
        Proof::BestFound
    } else {
        Proof::Optimal
    };
    let nodes_expanded = search.nodes;
    let (_, best) = match search.incumbent {
        Some(inc) => inc,
        None if search.timed_out => return Err(ExactError::Timeout),
        None => return Err(ExactError::Infeasible),
    };
    let assignment = SplitAssignment(best);
    let report = evaluate(scenario, &assignment)?;
    log::debug!(
        "exact search: {nodes_expanded} nodes, {:?}, J = {}",
        start.elapsed(),
        report.total_cost
    );
    Ok(ExactSolution {
        assignment,
        report,
        proof,
        nodes_expanded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Link, Node, NodeKind, SystemParams};
    use crate::topology::build_topology;

    /// Star of `loads.len()` DUs around the CU, each on its own link.
    fn star(loads: &[f64], cost: f64, capacity: f64, km: f64) -> Scenario {
        let mut nodes = vec![Node { id: 0, kind: NodeKind::CU, x_km: Some(0.0), y_km: Some(0.0) }];
        let mut links = Vec::new();
        for i in 0..loads.len() {
            nodes.push(Node { id: i + 1, kind: NodeKind::DU, x_km: Some(km), y_km: Some(0.0) });
            links.push(Link {
                a: i + 1,
                b: 0,
                capacity_mbps: capacity,
                cost_per_mbps: cost,
                length_km: None,
            });
        }
        let topo = build_topology(nodes, links).unwrap();
        Scenario::new(topo, loads.to_vec(), SystemParams::default()).unwrap()
    }

    #[test]
    fn forced_s0_by_delay() {
        // 1000 km: 4 ms propagation rules out S2 and S3, S1 is the cheaper of
        // the two remaining only when routing is free; charge routing.
        let mut s = star(&[100.0], 0.0, 1e6, 1000.0);
        s.params.rho_du[1] = 1.0; // S1 now overloads the DU
        let sol = solve_exact(&s, None).unwrap();
        assert_eq!(sol.assignment.0, vec![SplitOption::S0]);
        assert_eq!(sol.proof, Proof::Optimal);
    }

    #[test]
    fn unlimited_free_network_is_cran() {
        let mut s = star(&[150.0, 150.0, 150.0], 0.0, f64::INFINITY, 0.0);
        s.params.cap_cu = f64::MAX;
        let sol = solve_exact(&s, None).unwrap();
        assert_eq!(sol.assignment, SplitAssignment::uniform(SplitOption::S3, 3));
    }

    #[test]
    fn empty_scenario() {
        let s = star(&[], 0.0, 1.0, 0.0);
        let (a, r) = solve_bruteforce(&s).unwrap();
        assert!(a.is_empty());
        assert_eq!(r.total_cost, 0.0);
        assert!(solve_exact(&s, None).unwrap().assignment.is_empty());
    }

    #[test]
    fn independent_bs_separate() {
        let s = star(&[20.0, 140.0], 0.002, 1e6, 10.0);
        let (a, _) = solve_bruteforce(&s).unwrap();
        for k in 0..2 {
            let single = star(&[s.traffic[k]], 0.002, 1e6, 10.0);
            let (b, _) = solve_bruteforce(&single).unwrap();
            assert_eq!(a.0[k], b.0[0]);
        }
    }

    #[test]
    fn shared_cu_capacity_binds() {
        let mut s = star(&[150.0; 4], 0.0, f64::INFINITY, 0.0);
        // Room for one S3 (7.5 RC) beside three S2 (0.2625 RC each).
        s.params.cap_cu = 8.5;
        let (a, r) = solve_bruteforce(&s).unwrap();
        let e = solve_exact(&s, None).unwrap();
        assert_eq!(a, e.assignment);
        assert_eq!(r.total_cost.to_bits(), e.report.total_cost.to_bits());
        assert_eq!(a.0.iter().filter(|&&o| o == SplitOption::S3).count(), 1);
    }

    #[test]
    fn infeasible_detected() {
        let mut s = star(&[150.0], 0.0, 1.0, 0.0);
        s.params.cap_du = 0.0;
        assert!(matches!(solve_exact(&s, None), Err(ExactError::Infeasible)));
        assert!(matches!(solve_bruteforce(&s), Err(ExactError::Infeasible)));
    }

    #[test]
    fn too_large_for_brute_force() {
        let s = star(&[10.0; 13], 0.0, 1e6, 0.0);
        assert!(matches!(solve_bruteforce(&s), Err(ExactError::TooLarge { n: 13, .. })));
    }

    #[test]
    fn zero_budget_returns_incumbent() {
        let s = star(&[100.0; 12], 0.001, 1e6, 1.0);
        let sol = solve_exact(&s, Some(Duration::ZERO)).unwrap();
        assert!(sol.report.feasible);
    }
}
