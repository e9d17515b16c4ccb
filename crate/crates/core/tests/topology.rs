use vran_core::model::{Link, Node, NodeKind};
use vran_core::rng::SplitRng;
use vran_core::topology::{
    build_topology, generate_waxman, generate_waxman_detailed, shortest_paths, waxman_probability,
    WaxmanConfig,
};

/// Random connected graph: a random spanning tree plus extra edges.
fn random_graph(seed: u64, n: usize, n_du: usize) -> (Vec<Node>, Vec<Link>) {
    let mut rng = SplitRng::new(seed);
    let nodes: Vec<Node> = (0..n)
        .map(|id| Node {
            id,
            kind: match id {
                0 => NodeKind::CU,
                i if i <= n_du => NodeKind::DU,
                _ => NodeKind::Router,
            },
            x_km: Some(rng.range(0.0, 100.0)),
            y_km: Some(rng.range(0.0, 100.0)),
        })
        .collect();
    let mut links = Vec::new();
    let link = |rng: &mut SplitRng, a: usize, b: usize| Link {
        a,
        b,
        capacity_mbps: rng.range(1_000.0, 10_000.0),
        // A coarse grid of costs makes equal-cost alternatives common.
        cost_per_mbps: (rng.below(5) + 1) as f64 * 0.25,
        length_km: None,
    };
    for v in 1..n {
        let u = rng.below(v);
        links.push(link(&mut rng, u, v));
    }
    for _ in 0..2 * n {
        let a = rng.below(n);
        let b = rng.below(n);
        if a != b {
            links.push(link(&mut rng, a.min(b), a.max(b)));
        }
    }
    (nodes, links)
}

fn bellman_ford(n: usize, links: &[Link], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; n];
    dist[source] = 0.0;
    for _ in 0..n {
        let mut changed = false;
        for l in links {
            for (u, v) in [(l.a, l.b), (l.b, l.a)] {
                if dist[u] + l.cost_per_mbps < dist[v] {
                    dist[v] = dist[u] + l.cost_per_mbps;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    dist
}

#[test]
fn shortest_paths_agree_with_bellman_ford() {
    for seed in 0..40 {
        let (nodes, links) = random_graph(seed, 50, 20);
        let topo = build_topology(nodes, links.clone()).unwrap();
        let dist = bellman_ford(50, &links, 0);
        let paths = shortest_paths(&topo).unwrap();
        assert_eq!(paths, topo.paths);
        for (k, p) in paths.iter().enumerate() {
            let du = topo.dus[k];
            assert_eq!(p.nodes.first(), Some(&du));
            assert_eq!(p.nodes.last(), Some(&0));
            assert_eq!(p.links.len() + 1, p.nodes.len());
            let mut sum = 0.0;
            for (i, &l) in p.links.iter().enumerate() {
                let link = &topo.links[l];
                let (u, v) = (p.nodes[i], p.nodes[i + 1]);
                assert!((link.a, link.b) == (u, v) || (link.a, link.b) == (v, u));
                sum += link.cost_per_mbps;
            }
            assert!((sum - p.routing_cost).abs() <= 1e-12, "seed {seed} DU {du}");
            assert!((p.routing_cost - dist[du]).abs() <= 1e-12, "seed {seed} DU {du}: {} vs {}", p.routing_cost, dist[du]);
        }
    }
}

/// Link counts pooled over many seeds stay within three standard deviations
/// of the Waxman expectation.
#[test]
fn waxman_link_count_matches_expectation() {
    let (mut observed, mut mean, mut var) = (0.0, 0.0, 0.0);
    for seed in 0..30 {
        let cfg = WaxmanConfig { n_du: 20, n_router: 9, alpha: 0.6, beta: 0.2, seed, ..WaxmanConfig::default() };
        let out = generate_waxman_detailed(&cfg).unwrap();
        let nodes = &out.topology.nodes;
        let coords: Vec<(f64, f64)> = nodes.iter().map(|n| n.coords().unwrap()).collect();
        let d = |a: usize, b: usize| (coords[a].0 - coords[b].0).hypot(coords[a].1 - coords[b].1);
        let m = nodes.len();
        let d_max = (0..m).flat_map(|u| (u + 1..m).map(move |v| (u, v))).map(|(u, v)| d(u, v)).fold(0.0, f64::max);
        for u in 0..m {
            for v in u + 1..m {
                let p = waxman_probability(d(u, v), d_max, cfg.alpha, cfg.beta);
                mean += p;
                var += p * (1.0 - p);
            }
        }
        observed += out.sampled_links as f64;
    }
    let sd = var.sqrt();
    assert!((observed - mean).abs() <= 3.0 * sd, "observed {observed}, expected {mean} +- {sd}");
}

#[test]
fn waxman_same_seed_same_topology() {
    let cfg = WaxmanConfig { seed: 77, ..WaxmanConfig::default() };
    assert_eq!(generate_waxman(&cfg).unwrap(), generate_waxman(&cfg).unwrap());
    let other = WaxmanConfig { seed: 78, ..cfg.clone() };
    assert_ne!(generate_waxman(&cfg).unwrap(), generate_waxman(&other).unwrap());
}

#[test]
fn waxman_topologies_are_connected() {
    for seed in 0..20 {
        let cfg = WaxmanConfig { n_du: 15, n_router: 5, alpha: 0.1, beta: 0.05, seed, ..WaxmanConfig::default() };
        let t = generate_waxman(&cfg).unwrap();
        assert_eq!(t.paths.len(), 15);
        assert!(t.paths.iter().all(|p| p.nodes.last() == Some(&0)));
    }
}
