//! Per-BS input features for the policy and critic.
//!
//! Each BS is described by `[load, path routing cost, path delay, smallest
//! link capacity on the path, DU capacity]`. Every column is min-max scaled
//! to `[0, 1]` over the scenario; a constant column becomes 0.

use crate::model::Scenario;

pub const FEATURE_DIM: usize = 5;
pub const LOAD: usize = 0;
pub const ROUTING: usize = 1;

pub type Features = [f64; FEATURE_DIM];

pub fn raw_features(scenario: &Scenario) -> Vec<Features> {
    let topo = &scenario.topology;
    (0..scenario.du_count())
        .map(|k| {
            let path = &topo.paths[k];
            let min_cap = path
                .links
                .iter()
                .map(|&l| topo.links[l].capacity_mbps)
                .fold(f64::INFINITY, f64::min);
            [
                scenario.traffic[k],
                path.routing_cost,
                path.delay_ms,
                min_cap,
                scenario.params.cap_du,
            ]
        })
        .collect()
}

/// Min-max scaled features in DU order. Infinite entries are replaced by the
/// largest finite value of their column first.
pub fn scaled_features(scenario: &Scenario) -> Vec<Features> {
    let mut rows = raw_features(scenario);
    for col in 0..FEATURE_DIM {
        let finite_max = rows
            .iter()
            .map(|r| r[col])
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        let fill = if finite_max.is_finite() { finite_max } else { 0.0 };
        for r in rows.iter_mut() {
            if !r[col].is_finite() {
                r[col] = fill;
            }
        }
        let lo = rows.iter().map(|r| r[col]).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r[col]).fold(f64::NEG_INFINITY, f64::max);
        for r in rows.iter_mut() {
            r[col] = if hi > lo { (r[col] - lo) / (hi - lo) } else { 0.0 };
        }
    }
    rows
}

/// Features in presentation order `order` (a permutation of DU ordinals),
/// with the load and routing columns multiplied by `scale = (load, routing)`
/// when given.
pub fn sequence(features: &[Features], order: &[usize], scale: Option<(f64, f64)>) -> Vec<Vec<f64>> {
    order
        .iter()
        .map(|&k| {
            let mut f = features[k];
            if let Some((a, b)) = scale {
                f[LOAD] *= a;
                f[ROUTING] *= b;
            }
            f.to_vec()
        })
        .collect()
}
