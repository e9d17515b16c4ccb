//! Fixed benchmark instances.

use serde::{Deserialize, Serialize};

use crate::model::{Scenario, SystemParams};
use crate::rng::SplitRng;
use crate::topology::{generate_waxman, WaxmanConfig};

const TRAFFIC_TAG: u64 = 0x7AFF;

/// A Waxman topology plus uniformly drawn per-DU loads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedScenario {
    pub waxman: WaxmanConfig,
    /// Loads are drawn from this range and rounded to 0.1 Mbps.
    pub traffic_range: (f64, f64),
    #[serde(default)]
    pub params: SystemParams,
}

impl GeneratedScenario {
    pub fn build(&self) -> Result<Scenario, crate::model::ModelError> {
        let topology = generate_waxman(&self.waxman)?;
        let traffic = self.draw_traffic(topology.du_count());
        Scenario::new(topology, traffic, self.params.clone())
    }

    /// Loads for `n` DUs, seeded by the Waxman seed.
    pub fn draw_traffic(&self, n: usize) -> Vec<f64> {
        let mut rng = SplitRng::derive(self.waxman.seed, &[TRAFFIC_TAG]);
        let (lo, hi) = self.traffic_range;
        (0..n).map(|_| (rng.range(lo, hi) * 10.0).round() / 10.0).collect()
    }
}

/// Ten DUs and four routers on a 350 km square. Four paths are too long
/// for S2, so the optimum mixes S1 and S2.
pub fn standard_spec() -> GeneratedScenario {
    GeneratedScenario {
        waxman: WaxmanConfig {
            n_du: 10,
            n_router: 4,
            alpha: 0.5,
            beta: 0.1,
            area_km: 350.0,
            capacity_range: (2_000.0, 8_000.0),
            link_cost_range: (1e-5, 1e-4),
            seed: 5,
        },
        traffic_range: (10.0, 150.0),
        params: SystemParams::default(),
    }
}

pub fn standard() -> Scenario {
    standard_spec().build().expect("standard benchmark is valid")
}

/// Thirty-two DUs on a compact area with free routing, so S3 is the
/// cheapest split everywhere and only the CU capacity limits how many BSs
/// can use it.
pub fn large_spec() -> GeneratedScenario {
    GeneratedScenario {
        waxman: WaxmanConfig {
            n_du: 32,
            n_router: 4,
            alpha: 0.5,
            beta: 0.1,
            area_km: 20.0,
            capacity_range: (40_000.0, 100_000.0),
            link_cost_range: (0.0, 0.0),
            seed: 1,
        },
        traffic_range: (10.0, 150.0),
        params: SystemParams {
            cap_cu: 95.0,
            ..SystemParams::default()
        },
    }
}

pub fn large() -> Scenario {
    large_spec().build().expect("large benchmark is valid")
}
