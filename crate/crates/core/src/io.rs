//! JSON scenario files.
//!
//! ```json
//! {
//!   "nodes": [{"id": 0, "kind": "CU", "x_km": 0.0, "y_km": 0.0}, ...],
//!   "links": [{"a": 1, "b": 0, "capacity_mbps": 10000.0, "cost_per_mbps": 0.01}, ...],
//!   "traffic_mbps": [150.0, ...],
//!   "params": { ... }
//! }
//! ```
//!
//! Node ids must equal their array position and node 0 must be the CU.
//! Links may carry an optional `length_km`. Omitted `params` fields take
//! their default values. Unknown fields are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Link, Node, Result, Scenario, SystemParams, Topology};
use crate::topology::build_topology;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub traffic_mbps: Vec<f64>,
    #[serde(default)]
    pub params: SystemParams,
}

impl ScenarioFile {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            nodes: s.topology.nodes.clone(),
            links: s.topology.links.clone(),
            traffic_mbps: s.traffic.clone(),
            params: s.params.clone(),
        }
    }

    pub fn into_scenario(self) -> Result<Scenario> {
        let topology: Topology = build_topology(self.nodes, self.links)?;
        Scenario::new(topology, self.traffic_mbps, self.params)
    }
}

pub fn scenario_from_json(text: &str) -> Result<Scenario> {
    serde_json::from_str::<ScenarioFile>(text)?.into_scenario()
}

pub fn scenario_to_json(scenario: &Scenario) -> String {
    serde_json::to_string_pretty(&ScenarioFile::from_scenario(scenario))
        .expect("scenario serializes")
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    scenario_from_json(&std::fs::read_to_string(path)?)
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    std::fs::write(path, scenario_to_json(scenario) + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{
        "nodes": [
            {"id": 0, "kind": "CU", "x_km": 0.0, "y_km": 0.0},
            {"id": 1, "kind": "DU", "x_km": 3.0, "y_km": 4.0}
        ],
        "links": [{"a": 1, "b": 0, "capacity_mbps": 10000.0, "cost_per_mbps": 0.05}],
        "traffic_mbps": [100.0],
        "params": {"cap_du": 8.0}
    }"#;

    #[test]
    fn parse_and_roundtrip() {
        let s = scenario_from_json(DOC).unwrap();
        assert_eq!(s.params.cap_du, 8.0);
        assert_eq!(s.params.cap_cu, 75.0);
        assert!((s.topology.paths[0].delay_ms - (1.2 + 20.0 + 5.0) / 1000.0).abs() < 1e-15);
        let again = scenario_from_json(&scenario_to_json(&s)).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = DOC.replace("\"traffic_mbps\"", "\"extra\": 1, \"traffic_mbps\"");
        assert!(scenario_from_json(&bad).is_err());
        let bad = DOC.replace("\"cap_du\"", "\"cap_dux\"");
        assert!(scenario_from_json(&bad).is_err());
    }

    #[test]
    fn traffic_length_checked() {
        let bad = DOC.replace("[100.0]", "[100.0, 5.0]");
        assert!(scenario_from_json(&bad).is_err());
    }
}
