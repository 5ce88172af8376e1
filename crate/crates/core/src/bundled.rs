//! Synthetic networks shipped with the crate.

use crate::netmodel::{parse_network, AcNetwork, GmdScenario};

pub const CASE5_TOML: &str = include_str!("../data/case5_synth.toml");
pub const CASE12_TOML: &str = include_str!("../data/case12_synth.toml");
pub const CASE21_TOML: &str = include_str!("../data/case21_synth.toml");

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 3] = ["case5_synth", "case12_synth", "case21_synth"];

/// 5 buses, 3 substations, 2 transformers.
pub fn case5() -> AcNetwork {
    parse_network(CASE5_TOML).expect("bundled case5_synth is valid")
}

/// 12 buses, 6 substations, two transformers of each topology.
pub fn case12() -> AcNetwork {
    parse_network(CASE12_TOML).expect("bundled case12_synth is valid")
}

/// 21 buses, 8 substations, 13 transformers.
pub fn case21() -> AcNetwork {
    parse_network(CASE21_TOML).expect("bundled case21_synth is valid")
}

pub fn by_name(name: &str) -> Option<AcNetwork> {
    match name {
        "case5_synth" | "case5" => Some(case5()),
        "case12_synth" | "case12" => Some(case12()),
        "case21_synth" | "case21" => Some(case21()),
        _ => None,
    }
}

/// A bundled (network, scenario, budget) triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Instance {
    pub network: &'static str,
    /// V/km.
    pub efield: f64,
    /// Compass bearing, degrees.
    pub direction: f64,
    pub budget: usize,
}

impl Instance {
    pub fn network(&self) -> AcNetwork {
        by_name(self.network).expect("bundled instance names a bundled network")
    }

    pub fn scenario(&self) -> GmdScenario {
        GmdScenario::field(self.efield, self.direction)
    }
}

/// ADMM penalty-schedule stress case: the strongest field of the standard
/// grid on the 5-bus network with a single device.
pub const STRESS: Instance = Instance { network: "case5_synth", efield: 20.0, direction: 45.0, budget: 1 };
