//! Built-in scenarios: a 12 × 8 m room walked twice around a rectangular
//! loop, with static or relocated boxes and with or without walking agents.

use super::{Scenario, ScenarioConfig, SimError};

const SOURCES: [(&str, &str); 4] = [
    ("S-SASO", include_str!("../../scenarios/s_saso.toml")),
    ("S-SAMO", include_str!("../../scenarios/s_samo.toml")),
    ("S-MASO", include_str!("../../scenarios/s_maso.toml")),
    ("S-MAMO", include_str!("../../scenarios/s_mamo.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    SOURCES.iter().map(|(n, _)| *n)
}

pub fn config(name: &str) -> Option<ScenarioConfig> {
    SOURCES
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, src)| ScenarioConfig::from_toml(src).expect("built-in scenario parses"))
}

/// Builds a built-in scenario with the given seed.
pub fn scenario(name: &str, seed: u64) -> Result<Scenario, SimError> {
    let mut c = config(name).ok_or_else(|| SimError::Config(format!("unknown scenario {name}")))?;
    c.seed = seed;
    Scenario::build(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_build() {
        for n in names() {
            let s = scenario(n, 1).unwrap();
            assert!(s.frame_count() > 1000, "{n}");
        }
    }

    #[test]
    fn moved_scenarios_relocate_most_objects() {
        let s = scenario("S-SAMO", 4).unwrap();
        let moved = s.objects.iter().filter(|o| !o.relocations.is_empty()).count();
        assert_eq!(moved, 7);
        assert!(scenario("S-SASO", 4).unwrap().objects.iter().all(|o| o.relocations.is_empty()));
    }
}
