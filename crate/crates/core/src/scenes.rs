//! Scenes shipped with the crate, in increasing order of difficulty.

use crate::world::{parse_scenario, Scenario, ScenarioError};

/// `(name, scenario text)`.
pub const BUNDLED: [(&str, &str); 5] = [
    ("house", include_str!("../scenes/house.toml")),
    ("store", include_str!("../scenes/store.toml")),
    ("restaurant", include_str!("../scenes/restaurant.toml")),
    ("office", include_str!("../scenes/office.toml")),
    ("garden", include_str!("../scenes/garden.toml")),
];

const MANUALS: [(&str, &str); 1] = [("manuals/a4wd3.md", include_str!("../scenes/manuals/a4wd3.md"))];

fn resolve(path: &str) -> Result<String, String> {
    MANUALS
        .iter()
        .find(|(p, _)| *p == path)
        .map(|(_, text)| text.to_string())
        .ok_or_else(|| format!("{path}: not a bundled manual"))
}

/// One bundled scene by name.
pub fn bundled_scene(name: &str) -> Option<Result<Scenario, ScenarioError>> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_scenario(text, &resolve))
}

/// All bundled scenes in suite order.
pub fn bundled_scenes() -> Vec<Scenario> {
    BUNDLED
        .iter()
        .map(|(_, text)| parse_scenario(text, &resolve).expect("bundled scenes are valid"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{load_scenario, min_steps, DEFAULT_SEARCH_BUDGET};

    #[test]
    fn bundled_match_files_on_disk() {
        for ((name, _), scene) in BUNDLED.iter().zip(bundled_scenes()) {
            let path = format!("{}/scenes/{name}.toml", env!("CARGO_MANIFEST_DIR"));
            let disk = load_scenario(path).unwrap();
            assert_eq!(scene.name, *name);
            assert_eq!(scene.content_hash(), disk.content_hash());
        }
        assert!(bundled_scene("attic").is_none());
    }

    #[test]
    fn declared_min_steps_are_exact_and_nondecreasing() {
        let mut last = 0;
        for scene in bundled_scenes() {
            let computed = min_steps(&scene, DEFAULT_SEARCH_BUDGET).unwrap();
            assert_eq!(scene.min_steps, computed, "{}", scene.name);
            assert!(computed >= last, "{}", scene.name);
            last = computed;
        }
    }
}
