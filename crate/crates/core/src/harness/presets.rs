//! The checked-in fault scenarios.

use crate::harness::config::{ConfigError, ScenarioConfig};

/// `(name, TOML source)` for every preset.
pub const PRESETS: [(&str, &str); 3] = [
    ("sag", include_str!("../../presets/sag.toml")),
    ("short", include_str!("../../presets/short.toml")),
    ("shift", include_str!("../../presets/shift.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

pub fn preset(name: &str) -> Option<Result<ScenarioConfig, ConfigError>> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ScenarioConfig::parse(text))
}
