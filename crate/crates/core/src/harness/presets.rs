//! Configurations shipped with the crate, one per experiment.

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;

pub const PRESETS: &[(&str, &str)] = &[
    ("prop1", include_str!("../../presets/prop1.conf")),
    ("drift", include_str!("../../presets/drift.conf")),
    ("dpo", include_str!("../../presets/dpo.conf")),
    ("fit_mixture", include_str!("../../presets/fit_mixture.conf")),
    ("fit_ridge", include_str!("../../presets/fit_ridge.conf")),
    ("gradcheck", include_str!("../../presets/gradcheck.conf")),
    ("mechanics", include_str!("../../presets/mechanics.conf")),
    ("pointmass", include_str!("../../presets/pointmass.conf")),
    ("random_pointmass", include_str!("../../presets/random_pointmass.conf")),
];

pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        Error::invalid(format!("unknown preset `{name}` (available: {})", names.join(", ")))
    })
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::parse(preset_text(name)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses() {
        for (name, _) in PRESETS {
            let cfg = preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            cfg.train_options().unwrap();
            if cfg.is_set("env") {
                cfg.env().unwrap();
            }
        }
        assert!(preset("nope").is_err());
    }
}
