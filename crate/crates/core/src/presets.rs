//! Bundled experiment configurations.
//!
//! Each preset is a complete TOML experiment file compiled into the
//! binary, so the verification suites and the command-line tool run the
//! exact same artifacts.  [`get`] looks one up by name and [`NAMES`]
//! lists them in a stable order.

/// `(name, toml_text)` pairs for every bundled configuration.
pub const PRESETS: &[(&str, &str)] = &[
    (
        "energy-berger-2d",
        include_str!("../configs/energy_berger_2d.toml"),
    ),
    (
        "oracle-constant-delay",
        include_str!("../configs/oracle_constant_delay.toml"),
    ),
    (
        "dissipativity-berger",
        include_str!("../configs/dissipativity_berger.toml"),
    ),
    (
        "lipschitz-berger",
        include_str!("../configs/lipschitz_berger.toml"),
    ),
    (
        "residual-berger",
        include_str!("../configs/residual_berger.toml"),
    ),
    (
        "residual-kirchhoff",
        include_str!("../configs/residual_kirchhoff.toml"),
    ),
    (
        "attractor-berger-cycle",
        include_str!("../configs/attractor_berger_cycle.toml"),
    ),
    (
        "vanishing-delay-rational",
        include_str!("../configs/vanishing_delay_rational.toml"),
    ),
    ("ode-switches", include_str!("../configs/ode_switches.toml")),
];

/// Preset names, in bundle order.
pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// The TOML text of the named preset, if bundled.
pub fn get(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

/// Parse the named preset.
pub fn load(name: &str) -> crate::Result<crate::config::ExperimentConfig> {
    let text = get(name).ok_or_else(|| {
        crate::Error::Config(format!(
            "unknown preset {name:?}; available: {}",
            names().join(", ")
        ))
    })?;
    crate::config::ExperimentConfig::parse(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_validates_and_builds() {
        for (name, text) in PRESETS {
            let cfg = crate::config::ExperimentConfig::parse(text)
                .unwrap_or_else(|e| panic!("preset {name}: {e}"));
            cfg.build().unwrap_or_else(|e| panic!("preset {name}: {e}"));
        }
    }

    #[test]
    fn every_preset_round_trips_through_serialization() {
        for (name, text) in PRESETS {
            let cfg = crate::config::ExperimentConfig::parse(text).unwrap();
            let re = crate::config::ExperimentConfig::parse(&cfg.to_toml().unwrap())
                .unwrap_or_else(|e| panic!("preset {name}: {e}"));
            assert_eq!(cfg, re, "preset {name} changed under round-trip");
        }
    }

    #[test]
    fn names_are_unique_and_lookup_works() {
        let names = names();
        for (i, a) in names.iter().enumerate() {
            for b in &names[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert!(get("energy-berger-2d").is_some());
        assert!(get("no-such-preset").is_none());
        assert!(load("no-such-preset").is_err());
    }
}
