//! Bundled scenarios.

use robsig::sysmodel::{tracking_benchmark, MeasurementMode, Scenario};

use crate::CliError;

pub const PRESETS: [&str; 2] = ["tracking-perfect", "tracking-imperfect"];

pub fn preset(name: &str) -> Result<Scenario, CliError> {
    match name {
        "tracking-perfect" => Ok(tracking_benchmark(MeasurementMode::Perfect)),
        "tracking-imperfect" => Ok(tracking_benchmark(MeasurementMode::Imperfect)),
        _ => Err(CliError::Parse(format!(
            "unknown preset {name} (available: {})",
            PRESETS.join(", ")
        ))),
    }
}
