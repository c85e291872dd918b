//! Reproduction harness: scenarios, presets, σ sweeps and CSV output.

pub mod presets;
pub mod scenario;
pub mod sweep;

pub use presets::{preset, preset_scenarios, PRESET_NAMES};
pub use scenario::{load_scenario, PolicyName, ScenarioConfig, SigmaEntry};
pub use sweep::{parse_sigma_grid, run_sweep, Metric, SweepPoint, SweepRow};

use std::path::Path;

use crate::error::Result;

/// Resolves `--scenario`: an existing file path, else a preset name.
pub fn resolve_scenario(spec: &str) -> Result<ScenarioConfig> {
    let path = Path::new(spec);
    if path.exists() {
        return load_scenario(path);
    }
    preset(spec).ok_or_else(|| crate::Error::Config {
        path: spec.into(),
        reason: format!("no such file or preset (presets: {})", PRESET_NAMES.join(", ")),
    })
}
