//! Built-in scenarios.
//!
//! | name                | K | CSI                                                        |
//! |---------------------|---|------------------------------------------------------------|
//! | `centralized_2user` | 2 | one shared estimate, Σ = [[0, σ], [σ, 1]]; cross gain (1,2) variance 0.25 |
//! | `distributed_2user` | 2 | Σ⁽¹⁾ = σ·ones, Σ⁽²⁾ = 0                                     |
//! | `distributed_3user` | 3 | Σ⁽³⁾ = σ·ones, Σ⁽¹⁾ = Σ⁽²⁾ = 0 (noisy TX configurable)       |

use super::scenario::{PolicyName, ScenarioConfig, SigmaEntry, SigmaTemplate};
use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Names of the built-in scenarios, in listing order.
pub const PRESET_NAMES: [&str; 3] = ["centralized_2user", "distributed_2user", "distributed_3user"];

fn filled(k: usize, e: SigmaEntry) -> SigmaTemplate {
    vec![vec![e; k]; k]
}

fn base(name: &str, k_users: usize, csi_template: Vec<SigmaTemplate>) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        k_users,
        p_max: 1.0,
        noise_power: 1.0,
        n_eval: 50_000,
        shared_estimate: false,
        policies: PolicyName::ALL.to_vec(),
        gain_variance: None,
        csi_template,
        train: TrainConfig::default(),
    }
}

/// Two users sharing one estimate. TX 1's own gain is known, the cross gains
/// are noisy at level σ and the gain of link 2 is pure noise; the cross
/// channel from TX 2 to RX 1 has variance 0.25.
pub fn centralized_2user() -> ScenarioConfig {
    let zero = SigmaEntry::constant(0.0);
    let one = SigmaEntry::constant(1.0);
    let template = vec![vec![zero, SigmaEntry::SIGMA], vec![SigmaEntry::SIGMA, one]];
    let mut s = base("centralized_2user", 2, vec![template.clone(), template]);
    s.shared_estimate = true;
    s.gain_variance = Some(vec![vec![1.0, 0.25], vec![1.0, 1.0]]);
    s
}

/// TX 1 sees every gain with noise level σ, TX 2 has perfect CSI.
pub fn distributed_2user() -> ScenarioConfig {
    base(
        "distributed_2user",
        2,
        vec![filled(2, SigmaEntry::SIGMA), filled(2, SigmaEntry::constant(0.0))],
    )
}

/// Three users, one of them (`noisy_tx`, 0-based) with noise level σ on every
/// gain and the other two perfectly informed.
pub fn distributed_3user(noisy_tx: usize) -> Result<ScenarioConfig> {
    if noisy_tx >= 3 {
        return Err(Error::IndexOutOfRange { index: noisy_tx, k_users: 3 });
    }
    let template = (0..3)
        .map(|j| filled(3, if j == noisy_tx { SigmaEntry::SIGMA } else { SigmaEntry::constant(0.0) }))
        .collect();
    Ok(base("distributed_3user", 3, template))
}

/// All presets with their default parameters.
pub fn preset_scenarios() -> Vec<ScenarioConfig> {
    vec![centralized_2user(), distributed_2user(), distributed_3user(2).expect("valid index")]
}

pub fn preset(name: &str) -> Option<ScenarioConfig> {
    preset_scenarios().into_iter().find(|s| s.name == name)
}

pub fn describe(name: &str) -> &'static str {
    match name {
        "centralized_2user" => "2 users, one estimate shared by both TXs, Sigma = [[0, s], [s, 1]], cross gain (1,2) attenuated to 0.25",
        "distributed_2user" => "2 users, TX 1 noisy (Sigma1 = s * ones), TX 2 perfect (Sigma2 = 0)",
        "distributed_3user" => "3 users, TX 3 noisy (Sigma3 = s * ones), TX 1 and TX 2 perfect",
        _ => "",
    }
}
