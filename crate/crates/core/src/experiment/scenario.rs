//! Scenario definitions loaded from TOML.
//!
//! ```toml
//! name = "distributed_2user"
//! k_users = 2
//! p_max = 1.0                 # optional, default 1.0
//! noise_power = 1.0           # optional, default 1.0
//! n_eval = 50000              # optional, default 50000
//! shared_estimate = false     # optional; true = one estimate draw shared by all TXs
//! policies = ["cdnn", "locally_robust", "naive", "perfect_csi", "tdma", "always_on"]
//! gain_variance = [[1.0, 1.0], [1.0, 1.0]]   # optional, default all ones
//! # One K×K matrix per TX. Entries are numbers or affine expressions in
//! # sigma such as "sigma", "0.5*sigma", "1 - sigma".
//! csi_template = [
//!   [["sigma", "sigma"], ["sigma", "sigma"]],
//!   [[0, 0], [0, 0]],
//! ]
//!
//! [train]                     # every key optional
//! n_train = 30000
//! batch_size = 5000
//! steps = 10000
//! learning_rate = 0.001
//! dropout_rate = 0.5
//! seed = 0
//! pretrain_steps = 2000
//! pretrain_labels_from = "estimate"   # or "truth"
//! hidden_layers = [30, 30, 30]
//! ```

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelDistribution, CsiNoiseSpec, GainVarianceSpec, SquareMatrix};
use crate::error::{Error, Result};
use crate::rate::RateParams;
use crate::training::TrainConfig;

/// Scheduling strategies a scenario can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Cdnn,
    LocallyRobust,
    Naive,
    PerfectCsi,
    Tdma,
    AlwaysOn,
}

impl PolicyName {
    pub const ALL: [PolicyName; 6] = [
        PolicyName::Cdnn,
        PolicyName::LocallyRobust,
        PolicyName::Naive,
        PolicyName::PerfectCsi,
        PolicyName::Tdma,
        PolicyName::AlwaysOn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::Cdnn => "cdnn",
            PolicyName::LocallyRobust => "locally_robust",
            PolicyName::Naive => "naive",
            PolicyName::PerfectCsi => "perfect_csi",
            PolicyName::Tdma => "tdma",
            PolicyName::AlwaysOn => "always_on",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, PolicyName::Cdnn | PolicyName::LocallyRobust)
    }
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyName {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        PolicyName::ALL
            .into_iter()
            .find(|p| p.as_str() == text)
            .ok_or_else(|| Error::invalid("policy", format!("unknown policy `{text}`")))
    }
}

/// A noise-matrix entry `scale * sigma + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaEntry {
    pub scale: f64,
    pub offset: f64,
}

impl SigmaEntry {
    pub const SIGMA: SigmaEntry = SigmaEntry { scale: 1.0, offset: 0.0 };

    pub fn constant(value: f64) -> Self {
        SigmaEntry { scale: 0.0, offset: value }
    }

    pub fn at(&self, sigma: f64) -> f64 {
        self.scale * sigma + self.offset
    }
}

impl FromStr for SigmaEntry {
    type Err = String;

    fn from_str(text: &str) -> std::result::Result<Self, String> {
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let compact = compact.replace('σ', "sigma");
        if compact.is_empty() {
            return Err("empty expression".into());
        }
        let mut entry = SigmaEntry { scale: 0.0, offset: 0.0 };
        // Split into signed terms.
        let mut terms = Vec::new();
        let mut start = 0;
        for (i, c) in compact.char_indices() {
            if (c == '+' || c == '-') && i > 0 && !compact[..i].ends_with(['e', 'E', '*']) {
                terms.push(&compact[start..i]);
                start = i;
            }
        }
        terms.push(&compact[start..]);
        for term in terms {
            let (sign, body) = match term.strip_prefix('-') {
                Some(rest) => (-1.0, rest),
                None => (1.0, term.strip_prefix('+').unwrap_or(term)),
            };
            if body == "sigma" {
                entry.scale += sign;
            } else if let Some(coef) = body.strip_suffix("*sigma").or_else(|| body.strip_suffix("sigma")) {
                let c: f64 = coef.parse().map_err(|_| format!("bad coefficient `{coef}` in `{text}`"))?;
                entry.scale += sign * c;
            } else if let Some(coef) = body.strip_prefix("sigma*") {
                let c: f64 = coef.parse().map_err(|_| format!("bad coefficient `{coef}` in `{text}`"))?;
                entry.scale += sign * c;
            } else {
                let c: f64 = body.parse().map_err(|_| format!("bad term `{body}` in `{text}`"))?;
                entry.offset += sign * c;
            }
        }
        if !(entry.scale.is_finite() && entry.offset.is_finite()) {
            return Err(format!("non-finite expression `{text}`"));
        }
        Ok(entry)
    }
}

impl fmt::Display for SigmaEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (s, o) = (self.scale, self.offset);
        if s == 0.0 {
            return write!(f, "{o}");
        }
        let term = if s.abs() == 1.0 { "sigma".to_string() } else { format!("{}*sigma", s.abs()) };
        match (o == 0.0, s < 0.0) {
            (true, false) => f.write_str(&term),
            (true, true) => write!(f, "-{term}"),
            (false, false) => write!(f, "{o} + {term}"),
            (false, true) => write!(f, "{o} - {term}"),
        }
    }
}

#[derive(Deserialize, Serialize)]
#[serde(untagged)]
enum RawEntry {
    Number(f64),
    Integer(i64),
    Expr(String),
}

impl<'de> Deserialize<'de> for SigmaEntry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match RawEntry::deserialize(d)? {
            RawEntry::Number(x) => Ok(SigmaEntry::constant(x)),
            RawEntry::Integer(x) => Ok(SigmaEntry::constant(x as f64)),
            RawEntry::Expr(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl Serialize for SigmaEntry {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.scale == 0.0 {
            s.serialize_f64(self.offset)
        } else {
            s.serialize_str(&self.to_string())
        }
    }
}

pub type SigmaTemplate = Vec<Vec<SigmaEntry>>;

fn default_p_max() -> f64 {
    1.0
}
fn default_noise_power() -> f64 {
    1.0
}
fn default_n_eval() -> usize {
    50_000
}
fn default_policies() -> Vec<PolicyName> {
    PolicyName::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub k_users: usize,
    #[serde(default = "default_p_max")]
    pub p_max: f64,
    #[serde(default = "default_noise_power")]
    pub noise_power: f64,
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    #[serde(default)]
    pub shared_estimate: bool,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_variance: Option<Vec<Vec<f64>>>,
    pub csi_template: Vec<SigmaTemplate>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn config_err(path: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config { path: path.into(), reason: reason.into() }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let path = e.span().map(|s| format!("bytes {}..{}", s.start, s.end)).unwrap_or_else(|| "<root>".into());
            config_err(path, e.message().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn rate_params(&self) -> RateParams {
        RateParams { p_max: self.p_max, noise_power: self.noise_power }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k_users;
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(config_err("name", "use letters, digits, `_` or `-`"));
        }
        if k == 0 {
            return Err(config_err("k_users", "must be at least 1"));
        }
        RateParams::new(self.p_max, self.noise_power).map_err(|e| config_err("p_max/noise_power", e.to_string()))?;
        if self.n_eval == 0 {
            return Err(config_err("n_eval", "must be at least 1"));
        }
        if self.policies.is_empty() {
            return Err(config_err("policies", "list at least one policy"));
        }
        for (i, p) in self.policies.iter().enumerate() {
            if self.policies[..i].contains(p) {
                return Err(config_err(format!("policies[{i}]"), format!("duplicate `{p}`")));
            }
        }
        if let Some(rows) = &self.gain_variance {
            if rows.len() != k {
                return Err(config_err("gain_variance", format!("expected {k} rows, got {}", rows.len())));
            }
            for (i, row) in rows.iter().enumerate() {
                if row.len() != k {
                    return Err(config_err(format!("gain_variance[{i}]"), format!("expected {k} entries")));
                }
                for (c, v) in row.iter().enumerate() {
                    if !(v.is_finite() && *v >= 0.0) {
                        return Err(config_err(format!("gain_variance[{i}][{c}]"), "must be finite and >= 0"));
                    }
                }
            }
        }
        if self.csi_template.len() != k {
            return Err(config_err("csi_template", format!("expected {k} matrices, got {}", self.csi_template.len())));
        }
        for (j, m) in self.csi_template.iter().enumerate() {
            if m.len() != k {
                return Err(config_err(format!("csi_template[{j}]"), format!("expected {k} rows")));
            }
            for (r, row) in m.iter().enumerate() {
                if row.len() != k {
                    return Err(config_err(format!("csi_template[{j}][{r}]"), format!("expected {k} entries")));
                }
                for (c, e) in row.iter().enumerate() {
                    // Affine in sigma, so the endpoints bound every grid value in [0, 1].
                    for sigma in [0.0, 1.0] {
                        let v = e.at(sigma);
                        if !(0.0..=1.0).contains(&v) {
                            return Err(config_err(
                                format!("csi_template[{j}][{r}][{c}]"),
                                format!("`{e}` resolves to {v} at sigma = {sigma}, outside [0, 1]"),
                            ));
                        }
                    }
                }
            }
        }
        if self.shared_estimate && self.csi_template.iter().any(|m| m != &self.csi_template[0]) {
            return Err(config_err("shared_estimate", "requires identical csi_template matrices"));
        }
        self.train.validate().map_err(|e| config_err("train", e.to_string()))?;
        Ok(())
    }

    pub fn gain_variance_spec(&self) -> Result<GainVarianceSpec> {
        match &self.gain_variance {
            None => Ok(GainVarianceSpec::unit(self.k_users)),
            Some(rows) => GainVarianceSpec::new(SquareMatrix::from_rows(rows)?),
        }
    }

    /// Per-TX sigma matrices at a given sigma.
    pub fn sigma_matrices(&self, sigma: f64) -> Result<Vec<SquareMatrix>> {
        if !(0.0..=1.0).contains(&sigma) {
            return Err(Error::invalid("sigma", format!("{sigma} is outside [0, 1]")));
        }
        self.csi_template
            .iter()
            .map(|m| {
                let rows: Vec<Vec<f64>> = m.iter().map(|row| row.iter().map(|e| e.at(sigma)).collect()).collect();
                SquareMatrix::from_rows(&rows)
            })
            .collect()
    }

    /// The joint channel/estimate distribution at a given sigma.
    pub fn distribution(&self, sigma: f64) -> Result<ChannelDistribution> {
        let mut sigmas = self.sigma_matrices(sigma)?;
        let noise = if self.shared_estimate {
            CsiNoiseSpec::shared(sigmas.swap_remove(0), self.k_users)?
        } else {
            CsiNoiseSpec::new(sigmas)?
        };
        ChannelDistribution::new(self.gain_variance_spec()?, noise)
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScenarioConfig::from_toml(&text)
}
