//! σ sweeps: train and evaluate every requested policy at each grid point
//! and emit one CSV row per (σ, policy) rate and per (σ, policy, TX) fraction.
//!
//! Seeds: each point derives its own seed from the root seed and the σ value
//! (quantized to 1e-9), so a point can be re-run alone with `train`/`eval`
//! and reproduces its sweep row. Training and evaluation sets use disjoint
//! sub-streams of the point seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::scenario::{PolicyName, ScenarioConfig};
use crate::channel::ChannelSample;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::rate::RateParams;
use crate::seed::{self, role};
use crate::training::{
    best_tdma, evaluate_policy, pretrained_policies, train_joint_with, train_locally_robust, AlwaysOn, EvalReport,
    LocallyRobustSet, Naive, PerfectCsi, PolicySet, TrainConfig,
};

pub const CSV_HEADER: &str = "scenario,sigma,policy,metric,tx_index,value,ci_halfwidth,n_eval,seed";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    SumRate,
    TransmitFraction,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::SumRate => "sum_rate",
            Metric::TransmitFraction => "transmit_fraction",
        }
    }
}

/// One CSV record.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scenario: String,
    pub sigma: f64,
    pub policy: PolicyName,
    pub metric: Metric,
    /// 1-based TX number for fraction rows.
    pub tx_index: Option<usize>,
    /// `None` marks a policy whose training failed.
    pub value: Option<f64>,
    pub ci_halfwidth: Option<f64>,
    pub n_eval: usize,
    pub seed: u64,
}

/// Formats like C's `%.6g`.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-4..6).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    let fixed = format!("{x:.decimals$}");
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        fixed
    }
}

impl SweepRow {
    pub fn to_csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_sig6).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.scenario,
            fmt_sig6(self.sigma),
            self.policy,
            self.metric.as_str(),
            self.tx_index.map(|t| t.to_string()).unwrap_or_default(),
            self.value.map(fmt_sig6).unwrap_or_else(|| "error".into()),
            opt(self.ci_halfwidth),
            self.n_eval,
            self.seed,
        )
    }
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv_line());
    }
    out
}

pub fn write_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    fs::write(path, to_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Parses `a:b:step`, a comma-separated list, or a single value.
pub fn parse_sigma_grid(text: &str) -> Result<Vec<f64>> {
    let bad = |reason: String| Error::invalid("sigma grid", reason);
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("`{s}` is not a number")));
    let grid = if let [a, b, step] = text.split(':').collect::<Vec<_>>()[..] {
        let (a, b, step) = (num(a)?, num(b)?, num(step)?);
        if step.is_nan() || step <= 0.0 || b < a {
            return Err(bad(format!("need start <= end and step > 0 in `{text}`")));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        // Round away accumulated binary error so 0.1 * 3 prints as 0.3.
        (0..=n).map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12).collect()
    } else if text.contains(':') {
        return Err(bad(format!("expected a:b:step, got `{text}`")));
    } else {
        text.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if grid.is_empty() {
        return Err(bad("empty grid".into()));
    }
    if let Some(s) = grid.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(bad(format!("{s} is outside [0, 1]")));
    }
    Ok(grid)
}

/// Default grid: 0.0 to 1.0 in steps of 0.1.
pub fn default_sigma_grid() -> Vec<f64> {
    parse_sigma_grid("0:1:0.1").expect("static grid")
}

/// Seed of the sweep point at `sigma` under `root`.
pub fn point_seed(root: u64, sigma: f64) -> u64 {
    seed::derive(root, &[role::SWEEP_POINT, (sigma * 1e9).round() as u64])
}

/// Everything random about one σ point, derived from (scenario, σ, root seed).
#[derive(Debug, Clone)]
pub struct SweepPoint<'a> {
    pub scenario: &'a ScenarioConfig,
    pub sigma: f64,
    pub root_seed: u64,
}

impl SweepPoint<'_> {
    pub fn seed(&self) -> u64 {
        point_seed(self.root_seed, self.sigma)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed(), ..self.scenario.train.clone() }
    }

    pub fn rate_params(&self) -> RateParams {
        self.scenario.rate_params()
    }

    pub fn train_set(&self) -> Result<Vec<ChannelSample>> {
        let dist = self.scenario.distribution(self.sigma)?;
        dist.sample_batch(self.scenario.train.n_train, seed::derive(self.seed(), &[role::TRAIN_SET]))
    }

    pub fn eval_set(&self) -> Result<Vec<ChannelSample>> {
        let dist = self.scenario.distribution(self.sigma)?;
        dist.sample_batch(self.scenario.n_eval, seed::derive(self.seed(), &[role::EVAL_SET]))
    }

    /// Pretrains and jointly trains the collaborative policies. Writes
    /// checkpoints and the objective log when `dir` is given.
    pub fn train_cdnn(
        &self,
        train_set: &[ChannelSample],
        initial: Option<PolicySet>,
        dir: Option<&Path>,
    ) -> Result<PolicySet> {
        let config = self.train_config();
        let rate = self.rate_params();
        let initial = match initial {
            Some(p) => p,
            None => pretrained_policies(train_set, &config, rate)?,
        };
        let outcome = train_joint_with(initial, train_set, &config, rate, |step, policies| {
            if let Some(dir) = dir {
                let ck = Checkpoint::Cdnn { policies: policies.clone(), seed: config.seed };
                ck.save(&dir.join(format!("cdnn_step{step}.json")))?;
            }
            Ok(())
        })?;
        if let Some(dir) = dir {
            let ck = Checkpoint::Cdnn { policies: outcome.trained.clone(), seed: config.seed };
            ck.save(&dir.join("cdnn.json"))?;
            write_objective_log(&dir.join("objective_cdnn.csv"), &outcome.objective)?;
        }
        Ok(outcome.trained)
    }

    pub fn train_locally_robust(&self, train_set: &[ChannelSample], dir: Option<&Path>) -> Result<LocallyRobustSet> {
        let config = self.train_config();
        let mut locals = Vec::with_capacity(self.scenario.k_users);
        for tx in 0..self.scenario.k_users {
            let outcome = train_locally_robust(tx, train_set, &config, self.rate_params())?;
            if let Some(dir) = dir {
                write_objective_log(&dir.join(format!("objective_locally_robust_tx{}.csv", tx + 1)), &outcome.objective)?;
            }
            locals.push(outcome.trained);
        }
        let set = LocallyRobustSet { locals };
        if let Some(dir) = dir {
            Checkpoint::LocallyRobust { set: set.clone(), seed: config.seed }.save(&dir.join("locally_robust.json"))?;
        }
        Ok(set)
    }

    fn rows_for(&self, policy: PolicyName, report: Result<EvalReport>) -> Vec<SweepRow> {
        let k = self.scenario.k_users;
        let row = |metric, tx_index, value, ci_halfwidth, n_eval| SweepRow {
            scenario: self.scenario.name.clone(),
            sigma: self.sigma,
            policy,
            metric,
            tx_index,
            value,
            ci_halfwidth,
            n_eval,
            seed: self.root_seed,
        };
        match report {
            Ok(r) => {
                let n = r.n_eval as f64;
                let mut rows = vec![row(
                    Metric::SumRate,
                    None,
                    Some(r.expected_sum_rate),
                    Some(r.confidence_halfwidth),
                    r.n_eval,
                )];
                rows.extend(r.transmit_fraction.iter().enumerate().map(|(j, &p)| {
                    let hw = 1.96 * (p * (1.0 - p) / n).sqrt();
                    row(Metric::TransmitFraction, Some(j + 1), Some(p), Some(hw), r.n_eval)
                }));
                rows
            }
            Err(_) => {
                let mut rows = vec![row(Metric::SumRate, None, None, None, self.scenario.n_eval)];
                rows.extend((0..k).map(|j| row(Metric::TransmitFraction, Some(j + 1), None, None, self.scenario.n_eval)));
                rows
            }
        }
    }

    /// Evaluates every scenario policy on this point's evaluation set.
    /// Learned policies come from `learned`; a failed training run yields
    /// error rows and the remaining policies still run.
    pub fn evaluate(&self, eval_set: &[ChannelSample], learned: &Learned) -> Result<Vec<SweepRow>> {
        let rate = self.rate_params();
        let mut rows = Vec::new();
        for &policy in &self.scenario.policies {
            let report = match policy {
                PolicyName::PerfectCsi => evaluate_policy(&PerfectCsi(rate), eval_set, rate),
                PolicyName::Naive => evaluate_policy(&Naive(rate), eval_set, rate),
                PolicyName::AlwaysOn => evaluate_policy(&AlwaysOn, eval_set, rate),
                PolicyName::Tdma => best_tdma(eval_set, rate).map(|(_, r)| r),
                PolicyName::Cdnn => match &learned.cdnn {
                    Some(Ok(p)) => evaluate_policy(p, eval_set, rate),
                    Some(Err(e)) => Err(Error::invalid("cdnn", e.to_string())),
                    None => Err(Error::invalid("cdnn", "not trained")),
                },
                PolicyName::LocallyRobust => match &learned.locally_robust {
                    Some(Ok(p)) => evaluate_policy(p, eval_set, rate),
                    Some(Err(e)) => Err(Error::invalid("locally_robust", e.to_string())),
                    None => Err(Error::invalid("locally_robust", "not trained")),
                },
            };
            if let Err(e) = &report {
                if !policy.is_learned() {
                    return Err(Error::invalid("baseline evaluation", e.to_string()));
                }
            }
            rows.extend(self.rows_for(policy, report));
        }
        Ok(rows)
    }

    /// Trains the learned policies the scenario asks for and evaluates all.
    pub fn run(&self, checkpoint_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
        let dir = match checkpoint_dir {
            Some(root) => {
                let d = point_dir(root, self.sigma);
                fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
                Some(d)
            }
            None => None,
        };
        let wants = |p| self.scenario.policies.contains(&p);
        let learned = if wants(PolicyName::Cdnn) || wants(PolicyName::LocallyRobust) {
            let train_set = self.train_set()?;
            Learned {
                cdnn: wants(PolicyName::Cdnn).then(|| self.train_cdnn(&train_set, None, dir.as_deref())),
                locally_robust: wants(PolicyName::LocallyRobust)
                    .then(|| self.train_locally_robust(&train_set, dir.as_deref())),
            }
        } else {
            Learned::default()
        };
        self.evaluate(&self.eval_set()?, &learned)
    }
}

/// Trained policies (or their training errors) for one point.
#[derive(Debug, Default)]
pub struct Learned {
    pub cdnn: Option<Result<PolicySet>>,
    pub locally_robust: Option<Result<LocallyRobustSet>>,
}

/// Per-point checkpoint directory under `root`.
pub fn point_dir(root: &Path, sigma: f64) -> PathBuf {
    root.join(format!("sigma_{}", fmt_sig6(sigma)))
}

pub fn write_objective_log(path: &Path, objective: &[f64]) -> Result<()> {
    let mut out = String::from("step,objective\n");
    for (step, v) in objective.iter().enumerate() {
        let _ = writeln!(out, "{},{}", step + 1, v);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Runs every grid point (in parallel on `jobs` threads) and returns rows in
/// grid order. Writes the CSV when `out` is given.
pub fn run_sweep(
    scenario: &ScenarioConfig,
    sigma_grid: &[f64],
    root_seed: u64,
    out: Option<&Path>,
    checkpoint_dir: Option<&Path>,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    scenario.validate()?;
    if let Some(s) = sigma_grid.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::invalid("sigma grid", format!("{s} is outside [0, 1]")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid("jobs", e.to_string()))?;
    let per_point = pool.install(|| {
        sigma_grid
            .par_iter()
            .map(|&sigma| SweepPoint { scenario, sigma, root_seed }.run(checkpoint_dir))
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<SweepRow> = per_point.into_iter().flatten().collect();
    if let Some(path) = out {
        write_csv(path, &rows)?;
    }
    Ok(rows)
}
