//! Training and evaluation of the per-transmitter scheduling policies.
//!
//! Each TX owns a network mapping its own (standardized, row-major
//! flattened) estimate to a transmit probability. During training the
//! probability is used as a transmit fraction and all networks climb the
//! batch-mean relaxed sum rate jointly; at deployment each network is
//! thresholded at 0.5 and run on its own estimate only.
//!
//! Batches are split into fixed-size chunks processed in parallel; chunk
//! gradients are combined by a pairwise tree whose shape depends only on the
//! batch size, so results do not depend on the number of worker threads.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSample, GainMatrix};
use crate::error::{Error, Result};
use crate::neural::{
    adam_step, backward, backward_from_logits, forward, init_params, AdamState, Direction, MlpArchitecture,
    MlpParams, Mode, Standardizer,
};
use crate::rate::{
    always_on, exhaustive_best, naive_decision, relaxed_rate_grad_into, sum_rate_unchecked, tdma_decision,
    PowerDecision, RateParams,
};
use crate::seed::{self, role};

/// Rows per parallel work unit. Fixed so reductions are worker-count independent.
pub const CHUNK_ROWS: usize = 250;

/// Steps between checkpoint callbacks.
pub const CHECKPOINT_EVERY: usize = 1000;

/// Deployment threshold on the sigmoid output.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// What the pretraining codebook feeds the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// The TX's own estimate, labelled with the naive decision on it.
    Estimate,
    /// The true gains, labelled with the perfect-CSI decision.
    Truth,
}

fn default_n_train() -> usize {
    30_000
}
fn default_batch_size() -> usize {
    5000
}
fn default_steps() -> usize {
    10_000
}
fn default_learning_rate() -> f64 {
    0.001
}
fn default_dropout_rate() -> f64 {
    0.5
}
fn default_pretrain_steps() -> usize {
    2000
}
fn default_hidden_layers() -> Vec<usize> {
    vec![30, 30, 30]
}
fn default_label_source() -> LabelSource {
    LabelSource::Estimate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_dropout_rate")]
    pub dropout_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_pretrain_steps")]
    pub pretrain_steps: usize,
    #[serde(default = "default_label_source")]
    pub pretrain_labels_from: LabelSource,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_train: default_n_train(),
            batch_size: default_batch_size(),
            steps: default_steps(),
            learning_rate: default_learning_rate(),
            dropout_rate: default_dropout_rate(),
            seed: 0,
            pretrain_steps: default_pretrain_steps(),
            pretrain_labels_from: default_label_source(),
            hidden_layers: default_hidden_layers(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.batch_size == 0 || self.steps == 0 {
            return Err(Error::invalid("train config", "n_train, batch_size and steps must be at least 1"));
        }
        if self.batch_size > self.n_train {
            return Err(Error::invalid(
                "train config",
                format!("batch_size {} exceeds n_train {}", self.batch_size, self.n_train),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate", "must be in [0, 1)"));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::invalid("hidden_layers", "sizes must be positive"));
        }
        Ok(())
    }

    /// Network shape for `k_users` transmitters with `outputs` sigmoid units.
    pub fn architecture(&self, k_users: usize, outputs: usize) -> Result<MlpArchitecture> {
        MlpArchitecture::with_hidden(k_users * k_users, &self.hidden_layers, outputs, self.dropout_rate)
    }
}

/// One deployable network: parameters, shape, and frozen input scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub arch: MlpArchitecture,
    pub params: MlpParams,
    pub standardizer: Standardizer,
    pub threshold: f64,
}

impl Policy {
    /// Eval-mode outputs for a batch of raw (unstandardized) matrices.
    pub fn outputs<'a>(&self, matrices: impl ExactSizeIterator<Item = &'a GainMatrix>) -> Result<Array2<f64>> {
        let x = design_matrix(matrices, &self.standardizer)?;
        Ok(forward(&self.params, x.view(), Mode::Eval)?.output().clone())
    }
}

/// One policy per transmitter, each reading only its own estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    pub policies: Vec<Policy>,
}

impl PolicySet {
    pub fn k_users(&self) -> usize {
        self.policies.len()
    }

    fn validate(&self) -> Result<()> {
        let k = self.k_users();
        if k == 0 {
            return Err(Error::Empty("policy set"));
        }
        for p in &self.policies {
            if p.arch.input_width() != k * k || !p.params.matches(&p.arch) || p.standardizer.width() != k * k {
                return Err(Error::invalid("policy set", "each policy must read a K×K estimate"));
            }
        }
        Ok(())
    }

    /// Eval-mode transmit probabilities, one column per TX.
    pub fn transmit_probabilities(&self, samples: &[ChannelSample]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((samples.len(), self.k_users()));
        for (j, policy) in self.policies.iter().enumerate() {
            let y = policy.outputs(samples.iter().map(|s| s.estimate(j)))?;
            out.column_mut(j).assign(&y.column(0));
        }
        Ok(out)
    }
}

/// A K-output network trained on one TX's estimate as if every TX saw it.
/// Only output `tx_index` is ever deployed.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPolicy {
    pub tx_index: usize,
    pub policy: Policy,
}

/// The locally robust scheduler: one [`LocalPolicy`] per transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct LocallyRobustSet {
    pub locals: Vec<LocalPolicy>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub expected_sum_rate: f64,
    /// Normal-approximation 95% half-width on the mean rate.
    pub confidence_halfwidth: f64,
    pub transmit_fraction: Vec<f64>,
    pub n_eval: usize,
}

/// Result of a relaxed-objective training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub trained: T,
    /// Batch-mean relaxed sum rate at every step.
    pub objective: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Inputs

fn design_matrix<'a>(
    matrices: impl ExactSizeIterator<Item = &'a GainMatrix>,
    standardizer: &Standardizer,
) -> Result<Array2<f64>> {
    let width = standardizer.width();
    let mut x = Array2::zeros((matrices.len(), width));
    for (mut row, m) in x.rows_mut().into_iter().zip(matrices) {
        if m.as_slice().len() != width {
            return Err(Error::DimensionMismatch { expected: width, got: m.as_slice().len() });
        }
        standardizer.apply_into(m.as_slice(), row.as_slice_mut().expect("standard layout"));
    }
    Ok(x)
}

fn input_matrix(sample: &ChannelSample, source: InputSource) -> &GainMatrix {
    match source {
        InputSource::Estimate(j) => sample.estimate(j),
        InputSource::Truth => &sample.gains,
    }
}

#[derive(Debug, Clone, Copy)]
enum InputSource {
    Estimate(usize),
    Truth,
}

/// Fits the input scaling for TX `tx` on its estimates in `samples`.
pub fn fit_standardizer(samples: &[ChannelSample], tx: usize) -> Result<Standardizer> {
    let k = samples.first().ok_or(Error::Empty("training set"))?.k_users();
    Standardizer::fit(k * k, samples.iter().map(|s| s.estimate(tx).as_slice()))
}

/// Seeded initial parameters for network `net` of the role `tag`.
pub fn initial_params(arch: &MlpArchitecture, seed: u64, tag: u64, net: usize) -> MlpParams {
    init_params(arch, &mut seed::stream(seed, &[role::INIT, tag, net as u64]))
}

// ---------------------------------------------------------------------------
// Deterministic parallel reduction

fn tree_reduce<T>(mut items: Vec<T>, combine: impl Fn(T, T) -> T) -> Option<T> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => combine(a, b),
                None => a,
            });
        }
        items = next;
    }
    items.pop()
}

fn sum_grads(mut a: (f64, Vec<MlpParams>), b: (f64, Vec<MlpParams>)) -> (f64, Vec<MlpParams>) {
    a.0 += b.0;
    for (ga, gb) in a.1.iter_mut().zip(&b.1) {
        ga.add_assign(gb);
    }
    a
}

fn chunk_ranges(rows: usize) -> Vec<(usize, usize)> {
    (0..rows.div_ceil(CHUNK_ROWS))
        .map(|c| (c * CHUNK_ROWS, ((c + 1) * CHUNK_ROWS).min(rows)))
        .collect()
}

// ---------------------------------------------------------------------------
// Relaxed sum-rate objective

/// For each TX, which network and which output column supplies its fraction.
#[derive(Debug, Clone)]
struct Routing {
    tx_source: Vec<(usize, usize)>,
}

impl Routing {
    fn joint(k: usize) -> Self {
        Routing { tx_source: (0..k).map(|j| (j, 0)).collect() }
    }

    fn single_network(k: usize) -> Self {
        Routing { tx_source: (0..k).map(|j| (0, j)).collect() }
    }
}

/// Dropout configuration for one objective evaluation.
#[derive(Debug, Clone, Copy)]
struct DropoutStream {
    rate: f64,
    seed: u64,
    tag: u64,
    step: u64,
}

#[allow(clippy::too_many_arguments)]
fn relaxed_chunk(
    params: &[MlpParams],
    inputs: &[ArrayView2<f64>],
    gains: &[&GainMatrix],
    routing: &Routing,
    rate_params: RateParams,
    dropout: Option<DropoutStream>,
    chunk: usize,
    scale: f64,
) -> Result<(f64, Vec<MlpParams>)> {
    let caches = params
        .iter()
        .zip(inputs)
        .enumerate()
        .map(|(net, (p, x))| match dropout {
            Some(d) if d.rate > 0.0 => {
                let mut rng = seed::stream(d.seed, &[role::DROPOUT, d.tag, d.step, chunk as u64, net as u64]);
                forward(p, *x, Mode::Train { dropout_rate: d.rate, rng: &mut rng })
            }
            _ => forward(p, *x, Mode::Eval),
        })
        .collect::<Result<Vec<_>>>()?;
    let k = routing.tx_source.len();
    let mut out_grads: Vec<Array2<f64>> = caches.iter().map(|c| Array2::zeros(c.output().raw_dim())).collect();
    let (mut fractions, mut powers, mut grad) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    let mut total = 0.0;
    for (i, g) in gains.iter().enumerate() {
        for (f, &(net, col)) in fractions.iter_mut().zip(&routing.tx_source) {
            *f = caches[net].output()[[i, col]];
        }
        total += relaxed_rate_grad_into(g, &fractions, rate_params, &mut powers, &mut grad);
        for (&d, &(net, col)) in grad.iter().zip(&routing.tx_source) {
            out_grads[net][[i, col]] += d * scale;
        }
    }
    let grads = params
        .iter()
        .zip(&caches)
        .zip(&out_grads)
        .map(|((p, c), og)| backward(p, c, og.view()))
        .collect::<Result<Vec<_>>>()?;
    Ok((total, grads))
}

/// Batch-mean relaxed sum rate and its gradient with respect to every network.
fn relaxed_objective(
    params: &[MlpParams],
    inputs: &[Array2<f64>],
    gains: &[&GainMatrix],
    routing: &Routing,
    rate_params: RateParams,
    dropout: Option<DropoutStream>,
) -> Result<(f64, Vec<MlpParams>)> {
    let rows = gains.len();
    if rows == 0 {
        return Err(Error::Empty("batch"));
    }
    let scale = 1.0 / rows as f64;
    let partials = chunk_ranges(rows)
        .into_par_iter()
        .enumerate()
        .map(|(c, (lo, hi))| {
            let views: Vec<_> = inputs.iter().map(|x| x.slice(s![lo..hi, ..])).collect();
            relaxed_chunk(params, &views, &gains[lo..hi], routing, rate_params, dropout, c, scale)
        })
        .collect::<Result<Vec<_>>>()?;
    let (total, grads) = tree_reduce(partials, sum_grads).expect("at least one chunk");
    Ok((total * scale, grads))
}

/// Batch-mean relaxed sum rate of a policy set and its gradient with respect
/// to each TX's parameters, with dropout disabled. Exposed for gradient checks.
pub fn joint_objective_and_grads(
    policies: &PolicySet,
    samples: &[ChannelSample],
    rate_params: RateParams,
) -> Result<(f64, Vec<MlpParams>)> {
    policies.validate()?;
    let inputs = policies
        .policies
        .iter()
        .enumerate()
        .map(|(j, p)| design_matrix(samples.iter().map(|s| s.estimate(j)), &p.standardizer))
        .collect::<Result<Vec<_>>>()?;
    let params: Vec<MlpParams> = policies.policies.iter().map(|p| p.params.clone()).collect();
    let gains: Vec<&GainMatrix> = samples.iter().map(|s| &s.gains).collect();
    relaxed_objective(&params, &inputs, &gains, &Routing::joint(policies.k_users()), rate_params, None)
}

struct RelaxedRun<'a> {
    params: Vec<MlpParams>,
    inputs: Vec<Array2<f64>>,
    train_set: &'a [ChannelSample],
    routing: Routing,
    tag: u64,
}

fn run_relaxed(
    mut run: RelaxedRun<'_>,
    config: &TrainConfig,
    rate_params: RateParams,
    mut on_checkpoint: impl FnMut(usize, &[MlpParams]) -> Result<()>,
) -> Result<(Vec<MlpParams>, Vec<f64>)> {
    config.validate()?;
    if run.train_set.len() < config.batch_size {
        return Err(Error::invalid(
            "training set",
            format!("{} samples, batch size {}", run.train_set.len(), config.batch_size),
        ));
    }
    let n = run.train_set.len();
    let per_epoch = n / config.batch_size;
    let mut states: Vec<AdamState> = run.params.iter().map(AdamState::new).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut objective = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (epoch, slot) = (step / per_epoch, step % per_epoch);
        if slot == 0 {
            order.sort_unstable();
            order.shuffle(&mut seed::stream(config.seed, &[role::SHUFFLE, run.tag, epoch as u64]));
        }
        let idx = &order[slot * config.batch_size..(slot + 1) * config.batch_size];
        let inputs: Vec<Array2<f64>> = run.inputs.iter().map(|x| x.select(Axis(0), idx)).collect();
        let gains: Vec<&GainMatrix> = idx.iter().map(|&i| &run.train_set[i].gains).collect();
        let dropout =
            DropoutStream { rate: config.dropout_rate, seed: config.seed, tag: run.tag, step: step as u64 };
        let (value, grads) = relaxed_objective(&run.params, &inputs, &gains, &run.routing, rate_params, Some(dropout))?;
        if !value.is_finite() {
            return Err(Error::Diverged { step, reason: format!("objective {value}") });
        }
        objective.push(value);
        for ((p, g), st) in run.params.iter_mut().zip(&grads).zip(&mut states) {
            adam_step(p, g, st, config.learning_rate, Direction::Ascent)
                .map_err(|_| Error::Diverged { step, reason: "non-finite gradient".into() })?;
        }
        if (step + 1) % CHECKPOINT_EVERY == 0 {
            on_checkpoint(step + 1, &run.params)?;
        }
    }
    Ok((run.params, objective))
}

// ---------------------------------------------------------------------------
// Supervised pretraining

fn bce_chunk(
    params: &MlpParams,
    x: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    dropout: DropoutStream,
    chunk: usize,
    scale: f64,
) -> Result<(f64, Vec<MlpParams>)> {
    let cache = if dropout.rate > 0.0 {
        let mut rng = seed::stream(dropout.seed, &[role::DROPOUT, dropout.tag, dropout.step, chunk as u64]);
        forward(params, x, Mode::Train { dropout_rate: dropout.rate, rng: &mut rng })?
    } else {
        forward(params, x, Mode::Eval)?
    };
    let y = cache.output();
    let mut loss = 0.0;
    let mut logit_grad = Array2::zeros(y.raw_dim());
    ndarray::Zip::from(&mut logit_grad).and(y).and(labels).for_each(|g, &y, &t| {
        loss -= t * y.ln() + (1.0 - t) * (1.0 - y).ln();
        *g = (y - t) * scale;
    });
    let grads = backward_from_logits(params, &cache, logit_grad)?;
    Ok((loss, vec![grads]))
}

#[allow(clippy::too_many_arguments)]
fn fit_supervised(
    mut params: MlpParams,
    inputs: &Array2<f64>,
    labels: &Array2<f64>,
    config: &TrainConfig,
    steps: usize,
    tag: u64,
) -> Result<MlpParams> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::Empty("pretraining dataset"));
    }
    let batch = config.batch_size.min(n);
    let per_epoch = n / batch;
    let mut state = AdamState::new(&params);
    let mut order: Vec<usize> = (0..n).collect();
    for step in 0..steps {
        let (epoch, slot) = (step / per_epoch, step % per_epoch);
        if slot == 0 {
            order.sort_unstable();
            order.shuffle(&mut seed::stream(config.seed, &[role::SHUFFLE, tag, epoch as u64]));
        }
        let idx = &order[slot * batch..(slot + 1) * batch];
        let x = inputs.select(Axis(0), idx);
        let t = labels.select(Axis(0), idx);
        let scale = 1.0 / (batch * labels.ncols()) as f64;
        let dropout = DropoutStream { rate: config.dropout_rate, seed: config.seed, tag, step: step as u64 };
        let partials = chunk_ranges(batch)
            .into_par_iter()
            .enumerate()
            .map(|(c, (lo, hi))| {
                bce_chunk(&params, x.slice(s![lo..hi, ..]), t.slice(s![lo..hi, ..]), dropout, c, scale)
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, mut grads) = tree_reduce(partials, sum_grads).expect("at least one chunk");
        if !loss.is_finite() {
            return Err(Error::Diverged { step, reason: format!("pretraining loss {loss}") });
        }
        adam_step(&mut params, &grads.remove(0), &mut state, config.learning_rate, Direction::Descent)
            .map_err(|_| Error::Diverged { step, reason: "non-finite pretraining gradient".into() })?;
    }
    Ok(params)
}

fn naive_labels(
    dataset: &[ChannelSample],
    source: InputSource,
    columns: &[usize],
    rate_params: RateParams,
) -> Result<Array2<f64>> {
    let rows = dataset
        .par_iter()
        .map(|s| {
            let m = input_matrix(s, source);
            let best = exhaustive_best(m, rate_params)?;
            Ok(columns.iter().map(|&c| if best.is_active(c) { 1.0 } else { 0.0 }).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((dataset.len(), columns.len()), flat).expect("label shape"))
}

fn label_input(config: &TrainConfig, tx: usize) -> InputSource {
    match config.pretrain_labels_from {
        LabelSource::Estimate => InputSource::Estimate(tx),
        LabelSource::Truth => InputSource::Truth,
    }
}

/// Fits TX `tx_index`'s single-output network to its naive decisions.
///
/// Starts from [`initial_params`] under the joint-training role, so zero
/// pretraining steps return the seeded initialization unchanged.
pub fn pretrain_naive(
    tx_index: usize,
    arch: &MlpArchitecture,
    standardizer: &Standardizer,
    dataset: &[ChannelSample],
    config: &TrainConfig,
    rate_params: RateParams,
) -> Result<MlpParams> {
    let k = dataset.first().ok_or(Error::Empty("pretraining dataset"))?.k_users();
    if tx_index >= k {
        return Err(Error::IndexOutOfRange { index: tx_index, k_users: k });
    }
    if arch.output_width() != 1 {
        return Err(Error::invalid("architecture", "naive pretraining expects a single output"));
    }
    let init = initial_params(arch, config.seed, role::JOINT, tx_index);
    if config.pretrain_steps == 0 {
        return Ok(init);
    }
    let source = label_input(config, tx_index);
    let inputs = design_matrix(dataset.iter().map(|s| input_matrix(s, source)), standardizer)?;
    let labels = match source {
        InputSource::Estimate(_) => {
            let col = dataset
                .par_iter()
                .map(|s| naive_decision(s.estimate(tx_index), tx_index, rate_params).map(|p| f64::from(p > 0.0)))
                .collect::<Result<Vec<_>>>()?;
            Array2::from_shape_vec((col.len(), 1), col).expect("label shape")
        }
        InputSource::Truth => naive_labels(dataset, source, &[tx_index], rate_params)?,
    };
    let tag = seed::derive(role::PRETRAIN, &[role::JOINT, tx_index as u64]);
    fit_supervised(init, &inputs, &labels, config, config.pretrain_steps, tag)
}

/// Builds K single-output policies: input scaling fitted on the training
/// estimates, parameters pretrained on the naive scheduler.
pub fn pretrained_policies(train_set: &[ChannelSample], config: &TrainConfig, rate_params: RateParams) -> Result<PolicySet> {
    config.validate()?;
    let k = train_set.first().ok_or(Error::Empty("training set"))?.k_users();
    let arch = config.architecture(k, 1)?;
    let policies = (0..k)
        .map(|j| {
            let standardizer = fit_standardizer(train_set, j)?;
            let params = pretrain_naive(j, &arch, &standardizer, train_set, config, rate_params)?;
            Ok(Policy { arch: arch.clone(), params, standardizer, threshold: DECISION_THRESHOLD })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PolicySet { policies })
}

// ---------------------------------------------------------------------------
// Joint and locally robust training

/// Jointly trains all K policies on the batch-mean relaxed sum rate,
/// each network fed only its own estimate. Runs exactly `config.steps`
/// Adam ascent steps.
pub fn train_joint(
    policies: PolicySet,
    train_set: &[ChannelSample],
    config: &TrainConfig,
    rate_params: RateParams,
) -> Result<TrainOutcome<PolicySet>> {
    train_joint_with(policies, train_set, config, rate_params, |_, _| Ok(()))
}

/// [`train_joint`] with a callback every [`CHECKPOINT_EVERY`] steps.
pub fn train_joint_with(
    policies: PolicySet,
    train_set: &[ChannelSample],
    config: &TrainConfig,
    rate_params: RateParams,
    mut on_checkpoint: impl FnMut(usize, &PolicySet) -> Result<()>,
) -> Result<TrainOutcome<PolicySet>> {
    policies.validate()?;
    let k = policies.k_users();
    if train_set.iter().any(|s| s.k_users() != k) {
        return Err(Error::invalid("training set", "sample dimension differs from policy set"));
    }
    let inputs = policies
        .policies
        .iter()
        .enumerate()
        .map(|(j, p)| design_matrix(train_set.iter().map(|s| s.estimate(j)), &p.standardizer))
        .collect::<Result<Vec<_>>>()?;
    let template = policies.clone();
    let run = RelaxedRun {
        params: policies.policies.into_iter().map(|p| p.params).collect(),
        inputs,
        train_set,
        routing: Routing::joint(k),
        tag: role::JOINT,
    };
    let rebuild = |params: Vec<MlpParams>| PolicySet {
        policies: template
            .policies
            .iter()
            .zip(params)
            .map(|(p, params)| Policy { params, ..p.clone() })
            .collect(),
    };
    let (params, objective) = run_relaxed(run, config, rate_params, |step, params| {
        on_checkpoint(step, &rebuild(params.to_vec()))
    })?;
    Ok(TrainOutcome { trained: rebuild(params), objective })
}

/// Trains TX `tx_index`'s locally robust scheduler: a K-output network on
/// its own estimate whose outputs supply all K relaxed powers. Pretrained on
/// the full perfect-CSI decision vector computed on the same input.
pub fn train_locally_robust(
    tx_index: usize,
    train_set: &[ChannelSample],
    config: &TrainConfig,
    rate_params: RateParams,
) -> Result<TrainOutcome<LocalPolicy>> {
    config.validate()?;
    let k = train_set.first().ok_or(Error::Empty("training set"))?.k_users();
    if tx_index >= k {
        return Err(Error::IndexOutOfRange { index: tx_index, k_users: k });
    }
    let arch = config.architecture(k, k)?;
    let standardizer = fit_standardizer(train_set, tx_index)?;
    let mut params = initial_params(&arch, config.seed, role::LOCAL, tx_index);
    if config.pretrain_steps > 0 {
        let source = label_input(config, tx_index);
        let inputs = design_matrix(train_set.iter().map(|s| input_matrix(s, source)), &standardizer)?;
        let columns: Vec<usize> = (0..k).collect();
        let labels = naive_labels(train_set, source, &columns, rate_params)?;
        let tag = seed::derive(role::PRETRAIN, &[role::LOCAL, tx_index as u64]);
        params = fit_supervised(params, &inputs, &labels, config, config.pretrain_steps, tag)?;
    }
    let inputs = design_matrix(train_set.iter().map(|s| s.estimate(tx_index)), &standardizer)?;
    let run = RelaxedRun {
        params: vec![params],
        inputs: vec![inputs],
        train_set,
        routing: Routing::single_network(k),
        tag: seed::derive(role::LOCAL, &[tx_index as u64]),
    };
    let (mut params, objective) = run_relaxed(run, config, rate_params, |_, _| Ok(()))?;
    let policy = Policy { arch, params: params.remove(0), standardizer, threshold: DECISION_THRESHOLD };
    Ok(TrainOutcome { trained: LocalPolicy { tx_index, policy }, objective })
}

// ---------------------------------------------------------------------------
// Decisions and evaluation

/// Anything that maps channel samples to binary power decisions.
pub trait DecisionSource: Sync {
    fn decide(&self, samples: &[ChannelSample]) -> Result<Vec<PowerDecision>>;
}

/// Exhaustive search on the true gains.
#[derive(Debug, Clone, Copy)]
pub struct PerfectCsi(pub RateParams);

/// Each TX runs exhaustive search on its own estimate and keeps its component.
#[derive(Debug, Clone, Copy)]
pub struct Naive(pub RateParams);

/// Fixed single active TX (0-based).
#[derive(Debug, Clone, Copy)]
pub struct Tdma(pub usize);

#[derive(Debug, Clone, Copy)]
pub struct AlwaysOn;

impl DecisionSource for PerfectCsi {
    fn decide(&self, samples: &[ChannelSample]) -> Result<Vec<PowerDecision>> {
        samples.par_iter().map(|s| exhaustive_best(&s.gains, self.0)).collect()
    }
}

impl DecisionSource for Naive {
    fn decide(&self, samples: &[ChannelSample]) -> Result<Vec<PowerDecision>> {
        samples
            .par_iter()
            .map(|s| {
                let active = (0..s.k_users())
                    .map(|j| naive_decision(s.estimate(j), j, self.0).map(|p| p > 0.0))
                    .collect::<Result<Vec<_>>>()?;
                Ok(PowerDecision::from_active(active))
            })
            .collect()
    }
}

impl DecisionSource for Tdma {
    fn decide(&self, samples: &[ChannelSample]) -> Result<Vec<PowerDecision>> {
        samples.iter().map(|s| tdma_decision(self.0, s.k_users())).collect()
    }
}

impl DecisionSource for AlwaysOn {
    fn decide(&self, samples: &[ChannelSample]) -> Result<Vec<PowerDecision>> {
        Ok(samples.iter().map(|s| always_on(s.k_users())).collect())
    }
}

impl DecisionSource for PolicySet {
    fn decide(&self, samples: &[ChannelSample]) -> Result<Vec<PowerDecision>> {
        let probs = self.transmit_probabilities(samples)?;
        Ok(probs
            .rows()
            .into_iter()
            .map(|row| {
                PowerDecision::from_active(row.iter().zip(&self.policies).map(|(&y, p)| y >= p.threshold).collect())
            })
            .collect())
    }
}

impl LocallyRobustSet {
    fn validate(&self, k: usize) -> Result<()> {
        if self.locals.len() != k || self.locals.iter().enumerate().any(|(j, l)| l.tx_index != j) {
            return Err(Error::invalid("locally robust set", "need one local policy per TX, in order"));
        }
        Ok(())
    }
}

impl LocalPolicy {
    /// Full K-component decision this TX believes everyone should take.
    pub fn believed_decisions(&self, samples: &[ChannelSample]) -> Result<Vec<PowerDecision>> {
        let y = self.policy.outputs(samples.iter().map(|s| s.estimate(self.tx_index)))?;
        Ok(y
            .rows()
            .into_iter()
            .map(|row| PowerDecision::from_active(row.iter().map(|&v| v >= self.policy.threshold).collect()))
            .collect())
    }
}

impl DecisionSource for LocallyRobustSet {
    fn decide(&self, samples: &[ChannelSample]) -> Result<Vec<PowerDecision>> {
        let k = samples.first().map_or(self.locals.len(), ChannelSample::k_users);
        self.validate(k)?;
        let mut active = vec![vec![false; k]; samples.len()];
        for local in &self.locals {
            let y = local.policy.outputs(samples.iter().map(|s| s.estimate(local.tx_index)))?;
            for (a, &v) in active.iter_mut().zip(y.column(local.tx_index)) {
                a[local.tx_index] = v >= local.policy.threshold;
            }
        }
        Ok(active.into_iter().map(PowerDecision::from_active).collect())
    }
}

/// Per-sample sum rates of `source` on `eval_set`, plus the decisions.
pub fn rates_per_sample(
    source: &dyn DecisionSource,
    eval_set: &[ChannelSample],
    rate_params: RateParams,
) -> Result<(Vec<f64>, Vec<PowerDecision>)> {
    if eval_set.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let decisions = source.decide(eval_set)?;
    let rates = eval_set
        .iter()
        .zip(&decisions)
        .map(|(s, d)| sum_rate_unchecked(&s.gains, &d.levels(rate_params.p_max), rate_params.noise_power))
        .collect();
    Ok((rates, decisions))
}

/// Monte-Carlo expected sum rate and per-TX transmit frequency.
pub fn evaluate_policy(
    source: &dyn DecisionSource,
    eval_set: &[ChannelSample],
    rate_params: RateParams,
) -> Result<EvalReport> {
    let (rates, decisions) = rates_per_sample(source, eval_set, rate_params)?;
    let n = rates.len();
    let mean = rates.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    let k = eval_set[0].k_users();
    let mut counts = vec![0usize; k];
    for d in &decisions {
        for (c, &a) in counts.iter_mut().zip(d.active()) {
            *c += usize::from(a);
        }
    }
    Ok(EvalReport {
        expected_sum_rate: mean,
        confidence_halfwidth: 1.96 * (var / n as f64).sqrt(),
        transmit_fraction: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        n_eval: n,
    })
}

/// The best fixed single-TX schedule measured on `eval_set`.
pub fn best_tdma(eval_set: &[ChannelSample], rate_params: RateParams) -> Result<(usize, EvalReport)> {
    let k = eval_set.first().ok_or(Error::Empty("evaluation set"))?.k_users();
    let mut best: Option<(usize, EvalReport)> = None;
    for j in 0..k {
        let report = evaluate_policy(&Tdma(j), eval_set, rate_params)?;
        if best.as_ref().is_none_or(|(_, b)| report.expected_sum_rate > b.expected_sum_rate) {
            best = Some((j, report));
        }
    }
    Ok(best.expect("k >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelDistribution, CsiNoiseSpec, GainVarianceSpec, SquareMatrix};

    fn dist(k: usize, sigma: f64) -> ChannelDistribution {
        ChannelDistribution::new(
            GainVarianceSpec::unit(k),
            CsiNoiseSpec::new(vec![SquareMatrix::filled(k, sigma); k]).unwrap(),
        )
        .unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            n_train: 500,
            batch_size: 250,
            steps: 20,
            dropout_rate: 0.0,
            pretrain_steps: 0,
            hidden_layers: vec![8, 8],
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_follow_published_setup() {
        let c = TrainConfig::default();
        assert_eq!((c.n_train, c.batch_size, c.steps), (30_000, 5000, 10_000));
        assert_eq!(c.learning_rate, 0.001);
        assert_eq!(c.dropout_rate, 0.5);
        assert_eq!(c.hidden_layers, vec![30, 30, 30]);
        c.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        c.batch_size = 1000;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.steps = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn tree_reduce_is_fixed_shape() {
        let v: Vec<String> = (0..5).map(|i| i.to_string()).collect();
        assert_eq!(tree_reduce(v, |a, b| format!("({a}{b})")).unwrap(), "(((01)(23))4)");
    }

    #[test]
    fn zero_pretrain_steps_returns_init() {
        let d = dist(2, 0.0);
        let data = d.sample_batch(10, 1).unwrap();
        let c = small_config();
        let arch = c.architecture(2, 1).unwrap();
        let std = fit_standardizer(&data, 0).unwrap();
        let p = pretrain_naive(0, &arch, &std, &data, &c, RateParams::default()).unwrap();
        assert_eq!(p, initial_params(&arch, c.seed, role::JOINT, 0));
    }

    #[test]
    fn single_point_fit() {
        let d = dist(2, 0.0);
        let data = d.sample_batch(1, 4).unwrap();
        let mut c = small_config();
        c.pretrain_steps = 300;
        c.learning_rate = 0.01;
        let arch = c.architecture(2, 1).unwrap();
        let std = Standardizer::identity(4);
        for tx in 0..2 {
            let p = pretrain_naive(tx, &arch, &std, &data, &c, RateParams::default()).unwrap();
            let label = naive_decision(data[0].estimate(tx), tx, RateParams::default()).unwrap() > 0.0;
            let policy = Policy { arch: arch.clone(), params: p, standardizer: std.clone(), threshold: 0.5 };
            let y = policy.outputs(std::iter::once(data[0].estimate(tx))).unwrap()[[0, 0]];
            assert_eq!(y >= 0.5, label, "tx {tx} output {y}");
        }
    }

    #[test]
    fn objective_is_worker_count_independent() {
        let d = dist(2, 0.3);
        let data = d.sample_batch(600, 2).unwrap();
        let mut c = small_config();
        c.n_train = 600;
        c.batch_size = 600;
        c.dropout_rate = 0.5;
        c.steps = 3;
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let ps = pretrained_policies(&data, &c, RateParams::default()).unwrap();
                train_joint(ps, &data, &c, RateParams::default()).unwrap()
            })
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.trained, b.trained);
    }

    #[test]
    fn evaluate_fixed_baselines() {
        let data = dist(2, 0.5).sample_batch(100, 5).unwrap();
        let r = evaluate_policy(&AlwaysOn, &data, RateParams::default()).unwrap();
        assert_eq!(r.transmit_fraction, vec![1.0, 1.0]);
        assert_eq!(r.n_eval, 100);
        let r = evaluate_policy(&Tdma(0), &data, RateParams::default()).unwrap();
        assert_eq!(r.transmit_fraction, vec![1.0, 0.0]);
        assert!(evaluate_policy(&AlwaysOn, &[], RateParams::default()).is_err());
    }

    #[test]
    fn best_tdma_is_argmax() {
        let var = GainVarianceSpec::new(SquareMatrix::from_rows(&[vec![0.2, 1.0], vec![1.0, 3.0]]).unwrap()).unwrap();
        let d = ChannelDistribution::new(var, CsiNoiseSpec::perfect(2)).unwrap();
        let data = d.sample_batch(2000, 6).unwrap();
        let (j, best) = best_tdma(&data, RateParams::default()).unwrap();
        let r0 = evaluate_policy(&Tdma(0), &data, RateParams::default()).unwrap();
        let r1 = evaluate_policy(&Tdma(1), &data, RateParams::default()).unwrap();
        assert_eq!(j, 1);
        assert!(r1.expected_sum_rate > r0.expected_sum_rate);
        assert_eq!(best, r1);
    }
}
