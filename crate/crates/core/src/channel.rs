//! Channel gains and the distributed CSI (per-transmitter noisy estimates).
//!
//! Gains are power gains in linear scale: entry `(i, j)` is the gain from
//! TX `j` to RX `i`. Under Rayleigh fading each gain is a unit-mean
//! exponential draw (chi-square with two degrees of freedom, normalized),
//! scaled per entry by a [`GainVarianceSpec`].
//!
//! TX `j` observes
//!
//! ```text
//! est_j = sigma_bar_j ⊙ G + sigma_j ⊙ delta_j,    sigma_bar = sqrt(1 - sigma²)
//! ```
//!
//! where `delta_j` is drawn from the same per-entry distribution as `G`, so
//! `sigma = 1` gives an independent copy of the channel (no information) and
//! `sigma = 0` gives the channel itself.

use rand::Rng as _;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, role, Rng};

/// Dense K×K real matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    k: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn filled(k: usize, value: f64) -> Self {
        SquareMatrix { k, data: vec![value; k * k] }
    }

    pub fn zeros(k: usize) -> Self {
        Self::filled(k, 0.0)
    }

    pub fn ones(k: usize) -> Self {
        Self::filled(k, 1.0)
    }

    pub fn identity(k: usize) -> Self {
        let mut m = Self::zeros(k);
        for i in 0..k {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix from row-major data of length `k * k`.
    pub fn from_row_major(k: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("matrix", "side must be at least 1"));
        }
        if data.len() != k * k {
            return Err(Error::DimensionMismatch { expected: k * k, got: data.len() });
        }
        Ok(SquareMatrix { k, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        let mut data = Vec::with_capacity(k * k);
        for row in rows {
            if row.len() != k {
                return Err(Error::DimensionMismatch { expected: k, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(k, data)
    }

    pub fn side(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.k + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.k + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.k).map(<[f64]>::to_vec).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        SquareMatrix { k: self.k, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    fn check_side(&self, k: usize) -> Result<()> {
        if self.k != k {
            return Err(Error::DimensionMismatch { expected: k, got: self.k });
        }
        Ok(())
    }

    fn first_violation(&self, ok: impl Fn(f64) -> bool) -> Option<(usize, usize, f64)> {
        self.data
            .iter()
            .position(|&x| !ok(x))
            .map(|p| (p / self.k, p % self.k, self.data[p]))
    }
}

/// Nonnegative channel power gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SquareMatrix", into = "SquareMatrix")]
pub struct GainMatrix(SquareMatrix);

impl GainMatrix {
    pub fn new(m: SquareMatrix) -> Result<Self> {
        if let Some((row, col, value)) = m.first_violation(|x| x.is_finite() && x >= 0.0) {
            return Err(Error::Domain { what: "gain", index: row * m.k + col, value });
        }
        Ok(GainMatrix(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SquareMatrix::from_rows(rows)?)
    }

    pub fn k_users(&self) -> usize {
        self.0.k
    }

    #[inline]
    pub fn get(&self, rx: usize, tx: usize) -> f64 {
        self.0.get(rx, tx)
    }

    /// Row-major entries; this is also the flattened network input layout.
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }
}

impl TryFrom<SquareMatrix> for GainMatrix {
    type Error = Error;
    fn try_from(m: SquareMatrix) -> Result<Self> {
        GainMatrix::new(m)
    }
}

impl From<GainMatrix> for SquareMatrix {
    fn from(g: GainMatrix) -> Self {
        g.0
    }
}

/// Per-entry mean power of the gain distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GainVarianceSpec(SquareMatrix);

impl GainVarianceSpec {
    pub fn new(m: SquareMatrix) -> Result<Self> {
        if let Some((row, col, value)) = m.first_violation(|x| x.is_finite() && x >= 0.0) {
            return Err(Error::Domain { what: "gain variance", index: row * m.k + col, value });
        }
        Ok(GainVarianceSpec(m))
    }

    /// All-ones: every gain is unit-mean.
    pub fn unit(k: usize) -> Self {
        GainVarianceSpec(SquareMatrix::ones(k))
    }

    pub fn k_users(&self) -> usize {
        self.0.k
    }

    pub fn get(&self, rx: usize, tx: usize) -> f64 {
        self.0.get(rx, tx)
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }
}

/// Elementwise `sqrt(1 - sigma²)`.
pub fn sigma_bar(sigma: &SquareMatrix) -> Result<SquareMatrix> {
    if let Some((row, col, value)) = sigma.first_violation(|x| (0.0..=1.0).contains(&x)) {
        return Err(Error::SigmaOutOfRange { row, col, value });
    }
    Ok(sigma.map(|s| (1.0 - s * s).sqrt()))
}

/// Per-TX estimate noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiNoiseSpec {
    sigma: Vec<SquareMatrix>,
    sigma_bar: Vec<SquareMatrix>,
    shared_draw: bool,
}

impl CsiNoiseSpec {
    /// One sigma matrix per transmitter, each K×K with entries in `[0, 1]`.
    pub fn new(sigma: Vec<SquareMatrix>) -> Result<Self> {
        let k = sigma.len();
        if k == 0 {
            return Err(Error::Empty("sigma list"));
        }
        for s in &sigma {
            s.check_side(k)?;
        }
        let sigma_bar = sigma.iter().map(sigma_bar).collect::<Result<Vec<_>>>()?;
        Ok(CsiNoiseSpec { sigma, sigma_bar, shared_draw: false })
    }

    /// All transmitters receive one common estimate: a single noise draw is
    /// shared, which requires identical sigma matrices.
    pub fn shared(sigma: SquareMatrix, k_users: usize) -> Result<Self> {
        let mut spec = Self::new(vec![sigma; k_users])?;
        spec.shared_draw = true;
        Ok(spec)
    }

    /// Perfect CSI everywhere.
    pub fn perfect(k: usize) -> Self {
        Self::new(vec![SquareMatrix::zeros(k); k]).expect("zeros are valid")
    }

    pub fn k_users(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self, tx: usize) -> &SquareMatrix {
        &self.sigma[tx]
    }

    pub fn sigma_bar(&self, tx: usize) -> &SquareMatrix {
        &self.sigma_bar[tx]
    }

    pub fn is_shared(&self) -> bool {
        self.shared_draw
    }
}

/// One joint draw of the channel and all K estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub gains: GainMatrix,
    pub estimates: Vec<GainMatrix>,
}

impl ChannelSample {
    pub fn k_users(&self) -> usize {
        self.gains.k_users()
    }

    /// Estimate held by TX `tx`.
    pub fn estimate(&self, tx: usize) -> &GainMatrix {
        &self.estimates[tx]
    }
}

fn draw_scaled(k: usize, variance: &GainVarianceSpec, rng: &mut Rng) -> SquareMatrix {
    let data = variance
        .0
        .data
        .iter()
        .take(k * k)
        .map(|&v| v * rng.sample::<f64, _>(Exp1))
        .collect();
    SquareMatrix { k, data }
}

/// Draws a gain matrix: unit-mean exponential entries times the variance spec.
pub fn sample_gains(k_users: usize, variance: &GainVarianceSpec, rng: &mut Rng) -> Result<GainMatrix> {
    if k_users == 0 {
        return Err(Error::invalid("k_users", "must be at least 1"));
    }
    variance.0.check_side(k_users)?;
    Ok(GainMatrix(draw_scaled(k_users, variance, rng)))
}

/// Mixes a channel with a noise draw using one TX's sigma matrices.
pub fn estimate_from_draws(
    gains: &GainMatrix,
    sigma: &SquareMatrix,
    sigma_bar: &SquareMatrix,
    delta: &SquareMatrix,
) -> Result<GainMatrix> {
    let k = gains.k_users();
    sigma.check_side(k)?;
    sigma_bar.check_side(k)?;
    delta.check_side(k)?;
    let data = (0..k * k)
        .map(|p| sigma_bar.data[p] * gains.0.data[p] + sigma.data[p] * delta.data[p])
        .collect();
    GainMatrix::new(SquareMatrix { k, data })
}

/// Draws the K estimates of `gains`. Noise draws are independent across
/// TXs unless the spec is shared.
pub fn sample_estimates(
    gains: &GainMatrix,
    variance: &GainVarianceSpec,
    noise: &CsiNoiseSpec,
    rng: &mut Rng,
) -> Result<Vec<GainMatrix>> {
    let k = gains.k_users();
    variance.0.check_side(k)?;
    if noise.k_users() != k {
        return Err(Error::DimensionMismatch { expected: k, got: noise.k_users() });
    }
    if noise.shared_draw {
        let delta = draw_scaled(k, variance, rng);
        let est = estimate_from_draws(gains, &noise.sigma[0], &noise.sigma_bar[0], &delta)?;
        return Ok(vec![est; k]);
    }
    (0..k)
        .map(|j| {
            let delta = draw_scaled(k, variance, rng);
            estimate_from_draws(gains, &noise.sigma[j], &noise.sigma_bar[j], &delta)
        })
        .collect()
}

/// Joint distribution of the channel and the distributed CSI.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDistribution {
    pub variance: GainVarianceSpec,
    pub noise: CsiNoiseSpec,
}

impl ChannelDistribution {
    pub fn new(variance: GainVarianceSpec, noise: CsiNoiseSpec) -> Result<Self> {
        if variance.k_users() != noise.k_users() {
            return Err(Error::DimensionMismatch {
                expected: variance.k_users(),
                got: noise.k_users(),
            });
        }
        Ok(ChannelDistribution { variance, noise })
    }

    pub fn k_users(&self) -> usize {
        self.variance.k_users()
    }

    /// Draws sample `index` of the batch keyed by `seed`. Each sample has its
    /// own sub-stream, so any subset can be regenerated independently.
    pub fn sample(&self, seed: u64, index: u64) -> ChannelSample {
        let k = self.k_users();
        let mut rng = seed::stream(seed, &[index, role::GAINS]);
        let gains = GainMatrix(draw_scaled(k, &self.variance, &mut rng));
        let mut rng = seed::stream(seed, &[index, role::ESTIMATE]);
        let estimates = sample_estimates(&gains, &self.variance, &self.noise, &mut rng)
            .expect("dimensions validated at construction");
        ChannelSample { gains, estimates }
    }

    /// `n` independent joint draws, identical for a given seed regardless of
    /// how many threads generate them.
    pub fn sample_batch(&self, n: usize, seed: u64) -> Result<Vec<ChannelSample>> {
        if n == 0 {
            return Err(Error::invalid("batch size", "n must be at least 1"));
        }
        Ok((0..n as u64).into_par_iter().map(|i| self.sample(seed, i)).collect())
    }
}
