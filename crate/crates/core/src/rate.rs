//! Sum rate of the interference channel with interference treated as noise,
//! its continuous relaxation with an analytic gradient, and the
//! non-learned scheduling baselines.

use serde::{Deserialize, Serialize};

use crate::channel::GainMatrix;
use crate::error::{Error, Result};

/// Largest K accepted by [`exhaustive_best`] (2^K enumeration).
pub const MAX_EXHAUSTIVE_USERS: usize = 20;

/// Transmit power budget and receiver noise, both linear scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub p_max: f64,
    pub noise_power: f64,
}

impl Default for RateParams {
    fn default() -> Self {
        RateParams { p_max: 1.0, noise_power: 1.0 }
    }
}

impl RateParams {
    pub fn new(p_max: f64, noise_power: f64) -> Result<Self> {
        if !(p_max.is_finite() && p_max > 0.0) {
            return Err(Error::invalid("p_max", format!("must be positive, got {p_max}")));
        }
        if !(noise_power.is_finite() && noise_power > 0.0) {
            return Err(Error::invalid(
                "noise_power",
                format!("must be positive, got {noise_power}"),
            ));
        }
        Ok(RateParams { p_max, noise_power })
    }
}

/// A binary power vector: each TX transmits at `p_max` or stays silent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PowerDecision {
    active: Vec<bool>,
}

impl PowerDecision {
    pub fn from_active(active: Vec<bool>) -> Self {
        PowerDecision { active }
    }

    /// Decodes `index` with TX 0 as the most significant bit, 1 = transmit.
    pub fn from_index(index: u64, k_users: usize) -> Self {
        let active = (0..k_users).map(|j| (index >> (k_users - 1 - j)) & 1 == 1).collect();
        PowerDecision { active }
    }

    pub fn index(&self) -> u64 {
        self.active.iter().fold(0u64, |acc, &a| (acc << 1) | u64::from(a))
    }

    pub fn k_users(&self) -> usize {
        self.active.len()
    }

    pub fn is_active(&self, tx: usize) -> bool {
        self.active[tx]
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    /// Power levels, each exactly `0` or exactly `p_max`.
    pub fn levels(&self, p_max: f64) -> Vec<f64> {
        self.active.iter().map(|&a| if a { p_max } else { 0.0 }).collect()
    }
}

/// Per-TX transmit fractions in `[0, 1]`; effective power is `fraction * p_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedDecision(Vec<f64>);

impl RelaxedDecision {
    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        if let Some(index) = fractions.iter().position(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Domain { what: "transmit fraction", index, value: fractions[index] });
        }
        Ok(RelaxedDecision(fractions))
    }

    pub fn fractions(&self) -> &[f64] {
        &self.0
    }
}

fn check_powers(gains: &GainMatrix, powers: &[f64], noise_power: f64) -> Result<()> {
    let k = gains.k_users();
    if powers.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: powers.len() });
    }
    if let Some(index) = powers.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Domain { what: "power", index, value: powers[index] });
    }
    if !(noise_power.is_finite() && noise_power > 0.0) {
        return Err(Error::Domain { what: "noise power", index: 0, value: noise_power });
    }
    Ok(())
}

/// Unchecked sum rate; callers guarantee matching sizes.
#[inline]
pub(crate) fn sum_rate_unchecked(gains: &GainMatrix, powers: &[f64], noise_power: f64) -> f64 {
    let k = powers.len();
    let mut total = 0.0;
    for rx in 0..k {
        let signal = gains.get(rx, rx) * powers[rx];
        if signal == 0.0 {
            continue;
        }
        let mut interference = noise_power;
        for (tx, &p) in powers.iter().enumerate() {
            if tx != rx {
                interference += gains.get(rx, tx) * p;
            }
        }
        total += (signal / interference).ln_1p();
    }
    total / std::f64::consts::LN_2
}

/// Sum of per-link rates in bits per channel use.
pub fn sum_rate(gains: &GainMatrix, powers: &[f64], noise_power: f64) -> Result<f64> {
    check_powers(gains, powers, noise_power)?;
    Ok(sum_rate_unchecked(gains, powers, noise_power))
}

/// Relaxed rate and `d rate / d fraction_j`, written into `grad`.
///
/// Rewriting each link term as `log2(N + total_k) - log2(N + interference_k)`
/// gives, for TX `j`,
/// `p_max / ln2 * sum_k G[k][j] * (1 / (N + total_k) - [k != j] / (N + interference_k))`.
pub(crate) fn relaxed_rate_grad_into(
    gains: &GainMatrix,
    fractions: &[f64],
    params: RateParams,
    powers: &mut [f64],
    grad: &mut [f64],
) -> f64 {
    let k = fractions.len();
    for (p, f) in powers.iter_mut().zip(fractions) {
        *p = f * params.p_max;
    }
    let rate = sum_rate_unchecked(gains, powers, params.noise_power);
    grad.iter_mut().for_each(|g| *g = 0.0);
    for rx in 0..k {
        let mut interference = params.noise_power;
        for tx in 0..k {
            if tx != rx {
                interference += gains.get(rx, tx) * powers[tx];
            }
        }
        let total = interference + gains.get(rx, rx) * powers[rx];
        let inv_total = 1.0 / total;
        let inv_interference = 1.0 / interference;
        for (tx, g) in grad.iter_mut().enumerate() {
            let gain = gains.get(rx, tx);
            *g += if tx == rx { gain * inv_total } else { gain * (inv_total - inv_interference) };
        }
    }
    let scale = params.p_max / std::f64::consts::LN_2;
    grad.iter_mut().for_each(|g| *g *= scale);
    rate
}

/// Relaxed sum rate at powers `fractions * p_max` and its exact gradient
/// with respect to the fractions.
pub fn relaxed_sum_rate_with_grad(
    gains: &GainMatrix,
    fractions: &RelaxedDecision,
    params: RateParams,
) -> Result<(f64, Vec<f64>)> {
    let f = fractions.fractions();
    let powers: Vec<f64> = f.iter().map(|x| x * params.p_max).collect();
    check_powers(gains, &powers, params.noise_power)?;
    let k = f.len();
    let (mut p, mut grad) = (vec![0.0; k], vec![0.0; k]);
    let rate = relaxed_rate_grad_into(gains, f, params, &mut p, &mut grad);
    Ok((rate, grad))
}

/// Best binary decision for known gains, by enumeration of all 2^K choices.
/// Ties go to the smallest decision index (see [`PowerDecision::from_index`]).
pub fn exhaustive_best(gains: &GainMatrix, params: RateParams) -> Result<PowerDecision> {
    let k = gains.k_users();
    if k > MAX_EXHAUSTIVE_USERS {
        return Err(Error::Capacity { k_users: k, max: MAX_EXHAUSTIVE_USERS });
    }
    let mut powers = vec![0.0; k];
    let mut best = (0u64, f64::NEG_INFINITY);
    for index in 0..(1u64 << k) {
        for (j, p) in powers.iter_mut().enumerate() {
            *p = if (index >> (k - 1 - j)) & 1 == 1 { params.p_max } else { 0.0 };
        }
        let rate = sum_rate_unchecked(gains, &powers, params.noise_power);
        if rate > best.1 {
            best = (index, rate);
        }
    }
    Ok(PowerDecision::from_index(best.0, k))
}

/// TX `tx`'s naive decision: solve the perfect-CSI problem on its own
/// estimate as if it were exact and shared, keep only its own component.
pub fn naive_decision(estimate: &GainMatrix, tx: usize, params: RateParams) -> Result<f64> {
    let k = estimate.k_users();
    if tx >= k {
        return Err(Error::IndexOutOfRange { index: tx, k_users: k });
    }
    let guess = exhaustive_best(estimate, params)?;
    Ok(if guess.is_active(tx) { params.p_max } else { 0.0 })
}

/// Only TX `active_tx` (0-based) transmits.
pub fn tdma_decision(active_tx: usize, k_users: usize) -> Result<PowerDecision> {
    if active_tx >= k_users {
        return Err(Error::IndexOutOfRange { index: active_tx, k_users });
    }
    Ok(PowerDecision::from_active((0..k_users).map(|j| j == active_tx).collect()))
}

pub fn always_on(k_users: usize) -> PowerDecision {
    PowerDecision::from_active(vec![true; k_users])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(rows: &[&[f64]]) -> GainMatrix {
        GainMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn sum_rate_examples() {
        let id = g(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!((sum_rate(&id, &[1.0, 1.0], 1.0).unwrap() - 2.0).abs() < 1e-15);
        let ones = g(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(sum_rate(&ones, &[0.0, 0.0], 1.0).unwrap(), 0.0);
        let r = sum_rate(&ones, &[1.0, 1.0], 1.0).unwrap();
        assert!((r - 2.0 * 1.5f64.log2()).abs() < 1e-12);
        assert!((r - 1.169925).abs() < 1e-6);
    }

    #[test]
    fn sum_rate_domain_errors() {
        let id = g(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(sum_rate(&id, &[1.0, -1.0], 1.0), Err(Error::Domain { index: 1, .. })));
        assert!(matches!(sum_rate(&id, &[1.0], 1.0), Err(Error::DimensionMismatch { .. })));
        assert!(sum_rate(&id, &[1.0, 1.0], 0.0).is_err());
        assert!(GainMatrix::from_rows(&[vec![-1.0]]).is_err());
    }

    #[test]
    fn relaxed_grad_examples() {
        let one = g(&[&[1.0]]);
        let (rate, grad) =
            relaxed_sum_rate_with_grad(&one, &RelaxedDecision::new(vec![1.0]).unwrap(), RateParams::default())
                .unwrap();
        assert!((rate - 1.0).abs() < 1e-15);
        assert!((grad[0] - 1.0 / (2.0 * std::f64::consts::LN_2)).abs() < 1e-12);
        assert!((grad[0] - 0.721348).abs() < 1e-6);

        let diag = g(&[&[2.0, 0.0, 0.0], &[0.0, 3.0, 0.0], &[0.0, 0.0, 0.5]]);
        let params = RateParams::new(2.0, 1.0).unwrap();
        let (_, grad) =
            relaxed_sum_rate_with_grad(&diag, &RelaxedDecision::new(vec![0.0; 3]).unwrap(), params).unwrap();
        for (k, gk) in grad.iter().enumerate() {
            let expected = diag.get(k, k) * 2.0 / std::f64::consts::LN_2;
            assert!((gk - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn relaxed_rejects_out_of_range_fraction() {
        assert!(RelaxedDecision::new(vec![0.5, 1.5]).is_err());
    }

    #[test]
    fn exhaustive_examples() {
        let p = RateParams::default();
        assert!(exhaustive_best(&g(&[&[0.3]]), p).unwrap().is_active(0));

        let strong = g(&[&[1.0, 10.0], &[10.0, 1.0]]);
        let best = exhaustive_best(&strong, p).unwrap();
        // TX 2 alone is index 0b01, TX 1 alone is 0b10; equal rates, lower index wins.
        assert_eq!(best.active(), &[false, true]);
        let value = sum_rate(&strong, &best.levels(1.0), 1.0).unwrap();
        assert_eq!(value, 1.0);
        let both = sum_rate(&strong, &[1.0, 1.0], 1.0).unwrap();
        assert!((both - 2.0 * (12.0f64 / 11.0).log2()).abs() < 1e-12);

        let weak = g(&[&[1.0, 0.01], &[0.01, 1.0]]);
        assert_eq!(exhaustive_best(&weak, p).unwrap().active(), &[true, true]);
    }

    #[test]
    fn exhaustive_capacity_error() {
        let big = GainMatrix::new(crate::channel::SquareMatrix::ones(21)).unwrap();
        assert!(matches!(exhaustive_best(&big, RateParams::default()), Err(Error::Capacity { .. })));
    }

    #[test]
    fn naive_examples() {
        let p = RateParams::default();
        assert_eq!(naive_decision(&g(&[&[0.01]]), 0, p).unwrap(), 1.0);
        let strong = g(&[&[1.0, 10.0], &[10.0, 1.0]]);
        assert_eq!(naive_decision(&strong, 0, p).unwrap(), 0.0);
        assert_eq!(naive_decision(&strong, 1, p).unwrap(), 1.0);
        assert!(naive_decision(&strong, 2, p).is_err());
    }

    #[test]
    fn fixed_decisions() {
        assert_eq!(tdma_decision(1, 3).unwrap().levels(2.0), vec![0.0, 2.0, 0.0]);
        assert_eq!(tdma_decision(0, 1).unwrap().levels(1.0), vec![1.0]);
        assert!(tdma_decision(3, 3).is_err());
        assert_eq!(always_on(2).levels(1.5), vec![1.5, 1.5]);
        assert_eq!(always_on(3).levels(1.0), vec![1.0; 3]);
    }

    #[test]
    fn index_round_trip() {
        for k in 1..6 {
            for i in 0..(1u64 << k) {
                assert_eq!(PowerDecision::from_index(i, k).index(), i);
            }
        }
        assert_eq!(PowerDecision::from_index(0b100, 3).active(), &[true, false, false]);
    }
}
