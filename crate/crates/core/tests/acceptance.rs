//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 1 2`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use linksched::channel::{ChannelDistribution, CsiNoiseSpec, GainMatrix, GainVarianceSpec, SquareMatrix};
use linksched::experiment::sweep::{run_sweep, Metric, SweepPoint, SweepRow};
use linksched::experiment::{preset, PolicyName, ScenarioConfig};
use linksched::neural::{finite_diff, finite_diff_grad, forward, init_params, backward, MlpArchitecture, Mode};
use linksched::rate::{exhaustive_best, relaxed_sum_rate_with_grad, RateParams, RelaxedDecision};
use linksched::seed;
use linksched::training::{DecisionSource, Naive, PerfectCsi};
use ndarray::Array2;
use rand::Rng as _;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Sum rate written out directly from the SINR definition.
fn oracle_rate(g: &GainMatrix, powers: &[f64], noise: f64) -> f64 {
    let k = g.k_users();
    (0..k)
        .map(|i| {
            let interference: f64 = (0..k).filter(|&j| j != i).map(|j| g.get(i, j) * powers[j]).sum();
            (1.0 + g.get(i, i) * powers[i] / (noise + interference)).log2()
        })
        .sum()
}

fn random_gains(k: usize, rng: &mut impl rand::Rng) -> GainMatrix {
    let data = (0..k * k).map(|_| -rng.random::<f64>().ln() * rng.random_range(0.1..3.0)).collect();
    GainMatrix::new(SquareMatrix::from_row_major(k, data).unwrap()).unwrap()
}

// 1 -------------------------------------------------------------------------

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst_mlp: f64 = 0.0;
    for net in 0..100u64 {
        let arch = MlpArchitecture::new(vec![4, 30, 30, 30, 1], 0.0).unwrap();
        let mut rng = seed::stream(1, &[net]);
        let mut params = init_params(&arch, &mut rng);
        for layer in &mut params.layers {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let x = Array2::from_shape_simple_fn((8, 4), || rng.random_range(-2.0..2.0));
        let w = Array2::from_shape_simple_fn((8, 1), || rng.random_range(-1.0..1.0));
        let cache = forward(&params, x.view(), Mode::Eval).unwrap();
        let analytic = backward(&params, &cache, w.view()).unwrap();
        let numeric = finite_diff_grad(
            |p| (forward(p, x.view(), Mode::Eval).unwrap().output() * &w).sum(),
            &params,
            // Small enough that a perturbation rarely straddles a ReLU kink.
            1e-7,
        );
        worst_mlp = worst_mlp.max(rel_err(&analytic.to_flat(), &numeric.to_flat()));
    }
    let mut worst_rate: f64 = 0.0;
    let mut rng = seed::stream(2, &[]);
    let params = RateParams::default();
    for i in 0..100 {
        let k = 1 + i % 4;
        let g = random_gains(k, &mut rng);
        let f: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..0.95)).collect();
        let (_, analytic) = relaxed_sum_rate_with_grad(&g, &RelaxedDecision::new(f.clone()).unwrap(), params).unwrap();
        let numeric = finite_diff(|x| oracle_rate(&g, x, params.noise_power), &f, 1e-6);
        worst_rate = worst_rate.max(rel_err(&analytic, &numeric));
    }
    let elapsed = start.elapsed();
    check(
        worst_mlp < 1e-4 && worst_rate < 1e-5 && elapsed < Duration::from_secs(60),
        format!("max rel err MLP {worst_mlp:.2e} (< 1e-4), rate {worst_rate:.2e} (< 1e-5), {:.1}s (< 60s)", elapsed.as_secs_f64()),
    )
}

// 2 -------------------------------------------------------------------------

fn oracle_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::stream(3, &[]);
    let params = RateParams::default();
    let mut mismatches = 0;
    for i in 0..1000 {
        let k = 2 + i % 3;
        let g = random_gains(k, &mut rng);
        // Brute force over every on/off vector, TX 1 as the most significant bit.
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for mask in 0..(1usize << k) {
            let active: Vec<bool> = (0..k).map(|j| mask >> (k - 1 - j) & 1 == 1).collect();
            let powers: Vec<f64> = active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
            let r = oracle_rate(&g, &powers, 1.0);
            if r > best.0 {
                best = (r, active);
            }
        }
        if exhaustive_best(&g, params).unwrap().active() != best.1.as_slice() {
            mismatches += 1;
        }
    }
    let dist = ChannelDistribution::new(
        GainVarianceSpec::unit(3),
        CsiNoiseSpec::new(vec![SquareMatrix::zeros(3); 3]).unwrap(),
    )
    .unwrap();
    let samples = dist.sample_batch(2000, 4).unwrap();
    let naive = Naive(params).decide(&samples).unwrap();
    let perfect = PerfectCsi(params).decide(&samples).unwrap();
    let naive_mismatches = naive.iter().zip(&perfect).filter(|(a, b)| a != b).count();
    let elapsed = start.elapsed();
    check(
        mismatches == 0 && naive_mismatches == 0 && elapsed < Duration::from_secs(60),
        format!(
            "exhaustive vs brute force: {mismatches}/1000 mismatches; naive vs perfect at sigma=0: {naive_mismatches}/2000; {:.1}s (< 60s)",
            elapsed.as_secs_f64()
        ),
    )
}

// 3, 4, 5 share one distributed_2user sweep ---------------------------------

fn reduced_2user() -> ScenarioConfig {
    let mut s = preset("distributed_2user").unwrap();
    s.n_eval = 20_000;
    s.train.n_train = 10_000;
    s.train.steps = 3_000;
    s.policies = vec![PolicyName::Cdnn, PolicyName::Naive, PolicyName::PerfectCsi, PolicyName::Tdma, PolicyName::AlwaysOn];
    s
}

struct Table(Vec<SweepRow>);

impl Table {
    fn row(&self, sigma: f64, policy: PolicyName, metric: Metric, tx: Option<usize>) -> &SweepRow {
        self.0
            .iter()
            .find(|r| r.sigma == sigma && r.policy == policy && r.metric == metric && r.tx_index == tx)
            .unwrap_or_else(|| panic!("missing row {sigma} {policy} {metric:?} {tx:?}"))
    }

    fn rate(&self, sigma: f64, policy: PolicyName) -> Result<(f64, f64), String> {
        let r = self.row(sigma, policy, Metric::SumRate, None);
        match (r.value, r.ci_halfwidth) {
            (Some(v), Some(hw)) => Ok((v, hw)),
            _ => Err(format!("{policy} failed to train at sigma={sigma}")),
        }
    }

    fn fraction(&self, sigma: f64, policy: PolicyName, tx: usize) -> Result<f64, String> {
        self.row(sigma, policy, Metric::TransmitFraction, Some(tx))
            .value
            .ok_or_else(|| format!("{policy} failed to train at sigma={sigma}"))
    }
}

fn sweep_2user(grid: &[f64]) -> Result<Table, String> {
    run_sweep(&reduced_2user(), grid, 0, None, None, 1).map(Table).map_err(|e| e.to_string())
}

fn perfect_csi_recovery(t: &Table) -> Outcome {
    let (cdnn, _) = t.rate(0.0, PolicyName::Cdnn)?;
    let (perfect, _) = t.rate(0.0, PolicyName::PerfectCsi)?;
    check(
        cdnn >= 0.93 * perfect,
        format!("sigma=0: cdnn {cdnn:.4} vs perfect {perfect:.4}, ratio {:.4} (>= 0.93)", cdnn / perfect),
    )
}

fn uninformed_tx(t: &Table) -> Outcome {
    let f1 = t.fraction(1.0, PolicyName::Cdnn, 1)?;
    let f2 = t.fraction(1.0, PolicyName::Cdnn, 2)?;
    let (cdnn, hw_c) = t.rate(1.0, PolicyName::Cdnn)?;
    let (tdma, hw_t) = t.rate(1.0, PolicyName::Tdma)?;
    let hw = hw_c.min(hw_t);
    check(
        f1 >= 0.9 && f2 > 0.1 && f2 < 0.9 && cdnn >= tdma - hw,
        format!("sigma=1: TX1 fraction {f1:.4} (>= 0.9), TX2 fraction {f2:.4} (in (0.1, 0.9)), cdnn {cdnn:.4} vs tdma {tdma:.4} - {hw:.4}"),
    )
}

fn baseline_ordering(t: &Table, grid: &[f64]) -> Outcome {
    let mut failures = Vec::new();
    let mut worst_naive_margin = f64::INFINITY;
    for &sigma in grid {
        let (cdnn, hw_c) = t.rate(sigma, PolicyName::Cdnn)?;
        let (perfect, _) = t.rate(sigma, PolicyName::PerfectCsi)?;
        let (always, hw_a) = t.rate(sigma, PolicyName::AlwaysOn)?;
        let (naive, hw_n) = t.rate(sigma, PolicyName::Naive)?;
        if perfect < cdnn {
            failures.push(format!("perfect {perfect:.4} < cdnn {cdnn:.4} at sigma={sigma}"));
        }
        if cdnn < always - hw_c.min(hw_a) {
            failures.push(format!("cdnn {cdnn:.4} < always_on {always:.4} - hw at sigma={sigma}"));
        }
        if sigma >= 0.5 {
            let hw = hw_c.min(hw_n);
            worst_naive_margin = worst_naive_margin.min(cdnn - naive + hw);
            if cdnn < naive - hw {
                failures.push(format!("cdnn {cdnn:.4} < naive {naive:.4} - {hw:.4} at sigma={sigma}"));
            }
        }
    }
    if failures.is_empty() {
        Ok(format!("{} points ordered; smallest cdnn - naive + hw for sigma >= 0.5: {worst_naive_margin:.4}", grid.len()))
    } else {
        Err(failures.join("; "))
    }
}

// 6 -------------------------------------------------------------------------

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut s = preset("distributed_2user").unwrap();
    s.n_eval = 5_000;
    s.train.n_train = 2_000;
    s.train.batch_size = 1_000;
    s.train.steps = 100;
    s.train.pretrain_steps = 50;
    let grid = [0.0, 0.5, 1.0];
    let csv = |name: &str, jobs: usize| -> Result<Vec<u8>, String> {
        let path = dir.path().join(name);
        run_sweep(&s, &grid, 17, Some(&path), None, jobs).map_err(|e| e.to_string())?;
        std::fs::read(&path).map_err(|e| e.to_string())
    };
    let (a, b, c) = (csv("a.csv", 1)?, csv("b.csv", 1)?, csv("c.csv", 3)?);
    check(
        a == b && a == c,
        format!("{} bytes; repeat identical: {}; 3 workers identical: {}", a.len(), a == b, a == c),
    )
}

// 7 -------------------------------------------------------------------------

/// Runs one full full-scale distributed_3user point (every policy, default
/// training configuration) on a single worker and times it.
fn desk_budget() -> Outcome {
    let scenario = preset("distributed_3user").unwrap();
    let start = Instant::now();
    let point = SweepPoint { scenario: &scenario, sigma: 0.5, root_seed: 0 };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    pool.install(|| point.run(None)).map_err(|e| e.to_string())?;
    let point_secs = start.elapsed().as_secs_f64();
    let grid_secs = 11.0 * point_secs;
    check(
        point_secs < 15.0 * 60.0 && grid_secs < 12.0 * 3600.0,
        format!(
            "K=3 full-scale point (n=30000, batch 5000, 2000+10000 steps, all policies, 1 worker) {:.1} min (< 15); 11-point grid ~{:.2} h (< 12)",
            point_secs / 60.0,
            grid_secs / 3600.0
        ),
    )
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| selected.is_empty() || selected.contains(&n);
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    if wanted(1) {
        results.push((1, "gradient suite", gradient_suite()));
    }
    if wanted(2) {
        results.push((2, "oracle suite", oracle_suite()));
    }
    if wanted(3) || wanted(4) || wanted(5) {
        let grid: Vec<f64> = if wanted(5) { (0..=10).map(|i| i as f64 / 10.0).collect() } else { vec![0.0, 1.0] };
        let start = Instant::now();
        let table = sweep_2user(&grid);
        eprintln!("distributed_2user sweep over {} points took {:.0}s", grid.len(), start.elapsed().as_secs_f64());
        let with = |f: &dyn Fn(&Table) -> Outcome| table.as_ref().map_err(Clone::clone).and_then(f);
        if wanted(3) {
            results.push((3, "perfect-CSI recovery", with(&perfect_csi_recovery)));
        }
        if wanted(4) {
            results.push((4, "uninformed-TX behavior", with(&uninformed_tx)));
        }
        if wanted(5) {
            results.push((5, "baseline ordering", with(&|t| baseline_ordering(t, &grid))));
        }
    }
    if wanted(6) {
        results.push((6, "determinism", determinism()));
    }
    if wanted(7) {
        results.push((7, "desk-scale budget", desk_budget()));
    }
    let mut failed = false;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
            Err(detail) => {
                failed = true;
                println!("FAIL criterion {n} ({name}): {detail}");
            }
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
