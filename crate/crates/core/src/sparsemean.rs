//! Sparse-mean testing testbed.
//!
//! `H0: Delta_j ~ N(0, eps^2 I)` against the mixture
//! `Ha: Delta_j = G_j + r_j eps mu` with a common hidden support, and two
//! sign-invariant tests: top-k coordinate energy (polynomial) and an
//! exhaustive scan over k-subsets (exponential in k).

use std::fmt;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keystream::derive_seed_u64;
use crate::prob::{stream_from_seed, RandomStream};
use crate::stats::{wilson_interval, WILSON_Z_95};

/// Largest number of subsets the scan test will enumerate.
pub const SCAN_BUDGET: u128 = 1_000_000;
pub const NULL_DRAWS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    Ha,
}

/// How the per-sample signs are drawn under `Ha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignMode {
    #[default]
    Rademacher,
    /// Every `r_j = +1`; a diagnostic for the first moment.
    AllPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SparseTest {
    Threshold,
    Scan,
}

impl fmt::Display for SparseTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SparseTest::Threshold => "threshold",
            SparseTest::Scan => "scan",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMeanInstance {
    data: Vec<f64>,
    n: usize,
    d: usize,
    pub epsilon: f64,
    pub k: usize,
    pub truth: Hypothesis,
    pub planted_support: Option<Vec<usize>>,
    pub planted_signs: Option<Vec<i8>>,
}

impl SparseMeanInstance {
    /// Row-major `n x d` samples.
    pub fn from_data(data: Vec<f64>, n: usize, d: usize, k: usize, epsilon: f64) -> Result<Self> {
        check_shape(n, d, k, epsilon)?;
        if data.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, found: data.len() });
        }
        Ok(Self { data, n, d, epsilon, k, truth: Hypothesis::H0, planted_support: None, planted_signs: None })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.d..(j + 1) * self.d]
    }
}

fn check_shape(n: usize, d: usize, k: usize, epsilon: f64) -> Result<()> {
    if n < 1 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    if k < 1 || k > d {
        return Err(Error::InvalidInput(format!("k must be in [1, {d}], got {k}")));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

pub fn sample_instance(
    n: usize,
    d: usize,
    k: usize,
    epsilon: f64,
    hypothesis: Hypothesis,
    rng: &mut RandomStream,
) -> Result<SparseMeanInstance> {
    sample_instance_with(n, d, k, epsilon, hypothesis, SignMode::Rademacher, rng)
}

pub fn sample_instance_with(
    n: usize,
    d: usize,
    k: usize,
    epsilon: f64,
    hypothesis: Hypothesis,
    signs: SignMode,
    rng: &mut RandomStream,
) -> Result<SparseMeanInstance> {
    check_shape(n, d, k, epsilon)?;
    let mut data: Vec<f64> = (0..n * d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            epsilon * z
        })
        .collect();
    let mut inst = SparseMeanInstance {
        data: Vec::new(),
        n,
        d,
        epsilon,
        k,
        truth: hypothesis,
        planted_support: None,
        planted_signs: None,
    };
    if hypothesis == Hypothesis::Ha {
        let mut support = index::sample(rng, d, k).into_vec();
        support.sort_unstable();
        let shift = epsilon / (k as f64).sqrt();
        let r: Vec<i8> = (0..n)
            .map(|_| match signs {
                SignMode::Rademacher if rng.random::<bool>() => 1,
                SignMode::Rademacher => -1,
                SignMode::AllPositive => 1,
            })
            .collect();
        for (j, &rj) in r.iter().enumerate() {
            for &i in &support {
                data[j * d + i] += f64::from(rj) * shift;
            }
        }
        inst.planted_support = Some(support);
        inst.planted_signs = Some(r);
    }
    inst.data = data;
    Ok(inst)
}

/// Sum of the `k` largest `s_i = (1/n) sum_j Delta_j(i)^2`.
pub fn threshold_statistic(inst: &SparseMeanInstance) -> f64 {
    let (n, d) = (inst.n, inst.d);
    let mut s = vec![0.0; d];
    for j in 0..n {
        for (si, x) in s.iter_mut().zip(inst.row(j)) {
            *si += x * x;
        }
    }
    s.sort_by(|a, b| b.total_cmp(a));
    s[..inst.k].iter().sum::<f64>() / n as f64
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

pub fn check_scan_budget(d: usize, k: usize) -> Result<()> {
    let subsets = binomial(d, k);
    if subsets > SCAN_BUDGET {
        return Err(Error::InfeasibleScan { subsets, budget: SCAN_BUDGET });
    }
    Ok(())
}

/// `max_T (1/n) sum_j |<Delta_j, mu_T>|` over every k-subset `T`.
pub fn scan_statistic(inst: &SparseMeanInstance) -> Result<f64> {
    let (n, d, k) = (inst.n, inst.d, inst.k);
    check_scan_budget(d, k)?;
    let cols: Vec<Vec<f64>> = (0..d).map(|i| (0..n).map(|j| inst.data[j * d + i]).collect()).collect();
    let mut partial = vec![vec![0.0; n]; k];
    let mut best = f64::NEG_INFINITY;
    scan_level(&cols, k, 0, 0, &mut partial, &mut best);
    Ok(best / (n as f64 * (k as f64).sqrt()))
}

fn scan_level(cols: &[Vec<f64>], k: usize, start: usize, depth: usize, partial: &mut [Vec<f64>], best: &mut f64) {
    let d = cols.len();
    if depth + 1 == k {
        for col in &cols[start..] {
            let total: f64 = if depth == 0 {
                col.iter().map(|x| x.abs()).sum()
            } else {
                partial[depth - 1].iter().zip(col).map(|(a, b)| (a + b).abs()).sum()
            };
            if total > *best {
                *best = total;
            }
        }
        return;
    }
    for i in start..=d - (k - depth) {
        let (head, tail) = partial.split_at_mut(depth);
        let cur = &mut tail[0];
        if depth == 0 {
            cur.copy_from_slice(&cols[i]);
        } else {
            for ((c, a), b) in cur.iter_mut().zip(&head[depth - 1]).zip(&cols[i]) {
                *c = a + b;
            }
        }
        scan_level(cols, k, i + 1, depth + 1, partial, best);
    }
}

pub fn statistic(test: SparseTest, inst: &SparseMeanInstance) -> Result<f64> {
    match test {
        SparseTest::Threshold => Ok(threshold_statistic(inst)),
        SparseTest::Scan => scan_statistic(inst),
    }
}

/// Simulated null distribution of one statistic at fixed `(n, d, k, eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullCalibration {
    pub test: SparseTest,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub epsilon: f64,
    sorted: Vec<f64>,
}

impl NullCalibration {
    /// Order statistic of rank `ceil((1 - alpha)(m + 1))`, clamped to `m`.
    pub fn critical_value(&self, alpha: f64) -> f64 {
        let m = self.sorted.len();
        let rank = ((1.0 - alpha) * (m + 1) as f64).ceil() as usize;
        self.sorted[rank.clamp(1, m) - 1]
    }

    pub fn rejects(&self, stat: f64, alpha: f64) -> bool {
        stat > self.critical_value(alpha)
    }

    pub fn draws(&self) -> &[f64] {
        &self.sorted
    }
}

/// Null draws for several tests at once, sharing the simulated instances.
/// Draw `i` uses the stream seeded by `derive_seed_u64(seed, "null", i)`.
pub fn calibrate_many(
    tests: &[SparseTest],
    n: usize,
    d: usize,
    k: usize,
    epsilon: f64,
    draws: usize,
    seed: u64,
) -> Result<Vec<NullCalibration>> {
    check_shape(n, d, k, epsilon)?;
    if draws < 1 {
        return Err(Error::InvalidInput("need at least one null draw".into()));
    }
    if tests.contains(&SparseTest::Scan) {
        check_scan_budget(d, k)?;
    }
    let per_draw: Vec<Vec<f64>> = (0..draws as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_from_seed(derive_seed_u64(seed, "null", i));
            let inst = sample_instance(n, d, k, epsilon, Hypothesis::H0, &mut rng)?;
            tests.iter().map(|&t| statistic(t, &inst)).collect()
        })
        .collect::<Result<_>>()?;
    Ok(tests
        .iter()
        .enumerate()
        .map(|(c, &test)| {
            let mut sorted: Vec<f64> = per_draw.iter().map(|row| row[c]).collect();
            sorted.sort_by(f64::total_cmp);
            NullCalibration { test, n, d, k, epsilon, sorted }
        })
        .collect())
}

pub fn calibrate(
    test: SparseTest,
    n: usize,
    d: usize,
    k: usize,
    epsilon: f64,
    draws: usize,
    seed: u64,
) -> Result<NullCalibration> {
    Ok(calibrate_many(&[test], n, d, k, epsilon, draws, seed)?.remove(0))
}

fn calibrated_test(test: SparseTest, inst: &SparseMeanInstance, alpha: f64, seed: u64) -> Result<bool> {
    check_alpha(alpha)?;
    let cal = calibrate(test, inst.n, inst.d, inst.k, inst.epsilon, NULL_DRAWS, seed)?;
    Ok(cal.rejects(statistic(test, inst)?, alpha))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("alpha must be in (0, 1), got {alpha}")))
    }
}

/// Rejects `H0` when the top-k energy exceeds its simulated null quantile.
/// `seed` drives the 2000 null draws.
pub fn threshold_test(inst: &SparseMeanInstance, alpha: f64, seed: u64) -> Result<bool> {
    calibrated_test(SparseTest::Threshold, inst, alpha, seed)
}

pub fn scan_test(inst: &SparseMeanInstance, alpha: f64, seed: u64) -> Result<bool> {
    calibrated_test(SparseTest::Scan, inst, alpha, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerGrid {
    pub tests: Vec<SparseTest>,
    pub ns: Vec<usize>,
    pub d: usize,
    pub k: usize,
    pub epsilon: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub trials: usize,
    #[serde(default = "default_null_draws")]
    pub null_draws: usize,
    /// `H0` rows measure the level rather than power.
    #[serde(default = "default_hypothesis")]
    pub hypothesis: Hypothesis,
    #[serde(default)]
    pub signs: SignMode,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_null_draws() -> usize {
    NULL_DRAWS
}

fn default_hypothesis() -> Hypothesis {
    Hypothesis::Ha
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub test: SparseTest,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub epsilon: f64,
    pub alpha: f64,
    pub power: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub rejections: u64,
    pub trials: u64,
}

/// Monte-Carlo rejection rates, sorted by `(test, n)`.
///
/// For each `n` the tests share both the null draws and the trial instances,
/// so the curves are paired. Trial `t` at sample size `n` uses the seed
/// `derive_seed_u64(seed, "trial-n{n}", t)`.
pub fn power_curve(grid: &PowerGrid, seed: u64) -> Result<Vec<PowerRow>> {
    check_alpha(grid.alpha)?;
    if grid.tests.is_empty() || grid.ns.is_empty() || grid.trials == 0 {
        return Err(Error::InvalidConfig("power grid needs tests, ns and trials".into()));
    }
    let mut tests = grid.tests.clone();
    tests.sort();
    tests.dedup();
    let mut ns = grid.ns.clone();
    ns.sort_unstable();
    ns.dedup();
    let mut rows = Vec::new();
    for &n in &ns {
        let cals = calibrate_many(
            &tests,
            n,
            grid.d,
            grid.k,
            grid.epsilon,
            grid.null_draws,
            derive_seed_u64(seed, &format!("null-n{n}"), 0),
        )?;
        let label = format!("trial-n{n}");
        let verdicts: Vec<Vec<bool>> = (0..grid.trials as u64)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream_from_seed(derive_seed_u64(seed, &label, t));
                let inst = sample_instance_with(n, grid.d, grid.k, grid.epsilon, grid.hypothesis, grid.signs, &mut rng)?;
                cals.iter().map(|cal| Ok(cal.rejects(statistic(cal.test, &inst)?, grid.alpha))).collect()
            })
            .collect::<Result<_>>()?;
        for (c, &test) in tests.iter().enumerate() {
            let rejections = verdicts.iter().filter(|v| v[c]).count() as u64;
            let trials = grid.trials as u64;
            let (ci_lo, ci_hi) = wilson_interval(rejections, trials, WILSON_Z_95);
            rows.push(PowerRow {
                test,
                n,
                d: grid.d,
                k: grid.k,
                epsilon: grid.epsilon,
                alpha: grid.alpha,
                power: rejections as f64 / trials as f64,
                ci_lo,
                ci_hi,
                rejections,
                trials,
            });
        }
    }
    rows.sort_by_key(|r| (r.test, r.n));
    Ok(rows)
}

pub const POWER_CSV_HEADER: &str = "test,n,d,k,epsilon,alpha,power,ci_lo,ci_hi";

pub fn power_rows_to_csv(rows: &[PowerRow]) -> String {
    let mut out = String::from(POWER_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.test, r.n, r.d, r.k, r.epsilon, r.alpha, r.power, r.ci_lo, r.ci_hi
        ));
    }
    out
}
