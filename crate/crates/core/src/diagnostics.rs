//! Two-sample statistics, permutation tests and confidence intervals.
//!
//! Energy distance is the workhorse for every distributional comparison. It is
//! computed on the empirical measures (self-pairs included), so it is exactly
//! zero for identical samples and never negative. Permutation tests in one
//! dimension run in `O(N)` per permutation on a presorted pool; in higher
//! dimensions small pools use a cached distance matrix and large pools use the
//! sliced form, which averages one-dimensional energy distances over random
//! directions and rescales so that it estimates the same quantity.

use rand::seq::SliceRandom;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::measures::distance;
use crate::rng::{self, Stream};

pub const DEFAULT_PERMUTATIONS: usize = 999;
pub const DEFAULT_BOOTSTRAP: usize = 1000;

/// Pools up to this size get an exact cached-distance permutation test in d > 1.
pub const EXACT_POOL_LIMIT: usize = 1500;
/// Number of random directions in the sliced statistic.
pub const SLICED_DIRECTIONS: usize = 64;

const PERM_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Permutation,
    /// Permutation test on the sliced energy statistic.
    SlicedPermutation,
    Asymptotic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    pub method: Method,
}

impl TwoSampleResult {
    pub fn rejects(&self, level: f64) -> bool {
        self.p_value <= level
    }
}

/// The JSON record emitted for every test: `{test, statistic, p_value, n1, n2, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    pub seed: u64,
}

impl TestRecord {
    pub fn new(test: impl Into<String>, r: &TwoSampleResult, seed: u64) -> Self {
        Self {
            test: test.into(),
            statistic: r.statistic,
            p_value: r.p_value,
            n1: r.n1,
            n2: r.n2,
            seed,
        }
    }
}

fn check_samples(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<usize> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument("samples must be nonempty".into()));
    }
    let d = x[0].len();
    for v in x.iter().chain(y) {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
    }
    Ok(d)
}

/// `Σ_{i<j} |z_i - z_j|` for sorted `z`.
fn sorted_pair_sum(z: &[f64]) -> f64 {
    let n = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(k, v)| v * (2.0 * k as f64 + 1.0 - n))
        .sum()
}

fn energy_from_pair_sums(sxx: f64, syy: f64, sxy: f64, n: f64, m: f64) -> f64 {
    let e = 2.0 * sxy / (n * m) - 2.0 * sxx / (n * n) - 2.0 * syy / (m * m);
    e.max(0.0)
}

/// Energy distance `2 E|X-Y| - E|X-X'| - E|Y-Y'|` between the two empirical
/// measures.
pub fn energy_distance(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    let d = check_samples(x, y)?;
    if d == 1 {
        let xs: Vec<f64> = x.iter().map(|v| v[0]).collect();
        let ys: Vec<f64> = y.iter().map(|v| v[0]).collect();
        return Ok(energy_1d(&xs, &ys));
    }
    let row_sum =
        |a: &Vec<f64>, other: &[Vec<f64>]| -> f64 { other.iter().map(|b| distance(a, b)).sum() };
    let total = |rows: &[Vec<f64>], other: &[Vec<f64>]| -> f64 {
        // collect-then-sum keeps the reduction order fixed
        let per_row: Vec<f64> = rows.par_iter().map(|a| row_sum(a, other)).collect();
        per_row.iter().sum()
    };
    let sxy = total(x, y);
    let sxx = total(x, x) / 2.0;
    let syy = total(y, y) / 2.0;
    Ok(energy_from_pair_sums(
        sxx,
        syy,
        sxy,
        x.len() as f64,
        y.len() as f64,
    ))
}

/// One-dimensional energy distance via sorting, `O((n + m) log(n + m))`.
pub fn energy_1d(x: &[f64], y: &[f64]) -> f64 {
    let sort = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (sx, sy) = (sort(x), sort(y));
    let mut pooled = [sx.as_slice(), sy.as_slice()].concat();
    pooled.sort_by(f64::total_cmp);
    let (pxx, pyy, pall) = (
        sorted_pair_sum(&sx),
        sorted_pair_sum(&sy),
        sorted_pair_sum(&pooled),
    );
    energy_from_pair_sums(pxx, pyy, pall - pxx - pyy, x.len() as f64, y.len() as f64)
}

/// Presorted one-dimensional pool; evaluates the energy statistic for any
/// labelling in a single pass.
struct SortedPool {
    values: Vec<f64>,
    /// Original pooled index of each sorted value.
    order: Vec<usize>,
    total: f64,
}

impl SortedPool {
    fn new(values: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        let total = sorted_pair_sum(&sorted);
        Self {
            values: sorted,
            order,
            total,
        }
    }

    /// `first[i]` marks pooled index `i` as a member of the first sample.
    fn energy(&self, first: &[bool], n: usize, m: usize) -> f64 {
        let (mut kx, mut ky) = (0.0f64, 0.0f64);
        let (mut sxx, mut syy) = (0.0, 0.0);
        let (nf, mf) = (n as f64, m as f64);
        for (v, &i) in self.values.iter().zip(&self.order) {
            if first[i] {
                sxx += v * (2.0 * kx + 1.0 - nf);
                kx += 1.0;
            } else {
                syy += v * (2.0 * ky + 1.0 - mf);
                ky += 1.0;
            }
        }
        energy_from_pair_sums(sxx, syy, self.total - sxx - syy, nf, mf)
    }
}

/// `c_d = E|z| / E|θ·z|` for θ uniform on `S^{d-1}`, which rescales the
/// average one-dimensional projection statistic to the d-dimensional one.
fn slicing_constant(d: usize) -> f64 {
    let d = d as f64;
    (0.5 * std::f64::consts::PI.ln() + ln_gamma((d + 1.0) / 2.0) - ln_gamma(d / 2.0)).exp()
}

enum Engine {
    Sorted(SortedPool),
    Matrix { dist: Vec<f64>, size: usize },
    Sliced { pools: Vec<SortedPool>, scale: f64 },
}

impl Engine {
    fn build(pooled: &[Vec<f64>], rng: &mut Stream) -> Self {
        let d = pooled[0].len();
        let size = pooled.len();
        if d == 1 {
            let v: Vec<f64> = pooled.iter().map(|p| p[0]).collect();
            Engine::Sorted(SortedPool::new(&v))
        } else if size <= EXACT_POOL_LIMIT {
            let rows: Vec<Vec<f64>> = pooled
                .par_iter()
                .map(|a| pooled.iter().map(|b| distance(a, b)).collect())
                .collect();
            Engine::Matrix {
                dist: rows.concat(),
                size,
            }
        } else {
            let dirs: Vec<Vec<f64>> = (0..SLICED_DIRECTIONS)
                .map(|_| crate::measures::uniform_sphere(d, rng).into_inner())
                .collect();
            let pools = dirs
                .par_iter()
                .map(|th| {
                    let proj: Vec<f64> = pooled
                        .iter()
                        .map(|p| p.iter().zip(th).map(|(a, b)| a * b).sum())
                        .collect();
                    SortedPool::new(&proj)
                })
                .collect();
            Engine::Sliced {
                pools,
                scale: slicing_constant(d),
            }
        }
    }

    fn method(&self) -> Method {
        match self {
            Engine::Sliced { .. } => Method::SlicedPermutation,
            _ => Method::Permutation,
        }
    }

    fn energy(&self, first: &[bool], n: usize, m: usize) -> f64 {
        match self {
            Engine::Sorted(pool) => pool.energy(first, n, m),
            Engine::Matrix { dist, size } => {
                let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
                for i in 0..*size {
                    let row = &dist[i * size..(i + 1) * size];
                    for j in (i + 1)..*size {
                        match (first[i], first[j]) {
                            (true, true) => sxx += row[j],
                            (false, false) => syy += row[j],
                            _ => sxy += row[j],
                        }
                    }
                }
                energy_from_pair_sums(sxx, syy, sxy, n as f64, m as f64)
            }
            Engine::Sliced { pools, scale } => {
                let s: f64 = pools.iter().map(|p| p.energy(first, n, m)).sum();
                scale * s / pools.len() as f64
            }
        }
    }
}

/// Permutation p-value `(1 + #{permuted >= observed}) / (n_perm + 1)`.
fn permutation_p_value<F>(
    n: usize,
    m: usize,
    n_perm: usize,
    stream: &mut Stream,
    stat: F,
) -> (f64, f64)
where
    F: Fn(&[bool]) -> f64 + Sync,
{
    let mut labels: Vec<bool> = (0..n + m).map(|i| i < n).collect();
    let observed = stat(&labels);
    let key = rng::fork(stream);
    let exceed: usize = rng::chunks(n_perm, PERM_CHUNK)
        .into_par_iter()
        .map(|(c, _, len)| {
            let mut r = rng::split(key, c);
            let mut local = labels.clone();
            let mut count = 0;
            for _ in 0..len {
                local.shuffle(&mut r);
                if stat(&local) >= observed {
                    count += 1;
                }
            }
            count
        })
        .sum();
    labels.clear();
    (observed, (1 + exceed) as f64 / (n_perm + 1) as f64)
}

fn check_permutations(n_perm: usize) -> Result<()> {
    if n_perm < 100 {
        return Err(Error::InvalidArgument(format!(
            "permutation count {n_perm} below the minimum of 100"
        )));
    }
    Ok(())
}

/// Permutation test for an arbitrary two-sample statistic (large values
/// indicate a difference).
pub fn permutation_test<F>(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    statistic: F,
    n_perm: usize,
    stream: &mut Stream,
) -> Result<TwoSampleResult>
where
    F: Fn(&[Vec<f64>], &[Vec<f64>]) -> f64 + Sync,
{
    check_permutations(n_perm)?;
    check_samples(x, y)?;
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let split = |first: &[bool]| {
        let (mut a, mut b) = (Vec::with_capacity(x.len()), Vec::with_capacity(y.len()));
        for (p, &f) in pooled.iter().zip(first) {
            if f {
                a.push((*p).clone())
            } else {
                b.push((*p).clone())
            }
        }
        statistic(&a, &b)
    };
    let (statistic, p_value) = permutation_p_value(x.len(), y.len(), n_perm, stream, split);
    Ok(TwoSampleResult {
        statistic,
        p_value,
        n1: x.len(),
        n2: y.len(),
        method: Method::Permutation,
    })
}

/// Energy-distance permutation test with the fast evaluation paths.
pub fn energy_permutation_test(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    n_perm: usize,
    stream: &mut Stream,
) -> Result<TwoSampleResult> {
    check_permutations(n_perm)?;
    check_samples(x, y)?;
    let pooled: Vec<Vec<f64>> = x.iter().chain(y).cloned().collect();
    let engine = Engine::build(&pooled, stream);
    let (n, m) = (x.len(), y.len());
    let (statistic, p_value) =
        permutation_p_value(n, m, n_perm, stream, |first| engine.energy(first, n, m));
    Ok(TwoSampleResult {
        statistic,
        p_value,
        n1: n,
        n2: m,
        method: engine.method(),
    })
}

/// Two-sided standard normal quantile for a confidence level, e.g. 2.5758 at 0.99.
pub fn z_quantile(level: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(1.0 - (1.0 - level) / 2.0)
}

/// Sample mean and normal-approximation half-width at `level`.
pub fn mean_ci(values: &[f64], level: f64) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, z_quantile(level) * (var / n).sqrt())
}

/// Wilson score interval for a binomial proportion.
pub fn binomial_ci(successes: u64, trials: u64, level: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = z_quantile(level);
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if successes == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

/// Asymptotic Kolmogorov survival function `Pr(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as i64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

fn ks_p(d: f64, ne: f64) -> f64 {
    let s = ne.sqrt();
    kolmogorov_survival((s + 0.12 + 0.11 / s) * d)
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> KsResult {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    KsResult {
        statistic: d,
        p_value: ks_p(d, n),
        n: s.len(),
    }
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let sort = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (a, b) = (sort(a), sort(b));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    KsResult {
        statistic: d,
        p_value: ks_p(d, n * m / (n + m)),
        n: a.len() + b.len(),
    }
}

/// Moving-block bootstrap percentile interval for a statistic of dependent
/// windows.
pub fn block_bootstrap_ci<T, F>(
    windows: &[T],
    statistic: F,
    block_len: usize,
    n_boot: usize,
    level: f64,
    stream: &mut Stream,
) -> Result<(f64, f64)>
where
    T: Sync,
    F: Fn(&[&T]) -> f64 + Sync,
{
    if block_len == 0 {
        return Err(Error::InvalidArgument("block length must be >= 1".into()));
    }
    if n_boot < 200 {
        return Err(Error::InvalidArgument(format!(
            "n_boot {n_boot} below the minimum of 200"
        )));
    }
    let n = windows.len();
    let blocks = n / block_len;
    if blocks < 5 {
        return Err(Error::TooFewWindows { blocks });
    }
    let key = rng::fork(stream);
    let starts = n - block_len + 1;
    let per_chunk: Vec<Vec<f64>> = rng::chunks(n_boot, 16)
        .into_par_iter()
        .map(|(c, _, len)| {
            let mut r = rng::split(key, c);
            (0..len)
                .map(|_| {
                    let mut resample: Vec<&T> = Vec::with_capacity(n + block_len);
                    while resample.len() < n {
                        let s = (r.next_u64() % starts as u64) as usize;
                        resample.extend(windows[s..s + block_len].iter());
                    }
                    resample.truncate(n);
                    statistic(&resample)
                })
                .collect()
        })
        .collect();
    let mut stats: Vec<f64> = per_chunk.concat();
    stats.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (stats.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        stats[lo] + (stats[hi] - stats[lo]) * (pos - lo as f64)
    };
    Ok((q((1.0 - level) / 2.0), q(1.0 - (1.0 - level) / 2.0)))
}

/// Standard normal sample, for calibration checks.
pub fn normal_sample(n: usize, shift: f64, rng: &mut Stream) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| vec![shift + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)])
        .collect()
}
