//! Simulation of `X_t = Φ(X_{t-1}, ε_t)` and extraction of extreme windows.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{norm, scaled, TailIndex, UnitVector};
use crate::rng::{self, Stream};

/// Default cap on `‖X_t‖`; exceeding it signals divergence.
pub const DEFAULT_CAP: f64 = 1e150;
/// Burn-in used when a model has no closed-form stationary law.
pub const DEFAULT_BURN_IN: usize = 10_000;

const WINDOW_CHUNK: usize = 1 << 16;

/// A Markov recursion together with its tail map.
///
/// Noise values are flat `f64` vectors whose layout is chosen by the model.
/// `tail_map` is φ on unit vectors; [`extend_tail_map`] gives the homogeneous
/// extension to all of `R^d`.
pub trait Model: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn alpha(&self) -> TailIndex;
    fn sample_noise(&self, rng: &mut Stream) -> Vec<f64>;
    /// Φ(x, e).
    fn transition(&self, x: &[f64], e: &[f64]) -> Vec<f64>;
    /// φ(s, e) for a unit vector `s`.
    fn tail_map(&self, s: &[f64], e: &[f64]) -> Vec<f64>;

    fn initial_state(&self, _rng: &mut Stream) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    fn burn_in(&self) -> usize {
        DEFAULT_BURN_IN
    }

    /// The model author's declaration that `sup_{‖y‖≤x} ‖Φ(y, e)‖ = O(x)`.
    fn declares_bounded_growth(&self) -> bool {
        false
    }

    /// One step of the recursion in place.
    fn advance(&self, x: &mut Vec<f64>, rng: &mut Stream) {
        let e = self.sample_noise(rng);
        *x = self.transition(x, &e);
    }
}

/// φ(v, e) = ‖v‖ φ(v/‖v‖, e), with φ(0, e) = 0.
pub fn extend_tail_map(model: &dyn Model, v: &[f64], e: &[f64]) -> Vec<f64> {
    let r = norm(v);
    if r == 0.0 {
        return vec![0.0; v.len()];
    }
    scaled(&model.tail_map(&scaled(v, 1.0 / r), e), r)
}

/// A trajectory stored row-major, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    d: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn from_rows(d: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { d, data })
    }

    pub fn from_flat(d: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 || data.len() % d != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form rows of width {d}",
                data.len()
            )));
        }
        Ok(Self { d, data })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn norms(&self) -> Vec<f64> {
        self.data.par_chunks_exact(self.d).map(norm).collect()
    }

    /// Little-endian `f64` bytes, row-major.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(d: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 8 != 0 {
            return Err(Error::InvalidArgument(
                "byte length is not a multiple of 8".into(),
            ));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_flat(d, data)
    }
}

/// Options for [`simulate_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    /// `None` uses the model's own burn-in.
    pub burn_in: Option<usize>,
    pub cap: f64,
    /// `None` draws from the model's initial law.
    pub init: Option<Vec<f64>>,
}

impl SimConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            burn_in: None,
            cap: DEFAULT_CAP,
            init: None,
        }
    }

    pub fn burn_in(mut self, steps: usize) -> Self {
        self.burn_in = Some(steps);
        self
    }

    pub fn cap(mut self, cap: f64) -> Self {
        self.cap = cap;
        self
    }

    pub fn init(mut self, x0: Vec<f64>) -> Self {
        self.init = Some(x0);
        self
    }
}

/// Runs the recursion for `burn_in + n` steps from `X_0` and returns
/// `X_{burn_in+1}, …, X_{burn_in+n}`.
pub fn simulate(model: &dyn Model, n: usize, burn_in: usize, seed: u64) -> Result<Trajectory> {
    simulate_with(
        model,
        &SimConfig::new(n).burn_in(burn_in),
        &mut rng::master(seed),
    )
}

pub fn simulate_with(model: &dyn Model, cfg: &SimConfig, rng: &mut Stream) -> Result<Trajectory> {
    if cfg.n == 0 {
        return Err(Error::InvalidArgument(
            "trajectory length must be >= 1".into(),
        ));
    }
    let d = model.dim();
    let mut x = match &cfg.init {
        Some(x0) if x0.len() != d => {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x0.len(),
            })
        }
        Some(x0) => x0.clone(),
        None => model.initial_state(rng),
    };
    let burn_in = cfg.burn_in.unwrap_or_else(|| model.burn_in());
    let mut data = Vec::with_capacity(cfg.n * d);
    for step in 1..=burn_in + cfg.n {
        model.advance(&mut x, rng);
        let r = norm(&x);
        if !(r <= cfg.cap) {
            return Err(Error::NumericOverflow {
                step,
                norm: r,
                cap: cfg.cap,
            });
        }
        if step > burn_in {
            data.extend_from_slice(&x);
        }
    }
    Ok(Trajectory { d, data })
}

/// Independent replicate chains; replicate `r` uses stream `split(seed, r)`,
/// so replicate 0 equals [`simulate`] with the same seed.
pub fn simulate_replicates(
    model: &dyn Model,
    cfg: &SimConfig,
    seed: u64,
    replicates: usize,
) -> Result<Vec<Trajectory>> {
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| simulate_with(model, cfg, &mut rng::split(seed, r)))
        .collect()
}

/// Norm quantiles of the first and second halves of a trajectory, a cheap
/// check that burn-in reached stationarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub levels: Vec<f64>,
    pub first_half: Vec<f64>,
    pub second_half: Vec<f64>,
    /// Largest `|log(q2/q1)|` over the levels.
    pub max_log_ratio: f64,
}

pub fn stationarity_report(traj: &Trajectory) -> StationarityReport {
    let levels = vec![0.5, 0.9, 0.99];
    let norms = traj.norms();
    let half = norms.len() / 2;
    let qs = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        levels
            .iter()
            .map(|&p| quantile_sorted(&s, p))
            .collect::<Vec<_>>()
    };
    let (first_half, second_half) = (qs(&norms[..half]), qs(&norms[half..]));
    let max_log_ratio = first_half
        .iter()
        .zip(&second_half)
        .map(|(a, b)| {
            if *a > 0.0 && *b > 0.0 {
                (b / a).ln().abs()
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    StationarityReport {
        levels,
        first_half,
        second_half,
        max_log_ratio,
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Norm threshold at a percentile (0–100) of the pooled trajectories.
pub fn norm_percentile(trajs: &[&Trajectory], percentile: f64) -> Result<f64> {
    if !(0.0..100.0).contains(&percentile) {
        return Err(Error::InvalidArgument(format!(
            "percentile {percentile} outside [0, 100)"
        )));
    }
    let mut all: Vec<f64> = trajs.iter().flat_map(|t| t.norms()).collect();
    if all.is_empty() {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    all.par_sort_unstable_by(f64::total_cmp);
    Ok(quantile_sorted(&all, percentile / 100.0))
}

/// The normalized neighbourhood of an exceedance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremeWindow {
    /// Position of `X_0` in the trajectory.
    pub index: usize,
    /// `‖X_0‖ / x`.
    pub y: f64,
    /// `X_{-s}/‖X_0‖, …, X_t/‖X_0‖`.
    pub normalized: Vec<Vec<f64>>,
}

impl ExtremeWindow {
    /// `normalized[s + k]`, the value at relative time `k`.
    pub fn at(&self, s: usize, k: isize) -> &[f64] {
        &self.normalized[(s as isize + k) as usize]
    }
}

/// All windows around indices `j` with `‖X_j‖ > x` whose full range
/// `j-s ..= j+t` lies inside the trajectory.
pub fn extract_windows(
    traj: &Trajectory,
    x: f64,
    s: usize,
    t: usize,
) -> Result<Vec<ExtremeWindow>> {
    if !(x > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold {x} must be positive"
        )));
    }
    let n = traj.len();
    if s + t >= n {
        return Err(Error::InvalidArgument(format!(
            "window length {} does not fit a trajectory of length {n}",
            s + t + 1
        )));
    }
    let windows: Vec<ExtremeWindow> = rng::chunks(n, WINDOW_CHUNK)
        .into_par_iter()
        .map(|(_, start, len)| {
            let mut out = Vec::new();
            for j in start.max(s)..(start + len).min(n - t) {
                let r = norm(traj.get(j));
                if r > x {
                    let normalized = (j - s..=j + t)
                        .map(|k| scaled(traj.get(k), 1.0 / r))
                        .collect();
                    out.push(ExtremeWindow {
                        index: j,
                        y: r / x,
                        normalized,
                    });
                }
            }
            out
        })
        .collect::<Vec<_>>()
        .concat();
    if windows.is_empty() {
        return Err(Error::NoExceedances { threshold: x });
    }
    Ok(windows)
}

/// Gaps `‖Φ(r·s, e)/r − φ(s, e)‖` at each radius.
pub fn phi_limit_probe(
    model: &dyn Model,
    s: &UnitVector,
    e: &[f64],
    radii: &[f64],
) -> Result<Vec<f64>> {
    if radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "radii must be positive and increasing".into(),
        ));
    }
    let limit = model.tail_map(s.coords(), e);
    Ok(radii
        .iter()
        .map(|&r| {
            let v = model.transition(&s.scale(r), e);
            v.iter()
                .zip(&limit)
                .map(|(a, b)| (a / r - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Lattice probe of `sup_{‖y‖≤r} ‖Φ(y, e)‖ / r` at two radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthProbe {
    pub declared: bool,
    pub radii: [f64; 2],
    pub ratios: [f64; 2],
    /// The ratio did not grow by more than a factor of two between radii.
    pub consistent: bool,
}

pub fn bounded_growth_probe(model: &dyn Model, e: &[f64], radii: [f64; 2]) -> Result<GrowthProbe> {
    if !(radii[0] > 0.0 && radii[1] > radii[0]) {
        return Err(Error::InvalidArgument(
            "radii must be positive and increasing".into(),
        ));
    }
    let d = model.dim();
    let lattice = ball_lattice(d);
    let ratio = |r: f64| {
        lattice
            .iter()
            .map(|p| norm(&model.transition(&scaled(p, r), e)))
            .fold(0.0, f64::max)
            / r
    };
    let ratios = [ratio(radii[0]), ratio(radii[1])];
    Ok(GrowthProbe {
        declared: model.declares_bounded_growth(),
        radii,
        ratios,
        consistent: ratios[1] <= 2.0 * ratios[0] + f64::MIN_POSITIVE,
    })
}

/// Points of the unit ball: a cubic lattice for d ≤ 3, a fixed random cloud beyond.
fn ball_lattice(d: usize) -> Vec<Vec<f64>> {
    if d <= 3 {
        let k = [0, 41, 21, 11][d] as i64;
        let h = 2.0 / (k - 1) as f64;
        let mut out = Vec::new();
        let total = (k as usize).pow(d as u32);
        for mut idx in 0..total {
            let p: Vec<f64> = (0..d)
                .map(|_| {
                    let c = (idx % k as usize) as f64;
                    idx /= k as usize;
                    -1.0 + c * h
                })
                .collect();
            if norm(&p) <= 1.0 {
                out.push(p);
            }
        }
        out
    } else {
        let mut r = rng::master(0xba11);
        (0..5000)
            .map(|_| {
                let u = crate::measures::uniform_sphere(d, &mut r);
                u.scale(rng::unit(&mut r).powf(1.0 / d as f64))
            })
            .collect()
    }
}

/// Hill estimate of α from the top `k` order statistics.
pub fn hill_alpha(norms: &[f64], k: usize) -> Result<TailIndex> {
    if k < 2 || k >= norms.len() {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= k < n, got k = {k}, n = {}",
            norms.len()
        )));
    }
    let mut top = norms.to_vec();
    let n = top.len();
    top.select_nth_unstable_by(n - k - 1, |a, b| a.total_cmp(b));
    let mut top = top.split_off(n - k - 1);
    top.sort_by(f64::total_cmp);
    let base = top[0];
    if !(base > 0.0) {
        return Err(Error::DegenerateSample(
            "top order statistics are not positive".into(),
        ));
    }
    let ties = top.windows(2).filter(|w| w[0] == w[1]).count();
    if 2 * ties > k {
        return Err(Error::DegenerateSample(format!(
            "{ties} ties among the top {k} values"
        )));
    }
    let mean_log = top[1..].iter().map(|v| (v / base).ln()).sum::<f64>() / k as f64;
    if !(mean_log > 0.0) {
        return Err(Error::DegenerateSample("zero log-spacings".into()));
    }
    TailIndex::new(1.0 / mean_log)
}

/// A model built from closures, for ad-hoc recursions and tests.
#[derive(Clone)]
pub struct FnModel {
    pub name: String,
    pub d: usize,
    pub alpha: TailIndex,
    pub noise: Arc<dyn Fn(&mut Stream) -> Vec<f64> + Send + Sync>,
    pub transition: Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>,
    pub tail_map: Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>,
    pub bounded_growth: bool,
}

impl Model for FnModel {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn alpha(&self) -> TailIndex {
        self.alpha
    }
    fn sample_noise(&self, rng: &mut Stream) -> Vec<f64> {
        (self.noise)(rng)
    }
    fn transition(&self, x: &[f64], e: &[f64]) -> Vec<f64> {
        (self.transition)(x, e)
    }
    fn tail_map(&self, s: &[f64], e: &[f64]) -> Vec<f64> {
        (self.tail_map)(s, e)
    }
    fn declares_bounded_growth(&self) -> bool {
        self.bounded_growth
    }
}
