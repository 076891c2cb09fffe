//! Built-in models with closed-form tail objects.
//!
//! * [`KestenOrthogonalSpec`]: `X_t = A_t X_{t-1} + B_t` with `A = R·Q`, `R > 0`
//!   radial with `E[R^α] = 1` and `Q` orthogonal. With `M_0` uniform on the
//!   sphere the forward increment is `R·Q` and the backward increment is
//!   `R*·Qᵀ`, where `E[g(R*)] = E[g(1/R) R^α]`.
//! * [`Ar1Spec`]: `X_t = A X_{t-1} + B_t` with a power-contractive matrix `A`
//!   and innovations `B = P·Θ`, `P` Pareto(α), `Θ ~ λ`. Its tail process starts
//!   at a random time `-N` from `Θ` and then follows `A`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::chain::{
    adjoint_resample, BftcSpec, ConditionalSampler, Estimate, TailChainPath, TailKernel, CI_LEVEL,
};
use crate::diagnostics::z_quantile;
use crate::engine::Model;
use crate::error::{Error, Result};
use crate::measures::{
    distance, norm, pareto, sphere_quadrature, uniform_sphere, SpectralMeasure, TailIndex,
    UnitVector, ANGLE_MATCH_TOL,
};
use crate::rng::{self, Stream};

/// Points in the inverse-CDF grid of numerically specified radial laws.
pub const GRID_POINTS: usize = 1 << 14;
/// Allowed deviation of a numerically integrated density from 1.
pub const NORMALIZATION_TOL: f64 = 1e-6;
/// Orthogonality tolerance for rotation matrices.
pub const ORTHOGONAL_TOL: f64 = 1e-10;
/// Relative tail mass at which the `N`-mixture of the AR(1) tail process is cut.
pub const TRUNCATION_TOL: f64 = 1e-17;
/// Largest power tried when certifying power-contractivity.
pub const MAX_CONTRACTION_POWER: usize = 64;
/// Smallest acceptable acceptance rate of the rejection step for `Θ`.
pub const MIN_ACCEPTANCE: f64 = 1e-4;

const MOMENT_TOL: f64 = 1e-9;
const LOGNORMAL_SPAN: f64 = 12.0;

/// Piecewise-linear inverse CDF on a grid in `u = ln y`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridLaw {
    u: Vec<f64>,
    cdf: Vec<f64>,
}

impl GridLaw {
    /// Integrates `g(u) = f(e^u)·e^u` by the trapezoid rule on `points`
    /// equally spaced nodes of `[u_lo, u_hi]`. Returns the law and the raw
    /// integral of `f`.
    pub fn from_density<F: Fn(f64) -> f64>(
        f: F,
        u_lo: f64,
        u_hi: f64,
        points: usize,
    ) -> (Self, f64) {
        let h = (u_hi - u_lo) / (points - 1) as f64;
        let u: Vec<f64> = (0..points).map(|i| u_lo + h * i as f64).collect();
        let g: Vec<f64> = u.iter().map(|&v| f(v.exp()) * v.exp()).collect();
        let mut cdf = Vec::with_capacity(points);
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in g.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            cdf.push(acc);
        }
        let total = acc;
        if total > 0.0 {
            for c in &mut cdf {
                *c /= total;
            }
        }
        (Self { u, cdf }, total)
    }

    pub fn sample(&self, rng: &mut Stream) -> f64 {
        let v = rng::unit(rng);
        let k = self
            .cdf
            .partition_point(|&c| c <= v)
            .clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let frac = if c1 > c0 { (v - c0) / (c1 - c0) } else { 0.5 };
        (self.u[k - 1] + frac * (self.u[k] - self.u[k - 1])).exp()
    }

    /// Grid CDF at `y`.
    pub fn cdf(&self, y: f64) -> f64 {
        let v = y.ln();
        let k = self.u.partition_point(|&u| u <= v);
        if k == 0 {
            return 0.0;
        }
        if k == self.u.len() {
            return 1.0;
        }
        let frac = (v - self.u[k - 1]) / (self.u[k] - self.u[k - 1]);
        self.cdf[k - 1] + frac * (self.cdf[k] - self.cdf[k - 1])
    }
}

type Density1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Law of the radial factor `R` of a Kesten multiplier.
#[derive(Clone)]
pub enum RadialLaw {
    Degenerate {
        r: f64,
    },
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    /// Density `1/(y ln(hi/lo))` on `[lo, hi]`.
    LogUniform {
        lo: f64,
        hi: f64,
    },
    /// A density on `[lo, hi]` given pointwise, sampled from a grid.
    Custom {
        density: Density1,
        lo: f64,
        hi: f64,
        grid: Arc<GridLaw>,
    },
}

impl fmt::Debug for RadialLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Degenerate { r } => write!(f, "Degenerate({r})"),
            Self::LogNormal { mu, sigma } => write!(f, "LogNormal(mu = {mu}, sigma = {sigma})"),
            Self::LogUniform { lo, hi } => write!(f, "LogUniform[{lo}, {hi}]"),
            Self::Custom { lo, hi, .. } => write!(f, "Custom[{lo}, {hi}]"),
        }
    }
}

fn in_closed(y: f64, lo: f64, hi: f64) -> bool {
    y >= lo * (1.0 - 1e-12) && y <= hi * (1.0 + 1e-12)
}

impl RadialLaw {
    /// Lognormal with `μ = −ασ²/2`, so that `E[R^α] = 1`.
    pub fn lognormal_unit_moment(sigma: f64, alpha: TailIndex) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::DomainError(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self::LogNormal {
            mu: -alpha.value() * sigma * sigma / 2.0,
            sigma,
        })
    }

    /// Log-uniform on `[c·lo, c·hi]` with `c` chosen so that `E[R^α] = 1`.
    pub fn log_uniform_unit_moment(lo: f64, hi: f64, alpha: TailIndex) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::DomainError(format!(
                "need 0 < lo < hi, got [{lo}, {hi}]"
            )));
        }
        let m = Self::LogUniform { lo, hi }.moment(alpha.value());
        let c = m.powf(-1.0 / alpha.value());
        Ok(Self::LogUniform {
            lo: c * lo,
            hi: c * hi,
        })
    }

    /// A density supported on `[lo, hi]`; fails with `NotNormalized` if it does
    /// not integrate to 1.
    pub fn custom(
        density: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lo: f64,
        hi: f64,
    ) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::DomainError(format!(
                "need 0 < lo < hi, got [{lo}, {hi}]"
            )));
        }
        let density: Density1 = Arc::new(density);
        let f = density.clone();
        let (grid, integral) = GridLaw::from_density(move |y| f(y), lo.ln(), hi.ln(), GRID_POINTS);
        if (integral - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized { integral });
        }
        Ok(Self::Custom {
            density,
            lo,
            hi,
            grid: Arc::new(grid),
        })
    }

    /// Density at `y`; `None` for a point mass.
    pub fn density(&self, y: f64) -> Option<f64> {
        Some(match self {
            Self::Degenerate { .. } => return None,
            Self::LogNormal { mu, sigma } => {
                if y <= 0.0 {
                    0.0
                } else {
                    let z = (y.ln() - mu) / sigma;
                    (-0.5 * z * z).exp() / (y * sigma * (2.0 * std::f64::consts::PI).sqrt())
                }
            }
            Self::LogUniform { lo, hi } => {
                if in_closed(y, *lo, *hi) {
                    1.0 / (y * (hi / lo).ln())
                } else {
                    0.0
                }
            }
            Self::Custom {
                density, lo, hi, ..
            } => {
                if in_closed(y, *lo, *hi) {
                    density(y)
                } else {
                    0.0
                }
            }
        })
    }

    /// `E[R^p]`.
    pub fn moment(&self, p: f64) -> f64 {
        match self {
            Self::Degenerate { r } => r.powf(p),
            Self::LogNormal { mu, sigma } => (p * mu + 0.5 * p * p * sigma * sigma).exp(),
            Self::LogUniform { lo, hi } => {
                let l = (hi / lo).ln();
                if p == 0.0 {
                    1.0
                } else {
                    (hi.powf(p) - lo.powf(p)) / (p * l)
                }
            }
            Self::Custom {
                density, lo, hi, ..
            } => {
                let f = density.clone();
                GridLaw::from_density(move |y| f(y) * y.powf(p), lo.ln(), hi.ln(), GRID_POINTS).1
            }
        }
    }

    pub fn sample(&self, rng: &mut Stream) -> f64 {
        match self {
            Self::Degenerate { r } => *r,
            Self::LogNormal { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma * z).exp()
            }
            Self::LogUniform { lo, hi } => lo * (hi / lo).powf(rng::unit(rng)),
            Self::Custom { grid, .. } => grid.sample(rng),
        }
    }

    /// Range of `ln R` that carries the `R^α`-tilted law.
    fn tilted_log_range(&self, alpha: f64) -> (f64, f64) {
        match self {
            Self::Degenerate { r } => (r.ln(), r.ln()),
            Self::LogNormal { mu, sigma } => {
                let c = mu + alpha * sigma * sigma;
                (c - LOGNORMAL_SPAN * sigma, c + LOGNORMAL_SPAN * sigma)
            }
            Self::LogUniform { lo, hi } | Self::Custom { lo, hi, .. } => (lo.ln(), hi.ln()),
        }
    }
}

/// Law of the orthogonal factor `Q`.
#[derive(Debug, Clone, PartialEq)]
pub enum RotationLaw {
    /// Haar measure on the orthogonal group.
    Haar,
    Identity,
    Fixed(DMatrix<f64>),
}

pub fn is_orthogonal(q: &DMatrix<f64>) -> bool {
    let d = q.nrows();
    q.ncols() == d && (q.transpose() * q - DMatrix::identity(d, d)).amax() <= ORTHOGONAL_TOL
}

impl RotationLaw {
    pub fn sample(&self, d: usize, rng: &mut Stream) -> DMatrix<f64> {
        match self {
            Self::Identity => DMatrix::identity(d, d),
            Self::Fixed(q) => q.clone(),
            Self::Haar => haar(d, rng),
        }
    }
}

/// Haar-distributed orthogonal matrix: a uniform sign for d = 1, a uniform
/// angle with a fair reflection for d = 2, sign-corrected QR of a Gaussian
/// matrix beyond.
pub fn haar(d: usize, rng: &mut Stream) -> DMatrix<f64> {
    match d {
        1 => DMatrix::from_element(1, 1, if rng::unit(rng) < 0.5 { -1.0 } else { 1.0 }),
        2 => {
            let t = 2.0 * std::f64::consts::PI * rng::unit(rng);
            let (s, c) = t.sin_cos();
            if rng::unit(rng) < 0.5 {
                DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
            } else {
                DMatrix::from_row_slice(2, 2, &[c, s, s, -c])
            }
        }
        _ => {
            let g = DMatrix::from_fn(d, d, |_, _| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            });
            let qr = g.qr();
            let (mut q, r) = (qr.q(), qr.r());
            for j in 0..d {
                if r[(j, j)] < 0.0 {
                    q.column_mut(j).neg_mut();
                }
            }
            q
        }
    }
}

/// Law of the additive term `B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdditiveLaw {
    Zero,
    Gaussian { sd: f64 },
}

impl AdditiveLaw {
    fn sample(&self, d: usize, rng: &mut Stream) -> Vec<f64> {
        match self {
            Self::Zero => vec![0.0; d],
            Self::Gaussian { sd } => (0..d)
                .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect(),
        }
    }
}

fn mat_vec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (a * DVector::from_column_slice(x)).as_slice().to_vec()
}

/// The Kesten recurrence with orthogonal-multiplicative `A = R·Q`.
#[derive(Debug, Clone)]
pub struct KestenOrthogonalSpec {
    d: usize,
    alpha: TailIndex,
    radial: RadialLaw,
    rotation: RotationLaw,
    additive: AdditiveLaw,
    name: String,
}

impl KestenOrthogonalSpec {
    /// Checks `E[R^α] = 1` (closed form or quadrature) and the rotation law.
    pub fn new(
        d: usize,
        alpha: TailIndex,
        radial: RadialLaw,
        rotation: RotationLaw,
        additive: AdditiveLaw,
    ) -> Result<Self> {
        let m = radial.moment(alpha.value());
        if (m - 1.0).abs() > MOMENT_TOL {
            return Err(Error::DomainError(format!("E[R^alpha] = {m}, must be 1")));
        }
        Self::unchecked(d, alpha, radial, rotation, additive)
    }

    /// Skips the moment condition; for studying misspecified models.
    pub fn unchecked(
        d: usize,
        alpha: TailIndex,
        radial: RadialLaw,
        rotation: RotationLaw,
        additive: AdditiveLaw,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::DomainError("dimension must be >= 1".into()));
        }
        if let RotationLaw::Fixed(q) = &rotation {
            if q.nrows() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: q.nrows(),
                });
            }
            if !is_orthogonal(q) {
                return Err(Error::DomainError(
                    "fixed rotation is not orthogonal".into(),
                ));
            }
        }
        if let AdditiveLaw::Gaussian { sd } = additive {
            if !(sd >= 0.0 && sd.is_finite()) {
                return Err(Error::DomainError(format!(
                    "additive sd must be >= 0, got {sd}"
                )));
            }
        }
        Ok(Self {
            d,
            alpha,
            radial,
            rotation,
            additive,
            name: "kesten".into(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn radial(&self) -> &RadialLaw {
        &self.radial
    }

    pub fn rotation(&self) -> &RotationLaw {
        &self.rotation
    }

    /// Draws the multiplier `A = R·Q`.
    pub fn sample_multiplier(&self, rng: &mut Stream) -> DMatrix<f64> {
        let r = self.radial.sample(rng);
        self.rotation.sample(self.d, rng) * r
    }

    /// Monte Carlo estimate of `E[R^α]` with its 0.99 half-width.
    pub fn moment_check(&self, n: usize, rng: &mut Stream) -> Estimate {
        let a = self.alpha.value();
        let v: Vec<f64> = (0..n).map(|_| self.radial.sample(rng).powf(a)).collect();
        let (estimate, ci) = crate::diagnostics::mean_ci(&v, CI_LEVEL);
        Estimate { estimate, ci }
    }

    /// The backward increment `R*·Qᵀ` and the density of `R*`.
    pub fn backward_increment(&self) -> Result<KestenBackward> {
        kesten_backward_increment(self)
    }

    /// BFTC with `M_0` uniform, forward increment `R·Q`, backward `R*·Qᵀ`.
    pub fn bftc_spec(&self) -> Result<BftcSpec> {
        let back = Arc::new(self.backward_increment()?);
        let fwd = KestenForward(self.clone());
        BftcSpec::new(
            self.alpha,
            SpectralMeasure::uniform(self.d),
            TailKernel::analytic(fwd),
            TailKernel::Analytic(back),
        )
    }

    /// Draws from the adjoint of `ℒ(C, A·C)` for a general angle law of `C`,
    /// by importance resampling `n_pool` forward pairs. Returns `k` pairs and
    /// the estimated mass at `m = 0`.
    pub fn general_adjoint_sample(
        &self,
        c_law: &SpectralMeasure,
        n_pool: usize,
        k: usize,
        rng: &mut Stream,
    ) -> Result<(Vec<(Vec<f64>, Vec<f64>)>, f64)> {
        let mut pairs = Vec::with_capacity(n_pool);
        for _ in 0..n_pool {
            let c = c_law.sample(rng)?.into_inner();
            let m = mat_vec(&self.sample_multiplier(rng), &c);
            pairs.push((c, m));
        }
        adjoint_resample(&pairs, self.alpha, k, rng)
    }
}

impl Model for KestenOrthogonalSpec {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn alpha(&self) -> TailIndex {
        self.alpha
    }
    /// Layout: `A` row-major (`d²` values), then `B` (`d` values).
    fn sample_noise(&self, rng: &mut Stream) -> Vec<f64> {
        let a = self.sample_multiplier(rng);
        let mut e: Vec<f64> = a.transpose().as_slice().to_vec();
        e.extend(self.additive.sample(self.d, rng));
        e
    }
    fn transition(&self, x: &[f64], e: &[f64]) -> Vec<f64> {
        let d = self.d;
        (0..d)
            .map(|i| (0..d).map(|j| e[i * d + j] * x[j]).sum::<f64>() + e[d * d + i])
            .collect()
    }
    fn tail_map(&self, s: &[f64], e: &[f64]) -> Vec<f64> {
        let d = self.d;
        (0..d)
            .map(|i| (0..d).map(|j| e[i * d + j] * s[j]).sum())
            .collect()
    }
    fn declares_bounded_growth(&self) -> bool {
        true
    }
}

struct KestenForward(KestenOrthogonalSpec);

impl ConditionalSampler for KestenForward {
    fn dim(&self) -> usize {
        self.0.d
    }
    fn sample(&self, s: &UnitVector, rng: &mut Stream) -> Result<Vec<f64>> {
        Ok(mat_vec(&self.0.sample_multiplier(rng), s.coords()))
    }
}

/// The law of `R*`.
#[derive(Debug, Clone)]
pub enum RadialStar {
    PointMass(f64),
    Grid { law: GridLaw, integral: f64 },
}

/// Backward Kesten increment `A* = R*·Qᵀ`.
#[derive(Debug, Clone)]
pub struct KestenBackward {
    d: usize,
    alpha: f64,
    radial: RadialLaw,
    rotation: RotationLaw,
    star: RadialStar,
}

impl KestenBackward {
    /// `f_{R*}(y) = f_R(1/y)·y^{−(2+α)}`; `None` when `R*` is a point mass.
    pub fn density(&self, y: f64) -> Option<f64> {
        if y <= 0.0 {
            return Some(0.0);
        }
        self.radial
            .density(1.0 / y)
            .map(|f| f * y.powf(-(2.0 + self.alpha)))
    }

    /// Closed-form CDF of `R*`, `F*(y) = E[R^α 1{R ≥ 1/y}]`, where available.
    pub fn analytic_cdf(&self, y: f64) -> Option<f64> {
        if y <= 0.0 {
            return Some(0.0);
        }
        let a = self.alpha;
        match &self.radial {
            RadialLaw::Degenerate { r } => Some(if y * r >= 1.0 { 1.0 } else { 0.0 }),
            RadialLaw::LogNormal { mu, sigma } => {
                let z = (-y.ln() - mu - a * sigma * sigma) / sigma;
                Some(1.0 - Normal::new(0.0, 1.0).ok()?.cdf(z))
            }
            RadialLaw::LogUniform { lo, hi } => {
                let l = (hi / lo).ln();
                Some(((hi.powf(a) - lo.max(1.0 / y).powf(a)) / (a * l)).clamp(0.0, 1.0))
            }
            RadialLaw::Custom { .. } => None,
        }
    }

    pub fn radial_star(&self) -> &RadialStar {
        &self.star
    }

    pub fn sample_radial(&self, rng: &mut Stream) -> f64 {
        match &self.star {
            RadialStar::PointMass(r) => *r,
            RadialStar::Grid { law, .. } => law.sample(rng),
        }
    }

    pub fn sample_increment(&self, rng: &mut Stream) -> DMatrix<f64> {
        let r = self.sample_radial(rng);
        self.rotation.sample(self.d, rng).transpose() * r
    }
}

impl ConditionalSampler for KestenBackward {
    fn dim(&self) -> usize {
        self.d
    }
    fn sample(&self, s: &UnitVector, rng: &mut Stream) -> Result<Vec<f64>> {
        Ok(mat_vec(&self.sample_increment(rng), s.coords()))
    }
}

/// Density of `R*` and a sampler of `R*·Qᵀ`. `R*` is drawn by inverse CDF on
/// a [`GRID_POINTS`]-point log-spaced grid covering the `R^α`-tilted law of
/// `1/R`.
pub fn kesten_backward_increment(spec: &KestenOrthogonalSpec) -> Result<KestenBackward> {
    let alpha = spec.alpha.value();
    let star = match &spec.radial {
        RadialLaw::Degenerate { r } => RadialStar::PointMass(1.0 / r),
        radial => {
            let (lo, hi) = radial.tilted_log_range(alpha);
            let law = radial.clone();
            let f = move |y: f64| law.density(1.0 / y).unwrap_or(0.0) * y.powf(-(2.0 + alpha));
            let (grid, integral) = GridLaw::from_density(f, -hi, -lo, GRID_POINTS);
            if (integral - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::NotNormalized { integral });
            }
            RadialStar::Grid {
                law: grid,
                integral,
            }
        }
    };
    Ok(KestenBackward {
        d: spec.d,
        alpha,
        radial: spec.radial.clone(),
        rotation: spec.rotation.clone(),
        star,
    })
}

/// Per-function gaps `|E[f(AC/‖AC‖)‖AC‖^α] − E[f(C)]|` for uniform `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointGap {
    pub names: Vec<String>,
    pub gaps: Vec<f64>,
    /// 0.99 half-widths of the difference of the two estimates.
    pub cis: Vec<f64>,
    pub max_gap: f64,
    /// Some gap exceeds its half-width.
    pub flagged: bool,
}

/// Fixed-point check of the uniform spectral law under the Kesten multiplier,
/// over a battery of coordinate polynomials (including `f ≡ 1`).
pub fn kesten_spectral_fixedpoint_gap(
    spec: &KestenOrthogonalSpec,
    n: usize,
    rng: &mut Stream,
) -> Result<FixedPointGap> {
    if n < 1000 {
        return Err(Error::InvalidArgument(format!("need n >= 1000, got {n}")));
    }
    let d = spec.d;
    let last = d - 1;
    let battery: Vec<(&str, Box<dyn Fn(&[f64]) -> f64>)> = vec![
        ("one", Box::new(|_| 1.0)),
        ("c1", Box::new(|c| c[0])),
        ("c1^2", Box::new(|c| c[0] * c[0])),
        ("c1*cd", Box::new(move |c| c[0] * c[last])),
        ("c1^3", Box::new(|c| c[0].powi(3))),
    ];
    let a = spec.alpha.value();
    let k = battery.len();
    let (mut lhs, mut rhs) = (
        vec![Vec::with_capacity(n); k],
        vec![Vec::with_capacity(n); k],
    );
    for _ in 0..n {
        let c = uniform_sphere(d, rng);
        let ac = mat_vec(&spec.sample_multiplier(rng), c.coords());
        let r = norm(&ac);
        let c2 = uniform_sphere(d, rng);
        for (j, (_, f)) in battery.iter().enumerate() {
            let l = if r > 0.0 {
                f(&ac.iter().map(|v| v / r).collect::<Vec<_>>()) * r.powf(a)
            } else {
                0.0
            };
            lhs[j].push(l);
            rhs[j].push(f(c2.coords()));
        }
    }
    let z = z_quantile(CI_LEVEL);
    let mut gaps = Vec::with_capacity(k);
    let mut cis = Vec::with_capacity(k);
    for j in 0..k {
        let (ml, hl) = crate::diagnostics::mean_ci(&lhs[j], CI_LEVEL);
        let (mr, hr) = crate::diagnostics::mean_ci(&rhs[j], CI_LEVEL);
        gaps.push((ml - mr).abs());
        // combine the standard errors, not the half-widths
        cis.push(z * ((hl / z).powi(2) + (hr / z).powi(2)).sqrt());
    }
    let max_gap = gaps.iter().cloned().fold(0.0, f64::max);
    let flagged = gaps.iter().zip(&cis).any(|(g, c)| g > c);
    Ok(FixedPointGap {
        names: battery.iter().map(|(n, _)| n.to_string()).collect(),
        gaps,
        cis,
        max_gap,
        flagged,
    })
}

/// How the AR(1) innovations are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Innovation {
    /// `B = P·Θ` with `P` Pareto(α) and `Θ ~ λ`.
    Pareto,
    /// `B ≡ 0`; λ still defines the tail objects.
    Zero,
}

/// AR(1) recursion `X_t = A X_{t-1} + B_t` with regularly varying innovations.
#[derive(Debug, Clone)]
pub struct Ar1Spec {
    d: usize,
    a: DMatrix<f64>,
    lambda: SpectralMeasure,
    alpha: TailIndex,
    innovation: Innovation,
    contraction_power: usize,
    name: String,
}

/// `‖A‖₂`, the largest singular value.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    a.clone().svd(false, false).singular_values.max()
}

impl Ar1Spec {
    pub fn new(a: DMatrix<f64>, lambda: SpectralMeasure, alpha: TailIndex) -> Result<Self> {
        Self::with_innovation(a, lambda, alpha, Innovation::Pareto)
    }

    /// Scalar AR(1) with λ the symmetric sign law.
    pub fn scalar(a: f64, alpha: TailIndex) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            SpectralMeasure::symmetric_signs(),
            alpha,
        )
    }

    pub fn with_innovation(
        a: DMatrix<f64>,
        lambda: SpectralMeasure,
        alpha: TailIndex,
        innovation: Innovation,
    ) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || a.ncols() != d {
            return Err(Error::DomainError(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if lambda.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: lambda.dim(),
            });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainError("A has non-finite entries".into()));
        }
        let mut power = a.clone();
        let mut contraction_power = None;
        for m in 1..=MAX_CONTRACTION_POWER {
            if operator_norm(&power) < 1.0 {
                contraction_power = Some(m);
                break;
            }
            power = &power * &a;
        }
        let contraction_power = contraction_power.ok_or(Error::NoContraction)?;
        Ok(Self {
            d,
            a,
            lambda,
            alpha,
            innovation,
            contraction_power,
            name: "ar1".into(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn lambda(&self) -> &SpectralMeasure {
        &self.lambda
    }

    /// Smallest `m ≤ 64` with `‖A^m‖₂ < 1`.
    pub fn contraction_power(&self) -> usize {
        self.contraction_power
    }

    pub fn tail_decomposition(&self) -> Result<Ar1TailDecomposition> {
        ar1_tail_decomposition(self)
    }

    /// BFTC with `M_0 ~ Υ`, forward `x ↦ A x` and the backward kernel that
    /// dies with probability `q(x/‖x‖)` and otherwise moves to `A⁻¹ x`.
    pub fn bftc_spec(&self) -> Result<BftcSpec> {
        let decomposition = Arc::new(self.tail_decomposition()?);
        let backward = Ar1Backward::new(self.clone(), decomposition.clone())?;
        BftcSpec::new(
            self.alpha,
            self.spectral_measure(decomposition)?,
            TailKernel::analytic(Ar1Forward(self.a.clone())),
            TailKernel::analytic(backward),
        )
    }

    /// Υ: atomic when λ is atomic in dimension one, a sampler otherwise.
    pub fn spectral_measure(
        &self,
        decomposition: Arc<Ar1TailDecomposition>,
    ) -> Result<SpectralMeasure> {
        if let (1, Some(atoms)) = (self.d, self.lambda.atoms()) {
            let sum_c = decomposition.sum_c;
            let mut out = Vec::new();
            for u in [-1.0, 1.0] {
                if atoms.iter().all(|(v, _)| v.coords()[0] != u) && self.a[(0, 0)] >= 0.0 {
                    continue;
                }
                let w = atomic_pushed_mass(self, &decomposition, &[u]) / sum_c;
                if w > 0.0 {
                    out.push((UnitVector::new(vec![u])?, w));
                }
            }
            let total: f64 = out.iter().map(|(_, w)| w).sum();
            for (_, w) in &mut out {
                *w /= total;
            }
            return SpectralMeasure::atomic(out);
        }
        let spec = self.clone();
        Ok(SpectralMeasure::from_sampler(self.d, move |rng| {
            let sample =
                ar1_spectral_sampler(&spec, &decomposition, rng).expect("validated decomposition");
            UnitVector::from_nonzero(&sample.m0(&spec)).expect("M_0 is a unit vector")
        }))
    }
}

impl Model for Ar1Spec {
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
        match self.innovation {
            Innovation::Zero => vec![0.0; self.d],
            Innovation::Pareto => {
                let p = pareto(self.alpha, rng);
                let theta = self.lambda.sample(rng).expect("innovation angle law");
                theta.scale(p)
            }
        }
    }
    fn transition(&self, x: &[f64], e: &[f64]) -> Vec<f64> {
        mat_vec(&self.a, x)
            .iter()
            .zip(e)
            .map(|(a, b)| a + b)
            .collect()
    }
    fn tail_map(&self, s: &[f64], _e: &[f64]) -> Vec<f64> {
        mat_vec(&self.a, s)
    }
    fn burn_in(&self) -> usize {
        1000
    }
    fn declares_bounded_growth(&self) -> bool {
        true
    }
    fn advance(&self, x: &mut Vec<f64>, rng: &mut Stream) {
        if self.d == 1 {
            let e = self.sample_noise(rng);
            x[0] = self.a[(0, 0)] * x[0] + e[0];
        } else {
            let e = self.sample_noise(rng);
            *x = self.transition(x, &e);
        }
    }
}

struct Ar1Forward(DMatrix<f64>);

impl ConditionalSampler for Ar1Forward {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn sample(&self, s: &UnitVector, _rng: &mut Stream) -> Result<Vec<f64>> {
        Ok(mat_vec(&self.0, s.coords()))
    }
}

/// Backward AR(1) kernel: 0 with probability `q(s)`, else `A⁻¹ s`.
struct Ar1Backward {
    spec: Ar1Spec,
    decomposition: Arc<Ar1TailDecomposition>,
    inverse: Option<DMatrix<f64>>,
}

impl Ar1Backward {
    fn new(spec: Ar1Spec, decomposition: Arc<Ar1TailDecomposition>) -> Result<Self> {
        let inverse = spec.a.clone().try_inverse();
        if inverse.is_none() && spec.a.amax() != 0.0 {
            return Err(Error::DomainError(
                "backward kernel needs an invertible A (or A = 0)".into(),
            ));
        }
        Ok(Self {
            spec,
            decomposition,
            inverse,
        })
    }
}

impl ConditionalSampler for Ar1Backward {
    fn dim(&self) -> usize {
        self.spec.d
    }
    fn sample(&self, s: &UnitVector, rng: &mut Stream) -> Result<Vec<f64>> {
        let q = ar1_backward_zero_prob(&self.spec, &self.decomposition, s)?;
        match &self.inverse {
            Some(inv) if rng::unit(rng) >= q => Ok(mat_vec(inv, s.coords())),
            _ => Ok(vec![0.0; self.spec.d]),
        }
    }
}

/// The mixture weights of the AR(1) tail process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1TailDecomposition {
    /// `c_n = ∫‖A^n θ‖^α λ(dθ)` for `n = 0..=n_max`.
    pub c: Vec<f64>,
    /// `p_n = c_n / Σ_k c_k`.
    pub p: Vec<f64>,
    pub sum_c: f64,
    pub n_max: usize,
    /// Bound on the neglected tail mass relative to `sum_c`.
    pub remainder: f64,
    /// `‖A^n‖₂^α` for `n = 0..=n_max`.
    pub op_norm_alpha: Vec<f64>,
}

/// λ as weighted nodes: its atoms, a quadrature rule for densities, or a
/// fixed-seed Monte Carlo cloud for samplers.
fn lambda_nodes(lambda: &SpectralMeasure) -> Result<Vec<(Vec<f64>, f64)>> {
    let d = lambda.dim();
    Ok(match lambda {
        SpectralMeasure::Atomic { atoms, .. } => atoms
            .iter()
            .map(|(u, w)| (u.coords().to_vec(), *w))
            .collect(),
        SpectralMeasure::Uniform { .. } | SpectralMeasure::Density { .. } => {
            let raw: Vec<(Vec<f64>, f64)> = sphere_quadrature(d)
                .into_iter()
                .map(|(u, w)| {
                    let f = lambda.density_at(&u).unwrap_or(0.0);
                    (u, w * f)
                })
                .collect();
            let total: f64 = raw.iter().map(|(_, w)| w).sum();
            raw.into_iter().map(|(u, w)| (u, w / total)).collect()
        }
        SpectralMeasure::Sampler { .. } => {
            let mut r = rng::master(0x1a3bda);
            let k = 20_000;
            (0..k)
                .map(|_| Ok((lambda.sample(&mut r)?.into_inner(), 1.0 / k as f64)))
                .collect::<Result<_>>()?
        }
    })
}

/// Computes `c_n` and `p_n`, truncating when the geometric tail bound
/// `m·K^α·ρ^{α⌊(N+1)/m⌋}/(1 − ρ^α)` drops below [`TRUNCATION_TOL`]`·Σc`, where
/// `ρ = ‖A^m‖₂ < 1` and `K = max_{j<m} ‖A^j‖₂`.
pub fn ar1_tail_decomposition(spec: &Ar1Spec) -> Result<Ar1TailDecomposition> {
    let alpha = spec.alpha.value();
    let m = spec.contraction_power;
    let mut power = DMatrix::identity(spec.d, spec.d);
    let mut k_max: f64 = 0.0;
    for _ in 0..m {
        k_max = k_max.max(operator_norm(&power));
        power = &power * &spec.a;
    }
    let rho_a = operator_norm(&power).powf(alpha);
    let k_a = k_max.powf(alpha);
    let mut nodes = lambda_nodes(&spec.lambda)?;
    let mut power = DMatrix::identity(spec.d, spec.d);
    let (mut c, mut op_norm_alpha) = (Vec::new(), Vec::new());
    let mut sum_c = 0.0;
    const MAX_TERMS: usize = 1_000_000;
    for n in 0..MAX_TERMS {
        let cn: f64 = nodes.iter().map(|(v, w)| w * norm(v).powf(alpha)).sum();
        c.push(cn);
        op_norm_alpha.push(operator_norm(&power).powf(alpha));
        sum_c += cn;
        let q0 = ((n + 1) / m) as i32;
        let bound = m as f64 * k_a * rho_a.powi(q0) / (1.0 - rho_a);
        if bound <= TRUNCATION_TOL * sum_c {
            let p = c.iter().map(|v| v / sum_c).collect();
            return Ok(Ar1TailDecomposition {
                c,
                p,
                sum_c,
                n_max: n,
                remainder: bound / sum_c,
                op_norm_alpha,
            });
        }
        for (v, _) in &mut nodes {
            *v = mat_vec(&spec.a, v);
        }
        power = &power * &spec.a;
    }
    Err(Error::NoContraction)
}

/// A draw of `(N, Θ)`; the tail process is `M_{-N+t} = A^t Θ` for `t ≥ 0`
/// and 0 before time `-N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1SpectralSample {
    pub n: usize,
    pub theta: Vec<f64>,
}

impl Ar1SpectralSample {
    /// `M_k` for any integer time `k`.
    pub fn value_at(&self, spec: &Ar1Spec, k: isize) -> Vec<f64> {
        let shift = k + self.n as isize;
        if shift < 0 {
            return vec![0.0; spec.d];
        }
        let mut v = self.theta.clone();
        for _ in 0..shift {
            v = mat_vec(&spec.a, &v);
        }
        v
    }

    pub fn m0(&self, spec: &Ar1Spec) -> Vec<f64> {
        self.value_at(spec, 0)
    }

    /// The path `M_{-s}, …, M_t`.
    pub fn path(&self, spec: &Ar1Spec, s: usize, t: usize) -> TailChainPath {
        let values: Vec<Vec<f64>> = (-(s as isize)..=t as isize)
            .map(|k| self.value_at(spec, k))
            .collect();
        let zero = |v: &Vec<f64>| v.iter().all(|x| *x == 0.0);
        let absorbed_back = (1..=s).find(|&k| zero(&values[s - k]));
        let absorbed_fwd = (1..=t).find(|&k| zero(&values[s + k]));
        TailChainPath {
            s,
            t,
            values,
            absorbed_back,
            absorbed_fwd,
        }
    }
}

/// Draws `N` with probabilities `p_n`, then `Θ` from
/// `Pr(Θ ∈ E | N = n) = c_n⁻¹ ∫ 1_E(s/‖A^n s‖) ‖A^n s‖^α λ(ds)`: exactly for
/// atomic λ, by rejection otherwise.
pub fn ar1_spectral_sampler(
    spec: &Ar1Spec,
    dec: &Ar1TailDecomposition,
    rng: &mut Stream,
) -> Result<Ar1SpectralSample> {
    let alpha = spec.alpha.value();
    let u = rng::unit(rng);
    let mut acc = 0.0;
    let mut n = dec.n_max;
    for (k, p) in dec.p.iter().enumerate() {
        acc += p;
        if u < acc {
            n = k;
            break;
        }
    }
    while dec.p[n] == 0.0 && n > 0 {
        n -= 1;
    }
    let mut an = DMatrix::identity(spec.d, spec.d);
    for _ in 0..n {
        an = &an * &spec.a;
    }
    let push = |s: &[f64]| -> (Vec<f64>, f64) {
        let v = mat_vec(&an, s);
        let r = norm(&v);
        (v, r)
    };
    if let Some(atoms) = spec.lambda.atoms() {
        let weights: Vec<f64> = atoms
            .iter()
            .map(|(s, w)| w * push(s.coords()).1.powf(alpha))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut v = rng::unit(rng) * total;
        let mut pick = atoms.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if v < *w {
                pick = i;
                break;
            }
            v -= w;
        }
        while weights[pick] == 0.0 {
            pick -= 1;
        }
        let s = atoms[pick].0.coords();
        let r = push(s).1;
        return Ok(Ar1SpectralSample {
            n,
            theta: s.iter().map(|x| x / r).collect(),
        });
    }
    let rate = dec.c[n] / dec.op_norm_alpha[n];
    if rate < MIN_ACCEPTANCE {
        return Err(Error::RejectionStall { rate });
    }
    loop {
        let s = spec.lambda.sample(rng)?;
        let r = push(s.coords()).1;
        if rng::unit(rng) * dec.op_norm_alpha[n] < r.powf(alpha) {
            return Ok(Ar1SpectralSample {
                n,
                theta: s.coords().iter().map(|x| x / r).collect(),
            });
        }
    }
}

/// `Σ_n Σ_r λ(r)‖A^n r‖^α 1{A^n r/‖A^n r‖ = u}` for atomic λ; equals `Σc·Υ({u})`.
fn atomic_pushed_mass(spec: &Ar1Spec, dec: &Ar1TailDecomposition, u: &[f64]) -> f64 {
    let alpha = spec.alpha.value();
    let atoms = spec.lambda.atoms().expect("atomic lambda");
    let mut total = 0.0;
    for (r, w) in atoms {
        let mut v = r.coords().to_vec();
        for _ in 0..=dec.n_max {
            let len = norm(&v);
            if len == 0.0 {
                break;
            }
            let dir: Vec<f64> = v.iter().map(|x| x / len).collect();
            if distance(&dir, u) <= ANGLE_MATCH_TOL {
                total += w * len.powf(alpha);
            }
            v = mat_vec(&spec.a, &v);
        }
    }
    total
}

/// `Pr(M_{-1} = 0 | M_0 = s) = f_λ(s) / (Σ_k c_k · f_Υ(s))`, with point masses
/// in place of densities when λ is atomic.
///
/// For λ with a density and invertible `A`, `Σc·f_Υ(u) = Σ_n f_λ(v_n) |det A|^{-n}
/// ‖A^{-n}u‖^{-(d+α)}` with `v_n = A^{-n}u/‖A^{-n}u‖`.
pub fn ar1_backward_zero_prob(
    spec: &Ar1Spec,
    dec: &Ar1TailDecomposition,
    s: &UnitVector,
) -> Result<f64> {
    let u = s.coords();
    match &spec.lambda {
        SpectralMeasure::Atomic { .. } => {
            let f_lambda = spec.lambda.mass_at(u).unwrap_or(0.0);
            let denom = atomic_pushed_mass(spec, dec, u);
            if denom == 0.0 {
                return Err(Error::UnsupportedAngle(u.to_vec()));
            }
            Ok((f_lambda / denom).min(1.0))
        }
        SpectralMeasure::Uniform { .. } | SpectralMeasure::Density { .. } => {
            let f_lambda = spec.lambda.density_at(u).unwrap_or(0.0);
            if spec.a.amax() == 0.0 {
                return if f_lambda > 0.0 {
                    Ok(1.0)
                } else {
                    Err(Error::UnsupportedAngle(u.to_vec()))
                };
            }
            let inv =
                spec.a.clone().try_inverse().ok_or_else(|| {
                    Error::DomainError("density form needs an invertible A".into())
                })?;
            let det = spec.a.determinant().abs();
            let (d, alpha) = (spec.d as f64, spec.alpha.value());
            let mut v = u.to_vec();
            let mut denom = 0.0;
            for n in 0..=dec.n_max {
                let len = norm(&v);
                let dir: Vec<f64> = v.iter().map(|x| x / len).collect();
                let f = spec.lambda.density_at(&dir).unwrap_or(0.0);
                denom += f * det.powi(-(n as i32)) * len.powf(-(d + alpha));
                v = mat_vec(&inv, &v);
            }
            if !(denom > 0.0) {
                return Err(Error::UnsupportedAngle(u.to_vec()));
            }
            Ok((f_lambda / denom).min(1.0))
        }
        SpectralMeasure::Sampler { .. } => Err(Error::DomainError(
            "extinction probability needs an atomic or density lambda".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// JSON model specifications

/// A scalar or a square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereAtomSpec {
    pub s: Vec<f64>,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InnovationSpec {
    /// Pareto radius with λ the sign law (d = 1) or uniform (d > 1).
    #[default]
    ParetoSymmetric,
    /// Pareto radius with an atomic λ.
    ParetoAtomic {
        atoms: Vec<SphereAtomSpec>,
    },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RadialSpec {
    /// `mu` defaults to `−α σ²/2`.
    Lognormal {
        sigma: f64,
        #[serde(default)]
        mu: Option<f64>,
    },
    /// With `normalize` the support is rescaled so that `E[R^α] = 1`.
    LogUniform {
        lo: f64,
        hi: f64,
        #[serde(default)]
        normalize: bool,
    },
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RotationSpec {
    #[default]
    Haar,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AdditiveSpec {
    #[default]
    Zero,
    Gaussian {
        sd: f64,
    },
}

/// A model description as stored in JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Ar1 {
        d: usize,
        alpha: f64,
        a: MatrixSpec,
        #[serde(default)]
        innovation: InnovationSpec,
    },
    Kesten {
        d: usize,
        alpha: f64,
        radial: RadialSpec,
        #[serde(default)]
        rotation: RotationSpec,
        #[serde(default)]
        additive: AdditiveSpec,
    },
}

/// A constructed built-in model.
#[derive(Debug, Clone)]
pub enum BuiltModel {
    Ar1(Ar1Spec),
    Kesten(KestenOrthogonalSpec),
}

impl BuiltModel {
    pub fn as_model(&self) -> Arc<dyn Model> {
        match self {
            Self::Ar1(m) => Arc::new(m.clone()),
            Self::Kesten(m) => Arc::new(m.clone()),
        }
    }

    pub fn bftc_spec(&self) -> Result<BftcSpec> {
        match self {
            Self::Ar1(m) => m.bftc_spec(),
            Self::Kesten(m) => m.bftc_spec(),
        }
    }

    pub fn alpha(&self) -> TailIndex {
        match self {
            Self::Ar1(m) => m.alpha,
            Self::Kesten(m) => m.alpha,
        }
    }
}

impl ModelConfig {
    /// Names accepted by [`ModelConfig::builtin`].
    pub const BUILTIN_NAMES: [&'static str; 2] = ["ar1-d1", "kesten-lognormal"];

    /// `ar1-d1`: scalar AR(1), `a = 0.5`, α = 1, symmetric Pareto innovations.
    /// `kesten-lognormal`: d = 2, α = 1, lognormal `R` with σ = 0.5, Haar `Q`,
    /// standard Gaussian `B`.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "ar1-d1" => Some(Self::Ar1 {
                d: 1,
                alpha: 1.0,
                a: MatrixSpec::Scalar(0.5),
                innovation: InnovationSpec::ParetoSymmetric,
            }),
            "kesten-lognormal" => Some(Self::Kesten {
                d: 2,
                alpha: 1.0,
                radial: RadialSpec::Lognormal {
                    sigma: 0.5,
                    mu: None,
                },
                rotation: RotationSpec::Haar,
                additive: AdditiveSpec::Gaussian { sd: 1.0 },
            }),
            _ => None,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Ar1 { d, .. } | Self::Kesten { d, .. } => *d,
        }
    }

    pub fn build(&self) -> Result<BuiltModel> {
        match self {
            Self::Ar1 {
                d,
                alpha,
                a,
                innovation,
            } => {
                let alpha = TailIndex::new(*alpha)?;
                let a = match a {
                    MatrixSpec::Scalar(v) => DMatrix::from_diagonal_element(*d, *d, *v),
                    MatrixSpec::Matrix(rows) => {
                        if rows.len() != *d || rows.iter().any(|r| r.len() != *d) {
                            return Err(Error::DomainError(format!("a must be {d}x{d}")));
                        }
                        DMatrix::from_row_slice(*d, *d, &rows.concat())
                    }
                };
                let default_lambda = if *d == 1 {
                    SpectralMeasure::symmetric_signs()
                } else {
                    SpectralMeasure::uniform(*d)
                };
                let (lambda, kind) = match innovation {
                    InnovationSpec::ParetoSymmetric => (default_lambda, Innovation::Pareto),
                    InnovationSpec::Zero => (default_lambda, Innovation::Zero),
                    InnovationSpec::ParetoAtomic { atoms } => {
                        let atoms = atoms
                            .iter()
                            .map(|a| Ok((UnitVector::new(a.s.clone())?, a.w)))
                            .collect::<Result<Vec<_>>>()?;
                        (SpectralMeasure::atomic(atoms)?, Innovation::Pareto)
                    }
                };
                Ok(BuiltModel::Ar1(Ar1Spec::with_innovation(
                    a, lambda, alpha, kind,
                )?))
            }
            Self::Kesten {
                d,
                alpha,
                radial,
                rotation,
                additive,
            } => {
                let alpha = TailIndex::new(*alpha)?;
                let radial = match radial {
                    RadialSpec::Lognormal { sigma, mu: None } => {
                        RadialLaw::lognormal_unit_moment(*sigma, alpha)?
                    }
                    RadialSpec::Lognormal {
                        sigma,
                        mu: Some(mu),
                    } => RadialLaw::LogNormal {
                        mu: *mu,
                        sigma: *sigma,
                    },
                    RadialSpec::LogUniform {
                        lo,
                        hi,
                        normalize: true,
                    } => RadialLaw::log_uniform_unit_moment(*lo, *hi, alpha)?,
                    RadialSpec::LogUniform {
                        lo,
                        hi,
                        normalize: false,
                    } => RadialLaw::LogUniform { lo: *lo, hi: *hi },
                    RadialSpec::Degenerate => RadialLaw::Degenerate { r: 1.0 },
                };
                let rotation = match rotation {
                    RotationSpec::Haar => RotationLaw::Haar,
                    RotationSpec::Identity => RotationLaw::Identity,
                };
                let additive = match additive {
                    AdditiveSpec::Zero => AdditiveLaw::Zero,
                    AdditiveSpec::Gaussian { sd } => AdditiveLaw::Gaussian { sd: *sd },
                };
                Ok(BuiltModel::Kesten(KestenOrthogonalSpec::new(
                    *d, alpha, radial, rotation, additive,
                )?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{one_step_pairs, sample_bftc};
    use crate::diagnostics::{binomial_ci, energy_permutation_test, ks_one_sample, ks_two_sample};

    fn alpha(a: f64) -> TailIndex {
        TailIndex::new(a).unwrap()
    }

    fn unit(v: &[f64]) -> UnitVector {
        UnitVector::new(v.to_vec()).unwrap()
    }

    fn kesten(d: usize, radial: RadialLaw, rotation: RotationLaw) -> KestenOrthogonalSpec {
        KestenOrthogonalSpec::new(d, alpha(1.0), radial, rotation, AdditiveLaw::Zero).unwrap()
    }

    #[test]
    fn geometric_decomposition_alpha_one() {
        let spec = Ar1Spec::scalar(0.5, alpha(1.0)).unwrap();
        let dec = spec.tail_decomposition().unwrap();
        assert_eq!(dec.sum_c, 2.0);
        for (n, p) in dec.p.iter().enumerate() {
            assert_eq!(*p, 0.5f64.powi(n as i32 + 1));
            assert_eq!(dec.c[n], 0.5f64.powi(n as i32));
        }
        assert!(dec.remainder < 1e-10);
    }

    #[test]
    fn geometric_decomposition_alpha_two() {
        let spec = Ar1Spec::scalar(0.5, alpha(2.0)).unwrap();
        let dec = spec.tail_decomposition().unwrap();
        assert!((dec.p[0] - 0.75).abs() < 1e-15);
        assert!((dec.sum_c - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_matrix_decomposition() {
        let spec = Ar1Spec::scalar(0.0, alpha(1.0)).unwrap();
        let dec = spec.tail_decomposition().unwrap();
        assert_eq!(dec.p, vec![1.0]);
        let mut r = rng::master(1);
        for _ in 0..100 {
            let s = ar1_spectral_sampler(&spec, &dec, &mut r).unwrap();
            assert_eq!(s.n, 0);
            let p = s.path(&spec, 2, 3);
            assert!(p.values[3..].iter().all(|v| v[0] == 0.0));
            assert_eq!(norm(p.m0()), 1.0);
        }
        assert_eq!(
            ar1_backward_zero_prob(&spec, &dec, &unit(&[1.0])).unwrap(),
            1.0
        );
    }

    #[test]
    fn non_contractive_matrix_rejected() {
        let err = Ar1Spec::scalar(1.0, alpha(1.0)).unwrap_err();
        assert_eq!(err, Error::NoContraction);
        // nilpotent-looking but contractive only at a higher power
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 3.0, 0.0, 0.5]);
        let spec = Ar1Spec::new(a, SpectralMeasure::uniform(2), alpha(1.0)).unwrap();
        assert!(spec.contraction_power() > 1);
    }

    #[test]
    fn theta_given_n() {
        let spec = Ar1Spec::scalar(0.5, alpha(1.0)).unwrap();
        let dec = spec.tail_decomposition().unwrap();
        let mut r = rng::master(2);
        let (mut plus, mut ones) = (0, 0);
        for _ in 0..20_000 {
            let s = ar1_spectral_sampler(&spec, &dec, &mut r).unwrap();
            assert!((s.theta[0].abs() - 2f64.powi(s.n as i32)).abs() < 1e-12);
            assert!((norm(&s.m0(&spec)) - 1.0).abs() < 1e-10);
            if s.n == 1 {
                ones += 1;
                if s.theta[0] > 0.0 {
                    plus += 1;
                }
                let p = s.path(&spec, 2, 2);
                assert_eq!(p.at(-2), &[0.0]);
                assert_eq!(p.at(-1)[0].abs(), 2.0);
                assert_eq!(p.at(2)[0].abs(), 0.25);
            }
            if s.n == 0 {
                assert_eq!(s.theta[0].abs(), 1.0);
                assert_eq!(s.path(&spec, 1, 0).absorbed_back, Some(1));
            }
        }
        let (lo, hi) = binomial_ci(plus, ones, 0.999);
        assert!(lo < 0.5 && 0.5 < hi);
    }

    #[test]
    fn extinction_probabilities() {
        for (a, al, want) in [(0.5, 1.0, 0.5), (0.5, 2.0, 0.75), (0.99, 1.0, 0.01)] {
            let spec = Ar1Spec::scalar(a, alpha(al)).unwrap();
            let dec = spec.tail_decomposition().unwrap();
            for s in [1.0, -1.0] {
                let q = ar1_backward_zero_prob(&spec, &dec, &unit(&[s])).unwrap();
                assert!((q - want).abs() < 1e-12, "a={a} alpha={al}: {q}");
            }
        }
    }

    #[test]
    fn extinction_with_one_sided_lambda() {
        // λ = δ_{+1}, a = -0.5: Υ(+1) ∝ 1 + 1/4 + …, Υ(-1) ∝ 1/2 + 1/8 + …
        let lambda = SpectralMeasure::atomic(vec![(unit(&[1.0]), 1.0)]).unwrap();
        let spec = Ar1Spec::new(DMatrix::from_element(1, 1, -0.5), lambda, alpha(1.0)).unwrap();
        let dec = spec.tail_decomposition().unwrap();
        let q_plus = ar1_backward_zero_prob(&spec, &dec, &unit(&[1.0])).unwrap();
        assert!((q_plus - 0.75).abs() < 1e-12);
        assert_eq!(
            ar1_backward_zero_prob(&spec, &dec, &unit(&[-1.0])).unwrap(),
            0.0
        );
        let a2 = Ar1Spec::new(
            DMatrix::from_element(1, 1, 0.5),
            spec.lambda.clone(),
            alpha(1.0),
        )
        .unwrap();
        let dec2 = a2.tail_decomposition().unwrap();
        assert!(matches!(
            ar1_backward_zero_prob(&a2, &dec2, &unit(&[-1.0])),
            Err(Error::UnsupportedAngle(_))
        ));
    }

    #[test]
    fn density_extinction_matches_atomic_in_dimension_one() {
        let dens = Ar1Spec::new(
            DMatrix::from_element(1, 1, 0.5),
            SpectralMeasure::uniform(1),
            alpha(1.0),
        )
        .unwrap();
        let dec = dens.tail_decomposition().unwrap();
        let q = ar1_backward_zero_prob(&dens, &dec, &unit(&[1.0])).unwrap();
        assert!((q - 0.5).abs() < 1e-12);
    }

    #[test]
    fn density_extinction_isotropic_scaling() {
        // A = a·I in d = 2 with uniform λ: q = 1 − a^α everywhere
        let a = DMatrix::from_diagonal_element(2, 2, 0.6);
        let spec = Ar1Spec::new(a, SpectralMeasure::uniform(2), alpha(1.5)).unwrap();
        let dec = spec.tail_decomposition().unwrap();
        let q = ar1_backward_zero_prob(&spec, &dec, &unit(&[0.6, 0.8])).unwrap();
        assert!((q - (1.0 - 0.6f64.powf(1.5))).abs() < 1e-9, "{q}");
    }

    #[test]
    fn empirical_extinction_matches_p0() {
        let spec = Ar1Spec::scalar(0.5, alpha(1.0)).unwrap();
        let dec = spec.tail_decomposition().unwrap();
        let mut r = rng::master(3);
        let n = 20_000u64;
        let zeros = (0..n)
            .filter(|_| ar1_spectral_sampler(&spec, &dec, &mut r).unwrap().n == 0)
            .count() as u64;
        let (lo, hi) = binomial_ci(zeros, n, 0.99);
        assert!(lo <= 0.5 && 0.5 <= hi);
    }

    #[test]
    fn spectral_sampler_marginal_matches_upsilon_in_2d() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.3, -0.2, 0.4]);
        let lambda =
            SpectralMeasure::atomic(vec![(unit(&[1.0, 0.0]), 0.7), (unit(&[0.0, -1.0]), 0.3)])
                .unwrap();
        let spec = Ar1Spec::new(a, lambda, alpha(1.0)).unwrap();
        let dec = Arc::new(spec.tail_decomposition().unwrap());
        let upsilon = spec.spectral_measure(dec.clone()).unwrap();
        let mut r = rng::master(4);
        let x: Vec<Vec<f64>> = (0..1000)
            .map(|_| ar1_spectral_sampler(&spec, &dec, &mut r).unwrap().m0(&spec))
            .collect();
        // direct Υ = Σ p_n λ_n sampling as the oracle
        let y: Vec<Vec<f64>> = (0..1000)
            .map(|_| {
                let u = rng::unit(&mut r);
                let n = dec
                    .p
                    .iter()
                    .scan(0.0, |acc, p| {
                        *acc += p;
                        Some(*acc)
                    })
                    .position(|c| u < c)
                    .unwrap_or(dec.n_max);
                let atoms = spec.lambda.atoms().unwrap();
                let pushed: Vec<(Vec<f64>, f64)> = atoms
                    .iter()
                    .map(|(s, w)| {
                        let mut v = s.coords().to_vec();
                        for _ in 0..n {
                            v = mat_vec(&spec.a, &v);
                        }
                        let len = norm(&v);
                        (v.iter().map(|x| x / len).collect(), w * len)
                    })
                    .collect();
                let tot: f64 = pushed.iter().map(|p| p.1).sum();
                let mut v = rng::unit(&mut r) * tot;
                for (dir, w) in &pushed {
                    if v < *w {
                        return dir.clone();
                    }
                    v -= w;
                }
                pushed.last().unwrap().0.clone()
            })
            .collect();
        let res = energy_permutation_test(&x, &y, 299, &mut r).unwrap();
        assert!(res.p_value > 0.001, "{res:?}");
        let z: Vec<Vec<f64>> = (0..500)
            .map(|_| upsilon.sample(&mut r).unwrap().into_inner())
            .collect();
        assert!(z.iter().all(|v| (norm(v) - 1.0).abs() < 1e-10));
    }

    #[test]
    fn ar1_upsilon_atomic_in_dimension_one() {
        let spec = Ar1Spec::scalar(0.5, alpha(1.0)).unwrap();
        let dec = Arc::new(spec.tail_decomposition().unwrap());
        let ups = spec.spectral_measure(dec).unwrap();
        assert_eq!(ups.mass_at(&[1.0]), Some(0.5));
    }

    #[test]
    fn ar1_bftc_backward_step() {
        let spec = Ar1Spec::scalar(0.5, alpha(1.0))
            .unwrap()
            .bftc_spec()
            .unwrap();
        let mut r = rng::master(5);
        let n = 20_000u64;
        let mut zeros = 0;
        for _ in 0..n {
            let m = spec.backward().sample_at(&unit(&[1.0]), &mut r).unwrap();
            if m[0] == 0.0 {
                zeros += 1;
            } else {
                assert!((m[0] - 2.0).abs() < 1e-12);
            }
        }
        let (lo, hi) = binomial_ci(zeros, n, 0.999);
        assert!(lo <= 0.5 && 0.5 <= hi);
    }

    #[test]
    fn backward_kernel_determined_by_forward() {
        // analytic backward kernel vs the exact adjoint of the atomic forward law
        let ar = Ar1Spec::scalar(0.5, alpha(1.0)).unwrap();
        let analytic = ar.bftc_spec().unwrap();
        let atoms = analytic.m0_law().atoms().unwrap().to_vec();
        let fwd = crate::measures::AtomMeasure::canonicalize(
            1,
            atoms
                .iter()
                .map(|(u, w)| crate::measures::Atom::new(u.clone(), vec![0.5 * u.coords()[0]], *w))
                .collect(),
        )
        .unwrap();
        let k = crate::chain::kernel_from_atoms(&fwd).unwrap();
        let exact =
            BftcSpec::from_atomic_forward(alpha(1.0), &atoms, k.as_atomic().unwrap()).unwrap();
        let mut r = rng::master(6);
        let flat = |p: Vec<(Vec<f64>, Vec<f64>)>| {
            p.into_iter()
                .map(|(s, m)| vec![s[0], m[0]])
                .collect::<Vec<_>>()
        };
        let x = flat(one_step_pairs(analytic.m0_law(), analytic.backward(), 1200, &mut r).unwrap());
        let y = flat(one_step_pairs(exact.m0_law(), exact.backward(), 1200, &mut r).unwrap());
        let res = energy_permutation_test(&x, &y, 499, &mut r).unwrap();
        assert!(res.p_value > 0.001, "{res:?}");
    }

    #[test]
    fn lognormal_r_star_is_lognormal() {
        let spec = kesten(
            2,
            RadialLaw::lognormal_unit_moment(0.5, alpha(1.0)).unwrap(),
            RotationLaw::Haar,
        );
        let back = spec.backward_increment().unwrap();
        let RadialStar::Grid { integral, .. } = back.radial_star() else {
            panic!()
        };
        assert!((integral - 1.0).abs() < 1e-6);
        for y in [0.3, 0.9, 1.0, 1.7, 4.0] {
            let want = spec.radial().density(y).unwrap();
            assert!((back.density(y).unwrap() - want).abs() < 1e-12 * want.max(1.0));
        }
        let mut r = rng::master(7);
        let xs: Vec<f64> = (0..20_000).map(|_| back.sample_radial(&mut r)).collect();
        let normal = Normal::new(-0.125, 0.5).unwrap();
        assert!(ks_one_sample(&xs, |y| normal.cdf(y.ln())).p_value > 0.001);
        let ys: Vec<f64> = (0..20_000).map(|_| spec.radial().sample(&mut r)).collect();
        assert!(ks_two_sample(&xs, &ys).p_value > 0.001);
    }

    #[test]
    fn log_uniform_r_star_normalized() {
        let radial = RadialLaw::log_uniform_unit_moment(0.5, 2.0, alpha(1.0)).unwrap();
        assert!((radial.moment(1.0) - 1.0).abs() < 1e-12);
        let spec = kesten(1, radial.clone(), RotationLaw::Haar);
        let back = spec.backward_increment().unwrap();
        let RadialStar::Grid { integral, .. } = back.radial_star() else {
            panic!()
        };
        assert!((integral - 1.0).abs() < 1e-6, "{integral}");
        // oracle CDF: F*(y) = ∫_{max(lo,1/y)}^{hi} r^α f_R(r) dr
        let RadialLaw::LogUniform { lo, hi } = radial else {
            panic!()
        };
        let l = (hi / lo).ln();
        let cdf = |y: f64| ((hi - lo.max(1.0 / y)) / l).clamp(0.0, 1.0);
        let mut r = rng::master(8);
        let xs: Vec<f64> = (0..20_000).map(|_| back.sample_radial(&mut r)).collect();
        assert!(ks_one_sample(&xs, cdf).p_value > 0.001);
    }

    #[test]
    fn degenerate_radial_is_self_adjoint() {
        let spec = kesten(2, RadialLaw::Degenerate { r: 1.0 }, RotationLaw::Identity);
        let back = spec.backward_increment().unwrap();
        let mut r = rng::master(9);
        assert_eq!(back.sample_radial(&mut r), 1.0);
        assert!(back.density(1.0).is_none());
    }

    #[test]
    fn broken_custom_density_not_normalized() {
        let err = RadialLaw::custom(|_| 0.5, 0.5, 2.0).unwrap_err();
        assert!(matches!(err, Error::NotNormalized { .. }));
        let ok = RadialLaw::custom(|y| 1.0 / (y * 4f64.ln()), 0.5, 2.0).unwrap();
        assert!((ok.moment(0.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn moment_condition_enforced() {
        let bad = RadialLaw::LogNormal {
            mu: 0.0,
            sigma: 0.5,
        };
        assert!(KestenOrthogonalSpec::new(
            2,
            alpha(1.0),
            bad,
            RotationLaw::Haar,
            AdditiveLaw::Zero
        )
        .is_err());
        let spec = kesten(
            2,
            RadialLaw::lognormal_unit_moment(0.5, alpha(1.0)).unwrap(),
            RotationLaw::Haar,
        );
        let e = spec.moment_check(100_000, &mut rng::master(10));
        assert!((e.estimate - 1.0).abs() < e.ci);
    }

    #[test]
    fn haar_samples_are_orthogonal() {
        let mut r = rng::master(11);
        for d in 1..=4 {
            for _ in 0..200 {
                assert!(is_orthogonal(&haar(d, &mut r)));
            }
        }
    }

    #[test]
    fn fixed_point_gap_uniform_case() {
        let spec = kesten(3, RadialLaw::Degenerate { r: 1.0 }, RotationLaw::Haar);
        let g = kesten_spectral_fixedpoint_gap(&spec, 20_000, &mut rng::master(12)).unwrap();
        assert_eq!(g.gaps[0], 0.0);
        assert!(
            g.gaps
                .iter()
                .zip(&g.cis)
                .all(|(gap, ci)| gap <= &(1.5 * ci)),
            "{g:?}"
        );
    }

    #[test]
    fn fixed_point_gap_flags_broken_moment() {
        let radial = RadialLaw::LogNormal {
            mu: 1.2f64.ln() - 0.125,
            sigma: 0.5,
        };
        assert!((radial.moment(1.0) - 1.2).abs() < 1e-12);
        let spec = KestenOrthogonalSpec::unchecked(
            2,
            alpha(1.0),
            radial,
            RotationLaw::Haar,
            AdditiveLaw::Zero,
        )
        .unwrap();
        let g = kesten_spectral_fixedpoint_gap(&spec, 20_000, &mut rng::master(13)).unwrap();
        assert!((g.gaps[0] - 0.2).abs() < 0.02, "{}", g.gaps[0]);
        assert!(g.flagged);
        assert!(kesten_spectral_fixedpoint_gap(&spec, 10, &mut rng::master(13)).is_err());
    }

    #[test]
    fn kesten_paths_are_products() {
        let spec = kesten(2, RadialLaw::Degenerate { r: 1.0 }, RotationLaw::Identity)
            .bftc_spec()
            .unwrap();
        let mut r = rng::master(14);
        let p = sample_bftc(&spec, 3, 3, &mut r).unwrap();
        for k in -3..=3 {
            assert_eq!(p.at(k), p.m0());
        }
    }

    #[test]
    fn kesten_increments_iid() {
        let spec = kesten(
            2,
            RadialLaw::lognormal_unit_moment(0.5, alpha(1.0)).unwrap(),
            RotationLaw::Haar,
        );
        let bftc = spec.bftc_spec().unwrap();
        let mut r = rng::master(15);
        let (mut first, mut second) = (Vec::new(), Vec::new());
        for _ in 0..3000 {
            let p = sample_bftc(&bftc, 0, 2, &mut r).unwrap();
            first.push(norm(p.at(1)) / norm(p.at(0)));
            second.push(norm(p.at(2)) / norm(p.at(1)));
        }
        assert!(ks_two_sample(&first, &second).p_value > 0.001);
        // independence: joint pairs vs pairs with the second coordinate shuffled
        let joint: Vec<Vec<f64>> = first
            .iter()
            .zip(&second)
            .map(|(a, b)| vec![a.ln(), b.ln()])
            .collect();
        let mut shuffled = second.clone();
        shuffled.rotate_left(1);
        let indep: Vec<Vec<f64>> = first
            .iter()
            .zip(&shuffled)
            .map(|(a, b)| vec![a.ln(), b.ln()])
            .collect();
        let res = energy_permutation_test(&joint[..700], &indep[1500..2200], 299, &mut r).unwrap();
        assert!(res.p_value > 0.001, "{res:?}");
    }

    #[test]
    fn q_star_is_transpose() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let spec = kesten(2, RadialLaw::Degenerate { r: 1.0 }, RotationLaw::Fixed(rot));
        let bftc = spec.bftc_spec().unwrap();
        let mut r = rng::master(16);
        let p = sample_bftc(&bftc, 1, 1, &mut r).unwrap();
        let m0 = p.m0();
        assert!(distance(p.at(1), &[-m0[1], m0[0]]) < 1e-12);
        assert!(distance(p.at(-1), &[m0[1], -m0[0]]) < 1e-12);
    }

    #[test]
    fn kesten_model_transition_and_tail_map() {
        let spec = KestenOrthogonalSpec::new(
            2,
            alpha(1.0),
            RadialLaw::Degenerate { r: 1.0 },
            RotationLaw::Identity,
            AdditiveLaw::Zero,
        )
        .unwrap();
        let t = crate::engine::simulate_with(
            &spec,
            &crate::engine::SimConfig::new(5)
                .burn_in(0)
                .init(vec![1.0, 2.0]),
            &mut rng::master(17),
        )
        .unwrap();
        assert!(t.rows().all(|r| r == [1.0, 2.0]));
        let e = vec![0.0, -1.0, 1.0, 0.0, 3.0, 4.0];
        assert_eq!(spec.transition(&[1.0, 0.0], &e), vec![3.0, 5.0]);
        assert_eq!(spec.tail_map(&[1.0, 0.0], &e), vec![0.0, 1.0]);
        let g =
            crate::engine::phi_limit_probe(&spec, &unit(&[1.0, 0.0]), &e, &[10.0, 100.0]).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-12 && (g[1] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn config_round_trip_and_builtins() {
        for name in ModelConfig::BUILTIN_NAMES {
            let cfg = ModelConfig::builtin(name).unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            assert_eq!(serde_json::from_str::<ModelConfig>(&text).unwrap(), cfg);
            cfg.build().unwrap();
        }
        let cfg: ModelConfig = serde_json::from_str(
            r#"{"type":"kesten","d":1,"alpha":1.0,"radial":{"law":"log-uniform","lo":0.5,"hi":2.0,"normalize":true}}"#,
        )
        .unwrap();
        assert!(cfg.build().is_ok());
        assert!(
            serde_json::from_str::<ModelConfig>(r#"{"type":"garch","d":1,"alpha":1}"#).is_err()
        );
        let bad: ModelConfig =
            serde_json::from_str(r#"{"type":"ar1","d":1,"alpha":-1.0,"a":0.5}"#).unwrap();
        assert!(bad.build().is_err());
    }
}
