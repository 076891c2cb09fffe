//! Forward tail chains, back-and-forth tail chains (BFTC) and the time-change
//! identities they satisfy.
//!
//! A BFTC is fixed by the law of `M_0` on the sphere and two one-step kernels.
//! Each kernel maps a unit vector `s` to a random `m ∈ R^d`; from a general
//! state `x` the next value is `‖x‖·K(x/‖x‖)` and 0 is absorbing. Forward and
//! backward one-step laws must be adjoint: this is checked exactly when every
//! ingredient is atomic and by a two-sample gate otherwise.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::admissible::{adjoint, is_admissible, PAIR_TOL};
use crate::diagnostics::{energy_permutation_test, z_quantile, TwoSampleResult};
use crate::engine::{extend_tail_map, Model};
use crate::error::{Error, Result};
use crate::measures::{
    distance, norm, polar, scaled, Atom, AtomMeasure, SpectralMeasure, TailIndex, UnitVector,
    ANGLE_MATCH_TOL,
};
use crate::rng::{self, Stream};

const PATH_CHUNK: usize = 2048;
/// Confidence level of every time-change interval.
pub const CI_LEVEL: f64 = 0.99;

/// A one-step law given a unit starting angle.
pub trait ConditionalSampler: Send + Sync {
    fn dim(&self) -> usize;
    fn sample(&self, s: &UnitVector, rng: &mut Stream) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    AtomicConditional,
    ModelAnalytic,
}

/// Conditional laws of an atomic measure, one per sphere atom.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicKernel {
    d: usize,
    rows: Vec<KernelRow>,
}

#[derive(Debug, Clone, PartialEq)]
struct KernelRow {
    s: UnitVector,
    mass: f64,
    outcomes: Vec<(Vec<f64>, f64)>,
    cumulative: Vec<f64>,
}

impl AtomicKernel {
    pub fn dim(&self) -> usize {
        self.d
    }

    fn row(&self, s: &[f64]) -> Result<&KernelRow> {
        self.rows
            .iter()
            .find(|r| distance(r.s.coords(), s) <= ANGLE_MATCH_TOL)
            .ok_or_else(|| Error::UnknownAngle(s.to_vec()))
    }

    /// Sphere atoms with their marginal mass in the backing measure.
    pub fn angles(&self) -> impl Iterator<Item = (&UnitVector, f64)> {
        self.rows.iter().map(|r| (&r.s, r.mass))
    }

    /// Outcomes and conditional probabilities at angle `s`.
    pub fn conditional(&self, s: &[f64]) -> Result<&[(Vec<f64>, f64)]> {
        Ok(&self.row(s)?.outcomes)
    }

    pub fn sample(&self, s: &[f64], rng: &mut Stream) -> Result<Vec<f64>> {
        let row = self.row(s)?;
        let u = rng::unit(rng);
        let i = row
            .cumulative
            .partition_point(|&c| c <= u)
            .min(row.outcomes.len() - 1);
        Ok(row.outcomes[i].0.clone())
    }
}

/// The conditional decomposition of a canonical atomic measure.
pub fn kernel_from_atoms(p: &AtomMeasure) -> Result<TailKernel> {
    let mut rows: Vec<KernelRow> = Vec::new();
    for a in p.atoms() {
        match rows.last_mut() {
            Some(r) if distance(r.s.coords(), a.s.coords()) <= ANGLE_MATCH_TOL => {
                r.outcomes.push((a.m.clone(), a.w))
            }
            _ => rows.push(KernelRow {
                s: a.s.clone(),
                mass: 0.0,
                outcomes: vec![(a.m.clone(), a.w)],
                cumulative: Vec::new(),
            }),
        }
    }
    for r in &mut rows {
        r.mass = r.outcomes.iter().map(|(_, w)| w).sum();
        if !(r.mass > 0.0) {
            return Err(Error::BadWeights(format!(
                "no mass at angle {:?}",
                r.s.coords()
            )));
        }
        let mut acc = 0.0;
        for (_, w) in &mut r.outcomes {
            *w /= r.mass;
        }
        r.cumulative = r
            .outcomes
            .iter()
            .map(|(_, w)| {
                acc += w;
                acc
            })
            .collect();
    }
    Ok(TailKernel::Atomic(Arc::new(AtomicKernel {
        d: p.dim(),
        rows,
    })))
}

/// The forward kernel of a model: `s ↦ φ(s, ε)` with fresh noise.
pub struct ModelKernel(pub Arc<dyn Model>);

impl ConditionalSampler for ModelKernel {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn sample(&self, s: &UnitVector, rng: &mut Stream) -> Result<Vec<f64>> {
        let e = self.0.sample_noise(rng);
        Ok(self.0.tail_map(s.coords(), &e))
    }
}

/// A one-step tail kernel.
#[derive(Clone)]
pub enum TailKernel {
    Atomic(Arc<AtomicKernel>),
    Analytic(Arc<dyn ConditionalSampler>),
}

impl fmt::Debug for TailKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Atomic(k) => f.debug_tuple("Atomic").field(k).finish(),
            Self::Analytic(k) => write!(f, "Analytic(d = {})", k.dim()),
        }
    }
}

impl TailKernel {
    pub fn analytic(sampler: impl ConditionalSampler + 'static) -> Self {
        Self::Analytic(Arc::new(sampler))
    }

    pub fn from_model(model: Arc<dyn Model>) -> Self {
        Self::analytic(ModelKernel(model))
    }

    pub fn kind(&self) -> KernelKind {
        match self {
            Self::Atomic(_) => KernelKind::AtomicConditional,
            Self::Analytic(_) => KernelKind::ModelAnalytic,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Atomic(k) => k.d,
            Self::Analytic(k) => k.dim(),
        }
    }

    pub fn as_atomic(&self) -> Option<&AtomicKernel> {
        match self {
            Self::Atomic(k) => Some(k),
            Self::Analytic(_) => None,
        }
    }

    /// Draw from the kernel at a unit angle.
    pub fn sample_at(&self, s: &UnitVector, rng: &mut Stream) -> Result<Vec<f64>> {
        match self {
            Self::Atomic(k) => k.sample(s.coords(), rng),
            Self::Analytic(k) => k.sample(s, rng),
        }
    }

    /// Next state from `x`: `‖x‖·K(x/‖x‖)`, and 0 from 0.
    pub fn step(&self, x: &[f64], rng: &mut Stream) -> Result<Vec<f64>> {
        if x.iter().all(|v| *v == 0.0) {
            return Ok(vec![0.0; x.len()]);
        }
        let (u, r) = polar(x)?;
        Ok(scaled(&self.sample_at(&u, rng)?, r))
    }
}

/// Two-sided tail-chain path `M_{-s}, …, M_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailChainPath {
    pub s: usize,
    pub t: usize,
    pub values: Vec<Vec<f64>>,
    /// Smallest `k ≥ 1` with `M_{-k} = 0`.
    pub absorbed_back: Option<usize>,
    /// Smallest `k ≥ 1` with `M_k = 0`.
    pub absorbed_fwd: Option<usize>,
}

impl TailChainPath {
    /// `M_k` for `-s ≤ k ≤ t`.
    pub fn at(&self, k: isize) -> &[f64] {
        &self.values[(self.s as isize + k) as usize]
    }

    pub fn m0(&self) -> &[f64] {
        self.at(0)
    }

    /// The path read backwards in time: `M'_k = M_{-k}`.
    pub fn time_reversed(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        Self {
            s: self.t,
            t: self.s,
            values,
            absorbed_back: self.absorbed_fwd,
            absorbed_fwd: self.absorbed_back,
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.concat()
    }
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|x| *x == 0.0)
}

/// Builds a path from `M_0` plus backward and forward extensions.
fn assemble(m0: Vec<f64>, back: Vec<Vec<f64>>, fwd: Vec<Vec<f64>>) -> TailChainPath {
    let first_zero = |v: &[Vec<f64>]| v.iter().position(|x| is_zero(x)).map(|i| i + 1);
    let (s, t) = (back.len(), fwd.len());
    let (absorbed_back, absorbed_fwd) = (first_zero(&back), first_zero(&fwd));
    let mut values = back;
    values.reverse();
    values.push(m0);
    values.extend(fwd);
    TailChainPath {
        s,
        t,
        values,
        absorbed_back,
        absorbed_fwd,
    }
}

fn extend(
    kernel: &TailKernel,
    start: &[f64],
    steps: usize,
    rng: &mut Stream,
) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(steps);
    for _ in 0..steps {
        let prev = out.last().map(|v| v.as_slice()).unwrap_or(start);
        let next = kernel.step(prev, rng)?;
        out.push(next);
    }
    Ok(out)
}

/// Forward chain `M_j = φ(M_{j-1}, ε_j)` from a unit `m0`, using the
/// homogeneous extension of the tail map `phi` (given on unit vectors).
pub fn forward_chain<P, N>(
    m0: &UnitVector,
    phi: P,
    mut noise: N,
    t: usize,
    rng: &mut Stream,
) -> TailChainPath
where
    P: Fn(&[f64], &[f64]) -> Vec<f64>,
    N: FnMut(&mut Stream) -> Vec<f64>,
{
    let mut fwd: Vec<Vec<f64>> = Vec::with_capacity(t);
    let mut x = m0.coords().to_vec();
    for _ in 0..t {
        let r = norm(&x);
        x = if r == 0.0 {
            vec![0.0; x.len()]
        } else {
            let e = noise(rng);
            scaled(&phi(&scaled(&x, 1.0 / r), &e), r)
        };
        fwd.push(x.clone());
    }
    assemble(m0.coords().to_vec(), Vec::new(), fwd)
}

/// Forward chain driven by a model's tail map and noise.
pub fn forward_chain_model(
    model: &dyn Model,
    m0: &UnitVector,
    t: usize,
    rng: &mut Stream,
) -> TailChainPath {
    let mut fwd: Vec<Vec<f64>> = Vec::with_capacity(t);
    let mut x = m0.coords().to_vec();
    for _ in 0..t {
        x = if is_zero(&x) {
            x
        } else {
            let e = model.sample_noise(rng);
            extend_tail_map(model, &x, &e)
        };
        fwd.push(x.clone());
    }
    assemble(m0.coords().to_vec(), Vec::new(), fwd)
}

/// Settings of the statistical adjointness gate used for analytic specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOptions {
    pub n: usize,
    pub n_perm: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for GateOptions {
    fn default() -> Self {
        Self {
            n: 10_000,
            n_perm: 999,
            level: 0.001,
            seed: 0x6a7e,
        }
    }
}

/// Outcome of an adjointness check between forward and backward one-step laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointnessReport {
    pub exact: bool,
    pub passed: bool,
    /// Mass of `{M_{-1} = 0}` implied by the forward law, `1 − E‖M_1‖^α`.
    pub zero_mass_forward: f64,
    /// Mass of `{M_{-1} = 0}` under the backward kernel.
    pub zero_mass_backward: f64,
    pub zero_mass_p_value: f64,
    pub energy: Option<TwoSampleResult>,
}

/// Law of `(M_0, M_{±1})` under one kernel, as `(s, m)` pairs.
pub fn one_step_pairs(
    m0_law: &SpectralMeasure,
    kernel: &TailKernel,
    n: usize,
    rng: &mut Stream,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let key = rng::fork(rng);
    let chunks: Vec<Vec<(Vec<f64>, Vec<f64>)>> = rng::chunks(n, PATH_CHUNK)
        .into_par_iter()
        .map(|(c, _, len)| {
            let mut r = rng::split(key, c);
            (0..len)
                .map(|_| {
                    let s = m0_law.sample(&mut r)?;
                    let m = kernel.sample_at(&s, &mut r)?;
                    Ok((s.into_inner(), m))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Importance-resampled draws from the adjoint of the law behind `pairs`.
///
/// Each nonzero pair `(s, m)` becomes `(m/‖m‖, s/‖m‖)` with weight `‖m‖^α`;
/// `k` draws are taken with replacement in proportion to the weights. Also
/// returns the estimated adjoint mass on `{m = 0}`, `1 − mean(weight)`.
pub fn adjoint_resample(
    pairs: &[(Vec<f64>, Vec<f64>)],
    alpha: TailIndex,
    k: usize,
    rng: &mut Stream,
) -> Result<(Vec<(Vec<f64>, Vec<f64>)>, f64)> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no pairs to reweight".into()));
    }
    let a = alpha.value();
    let mut cumulative = Vec::with_capacity(pairs.len());
    let mut acc = 0.0;
    for (_, m) in pairs {
        let r = norm(m);
        acc += if r > 0.0 { r.powf(a) } else { 0.0 };
        cumulative.push(acc);
    }
    let zero_mass = 1.0 - acc / pairs.len() as f64;
    if k > 0 && !(acc > 0.0) {
        return Err(Error::DegenerateSample("all pairs have m = 0".into()));
    }
    let draws = (0..k)
        .map(|_| {
            let u = rng::unit(rng) * acc;
            let i = cumulative.partition_point(|&c| c <= u).min(pairs.len() - 1);
            let (s, m) = &pairs[i];
            let r = norm(m);
            (scaled(m, 1.0 / r), scaled(s, 1.0 / r))
        })
        .collect();
    Ok((draws, zero_mass))
}

fn joint_atomic(m0: &[(UnitVector, f64)], kernel: &AtomicKernel) -> Result<AtomMeasure> {
    let mut atoms = Vec::new();
    for (u, w) in m0 {
        if *w == 0.0 {
            continue;
        }
        for (m, q) in kernel.conditional(u.coords())? {
            atoms.push(Atom::new(u.clone(), m.clone(), w * q));
        }
    }
    AtomMeasure::canonicalize(kernel.d, atoms)
}

/// Checks that `ℒ(M_0, M_1)` and `ℒ(M_0, M_{-1})` are adjoint.
pub fn check_adjointness(
    alpha: TailIndex,
    m0_law: &SpectralMeasure,
    forward: &TailKernel,
    backward: &TailKernel,
    gate: &GateOptions,
) -> Result<AdjointnessReport> {
    if let (Some(atoms), Some(kf), Some(kb)) =
        (m0_law.atoms(), forward.as_atomic(), backward.as_atomic())
    {
        let pf = joint_atomic(atoms, kf)?;
        let pb = joint_atomic(atoms, kb)?;
        let admissible = is_admissible(&pf, alpha)?.admissible;
        let zero = |p: &AtomMeasure| {
            p.atoms()
                .iter()
                .filter(|a| a.is_zero_atom())
                .map(|a| a.w)
                .sum::<f64>()
        };
        let passed = admissible
            && adjoint(&pf, alpha)
                .map(|q| q.approx_eq(&pb, PAIR_TOL))
                .unwrap_or(false);
        return Ok(AdjointnessReport {
            exact: true,
            passed,
            zero_mass_forward: 1.0 - pf.alpha_moment(alpha),
            zero_mass_backward: zero(&pb),
            zero_mass_p_value: if passed { 1.0 } else { 0.0 },
            energy: None,
        });
    }
    let mut r = rng::master(gate.seed);
    let fwd = one_step_pairs(m0_law, forward, 5 * gate.n, &mut r)?;
    let bwd = one_step_pairs(m0_law, backward, gate.n, &mut r)?;
    let nonzero: Vec<Vec<f64>> = bwd
        .iter()
        .filter(|(_, m)| !is_zero(m))
        .map(|(s, m)| [s.as_slice(), m.as_slice()].concat())
        .collect();
    let zb = 1.0 - nonzero.len() as f64 / bwd.len() as f64;
    let a = alpha.value();
    let weights: Vec<f64> = fwd
        .iter()
        .map(|(_, m)| if is_zero(m) { 0.0 } else { norm(m).powf(a) })
        .collect();
    let mean_w = weights.iter().sum::<f64>() / weights.len() as f64;
    let var_w =
        weights.iter().map(|w| (w - mean_w).powi(2)).sum::<f64>() / (weights.len() - 1) as f64;
    let zf = 1.0 - mean_w;
    let se = (var_w / weights.len() as f64 + zb * (1.0 - zb) / bwd.len() as f64).sqrt();
    let zero_mass_p_value = if se == 0.0 {
        if (zf - zb).abs() <= 1e-12 {
            1.0
        } else {
            0.0
        }
    } else {
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        2.0 * normal.sf((zf - zb).abs() / se)
    };
    let energy = if nonzero.len() >= 2 {
        let (adj, _) = adjoint_resample(&fwd, alpha, nonzero.len(), &mut r)?;
        let adj: Vec<Vec<f64>> = adj.into_iter().map(|(s, m)| [s, m].concat()).collect();
        Some(energy_permutation_test(
            &nonzero,
            &adj,
            gate.n_perm,
            &mut r,
        )?)
    } else {
        None
    };
    let passed = zero_mass_p_value > gate.level
        && energy
            .as_ref()
            .map(|e| !e.rejects(gate.level))
            .unwrap_or(true);
    Ok(AdjointnessReport {
        exact: false,
        passed,
        zero_mass_forward: zf,
        zero_mass_backward: zb,
        zero_mass_p_value,
        energy,
    })
}

/// A back-and-forth tail chain: law of `M_0` plus forward and backward kernels.
#[derive(Debug, Clone)]
pub struct BftcSpec {
    alpha: TailIndex,
    m0_law: SpectralMeasure,
    forward: TailKernel,
    backward: TailKernel,
    report: AdjointnessReport,
}

impl BftcSpec {
    pub fn new(
        alpha: TailIndex,
        m0_law: SpectralMeasure,
        forward: TailKernel,
        backward: TailKernel,
    ) -> Result<Self> {
        Self::with_gate(alpha, m0_law, forward, backward, &GateOptions::default())
    }

    pub fn with_gate(
        alpha: TailIndex,
        m0_law: SpectralMeasure,
        forward: TailKernel,
        backward: TailKernel,
        gate: &GateOptions,
    ) -> Result<Self> {
        let d = m0_law.dim();
        for k in [&forward, &backward] {
            if k.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: k.dim(),
                });
            }
        }
        let report = match check_adjointness(alpha, &m0_law, &forward, &backward, gate) {
            Ok(r) => r,
            Err(Error::UnknownAngle(u)) => {
                return Err(Error::KernelMismatch(format!(
                    "kernel undefined at M_0 angle {u:?}"
                )))
            }
            Err(e) => return Err(e),
        };
        if !report.passed {
            return Err(Error::KernelMismatch(if report.exact {
                "adjoint of the forward law differs from the backward law".into()
            } else {
                format!(
                    "zero mass {:.4} vs {:.4} (p = {:.3e}), energy p = {:?}",
                    report.zero_mass_forward,
                    report.zero_mass_backward,
                    report.zero_mass_p_value,
                    report.energy.as_ref().map(|e| e.p_value)
                )
            }));
        }
        Ok(Self {
            alpha,
            m0_law,
            forward,
            backward,
            report,
        })
    }

    /// Backward kernel obtained as the exact adjoint of an atomic forward law.
    pub fn from_atomic_forward(
        alpha: TailIndex,
        m0: &[(UnitVector, f64)],
        forward: &AtomicKernel,
    ) -> Result<Self> {
        let pf = joint_atomic(m0, forward)?;
        let backward = kernel_from_atoms(&adjoint(&pf, alpha)?)?;
        Self::new(
            alpha,
            SpectralMeasure::atomic(m0.to_vec())?,
            TailKernel::Atomic(Arc::new(forward.clone())),
            backward,
        )
    }

    pub fn alpha(&self) -> TailIndex {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.m0_law.dim()
    }

    pub fn m0_law(&self) -> &SpectralMeasure {
        &self.m0_law
    }

    pub fn forward(&self) -> &TailKernel {
        &self.forward
    }

    pub fn backward(&self) -> &TailKernel {
        &self.backward
    }

    pub fn report(&self) -> &AdjointnessReport {
        &self.report
    }

    /// The time-reversed chain: kernels swapped, same `M_0` law. Adjointness
    /// is symmetric, so no new check is needed.
    pub fn reversed(&self) -> Self {
        Self {
            forward: self.backward.clone(),
            backward: self.forward.clone(),
            ..self.clone()
        }
    }
}

/// Draws `M_{-s}, …, M_t`; the backward extension is drawn before the forward one.
pub fn sample_bftc(spec: &BftcSpec, s: usize, t: usize, rng: &mut Stream) -> Result<TailChainPath> {
    let m0 = spec.m0_law.sample(rng)?.into_inner();
    let back = extend(&spec.backward, &m0, s, rng)?;
    let fwd = extend(&spec.forward, &m0, t, rng)?;
    Ok(assemble(m0, back, fwd))
}

/// `n` independent paths, in parallel with the fixed-chunk splitting rule.
pub fn sample_bftc_paths(
    spec: &BftcSpec,
    s: usize,
    t: usize,
    n: usize,
    rng: &mut Stream,
) -> Result<Vec<TailChainPath>> {
    let key = rng::fork(rng);
    let chunks: Vec<Vec<TailChainPath>> = rng::chunks(n, PATH_CHUNK)
        .into_par_iter()
        .map(|(c, _, len)| {
            let mut r = rng::split(key, c);
            (0..len)
                .map(|_| sample_bftc(spec, s, t, &mut r))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

type BlockFn = Arc<dyn Fn(&[Vec<f64>]) -> f64 + Send + Sync>;

/// A bounded path functional `f(y_{-s}, …, y_t)` that vanishes when `y_{-s} = 0`.
#[derive(Clone)]
pub struct TestFunctional {
    name: String,
    bound: f64,
    f: BlockFn,
}

impl fmt::Debug for TestFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunctional")
            .field("name", &self.name)
            .field("bound", &self.bound)
            .finish()
    }
}

impl TestFunctional {
    pub fn new(
        name: impl Into<String>,
        bound: f64,
        f: impl Fn(&[Vec<f64>]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            bound,
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Evaluates on blocks `y_{-s}, …, y_t`, enforcing the bound and the
    /// vanishing property.
    pub fn eval(&self, blocks: &[Vec<f64>]) -> Result<f64> {
        let v = (self.f)(blocks);
        if !(v.abs() <= self.bound) {
            return Err(Error::UnboundedFunctional {
                value: v,
                bound: self.bound,
            });
        }
        if v != 0.0 && blocks.first().map(|b| is_zero(b)).unwrap_or(false) {
            return Err(Error::InvalidArgument(format!(
                "functional {} is {v} on a path whose first block is 0",
                self.name
            )));
        }
        Ok(v)
    }
}

fn clip_norm(v: &[f64]) -> f64 {
    norm(v).min(1.0)
}

/// Five functionals vanishing when the first block is 0: a survival indicator,
/// a clipped norm, coordinate indicators and a product of clipped norms.
pub fn battery() -> Vec<TestFunctional> {
    let first = |b: &[Vec<f64>]| b[0].clone();
    let last = |b: &[Vec<f64>]| b[b.len() - 1].clone();
    vec![
        TestFunctional::new("first-nonzero", 1.0, move |b| {
            if is_zero(&first(b)) {
                0.0
            } else {
                1.0
            }
        }),
        TestFunctional::new("first-clipped-norm", 1.0, move |b| clip_norm(&first(b))),
        TestFunctional::new("first-nonzero-last-positive", 1.0, move |b| {
            if !is_zero(&first(b)) && last(b)[0] > 0.0 {
                1.0
            } else {
                0.0
            }
        }),
        TestFunctional::new("clipped-norm-product", 1.0, move |b| {
            clip_norm(&first(b)) * clip_norm(&last(b))
        }),
        TestFunctional::new("first-positive", 1.0, move |b| {
            if first(b)[0] > 0.0 {
                1.0
            } else {
                0.0
            }
        }),
    ]
}

/// A Monte Carlo mean with its normal-approximation half-width at [`CI_LEVEL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub ci: f64,
}

impl Estimate {
    /// Two estimates agree when they differ by at most the sum of half-widths.
    pub fn agrees_with(&self, other: &Estimate) -> bool {
        (self.estimate - other.estimate).abs() <= self.ci + other.ci
    }
}

/// Value of the `i`-th family member on one path with backward horizon
/// `back ≥ s - i` and forward horizon `≥ t + i`.
fn family_term(
    f: &TestFunctional,
    path: &TailChainPath,
    s: usize,
    t: usize,
    i: usize,
    alpha: f64,
) -> Result<f64> {
    let mi = path.at(i as isize);
    let r = norm(mi);
    if r == 0.0 {
        return Ok(0.0);
    }
    let lo = i as isize - s as isize;
    let blocks: Vec<Vec<f64>> = (lo..=(t + i) as isize)
        .map(|k| scaled(path.at(k), 1.0 / r))
        .collect();
    Ok(f.eval(&blocks)? * r.powf(alpha))
}

struct Moments {
    sum: Vec<f64>,
    sq: Vec<f64>,
}

fn finish(m: &Moments, n: usize) -> Vec<Estimate> {
    let z = z_quantile(CI_LEVEL);
    let nf = n as f64;
    m.sum
        .iter()
        .zip(&m.sq)
        .map(|(s, q)| {
            let mean = s / nf;
            let var = ((q - nf * mean * mean) / (nf - 1.0)).max(0.0);
            Estimate {
                estimate: mean,
                ci: z * (var / nf).sqrt(),
            }
        })
        .collect()
}

/// Accumulates per-path values `terms(path) -> Vec<f64>` over `n` paths of the
/// given horizons.
fn accumulate<F>(
    spec: &BftcSpec,
    back: usize,
    fwd: usize,
    n: usize,
    width: usize,
    rng: &mut Stream,
    terms: F,
) -> Result<Moments>
where
    F: Fn(&TailChainPath) -> Result<Vec<f64>> + Sync,
{
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 paths".into()));
    }
    let key = rng::fork(rng);
    let parts: Vec<Moments> = rng::chunks(n, PATH_CHUNK)
        .into_par_iter()
        .map(|(c, _, len)| {
            let mut r = rng::split(key, c);
            let mut m = Moments {
                sum: vec![0.0; width],
                sq: vec![0.0; width],
            };
            for _ in 0..len {
                let path = sample_bftc(spec, back, fwd, &mut r)?;
                for (k, v) in terms(&path)?.into_iter().enumerate() {
                    m.sum[k] += v;
                    m.sq[k] += v * v;
                }
            }
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let mut total = Moments {
        sum: vec![0.0; width],
        sq: vec![0.0; width],
    };
    for p in parts {
        for k in 0..width {
            total.sum[k] += p.sum[k];
            total.sq[k] += p.sq[k];
        }
    }
    Ok(total)
}

/// Estimate of `E[f(M_{-s+i}/‖M_i‖, …, M_{t+i}/‖M_i‖) ‖M_i‖^α 1{M_i ≠ 0}]`
/// from `n` paths with backward horizon `s - i` and forward horizon `t + i`.
pub fn timechange_gap(
    f: &TestFunctional,
    spec: &BftcSpec,
    s: usize,
    t: usize,
    i: usize,
    n: usize,
    rng: &mut Stream,
) -> Result<Estimate> {
    if i > s {
        return Err(Error::InvalidArgument(format!("index {i} exceeds s = {s}")));
    }
    let a = spec.alpha.value();
    let m = accumulate(spec, s - i, t + i, n, 1, rng, |p| {
        Ok(vec![family_term(f, p, s, t, i, a)?])
    })?;
    Ok(finish(&m, n)[0])
}

/// All `s + 1` members for each functional, from common paths of backward
/// horizon `s` and forward horizon `t + s`. Result is indexed `[functional][i]`.
pub fn timechange_family(
    fs: &[TestFunctional],
    spec: &BftcSpec,
    s: usize,
    t: usize,
    n: usize,
    rng: &mut Stream,
) -> Result<Vec<Vec<Estimate>>> {
    let a = spec.alpha.value();
    let width = fs.len() * (s + 1);
    let m = accumulate(spec, s, t + s, n, width, rng, |p| {
        let mut out = Vec::with_capacity(width);
        for f in fs {
            for i in 0..=s {
                // shift so that the window starts at -s + i
                out.push(family_term(f, p, s, t, i, a)?);
            }
        }
        Ok(out)
    })?;
    Ok(finish(&m, n).chunks(s + 1).map(|c| c.to_vec()).collect())
}

/// Whether all members of a family pairwise agree within summed half-widths.
pub fn family_agrees(family: &[Estimate]) -> bool {
    family
        .iter()
        .enumerate()
        .all(|(i, a)| family[i + 1..].iter().all(|b| a.agrees_with(b)))
}

/// Both sides of the one-step identity
/// `E[f(M_{-1}, M_0)] = E[f(M_0/‖M_1‖, M_1/‖M_1‖) ‖M_1‖^α 1{M_1 ≠ 0}]`,
/// summed exactly over the atoms of an atomic spec.
pub fn exact_onestep<F>(f: F, spec: &BftcSpec) -> Result<(f64, f64)>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let (Some(m0), Some(kf), Some(kb)) = (
        spec.m0_law.atoms(),
        spec.forward.as_atomic(),
        spec.backward.as_atomic(),
    ) else {
        return Err(Error::InvalidArgument(
            "exact summation needs an atomic spec".into(),
        ));
    };
    let a = spec.alpha.value();
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for (u, w) in m0 {
        for (m, q) in kb.conditional(u.coords())? {
            lhs += w * q * f(m, u.coords());
        }
        for (m, q) in kf.conditional(u.coords())? {
            let r = norm(m);
            if r > 0.0 {
                rhs += w * q * f(&scaled(u.coords(), 1.0 / r), &scaled(m, 1.0 / r)) * r.powf(a);
            }
        }
    }
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admissible::random_admissible;
    use rand::RngCore;

    fn alpha(a: f64) -> TailIndex {
        TailIndex::new(a).unwrap()
    }

    fn unit(v: &[f64]) -> UnitVector {
        UnitVector::new(v.to_vec()).unwrap()
    }

    fn two_atom() -> AtomMeasure {
        AtomMeasure::canonicalize(
            1,
            vec![
                Atom::from_coords(&[1.0], &[0.5], 0.5).unwrap(),
                Atom::from_coords(&[1.0], &[0.0], 0.5).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn kernel_from_two_atoms() {
        let k = kernel_from_atoms(&two_atom()).unwrap();
        let atomic = k.as_atomic().unwrap();
        let c = atomic.conditional(&[1.0]).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|(_, w)| *w == 0.5));
        let mut r = rng::master(1);
        let n = 20_000;
        let zeros = (0..n)
            .filter(|_| k.sample_at(&unit(&[1.0]), &mut r).unwrap() == vec![0.0])
            .count();
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 0.02);
        assert!(matches!(
            k.sample_at(&unit(&[-1.0]), &mut r),
            Err(Error::UnknownAngle(_))
        ));
    }

    #[test]
    fn deterministic_kernel() {
        let p = AtomMeasure::dirac(unit(&[1.0]), vec![1.0]).unwrap();
        let k = kernel_from_atoms(&p).unwrap();
        let mut r = rng::master(2);
        for _ in 0..10 {
            assert_eq!(k.sample_at(&unit(&[1.0]), &mut r).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn conditional_weights_sum_to_one() {
        let mut r = rng::master(3);
        for _ in 0..50 {
            let p = random_admissible(2, 12, alpha(1.0), &mut r);
            let k = kernel_from_atoms(&p).unwrap();
            for (u, _) in k.as_atomic().unwrap().angles() {
                let total: f64 = k
                    .as_atomic()
                    .unwrap()
                    .conditional(u.coords())
                    .unwrap()
                    .iter()
                    .map(|(_, w)| w)
                    .sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ar1_forward_chain() {
        let mut r = rng::master(4);
        let p = forward_chain(
            &unit(&[1.0]),
            |s, _| vec![0.5 * s[0]],
            |_| vec![],
            3,
            &mut r,
        );
        assert_eq!(
            p.values,
            vec![vec![1.0], vec![0.5], vec![0.25], vec![0.125]]
        );
        assert_eq!(p.absorbed_fwd, None);
    }

    #[test]
    fn forward_zero_absorbs() {
        let mut r = rng::master(5);
        let calls = std::cell::Cell::new(0);
        let p = forward_chain(
            &unit(&[0.6, 0.8]),
            |_, _| {
                calls.set(calls.get() + 1);
                vec![0.0, 0.0]
            },
            |_| vec![],
            4,
            &mut r,
        );
        assert_eq!(calls.get(), 1);
        assert_eq!(p.absorbed_fwd, Some(1));
        assert!(p.values[1..].iter().all(|v| is_zero(v)));
    }

    fn ar1_atomic_spec() -> BftcSpec {
        // M_1 = a M_0 with a = 0.5 on the two signs
        let fwd = AtomMeasure::canonicalize(
            1,
            vec![
                Atom::from_coords(&[1.0], &[0.5], 0.5).unwrap(),
                Atom::from_coords(&[-1.0], &[-0.5], 0.5).unwrap(),
            ],
        )
        .unwrap();
        let k = kernel_from_atoms(&fwd).unwrap();
        let m0 = vec![(unit(&[-1.0]), 0.5), (unit(&[1.0]), 0.5)];
        BftcSpec::from_atomic_forward(alpha(1.0), &m0, k.as_atomic().unwrap()).unwrap()
    }

    #[test]
    fn ar1_backward_step_from_plus_one() {
        let spec = ar1_atomic_spec();
        let c = spec
            .backward()
            .as_atomic()
            .unwrap()
            .conditional(&[1.0])
            .unwrap();
        let mut c = c.to_vec();
        c.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]));
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].0, vec![0.0]);
        assert!((c[0].1 - 0.5).abs() < 1e-12);
        assert!((c[1].0[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn backward_from_zero_stays_zero() {
        let spec = ar1_atomic_spec();
        let mut r = rng::master(6);
        assert_eq!(spec.backward().step(&[0.0], &mut r).unwrap(), vec![0.0]);
        for _ in 0..200 {
            let p = sample_bftc(&spec, 5, 3, &mut r).unwrap();
            if let Some(k) = p.absorbed_back {
                assert!((k..=5).all(|j| is_zero(p.at(-(j as isize)))));
            }
            assert_eq!(norm(p.m0()), 1.0);
        }
    }

    #[test]
    fn mismatched_kernels_rejected() {
        let k = kernel_from_atoms(&two_atom()).unwrap();
        let m0 = SpectralMeasure::atomic(vec![(unit(&[1.0]), 1.0)]).unwrap();
        let err = BftcSpec::new(alpha(1.0), m0.clone(), k.clone(), k.clone()).unwrap_err();
        assert!(matches!(err, Error::KernelMismatch(_)));
        // the correct backward kernel is accepted
        let back = kernel_from_atoms(&adjoint(&two_atom(), alpha(1.0)).unwrap()).unwrap();
        assert!(BftcSpec::new(alpha(1.0), m0, k, back).is_ok());
    }

    #[test]
    fn kernel_missing_m0_angle_is_a_mismatch() {
        let k = kernel_from_atoms(&two_atom()).unwrap();
        let m0 = SpectralMeasure::symmetric_signs();
        assert!(matches!(
            BftcSpec::new(alpha(1.0), m0, k.clone(), k),
            Err(Error::KernelMismatch(_))
        ));
    }

    #[test]
    fn onestep_identity_exact_on_random_specs() {
        let mut r = rng::master(7);
        let fs: Vec<Box<dyn Fn(&[f64], &[f64]) -> f64>> = vec![
            Box::new(|y, _| if is_zero(y) { 0.0 } else { 1.0 }),
            Box::new(|y, x| norm(y).min(1.0) * (1.0 + x[0]).abs().min(1.0)),
            Box::new(|y, x| {
                if y[0] > 0.0 && x[x.len() - 1] < 0.3 {
                    1.0
                } else {
                    0.0
                }
            }),
        ];
        for _ in 0..100 {
            let d = 1 + (r.next_u64() % 3) as usize;
            let a = [0.5, 1.0, 2.0][(r.next_u64() % 3) as usize];
            let p = random_admissible(d, 15, alpha(a), &mut r);
            let m0: Vec<(UnitVector, f64)> = p.sphere_marginal();
            let k = kernel_from_atoms(&p).unwrap();
            let spec =
                BftcSpec::from_atomic_forward(alpha(a), &m0, k.as_atomic().unwrap()).unwrap();
            assert!(spec.report().exact && spec.report().passed);
            for f in &fs {
                let (lhs, rhs) = exact_onestep(f, &spec).unwrap();
                assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn ar1_timechange_closed_form() {
        // s=1, t=0, f = 1{y_{-1} ≠ 0}: both members equal 0.5
        let spec = ar1_atomic_spec();
        let f = &battery()[0];
        let mut r = rng::master(8);
        let e0 = timechange_gap(f, &spec, 1, 0, 0, 40_000, &mut r).unwrap();
        let e1 = timechange_gap(f, &spec, 1, 0, 1, 40_000, &mut r).unwrap();
        assert!((e0.estimate - 0.5).abs() < e0.ci);
        // the i = 1 member is deterministic: ‖M_1‖ = 0.5 always
        assert!((e1.estimate - 0.5).abs() < 1e-12 && e1.ci < 1e-12);
        let (lhs, rhs) = exact_onestep(|y, _| if is_zero(y) { 0.0 } else { 1.0 }, &spec).unwrap();
        assert!((lhs - 0.5).abs() < 1e-15 && (rhs - 0.5).abs() < 1e-15);
    }

    #[test]
    fn first_nonzero_estimates_survival() {
        let spec = ar1_atomic_spec();
        let mut r = rng::master(9);
        let e = timechange_gap(&battery()[0], &spec, 2, 0, 0, 40_000, &mut r).unwrap();
        assert!((e.estimate - 0.25).abs() < e.ci);
    }

    #[test]
    fn constant_path_family_is_exact() {
        let p = AtomMeasure::canonicalize(
            2,
            vec![
                Atom::from_coords(&[1.0, 0.0], &[1.0, 0.0], 0.5).unwrap(),
                Atom::from_coords(&[0.0, 1.0], &[0.0, 1.0], 0.5).unwrap(),
            ],
        )
        .unwrap();
        let k = kernel_from_atoms(&p).unwrap();
        let spec =
            BftcSpec::from_atomic_forward(alpha(1.0), &p.sphere_marginal(), k.as_atomic().unwrap())
                .unwrap();
        let fam = timechange_family(&battery(), &spec, 2, 2, 4000, &mut rng::master(10)).unwrap();
        for f in &fam {
            for e in f {
                assert_eq!(e.estimate, f[0].estimate);
            }
            assert!(family_agrees(f));
        }
    }

    #[test]
    fn unbounded_functional_reported() {
        let spec = ar1_atomic_spec();
        let f = TestFunctional::new("big", 0.5, |b| if is_zero(&b[0]) { 0.0 } else { 1.0 });
        let err = timechange_gap(&f, &spec, 1, 0, 0, 100, &mut rng::master(11)).unwrap_err();
        assert!(matches!(err, Error::UnboundedFunctional { .. }));
    }

    #[test]
    fn battery_vanishes_on_zero_first_block() {
        let blocks = vec![vec![0.0, 0.0], vec![0.6, 0.8], vec![1.0, 0.0]];
        for f in battery() {
            assert_eq!(f.eval(&blocks).unwrap(), 0.0, "{}", f.name());
        }
        let bad = TestFunctional::new("bad", 1.0, |_| 1.0);
        assert!(bad.eval(&blocks).is_err());
    }

    #[test]
    fn reversed_spec_swaps_kernels() {
        let spec = ar1_atomic_spec();
        let rev = spec.reversed();
        let mut r = rng::master(12);
        let p = sample_bftc(&rev, 0, 1, &mut r).unwrap();
        // reversed forward step is the backward kernel: 0 or 2·M_0
        let v = p.at(1)[0] * p.m0()[0];
        assert!(v == 0.0 || (v - 2.0).abs() < 1e-12);
        let tr = p.time_reversed();
        assert_eq!(tr.s, 1);
        assert_eq!(tr.at(-1), p.at(1));
    }

    #[test]
    fn path_sampling_is_thread_count_independent() {
        let spec = ar1_atomic_spec();
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| sample_bftc_paths(&spec, 3, 3, 5000, &mut rng::master(13)).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn adjoint_resample_of_unit_moment_law_has_no_zero_mass() {
        let mut r = rng::master(14);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..1000)
            .map(|i| (vec![1.0], vec![if i % 2 == 0 { 0.5 } else { 1.5 }]))
            .collect();
        let (draws, zero) = adjoint_resample(&pairs, alpha(1.0), 4000, &mut r).unwrap();
        assert!(zero.abs() < 1e-12);
        // weights 0.5 and 1.5 → outcome 2 w.p. 1/4, 2/3 w.p. 3/4
        let twos = draws
            .iter()
            .filter(|(_, m)| (m[0] - 2.0).abs() < 1e-12)
            .count();
        assert!((twos as f64 / 4000.0 - 0.25).abs() < 0.03);
    }
}
