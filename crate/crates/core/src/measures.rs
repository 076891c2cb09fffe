//! Polar decomposition, Pareto radii and finite atomic measures on
//! `S^{d-1} x R^d`.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Tolerance on `|norm - 1|` for a vector to count as a point of the sphere.
pub const UNIT_TOL: f64 = 1e-12;

/// Tolerance on the total mass of raw atom lists handed to [`AtomMeasure::canonicalize`].
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Two sphere points closer than this are the same atom when matching angles.
pub const ANGLE_MATCH_TOL: f64 = 1e-9;

/// Euclidean norm.
#[inline]
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn scaled(v: &[f64], c: f64) -> Vec<f64> {
    v.iter().map(|x| x * c).collect()
}

#[inline]
pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A point of the unit sphere `S^{d-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps coordinates that already have unit Euclidean norm.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::DomainError(
                "unit vector needs dimension >= 1".into(),
            ));
        }
        let r = norm(&coords);
        if !r.is_finite() || (r - 1.0).abs() > UNIT_TOL {
            return Err(Error::DomainError(format!(
                "vector {coords:?} has norm {r}, not 1"
            )));
        }
        Ok(Self(coords))
    }

    /// Normalizes a nonzero vector onto the sphere.
    pub fn from_nonzero(v: &[f64]) -> Result<Self> {
        polar(v).map(|(u, _)| u)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `r * self` as a plain vector.
    pub fn scale(&self, r: f64) -> Vec<f64> {
        scaled(&self.0, r)
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(u: UnitVector) -> Self {
        u.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of regular variation, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TailIndex(f64);

impl TailIndex {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 0.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::DomainError(format!(
                "tail index must be positive, got {alpha}"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TailIndex {
    type Error = Error;
    fn try_from(a: f64) -> Result<Self> {
        Self::new(a)
    }
}

impl From<TailIndex> for f64 {
    fn from(a: TailIndex) -> Self {
        a.0
    }
}

impl fmt::Display for TailIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Splits `v` into its direction and Euclidean length.
pub fn polar(v: &[f64]) -> Result<(UnitVector, f64)> {
    let r = norm(v);
    if r == 0.0 {
        return Err(Error::ZeroVector);
    }
    if !r.is_finite() {
        return Err(Error::DomainError(format!(
            "vector {v:?} has non-finite norm"
        )));
    }
    Ok((UnitVector(v.iter().map(|x| x / r).collect()), r))
}

/// Inverse-CDF draw of a standard Pareto(alpha) radius, `Pr(Y > y) = y^{-alpha}`.
pub fn sample_pareto(alpha: TailIndex, u: f64) -> Result<f64> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::DomainError(format!(
            "uniform variate {u} outside (0, 1]"
        )));
    }
    Ok(u.powf(-1.0 / alpha.value()))
}

/// Draws a Pareto(alpha) radius from a stream.
pub fn pareto(alpha: TailIndex, rng: &mut Stream) -> f64 {
    rng::open_unit(rng).powf(-1.0 / alpha.value())
}

/// Uniform point of `S^{d-1}` (normalized Gaussian; a random sign when `d = 1`).
pub fn uniform_sphere(d: usize, rng: &mut Stream) -> UnitVector {
    loop {
        let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok((u, _)) = polar(&g) {
            return u;
        }
    }
}

/// A point mass of weight `w` at `(s, m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub s: UnitVector,
    pub m: Vec<f64>,
    pub w: f64,
}

impl Atom {
    pub fn new(s: UnitVector, m: Vec<f64>, w: f64) -> Self {
        Self { s, m, w }
    }

    /// Convenience constructor that validates `s`.
    pub fn from_coords(s: &[f64], m: &[f64], w: f64) -> Result<Self> {
        Ok(Self::new(UnitVector::new(s.to_vec())?, m.to_vec(), w))
    }

    pub fn is_zero_atom(&self) -> bool {
        self.m.iter().all(|&x| x == 0.0)
    }
}

/// Rounds a coordinate to 12 decimal digits for merge and ordering keys.
#[inline]
fn key_coord(x: f64) -> f64 {
    let k = (x * 1e12).round();
    if k == 0.0 {
        0.0
    } else {
        k
    }
}

fn key_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match key_coord(*x).total_cmp(&key_coord(*y)) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

fn atom_cmp(a: &Atom, b: &Atom) -> Ordering {
    key_cmp(a.s.coords(), b.s.coords()).then_with(|| key_cmp(&a.m, &b.m))
}

/// A finite probability measure on `S^{d-1} x R^d` in canonical form: duplicate
/// atoms merged, zero weights dropped, weights summing to 1 and atoms sorted
/// lexicographically by their rounded coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomMeasure {
    d: usize,
    atoms: Vec<Atom>,
}

#[derive(Serialize, Deserialize)]
struct AtomMeasureDoc {
    d: usize,
    atoms: Vec<Atom>,
}

impl AtomMeasure {
    /// Builds the canonical form of a raw atom list.
    pub fn canonicalize(d: usize, raw: Vec<Atom>) -> Result<Self> {
        if d == 0 {
            return Err(Error::DomainError("dimension must be >= 1".into()));
        }
        let mut sum = 0.0;
        for a in &raw {
            if a.s.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: a.s.dim(),
                });
            }
            if a.m.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: a.m.len(),
                });
            }
            if !a.m.iter().all(|x| x.is_finite()) {
                return Err(Error::DomainError(format!(
                    "non-finite atom location {:?}",
                    a.m
                )));
            }
            if !(a.w >= 0.0) || !a.w.is_finite() {
                return Err(Error::BadWeights(format!(
                    "weight {} is negative or not finite",
                    a.w
                )));
            }
            sum += a.w;
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::BadWeights(format!("weights sum to {sum}")));
        }

        let mut atoms: Vec<Atom> = raw.into_iter().filter(|a| a.w > 0.0).collect();
        atoms.sort_by(atom_cmp);
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.last_mut() {
                Some(last) if atom_cmp(last, &a) == Ordering::Equal => last.w += a.w,
                _ => merged.push(a),
            }
        }

        // Already-normalized input is left untouched so that canonicalization
        // is idempotent bit for bit.
        let total: f64 = merged.iter().map(|a| a.w).sum();
        let tol = 4.0 * (merged.len() as f64 + 1.0) * f64::EPSILON;
        if (total - 1.0).abs() > tol {
            for a in &mut merged {
                a.w /= total;
            }
        }
        Ok(Self { d, atoms: merged })
    }

    /// Point mass at `(s, m)`.
    pub fn dirac(s: UnitVector, m: Vec<f64>) -> Result<Self> {
        let d = s.dim();
        Self::canonicalize(d, vec![Atom::new(s, m, 1.0)])
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.w).sum()
    }

    /// Marginal on the sphere: distinct angles with their total mass, in
    /// canonical order.
    pub fn sphere_marginal(&self) -> Vec<(UnitVector, f64)> {
        let mut out: Vec<(UnitVector, f64)> = Vec::new();
        for a in &self.atoms {
            match out
                .iter_mut()
                .find(|(u, _)| key_cmp(u.coords(), a.s.coords()) == Ordering::Equal)
            {
                Some((_, w)) => *w += a.w,
                None => out.push((a.s.clone(), a.w)),
            }
        }
        out
    }

    /// `∫ ||m||^alpha dP`.
    pub fn alpha_moment(&self, alpha: TailIndex) -> f64 {
        self.atoms
            .iter()
            .filter(|a| !a.is_zero_atom())
            .map(|a| a.w * norm(&a.m).powf(alpha.value()))
            .sum()
    }

    /// Atom-by-atom comparison up to `tol` on weights and coordinates. Atoms
    /// are matched one-to-one, so the result does not depend on ordering ties.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        if self.d != other.d || self.atoms.len() != other.atoms.len() {
            return false;
        }
        let close = |a: &Atom, b: &Atom| {
            (a.w - b.w).abs() <= tol
                && a.s
                    .coords()
                    .iter()
                    .zip(b.s.coords())
                    .all(|(x, y)| (x - y).abs() <= tol)
                && a.m
                    .iter()
                    .zip(&b.m)
                    .all(|(x, y)| (x - y).abs() <= tol * x.abs().max(1.0))
        };
        if self
            .atoms
            .iter()
            .zip(&other.atoms)
            .all(|(a, b)| close(a, b))
        {
            return true;
        }
        let mut used = vec![false; other.atoms.len()];
        self.atoms.iter().all(|a| {
            match other
                .atoms
                .iter()
                .enumerate()
                .find(|(j, b)| !used[*j] && close(a, b))
            {
                Some((j, _)) => {
                    used[j] = true;
                    true
                }
                None => false,
            }
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(AtomMeasureDoc {
            d: self.d,
            atoms: self.atoms.clone(),
        })
        .expect("atom measure serializes")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("atom measure serializes")
    }

    /// Parses `{"d": .., "atoms": [{"s": [..], "m": [..], "w": ..}]}` and
    /// canonicalizes on load.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: AtomMeasureDoc = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("atom measure JSON: {e}")))?;
        Self::canonicalize(doc.d, doc.atoms)
    }
}

type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type SphereSampler = Arc<dyn Fn(&mut Stream) -> UnitVector + Send + Sync>;

/// A probability measure on the sphere.
///
/// `Density` is relative to the normalized surface measure (so the uniform law
/// has density 1) and carries an upper bound used for rejection sampling.
/// `Sampler` wraps laws only available through a generator, such as mixtures.
#[derive(Clone)]
pub enum SpectralMeasure {
    Atomic {
        d: usize,
        atoms: Vec<(UnitVector, f64)>,
        cumulative: Vec<f64>,
    },
    Uniform {
        d: usize,
    },
    Density {
        d: usize,
        density: DensityFn,
        bound: f64,
    },
    Sampler {
        d: usize,
        sampler: SphereSampler,
    },
}

impl fmt::Debug for SpectralMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Atomic { d, atoms, .. } => f
                .debug_struct("Atomic")
                .field("d", d)
                .field("atoms", atoms)
                .finish(),
            Self::Uniform { d } => f.debug_struct("Uniform").field("d", d).finish(),
            Self::Density { d, bound, .. } => f
                .debug_struct("Density")
                .field("d", d)
                .field("bound", bound)
                .finish(),
            Self::Sampler { d, .. } => f.debug_struct("Sampler").field("d", d).finish(),
        }
    }
}

impl SpectralMeasure {
    pub fn atomic(atoms: Vec<(UnitVector, f64)>) -> Result<Self> {
        let d = atoms
            .first()
            .map(|(u, _)| u.dim())
            .ok_or_else(|| Error::BadWeights("spectral measure needs at least one atom".into()))?;
        if let Some((u, _)) = atoms.iter().find(|(u, _)| u.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: u.dim(),
            });
        }
        if atoms.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::BadWeights("negative spectral weight".into()));
        }
        let sum: f64 = atoms.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > UNIT_TOL {
            return Err(Error::BadWeights(format!("spectral weights sum to {sum}")));
        }
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|(_, w)| {
                acc += w / sum;
                acc
            })
            .collect();
        Ok(Self::Atomic {
            d,
            atoms,
            cumulative,
        })
    }

    /// Equal mass on `+1` and `-1` in dimension one.
    pub fn symmetric_signs() -> Self {
        Self::atomic(vec![
            (UnitVector(vec![-1.0]), 0.5),
            (UnitVector(vec![1.0]), 0.5),
        ])
        .expect("valid atoms")
    }

    pub fn uniform(d: usize) -> Self {
        Self::Uniform { d }
    }

    pub fn density(
        d: usize,
        density: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        bound: f64,
    ) -> Self {
        Self::Density {
            d,
            density: Arc::new(density),
            bound,
        }
    }

    pub fn from_sampler(
        d: usize,
        sampler: impl Fn(&mut Stream) -> UnitVector + Send + Sync + 'static,
    ) -> Self {
        Self::Sampler {
            d,
            sampler: Arc::new(sampler),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Atomic { d, .. }
            | Self::Uniform { d }
            | Self::Density { d, .. }
            | Self::Sampler { d, .. } => *d,
        }
    }

    pub fn atoms(&self) -> Option<&[(UnitVector, f64)]> {
        match self {
            Self::Atomic { atoms, .. } => Some(atoms),
            _ => None,
        }
    }

    /// Point mass of an atomic measure at `u` (0 when `u` is not an atom).
    pub fn mass_at(&self, u: &[f64]) -> Option<f64> {
        self.atoms().map(|atoms| {
            atoms
                .iter()
                .filter(|(v, _)| distance(v.coords(), u) <= ANGLE_MATCH_TOL)
                .map(|(_, w)| w)
                .sum()
        })
    }

    /// Density relative to the normalized surface measure, where defined.
    pub fn density_at(&self, u: &[f64]) -> Option<f64> {
        match self {
            Self::Uniform { .. } => Some(1.0),
            Self::Density { density, .. } => Some(density(u)),
            _ => None,
        }
    }

    pub fn sample(&self, rng: &mut Stream) -> Result<UnitVector> {
        match self {
            Self::Atomic {
                atoms, cumulative, ..
            } => {
                let u = rng::unit(rng);
                let i = cumulative.partition_point(|&c| c <= u).min(atoms.len() - 1);
                Ok(atoms[i].0.clone())
            }
            Self::Uniform { d } => Ok(uniform_sphere(*d, rng)),
            Self::Density { d, density, bound } => {
                const MAX_TRIES: usize = 1_000_000;
                for _ in 0..MAX_TRIES {
                    let u = uniform_sphere(*d, rng);
                    if rng::unit(rng) * bound < density(u.coords()) {
                        return Ok(u);
                    }
                }
                Err(Error::RejectionStall {
                    rate: 1.0 / MAX_TRIES as f64,
                })
            }
            Self::Sampler { sampler, .. } => Ok(sampler(rng)),
        }
    }
}

/// A fixed quadrature rule on `S^{d-1}` for the normalized surface measure:
/// exact on `S^0`, equiangular on the circle, a Fibonacci lattice on `S^2`, and
/// a fixed-seed Monte Carlo cloud beyond.
pub fn sphere_quadrature(d: usize) -> Vec<(Vec<f64>, f64)> {
    match d {
        0 => Vec::new(),
        1 => vec![(vec![-1.0], 0.5), (vec![1.0], 0.5)],
        2 => {
            let k = 4096;
            (0..k)
                .map(|i| {
                    let t = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / k as f64;
                    (vec![t.cos(), t.sin()], 1.0 / k as f64)
                })
                .collect()
        }
        3 => {
            let k = 8192;
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..k)
                .map(|i| {
                    let z = 1.0 - (2.0 * i as f64 + 1.0) / k as f64;
                    let r = (1.0 - z * z).sqrt();
                    let t = golden * i as f64;
                    (vec![r * t.cos(), r * t.sin(), z], 1.0 / k as f64)
                })
                .collect()
        }
        _ => {
            let k = 20_000;
            let mut rng = rng::master(0x5eed_5f3e);
            (0..k)
                .map(|_| (uniform_sphere(d, &mut rng).0, 1.0 / k as f64))
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uv(c: &[f64]) -> UnitVector {
        UnitVector::new(c.to_vec()).unwrap()
    }

    #[test]
    fn polar_examples() {
        let (u, r) = polar(&[3.0, 4.0]).unwrap();
        assert_eq!(u.coords(), &[0.6, 0.8]);
        assert_eq!(r, 5.0);
        let (u, r) = polar(&[1.0]).unwrap();
        assert_eq!(u.coords(), &[1.0]);
        assert_eq!(r, 1.0);
        assert_eq!(polar(&[0.0, 0.0]), Err(Error::ZeroVector));
    }

    #[test]
    fn pareto_examples() {
        let a1 = TailIndex::new(1.0).unwrap();
        let a2 = TailIndex::new(2.0).unwrap();
        assert_eq!(sample_pareto(a1, 0.5).unwrap(), 2.0);
        assert_eq!(sample_pareto(a2, 0.25).unwrap(), 2.0);
        assert_eq!(sample_pareto(a1, 1.0).unwrap(), 1.0);
        assert!(matches!(sample_pareto(a1, 0.0), Err(Error::DomainError(_))));
        assert!(matches!(sample_pareto(a1, 1.5), Err(Error::DomainError(_))));
    }

    #[test]
    fn tail_index_rejects_nonpositive() {
        assert!(TailIndex::new(0.0).is_err());
        assert!(TailIndex::new(-1.0).is_err());
        assert!(TailIndex::new(f64::NAN).is_err());
    }

    #[test]
    fn unit_vector_checks_norm() {
        assert!(UnitVector::new(vec![0.6, 0.8]).is_ok());
        assert!(UnitVector::new(vec![1.0, 1.0]).is_err());
        assert!(UnitVector::new(vec![]).is_err());
    }

    #[test]
    fn canonicalize_merges_duplicates() {
        let p = AtomMeasure::canonicalize(
            1,
            vec![
                Atom::new(uv(&[1.0]), vec![2.0], 0.3),
                Atom::new(uv(&[1.0]), vec![2.0], 0.2),
                Atom::new(uv(&[1.0]), vec![0.0], 0.5),
            ],
        )
        .unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.atoms()[0].m, vec![0.0]);
        assert_eq!(p.atoms()[0].w, 0.5);
        assert_eq!(p.atoms()[1].m, vec![2.0]);
        assert_eq!(p.atoms()[1].w, 0.5);
    }

    #[test]
    fn canonicalize_single_atom_unchanged() {
        let p = AtomMeasure::dirac(uv(&[0.6, 0.8]), vec![1.0, -2.0]).unwrap();
        assert_eq!(
            p.atoms(),
            &[Atom::new(uv(&[0.6, 0.8]), vec![1.0, -2.0], 1.0)]
        );
    }

    #[test]
    fn canonicalize_rejects_bad_weights() {
        let r = AtomMeasure::canonicalize(
            1,
            vec![
                Atom::new(uv(&[1.0]), vec![1.0], 0.4),
                Atom::new(uv(&[-1.0]), vec![1.0], 0.4),
            ],
        );
        assert!(matches!(r, Err(Error::BadWeights(_))));
        let r = AtomMeasure::canonicalize(
            1,
            vec![
                Atom::new(uv(&[1.0]), vec![1.0], 1.2),
                Atom::new(uv(&[-1.0]), vec![1.0], -0.2),
            ],
        );
        assert!(matches!(r, Err(Error::BadWeights(_))));
    }

    #[test]
    fn canonicalize_rejects_dimension_mismatch() {
        let r = AtomMeasure::canonicalize(2, vec![Atom::new(uv(&[1.0, 0.0]), vec![1.0], 1.0)]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn canonicalize_merges_after_rounding() {
        let p = AtomMeasure::canonicalize(
            1,
            vec![
                Atom::new(uv(&[1.0]), vec![0.1 + 0.2], 0.5),
                Atom::new(uv(&[1.0]), vec![0.3], 0.5),
            ],
        )
        .unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn json_roundtrip_canonicalizes() {
        let text = r#"{"d": 1, "atoms": [
            {"s": [1.0], "m": [2.0], "w": 0.25},
            {"s": [1.0], "m": [2.0], "w": 0.25},
            {"s": [-1.0], "m": [0.0], "w": 0.5}]}"#;
        let p = AtomMeasure::from_json_str(text).unwrap();
        assert_eq!(p.len(), 2);
        let back = AtomMeasure::from_json_str(&p.to_json_string()).unwrap();
        assert_eq!(back, p);
        assert!(AtomMeasure::from_json_str(
            r#"{"d": 1, "atoms": [{"s": [2.0], "m": [0.0], "w": 1.0}]}"#
        )
        .is_err());
    }

    #[test]
    fn sphere_marginal_groups_by_angle() {
        let p = AtomMeasure::canonicalize(
            1,
            vec![
                Atom::new(uv(&[1.0]), vec![0.5], 0.5),
                Atom::new(uv(&[1.0]), vec![0.0], 0.25),
                Atom::new(uv(&[-1.0]), vec![0.0], 0.25),
            ],
        )
        .unwrap();
        let marg = p.sphere_marginal();
        assert_eq!(marg.len(), 2);
        assert_eq!(marg[0], (uv(&[-1.0]), 0.25));
        assert_eq!(marg[1], (uv(&[1.0]), 0.75));
    }

    #[test]
    fn spectral_atomic_sampling_frequencies() {
        let sm = SpectralMeasure::atomic(vec![(uv(&[1.0]), 0.25), (uv(&[-1.0]), 0.75)]).unwrap();
        let mut rng = rng::master(11);
        let n = 100_000;
        let plus = (0..n)
            .filter(|_| sm.sample(&mut rng).unwrap().coords()[0] > 0.0)
            .count();
        let p = plus as f64 / n as f64;
        // 0.99 normal band around 0.25
        assert!((p - 0.25).abs() < 2.576 * (0.25f64 * 0.75 / n as f64).sqrt());
    }

    #[test]
    fn density_rejection_sampler_respects_density() {
        // density 1 + x on the circle, bounded by 2
        let sm = SpectralMeasure::density(2, |u| 1.0 + u[0], 2.0);
        let mut rng = rng::master(5);
        let n = 50_000;
        let mean_x: f64 = (0..n)
            .map(|_| sm.sample(&mut rng).unwrap().coords()[0])
            .sum::<f64>()
            / n as f64;
        // E[x] = ∫ x (1 + x) dσ = 1/2
        assert!((mean_x - 0.5).abs() < 0.02, "{mean_x}");
    }

    #[test]
    fn quadrature_weights_sum_to_one_and_integrate_moments() {
        for d in 1..=4 {
            let q = sphere_quadrature(d);
            let total: f64 = q.iter().map(|(_, w)| w).sum();
            assert!((total - 1.0).abs() < 1e-12);
            // E[x_1^2] = 1/d under the uniform law
            let m2: f64 = q.iter().map(|(p, w)| w * p[0] * p[0]).sum();
            let tol = if d <= 3 { 1e-4 } else { 2e-2 };
            assert!((m2 - 1.0 / d as f64).abs() < tol, "d={d} m2={m2}");
        }
    }
}
