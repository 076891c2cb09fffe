//! Admissibility, adjoint measures and the adjoint calculus on atomic measures.
//!
//! For `P` on `S^{d-1} x R^d` and `alpha > 0`, `P` is admissible when for
//! every Borel set `S` of the sphere
//!
//! ```text
//! ∫ 1_S(m/|m|) |m|^alpha P(ds, dm)  <=  P(S x R^d)        (m != 0)
//! ```
//!
//! and its adjoint `P*` moves every atom `(s, m)` with `m != 0` to
//! `(m/|m|, s/|m|)` with weight multiplied by `|m|^alpha`, then tops up each
//! sphere point `u` with a zero-atom `(u, 0)` carrying the mass that keeps the
//! sphere marginal unchanged. On atomic measures every step is a finite sum,
//! so the involution `P** = P` can be checked to rounding error.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{
    distance, norm, polar, uniform_sphere, Atom, AtomMeasure, TailIndex, UnitVector,
    ANGLE_MATCH_TOL,
};
use crate::rng::{self, Stream};

/// Slack tolerance for measures built in memory.
pub const EXACT_SLACK_TOL: f64 = 1e-12;
/// Slack tolerance for measures that went through a JSON round trip.
pub const JSON_SLACK_TOL: f64 = 1e-9;

/// Outcome of [`is_admissible`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    /// Minimum of `P(S x R^d) - ∫ 1_S(m/|m|) |m|^alpha dP` over the tested sets.
    pub worst_set_slack: f64,
    /// `∫ |m|^alpha dP`.
    pub alpha_moment: f64,
}

/// Mass bookkeeping per sphere point: the sphere atoms of `P` followed by any
/// pushed directions that land outside them.
struct AngleLedger {
    angles: Vec<UnitVector>,
    marginal: Vec<f64>,
    pushed: Vec<f64>,
}

impl AngleLedger {
    fn build(p: &AtomMeasure, alpha: TailIndex) -> Self {
        let (angles, marginal): (Vec<_>, Vec<_>) = p.sphere_marginal().into_iter().unzip();
        let mut ledger = Self {
            pushed: vec![0.0; angles.len()],
            angles,
            marginal,
        };
        for a in p.atoms().iter().filter(|a| !a.is_zero_atom()) {
            let (dir, r) = polar(&a.m).expect("nonzero atom");
            let i = ledger.index_of(&dir);
            ledger.pushed[i] += a.w * r.powf(alpha.value());
        }
        ledger
    }

    /// Index of the sphere point matching `dir`, registering it if new.
    fn index_of(&mut self, dir: &UnitVector) -> usize {
        match self.find(dir.coords()) {
            Some(i) => i,
            None => {
                self.angles.push(dir.clone());
                self.marginal.push(0.0);
                self.pushed.push(0.0);
                self.angles.len() - 1
            }
        }
    }

    fn find(&self, u: &[f64]) -> Option<usize> {
        self.angles
            .iter()
            .position(|v| distance(v.coords(), u) <= ANGLE_MATCH_TOL)
    }

    fn slacks(&self) -> impl Iterator<Item = f64> + '_ {
        self.marginal.iter().zip(&self.pushed).map(|(m, p)| m - p)
    }
}

fn check_canonical(p: &AtomMeasure) -> Result<()> {
    let sum = p.total_mass();
    if (sum - 1.0).abs() > EXACT_SLACK_TOL {
        return Err(Error::NotCanonical { sum });
    }
    Ok(())
}

/// Admissibility of an atomic measure with the in-memory tolerance.
pub fn is_admissible(p: &AtomMeasure, alpha: TailIndex) -> Result<AdmissibilityReport> {
    is_admissible_with_tol(p, alpha, EXACT_SLACK_TOL)
}

/// Admissibility with an explicit slack tolerance.
///
/// For atomic `P` the supremum over Borel sets is attained on sets of sphere
/// points, so the singletons `{u}` (and the union of all violating ones) are
/// the only sets that need testing.
pub fn is_admissible_with_tol(
    p: &AtomMeasure,
    alpha: TailIndex,
    tol: f64,
) -> Result<AdmissibilityReport> {
    check_canonical(p)?;
    let ledger = AngleLedger::build(p, alpha);
    let negative: f64 = ledger.slacks().filter(|s| *s < 0.0).sum();
    let worst_set_slack = if negative < 0.0 {
        negative
    } else {
        ledger.slacks().fold(f64::INFINITY, f64::min)
    };
    Ok(AdmissibilityReport {
        admissible: worst_set_slack >= -tol,
        worst_set_slack,
        alpha_moment: p.alpha_moment(alpha),
    })
}

/// The adjoint measure `P*`.
pub fn adjoint(p: &AtomMeasure, alpha: TailIndex) -> Result<AtomMeasure> {
    adjoint_with_tol(p, alpha, EXACT_SLACK_TOL)
}

/// The adjoint with an explicit slack tolerance; zero-atom masses within
/// `tol` of zero are dropped.
pub fn adjoint_with_tol(p: &AtomMeasure, alpha: TailIndex, tol: f64) -> Result<AtomMeasure> {
    let report = is_admissible_with_tol(p, alpha, tol)?;
    if !report.admissible {
        return Err(Error::NotAdmissible {
            alpha: alpha.value(),
            slack: report.worst_set_slack,
        });
    }
    let mut ledger = AngleLedger::build(p, alpha);
    let mut out = Vec::with_capacity(p.len() + ledger.angles.len());
    for a in p.atoms().iter().filter(|a| !a.is_zero_atom()) {
        let (dir, r) = polar(&a.m).expect("nonzero atom");
        // Snap onto the stored sphere point so that marginals agree exactly.
        let i = ledger.index_of(&dir);
        let u = ledger.angles[i].clone();
        out.push(Atom::new(
            u,
            a.s.scale(1.0 / r),
            a.w * r.powf(alpha.value()),
        ));
    }
    let d = p.dim();
    for (u, slack) in ledger.angles.iter().zip(ledger.slacks()) {
        if slack > tol {
            out.push(Atom::new(u.clone(), vec![0.0; d], slack));
        }
    }
    AtomMeasure::canonicalize(d, out)
}

/// `∫ f(s*, m*) P*(ds*, dm*)` over `m* != 0`, evaluated on `P` as
/// `∫ f(m/|m|, s/|m|) |m|^alpha P(ds, dm)`.
pub fn adjoint_expectation<F>(f: F, p: &AtomMeasure, alpha: TailIndex) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let report = is_admissible(p, alpha)?;
    if !report.admissible {
        return Err(Error::NotAdmissible {
            alpha: alpha.value(),
            slack: report.worst_set_slack,
        });
    }
    Ok(p.atoms()
        .iter()
        .filter(|a| !a.is_zero_atom())
        .map(|a| {
            let r = norm(&a.m);
            let dir: Vec<f64> = a.m.iter().map(|x| x / r).collect();
            a.w * r.powf(alpha.value()) * f(&dir, &a.s.scale(1.0 / r))
        })
        .sum())
}

/// A measure together with its claimed adjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPair {
    pub p: AtomMeasure,
    pub p_star: AtomMeasure,
    pub alpha: TailIndex,
}

impl AdjointPair {
    pub fn new(p: AtomMeasure, p_star: AtomMeasure, alpha: TailIndex) -> Self {
        Self { p, p_star, alpha }
    }

    /// Pairs `p` with its computed adjoint.
    pub fn from_measure(p: AtomMeasure, alpha: TailIndex) -> Result<Self> {
        let p_star = adjoint(&p, alpha)?;
        Ok(Self { p, p_star, alpha })
    }
}

/// Tolerance used by [`check_pair`] when comparing measures.
pub const PAIR_TOL: f64 = 1e-10;

/// Sphere marginals agree: same angles, masses within [`EXACT_SLACK_TOL`].
pub fn same_sphere_marginal(p: &AtomMeasure, q: &AtomMeasure) -> bool {
    let (mp, mq) = (p.sphere_marginal(), q.sphere_marginal());
    mp.len() == mq.len()
        && mp.iter().all(|(u, w)| {
            mq.iter().any(|(v, x)| {
                distance(u.coords(), v.coords()) <= ANGLE_MATCH_TOL
                    && (w - x).abs() <= EXACT_SLACK_TOL
            })
        })
}

/// Verifies marginal equality, both adjoint directions and admissibility.
pub fn check_pair(pair: &AdjointPair) -> bool {
    let AdjointPair { p, p_star, alpha } = pair;
    if p.dim() != p_star.dim() || !same_sphere_marginal(p, p_star) {
        return false;
    }
    let admissible = |m: &AtomMeasure| {
        is_admissible(m, *alpha)
            .map(|r| r.admissible)
            .unwrap_or(false)
    };
    if !admissible(p) || !admissible(p_star) {
        return false;
    }
    let forward = adjoint(p, *alpha)
        .map(|a| a.approx_eq(p_star, PAIR_TOL))
        .unwrap_or(false);
    let backward = adjoint(p_star, *alpha)
        .map(|a| a.approx_eq(p, PAIR_TOL))
        .unwrap_or(false);
    forward && backward
}

/// Random admissible atomic measure, used by property tests and the
/// acceptance battery.
///
/// Construction: pick up to four sphere points (`±1` when `d = 1`), draw
/// `n_atoms` atoms whose `s` is one of those points and whose `m` is either 0
/// (probability 1/4) or `r·u` with `u` one of the points already used as an
/// `s` and `r` log-uniform on `[0.1, 3]`. Weights are normalized uniforms.
/// Finally every `m` is multiplied by the common factor
/// `c = (theta · min_u marginal(u)/pushed(u))^{1/alpha}` with `theta = 1`
/// (boundary case) with probability 1/5 and uniform on `[0.3, 1)` otherwise.
pub fn random_admissible(
    d: usize,
    n_atoms: usize,
    alpha: TailIndex,
    rng: &mut Stream,
) -> AtomMeasure {
    assert!(d >= 1 && n_atoms >= 1);
    let angles: Vec<UnitVector> = if d == 1 {
        let both = vec![
            UnitVector::new(vec![-1.0]).unwrap(),
            UnitVector::new(vec![1.0]).unwrap(),
        ];
        match rng.random_range(0..3) {
            0 => vec![both[0].clone()],
            1 => vec![both[1].clone()],
            _ => both,
        }
    } else {
        let k = rng.random_range(1..=4);
        (0..k).map(|_| uniform_sphere(d, rng)).collect()
    };
    let s_idx: Vec<usize> = (0..n_atoms)
        .map(|_| rng.random_range(0..angles.len()))
        .collect();
    let mut used: Vec<usize> = s_idx.clone();
    used.sort_unstable();
    used.dedup();

    let weights: Vec<f64> = (0..n_atoms).map(|_| 0.05 + rng::unit(rng)).collect();
    let total: f64 = weights.iter().sum();

    // (direction index, radius) or None for a zero atom
    let targets: Vec<Option<(usize, f64)>> = (0..n_atoms)
        .map(|_| {
            if rng.random_bool(0.25) {
                None
            } else {
                let u = used[rng.random_range(0..used.len())];
                let r = (0.1f64.ln() + rng::unit(rng) * (30f64).ln()).exp();
                Some((u, r))
            }
        })
        .collect();

    let a = alpha.value();
    let mut marginal = vec![0.0; angles.len()];
    let mut pushed = vec![0.0; angles.len()];
    for i in 0..n_atoms {
        let w = weights[i] / total;
        marginal[s_idx[i]] += w;
        if let Some((u, r)) = targets[i] {
            pushed[u] += w * r.powf(a);
        }
    }
    let ratio = marginal
        .iter()
        .zip(&pushed)
        .filter(|(_, p)| **p > 0.0)
        .map(|(m, p)| m / p)
        .fold(f64::INFINITY, f64::min);
    let theta = if rng.random_bool(0.2) {
        1.0
    } else {
        0.3 + 0.7 * rng::unit(rng)
    };
    let c = if ratio.is_finite() {
        (theta * ratio).powf(1.0 / a)
    } else {
        1.0
    };

    let atoms = (0..n_atoms)
        .map(|i| {
            let m = match targets[i] {
                Some((u, r)) => angles[u].scale(c * r),
                None => vec![0.0; d],
            };
            Atom::new(angles[s_idx[i]].clone(), m, weights[i] / total)
        })
        .collect();
    AtomMeasure::canonicalize(d, atoms).expect("generator produces valid weights")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uv(c: &[f64]) -> UnitVector {
        UnitVector::new(c.to_vec()).unwrap()
    }

    fn alpha(a: f64) -> TailIndex {
        TailIndex::new(a).unwrap()
    }

    fn half_half() -> AtomMeasure {
        AtomMeasure::canonicalize(
            1,
            vec![
                Atom::new(uv(&[1.0]), vec![0.5], 0.5),
                Atom::new(uv(&[1.0]), vec![0.0], 0.5),
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_atom_pushing_too_much_is_inadmissible() {
        let p = AtomMeasure::dirac(uv(&[1.0]), vec![2.0]).unwrap();
        let r = is_admissible(&p, alpha(1.0)).unwrap();
        assert!(!r.admissible);
        assert_eq!(r.worst_set_slack, -1.0);
        assert_eq!(r.alpha_moment, 2.0);
        assert!(matches!(
            adjoint(&p, alpha(1.0)),
            Err(Error::NotAdmissible { .. })
        ));
    }

    #[test]
    fn zero_atom_is_admissible_for_any_alpha() {
        for a in [0.3, 1.0, 4.0] {
            let p = AtomMeasure::dirac(uv(&[0.6, -0.8]), vec![0.0, 0.0]).unwrap();
            let r = is_admissible(&p, alpha(a)).unwrap();
            assert!(r.admissible);
            assert_eq!(r.alpha_moment, 0.0);
            assert_eq!(adjoint(&p, alpha(a)).unwrap(), p);
        }
    }

    #[test]
    fn two_atom_example() {
        let p = half_half();
        let r = is_admissible(&p, alpha(1.0)).unwrap();
        assert!(r.admissible);
        assert_eq!(r.alpha_moment, 0.25);

        let star = adjoint(&p, alpha(1.0)).unwrap();
        let expected = AtomMeasure::canonicalize(
            1,
            vec![
                Atom::new(uv(&[1.0]), vec![2.0], 0.25),
                Atom::new(uv(&[1.0]), vec![0.0], 0.75),
            ],
        )
        .unwrap();
        assert_eq!(star, expected);
        assert_eq!(adjoint(&star, alpha(1.0)).unwrap(), p);
    }

    #[test]
    fn unit_atom_is_self_adjoint() {
        for a in [0.5, 1.0, 2.0, 7.0] {
            let p = AtomMeasure::dirac(uv(&[1.0]), vec![1.0]).unwrap();
            assert_eq!(adjoint(&p, alpha(a)).unwrap(), p);
        }
    }

    #[test]
    fn pushed_mass_off_the_marginal_support_is_inadmissible() {
        // s = +1 only, but m points to -1 where P has no mass.
        let p = AtomMeasure::canonicalize(
            1,
            vec![
                Atom::new(uv(&[1.0]), vec![-0.1], 0.5),
                Atom::new(uv(&[1.0]), vec![0.0], 0.5),
            ],
        )
        .unwrap();
        let r = is_admissible(&p, alpha(1.0)).unwrap();
        assert!(!r.admissible);
        assert!((r.worst_set_slack + 0.05).abs() < 1e-15);
    }

    #[test]
    fn adjoint_expectation_examples() {
        let one = |_: &[f64], _: &[f64]| 1.0;
        assert_eq!(
            adjoint_expectation(one, &half_half(), alpha(1.0)).unwrap(),
            0.25
        );

        let p = AtomMeasure::dirac(uv(&[1.0]), vec![1.0]).unwrap();
        let a = alpha(2.0);
        let f = |_: &[f64], m: &[f64]| norm(m).powf(2.0);
        assert_eq!(adjoint_expectation(f, &p, a).unwrap(), 1.0);

        let z = AtomMeasure::dirac(uv(&[1.0]), vec![0.0]).unwrap();
        assert_eq!(
            adjoint_expectation(|_: &[f64], _: &[f64]| 3.0, &z, a).unwrap(),
            0.0
        );
    }

    #[test]
    fn adjoint_expectation_matches_integral_against_adjoint() {
        let mut rng = rng::master(17);
        let f = |s: &[f64], m: &[f64]| {
            (s[0] + 2.0 * m[0]).sin() + m.iter().map(|x| x.abs()).sum::<f64>()
        };
        for d in 1..=3 {
            for _ in 0..50 {
                let a = alpha(1.5);
                let p = random_admissible(d, 8, a, &mut rng);
                let star = adjoint(&p, a).unwrap();
                let direct: f64 = star
                    .atoms()
                    .iter()
                    .filter(|x| !x.is_zero_atom())
                    .map(|x| x.w * f(x.s.coords(), &x.m))
                    .sum();
                let via = adjoint_expectation(f, &p, a).unwrap();
                assert!((direct - via).abs() < 1e-12, "{direct} vs {via}");
            }
        }
    }

    #[test]
    fn check_pair_examples() {
        let a = alpha(1.0);
        assert!(check_pair(
            &AdjointPair::from_measure(half_half(), a).unwrap()
        ));

        let q = AtomMeasure::canonicalize(
            1,
            vec![
                Atom::new(uv(&[-1.0]), vec![0.0], 0.5),
                Atom::new(uv(&[1.0]), vec![0.0], 0.5),
            ],
        )
        .unwrap();
        assert!(!check_pair(&AdjointPair::new(half_half(), q, a)));

        let unit = AtomMeasure::dirac(uv(&[1.0]), vec![1.0]).unwrap();
        assert!(check_pair(&AdjointPair::new(unit.clone(), unit, a)));
    }

    #[test]
    fn full_moment_leaves_no_zero_atoms() {
        // |m|^alpha integrates to one: adjoint has no zero atoms
        let p = AtomMeasure::canonicalize(
            1,
            vec![
                Atom::new(uv(&[1.0]), vec![0.5], 0.5),
                Atom::new(uv(&[1.0]), vec![1.5], 0.5),
            ],
        )
        .unwrap();
        let a = alpha(1.0);
        assert_eq!(p.alpha_moment(a), 1.0);
        let star = adjoint(&p, a).unwrap();
        assert!(star.atoms().iter().all(|x| !x.is_zero_atom()));
        assert!((star.total_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn json_tolerance_admits_rounding_noise() {
        let p = AtomMeasure::canonicalize(1, vec![Atom::new(uv(&[1.0]), vec![1.0 + 1e-10], 1.0)])
            .unwrap();
        assert!(!is_admissible(&p, alpha(1.0)).unwrap().admissible);
        assert!(
            is_admissible_with_tol(&p, alpha(1.0), JSON_SLACK_TOL)
                .unwrap()
                .admissible
        );
    }
}
