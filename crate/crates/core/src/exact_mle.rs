//! Closed-form maximum likelihood estimates on every stratum of the 2x2x2
//! two-class model, and the certified global search over all of them.
//!
//! Each stratum closure is a log-linear model with a rational (or, for the
//! four-dimensional `S4a` strata, quadratic) estimator. The estimators are
//! written for one representative per class; any other stratum is handled by
//! mapping the counts onto the representative with a table symmetry and
//! mapping the estimate back.
//!
//! The global estimate is the best candidate that actually lies in the
//! model: it must be a distribution, pass the membership test, and put
//! positive mass on every observed cell.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::strata::{enumerate_strata, poset_leq, StratumClass, StratumDescriptor};
use crate::symmetry::{as_array, cell};
use crate::tensor::{is_member_rank2, CountTensor, ProbTensor};

/// Supermodularity slack allowed when validating candidates.
pub const CANDIDATE_MEMBERSHIP_TOL: f64 = 1e-9;

/// Coordinates within this distance outside `[0, 1]` are clamped.
pub const SIMPLEX_SLACK: f64 = 1e-12;

/// Discriminants within this distance of zero are treated as zero.
pub const DISCRIMINANT_TOL: f64 = 1e-12;

/// Relative log-likelihood difference below which candidates tie.
const TIE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateNote {
    /// A margin in a denominator vanished; the estimator is undefined.
    ZeroDenominator,
    /// The quadratic had no real root.
    NegativeDiscriminant,
    /// A tiny negative discriminant was clamped to zero.
    DiscriminantClamped,
    /// A root produced a coordinate outside `[0, 1]` and was discarded.
    RootOutsideSimplex,
    /// The candidate fails the supermodularity test.
    NotInModel,
    /// The candidate puts zero mass on an observed cell.
    SupportViolation,
    /// Skipped because a stratum above it already holds a valid candidate.
    Pruned,
}

/// One critical point of the likelihood on a stratum closure.
#[derive(Clone, Debug, Serialize)]
pub struct MleResult {
    pub estimate: Option<ProbTensor>,
    pub loglik: f64,
    pub stratum: String,
    pub class: StratumClass,
    pub dim: usize,
    pub valid: bool,
    pub notes: Vec<CandidateNote>,
}

impl MleResult {
    fn from_estimate(u: &CountTensor, s: &StratumDescriptor, p: ProbTensor) -> Self {
        let loglik = crate::tensor::log_likelihood(&p, u).expect("same shape");
        MleResult {
            estimate: Some(p),
            loglik,
            stratum: s.id.clone(),
            class: s.class,
            dim: s.dim,
            valid: false,
            notes: Vec::new(),
        }
    }

    fn failed(s: &StratumDescriptor, note: CandidateNote) -> Self {
        MleResult {
            estimate: None,
            loglik: f64::NEG_INFINITY,
            stratum: s.id.clone(),
            class: s.class,
            dim: s.dim,
            valid: false,
            notes: vec![note],
        }
    }

    /// Checks the three validity conditions and records why a candidate
    /// fails.
    fn validate(mut self, u: &CountTensor) -> Self {
        let Some(p) = &self.estimate else {
            return self;
        };
        let member = is_member_rank2(p, CANDIDATE_MEMBERSHIP_TOL);
        let support = p
            .entries()
            .iter()
            .zip(u.entries())
            .all(|(&pi, &ui)| ui == 0 || pi > 0.0);
        if !member {
            self.notes.push(CandidateNote::NotInModel);
        }
        if !support {
            self.notes.push(CandidateNote::SupportViolation);
        }
        self.valid = member && support;
        self
    }
}

/// Outcome of the search over all strata.
#[derive(Clone, Debug, Serialize)]
pub struct GlobalMle {
    pub estimate: ProbTensor,
    pub loglik: f64,
    pub stratum: String,
    pub class: StratumClass,
    pub dim: usize,
    /// Two-way margins of the data have a zero; the estimate is best effort.
    pub degenerate_input: bool,
    /// Every candidate, in catalog order (descending dimension, then id).
    pub candidates: Vec<MleResult>,
}

type Table = [f64; 8];

struct Margins {
    u: Table,
    n: f64,
}

impl Margins {
    fn new(u: Table) -> Self {
        Margins { n: u.iter().sum(), u }
    }

    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.u[cell(i, j, k)]
    }

    fn ij(&self, i: usize, j: usize) -> f64 {
        self.at(i, j, 0) + self.at(i, j, 1)
    }

    fn ik(&self, i: usize, k: usize) -> f64 {
        self.at(i, 0, k) + self.at(i, 1, k)
    }

    fn jk(&self, j: usize, k: usize) -> f64 {
        self.at(0, j, k) + self.at(1, j, k)
    }

    fn i(&self, i: usize) -> f64 {
        self.ij(i, 0) + self.ij(i, 1)
    }

    fn j(&self, j: usize) -> f64 {
        self.jk(j, 0) + self.jk(j, 1)
    }

    fn k(&self, k: usize) -> f64 {
        self.jk(0, k) + self.jk(1, k)
    }
}

fn table_from(f: impl Fn(usize, usize, usize) -> f64) -> Table {
    let mut t = [0.0; 8];
    for (c, slot) in t.iter_mut().enumerate() {
        *slot = f(c >> 2 & 1, c >> 1 & 1, c & 1);
    }
    t
}

// Representatives. Levels are 0-based: `m.at(0, 0, 0)` is u_111.

fn interior_canonical(m: &Margins) -> Table {
    m.u.map(|x| x / m.n)
}

/// Facet 1: X2 and X3 independent given X1 = 1.
fn codim1_canonical(m: &Margins) -> Option<Table> {
    let slice = m.i(0);
    if slice <= 0.0 {
        return None;
    }
    Some(table_from(|i, j, k| {
        if i == 0 {
            m.ij(0, j) * m.ik(0, k) / (slice * m.n)
        } else {
            m.at(i, j, k) / m.n
        }
    }))
}

/// Facets 1 and 3: X3 independent of (X1, X2) off the cells (2, 2, .).
fn s5a_canonical(m: &Margins) -> Option<Table> {
    let rest = m.n - m.at(1, 1, 0) - m.at(1, 1, 1);
    if rest <= 0.0 {
        return None;
    }
    Some(table_from(|i, j, k| {
        if i == 1 && j == 1 {
            m.at(1, 1, k) / m.n
        } else {
            m.ij(i, j) * (m.k(k) - m.at(1, 1, k)) / (rest * m.n)
        }
    }))
}

/// Facets 1 and 2: X2 and X3 independent given X1.
fn s5b_canonical(m: &Margins) -> Option<Table> {
    if m.i(0) <= 0.0 || m.i(1) <= 0.0 {
        return None;
    }
    Some(table_from(|i, j, k| m.ij(i, j) * m.ik(i, k) / (m.i(i) * m.n)))
}

/// Facets 1, 2, 3, 4: X3 independent of (X1, X2).
fn s4b_canonical(m: &Margins) -> Table {
    table_from(|i, j, k| m.ij(i, j) * m.k(k) / (m.n * m.n))
}

fn independence_canonical(m: &Margins) -> Table {
    table_from(|i, j, k| m.i(i) * m.j(j) * m.k(k) / (m.n * m.n * m.n))
}

/// Solutions of the quadratic estimator on facets 1, 3, 5, with notes on
/// discarded or clamped roots.
fn s4a_canonical(m: &Margins) -> (Vec<Table>, Vec<CandidateNote>) {
    let n = m.n;
    let u = |i, j, k| m.at(i, j, k);
    let alpha = (u(0, 0, 0) + u(0, 0, 1) - u(1, 1, 0)) / n;
    let beta = (u(0, 1, 0) + u(0, 1, 1) + u(1, 1, 0)) / n;
    let gamma = (u(1, 0, 0) + u(1, 0, 1) + u(1, 1, 0)) / n;
    let delta = (u(0, 0, 0) + u(0, 1, 0) + u(1, 0, 0) + u(1, 1, 0)) / n;
    let mut notes = Vec::new();
    if delta <= 0.0 || alpha + gamma <= 0.0 || alpha + beta <= 0.0 {
        notes.push(CandidateNote::ZeroDenominator);
        return (Vec::new(), notes);
    }

    // delta x^2 - b x + beta gamma delta = 0
    let b = (alpha + gamma) * (alpha + beta) + delta * (gamma + beta);
    let c = beta * gamma * delta;
    let mut disc = b * b - 4.0 * delta * c;
    if disc < -DISCRIMINANT_TOL {
        notes.push(CandidateNote::NegativeDiscriminant);
        return (Vec::new(), notes);
    }
    if disc < 0.0 {
        disc = 0.0;
        notes.push(CandidateNote::DiscriminantClamped);
    }
    // b > 0; the roots are q / delta and c / q
    let q = 0.5 * (b + disc.sqrt());
    let mut roots = vec![q / delta];
    if disc > 0.0 && q > 0.0 {
        roots.push(c / q);
    }
    roots.sort_by(f64::total_cmp);

    let p222 = u(1, 1, 1) / n;
    let mut out = Vec::new();
    for p221 in roots {
        // back-substitution, in this order
        let p212 = delta / (alpha + gamma) * p221 + (gamma - gamma * delta / (alpha + gamma));
        let p211 = -p212 - p221 + gamma;
        let p122 = delta / (alpha + beta) * p221 + (beta - beta * delta / (alpha + beta));
        let p121 = -p122 - p221 + beta;
        let p111 = -p121 - p211 - p221 + delta;
        let p112 = -p111 + p221 + alpha;
        let t = [p111, p112, p121, p122, p211, p212, p221, p222];
        if t.iter().any(|&x| !(-SIMPLEX_SLACK..=1.0 + SIMPLEX_SLACK).contains(&x)) {
            notes.push(CandidateNote::RootOutsideSimplex);
            continue;
        }
        out.push(t);
    }
    (out, notes)
}

fn to_prob(t: Table) -> Option<ProbTensor> {
    let clamped = t.map(|x| x.clamp(0.0, 1.0));
    ProbTensor::new(vec![2, 2, 2], clamped.to_vec()).ok()
}

fn require_binary3(u: &CountTensor) -> Result<()> {
    if u.dims() != [2, 2, 2] {
        return Err(Error::DimensionMismatch {
            expected: vec![2, 2, 2],
            found: u.dims().to_vec(),
        });
    }
    Ok(())
}

/// All candidate estimates on one stratum (two for some `S4a` data, none
/// when the estimator is undefined), each validated.
pub fn stratum_candidates(u: &CountTensor, s: &StratumDescriptor) -> Result<Vec<MleResult>> {
    require_binary3(u)?;
    let g = s.canonicalizer();
    let back = g.inverse();
    let counts: [u64; 8] = as_array(u.entries());
    let moved = g.apply_values(&counts.map(|x| x as f64));
    let m = Margins::new(moved);

    let (tables, mut notes): (Vec<Table>, Vec<CandidateNote>) = match s.class {
        StratumClass::Interior => (vec![interior_canonical(&m)], vec![]),
        StratumClass::Codim1 => single(codim1_canonical(&m)),
        StratumClass::S5a => single(s5a_canonical(&m)),
        StratumClass::S5b => single(s5b_canonical(&m)),
        StratumClass::S4a => s4a_canonical(&m),
        StratumClass::S4b => (vec![s4b_canonical(&m)], vec![]),
        StratumClass::Independence => (vec![independence_canonical(&m)], vec![]),
    };

    if tables.is_empty() {
        let note = notes.pop().unwrap_or(CandidateNote::ZeroDenominator);
        let mut r = MleResult::failed(s, note);
        r.notes.splice(0..0, notes);
        return Ok(vec![r]);
    }
    Ok(tables
        .into_iter()
        .map(|t| {
            let mapped = back.apply_values(&t);
            match to_prob(mapped) {
                Some(p) => {
                    let mut r = MleResult::from_estimate(u, s, p);
                    r.notes.extend(notes.iter().copied());
                    r.validate(u)
                }
                None => MleResult::failed(s, CandidateNote::RootOutsideSimplex),
            }
        })
        .collect())
}

fn single(t: Option<Table>) -> (Vec<Table>, Vec<CandidateNote>) {
    match t {
        Some(t) => (vec![t], vec![]),
        None => (vec![], vec![CandidateNote::ZeroDenominator]),
    }
}

fn by_class(u: &CountTensor, class: StratumClass, pick: impl Fn(&StratumDescriptor) -> bool) -> Result<Vec<MleResult>> {
    let s = enumerate_strata()
        .iter()
        .find(|s| s.class == class && pick(s))
        .ok_or_else(|| Error::invalid(format!("no {class:?} stratum with those labels")))?;
    stratum_candidates(u, s)
}

fn one(mut v: Vec<MleResult>) -> MleResult {
    v.remove(0)
}

/// Sample proportions.
pub fn mle_interior(u: &CountTensor) -> Result<MleResult> {
    by_class(u, StratumClass::Interior, |_| true).map(one)
}

/// Slice `slice` of `axis` has rank one.
pub fn mle_codim1(u: &CountTensor, axis: usize, slice: usize) -> Result<MleResult> {
    by_class(u, StratumClass::Codim1, |s| s.facets() == [(axis, slice)]).map(one)
}

/// Rank-one slices `(axes.0, slices.0)` and `(axes.1, slices.1)`.
pub fn mle_5a(u: &CountTensor, axes: (usize, usize), slices: (usize, usize)) -> Result<MleResult> {
    let mut want = vec![(axes.0, slices.0), (axes.1, slices.1)];
    want.sort_unstable();
    by_class(u, StratumClass::S5a, |s| s.facets() == want).map(one)
}

/// Both slices of `axis` have rank one.
pub fn mle_5b(u: &CountTensor, axis: usize) -> Result<MleResult> {
    by_class(u, StratumClass::S5b, |s| s.facets() == [(axis, 0), (axis, 1)]).map(one)
}

/// One rank-one slice per axis, at the given levels. Returns every real
/// root that stays in the simplex.
pub fn mle_4a(u: &CountTensor, slices: [usize; 3]) -> Result<Vec<MleResult>> {
    let want: Vec<(usize, usize)> = (0..3).map(|a| (a, slices[a])).collect();
    by_class(u, StratumClass::S4a, |s| s.facets() == want)
}

/// `axis` independent of the other two variables.
pub fn mle_4b(u: &CountTensor, axis: usize) -> Result<MleResult> {
    by_class(u, StratumClass::S4b, |s| {
        matches!(s.labels, crate::strata::StratumLabels::S4b { axis: a } if a == axis)
    })
    .map(one)
}

/// Product of the one-way margins.
pub fn mle_independence(u: &CountTensor) -> Result<MleResult> {
    by_class(u, StratumClass::Independence, |_| true).map(one)
}

/// Global maximum likelihood estimate over the model.
///
/// Strata are visited by decreasing dimension. Once a stratum yields a valid
/// candidate, the strata in its closure are pruned: the closure maximum
/// bounds them. Ties go to the higher-dimensional stratum, then to the
/// smaller id.
pub fn global_mle(u: &CountTensor) -> Result<GlobalMle> {
    require_binary3(u)?;
    let mut candidates: Vec<MleResult> = Vec::with_capacity(36);
    let mut validated: Vec<&StratumDescriptor> = Vec::new();
    for s in enumerate_strata() {
        if validated.iter().any(|v| poset_leq(s, v)) {
            candidates.push(MleResult::failed(s, CandidateNote::Pruned));
            continue;
        }
        let found = stratum_candidates(u, s)?;
        if found.iter().any(|c| c.valid) {
            validated.push(s);
        }
        candidates.extend(found);
    }

    let mut best: Option<&MleResult> = None;
    for c in candidates.iter().filter(|c| c.valid) {
        let better = match best {
            None => true,
            Some(b) => c.loglik > b.loglik + TIE_TOL * b.loglik.abs().max(1.0),
        };
        if better {
            best = Some(c);
        }
    }
    let best = best.ok_or_else(|| Error::Internal("no valid candidate on any stratum".into()))?;
    Ok(GlobalMle {
        estimate: best.estimate.clone().expect("valid candidates carry an estimate"),
        loglik: best.loglik,
        stratum: best.stratum.clone(),
        class: best.class,
        dim: best.dim,
        degenerate_input: u.is_degenerate(),
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strata::{residual, stratum};

    fn counts(v: [u64; 8]) -> CountTensor {
        CountTensor::new(vec![2, 2, 2], v.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn all_ones_give_uniform_everywhere() {
        let u = counts([1; 8]);
        let flat = [0.125; 8];
        assert!(close(mle_interior(&u).unwrap().estimate.unwrap().entries(), &flat, 1e-15));
        for a in 0..3 {
            for s in 0..2 {
                let r = mle_codim1(&u, a, s).unwrap();
                assert!(close(r.estimate.unwrap().entries(), &flat, 1e-15));
            }
            assert!(close(mle_5b(&u, a).unwrap().estimate.unwrap().entries(), &flat, 1e-15));
            assert!(close(mle_4b(&u, a).unwrap().estimate.unwrap().entries(), &flat, 1e-15));
        }
        let r = mle_5a(&u, (0, 1), (0, 0)).unwrap();
        assert!(close(r.estimate.unwrap().entries(), &flat, 1e-15));
        assert!(close(mle_independence(&u).unwrap().estimate.unwrap().entries(), &flat, 1e-15));
    }

    #[test]
    fn plug_in_interior() {
        let u = counts([2, 1, 1, 1, 1, 1, 1, 0]);
        let p = mle_interior(&u).unwrap().estimate.unwrap();
        assert_eq!(p.entries()[0], 0.25);
        assert_eq!(p.entries()[7], 0.0);
    }

    #[test]
    fn codim1_hand_value() {
        // first slice (4 2; 2 1), second slice all ones, N = 13
        let u = counts([4, 2, 2, 1, 1, 1, 1, 1]);
        let r = mle_codim1(&u, 0, 0).unwrap();
        let p = r.estimate.unwrap();
        assert!((p.entries()[0] - 36.0 / 117.0).abs() < 1e-15);
        for c in 4..8 {
            assert!((p.entries()[c] - 1.0 / 13.0).abs() < 1e-15);
        }
        assert!(residual(&p, stratum("1").unwrap()) < 1e-14);
    }

    #[test]
    fn codim1_zero_slice_is_flagged() {
        let u = counts([0, 0, 0, 0, 1, 2, 3, 4]);
        let r = mle_codim1(&u, 0, 0).unwrap();
        assert!(!r.valid);
        assert_eq!(r.notes, vec![CandidateNote::ZeroDenominator]);
    }

    #[test]
    fn s4a_uniform_roots() {
        let u = counts([1; 8]);
        let roots = mle_4a(&u, [0, 0, 0]).unwrap();
        // 9/8 is rejected, 1/8 reproduces the uniform table
        assert_eq!(roots.len(), 1);
        assert!(roots[0].notes.contains(&CandidateNote::RootOutsideSimplex));
        assert!(close(roots[0].estimate.as_ref().unwrap().entries(), &[0.125; 8], 1e-15));
    }

    #[test]
    fn independence_matches_one_way_margins() {
        let u = counts([3, 1, 4, 1, 5, 9, 2, 6]);
        let p = mle_independence(&u).unwrap().estimate.unwrap();
        for a in 0..3 {
            let pm = p.marginalize(&[a]).unwrap();
            let um = u.marginalize(&[a]).unwrap();
            for (x, &y) in pm.entries().iter().zip(um.entries()) {
                assert!((x - y as f64 / 31.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn global_on_all_ones_is_interior() {
        let g = global_mle(&counts([1; 8])).unwrap();
        assert_eq!(g.stratum, "0");
        assert_eq!(g.class, StratumClass::Interior);
        assert!(g.candidates.len() >= 34);
        assert!(!g.degenerate_input);
    }

    #[test]
    fn pruned_strata_below_validated_ones() {
        let g = global_mle(&counts([1; 8])).unwrap();
        // the interior candidate is valid, so every other stratum is pruned
        assert!(g.candidates[1..]
            .iter()
            .all(|c| c.notes == vec![CandidateNote::Pruned]));
    }

    #[test]
    fn rejects_wrong_shape() {
        let u = CountTensor::new(vec![2, 2], vec![1; 4]).unwrap();
        assert!(global_mle(&u).is_err());
    }
}
