//! Dense multiway tables: probability tensors, count tensors, marginals,
//! flattenings and the semialgebraic membership test for nonnegative rank
//! at most two.
//!
//! Entries are stored in lexicographic index order with the last index
//! varying fastest. Axes and levels are 0-based throughout the API.

use std::ops::{Add, Deref};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the total mass of a [`ProbTensor`].
pub const SUM_TOL: f64 = 1e-12;

/// Default slack allowed in the supermodularity inequalities.
pub const SUPERMODULAR_TOL: f64 = 1e-10;

/// Relative singular value threshold used for numeric matrix rank.
pub const RANK_REL_TOL: f64 = 1e-9;

/// A dense multiway array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    entries: Vec<T>,
}

impl<T: Copy> Tensor<T> {
    pub fn new(dims: Vec<usize>, entries: Vec<T>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::invalid("a tensor needs at least one axis"));
        }
        if dims.contains(&0) {
            return Err(Error::invalid(format!("zero-length axis in {dims:?}")));
        }
        let len: usize = dims.iter().product();
        if len != entries.len() {
            return Err(Error::invalid(format!(
                "dims {dims:?} need {len} entries, got {}",
                entries.len()
            )));
        }
        Ok(Tensor { dims, entries })
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        let len: usize = dims.iter().product();
        let mut entries = Vec::with_capacity(len);
        let mut idx = vec![0; dims.len()];
        for _ in 0..len {
            entries.push(f(&idx));
            increment(&mut idx, &dims);
        }
        Tensor::new(dims, entries)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<T> {
        self.entries
    }

    /// True when every axis has exactly two levels.
    pub fn is_binary(&self) -> bool {
        self.dims.iter().all(|&d| d == 2)
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    pub fn multi_index(&self, mut offset: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for (slot, &d) in idx.iter_mut().zip(&self.dims).rev() {
            *slot = offset % d;
            offset /= d;
        }
        idx
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.entries[self.offset(idx)]
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            entries: self.entries.iter().copied().map(f).collect(),
        }
    }
}

impl<T: Copy + Default + Add<Output = T>> Tensor<T> {
    /// Sums out every axis not in `axes`. The result keeps the retained axes
    /// in ascending order.
    pub fn marginalize(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let keep = normalize_axes(axes, self.ndim())?;
        let dims: Vec<usize> = keep.iter().map(|&a| self.dims[a]).collect();
        let len: usize = dims.iter().product();
        let mut out = vec![T::default(); len];
        let mut idx = vec![0; self.ndim()];
        for &value in &self.entries {
            let target = keep.iter().fold(0, |acc, &a| acc * self.dims[a] + idx[a]);
            out[target] = out[target] + value;
            increment(&mut idx, &self.dims);
        }
        Tensor::new(dims, out)
    }
}

fn increment(idx: &mut [usize], dims: &[usize]) {
    for (slot, &d) in idx.iter_mut().zip(dims).rev() {
        *slot += 1;
        if *slot < d {
            return;
        }
        *slot = 0;
    }
}

fn normalize_axes(axes: &[usize], ndim: usize) -> Result<Vec<usize>> {
    if axes.is_empty() {
        return Err(Error::invalid("axis subset must be nonempty"));
    }
    let mut keep = axes.to_vec();
    keep.sort_unstable();
    keep.dedup();
    if keep.len() != axes.len() {
        return Err(Error::invalid(format!("repeated axis in {axes:?}")));
    }
    if let Some(&bad) = keep.iter().find(|&&a| a >= ndim) {
        return Err(Error::invalid(format!("axis {bad} out of range for {ndim} axes")));
    }
    Ok(keep)
}

/// Wire form shared by probability and count tensors.
#[derive(Serialize, Deserialize)]
struct RawTensor<T> {
    dims: Vec<usize>,
    entries: Vec<T>,
}

/// A nonnegative tensor whose entries sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor<f64>", into = "RawTensor<f64>")]
pub struct ProbTensor(Tensor<f64>);

impl ProbTensor {
    pub fn new(dims: Vec<usize>, entries: Vec<f64>) -> Result<Self> {
        let t = Tensor::new(dims, entries)?;
        if let Some(bad) = t.entries.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::invalid(format!("probability entry {bad} is not a nonnegative real")));
        }
        let total: f64 = t.entries.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::invalid(format!("entries sum to {total}, not 1")));
        }
        Ok(ProbTensor(t))
    }

    /// Rescales a nonnegative tensor with positive mass onto the simplex.
    pub fn normalized(dims: Vec<usize>, entries: Vec<f64>) -> Result<Self> {
        let total: f64 = entries.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::invalid("cannot normalize a tensor without positive mass"));
        }
        ProbTensor::new(dims, entries.into_iter().map(|x| x / total).collect())
    }

    pub fn uniform(dims: Vec<usize>) -> Result<Self> {
        let len: usize = dims.iter().product();
        ProbTensor::new(dims, vec![1.0 / len as f64; len])
    }

    pub fn as_tensor(&self) -> &Tensor<f64> {
        &self.0
    }

    pub fn marginalize(&self, axes: &[usize]) -> Result<ProbTensor> {
        Ok(ProbTensor(self.0.marginalize(axes)?))
    }

    /// Maximum absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &ProbTensor) -> f64 {
        self.entries()
            .iter()
            .zip(other.entries())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn degeneracy(&self) -> Option<Degeneracy> {
        degeneracy(&self.0)
    }

    pub fn is_degenerate(&self) -> bool {
        self.degeneracy().is_some()
    }
}

impl Deref for ProbTensor {
    type Target = Tensor<f64>;
    fn deref(&self) -> &Tensor<f64> {
        &self.0
    }
}

impl TryFrom<RawTensor<f64>> for ProbTensor {
    type Error = Error;
    fn try_from(raw: RawTensor<f64>) -> Result<Self> {
        ProbTensor::new(raw.dims, raw.entries)
    }
}

impl From<ProbTensor> for RawTensor<f64> {
    fn from(p: ProbTensor) -> Self {
        RawTensor {
            dims: p.0.dims,
            entries: p.0.entries,
        }
    }
}

/// Observed counts with a cached sample size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor<u64>", into = "RawTensor<u64>")]
pub struct CountTensor {
    table: Tensor<u64>,
    total: u64,
}

impl CountTensor {
    pub fn new(dims: Vec<usize>, entries: Vec<u64>) -> Result<Self> {
        let table = Tensor::new(dims, entries)?;
        let total = table.entries.iter().sum();
        if total == 0 {
            return Err(Error::invalid("count tensor must hold at least one observation"));
        }
        Ok(CountTensor { table, total })
    }

    /// Sample size.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn as_tensor(&self) -> &Tensor<u64> {
        &self.table
    }

    pub fn marginalize(&self, axes: &[usize]) -> Result<CountTensor> {
        let table = self.table.marginalize(axes)?;
        Ok(CountTensor {
            table,
            total: self.total,
        })
    }

    /// Counts as floating point weights.
    pub fn weights(&self) -> Vec<f64> {
        self.table.entries.iter().map(|&u| u as f64).collect()
    }

    /// Sample proportions `U / N`.
    pub fn proportions(&self) -> ProbTensor {
        let n = self.total as f64;
        ProbTensor(self.table.map(|u| u as f64 / n))
    }

    pub fn scaled(&self, factor: u64) -> Result<CountTensor> {
        CountTensor::new(
            self.table.dims.clone(),
            self.table.entries.iter().map(|&u| u * factor).collect(),
        )
    }

    pub fn degeneracy(&self) -> Option<Degeneracy> {
        degeneracy(&self.table.map(|u| u as f64))
    }

    pub fn is_degenerate(&self) -> bool {
        self.degeneracy().is_some()
    }
}

impl Deref for CountTensor {
    type Target = Tensor<u64>;
    fn deref(&self) -> &Tensor<u64> {
        &self.table
    }
}

impl TryFrom<RawTensor<u64>> for CountTensor {
    type Error = Error;
    fn try_from(raw: RawTensor<u64>) -> Result<Self> {
        CountTensor::new(raw.dims, raw.entries)
    }
}

impl From<CountTensor> for RawTensor<u64> {
    fn from(c: CountTensor) -> Self {
        RawTensor {
            dims: c.table.dims,
            entries: c.table.entries,
        }
    }
}

/// A zero cell in a two-way marginal table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Degeneracy {
    pub axes: (usize, usize),
    pub cell: (usize, usize),
}

/// Finds the first two-way marginal with a zero entry, scanning axis pairs
/// and then cells in lexicographic order.
pub fn degeneracy(t: &Tensor<f64>) -> Option<Degeneracy> {
    let n = t.ndim();
    for j in 0..n {
        for k in (j + 1)..n {
            let m = t.marginalize(&[j, k]).expect("valid axis pair");
            for (off, &v) in m.entries().iter().enumerate() {
                if v <= 0.0 {
                    let cell = (off / m.dims()[1], off % m.dims()[1]);
                    return Some(Degeneracy { axes: (j, k), cell });
                }
            }
        }
    }
    None
}

/// Reshapes `t` into a matrix whose rows enumerate the levels of `row_axes`
/// and whose columns enumerate the remaining axes, both lexicographically in
/// ascending axis order.
pub fn flatten(t: &Tensor<f64>, row_axes: &[usize]) -> Result<DMatrix<f64>> {
    let rows = normalize_axes(row_axes, t.ndim())?;
    if rows.len() == t.ndim() {
        return Err(Error::invalid("row axes must leave at least one column axis"));
    }
    let cols: Vec<usize> = (0..t.ndim()).filter(|a| !rows.contains(a)).collect();
    let n_rows: usize = rows.iter().map(|&a| t.dims()[a]).product();
    let n_cols: usize = cols.iter().map(|&a| t.dims()[a]).product();
    let mut m = DMatrix::zeros(n_rows, n_cols);
    let mut idx = vec![0; t.ndim()];
    for &value in t.entries() {
        let r = rows.iter().fold(0, |acc, &a| acc * t.dims()[a] + idx[a]);
        let c = cols.iter().fold(0, |acc, &a| acc * t.dims()[a] + idx[a]);
        m[(r, c)] = value;
        increment(&mut idx, t.dims());
    }
    Ok(m)
}

/// Number of singular values above `rel_tol` times the largest one.
pub fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = m.singular_values();
    let top = sv.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Maximum numeric rank over every flattening of `t`.
pub fn flattening_rank(t: &Tensor<f64>, rel_tol: f64) -> usize {
    let n = t.ndim();
    if n < 2 {
        return numeric_rank(&DMatrix::from_column_slice(t.len(), 1, t.entries()), rel_tol);
    }
    // A flattening and its complement are transposes, so fixing axis 0 in the
    // row group visits each matrix once.
    (0u32..(1 << (n - 1)))
        .map(|bits| {
            let rows: Vec<usize> = std::iter::once(0)
                .chain((1..n).filter(|a| bits & (1 << (a - 1)) != 0))
                .collect();
            rows
        })
        .filter(|rows| rows.len() < n)
        .map(|rows| numeric_rank(&flatten(t, &rows).expect("proper subset"), rel_tol))
        .max()
        .unwrap_or(0)
}

/// Per-axis level orderings for the supermodularity test; `true` swaps the
/// two levels on that axis.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PermutationTuple(pub Vec<bool>);

impl PermutationTuple {
    pub fn identity(n: usize) -> Self {
        PermutationTuple(vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Bit mask over cell offsets of a binary tensor: axis `a` is bit `n-1-a`.
    fn mask(&self) -> usize {
        let n = self.0.len();
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .fold(0, |m, (a, _)| m | (1 << (n - 1 - a)))
    }
}

fn require_binary(t: &Tensor<f64>) {
    assert!(t.is_binary(), "expected a binary tensor, got dims {:?}", t.dims());
}

/// Smallest value of `p_k p_l - p_i p_j` over all instances of the
/// supermodularity inequalities for the ordering `order`.
pub fn supermodular_slack(t: &Tensor<f64>, order: &PermutationTuple) -> f64 {
    require_binary(t);
    assert_eq!(order.len(), t.ndim());
    let p = t.entries();
    let swap = order.mask();
    let all = p.len() - 1;
    let mut worst = f64::INFINITY;
    for i in 0..p.len() {
        for j in (i + 1)..p.len() {
            let meet = i & j;
            let join = i | j;
            let lo = (meet & !swap & all) | (join & swap);
            let hi = (join & !swap & all) | (meet & swap);
            worst = worst.min(p[lo] * p[hi] - p[i] * p[j]);
        }
    }
    worst
}

/// Ordering with the largest supermodularity slack, searched with the first
/// axis fixed to the identity. Swapping every axis at once leaves the
/// inequality system unchanged.
pub fn best_supermodular_order(t: &Tensor<f64>) -> (PermutationTuple, f64) {
    require_binary(t);
    let n = t.ndim();
    let mut best: Option<(PermutationTuple, f64)> = None;
    for bits in 0u32..(1 << (n - 1)) {
        let mut order = vec![false; n];
        for (a, slot) in order.iter_mut().enumerate().skip(1) {
            *slot = bits & (1 << (a - 1)) != 0;
        }
        let order = PermutationTuple(order);
        let slack = supermodular_slack(t, &order);
        if best.as_ref().is_none_or(|(_, s)| slack > *s) {
            best = Some((order, slack));
        }
    }
    best.expect("at least one ordering")
}

/// First ordering (first axis fixed) under which every inequality holds with
/// slack at least `-tol`.
pub fn find_supermodular_order(t: &Tensor<f64>, tol: f64) -> Option<PermutationTuple> {
    require_binary(t);
    let n = t.ndim();
    (0u32..(1 << (n - 1))).find_map(|bits| {
        let mut order = vec![false; n];
        for (a, slot) in order.iter_mut().enumerate().skip(1) {
            *slot = bits & (1 << (a - 1)) != 0;
        }
        let order = PermutationTuple(order);
        (supermodular_slack(t, &order) >= -tol).then_some(order)
    })
}

pub fn is_supermodular(t: &Tensor<f64>, tol: f64) -> bool {
    find_supermodular_order(t, tol).is_some()
}

/// Membership in the binary latent class model with two classes: flattening
/// rank at most two and supermodular. For three or fewer axes every
/// flattening already has at most two rows or columns, so only the
/// inequalities are checked.
pub fn is_member_rank2(t: &Tensor<f64>, tol: f64) -> bool {
    require_binary(t);
    if t.ndim() > 3 && flattening_rank(t, RANK_REL_TOL) > 2 {
        return false;
    }
    is_supermodular(t, tol)
}

/// Multinomial log-likelihood `sum u log p`. Cells with zero count contribute
/// nothing; a positive count on a zero-probability cell gives `-inf`.
pub fn log_likelihood(p: &ProbTensor, u: &CountTensor) -> Result<f64> {
    if p.dims() != u.dims() {
        return Err(Error::DimensionMismatch {
            expected: p.dims().to_vec(),
            found: u.dims().to_vec(),
        });
    }
    Ok(weighted_log_likelihood(p.entries(), &u.weights()))
}

/// [`log_likelihood`] on raw slices with real-valued weights.
pub fn weighted_log_likelihood(p: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), weights.len());
    // Neumaier summation
    let (mut total, mut carry) = (0.0f64, 0.0f64);
    for (&pi, &wi) in p.iter().zip(weights) {
        if wi > 0.0 {
            if pi <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let term = wi * pi.ln();
            let t = total + term;
            carry += if total.abs() >= term.abs() {
                (total - t) + term
            } else {
                (term - t) + total
            };
            total = t;
        }
    }
    total + carry
}

/// Log-likelihood of the sample proportions, the unconstrained maximum.
pub fn saturated_log_likelihood(u: &CountTensor) -> f64 {
    let n = u.total() as f64;
    u.entries()
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * (c as f64 / n).ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform3() -> ProbTensor {
        ProbTensor::uniform(vec![2, 2, 2]).unwrap()
    }

    #[test]
    fn marginal_of_uniform_is_uniform() {
        let m = uniform3().marginalize(&[0]).unwrap();
        assert_eq!(m.dims(), &[2]);
        assert_eq!(m.entries(), &[0.5, 0.5]);
    }

    #[test]
    fn count_marginal_of_ones() {
        let u = CountTensor::new(vec![2, 2, 2], vec![1; 8]).unwrap();
        let m = u.marginalize(&[0, 1]).unwrap();
        assert_eq!(m.entries(), &[2, 2, 2, 2]);
        assert_eq!(m.total(), 8);
    }

    #[test]
    fn marginalize_rejects_empty_and_bad_axes() {
        let p = uniform3();
        assert!(matches!(p.marginalize(&[]), Err(Error::InvalidArgument(_))));
        assert!(p.marginalize(&[3]).is_err());
        assert!(p.marginalize(&[1, 1]).is_err());
    }

    #[test]
    fn marginal_keeps_ascending_axis_order() {
        let t = Tensor::from_fn(vec![2, 3, 2], |i| (i[0] * 100 + i[1] * 10 + i[2]) as u64).unwrap();
        let a = t.marginalize(&[2, 0]).unwrap();
        let b = t.marginalize(&[0, 2]).unwrap();
        assert_eq!(a, b);
        // entry (i, k) = sum_j (100 i + 10 j + k) = 300 i + 30 + 3 k
        assert_eq!(a.entries(), &[30, 33, 330, 333]);
    }

    #[test]
    fn uniform_is_not_degenerate() {
        assert!(!uniform3().is_degenerate());
    }

    #[test]
    fn forced_zero_marginal_is_degenerate() {
        // p_{11k} = 0 for both k
        let p = ProbTensor::normalized(vec![2, 2, 2], vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
            .unwrap();
        let w = p.degeneracy().unwrap();
        assert_eq!(w.axes, (0, 1));
        assert_eq!(w.cell, (0, 0));
    }

    #[test]
    fn single_zero_cell_is_not_degenerate() {
        // u_{111} = 0, every two-way margin cell still sums two entries with
        // at least one positive
        let u = CountTensor::new(vec![2, 2, 2], vec![0, 1, 1, 1, 1, 1, 1, 1]).unwrap();
        assert!(!u.is_degenerate());
    }

    #[test]
    fn flatten_all_ones() {
        let t = Tensor::new(vec![2, 2, 2], vec![1.0; 8]).unwrap();
        let m = flatten(&t, &[0]).unwrap();
        assert_eq!(m.shape(), (2, 4));
        assert!(m.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn flatten_basis_tensor() {
        let mut e = vec![0.0; 8];
        e[0] = 1.0;
        let t = Tensor::new(vec![2, 2, 2], e).unwrap();
        let m = flatten(&t, &[0, 1]).unwrap();
        assert_eq!(m.shape(), (4, 2));
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m.sum(), 1.0);
    }

    #[test]
    fn flatten_rejects_trivial_groups() {
        let t = uniform3();
        assert!(flatten(&t, &[]).is_err());
        assert!(flatten(&t, &[0, 1, 2]).is_err());
    }

    #[test]
    fn flattening_rank_of_product_tensors() {
        assert_eq!(flattening_rank(&uniform3(), RANK_REL_TOL), 1);
        let u = [0.3, 0.7];
        let v = [0.6, 0.4];
        let w = [0.1, 0.9];
        let t = Tensor::from_fn(vec![2, 2, 2], |i| u[i[0]] * v[i[1]] * w[i[2]]).unwrap();
        assert_eq!(flattening_rank(&t, RANK_REL_TOL), 1);
    }

    #[test]
    fn rank_one_tensor_is_supermodular_for_every_order() {
        let u = [0.2, 0.8];
        let t = Tensor::from_fn(vec![2, 2, 2], |i| u[i[0]] * u[i[1]] * u[i[2]]).unwrap();
        for bits in 0..4u8 {
            let order = PermutationTuple(vec![false, bits & 1 != 0, bits & 2 != 0]);
            assert!(supermodular_slack(&t, &order) >= -1e-15);
        }
        assert_eq!(find_supermodular_order(&t, 0.0), Some(PermutationTuple::identity(3)));
    }

    #[test]
    fn perfectly_anticorrelated_pair_needs_a_swap() {
        // X1 = X2 always, X2 = 3 - X3 always: mass on (1,1,2) and (2,2,1)
        let mut e = vec![0.0; 8];
        e[1] = 0.5;
        e[6] = 0.5;
        let t = Tensor::new(vec![2, 2, 2], e).unwrap();
        assert!(supermodular_slack(&t, &PermutationTuple::identity(3)) < 0.0);
        let order = find_supermodular_order(&t, 0.0).unwrap();
        assert_eq!(order, PermutationTuple(vec![false, false, true]));
    }

    #[test]
    fn log_likelihood_cases() {
        let u = CountTensor::new(vec![2, 2, 2], vec![3, 1, 4, 1, 5, 9, 2, 6]).unwrap();
        let ll = log_likelihood(&uniform3(), &u).unwrap();
        assert!((ll + 31.0 * 8f64.ln()).abs() < 1e-12);

        let mut e = vec![1.0 / 7.0; 8];
        e[0] = 0.0;
        let p = ProbTensor::new(vec![2, 2, 2], e).unwrap();
        assert_eq!(log_likelihood(&p, &u).unwrap(), f64::NEG_INFINITY);

        let q = u.proportions();
        assert!((log_likelihood(&q, &u).unwrap() - saturated_log_likelihood(&u)).abs() < 1e-12);
    }

    #[test]
    fn zero_count_on_zero_probability_contributes_nothing() {
        let u = CountTensor::new(vec![2, 2, 2], vec![0, 1, 1, 1, 1, 1, 1, 1]).unwrap();
        let mut e = vec![1.0 / 7.0; 8];
        e[0] = 0.0;
        let p = ProbTensor::new(vec![2, 2, 2], e).unwrap();
        assert!((log_likelihood(&p, &u).unwrap() + 7.0 * 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_dimension_mismatch() {
        let u = CountTensor::new(vec![2, 2], vec![1; 4]).unwrap();
        assert!(matches!(
            log_likelihood(&uniform3(), &u),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn prob_tensor_validation() {
        assert!(ProbTensor::new(vec![2], vec![0.5, 0.6]).is_err());
        assert!(ProbTensor::new(vec![2], vec![-0.1, 1.1]).is_err());
        assert!(ProbTensor::new(vec![2], vec![f64::NAN, 1.0]).is_err());
        assert!(CountTensor::new(vec![2], vec![0, 0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let u = CountTensor::new(vec![2, 2, 2], vec![3, 1, 4, 1, 5, 9, 2, 6]).unwrap();
        let s = serde_json::to_string(&u).unwrap();
        assert_eq!(s, r#"{"dims":[2,2,2],"entries":[3,1,4,1,5,9,2,6]}"#);
        let back: CountTensor = serde_json::from_str(&s).unwrap();
        assert_eq!(back, u);
        assert!(serde_json::from_str::<ProbTensor>(r#"{"dims":[2],"entries":[0.2,0.2]}"#).is_err());
    }
}
