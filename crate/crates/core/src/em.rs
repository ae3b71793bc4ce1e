//! Expectation maximization for latent class models with any number of
//! observed axes and latent classes.
//!
//! Each iteration keeps the per-class joint terms `lambda_l prod_a A_a[l, j_a]`
//! for every cell, so one pass over the table serves both the E-step of the
//! next iteration and the convergence check on `P`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{LatentParams, StochasticMatrix, Substream};
use crate::tensor::{weighted_log_likelihood, CountTensor, ProbTensor};

/// Default stopping tolerance on the largest change of an entry of `P`.
/// Near boundary optima the log-likelihood still trails its limit by about
/// `1e4 * tol` at stopping for tables of size 1000.
pub const DEFAULT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmConfig {
    /// Stop when no entry of `P` moves by more than this in one iteration.
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    /// Parameter entries below this count as zeros when classifying limits.
    pub zero_threshold: f64,
    /// Keep the log-likelihood after every iteration.
    pub record_trace: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            tol: DEFAULT_TOL,
            max_iter: 100_000,
            restarts: 1,
            zero_threshold: 1e-6,
            record_trace: false,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::invalid("EM tolerance must be positive"));
        }
        if self.max_iter == 0 || self.restarts == 0 {
            return Err(Error::invalid("EM needs at least one iteration and one restart"));
        }
        Ok(())
    }
}

/// Observed data for EM: nonnegative cell weights, usually counts.
#[derive(Clone, Debug)]
pub struct EmData {
    dims: Vec<usize>,
    weights: Vec<f64>,
    total: f64,
    support: Vec<usize>,
    /// `levels[c * n + a]` is the level of axis `a` in cell `c`.
    levels: Vec<usize>,
    /// `offsets[c * n + a]` is that level shifted by the sizes of the
    /// axes before `a`.
    offsets: Vec<usize>,
}

impl EmData {
    pub fn from_counts(u: &CountTensor) -> Self {
        EmData::from_weights(u.dims().to_vec(), u.weights()).expect("counts are valid weights")
    }

    /// Real-valued weights, e.g. `N * P` for a distribution `P`.
    pub fn from_weights(dims: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if dims.is_empty() || len != weights.len() {
            return Err(Error::invalid("weights do not match dims"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("weights must have positive total"));
        }
        let n = dims.len();
        let mut levels = vec![0; len * n];
        for c in 0..len {
            let mut rest = c;
            for a in (0..n).rev() {
                levels[c * n + a] = rest % dims[a];
                rest /= dims[a];
            }
        }
        let mut offsets = levels.clone();
        for c in 0..len {
            let mut base = 0;
            for a in 0..n {
                offsets[c * n + a] += base;
                base += dims[a];
            }
        }
        let support = (0..len).filter(|&c| weights[c] > 0.0).collect();
        Ok(EmData {
            dims,
            weights,
            total,
            support,
            levels,
            offsets,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    fn cell_levels(&self, c: usize) -> &[usize] {
        let n = self.dims.len();
        &self.levels[c * n..(c + 1) * n]
    }

    fn cell_offsets(&self, c: usize) -> &[usize] {
        let n = self.dims.len();
        &self.offsets[c * n..(c + 1) * n]
    }
}

/// Working copy of the parameters, class-major: class `l` owns
/// `theta[l * stride..(l + 1) * stride]`, the concatenation of its rows.
#[derive(Clone)]
struct Flat {
    lambda: Vec<f64>,
    theta: Vec<f64>,
    stride: usize,
}

impl Flat {
    fn from_params(th: &LatentParams) -> Self {
        let stride: usize = th.dims().iter().sum();
        let mut theta = Vec::with_capacity(th.classes() * stride);
        for l in 0..th.classes() {
            for m in th.matrices() {
                theta.extend_from_slice(m.row(l));
            }
        }
        Flat {
            lambda: th.lambda().to_vec(),
            theta,
            stride,
        }
    }

    fn into_params(self, dims: &[usize]) -> LatentParams {
        let r = self.lambda.len();
        let mut off = 0;
        let mats = dims
            .iter()
            .map(|&d| {
                let data = (0..r)
                    .flat_map(|l| self.theta[l * self.stride + off..l * self.stride + off + d].iter().copied())
                    .collect();
                off += d;
                StochasticMatrix::from_raw(r, d, data)
            })
            .collect();
        LatentParams::from_raw(self.lambda, mats)
    }

    /// Fills `joint[c * r + l]` and `p[c]` for every cell.
    fn joint(&self, data: &EmData, joint: &mut [f64], p: &mut [f64]) {
        let r = self.lambda.len();
        for (c, pc) in p.iter_mut().enumerate() {
            let offs = data.cell_offsets(c);
            let mut total = 0.0;
            for l in 0..r {
                let row = &self.theta[l * self.stride..(l + 1) * self.stride];
                let t = match *offs {
                    [a, b, c] => self.lambda[l] * row[a] * row[b] * row[c],
                    _ => offs.iter().fold(self.lambda[l], |t, &o| t * row[o]),
                };
                joint[c * r + l] = t;
                total += t;
            }
            *pc = total;
        }
    }

    /// Log-likelihood with cell probabilities carried as double-double sums
    /// and normalized by their computed total mass.
    fn precise_loglik(&self, data: &EmData) -> f64 {
        let r = self.lambda.len();
        let cells = data.weights.len();
        let (mut mass_hi, mut mass_lo) = (0.0f64, 0.0f64);
        let (mut total, mut carry) = (0.0f64, 0.0f64);
        for c in 0..cells {
            let offs = data.cell_offsets(c);
            let (mut p_hi, mut p_lo) = (0.0f64, 0.0f64);
            for l in 0..r {
                let row = &self.theta[l * self.stride..(l + 1) * self.stride];
                let (mut hi, mut lo) = (self.lambda[l], 0.0f64);
                for &o in offs {
                    let h = hi * row[o];
                    lo = lo.mul_add(row[o], hi.mul_add(row[o], -h));
                    hi = h;
                }
                let (s, e) = two_sum(p_hi, hi);
                p_hi = s;
                p_lo += e + lo;
            }
            let (s, e) = two_sum(p_hi, p_lo);
            let (m, me) = two_sum(mass_hi, s);
            mass_hi = m;
            mass_lo += me + e;
            let w = data.weights[c];
            if w <= 0.0 {
                continue;
            }
            if s <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let log_hi = s.ln();
            let term = w * log_hi;
            let term_err = w.mul_add(log_hi, -term) + w * (e / s);
            let (t, err) = two_sum(total, term);
            total = t;
            carry += err + term_err;
        }
        let log_mass = ((mass_hi - 1.0) + mass_lo).ln_1p();
        total + (carry - data.total * log_mass)
    }

    /// One E-step plus M-step from precomputed joint terms. Returns whether
    /// some observed cell had zero probability and was skipped.
    fn update(&self, data: &EmData, joint: &[f64], p: &[f64], next: &mut Flat) -> bool {
        let r = self.lambda.len();
        next.lambda.iter_mut().for_each(|x| *x = 0.0);
        next.theta.iter_mut().for_each(|x| *x = 0.0);
        let mut skipped = false;
        let mut used = 0.0;
        for &c in &data.support {
            if p[c] <= 0.0 {
                skipped = true;
                continue;
            }
            let w = data.weights[c];
            used += w;
            let scale = w / p[c];
            let offs = data.cell_offsets(c);
            for l in 0..r {
                let v = joint[c * r + l] * scale;
                next.lambda[l] += v;
                let row = &mut next.theta[l * self.stride..(l + 1) * self.stride];
                if let [a, b, c] = *offs {
                    row[a] += v;
                    row[b] += v;
                    row[c] += v;
                } else {
                    for &o in offs {
                        row[o] += v;
                    }
                }
            }
        }
        for l in 0..r {
            let mass = next.lambda[l];
            let span = l * self.stride..(l + 1) * self.stride;
            if mass > 0.0 {
                next.theta[span].iter_mut().for_each(|x| *x /= mass);
            } else {
                // empty class: keep its conditional distributions
                next.theta[span.clone()].copy_from_slice(&self.theta[span]);
            }
            next.lambda[l] = if used > 0.0 { mass / used } else { self.lambda[l] };
        }
        skipped
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn check_shape(th: &LatentParams, data: &EmData) -> Result<()> {
    if th.dims() != data.dims {
        return Err(Error::DimensionMismatch {
            expected: data.dims.clone(),
            found: th.dims(),
        });
    }
    Ok(())
}

/// One EM iteration. The flag reports observed cells skipped because the
/// current parameters give them zero probability.
pub fn em_step(th: &LatentParams, data: &EmData) -> Result<(LatentParams, bool)> {
    check_shape(th, data)?;
    let flat = Flat::from_params(th);
    let len = data.weights.len();
    let r = th.classes();
    let mut joint = vec![0.0; len * r];
    let mut p = vec![0.0; len];
    flat.joint(data, &mut joint, &mut p);
    let mut next = flat.clone();
    let skipped = flat.update(data, &joint, &p, &mut next);
    Ok((next.into_params(&data.dims), skipped))
}

#[derive(Clone, Debug, Serialize)]
pub struct EmRun {
    pub params: LatentParams,
    pub estimate: ProbTensor,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Some observed cell had zero probability at some iteration.
    pub skipped_cells: bool,
    /// Residual of the fixed-point equations at termination.
    pub fixed_point_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<f64>>,
}

/// Runs EM from `init` until `P` stops moving or `max_iter` is reached.
pub fn run_em_from(data: &EmData, init: &LatentParams, config: &EmConfig) -> Result<EmRun> {
    config.validate()?;
    check_shape(init, data)?;
    let len = data.weights.len();
    let r = init.classes();
    let mut cur = Flat::from_params(init);
    let mut next = cur.clone();
    let mut joint = vec![0.0; len * r];
    let mut p = vec![0.0; len];
    let mut p_next = vec![0.0; len];
    cur.joint(data, &mut joint, &mut p);

    let mut trace = config.record_trace.then(|| vec![cur.precise_loglik(data)]);
    let mut skipped_cells = false;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        skipped_cells |= cur.update(data, &joint, &p, &mut next);
        next.joint(data, &mut joint, &mut p_next);
        iterations += 1;
        let change = p
            .iter()
            .zip(&p_next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut cur, &mut next);
        std::mem::swap(&mut p, &mut p_next);
        if let Some(t) = trace.as_mut() {
            t.push(cur.precise_loglik(data));
        }
        if change < config.tol {
            converged = true;
            break;
        }
    }

    let params = cur.into_params(&data.dims);
    let estimate = ProbTensor::new(data.dims.clone(), p.clone())
        .or_else(|_| ProbTensor::normalized(data.dims.clone(), p))?;
    let loglik = weighted_log_likelihood(estimate.entries(), &data.weights);
    let fixed_point_residual = fixed_point_residual(&params, data)?;
    Ok(EmRun {
        params,
        estimate,
        loglik,
        iterations,
        converged,
        skipped_cells,
        fixed_point_residual,
        trace,
    })
}

/// EM from a uniformly random starting point drawn from `stream`.
pub fn run_em(data: &EmData, classes: usize, config: &EmConfig, stream: Substream) -> Result<EmRun> {
    if classes == 0 {
        return Err(Error::invalid("need at least one latent class"));
    }
    let init = LatentParams::random(classes, &data.dims, &mut stream.rng());
    run_em_from(data, &init, config)
}

#[derive(Clone, Debug, Serialize)]
pub struct MultiStart {
    pub best: EmRun,
    pub best_index: usize,
    pub logliks: Vec<f64>,
    pub converged: Vec<bool>,
}

/// Best of `config.restarts` runs; restart `k` starts from
/// `stream.child(k)`, so a prefix of restarts is reproduced exactly when
/// the count grows. Ties go to the lower restart index.
pub fn multi_start_em(data: &EmData, classes: usize, config: &EmConfig, stream: Substream) -> Result<MultiStart> {
    config.validate()?;
    let runs: Vec<EmRun> = (0..config.restarts as u64)
        .into_par_iter()
        .map(|k| run_em(data, classes, config, stream.child(k)))
        .collect::<Result<_>>()?;
    let logliks: Vec<f64> = runs.iter().map(|r| r.loglik).collect();
    let converged = runs.iter().map(|r| r.converged).collect();
    let best_index = logliks
        .iter()
        .enumerate()
        .fold(0, |best, (k, &ll)| if ll > logliks[best] { k } else { best });
    let best = runs.into_iter().nth(best_index).expect("at least one restart");
    Ok(MultiStart {
        best,
        best_index,
        logliks,
        converged,
    })
}

/// Largest absolute value of the EM fixed-point polynomials
/// `theta_x * sum r_c (product of the other factors)`, with the mixing
/// weights folded into the first matrix and `r_c = N - u_c / p_c`.
/// Infinite when an observed cell has zero probability.
pub fn fixed_point_residual(th: &LatentParams, data: &EmData) -> Result<f64> {
    check_shape(th, data)?;
    let n_axes = data.dims.len();
    let r = th.classes();
    let mut factors: Vec<Vec<f64>> = th.matrices().iter().map(|m| m.data().to_vec()).collect();
    for l in 0..r {
        let d0 = data.dims[0];
        factors[0][l * d0..(l + 1) * d0]
            .iter_mut()
            .for_each(|x| *x *= th.lambda()[l]);
    }
    let p = th.parameterize();
    let n = data.total;
    let mut resid: Vec<f64> = Vec::with_capacity(p.len());
    for (c, &pc) in p.entries().iter().enumerate() {
        let w = data.weights[c];
        if w > 0.0 && pc <= 0.0 {
            return Ok(f64::INFINITY);
        }
        resid.push(if w > 0.0 { n - w / pc } else { n });
    }

    let mut sums: Vec<Vec<f64>> = data.dims.iter().map(|&d| vec![0.0; r * d]).collect();
    for (c, &rc) in resid.iter().enumerate() {
        let lv = data.cell_levels(c);
        for l in 0..r {
            for a in 0..n_axes {
                let others: f64 = (0..n_axes)
                    .filter(|&b| b != a)
                    .map(|b| factors[b][l * data.dims[b] + lv[b]])
                    .product();
                sums[a][l * data.dims[a] + lv[a]] += rc * others;
            }
        }
    }
    let worst = factors
        .iter()
        .zip(&sums)
        .flat_map(|(f, s)| f.iter().zip(s).map(|(x, y)| (x * y).abs()))
        .fold(0.0, f64::max);
    Ok(worst)
}

/// Coarse location of a parameter point on the boundary of the parameter
/// space, by counting near-zero entries of the conditional distributions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ZeroCategory {
    /// No zero entry.
    Interior,
    /// Exactly one zero, in a matrix with at least three columns.
    OneZeroWide,
    /// Exactly one zero, in a two-column matrix.
    OneZeroNarrow,
    /// `k >= 2` zeros.
    Codim(usize),
}

impl ZeroCategory {
    /// Column label used in reports: `0`, `1a`, `1b`, `2`, `3`, ...
    pub fn label(&self) -> String {
        match self {
            ZeroCategory::Interior => "0".into(),
            ZeroCategory::OneZeroWide => "1a".into(),
            ZeroCategory::OneZeroNarrow => "1b".into(),
            ZeroCategory::Codim(k) => k.to_string(),
        }
    }

    pub fn codim(&self) -> usize {
        match self {
            ZeroCategory::Interior => 0,
            ZeroCategory::OneZeroWide | ZeroCategory::OneZeroNarrow => 1,
            ZeroCategory::Codim(k) => *k,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ZeroPattern {
    pub per_matrix: Vec<usize>,
    pub lambda_zeros: usize,
    pub category: ZeroCategory,
}

/// Counts entries of the conditional distribution matrices below
/// `threshold`. Zero mixing weights are reported but do not enter the
/// category.
pub fn classify_zero_pattern(th: &LatentParams, threshold: f64) -> ZeroPattern {
    let per_matrix: Vec<usize> = th
        .matrices()
        .iter()
        .map(|m| m.data().iter().filter(|&&x| x < threshold).count())
        .collect();
    let lambda_zeros = th.lambda().iter().filter(|&&x| x < threshold).count();
    let total: usize = per_matrix.iter().sum();
    let category = match total {
        0 => ZeroCategory::Interior,
        1 => {
            let a = per_matrix.iter().position(|&z| z == 1).expect("one zero");
            if th.matrix(a).ncols() >= 3 {
                ZeroCategory::OneZeroWide
            } else {
                ZeroCategory::OneZeroNarrow
            }
        }
        k => ZeroCategory::Codim(k),
    };
    ZeroPattern {
        per_matrix,
        lambda_zeros,
        category,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_params(r: usize, dims: &[usize]) -> LatentParams {
        let rows = dims
            .iter()
            .map(|&d| vec![vec![1.0 / d as f64; d]; r])
            .collect();
        LatentParams::from_nested(vec![1.0 / r as f64; r], rows).unwrap()
    }

    #[test]
    fn uniform_step_on_uniform_data() {
        let u = CountTensor::new(vec![2, 2, 2], vec![5; 8]).unwrap();
        let data = EmData::from_counts(&u);
        let th = uniform_params(2, &[2, 2, 2]);
        let (next, skipped) = em_step(&th, &data).unwrap();
        assert!(!skipped);
        for (a, b) in next.matrices().iter().zip(th.matrices()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        assert_eq!(fixed_point_residual(&th, &data).unwrap(), 0.0);
    }

    #[test]
    fn independence_fit_is_fixed() {
        // both classes equal to the one-way margins of the data
        let u = CountTensor::new(vec![2, 2, 2], vec![3, 1, 4, 1, 5, 9, 2, 6]).unwrap();
        let data = EmData::from_counts(&u);
        let rows: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|a| {
                let m = u.marginalize(&[a]).unwrap();
                let row: Vec<f64> = m.entries().iter().map(|&x| x as f64 / 31.0).collect();
                vec![row.clone(), row]
            })
            .collect();
        let th = LatentParams::from_nested(vec![0.3, 0.7], rows).unwrap();
        let (next, _) = em_step(&th, &data).unwrap();
        for (a, b) in next.matrices().iter().zip(th.matrices()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        for (x, y) in next.lambda().iter().zip(th.lambda()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_probability_cell_is_skipped() {
        let u = CountTensor::new(vec![2, 2, 2], vec![1; 8]).unwrap();
        let data = EmData::from_counts(&u);
        let point = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let th = LatentParams::from_nested(vec![0.5, 0.5], vec![point.clone(), point.clone(), point]).unwrap();
        let (next, skipped) = em_step(&th, &data).unwrap();
        assert!(skipped);
        assert!((next.lambda().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(fixed_point_residual(&th, &data).unwrap(), f64::INFINITY);
    }

    #[test]
    fn empty_class_keeps_its_rows() {
        let u = CountTensor::new(vec![2, 2, 2], vec![3, 1, 4, 1, 5, 9, 2, 6]).unwrap();
        let data = EmData::from_counts(&u);
        let th = LatentParams::from_nested(
            vec![1.0, 0.0],
            vec![
                vec![vec![0.5, 0.5], vec![0.9, 0.1]],
                vec![vec![0.5, 0.5], vec![0.8, 0.2]],
                vec![vec![0.5, 0.5], vec![0.7, 0.3]],
            ],
        )
        .unwrap();
        let (next, _) = em_step(&th, &data).unwrap();
        assert_eq!(next.lambda()[1], 0.0);
        assert_eq!(next.matrix(0).row(1), &[0.9, 0.1]);
    }

    #[test]
    fn restarts_are_reproducible() {
        let u = CountTensor::new(vec![2, 2, 2], vec![30, 11, 14, 21, 15, 9, 27, 16]).unwrap();
        let data = EmData::from_counts(&u);
        let cfg = EmConfig {
            restarts: 4,
            ..EmConfig::default()
        };
        let a = multi_start_em(&data, 2, &cfg, Substream::new(5)).unwrap();
        let b = multi_start_em(&data, 2, &cfg, Substream::new(5)).unwrap();
        assert_eq!(a.logliks, b.logliks);
        assert_eq!(a.best.params, b.best.params);
        let single = run_em(&data, 2, &cfg, Substream::new(5).child(0)).unwrap();
        assert_eq!(single.loglik, a.logliks[0]);
    }

    #[test]
    fn zero_pattern_categories() {
        let dims = [3, 3, 2];
        let th = uniform_params(3, &dims);
        assert_eq!(classify_zero_pattern(&th, 1e-6).category, ZeroCategory::Interior);

        let mut rows: Vec<Vec<Vec<f64>>> = th.matrices().iter().map(|m| m.to_rows()).collect();
        rows[0][0] = vec![0.0, 0.5, 0.5];
        let a_zero = LatentParams::from_nested(th.lambda().to_vec(), rows.clone()).unwrap();
        assert_eq!(classify_zero_pattern(&a_zero, 1e-6).category, ZeroCategory::OneZeroWide);

        let mut rows_c: Vec<Vec<Vec<f64>>> = th.matrices().iter().map(|m| m.to_rows()).collect();
        rows_c[2][0] = vec![0.0, 1.0];
        let c_zero = LatentParams::from_nested(th.lambda().to_vec(), rows_c).unwrap();
        assert_eq!(classify_zero_pattern(&c_zero, 1e-6).category, ZeroCategory::OneZeroNarrow);

        rows[2][1] = vec![1.0, 0.0];
        let two = LatentParams::from_nested(th.lambda().to_vec(), rows).unwrap();
        let z = classify_zero_pattern(&two, 1e-6);
        assert_eq!(z.category, ZeroCategory::Codim(2));
        assert_eq!(z.per_matrix, vec![1, 0, 1]);
    }
}
