//! Latent class parameters, the parameterization map, and the random draws
//! used by the experiments.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{numeric_rank, CountTensor, ProbTensor, Tensor};

/// Tolerance on row sums of stochastic vectors.
pub const STOCHASTIC_TOL: f64 = 1e-12;

fn check_stochastic(row: &[f64], what: &str) -> Result<()> {
    if let Some(bad) = row.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::invalid(format!("{what} has entry {bad}")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::invalid(format!("{what} sums to {s}")));
    }
    Ok(())
}

/// Row-stochastic matrix stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct StochasticMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl StochasticMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 {
            return Err(Error::invalid("stochastic matrix must be nonempty"));
        }
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged stochastic matrix"));
        }
        for (l, r) in rows.iter().enumerate() {
            check_stochastic(r, &format!("row {l}"))?;
        }
        Ok(StochasticMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// Trusted constructor for internal updates that preserve stochasticity.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        StochasticMatrix { rows, cols, data }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn rank(&self, rel_tol: f64) -> usize {
        numeric_rank(&DMatrix::from_row_slice(self.rows, self.cols, &self.data), rel_tol)
    }
}

impl TryFrom<Vec<Vec<f64>>> for StochasticMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        StochasticMatrix::from_rows(rows)
    }
}

impl From<StochasticMatrix> for Vec<Vec<f64>> {
    fn from(m: StochasticMatrix) -> Self {
        m.to_rows()
    }
}

#[derive(Deserialize, Serialize)]
struct RawParams {
    lambda: Vec<f64>,
    matrices: Vec<StochasticMatrix>,
}

impl TryFrom<RawParams> for LatentParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        LatentParams::new(raw.lambda, raw.matrices)
    }
}

impl From<LatentParams> for RawParams {
    fn from(th: LatentParams) -> Self {
        RawParams {
            lambda: th.lambda,
            matrices: th.matrices,
        }
    }
}

/// Mixing weights over `r` latent classes plus one `r x d_i` conditional
/// distribution matrix per observed axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct LatentParams {
    lambda: Vec<f64>,
    matrices: Vec<StochasticMatrix>,
}

impl LatentParams {
    pub fn new(lambda: Vec<f64>, matrices: Vec<StochasticMatrix>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::invalid("need at least one latent class"));
        }
        check_stochastic(&lambda, "lambda")?;
        if matrices.is_empty() {
            return Err(Error::invalid("need at least one observed axis"));
        }
        if let Some(m) = matrices.iter().find(|m| m.nrows() != lambda.len()) {
            return Err(Error::invalid(format!(
                "matrix has {} rows for {} classes",
                m.nrows(),
                lambda.len()
            )));
        }
        Ok(LatentParams { lambda, matrices })
    }

    pub(crate) fn from_raw(lambda: Vec<f64>, matrices: Vec<StochasticMatrix>) -> Self {
        LatentParams { lambda, matrices }
    }

    /// Parameters for `r` classes with `rows[axis][class]` as conditional
    /// distributions.
    pub fn from_nested(lambda: Vec<f64>, rows: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let matrices = rows
            .into_iter()
            .map(StochasticMatrix::from_rows)
            .collect::<Result<Vec<_>>>()?;
        LatentParams::new(lambda, matrices)
    }

    /// Symmetric two-class parameters with every matrix equal to
    /// `[[1-eps, eps], [eps, 1-eps]]` and equal mixing weights.
    pub fn epsilon(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 0.5) {
            return Err(Error::invalid(format!("epsilon {eps} outside (0, 0.5]")));
        }
        let m = vec![vec![1.0 - eps, eps], vec![eps, 1.0 - eps]];
        LatentParams::from_nested(vec![0.5, 0.5], vec![m.clone(), m.clone(), m])
    }

    /// Uniformly random parameters: every simplex block drawn independently
    /// from the uniform distribution on its simplex.
    pub fn random<R: Rng + ?Sized>(classes: usize, dims: &[usize], rng: &mut R) -> Self {
        let lambda = sample_simplex(classes, rng);
        let matrices = dims
            .iter()
            .map(|&d| {
                let data = (0..classes).flat_map(|_| sample_simplex(d, rng)).collect();
                StochasticMatrix::from_raw(classes, d, data)
            })
            .collect();
        LatentParams { lambda, matrices }
    }

    pub fn classes(&self) -> usize {
        self.lambda.len()
    }

    pub fn n_axes(&self) -> usize {
        self.matrices.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.matrices.iter().map(StochasticMatrix::ncols).collect()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn matrices(&self) -> &[StochasticMatrix] {
        &self.matrices
    }

    pub fn matrix(&self, axis: usize) -> &StochasticMatrix {
        &self.matrices[axis]
    }

    /// Joint distribution `p_j = sum_l lambda_l prod_i A^(i)[l, j_i]`.
    pub fn parameterize(&self) -> ProbTensor {
        let t = Tensor::from_fn(self.dims(), |idx| {
            (0..self.classes())
                .map(|l| {
                    self.lambda[l]
                        * idx
                            .iter()
                            .zip(&self.matrices)
                            .map(|(&j, m)| m.get(l, j))
                            .product::<f64>()
                })
                .sum()
        })
        .expect("parameter dims are positive");
        let (dims, entries) = (t.dims().to_vec(), t.into_entries());
        ProbTensor::new(dims, entries).expect("stochastic parameters give a distribution")
    }

    /// Numeric rank of each conditional distribution matrix.
    pub fn m_rank(&self, rel_tol: f64) -> MRank {
        MRank(self.matrices.iter().map(|m| m.rank(rel_tol)).collect())
    }

    /// Relabels latent classes: class `l` of the result is class `perm[l]`
    /// of `self`.
    pub fn permute_classes(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.classes()];
        if perm.len() != self.classes() || perm.iter().any(|&l| l >= seen.len() || std::mem::replace(&mut seen[l], true)) {
            return Err(Error::invalid(format!("{perm:?} is not a class permutation")));
        }
        let lambda = perm.iter().map(|&l| self.lambda[l]).collect();
        let matrices = self
            .matrices
            .iter()
            .map(|m| {
                let data = perm.iter().flat_map(|&l| m.row(l).to_vec()).collect();
                StochasticMatrix::from_raw(m.nrows(), m.ncols(), data)
            })
            .collect();
        Ok(LatentParams { lambda, matrices })
    }

    /// Parameters of the marginal model on `axes` (kept in the given order).
    pub fn restrict(&self, axes: &[usize]) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|&a| a >= self.n_axes()) {
            return Err(Error::invalid(format!("bad axis subset {axes:?}")));
        }
        Ok(LatentParams {
            lambda: self.lambda.clone(),
            matrices: axes.iter().map(|&a| self.matrices[a].clone()).collect(),
        })
    }
}

/// Per-axis ranks of the conditional distribution matrices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MRank(pub Vec<usize>);

/// Uniform draw from the simplex with `dim` vertices, by normalizing
/// independent standard exponentials.
pub fn sample_simplex<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    assert!(dim >= 1, "simplex needs at least one vertex");
    if dim == 1 {
        return vec![1.0];
    }
    let mut x: Vec<f64> = (0..dim).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);
    x
}

/// Uniform probability tensor of the given shape.
pub fn sample_prob_tensor<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> ProbTensor {
    let len = dims.iter().product();
    let entries = sample_simplex(len, rng);
    ProbTensor::normalized(dims.to_vec(), entries).expect("simplex draw")
}

/// Multinomial counts of size `n`, drawn cell by cell as conditional
/// binomials in lexicographic cell order.
pub fn sample_multinomial<R: Rng + ?Sized>(p: &ProbTensor, n: u64, rng: &mut R) -> Result<CountTensor> {
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let probs = p.entries();
    let mut counts = vec![0u64; probs.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (i, &pi) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i + 1 == probs.len() {
            counts[i] = left;
            break;
        }
        let q = if mass > 0.0 { (pi / mass).clamp(0.0, 1.0) } else { 1.0 };
        let k = if q >= 1.0 {
            left
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(left, q).expect("valid binomial").sample(rng)
        };
        counts[i] = k;
        left -= k;
        mass -= pi;
    }
    CountTensor::new(p.dims().to_vec(), counts)
}

/// Deterministic random stream keyed by a master seed and a path of tags.
/// Each Monte Carlo unit derives its own child, so results do not depend on
/// how work is scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Substream {
    key: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Substream {
    pub fn new(seed: u64) -> Self {
        Substream { key: splitmix64(seed) }
    }

    pub fn child(self, index: u64) -> Self {
        Substream {
            key: splitmix64(self.key ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }

    /// Child keyed by a string tag (FNV-1a hashed).
    pub fn tagged(self, tag: &str) -> Self {
        let h = tag
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
        self.child(h)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}
