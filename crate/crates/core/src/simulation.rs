//! Seeded Monte Carlo experiments over the exact solver and EM.
//!
//! Every iteration draws from its own [`Substream`], keyed by the master
//! seed, the experiment tag and the iteration index. Results therefore do not
//! depend on the rayon pool size, and CSV output is byte-identical across
//! thread counts.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::em::{classify_zero_pattern, multi_start_em, EmConfig, EmData, ZeroCategory};
use crate::error::{Error, Result};
use crate::exact_mle::global_mle;
use crate::model::{sample_multinomial, sample_prob_tensor, LatentParams, Substream};
use crate::strata::StratumClass;
use crate::tensor::{is_member_rank2, CountTensor, ProbTensor, SUPERMODULAR_TOL};

/// An EM run within this much of the exact optimum counts as finding it.
pub const EM_MATCH_TOL: f64 = 1e-6;

/// Draws multinomial counts from `p`, redrawing while some two-way margin is
/// zero. Returns the counts and the number of redraws.
pub fn sample_nondegenerate<R: Rng + ?Sized>(p: &ProbTensor, n: u64, rng: &mut R) -> Result<(CountTensor, u64)> {
    let mut redraws = 0;
    loop {
        let u = sample_multinomial(p, n, rng)?;
        if !u.is_degenerate() {
            return Ok((u, redraws));
        }
        redraws += 1;
        if redraws > 1_000_000 {
            return Err(Error::invalid(format!(
                "no nondegenerate sample of size {n} after {redraws} draws"
            )));
        }
    }
}

fn check_iters(iters: u64) -> Result<()> {
    if iters == 0 {
        return Err(Error::invalid("iteration count must be positive"));
    }
    Ok(())
}

fn check_n(n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    Ok(())
}

fn check_eps(eps: &[f64]) -> Result<()> {
    if eps.is_empty() {
        return Err(Error::invalid("need at least one epsilon"));
    }
    for &e in eps {
        LatentParams::epsilon(e)?;
    }
    Ok(())
}

fn class_index(c: StratumClass) -> usize {
    StratumClass::ALL.iter().position(|&x| x == c).expect("known class")
}

/// Where the global MLE landed, tallied by stratum class.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BasinReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    pub n: u64,
    pub iters: u64,
    pub seed: u64,
    /// Hits per class in [`StratumClass::ALL`] order.
    pub counts: [u64; 7],
    /// Degenerate samples that were redrawn.
    pub resampled: u64,
    pub elapsed_secs: f64,
}

impl BasinReport {
    pub fn count(&self, class: StratumClass) -> u64 {
        self.counts[class_index(class)]
    }

    pub fn percent(&self, class: StratumClass) -> f64 {
        100.0 * self.count(class) as f64 / self.iters as f64
    }

    pub fn percents(&self) -> [f64; 7] {
        StratumClass::ALL.map(|c| self.percent(c))
    }
}

fn basin_run<F>(iters: u64, n: u64, seed: u64, eps: Option<f64>, stream: Substream, draw: F) -> Result<BasinReport>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> ProbTensor + Sync,
{
    check_iters(iters)?;
    check_n(n)?;
    let start = Instant::now();
    let outcomes: Vec<(StratumClass, u64)> = (0..iters)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.child(i).rng();
            let p = draw(&mut rng);
            let (u, redraws) = sample_nondegenerate(&p, n, &mut rng)?;
            Ok((global_mle(&u)?.class, redraws))
        })
        .collect::<Result<_>>()?;
    let mut counts = [0u64; 7];
    let mut resampled = 0;
    for (c, r) in outcomes {
        counts[class_index(c)] += 1;
        resampled += r;
    }
    Ok(BasinReport {
        eps,
        n,
        iters,
        seed,
        counts,
        resampled,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

/// Sample `P` uniformly from the 7-simplex, draw `N` observations, and
/// record the class of the stratum holding the global MLE.
pub fn experiment_table1(iters: u64, n: u64, seed: u64) -> Result<BasinReport> {
    let stream = Substream::new(seed).tagged("table1");
    basin_run(iters, n, seed, None, stream, |rng| sample_prob_tensor(&[2, 2, 2], rng))
}

/// Basin tallies for data drawn from the symmetric ε distributions, one
/// report per ε.
pub fn experiment_epsilon(eps_list: &[f64], n: u64, iters: u64, seed: u64) -> Result<Vec<BasinReport>> {
    check_eps(eps_list)?;
    eps_list
        .iter()
        .map(|&eps| {
            let p = LatentParams::epsilon(eps)?.parameterize();
            let stream = Substream::new(seed).tagged("epsilon").child(eps.to_bits());
            basin_run(iters, n, seed, Some(eps), stream, |_| p.clone())
        })
        .collect()
}

/// CSV with one row per report and one column per basin class.
pub fn basin_csv(reports: &[BasinReport]) -> String {
    let with_eps = reports.iter().any(|r| r.eps.is_some());
    let mut out = String::new();
    if with_eps {
        out.push_str("eps,");
    }
    out.push_str("n,iters");
    for c in StratumClass::ALL {
        write!(out, ",{}", c.label()).unwrap();
    }
    out.push_str(",resampled\n");
    for r in reports {
        if with_eps {
            write!(out, "{},", r.eps.map_or(String::new(), |e| e.to_string())).unwrap();
        }
        write!(out, "{},{}", r.n, r.iters).unwrap();
        for p in r.percents() {
            write!(out, ",{p:.4}").unwrap();
        }
        writeln!(out, ",{}", r.resampled).unwrap();
    }
    out
}

/// Trials where multi-start EM missed the exact optimum, for one ε.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FailureRow {
    pub eps: f64,
    pub n: u64,
    pub trials: u64,
    pub restarts: usize,
    pub failures: u64,
    pub resampled: u64,
    /// Trials where some restart hit `max_iter`.
    pub unconverged_runs: u64,
}

impl FailureRow {
    pub fn rate(&self) -> f64 {
        self.failures as f64 / self.trials as f64
    }
}

/// For each ε, count the trials where none of `restarts` EM runs comes
/// within [`EM_MATCH_TOL`] of the exact maximum log-likelihood.
pub fn experiment_em_failures(
    eps_list: &[f64],
    n: u64,
    trials: u64,
    restarts: usize,
    seed: u64,
) -> Result<Vec<FailureRow>> {
    check_eps(eps_list)?;
    check_iters(trials)?;
    check_n(n)?;
    let config = EmConfig {
        restarts,
        ..EmConfig::default()
    };
    config.validate()?;
    eps_list
        .iter()
        .map(|&eps| {
            let p = LatentParams::epsilon(eps)?.parameterize();
            let stream = Substream::new(seed).tagged("em-failures").child(eps.to_bits());
            let outcomes: Vec<(bool, u64, bool)> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let trial = stream.child(t);
                    let (u, redraws) = sample_nondegenerate(&p, n, &mut trial.tagged("data").rng())?;
                    let exact = global_mle(&u)?.loglik;
                    let em = multi_start_em(&EmData::from_counts(&u), 2, &config, trial.tagged("em"))?;
                    let missed = em.best.loglik < exact - EM_MATCH_TOL;
                    Ok((missed, redraws, em.converged.iter().any(|c| !c)))
                })
                .collect::<Result<_>>()?;
            Ok(FailureRow {
                eps,
                n,
                trials,
                restarts,
                failures: outcomes.iter().filter(|o| o.0).count() as u64,
                resampled: outcomes.iter().map(|o| o.1).sum(),
                unconverged_runs: outcomes.iter().filter(|o| o.2).count() as u64,
            })
        })
        .collect()
}

pub fn failures_csv(rows: &[FailureRow]) -> String {
    let mut out = String::from("eps,n,trials,restarts,failures,rate,unconverged,resampled\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.4},{},{}",
            r.eps,
            r.n,
            r.trials,
            r.restarts,
            r.failures,
            r.rate(),
            r.unconverged_runs,
            r.resampled
        )
        .unwrap();
    }
    out
}

/// Default EM settings for [`experiment_mstar`].
pub fn mstar_config() -> EmConfig {
    EmConfig {
        restarts: 10,
        ..EmConfig::default()
    }
}

/// What EM is fitted to for each sampled distribution in the M* study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MstarData {
    /// Real-valued weights `n * P`.
    Direct { n: f64 },
    /// Multinomial counts of size `n` drawn from `P`.
    Sampled { n: u64 },
}

impl Default for MstarData {
    fn default() -> Self {
        MstarData::Direct { n: 1e6 }
    }
}

/// Column labels of the M* table: `0`, `1a`, `1b`, then `2` to `11`, with
/// larger zero counts in a final `>11` column.
pub fn mstar_columns() -> Vec<String> {
    let mut cols: Vec<String> = vec!["0".into(), "1a".into(), "1b".into()];
    cols.extend((2..=11).map(|k| k.to_string()));
    cols.push(">11".into());
    cols
}

fn mstar_column(c: ZeroCategory) -> usize {
    match c {
        ZeroCategory::Interior => 0,
        ZeroCategory::OneZeroWide => 1,
        ZeroCategory::OneZeroNarrow => 2,
        ZeroCategory::Codim(k) => (k + 1).min(13),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MstarReport {
    pub iters: u64,
    pub restarts: usize,
    pub seed: u64,
    pub data: MstarData,
    pub zero_threshold: f64,
    /// Hits per column of [`mstar_columns`].
    pub counts: Vec<u64>,
    /// Iterations whose best EM run hit `max_iter`.
    pub unconverged: u64,
    pub elapsed_secs: f64,
}

impl MstarReport {
    pub fn percents(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| 100.0 * c as f64 / self.iters as f64)
            .collect()
    }

    /// Percentage for a column label such as `"0"` or `"4"`.
    pub fn percent(&self, label: &str) -> Option<f64> {
        let i = mstar_columns().iter().position(|c| c == label)?;
        Some(self.percents()[i])
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("iters,restarts");
        for c in mstar_columns() {
            write!(out, ",{c}").unwrap();
        }
        writeln!(out, ",unconverged").unwrap();
        write!(out, "{},{}", self.iters, self.restarts).unwrap();
        for p in self.percents() {
            write!(out, ",{p:.4}").unwrap();
        }
        writeln!(out, ",{}", self.unconverged).unwrap();
        out
    }
}

/// Three-class EM on 3x3x2 tables for uniform `P` in the 17-simplex; the
/// best of `restarts` runs is classified by its zero pattern.
pub fn experiment_mstar(iters: u64, restarts: usize, seed: u64, data: MstarData, config: &EmConfig) -> Result<MstarReport> {
    check_iters(iters)?;
    let config = EmConfig {
        restarts,
        ..config.clone()
    };
    config.validate()?;
    if let MstarData::Direct { n } = data {
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::invalid("direct-fit weight must be positive"));
        }
    }
    let start = Instant::now();
    let stream = Substream::new(seed).tagged("mstar");
    let dims = [3usize, 3, 2];
    let outcomes: Vec<(usize, bool)> = (0..iters)
        .into_par_iter()
        .map(|i| {
            let it = stream.child(i);
            let mut rng = it.tagged("data").rng();
            let p = sample_prob_tensor(&dims, &mut rng);
            let em_data = match data {
                MstarData::Direct { n } => {
                    EmData::from_weights(dims.to_vec(), p.entries().iter().map(|x| x * n).collect())?
                }
                MstarData::Sampled { n } => EmData::from_counts(&sample_multinomial(&p, n, &mut rng)?),
            };
            let fit = multi_start_em(&em_data, 3, &config, it.tagged("em"))?;
            let zp = classify_zero_pattern(&fit.best.params, config.zero_threshold);
            Ok((mstar_column(zp.category), fit.best.converged))
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![0u64; mstar_columns().len()];
    let mut unconverged = 0;
    for (col, conv) in outcomes {
        counts[col] += 1;
        unconverged += u64::from(!conv);
    }
    Ok(MstarReport {
        iters,
        restarts,
        seed,
        data,
        zero_threshold: config.zero_threshold,
        counts,
        unconverged,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumeReport {
    pub iters: u64,
    pub seed: u64,
    pub accepted: u64,
    pub percent: f64,
    /// Binomial standard error of `percent`.
    pub se_percent: f64,
}

impl VolumeReport {
    pub fn csv(&self) -> String {
        format!(
            "iters,accepted,percent,se\n{},{},{:.4},{:.4}\n",
            self.iters, self.accepted, self.percent, self.se_percent
        )
    }
}

/// Fraction of uniform draws from the 7-simplex that lie in the model.
pub fn membership_volume(iters: u64, seed: u64) -> Result<VolumeReport> {
    check_iters(iters)?;
    let stream = Substream::new(seed).tagged("volume");
    let accepted = (0..iters)
        .into_par_iter()
        .filter(|&i| {
            let p = sample_prob_tensor(&[2, 2, 2], &mut stream.child(i).rng());
            is_member_rank2(&p, SUPERMODULAR_TOL)
        })
        .count() as u64;
    let frac = accepted as f64 / iters as f64;
    Ok(VolumeReport {
        iters,
        seed,
        accepted,
        percent: 100.0 * frac,
        se_percent: 100.0 * (frac * (1.0 - frac) / iters as f64).sqrt(),
    })
}
