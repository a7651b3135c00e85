//! Synthetic partially linear experiments: data generation, the Monte Carlo
//! replication harness, coverage summaries and Q-Q data.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{estimate, normal_quantile, EstimateOptions, FitMode, NuisanceMode};
use crate::learners::LearnerConfig;
use crate::moments::MomentKind;
use crate::seed::{SeedSpec, Stream};

/// Covariate marginals for the synthetic design (both unit variance).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XDist {
    StdNormal,
    /// Uniform on `(-sqrt(3), sqrt(3))`.
    UniformUnitVar,
}

/// A data-generating process that diagnostics can draw from.
///
/// `true_nuisances` returns the conditional means `(E[y|x], E[t|x])` when the
/// process knows them; diagnostics that need the truth error out otherwise.
pub trait SyntheticDgp: Sync {
    fn generate(&self, n: usize, rng: &mut Stream) -> Result<Dataset>;

    /// One observation `(x, t, y)`, drawn like a row of [`SyntheticDgp::generate`].
    fn draw_observation(&self, rng: &mut Stream) -> (Vec<f64>, Vec<f64>, f64);

    /// A covariate point only (for evaluation grids).
    fn draw_covariates(&self, rng: &mut Stream) -> Vec<f64>;

    fn covariate_dim(&self) -> usize;

    fn true_nuisances(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let _ = x;
        None
    }
}

/// The partially linear design: `t = coef * x[s] + eta`,
/// `y = theta0 * t + coef * x[s] + eps`, with standard-normal noise and a
/// single confounding coordinate `s`.
#[derive(Debug, Clone)]
pub struct DgpConfig {
    pub theta0: f64,
    pub n_x: usize,
    pub sparse_index: usize,
    pub coef: f64,
    pub x_dist: XDist,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            theta0: 0.5,
            n_x: 1,
            sparse_index: 0,
            coef: 1.0,
            x_dist: XDist::StdNormal,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 {
            return Err(Error::invalid("n_x must be at least 1"));
        }
        if self.sparse_index >= self.n_x {
            return Err(Error::invalid(format!(
                "sparse_index {} out of range for n_x {}",
                self.sparse_index, self.n_x
            )));
        }
        if !self.coef.is_finite() || !self.theta0.is_finite() {
            return Err(Error::invalid("coefficients must be finite"));
        }
        Ok(())
    }

    fn draw_x(&self, rng: &mut Stream) -> f64 {
        match self.x_dist {
            XDist::StdNormal => StandardNormal.sample(rng),
            XDist::UniformUnitVar => {
                let s3 = 3.0_f64.sqrt();
                -s3 + 2.0 * s3 * rng.random::<f64>()
            }
        }
    }

    /// `E[t | x]`.
    pub fn true_treatment_mean(&self, x: &[f64]) -> f64 {
        self.coef * x[self.sparse_index]
    }

    /// `E[y | x]` (treatment integrated out).
    pub fn true_outcome_mean(&self, x: &[f64]) -> f64 {
        self.theta0 * self.true_treatment_mean(x) + self.coef * x[self.sparse_index]
    }
}

impl SyntheticDgp for DgpConfig {
    fn generate(&self, n: usize, rng: &mut Stream) -> Result<Dataset> {
        self.validate()?;
        if n < 2 {
            return Err(Error::invalid("need at least 2 observations"));
        }
        let mut x = Array2::zeros((n, self.n_x));
        let mut t = Array1::zeros(n);
        let mut y = Array1::zeros(n);
        for i in 0..n {
            let (xi, ti, yi) = self.draw_observation(rng);
            for (j, v) in xi.iter().enumerate() {
                x[(i, j)] = *v;
            }
            t[i] = ti[0];
            y[i] = yi;
        }
        Dataset::from_scalar_treatment(x, t, y)
    }

    fn draw_observation(&self, rng: &mut Stream) -> (Vec<f64>, Vec<f64>, f64) {
        let x = self.draw_covariates(rng);
        let eta: f64 = StandardNormal.sample(rng);
        let eps: f64 = StandardNormal.sample(rng);
        let t = self.true_treatment_mean(&x) + eta;
        let y = self.theta0 * t + self.coef * x[self.sparse_index] + eps;
        (x, vec![t], y)
    }

    fn draw_covariates(&self, rng: &mut Stream) -> Vec<f64> {
        (0..self.n_x).map(|_| self.draw_x(rng)).collect()
    }

    fn covariate_dim(&self) -> usize {
        self.n_x
    }

    fn true_nuisances(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        Some((
            self.true_outcome_mean(x),
            vec![self.true_treatment_mean(x)],
        ))
    }
}

/// One Monte Carlo experiment: a design, a learner, and the fitting modes to
/// compare on the same data.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub dgp: DgpConfig,
    pub n: usize,
    pub learner: LearnerConfig,
    pub modes: Vec<FitMode>,
    pub replications: usize,
    pub level: f64,
}

/// One replication of one mode.
#[derive(Debug, Clone)]
pub struct RepRecord {
    pub rep: usize,
    pub mode: FitMode,
    pub theta_hat: f64,
    pub se: f64,
    pub degenerate: bool,
}

/// One summary table row (one config and mode).
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub config: String,
    pub n: usize,
    pub n_x: usize,
    pub learner: String,
    pub m_rule: String,
    pub cv: usize,
    pub bias: f64,
    pub std: f64,
    pub std_est: f64,
    pub cov95: f64,
    pub reps: usize,
    pub seed: u64,
    /// Set when the spread statistics are meaningless (fewer than 2 reps).
    pub insufficient_reps: bool,
}

/// Aggregates of a replication batch.
#[derive(Debug, Clone, Copy)]
pub struct SummaryStats {
    /// `|mean(theta_hat) - theta0|`.
    pub bias: f64,
    /// Sample standard deviation of the estimates (divisor `R - 1`).
    pub std: f64,
    /// Mean of the estimated standard errors.
    pub std_est: f64,
    /// Fraction of replications whose interval covers `theta0`; degenerate
    /// replications always count as misses.
    pub coverage: f64,
    pub insufficient_reps: bool,
}

/// Summarize paired vectors of estimates and standard errors.
pub fn summarize(
    theta_hats: &[f64],
    ses: &[f64],
    degenerate: &[bool],
    theta0: f64,
    level: f64,
) -> Result<SummaryStats> {
    let r = theta_hats.len();
    if r == 0 {
        return Err(Error::invalid("cannot summarize zero replications"));
    }
    if ses.len() != r || degenerate.len() != r {
        return Err(Error::invalid("summary inputs must have equal lengths"));
    }
    let z = normal_quantile(level)?;
    let mean = theta_hats.iter().sum::<f64>() / r as f64;
    let bias = (mean - theta0).abs();
    let std = if r > 1 {
        (theta_hats.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (r as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    let std_est = ses.iter().sum::<f64>() / r as f64;
    let covered = (0..r)
        .filter(|&i| !degenerate[i] && (theta_hats[i] - theta0).abs() <= z * ses[i])
        .count();
    Ok(SummaryStats {
        bias,
        std,
        std_est,
        coverage: covered as f64 / r as f64,
        insufficient_reps: r < 2,
    })
}

/// The dataset replication `rep` of `mc` consumes, independent of which modes
/// run on it. Exposed so the paired design is externally checkable.
pub fn dataset_for_rep(mc: &McConfig, seed: &SeedSpec, rep: usize) -> Result<Dataset> {
    let mut rng = seed.child("rep", rep as u64).child("data", 0).rng();
    mc.dgp.generate(mc.n, &mut rng)
}

/// Identifier used in output tables for one `(config, mode)` pair.
pub fn config_label(mc: &McConfig, mode: FitMode) -> String {
    format!(
        "{}-{}-cv{}-n{}-nx{}",
        mc.learner.base,
        mc.learner.m_rule,
        mode.cv(),
        mc.n,
        mc.dgp.n_x
    )
}

/// Run the replication harness: every requested mode sees the same dataset
/// per replication, and every replication owns derived seeds, so results do
/// not depend on scheduling.
pub fn run_monte_carlo(
    mc: &McConfig,
    seed: &SeedSpec,
) -> Result<(Vec<SummaryRow>, Vec<RepRecord>)> {
    if mc.replications == 0 {
        return Err(Error::invalid("replications must be at least 1"));
    }
    if mc.modes.is_empty() {
        return Err(Error::invalid("at least one fitting mode is required"));
    }
    mc.dgp.validate()?;
    mc.learner.resolve(mc.n)?;

    let per_rep: Vec<Vec<(f64, f64, bool)>> = (0..mc.replications)
        .into_par_iter()
        .map(|rep| -> Result<Vec<(f64, f64, bool)>> {
            let data = dataset_for_rep(mc, seed, rep)?;
            let rep_seed = seed.child("rep", rep as u64);
            let mut out = Vec::with_capacity(mc.modes.len());
            for (mode_idx, &mode) in mc.modes.iter().enumerate() {
                let opts = EstimateOptions {
                    learner: mc.learner.clone(),
                    mode,
                    level: mc.level,
                    nuisance: NuisanceMode::Learner,
                };
                let r = estimate(
                    &data,
                    &MomentKind::Plr,
                    &opts,
                    &rep_seed.child("mode", mode_idx as u64),
                )?;
                out.push((r.theta_hat[0], r.se[0], r.degenerate));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(mc.modes.len());
    let mut raws = Vec::with_capacity(mc.modes.len() * mc.replications);
    for (mode_idx, &mode) in mc.modes.iter().enumerate() {
        let thetas: Vec<f64> = per_rep.iter().map(|r| r[mode_idx].0).collect();
        let ses: Vec<f64> = per_rep.iter().map(|r| r[mode_idx].1).collect();
        let degen: Vec<bool> = per_rep.iter().map(|r| r[mode_idx].2).collect();
        let stats = summarize(&thetas, &ses, &degen, mc.dgp.theta0, mc.level)?;
        if stats.insufficient_reps {
            log::warn!(
                "config {}: fewer than 2 replications, spread statistics are zero",
                config_label(mc, mode)
            );
        }
        rows.push(SummaryRow {
            config: config_label(mc, mode),
            n: mc.n,
            n_x: mc.dgp.n_x,
            learner: mc.learner.base.to_string(),
            m_rule: mc.learner.m_rule.to_string(),
            cv: mode.cv(),
            bias: stats.bias,
            std: stats.std,
            std_est: stats.std_est,
            cov95: stats.coverage,
            reps: mc.replications,
            seed: seed.master(),
            insufficient_reps: stats.insufficient_reps,
        });
        for (rep, row) in per_rep.iter().enumerate() {
            raws.push(RepRecord {
                rep,
                mode,
                theta_hat: row[mode_idx].0,
                se: row[mode_idx].1,
                degenerate: row[mode_idx].2,
            });
        }
    }
    Ok((rows, raws))
}

/// Q-Q pairs of standardized estimates against standard-normal quantiles.
#[derive(Debug, Clone)]
pub struct QqData {
    /// `(theoretical_quantile, sample_quantile)` pairs, sorted.
    pub points: Vec<(f64, f64)>,
    /// Set (with empty points) when the estimates have zero variance.
    pub zero_variance: bool,
}

/// Standardize by sample mean and standard deviation, sort, and pair with
/// normal quantiles at `(i - 0.5) / R`.
pub fn qq_points(theta_hats: &[f64]) -> Result<QqData> {
    let r = theta_hats.len();
    if r < 10 {
        return Err(Error::invalid(format!(
            "Q-Q data needs at least 10 values, got {r}"
        )));
    }
    let mean = theta_hats.iter().sum::<f64>() / r as f64;
    let sd = (theta_hats.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (r as f64 - 1.0)).sqrt();
    if sd == 0.0 {
        return Ok(QqData {
            points: Vec::new(),
            zero_variance: true,
        });
    }
    let mut standardized: Vec<f64> = theta_hats.iter().map(|t| (t - mean) / sd).collect();
    standardized.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
    let normal = statrs::distribution::Normal::standard();
    use statrs::distribution::ContinuousCDF;
    let points = standardized
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let q = (i as f64 + 0.5) / r as f64;
            (normal.inverse_cdf(q), s)
        })
        .collect();
    Ok(QqData {
        points,
        zero_variance: false,
    })
}

/// Largest Q-Q deviation over the probability range `[lo, hi]`.
///
/// Extreme order statistics of even perfectly normal samples wander far on
/// the quantile scale (the densities in the tails vanish), so closeness to
/// the diagonal is meaningful only on a bulk range such as `[0.05, 0.95]`.
pub fn qq_max_deviation(qq: &QqData, lo: f64, hi: f64) -> f64 {
    let r = qq.points.len() as f64;
    qq.points
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let p = (*i as f64 + 0.5) / r;
            lo <= p && p <= hi
        })
        .map(|(_, (t, s))| (t - s).abs())
        .fold(0.0, f64::max)
}
