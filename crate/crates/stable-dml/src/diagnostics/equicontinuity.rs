//! Stochastic equicontinuity statistics: how far the fitted-vs-true moment
//! difference evaluated on the training sample drifts from its population
//! counterpart, on the `sqrt(n)` scale.

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{components_for, NuisanceEvaluator, NuisanceModels};
use crate::learners::LearnerConfig;
use crate::moments::{residual_obs, MomentKind, NuisancePredictions};
use crate::seed::SeedSpec;
use crate::simulation::SyntheticDgp;

/// Default fresh-draw budget for the population expectations.
pub fn default_population_size(n: usize) -> usize {
    100_000.max(100 * n)
}

#[derive(Debug, Clone, Copy)]
pub struct EquicontinuityStats {
    /// `sqrt(n) * || (A(g) - A(g0)) - (A_n(g) - A_n(g0)) ||_op`.
    pub stat_a: f64,
    /// `sqrt(n) * || (V(g) - V(g0)) - (V_n(g) - V_n(g0)) ||_2`.
    pub stat_v: f64,
}

/// The true-nuisance predictions of a synthetic process at given covariates.
fn true_predictions(dgp: &dyn SyntheticDgp, x: ArrayView2<f64>) -> Result<NuisancePredictions> {
    let n = x.nrows();
    let mut outcome = Array1::zeros(n);
    let mut treatment = Array2::zeros((n, 1));
    for i in 0..n {
        let row: Vec<f64> = x.row(i).iter().cloned().collect();
        let (q0, p0) = dgp.true_nuisances(&row).ok_or_else(|| {
            Error::invalid("this data-generating process does not expose its true nuisances")
        })?;
        outcome[i] = q0;
        treatment[(i, 0)] = p0[0];
    }
    Ok(NuisancePredictions::Residual { outcome, treatment })
}

/// Fit the configured learner on a fresh dataset and compute the statistics.
pub fn equicontinuity_stat(
    dgp: &dyn SyntheticDgp,
    n: usize,
    learner: &LearnerConfig,
    kind: &MomentKind,
    m_pop: usize,
    seed: &SeedSpec,
) -> Result<EquicontinuityStats> {
    let data = dgp.generate(n, &mut seed.child("data", 0).rng())?;
    let models = NuisanceModels::fit(&data, kind, learner, &seed.child("fit", 0))?;
    equicontinuity_stat_for(dgp, &data, Some(&models), kind, m_pop, seed)
}

/// Compute the statistics for a given training sample, either under fitted
/// `models` or (with `None`) under the true nuisances themselves, in which
/// case both statistics are exactly zero.
///
/// Only the residual moment is supported: it is the family whose true
/// nuisances a [`SyntheticDgp`] can expose.
pub fn equicontinuity_stat_for(
    dgp: &dyn SyntheticDgp,
    data: &Dataset,
    models: Option<&NuisanceModels>,
    kind: &MomentKind,
    m_pop: usize,
    seed: &SeedSpec,
) -> Result<EquicontinuityStats> {
    if !matches!(kind, MomentKind::Plr) {
        return Err(Error::invalid(
            "equicontinuity statistics are implemented for the residual moment only",
        ));
    }
    if m_pop == 0 {
        return Err(Error::invalid("population sample size must be positive"));
    }
    let n = data.n();

    // in-sample part
    let truth_sample = true_predictions(dgp, data.x().view())?;
    let hat_sample = match models {
        Some(m) => m.predictions(data)?,
        None => truth_sample.clone(),
    };
    let comps_hat = components_for(data, kind, &hat_sample)?;
    let comps_true = components_for(data, kind, &truth_sample)?;
    let d_a_sample = &comps_hat.a_mean() - &comps_true.a_mean();
    let d_v_sample = &comps_hat.nu_mean() - &comps_true.nu_mean();

    // population part from fresh draws, in fixed-size chunks so the
    // reduction order is independent of threading
    let p = data.treatment_dim();
    let mut pop_rng = seed.child("population", 0).rng();
    let mut d_a_pop = Array2::<f64>::zeros((p, p));
    let mut d_v_pop = Array1::<f64>::zeros(p);
    let chunk_size = 8192usize;
    let mut remaining = m_pop;
    while remaining > 0 {
        let take = remaining.min(chunk_size);
        let mut xs = Array2::zeros((take, dgp.covariate_dim()));
        let mut ts = Vec::with_capacity(take);
        let mut ys = Vec::with_capacity(take);
        for i in 0..take {
            let (x, t, y) = dgp.draw_observation(&mut pop_rng);
            for (j, v) in x.iter().enumerate() {
                xs[(i, j)] = *v;
            }
            ts.push(t);
            ys.push(y);
        }
        let hat = match models {
            Some(m) => m.predictions_for_x(xs.view())?,
            None => true_predictions(dgp, xs.view())?,
        };
        let truth = true_predictions(dgp, xs.view())?;
        let (NuisancePredictions::Residual { outcome: qh, treatment: ph },
             NuisancePredictions::Residual { outcome: q0, treatment: p0 }) = (&hat, &truth)
        else {
            unreachable!("residual family enforced above");
        };
        let diffs: Vec<(Array2<f64>, Array1<f64>)> = (0..take)
            .into_par_iter()
            .map(|i| {
                let t_row = ndarray::ArrayView1::from(&ts[i][..]);
                let (a_hat, nu_hat) = residual_obs(t_row, ys[i], qh[i], ph.row(i));
                let (a_true, nu_true) = residual_obs(t_row, ys[i], q0[i], p0.row(i));
                (&a_hat - &a_true, &nu_hat - &nu_true)
            })
            .collect();
        for (da, dv) in diffs {
            d_a_pop += &da;
            d_v_pop += &dv;
        }
        remaining -= take;
    }
    d_a_pop /= m_pop as f64;
    d_v_pop /= m_pop as f64;

    let centered_a = &d_a_pop - &d_a_sample;
    let centered_v = &d_v_pop - &d_v_sample;
    let na = nalgebra::DMatrix::from_fn(p, p, |i, j| centered_a[(i, j)]);
    let op_norm = na
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    let l2 = centered_v.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(EquicontinuityStats {
        stat_a: (n as f64).sqrt() * op_norm,
        stat_v: (n as f64).sqrt() * l2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{BRule, BaseKind, MRule};
    use crate::simulation::DgpConfig;

    fn seed() -> SeedSpec {
        SeedSpec::new(99)
    }

    #[test]
    fn true_nuisances_give_exactly_zero() {
        let dgp = DgpConfig::default();
        let data = dgp.generate(100, &mut seed().child("d", 0).rng()).unwrap();
        let s =
            equicontinuity_stat_for(&dgp, &data, None, &MomentKind::Plr, 2000, &seed()).unwrap();
        assert_eq!(s.stat_a, 0.0);
        assert_eq!(s.stat_v, 0.0);
    }

    #[test]
    fn fitted_nuisances_give_finite_positive_stats() {
        let dgp = DgpConfig::default();
        let learner = LearnerConfig::new(BaseKind::OneNn, MRule::Power(0.49), BRule::Auto);
        let s =
            equicontinuity_stat(&dgp, 100, &learner, &MomentKind::Plr, 5000, &seed()).unwrap();
        assert!(s.stat_a.is_finite() && s.stat_a > 0.0);
        assert!(s.stat_v.is_finite() && s.stat_v > 0.0);
    }

    #[test]
    fn unsupported_moments_error() {
        let dgp = DgpConfig::default();
        let data = dgp.generate(20, &mut seed().child("d", 0).rng()).unwrap();
        let err =
            equicontinuity_stat_for(&dgp, &data, None, &MomentKind::Ate, 100, &seed());
        assert!(err.is_err());
    }
}
