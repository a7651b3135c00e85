//! Empirical leave-one-out stability of the fitted moment pieces.
//!
//! One observation of a training sample is replaced by an independent copy
//! and the nuisances are refit; by default the refit reuses the same seed
//! path, so bag index sets are identical and only the data perturbation
//! propagates. The probes measure how much the per-observation moment
//! pieces and the fitted functions themselves move: the quantities that
//! must vanish faster than `1/sqrt(n)` for full-sample reuse to be valid.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{NuisanceEvaluator, NuisanceModels};
use crate::learners::LearnerConfig;
use crate::moments::{counterfactual_obs, instrumental_obs, residual_obs, MomentKind, NuisancePredictions};
use crate::sampling::subsample_without_replacement;
use crate::seed::SeedSpec;
use crate::simulation::SyntheticDgp;

#[derive(Debug, Clone)]
pub struct StabilityOptions {
    /// How many leave-one-out positions to probe; 0 means `min(n, 20)`.
    pub probes: usize,
    /// Monte Carlo replications (fresh dataset per replication).
    pub replications: usize,
    /// Size of the fresh-covariate sample approximating the sup over x.
    pub sup_points: usize,
    /// Reuse the fitting seed for the refit (identical bag index sets).
    /// When false the refit draws fresh ensemble randomness.
    pub coupled: bool,
    /// The sup-norm statistic is an L^{2r} norm; r = 1 gives the plain L2.
    pub norm_order_r: f64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            probes: 0,
            replications: 3,
            sup_points: 200,
            coupled: true,
            norm_order_r: 1.0,
        }
    }
}

/// Empirical stability norms, each reported as the max over probed
/// positions of the Monte Carlo estimate.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub n: usize,
    pub m: usize,
    pub b: usize,
    pub probes: usize,
    pub replications: usize,
    pub sup_points: usize,
    pub coupled: bool,
    /// `max_l E |a(Z_l, g) - a(Z_l, g_repl)|` (worst matrix entry).
    pub a_train_l1: f64,
    /// `max_l sqrt(E (a(Z, g) - a(Z, g_repl))^2)` at a fresh Z.
    pub a_fresh_l2: f64,
    pub nu_train_l1: f64,
    pub nu_fresh_l2: f64,
    /// `max_l || sup_x ||g(x) - g_repl(x)||_2 ||_{2r}` over the stacked
    /// nuisance outputs.
    pub sup_loo: f64,
    /// The same statistic per stacked nuisance coordinate.
    pub sup_loo_by_nuisance: Vec<(String, f64)>,
}

/// Moment pieces of a single observation under fitted nuisance models.
fn obs_components(
    kind: &MomentKind,
    models: &NuisanceModels,
    x: ArrayView1<f64>,
    t: ArrayView1<f64>,
    y: f64,
    w: Option<ArrayView1<f64>>,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let xm = x.insert_axis(Axis(0));
    let preds = models.predictions_for_x(xm)?;
    match (&preds, kind) {
        (NuisancePredictions::Residual { outcome, treatment }, MomentKind::Plr) => {
            Ok(residual_obs(t, y, outcome[0], treatment.row(0)))
        }
        (
            NuisancePredictions::Instrumental {
                outcome,
                treatment,
                instrument,
            },
            MomentKind::Pliv,
        ) => {
            let w = w.ok_or_else(|| Error::invalid("instrumented moment needs an instrument"))?;
            Ok(instrumental_obs(
                t,
                y,
                w,
                outcome[0],
                treatment.row(0),
                instrument.row(0),
            ))
        }
        (
            NuisancePredictions::Counterfactual {
                outcome0,
                outcome1,
                propensity,
            },
            MomentKind::Ate | MomentKind::Policy(_),
        ) => {
            let weight = match kind {
                MomentKind::Policy(pi) => {
                    if pi(x) {
                        1.0
                    } else {
                        0.0
                    }
                }
                _ => 1.0,
            };
            let (a, nu, _) =
                counterfactual_obs(t[0], y, outcome0[0], outcome1[0], propensity[0], weight)?;
            Ok((a, nu))
        }
        _ => Err(Error::invalid(
            "nuisance family does not match the moment kind",
        )),
    }
}

struct RepContribution {
    a_train_abs: Vec<Array2<f64>>,
    a_fresh_sq: Vec<Array2<f64>>,
    nu_train_abs: Vec<Array1<f64>>,
    nu_fresh_sq: Vec<Array1<f64>>,
    sup_pow: Vec<f64>,
    sup_pow_by: Vec<Vec<f64>>,
    labels: Vec<String>,
}

/// Measure leave-one-out stability of the `kind` moment under `learner`
/// nuisances on data drawn from `dgp`.
pub fn loo_stability(
    dgp: &dyn SyntheticDgp,
    n: usize,
    learner: &LearnerConfig,
    kind: &MomentKind,
    opts: &StabilityOptions,
    seed: &SeedSpec,
) -> Result<StabilityReport> {
    if n < 2 {
        return Err(Error::invalid("need n >= 2"));
    }
    if opts.replications == 0 {
        return Err(Error::invalid("need at least one replication"));
    }
    if opts.sup_points == 0 {
        return Err(Error::invalid("need at least one sup evaluation point"));
    }
    if opts.probes > n {
        return Err(Error::invalid(format!(
            "cannot probe {} positions out of {n}",
            opts.probes
        )));
    }
    if !(opts.norm_order_r >= 0.5) {
        return Err(Error::invalid("norm order r must be at least 0.5"));
    }
    let l_probed = if opts.probes == 0 {
        n.min(20)
    } else {
        opts.probes
    };
    let (m, b) = learner.resolve(n)?;
    let probe_ids = subsample_without_replacement(n, l_probed, &mut seed.child("probes", 0).rng())?;
    let two_r = 2.0 * opts.norm_order_r;

    let contributions: Vec<RepContribution> = (0..opts.replications)
        .into_par_iter()
        .map(|rep| -> Result<RepContribution> {
            let rep_seed = seed.child("rep", rep as u64);
            let data = dgp.generate(n, &mut rep_seed.child("data", 0).rng())?;
            let fit_seed = rep_seed.child("fit", 0);
            let models = NuisanceModels::fit(&data, kind, learner, &fit_seed)?;

            let mut grid_rng = rep_seed.child("grid", 0).rng();
            let grid: Vec<Vec<f64>> = (0..opts.sup_points)
                .map(|_| dgp.draw_covariates(&mut grid_rng))
                .collect();
            let base_grid: Vec<Vec<f64>> = grid
                .iter()
                .map(|g| models.eval_stacked(ArrayView1::from(&g[..])))
                .collect::<Result<Vec<_>>>()?;
            let stack_len = base_grid.first().map_or(0, |v| v.len());

            let mut c = RepContribution {
                a_train_abs: Vec::with_capacity(l_probed),
                a_fresh_sq: Vec::with_capacity(l_probed),
                nu_train_abs: Vec::with_capacity(l_probed),
                nu_fresh_sq: Vec::with_capacity(l_probed),
                sup_pow: Vec::with_capacity(l_probed),
                sup_pow_by: Vec::with_capacity(l_probed),
                labels: models.stack_labels(),
            };

            for &l in &probe_ids {
                let mut pert_rng = rep_seed.child("replace", l as u64).rng();
                let (xr, tr, yr) = dgp.draw_observation(&mut pert_rng);
                let data_l = data.with_row_replaced(l, &xr, &tr, yr, None)?;
                let refit_seed = if opts.coupled {
                    fit_seed.clone()
                } else {
                    rep_seed.child("refit", l as u64)
                };
                let models_l = NuisanceModels::fit(&data_l, kind, learner, &refit_seed)?;

                // moment pieces at the original l-th observation
                let (a0, nu0) = obs_components(
                    kind,
                    &models,
                    data.x().row(l),
                    data.t().row(l),
                    data.y()[l],
                    data.w().map(|w| w.row(l)),
                )?;
                let (a1, nu1) = obs_components(
                    kind,
                    &models_l,
                    data.x().row(l),
                    data.t().row(l),
                    data.y()[l],
                    data.w().map(|w| w.row(l)),
                )?;
                c.a_train_abs.push((&a0 - &a1).mapv(f64::abs));
                c.nu_train_abs.push((&nu0 - &nu1).mapv(f64::abs));

                // moment pieces at an independent fresh observation
                let mut fresh_rng = rep_seed.child("fresh", l as u64).rng();
                let (xf, tf, yf) = dgp.draw_observation(&mut fresh_rng);
                let xf_v = ArrayView1::from(&xf[..]);
                let tf_v = ArrayView1::from(&tf[..]);
                let (af0, nf0) = obs_components(kind, &models, xf_v, tf_v, yf, None)?;
                let (af1, nf1) = obs_components(kind, &models_l, xf_v, tf_v, yf, None)?;
                c.a_fresh_sq.push((&af0 - &af1).mapv(|d| d * d));
                c.nu_fresh_sq.push((&nf0 - &nf1).mapv(|d| d * d));

                // sup over the fresh covariate grid
                let mut sup: f64 = 0.0;
                let mut sup_by = vec![0.0f64; stack_len];
                for (g, base) in grid.iter().zip(base_grid.iter()) {
                    let pert = models_l.eval_stacked(ArrayView1::from(&g[..]))?;
                    let mut sq = 0.0;
                    for (k, (pb, pp)) in base.iter().zip(pert.iter()).enumerate() {
                        let d = (pb - pp).abs();
                        if d > sup_by[k] {
                            sup_by[k] = d;
                        }
                        sq += d * d;
                    }
                    sup = sup.max(sq.sqrt());
                }
                c.sup_pow.push(sup.powf(two_r));
                c.sup_pow_by
                    .push(sup_by.iter().map(|d| d.powf(two_r)).collect());
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;

    let reps = opts.replications as f64;
    let labels = contributions[0].labels.clone();
    let stack_len = labels.len();
    let p = contributions[0].a_train_abs[0].nrows();
    let q = contributions[0].a_train_abs[0].ncols();

    let mut a_train_l1: f64 = 0.0;
    let mut a_fresh_l2: f64 = 0.0;
    let mut nu_train_l1: f64 = 0.0;
    let mut nu_fresh_l2: f64 = 0.0;
    let mut sup_loo: f64 = 0.0;
    let mut sup_by = vec![0.0f64; stack_len];
    for li in 0..l_probed {
        let mut a_tr = Array2::<f64>::zeros((p, q));
        let mut a_fr = Array2::<f64>::zeros((p, q));
        let mut n_tr = Array1::<f64>::zeros(p);
        let mut n_fr = Array1::<f64>::zeros(p);
        let mut s_pow = 0.0;
        let mut s_pow_by = vec![0.0f64; stack_len];
        for c in &contributions {
            a_tr += &c.a_train_abs[li];
            a_fr += &c.a_fresh_sq[li];
            n_tr += &c.nu_train_abs[li];
            n_fr += &c.nu_fresh_sq[li];
            s_pow += c.sup_pow[li];
            for k in 0..stack_len {
                s_pow_by[k] += c.sup_pow_by[li][k];
            }
        }
        let max_entry = |m: &Array2<f64>| m.iter().cloned().fold(0.0, f64::max);
        let max_vec = |v: &Array1<f64>| v.iter().cloned().fold(0.0, f64::max);
        a_train_l1 = a_train_l1.max(max_entry(&(&a_tr / reps)));
        a_fresh_l2 = a_fresh_l2.max(max_entry(&(&a_fr / reps).mapv(f64::sqrt)));
        nu_train_l1 = nu_train_l1.max(max_vec(&(&n_tr / reps)));
        nu_fresh_l2 = nu_fresh_l2.max(max_vec(&(&n_fr / reps).mapv(f64::sqrt)));
        sup_loo = sup_loo.max((s_pow / reps).powf(1.0 / two_r));
        for k in 0..stack_len {
            sup_by[k] = sup_by[k].max((s_pow_by[k] / reps).powf(1.0 / two_r));
        }
    }

    Ok(StabilityReport {
        n,
        m,
        b,
        probes: l_probed,
        replications: opts.replications,
        sup_points: opts.sup_points,
        coupled: opts.coupled,
        a_train_l1,
        a_fresh_l2,
        nu_train_l1,
        nu_fresh_l2,
        sup_loo,
        sup_loo_by_nuisance: labels.into_iter().zip(sup_by).collect(),
    })
}

/// Stability measured across sample sizes, with the fitted decay rate of
/// the sup-norm statistic.
#[derive(Debug, Clone)]
pub struct RateScan {
    pub reports: Vec<StabilityReport>,
    /// `(ln n, ln sup_loo)` pairs actually used in the fit.
    pub log_points: Vec<(f64, f64)>,
    /// Least-squares slope of `ln sup_loo` on `ln n`; `None` when some
    /// statistic is zero (a data-independent learner) and the log scale is
    /// undefined.
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
}

/// Run [`loo_stability`] for each sample size and fit the log-log decay
/// slope of the sup-norm statistic.
pub fn stability_rate_scan(
    dgp: &dyn SyntheticDgp,
    ns: &[usize],
    learner: &LearnerConfig,
    kind: &MomentKind,
    opts: &StabilityOptions,
    seed: &SeedSpec,
) -> Result<RateScan> {
    if ns.len() < 3 {
        return Err(Error::invalid("rate scan needs at least 3 sample sizes"));
    }
    if !ns.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid("sample sizes must be strictly increasing"));
    }
    let mut reports = Vec::with_capacity(ns.len());
    for &n in ns {
        reports.push(loo_stability(
            dgp,
            n,
            learner,
            kind,
            opts,
            &seed.child("n", n as u64),
        )?);
    }
    if reports.iter().any(|r| r.sup_loo <= 0.0) {
        return Ok(RateScan {
            reports,
            log_points: Vec::new(),
            slope: None,
            slope_se: None,
        });
    }
    let log_points: Vec<(f64, f64)> = reports
        .iter()
        .map(|r| ((r.n as f64).ln(), r.sup_loo.ln()))
        .collect();
    let (slope, se) = ols_slope(&log_points);
    Ok(RateScan {
        reports,
        log_points,
        slope: Some(slope),
        slope_se: se,
    })
}

/// Simple least-squares slope with its standard error (None when the fit
/// has no residual degrees of freedom).
pub fn ols_slope(points: &[(f64, f64)]) -> (f64, Option<f64>) {
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    if points.len() <= 2 {
        return (slope, None);
    }
    let intercept = my - slope * mx;
    let ssr: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let s2 = ssr / (k - 2.0);
    (slope, Some((s2 / sxx).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::learners::{BRule, BaseKind, MRule};
    use crate::seed::Stream;
    use crate::simulation::DgpConfig;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    /// Labels and treatments constant: any fitted base learner outputs the
    /// constants, so every leave-one-out difference is exactly zero.
    struct ConstantDgp;

    impl SyntheticDgp for ConstantDgp {
        fn generate(&self, n: usize, rng: &mut Stream) -> crate::error::Result<Dataset> {
            let mut x = ndarray::Array2::zeros((n, 1));
            for i in 0..n {
                x[(i, 0)] = rng.random::<f64>();
            }
            Dataset::from_scalar_treatment(
                x,
                ndarray::Array1::from_elem(n, 2.0),
                ndarray::Array1::from_elem(n, 5.0),
            )
        }

        fn draw_observation(&self, rng: &mut Stream) -> (Vec<f64>, Vec<f64>, f64) {
            (vec![rng.random::<f64>()], vec![2.0], 5.0)
        }

        fn draw_covariates(&self, rng: &mut Stream) -> Vec<f64> {
            vec![rng.random::<f64>()]
        }

        fn covariate_dim(&self) -> usize {
            1
        }
    }

    fn seed() -> SeedSpec {
        SeedSpec::new(4242)
    }

    #[test]
    fn constant_process_has_zero_norms_and_no_slope() {
        let learner = LearnerConfig::new(BaseKind::OneNn, MRule::Fixed(2), BRule::Fixed(10));
        let opts = StabilityOptions {
            probes: 4,
            replications: 2,
            sup_points: 16,
            ..StabilityOptions::default()
        };
        let r = loo_stability(&ConstantDgp, 12, &learner, &MomentKind::Plr, &opts, &seed()).unwrap();
        assert_eq!(r.a_train_l1, 0.0);
        assert_eq!(r.a_fresh_l2, 0.0);
        assert_eq!(r.nu_train_l1, 0.0);
        assert_eq!(r.nu_fresh_l2, 0.0);
        assert_eq!(r.sup_loo, 0.0);

        let scan = stability_rate_scan(
            &ConstantDgp,
            &[8, 12, 16],
            &learner,
            &MomentKind::Plr,
            &opts,
            &seed(),
        )
        .unwrap();
        assert!(scan.slope.is_none());
    }

    #[test]
    fn singleton_exact_bagging_matches_the_closed_form() {
        // n=2, m=1, exact bagging: the fit is the label mean, so replacing
        // observation l moves every prediction by (y_l - y_repl) / 2. With
        // standard-normal outcomes the L2 norm of the sup difference is
        // sqrt(2)/2 = 0.7071.
        let dgp = DgpConfig {
            theta0: 0.0,
            coef: 0.0,
            ..DgpConfig::default()
        };
        let learner = LearnerConfig::new(BaseKind::OneNn, MRule::Fixed(1), BRule::Exact);
        let opts = StabilityOptions {
            probes: 2,
            replications: 4000,
            sup_points: 8,
            ..StabilityOptions::default()
        };
        let r = loo_stability(&dgp, 2, &learner, &MomentKind::Plr, &opts, &seed()).unwrap();
        let outcome_sup = r
            .sup_loo_by_nuisance
            .iter()
            .find(|(name, _)| name == "outcome")
            .unwrap()
            .1;
        assert_abs_diff_eq!(outcome_sup, std::f64::consts::FRAC_1_SQRT_2, epsilon = 0.05);
        // stacked over (outcome, treatment): both coordinates contribute 1/2
        assert_abs_diff_eq!(r.sup_loo, 1.0, epsilon = 0.06);
    }

    #[test]
    fn label_mean_instability_decays_like_one_over_n() {
        // m=1 exact bagging is the label mean for any n, so the sup
        // difference is |y_l - y_repl| / n and the log-log slope is -1.
        let dgp = DgpConfig {
            theta0: 0.0,
            coef: 0.0,
            ..DgpConfig::default()
        };
        let learner = LearnerConfig::new(BaseKind::OneNn, MRule::Fixed(1), BRule::Exact);
        let opts = StabilityOptions {
            probes: 4,
            replications: 1500,
            sup_points: 4,
            ..StabilityOptions::default()
        };
        let scan = stability_rate_scan(
            &dgp,
            &[4, 8, 16],
            &learner,
            &MomentKind::Plr,
            &opts,
            &seed(),
        )
        .unwrap();
        let slope = scan.slope.unwrap();
        assert!((slope + 1.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn coupled_refits_share_bag_index_sets() {
        // With coupling, bags that never contain the probed index give
        // bit-identical predictions, so the decoupled variant cannot be
        // more stable.
        let dgp = DgpConfig::default();
        let learner = LearnerConfig::new(BaseKind::OneNn, MRule::Fixed(4), BRule::Fixed(40));
        let base = StabilityOptions {
            probes: 3,
            replications: 3,
            sup_points: 32,
            ..StabilityOptions::default()
        };
        let coupled =
            loo_stability(&dgp, 60, &learner, &MomentKind::Plr, &base, &seed()).unwrap();
        let decoupled = loo_stability(
            &dgp,
            60,
            &learner,
            &MomentKind::Plr,
            &StabilityOptions {
                coupled: false,
                ..base
            },
            &seed(),
        )
        .unwrap();
        assert!(coupled.sup_loo > 0.0);
        assert!(decoupled.sup_loo >= coupled.sup_loo);
    }

    #[test]
    fn subsampled_ensembles_destabilize_with_larger_bags() {
        // Holding n fixed, larger subsamples make single observations more
        // influential.
        let dgp = DgpConfig::default();
        let opts = StabilityOptions {
            probes: 6,
            replications: 3,
            sup_points: 64,
            ..StabilityOptions::default()
        };
        let small = LearnerConfig::new(BaseKind::OneNn, MRule::Fixed(3), BRule::Fixed(60));
        let large = LearnerConfig::new(BaseKind::OneNn, MRule::Fixed(48), BRule::Fixed(60));
        let r_small =
            loo_stability(&dgp, 64, &small, &MomentKind::Plr, &opts, &seed()).unwrap();
        let r_large =
            loo_stability(&dgp, 64, &large, &MomentKind::Plr, &opts, &seed()).unwrap();
        assert!(
            r_large.sup_loo > r_small.sup_loo,
            "large {} vs small {}",
            r_large.sup_loo,
            r_small.sup_loo
        );
    }

    #[test]
    fn validates_sizes() {
        let learner = LearnerConfig::subsample_one_nn();
        let dgp = DgpConfig::default();
        let opts = StabilityOptions {
            probes: 30,
            replications: 1,
            sup_points: 4,
            ..StabilityOptions::default()
        };
        assert!(loo_stability(&dgp, 10, &learner, &MomentKind::Plr, &opts, &seed()).is_err());
        assert!(stability_rate_scan(
            &dgp,
            &[10, 20],
            &learner,
            &MomentKind::Plr,
            &StabilityOptions::default(),
            &seed()
        )
        .is_err());
    }

    #[test]
    fn ols_slope_recovers_exact_lines() {
        let pts: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, 3.0 - 2.0 * i as f64)).collect();
        let (slope, se) = ols_slope(&pts);
        assert_abs_diff_eq!(slope, -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(se.unwrap(), 0.0, epsilon = 1e-9);
    }
}
