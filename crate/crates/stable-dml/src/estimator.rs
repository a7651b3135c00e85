//! Two-stage moment estimation: fit nuisances (full-sample or cross-fit),
//! solve the empirical linear moment, and attach sandwich standard errors.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::learners::{BaggedEnsemble, LearnerConfig};
use crate::moments::{
    functional_components, plr_components, pliv_components, Functional, MomentComponents,
    MomentKind, NuisancePredictions,
};
use crate::sampling::{make_folds, FoldAssignment};
use crate::seed::SeedSpec;

/// Nuisance fitting strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    /// Fit every nuisance on all observations and evaluate the moment on the
    /// same observations.
    NoSplit,
    /// K-fold cross-fitting: the moment at observation `i` uses nuisances fit
    /// on the complement of `i`'s fold.
    CrossFit(usize),
}

impl FitMode {
    /// The `cv` column value used in result tables (1 = no split).
    pub fn cv(&self) -> usize {
        match self {
            FitMode::NoSplit => 1,
            FitMode::CrossFit(k) => *k,
        }
    }

    pub fn label(&self) -> String {
        match self {
            FitMode::NoSplit => "nosplit".to_string(),
            FitMode::CrossFit(k) => format!("crossfit{k}"),
        }
    }
}

/// Where nuisance predictions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NuisanceMode {
    #[default]
    Learner,
    /// Debug mode: regression nuisances forced to zero (propensity to 0.5),
    /// reducing the residual moment to plain least squares.
    Zero,
}

#[derive(Debug, Clone)]
pub struct EstimateOptions {
    pub learner: LearnerConfig,
    pub mode: FitMode,
    /// Two-sided confidence level, e.g. 0.95.
    pub level: f64,
    pub nuisance: NuisanceMode,
}

impl EstimateOptions {
    pub fn new(learner: LearnerConfig, mode: FitMode) -> Self {
        EstimateOptions {
            learner,
            mode,
            level: 0.95,
            nuisance: NuisanceMode::Learner,
        }
    }
}

/// Point estimate with sandwich uncertainty.
#[derive(Debug, Clone)]
pub struct EstimateResult {
    pub theta_hat: Array1<f64>,
    /// Estimated covariance of `theta_hat` (already divided by `n`).
    pub cov: Array2<f64>,
    pub se: Array1<f64>,
    pub ci_low: Array1<f64>,
    pub ci_high: Array1<f64>,
    /// Set when the empirical Jacobian was numerically singular; by
    /// convention the estimate is then 0 with zero standard error.
    pub degenerate: bool,
    pub min_singular_value: f64,
    pub mode: FitMode,
}

/// Fitted nuisance models, evaluable at arbitrary covariate points.
#[derive(Debug)]
pub enum NuisanceModels {
    Residual {
        outcome: BaggedEnsemble,
        treatment: BaggedEnsemble,
    },
    Instrumental {
        outcome: BaggedEnsemble,
        treatment: BaggedEnsemble,
        instrument: BaggedEnsemble,
    },
    Counterfactual {
        /// Outcome regression on `[t | x]`.
        outcome: BaggedEnsemble,
        /// Treatment regression on `x` (the raw propensity).
        propensity: BaggedEnsemble,
    },
}

/// Anything that can produce per-observation nuisance values: fitted models
/// or, in synthetic checks, the true functions of a data-generating process.
pub trait NuisanceEvaluator {
    fn predictions(&self, data: &Dataset) -> Result<NuisancePredictions>;

    /// Names of the stacked nuisance outputs at a covariate point.
    fn stack_labels(&self) -> Vec<String>;

    /// Stacked nuisance outputs at covariate point `x`, matching
    /// [`NuisanceEvaluator::stack_labels`]. For the counterfactual family the
    /// outcome regression is evaluated at both treatment arms.
    fn eval_stacked(&self, x: ArrayView1<f64>) -> Result<Vec<f64>>;
}

impl NuisanceModels {
    /// Fit the nuisances required by `kind` on all of `data`.
    ///
    /// Each nuisance gets its own child seed ("outcome", "treatment",
    /// "instrument", "propensity"), so streams never overlap.
    pub fn fit(
        data: &Dataset,
        kind: &MomentKind,
        learner: &LearnerConfig,
        seed: &SeedSpec,
    ) -> Result<Self> {
        Self::fit_from_parts(
            data.x().view(),
            data.t().view(),
            data.y().view(),
            data.w().map(|w| w.view()),
            kind,
            learner,
            seed,
        )
    }

    /// As [`NuisanceModels::fit`] but from raw training arrays; used for fold
    /// training where slices may be as small as one observation.
    pub fn fit_from_parts(
        x: ndarray::ArrayView2<f64>,
        t: ndarray::ArrayView2<f64>,
        y: ArrayView1<f64>,
        w: Option<ndarray::ArrayView2<f64>>,
        kind: &MomentKind,
        learner: &LearnerConfig,
        seed: &SeedSpec,
    ) -> Result<Self> {
        let y_col = y
            .into_shape_with_order((y.len(), 1))
            .expect("column reshape");
        match kind {
            MomentKind::Plr => Ok(NuisanceModels::Residual {
                outcome: learner.fit(x, y_col, &seed.child("outcome", 0))?,
                treatment: learner.fit(x, t, &seed.child("treatment", 0))?,
            }),
            MomentKind::Pliv => {
                let w = w.ok_or_else(|| {
                    Error::invalid("instrumented moment needs an instrument block in the dataset")
                })?;
                Ok(NuisanceModels::Instrumental {
                    outcome: learner.fit(x, y_col, &seed.child("outcome", 0))?,
                    treatment: learner.fit(x, t, &seed.child("treatment", 0))?,
                    instrument: learner.fit(x, w, &seed.child("instrument", 0))?,
                })
            }
            MomentKind::Ate | MomentKind::Policy(_) => {
                if t.ncols() != 1 {
                    return Err(Error::invalid(
                        "binary-treatment moments need a scalar treatment",
                    ));
                }
                let tx = concat_columns(t, x);
                Ok(NuisanceModels::Counterfactual {
                    outcome: learner.fit(tx.view(), y_col, &seed.child("outcome", 0))?,
                    propensity: learner.fit(x, t, &seed.child("propensity", 0))?,
                })
            }
        }
    }

    /// Nuisance values at each row of a covariate matrix. All supported
    /// nuisances are functions of the covariates only (counterfactual
    /// outcome arms force the treatment coordinate to 0 and 1).
    pub fn predictions_for_x(&self, x: ndarray::ArrayView2<f64>) -> Result<NuisancePredictions> {
        let n = x.nrows();
        match self {
            NuisanceModels::Residual { outcome, treatment } => {
                let mut q = Array1::zeros(n);
                let mut p = Array2::zeros((n, treatment.output_dim()));
                for i in 0..n {
                    q[i] = outcome.predict(x.row(i))?[0];
                    p.row_mut(i).assign(&treatment.predict(x.row(i))?);
                }
                Ok(NuisancePredictions::Residual {
                    outcome: q,
                    treatment: p,
                })
            }
            NuisanceModels::Instrumental {
                outcome,
                treatment,
                instrument,
            } => {
                let mut q = Array1::zeros(n);
                let mut p = Array2::zeros((n, treatment.output_dim()));
                let mut r = Array2::zeros((n, instrument.output_dim()));
                for i in 0..n {
                    q[i] = outcome.predict(x.row(i))?[0];
                    p.row_mut(i).assign(&treatment.predict(x.row(i))?);
                    r.row_mut(i).assign(&instrument.predict(x.row(i))?);
                }
                Ok(NuisancePredictions::Instrumental {
                    outcome: q,
                    treatment: p,
                    instrument: r,
                })
            }
            NuisanceModels::Counterfactual {
                outcome,
                propensity,
            } => {
                let mut q0 = Array1::zeros(n);
                let mut q1 = Array1::zeros(n);
                let mut e = Array1::zeros(n);
                let d = x.ncols();
                let mut arm = Array1::zeros(d + 1);
                for i in 0..n {
                    for j in 0..d {
                        arm[j + 1] = x[(i, j)];
                    }
                    arm[0] = 0.0;
                    q0[i] = outcome.predict(arm.view())?[0];
                    arm[0] = 1.0;
                    q1[i] = outcome.predict(arm.view())?[0];
                    e[i] = propensity.predict(x.row(i))?[0];
                }
                Ok(NuisancePredictions::Counterfactual {
                    outcome0: q0,
                    outcome1: q1,
                    propensity: e,
                })
            }
        }
    }
}

impl NuisanceEvaluator for NuisanceModels {
    fn predictions(&self, data: &Dataset) -> Result<NuisancePredictions> {
        self.predictions_for_x(data.x().view())
    }

    fn stack_labels(&self) -> Vec<String> {
        match self {
            NuisanceModels::Residual { treatment, .. } => {
                let mut labels = vec!["outcome".to_string()];
                for j in 0..treatment.output_dim() {
                    labels.push(format!("treatment_{j}"));
                }
                labels
            }
            NuisanceModels::Instrumental {
                treatment,
                instrument,
                ..
            } => {
                let mut labels = vec!["outcome".to_string()];
                for j in 0..treatment.output_dim() {
                    labels.push(format!("treatment_{j}"));
                }
                for j in 0..instrument.output_dim() {
                    labels.push(format!("instrument_{j}"));
                }
                labels
            }
            NuisanceModels::Counterfactual { .. } => vec![
                "outcome_arm0".to_string(),
                "outcome_arm1".to_string(),
                "propensity".to_string(),
            ],
        }
    }

    fn eval_stacked(&self, x: ArrayView1<f64>) -> Result<Vec<f64>> {
        match self {
            NuisanceModels::Residual { outcome, treatment } => {
                let mut out = vec![outcome.predict(x)?[0]];
                out.extend(treatment.predict(x)?.iter());
                Ok(out)
            }
            NuisanceModels::Instrumental {
                outcome,
                treatment,
                instrument,
            } => {
                let mut out = vec![outcome.predict(x)?[0]];
                out.extend(treatment.predict(x)?.iter());
                out.extend(instrument.predict(x)?.iter());
                Ok(out)
            }
            NuisanceModels::Counterfactual {
                outcome,
                propensity,
            } => {
                let mut arm = Array1::zeros(x.len() + 1);
                for (j, v) in x.iter().enumerate() {
                    arm[j + 1] = *v;
                }
                arm[0] = 0.0;
                let q0 = outcome.predict(arm.view())?[0];
                arm[0] = 1.0;
                let q1 = outcome.predict(arm.view())?[0];
                Ok(vec![q0, q1, propensity.predict(x)?[0]])
            }
        }
    }
}

fn concat_columns(t: ndarray::ArrayView2<f64>, x: ndarray::ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let d = x.ncols();
    let mut tx = Array2::zeros((n, d + 1));
    for i in 0..n {
        tx[(i, 0)] = t[(i, 0)];
        for j in 0..d {
            tx[(i, j + 1)] = x[(i, j)];
        }
    }
    tx
}

/// Full-sample nuisance predictions (training points included).
pub fn fit_nuisances_nosplit(
    data: &Dataset,
    kind: &MomentKind,
    learner: &LearnerConfig,
    seed: &SeedSpec,
) -> Result<NuisancePredictions> {
    NuisanceModels::fit(data, kind, learner, seed)?.predictions(data)
}

/// K-fold cross-fit nuisance predictions: observation `i` is predicted by
/// models that never saw `i`'s fold. Subsample and bag counts resolve from
/// the training-fold size actually used.
pub fn fit_nuisances_crossfit(
    data: &Dataset,
    kind: &MomentKind,
    learner: &LearnerConfig,
    k: usize,
    seed: &SeedSpec,
) -> Result<(NuisancePredictions, FoldAssignment)> {
    let n = data.n();
    let folds = make_folds(n, k, &mut seed.child("folds", 0).rng())?;
    let mut preds = empty_predictions(data, kind)?;
    for fold in 0..k {
        let train = folds.complement_indices(fold);
        let eval = folds.fold_indices(fold);
        let models = NuisanceModels::fit_from_parts(
            data.x().select(Axis(0), &train).view(),
            data.t().select(Axis(0), &train).view(),
            data.y().select(Axis(0), &train).view(),
            data.w().map(|w| w.select(Axis(0), &train)).as_ref().map(|w| w.view()),
            kind,
            learner,
            &seed.child("fold", fold as u64),
        )?;
        let fold_preds = models.predictions_for_x(data.x().select(Axis(0), &eval).view())?;
        scatter_predictions(&mut preds, &fold_preds, &eval);
    }
    Ok((preds, folds))
}

fn empty_predictions(data: &Dataset, kind: &MomentKind) -> Result<NuisancePredictions> {
    let n = data.n();
    let p = data.treatment_dim();
    Ok(match kind {
        MomentKind::Plr => NuisancePredictions::Residual {
            outcome: Array1::zeros(n),
            treatment: Array2::zeros((n, p)),
        },
        MomentKind::Pliv => NuisancePredictions::Instrumental {
            outcome: Array1::zeros(n),
            treatment: Array2::zeros((n, p)),
            instrument: Array2::zeros((n, p)),
        },
        MomentKind::Ate | MomentKind::Policy(_) => NuisancePredictions::Counterfactual {
            outcome0: Array1::zeros(n),
            outcome1: Array1::zeros(n),
            propensity: Array1::zeros(n),
        },
    })
}

fn scatter_predictions(into: &mut NuisancePredictions, from: &NuisancePredictions, rows: &[usize]) {
    match (into, from) {
        (
            NuisancePredictions::Residual { outcome, treatment },
            NuisancePredictions::Residual {
                outcome: fo,
                treatment: ft,
            },
        ) => {
            for (local, &global) in rows.iter().enumerate() {
                outcome[global] = fo[local];
                treatment.row_mut(global).assign(&ft.row(local));
            }
        }
        (
            NuisancePredictions::Instrumental {
                outcome,
                treatment,
                instrument,
            },
            NuisancePredictions::Instrumental {
                outcome: fo,
                treatment: ft,
                instrument: fr,
            },
        ) => {
            for (local, &global) in rows.iter().enumerate() {
                outcome[global] = fo[local];
                treatment.row_mut(global).assign(&ft.row(local));
                instrument.row_mut(global).assign(&fr.row(local));
            }
        }
        (
            NuisancePredictions::Counterfactual {
                outcome0,
                outcome1,
                propensity,
            },
            NuisancePredictions::Counterfactual {
                outcome0: f0,
                outcome1: f1,
                propensity: fe,
            },
        ) => {
            for (local, &global) in rows.iter().enumerate() {
                outcome0[global] = f0[local];
                outcome1[global] = f1[local];
                propensity[global] = fe[local];
            }
        }
        _ => unreachable!("fold predictions always share the family of the target"),
    }
}

fn zero_predictions(data: &Dataset, kind: &MomentKind) -> Result<NuisancePredictions> {
    let mut preds = empty_predictions(data, kind)?;
    if let NuisancePredictions::Counterfactual { propensity, .. } = &mut preds {
        propensity.fill(0.5);
    }
    Ok(preds)
}

/// Build the per-observation moment pieces for `kind`.
pub fn components_for(
    data: &Dataset,
    kind: &MomentKind,
    preds: &NuisancePredictions,
) -> Result<MomentComponents> {
    match kind {
        MomentKind::Plr => plr_components(data, preds),
        MomentKind::Pliv => pliv_components(data, preds),
        MomentKind::Ate => functional_components(data, preds, Functional::Ate),
        MomentKind::Policy(pi) => {
            functional_components(data, preds, Functional::Policy(pi.as_ref()))
        }
    }
}

/// Result of solving the empirical linear moment.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub theta_hat: Array1<f64>,
    pub degenerate: bool,
    pub min_singular_value: f64,
}

fn to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Solve `mean(a_i) theta = -mean(nu_i)` exactly when the Jacobian is
/// numerically regular; otherwise report the degenerate convention
/// `theta = 0`.
///
/// Regularity threshold: `sigma_min > 1e-12 * (1 + sigma_max)`, a relative
/// tolerance so rescaled data behaves identically.
pub fn solve_linear_moment(components: &MomentComponents) -> Result<SolveOutcome> {
    if components.n() == 0 {
        return Err(Error::invalid("cannot solve a moment with no observations"));
    }
    let p = components.p;
    let a_n = components.a_mean();
    let v_n = components.nu_mean();
    let na = to_na(&a_n);
    let svd = na.clone().svd(false, false);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let threshold = 1e-12 * (1.0 + smax);
    if !(smin > threshold) {
        return Ok(SolveOutcome {
            theta_hat: Array1::zeros(p),
            degenerate: true,
            min_singular_value: smin,
        });
    }
    let rhs = nalgebra::DVector::from_fn(p, |i, _| -v_n[i]);
    let solution = na
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::invalid("linear solve failed despite regular Jacobian"))?;
    Ok(SolveOutcome {
        theta_hat: Array1::from_iter(solution.iter().cloned()),
        degenerate: false,
        min_singular_value: smin,
    })
}

/// Plug-in sandwich covariance and standard errors at `theta_hat`:
/// `cov = A_n^{-1} mean(m_i m_i') A_n^{-T} / n`.
///
/// A degenerate solve yields zero covariance and standard errors.
pub fn sandwich_se(
    components: &MomentComponents,
    solve: &SolveOutcome,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let p = components.p;
    if solve.degenerate {
        return Ok((Array2::zeros((p, p)), Array1::zeros(p)));
    }
    let n = components.n();
    let mut sigma = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let m = components.moment_at(i, solve.theta_hat.view());
        for r in 0..p {
            for c in 0..p {
                sigma[(r, c)] += m[r] * m[c];
            }
        }
    }
    sigma /= n as f64;
    let a_inv = to_na(&components.a_mean())
        .try_inverse()
        .ok_or_else(|| Error::invalid("Jacobian inversion failed despite regular solve"))?;
    let cov = (&a_inv * sigma * a_inv.transpose()) / n as f64;
    let mut cov_nd = Array2::zeros((p, p));
    for r in 0..p {
        for c in 0..p {
            cov_nd[(r, c)] = cov[(r, c)];
        }
    }
    let se = Array1::from_iter((0..p).map(|j| cov_nd[(j, j)].max(0.0).sqrt()));
    Ok((cov_nd, se))
}

/// Two-sided standard-normal quantile for a confidence level
/// (0.95 maps to 1.959964...).
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::invalid(format!(
            "confidence level {level} must lie in (0, 1)"
        )));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

/// The whole pipeline: nuisances per `opts.mode`, moment components, linear
/// solve, sandwich covariance, and normal-quantile confidence intervals.
pub fn estimate(
    data: &Dataset,
    kind: &MomentKind,
    opts: &EstimateOptions,
    seed: &SeedSpec,
) -> Result<EstimateResult> {
    let z = normal_quantile(opts.level)?;
    let preds = match (opts.nuisance, opts.mode) {
        (NuisanceMode::Zero, _) => zero_predictions(data, kind)?,
        (NuisanceMode::Learner, FitMode::NoSplit) => {
            fit_nuisances_nosplit(data, kind, &opts.learner, &seed.child("nosplit", 0))?
        }
        (NuisanceMode::Learner, FitMode::CrossFit(k)) => {
            fit_nuisances_crossfit(data, kind, &opts.learner, k, &seed.child("crossfit", 0))?.0
        }
    };
    let components = components_for(data, kind, &preds)?;
    let solve = solve_linear_moment(&components)?;
    let (cov, se) = sandwich_se(&components, &solve)?;
    let ci_low = &solve.theta_hat - &se.mapv(|s| z * s);
    let ci_high = &solve.theta_hat + &se.mapv(|s| z * s);
    Ok(EstimateResult {
        theta_hat: solve.theta_hat,
        cov,
        se,
        ci_low,
        ci_high,
        degenerate: solve.degenerate,
        min_singular_value: solve.min_singular_value,
        mode: opts.mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{BRule, BaseKind, MRule};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn manual_components(a_vals: &[f64], nu_vals: &[f64]) -> MomentComponents {
        MomentComponents {
            a: a_vals.iter().map(|&v| array![[v]]).collect(),
            nu: nu_vals.iter().map(|&v| array![v]).collect(),
            p: 1,
        }
    }

    #[test]
    fn scalar_solve_by_hand() {
        let c = manual_components(&[-1.0, -1.0], &[0.5, 0.5]);
        let s = solve_linear_moment(&c).unwrap();
        assert!(!s.degenerate);
        assert_abs_diff_eq!(s.theta_hat[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.min_singular_value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_jacobian_is_degenerate_not_an_error() {
        let c = manual_components(&[0.0, 0.0], &[0.0, 0.0]);
        let s = solve_linear_moment(&c).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.theta_hat[0], 0.0);
        let (cov, se) = sandwich_se(&c, &s).unwrap();
        assert_eq!(se[0], 0.0);
        assert_eq!(cov[(0, 0)], 0.0);
    }

    #[test]
    fn sandwich_arithmetic_by_hand() {
        // A_n = -2, moments at theta_hat are +/-2 so Sigma = 4, n = 100:
        // se = sqrt(4 / 4 / 100) = 0.1.
        let n = 100;
        let a: Vec<f64> = vec![-2.0; n];
        let nu: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 0.0 } else { 4.0 }).collect();
        let c = manual_components(&a, &nu);
        let s = solve_linear_moment(&c).unwrap();
        assert_abs_diff_eq!(s.theta_hat[0], 1.0, epsilon = 1e-14);
        let (_, se) = sandwich_se(&c, &s).unwrap();
        assert_abs_diff_eq!(se[0], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn perfect_fit_gives_zero_se() {
        // nu_i = -a_i * theta exactly (theta = 3): residual moments vanish
        // at theta_hat.
        let c = manual_components(&[-1.0, -2.0], &[3.0, 6.0]);
        let s = solve_linear_moment(&c).unwrap();
        assert_abs_diff_eq!(s.theta_hat[0], 3.0, epsilon = 1e-14);
        let (_, se) = sandwich_se(&c, &s).unwrap();
        assert_abs_diff_eq!(se[0], 0.0, epsilon = 1e-14);
    }

    fn plr_opts(m_rule: MRule, b_rule: BRule, mode: FitMode) -> EstimateOptions {
        EstimateOptions::new(
            LearnerConfig::new(BaseKind::OneNn, m_rule, b_rule),
            mode,
        )
    }

    #[test]
    fn zero_nuisances_match_closed_form_least_squares() {
        let data = Dataset::from_scalar_treatment(
            array![[0.0], [1.0]],
            array![1.0, 2.0],
            array![2.0, 4.0],
        )
        .unwrap();
        let mut opts = plr_opts(MRule::Power(0.49), BRule::Auto, FitMode::NoSplit);
        opts.nuisance = NuisanceMode::Zero;
        let r = estimate(&data, &MomentKind::Plr, &opts, &SeedSpec::new(1)).unwrap();
        // closed form: sum(t*y) / sum(t^2) = 10/5 = 2
        assert!((r.theta_hat[0] - 2.0).abs() <= 1e-10 * 2.0);
    }

    #[test]
    fn multi_treatment_matches_normal_equations() {
        // 2-column treatment, zero nuisances: solve T'T theta = T'y by hand.
        let t = array![[1.0, 0.5], [0.0, 1.0], [2.0, -1.0], [1.0, 1.0]];
        let y = array![1.0, 2.0, -1.0, 3.0];
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let data = Dataset::new(x, t.clone(), y.clone(), None).unwrap();
        let mut opts = plr_opts(MRule::Power(0.49), BRule::Auto, FitMode::NoSplit);
        opts.nuisance = NuisanceMode::Zero;
        let r = estimate(&data, &MomentKind::Plr, &opts, &SeedSpec::new(1)).unwrap();

        // independent oracle: 2x2 normal equations by Cramer's rule
        let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..4 {
            s11 += t[(i, 0)] * t[(i, 0)];
            s12 += t[(i, 0)] * t[(i, 1)];
            s22 += t[(i, 1)] * t[(i, 1)];
            b1 += t[(i, 0)] * y[i];
            b2 += t[(i, 1)] * y[i];
        }
        let det = s11 * s22 - s12 * s12;
        let th1 = (b1 * s22 - s12 * b2) / det;
        let th2 = (s11 * b2 - s12 * b1) / det;
        assert_abs_diff_eq!(r.theta_hat[0], th1, epsilon = 1e-10);
        assert_abs_diff_eq!(r.theta_hat[1], th2, epsilon = 1e-10);
    }

    #[test]
    fn full_sample_interpolating_learner_is_degenerate() {
        // 1-NN with m=n, B=1 reproduces training labels exactly, so every
        // residual is zero and the solve degenerates.
        let data = Dataset::from_scalar_treatment(
            array![[0.0], [1.0], [2.0], [3.0]],
            array![1.0, -1.0, 2.0, 0.5],
            array![2.0, 0.0, 1.0, -1.0],
        )
        .unwrap();
        let opts = plr_opts(MRule::Power(1.0), BRule::Fixed(1), FitMode::NoSplit);
        let r = estimate(&data, &MomentKind::Plr, &opts, &SeedSpec::new(5)).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.theta_hat[0], 0.0);
        assert_eq!(r.se[0], 0.0);
        assert_eq!(r.ci_low[0], 0.0);
        assert_eq!(r.ci_high[0], 0.0);
    }

    #[test]
    fn interpolating_nuisances_reproduce_training_labels() {
        let data = Dataset::from_scalar_treatment(
            array![[0.0], [1.5], [3.0]],
            array![5.0, -2.0, 1.0],
            array![1.0, 2.0, 3.0],
        )
        .unwrap();
        let learner = LearnerConfig::new(BaseKind::OneNn, MRule::Power(1.0), BRule::Fixed(1));
        let preds =
            fit_nuisances_nosplit(&data, &MomentKind::Plr, &learner, &SeedSpec::new(3)).unwrap();
        let NuisancePredictions::Residual { outcome, treatment } = preds else {
            panic!("wrong family");
        };
        for i in 0..3 {
            assert_eq!(outcome[i], data.y()[i]);
            assert_eq!(treatment[(i, 0)], data.t()[(i, 0)]);
        }
    }

    #[test]
    fn constant_labels_predict_the_constant_in_both_modes() {
        let n = 8;
        let x = ndarray::Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let data = Dataset::from_scalar_treatment(
            x,
            Array1::from_elem(n, 2.5),
            Array1::from_elem(n, 7.0),
        )
        .unwrap();
        let learner = LearnerConfig::new(BaseKind::OneNn, MRule::Fixed(3), BRule::Fixed(17));
        let seed = SeedSpec::new(11);
        let nosplit =
            fit_nuisances_nosplit(&data, &MomentKind::Plr, &learner, &seed).unwrap();
        let (crossfit, _) =
            fit_nuisances_crossfit(&data, &MomentKind::Plr, &learner, 2, &seed).unwrap();
        for preds in [nosplit, crossfit] {
            let NuisancePredictions::Residual { outcome, treatment } = preds else {
                panic!("wrong family");
            };
            for i in 0..n {
                assert_eq!(outcome[i], 7.0);
                assert_eq!(treatment[(i, 0)], 2.5);
            }
        }
    }

    #[test]
    fn cross_fit_predictions_are_out_of_fold() {
        let n = 12;
        let x = ndarray::Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let t = Array1::from_shape_fn(n, |i| (i as f64).sin());
        let y = Array1::from_shape_fn(n, |i| (i as f64).cos());
        let data = Dataset::from_scalar_treatment(x.clone(), t.clone(), y.clone()).unwrap();
        let learner = LearnerConfig::new(BaseKind::OneNn, MRule::Fixed(3), BRule::Fixed(25));
        let seed = SeedSpec::new(21);
        let (preds, folds) =
            fit_nuisances_crossfit(&data, &MomentKind::Plr, &learner, 2, &seed).unwrap();

        // perturb the outcome of one observation in fold 0
        let target = folds.fold_indices(0)[0];
        let mut y2 = y.clone();
        y2[target] += 100.0;
        let data2 = Dataset::from_scalar_treatment(x, t, y2).unwrap();
        let (preds2, folds2) =
            fit_nuisances_crossfit(&data2, &MomentKind::Plr, &learner, 2, &seed).unwrap();
        assert_eq!(folds.assignment(), folds2.assignment());

        let NuisancePredictions::Residual { outcome: q1, .. } = preds else {
            panic!()
        };
        let NuisancePredictions::Residual { outcome: q2, .. } = preds2 else {
            panic!()
        };
        for &i in &folds.fold_indices(0) {
            assert_eq!(q1[i], q2[i], "fold-0 prediction changed at {i}");
        }
    }

    #[test]
    fn leave_one_out_folds_use_the_remaining_points() {
        // K = n with full-subsample 1-NN: the prediction at each point is its
        // nearest neighbor among the other points. Hand check at n = 3.
        let data = Dataset::from_scalar_treatment(
            array![[0.0], [1.0], [5.0]],
            array![10.0, 20.0, 30.0],
            array![1.0, 2.0, 3.0],
        )
        .unwrap();
        let learner = LearnerConfig::new(BaseKind::OneNn, MRule::Power(1.0), BRule::Fixed(1));
        let (preds, _) =
            fit_nuisances_crossfit(&data, &MomentKind::Plr, &learner, 3, &SeedSpec::new(9))
                .unwrap();
        let NuisancePredictions::Residual { outcome, .. } = preds else {
            panic!()
        };
        // nearest to x=0 among {1,5} is 1 -> y=2; nearest to 1 among {0,5} is
        // 0 -> 1; nearest to 5 among {0,1} is 1 -> 2.
        assert_eq!(outcome[0], 2.0);
        assert_eq!(outcome[1], 1.0);
        assert_eq!(outcome[2], 2.0);
    }

    #[test]
    fn estimates_are_bit_reproducible() {
        let n = 40;
        let mut rng = SeedSpec::new(314).rng();
        use rand::Rng;
        let x = ndarray::Array2::from_shape_fn((n, 1), |_| rng.random::<f64>());
        let t = Array1::from_shape_fn(n, |_| rng.random::<f64>());
        let y = Array1::from_shape_fn(n, |_| rng.random::<f64>());
        let data = Dataset::from_scalar_treatment(x, t, y).unwrap();
        for mode in [FitMode::NoSplit, FitMode::CrossFit(2)] {
            let opts = plr_opts(MRule::Power(0.49), BRule::Auto, mode);
            let a = estimate(&data, &MomentKind::Plr, &opts, &SeedSpec::new(7)).unwrap();
            let b = estimate(&data, &MomentKind::Plr, &opts, &SeedSpec::new(7)).unwrap();
            assert_eq!(a.theta_hat[0].to_bits(), b.theta_hat[0].to_bits());
            assert_eq!(a.se[0].to_bits(), b.se[0].to_bits());
        }
    }

    #[test]
    fn confidence_interval_width_matches_the_quantile() {
        let z = normal_quantile(0.95).unwrap();
        assert_abs_diff_eq!(z, 1.959964, epsilon = 1e-6);
        let c = manual_components(&[-1.0; 50], &[(); 50].map(|_| 0.3).to_vec());
        let s = solve_linear_moment(&c).unwrap();
        let (_, se) = sandwich_se(&c, &s).unwrap();
        let data_free_width = 2.0 * z * se[0];
        // run through estimate() on equivalent zero-nuisance data
        let t = Array1::from_elem(50, 1.0);
        let y = Array1::from_elem(50, 0.3);
        let x = ndarray::Array2::zeros((50, 1));
        let mut x = x;
        for i in 0..50 {
            x[(i, 0)] = i as f64;
        }
        let data = Dataset::from_scalar_treatment(x, t, y).unwrap();
        let mut opts = plr_opts(MRule::Power(0.49), BRule::Auto, FitMode::NoSplit);
        opts.nuisance = NuisanceMode::Zero;
        let r = estimate(&data, &MomentKind::Plr, &opts, &SeedSpec::new(2)).unwrap();
        assert_abs_diff_eq!(
            r.ci_high[0] - r.ci_low[0],
            2.0 * z * r.se[0],
            epsilon = 1e-12
        );
        // same components as the manual construction: a = -t^2 = -1, nu = t*y = 0.3
        assert_abs_diff_eq!(r.ci_high[0] - r.ci_low[0], data_free_width, epsilon = 1e-12);
    }

    #[test]
    fn outcome_shift_leaves_the_residual_estimate_unchanged() {
        let n = 60;
        let mut rng = SeedSpec::new(99).rng();
        use rand::Rng;
        let x = ndarray::Array2::from_shape_fn((n, 1), |_| rng.random::<f64>() * 4.0);
        let t = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
        let y = Array1::from_shape_fn(n, |_| rng.random::<f64>() * 2.0);
        let learner = LearnerConfig::new(BaseKind::OneNn, MRule::Fixed(8), BRule::Fixed(60));
        let opts = EstimateOptions::new(learner, FitMode::NoSplit);
        let seed = SeedSpec::new(123);

        let base = estimate(
            &Dataset::from_scalar_treatment(x.clone(), t.clone(), y.clone()).unwrap(),
            &MomentKind::Plr,
            &opts,
            &seed,
        )
        .unwrap();

        let shifted = estimate(
            &Dataset::from_scalar_treatment(x.clone(), t.clone(), y.mapv(|v| v + 11.0)).unwrap(),
            &MomentKind::Plr,
            &opts,
            &seed,
        )
        .unwrap();
        assert_abs_diff_eq!(shifted.theta_hat[0], base.theta_hat[0], epsilon = 1e-12);
        assert_abs_diff_eq!(shifted.se[0], base.se[0], epsilon = 1e-12);

        let scaled = estimate(
            &Dataset::from_scalar_treatment(x, t, y.mapv(|v| v * -3.0)).unwrap(),
            &MomentKind::Plr,
            &opts,
            &seed,
        )
        .unwrap();
        assert_abs_diff_eq!(
            scaled.theta_hat[0],
            -3.0 * base.theta_hat[0],
            epsilon = 1e-12 * (1.0 + 3.0 * base.theta_hat[0].abs())
        );
        assert_abs_diff_eq!(
            scaled.se[0],
            3.0 * base.se[0],
            epsilon = 1e-12 * (1.0 + 3.0 * base.se[0])
        );
    }
}
