//! Linear moment construction.
//!
//! Every supported moment is linear in the target: per observation it
//! contributes a matrix `a_i` and a vector `nu_i` such that the estimating
//! function is `m_i(theta) = a_i * theta + nu_i`. The estimator then solves
//! `mean(a_i) * theta = -mean(nu_i)`.

use ndarray::{Array1, Array2, ArrayView1};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Lower clip for estimated propensities (and `1 - e` symmetrically).
pub const PROPENSITY_CLIP: f64 = 0.01;

/// Which moment model to estimate.
#[derive(Clone)]
pub enum MomentKind {
    /// Partially linear regression: residual-on-residual moment.
    Plr,
    /// Partially linear model with an instrument column block `w`.
    Pliv,
    /// Average treatment effect of a binary treatment (AIPW score).
    Ate,
    /// Average value of a deterministic binary policy over covariates.
    Policy(std::sync::Arc<dyn Fn(ArrayView1<f64>) -> bool + Send + Sync>),
}

impl MomentKind {
    pub fn label(&self) -> &'static str {
        match self {
            MomentKind::Plr => "plr",
            MomentKind::Pliv => "pliv",
            MomentKind::Ate => "ate",
            MomentKind::Policy(_) => "policy",
        }
    }
}

impl std::fmt::Debug for MomentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MomentKind::{}", self.label())
    }
}

/// Per-observation nuisance values, keyed by moment family.
#[derive(Debug, Clone)]
pub enum NuisancePredictions {
    /// Outcome regression `q(x)` and treatment regression `p(x)`.
    Residual {
        outcome: Array1<f64>,
        treatment: Array2<f64>,
    },
    /// As `Residual` plus the instrument regression `r(x)`.
    Instrumental {
        outcome: Array1<f64>,
        treatment: Array2<f64>,
        instrument: Array2<f64>,
    },
    /// Outcome regression evaluated at both treatment arms plus the
    /// (unclipped) propensity.
    Counterfactual {
        outcome0: Array1<f64>,
        outcome1: Array1<f64>,
        propensity: Array1<f64>,
    },
}

/// The per-observation pieces of a linear moment.
#[derive(Debug, Clone)]
pub struct MomentComponents {
    /// `a_i`, one `p x p` matrix per observation.
    pub a: Vec<Array2<f64>>,
    /// `nu_i`, one `p`-vector per observation.
    pub nu: Vec<Array1<f64>>,
    /// Target dimension `p`.
    pub p: usize,
}

impl MomentComponents {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// `mean(a_i)`.
    pub fn a_mean(&self) -> Array2<f64> {
        let mut acc = Array2::zeros((self.p, self.p));
        for a in &self.a {
            acc += a;
        }
        acc / self.a.len() as f64
    }

    /// `mean(nu_i)`.
    pub fn nu_mean(&self) -> Array1<f64> {
        let mut acc = Array1::zeros(self.p);
        for nu in &self.nu {
            acc += nu;
        }
        acc / self.nu.len() as f64
    }

    /// `m_i(theta) = a_i * theta + nu_i`.
    pub fn moment_at(&self, i: usize, theta: ArrayView1<f64>) -> Array1<f64> {
        self.a[i].dot(&theta) + &self.nu[i]
    }
}

/// Per-observation pieces of the residual-on-residual moment
/// `m = (y - q(x) - theta'(t - p(x))) (t - p(x))`:
/// `a = -eta eta'`, `nu = eps eta` with `eta = t - p(x)`, `eps = y - q(x)`.
pub fn residual_obs(
    t: ArrayView1<f64>,
    y: f64,
    outcome: f64,
    treatment: ArrayView1<f64>,
) -> (Array2<f64>, Array1<f64>) {
    let eta = &t - &treatment;
    let eps = y - outcome;
    (neg_outer(eta.view(), eta.view()), eta.mapv(|v| eps * v))
}

/// Per-observation pieces of the instrumented moment
/// `m = (y - q(x) - theta'(t - p(x))) (w - r(x))`:
/// `a = -wres (t - p(x))'`, `nu = (y - q(x)) wres` with `wres = w - r(x)`.
pub fn instrumental_obs(
    t: ArrayView1<f64>,
    y: f64,
    w: ArrayView1<f64>,
    outcome: f64,
    treatment: ArrayView1<f64>,
    instrument: ArrayView1<f64>,
) -> (Array2<f64>, Array1<f64>) {
    let wres = &w - &instrument;
    let eta = &t - &treatment;
    let eps = y - outcome;
    (neg_outer(wres.view(), eta.view()), wres.mapv(|v| eps * v))
}

/// Per-observation pieces of the augmented inverse-propensity moment:
/// `a = 1`, `nu = -(weight (q1 - q0) + weight mu (y - q_t))` with the
/// clipped propensity contrast `mu = t/e - (1-t)/(1-e)`.
///
/// The boolean is set when the propensity needed clipping.
pub fn counterfactual_obs(
    t: f64,
    y: f64,
    outcome0: f64,
    outcome1: f64,
    propensity: f64,
    weight: f64,
) -> Result<(Array2<f64>, Array1<f64>, bool)> {
    if t != 0.0 && t != 1.0 {
        return Err(Error::invalid(format!(
            "binary-treatment moment requires t in {{0, 1}}, found {t}"
        )));
    }
    let clipped = !(0.0 < propensity && propensity < 1.0);
    let e = propensity.clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP);
    let mu = t / e - (1.0 - t) / (1.0 - e);
    let q_at_t = if t == 1.0 { outcome1 } else { outcome0 };
    let base = weight * (outcome1 - outcome0);
    let correction = weight * mu * (y - q_at_t);
    Ok((
        Array2::from_elem((1, 1), 1.0),
        Array1::from_elem(1, -(base + correction)),
        clipped,
    ))
}

/// Residual-moment components for every observation.
pub fn plr_components(data: &Dataset, preds: &NuisancePredictions) -> Result<MomentComponents> {
    let NuisancePredictions::Residual { outcome, treatment } = preds else {
        return Err(Error::invalid(
            "residual moment needs outcome and treatment nuisances",
        ));
    };
    let n = data.n();
    let p = data.treatment_dim();
    check_rows("outcome", outcome.len(), n)?;
    check_shape("treatment", treatment.dim(), (n, p))?;
    let mut a = Vec::with_capacity(n);
    let mut nu = Vec::with_capacity(n);
    for i in 0..n {
        let (ai, nui) = residual_obs(data.t().row(i), data.y()[i], outcome[i], treatment.row(i));
        a.push(ai);
        nu.push(nui);
    }
    Ok(MomentComponents { a, nu, p })
}

/// Components of the instrumented moment
/// `m = (y - q(x) - theta'(t - p(x))) (w - r(x))`:
/// `a_i = -wres_i (t_i - p(x_i))'`, `nu_i = (y_i - q(x_i)) wres_i`.
pub fn pliv_components(data: &Dataset, preds: &NuisancePredictions) -> Result<MomentComponents> {
    let Some(w) = data.w() else {
        return Err(Error::invalid(
            "instrumented moment needs an instrument block in the dataset",
        ));
    };
    let NuisancePredictions::Instrumental {
        outcome,
        treatment,
        instrument,
    } = preds
    else {
        return Err(Error::invalid(
            "instrumented moment needs outcome, treatment and instrument nuisances",
        ));
    };
    let n = data.n();
    let p = data.treatment_dim();
    check_rows("outcome", outcome.len(), n)?;
    check_shape("treatment", treatment.dim(), (n, p))?;
    check_shape("instrument", instrument.dim(), (n, p))?;
    let mut a = Vec::with_capacity(n);
    let mut nu = Vec::with_capacity(n);
    for i in 0..n {
        let (ai, nui) = instrumental_obs(
            data.t().row(i),
            data.y()[i],
            w.row(i),
            outcome[i],
            treatment.row(i),
            instrument.row(i),
        );
        a.push(ai);
        nu.push(nui);
    }
    Ok(MomentComponents { a, nu, p })
}

/// Which average linear functional of the outcome regression to target.
pub enum Functional<'a> {
    Ate,
    Policy(&'a dyn Fn(ArrayView1<f64>) -> bool),
}

/// Components of the augmented inverse-propensity moment for a binary
/// treatment: `a_i = 1` and
/// `nu_i = -(w_i (q1 - q0) + w_i mu_i (y - q_{t_i}))` with
/// `mu_i = t_i/e(x_i) - (1 - t_i)/(1 - e(x_i))` after clipping `e`, and
/// weight `w_i = 1` (ATE) or `pi(x_i)` (policy value).
pub fn functional_components(
    data: &Dataset,
    preds: &NuisancePredictions,
    functional: Functional<'_>,
) -> Result<MomentComponents> {
    let NuisancePredictions::Counterfactual {
        outcome0,
        outcome1,
        propensity,
    } = preds
    else {
        return Err(Error::invalid(
            "counterfactual moment needs both outcome arms and a propensity",
        ));
    };
    if data.treatment_dim() != 1 {
        return Err(Error::invalid("binary-treatment moments need a scalar treatment"));
    }
    let n = data.n();
    check_rows("outcome0", outcome0.len(), n)?;
    check_rows("outcome1", outcome1.len(), n)?;
    check_rows("propensity", propensity.len(), n)?;
    let mut clipped = 0usize;
    let mut a = Vec::with_capacity(n);
    let mut nu = Vec::with_capacity(n);
    for i in 0..n {
        let weight = match &functional {
            Functional::Ate => 1.0,
            Functional::Policy(pi) => {
                if pi(data.x().row(i)) {
                    1.0
                } else {
                    0.0
                }
            }
        };
        let (ai, nui, was_clipped) = counterfactual_obs(
            data.t()[(i, 0)],
            data.y()[i],
            outcome0[i],
            outcome1[i],
            propensity[i],
            weight,
        )
        .map_err(|e| Error::invalid(format!("{e} at row {i}")))?;
        if was_clipped {
            clipped += 1;
        }
        a.push(ai);
        nu.push(nui);
    }
    if clipped > 0 {
        log::warn!("{clipped}/{n} propensity values fell outside (0,1) before clipping");
    }
    Ok(MomentComponents { a, nu, p: 1 })
}

fn neg_outer(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((u.len(), v.len()));
    for (i, a) in u.iter().enumerate() {
        for (j, b) in v.iter().enumerate() {
            out[(i, j)] = -(a * b);
        }
    }
    out
}

fn check_rows(name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::invalid(format!(
            "{name} nuisance has {got} rows, expected {want}"
        )));
    }
    Ok(())
}

fn check_shape(name: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::invalid(format!(
            "{name} nuisance has shape {got:?}, expected {want:?}"
        )));
    }
    Ok(())
}
