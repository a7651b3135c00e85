//! Base nuisance regressors and the subsample-bagging ensemble.

mod bagging;
mod one_nn;
mod tree;

pub use bagging::{
    checked_binomial, predict_bagged_exact, Bag, BaggedEnsemble, BaseKind, BaseModel,
    EXACT_SUBSET_BUDGET,
};
pub use one_nn::OneNnModel;
pub use tree::TreeModel;

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::seed::SeedSpec;

/// How the subsample size `m` is chosen from the training size `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MRule {
    /// `m = ceil(n^alpha)`, clipped to `[2, n]`; `alpha = 1` means `m = n`.
    Power(f64),
    Fixed(usize),
}

impl MRule {
    pub fn resolve(&self, n: usize) -> Result<usize> {
        match *self {
            MRule::Power(alpha) => {
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(Error::invalid(format!(
                        "power exponent {alpha} must lie in (0, 1]"
                    )));
                }
                if alpha == 1.0 {
                    return Ok(n);
                }
                let raw = (n as f64).powf(alpha).ceil() as usize;
                Ok(raw.clamp(2, n))
            }
            MRule::Fixed(m) => {
                if m == 0 {
                    return Err(Error::invalid("fixed subsample size must be at least 1"));
                }
                if m > n {
                    return Err(Error::invalid(format!(
                        "fixed subsample size {m} exceeds sample size {n}"
                    )));
                }
                Ok(m)
            }
        }
    }
}

impl std::fmt::Display for MRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            MRule::Power(a) if a == 1.0 => write!(f, "n"),
            MRule::Power(a) => {
                let s = format!("{a:.6}");
                let s = s.trim_end_matches('0').trim_end_matches('.');
                write!(f, "n^{s}")
            }
            MRule::Fixed(m) => write!(f, "m={m}"),
        }
    }
}

impl std::str::FromStr for MRule {
    type Err = Error;

    /// Accepts `n` (full sample), `n^0.49`, `n^10/11`, or a plain integer
    /// (fixed subsample size, with or without an `m=` prefix).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "n" {
            return Ok(MRule::Power(1.0));
        }
        if let Some(exp) = s.strip_prefix("n^") {
            let alpha = if let Some((num, den)) = exp.split_once('/') {
                let num: f64 = num.trim().parse().map_err(|_| bad_m_rule(s))?;
                let den: f64 = den.trim().parse().map_err(|_| bad_m_rule(s))?;
                num / den
            } else {
                exp.trim().parse().map_err(|_| bad_m_rule(s))?
            };
            return Ok(MRule::Power(alpha));
        }
        let digits = s.strip_prefix("m=").unwrap_or(s);
        let m: usize = digits.parse().map_err(|_| bad_m_rule(s))?;
        Ok(MRule::Fixed(m))
    }
}

fn bad_m_rule(s: &str) -> Error {
    Error::invalid(format!(
        "unknown subsample rule '{s}' (expected n, n^<alpha>, n^<p>/<q>, or an integer)"
    ))
}

/// How the bag count `B` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BRule {
    /// `B = max(100, ceil(n/m))`: at least `n/m` bags, with a floor that
    /// keeps bag noise small at desk scale.
    Auto,
    Fixed(usize),
    /// One bag per size-`m` subset (the infinite-`B` limit), subject to the
    /// enumeration budget.
    Exact,
}

impl BRule {
    /// Number of bags for a training size `n` and resolved subsample size `m`.
    pub fn resolve(&self, n: usize, m: usize) -> Result<usize> {
        match *self {
            BRule::Auto => Ok(100.max(n.div_ceil(m))),
            BRule::Fixed(b) => {
                if b == 0 {
                    return Err(Error::invalid("bag count must be at least 1"));
                }
                Ok(b)
            }
            BRule::Exact => Ok(checked_binomial(n, m)? as usize),
        }
    }
}

impl std::fmt::Display for BRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            BRule::Auto => write!(f, "auto"),
            BRule::Fixed(b) => write!(f, "{b}"),
            BRule::Exact => write!(f, "exact"),
        }
    }
}

impl std::str::FromStr for BRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(BRule::Auto),
            "exact" => Ok(BRule::Exact),
            other => other.parse::<usize>().map(BRule::Fixed).map_err(|_| {
                Error::invalid(format!(
                    "unknown bag rule '{other}' (expected auto, exact, or an integer)"
                ))
            }),
        }
    }
}

/// Everything needed to fit one nuisance regression.
#[derive(Debug, Clone)]
pub struct LearnerConfig {
    pub base: BaseKind,
    pub m_rule: MRule,
    pub b_rule: BRule,
    /// Optional extra seed-path element, applied before bag derivation.
    pub seed_tag: Option<String>,
}

impl LearnerConfig {
    pub fn new(base: BaseKind, m_rule: MRule, b_rule: BRule) -> Self {
        LearnerConfig {
            base,
            m_rule,
            b_rule,
            seed_tag: None,
        }
    }

    /// The paper-style default: bagged 1-NN with `m = ceil(n^0.49)`.
    pub fn subsample_one_nn() -> Self {
        LearnerConfig::new(BaseKind::OneNn, MRule::Power(0.49), BRule::Auto)
    }

    pub fn resolve(&self, n: usize) -> Result<(usize, usize)> {
        let m = self.m_rule.resolve(n)?;
        let b = self.b_rule.resolve(n, m)?;
        Ok((m, b))
    }

    /// Fit a bagged ensemble on `(x, y)` with sizes resolved from the
    /// training sample actually used.
    pub fn fit(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        seed: &SeedSpec,
    ) -> Result<BaggedEnsemble> {
        let seed = match &self.seed_tag {
            Some(tag) => seed.child(tag, 0),
            None => seed.clone(),
        };
        let (m, b) = self.resolve(x.nrows())?;
        match self.b_rule {
            BRule::Exact => BaggedEnsemble::fit_exact(x, y, m, self.base),
            _ => BaggedEnsemble::fit(x, y, m, b, self.base, &seed),
        }
    }
}
