//! Advisory check of whether a subsample/bag configuration sits in the
//! regime where full-sample reuse keeps its coverage guarantees.
//!
//! This is a heuristic finite-n reading of asymptotic conditions: the
//! subsample size must grow slower than `sqrt(n)` (operationalized as
//! `m <= n^0.49`, with `(n^0.49, n^0.5]` labeled marginal) and the bag count
//! must dominate a polynomial threshold in `(m, n)`.

use crate::error::{Error, Result};

/// Which bag-count threshold to apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegimeRule {
    /// `B >= m^(2/k) n^(1-2/k)`, driven by a `k`-th moment bound on the base
    /// learner (`k >= 2`).
    MomentBound { k: f64 },
    /// The relaxed threshold `B >= m^(1/(2r-1)) n^((r-1)/(2r-1))` for norms
    /// of order `2r` (`r > 1`).
    RelaxedBound { r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeVerdict {
    Stable,
    Marginal,
    Unstable,
}

impl std::fmt::Display for RegimeVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegimeVerdict::Stable => write!(f, "stable"),
            RegimeVerdict::Marginal => write!(f, "marginal"),
            RegimeVerdict::Unstable => write!(f, "unstable"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegimeReport {
    pub verdict: RegimeVerdict,
    pub explanation: String,
    /// The bag-count threshold for the chosen rule (with unit constant).
    pub required_b: f64,
    /// `n^0.49`, the stable-regime cap on `m`.
    pub m_stable_max: f64,
    /// `n^0.5`, beyond which the configuration is not stable in any reading.
    pub m_marginal_max: f64,
}

/// Classify `(n, m, B)` as stable, marginal, or unstable under `rule`.
pub fn regime_check(n: usize, m: usize, b: usize, rule: RegimeRule) -> Result<RegimeReport> {
    if n < 2 {
        return Err(Error::invalid("need n >= 2"));
    }
    if m == 0 || m > n {
        return Err(Error::invalid(format!("m={m} must satisfy 1 <= m <= n={n}")));
    }
    if b == 0 {
        return Err(Error::invalid("bag count must be at least 1"));
    }
    let nf = n as f64;
    let mf = m as f64;
    let required_b = match rule {
        RegimeRule::MomentBound { k } => {
            if k < 2.0 {
                return Err(Error::invalid(format!("moment order k={k} must be >= 2")));
            }
            mf.powf(2.0 / k) * nf.powf(1.0 - 2.0 / k)
        }
        RegimeRule::RelaxedBound { r } => {
            if r <= 1.0 {
                return Err(Error::invalid(format!("norm order r={r} must exceed 1")));
            }
            mf.powf(1.0 / (2.0 * r - 1.0)) * nf.powf((r - 1.0) / (2.0 * r - 1.0))
        }
    };
    let m_stable_max = nf.powf(0.49);
    let m_marginal_max = nf.sqrt();

    let (verdict, explanation) = if mf <= m_stable_max {
        if b as f64 >= required_b {
            (
                RegimeVerdict::Stable,
                format!(
                    "m={m} <= n^0.49={m_stable_max:.2} and B={b} >= required {required_b:.1}"
                ),
            )
        } else {
            (
                RegimeVerdict::Unstable,
                format!(
                    "m={m} <= n^0.49={m_stable_max:.2} but B={b} < required {required_b:.1}; \
                     bag noise does not average out fast enough"
                ),
            )
        }
    } else if mf <= m_marginal_max {
        (
            RegimeVerdict::Marginal,
            format!(
                "m={m} lies in (n^0.49, n^0.5] = ({m_stable_max:.2}, {m_marginal_max:.2}]; \
                 the subsample size sits on the boundary of the stable regime"
            ),
        )
    } else {
        (
            RegimeVerdict::Unstable,
            format!(
                "m={m} > n^0.5={m_marginal_max:.2}; subsamples this large make the ensemble \
                 too sensitive to single observations for full-sample reuse"
            ),
        )
    };
    Ok(RegimeReport {
        verdict,
        explanation,
        required_b,
        m_stable_max,
        m_marginal_max,
    })
}
