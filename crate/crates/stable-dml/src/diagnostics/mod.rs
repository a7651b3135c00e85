//! Empirical verification machinery: leave-one-out stability norms,
//! stochastic equicontinuity statistics, subsample-regime checks, and the
//! nearest-neighbor counterexample.

mod counterexample;
mod equicontinuity;
mod regime;
mod stability;

pub use counterexample::{counterexample_run, exp_rate2_ks, CounterexampleReport};
pub use equicontinuity::{
    default_population_size, equicontinuity_stat, equicontinuity_stat_for, EquicontinuityStats,
};
pub use regime::{regime_check, RegimeReport, RegimeRule, RegimeVerdict};
pub use stability::{
    loo_stability, ols_slope, stability_rate_scan, RateScan, StabilityOptions, StabilityReport,
};
