//! Numerical verifier for the nearest-neighbor counterexample where
//! full-sample reuse breaks.
//!
//! The construction: covariates uniform on [0,1], labels `1{x <= 1/2}`, and
//! a scaled misclassification indicator as the moment offset. A fresh point
//! is misclassified exactly when it lands in the interval between 1/2 and
//! the midpoint of the two straddling training points, so everything below
//! reduces to order statistics around 1/2 and is computed from interval
//! endpoints, with no sampling of evaluation points.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::SeedSpec;

/// Outcome of one batch of replications.
#[derive(Debug, Clone)]
pub struct CounterexampleReport {
    pub n: usize,
    pub replications: usize,
    /// Per replication: `(n/2) |1 - (x_near + x_opposite)|`, the scaled
    /// width of the misclassification interval around 1/2.
    pub lambda: Vec<f64>,
    /// Per replication: the scaled equicontinuity deviation, computed
    /// independently as `n * |error interval|`; analytically equal to the
    /// lambda draw.
    pub equicont_stat: Vec<f64>,
    /// Estimate of the L2 leave-one-out offset instability
    /// `|| nu(Z, g_hat) - nu(Z, g_hat_replaced) ||_2`.
    pub nu_loo_l2: f64,
    /// How often replacing the first observation moved the nearest-to-1/2
    /// index.
    pub c1_change_frequency: f64,
    /// Largest |offset| observed at training points (always 0: a training
    /// point is its own nearest neighbor).
    pub max_train_nu: f64,
    /// Replications dropped because all covariates fell on one side of 1/2.
    pub skipped: usize,
}

/// Index of the value nearest to 1/2 (lowest index on ties).
fn nearest_to_half(xs: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, &x) in xs.iter().enumerate() {
        let d = (x - 0.5).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Nearest to 1/2 on the opposite side of 1/2 from `xs[c1]`.
///
/// "Left" means `x <= 1/2`. Returns `None` when the required side is empty.
fn opposite_neighbor(xs: &[f64], c1: usize) -> Option<usize> {
    let left = xs[c1] <= 0.5;
    let mut best: Option<usize> = None;
    let mut best_d = f64::INFINITY;
    for (i, &x) in xs.iter().enumerate() {
        let on_target_side = if left { x > 0.5 } else { x <= 0.5 };
        if !on_target_side {
            continue;
        }
        let d = (x - 0.5).abs();
        if d < best_d {
            best_d = d;
            best = Some(i);
        }
    }
    best
}

/// The misclassification interval: between 1/2 and the midpoint of the two
/// straddling points. Returned as `(lo, hi)`.
fn error_interval(x1: f64, x2: f64) -> (f64, f64) {
    let mid = (x1 + x2) / 2.0;
    if x1 <= 0.5 {
        (0.5, mid)
    } else {
        (mid, 0.5)
    }
}

fn interval_len(iv: (f64, f64)) -> f64 {
    iv.1 - iv.0
}

/// Length of the symmetric difference of two intervals that both have 1/2
/// as an endpoint.
fn symmetric_difference_len(a: (f64, f64), b: (f64, f64)) -> f64 {
    let a_right = a.0 == 0.5;
    let b_right = b.0 == 0.5;
    if a_right == b_right {
        (interval_len(a) - interval_len(b)).abs()
    } else {
        interval_len(a) + interval_len(b)
    }
}

struct RepOutcome {
    lambda: f64,
    equicont: f64,
    nu_sq: f64,
    c1_changed: bool,
    train_nu: f64,
}

fn one_replication(n: usize, seed: &SeedSpec, rep: u64) -> Option<RepOutcome> {
    let mut rng = seed.child("rep", rep).rng();
    let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let c1 = nearest_to_half(&xs);
    let c2 = opposite_neighbor(&xs, c1)?;
    let lambda = (n as f64 / 2.0) * (1.0 - (xs[c1] + xs[c2])).abs();
    let interval = error_interval(xs[c1], xs[c2]);
    let equicont = n as f64 * interval_len(interval);

    // replace the first observation with an independent copy
    let replacement: f64 = rng.random();
    let mut xs2 = xs.clone();
    xs2[0] = replacement;
    let c1b = nearest_to_half(&xs2);
    let c2b = opposite_neighbor(&xs2, c1b)?;
    let interval2 = error_interval(xs2[c1b], xs2[c2b]);
    // E[(nu - nu')^2 | intervals] = n * |symmetric difference|
    let nu_sq = n as f64 * symmetric_difference_len(interval, interval2);

    // offsets at training points: the 1-NN of a training covariate is the
    // point itself, so the misclassification indicator is 0 there
    let mut train_nu: f64 = 0.0;
    for &j in &[0usize, n / 2, n - 1] {
        let label = |x: f64| x <= 0.5;
        let nn = {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, &x) in xs.iter().enumerate() {
                let d = (x - xs[j]).abs();
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        };
        let miss = label(xs[j]) != label(xs[nn]);
        let nu = if miss { (n as f64).sqrt() } else { 0.0 };
        train_nu = train_nu.max(nu.abs());
    }

    Some(RepOutcome {
        lambda,
        equicont,
        nu_sq,
        c1_changed: c1b != c1,
        train_nu,
    })
}

/// Run `replications` independent draws of the counterexample at sample
/// size `n`.
pub fn counterexample_run(
    n: usize,
    replications: usize,
    seed: &SeedSpec,
) -> Result<CounterexampleReport> {
    if n < 4 {
        return Err(Error::invalid("counterexample needs n >= 4"));
    }
    if replications == 0 {
        return Err(Error::invalid("need at least one replication"));
    }
    let outcomes: Vec<Option<RepOutcome>> = (0..replications as u64)
        .into_par_iter()
        .map(|rep| one_replication(n, seed, rep))
        .collect();

    let mut lambda = Vec::with_capacity(replications);
    let mut equicont = Vec::with_capacity(replications);
    let mut nu_sq_sum = 0.0;
    let mut changed = 0usize;
    let mut max_train_nu: f64 = 0.0;
    let mut skipped = 0usize;
    for o in outcomes.into_iter() {
        match o {
            None => skipped += 1,
            Some(o) => {
                lambda.push(o.lambda);
                equicont.push(o.equicont);
                nu_sq_sum += o.nu_sq;
                if o.c1_changed {
                    changed += 1;
                }
                max_train_nu = max_train_nu.max(o.train_nu);
            }
        }
    }
    let kept = lambda.len();
    if kept == 0 {
        return Err(Error::invalid(
            "every replication had all covariates on one side of 1/2",
        ));
    }
    Ok(CounterexampleReport {
        n,
        replications: kept,
        nu_loo_l2: (nu_sq_sum / kept as f64).sqrt(),
        c1_change_frequency: changed as f64 / kept as f64,
        max_train_nu,
        skipped,
        lambda,
        equicont_stat: equicont,
    })
}

/// One-sample Kolmogorov-Smirnov statistic against the exponential
/// distribution with rate 2 (mean 1/2).
pub fn exp_rate2_ks(samples: &[f64]) -> Result<f64> {
    if samples.len() < 100 {
        return Err(Error::invalid(format!(
            "KS check needs at least 100 samples, got {}",
            samples.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = sorted.len() as f64;
    let cdf = |t: f64| {
        if t < 0.0 {
            0.0
        } else {
            1.0 - (-2.0 * t).exp()
        }
    };
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f);
        d = d.max(f - i as f64 / n);
    }
    Ok(d)
}
