//! Subsample bagging: average of base learners, each fit on an m-subsample
//! drawn without replacement.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::sampling::subsample_without_replacement;
use crate::seed::{SeedSpec, Stream};

use super::one_nn::OneNnModel;
use super::tree::TreeModel;

/// Budget for exact subset enumeration.
pub const EXACT_SUBSET_BUDGET: u64 = 1_000_000;

/// Which base learner a bag carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseKind {
    OneNn,
    Tree,
}

impl std::fmt::Display for BaseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BaseKind::OneNn => write!(f, "one_nn"),
            BaseKind::Tree => write!(f, "tree"),
        }
    }
}

impl std::str::FromStr for BaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_nn" | "1nn" | "nn" => Ok(BaseKind::OneNn),
            "tree" | "rf" => Ok(BaseKind::Tree),
            other => Err(Error::invalid(format!(
                "unknown base learner '{other}' (expected one_nn or tree)"
            ))),
        }
    }
}

/// A fitted base learner with possibly multi-column output.
///
/// Trees are scalar-output, so multi-output targets get one tree per column,
/// all fit on the same subsample.
#[derive(Debug, Clone)]
pub enum BaseModel {
    OneNn(OneNnModel),
    Trees(Vec<TreeModel>),
}

impl BaseModel {
    /// `rng` is reserved for stochastic bases; both current bases are
    /// deterministic given the subsample.
    pub fn fit(
        kind: BaseKind,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        _rng: &mut Stream,
    ) -> Result<Self> {
        match kind {
            BaseKind::OneNn => Ok(BaseModel::OneNn(OneNnModel::fit(x, y)?)),
            BaseKind::Tree => {
                let trees = (0..y.ncols())
                    .map(|j| TreeModel::fit(x, y.column(j)))
                    .collect::<Result<Vec<_>>>()?;
                if trees.is_empty() {
                    return Err(Error::invalid("tree base needs at least one output column"));
                }
                Ok(BaseModel::Trees(trees))
            }
        }
    }

    pub fn predict(&self, q: ArrayView1<f64>) -> Result<Array1<f64>> {
        match self {
            BaseModel::OneNn(m) => m.predict(q),
            BaseModel::Trees(ts) => {
                let mut out = Array1::zeros(ts.len());
                for (j, t) in ts.iter().enumerate() {
                    out[j] = t.predict(q)?;
                }
                Ok(out)
            }
        }
    }
}

/// One bag: the subsample index set and the model fit on it.
#[derive(Debug, Clone)]
pub struct Bag {
    pub indices: Vec<usize>,
    pub model: BaseModel,
}

/// An ensemble of `B` base models averaged with equal weights.
#[derive(Debug, Clone)]
pub struct BaggedEnsemble {
    base: BaseKind,
    m: usize,
    bags: Vec<Bag>,
    input_dim: usize,
    output_dim: usize,
}

fn gather_rows(src: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), src.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&src.row(i));
    }
    out
}

impl BaggedEnsemble {
    /// Fit `b` bags on subsamples of size `m` drawn without replacement.
    ///
    /// Bag `k` draws its subsample and any base-learner randomness from the
    /// stream at `seed.child("bag", k)`, so refitting with the same seed on
    /// perturbed data reuses identical index sets.
    pub fn fit(
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        m: usize,
        b: usize,
        base: BaseKind,
        seed: &SeedSpec,
    ) -> Result<Self> {
        let n = x.nrows();
        if x.nrows() != y.nrows() {
            return Err(Error::invalid(format!(
                "bagging row mismatch: x={}, y={}",
                x.nrows(),
                y.nrows()
            )));
        }
        if m == 0 || m > n {
            return Err(Error::invalid(format!(
                "subsample size m={m} must satisfy 1 <= m <= n={n}"
            )));
        }
        if b == 0 {
            return Err(Error::invalid("bag count must be at least 1"));
        }
        let mut bags = Vec::with_capacity(b);
        for k in 0..b {
            let mut rng = seed.child("bag", k as u64).rng();
            let indices = subsample_without_replacement(n, m, &mut rng)?;
            let model = BaseModel::fit(base, gather_rows(x, &indices).view(), gather_rows(y, &indices).view(), &mut rng)?;
            bags.push(Bag { indices, model });
        }
        Ok(BaggedEnsemble {
            base,
            m,
            bags,
            input_dim: x.ncols(),
            output_dim: y.ncols(),
        })
    }

    /// Fit one bag per size-`m` subset of the training rows, enumerated in
    /// lexicographic order. Subject to [`EXACT_SUBSET_BUDGET`].
    pub fn fit_exact(
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        m: usize,
        base: BaseKind,
    ) -> Result<Self> {
        let n = x.nrows();
        if x.nrows() != y.nrows() {
            return Err(Error::invalid("bagging row mismatch"));
        }
        if m == 0 || m > n {
            return Err(Error::invalid(format!(
                "subsample size m={m} must satisfy 1 <= m <= n={n}"
            )));
        }
        checked_binomial(n, m)?;
        let mut rng = SeedSpec::new(0).rng(); // bases are deterministic; stream unused
        let mut bags = Vec::new();
        for indices in Combinations::new(n, m) {
            let model = BaseModel::fit(base, gather_rows(x, &indices).view(), gather_rows(y, &indices).view(), &mut rng)?;
            bags.push(Bag { indices, model });
        }
        Ok(BaggedEnsemble {
            base,
            m,
            bags,
            input_dim: x.ncols(),
            output_dim: y.ncols(),
        })
    }

    pub fn base(&self) -> BaseKind {
        self.base
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn b(&self) -> usize {
        self.bags.len()
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Mean of the bag predictions, accumulated in fixed bag order.
    pub fn predict(&self, q: ArrayView1<f64>) -> Result<Array1<f64>> {
        let mut acc = Array1::zeros(self.output_dim);
        for bag in &self.bags {
            acc += &bag.model.predict(q)?;
        }
        acc /= self.bags.len() as f64;
        Ok(acc)
    }

    /// Per-bag predictions in bag order (for variance diagnostics).
    pub fn bag_predictions(&self, q: ArrayView1<f64>) -> Result<Vec<Array1<f64>>> {
        self.bags.iter().map(|b| b.model.predict(q)).collect()
    }
}

/// Exact infinite-bag oracle: the average base prediction over all size-`m`
/// subsets of the training rows.
///
/// Deliberately bypasses [`BaggedEnsemble`]: this is the independent check
/// that Monte Carlo bagging converges to its enumeration limit.
pub fn predict_bagged_exact(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    m: usize,
    base: BaseKind,
    q: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let n = x.nrows();
    if x.nrows() != y.nrows() {
        return Err(Error::invalid("row mismatch"));
    }
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "subsample size m={m} must satisfy 1 <= m <= n={n}"
        )));
    }
    let count = checked_binomial(n, m)?;
    let mut rng = SeedSpec::new(0).rng();
    let mut acc = Array1::zeros(y.ncols());
    for indices in Combinations::new(n, m) {
        let model = BaseModel::fit(base, gather_rows(x, &indices).view(), gather_rows(y, &indices).view(), &mut rng)?;
        acc += &model.predict(q)?;
    }
    acc /= count as f64;
    Ok(acc)
}

/// `C(n, m)` if it fits the enumeration budget, else a resource error.
pub fn checked_binomial(n: usize, m: usize) -> Result<u64> {
    let m = m.min(n - m);
    let mut acc: u128 = 1;
    for i in 0..m {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > EXACT_SUBSET_BUDGET as u128 {
            return Err(Error::ResourceLimit(format!(
                "C({n}, {}) exceeds the exact-enumeration budget of {EXACT_SUBSET_BUDGET}",
                m
            )));
        }
    }
    Ok(acc as u64)
}

/// Lexicographic size-`m` subsets of `[0, n)`.
struct Combinations {
    n: usize,
    current: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(n: usize, m: usize) -> Self {
        Combinations {
            n,
            current: (0..m).collect(),
            done: m > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        let m = self.current.len();
        // advance
        let mut i = m;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.current[i] < self.n - (m - i) {
                self.current[i] += 1;
                for j in (i + 1)..m {
                    self.current[j] = self.current[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}
