//! Single-cell signal distributions, product priors, sampling and distances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on probability normalization at construction.
pub const NORM_TOL: f64 = 1e-12;
/// Tolerance used when comparing probabilities in assertions.
pub const ASSERT_TOL: f64 = 1e-9;

/// Seeded generator used everywhere randomness is needed.
pub type Rng64 = ChaCha8Rng;

pub fn rng_from(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream for work item `index` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Finite distribution over non-negative reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDiscrete", into = "RawDiscrete")]
pub struct Discrete {
    support: Vec<f64>,
    probs: Vec<f64>,
    /// tails[l] = Pr[v >= support[l]]
    tails: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawDiscrete {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl TryFrom<RawDiscrete> for Discrete {
    type Error = Error;
    fn try_from(r: RawDiscrete) -> Result<Self> {
        Discrete::new(r.support, r.probs)
    }
}

impl From<Discrete> for RawDiscrete {
    fn from(d: Discrete) -> Self {
        RawDiscrete {
            support: d.support,
            probs: d.probs,
        }
    }
}

impl Discrete {
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let bad = |reason: String| Error::InvalidDistribution {
            path: "discrete".into(),
            reason,
        };
        if support.is_empty() {
            return Err(bad("empty support".into()));
        }
        if support.len() != probs.len() {
            return Err(bad(format!(
                "support has {} entries but probs has {}",
                support.len(),
                probs.len()
            )));
        }
        for (k, &s) in support.iter().enumerate() {
            if !s.is_finite() || s < 0.0 {
                return Err(bad(format!("support[{k}] = {s} is not a non-negative real")));
            }
            if k > 0 && support[k - 1] >= s {
                return Err(bad(format!("support not strictly ascending at index {k}")));
            }
        }
        for (k, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(bad(format!("probs[{k}] = {p} is negative or not finite")));
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(bad(format!("probs sum to {total}, expected 1")));
        }
        Ok(Self::build(support, probs))
    }

    /// Builds from unsorted weighted atoms, merging duplicates and renormalizing.
    pub fn from_weighted(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        atoms.retain(|a| a.1 > 0.0);
        if atoms.is_empty() {
            return Err(Error::InvalidDistribution {
                path: "discrete".into(),
                reason: "no atoms with positive weight".into(),
            });
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        let mut support: Vec<f64> = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        for (v, w) in atoms {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidDistribution {
                    path: "discrete".into(),
                    reason: format!("atom {v} is not a non-negative real"),
                });
            }
            if support.last() == Some(&v) {
                *probs.last_mut().unwrap() += w / total;
            } else {
                support.push(v);
                probs.push(w / total);
            }
        }
        Ok(Self::build(support, probs))
    }

    fn build(support: Vec<f64>, probs: Vec<f64>) -> Self {
        let mut tails = vec![0.0; support.len()];
        let mut acc = 0.0;
        for l in (0..support.len()).rev() {
            acc += probs[l];
            tails[l] = acc.min(1.0);
        }
        // The bottom tail is exactly 1 regardless of rounding.
        tails[0] = 1.0;
        Self {
            support,
            probs,
            tails,
        }
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
    /// `tails()[l]` is Pr[v >= support[l]].
    pub fn tails(&self) -> &[f64] {
        &self.tails
    }
    pub fn max(&self) -> f64 {
        *self.support.last().unwrap()
    }
}

/// Parametric families with closed-form cdf and inverse cdf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Uniform on [lo, hi].
    Uniform { lo: f64, hi: f64 },
    /// Exponential with the given rate conditioned on [0, cap].
    TruncatedExponential { rate: f64, cap: f64 },
    /// F(x) = 1 - 1/x on [1, cap) with the remaining 1/cap mass at cap.
    EqualRevenue { cap: f64 },
}

impl Family {
    fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidDistribution {
            path: "parametric".into(),
            reason: reason.into(),
        };
        match *self {
            Family::Uniform { lo, hi } => {
                if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
                    return Err(bad("uniform needs 0 <= lo < hi < inf"));
                }
            }
            Family::TruncatedExponential { rate, cap } => {
                if !(rate > 0.0 && cap > 0.0 && cap.is_finite()) {
                    return Err(bad("truncated exponential needs rate > 0 and 0 < cap < inf"));
                }
            }
            Family::EqualRevenue { cap } => {
                if !(cap >= 1.0 && cap.is_finite()) {
                    return Err(bad("equal revenue needs 1 <= cap < inf"));
                }
            }
        }
        Ok(())
    }

    /// Continuous part of the cdf, valid below the family's upper end.
    fn cdf(&self, x: f64) -> f64 {
        match *self {
            Family::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Family::TruncatedExponential { rate, cap } => {
                if x <= 0.0 {
                    0.0
                } else if x >= cap {
                    1.0
                } else {
                    (1.0 - (-rate * x).exp()) / (1.0 - (-rate * cap).exp())
                }
            }
            Family::EqualRevenue { cap } => {
                if x < 1.0 {
                    0.0
                } else if x >= cap {
                    1.0
                } else {
                    1.0 - 1.0 / x
                }
            }
        }
    }

    /// Pr[X < x].
    fn cdf_left(&self, x: f64) -> f64 {
        match *self {
            Family::EqualRevenue { cap } if x >= cap => {
                if x > cap {
                    1.0
                } else {
                    1.0 - 1.0 / cap
                }
            }
            _ => self.cdf(x),
        }
    }

    fn upper(&self) -> f64 {
        match *self {
            Family::Uniform { hi, .. } => hi,
            Family::TruncatedExponential { cap, .. } => cap,
            Family::EqualRevenue { cap } => cap,
        }
    }

    /// sup{x : Pr[X >= x] >= q} for q in (0, 1].
    fn quantile(&self, q: f64) -> f64 {
        match *self {
            Family::Uniform { lo, hi } => hi - q * (hi - lo),
            Family::TruncatedExponential { rate, cap } => {
                let u = 1.0 - q;
                (-(1.0 - u * (1.0 - (-rate * cap).exp())).ln() / rate).clamp(0.0, cap)
            }
            Family::EqualRevenue { cap } => (1.0 / q).min(cap),
        }
    }

    fn mean(&self) -> f64 {
        match *self {
            Family::Uniform { lo, hi } => 0.5 * (lo + hi),
            Family::TruncatedExponential { rate, cap } => {
                let e = (-rate * cap).exp();
                (1.0 - e - rate * cap * e) / (rate * (1.0 - e))
            }
            Family::EqualRevenue { cap } => 1.0 + cap.ln(),
        }
    }
}

/// One (bidder, item) scalar signal distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Discrete(Discrete),
    /// A parametric family, optionally capped: the signal is min{X, cap}.
    Parametric {
        #[serde(flatten)]
        family: Family,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cap: Option<f64>,
    },
}

impl Marginal {
    pub fn discrete(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        Ok(Marginal::Discrete(Discrete::new(support, probs)?))
    }

    pub fn point(v: f64) -> Self {
        Marginal::Discrete(Discrete::build(vec![v], vec![1.0]))
    }

    pub fn parametric(family: Family) -> Result<Self> {
        family.validate()?;
        Ok(Marginal::Parametric { family, cap: None })
    }

    pub fn as_discrete(&self) -> Option<&Discrete> {
        match self {
            Marginal::Discrete(d) => Some(d),
            _ => None,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Marginal::Discrete(_))
    }

    /// Upper end of the support (H for this cell).
    pub fn upper(&self) -> f64 {
        match self {
            Marginal::Discrete(d) => d.max(),
            Marginal::Parametric { family, cap } => match cap {
                Some(c) => c.min(family.upper()),
                None => family.upper(),
            },
        }
    }

    /// Price above the support; posting it never sells.
    pub fn sentinel(&self) -> f64 {
        self.upper() + 1.0
    }

    /// Pr[v <= x].
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Marginal::Discrete(d) => {
                let k = d.support.partition_point(|&s| s <= x);
                if k == d.support.len() {
                    1.0
                } else {
                    1.0 - d.tails[k]
                }
            }
            Marginal::Parametric { family, cap } => match cap {
                Some(c) if x >= *c => 1.0,
                _ => family.cdf(x),
            },
        }
    }

    /// Pr[v < x].
    pub fn cdf_left(&self, x: f64) -> f64 {
        match self {
            Marginal::Discrete(d) => {
                let k = d.support.partition_point(|&s| s < x);
                if k == d.support.len() {
                    1.0
                } else {
                    1.0 - d.tails[k]
                }
            }
            Marginal::Parametric { family, cap } => match cap {
                Some(c) if x > *c => 1.0,
                _ => family.cdf_left(x),
            },
        }
    }

    /// Pr[v >= x].
    pub fn tail(&self, x: f64) -> f64 {
        1.0 - self.cdf_left(x)
    }

    pub fn mean(&self) -> f64 {
        match self {
            Marginal::Discrete(d) => d.support.iter().zip(&d.probs).map(|(s, p)| s * p).sum(),
            Marginal::Parametric { family, cap: None } => family.mean(),
            Marginal::Parametric { .. } => {
                // E[min(X, c)] = integral of the tail over [0, c]
                let c = self.upper();
                let steps = 20_000;
                let h = c / steps as f64;
                (0..steps)
                    .map(|k| self.tail((k as f64 + 0.5) * h) * h)
                    .sum()
            }
        }
    }

    /// F^{-1}(1 - q) = sup{x : Pr[v >= x] >= q}. At q = 0 returns the sentinel price.
    pub fn quantile(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return self.sentinel();
        }
        let q = q.min(1.0);
        match self {
            Marginal::Discrete(d) => {
                // tails are non-increasing; find the last index whose tail reaches q
                let k = d.tails.partition_point(|&t| t >= q - NORM_TOL);
                d.support[k.max(1) - 1]
            }
            Marginal::Parametric { family, cap } => {
                if let Some(c) = cap {
                    if *c < family.upper() && 1.0 - family.cdf(*c) >= q {
                        return *c;
                    }
                }
                family.quantile(q)
            }
        }
    }

    /// Inverse-transform sample.
    pub fn sample(&self, rng: &mut Rng64) -> f64 {
        // (0, 1] so the sentinel branch of quantile is never hit
        let u: f64 = 1.0 - rng.gen::<f64>();
        self.quantile(u)
    }

    /// Equal-mass discretization with `k` atoms at mid-quantiles.
    pub fn discretize(&self, k: usize) -> Discrete {
        match self {
            Marginal::Discrete(d) => d.clone(),
            Marginal::Parametric { .. } => {
                let k = k.max(1);
                let atoms = (0..k)
                    .map(|i| (self.quantile((i as f64 + 0.5) / k as f64), 1.0 / k as f64))
                    .collect();
                Discrete::from_weighted(atoms).expect("quantiles are finite and non-negative")
            }
        }
    }
}

/// Discrete uniform distribution over the multiset of samples.
pub fn empirical(samples: &[f64]) -> Result<Marginal> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empirical distribution of zero samples".into()));
    }
    let w = 1.0 / samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut support: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for v in sorted {
        if support.last() == Some(&v) {
            *counts.last_mut().unwrap() += 1;
        } else {
            support.push(v);
            counts.push(1);
        }
    }
    for &v in &support {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample {v} is not a non-negative real")));
        }
    }
    let probs = counts.iter().map(|&c| c as f64 * w).collect();
    Ok(Marginal::Discrete(Discrete::build(support, probs)))
}

/// Distribution of min{t, cap}.
pub fn truncate(d: &Marginal, cap: f64) -> Result<Marginal> {
    if !(cap > 0.0) {
        return Err(Error::InvalidArgument(format!("truncation cap must be positive, got {cap}")));
    }
    Ok(match d {
        Marginal::Discrete(dd) => {
            if cap >= dd.max() {
                d.clone()
            } else {
                let atoms = dd
                    .support
                    .iter()
                    .zip(&dd.probs)
                    .map(|(&s, &p)| (s.min(cap), p))
                    .collect();
                Marginal::Discrete(Discrete::from_weighted(atoms)?)
            }
        }
        Marginal::Parametric { family, cap: old } => Marginal::Parametric {
            family: *family,
            cap: Some(old.map_or(cap, |c| c.min(cap))),
        },
    })
}

/// Free-function form of [`Marginal::quantile`].
pub fn quantile(d: &Marginal, q: f64) -> f64 {
    d.quantile(q)
}

/// Upper median sup{x : Pr[X >= x] >= 1/2}, i.e. the ceil(K/2)-th largest of K values.
pub fn upper_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    Some(v[(v.len() + 1) / 2 - 1])
}

/// The r-th largest (1-based) of a list of values.
pub fn order_statistic_desc(values: &[f64], r: usize) -> Option<f64> {
    if r == 0 || r > values.len() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    Some(v[r - 1])
}

/// Kolmogorov distance sup_x |Pr_a[v <= x] - Pr_b[v <= x]|.
///
/// Exact when at least one side is discrete. Two parametric marginals are
/// compared on a fine grid over their common range.
pub fn kolmogorov_distance(a: &Marginal, b: &Marginal) -> f64 {
    let mut pts: Vec<f64> = Vec::new();
    for d in [a, b] {
        match d {
            Marginal::Discrete(dd) => pts.extend_from_slice(&dd.support),
            Marginal::Parametric { .. } => pts.push(d.upper()),
        }
    }
    if !a.is_discrete() && !b.is_discrete() {
        let top = a.upper().max(b.upper());
        let steps = 1 << 14;
        pts.extend((0..=steps).map(|k| top * k as f64 / steps as f64));
    }
    let mut best: f64 = 0.0;
    for &x in &pts {
        best = best.max((a.cdf(x) - b.cdf(x)).abs());
        best = best.max((a.cdf_left(x) - b.cdf_left(x)).abs());
    }
    best.clamp(0.0, 1.0)
}

/// A value whose tail probability Pr[v >= x] lies in [lo, hi].
///
/// On a discrete marginal the support point whose tail is closest to the band
/// midpoint is returned; parametric marginals use the midpoint quantile.
pub fn tail_threshold(d: &Marginal, lo: f64, hi: f64) -> Result<f64> {
    if !(lo > 0.0 && lo < hi && hi <= 1.0) {
        return Err(Error::InvalidArgument(format!("tail band [{lo}, {hi}] is not inside (0, 1]")));
    }
    let mid = 0.5 * (lo + hi);
    match d {
        Marginal::Parametric { .. } => Ok(d.quantile(mid)),
        Marginal::Discrete(dd) => {
            let mut best: Option<(f64, f64)> = None;
            let mut below: Option<f64> = None;
            let mut above: Option<f64> = None;
            for (&s, &t) in dd.support.iter().zip(&dd.tails) {
                if t >= lo - NORM_TOL && t <= hi + NORM_TOL {
                    let gap = (t - mid).abs();
                    if best.map_or(true, |(g, _)| gap < g) {
                        best = Some((gap, s));
                    }
                } else if t < lo {
                    below = Some(below.map_or(t, |b: f64| b.max(t)));
                } else {
                    above = Some(above.map_or(t, |a: f64| a.min(t)));
                }
            }
            best.map(|(_, s)| s).ok_or(Error::InfeasibleBand {
                lo,
                hi,
                below,
                above,
            })
        }
    }
}

/// Sample-based [`tail_threshold`] on the empirical distribution.
pub fn tail_threshold_samples(samples: &[f64], lo: f64, hi: f64) -> Result<f64> {
    tail_threshold(&empirical(samples)?, lo, hi)
}

/// One bidder's signal for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Signal {
    /// Scalar value (additive, unit-demand, constrained-additive).
    Value(f64),
    /// Per-clause values of this item (XOS).
    Clauses(Vec<f64>),
    /// Level index into an explicit subadditive table.
    Index { index: usize },
}

impl Signal {
    pub fn value(&self) -> f64 {
        match self {
            Signal::Value(v) => *v,
            Signal::Clauses(c) => c.iter().copied().fold(0.0, f64::max),
            Signal::Index { index } => *index as f64,
        }
    }
}

/// Distribution of one cell of the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Scalar(Marginal),
    /// Finite distribution over structured signals (clause vectors or table indices).
    Atoms { atoms: Vec<Signal>, probs: Vec<f64> },
}

impl Cell {
    pub fn atoms_checked(atoms: Vec<Signal>, probs: Vec<f64>) -> Result<Self> {
        let bad = |reason: String| Error::InvalidDistribution {
            path: "signals".into(),
            reason,
        };
        if atoms.is_empty() || atoms.len() != probs.len() {
            return Err(bad(format!("{} atoms with {} probs", atoms.len(), probs.len())));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(bad("negative probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(bad(format!("probs sum to {total}, expected 1")));
        }
        Ok(Cell::Atoms { atoms, probs })
    }

    /// Finite list of (signal, probability); parametric cells are not enumerable.
    pub fn enumerate(&self) -> Result<Vec<(Signal, f64)>> {
        match self {
            Cell::Scalar(Marginal::Discrete(d)) => Ok(d
                .support
                .iter()
                .zip(&d.probs)
                .filter(|(_, p)| **p > 0.0)
                .map(|(&s, &p)| (Signal::Value(s), p))
                .collect()),
            Cell::Scalar(_) => Err(Error::NotDiscrete("parametric cell cannot be enumerated".into())),
            Cell::Atoms { atoms, probs } => Ok(atoms
                .iter()
                .cloned()
                .zip(probs.iter().copied())
                .filter(|(_, p)| *p > 0.0)
                .collect()),
        }
    }

    pub fn sample(&self, rng: &mut Rng64) -> Signal {
        match self {
            Cell::Scalar(m) => Signal::Value(m.sample(rng)),
            Cell::Atoms { atoms, probs } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (a, p) in atoms.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return a.clone();
                    }
                }
                atoms.last().unwrap().clone()
            }
        }
    }

    pub fn as_marginal(&self) -> Option<&Marginal> {
        match self {
            Cell::Scalar(m) => Some(m),
            _ => None,
        }
    }
}

/// One bidder's type: a signal per item.
pub type Row = Vec<Signal>;

/// A realized type profile, one row per bidder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub rows: Vec<Row>,
}

impl Profile {
    pub fn n(&self) -> usize {
        self.rows.len()
    }
    pub fn scalar(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j].value()
    }
}

/// Independent n x m grid of cell distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductPrior {
    pub n: usize,
    pub m: usize,
    #[serde(default)]
    pub symmetric: bool,
    pub cells: Vec<Vec<Cell>>,
}

impl ProductPrior {
    pub fn new(cells: Vec<Vec<Cell>>, symmetric: bool) -> Result<Self> {
        let n = cells.len();
        if n == 0 {
            return Err(Error::InvalidDistribution {
                path: "marginals".into(),
                reason: "no bidders".into(),
            });
        }
        let m = cells[0].len();
        if m == 0 {
            return Err(Error::InvalidDistribution {
                path: "marginals[0]".into(),
                reason: "no items".into(),
            });
        }
        for (i, row) in cells.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidDistribution {
                    path: format!("marginals[{i}]"),
                    reason: format!("row has {} cells, expected {m}", row.len()),
                });
            }
            if symmetric && row != &cells[0] {
                return Err(Error::InvalidDistribution {
                    path: format!("marginals[{i}]"),
                    reason: "symmetric prior requires identical rows".into(),
                });
            }
        }
        Ok(Self {
            n,
            m,
            symmetric,
            cells,
        })
    }

    /// Prior whose cells are all scalar marginals.
    pub fn from_marginals(marginals: Vec<Vec<Marginal>>) -> Result<Self> {
        let symmetric = marginals.windows(2).all(|w| w[0] == w[1]);
        let cells = marginals
            .into_iter()
            .map(|r| r.into_iter().map(Cell::Scalar).collect())
            .collect();
        Self::new(cells, symmetric)
    }

    /// Symmetric prior with `n` copies of one row.
    pub fn symmetric_rows(n: usize, row: Vec<Cell>) -> Result<Self> {
        Self::new(vec![row; n], true)
    }

    pub fn marginal(&self, i: usize, j: usize) -> Option<&Marginal> {
        self.cells[i][j].as_marginal()
    }

    /// Scalar marginals for every cell, or an error naming the first structured cell.
    pub fn marginals(&self) -> Result<Vec<Vec<Marginal>>> {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .enumerate()
                    .map(|(j, c)| {
                        c.as_marginal().cloned().ok_or_else(|| {
                            Error::InvalidArgument(format!("cell ({i},{j}) is not a scalar marginal"))
                        })
                    })
                    .collect()
            })
            .collect()
    }

    pub fn sample_one(&self, rng: &mut Rng64) -> Profile {
        Profile {
            rows: self
                .cells
                .iter()
                .map(|r| r.iter().map(|c| c.sample(rng)).collect())
                .collect(),
        }
    }

    pub fn sample_row(&self, i: usize, rng: &mut Rng64) -> Row {
        self.cells[i].iter().map(|c| c.sample(rng)).collect()
    }

    /// Number of distinct profiles, or an error if some cell is parametric.
    pub fn profile_count(&self) -> Result<f64> {
        let mut total = 1.0;
        for r in &self.cells {
            for c in r {
                total *= c.enumerate()?.len() as f64;
            }
        }
        Ok(total)
    }

    /// All types of bidder `i` with their probabilities.
    pub fn row_types(&self, i: usize) -> Result<Vec<(Row, f64)>> {
        let cells: Vec<Vec<(Signal, f64)>> = self.cells[i]
            .iter()
            .map(|c| c.enumerate())
            .collect::<Result<_>>()?;
        Ok(product_of(&cells))
    }

    /// Calls `f` on every profile with its probability.
    pub fn for_each_profile(&self, budget: f64, mut f: impl FnMut(&Profile, f64)) -> Result<()> {
        let count = self.profile_count()?;
        if count > budget {
            return Err(Error::Budget {
                what: "type profiles".into(),
                needed: count,
                budget,
            });
        }
        let rows: Vec<Vec<(Row, f64)>> = (0..self.n).map(|i| self.row_types(i)).collect::<Result<_>>()?;
        let mut idx = vec![0usize; self.n];
        let mut profile = Profile {
            rows: rows.iter().map(|r| r[0].0.clone()).collect(),
        };
        loop {
            let p: f64 = idx.iter().enumerate().map(|(i, &k)| rows[i][k].1).product();
            f(&profile, p);
            let mut i = 0;
            loop {
                if i == self.n {
                    return Ok(());
                }
                idx[i] += 1;
                if idx[i] < rows[i].len() {
                    profile.rows[i] = rows[i][idx[i]].0.clone();
                    break;
                }
                idx[i] = 0;
                profile.rows[i] = rows[i][0].0.clone();
                i += 1;
            }
        }
    }

    /// Upper bound H on every scalar signal.
    pub fn value_bound(&self) -> f64 {
        let mut h: f64 = 0.0;
        for r in &self.cells {
            for c in r {
                h = h.max(match c {
                    Cell::Scalar(m) => m.upper(),
                    Cell::Atoms { atoms, .. } => atoms.iter().map(Signal::value).fold(0.0, f64::max),
                });
            }
        }
        h
    }
}

/// Cartesian product of per-coordinate weighted atom lists.
pub fn product_of<T: Clone>(coords: &[Vec<(T, f64)>]) -> Vec<(Vec<T>, f64)> {
    let mut out: Vec<(Vec<T>, f64)> = vec![(Vec::with_capacity(coords.len()), 1.0)];
    for c in coords {
        let mut next = Vec::with_capacity(out.len() * c.len());
        for (prefix, p) in &out {
            for (a, q) in c {
                let mut v = prefix.clone();
                v.push(a.clone());
                next.push((v, p * q));
            }
        }
        out = next;
    }
    out
}

/// `count` independent profiles from a seeded stream.
pub fn sample(prior: &ProductPrior, seed: u64, count: usize) -> Result<Vec<Profile>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut rng = rng_from(seed);
    Ok((0..count).map(|_| prior.sample_one(&mut rng)).collect())
}
