//! Uniform-convergence toolkit: single-intersecting grid events, exact
//! product-measure deviations and the partition-based sample-size calculator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dist::{self, Marginal};
use crate::error::{Error, Result};
use crate::valuation::{full_set, items_of, ItemSet};

/// A subset of a finite product grid, stored row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEvent {
    pub grids: Vec<Vec<f64>>,
    pub member: Vec<bool>,
}

impl GridEvent {
    pub fn new(grids: Vec<Vec<f64>>, member: Vec<bool>) -> Result<Self> {
        let size: usize = grids.iter().map(Vec::len).product();
        if member.len() != size {
            return Err(Error::InvalidArgument(format!(
                "membership tensor has {} cells, grids need {size}",
                member.len()
            )));
        }
        if grids.iter().any(|g| g.windows(2).any(|w| w[0] >= w[1])) {
            return Err(Error::InvalidArgument("grids must be strictly ascending".into()));
        }
        Ok(GridEvent { grids, member })
    }

    pub fn from_fn(grids: Vec<Vec<f64>>, f: impl Fn(&[f64]) -> bool) -> Result<Self> {
        let dims: Vec<usize> = grids.iter().map(Vec::len).collect();
        let size: usize = dims.iter().product();
        let mut member = Vec::with_capacity(size);
        let mut point = vec![0.0; dims.len()];
        for flat in 0..size {
            let idx = unflatten(flat, &dims);
            for (a, &k) in idx.iter().enumerate() {
                point[a] = grids[a][k];
            }
            member.push(f(&point));
        }
        Self::new(grids, member)
    }

    pub fn dim(&self) -> usize {
        self.grids.len()
    }

    fn dims(&self) -> Vec<usize> {
        self.grids.iter().map(Vec::len).collect()
    }
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * dims[a + 1];
    }
    s
}

fn unflatten(mut flat: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for a in (0..dims.len()).rev() {
        idx[a] = flat % dims[a];
        flat /= dims[a];
    }
    idx
}

/// True iff every axis-parallel grid line meets the event in one contiguous run or not at all.
pub fn is_single_intersecting(e: &GridEvent) -> bool {
    let dims = e.dims();
    let st = strides(&dims);
    let size = e.member.len();
    for a in 0..dims.len() {
        for start in 0..size {
            // line starts are the cells whose coordinate on axis a is zero
            if (start / st[a]) % dims[a] != 0 {
                continue;
            }
            let mut runs = 0;
            let mut inside = false;
            for k in 0..dims[a] {
                let m = e.member[start + k * st[a]];
                if m && !inside {
                    runs += 1;
                }
                inside = m;
            }
            if runs > 1 {
                return false;
            }
        }
    }
    true
}

/// Probability of the event under a product of per-axis weights.
pub fn event_prob(e: &GridEvent, axes: &[Vec<f64>]) -> f64 {
    let dims = e.dims();
    let mut total = 0.0;
    for (flat, &m) in e.member.iter().enumerate() {
        if m {
            let idx = unflatten(flat, &dims);
            total += idx.iter().enumerate().map(|(a, &k)| axes[a][k]).product::<f64>();
        }
    }
    total
}

/// |Pr_D[E] - Pr_D'[E]| for product distributions given by per-axis weights on the grids.
pub fn event_prob_gap(e: &GridEvent, d: &[Vec<f64>], d_hat: &[Vec<f64>]) -> f64 {
    (event_prob(e, d) - event_prob(e, d_hat)).abs()
}

/// Kolmogorov distance of two weight vectors on the same ascending grid.
pub fn grid_kolmogorov(p: &[f64], q: &[f64]) -> f64 {
    let (mut cp, mut cq, mut worst) = (0.0, 0.0, 0.0f64);
    for (a, b) in p.iter().zip(q) {
        cp += a;
        cq += b;
        worst = worst.max((cp - cq).abs());
    }
    worst
}

/// {t : sum_j (t_j - p_j)^+ >= x} on the support grids of one additive bidder.
pub fn surplus_event_check(grids: &[Vec<f64>], prices: &[f64], x: f64) -> Result<GridEvent> {
    GridEvent::from_fn(grids.to_vec(), |t| {
        t.iter().zip(prices).map(|(v, p)| (v - p).max(0.0)).sum::<f64>() >= x
    })
}

/// Expectation of a product function f(t) = prod_a g_a(t_a) under a product of weights.
pub fn product_expectation(axes: &[Vec<f64>], factors: &[Vec<f64>]) -> f64 {
    axes.iter()
        .zip(factors)
        .map(|(w, g)| w.iter().zip(g).map(|(a, b)| a * b).sum::<f64>())
        .product()
}

/// Exact deviation of a product function and the per-axis deviations it is compared against.
pub fn hybrid_deviation(d: &[Vec<f64>], d_hat: &[Vec<f64>], factors: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let total = (product_expectation(d, factors) - product_expectation(d_hat, factors)).abs();
    let per_axis = d
        .iter()
        .zip(d_hat)
        .zip(factors)
        .map(|((p, q), g)| {
            let e: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
            let f: f64 = q.iter().zip(g).map(|(a, b)| a * b).sum();
            (e - f).abs()
        })
        .collect();
    (total, per_axis)
}

/// DKW sample size ceil(ln(2/delta) / (2 eps^2)).
pub fn dkw_samples(eps: f64, delta: f64) -> f64 {
    ((2.0 / delta).ln() / (2.0 * eps * eps)).ceil()
}

/// DKW failure probability 2 exp(-2 K eps^2).
pub fn dkw_tail(k: usize, eps: f64) -> f64 {
    2.0 * (-2.0 * k as f64 * eps * eps).exp()
}

/// Sup-distance between the empirical CDF of uniform[0,1] draws and the uniform CDF.
pub fn uniform_ks(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &u)| ((i + 1) as f64 / n - u).max(u - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Fraction of seeded trials whose empirical CDF of K draws deviates from `d` by more than eps.
pub fn dkw_violation_frequency(d: &Marginal, k: usize, eps: f64, trials: usize, seed: u64) -> Result<f64> {
    let uniform01 = matches!(
        d,
        Marginal::Parametric {
            family: dist::Family::Uniform { lo, hi },
            cap: None
        } if *lo == 0.0 && *hi == 1.0
    );
    let mut bad = 0usize;
    for t in 0..trials {
        let mut rng = dist::rng_from(dist::derive_seed(seed, t as u64));
        let mut xs: Vec<f64> = (0..k).map(|_| d.sample(&mut rng)).collect();
        let dev = if uniform01 {
            uniform_ks(&mut xs)
        } else {
            dist::kolmogorov_distance(&dist::empirical(&xs)?, d)
        };
        if dev > eps {
            bad += 1;
        }
    }
    Ok(bad as f64 / trials as f64)
}

/// Sample-complexity descriptor of one coordinate subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Entry {
    /// DKW bound for an interval class on one axis.
    Dkw,
    /// A class of VC dimension `v`.
    Vc { v: f64 },
    /// A fixed sample size independent of (eps, delta).
    Fixed { s: f64 },
}

impl Entry {
    /// s_T(eps, delta), with unit constants for the VC form.
    pub fn samples(&self, eps: f64, delta: f64) -> f64 {
        match *self {
            Entry::Dkw => dkw_samples(eps, delta),
            Entry::Vc { v } => ((v / (eps * eps)) * (1.0 / eps).ln() + (1.0 / (eps * eps)) * (1.0 / delta).ln()).ceil(),
            Entry::Fixed { s } => s,
        }
    }

    pub fn vc(&self) -> Option<f64> {
        match *self {
            Entry::Vc { v } => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityTable {
    pub d: usize,
    pub entries: BTreeMap<ItemSet, Entry>,
}

impl ComplexityTable {
    pub fn new(d: usize) -> Self {
        ComplexityTable {
            d,
            entries: BTreeMap::new(),
        }
    }

    pub fn with(mut self, coords: &[usize], e: Entry) -> Self {
        self.entries.insert(coords.iter().fold(0, |s, &j| s | 1 << j), e);
        self
    }

    pub fn singletons(d: usize, e: Entry) -> Self {
        (0..d).fold(Self::new(d), |t, j| t.with(&[j], e))
    }

    /// Singleton VC 2 plus every subset T with VC 2|T|: axis-aligned boxes.
    pub fn rectangles(d: usize) -> Self {
        let mut t = Self::new(d);
        for s in 1..=full_set(d) {
            t.entries.insert(s, Entry::Vc { v: 2.0 * s.count_ones() as f64 });
        }
        t
    }

    /// Singleton entries only, VC 2 per coordinate: convex sets through per-axis intervals.
    pub fn convex(d: usize) -> Self {
        Self::singletons(d, Entry::Vc { v: 2.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionBound {
    pub bound: f64,
    pub partition: Vec<Vec<usize>>,
    /// Set in VC mode: min over partitions of k^2 max V_T.
    pub v_max: Option<f64>,
    pub provenance: String,
}

pub const MAX_PARTITION_DIM: usize = 12;

/// Minimizes `score(k, blocks)` over partitions of [d] into table blocks.
fn best_partition(tbl: &ComplexityTable, score: impl Fn(usize, &[ItemSet]) -> f64) -> Result<(f64, Vec<ItemSet>)> {
    if tbl.d == 0 || tbl.d > MAX_PARTITION_DIM {
        return Err(Error::InvalidArgument(format!("partition search needs 1 <= d <= {MAX_PARTITION_DIM}")));
    }
    let missing: Vec<usize> = (0..tbl.d).filter(|&j| !tbl.entries.contains_key(&(1 << j))).collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteTable(missing));
    }
    let blocks: Vec<ItemSet> = tbl.entries.keys().copied().filter(|&s| s != 0 && s <= full_set(tbl.d)).collect();
    let mut best: Option<(f64, Vec<ItemSet>)> = None;
    let mut chosen = Vec::new();
    fn go(
        left: ItemSet,
        blocks: &[ItemSet],
        chosen: &mut Vec<ItemSet>,
        score: &dyn Fn(usize, &[ItemSet]) -> f64,
        best: &mut Option<(f64, Vec<ItemSet>)>,
    ) {
        if left == 0 {
            let s = score(chosen.len(), chosen);
            if best.as_ref().map_or(true, |b| s < b.0) {
                *best = Some((s, chosen.clone()));
            }
            return;
        }
        let low = left & left.wrapping_neg();
        for &b in blocks {
            if b & low != 0 && b & !left == 0 {
                chosen.push(b);
                go(left & !b, blocks, chosen, score, best);
                chosen.pop();
            }
        }
    }
    go(full_set(tbl.d), &blocks, &mut chosen, &score, &mut best);
    Ok(best.expect("singletons always partition [d]"))
}

fn blocks_to_lists(blocks: &[ItemSet]) -> Vec<Vec<usize>> {
    blocks.iter().map(|&b| items_of(b).collect()).collect()
}

/// min over partitions of max_i s_{T_i}(eps/k, delta/k).
pub fn sample_bound_partition(tbl: &ComplexityTable, eps: f64, delta: f64) -> Result<PartitionBound> {
    let (bound, blocks) = best_partition(tbl, |k, bs| {
        let kf = k as f64;
        bs.iter().map(|b| tbl.entries[b].samples(eps / kf, delta / kf)).fold(0.0, f64::max)
    })?;
    Ok(PartitionBound {
        bound,
        partition: blocks_to_lists(&blocks),
        v_max: None,
        provenance: "max_i s_Ti(eps/k, delta/k), minimized over partitions".into(),
    })
}

/// VC mode: V_max = min over partitions of k^2 max V_T, then the formula instantiation
/// (V_max/eps^2) ln(k/eps) + (k^2/eps^2) ln(k/delta) with unit constants.
pub fn sample_bound_vc(tbl: &ComplexityTable, eps: f64, delta: f64) -> Result<PartitionBound> {
    if let Some(bad) = tbl.entries.values().find(|e| e.vc().is_none()) {
        return Err(Error::InvalidArgument(format!("VC mode needs VC entries, found {bad:?}")));
    }
    let (v_max, blocks) = best_partition(tbl, |k, bs| {
        let m = bs.iter().map(|b| tbl.entries[b].vc().unwrap()).fold(0.0, f64::max);
        (k * k) as f64 * m
    })?;
    let k = blocks.len() as f64;
    let bound = (v_max / (eps * eps)) * (k / eps).ln() + (k * k / (eps * eps)) * (k / delta).ln();
    Ok(PartitionBound {
        bound,
        partition: blocks_to_lists(&blocks),
        v_max: Some(v_max),
        provenance: "formula instantiation with unit constants".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn box_event(grids: Vec<Vec<f64>>, boxes: &[(f64, f64, f64, f64)]) -> GridEvent {
        GridEvent::from_fn(grids, |t| boxes.iter().any(|b| t[0] >= b.0 && t[0] <= b.1 && t[1] >= b.2 && t[1] <= b.3)).unwrap()
    }

    #[test]
    fn single_intersecting_examples() {
        let g = vec![vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0, 3.0]];
        assert!(is_single_intersecting(&GridEvent::new(g.clone(), vec![true; 16]).unwrap()));
        assert!(!is_single_intersecting(&box_event(g.clone(), &[(0.0, 0.0, 0.0, 1.0), (2.0, 3.0, 0.0, 1.0)])));
        assert!(is_single_intersecting(&box_event(g.clone(), &[(0.0, 3.0, 0.0, 0.0), (0.0, 0.0, 0.0, 3.0)])));
    }

    #[test]
    fn gap_examples() {
        let e = GridEvent::from_fn(vec![vec![0.0, 1.0, 2.0]], |t| t[0] >= 1.0).unwrap();
        let p = vec![vec![0.2, 0.3, 0.5]];
        assert_eq!(event_prob_gap(&e, &p, &p), 0.0);
        let q = vec![vec![0.25, 0.3, 0.45]];
        let xi = grid_kolmogorov(&p[0], &q[0]);
        assert!(event_prob_gap(&e, &p, &q) <= 2.0 * xi + 1e-12);
    }

    #[test]
    fn surplus_event_edges() {
        let g = vec![vec![0.0, 1.0], vec![0.0, 2.0]];
        let all = surplus_event_check(&g, &[0.5, 0.5], 0.0).unwrap();
        assert!(all.member.iter().all(|&m| m));
        let none = surplus_event_check(&g, &[0.5, 0.5], 10.0).unwrap();
        assert!(none.member.iter().all(|&m| !m));
    }

    #[test]
    fn surplus_events_are_single_intersecting() {
        let mut rng = dist::rng_from(9);
        for _ in 0..100 {
            let grids: Vec<Vec<f64>> = (0..3)
                .map(|_| {
                    let mut g: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..10.0)).collect();
                    g.sort_by(f64::total_cmp);
                    g.dedup();
                    g
                })
                .collect();
            let prices: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..8.0)).collect();
            let e = surplus_event_check(&grids, &prices, rng.gen_range(0.0..10.0)).unwrap();
            assert!(is_single_intersecting(&e));
        }
    }

    #[test]
    fn dkw_arithmetic() {
        let t = ComplexityTable::singletons(2, Entry::Dkw);
        let b = sample_bound_partition(&t, 0.1, 0.1).unwrap();
        assert_eq!(b.bound, 738.0);
        assert_eq!(b.partition, vec![vec![0], vec![1]]);
        let one = ComplexityTable::singletons(1, Entry::Dkw);
        assert_eq!(sample_bound_partition(&one, 0.1, 0.1).unwrap().bound, dkw_samples(0.1, 0.1));
    }

    #[test]
    fn vc_scaling() {
        for d in [2usize, 4, 8] {
            let r = sample_bound_vc(&ComplexityTable::rectangles(d), 0.1, 0.1).unwrap();
            assert_eq!(r.v_max, Some(2.0 * d as f64));
            let c = sample_bound_vc(&ComplexityTable::convex(d), 0.1, 0.1).unwrap();
            assert_eq!(c.v_max, Some(2.0 * (d * d) as f64));
        }
    }

    #[test]
    fn incomplete_table() {
        let t = ComplexityTable::new(3).with(&[0], Entry::Dkw);
        assert_eq!(sample_bound_partition(&t, 0.1, 0.1).unwrap_err(), Error::IncompleteTable(vec![1, 2]));
    }

    #[test]
    fn uniform_ks_matches_generic() {
        let u = Marginal::parametric(dist::Family::Uniform { lo: 0.0, hi: 1.0 }).unwrap();
        let mut rng = dist::rng_from(4);
        let mut xs: Vec<f64> = (0..200).map(|_| u.sample(&mut rng)).collect();
        let generic = dist::kolmogorov_distance(&dist::empirical(&xs).unwrap(), &u);
        assert!((uniform_ks(&mut xs) - generic).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn refining_never_increases(s in proptest::collection::vec(1.0f64..1e4, 3), lower in 0.1f64..1.0) {
            let base = (0..3).fold(ComplexityTable::new(3), |t, j| t.with(&[j], Entry::Fixed { s: s[j] }))
                .with(&[0, 1], Entry::Fixed { s: s[0] + s[1] });
            let refined = base.clone().with(&[0, 1], Entry::Fixed { s: (s[0] + s[1]) * lower });
            let a = sample_bound_partition(&base, 0.1, 0.1).unwrap().bound;
            let b = sample_bound_partition(&refined, 0.1, 0.1).unwrap().bound;
            prop_assert!(b <= a);
        }

        #[test]
        fn hybrid_bound(p in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 3), 1..=4),
                        noise in proptest::collection::vec(proptest::collection::vec(-0.2f64..0.2, 3), 4),
                        g in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 3), 4)) {
            let norm = |v: &Vec<f64>| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
            let d: Vec<Vec<f64>> = p.iter().map(norm).collect();
            let dh: Vec<Vec<f64>> = p.iter().zip(&noise).map(|(a, b)| norm(&a.iter().zip(b).map(|(x, y)| (x + y).max(0.001)).collect())).collect();
            let (total, per_axis) = hybrid_deviation(&d, &dh, &g[..d.len()]);
            prop_assert!(total <= per_axis.iter().sum::<f64>() + 1e-12);
        }
    }
}
