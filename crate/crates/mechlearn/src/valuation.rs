//! Valuation classes over independent items: value, demand and supporting-price oracles.

use serde::{Deserialize, Serialize};

use crate::dist::{Discrete, Marginal, Signal};
use crate::error::{Error, Result};

/// Bitmask over items; bit j set means item j is in the set.
pub type ItemSet = u64;

/// Utilities within this distance are treated as tied.
pub const UTIL_TOL: f64 = 1e-12;

/// Largest item count handled by exhaustive demand search.
pub const MAX_EXHAUSTIVE_ITEMS: usize = 16;

pub fn full_set(m: usize) -> ItemSet {
    if m >= 64 {
        u64::MAX
    } else {
        (1u64 << m) - 1
    }
}

pub fn items_of(s: ItemSet) -> impl Iterator<Item = usize> {
    (0..64).filter(move |j| s >> j & 1 == 1)
}

pub fn set_of(items: &[usize]) -> ItemSet {
    items.iter().fold(0, |s, &j| s | 1 << j)
}

/// Every subset of `s`, including the empty set and `s` itself.
pub fn subsets_of(s: ItemSet) -> impl Iterator<Item = ItemSet> {
    let mut next = Some(s);
    std::iter::from_fn(move || {
        let cur = next?;
        next = if cur == 0 { None } else { Some((cur - 1) & s) };
        Some(cur)
    })
}

/// Ordering used to break demand ties: more items first, then the
/// lexicographically smallest sorted item list.
fn tie_prefers(a: ItemSet, b: ItemSet) -> bool {
    let (ca, cb) = (a.count_ones(), b.count_ones());
    if ca != cb {
        return ca > cb;
    }
    // Same cardinality: the first differing item decides; the set holding the
    // smaller item at that position is lexicographically smaller.
    let diff = a ^ b;
    if diff == 0 {
        return false;
    }
    let low = diff.trailing_zeros();
    a >> low & 1 == 1
}

/// Downward-closed feasibility constraint for constrained-additive bidders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feasibility {
    /// At most k items.
    Cardinality { k: usize },
    /// The downward closure of the listed sets.
    Sets { sets: Vec<Vec<usize>> },
    /// `part[j]` names the block of item j; at most `caps[b]` items from block b.
    PartitionMatroid { part: Vec<usize>, caps: Vec<usize> },
}

impl Feasibility {
    pub fn is_feasible(&self, s: ItemSet) -> bool {
        match self {
            Feasibility::Cardinality { k } => s.count_ones() as usize <= *k,
            Feasibility::Sets { sets } => sets.iter().any(|l| s & !set_of(l) == 0),
            Feasibility::PartitionMatroid { part, caps } => {
                let mut used = vec![0usize; caps.len()];
                for j in items_of(s) {
                    match part.get(j) {
                        Some(&b) if b < caps.len() => {
                            used[b] += 1;
                            if used[b] > caps[b] {
                                return false;
                            }
                        }
                        _ => return false,
                    }
                }
                true
            }
        }
    }

    fn is_matroid_shortcut(&self) -> bool {
        !matches!(self, Feasibility::Sets { .. })
    }
}

/// Monotone subadditive valuation with no externalities, stored as a table.
///
/// Each item signal is a level in `0..levels`. The value of a bundle depends on
/// the bundle and the levels of its own items only, which is encoded by
/// indexing with the code sum_j code_j (levels+1)^j, code_j = 0 for items outside
/// the bundle and 1 + level otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubadditiveTable {
    pub m: usize,
    pub levels: usize,
    pub values: Vec<f64>,
}

impl SubadditiveTable {
    pub const MAX_ITEMS: usize = 10;

    pub fn key(&self, levels: &[usize], s: ItemSet) -> usize {
        let base = self.levels + 1;
        let mut key = 0;
        let mut w = 1;
        for j in 0..self.m {
            if s >> j & 1 == 1 {
                key += (1 + levels[j]) * w;
            }
            w *= base;
        }
        key
    }

    /// Builds a table from a bundle rule evaluated on every (bundle, levels) pair.
    pub fn from_fn(m: usize, levels: usize, f: impl Fn(&[usize], ItemSet) -> f64) -> Result<Self> {
        if m > Self::MAX_ITEMS {
            return Err(Error::InvalidValuation(format!("subadditive table over {m} > 10 items")));
        }
        let base = levels + 1;
        let size = base.pow(m as u32);
        let mut values = vec![0.0; size];
        for (key, slot) in values.iter_mut().enumerate() {
            let mut k = key;
            let mut s: ItemSet = 0;
            let mut lv = vec![0usize; m];
            for (j, l) in lv.iter_mut().enumerate() {
                let code = k % base;
                k /= base;
                if code > 0 {
                    s |= 1 << j;
                    *l = code - 1;
                }
            }
            *slot = f(&lv, s);
        }
        Ok(Self { m, levels, values })
    }

    pub fn value(&self, levels: &[usize], s: ItemSet) -> f64 {
        self.values[self.key(levels, s)]
    }

    /// Exhaustive monotonicity and subadditivity check over every level vector.
    pub fn validate(&self) -> Result<()> {
        let base = self.levels + 1;
        if self.values.len() != base.pow(self.m as u32) {
            return Err(Error::InvalidValuation("table size does not match (levels+1)^m".into()));
        }
        let full = full_set(self.m);
        let mut lv = vec![0usize; self.m];
        loop {
            for s in subsets_of(full) {
                let v = self.value(&lv, s);
                if !(v >= 0.0) || (s == 0 && v != 0.0) {
                    return Err(Error::InvalidValuation(format!("bad value {v} at set {s:#b}")));
                }
                for u in subsets_of(s) {
                    if self.value(&lv, u) > v + UTIL_TOL {
                        return Err(Error::InvalidValuation(format!("not monotone: {u:#b} within {s:#b}")));
                    }
                    let w = s & !u;
                    if v > self.value(&lv, u) + self.value(&lv, w) + UTIL_TOL {
                        return Err(Error::InvalidValuation(format!("not subadditive at {s:#b}")));
                    }
                }
            }
            let mut j = 0;
            loop {
                if j == self.m {
                    return Ok(());
                }
                lv[j] += 1;
                if lv[j] < self.levels {
                    break;
                }
                lv[j] = 0;
                j += 1;
            }
        }
    }
}

/// A valuation class shared by every bidder of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Valuation {
    Additive,
    UnitDemand,
    ConstrainedAdditive { feasibility: Feasibility },
    /// Max over `k` additive clauses; each item signal carries its `k` clause values.
    Xos { k: usize },
    SubadditiveTable { table: SubadditiveTable },
}

fn scalar(sig: &Signal) -> f64 {
    match sig {
        Signal::Value(v) => *v,
        other => other.value(),
    }
}

impl Valuation {
    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            Valuation::ConstrainedAdditive { feasibility } => {
                if let Feasibility::Sets { sets } = feasibility {
                    if sets.is_empty() {
                        return Err(Error::InvalidValuation("empty feasibility family".into()));
                    }
                    if sets.iter().flatten().any(|&j| j >= m) {
                        return Err(Error::InvalidValuation("feasible set names an item beyond m".into()));
                    }
                }
                if let Feasibility::PartitionMatroid { part, caps } = feasibility {
                    if part.len() != m || part.iter().any(|&b| b >= caps.len()) {
                        return Err(Error::InvalidValuation("partition descriptor does not cover the items".into()));
                    }
                }
                Ok(())
            }
            Valuation::Xos { k } if *k == 0 => Err(Error::InvalidValuation("XOS with zero clauses".into())),
            Valuation::SubadditiveTable { table } => {
                if table.m != m {
                    return Err(Error::InvalidValuation(format!("table over {} items, instance has {m}", table.m)));
                }
                table.validate()
            }
            _ => Ok(()),
        }
    }

    fn levels(row: &[Signal]) -> Vec<usize> {
        row.iter()
            .map(|s| match s {
                Signal::Index { index } => *index,
                other => other.value() as usize,
            })
            .collect()
    }

    /// v(t, S).
    pub fn value(&self, t: &[Signal], s: ItemSet) -> f64 {
        if s == 0 {
            return 0.0;
        }
        match self {
            Valuation::Additive => items_of(s).map(|j| scalar(&t[j])).sum(),
            Valuation::UnitDemand => items_of(s).map(|j| scalar(&t[j])).fold(0.0, f64::max),
            Valuation::ConstrainedAdditive { feasibility } => constrained_value(feasibility, t, s),
            Valuation::Xos { k } => {
                let mut best: f64 = 0.0;
                for c in 0..*k {
                    let sum: f64 = items_of(s).map(|j| clause(&t[j], c)).sum();
                    best = best.max(sum);
                }
                best
            }
            Valuation::SubadditiveTable { table } => table.value(&Self::levels(t), s),
        }
    }

    /// V(t_j) = v(t, {j}).
    pub fn single_item_value(&self, t: &[Signal], j: usize) -> f64 {
        self.value(t, 1 << j)
    }

    /// Single-item value as a function of the signal alone.
    pub fn signal_value(&self, sig: &Signal, j: usize, m: usize) -> f64 {
        match self {
            Valuation::Xos { .. } => match sig {
                Signal::Clauses(c) => c.iter().copied().fold(0.0, f64::max),
                other => other.value(),
            },
            Valuation::SubadditiveTable { table } => {
                let mut lv = vec![0usize; m];
                lv[j] = match sig {
                    Signal::Index { index } => *index,
                    other => other.value() as usize,
                };
                table.value(&lv, 1 << j)
            }
            Valuation::ConstrainedAdditive { feasibility } => {
                if feasibility.is_feasible(1 << j) {
                    scalar(sig)
                } else {
                    0.0
                }
            }
            _ => scalar(sig),
        }
    }

    /// Pushforward of a cell's distribution through V, as a scalar marginal.
    pub fn value_marginal(&self, cell: &crate::dist::Cell, j: usize, m: usize) -> Result<Marginal> {
        match cell {
            crate::dist::Cell::Scalar(mg) if !matches!(self, Valuation::ConstrainedAdditive { .. }) => Ok(mg.clone()),
            other => {
                let atoms = other
                    .enumerate()?
                    .into_iter()
                    .map(|(s, p)| (self.signal_value(&s, j, m), p))
                    .collect();
                Ok(Marginal::Discrete(Discrete::from_weighted(atoms)?))
            }
        }
    }

    /// Bundles the class can make use of; demand ranges over these only.
    /// Adding items a unit-demand or constrained bidder cannot use never raises
    /// utility, so the maximum utility is unchanged.
    fn usable(&self, s: ItemSet) -> bool {
        match self {
            Valuation::UnitDemand => s.count_ones() <= 1,
            Valuation::ConstrainedAdditive { feasibility } => feasibility.is_feasible(s),
            _ => true,
        }
    }

    /// Utility-maximizing bundle within `available` at the given prices.
    ///
    /// Ties go to the larger bundle, then to the lexicographically smallest
    /// sorted item list. Buying at zero margin is therefore preferred to
    /// abstaining.
    pub fn demand(&self, t: &[Signal], prices: &[f64], available: ItemSet) -> Result<ItemSet> {
        match self {
            Valuation::Additive => Ok(items_of(available)
                .filter(|&j| scalar(&t[j]) - prices[j] >= -UTIL_TOL)
                .fold(0, |s, j| s | 1 << j)),
            Valuation::UnitDemand => {
                let mut best: Option<(f64, usize)> = None;
                for j in items_of(available) {
                    let margin = scalar(&t[j]) - prices[j];
                    if margin >= -UTIL_TOL && best.map_or(true, |(b, _)| margin > b + UTIL_TOL) {
                        best = Some((margin, j));
                    }
                }
                Ok(best.map_or(0, |(_, j)| 1 << j))
            }
            Valuation::ConstrainedAdditive { feasibility } if feasibility.is_matroid_shortcut() => {
                let mut margins: Vec<(f64, usize)> = items_of(available)
                    .map(|j| (scalar(&t[j]) - prices[j], j))
                    .filter(|(mg, _)| *mg >= -UTIL_TOL)
                    .collect();
                // Margins within tolerance count as equal so index order decides.
                margins.sort_by(|a, b| {
                    if (a.0 - b.0).abs() <= UTIL_TOL {
                        a.1.cmp(&b.1)
                    } else {
                        b.0.total_cmp(&a.0)
                    }
                });
                let mut s: ItemSet = 0;
                for (_, j) in margins {
                    if feasibility.is_feasible(s | 1 << j) {
                        s |= 1 << j;
                    }
                }
                Ok(s)
            }
            _ => self.demand_exhaustive(t, prices, available),
        }
    }

    /// Brute-force demand over every usable subset of `available`.
    pub fn demand_exhaustive(&self, t: &[Signal], prices: &[f64], available: ItemSet) -> Result<ItemSet> {
        let count = available.count_ones() as usize;
        if count > MAX_EXHAUSTIVE_ITEMS {
            return Err(Error::DemandTooLarge(count));
        }
        let mut best = 0;
        let mut best_u = 0.0;
        for s in subsets_of(available) {
            if !self.usable(s) {
                continue;
            }
            let u = self.value(t, s) - items_of(s).map(|j| prices[j]).sum::<f64>();
            if u > best_u + UTIL_TOL || ((u - best_u).abs() <= UTIL_TOL && tie_prefers(s, best)) {
                best = s;
                best_u = u;
            }
        }
        Ok(best)
    }

    /// max over S' within S of v(t, S') - p(S').
    pub fn utility(&self, t: &[Signal], prices: &[f64], available: ItemSet) -> Result<f64> {
        let s = self.demand(t, prices, available)?;
        Ok(self.value(t, s) - items_of(s).map(|j| prices[j]).sum::<f64>())
    }

    /// Supporting prices of an XOS valuation: the maximizing clause's entries on S.
    pub fn supporting_prices(&self, t: &[Signal], s: ItemSet, m: usize) -> Result<Vec<f64>> {
        let mut theta = vec![0.0; m];
        match self {
            Valuation::Xos { k } => {
                let mut best = (f64::NEG_INFINITY, 0);
                for c in 0..*k {
                    let sum: f64 = items_of(s).map(|j| clause(&t[j], c)).sum();
                    if sum > best.0 {
                        best = (sum, c);
                    }
                }
                for j in items_of(s) {
                    theta[j] = clause(&t[j], best.1);
                }
                Ok(theta)
            }
            Valuation::Additive => {
                for j in items_of(s) {
                    theta[j] = scalar(&t[j]);
                }
                Ok(theta)
            }
            Valuation::UnitDemand => {
                let mut best: Option<(f64, usize)> = None;
                for j in items_of(s) {
                    let v = scalar(&t[j]);
                    if best.map_or(true, |(b, _)| v > b) {
                        best = Some((v, j));
                    }
                }
                if let Some((v, j)) = best {
                    theta[j] = v;
                }
                Ok(theta)
            }
            _ => Err(Error::Unsupported("supporting prices need an XOS valuation".into())),
        }
    }

    pub fn is_xos_like(&self) -> bool {
        matches!(self, Valuation::Xos { .. } | Valuation::Additive | Valuation::UnitDemand)
    }
}

fn clause(sig: &Signal, c: usize) -> f64 {
    match sig {
        Signal::Clauses(v) => v.get(c).copied().unwrap_or(0.0),
        // a scalar signal is a single clause
        other if c == 0 => other.value(),
        _ => 0.0,
    }
}

fn constrained_value(f: &Feasibility, t: &[Signal], s: ItemSet) -> f64 {
    match f {
        Feasibility::Cardinality { k } => {
            let mut vals: Vec<f64> = items_of(s).map(|j| scalar(&t[j])).collect();
            vals.sort_by(|a, b| b.total_cmp(a));
            vals.iter().take(*k).sum()
        }
        Feasibility::PartitionMatroid { part, caps } => {
            let mut by_part: Vec<Vec<f64>> = vec![Vec::new(); caps.len()];
            for j in items_of(s) {
                if let Some(&b) = part.get(j) {
                    if b < caps.len() {
                        by_part[b].push(scalar(&t[j]));
                    }
                }
            }
            by_part
                .iter_mut()
                .zip(caps)
                .map(|(v, &c)| {
                    v.sort_by(|a, b| b.total_cmp(a));
                    v.iter().take(c).sum::<f64>()
                })
                .sum()
        }
        Feasibility::Sets { sets } => sets
            .iter()
            .map(|l| items_of(s & set_of(l)).map(|j| scalar(&t[j])).sum::<f64>())
            .fold(0.0, f64::max),
    }
}

/// v'(t, S) = v(t, S within C(t)) where C(t) holds the items with V(t_j) below its threshold.
#[derive(Debug, Clone)]
pub struct CheapView<'a> {
    pub base: &'a Valuation,
    pub thresholds: Vec<f64>,
}

pub fn restrict_to_cheap_items<'a>(base: &'a Valuation, adjusted_thresholds: &[f64]) -> CheapView<'a> {
    CheapView {
        base,
        thresholds: adjusted_thresholds.to_vec(),
    }
}

impl CheapView<'_> {
    /// C(t) = { j : V(t_j) < threshold_j }.
    pub fn cheap_items(&self, t: &[Signal]) -> ItemSet {
        let m = self.thresholds.len();
        (0..m)
            .filter(|&j| self.base.signal_value(&t[j], j, m) < self.thresholds[j])
            .fold(0, |s, j| s | 1 << j)
    }

    pub fn value(&self, t: &[Signal], s: ItemSet) -> f64 {
        self.base.value(t, s & self.cheap_items(t))
    }

    /// Demand of v'; items outside C are priced at 2 v(t, [m]) so they are never bought.
    pub fn demand(&self, t: &[Signal], prices: &[f64], available: ItemSet) -> Result<ItemSet> {
        let m = self.thresholds.len();
        let c = self.cheap_items(t);
        let block = 2.0 * self.base.value(t, full_set(m)) + 1.0;
        let adjusted: Vec<f64> = (0..m).map(|j| if c >> j & 1 == 1 { prices[j] } else { block }).collect();
        self.base.demand(t, &adjusted, available)
    }

    /// Supporting prices of v': those of v on S within C, zero elsewhere.
    pub fn supporting_prices(&self, t: &[Signal], s: ItemSet) -> Result<Vec<f64>> {
        let m = self.thresholds.len();
        self.base.supporting_prices(t, s & self.cheap_items(t), m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vals(v: &[f64]) -> Vec<Signal> {
        v.iter().map(|&x| Signal::Value(x)).collect()
    }

    fn clauses(v: &[&[f64]]) -> Vec<Signal> {
        v.iter().map(|c| Signal::Clauses(c.to_vec())).collect()
    }

    #[test]
    fn value_examples() {
        let t = vals(&[1.0, 4.0]);
        assert_eq!(Valuation::UnitDemand.value(&t, 0b11), 4.0);
        assert_eq!(Valuation::Additive.value(&t, 0b11), 5.0);
        let x = clauses(&[&[3.0, 0.0], &[0.0, 3.0]]);
        assert_eq!(Valuation::Xos { k: 2 }.value(&x, 0b11), 3.0);
        assert_eq!(Valuation::Additive.value(&t, 0), 0.0);
    }

    #[test]
    fn single_item_examples() {
        assert_eq!(Valuation::Additive.single_item_value(&vals(&[2.0]), 0), 2.0);
        let x = clauses(&[&[3.0, 1.0]]);
        assert_eq!(Valuation::Xos { k: 2 }.single_item_value(&x, 0), 3.0);
        assert_eq!(Valuation::UnitDemand.single_item_value(&vals(&[0.0]), 0), 0.0);
    }

    #[test]
    fn demand_examples() {
        let t = vals(&[1.0, 4.0]);
        assert_eq!(Valuation::Additive.demand(&t, &[2.0, 3.0], 0b11).unwrap(), 0b10);
        assert_eq!(Valuation::Additive.demand(&t, &[9.0, 9.0], 0b11).unwrap(), 0);
        let t = vals(&[5.0, 5.0]);
        assert_eq!(Valuation::UnitDemand.demand(&t, &[1.0, 1.0], 0b11).unwrap(), 0b01);
        // zero margin is a purchase
        assert_eq!(Valuation::UnitDemand.demand(&vals(&[2.0]), &[2.0], 1).unwrap(), 1);
    }

    #[test]
    fn demand_guard() {
        let m = 17;
        let t = vec![Signal::Clauses(vec![1.0]); m];
        let r = Valuation::Xos { k: 1 }.demand(&t, &vec![0.5; m], full_set(m));
        assert_eq!(r, Err(Error::DemandTooLarge(17)));
        // structured classes are fine
        let t = vals(&vec![1.0; 20]);
        assert!(Valuation::Additive.demand(&t, &vec![0.5; 20], full_set(20)).is_ok());
    }

    #[test]
    fn supporting_price_examples() {
        let t = vals(&[1.0, 4.0]);
        let ud = Valuation::UnitDemand.supporting_prices(&t, 0b11, 2).unwrap();
        assert_eq!(ud, vec![0.0, 4.0]);
        let one = Valuation::Xos { k: 1 };
        let x = clauses(&[&[2.0], &[5.0]]);
        assert_eq!(one.supporting_prices(&x, 0b11, 2).unwrap(), vec![2.0, 5.0]);
        let tbl = SubadditiveTable::from_fn(1, 1, |_, _| 0.0).unwrap();
        let r = Valuation::SubadditiveTable { table: tbl }.supporting_prices(&[Signal::Index { index: 0 }], 1, 1);
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn cheap_view_examples() {
        let t = vals(&[1.0, 3.0]);
        let v = Valuation::Additive;
        assert_eq!(restrict_to_cheap_items(&v, &[2.0, 2.0]).value(&t, 0b11), 1.0);
        assert_eq!(restrict_to_cheap_items(&v, &[9.0, 9.0]).value(&t, 0b11), 4.0);
        assert_eq!(restrict_to_cheap_items(&v, &[1.0, 1.0]).value(&t, 0b11), 0.0);
        let view = restrict_to_cheap_items(&v, &[2.0, 2.0]);
        assert_eq!(view.demand(&t, &[0.0, 0.0], 0b11).unwrap(), 0b01);
    }

    #[test]
    fn invalid_constrained() {
        let v = Valuation::ConstrainedAdditive {
            feasibility: Feasibility::Sets { sets: vec![] },
        };
        assert!(v.validate(2).is_err());
    }

    #[test]
    fn table_validation() {
        let ok = SubadditiveTable::from_fn(3, 2, |lv, s| {
            items_of(s).map(|j| 0.6 * (1 + lv[j]) as f64).sum::<f64>().ceil()
        })
        .unwrap();
        ok.validate().unwrap();
        let bad = SubadditiveTable::from_fn(2, 1, |_, s| if s == 0b11 { 5.0 } else if s == 0 { 0.0 } else { 1.0 })
            .unwrap();
        assert!(bad.validate().is_err());
    }

    fn arb_valuation(m: usize) -> impl Strategy<Value = (Valuation, Vec<Signal>)> {
        let vals = prop::collection::vec(0u32..10, m * 3);
        (0usize..6, vals).prop_map(move |(kind, raw)| {
            let scalars: Vec<Signal> = raw[..m].iter().map(|&x| Signal::Value(x as f64 * 0.5)).collect();
            match kind {
                0 => (Valuation::Additive, scalars),
                1 => (Valuation::UnitDemand, scalars),
                2 => (
                    Valuation::ConstrainedAdditive {
                        feasibility: Feasibility::Cardinality { k: 2 },
                    },
                    scalars,
                ),
                3 => (
                    Valuation::ConstrainedAdditive {
                        feasibility: Feasibility::PartitionMatroid {
                            part: (0..m).map(|j| j % 2).collect(),
                            caps: vec![1, 2],
                        },
                    },
                    scalars,
                ),
                4 => (
                    Valuation::ConstrainedAdditive {
                        feasibility: Feasibility::Sets {
                            sets: vec![vec![0, 1], (1..m).collect()],
                        },
                    },
                    scalars,
                ),
                _ => (
                    Valuation::Xos { k: 3 },
                    (0..m)
                        .map(|j| Signal::Clauses(raw[j * 3..j * 3 + 3].iter().map(|&x| x as f64).collect()))
                        .collect(),
                ),
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn demand_matches_brute_force(
            (v, t) in arb_valuation(6),
            prices in prop::collection::vec(0u32..10, 6),
            avail in 0u64..64,
        ) {
            let p: Vec<f64> = prices.iter().map(|&x| x as f64 * 0.5).collect();
            let fast = v.demand(&t, &p, avail).unwrap();
            let slow = v.demand_exhaustive(&t, &p, avail).unwrap();
            prop_assert_eq!(fast, slow);
            // utility equals the max over all subsets, usable or not
            let u = v.value(&t, fast) - items_of(fast).map(|j| p[j]).sum::<f64>();
            let best = subsets_of(avail)
                .map(|s| v.value(&t, s) - items_of(s).map(|j| p[j]).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((u - best).abs() < 1e-9);
        }

        #[test]
        fn monotone_subadditive_no_externalities((v, t) in arb_valuation(5), (_, t2) in arb_valuation(5)) {
            let full = full_set(5);
            for s in subsets_of(full) {
                for u in subsets_of(s) {
                    prop_assert!(v.value(&t, u) <= v.value(&t, s) + 1e-12);
                    prop_assert!(v.value(&t, s) <= v.value(&t, u) + v.value(&t, s & !u) + 1e-12);
                }
                // changing signals outside S leaves v(t, S) unchanged
                if matches!(t2[0], Signal::Value(_)) == matches!(t[0], Signal::Value(_)) {
                    let mixed: Vec<Signal> = (0..5).map(|j| if s >> j & 1 == 1 { t[j].clone() } else { t2[j].clone() }).collect();
                    prop_assert_eq!(v.value(&t, s), v.value(&mixed, s));
                }
            }
        }

        #[test]
        fn supporting_prices_certify(raw in prop::collection::vec(0u32..10, 24), s in 1u64..256) {
            let v = Valuation::Xos { k: 3 };
            let t: Vec<Signal> = (0..8).map(|j| Signal::Clauses(raw[j*3..j*3+3].iter().map(|&x| x as f64).collect())).collect();
            let theta = v.supporting_prices(&t, s, 8).unwrap();
            let sum: f64 = items_of(s).map(|j| theta[j]).sum();
            prop_assert!((sum - v.value(&t, s)).abs() < 1e-9);
            for u in subsets_of(s) {
                prop_assert!(items_of(u).map(|j| theta[j]).sum::<f64>() <= v.value(&t, u) + 1e-9);
            }
        }

        #[test]
        fn cheap_view_supporting_prices_certify(
            raw in prop::collection::vec(0u32..10, 15),
            thr in prop::collection::vec(0u32..12, 5),
            s in 1u64..32,
        ) {
            let v = Valuation::Xos { k: 3 };
            let t: Vec<Signal> = (0..5).map(|j| Signal::Clauses(raw[j*3..j*3+3].iter().map(|&x| x as f64).collect())).collect();
            let thr: Vec<f64> = thr.iter().map(|&x| x as f64).collect();
            let view = restrict_to_cheap_items(&v, &thr);
            let theta = view.supporting_prices(&t, s).unwrap();
            let sum: f64 = items_of(s).map(|j| theta[j]).sum();
            prop_assert!((sum - view.value(&t, s)).abs() < 1e-9);
            for u in subsets_of(s) {
                prop_assert!(items_of(u).map(|j| theta[j]).sum::<f64>() <= view.value(&t, u) + 1e-9);
            }
        }
    }
}
