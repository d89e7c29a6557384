//! Mechanism families, their execution semantics and exact or Monte Carlo revenue.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curve::{IronedVirtuals, Lottery};
use crate::dist::{self, Discrete, Marginal, Profile, ProductPrior, Rng64, Row, Signal};
use crate::error::{Error, Result};
use crate::exante::{PriceLotteryGrid, SpmBound};
use crate::valuation::{full_set, items_of, ItemSet, Valuation, UTIL_TOL};

/// Default cap on profiles x price draws for exact evaluation.
pub const EXACT_BUDGET: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum Prices {
    Fixed(Vec<Vec<f64>>),
    Lotteries(PriceLotteryGrid),
}

impl Prices {
    /// Every deterministic price grid with its probability.
    pub fn draws(&self) -> Vec<(Vec<Vec<f64>>, f64)> {
        match self {
            Prices::Fixed(p) => vec![(p.clone(), 1.0)],
            Prices::Lotteries(l) => {
                let n = l.len();
                let m = l.first().map_or(0, Vec::len);
                let cells: Vec<Vec<(f64, f64)>> = l.iter().flatten().map(Lottery::outcomes).collect();
                dist::product_of(&cells)
                    .into_iter()
                    .map(|(flat, w)| ((0..n).map(|i| flat[i * m..(i + 1) * m].to_vec()).collect(), w))
                    .collect()
            }
        }
    }

    pub fn draw_count(&self) -> f64 {
        match self {
            Prices::Fixed(_) => 1.0,
            Prices::Lotteries(l) => l.iter().flatten().map(|c| c.outcomes().len() as f64).product(),
        }
    }

    pub fn draw(&self, rng: &mut Rng64) -> Vec<Vec<f64>> {
        match self {
            Prices::Fixed(p) => p.clone(),
            Prices::Lotteries(l) => l
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|c| if rng.gen::<f64>() < c.x { c.p_lo } else { c.p_hi })
                        .collect()
                })
                .collect(),
        }
    }
}

/// How an entry-fee mechanism sets delta_i(S).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FeeRule {
    /// The same fee for every available set, per bidder.
    Constant { fees: Vec<f64> },
    /// Explicit (set, fee) entries per bidder; sets not listed cost nothing.
    Table { entries: Vec<Vec<(ItemSet, f64)>> },
    /// Upper median of the utility for S over stored sample rows.
    /// A single sample list is shared by all bidders.
    MedianSamples { rows: Vec<Vec<Row>> },
    /// Upper median of the utility for S under weighted type lists.
    /// A single list is shared by all bidders.
    MedianExact { types: Vec<Vec<(Row, f64)>> },
}

/// Entry fee source of VCG with entry fees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum VcgFee {
    /// Upper median of the bidder's surplus under its own marginals.
    Median { prior: ProductPrior },
    /// Surplus of one held-out sample row per bidder.
    SingleSample { sample: Profile },
    /// The ceil(5k/16)-th largest of k surplus draws from the given prior.
    OrderStatistic { prior: ProductPrior, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum Mechanism {
    /// Sequential posted prices; `rationed` limits every bidder to one item.
    Posted {
        prices: Prices,
        order: Vec<usize>,
        rationed: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bound: Option<SpmBound>,
    },
    /// Sequential posted prices with entry fees. Anonymous mechanisms share one price row.
    EntryFee {
        prices: Vec<Vec<f64>>,
        fees: FeeRule,
        order: Vec<usize>,
        anonymous: bool,
    },
    VcgEntry { fee: VcgFee },
    /// Single-item Myerson auction on item `item`.
    Myerson { item: usize, virtuals: Vec<IronedVirtuals> },
}

impl Mechanism {
    pub fn tag(&self) -> &'static str {
        match self {
            Mechanism::Posted { rationed: false, .. } => "spm",
            Mechanism::Posted { rationed: true, .. } => "rspm",
            Mechanism::EntryFee { anonymous: false, .. } => "spem",
            Mechanism::EntryFee { anonymous: true, .. } => "aspe",
            Mechanism::VcgEntry { .. } => "vcg_entry",
            Mechanism::Myerson { .. } => "myerson_item",
        }
    }

    pub fn posted(prices: Prices, n: usize, rationed: bool) -> Self {
        Mechanism::Posted {
            prices,
            order: (0..n).collect(),
            rationed,
            bound: None,
        }
    }

    /// ASPE with anonymous item prices and the given fee rule.
    pub fn aspe(prices: Vec<f64>, fees: FeeRule, n: usize) -> Self {
        Mechanism::EntryFee {
            prices: vec![prices; n],
            fees,
            order: (0..n).collect(),
            anonymous: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub allocation: Vec<ItemSet>,
    pub payments: Vec<f64>,
    /// Part of the payments that are entry fees.
    pub entry_fees: f64,
    pub revenue: f64,
}

impl Outcome {
    fn empty(n: usize) -> Self {
        Outcome {
            allocation: vec![0; n],
            payments: vec![0.0; n],
            entry_fees: 0.0,
            revenue: 0.0,
        }
    }

    fn finish(mut self) -> Self {
        self.revenue = self.payments.iter().sum();
        self
    }

    /// Disjoint allocations and non-negative payments.
    pub fn is_valid(&self) -> bool {
        let mut seen: ItemSet = 0;
        for &s in &self.allocation {
            if seen & s != 0 {
                return false;
            }
            seen |= s;
        }
        self.payments.iter().all(|p| *p >= -1e-12)
    }
}

/// The single item with the best non-negative margin V(t_j) - p_j; lowest index on ties.
pub fn rationed_choice(val: &Valuation, t: &[Signal], prices: &[f64], available: ItemSet) -> ItemSet {
    let m = prices.len();
    let mut best: Option<(f64, usize)> = None;
    for j in items_of(available) {
        let margin = val.signal_value(&t[j], j, m) - prices[j];
        if margin >= -UTIL_TOL && best.map_or(true, |(b, _)| margin > b + UTIL_TOL) {
            best = Some((margin, j));
        }
    }
    best.map_or(0, |(_, j)| 1 << j)
}

/// Sequential posted prices with a fixed price grid.
pub fn run_posted_prices(
    val: &Valuation,
    profile: &Profile,
    prices: &[Vec<f64>],
    order: &[usize],
    rationed: bool,
) -> Result<Outcome> {
    let n = profile.n();
    let m = prices.first().map_or(0, Vec::len);
    let mut available = full_set(m);
    let mut out = Outcome::empty(n);
    for &i in order {
        let t = &profile.rows[i];
        let s = if rationed {
            rationed_choice(val, t, &prices[i], available)
        } else {
            val.demand(t, &prices[i], available)?
        };
        out.allocation[i] = s;
        out.payments[i] = items_of(s).map(|j| prices[i][j]).sum();
        available &= !s;
    }
    Ok(out.finish())
}

/// Runs an SPM or RSPM; randomized prices are drawn once before the first bidder moves.
pub fn run_posted(mech: &Mechanism, val: &Valuation, profile: &Profile, rng: &mut Rng64) -> Result<Outcome> {
    match mech {
        Mechanism::Posted {
            prices,
            order,
            rationed,
            ..
        } => run_posted_prices(val, profile, &prices.draw(rng), order, *rationed),
        _ => Err(Error::InvalidArgument(format!("run_posted on a {} mechanism", mech.tag()))),
    }
}

/// Memo of delta_i(S) for one entry-fee mechanism.
#[derive(Debug, Default)]
pub struct FeeCache {
    map: HashMap<(usize, ItemSet), f64>,
}

impl FeeCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fee(&mut self, rule: &FeeRule, val: &Valuation, prices: &[f64], i: usize, s: ItemSet) -> Result<f64> {
        match rule {
            FeeRule::Constant { fees } => Ok(fees[i]),
            FeeRule::Table { entries } => Ok(entries[i].iter().find(|e| e.0 == s).map_or(0.0, |e| e.1)),
            FeeRule::MedianSamples { rows } => {
                let key = if rows.len() == 1 { 0 } else { i };
                if let Some(&f) = self.map.get(&(key, s)) {
                    return Ok(f);
                }
                let samples = rows.get(key).ok_or(Error::EmptyFeeRule)?;
                if samples.is_empty() {
                    return Err(Error::EmptyFeeRule);
                }
                let utils: Vec<f64> = samples
                    .iter()
                    .map(|r| val.utility(r, prices, s))
                    .collect::<Result<_>>()?;
                let f = dist::upper_median(&utils).unwrap();
                self.map.insert((key, s), f);
                Ok(f)
            }
            FeeRule::MedianExact { types } => {
                let key = if types.len() == 1 { 0 } else { i };
                if let Some(&f) = self.map.get(&(key, s)) {
                    return Ok(f);
                }
                let list = types.get(key).filter(|l| !l.is_empty()).ok_or(Error::EmptyFeeRule)?;
                let atoms = list
                    .iter()
                    .map(|(r, p)| Ok((val.utility(r, prices, s)?, *p)))
                    .collect::<Result<Vec<_>>>()?;
                let f = Marginal::Discrete(Discrete::from_weighted(atoms)?).quantile(0.5);
                self.map.insert((key, s), f);
                Ok(f)
            }
        }
    }

    pub fn fees(&self) -> impl Iterator<Item = f64> + '_ {
        self.map.values().copied()
    }
}

/// Sequential posted prices with entry fees; acceptance at u >= delta.
pub fn run_entry_fee(mech: &Mechanism, val: &Valuation, profile: &Profile, cache: &mut FeeCache) -> Result<Outcome> {
    let Mechanism::EntryFee {
        prices, fees, order, ..
    } = mech
    else {
        return Err(Error::InvalidArgument(format!("run_entry_fee on a {} mechanism", mech.tag())));
    };
    let n = profile.n();
    let m = prices.first().map_or(0, Vec::len);
    let mut available = full_set(m);
    let mut out = Outcome::empty(n);
    for &i in order {
        let t = &profile.rows[i];
        let p = &prices[i];
        let s = val.demand(t, p, available)?;
        let price = items_of(s).map(|j| p[j]).sum::<f64>();
        let u = val.value(t, s) - price;
        let delta = cache.fee(fees, val, p, i, available)?;
        if u >= delta - UTIL_TOL {
            out.allocation[i] = s;
            out.payments[i] = delta + price;
            out.entry_fees += delta;
            available &= !s;
        }
    }
    Ok(out.finish())
}

/// Purchase outcome distribution of one bidder facing (prices, fee, available):
/// `None` is rejection, `Some(S)` acceptance buying S.
pub fn purchase_distribution(
    val: &Valuation,
    row_types: &[(Row, f64)],
    prices: &[f64],
    fee: f64,
    available: ItemSet,
) -> Result<BTreeMap<Option<ItemSet>, f64>> {
    let mut out = BTreeMap::new();
    for (t, p) in row_types {
        let s = val.demand(t, prices, available)?;
        let u = val.value(t, s) - items_of(s).map(|j| prices[j]).sum::<f64>();
        let key = if u >= fee - UTIL_TOL { Some(s) } else { None };
        *out.entry(key).or_insert(0.0) += p;
    }
    Ok(out)
}

pub fn total_variation<K: Ord>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>) -> f64 {
    let mut tv = 0.0;
    for (k, pa) in a {
        tv += (pa - b.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, pb) in b {
        if !a.contains_key(k) {
            tv += pb;
        }
    }
    0.5 * tv
}

fn scalar_row(profile: &Profile, i: usize) -> Vec<f64> {
    profile.rows[i].iter().map(Signal::value).collect()
}

/// Second prices faced by bidder i: max over other bidders per item.
pub fn opponent_prices(profile: &Profile, i: usize) -> Vec<f64> {
    let m = profile.rows[0].len();
    (0..m)
        .map(|j| {
            (0..profile.n())
                .filter(|&k| k != i)
                .map(|k| profile.scalar(k, j))
                .fold(0.0, f64::max)
        })
        .collect()
}

pub fn surplus(t: &[f64], prices: &[f64]) -> f64 {
    t.iter().zip(prices).map(|(v, p)| (v - p).max(0.0)).sum()
}

/// Exact distribution of bidder i's surplus against `prices` under `prior`.
pub fn surplus_distribution(prior: &ProductPrior, i: usize, prices: &[f64]) -> Result<Discrete> {
    let atoms = prior
        .row_types(i)?
        .into_iter()
        .map(|(r, p)| {
            let t: Vec<f64> = r.iter().map(Signal::value).collect();
            (surplus(&t, prices), p)
        })
        .collect();
    Discrete::from_weighted(atoms)
}

/// Pr[Bin(k, p) >= r].
pub fn binomial_tail(k: usize, p: f64, r: usize) -> f64 {
    if r == 0 {
        return 1.0;
    }
    if r > k || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut log_c = 0.0; // ln C(k, s)
    let mut total = 0.0;
    for s in 0..=k {
        if s > 0 {
            log_c += ((k - s + 1) as f64).ln() - (s as f64).ln();
        }
        if s >= r {
            total += (log_c + s as f64 * lp + (k - s) as f64 * lq).exp();
        }
    }
    total.min(1.0)
}

/// Rank r = ceil(5k/16) used by the order-statistic fee.
pub fn order_stat_rank(k: usize) -> usize {
    (5 * k).div_ceil(16).max(1)
}

/// Distribution of the r-th largest of k iid draws of X.
pub fn order_statistic_distribution(x: &Discrete, k: usize, r: usize) -> Vec<(f64, f64)> {
    let s = x.support();
    let t = x.tails();
    let ge: Vec<f64> = t.iter().map(|&tail| binomial_tail(k, tail, r)).collect();
    (0..s.len())
        .map(|l| {
            let next = if l + 1 < s.len() { ge[l + 1] } else { 0.0 };
            (s[l], (ge[l] - next).max(0.0))
        })
        .filter(|a| a.1 > 0.0)
        .collect()
}

/// Cached VCG fee computations keyed by bidder and opponent prices.
#[derive(Debug, Default)]
pub struct VcgCache {
    dist: HashMap<(usize, Vec<u64>), Discrete>,
}

impl VcgCache {
    fn surplus_dist(&mut self, prior: &ProductPrior, i: usize, prices: &[f64]) -> Result<Discrete> {
        let key = (i, prices.iter().map(|p| p.to_bits()).collect());
        if let Some(d) = self.dist.get(&key) {
            return Ok(d.clone());
        }
        let d = surplus_distribution(prior, i, prices)?;
        self.dist.insert(key, d.clone());
        Ok(d)
    }

    /// Fee distribution of bidder i given opponent prices.
    pub fn fee_distribution(&mut self, fee: &VcgFee, profile: &Profile, i: usize) -> Result<Vec<(f64, f64)>> {
        let prices = opponent_prices(profile, i);
        match fee {
            VcgFee::Median { prior } => {
                let d = self.surplus_dist(prior, i, &prices)?;
                Ok(vec![(Marginal::Discrete(d).quantile(0.5), 1.0)])
            }
            VcgFee::SingleSample { sample } => Ok(vec![(surplus(&scalar_row(sample, i), &prices), 1.0)]),
            VcgFee::OrderStatistic { prior, k } => {
                let d = self.surplus_dist(prior, i, &prices)?;
                Ok(order_statistic_distribution(&d, *k, order_stat_rank(*k)))
            }
        }
    }
}

fn vcg_take(profile: &Profile, i: usize, prices: &[f64]) -> (ItemSet, f64) {
    let mut s: ItemSet = 0;
    let mut pay = 0.0;
    for (j, &p) in prices.iter().enumerate() {
        // zero-gain takes are not allowed, so only the strict maximum takes an item
        if profile.scalar(i, j) > p {
            s |= 1 << j;
            pay += p;
        }
    }
    (s, pay)
}

/// VCG with entry fees for additive bidders. Order-statistic fees draw k samples from `rng`.
pub fn run_vcg_entry(mech: &Mechanism, val: &Valuation, profile: &Profile, rng: &mut Rng64) -> Result<Outcome> {
    let Mechanism::VcgEntry { fee } = mech else {
        return Err(Error::InvalidArgument(format!("run_vcg_entry on a {} mechanism", mech.tag())));
    };
    if *val != Valuation::Additive {
        return Err(Error::Unsupported("VCG with entry fees needs additive bidders".into()));
    }
    let n = profile.n();
    let mut out = Outcome::empty(n);
    let mut cache = VcgCache::default();
    for i in 0..n {
        let prices = opponent_prices(profile, i);
        let s_i = surplus(&scalar_row(profile, i), &prices);
        let delta = match fee {
            VcgFee::OrderStatistic { prior, k } => {
                let draws: Vec<f64> = (0..*k)
                    .map(|_| {
                        let r = prior.sample_row(i, rng);
                        surplus(&r.iter().map(Signal::value).collect::<Vec<_>>(), &prices)
                    })
                    .collect();
                dist::order_statistic_desc(&draws, order_stat_rank(*k)).unwrap()
            }
            other => cache.fee_distribution(other, profile, i)?[0].0,
        };
        if s_i >= delta - UTIL_TOL {
            let (s, pay) = vcg_take(profile, i, &prices);
            out.allocation[i] = s;
            out.payments[i] = delta + pay;
            out.entry_fees += delta;
        }
    }
    Ok(out.finish())
}

/// Winner and threshold payment of a single-item Myerson auction.
pub fn run_myerson_item(virtuals: &[IronedVirtuals], bids: &[f64]) -> Option<(usize, f64)> {
    let phis: Vec<f64> = virtuals.iter().zip(bids).map(|(v, &b)| v.at(b)).collect();
    let wins = |i: usize, phi: f64| {
        phi > 0.0 && (0..phis.len()).all(|k| k == i || if k < i { phi > phis[k] } else { phi >= phis[k] })
    };
    let winner = (0..phis.len()).find(|&i| wins(i, phis[i]))?;
    let v = &virtuals[winner];
    let threshold = v
        .values
        .iter()
        .zip(&v.phi)
        .find(|(_, &phi)| wins(winner, phi))
        .map(|(&b, _)| b)
        .unwrap_or(bids[winner]);
    Some((winner, threshold))
}

fn run_myerson(item: usize, virtuals: &[IronedVirtuals], profile: &Profile) -> Outcome {
    let n = profile.n();
    let bids: Vec<f64> = (0..n).map(|i| profile.scalar(i, item)).collect();
    let mut out = Outcome::empty(n);
    if let Some((w, pay)) = run_myerson_item(virtuals, &bids) {
        out.allocation[w] = 1 << item;
        out.payments[w] = pay;
    }
    out.finish()
}

/// Runs any mechanism on one profile.
pub fn run(mech: &Mechanism, val: &Valuation, profile: &Profile, rng: &mut Rng64, cache: &mut FeeCache) -> Result<Outcome> {
    match mech {
        Mechanism::Posted { .. } => run_posted(mech, val, profile, rng),
        Mechanism::EntryFee { .. } => run_entry_fee(mech, val, profile, cache),
        Mechanism::VcgEntry { .. } => run_vcg_entry(mech, val, profile, rng),
        Mechanism::Myerson { item, virtuals } => Ok(run_myerson(*item, virtuals, profile)),
    }
}

/// Expected revenue and the entry-fee part of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    pub revenue: f64,
    pub entry_fees: f64,
}

/// Exact expectation by enumeration of profiles and price draws.
pub fn expected_exact(mech: &Mechanism, val: &Valuation, prior: &ProductPrior, budget: f64) -> Result<Expected> {
    let profiles = prior.profile_count()?;
    let draws = match mech {
        Mechanism::Posted { prices, .. } => prices.draw_count(),
        _ => 1.0,
    };
    if profiles * draws > budget {
        return Err(Error::Budget {
            what: "profiles x price draws; use Monte Carlo".into(),
            needed: profiles * draws,
            budget,
        });
    }
    let mut rev = 0.0;
    let mut fees = 0.0;
    let mut err: Option<Error> = None;
    match mech {
        Mechanism::Posted {
            prices,
            order,
            rationed,
            ..
        } => {
            for (grid, w) in prices.draws() {
                prior.for_each_profile(budget, |p, pp| {
                    if err.is_some() {
                        return;
                    }
                    match run_posted_prices(val, p, &grid, order, *rationed) {
                        Ok(o) => rev += w * pp * o.revenue,
                        Err(e) => err = Some(e),
                    }
                })?;
            }
        }
        Mechanism::EntryFee { .. } => {
            let mut cache = FeeCache::new();
            prior.for_each_profile(budget, |p, pp| {
                if err.is_some() {
                    return;
                }
                match run_entry_fee(mech, val, p, &mut cache) {
                    Ok(o) => {
                        rev += pp * o.revenue;
                        fees += pp * o.entry_fees;
                    }
                    Err(e) => err = Some(e),
                }
            })?;
        }
        Mechanism::VcgEntry { fee } => {
            if *val != Valuation::Additive {
                return Err(Error::Unsupported("VCG with entry fees needs additive bidders".into()));
            }
            let mut cache = VcgCache::default();
            prior.for_each_profile(budget, |p, pp| {
                if err.is_some() {
                    return;
                }
                for i in 0..p.n() {
                    let prices = opponent_prices(p, i);
                    let s_i = surplus(&scalar_row(p, i), &prices);
                    let (_, pay) = vcg_take(p, i, &prices);
                    match cache.fee_distribution(fee, p, i) {
                        Ok(fd) => {
                            for (delta, w) in fd {
                                if s_i >= delta - UTIL_TOL {
                                    rev += pp * w * (delta + pay);
                                    fees += pp * w * delta;
                                }
                            }
                        }
                        Err(e) => err = Some(e),
                    }
                }
            })?;
        }
        Mechanism::Myerson { item, virtuals } => {
            prior.for_each_profile(budget, |p, pp| {
                rev += pp * run_myerson(*item, virtuals, p).revenue;
            })?;
        }
    }
    match err {
        Some(e) => Err(e),
        None => Ok(Expected { revenue: rev, entry_fees: fees }),
    }
}

pub fn expected_revenue_exact(mech: &Mechanism, val: &Valuation, prior: &ProductPrior) -> Result<f64> {
    Ok(expected_exact(mech, val, prior, EXACT_BUDGET)?.revenue)
}

/// Seeded Monte Carlo estimate and its standard error.
pub fn expected_revenue_mc(
    mech: &Mechanism,
    val: &Valuation,
    prior: &ProductPrior,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::InvalidArgument("Monte Carlo needs at least one trial".into()));
    }
    let mut rng = dist::rng_from(seed);
    let mut cache = FeeCache::new();
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..trials {
        let p = prior.sample_one(&mut rng);
        let r = run(mech, val, &p, &mut rng, &mut cache)?.revenue;
        sum += r;
        sq += r * r;
    }
    let t = trials as f64;
    let mean = sum / t;
    let var = if trials > 1 { ((sq - t * mean * mean) / (t - 1.0)).max(0.0) } else { 0.0 };
    Ok((mean, (var / t).sqrt()))
}

/// Exact probability that bidder i (types from `prior`) accepts `fee` against `prices`.
pub fn vcg_acceptance_prob(prior: &ProductPrior, i: usize, prices: &[f64], fee: f64) -> Result<f64> {
    let d = Marginal::Discrete(surplus_distribution(prior, i, prices)?);
    Ok(d.tail(fee - UTIL_TOL))
}
