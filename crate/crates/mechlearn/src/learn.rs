//! Learners: each turns sample access or an approximate prior into a mechanism
//! plus a record of the parameters it estimated.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::curve::{check_regular_curve, ironed_virtuals, revenue_curve, RevenueCurve};
use crate::dist::{self, Cell, Discrete, Marginal, Profile, ProductPrior, Row};
use crate::error::{Error, Result};
use crate::exante::{self, ProgramTag, DEFAULT_C};
use crate::mech::{self, FeeCache, FeeRule, Mechanism, Prices, VcgFee};
use crate::oracle::exact_welfare_allocation;
use crate::valuation::{full_set, restrict_to_cheap_items, subsets_of, Valuation};

/// Default sample count k of the order-statistic entry fee.
pub const DEFAULT_FEE_DRAWS: usize = 512;
/// Default balance tolerance of learned medians.
pub const DEFAULT_MU: f64 = 0.125;
/// Largest price net the learners will sweep.
pub const NET_BUDGET: f64 = 1e7;

/// Estimated parameters, guarantees and warnings of one learning run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnRecord {
    pub learner: String,
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub grids: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl LearnRecord {
    fn new(learner: &str) -> Self {
        LearnRecord {
            learner: learner.into(),
            ..Default::default()
        }
    }

    fn set(&mut self, k: &str, v: f64) {
        self.params.insert(k.into(), v);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learned {
    pub mechanisms: Vec<Mechanism>,
    pub record: LearnRecord,
}

impl Learned {
    pub fn mechanism(&self) -> &Mechanism {
        &self.mechanisms[0]
    }
}

fn curves_of(marginals: &[Vec<Marginal>]) -> Result<Vec<Vec<RevenueCurve>>> {
    marginals.iter().map(|r| r.iter().map(revenue_curve).collect()).collect()
}

/// Lower bound (1/4 - (n+m)eps)(opt/8 - 2 eps m n H) of the max-min learner.
pub fn maxmin_guarantee(n: usize, m: usize, eps: f64, opt: f64, h: f64) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    (0.25 - (nf + mf) * eps) * (opt / 8.0 - 2.0 * eps * mf * nf * h)
}

/// Randomized SPM for unit-demand bidders from an approximate prior within eps in Kolmogorov distance.
pub fn learn_ud_maxmin(prior_hat: &ProductPrior, eps: f64) -> Result<Learned> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps must lie in [0, 1], got {eps}")));
    }
    let (n, m) = (prior_hat.n, prior_hat.m);
    let curves = curves_of(&prior_hat.marginals()?)?;
    let tag = if eps == 0.0 { ProgramTag::Exact } else { ProgramTag::Approx { eps } };
    let sol = exante::solve_program(&curves, tag)?;
    let lots = exante::solution_to_lotteries(&sol, &curves);
    let bound = exante::spm_bound(&lots);
    let mut rec = LearnRecord::new("ud-maxmin");
    rec.set("eps", eps);
    rec.set("cp_objective", sol.objective);
    rec.set("factor", 0.25 - (n + m) as f64 * eps);
    rec.set("slack", 2.0 * eps * (m * n) as f64 * prior_hat.value_bound());
    rec.set("spm_bound", bound.bound);
    rec.grids.insert("q".into(), sol.q.clone());
    if (n + m) as f64 * eps >= 0.25 {
        rec.warnings.push("(n+m)eps >= 1/4: the revenue guarantee is vacuous".into());
    }
    if bound.vacuous {
        rec.warnings.push("eta1 or eta2 is not positive: the posted-price bound is vacuous".into());
    }
    let mech = Mechanism::Posted {
        prices: Prices::Lotteries(lots),
        order: (0..n).collect(),
        rationed: false,
        bound: Some(bound),
    };
    Ok(Learned {
        mechanisms: vec![mech],
        record: rec,
    })
}

/// Per-cell sample columns: samples[i][j] holds `count` draws of cell (i, j).
pub fn cell_samples(prior: &ProductPrior, count: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let mut rng = dist::rng_from(seed);
    let mut out = vec![vec![Vec::with_capacity(count); prior.m]; prior.n];
    for _ in 0..count {
        let p = prior.sample_one(&mut rng);
        for i in 0..prior.n {
            for j in 0..prior.m {
                out[i][j].push(p.scalar(i, j));
            }
        }
    }
    out
}

/// Unit-demand learner for regular marginals from per-cell samples.
pub fn learn_ud_regular(samples: &[Vec<Vec<f64>>], c: f64) -> Result<Learned> {
    let n = samples.len();
    let m = samples.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("no sample cells".into()));
    }
    let z = n.max(m) as f64;
    let (lo, hi) = (1.0 / (3.0 * c * z), 1.0 / (c * z));
    let mut rec = LearnRecord::new("ud-regular");
    rec.set("c", c);
    let mut h = vec![vec![0.0; m]; n];
    let mut marginals = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(m);
        for j in 0..m {
            let emp = dist::empirical(&samples[i][j])?;
            h[i][j] = match dist::tail_threshold(&emp, lo, hi) {
                Ok(x) => x,
                // the top atom alone carries more than the band: nothing to truncate
                Err(Error::InfeasibleBand { below: None, .. }) => emp.upper(),
                Err(e) => return Err(Error::InvalidArgument(format!("cell ({i},{j}): {e}"))),
            };
            let report = check_regular_curve(&emp, 64);
            if report.violated {
                rec.warnings
                    .push(format!("cell ({i},{j}) looks irregular (margin {:.3e})", report.worst_margin));
            }
            row.push(dist::truncate(&emp, h[i][j])?);
        }
        marginals.push(row);
    }
    let curves = curves_of(&marginals)?;
    // keep q at least the top breakpoint so every lottery price is at most H_ij;
    // a top atom heavier than 1/(CZ) is floored at 1/(CZ) to stay feasible
    let floors: Vec<Vec<f64>> = curves
        .iter()
        .map(|r| r.iter().map(|cv| cv.breakpoints.get(1).map_or(0.0, |b| b.q.min(hi))).collect())
        .collect();
    let tag = ProgramTag::Regular { c, eps: 0.0 };
    let (rc, cc) = tag.caps(n, m);
    let sol = exante::solve_with_floors(&curves, rc, cc, Some(&floors), tag)?;
    let lots = exante::solution_to_lotteries(&sol, &curves);
    let bound = exante::spm_bound(&lots);
    rec.set("cp_objective", sol.objective);
    rec.grids.insert("h".into(), h);
    rec.grids.insert("q".into(), sol.q.clone());
    Ok(Learned {
        mechanisms: vec![Mechanism::Posted {
            prices: Prices::Lotteries(lots),
            order: (0..n).collect(),
            rationed: false,
            bound: Some(bound),
        }],
        record: rec,
    })
}

pub fn learn_ud_regular_default(samples: &[Vec<Vec<f64>>]) -> Result<Learned> {
    learn_ud_regular(samples, DEFAULT_C)
}

/// Revenue of posting `prices` on one item to bidders in index order, averaged over sample profiles.
fn item_revenue_on(samples: &[Vec<f64>], prices: &[f64]) -> f64 {
    let count = samples[0].len();
    let mut total = 0.0;
    for s in 0..count {
        if let Some(i) = (0..samples.len()).find(|&i| samples[i][s] >= prices[i]) {
            total += prices[i];
        }
    }
    total / count as f64
}

/// Additive bidders with bounded values: one SPM with a virtual-value threshold per item,
/// plus VCG with a single-sample entry fee from the held-out profile.
pub fn learn_additive_bounded(profiles: &[Profile], held_out: Profile) -> Result<Learned> {
    if profiles.is_empty() {
        return Err(Error::InvalidArgument("no sample profiles".into()));
    }
    let n = profiles[0].n();
    let m = profiles[0].rows[0].len();
    let mut prices = vec![vec![0.0; m]; n];
    let mut rec = LearnRecord::new("additive-bounded");
    for j in 0..m {
        let cols: Vec<Vec<f64>> = (0..n).map(|i| profiles.iter().map(|p| p.scalar(i, j)).collect()).collect();
        let virtuals: Vec<_> = cols
            .iter()
            .map(|c| dist::empirical(c).and_then(|e| ironed_virtuals(&e)))
            .collect::<Result<_>>()?;
        let mut levels: Vec<f64> = virtuals.iter().flat_map(|v| v.phi.iter().copied()).filter(|&p| p > 0.0).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for &tau in &levels {
            let p: Vec<f64> = virtuals
                .iter()
                .map(|v| {
                    v.values
                        .iter()
                        .zip(&v.phi)
                        .find(|(_, &phi)| phi >= tau)
                        .map_or_else(|| v.values.last().unwrap() + 1.0, |(&x, _)| x)
                })
                .collect();
            let r = item_revenue_on(&cols, &p);
            if best.as_ref().map_or(true, |b| r > b.0) {
                best = Some((r, p));
            }
        }
        let (r, p) = best.unwrap_or_else(|| (0.0, cols.iter().map(|c| c.iter().copied().fold(0.0, f64::max) + 1.0).collect()));
        for i in 0..n {
            prices[i][j] = p[i];
        }
        rec.set(&format!("empirical_item_revenue_{j}"), r);
    }
    rec.grids.insert("prices".into(), prices.clone());
    Ok(Learned {
        mechanisms: vec![
            Mechanism::posted(Prices::Fixed(prices), n, false),
            Mechanism::VcgEntry {
                fee: VcgFee::SingleSample { sample: held_out },
            },
        ],
        record: rec,
    })
}

/// Additive bidders from an approximate prior: per-item max-min lotteries combined
/// into one SPM, plus VCG with the order-statistic entry fee computed from the prior.
pub fn learn_additive_maxmin(prior_hat: &ProductPrior, eps: f64, k: usize) -> Result<Learned> {
    let (n, m) = (prior_hat.n, prior_hat.m);
    let marginals = prior_hat.marginals()?;
    let mut lots = vec![Vec::with_capacity(m); n];
    let mut rec = LearnRecord::new("additive-maxmin");
    let mut total_cp = 0.0;
    for j in 0..m {
        let col: Vec<Vec<Marginal>> = marginals.iter().map(|r| vec![r[j].clone()]).collect();
        let one = learn_ud_maxmin(&ProductPrior::from_marginals(col)?, eps)?;
        total_cp += one.record.params["cp_objective"];
        if let Mechanism::Posted {
            prices: Prices::Lotteries(l),
            ..
        } = one.mechanism()
        {
            for i in 0..n {
                lots[i].push(l[i][0]);
            }
        }
    }
    rec.set("eps", eps);
    rec.set("k", k as f64);
    rec.set("cp_objective_sum", total_cp);
    if m as f64 * eps > 1.0 / 16.0 {
        rec.warnings.push("m eps > 1/16: the entry-fee guarantee is void".into());
    }
    if k < DEFAULT_FEE_DRAWS {
        rec.warnings.push(format!("k = {k} is below the configured minimum {DEFAULT_FEE_DRAWS}"));
    }
    let bound = exante::spm_bound(&lots);
    Ok(Learned {
        mechanisms: vec![
            Mechanism::Posted {
                prices: Prices::Lotteries(lots),
                order: (0..n).collect(),
                rationed: false,
                bound: Some(bound),
            },
            Mechanism::VcgEntry {
                fee: VcgFee::OrderStatistic {
                    prior: prior_hat.clone(),
                    k,
                },
            },
        ],
        record: rec,
    })
}

/// Price vectors whose entries are positive multiples of `step` no larger than `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonNet {
    pub b: f64,
    pub step: f64,
    pub m: usize,
}

impl EpsilonNet {
    pub fn levels(&self) -> usize {
        (self.b / self.step + 1e-9).floor() as usize
    }

    pub fn size(&self) -> f64 {
        (self.levels() as f64).powi(self.m as i32)
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let l = self.levels();
        let total = l.pow(self.m as u32);
        (0..total).map(move |mut code| {
            (0..self.m)
                .map(|_| {
                    let k = code % l;
                    code /= l;
                    (k + 1) as f64 * self.step
                })
                .collect()
        })
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.m
            && p.iter().all(|&x| {
                let r = x / self.step;
                x > 0.0 && x <= self.b + 1e-12 && (r - r.round()).abs() * self.step <= 1e-12
            })
    }
}

pub fn epsilon_net(b: f64, step: f64, m: usize) -> Result<EpsilonNet> {
    if !(step > 0.0 && b >= step) {
        return Err(Error::InvalidArgument(format!("net needs step > 0 and B >= step (B = {b}, step = {step})")));
    }
    let net = EpsilonNet { b, step, m };
    if net.size() > NET_BUDGET {
        return Err(Error::Budget {
            what: "price net; use a larger step".into(),
            needed: net.size(),
            budget: NET_BUDGET,
        });
    }
    Ok(net)
}

/// G = max over cells of the single-item value quantile at 1/(5 max(m, n)).
pub fn estimate_g(prior: &ProductPrior, val: &Valuation) -> Result<f64> {
    let z = prior.n.max(prior.m) as f64;
    let mut g: f64 = 0.0;
    for i in 0..prior.n {
        for j in 0..prior.m {
            g = g.max(val.value_marginal(&prior.cells[i][j], j, prior.m)?.quantile(1.0 / (5.0 * z)));
        }
    }
    Ok(g)
}

/// [`estimate_g`] from sample profiles.
pub fn estimate_g_samples(profiles: &[Profile], val: &Valuation) -> Result<f64> {
    let n = profiles[0].n();
    let m = profiles[0].rows[0].len();
    let z = n.max(m) as f64;
    let mut g: f64 = 0.0;
    for i in 0..n {
        for j in 0..m {
            let xs: Vec<f64> = profiles.iter().map(|p| val.signal_value(&p.rows[i][j], j, m)).collect();
            g = g.max(dist::empirical(&xs)?.quantile(1.0 / (5.0 * z)));
        }
    }
    Ok(g)
}

/// Fee rows per bidder drawn from `profiles`, shared when the prior is symmetric.
pub fn fee_rows(profiles: &[Profile], symmetric: bool) -> Vec<Vec<Row>> {
    let n = profiles[0].n();
    if symmetric {
        vec![profiles.iter().flat_map(|p| p.rows.iter().cloned()).collect()]
    } else {
        (0..n).map(|i| profiles.iter().map(|p| p.rows[i].clone()).collect()).collect()
    }
}

/// Fee batch size ceil((ln(1/eta) + ln n + m ln(B/step)) / mu^2).
pub fn median_sample_size(eta: f64, n: usize, m: usize, b: f64, step: f64, mu: f64) -> usize {
    (((1.0 / eta).ln() + (n as f64).ln() + m as f64 * (b / step).ln()) / (mu * mu)).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCandidate {
    pub prices: Vec<f64>,
    pub empirical_revenue: f64,
    pub max_fee: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XosAudit {
    pub candidates: Vec<NetCandidate>,
    pub selected: usize,
}

/// ASPE over a price net with empirical-median fees; the best on the selection batch wins.
pub fn learn_xos_sample(
    val: &Valuation,
    net: &EpsilonNet,
    fee_batch: &[Profile],
    selection_batch: &[Profile],
    symmetric: bool,
) -> Result<(Learned, XosAudit)> {
    if !val.is_xos_like() {
        return Err(Error::Unsupported("learn_xos_sample needs an XOS valuation".into()));
    }
    if fee_batch.is_empty() || selection_batch.is_empty() {
        return Err(Error::InvalidArgument("both sample batches must be non-empty".into()));
    }
    let n = fee_batch[0].n();
    let rows = fee_rows(fee_batch, symmetric);
    let mut candidates = Vec::new();
    let mut best: Option<(usize, f64, Mechanism)> = None;
    for p in net.iter() {
        let mech = Mechanism::aspe(p.clone(), FeeRule::MedianSamples { rows: rows.clone() }, n);
        let mut cache = FeeCache::new();
        let mut total = 0.0;
        for prof in selection_batch {
            total += mech::run_entry_fee(&mech, val, prof, &mut cache)?.revenue;
        }
        let r = total / selection_batch.len() as f64;
        let max_fee = cache.fees().fold(0.0, f64::max);
        if best.as_ref().map_or(true, |b| r > b.1) {
            best = Some((candidates.len(), r, mech));
        }
        candidates.push(NetCandidate {
            prices: p,
            empirical_revenue: r,
            max_fee,
        });
    }
    let (selected, r, mech) = best.expect("nets are never empty");
    let mut rec = LearnRecord::new("xos-sample");
    rec.set("b", net.b);
    rec.set("step", net.step);
    rec.set("fee_samples", fee_batch.len() as f64);
    rec.set("selection_samples", selection_batch.len() as f64);
    rec.set("empirical_revenue", r);
    Ok((
        Learned {
            mechanisms: vec![mech],
            record: rec,
        },
        XosAudit { candidates, selected },
    ))
}

/// Exact acceptance probability Pr_{t_i ~ D_i}[u_i(t_i, S) >= fee] at anonymous prices.
pub fn acceptance_prob(prior: &ProductPrior, val: &Valuation, i: usize, prices: &[f64], s: u64, fee: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (r, p) in prior.row_types(i)? {
        if val.utility(&r, prices, s)? >= fee - crate::valuation::UTIL_TOL {
            acc += p;
        }
    }
    Ok(acc)
}

/// Count of (prices, bidder, non-empty available set) triples whose learned median fee is
/// not mu-balanced under the true prior, and the number of triples checked.
/// The empty set is skipped: its utility is identically zero.
pub fn balance_violations(
    prior: &ProductPrior,
    val: &Valuation,
    net: &EpsilonNet,
    rows: &[Vec<Row>],
    mu: f64,
) -> Result<(usize, usize)> {
    let (mut bad, mut total) = (0, 0);
    let rule = FeeRule::MedianSamples { rows: rows.to_vec() };
    for p in net.iter() {
        let mut cache = FeeCache::new();
        for i in 0..prior.n {
            for s in subsets_of(full_set(prior.m)).filter(|&s| s != 0) {
                let fee = cache.fee(&rule, val, &p, i, s)?;
                let a = acceptance_prob(prior, val, i, &p, s, fee)?;
                total += 1;
                if a < 0.5 - mu || a > 0.5 + mu {
                    bad += 1;
                }
            }
        }
    }
    Ok((bad, total))
}

/// Balanced thresholds beta, shift c and the slack eta they were built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedThresholds {
    pub beta: Vec<f64>,
    pub b: f64,
    pub c: f64,
    pub eta: f64,
}

impl BalancedThresholds {
    /// beta_j + c, the thresholds defining the cheap items.
    pub fn adjusted(&self) -> Vec<f64> {
        self.beta.iter().map(|b| b + self.c).collect()
    }
}

/// Where threshold statistics come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source<'a> {
    Exact,
    Samples(&'a [Row]),
}

/// Single-item value distributions of a symmetric prior's row.
pub fn item_value_marginals(prior: &ProductPrior, val: &Valuation, src: &Source<'_>) -> Result<Vec<Marginal>> {
    let m = prior.m;
    (0..m)
        .map(|j| match src {
            Source::Exact => val.value_marginal(&prior.cells[0][j], j, m),
            Source::Samples(rows) => {
                let xs: Vec<f64> = rows.iter().map(|r| val.signal_value(&r[j], j, m)).collect();
                dist::empirical(&xs)
            }
        })
        .collect()
}

/// b-balanced thresholds for a symmetric prior, with the core shift c.
pub fn learn_symmetric_thresholds(
    prior: &ProductPrior,
    val: &Valuation,
    b: f64,
    eta: f64,
    src: &Source<'_>,
) -> Result<BalancedThresholds> {
    if !prior.symmetric {
        return Err(Error::InvalidArgument("thresholds need a symmetric prior".into()));
    }
    if !(b > 0.0 && b < 1.0) || !(0.0..=0.25).contains(&eta) {
        return Err(Error::InvalidArgument(format!("need b in (0,1) and eta in [0,1/4], got b = {b}, eta = {eta}")));
    }
    let n = prior.n as f64;
    if prior.n < 2 {
        return Err(Error::InvalidArgument("balanced thresholds need at least two bidders".into()));
    }
    let (lo, hi) = match src {
        Source::Exact => (b / n, b / (n - 1.0)),
        Source::Samples(_) => (b / n + b / (3.0 * n * n), b / (n - 1.0) - b / (3.0 * n * n)),
    };
    let marg = item_value_marginals(prior, val, src)?;
    let beta: Vec<f64> = marg
        .iter()
        .map(|d| dist::tail_threshold(d, lo, hi.min(1.0)))
        .collect::<Result<_>>()?;
    let c = core_shift(&marg, &beta, eta)?;
    Ok(BalancedThresholds { beta, b, c, eta })
}

/// 0 when the tail mass at beta is at most 1/2 - eta/2, else the smallest shift
/// whose tail mass lands in [1/2 - eta/2, 1/2 - eta/4].
pub fn core_shift(marg: &[Marginal], beta: &[f64], eta: f64) -> Result<f64> {
    let mass = |c: f64| -> f64 { marg.iter().zip(beta).map(|(d, b)| d.tail(b + c)).sum() };
    let (lo, hi) = (0.5 - eta / 2.0, 0.5 - eta / 4.0);
    if mass(0.0) <= lo + dist::NORM_TOL {
        return Ok(0.0);
    }
    let mut cands: Vec<f64> = marg
        .iter()
        .zip(beta)
        .flat_map(|(d, &b)| {
            d.as_discrete()
                .map(|dd| dd.support().iter().filter(|&&x| x > b).map(|&x| x - b).collect::<Vec<_>>())
                .unwrap_or_default()
        })
        .collect();
    cands.sort_by(f64::total_cmp);
    let mut below = None;
    for &c in &cands {
        let s = mass(c);
        if s <= hi + dist::NORM_TOL {
            if s >= lo - dist::NORM_TOL {
                return Ok(c);
            }
            below = Some(s);
            break;
        }
    }
    Err(Error::InfeasibleBand {
        lo,
        hi,
        below,
        above: Some(mass(0.0)),
    })
}

/// Prices Q_j = 1/2 E[sum_i 1[j in A_i] gamma_j], with A the welfare-maximizing allocation of v'.
pub fn learn_q_prices(
    prior: &ProductPrior,
    val: &Valuation,
    th: &BalancedThresholds,
    profiles: Option<&[Profile]>,
) -> Result<Vec<f64>> {
    if prior.m > 8 || prior.n > 6 {
        return Err(Error::Budget {
            what: "welfare maximization (m <= 8, n <= 6)".into(),
            needed: (prior.n.max(prior.m)) as f64,
            budget: 8.0,
        });
    }
    let view = restrict_to_cheap_items(val, &th.adjusted());
    let m = prior.m;
    let mut q = vec![0.0; m];
    let mut add = |p: &Profile, w: f64| -> Result<()> {
        let (alloc, _) = exact_welfare_allocation(p, |i, s| view.value(&p.rows[i], s), m)?;
        for (i, &s) in alloc.iter().enumerate() {
            let gamma = view.supporting_prices(&p.rows[i], s)?;
            for j in 0..m {
                q[j] += 0.5 * w * gamma[j];
            }
        }
        Ok(())
    };
    match profiles {
        Some(ps) => {
            let w = 1.0 / ps.len() as f64;
            for p in ps {
                add(p, w)?;
            }
        }
        None => {
            let mut err = None;
            prior.for_each_profile(mech::EXACT_BUDGET, |p, w| {
                if err.is_none() {
                    err = add(p, w).err();
                }
            })?;
            if let Some(e) = err {
                return Err(e);
            }
        }
    }
    Ok(q)
}

/// ASPE at prices Q with median fees shared by all bidders.
/// With sample profiles both Q and the fees are empirical; otherwise they are exact.
pub fn learn_symmetric_aspe(
    prior: &ProductPrior,
    val: &Valuation,
    th: &BalancedThresholds,
    samples: Option<(&[Profile], &[Profile])>,
) -> Result<Learned> {
    let q = learn_q_prices(prior, val, th, samples.map(|s| s.0))?;
    let fees = match samples {
        Some((_, fee_batch)) => FeeRule::MedianSamples {
            rows: fee_rows(fee_batch, true),
        },
        None => FeeRule::MedianExact {
            types: vec![prior.row_types(0)?],
        },
    };
    let mut rec = LearnRecord::new("sym-xos");
    rec.set("b", th.b);
    rec.set("c", th.c);
    rec.set("eta", th.eta);
    rec.grids.insert("q".into(), vec![q.clone()]);
    rec.grids.insert("beta".into(), vec![th.beta.clone()]);
    Ok(Learned {
        mechanisms: vec![Mechanism::aspe(q, fees, prior.n)],
        record: rec,
    })
}

/// Every fee the mechanism charges on `profiles` is at most m G.
pub fn fee_cap_audit(mech: &Mechanism, val: &Valuation, profiles: &[Profile], m: usize, g: f64) -> Result<(f64, bool)> {
    let mut cache = FeeCache::new();
    for p in profiles {
        mech::run_entry_fee(mech, val, p, &mut cache)?;
    }
    let worst = cache.fees().fold(0.0, f64::max);
    Ok((worst, worst <= m as f64 * g + 1e-9))
}

/// The unit-demand instance whose cell (i, j) is the law of V(t_ij).
pub fn induced_unit_demand(prior: &ProductPrior, val: &Valuation) -> Result<ProductPrior> {
    let cells: Vec<Vec<Cell>> = (0..prior.n)
        .map(|i| {
            (0..prior.m)
                .map(|j| val.value_marginal(&prior.cells[i][j], j, prior.m).map(Cell::Scalar))
                .collect()
        })
        .collect::<Result<_>>()?;
    ProductPrior::new(cells, prior.symmetric)
}

/// RSPM for the original instance from the max-min learner on the induced unit-demand instance.
pub fn learn_symmetric_subadditive(prior_hat: &ProductPrior, val: &Valuation, eps: f64) -> Result<Learned> {
    let induced = induced_unit_demand(prior_hat, val)?;
    let mut out = learn_ud_maxmin(&induced, eps)?;
    if let Mechanism::Posted { rationed, .. } = &mut out.mechanisms[0] {
        *rationed = true;
    }
    out.record.learner = "sym-subadditive".into();
    Ok(out)
}

/// RSPM posting beta_j to every bidder.
pub fn beta_priced_rspm(th: &BalancedThresholds, n: usize) -> Mechanism {
    Mechanism::posted(Prices::Fixed(vec![th.beta.clone(); n]), n, true)
}

/// Discrete marginal with the given tail mass at each support point, for fixtures.
pub fn from_tails(support: Vec<f64>, tails: &[f64]) -> Result<Marginal> {
    let probs = (0..tails.len())
        .map(|k| tails[k] - tails.get(k + 1).copied().unwrap_or(0.0))
        .collect();
    Ok(Marginal::Discrete(Discrete::new(support, probs)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mech::expected_revenue_exact;

    fn hh() -> Marginal {
        Marginal::discrete(vec![1.0, 2.0], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn maxmin_exact_chain() {
        let prior = ProductPrior::from_marginals(vec![vec![hh(), hh()], vec![hh(), hh()]]).unwrap();
        let l = learn_ud_maxmin(&prior, 0.0).unwrap();
        let r = expected_revenue_exact(l.mechanism(), &Valuation::UnitDemand, &prior).unwrap();
        assert!(r >= l.record.params["cp_objective"] / 4.0 - 1e-9);
        assert!(l.record.warnings.is_empty());
    }

    #[test]
    fn maxmin_zero_prior() {
        let prior = ProductPrior::from_marginals(vec![vec![Marginal::point(0.0)]]).unwrap();
        let l = learn_ud_maxmin(&prior, 0.0).unwrap();
        assert_eq!(expected_revenue_exact(l.mechanism(), &Valuation::UnitDemand, &prior).unwrap(), 0.0);
        assert_eq!(maxmin_guarantee(1, 1, 0.0, 0.0, 0.0), 0.0);
        let w = learn_ud_maxmin(&prior, 0.2).unwrap();
        assert!(!w.record.warnings.is_empty());
    }

    #[test]
    fn regular_prices_below_h() {
        let u = Marginal::parametric(dist::Family::Uniform { lo: 0.0, hi: 1.0 }).unwrap();
        let prior = ProductPrior::from_marginals(vec![vec![u.clone(), u.clone()], vec![u.clone(), u]]).unwrap();
        let s = cell_samples(&prior, 2000, 5);
        let l = learn_ud_regular(&s, DEFAULT_C).unwrap();
        let h = &l.record.grids["h"];
        let Mechanism::Posted {
            prices: Prices::Lotteries(lots),
            ..
        } = l.mechanism()
        else {
            panic!()
        };
        for i in 0..2 {
            for j in 0..2 {
                for (p, w) in lots[i][j].outcomes() {
                    assert!(w == 0.0 || p <= h[i][j] + 1e-12, "{p} > {}", h[i][j]);
                }
            }
        }
        assert_eq!(learn_ud_regular(&s, DEFAULT_C).unwrap(), l);
    }

    #[test]
    fn regular_point_masses() {
        let s = vec![vec![vec![3.0; 50]]];
        let l = learn_ud_regular(&s, DEFAULT_C).unwrap();
        let Mechanism::Posted {
            prices: Prices::Lotteries(lots),
            ..
        } = l.mechanism()
        else {
            panic!()
        };
        let sentinel = 4.0;
        assert!(lots[0][0].outcomes().iter().all(|&(p, _)| p == 3.0 || p == sentinel));
        assert!(lots[0][0].outcomes().iter().any(|&(p, _)| p == 3.0));
    }

    #[test]
    fn additive_bounded_single_bidder_is_monopoly() {
        let prior = ProductPrior::from_marginals(vec![vec![
            Marginal::discrete(vec![1.0, 2.0, 5.0], vec![0.5, 0.3, 0.2]).unwrap(),
        ]])
        .unwrap();
        let ps = dist::sample(&prior, 1, 400).unwrap();
        let l = learn_additive_bounded(&ps[1..], ps[0].clone()).unwrap();
        let Mechanism::Posted {
            prices: Prices::Fixed(p),
            ..
        } = l.mechanism()
        else {
            panic!()
        };
        let col: Vec<f64> = ps[1..].iter().map(|q| q.scalar(0, 0)).collect();
        let emp = dist::empirical(&col).unwrap();
        let best = [1.0, 2.0, 5.0].iter().map(|&x| x * emp.tail(x)).fold(0.0, f64::max);
        assert!((p[0][0] * emp.tail(p[0][0]) - best).abs() < 1e-12);
    }

    #[test]
    fn additive_bounded_point_mass() {
        let prior = ProductPrior::from_marginals(vec![vec![Marginal::point(2.0), Marginal::point(2.0)]; 2]).unwrap();
        let ps = dist::sample(&prior, 1, 10).unwrap();
        let l = learn_additive_bounded(&ps, ps[0].clone()).unwrap();
        let r = expected_revenue_exact(l.mechanism(), &Valuation::Additive, &prior).unwrap();
        assert_eq!(r, 4.0);
    }

    #[test]
    fn additive_maxmin_pair() {
        let prior = ProductPrior::from_marginals(vec![vec![hh(), hh()], vec![hh(), hh()]]).unwrap();
        let l = learn_additive_maxmin(&prior, 0.0, 512).unwrap();
        assert_eq!(l.mechanisms.len(), 2);
        assert_eq!(l.mechanisms[1].tag(), "vcg_entry");
        let r = expected_revenue_exact(&l.mechanisms[1], &Valuation::Additive, &prior).unwrap();
        assert!(r > 0.0);
    }

    #[test]
    fn net_examples() {
        let net = epsilon_net(1.0, 0.5, 2).unwrap();
        let all: Vec<Vec<f64>> = net.iter().collect();
        assert_eq!(all, vec![vec![0.5, 0.5], vec![1.0, 0.5], vec![0.5, 1.0], vec![1.0, 1.0]]);
        assert!(all.iter().all(|p| net.contains(p)));
        assert!(matches!(epsilon_net(100.0, 0.001, 4), Err(Error::Budget { .. })));
        let pm = ProductPrior::from_marginals(vec![vec![Marginal::point(3.0); 2]; 2]).unwrap();
        assert_eq!(estimate_g(&pm, &Valuation::Additive).unwrap(), 3.0);
    }

    #[test]
    fn xos_net_of_one_and_point_fees() {
        let pm = ProductPrior::from_marginals(vec![vec![Marginal::point(3.0)]; 2]).unwrap();
        let ps = dist::sample(&pm, 2, 20).unwrap();
        let net = epsilon_net(1.0, 1.0, 1).unwrap();
        let (l, audit) = learn_xos_sample(&Valuation::Additive, &net, &ps, &ps, true).unwrap();
        assert_eq!(audit.candidates.len(), 1);
        // the fee is the deterministic utility 2, accepted at equality: revenue 1 + 2
        let r = expected_revenue_exact(l.mechanism(), &Valuation::Additive, &pm).unwrap();
        assert_eq!(r, 3.0);
        assert_eq!(acceptance_prob(&pm, &Valuation::Additive, 0, &[1.0], 1, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn threshold_examples() {
        let v = Marginal::discrete(vec![1.0, 3.0], vec![0.6, 0.4]).unwrap();
        let prior = ProductPrior::from_marginals(vec![vec![v]; 2]).unwrap();
        let th = learn_symmetric_thresholds(&prior, &Valuation::Additive, 0.8, 0.1, &Source::Exact).unwrap();
        assert_eq!(th.beta, vec![3.0]);
        assert_eq!(th.c, 0.0);
        let pm = ProductPrior::from_marginals(vec![vec![Marginal::point(1.0)]; 2]).unwrap();
        assert!(matches!(
            learn_symmetric_thresholds(&pm, &Valuation::Additive, 0.8, 0.1, &Source::Exact),
            Err(Error::InfeasibleBand { .. })
        ));
    }

    #[test]
    fn core_shift_lands_in_band() {
        let v = from_tails(vec![1.0, 2.0, 3.0, 4.0], &[1.0, 0.45, 0.21, 0.1]).unwrap();
        let marg = vec![v.clone(), v];
        let c = core_shift(&marg, &[2.0, 2.0], 0.2).unwrap();
        let mass: f64 = marg.iter().map(|d| d.tail(2.0 + c)).sum();
        assert!((0.4..=0.45).contains(&mass), "{c} {mass}");
    }

    #[test]
    fn q_prices_example() {
        let v = Marginal::discrete(vec![1.0, 3.0], vec![0.5, 0.5]).unwrap();
        let prior = ProductPrior::from_marginals(vec![vec![v]]).unwrap();
        let th = BalancedThresholds {
            beta: vec![2.0],
            b: 0.5,
            c: 0.0,
            eta: 0.0,
        };
        let q = learn_q_prices(&prior, &Valuation::Additive, &th, None).unwrap();
        assert!((q[0] - 0.25).abs() < 1e-12);
        // no cheap items: Q vanishes and the fee is the upper median of v itself
        let low = BalancedThresholds { beta: vec![0.5], ..th };
        let l = learn_symmetric_aspe(&prior, &Valuation::Additive, &low, None).unwrap();
        assert_eq!(l.record.grids["q"], vec![vec![0.0]]);
        assert_eq!(expected_revenue_exact(l.mechanism(), &Valuation::Additive, &prior).unwrap(), 1.5);
    }

    #[test]
    fn q_sum_is_half_core_welfare() {
        let v = Marginal::discrete(vec![1.0, 2.0, 4.0], vec![0.3, 0.4, 0.3]).unwrap();
        let prior = ProductPrior::from_marginals(vec![vec![v.clone(), v.clone()]; 2]).unwrap();
        let th = BalancedThresholds {
            beta: vec![3.0, 3.0],
            b: 0.5,
            c: 0.0,
            eta: 0.0,
        };
        for val in [Valuation::Additive, Valuation::UnitDemand] {
            let q = learn_q_prices(&prior, &val, &th, None).unwrap();
            let core = crate::oracle::exact_core(
                &prior,
                &restrict_to_cheap_items(&val, &th.adjusted()),
                &crate::oracle::Guard::default(),
            )
            .unwrap();
            assert!((q.iter().sum::<f64>() - 0.5 * core).abs() < 1e-12);
        }
    }

    #[test]
    fn induced_reduction_matches() {
        let v = Marginal::discrete(vec![1.0, 2.0], vec![0.4, 0.6]).unwrap();
        let prior = ProductPrior::from_marginals(vec![vec![v.clone(), v]; 2]).unwrap();
        let ud = induced_unit_demand(&prior, &Valuation::UnitDemand).unwrap();
        assert_eq!(ud, prior);
        let l = learn_symmetric_subadditive(&prior, &Valuation::Additive, 0.0).unwrap();
        assert_eq!(l.mechanism().tag(), "rspm");
        let orig = expected_revenue_exact(l.mechanism(), &Valuation::Additive, &prior).unwrap();
        let Mechanism::Posted { prices, .. } = l.mechanism() else { panic!() };
        let spm = Mechanism::posted(prices.clone(), 2, false);
        let induced = expected_revenue_exact(&spm, &Valuation::UnitDemand, &ud).unwrap();
        assert!((orig - induced).abs() < 1e-12);
    }
}
