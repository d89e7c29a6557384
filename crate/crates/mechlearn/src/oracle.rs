//! Brute-force ground truth for tiny instances: the optimal BIC revenue LP,
//! exhaustive posted-price search, exact Core and exact welfare maximization.

use serde::{Deserialize, Serialize};

use crate::dist::{product_of, Profile, ProductPrior, Row, Signal};
use crate::error::{Error, Result};
use crate::lp::{self, Certificate, Cmp, Lp};
use crate::mech::{expected_exact, Mechanism, Prices};
use crate::valuation::{full_set, items_of, subsets_of, CheapView, ItemSet, Valuation, UTIL_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Guard {
    pub max_profiles: f64,
    pub max_patterns: usize,
}

impl Default for Guard {
    fn default() -> Self {
        Guard {
            max_profiles: 1e5,
            max_patterns: 10_000,
        }
    }
}

impl Guard {
    fn profiles(&self, prior: &ProductPrior) -> Result<f64> {
        let c = prior.profile_count()?;
        if c > self.max_profiles {
            return Err(Error::Budget {
                what: "type profiles".into(),
                needed: c,
                budget: self.max_profiles,
            });
        }
        Ok(c)
    }

    fn patterns(&self, count: f64) -> Result<()> {
        if count > self.max_patterns as f64 {
            return Err(Error::Budget {
                what: "allocation patterns".into(),
                needed: count,
                budget: self.max_patterns as f64,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicSolution {
    pub revenue: f64,
    pub certificate: Certificate,
    pub variables: usize,
    pub constraints: usize,
}

/// Item-to-bidder assignments (one set per bidder) that the class can use.
fn allocation_patterns(val: &Valuation, n: usize, m: usize, guard: &Guard) -> Result<Vec<Vec<ItemSet>>> {
    guard.patterns(((n + 1) as f64).powi(m as i32))?;
    let usable = |s: ItemSet| match val {
        Valuation::UnitDemand => s.count_ones() <= 1,
        Valuation::ConstrainedAdditive { feasibility } => feasibility.is_feasible(s),
        _ => true,
    };
    let mut out = Vec::new();
    let total = (n + 1).pow(m as u32);
    for code in 1..total {
        let mut sets = vec![0 as ItemSet; n];
        let mut c = code;
        for j in 0..m {
            let owner = c % (n + 1);
            c /= n + 1;
            if owner > 0 {
                sets[owner - 1] |= 1 << j;
            }
        }
        if sets.iter().all(|&s| usable(s)) {
            out.push(sets);
        }
    }
    Ok(out)
}

/// Optimal revenue of any BIC and interim IR mechanism, by an ex-post LP.
pub fn opt_bic_lp(prior: &ProductPrior, val: &Valuation, guard: &Guard) -> Result<BicSolution> {
    match val {
        Valuation::Additive | Valuation::UnitDemand | Valuation::ConstrainedAdditive { .. } => {}
        _ => return Err(Error::Unsupported("BIC LP supports additive, unit-demand and constrained-additive".into())),
    }
    guard.profiles(prior)?;
    let (n, m) = (prior.n, prior.m);
    let types: Vec<Vec<(Row, f64)>> = (0..n).map(|i| prior.row_types(i)).collect::<Result<_>>()?;
    let patterns = allocation_patterns(val, n, m, guard)?;
    let idx_lists: Vec<Vec<(usize, f64)>> = types
        .iter()
        .map(|t| t.iter().enumerate().map(|(k, (_, p))| (k, *p)).collect())
        .collect();
    let profiles = product_of(&idx_lists);
    let na = patterns.len();
    let x_var = |prof: usize, a: usize| prof * na + a;
    let pay_base = profiles.len() * na;
    let mut pay_off = Vec::with_capacity(n);
    let mut off = pay_base;
    for t in &types {
        pay_off.push(off);
        off += 2 * t.len();
    }
    let mut prog = Lp::new(off);
    for i in 0..n {
        for (k, (_, f)) in types[i].iter().enumerate() {
            prog.objective[pay_off[i] + 2 * k] = *f;
            prog.objective[pay_off[i] + 2 * k + 1] = -*f;
        }
    }
    for pr in 0..profiles.len() {
        prog.add_row((0..na).map(|a| (x_var(pr, a), 1.0)).collect(), Cmp::Le, 1.0);
    }
    // profiles grouped by (bidder, own type index) with the opponents' probability
    for i in 0..n {
        let ti = &types[i];
        let mut by_type: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ti.len()];
        for (pr, (idx, p)) in profiles.iter().enumerate() {
            let own = idx[i];
            by_type[own].push((pr, p / ti[own].1));
        }
        // interim utility of true type `a` reporting `b`, linear in (x, p+, p-)
        let interim = |a: usize, b: usize| -> Vec<(usize, f64)> {
            let mut row = Vec::new();
            for &(pr_b, w) in &by_type[b] {
                for (k, pat) in patterns.iter().enumerate() {
                    let v = val.value(&ti[a].0, pat[i]);
                    if v != 0.0 {
                        row.push((x_var(pr_b, k), w * v));
                    }
                }
            }
            row.push((pay_off[i] + 2 * b, -1.0));
            row.push((pay_off[i] + 2 * b + 1, 1.0));
            row
        };
        for a in 0..ti.len() {
            let truth = interim(a, a);
            prog.add_row(truth.clone(), Cmp::Ge, 0.0);
            for b in 0..ti.len() {
                if a == b {
                    continue;
                }
                let mut row = truth.clone();
                for (c, w) in interim(a, b) {
                    row.push((c, -w));
                }
                prog.add_row(row, Cmp::Ge, 0.0);
            }
        }
    }
    let sol = lp::solve(&prog)?;
    Ok(BicSolution {
        revenue: sol.objective,
        certificate: sol.certificate,
        variables: prog.num_vars,
        constraints: prog.rows.len(),
    })
}

/// Exact expected optimal welfare.
pub fn expected_max_welfare(prior: &ProductPrior, val: &Valuation, guard: &Guard) -> Result<f64> {
    guard.profiles(prior)?;
    let mut total = 0.0;
    let mut err = None;
    prior.for_each_profile(guard.max_profiles, |p, w| match exact_welfare_allocation(p, |i, s| val.value(&p.rows[i], s), prior.m) {
        Ok((_, v)) => total += w * v,
        Err(e) => err = Some(e),
    })?;
    err.map_or(Ok(total), Err)
}

/// Welfare-maximizing disjoint allocation; `value(i, S)` is bidder i's value for S.
/// Among optimal allocations the one found first in bidder order with each
/// bidder's bundle scanned from the largest submask down is returned.
pub fn exact_welfare_allocation(
    profile: &Profile,
    value: impl Fn(usize, ItemSet) -> f64,
    m: usize,
) -> Result<(Vec<ItemSet>, f64)> {
    let n = profile.n();
    if m > 12 || (n as f64) * 3f64.powi(m as i32) > 1e7 {
        return Err(Error::Budget {
            what: "welfare maximization".into(),
            needed: (n as f64) * 3f64.powi(m as i32),
            budget: 1e7,
        });
    }
    let size = 1usize << m;
    // best[i][mask]: max welfare of bidders i.. using items in mask
    let mut best = vec![vec![0.0f64; size]; n + 1];
    let mut choice = vec![vec![0 as ItemSet; size]; n];
    let values: Vec<Vec<f64>> = (0..n).map(|i| (0..size as u64).map(|s| value(i, s)).collect()).collect();
    for i in (0..n).rev() {
        for mask in 0..size as u64 {
            let mut b = f64::NEG_INFINITY;
            let mut c = 0;
            for s in subsets_of(mask) {
                let w = values[i][s as usize] + best[i + 1][(mask & !s) as usize];
                if w > b + UTIL_TOL {
                    b = w;
                    c = s;
                }
            }
            best[i][mask as usize] = b;
            choice[i][mask as usize] = c;
        }
    }
    let mut alloc = vec![0; n];
    let mut mask = full_set(m);
    for i in 0..n {
        alloc[i] = choice[i][mask as usize];
        mask &= !alloc[i];
    }
    Ok((alloc, best[0][full_set(m) as usize]))
}

/// E[max over allocations of sum_i v(t_i, S_i within C(t_i))].
pub fn exact_core(prior: &ProductPrior, view: &CheapView<'_>, guard: &Guard) -> Result<f64> {
    guard.profiles(prior)?;
    let mut total = 0.0;
    let mut err = None;
    prior.for_each_profile(guard.max_profiles, |p, w| {
        match exact_welfare_allocation(p, |i, s| view.value(&p.rows[i], s), prior.m) {
            Ok((_, v)) => total += w * v,
            Err(e) => err = Some(e),
        }
    })?;
    err.map_or(Ok(total), Err)
}

/// Candidate prices for cell (i, j): single-item values in the support plus a sentinel.
pub fn price_grid(prior: &ProductPrior, val: &Valuation, i: usize, j: usize) -> Result<Vec<f64>> {
    let mg = val.value_marginal(&prior.cells[i][j], j, prior.m)?;
    let d = mg
        .as_discrete()
        .ok_or_else(|| Error::NotDiscrete(format!("cell ({i},{j})")))?;
    let mut g = d.support().to_vec();
    g.push(mg.sentinel());
    Ok(g)
}

/// Best deterministic SPM or RSPM over per-cell support prices.
pub fn opt_posted_exhaustive(
    prior: &ProductPrior,
    val: &Valuation,
    rationed: bool,
    guard: &Guard,
) -> Result<(Mechanism, f64)> {
    guard.profiles(prior)?;
    let (n, m) = (prior.n, prior.m);
    let mut grids = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            grids.push(price_grid(prior, val, i, j)?.into_iter().map(|p| (p, 1.0)).collect::<Vec<_>>());
        }
    }
    let combos: f64 = grids.iter().map(|g| g.len() as f64).product();
    guard.patterns(combos)?;
    let mut best: Option<(Mechanism, f64)> = None;
    for (flat, _) in product_of(&grids) {
        let prices: Vec<Vec<f64>> = (0..n).map(|i| flat[i * m..(i + 1) * m].to_vec()).collect();
        let mech = Mechanism::posted(Prices::Fixed(prices), n, rationed);
        let r = expected_exact(&mech, val, prior, guard.max_profiles)?.revenue;
        if best.as_ref().map_or(true, |b| r > b.1 + UTIL_TOL) {
            best = Some((mech, r));
        }
    }
    Ok(best.expect("price grids are never empty"))
}

/// Scalar signal rows; the oracle tests use them as fixtures.
pub fn scalar_profile(rows: &[&[f64]]) -> Profile {
    Profile {
        rows: rows.iter().map(|r| r.iter().map(|&v| Signal::Value(v)).collect()).collect(),
    }
}

/// Sum of values of additive bidders' items, used as a sanity ceiling.
pub fn additive_welfare(profile: &Profile, alloc: &[ItemSet]) -> f64 {
    alloc
        .iter()
        .enumerate()
        .map(|(i, &s)| items_of(s).map(|j| profile.scalar(i, j)).sum::<f64>())
        .sum()
}
