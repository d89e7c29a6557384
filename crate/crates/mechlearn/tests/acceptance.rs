//! Acceptance battery. Prints one PASS/FAIL line per criterion and exits nonzero on any failure.
//!
//! `cargo test -p mechlearn --test acceptance -- 7 11` runs criteria 7 and 11 only.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use mechlearn::converge::{
    dkw_tail, dkw_violation_frequency, event_prob_gap, grid_kolmogorov, is_single_intersecting, sample_bound_vc,
    surplus_event_check, ComplexityTable, GridEvent,
};
use mechlearn::curve::{ironed_virtuals, revenue_curve, RevenueCurve};
use mechlearn::dist::{self, kolmogorov_distance, Cell, Discrete, Family, Marginal, ProductPrior, Rng64, Signal};
use mechlearn::exante::{self, ProgramTag};
use mechlearn::learn::{
    balance_violations, beta_priced_rspm, epsilon_net, fee_rows, learn_symmetric_thresholds, learn_ud_maxmin,
    learn_xos_sample, maxmin_guarantee, median_sample_size, Source,
};
use mechlearn::mech::{self, expected_exact, expected_revenue_exact, FeeCache, FeeRule, Mechanism, Prices, VcgFee};
use mechlearn::oracle::{exact_core, opt_bic_lp, opt_posted_exhaustive, Guard};
use mechlearn::valuation::{full_set, restrict_to_cheap_items, subsets_of, Feasibility, Valuation};

const TOL: f64 = 1e-9;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(violations: usize, total: usize, extra: String) -> Verdict {
    Verdict {
        pass: violations == 0,
        detail: format!("{violations} violations / {total}; {extra}"),
    }
}

type Criterion = (usize, &'static str, Option<u64>, fn() -> Verdict);

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let all: [Criterion; 14] = [
        (1, "revenue curve vs envelope oracle", Some(5), c01_curve),
        (2, "ex-ante LP vs 1e-3 grid search", Some(30), c02_exante_grid),
        (3, "randomized SPM meets eta1*eta2 bound", Some(60), c03_spm_bound),
        (4, "unit-demand chain at eps = 0", Some(120), c04_ud_chain),
        (5, "max-min perturbation at eps = 0.01", None, c05_perturbation),
        (6, "OPT <= 6 SRev + 2 BRev", Some(120), c06_srev_brev),
        (7, "stable demand set TV <= 2 m xi", None, c07_stable_demand),
        (8, "SPEM revenue stability", None, c08_revenue_stability),
        (9, "single-intersecting events gap <= 2 xi l", None, c09_single_intersecting),
        (10, "DKW violation frequency", Some(60), c10_dkw),
        (11, "mu-balanced learned medians", None, c11_balanced_medians),
        (12, "best ASPE selection", None, c12_best_aspe),
        (13, "symmetric subadditive chain", Some(180), c13_symmetric_chain),
        (14, "VC sample-bound scaling", None, c14_vc_scaling),
    ];
    let mut failed = 0;
    for (id, name, limit, run) in all {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let took = start.elapsed();
        let in_time = limit.map_or(true, |s| took <= Duration::from_secs(s));
        let pass = v.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget = limit.map_or(String::new(), |s| format!(" / {s}s"));
        let late = if in_time { "" } else { " TIME LIMIT EXCEEDED" };
        println!(
            "{} {id:>2} {name}: {} [{:.2}s{budget}]{late}",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- fixtures

fn rng(seed: u64) -> Rng64 {
    dist::rng_from(seed)
}

/// `k` positive weights summing to 1; multiples of 1/denom when a grid is given.
fn weights(r: &mut Rng64, k: usize, denom: Option<u32>) -> Vec<f64> {
    match denom {
        Some(d) => {
            let mut cuts: Vec<u32> = (1..d).collect::<Vec<_>>();
            cuts.shuffle(r);
            let mut cuts = cuts[..k - 1].to_vec();
            cuts.sort_unstable();
            cuts.insert(0, 0);
            cuts.push(d);
            cuts.windows(2).map(|w| (w[1] - w[0]) as f64 / d as f64).collect()
        }
        None => {
            let w: Vec<f64> = (0..k).map(|_| r.gen_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            let mut p: Vec<f64> = w.iter().map(|x| x / s).collect();
            let head: f64 = p[..k - 1].iter().sum();
            p[k - 1] = 1.0 - head;
            p
        }
    }
}

/// `k` distinct ascending values drawn from {step, 2 step, ..., levels step}.
fn values(r: &mut Rng64, k: usize, levels: u32, step: f64) -> Vec<f64> {
    let mut pool: Vec<u32> = (1..=levels).collect();
    pool.shuffle(r);
    let mut v: Vec<f64> = pool[..k].iter().map(|&x| x as f64 * step).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn rand_marginal(r: &mut Rng64, max_support: usize, denom: Option<u32>) -> Marginal {
    let k = r.gen_range(1..=max_support);
    let v = values(r, k, 20, 0.5);
    Marginal::discrete(v, weights(r, k, denom)).unwrap()
}

fn rand_prior(r: &mut Rng64, n: usize, m: usize, max_support: usize) -> ProductPrior {
    let rows = (0..n).map(|_| (0..m).map(|_| rand_marginal(r, max_support, None)).collect()).collect();
    ProductPrior::from_marginals(rows).unwrap()
}

fn tiny_prior(r: &mut Rng64) -> ProductPrior {
    let n = r.gen_range(1..=2);
    let m = r.gen_range(1..=2);
    rand_prior(r, n, m, 3)
}

/// (1 - lam) d + lam x for a random discrete x; the Kolmogorov distance to d is at most lam.
fn perturb_mix(r: &mut Rng64, d: &Marginal, lam: f64) -> Marginal {
    let dd = d.as_discrete().unwrap();
    let x = rand_marginal(r, 3, None);
    let xd = x.as_discrete().unwrap();
    let mut atoms: Vec<(f64, f64)> = dd.support().iter().zip(dd.probs()).map(|(&v, &p)| (v, (1.0 - lam) * p)).collect();
    atoms.extend(xd.support().iter().zip(xd.probs()).map(|(&v, &p)| (v, lam * p)));
    Marginal::Discrete(Discrete::from_weighted(atoms).unwrap())
}

/// Moves at most `eps` mass between two adjacent atoms; the Kolmogorov distance is the moved mass.
fn perturb_shift(r: &mut Rng64, d: &Marginal, eps: f64) -> Marginal {
    let dd = d.as_discrete().unwrap();
    let s = dd.support().len();
    if s < 2 {
        return d.clone();
    }
    let mut p = dd.probs().to_vec();
    let k = r.gen_range(0..s - 1);
    let amount = r.gen_range(0.0..=eps);
    if r.gen_bool(0.5) {
        let a = amount.min(p[k]);
        p[k] -= a;
        p[k + 1] += a;
    } else {
        let a = amount.min(p[k + 1]);
        p[k + 1] -= a;
        p[k] += a;
    }
    Marginal::discrete(dd.support().to_vec(), p).unwrap()
}

fn map_prior(prior: &ProductPrior, mut f: impl FnMut(&Marginal) -> Marginal) -> ProductPrior {
    let rows = prior
        .marginals()
        .unwrap()
        .iter()
        .map(|row| row.iter().map(&mut f).collect())
        .collect();
    ProductPrior::from_marginals(rows).unwrap()
}

fn max_cell_distance(a: &ProductPrior, b: &ProductPrior) -> f64 {
    let (ma, mb) = (a.marginals().unwrap(), b.marginals().unwrap());
    ma.iter()
        .flatten()
        .zip(mb.iter().flatten())
        .map(|(x, y)| kolmogorov_distance(x, y))
        .fold(0.0, f64::max)
}

fn rand_constrained(r: &mut Rng64, m: usize) -> Valuation {
    match r.gen_range(0..5) {
        0 => Valuation::Additive,
        1 => Valuation::UnitDemand,
        2 => Valuation::ConstrainedAdditive {
            feasibility: Feasibility::Cardinality { k: r.gen_range(1..=m) },
        },
        3 => Valuation::ConstrainedAdditive {
            feasibility: Feasibility::PartitionMatroid {
                part: (0..m).map(|_| r.gen_range(0..2)).collect(),
                caps: vec![1, r.gen_range(1..=2)],
            },
        },
        _ => {
            let sets = (0..2)
                .map(|_| (0..m).filter(|_| r.gen_bool(0.5)).collect::<Vec<_>>())
                .collect();
            Valuation::ConstrainedAdditive {
                feasibility: Feasibility::Sets { sets },
            }
        }
    }
}

/// OPT of the BIC LP; an uncertified solve is a hard failure.
fn opt_lp(prior: &ProductPrior, val: &Valuation) -> f64 {
    let sol = opt_bic_lp(prior, val, &Guard::default()).unwrap();
    assert!(sol.certificate.ok(), "BIC LP certificate failed: {:?}", sol.certificate);
    sol.revenue
}

fn curves_of(prior: &ProductPrior) -> Vec<Vec<RevenueCurve>> {
    prior
        .marginals()
        .unwrap()
        .iter()
        .map(|r| r.iter().map(|d| revenue_curve(d).unwrap()).collect())
        .collect()
}

// ---------------------------------------------------------------- 1

/// Upper envelope of the points by brute force over all pairs bracketing q.
fn envelope_at(points: &[(f64, f64)], q: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for a in points {
        for b in points {
            if a.0 <= q && q <= b.0 {
                let v = if b.0 == a.0 {
                    a.1.max(b.1)
                } else {
                    a.1 + (b.1 - a.1) * (q - a.0) / (b.0 - a.0)
                };
                best = best.max(v);
            }
        }
    }
    best
}

fn c01_curve() -> Verdict {
    let mut r = rng(101);
    let (mut bad, mut worst) = (0, 0.0f64);
    for _ in 0..500 {
        let k = r.gen_range(1..=20);
        let mut v: Vec<f64> = (0..k).map(|_| r.gen_range(0.0..100.0)).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        let p = weights(&mut r, v.len(), None);
        let d = Marginal::discrete(v.clone(), p.clone()).unwrap();
        let curve = revenue_curve(&d).unwrap();
        let mut points = vec![(0.0, 0.0)];
        let mut tail = 0.0;
        for k in (0..v.len()).rev() {
            tail += p[k];
            points.push((tail, v[k] * tail));
        }
        let mut qs: Vec<f64> = points.iter().map(|x| x.0.min(1.0)).collect();
        qs.extend((0..20).map(|_| r.gen_range(0.0..1.0)));
        let err = qs
            .iter()
            .map(|&q| (curve.eval(q) - envelope_at(&points, q)).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
        if err > TOL {
            bad += 1;
        }
    }
    verdict(bad, 500, format!("max abs error {worst:.2e}"))
}

// ---------------------------------------------------------------- 2

const GRID: usize = 1000;
const HALF: usize = GRID / 2;

fn grid_values(c: &RevenueCurve) -> Vec<f64> {
    (0..=HALF).map(|u| c.eval(u as f64 / GRID as f64)).collect()
}

/// Best grid point of a single shared budget over the cells (line-shaped instances).
fn knapsack(cells: &[Vec<f64>]) -> f64 {
    let mut f = vec![0.0; HALF + 1];
    for r in cells {
        let mut g = vec![f64::NEG_INFINITY; HALF + 1];
        for u in 0..=HALF {
            for x in 0..=u {
                g[u] = g[u].max(f[u - x] + r[x]);
            }
        }
        f = g;
    }
    f[HALF]
}

fn prefix_max(r: &[f64]) -> Vec<f64> {
    let mut out = r.to_vec();
    for u in 1..out.len() {
        out[u] = out[u].max(out[u - 1]);
    }
    out
}

/// Exhaustive grid search over a 2x2 instance with all row and column sums at most 1/2.
fn grid_2x2(c: &[Vec<RevenueCurve>]) -> f64 {
    let (ra, rb, rc) = (grid_values(&c[0][0]), grid_values(&c[0][1]), grid_values(&c[1][0]));
    let pd = prefix_max(&grid_values(&c[1][1]));
    let mut best = f64::NEG_INFINITY;
    for a in 0..=HALF {
        for cc in 0..=HALF - a {
            for b in 0..=HALF - a {
                let d = (HALF - cc).min(HALF - b);
                best = best.max(ra[a] + rb[b] + rc[cc] + pd[d]);
            }
        }
    }
    best
}

fn c02_exante_grid() -> Verdict {
    let mut r = rng(202);
    let shapes = [(1, 1), (1, 2), (2, 1), (1, 3), (3, 1), (1, 4), (4, 1), (2, 2)];
    let (mut bad, mut total, mut worst) = (0, 0, 0.0f64);
    for &(n, m) in &shapes {
        for _ in 0..10 {
            let rows = (0..n)
                .map(|_| (0..m).map(|_| rand_marginal(&mut r, 4, Some(100))).collect())
                .collect();
            let prior = ProductPrior::from_marginals(rows).unwrap();
            let curves = curves_of(&prior);
            let lp = exante::solve_program(&curves, ProgramTag::Exact).unwrap().objective;
            let grid = if n == 2 && m == 2 {
                grid_2x2(&curves)
            } else {
                knapsack(&curves.iter().flatten().map(grid_values).collect::<Vec<_>>())
            };
            total += 1;
            let gap = lp - grid;
            worst = worst.max(gap.abs());
            if gap < -TOL || gap > 1e-3 {
                bad += 1;
            }
        }
    }
    verdict(bad, total, format!("max |LP - grid| {worst:.2e}"))
}

// ---------------------------------------------------------------- 3

fn c03_spm_bound() -> Verdict {
    let mut r = rng(303);
    let (mut bad, mut slack) = (0, f64::INFINITY);
    for _ in 0..200 {
        let n = r.gen_range(1..=2);
        let m = r.gen_range(1..=2);
        let prior = rand_prior(&mut r, n, m, 3);
        let curves = curves_of(&prior);
        let mut q: Vec<Vec<f64>> = curves
            .iter()
            .map(|row| row.iter().map(|c| r.gen_range(0.0..=c.max_q())).collect())
            .collect();
        let row_max = q.iter().map(|x| x.iter().sum::<f64>()).fold(0.0, f64::max);
        let col_max = (0..m).map(|j| q.iter().map(|x| x[j]).sum::<f64>()).fold(0.0, f64::max);
        let target = r.gen_range(0.2..0.95);
        let scale = (target / row_max.max(col_max).max(1e-12)).min(1.0);
        q.iter_mut().flatten().for_each(|x| *x *= scale);
        let lots: Vec<Vec<_>> = q
            .iter()
            .zip(&curves)
            .map(|(qr, cr)| qr.iter().zip(cr).map(|(&x, c)| c.lottery_at(x)).collect())
            .collect();
        let bound = exante::spm_bound(&lots);
        let mech = Mechanism::posted(Prices::Lotteries(lots), n, false);
        let rev = expected_revenue_exact(&mech, &Valuation::UnitDemand, &prior).unwrap();
        slack = slack.min(rev - bound.bound);
        if rev < bound.bound - TOL {
            bad += 1;
        }
    }
    verdict(bad, 200, format!("min revenue - bound {slack:.3e}"))
}

// ---------------------------------------------------------------- 4, 5

fn ud_instances() -> Vec<ProductPrior> {
    let mut r = rng(404);
    (0..50).map(|_| tiny_prior(&mut r)).collect()
}

fn c04_ud_chain() -> Verdict {
    let (mut bad, mut worst_spm, mut worst_cp) = (0, f64::INFINITY, f64::INFINITY);
    for prior in ud_instances() {
        let l = learn_ud_maxmin(&prior, 0.0).unwrap();
        let rev = expected_revenue_exact(l.mechanism(), &Valuation::UnitDemand, &prior).unwrap();
        let cp = l.record.params["cp_objective"];
        let opt = opt_lp(&prior, &Valuation::UnitDemand);
        worst_spm = worst_spm.min(rev - cp / 4.0);
        worst_cp = worst_cp.min(cp - opt / 8.0);
        if rev < cp / 4.0 - TOL || cp < opt / 8.0 - TOL {
            bad += 1;
        }
    }
    verdict(bad, 50, format!("min rev - CP/4 {worst_spm:.3e}, min CP - OPT/8 {worst_cp:.3e}"))
}

fn c05_perturbation() -> Verdict {
    let eps = 0.01;
    let mut r = rng(505);
    let (mut bad, mut slack, mut xi) = (0, f64::INFINITY, 0.0f64);
    for prior in ud_instances() {
        let hat = map_prior(&prior, |d| perturb_shift(&mut r, d, eps));
        let dist_k = max_cell_distance(&prior, &hat);
        xi = xi.max(dist_k);
        let l = learn_ud_maxmin(&hat, eps).unwrap();
        let rev = expected_revenue_exact(l.mechanism(), &Valuation::UnitDemand, &prior).unwrap();
        let opt = opt_lp(&prior, &Valuation::UnitDemand);
        let g = maxmin_guarantee(prior.n, prior.m, eps, opt, prior.value_bound());
        slack = slack.min(rev - g);
        if dist_k > eps + 1e-12 || rev < g - TOL {
            bad += 1;
        }
    }
    verdict(bad, 50, format!("max cell distance {xi:.4}, min revenue - guarantee {slack:.3e}"))
}

// ---------------------------------------------------------------- 6

fn c06_srev_brev() -> Verdict {
    let mut r = rng(606);
    let val = Valuation::Additive;
    let (mut bad, mut slack) = (0, f64::INFINITY);
    for _ in 0..50 {
        let prior = tiny_prior(&mut r);
        let opt = opt_lp(&prior, &val);
        let mut srev = 0.0;
        for j in 0..prior.m {
            let virtuals = (0..prior.n)
                .map(|i| ironed_virtuals(prior.marginal(i, j).unwrap()).unwrap())
                .collect();
            let mech = Mechanism::Myerson { item: j, virtuals };
            srev += expected_revenue_exact(&mech, &val, &prior).unwrap();
        }
        let vcg = Mechanism::VcgEntry {
            fee: VcgFee::Median { prior: prior.clone() },
        };
        let brev = expected_exact(&vcg, &val, &prior, mech::EXACT_BUDGET).unwrap().entry_fees;
        let rhs = 6.0 * srev + 2.0 * brev;
        slack = slack.min(rhs - opt);
        if opt > rhs + 1e-7 {
            bad += 1;
        }
    }
    verdict(bad, 50, format!("min (6 SRev + 2 BRev) - OPT {slack:.3e}"))
}

// ---------------------------------------------------------------- 7

fn c07_stable_demand() -> Verdict {
    let mut r = rng(707);
    let (mut bad, mut ratio) = (0, 0.0f64);
    for _ in 0..100 {
        let m = r.gen_range(1..=3);
        let val = rand_constrained(&mut r, m);
        let d: Vec<Marginal> = (0..m).map(|_| rand_marginal(&mut r, 4, None)).collect();
        let d_hat: Vec<Marginal> = if r.gen_bool(0.2) {
            (0..m).map(|_| rand_marginal(&mut r, 4, None)).collect()
        } else {
            let lam = r.gen_range(0.0..0.2);
            d.iter().map(|x| perturb_mix(&mut r, x, lam)).collect()
        };
        let xi = d.iter().zip(&d_hat).map(|(a, b)| kolmogorov_distance(a, b)).fold(0.0, f64::max);
        let prices: Vec<f64> = (0..m).map(|_| r.gen_range(0.0..8.0)).collect();
        let fee = if r.gen_bool(0.3) { 0.0 } else { r.gen_range(0.0..6.0) };
        let avail = r.gen_range(1..=full_set(m));
        let types = ProductPrior::from_marginals(vec![d]).unwrap().row_types(0).unwrap();
        let types_hat = ProductPrior::from_marginals(vec![d_hat]).unwrap().row_types(0).unwrap();
        let l = mech::purchase_distribution(&val, &types, &prices, fee, avail).unwrap();
        let lh = mech::purchase_distribution(&val, &types_hat, &prices, fee, avail).unwrap();
        let tv = mech::total_variation(&l, &lh);
        let cap = 2.0 * m as f64 * xi;
        if xi > 0.0 {
            ratio = ratio.max(tv / cap);
        }
        if tv > cap + TOL {
            bad += 1;
        }
    }
    verdict(bad, 100, format!("max TV / (2 m xi) {ratio:.3}"))
}

// ---------------------------------------------------------------- 8

fn rand_spem(r: &mut Rng64, n: usize, m: usize, h: f64) -> Mechanism {
    let prices = (0..n).map(|_| (0..m).map(|_| r.gen_range(0.0..h)).collect()).collect();
    let fees = if r.gen_bool(0.5) {
        FeeRule::Constant {
            fees: (0..n).map(|_| r.gen_range(0.0..h)).collect(),
        }
    } else {
        FeeRule::Table {
            entries: (0..n)
                .map(|_| {
                    subsets_of(full_set(m))
                        .filter(|&s| s != 0)
                        .map(|s| (s, r.gen_range(0.0..h)))
                        .collect()
                })
                .collect(),
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(r);
    Mechanism::EntryFee {
        prices,
        fees,
        order,
        anonymous: false,
    }
}

fn c08_revenue_stability() -> Verdict {
    let mut r = rng(808);
    let (mut bad, mut ratio) = (0, 0.0f64);
    for _ in 0..50 {
        let prior = tiny_prior(&mut r);
        let (n, m) = (prior.n, prior.m);
        let val = rand_constrained(&mut r, m);
        let lam = r.gen_range(0.0..0.1);
        let hat = map_prior(&prior, |d| perturb_mix(&mut r, d, lam));
        let xi = max_cell_distance(&prior, &hat);
        let h = prior.value_bound().max(hat.value_bound());
        let mech = rand_spem(&mut r, n, m, h);
        let rev = expected_revenue_exact(&mech, &val, &prior).unwrap();
        let rev_hat = expected_revenue_exact(&mech, &val, &hat).unwrap();
        let opt = opt_lp(&prior, &val);
        let cap = 2.0 * (n * m) as f64 * xi * (m as f64 * h + opt);
        let gap = (rev - rev_hat).abs();
        if cap > 0.0 {
            ratio = ratio.max(gap / cap);
        }
        if gap > cap + TOL {
            bad += 1;
        }
    }
    verdict(bad, 50, format!("max gap / bound {ratio:.3}"))
}

// ---------------------------------------------------------------- 9

fn rand_event(r: &mut Rng64, grids: &[Vec<f64>]) -> GridEvent {
    let l = grids.len();
    if r.gen_bool(0.3) {
        let prices: Vec<f64> = (0..l).map(|_| r.gen_range(0.0..5.0)).collect();
        return surplus_event_check(grids, &prices, r.gen_range(0.0..4.0)).unwrap();
    }
    // intersection of random halfspaces through random grid points: convex, hence single-intersecting
    let planes: Vec<(Vec<f64>, f64)> = (0..r.gen_range(1..=3))
        .map(|_| {
            let w: Vec<f64> = (0..l).map(|_| r.gen_range(-1.0..1.0)).collect();
            let x: Vec<f64> = grids.iter().map(|g| g[r.gen_range(0..g.len())]).collect();
            let c = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + r.gen_range(0.0..1.0);
            (w, c)
        })
        .collect();
    GridEvent::from_fn(grids.to_vec(), |x| {
        planes
            .iter()
            .all(|(w, c)| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() <= *c)
    })
    .unwrap()
}

fn c09_single_intersecting() -> Verdict {
    let mut r = rng(909);
    let (mut bad, mut ratio) = (0, 0.0f64);
    for _ in 0..200 {
        let l = r.gen_range(1..=4);
        let grids: Vec<Vec<f64>> = (0..l)
            .map(|_| {
                let k = r.gen_range(2..=5);
                values(&mut r, k, 10, 0.5)
            })
            .collect();
        let e = rand_event(&mut r, &grids);
        let d: Vec<Vec<f64>> = grids.iter().map(|g| weights(&mut r, g.len(), None)).collect();
        let d_hat: Vec<Vec<f64>> = d
            .iter()
            .map(|p| {
                let lam = r.gen_range(0.0..0.3);
                let x = weights(&mut r, p.len(), None);
                p.iter().zip(&x).map(|(a, b)| (1.0 - lam) * a + lam * b).collect()
            })
            .collect();
        let xi = d.iter().zip(&d_hat).map(|(a, b)| grid_kolmogorov(a, b)).fold(0.0, f64::max);
        let gap = event_prob_gap(&e, &d, &d_hat);
        let cap = 2.0 * xi * l as f64;
        if cap > 0.0 {
            ratio = ratio.max(gap / cap);
        }
        if !is_single_intersecting(&e) || gap > cap + TOL {
            bad += 1;
        }
    }
    let axis: Vec<f64> = (0..5).map(|k| k as f64).collect();
    let two_boxes = GridEvent::from_fn(vec![axis.clone(), axis], |x| (x[0] <= 1.0 || x[0] >= 3.0) && x[1] <= 1.0).unwrap();
    let rejected = !is_single_intersecting(&two_boxes);
    let mut v = verdict(bad, 200, format!("max gap / (2 xi l) {ratio:.3}, two-box rejected {rejected}"));
    v.pass &= rejected;
    v
}

// ---------------------------------------------------------------- 10

fn c10_dkw() -> Verdict {
    let (k, eps, trials) = (10_000, 0.05, 10_000);
    let u = Marginal::parametric(Family::Uniform { lo: 0.0, hi: 1.0 }).unwrap();
    let workers = 4;
    let per = trials / workers;
    let freqs: Vec<f64> = std::thread::scope(|s| {
        let hs: Vec<_> = (0..workers)
            .map(|w| {
                let u = &u;
                s.spawn(move || dkw_violation_frequency(u, k, eps, per, dist::derive_seed(1010, w as u64)).unwrap())
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let freq = freqs.iter().sum::<f64>() / workers as f64;
    let p = dkw_tail(k, eps).min(1.0);
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    let cap = p + 3.0 * sigma;
    Verdict {
        pass: freq <= cap,
        detail: format!("frequency {freq:.2e} <= {cap:.2e} over {trials} trials of K = {k}"),
    }
}

// ---------------------------------------------------------------- 11

fn c11_balanced_medians() -> Verdict {
    let (n, m, b, step, mu, eta) = (2, 2, 1.0, 0.25, 0.125, 0.1);
    // 80 equally likely values up to 4: every atom is small and prices stay below most of the mass
    let support: Vec<f64> = (1..=80).map(|k| k as f64 * 0.05).collect();
    let cell = Cell::Scalar(Marginal::discrete(support, vec![1.0 / 80.0; 80]).unwrap());
    let prior = ProductPrior::symmetric_rows(n, vec![cell; m]).unwrap();
    let net = epsilon_net(b, step, m).unwrap();
    let k = median_sample_size(eta, n, m, b, step, mu);
    let seeds = 100;
    let mut ok = 0;
    let mut worst = 0;
    for s in 0..seeds {
        let batch = dist::sample(&prior, dist::derive_seed(1111, s), k).unwrap();
        let rows = fee_rows(&batch, false);
        let (bad, _) = balance_violations(&prior, &Valuation::Additive, &net, &rows, mu).unwrap();
        worst = worst.max(bad);
        if bad == 0 {
            ok += 1;
        }
    }
    let frac = ok as f64 / seeds as f64;
    let sigma = (eta * (1.0 - eta) / seeds as f64).sqrt();
    let need = 1.0 - eta - 3.0 * sigma;
    Verdict {
        pass: frac >= need && net.size() <= 16.0,
        detail: format!(
            "{ok}/{seeds} seeds fully balanced ({frac:.2} >= {need:.2}); net {}, K = {k}, worst seed {worst} bad triples",
            net.size()
        ),
    }
}

// ---------------------------------------------------------------- 12

fn xos_prior(r: &mut Rng64, n: usize, m: usize) -> ProductPrior {
    let row: Vec<Cell> = (0..m)
        .map(|_| {
            let atoms: Vec<Signal> = (0..3)
                .map(|_| Signal::Clauses((0..2).map(|_| (r.gen_range(0..=8) as f64) * 0.125).collect()))
                .collect();
            Cell::atoms_checked(atoms, weights(r, 3, None)).unwrap()
        })
        .collect();
    ProductPrior::symmetric_rows(n, row).unwrap()
}

fn c12_best_aspe() -> Verdict {
    let (n, m, b, step, delta) = (2, 2, 2.0, 0.25, 0.01);
    let net = epsilon_net(b, step, m).unwrap();
    let mut r = rng(1212);
    let (mut bad, mut total, mut slack) = (0, 0, f64::INFINITY);
    for inst in 0..6 {
        let (prior, val) = if inst % 2 == 0 {
            let row: Vec<Cell> = (0..m)
                .map(|_| {
                    let v = values(&mut r, 3, 8, 0.125);
                    Cell::Scalar(Marginal::discrete(v, weights(&mut r, 3, None)).unwrap())
                })
                .collect();
            (ProductPrior::symmetric_rows(n, row).unwrap(), Valuation::Additive)
        } else {
            (xos_prior(&mut r, n, m), Valuation::Xos { k: 2 })
        };
        let fee_k = median_sample_size(delta, n, m, b, step, 0.125);
        let sel_k = 4000;
        let fee_batch = dist::sample(&prior, dist::derive_seed(1212, 2 * inst), fee_k).unwrap();
        let sel_batch = dist::sample(&prior, dist::derive_seed(1212, 2 * inst + 1), sel_k).unwrap();
        let (learned, audit) = learn_xos_sample(&val, &net, &fee_batch, &sel_batch, true).unwrap();
        let rows = fee_rows(&fee_batch, true);
        let (mut net_max, mut max_fee) = (f64::NEG_INFINITY, 0.0f64);
        for c in &audit.candidates {
            let mech = Mechanism::aspe(c.prices.clone(), FeeRule::MedianSamples { rows: rows.clone() }, n);
            net_max = net_max.max(expected_revenue_exact(&mech, &val, &prior).unwrap());
            let mut cache = FeeCache::new();
            if let Mechanism::EntryFee { fees, .. } = &mech {
                for i in 0..n {
                    for s in subsets_of(full_set(m)) {
                        max_fee = max_fee.max(cache.fee(fees, &val, &c.prices, i, s).unwrap());
                    }
                }
            }
        }
        let selected = expected_revenue_exact(learned.mechanism(), &val, &prior).unwrap();
        let r_max = m as f64 * b + n as f64 * max_fee;
        let eps_prime = ((2.0 * net.size() / delta).ln() / (2.0 * sel_k as f64)).sqrt();
        let floor = net_max - 2.0 * r_max * eps_prime;
        slack = slack.min(selected - floor);
        total += 1;
        if selected < floor - TOL || net.size() > 64.0 {
            bad += 1;
        }
    }
    verdict(bad, total, format!("net {}, min selected - floor {slack:.3e}", net.size()))
}

// ---------------------------------------------------------------- 13

/// Item value law with tails [1, ..., tau] on ascending values, tau in [lo, hi] and
/// any middle tail above `band_hi` so the top value is the only balanced threshold.
fn banded_values(r: &mut Rng64, k: usize, lo: f64, hi: f64, band_hi: f64) -> (Vec<f64>, Vec<f64>) {
    let v = values(r, k, 12, 0.5);
    let tau = r.gen_range(lo..=hi);
    let mut tails = vec![1.0];
    if k == 3 {
        tails.push(r.gen_range(band_hi + 0.02..0.95));
    }
    tails.push(tau);
    let probs = (0..k).map(|x| tails[x] - tails.get(x + 1).copied().unwrap_or(0.0)).collect();
    (v, probs)
}

fn symmetric_instance(r: &mut Rng64, n: usize, m: usize, class: usize) -> (ProductPrior, Valuation) {
    let z = n.max(m) as f64;
    let b = n as f64 / (3.0 * z);
    let (lo, band_hi) = (b / n as f64, b / (n as f64 - 1.0));
    // the Core bound needs the tails to sum to at most 1/2; for n = 2 the band alone allows more
    let hi = band_hi.min(1.0 / (2.0 * z));
    let k = if n * m >= 4 { 2 } else { r.gen_range(2..=3) };
    let row: Vec<Cell> = (0..m)
        .map(|_| {
            let (v, p) = banded_values(r, k, lo, hi, band_hi);
            if class == 3 {
                // XOS: the item's value is the larger clause entry
                let atoms = v
                    .iter()
                    .map(|&x| {
                        let other = r.gen_range(0.0..=x);
                        Signal::Clauses(if r.gen_bool(0.5) { vec![x, other] } else { vec![other, x] })
                    })
                    .collect();
                Cell::atoms_checked(atoms, p).unwrap()
            } else {
                Cell::Scalar(Marginal::discrete(v, p).unwrap())
            }
        })
        .collect();
    let val = match class {
        0 => Valuation::Additive,
        1 => Valuation::UnitDemand,
        2 => Valuation::ConstrainedAdditive {
            feasibility: Feasibility::Cardinality { k: 1.max(m - 1) },
        },
        _ => Valuation::Xos { k: 2 },
    };
    (ProductPrior::symmetric_rows(n, row).unwrap(), val)
}

fn c13_symmetric_chain() -> Verdict {
    let mut r = rng(1313);
    let shapes = [(2, 1), (2, 2), (3, 1), (2, 3), (3, 2)];
    let (mut bad, mut ca, mut worst) = (0, 0, [f64::INFINITY; 3]);
    for t in 0..30 {
        let (n, m) = shapes[t % shapes.len()];
        let class = (t / shapes.len()) % 4;
        let (prior, val) = symmetric_instance(&mut r, n, m, class);
        let z = n.max(m) as f64;
        let b = n as f64 / (3.0 * z);
        let th = learn_symmetric_thresholds(&prior, &val, b, 0.0, &Source::Exact).unwrap();
        let sum_beta: f64 = th.beta.iter().sum();
        let core = exact_core(&prior, &restrict_to_cheap_items(&val, &th.adjusted()), &Guard::default()).unwrap();
        let rspm = expected_revenue_exact(&beta_priced_rspm(&th, n), &val, &prior).unwrap();
        let floor = n as f64 / (9.0 * z) * sum_beta;
        worst[0] = worst[0].min(sum_beta - core);
        worst[1] = worst[1].min(rspm - floor);
        let mut ok = th.c == 0.0 && core <= sum_beta + TOL && rspm >= floor - TOL;
        if class < 3 {
            ca += 1;
            let opt = opt_lp(&prior, &val);
            let post = opt_posted_exhaustive(&prior, &val, true, &Guard::default()).unwrap().1;
            let factor = 24.0 + 36.0 * z / n as f64;
            worst[2] = worst[2].min(factor * post - opt);
            ok &= opt <= factor * post + 1e-7;
        }
        if !ok {
            bad += 1;
        }
    }
    verdict(
        bad,
        30,
        format!(
            "{ca} constrained-additive LP checks; min slacks: core {:.3e}, rspm {:.3e}, opt {:.3e}",
            worst[0], worst[1], worst[2]
        ),
    )
}

// ---------------------------------------------------------------- 14

fn c14_vc_scaling() -> Verdict {
    let (eps, delta) = (0.1, 0.05);
    let mut bad = 0;
    let mut rows = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for d in [2usize, 4, 8] {
        let rect = sample_bound_vc(&ComplexityTable::rectangles(d), eps, delta).unwrap();
        let conv = sample_bound_vc(&ComplexityTable::convex(d), eps, delta).unwrap();
        let (vr, vc) = (rect.v_max.unwrap(), conv.v_max.unwrap());
        let df = d as f64;
        if vr != 2.0 * df || vc != 2.0 * df * df {
            bad += 1;
        }
        if let Some((pr, pc)) = prev {
            if vr / pr != 2.0 || vc / pc != 4.0 {
                bad += 1;
            }
        }
        prev = Some((vr, vc));
        for pb in [&rect, &conv] {
            let k = pb.partition.len() as f64;
            let v = pb.v_max.unwrap();
            let expect = (v / (eps * eps)) * (k / eps).ln() + (k * k / (eps * eps)) * (k / delta).ln();
            if ((pb.bound - expect) / expect).abs() > 1e-12 {
                bad += 1;
            }
        }
        rows.push(format!("d={d}: V_max {vr} vs {vc}"));
    }
    verdict(bad, 3, rows.join(", "))
}
