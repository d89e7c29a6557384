//! Invariant suites run against instance files, and report replay.
//!
//! A check that cannot run on an instance (wrong valuation class, enumeration
//! guard exceeded) is recorded as skipped with the reason, never as passed.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use mechlearn::converge::{self, ComplexityTable};
use mechlearn::curve;
use mechlearn::dist::{self, derive_seed, Marginal};
use mechlearn::exante::{self, ProgramTag};
use mechlearn::io::Instance;
use mechlearn::learn::{self, Source};
use mechlearn::mech::{self, FeeCache, Mechanism, Prices};
use mechlearn::oracle;
use mechlearn::valuation::Valuation;

use crate::args::{Global, Suite, VerifyArgs};
use crate::commands::{discrete_marginals, guard};
use crate::report::{self, load_instance, CliError, CliResult, Outcome, Report};

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub suite: Suite,
    pub instance: String,
    pub name: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

struct Ctx<'a> {
    inst: &'a Instance,
    label: String,
    g: &'a Global,
    seed: u64,
    trials: usize,
    checks: Vec<Check>,
}

impl Ctx<'_> {
    fn push(&mut self, suite: Suite, name: &str, status: Status, detail: String) {
        self.checks.push(Check {
            suite,
            instance: self.label.clone(),
            name: name.into(),
            status,
            detail,
        });
    }

    fn assert(&mut self, suite: Suite, name: &str, ok: bool, detail: String) {
        self.push(suite, name, if ok { Status::Pass } else { Status::Fail }, detail);
    }

    /// Records a library error: guard and applicability errors skip, anything else fails.
    fn error(&mut self, suite: Suite, name: &str, module: &str, e: mechlearn::Error) {
        use mechlearn::Error as E;
        let status = match e {
            E::Budget { .. } | E::Unsupported(_) | E::NotDiscrete(_) | E::DemandTooLarge(_) | E::InfeasibleBand { .. } => Status::Skip,
            _ => Status::Fail,
        };
        self.push(suite, name, status, format!("[{module}] {e}"));
    }

    fn skip(&mut self, suite: Suite, name: &str, why: &str) {
        self.push(suite, name, Status::Skip, why.into());
    }
}

fn curve_suite(cx: &mut Ctx<'_>) {
    let s = Suite::Curve;
    let marg = match discrete_marginals(cx.inst) {
        Ok((m, _)) => m,
        Err(e) => return cx.error(s, "revenue curves", "dist", e),
    };
    let (mut concave, mut dominates, mut vertices, mut lotteries) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for mg in marg.iter().flatten() {
        let cv = match curve::revenue_curve(mg) {
            Ok(c) => c,
            Err(e) => return cx.error(s, "revenue curves", "curve", e),
        };
        concave = cv.slopes().windows(2).map(|w| w[1] - w[0]).fold(concave, f64::max);
        let d = mg.as_discrete().expect("discretized");
        for &v in d.support() {
            let t = mg.tail(v);
            dominates = dominates.max(v * t - cv.eval(t));
        }
        for b in cv.breakpoints.iter().filter(|b| b.q > 0.0) {
            vertices = vertices.max((b.r - b.price * b.q).abs()).max((mg.tail(b.price) - b.q).abs());
        }
        for k in 0..=10 {
            let q = cv.max_q() * k as f64 / 10.0;
            let l = cv.lottery_at(q);
            lotteries = lotteries.max((l.sale_prob() - q).abs()).max((l.revenue() - cv.eval(q)).abs());
        }
    }
    cx.assert(s, "concave envelope", concave <= TOL, format!("largest slope increase {concave:.3e}"));
    cx.assert(s, "envelope dominates price points", dominates <= TOL, format!("largest shortfall {dominates:.3e}"));
    cx.assert(s, "vertices are posted prices", vertices <= TOL, format!("largest mismatch {vertices:.3e}"));
    cx.assert(s, "lottery attains the curve", lotteries <= TOL, format!("largest mismatch {lotteries:.3e}"));
}

fn exante_suite(cx: &mut Ctx<'_>) {
    let s = Suite::Exante;
    let cv: Vec<Vec<_>> = match discrete_marginals(cx.inst).and_then(|(m, _)| m.iter().map(|r| r.iter().map(curve::revenue_curve).collect()).collect()) {
        Ok(c) => c,
        Err(e) => return cx.error(s, "ex-ante program", "curve", e),
    };
    let sol = match exante::solve_program(&cv, ProgramTag::Exact) {
        Ok(x) => x,
        Err(e) => return cx.error(s, "ex-ante program", "exante", e),
    };
    let worst = sol.row_sums().into_iter().chain(sol.col_sums()).fold(0.0, f64::max);
    cx.assert(s, "caps respected", worst <= 0.5 + 1e-7, format!("largest row/column sum {worst:.9}"));
    cx.assert(s, "duality gap", sol.gap <= 1e-7 * (1.0 + sol.objective.abs()), format!("gap {:.3e}", sol.gap));
    let lots = exante::solution_to_lotteries(&sol, &cv);
    let bound = exante::spm_bound(&lots);
    cx.assert(
        s,
        "posted bound below objective",
        bound.bound <= sol.objective + TOL,
        format!("bound {:.6} vs objective {:.6}", bound.bound, sol.objective),
    );
    if cx.inst.valuation != Valuation::UnitDemand {
        return cx.skip(s, "lottery SPM meets its bound", "needs unit-demand bidders");
    }
    let spm = Mechanism::Posted {
        prices: Prices::Lotteries(lots),
        order: (0..cx.inst.prior.n).collect(),
        rationed: false,
        bound: Some(bound),
    };
    match mech::expected_exact(&spm, &cx.inst.valuation, &cx.inst.prior, cx.g.guard_profiles) {
        Ok(e) => cx.assert(
            s,
            "lottery SPM meets its bound",
            e.revenue >= bound.bound - TOL,
            format!("revenue {:.6} vs bound {:.6}", e.revenue, bound.bound),
        ),
        Err(e) => cx.error(s, "lottery SPM meets its bound", "mech", e),
    }
}

/// Posted prices at each cell's monopoly price.
fn monopoly_spm(inst: &Instance) -> mechlearn::Result<Mechanism> {
    let (marg, _) = discrete_marginals(inst)?;
    let prices = marg
        .iter()
        .map(|r| r.iter().map(|mg| curve::revenue_curve(mg).map(|c| c.argmax().price)).collect())
        .collect::<mechlearn::Result<Vec<Vec<f64>>>>()?;
    Ok(Mechanism::posted(Prices::Fixed(prices), inst.prior.n, false))
}

fn mech_suite(cx: &mut Ctx<'_>) {
    let s = Suite::Mech;
    let (inst, val) = (cx.inst, &cx.inst.valuation);
    let spm = match monopoly_spm(inst) {
        Ok(m) => m,
        Err(e) => return cx.error(s, "monopoly-price SPM", "curve", e),
    };
    let mut rng = dist::rng_from(derive_seed(cx.seed, 1));
    let mut cache = FeeCache::new();
    let mut invalid = 0;
    for _ in 0..200 {
        let p = inst.prior.sample_one(&mut rng);
        match mech::run(&spm, val, &p, &mut rng, &mut cache) {
            Ok(o) if o.is_valid() => {}
            Ok(_) => invalid += 1,
            Err(e) => return cx.error(s, "outcomes feasible", "mech", e),
        }
    }
    cx.assert(s, "outcomes feasible", invalid == 0, format!("{invalid} of 200 outcomes over-allocate or pay negative"));
    let exact = match mech::expected_exact(&spm, val, &inst.prior, cx.g.guard_profiles) {
        Ok(e) => e.revenue,
        Err(e) => return cx.error(s, "exact matches Monte Carlo", "mech", e),
    };
    match mech::expected_revenue_mc(&spm, val, &inst.prior, cx.trials, derive_seed(cx.seed, 2)) {
        Ok((mean, se)) => cx.assert(
            s,
            "exact matches Monte Carlo",
            (mean - exact).abs() <= 5.0 * se + TOL,
            format!("exact {exact:.6}, Monte Carlo {mean:.6} +- {se:.6}"),
        ),
        Err(e) => cx.error(s, "exact matches Monte Carlo", "mech", e),
    }
    match oracle::expected_max_welfare(&inst.prior, val, &guard(cx.g)) {
        Ok(w) => cx.assert(s, "revenue below welfare", exact <= w + TOL, format!("revenue {exact:.6}, welfare {w:.6}")),
        Err(e) => cx.error(s, "revenue below welfare", "oracle", e),
    }
}

fn oracle_suite(cx: &mut Ctx<'_>) {
    let s = Suite::Oracle;
    let (prior, val, gd) = (&cx.inst.prior, &cx.inst.valuation, guard(cx.g));
    let bic = match oracle::opt_bic_lp(prior, val, &gd) {
        Ok(b) => b,
        Err(e) => return cx.error(s, "BIC benchmark", "oracle", e),
    };
    cx.assert(s, "BIC certificate", bic.certificate.ok(), format!("{:?}", bic.certificate));
    match oracle::opt_posted_exhaustive(prior, val, false, &gd) {
        Ok((_, post)) => cx.assert(
            s,
            "posted prices below BIC",
            post <= bic.revenue + 1e-6,
            format!("posted {post:.6}, BIC {:.6}", bic.revenue),
        ),
        Err(e) => cx.error(s, "posted prices below BIC", "oracle", e),
    }
    match oracle::expected_max_welfare(prior, val, &gd) {
        Ok(w) => cx.assert(s, "BIC below welfare", bic.revenue <= w + 1e-6, format!("BIC {:.6}, welfare {w:.6}", bic.revenue)),
        Err(e) => cx.error(s, "BIC below welfare", "oracle", e),
    }
}

fn learn_suite(cx: &mut Ctx<'_>) {
    let s = Suite::Learn;
    let (prior, val) = (&cx.inst.prior, &cx.inst.valuation);
    if *val == Valuation::UnitDemand {
        match learn::learn_ud_maxmin(prior, 0.0).and_then(|l| {
            let b = l.record.params["spm_bound"];
            mech::expected_exact(l.mechanism(), val, prior, cx.g.guard_profiles).map(|e| (e.revenue, b))
        }) {
            Ok((rev, b)) => cx.assert(s, "max-min SPM meets its bound", rev >= b - TOL, format!("revenue {rev:.6}, bound {b:.6}")),
            Err(e) => cx.error(s, "max-min SPM meets its bound", "learn", e),
        }
    } else {
        cx.skip(s, "max-min SPM meets its bound", "needs unit-demand bidders");
    }
    if !prior.symmetric || prior.n < 2 {
        cx.skip(s, "balanced thresholds", "needs a symmetric instance with n >= 2");
        return cx.skip(s, "entry fees at most mG", "needs a symmetric instance with n >= 2");
    }
    let b = (prior.n as f64 / (3.0 * prior.n.max(prior.m) as f64)).min(0.99);
    let th = match learn::learn_symmetric_thresholds(prior, val, b, 0.1, &Source::Exact) {
        Ok(t) => t,
        Err(e) => {
            cx.error(s, "balanced thresholds", "learn", e.clone());
            return cx.error(s, "entry fees at most mG", "learn", e);
        }
    };
    let n = prior.n as f64;
    let worst = match learn::item_value_marginals(prior, val, &Source::Exact) {
        Ok(m) => m
            .iter()
            .zip(&th.beta)
            .map(|(d, &beta)| {
                let t = d.tail(beta);
                (b / n - t).max(t - b / (n - 1.0)).max(0.0)
            })
            .fold(0.0, f64::max),
        Err(e) => return cx.error(s, "balanced thresholds", "learn", e),
    };
    cx.assert(s, "balanced thresholds", worst <= 1e-9, format!("b = {b:.4}, largest band violation {worst:.3e}"));
    if !val.is_xos_like() {
        return cx.skip(s, "entry fees at most mG", "needs an XOS-like valuation");
    }
    let res = learn::learn_symmetric_aspe(prior, val, &th, None).and_then(|l| {
        let g = learn::estimate_g(prior, val)?;
        let profiles = dist::sample(prior, derive_seed(cx.seed, 3), 200)?;
        learn::fee_cap_audit(l.mechanism(), val, &profiles, prior.m, g).map(|r| (r, g))
    });
    match res {
        Ok(((worst, ok), g)) => cx.assert(s, "entry fees at most mG", ok, format!("largest fee {worst:.6}, mG = {:.6}", prior.m as f64 * g)),
        Err(e) => cx.error(s, "entry fees at most mG", "learn", e),
    }
}

fn converge_suite(cx: &mut Ctx<'_>) {
    let s = Suite::Converge;
    let d: Marginal = match cx.inst.valuation.value_marginal(&cx.inst.prior.cells[0][0], 0, cx.inst.prior.m) {
        Ok(d) => d,
        Err(e) => return cx.error(s, "DKW frequency", "dist", e),
    };
    let (k, eps, trials) = (200, 0.1, 300);
    match converge::dkw_violation_frequency(&d, k, eps, trials, derive_seed(cx.seed, 4)) {
        Ok(f) => {
            let p = converge::dkw_tail(k, eps);
            let limit = p + 3.0 * (p * (1.0 - p) / trials as f64).sqrt();
            cx.assert(s, "DKW frequency", f <= limit, format!("{f:.4} of {trials} trials vs limit {limit:.4}"));
        }
        Err(e) => cx.error(s, "DKW frequency", "converge", e),
    }
    let dim = cx.inst.prior.m.clamp(1, 4);
    let (fine, coarse) = (
        converge::sample_bound_partition(&ComplexityTable::rectangles(dim), 0.1, 0.05),
        converge::sample_bound_partition(&ComplexityTable::convex(dim), 0.1, 0.05),
    );
    match (fine, coarse) {
        (Ok(f), Ok(c)) => cx.assert(
            s,
            "richer tables never raise the bound",
            f.bound <= c.bound,
            format!("all boxes {:.1} vs singletons {:.1} (d = {dim})", f.bound, c.bound),
        ),
        (Err(e), _) | (_, Err(e)) => cx.error(s, "richer tables never raise the bound", "converge", e),
    }
}

fn replay(path: &Path) -> CliResult<Outcome> {
    let text = report::read_text(path)?;
    let old: Report = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a report: {e}", path.display())))?;
    let started = Instant::now();
    let fresh = report::run(&old.config)?;
    let new = report::build_report(&old.config, &fresh, started);
    let (a, b) = (old.reproducible_part(), new.reproducible_part());
    let differing: Vec<String> = a
        .as_object()
        .unwrap()
        .iter()
        .filter(|(k, v)| b.get(k.as_str()) != Some(v))
        .map(|(k, _)| k.clone())
        .collect();
    let identical = differing.is_empty();
    let mut out = Outcome::new(json!({
        "replayed": path.display().to_string(),
        "command": old.command,
        "identical": identical,
        "differing_fields": differing,
    }))
    .line(format!(
        "replayed {} from {}: {}",
        old.command,
        path.display(),
        if identical { "identical".to_string() } else { format!("differs in {differing:?}") }
    ));
    out.passed = identical;
    Ok(out)
}

pub fn cmd_verify(a: &VerifyArgs, g: &Global) -> CliResult<Outcome> {
    if let Some(p) = &a.replay {
        return replay(p);
    }
    let suites: Vec<Suite> = if a.suite.is_empty() {
        vec![Suite::Curve, Suite::Exante, Suite::Mech, Suite::Oracle, Suite::Learn, Suite::Converge]
    } else {
        let mut s = a.suite.clone();
        s.sort();
        s.dedup();
        s
    };
    let mut checks = Vec::new();
    let mut outcome = Outcome::new(Value::Null);
    for (k, path) in a.instance.iter().enumerate() {
        let inst = load_instance(path)?;
        let seed = derive_seed(g.seed, k as u64);
        outcome = outcome.seed(&path.display().to_string(), seed);
        let mut cx = Ctx {
            inst: &inst,
            label: path.display().to_string(),
            g,
            seed,
            trials: a.trials,
            checks: Vec::new(),
        };
        for s in &suites {
            match s {
                Suite::Curve => curve_suite(&mut cx),
                Suite::Exante => exante_suite(&mut cx),
                Suite::Mech => mech_suite(&mut cx),
                Suite::Oracle => oracle_suite(&mut cx),
                Suite::Learn => learn_suite(&mut cx),
                Suite::Converge => converge_suite(&mut cx),
            }
        }
        checks.extend(cx.checks);
    }
    let count = |st: Status| checks.iter().filter(|c| c.status == st).count();
    let (pass, fail, skip) = (count(Status::Pass), count(Status::Fail), count(Status::Skip));
    for c in &checks {
        let tag = match c.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        outcome = outcome.line(format!("{tag} {:?} {} [{}]: {}", c.suite, c.name, c.instance, c.detail));
    }
    outcome.result = json!({"suites": suites, "passed": pass, "failed": fail, "skipped": skip, "checks": checks});
    outcome.passed = fail == 0;
    Ok(outcome.line(format!("{pass} passed, {fail} failed, {skip} skipped")))
}
