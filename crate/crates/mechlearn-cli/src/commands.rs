use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use clap::ValueEnum;
use serde_json::{json, Value};

use mechlearn::converge::{self, ComplexityTable, Entry};
use mechlearn::curve::{self, RevenueCurve};
use mechlearn::dist::{self, derive_seed, Marginal, ProductPrior};
use mechlearn::exante::{self, ProgramTag};
use mechlearn::io::{self, Instance};
use mechlearn::learn::{self, Learned, Source};
use mechlearn::mech::{self, FeeCache, Mechanism, Prices};
use mechlearn::oracle::{self, Guard};
use mechlearn::valuation::{restrict_to_cheap_items, Valuation};

use crate::args::{Access, BoundMode, BoundsArgs, EvalArgs, ExanteOp, Global, LearnArgs, MechOp, Model, OracleOp, Program, TableKind};
use crate::report::{json_bytes, load_instance, read_text, required_out, CliError, CliResult, Outcome, Within};

/// Quantile points used when a parametric cell has to become discrete.
pub const DISCRETIZE_POINTS: usize = 256;

pub fn guard(g: &Global) -> Guard {
    Guard {
        max_profiles: g.guard_profiles,
        ..Guard::default()
    }
}

pub fn load_mechanism(path: &Path) -> CliResult<Mechanism> {
    io::parse_typed(&read_text(path)?, &path.display().to_string()).map_err(|err| match err {
        mechlearn::Error::Parse { path, reason } => CliError::Usage(format!("{path}: {reason}")),
        err => CliError::Lib { module: "io", err },
    })
}

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Scalar value marginal of every cell, discretized when parametric.
pub fn discrete_marginals(inst: &Instance) -> mechlearn::Result<(Vec<Vec<Marginal>>, bool)> {
    let (n, m) = (inst.prior.n, inst.prior.m);
    let mut discretized = false;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(m);
        for j in 0..m {
            let mg = inst.valuation.value_marginal(&inst.prior.cells[i][j], j, m)?;
            row.push(match mg {
                Marginal::Parametric { .. } => {
                    discretized = true;
                    Marginal::Discrete(mg.discretize(DISCRETIZE_POINTS))
                }
                d => d,
            });
        }
        out.push(row);
    }
    Ok((out, discretized))
}

fn curves(marginals: &[Vec<Marginal>]) -> mechlearn::Result<Vec<Vec<RevenueCurve>>> {
    marginals.iter().map(|r| r.iter().map(curve::revenue_curve).collect()).collect()
}

fn natural_access(model: Model) -> Access {
    match model {
        Model::UdMaxmin | Model::AdditiveMaxmin | Model::SymSubadditive | Model::SymXos => Access::Prior,
        Model::UdRegular | Model::AdditiveBounded | Model::XosSample => Access::Samples,
    }
}

fn check_class(model: Model, val: &Valuation) -> CliResult<()> {
    let ok = match model {
        Model::UdMaxmin | Model::UdRegular => *val == Valuation::UnitDemand,
        Model::AdditiveBounded | Model::AdditiveMaxmin => *val == Valuation::Additive,
        Model::XosSample | Model::SymXos => val.is_xos_like(),
        Model::SymSubadditive => true,
    };
    if ok {
        Ok(())
    } else {
        usage(format!("learner {} does not apply to a {val:?} instance", value_name(model)))
    }
}

fn value_name(v: impl ValueEnum) -> String {
    v.to_possible_value().map_or_else(String::new, |p| p.get_name().to_string())
}

fn default_b(prior: &ProductPrior) -> f64 {
    (prior.n as f64 / (3.0 * prior.n.max(prior.m) as f64)).min(0.99)
}

pub fn cmd_learn(a: &LearnArgs, g: &Global) -> CliResult<Outcome> {
    let out = required_out(g, "mechanism file")?;
    let inst = load_instance(&a.instance)?;
    let (prior, val) = (&inst.prior, &inst.valuation);
    check_class(a.model, val)?;
    let access = a.access.unwrap_or(natural_access(a.model));
    let sample_models = matches!(a.model, Model::UdRegular | Model::AdditiveBounded | Model::XosSample);
    let prior_models = matches!(a.model, Model::UdMaxmin | Model::AdditiveMaxmin | Model::SymSubadditive);
    if (access == Access::Prior && sample_models) || (access == Access::Samples && prior_models) {
        return usage(format!("learner {} does not support {} access", value_name(a.model), value_name(access)));
    }
    if access == Access::Samples && a.samples == 0 {
        return usage("--samples must be positive");
    }
    let seeds = [derive_seed(g.seed, 1), derive_seed(g.seed, 2), derive_seed(g.seed, 3)];
    let draw = |k: usize, count: usize| dist::sample(prior, seeds[k], count).within("dist");
    let mut audit = Value::Null;
    let learned: Learned = match a.model {
        Model::UdMaxmin => learn::learn_ud_maxmin(prior, a.eps).within("learn")?,
        Model::UdRegular => learn::learn_ud_regular(&learn::cell_samples(prior, a.samples, seeds[0]), a.c).within("learn")?,
        Model::AdditiveBounded => {
            let held_out = draw(1, 1)?.remove(0);
            learn::learn_additive_bounded(&draw(0, a.samples)?, held_out).within("learn")?
        }
        Model::AdditiveMaxmin => learn::learn_additive_maxmin(prior, a.eps, a.draws).within("learn")?,
        Model::XosSample => {
            let fee_batch = draw(0, a.samples)?;
            let selection = draw(1, a.samples)?;
            let b = match a.net_b {
                Some(b) => b,
                None => 2.0 * learn::estimate_g_samples(&fee_batch, val).within("learn")?,
            };
            let net = learn::epsilon_net(b, a.step.unwrap_or(b / 4.0), prior.m).within("learn")?;
            let (l, au) = learn::learn_xos_sample(val, &net, &fee_batch, &selection, prior.symmetric).within("learn")?;
            audit = serde_json::to_value(&au).expect("audits serialize");
            l
        }
        Model::SymXos => {
            let b = a.b.unwrap_or_else(|| default_b(prior));
            match access {
                Access::Prior => {
                    let th = learn::learn_symmetric_thresholds(prior, val, b, a.eta, &Source::Exact).within("learn")?;
                    learn::learn_symmetric_aspe(prior, val, &th, None).within("learn")?
                }
                Access::Samples => {
                    let rows = learn::fee_rows(&draw(0, a.samples)?, true).remove(0);
                    let th = learn::learn_symmetric_thresholds(prior, val, b, a.eta, &Source::Samples(&rows)).within("learn")?;
                    let (q_batch, fee_batch) = (draw(1, a.samples)?, draw(2, a.samples)?);
                    learn::learn_symmetric_aspe(prior, val, &th, Some((&q_batch, &fee_batch))).within("learn")?
                }
            }
        }
        Model::SymSubadditive => learn::learn_symmetric_subadditive(prior, val, a.eps).within("learn")?,
    };
    let mut outcome = Outcome::new(Value::Null);
    let mut files = Vec::new();
    for (k, mech) in learned.mechanisms.iter().enumerate() {
        let path = if k == 0 { out.clone() } else { sibling(&out, mech.tag()) };
        files.push(json!({"tag": mech.tag(), "file": path.display().to_string()}));
        outcome = outcome.artifact(path, json_bytes(mech));
    }
    if access == Access::Samples {
        for (k, name) in ["samples", "held_out", "extra"].iter().enumerate() {
            outcome = outcome.seed(name, seeds[k]);
        }
    }
    outcome.result = json!({
        "learner": learned.record.learner,
        "access": access,
        "record": learned.record,
        "mechanisms": files,
        "audit": audit,
    });
    for w in &learned.record.warnings {
        outcome = outcome.line(format!("warning: {w}"));
    }
    Ok(outcome.line(format!("learned {} mechanism(s) with {}", learned.mechanisms.len(), learned.record.learner)))
}

/// `dir/name.json` -> `dir/name-{suffix}.json`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "mech".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}-{suffix}.json"))
}

struct EvalRow {
    instance: usize,
    seed: u64,
    mean: f64,
    stderr: f64,
}

pub fn cmd_eval(a: &EvalArgs, g: &Global) -> CliResult<Outcome> {
    let mech = load_mechanism(&a.mech)?;
    let insts: Vec<Instance> = a.instance.iter().map(|p| load_instance(p)).collect::<CliResult<_>>()?;
    let seeds = if a.seeds.is_empty() { vec![g.seed] } else { a.seeds.clone() };
    if a.trials == 0 {
        return usage("--trials must be positive");
    }
    let jobs: Vec<(usize, u64)> = (0..insts.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<mechlearn::Result<EvalRow>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    thread::scope(|sc| {
        for _ in 0..a.jobs.clamp(1, jobs.len().max(1)) {
            sc.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(i, seed)) = jobs.get(k) else { break };
                let r = mech::expected_revenue_mc(&mech, &insts[i].valuation, &insts[i].prior, a.trials, seed).map(|(mean, stderr)| EvalRow {
                    instance: i,
                    seed,
                    mean,
                    stderr,
                });
                rows.lock().unwrap()[k] = Some(r);
            });
        }
    });
    let rows: Vec<EvalRow> = rows
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<mechlearn::Result<_>>()
        .within("mech")?;
    let exact: Vec<Option<f64>> = if a.exact {
        insts
            .iter()
            .map(|inst| mech::expected_exact(&mech, &inst.valuation, &inst.prior, g.guard_profiles).map(|e| Some(e.revenue)))
            .collect::<mechlearn::Result<_>>()
            .within("mech")?
    } else {
        vec![None; insts.len()]
    };
    let mut passed = true;
    let mut csv = String::from("instance,seed,trials,mc_revenue,stderr,exact_revenue\n");
    let mut table = Vec::new();
    for r in &rows {
        let ex = exact[r.instance];
        let agrees = ex.map(|e| (r.mean - e).abs() <= 5.0 * r.stderr + 1e-9);
        passed &= agrees != Some(false);
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            a.instance[r.instance].display(),
            r.seed,
            a.trials,
            r.mean,
            r.stderr,
            ex.map_or(String::new(), |e| e.to_string())
        ));
        table.push(json!({
            "instance": a.instance[r.instance].display().to_string(),
            "seed": r.seed,
            "mc_revenue": r.mean,
            "stderr": r.stderr,
            "exact_revenue": ex,
            "mc_agrees_with_exact": agrees,
        }));
    }
    let mut outcome = Outcome::new(json!({"mechanism": mech.tag(), "trials": a.trials, "rows": table}));
    for s in &seeds {
        outcome = outcome.seed(&format!("mc_{s}"), *s);
    }
    if let Some(p) = &a.csv {
        outcome = outcome.artifact(p.clone(), csv.into_bytes());
    }
    outcome.passed = passed;
    Ok(outcome.line(format!("evaluated {} on {} instance(s) x {} seed(s)", mech.tag(), insts.len(), seeds.len())))
}

pub fn cmd_exante(op: &ExanteOp, g: &Global) -> CliResult<Outcome> {
    match op {
        ExanteOp::Solve {
            instance,
            caps,
            program,
            eps,
            c,
        } => {
            let inst = load_instance(instance)?;
            let (marg, discretized) = discrete_marginals(&inst).within("dist")?;
            let cv = curves(&marg).within("curve")?;
            let tag = match (caps.as_deref(), program) {
                (Some([r, c]), _) => ProgramTag::Custom { row_cap: *r, col_cap: *c },
                (Some(_), _) => return usage("--caps takes exactly two values: row cap, column cap"),
                (None, Program::Exact) => ProgramTag::Exact,
                (None, Program::Approx) => ProgramTag::Approx { eps: *eps },
                (None, Program::Regular) => ProgramTag::Regular { c: *c, eps: *eps },
            };
            let sol = exante::solve_program(&cv, tag).within("exante")?;
            let lots = exante::solution_to_lotteries(&sol, &cv);
            let bound = exante::spm_bound(&lots);
            let summary = format!("objective {:.6} under {:?}; posted-price bound {:.6}", sol.objective, sol.tag, bound.bound);
            Ok(Outcome::new(json!({
                "solution": sol,
                "row_sums": sol.row_sums(),
                "col_sums": sol.col_sums(),
                "lotteries": lots,
                "spm_bound": bound,
                "discretized": discretized,
            }))
            .line(summary))
        }
        ExanteOp::Curve {
            instance,
            bidder,
            item,
            grid,
        } => {
            let out = required_out(g, "CSV file")?;
            let inst = load_instance(instance)?;
            if *bidder >= inst.prior.n || *item >= inst.prior.m {
                return usage(format!("cell ({bidder},{item}) is outside the {}x{} instance", inst.prior.n, inst.prior.m));
            }
            let (marg, discretized) = discrete_marginals(&inst).within("dist")?;
            let cv = curve::revenue_curve(&marg[*bidder][*item]).within("curve")?;
            let best = cv.argmax();
            Ok(Outcome::new(json!({
                "cell": [bidder, item],
                "breakpoints": cv.breakpoints,
                "argmax": best,
                "discretized": discretized,
            }))
            .artifact(out, cv.to_csv(*grid).into_bytes())
            .line(format!("{} breakpoints; monopoly price {} sells with probability {:.4}", cv.breakpoints.len(), best.price, best.q)))
        }
    }
}

fn parse_price_rows(text: &str, n: usize, m: usize) -> CliResult<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|r| {
            r.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("--prices: {x:?}: {e}"))))
                .collect()
        })
        .collect::<CliResult<_>>()?;
    let rows = if rows.len() == 1 { vec![rows[0].clone(); n] } else { rows };
    if rows.len() != n || rows.iter().any(|r| r.len() != m) {
        return usage(format!("--prices must be one row or {n} rows of {m} prices"));
    }
    if rows.iter().flatten().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return usage("--prices must be non-negative numbers");
    }
    Ok(rows)
}

pub fn cmd_mech(op: &MechOp, g: &Global) -> CliResult<Outcome> {
    match op {
        MechOp::Eval { mech, instance, exact, mc } => {
            let mech = load_mechanism(mech)?;
            let inst = load_instance(instance)?;
            let mut result = json!({"mechanism": mech.tag()});
            let mut outcome = Outcome::new(Value::Null);
            if *exact || mc.is_none() {
                let e = mech::expected_exact(&mech, &inst.valuation, &inst.prior, g.guard_profiles).within("mech")?;
                result["exact"] = json!(e);
                outcome = outcome.line(format!("exact revenue {:.6} (entry fees {:.6})", e.revenue, e.entry_fees));
            }
            if let Some(t) = *mc {
                if t == 0 {
                    return usage("--mc needs at least one trial");
                }
                let (mean, se) = mech::expected_revenue_mc(&mech, &inst.valuation, &inst.prior, t, g.seed).within("mech")?;
                result["mc"] = json!({"trials": t, "revenue": mean, "stderr": se});
                outcome = outcome.seed("mc", g.seed).line(format!("Monte Carlo revenue {mean:.6} +- {se:.6}"));
            }
            outcome.result = result;
            Ok(outcome)
        }
        MechOp::Run { mech, instance } => {
            let mech = load_mechanism(mech)?;
            let inst = load_instance(instance)?;
            let mut rng = dist::rng_from(g.seed);
            let profile = inst.prior.sample_one(&mut rng);
            let out = mech::run(&mech, &inst.valuation, &profile, &mut rng, &mut FeeCache::new()).within("mech")?;
            let mut outcome = Outcome::new(json!({"mechanism": mech.tag(), "profile": profile, "outcome": out}))
                .seed("profile", g.seed)
                .line(format!("revenue {} from allocation {:?}", out.revenue, out.allocation));
            outcome.passed = out.is_valid();
            Ok(outcome)
        }
        MechOp::Posted {
            instance,
            prices,
            rationed,
        } => {
            let out = required_out(g, "mechanism file")?;
            let inst = load_instance(instance)?;
            let rows = parse_price_rows(prices, inst.prior.n, inst.prior.m)?;
            let mech = Mechanism::posted(Prices::Fixed(rows), inst.prior.n, *rationed);
            let revenue = mech::expected_exact(&mech, &inst.valuation, &inst.prior, g.guard_profiles).ok().map(|e| e.revenue);
            Ok(Outcome::new(json!({"mechanism": mech.tag(), "exact_revenue": revenue}))
                .artifact(out, json_bytes(&mech))
                .line(format!("wrote {}", mech.tag())))
        }
    }
}

pub fn cmd_oracle(op: &OracleOp, g: &Global) -> CliResult<Outcome> {
    let gd = guard(g);
    match op {
        OracleOp::Bic { instance } => {
            let inst = load_instance(instance)?;
            let sol = oracle::opt_bic_lp(&inst.prior, &inst.valuation, &gd).within("oracle")?;
            let mut outcome = Outcome::new(json!({"revenue": sol.revenue, "solution": sol})).line(format!(
                "optimal BIC revenue {:.6} ({} variables, {} constraints, gap {:.2e})",
                sol.revenue, sol.variables, sol.constraints, sol.certificate.gap
            ));
            outcome.passed = sol.certificate.ok();
            Ok(outcome)
        }
        OracleOp::Posted { instance, rationed } => {
            let inst = load_instance(instance)?;
            let (mech, rev) = oracle::opt_posted_exhaustive(&inst.prior, &inst.valuation, *rationed, &gd).within("oracle")?;
            Ok(Outcome::new(json!({"revenue": rev, "mechanism": mech})).line(format!("best {} revenue {rev:.6}", mech.tag())))
        }
        OracleOp::Core { instance, b, eta } => {
            let inst = load_instance(instance)?;
            let b = b.unwrap_or_else(|| default_b(&inst.prior));
            let th = learn::learn_symmetric_thresholds(&inst.prior, &inst.valuation, b, *eta, &Source::Exact).within("learn")?;
            let view = restrict_to_cheap_items(&inst.valuation, &th.adjusted());
            let core = oracle::exact_core(&inst.prior, &view, &gd).within("oracle")?;
            let sum_beta: f64 = th.beta.iter().sum();
            Ok(Outcome::new(json!({"thresholds": th, "core": core, "sum_beta": sum_beta}))
                .line(format!("Core {core:.6}, sum of thresholds {sum_beta:.6}, shift c = {}", th.c)))
        }
        OracleOp::Welfare { instance } => {
            let inst = load_instance(instance)?;
            let w = oracle::expected_max_welfare(&inst.prior, &inst.valuation, &gd).within("oracle")?;
            Ok(Outcome::new(json!({ "welfare": w })).line(format!("expected optimal welfare {w:.6}")))
        }
    }
}

pub fn cmd_bounds(a: &BoundsArgs) -> CliResult<Outcome> {
    if !(a.eps > 0.0 && a.eps < 1.0 && a.delta > 0.0 && a.delta < 1.0) {
        return usage("--eps and --delta must lie in (0, 1)");
    }
    let table = match &a.table_file {
        Some(p) => io::parse_typed::<ComplexityTable>(&read_text(p)?, &p.display().to_string()).map_err(|e| CliError::Usage(e.to_string()))?,
        None => match a.table {
            TableKind::Rectangles => ComplexityTable::rectangles(a.d),
            TableKind::Convex => ComplexityTable::convex(a.d),
            TableKind::Dkw => ComplexityTable::singletons(a.d, Entry::Dkw),
        },
    };
    let pb = match a.mode {
        BoundMode::Partition => converge::sample_bound_partition(&table, a.eps, a.delta),
        BoundMode::Vc => converge::sample_bound_vc(&table, a.eps, a.delta),
    }
    .within("converge")?;
    let mut outcome = Outcome::new(json!({"table": table, "bound": pb}))
        .line(format!("partition: {:?}", pb.partition))
        .line(format!("bound: {:.1}", pb.bound))
        .line(format!("provenance: {}", pb.provenance));
    if let Some(v) = pb.v_max {
        outcome = outcome.line(format!("V_max: {v}"));
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn price_rows_broadcast_and_validate() {
        assert_eq!(parse_price_rows("1,2", 2, 2).unwrap(), vec![vec![1.0, 2.0]; 2]);
        assert_eq!(parse_price_rows("1;2", 2, 1).unwrap(), vec![vec![1.0], vec![2.0]]);
        assert!(parse_price_rows("1,2,3", 2, 2).is_err());
        assert!(parse_price_rows("1,x", 1, 2).is_err());
        assert!(parse_price_rows("-1", 1, 1).is_err());
    }

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("out/m.json"), "vcg_entry"), PathBuf::from("out/m-vcg_entry.json"));
    }
}
