//! Random instance families. Values live on a grid of quarters so generated files
//! stay readable and exact enumeration stays cheap.

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::json;

use mechlearn::dist::{self, Cell, Discrete, Family as Param, Marginal, ProductPrior, Rng64, Signal};
use mechlearn::io::{self, Instance};
use mechlearn::valuation::Valuation;

use crate::args::{Class, Family, GenerateArgs, Global};
use crate::report::{required_out, CliError, CliResult, Outcome, Within};

const GRID: f64 = 0.25;

fn levels(max_value: f64) -> usize {
    ((max_value / GRID) + 1e-9).floor() as usize
}

/// `k` distinct grid values in (0, max], ascending.
fn grid_values(rng: &mut Rng64, k: usize, max_value: f64) -> Vec<f64> {
    let mut all: Vec<usize> = (1..=levels(max_value)).collect();
    all.shuffle(rng);
    let mut picked: Vec<f64> = all.into_iter().take(k).map(|l| l as f64 * GRID).collect();
    picked.sort_by(f64::total_cmp);
    picked
}

/// Weights in {1..4}, normalized; the last entry absorbs rounding.
fn grid_probs(rng: &mut Rng64, k: usize) -> Vec<f64> {
    let w: Vec<u32> = (0..k).map(|_| rng.gen_range(1..=4)).collect();
    let total: u32 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|&x| x as f64 / total as f64).collect();
    let head: f64 = p[..k - 1].iter().sum();
    p[k - 1] = 1.0 - head;
    p
}

fn discrete_cell(rng: &mut Rng64, a: &GenerateArgs) -> mechlearn::Result<Cell> {
    let support = grid_values(rng, a.support, a.max_value);
    let probs = grid_probs(rng, support.len());
    Ok(Cell::Scalar(Marginal::Discrete(Discrete::new(support, probs)?)))
}

fn parametric_cell(rng: &mut Rng64, a: &GenerateArgs) -> mechlearn::Result<Cell> {
    let top = a.max_value;
    let fam = match rng.gen_range(0..3) {
        0 => {
            let hi = (levels(top) / 2..=levels(top)).collect::<Vec<_>>();
            let hi = *hi.choose(rng).unwrap_or(&1) as f64 * GRID;
            Param::Uniform { lo: 0.0, hi: hi.max(GRID) }
        }
        1 => Param::TruncatedExponential {
            rate: rng.gen_range(5..=20) as f64 / 10.0,
            cap: top,
        },
        _ => Param::EqualRevenue { cap: top.max(1.0) },
    };
    Ok(Cell::Scalar(Marginal::parametric(fam)?))
}

fn xos_cell(rng: &mut Rng64, a: &GenerateArgs) -> mechlearn::Result<Cell> {
    let atoms = (0..a.support)
        .map(|_| {
            let clauses = (0..a.clauses).map(|_| rng.gen_range(0..=levels(a.max_value)) as f64 * GRID).collect();
            Signal::Clauses(clauses)
        })
        .collect();
    Cell::atoms_checked(atoms, grid_probs(rng, a.support))
}

fn validate(a: &GenerateArgs) -> CliResult<()> {
    let bad = |m: &str| Err(CliError::Usage(m.into()));
    if a.n == 0 || a.m == 0 {
        return bad("--n and --m must be positive");
    }
    if a.m > 16 {
        return bad("--m is limited to 16 items");
    }
    if a.support == 0 {
        return bad("--support must be positive");
    }
    if !(a.max_value >= GRID && a.max_value.is_finite()) {
        return bad("--max-value must be a finite number of at least 0.25");
    }
    if a.family == Family::IidDiscrete && a.support > levels(a.max_value) {
        return bad("--support exceeds the number of grid values below --max-value");
    }
    if a.family == Family::PointMass && !(a.value >= 0.0 && a.value.is_finite()) {
        return bad("--value must be a non-negative number");
    }
    if a.family == Family::SymmetricXos && a.clauses == 0 {
        return bad("--clauses must be positive");
    }
    Ok(())
}

pub fn generate_instance(a: &GenerateArgs, seed: u64) -> CliResult<Instance> {
    validate(a)?;
    let mut rng = dist::rng_from(seed);
    let symmetric = a.symmetric || a.family == Family::SymmetricXos;
    let cell = |rng: &mut Rng64| -> mechlearn::Result<Cell> {
        match a.family {
            Family::IidDiscrete => discrete_cell(rng, a),
            Family::TruncatedParametric => parametric_cell(rng, a),
            Family::SymmetricXos => xos_cell(rng, a),
            Family::PointMass => Ok(Cell::Scalar(Marginal::point(a.value))),
        }
    };
    let prior = if symmetric {
        let row = (0..a.m).map(|_| cell(&mut rng)).collect::<mechlearn::Result<Vec<_>>>().within("dist")?;
        ProductPrior::symmetric_rows(a.n, row).within("dist")?
    } else {
        let cells = (0..a.n)
            .map(|_| (0..a.m).map(|_| cell(&mut rng)).collect())
            .collect::<mechlearn::Result<Vec<Vec<_>>>>()
            .within("dist")?;
        ProductPrior::new(cells, false).within("dist")?
    };
    let valuation = match (a.family, a.class) {
        (Family::SymmetricXos, _) => Valuation::Xos { k: a.clauses },
        (_, Class::Additive) => Valuation::Additive,
        (_, Class::UnitDemand) => Valuation::UnitDemand,
    };
    Ok(Instance { prior, valuation })
}

pub fn cmd_generate(a: &GenerateArgs, g: &Global) -> CliResult<Outcome> {
    let out = required_out(g, "instance file")?;
    let inst = generate_instance(a, g.seed)?;
    let mut text = io::write_instance(&inst);
    text.push('\n');
    let summary = format!(
        "generated {:?} instance: n = {}, m = {}, symmetric = {}",
        a.family, inst.prior.n, inst.prior.m, inst.prior.symmetric
    );
    Ok(Outcome::new(json!({
        "n": inst.prior.n,
        "m": inst.prior.m,
        "symmetric": inst.prior.symmetric,
        "profiles": inst.prior.profile_count().ok(),
    }))
    .seed("instance", g.seed)
    .artifact(out, text.into_bytes())
    .line(summary))
}
