//! Dense two-phase tableau simplex for small linear programs.
//!
//! Maximizes `c x` subject to sparse rows `a x (<=|>=|=) b` and `x >= 0`.
//! Every solve returns a duality certificate computed from the final basis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Default)]
pub struct Lp {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<(Vec<(usize, f64)>, Cmp, f64)>,
}

impl Lp {
    pub fn new(num_vars: usize) -> Self {
        Lp {
            num_vars,
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
        }
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) {
        self.rows.push((coeffs, cmp, rhs));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

impl Certificate {
    pub const TOL: f64 = 1e-7;

    pub fn ok(&self) -> bool {
        self.gap <= Self::TOL * (1.0 + self.primal.abs())
            && self.primal_residual <= Self::TOL
            && self.dual_residual <= Self::TOL
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub duals: Vec<f64>,
    pub certificate: Certificate,
    pub iterations: usize,
}

const EPS: f64 = 1e-9;
const PIVOT_EPS: f64 = 1e-11;
const MAX_ITERS: usize = 200_000;

struct Tableau {
    rows: usize,
    cols: usize, // excluding rhs
    data: Vec<f64>,
    rc: Vec<f64>,
    basis: Vec<usize>,
    barred: Vec<bool>,
    iterations: usize,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn set_costs(&mut self, cost: &[f64]) {
        let w = self.cols + 1;
        self.rc = cost.to_vec();
        self.rc.push(0.0);
        for r in 0..self.rows {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                let row = &self.data[r * w..(r + 1) * w];
                for (d, v) in self.rc.iter_mut().zip(row) {
                    *d -= cb * v;
                }
            }
        }
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.cols + 1;
        let pv = self.at(pr, pc);
        {
            let row = &mut self.data[pr * w..(pr + 1) * w];
            for v in row.iter_mut() {
                *v /= pv;
            }
            row[pc] = 1.0;
        }
        let prow: Vec<f64> = self.data[pr * w..(pr + 1) * w].to_vec();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.data[r * w + pc];
            if f != 0.0 {
                let row = &mut self.data[r * w..(r + 1) * w];
                for (v, p) in row.iter_mut().zip(&prow) {
                    *v -= f * p;
                }
                row[pc] = 0.0;
            }
        }
        let f = self.rc[pc];
        if f != 0.0 {
            for (v, p) in self.rc.iter_mut().zip(&prow) {
                *v -= f * p;
            }
            self.rc[pc] = 0.0;
        }
        self.basis[pr] = pc;
        self.iterations += 1;
    }

    /// Runs primal simplex on the current cost row.
    fn optimize(&mut self) -> Result<()> {
        let mut degenerate_run = 0usize;
        // once stalled, stay on Bland's rule: it cannot cycle
        let mut bland = false;
        loop {
            if self.iterations > MAX_ITERS {
                return Err(Error::IterationLimit);
            }
            bland |= degenerate_run > 50;
            let mut enter = None;
            let mut best = EPS;
            for c in 0..self.cols {
                if self.barred[c] {
                    continue;
                }
                let d = self.rc[c];
                if d > best {
                    enter = Some(c);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(pc) = enter else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_EPS {
                    let ratio = self.rhs(r).max(0.0) / a;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-12
                                || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr])
                            {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((pr, ratio)) = leave else { return Err(Error::Unbounded) };
            if ratio.abs() <= 1e-9 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(pr, pc);
        }
    }
}

/// Small distinct right-hand-side shift of inequality row i; it breaks the ties of
/// degenerate vertices so pivoting makes strict progress.
fn perturbation(i: usize, b: f64) -> f64 {
    let u = ((i as u64).wrapping_mul(2654435761) % 1000) as f64 / 1000.0;
    1e-7 * (1.0 + u) * (1.0 + b.abs())
}

/// Solves the LP to optimality or reports infeasibility/unboundedness.
pub fn solve(lp: &Lp) -> Result<LpSolution> {
    let n = lp.num_vars;
    let m = lp.rows.len();
    // column layout: structural | one slack/surplus per inequality row | one artificial per >=/= row
    let mut flip = vec![1.0; m];
    let mut sense = Vec::with_capacity(m);
    for (i, (_, cmp, b)) in lp.rows.iter().enumerate() {
        let mut c = *cmp;
        // negate b < 0 rows, and a.x >= 0 rows so their slack starts basic
        if *b < 0.0 || (*b == 0.0 && c == Cmp::Ge) {
            flip[i] = -1.0;
            c = match c {
                Cmp::Le => Cmp::Ge,
                Cmp::Ge => Cmp::Le,
                Cmp::Eq => Cmp::Eq,
            };
        }
        sense.push(c);
    }
    let n_slack = sense.iter().filter(|c| **c != Cmp::Eq).count();
    let n_art = sense.iter().filter(|c| **c != Cmp::Le).count();
    let cols = n + n_slack + n_art;
    let w = cols + 1;
    let mut data = vec![0.0; m * w];
    let mut basis = vec![0usize; m];
    let mut id_col = vec![0usize; m];
    let mut is_art = vec![false; cols];
    let (mut next_slack, mut next_art) = (n, n + n_slack);
    for (i, (coeffs, _, b)) in lp.rows.iter().enumerate() {
        let row = &mut data[i * w..(i + 1) * w];
        for &(j, a) in coeffs {
            row[j] += flip[i] * a;
        }
        row[cols] = flip[i] * b;
        if sense[i] != Cmp::Eq {
            row[cols] += perturbation(i, *b);
        }
        match sense[i] {
            Cmp::Le => {
                row[next_slack] = 1.0;
                basis[i] = next_slack;
                id_col[i] = next_slack;
                next_slack += 1;
            }
            Cmp::Ge => {
                row[next_slack] = -1.0;
                next_slack += 1;
                row[next_art] = 1.0;
                basis[i] = next_art;
                id_col[i] = next_art;
                is_art[next_art] = true;
                next_art += 1;
            }
            Cmp::Eq => {
                row[next_art] = 1.0;
                basis[i] = next_art;
                id_col[i] = next_art;
                is_art[next_art] = true;
                next_art += 1;
            }
        }
    }
    let mut t = Tableau {
        rows: m,
        cols,
        data,
        rc: Vec::new(),
        basis,
        barred: vec![false; cols],
        iterations: 0,
    };

    if n_art > 0 {
        let phase1: Vec<f64> = is_art.iter().map(|&a| if a { -1.0 } else { 0.0 }).collect();
        t.set_costs(&phase1);
        t.optimize()?;
        let infeas: f64 = (0..m).filter(|&r| is_art[t.basis[r]]).map(|r| t.rhs(r)).sum();
        let scale = 1.0 + lp.rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
        if infeas > 1e-8 * scale {
            return Err(Error::Infeasible);
        }
        // drive zero-level artificials out of the basis where possible
        for r in 0..m {
            if is_art[t.basis[r]] {
                if let Some(c) = (0..cols).find(|&c| !is_art[c] && t.at(r, c).abs() > 1e-9) {
                    t.pivot(r, c);
                }
            }
        }
        for (c, b) in t.barred.iter_mut().enumerate() {
            *b = is_art[c];
        }
    }

    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&lp.objective);
    t.set_costs(&cost);
    t.optimize()?;

    // the final basis is dual feasible for any right-hand side; re-solve B x_B = b unperturbed
    let exact: Vec<f64> = (0..m)
        .map(|r| (0..m).map(|i| t.at(r, id_col[i]) * flip[i] * lp.rows[i].2).sum())
        .collect();
    let scale = 1.0 + lp.rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
    let use_exact = exact.iter().all(|&v| v >= -1e-9 * scale);
    let mut x = vec![0.0; n];
    for r in 0..m {
        if t.basis[r] < n {
            x[t.basis[r]] = if use_exact { exact[r] } else { t.rhs(r) }.max(0.0);
        }
    }
    let objective: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    // y'_i = c_B B^{-1} e_i = -rc of the column that started as e_i
    let duals: Vec<f64> = (0..m).map(|i| -t.rc[id_col[i]] * flip[i]).collect();
    let certificate = certify(lp, &x, &duals);
    Ok(LpSolution {
        x,
        objective,
        duals,
        certificate,
        iterations: t.iterations,
    })
}

/// Primal and dual feasibility residuals and the duality gap of a candidate pair.
pub fn certify(lp: &Lp, x: &[f64], y: &[f64]) -> Certificate {
    let primal: f64 = lp.objective.iter().zip(x).map(|(c, v)| c * v).sum();
    let dual: f64 = lp.rows.iter().zip(y).map(|(r, yi)| r.2 * yi).sum();
    let mut primal_residual: f64 = x.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
    let mut reduced = lp.objective.iter().map(|c| -c).collect::<Vec<f64>>();
    let mut dual_residual: f64 = 0.0;
    for ((coeffs, cmp, b), &yi) in lp.rows.iter().zip(y) {
        let lhs: f64 = coeffs.iter().map(|&(j, a)| a * x[j]).sum();
        let viol = match cmp {
            Cmp::Le => lhs - b,
            Cmp::Ge => b - lhs,
            Cmp::Eq => (lhs - b).abs(),
        };
        primal_residual = primal_residual.max(viol);
        let sign_viol = match cmp {
            Cmp::Le => -yi,
            Cmp::Ge => yi,
            Cmp::Eq => 0.0,
        };
        dual_residual = dual_residual.max(sign_viol);
        for &(j, a) in coeffs {
            reduced[j] += a * yi;
        }
    }
    for r in reduced {
        dual_residual = dual_residual.max(-r);
    }
    Certificate {
        primal,
        dual,
        gap: (primal - dual).abs(),
        primal_residual: primal_residual.max(0.0),
        dual_residual: dual_residual.max(0.0),
    }
}
