//! Ex-ante relaxation for unit-demand bidders and its conversion into posted-price lotteries.

use serde::{Deserialize, Serialize};

use crate::curve::{Lottery, RevenueCurve};
use crate::error::{Error, Result};
use crate::lp::{self, Cmp, Lp};

/// Which relaxation the caps came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "program", rename_all = "snake_case")]
pub enum ProgramTag {
    Exact,
    Approx { eps: f64 },
    Regular { c: f64, eps: f64 },
    Custom { row_cap: f64, col_cap: f64 },
}

/// Default constant for the regular-distribution truncation.
pub const DEFAULT_C: f64 = 8.0;

impl ProgramTag {
    /// (row cap over items of one bidder, column cap over bidders of one item).
    pub fn caps(&self, n: usize, m: usize) -> (f64, f64) {
        match *self {
            ProgramTag::Exact => (0.5, 0.5),
            ProgramTag::Approx { eps } => (0.5 + m as f64 * eps, 0.5 + n as f64 * eps),
            ProgramTag::Regular { c, eps } => (0.5 + 1.0 / c + m as f64 * eps, 0.5 + 1.0 / c + n as f64 * eps),
            ProgramTag::Custom { row_cap, col_cap } => (row_cap, col_cap),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExAnteSolution {
    pub q: Vec<Vec<f64>>,
    pub objective: f64,
    pub tag: ProgramTag,
    /// Duality gap of the underlying LP.
    #[serde(default)]
    pub gap: f64,
}

impl ExAnteSolution {
    pub fn row_sums(&self) -> Vec<f64> {
        self.q.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let m = self.q.first().map_or(0, Vec::len);
        (0..m).map(|j| self.q.iter().map(|r| r[j]).sum()).collect()
    }
}

/// Solves max sum_ij R_ij(q_ij) under row/column caps.
pub fn solve_exante(curves: &[Vec<RevenueCurve>], row_cap: f64, col_cap: f64) -> Result<ExAnteSolution> {
    solve_with_floors(curves, row_cap, col_cap, None, ProgramTag::Custom { row_cap, col_cap })
}

/// Solves the program named by `tag`.
pub fn solve_program(curves: &[Vec<RevenueCurve>], tag: ProgramTag) -> Result<ExAnteSolution> {
    let n = curves.len();
    let m = curves.first().map_or(0, Vec::len);
    let (r, c) = tag.caps(n, m);
    solve_with_floors(curves, r, c, None, tag)
}

/// Like [`solve_program`] with per-cell lower bounds on q.
pub fn solve_with_floors(
    curves: &[Vec<RevenueCurve>],
    row_cap: f64,
    col_cap: f64,
    floors: Option<&[Vec<f64>]>,
    tag: ProgramTag,
) -> Result<ExAnteSolution> {
    if !(row_cap > 0.0 && col_cap > 0.0) {
        return Err(Error::Infeasible);
    }
    let n = curves.len();
    let m = curves.first().map_or(0, Vec::len);
    // one variable per positive-slope segment of every cell; floors may also need
    // the flat or decreasing segments, so every segment is a variable
    let mut vars: Vec<(usize, usize, f64, f64)> = Vec::new(); // (i, j, slope, width)
    for (i, row) in curves.iter().enumerate() {
        if row.len() != m {
            return Err(Error::InvalidArgument("curve grid is ragged".into()));
        }
        for (j, c) in row.iter().enumerate() {
            for w in c.breakpoints.windows(2) {
                let width = w[1].q - w[0].q;
                if width > 0.0 {
                    vars.push((i, j, (w[1].r - w[0].r) / width, width));
                }
            }
        }
    }
    let mut prog = Lp::new(vars.len());
    prog.objective = vars.iter().map(|v| v.2).collect();
    for i in 0..n {
        let row: Vec<(usize, f64)> = vars.iter().enumerate().filter(|(_, v)| v.0 == i).map(|(k, _)| (k, 1.0)).collect();
        prog.add_row(row, Cmp::Le, row_cap);
    }
    for j in 0..m {
        let col: Vec<(usize, f64)> = vars.iter().enumerate().filter(|(_, v)| v.1 == j).map(|(k, _)| (k, 1.0)).collect();
        prog.add_row(col, Cmp::Le, col_cap);
    }
    for (k, v) in vars.iter().enumerate() {
        prog.add_row(vec![(k, 1.0)], Cmp::Le, v.3);
    }
    if let Some(fl) = floors {
        for i in 0..n {
            for j in 0..m {
                if fl[i][j] > 0.0 {
                    let cell: Vec<(usize, f64)> = vars
                        .iter()
                        .enumerate()
                        .filter(|(_, v)| v.0 == i && v.1 == j)
                        .map(|(k, _)| (k, 1.0))
                        .collect();
                    prog.add_row(cell, Cmp::Ge, fl[i][j]);
                }
            }
        }
    }
    let sol = lp::solve(&prog)?;
    let mut q = vec![vec![0.0; m]; n];
    for (k, v) in vars.iter().enumerate() {
        q[v.0][v.1] += sol.x[k];
    }
    for row in q.iter_mut() {
        for x in row.iter_mut() {
            *x = x.clamp(0.0, 1.0);
        }
    }
    // Concavity makes segment fills contiguous at an optimum; evaluating R at q
    // is never below the LP value and equal to it up to rounding.
    let objective = q
        .iter()
        .zip(curves)
        .map(|(qr, cr)| qr.iter().zip(cr).map(|(x, c)| c.eval(*x)).sum::<f64>())
        .sum();
    Ok(ExAnteSolution {
        q,
        objective,
        tag,
        gap: sol.certificate.gap,
    })
}

pub type PriceLotteryGrid = Vec<Vec<Lottery>>;

/// Per-cell lottery achieving R_ij(q_ij).
pub fn solution_to_lotteries(sol: &ExAnteSolution, curves: &[Vec<RevenueCurve>]) -> PriceLotteryGrid {
    sol.q
        .iter()
        .zip(curves)
        .map(|(qr, cr)| qr.iter().zip(cr).map(|(&q, c)| c.lottery_at(q)).collect())
        .collect()
}

/// Analytic lower bound attached to a lottery-priced mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpmBound {
    /// 1 - max_j sum_i Pr[sale_ij]
    pub eta1: f64,
    /// 1 - max_i sum_j Pr[sale_ij]
    pub eta2: f64,
    /// sum_ij E[p Pr[t >= p]]
    pub price_revenue: f64,
    pub bound: f64,
    pub vacuous: bool,
}

pub fn spm_bound(lots: &PriceLotteryGrid) -> SpmBound {
    let n = lots.len();
    let m = lots.first().map_or(0, Vec::len);
    let col_max = (0..m)
        .map(|j| (0..n).map(|i| lots[i][j].sale_prob()).sum::<f64>())
        .fold(0.0, f64::max);
    let row_max = lots
        .iter()
        .map(|r| r.iter().map(Lottery::sale_prob).sum::<f64>())
        .fold(0.0, f64::max);
    let eta1 = 1.0 - col_max;
    let eta2 = 1.0 - row_max;
    let price_revenue: f64 = lots.iter().flatten().map(Lottery::revenue).sum();
    let vacuous = eta1 <= 0.0 || eta2 <= 0.0;
    SpmBound {
        eta1,
        eta2,
        price_revenue,
        bound: if vacuous { 0.0 } else { eta1 * eta2 * price_revenue },
        vacuous,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::revenue_curve;
    use crate::dist::Marginal;

    fn hh() -> RevenueCurve {
        revenue_curve(&Marginal::discrete(vec![1.0, 2.0], vec![0.5, 0.5]).unwrap()).unwrap()
    }

    #[test]
    fn single_cell() {
        let s = solve_program(&[vec![hh()]], ProgramTag::Exact).unwrap();
        assert!((s.q[0][0] - 0.5).abs() < 1e-9);
        assert!((s.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_bidders_column_cap_binds() {
        let s = solve_program(&[vec![hh()], vec![hh()]], ProgramTag::Exact).unwrap();
        assert!((s.objective - 1.0).abs() < 1e-9);
        assert!(s.col_sums()[0] <= 0.5 + 1e-9);
    }

    #[test]
    fn zero_values() {
        let z = revenue_curve(&Marginal::point(0.0)).unwrap();
        let s = solve_program(&[vec![z.clone(), z]], ProgramTag::Exact).unwrap();
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn bad_caps() {
        assert_eq!(solve_exante(&[vec![hh()]], 0.0, 0.5).unwrap_err(), Error::Infeasible);
    }

    #[test]
    fn lotteries_from_solution() {
        let curves = vec![vec![hh()]];
        let sol = ExAnteSolution {
            q: vec![vec![0.25]],
            objective: 0.5,
            tag: ProgramTag::Exact,
            gap: 0.0,
        };
        let l = solution_to_lotteries(&sol, &curves)[0][0];
        assert_eq!((l.x, l.p_lo, l.p_hi), (0.5, 3.0, 2.0));
        let sol = ExAnteSolution { q: vec![vec![0.0]], ..sol };
        let l = solution_to_lotteries(&sol, &curves)[0][0];
        assert_eq!(l.outcomes(), vec![(3.0, 1.0)]);
    }

    #[test]
    fn bound_metadata() {
        let l = hh().lottery_at(0.25);
        let b = spm_bound(&vec![vec![l], vec![l]]);
        assert!((b.eta1 - 0.5).abs() < 1e-12);
        assert!((b.eta2 - 0.75).abs() < 1e-12);
        assert!((b.bound - 0.375).abs() < 1e-12);
    }

    #[test]
    fn floors_are_respected() {
        let fl = vec![vec![0.5]];
        let z = revenue_curve(&Marginal::discrete(vec![1.0, 4.0], vec![0.9, 0.1]).unwrap()).unwrap();
        let s = solve_with_floors(&[vec![z]], 1.0, 1.0, Some(&fl), ProgramTag::Exact).unwrap();
        assert!(s.q[0][0] >= 0.5 - 1e-9);
    }
}
