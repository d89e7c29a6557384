//! Revenue curves in quantile space, price lotteries and ironed virtual values.

use serde::{Deserialize, Serialize};

use crate::dist::{Discrete, Marginal};
use crate::error::{Error, Result};

/// Vertex of the concave envelope: sale probability, revenue and the posted price achieving it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub q: f64,
    pub r: f64,
    pub price: f64,
}

/// Upper concave envelope of (q, q F^{-1}(1-q)) over support quantiles and (0, 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueCurve {
    pub breakpoints: Vec<Breakpoint>,
}

/// Two-point price lottery: charge `p_lo` with probability `x`, else `p_hi`.
///
/// `p_lo` is the price at the lower sale quantile `q_lo` (the higher price).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lottery {
    pub x: f64,
    pub p_lo: f64,
    pub p_hi: f64,
    pub q_lo: f64,
    pub q_hi: f64,
}

impl Lottery {
    pub fn deterministic(price: f64, q: f64) -> Self {
        Lottery {
            x: 1.0,
            p_lo: price,
            p_hi: price,
            q_lo: q,
            q_hi: q,
        }
    }

    /// Expected sale probability under the generating distribution.
    pub fn sale_prob(&self) -> f64 {
        self.x * self.q_lo + (1.0 - self.x) * self.q_hi
    }

    /// Expected revenue E[p Pr[t >= p]] under the generating distribution.
    pub fn revenue(&self) -> f64 {
        self.x * self.q_lo * self.p_lo + (1.0 - self.x) * self.q_hi * self.p_hi
    }

    /// Outcomes with positive probability.
    pub fn outcomes(&self) -> Vec<(f64, f64)> {
        if self.x >= 1.0 || self.p_lo == self.p_hi {
            vec![(self.p_lo, 1.0)]
        } else if self.x <= 0.0 {
            vec![(self.p_hi, 1.0)]
        } else {
            vec![(self.p_lo, self.x), (self.p_hi, 1.0 - self.x)]
        }
    }
}

const HULL_TOL: f64 = 1e-12;

pub fn revenue_curve(d: &Marginal) -> Result<RevenueCurve> {
    match d {
        Marginal::Discrete(dd) => Ok(curve_of_discrete(dd, d.sentinel())),
        Marginal::Parametric { .. } => Err(Error::NotDiscrete(
            "revenue curves are built on discrete marginals; discretize or truncate the parametric marginal first".into(),
        )),
    }
}

fn curve_of_discrete(d: &Discrete, sentinel: f64) -> RevenueCurve {
    // Points in ascending q: the highest support value has the smallest tail.
    let mut pts: Vec<Breakpoint> = vec![Breakpoint {
        q: 0.0,
        r: 0.0,
        price: sentinel,
    }];
    for (&s, &q) in d.support().iter().zip(d.tails()).rev() {
        pts.push(Breakpoint { q, r: q * s, price: s });
    }
    let mut hull: Vec<Breakpoint> = Vec::with_capacity(pts.len());
    for p in pts {
        // equal q can only come from zero-probability atoms; keep the higher revenue
        if let Some(last) = hull.last() {
            if (p.q - last.q).abs() <= HULL_TOL {
                if p.r > last.r {
                    hull.pop();
                } else {
                    continue;
                }
            }
        }
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // b is dropped when it lies strictly below the chord a -> p
            let cross = (b.q - a.q) * (p.r - a.r) - (b.r - a.r) * (p.q - a.q);
            if cross > HULL_TOL * (1.0 + p.r.abs()) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    RevenueCurve { breakpoints: hull }
}

impl RevenueCurve {
    /// Index k of the segment [b_k, b_{k+1}] containing q.
    fn segment(&self, q: f64) -> usize {
        let b = &self.breakpoints;
        let k = b.partition_point(|p| p.q <= q);
        k.clamp(1, b.len().max(2) - 1) - 1
    }

    pub fn eval(&self, q: f64) -> f64 {
        let b = &self.breakpoints;
        if b.len() == 1 {
            return 0.0;
        }
        let q = q.clamp(0.0, 1.0);
        let k = self.segment(q);
        let (a, c) = (b[k], b[k + 1]);
        if c.q <= a.q {
            return a.r;
        }
        a.r + (c.r - a.r) * (q - a.q) / (c.q - a.q)
    }

    /// Slopes of consecutive segments.
    pub fn slopes(&self) -> Vec<f64> {
        self.breakpoints
            .windows(2)
            .map(|w| (w[1].r - w[0].r) / (w[1].q - w[0].q))
            .collect()
    }

    pub fn max_q(&self) -> f64 {
        self.breakpoints.last().map_or(0.0, |b| b.q)
    }

    /// Quantile maximizing R, smallest on ties.
    pub fn argmax(&self) -> Breakpoint {
        let mut best = self.breakpoints[0];
        for &b in &self.breakpoints[1..] {
            if b.r > best.r + HULL_TOL {
                best = b;
            }
        }
        best
    }

    /// Lottery over the endpoints of the segment containing q.
    pub fn lottery_at(&self, q: f64) -> Lottery {
        let b = &self.breakpoints;
        let q = q.clamp(0.0, self.max_q());
        if b.len() == 1 {
            return Lottery::deterministic(b[0].price, 0.0);
        }
        let k = self.segment(q);
        let (a, c) = (b[k], b[k + 1]);
        if (q - a.q).abs() <= HULL_TOL {
            return Lottery::deterministic(a.price, a.q);
        }
        if (q - c.q).abs() <= HULL_TOL {
            return Lottery::deterministic(c.price, c.q);
        }
        Lottery {
            x: (c.q - q) / (c.q - a.q),
            p_lo: a.price,
            p_hi: c.price,
            q_lo: a.q,
            q_hi: c.q,
        }
    }

    /// CSV rows `q,R,p_lo,p_hi,x` at the breakpoints and on a uniform grid.
    pub fn to_csv(&self, grid: usize) -> String {
        let mut qs: Vec<f64> = self.breakpoints.iter().map(|b| b.q).collect();
        qs.extend((0..=grid).map(|k| k as f64 / grid.max(1) as f64));
        qs.sort_by(|a, b| a.total_cmp(b));
        qs.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let mut out = String::from("q,R,p_lo,p_hi,x\n");
        for q in qs {
            let l = self.lottery_at(q);
            out.push_str(&format!("{},{},{},{},{}\n", q, self.eval(q), l.p_lo, l.p_hi, l.x));
        }
        out
    }
}

pub fn lottery_at(c: &RevenueCurve, q: f64) -> Lottery {
    c.lottery_at(q)
}

/// Step function of ironed virtual values over the support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IronedVirtuals {
    /// Ascending support values.
    pub values: Vec<f64>,
    /// phi[l] applies on [values[l], values[l+1]).
    pub phi: Vec<f64>,
}

impl IronedVirtuals {
    /// Virtual value of a bid; bids below the support get negative infinity.
    pub fn at(&self, bid: f64) -> f64 {
        let k = self.values.partition_point(|&v| v <= bid);
        if k == 0 {
            f64::NEG_INFINITY
        } else {
            self.phi[k - 1]
        }
    }
}

/// phi(s_l) is the slope of R on the quantile interval (q_{l+1}, q_l].
pub fn ironed_virtuals(d: &Marginal) -> Result<IronedVirtuals> {
    let dd = d
        .as_discrete()
        .ok_or_else(|| Error::NotDiscrete("ironed virtual values need a discrete marginal".into()))?;
    let curve = revenue_curve(d)?;
    let tails = dd.tails();
    let l = tails.len();
    let phi = (0..l)
        .map(|k| {
            let hi = tails[k];
            let lo = if k + 1 < l { tails[k + 1] } else { 0.0 };
            if hi - lo <= 0.0 {
                0.0
            } else {
                (curve.eval(hi) - curve.eval(lo)) / (hi - lo)
            }
        })
        .collect();
    Ok(IronedVirtuals {
        values: dd.support().to_vec(),
        phi,
    })
}

/// Worst violation of (1 - p) R(q') <= R(q) over grid triples 0 < q' <= q <= p < 1,
/// evaluated on the unironed curve q F^{-1}(1 - q).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub worst_margin: f64,
    pub q_prime: f64,
    pub q: f64,
    pub p: f64,
    pub violated: bool,
}

pub const REGULARITY_TOL: f64 = 1e-9;

pub fn check_regular_curve(d: &Marginal, grid: usize) -> RegularityReport {
    let grid = grid.max(2);
    let r = |q: f64| q * d.quantile(q);
    let mut report = RegularityReport {
        worst_margin: f64::NEG_INFINITY,
        q_prime: 0.0,
        q: 0.0,
        p: 0.0,
        violated: false,
    };
    // For fixed q the worst p is p = q and the worst q' maximizes R on (0, q].
    let mut prefix_max = (f64::NEG_INFINITY, 0.0);
    for k in 1..grid {
        let q = k as f64 / grid as f64;
        let rq = r(q);
        if rq > prefix_max.0 {
            prefix_max = (rq, q);
        }
        let margin = (1.0 - q) * prefix_max.0 - rq;
        if margin > report.worst_margin {
            report = RegularityReport {
                worst_margin: margin,
                q_prime: prefix_max.1,
                q,
                p: q,
                violated: margin > REGULARITY_TOL,
            };
        }
    }
    report
}
