//! Three views for the static page in `www/`: a revenue curve with its price lottery,
//! the ex-ante program on a pasted instance, and an empirical CDF against its DKW band.
//!
//! The functions here are plain Rust returning JSON strings; the `wasm` module only
//! adapts them for the browser.

use serde::Serialize;
use serde_json::json;

use mechlearn::converge;
use mechlearn::curve::{self, Breakpoint, Lottery};
use mechlearn::dist::{self, Marginal};
use mechlearn::exante::{self, ProgramTag};
use mechlearn::io;

/// Parses "1, 2.5, 4" into numbers.
pub fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect()
}

fn marginal(support: &[f64], probs: &[f64]) -> Result<Marginal, String> {
    Marginal::discrete(support.to_vec(), probs.to_vec()).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct CurveView {
    pub breakpoints: Vec<Breakpoint>,
    /// (Pr[v >= p], p Pr[v >= p]) for every support point p.
    pub price_points: Vec<(f64, f64)>,
    pub q: f64,
    pub revenue: f64,
    pub lottery: Lottery,
}

pub fn curve_view(support: &[f64], probs: &[f64], q: f64) -> Result<CurveView, String> {
    let d = marginal(support, probs)?;
    let cv = curve::revenue_curve(&d).map_err(|e| e.to_string())?;
    let q = q.clamp(0.0, cv.max_q());
    let price_points = support.iter().map(|&p| (d.tail(p), p * d.tail(p))).collect();
    Ok(CurveView {
        revenue: cv.eval(q),
        lottery: cv.lottery_at(q),
        breakpoints: cv.breakpoints,
        price_points,
        q,
    })
}

/// Solves the ex-ante program with the given caps on a pasted instance file.
pub fn exante_view(instance_json: &str, row_cap: f64, col_cap: f64) -> Result<serde_json::Value, String> {
    let inst = io::parse_instance(instance_json).map_err(|e| e.to_string())?;
    let marg = inst.prior.marginals().map_err(|e| e.to_string())?;
    let curves = marg
        .iter()
        .map(|r| r.iter().map(curve::revenue_curve).collect::<mechlearn::Result<Vec<_>>>())
        .collect::<mechlearn::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let sol = exante::solve_program(&curves, ProgramTag::Custom { row_cap, col_cap }).map_err(|e| e.to_string())?;
    let lots = exante::solution_to_lotteries(&sol, &curves);
    let bound = exante::spm_bound(&lots);
    Ok(json!({
        "q": sol.q,
        "objective": sol.objective,
        "row_sums": sol.row_sums(),
        "col_sums": sol.col_sums(),
        "lotteries": lots,
        "bound": bound,
    }))
}

#[derive(Debug, Serialize)]
pub struct DkwView {
    /// (x, F(x)) and (x, F_hat(x)) at every support point.
    pub cdf: Vec<(f64, f64)>,
    pub empirical: Vec<(f64, f64)>,
    pub eps: f64,
    pub distance: f64,
    pub inside: bool,
}

/// Draws `k` samples and compares their empirical CDF with the truth, using the DKW
/// radius sqrt(ln(2/delta) / (2k)).
pub fn dkw_view(support: &[f64], probs: &[f64], k: usize, delta: f64, seed: u64) -> Result<DkwView, String> {
    if k == 0 || !(delta > 0.0 && delta < 1.0) {
        return Err("need k > 0 and delta in (0, 1)".into());
    }
    let d = marginal(support, probs)?;
    let mut rng = dist::rng_from(seed);
    let xs: Vec<f64> = (0..k).map(|_| d.sample(&mut rng)).collect();
    let emp = dist::empirical(&xs).map_err(|e| e.to_string())?;
    let eps = ((2.0 / delta).ln() / (2.0 * k as f64)).sqrt();
    let distance = dist::kolmogorov_distance(&emp, &d);
    Ok(DkwView {
        cdf: support.iter().map(|&x| (x, d.cdf(x))).collect(),
        empirical: support.iter().map(|&x| (x, emp.cdf(x))).collect(),
        eps,
        distance,
        inside: distance <= eps,
    })
}

/// Failure probability the DKW inequality allows at radius eps.
pub fn dkw_failure(k: usize, eps: f64) -> f64 {
    converge::dkw_tail(k, eps)
}

#[cfg(target_arch = "wasm32")]
mod wasm {
    use wasm_bindgen::prelude::*;

    fn to_js<T: serde::Serialize>(r: Result<T, String>) -> Result<String, JsError> {
        r.map(|v| serde_json::to_string(&v).expect("views serialize")).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen]
    pub fn revenue_curve(support: &str, probs: &str, q: f64) -> Result<String, JsError> {
        to_js(super::parse_list(support).and_then(|s| super::parse_list(probs).and_then(|p| super::curve_view(&s, &p, q))))
    }

    #[wasm_bindgen]
    pub fn exante(instance_json: &str, row_cap: f64, col_cap: f64) -> Result<String, JsError> {
        to_js(super::exante_view(instance_json, row_cap, col_cap))
    }

    #[wasm_bindgen]
    pub fn dkw(support: &str, probs: &str, k: usize, delta: f64, seed: u32) -> Result<String, JsError> {
        to_js(super::parse_list(support).and_then(|s| super::parse_list(probs).and_then(|p| super::dkw_view(&s, &p, k, delta, seed as u64))))
    }

    #[wasm_bindgen]
    pub fn dkw_failure(k: usize, eps: f64) -> f64 {
        super::dkw_failure(k, eps)
    }
}
