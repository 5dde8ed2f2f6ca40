//! Browser bindings: Gauss sums, time curves at the origin, exponent curves.

use complex_time::maximal::{theoretical_exponent, Family};
use complex_time::numbertheory::{gauss_sum, GaussSumParams};
use complex_time::propagator::evaluate_at_origin;
use wasm_bindgen::prelude::*;

/// Largest time grid the page may request.
pub const MAX_TIME_POINTS: usize = 2000;

fn js(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// `[Re G, Im G, |G|, √(2q)]` for `G(a,b;q) = Σ_n e^{2πi(an²+bn)/q}`.
pub fn gauss_row(a: i64, b: i64, q: u64) -> Result<Vec<f64>, String> {
    let p = GaussSumParams::new(a, b, q).map_err(|e| e.to_string())?;
    let g = gauss_sum(p);
    Ok(vec![g.re, g.im, g.norm(), (2.0 * q as f64).sqrt()])
}

/// `|P_γ f(0,t)|` at `n` times spread geometrically over `[t_min, t_max]`,
/// returned as interleaved `[t₀, v₀, t₁, v₁, …]`.
pub fn origin_curve(
    family: &str,
    d: usize,
    gamma: f64,
    r: f64,
    t_min: f64,
    t_max: f64,
    n: usize,
) -> Result<Vec<f64>, String> {
    let fam = match family {
        "case1" => Family::Case1,
        "annulus" => Family::Annulus,
        other => return Err(format!("unknown family `{other}`")),
    };
    if !(2..=MAX_TIME_POINTS).contains(&n) {
        return Err(format!("point count must be in 2..={MAX_TIME_POINTS}"));
    }
    if !(t_min > 0.0 && t_max > t_min && t_max.is_finite()) {
        return Err("need 0 < t_min < t_max".into());
    }
    let f = fam.descriptor(d, r).map_err(|e| e.to_string())?;
    let step = (t_max / t_min).ln() / (n - 1) as f64;
    let mut out = Vec::with_capacity(2 * n);
    for k in 0..n {
        let t = t_min * (step * k as f64).exp();
        out.push(t);
        out.push(
            evaluate_at_origin(&f, gamma, t)
                .map_err(|e| e.to_string())?
                .norm(),
        );
    }
    Ok(out)
}

/// Predicted growth exponent at each `γ` in `gammas`.
pub fn exponent_row(d: usize, gammas: &[f64]) -> Result<Vec<f64>, String> {
    gammas
        .iter()
        .map(|&g| theoretical_exponent(d, g).map_err(|e| e.to_string()))
        .collect()
}

#[wasm_bindgen]
pub fn gauss(a: i64, b: i64, q: u64) -> Result<Vec<f64>, JsValue> {
    gauss_row(a, b, q).map_err(js)
}

#[wasm_bindgen(js_name = originCurve)]
pub fn origin_curve_js(
    family: &str,
    d: usize,
    gamma: f64,
    r: f64,
    t_min: f64,
    t_max: f64,
    n: usize,
) -> Result<Vec<f64>, JsValue> {
    origin_curve(family, d, gamma, r, t_min, t_max, n).map_err(js)
}

#[wasm_bindgen(js_name = exponentCurve)]
pub fn exponent_curve(d: usize, gammas: Vec<f64>) -> Result<Vec<f64>, JsValue> {
    exponent_row(d, &gammas).map_err(js)
}
