//! Evaluation of `e^{it∆}f` and of `P_γ f`.
//!
//! Two independent routes are provided. The direct route integrates
//! `e^{i(x·ξ+t|ξ|²)} e^{−t^γ|ξ|²} f̂(ξ)` over every support cell of the
//! descriptor with the iterated tensor rule. The product route uses the
//! factorization of product-form data into one-dimensional integrals and is
//! the only one that is affordable at counterexample scales.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::profiles::{
    canonical_bump, norm, BumpTrain, CounterexampleParams, RadialBump, SpectrumDescriptor,
};
use crate::quad::{composite_nodes, oscillation_panels, Adaptive, Span, NODE_BUDGET};

/// Split exponent in `t ≤ R^{−2/γ+ε}`.
pub const DEFAULT_SPLIT_EPS: f64 = 0.1;

/// Frequencies where `t^γ|ξ|² > DISSIPATION_CUTOFF` contribute below
/// `e^{-40}` and are dropped by the radial path.
pub const DISSIPATION_CUTOFF: f64 = 40.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub x: Vec<f64>,
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(x: Vec<f64>, t: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(invalid("t", format!("time must be finite and ≥ 0, got {t}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("x", "must be finite"));
        }
        Ok(SpaceTimePoint { x, t })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizedEvaluation {
    pub i1: C64,
    pub ij: Vec<C64>,
    pub product_modulus: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusCoefficient {
    pub l: Vec<i64>,
    pub t: f64,
    pub value: C64,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(invalid("gamma", format!("must be positive, got {gamma}")));
    }
    Ok(())
}

fn check_dim(f: &SpectrumDescriptor, p: &SpaceTimePoint) -> Result<()> {
    if p.x.len() != f.dim() {
        return Err(Error::Dimension {
            expected: f.dim(),
            got: p.x.len(),
        });
    }
    Ok(())
}

/// `t^γ`, with the convention `0^γ = 0`.
pub fn dissipation_rate(t: f64, gamma: Option<f64>) -> f64 {
    match gamma {
        Some(g) if t > 0.0 => t.powf(g),
        _ => 0.0,
    }
}

/// `e^{it∆}f(x) = (2π)^{−d} ∫ e^{i(x·ξ+t|ξ|²)} f̂(ξ) dξ` by direct quadrature.
pub fn evaluate_free(f: &SpectrumDescriptor, p: &SpaceTimePoint) -> Result<C64> {
    direct(f, p, None)
}

/// `P_γ f(x,t)` by direct quadrature over the support cells.
pub fn evaluate_p_gamma(f: &SpectrumDescriptor, gamma: f64, p: &SpaceTimePoint) -> Result<C64> {
    check_gamma(gamma)?;
    direct(f, p, Some(gamma))
}

fn direct(f: &SpectrumDescriptor, p: &SpaceTimePoint, gamma: Option<f64>) -> Result<C64> {
    check_dim(f, p)?;
    let d = f.dim();
    let t = p.t;
    let tg = dissipation_rate(t, gamma);
    let modulation = f.modulation();
    let ctl = Adaptive::default();
    let mut total = C64::new(0.0, 0.0);
    let mut spent = 0usize;
    for cell in f.cells() {
        let panels: Vec<usize> = cell
            .iter()
            .enumerate()
            .map(|(i, span)| {
                let (lo, hi) = span.bounds();
                let reach = lo.abs().max(hi.abs());
                let grad = (p.x[i] + modulation[i]).abs() + 2.0 * (t + tg) * reach;
                let (a, b) = span.domain();
                let stretch = match span {
                    Span::Interval(..) => 1.0,
                    Span::Bump { width, .. } => *width,
                };
                oscillation_panels(b - a, grad * stretch).max(f.cell_panels())
            })
            .collect();
        let est = ctl.tensor(&cell, &panels, &|xi: &[f64]| {
            let mut phase = 0.0;
            let mut r2 = 0.0;
            for (x, k) in p.x.iter().zip(xi) {
                phase += x * k;
                r2 += k * k;
            }
            let amp = f.eval_unchecked(xi);
            if amp.norm() == 0.0 {
                return C64::new(0.0, 0.0);
            }
            amp * C64::from_polar((-tg * r2).exp(), phase + t * r2)
        })?;
        spent += est.nodes;
        if spent > NODE_BUDGET {
            return Err(Error::Quadrature {
                tol: ctl.tol,
                estimate: total.norm(),
                nodes: spent,
            });
        }
        total += est.value;
    }
    Ok(total / (2.0 * PI).powi(d as i32))
}

/// `Σ_k ∫ train_k(ξ) e^{i(xξ+tξ²)} e^{−tg ξ²} dξ`, all teeth on shared nodes.
pub fn train_integral(train: &BumpTrain, x: f64, t: f64, tg: f64) -> Result<C64> {
    if train.count == 0 {
        return Ok(C64::new(0.0, 0.0));
    }
    let centers: Vec<f64> = train.teeth().collect();
    let (lo, hi) = train.support();
    let reach = lo.abs().max(hi.abs());
    let grad = (x.abs() + 2.0 * (t + tg) * reach) * train.width;
    let panels = oscillation_panels(2.0 * crate::quad::BUMP_REACH, grad).max(2);
    let w = train.width;
    let vals = Adaptive::default().integrate_span_vec(
        Span::Bump {
            center: 0.0,
            width: w,
        },
        panels,
        centers.len(),
        |eta, out| {
            let b = train.height * canonical_bump(eta / w);
            for (o, c) in out.iter_mut().zip(&centers) {
                let xi = c + eta;
                *o = C64::from_polar(b * (-tg * xi * xi).exp(), x * xi + t * xi * xi);
            }
        },
    )?;
    Ok(vals.into_iter().sum())
}

/// `P_γ f` (or the free evolution when `gamma` is `None`) for product-form
/// data, as a product of one-dimensional integrals.
pub fn evaluate_separable(
    f: &SpectrumDescriptor,
    gamma: Option<f64>,
    p: &SpaceTimePoint,
) -> Result<C64> {
    check_dim(f, p)?;
    if let Some(g) = gamma {
        check_gamma(g)?;
    }
    let sep = f.separable().ok_or_else(|| Error::Unsupported {
        kind: f.kind(),
        what: "product-form evaluation".into(),
    })?;
    let tg = dissipation_rate(p.t, gamma);
    let mut acc = C64::new(sep.amplitude, 0.0);
    for ((axis, x), m) in sep.axes.iter().zip(&p.x).zip(&sep.shift) {
        acc *= train_integral(axis, x + m, p.t, tg)?;
        if acc.norm() == 0.0 {
            break;
        }
    }
    Ok(acc / (2.0 * PI).powi(f.dim() as i32))
}

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    // Γ(d/2) by the recurrence from Γ(1/2) or Γ(1)
    let mut g = if d % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if d % 2 == 0 { 1.0 } else { 0.5 };
    while x < d as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    2.0 * PI.powf(d as f64 / 2.0) / g
}

/// `P_γ f(0,t)` for the radial annulus profile, as a one-dimensional
/// integral in `|ξ|`.
fn annulus_at_origin(d: usize, r: f64, gamma: f64, t: f64) -> Result<C64> {
    let bump = RadialBump::default();
    let tg = dissipation_rate(t, Some(gamma));
    let lo = bump.inner * r;
    let mut hi = bump.outer * r;
    if tg > 0.0 {
        hi = hi.min((DISSIPATION_CUTOFF / tg).sqrt());
    }
    if hi <= lo {
        return Ok(C64::new(0.0, 0.0));
    }
    let grad = 2.0 * (t + tg) * hi;
    let panels = oscillation_panels(hi - lo, grad).max(48);
    let est = Adaptive::default().integrate(lo, hi, panels, |rho| {
        let w = bump.eval_radius(rho / r) * rho.powi(d as i32 - 1);
        C64::from_polar(w * (-tg * rho * rho).exp(), t * rho * rho)
    })?;
    Ok(est.value * sphere_area(d) / (2.0 * PI).powi(d as i32))
}

/// `P_γ f(0,t)` by the cheapest exact route the descriptor allows.
pub fn evaluate_at_origin(f: &SpectrumDescriptor, gamma: f64, t: f64) -> Result<C64> {
    check_gamma(gamma)?;
    let p = SpaceTimePoint::new(vec![0.0; f.dim()], t)?;
    match f {
        SpectrumDescriptor::Annulus { d, r } => annulus_at_origin(*d, *r, gamma, t),
        _ if f.separable().is_some() => evaluate_separable(f, Some(gamma), &p),
        _ => evaluate_p_gamma(f, gamma, &p),
    }
}

/// Large-time tail of `P_γ f`: the analytic bound and a sampled check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub bound: f64,
    pub sampled_sup: f64,
    pub t_min: f64,
    pub samples: usize,
    /// `sampled_sup ≤ TAIL_SLACK · bound`
    pub holds: bool,
}

pub const TAIL_SLACK: f64 = 10.0;
pub const TAIL_SAMPLES: usize = 64;

/// `e^{−R^ε}·R^{d/2}·‖f‖₂`, checked against `|P_γ f(0,t)|` on
/// [`TAIL_SAMPLES`] geometric times in `(R^{−2/γ+ε}, 1)`.
pub fn dissipative_tail_bound(f: &SpectrumDescriptor, gamma: f64, eps: f64) -> Result<TailCheck> {
    check_gamma(gamma)?;
    if !(eps > 0.0) {
        return Err(invalid("eps", "must be positive"));
    }
    let r = f.scale();
    let d = f.dim() as f64;
    let bound = (-r.powf(eps)).exp() * r.powf(d / 2.0) * f.l2_norm()?;
    let t_min = r.powf(-2.0 / gamma + eps);
    if !(t_min < 1.0) {
        return Err(invalid("R", format!("R^(-2/γ+ε) = {t_min} leaves no tail window")));
    }
    let mut sup: f64 = 0.0;
    for k in 0..TAIL_SAMPLES {
        let frac = (k as f64 + 0.5) / TAIL_SAMPLES as f64;
        let t = t_min * (1.0 / t_min).powf(frac);
        sup = sup.max(evaluate_at_origin(f, gamma, t)?.norm());
    }
    Ok(TailCheck {
        bound,
        sampled_sup: sup,
        t_min,
        samples: TAIL_SAMPLES,
        holds: sup <= TAIL_SLACK * bound,
    })
}

/// `C_l(t) = (2π)^{−d} ∫_{[−π,π]^d} φ(ξ) e^{−t^γR²|ξ|²} e^{−iξ·l} dξ`.
pub fn torus_coefficient(l: &[i64], t: f64, r: f64, gamma: f64) -> Result<TorusCoefficient> {
    check_gamma(gamma)?;
    if l.is_empty() {
        return Err(invalid("l", "needs at least one coordinate"));
    }
    if !(r >= 1.0) {
        return Err(invalid("R", "must be ≥ 1"));
    }
    let t_max = r.powf(-2.0 / gamma + DEFAULT_SPLIT_EPS);
    if !(t > 0.0 && t <= t_max * (1.0 + 1e-12)) {
        return Err(invalid("t", format!("need 0 < t ≤ R^(-2/γ+ε) = {t_max}")));
    }
    let d = l.len();
    let damp = t.powf(gamma) * r * r;
    let value = if d >= 2 {
        let n = norm(&l.iter().map(|&k| k as f64).collect::<Vec<_>>());
        torus_radial(d, n, damp)?
    } else {
        torus_cartesian(l, damp)?
    };
    Ok(TorusCoefficient {
        l: l.to_vec(),
        t,
        value,
    })
}

/// `φ e^{Φ}` is radial, so `C_l` depends on `|l| = n` only:
/// `C_l = (2π)^{−d} |S^{d−2}| ∫ ρ^{d−1} φ(ρ) e^{−damp·ρ²} ∫_0^π cos(nρ cos θ) sin^{d−2}θ dθ dρ`.
fn torus_radial(d: usize, n: f64, damp: f64) -> Result<C64> {
    let bump = RadialBump::default();
    // ≤ 8 radians of phase per 16-point panel keeps the angular rule at rounding level
    let angular_panels = (n * bump.outer * PI / 8.0).ceil() as usize + 2;
    let angular: Vec<(f64, f64)> = composite_nodes(0.0, PI, angular_panels)
        .map(|(th, w)| (th.cos(), w * th.sin().powi(d as i32 - 2)))
        .collect();
    let panels = oscillation_panels(bump.outer - bump.inner, n).max(24);
    let est = Adaptive::default().integrate_real(bump.inner, bump.outer, panels, |rho| {
        let w = bump.eval_radius(rho);
        if w == 0.0 {
            return 0.0;
        }
        let shell: f64 = angular.iter().map(|(c, wt)| wt * (n * rho * c).cos()).sum();
        rho.powi(d as i32 - 1) * w * (-damp * rho * rho).exp() * shell
    })?;
    Ok(C64::new(sphere_area(d - 1) * est / (2.0 * PI).powi(d as i32), 0.0))
}

fn torus_cartesian(l: &[i64], damp: f64) -> Result<C64> {
    let d = l.len();
    let bump = RadialBump::default();
    let o = bump.outer;
    let cell = vec![Span::Interval(-o, o); d];
    let panels: Vec<usize> = l
        .iter()
        .map(|&li| oscillation_panels(2.0 * o, li.unsigned_abs() as f64).max(24))
        .collect();
    let est = Adaptive::default().tensor(&cell, &panels, &|xi: &[f64]| {
        let rad = norm(xi);
        let w = bump.eval_radius(rad);
        if w == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let phase: f64 = -xi.iter().zip(l).map(|(x, k)| x * *k as f64).sum::<f64>();
        C64::from_polar(w * (-damp * rad * rad).exp(), phase)
    })?;
    Ok(est.value / (2.0 * PI).powi(d as i32))
}

/// Decay order of `|C_{(n,0,…,0)}(t)|` against `1+n` for `1 ≤ n ≤ n_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Plain log–log fit over every `n`; the small-`n` plateau and the
    /// zeros of the oscillation both bias it upward.
    pub raw: f64,
    /// Fit of the envelope `max_{n ≤ m ≤ n_max} |C_m|` over `n ≥ n_max/4`.
    pub envelope: f64,
    pub moduli: Vec<f64>,
}

pub fn coefficient_decay_slope(
    d: usize,
    t: f64,
    r: f64,
    gamma: f64,
    n_max: i64,
) -> Result<DecayFit> {
    if n_max < 8 {
        return Err(invalid("n_max", "need at least 8 coefficients"));
    }
    let mut moduli = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max {
        let mut l = vec![0i64; d];
        l[0] = n;
        moduli.push(torus_coefficient(&l, t, r, gamma)?.value.norm());
    }
    let xs: Vec<f64> = (1..=n_max).map(|n| 1.0 + n as f64).collect();
    let (rx, ry): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(&moduli)
        .filter(|(_, c)| **c > 0.0)
        .map(|(x, c)| (*x, *c))
        .unzip();
    let raw = crate::fit::loglog_fit(&rx, &ry)?.slope;
    let mut env = moduli.clone();
    for i in (0..env.len() - 1).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let start = (n_max / 4) as usize;
    let envelope = crate::fit::loglog_fit(&xs[start..], &env[start..])?.slope;
    Ok(DecayFit {
        raw,
        envelope,
        moduli,
    })
}

/// Counterexample data must be evaluated inside the `x`-box of `Ω*`.
fn check_box(cp: &CounterexampleParams, p: &SpaceTimePoint) -> Result<()> {
    let d = cp.d();
    if p.x.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: p.x.len(),
        });
    }
    let (lo, hi) = cp.x1_window();
    let slack = 1e-12 * lo.abs();
    if p.x[0] < lo - slack || p.x[0] > hi + slack {
        return Err(invalid("x", format!("x₁ = {} outside [{lo}, {hi}]", p.x[0])));
    }
    let c1 = cp.constants.c1;
    if let Some(bad) = p.x[1..].iter().find(|v| v.abs() > c1 * (1.0 + 1e-12)) {
        return Err(invalid("x", format!("coordinate {bad} outside [−c₁, c₁]")));
    }
    Ok(())
}

/// `I₁ = ∫φ(u) e^{i(uR^{1/2}(x₁+2R^{γ/2}t) + Ru²t)} e^{−(R^{γ/2}+uR^{1/2})²t^γ} du`.
pub fn first_factor(cp: &CounterexampleParams, x1: f64, t: f64) -> Result<C64> {
    let r = cp.r();
    let sr = r.sqrt();
    let h = cp.comb.height;
    let tg = dissipation_rate(t, Some(cp.gamma()));
    let lin = sr * (x1 + 2.0 * h * t);
    let grad = lin.abs() + 2.0 * r * t + 2.0 * tg * (h + sr) * sr;
    let panels = oscillation_panels(2.0 * crate::quad::BUMP_REACH, grad).max(2);
    let e = Adaptive::default().integrate_span(
        Span::Bump {
            center: 0.0,
            width: 1.0,
        },
        panels,
        |u| {
            let a = h + u * sr;
            C64::from_polar(canonical_bump(u) * (-a * a * tg).exp(), u * lin + r * u * u * t)
        },
    )?;
    Ok(e.value)
}

/// Lattice indices `⌈R^{γ/2}/D⌉ ≤ ℓ < ⌈2R^{γ/2}/D⌉`.
pub fn lattice_indices(cp: &CounterexampleParams) -> std::ops::Range<i64> {
    cp.comb.ell_lo..cp.comb.ell_hi
}

/// `e^{i(Dℓx + D²ℓ²t)}` for every lattice index.
pub fn comb_terms(cp: &CounterexampleParams, x: f64, t: f64) -> Vec<C64> {
    let dd = cp.spacing();
    lattice_indices(cp)
        .map(|l| {
            let lf = l as f64;
            C64::from_polar(1.0, dd * lf * x + dd * dd * lf * lf * t)
        })
        .collect()
}

/// `h(ℓ) = ∫φ(ξ) e^{i[ξ(x+2Dtℓ)+ξ²t]} e^{−(ξ+Dℓ)²t^γ} dξ` for every lattice
/// index.
pub fn comb_envelopes(cp: &CounterexampleParams, x: f64, t: f64) -> Result<Vec<C64>> {
    let dd = cp.spacing();
    let tg = dissipation_rate(t, Some(cp.gamma()));
    let ells: Vec<f64> = lattice_indices(cp).map(|l| l as f64).collect();
    let top = ells.last().copied().unwrap_or(0.0);
    let grad = x.abs() + 2.0 * dd * t * top + 2.0 * t + 2.0 * tg * (dd * top + 1.0);
    let panels = oscillation_panels(2.0 * crate::quad::BUMP_REACH, grad).max(2);
    Adaptive::default().integrate_span_vec(
        Span::Bump {
            center: 0.0,
            width: 1.0,
        },
        panels,
        ells.len(),
        |xi, out| {
            let b = canonical_bump(xi);
            for (o, l) in out.iter_mut().zip(&ells) {
                let a = xi + dd * l;
                *o = C64::from_polar(b * (-a * a * tg).exp(), xi * (x + 2.0 * dd * t * l) + xi * xi * t);
            }
        },
    )
}

/// `I_j = Σ_ℓ e^{i(Dℓx_j + D²ℓ²t)} h(ℓ)`.
pub fn comb_factor(cp: &CounterexampleParams, x: f64, t: f64) -> Result<C64> {
    let h = comb_envelopes(cp, x, t)?;
    Ok(comb_terms(cp, x, t).iter().zip(&h).map(|(a, b)| a * b).sum())
}

/// `|P_γ f(x,t)|·(2π)^d = |I₁|·∏|I_j|` for the lattice-comb data.
pub fn factorized_evaluate(cp: &CounterexampleParams, p: &SpaceTimePoint) -> Result<FactorizedEvaluation> {
    check_box(cp, p)?;
    let i1 = first_factor(cp, p.x[0], p.t)?;
    let ij = p.x[1..]
        .iter()
        .map(|&x| comb_factor(cp, x, p.t))
        .collect::<Result<Vec<_>>>()?;
    let product_modulus = i1.norm() * ij.iter().map(|c| c.norm()).product::<f64>();
    Ok(FactorizedEvaluation {
        i1,
        ij,
        product_modulus,
    })
}

/// Summation by parts of one comb factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbelSplit {
    /// `I_j` summed directly.
    pub direct: C64,
    /// `S_j(2R^{γ/2}/D)·h(L)` with `L = ⌈2R^{γ/2}/D⌉ − 1`.
    pub main: C64,
    /// `4(R^{γ/2}t + (tR)^γ)·sup_u |S_j(u)|`
    pub e1_bound: f64,
}

/// Main term and remainder bound of `I_j` for axis `j` (`1 ≤ j < d`,
/// counting the first axis as 0).
pub fn abel_main_plus_error(cp: &CounterexampleParams, p: &SpaceTimePoint, j: usize) -> Result<AbelSplit> {
    check_box(cp, p)?;
    if j == 0 || j >= cp.d() {
        return Err(invalid("j", format!("comb axes are 1..{}, got {j}", cp.d())));
    }
    let x = p.x[j];
    let t = p.t;
    let a = comb_terms(cp, x, t);
    let h = comb_envelopes(cp, x, t)?;
    let mut partial = C64::new(0.0, 0.0);
    let mut sup: f64 = 0.0;
    for term in &a {
        partial += term;
        sup = sup.max(partial.norm());
    }
    let direct = a.iter().zip(&h).map(|(a, b)| a * b).sum();
    let main = partial * h.last().copied().unwrap_or_default();
    let r = cp.r();
    let e1_bound = 4.0 * (cp.comb.height * t + (t * r).powf(cp.gamma())) * sup;
    Ok(AbelSplit {
        direct,
        main,
        e1_bound,
    })
}
