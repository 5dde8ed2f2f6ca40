//! Fourier-side initial data.
//!
//! Profiles are symbolic: a [`SpectrumDescriptor`] knows how to evaluate
//! `f̂(ξ)`, which boxes carry its support, and (for product-form data) how it
//! factors across axes. Norms are computed by quadrature on the support
//! cells, so no grid is ever committed to.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad::{Adaptive, Span};

/// The unnormalized mollifier `exp(−1/(1−u²))` on `(−1, 1)`.
pub fn mollifier(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

/// `∫_{−1}^{1} exp(−1/(1−u²)) du`, computed once.
pub fn mollifier_mass() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| {
        Adaptive::with_tol(1e-15)
            .integrate_real(-1.0, 1.0, 8, mollifier)
            .expect("mollifier mass converges")
    })
}

/// Unit-integral bump on `[−1, 1]`.
pub fn canonical_bump(u: f64) -> f64 {
    mollifier(u) / mollifier_mass()
}

/// Translated and dilated mollifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump1D {
    pub center: f64,
    pub width: f64,
    pub normalization: f64,
}

impl Bump1D {
    pub fn new(center: f64, width: f64, normalization: f64) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(invalid("width", "must be positive"));
        }
        if !(normalization > 0.0) {
            return Err(invalid("normalization", "must be positive"));
        }
        Ok(Bump1D {
            center,
            width,
            normalization,
        })
    }

    /// Normalized so that the integral over the line is 1.
    pub fn canonical(center: f64, width: f64) -> Result<Self> {
        Bump1D::new(center, width, 1.0 / (width * mollifier_mass()))
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.normalization * mollifier((x - self.center) / self.width)
    }
}

/// C^∞ step: 0 for `u ≤ 0`, 1 for `u ≥ 1`.
pub fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let g = |v: f64| (-1.0 / v).exp();
    let a = g(u);
    a / (a + g(1.0 - u))
}

/// Radial bump equal to 1 on `{1/2 ≤ |ξ| ≤ 2}` and supported in
/// `{inner ≤ |ξ| ≤ outer}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialBump {
    pub inner: f64,
    pub outer: f64,
}

impl Default for RadialBump {
    fn default() -> Self {
        RadialBump {
            inner: 1.0 / 3.0,
            outer: 3.0,
        }
    }
}

impl RadialBump {
    pub const PLATEAU: (f64, f64) = (0.5, 2.0);

    pub fn eval_radius(&self, r: f64) -> f64 {
        let (lo, hi) = Self::PLATEAU;
        let rise = smooth_step((r - self.inner) / (lo - self.inner));
        let fall = 1.0 - smooth_step((r - hi) / (self.outer - hi));
        rise * fall
    }

    pub fn eval(&self, xi: &[f64]) -> f64 {
        self.eval_radius(norm(xi))
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Ceiling that snaps values within `1e-9` (relative) of an integer, so
/// that powers like `4096^{2/3}` land on the intended lattice count.
pub fn ceil_snap(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as i64
    } else {
        x.ceil() as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: usize,
    pub gamma: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub s: f64,
}

impl ModelParams {
    pub fn new(d: usize, gamma: f64, r: f64, s: f64) -> Result<Self> {
        if d < 1 {
            return Err(invalid("d", "dimension must be at least 1"));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(invalid("gamma", format!("must be positive, got {gamma}")));
        }
        if !(r >= 1.0) || !r.is_finite() {
            return Err(invalid("R", format!("must be ≥ 1, got {r}")));
        }
        if !(s >= 0.0) || !s.is_finite() {
            return Err(invalid("s", format!("must be ≥ 0, got {s}")));
        }
        Ok(ModelParams { d, gamma, r, s })
    }
}

/// One axis of a product-form profile: `count` copies of a canonical bump of
/// the given `width`, centered at `first + k·spacing` and scaled by `height`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BumpTrain {
    pub first: f64,
    pub spacing: f64,
    pub count: usize,
    pub width: f64,
    pub height: f64,
}

impl BumpTrain {
    pub fn single(center: f64, width: f64, height: f64) -> Self {
        BumpTrain {
            first: center,
            spacing: 0.0,
            count: 1,
            width,
            height,
        }
    }

    pub fn center(&self, k: usize) -> f64 {
        self.first + k as f64 * self.spacing
    }

    pub fn teeth(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|k| self.center(k))
    }

    pub fn eval(&self, xi: f64) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let k = if self.count == 1 {
            0
        } else {
            ((xi - self.first) / self.spacing)
                .round()
                .clamp(0.0, (self.count - 1) as f64) as usize
        };
        self.height * canonical_bump((xi - self.center(k)) / self.width)
    }

    pub fn support(&self) -> (f64, f64) {
        let last = self.center(self.count.saturating_sub(1));
        (self.first - self.width, last + self.width)
    }

    /// `(min |ξ|, max |ξ|)` over the support.
    pub fn abs_range(&self) -> (f64, f64) {
        let (lo, hi) = self.support();
        let max = lo.abs().max(hi.abs());
        let min = if lo <= 0.0 && hi >= 0.0 {
            0.0
        } else {
            self.teeth()
                .map(|c| ((c - self.width).abs()).min((c + self.width).abs()))
                .fold(f64::INFINITY, f64::min)
        };
        (min, max)
    }
}

/// `f̂(ξ) = amplitude · ∏ axes[i](ξ_i) · e^{i shift·ξ}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Separable {
    pub amplitude: f64,
    pub axes: Vec<BumpTrain>,
    pub shift: Vec<f64>,
}

impl Separable {
    pub fn eval(&self, xi: &[f64]) -> C64 {
        let mut v = self.amplitude;
        for (axis, &x) in self.axes.iter().zip(xi) {
            v *= axis.eval(x);
            if v == 0.0 {
                return C64::new(0.0, 0.0);
            }
        }
        let phase: f64 = self.shift.iter().zip(xi).map(|(l, x)| l * x).sum();
        C64::from_polar(v, phase)
    }
}

/// Scales of the lattice-comb profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CombScales {
    /// `D = R^{(d+γ)/(2(d+1))}`
    pub spacing: f64,
    /// `R^{γ/2}`
    pub height: f64,
    /// `R^{γ/2}/D`
    pub lattice: f64,
    /// first index `⌈R^{γ/2}/D⌉`
    pub ell_lo: i64,
    /// one past the last index, `⌈2R^{γ/2}/D⌉`
    pub ell_hi: i64,
}

impl CombScales {
    pub fn new(d: usize, gamma: f64, r: f64) -> Self {
        let spacing = r.powf((d as f64 + gamma) / (2.0 * (d as f64 + 1.0)));
        let height = r.powf(gamma / 2.0);
        let lattice = height / spacing;
        CombScales {
            spacing,
            height,
            lattice,
            ell_lo: ceil_snap(lattice),
            ell_hi: ceil_snap(2.0 * lattice),
        }
    }

    pub fn count(&self) -> usize {
        (self.ell_hi - self.ell_lo).max(0) as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SpectrumDescriptor {
    /// `amplitude·(2π)^d ∏ w⁻¹φ((ξ_i − center_i)/w)`: tends to the plane wave
    /// `amplitude·e^{ix·center}` as `width → 0`.
    PlaneWave {
        center: Vec<f64>,
        width: f64,
        amplitude: f64,
    },
    /// `∏_j R⁻¹ φ(ξ_j/R)`.
    Case1 { d: usize, r: f64 },
    /// The lattice-comb counterexample profile at `|ξ| ~ R^{γ/2}`.
    Case3 { d: usize, gamma: f64, r: f64 },
    /// `φ(ξ/R)` with the radial bump `φ`.
    Annulus { d: usize, r: f64 },
    /// `e^{iξ·l/R} f̂(ξ)`.
    Modulated {
        base: Box<SpectrumDescriptor>,
        shift: Vec<i64>,
        r: f64,
    },
}

impl SpectrumDescriptor {
    pub fn plane_wave(center: Vec<f64>, width: f64, amplitude: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(invalid("center", "needs at least one coordinate"));
        }
        if !(width > 0.0) {
            return Err(invalid("width", "must be positive"));
        }
        Ok(SpectrumDescriptor::PlaneWave {
            center,
            width,
            amplitude,
        })
    }

    pub fn case1(d: usize, r: f64) -> Result<Self> {
        ModelParams::new(d, 1.0, r, 0.0)?;
        Ok(SpectrumDescriptor::Case1 { d, r })
    }

    pub fn case3(model: &ModelParams) -> Result<Self> {
        if model.d < 2 {
            return Err(invalid("d", "lattice-comb profile needs d ≥ 2"));
        }
        let scales = CombScales::new(model.d, model.gamma, model.r);
        if scales.spacing <= 2.0 {
            return Err(invalid(
                "R",
                format!("comb spacing D = {} must exceed the bump width 2", scales.spacing),
            ));
        }
        if scales.count() == 0 {
            return Err(invalid("R", "no lattice translates in range"));
        }
        Ok(SpectrumDescriptor::Case3 {
            d: model.d,
            gamma: model.gamma,
            r: model.r,
        })
    }

    pub fn annulus(d: usize, r: f64) -> Result<Self> {
        ModelParams::new(d, 1.0, r, 0.0)?;
        Ok(SpectrumDescriptor::Annulus { d, r })
    }

    pub fn modulated(base: SpectrumDescriptor, shift: Vec<i64>, r: f64) -> Result<Self> {
        if shift.len() != base.dim() {
            return Err(Error::Dimension {
                expected: base.dim(),
                got: shift.len(),
            });
        }
        if !(r >= 1.0) {
            return Err(invalid("R", "must be ≥ 1"));
        }
        Ok(SpectrumDescriptor::Modulated {
            base: Box::new(base),
            shift,
            r,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SpectrumDescriptor::PlaneWave { .. } => "plane-wave-surrogate",
            SpectrumDescriptor::Case1 { .. } => "case1-product",
            SpectrumDescriptor::Case3 { .. } => "case3-counterexample",
            SpectrumDescriptor::Annulus { .. } => "annulus-bump",
            SpectrumDescriptor::Modulated { .. } => "modulated",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SpectrumDescriptor::PlaneWave { center, .. } => center.len(),
            SpectrumDescriptor::Case1 { d, .. }
            | SpectrumDescriptor::Case3 { d, .. }
            | SpectrumDescriptor::Annulus { d, .. } => *d,
            SpectrumDescriptor::Modulated { base, .. } => base.dim(),
        }
    }

    /// Frequency scale the profile was built for.
    pub fn scale(&self) -> f64 {
        match self {
            SpectrumDescriptor::PlaneWave { center, .. } => norm(center),
            SpectrumDescriptor::Case1 { r, .. } | SpectrumDescriptor::Annulus { r, .. } => *r,
            SpectrumDescriptor::Case3 { gamma, r, .. } => r.powf(gamma / 2.0),
            SpectrumDescriptor::Modulated { base, .. } => base.scale(),
        }
    }

    /// Total modulation `l/R` (zero for unmodulated data).
    pub fn modulation(&self) -> Vec<f64> {
        match self {
            SpectrumDescriptor::Modulated { base, shift, r } => {
                let mut m = base.modulation();
                for (a, l) in m.iter_mut().zip(shift) {
                    *a += *l as f64 / r;
                }
                m
            }
            other => vec![0.0; other.dim()],
        }
    }

    /// Product form, when the profile has one.
    pub fn separable(&self) -> Option<Separable> {
        match self {
            SpectrumDescriptor::PlaneWave {
                center,
                width,
                amplitude,
            } => {
                let d = center.len();
                Some(Separable {
                    amplitude: amplitude * (2.0 * PI).powi(d as i32),
                    axes: center
                        .iter()
                        .map(|&c| BumpTrain::single(c, *width, 1.0 / width))
                        .collect(),
                    shift: vec![0.0; d],
                })
            }
            SpectrumDescriptor::Case1 { d, r } => Some(Separable {
                amplitude: r.powi(-(*d as i32)),
                axes: vec![BumpTrain::single(0.0, *r, 1.0); *d],
                shift: vec![0.0; *d],
            }),
            SpectrumDescriptor::Case3 { d, gamma, r } => {
                let sc = CombScales::new(*d, *gamma, *r);
                let mut axes = vec![BumpTrain::single(sc.height, r.sqrt(), 1.0)];
                let comb = BumpTrain {
                    first: sc.spacing * sc.ell_lo as f64,
                    spacing: sc.spacing,
                    count: sc.count(),
                    width: 1.0,
                    height: 1.0,
                };
                axes.extend(std::iter::repeat(comb).take(d - 1));
                Some(Separable {
                    amplitude: r.powf(-0.5),
                    axes,
                    shift: vec![0.0; *d],
                })
            }
            SpectrumDescriptor::Annulus { .. } => None,
            SpectrumDescriptor::Modulated { base, shift, r } => {
                let mut sep = base.separable()?;
                for (s, l) in sep.shift.iter_mut().zip(shift) {
                    *s += *l as f64 / r;
                }
                Some(sep)
            }
        }
    }

    pub fn eval(&self, xi: &[f64]) -> Result<C64> {
        if xi.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: xi.len(),
            });
        }
        if xi.iter().any(|x| !x.is_finite()) {
            return Err(invalid("xi", "must be finite"));
        }
        Ok(self.eval_unchecked(xi))
    }

    pub(crate) fn eval_unchecked(&self, xi: &[f64]) -> C64 {
        match self {
            SpectrumDescriptor::Annulus { r, .. } => {
                let rad = norm(xi) / r;
                C64::new(RadialBump::default().eval_radius(rad), 0.0)
            }
            SpectrumDescriptor::Modulated { base, shift, r } => {
                let phase: f64 = shift.iter().zip(xi).map(|(l, x)| *l as f64 * x / r).sum();
                base.eval_unchecked(xi) * C64::from_polar(1.0, phase)
            }
            other => other
                .separable()
                .expect("product-form kinds are separable")
                .eval(xi),
        }
    }

    /// `(inner, outer)` radii with `supp f̂ ⊂ {inner ≤ |ξ| ≤ outer}`.
    pub fn support_annulus(&self) -> (f64, f64) {
        match self {
            SpectrumDescriptor::Annulus { r, .. } => {
                let b = RadialBump::default();
                (b.inner * r, b.outer * r)
            }
            SpectrumDescriptor::Modulated { base, .. } => base.support_annulus(),
            other => {
                let sep = other.separable().expect("separable");
                let (mut lo2, mut hi2) = (0.0, 0.0);
                for axis in &sep.axes {
                    let (lo, hi) = axis.abs_range();
                    lo2 += lo * lo;
                    hi2 += hi * hi;
                }
                (lo2.sqrt(), hi2.sqrt())
            }
        }
    }

    /// Boxes whose union carries the support; disjoint up to boundaries.
    pub fn cells(&self) -> Vec<Vec<Span>> {
        match self {
            SpectrumDescriptor::Annulus { d, r } => {
                let o = RadialBump::default().outer * r;
                vec![vec![Span::Interval(-o, o); *d]]
            }
            SpectrumDescriptor::Modulated { base, .. } => base.cells(),
            other => {
                let sep = other.separable().expect("separable");
                let per_axis: Vec<Vec<Span>> = sep
                    .axes
                    .iter()
                    .map(|a| {
                        a.teeth()
                            .map(|center| Span::Bump {
                                center,
                                width: a.width,
                            })
                            .collect()
                    })
                    .collect();
                cartesian(&per_axis)
            }
        }
    }

    /// Seed panel counts for a support cell, before any oscillation.
    pub(crate) fn cell_panels(&self) -> usize {
        match self {
            SpectrumDescriptor::Annulus { .. } => 48,
            SpectrumDescriptor::Modulated { base, .. } => base.cell_panels(),
            _ => 2,
        }
    }

    /// `(2π)^{−d} ∫ w(ξ) |f̂(ξ)|^p dξ` over the support cells.
    /// `(2π)^{−d} ∫ (1+|ξ|²)^s |f̂(ξ)|^p dξ`.
    fn weighted_integral(&self, power: i32, s: f64) -> Result<f64> {
        let d = self.dim() as i32;
        match self.separable() {
            Some(sep) => Ok(product_rule_integral(&sep, power, s)? / (2.0 * PI).powi(d)),
            None if s == 0.0 => self.tensor_integral(power, |_| 1.0),
            None => self.tensor_integral(power, |xi| {
                (1.0 + xi.iter().map(|x| x * x).sum::<f64>()).powf(s)
            }),
        }
    }

    /// Same integral by iterated quadrature over every support cell.
    fn tensor_integral<W>(&self, power: i32, weight: W) -> Result<f64>
    where
        W: Fn(&[f64]) -> f64,
    {
        let d = self.dim();
        let ctl = Adaptive::default();
        let panels = vec![self.cell_panels(); d];
        let mut total = 0.0;
        for cell in self.cells() {
            let est = ctl.tensor(&cell, &panels, &|xi: &[f64]| {
                let v = self.eval_unchecked(xi).norm();
                C64::new(weight(xi) * v.powi(power), 0.0)
            })?;
            total += est.value.re;
        }
        Ok(total / (2.0 * PI).powi(d as i32))
    }

    /// `‖f‖₂ = ((2π)^{−d} ∫ |f̂|²)^{1/2}`.
    pub fn l2_norm(&self) -> Result<f64> {
        self.sobolev_norm(0.0)
    }

    /// `‖f‖_{H^s} = ((2π)^{−d} ∫ (1+|ξ|²)^s |f̂|²)^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(invalid("s", "must be ≥ 0"));
        }
        if let SpectrumDescriptor::Modulated { base, .. } = self {
            return base.sobolev_norm(s);
        }
        Ok(self.weighted_integral(2, s)?.sqrt())
    }

    /// `∫ |f̂|` (no `(2π)^{−d}` factor).
    pub fn l1_mass(&self) -> Result<f64> {
        if let SpectrumDescriptor::Modulated { base, .. } = self {
            return base.l1_mass();
        }
        let d = self.dim() as i32;
        Ok(self.weighted_integral(1, 0.0)? * (2.0 * PI).powi(d))
    }

    /// `‖f‖₂` by iterated quadrature of `|f̂|²` on the support cells,
    /// ignoring both the modulation shortcut and any product structure.
    pub fn l2_norm_by_quadrature(&self) -> Result<f64> {
        Ok(self.tensor_integral(2, |_| 1.0)?.sqrt())
    }
}

/// One tooth's rule for `∫ φ(u)^p du` in the `tanh` variable, converged to
/// round-off. All teeth share it after translation and dilation.
fn tooth_rule(power: i32) -> Result<Vec<(f64, f64)>> {
    let reach = crate::quad::BUMP_REACH;
    let rule = |panels: usize| -> Vec<(f64, f64)> {
        crate::quad::composite_nodes(-reach, reach, panels)
            .map(|(v, w)| {
                let c = v.cosh();
                let u = v.tanh();
                (u, w / (c * c) * canonical_bump(u).powi(power))
            })
            .filter(|&(_, w)| w > 0.0)
            .collect()
    };
    let total = |r: &[(f64, f64)]| r.iter().map(|p| p.1).sum::<f64>();
    let mut panels = 2;
    let mut coarse = rule(panels);
    loop {
        let fine = rule(panels * 2);
        if (total(&fine) - total(&coarse)).abs() <= 1e-14 * total(&fine) {
            return Ok(coarse);
        }
        panels *= 2;
        if panels > 256 {
            return Err(Error::Quadrature {
                tol: 1e-14,
                estimate: total(&fine),
                nodes: fine.len(),
            });
        }
        coarse = fine;
    }
}

/// `∫ (1+|ξ|²)^s |f̂(ξ)|^p dξ` for a product-form profile: the tensor
/// product of per-axis tooth rules, walked axis by axis. For `s = 0` it
/// collapses to a product of one-dimensional sums.
fn product_rule_integral(sep: &Separable, power: i32, s: f64) -> Result<f64> {
    let tooth = tooth_rule(power)?;
    let axes: Vec<Vec<(f64, f64)>> = sep
        .axes
        .iter()
        .map(|a| {
            let scale = a.width * a.height.abs().powi(power);
            a.teeth()
                .flat_map(|c| tooth.iter().map(move |&(u, w)| (c + a.width * u, w * scale)))
                .collect()
        })
        .collect();
    let amp = sep.amplitude.abs().powi(power);
    if s == 0.0 {
        let prod: f64 = axes.iter().map(|ax| ax.iter().map(|p| p.1).sum::<f64>()).product();
        return Ok(amp * prod);
    }
    fn walk(axes: &[Vec<(f64, f64)>], r2: f64, w: f64, s: f64) -> f64 {
        match axes.split_first() {
            None => w * (1.0 + r2).powf(s),
            Some((ax, rest)) => ax
                .iter()
                .map(|&(x, wx)| walk(rest, r2 + x * x, w * wx, s))
                .sum(),
        }
    }
    Ok(amp * walk(&axes, 0.0, 1.0, s))
}

fn cartesian(per_axis: &[Vec<Span>]) -> Vec<Vec<Span>> {
    let mut out: Vec<Vec<Span>> = vec![Vec::new()];
    for choices in per_axis {
        let mut next = Vec::with_capacity(out.len() * choices.len());
        for prefix in &out {
            for &c in choices {
                let mut p = prefix.clone();
                p.push(c);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

impl fmt::Display for SpectrumDescriptor {
    /// `kind=… key=value …`; nested descriptors use a `base.` prefix.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fields = self.fields("");
        let parts: Vec<String> = fields.into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "{}", parts.join(" "))
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl SpectrumDescriptor {
    fn fields(&self, prefix: &str) -> Vec<(String, String)> {
        let key = |k: &str| format!("{prefix}{k}");
        let mut out = vec![(key("kind"), self.kind().to_string())];
        match self {
            SpectrumDescriptor::PlaneWave {
                center,
                width,
                amplitude,
            } => {
                out.push((key("center"), join(center)));
                out.push((key("width"), width.to_string()));
                out.push((key("amplitude"), amplitude.to_string()));
            }
            SpectrumDescriptor::Case1 { d, r } | SpectrumDescriptor::Annulus { d, r } => {
                out.push((key("d"), d.to_string()));
                out.push((key("R"), r.to_string()));
            }
            SpectrumDescriptor::Case3 { d, gamma, r } => {
                out.push((key("d"), d.to_string()));
                out.push((key("gamma"), gamma.to_string()));
                out.push((key("R"), r.to_string()));
            }
            SpectrumDescriptor::Modulated { base, shift, r } => {
                out.push((key("R"), r.to_string()));
                out.push((key("l"), join(shift)));
                out.extend(base.fields(&format!("{prefix}base.")));
            }
        }
        out
    }

    fn from_fields(map: &BTreeMap<String, String>, prefix: &str) -> Result<Self> {
        let get = |k: &'static str| -> Result<&String> {
            map.get(&format!("{prefix}{k}"))
                .ok_or_else(|| invalid(k, "missing field"))
        };
        let num = |k: &'static str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|e| invalid(k, e.to_string()))
        };
        let int = |k: &'static str| -> Result<usize> {
            get(k)?
                .parse::<usize>()
                .map_err(|e| invalid(k, e.to_string()))
        };
        match get("kind")?.as_str() {
            "plane-wave-surrogate" => {
                let center = get("center")?
                    .split(',')
                    .map(|s| s.parse::<f64>().map_err(|e| invalid("center", e.to_string())))
                    .collect::<Result<Vec<_>>>()?;
                SpectrumDescriptor::plane_wave(center, num("width")?, num("amplitude")?)
            }
            "case1-product" => SpectrumDescriptor::case1(int("d")?, num("R")?),
            "annulus-bump" => SpectrumDescriptor::annulus(int("d")?, num("R")?),
            "case3-counterexample" => {
                let m = ModelParams::new(int("d")?, num("gamma")?, num("R")?, 0.0)?;
                SpectrumDescriptor::case3(&m)
            }
            "modulated" => {
                let shift = get("l")?
                    .split(',')
                    .map(|s| s.parse::<i64>().map_err(|e| invalid("l", e.to_string())))
                    .collect::<Result<Vec<_>>>()?;
                let base = SpectrumDescriptor::from_fields(map, &format!("{prefix}base."))?;
                SpectrumDescriptor::modulated(base, shift, num("R")?)
            }
            other => Err(invalid("kind", format!("unknown kind `{other}`"))),
        }
    }
}

impl FromStr for SpectrumDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for tok in s.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| invalid("record", format!("token `{tok}` is not key=value")))?;
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(invalid("record", format!("duplicate key `{k}`")));
            }
        }
        SpectrumDescriptor::from_fields(&map, "")
    }
}

/// Overridable constants of the counterexample construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub delta0: f64,
    pub eps0: f64,
}

impl Constants {
    /// Defaults sit strictly inside every constraint. `c0` and `c1` are
    /// taken near the top of their ranges so the `x₁`-interval wraps as many
    /// periods of `y₁` as possible; `c4` keeps the accumulated phase drift
    /// `A_j·R^{γ/2}/D` of the comb sums at 1/2.
    pub fn defaults(d: usize, gamma: f64) -> Self {
        let c0 = 15.0 / 16.0 * 2f64.powi(-(d as i32 + 1));
        let c1 = 15.0 / 16.0 * c0 / 2.0;
        let c2 = c1 / 4.0;
        let c3 = (c2 / 4.0).min(1.0 / (2.0 * PI)) / 2.0;
        let c4 = 1.0 / (2.0 * PI * (4.0 * PI).powi(d as i32));
        Constants {
            c0,
            c1,
            c2,
            c3,
            c4,
            delta0: (gamma - 1.0) / (8.0 * (d as f64 + 1.0)),
            eps0: 0.01,
        }
    }

    /// Largest `c1` for which the `E(1)` bound is admissible everywhere on
    /// `Ω*`, where `Rt_x ≤ c₁/2`.
    pub fn e1_c1_cap(d: usize) -> f64 {
        let di = d as i32;
        2.0 * 2f64.powf(-(d as f64 + 5.0) / 2.0) / (2f64.powi(di + 1) * (2.0 * (4.0 * PI).powi(di)).powi(di - 2))
    }

    /// Defaults with `c1` lowered to 0.9 of the `E(1)` cap and `c2`, `c3`
    /// following it.
    pub fn e1_admissible(d: usize, gamma: f64) -> Self {
        let mut c = Constants::defaults(d, gamma);
        c.c1 = c.c1.min(0.9 * Constants::e1_c1_cap(d));
        c.c2 = c.c1 / 4.0;
        c.c3 = (c.c2 / 4.0).min(1.0 / (2.0 * PI)) / 2.0;
        c
    }

    pub fn validate(&self, d: usize, gamma: f64) -> Result<()> {
        let c = self;
        if !(c.c0 > 0.0 && c.c0 < 2f64.powi(-(d as i32 + 1))) {
            return Err(invalid("c0", "must lie in (0, 2^{-(d+1)})"));
        }
        if !(c.c1 > 0.0 && c.c1 / 2.0 < c.c0 / 4.0) {
            return Err(invalid("c1", "need 0 < c1/2 < c0/4"));
        }
        if !(c.c2 > 0.0 && c.c2 < c.c1 / 2.0) {
            return Err(invalid("c2", "need 0 < c2 < c1/2"));
        }
        if !(c.c3 > 0.0 && c.c3 < (c.c2 / 4.0).min(1.0 / (2.0 * PI))) {
            return Err(invalid("c3", "need 0 < c3 < min{c2/4, 1/(2π)}"));
        }
        if !(c.c4 > 0.0 && c.c4 < 0.5) {
            return Err(invalid("c4", "need 0 < c4 < 1/2"));
        }
        if !(c.delta0 > 0.0 && c.delta0 < (gamma - 1.0) / (4.0 * (d as f64 + 1.0))) {
            return Err(invalid("delta0", "need 0 < δ0 < (γ−1)/(4(d+1))"));
        }
        if !(c.eps0 > 0.0) {
            return Err(invalid("eps0", "must be positive"));
        }
        Ok(())
    }
}

/// Derived scales and constants of the counterexample at one `R`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CounterexampleParams {
    pub model: ModelParams,
    pub comb: CombScales,
    /// `Q = R^{(γ−1)(d−1)/(2(d+1))}`
    pub q_scale: f64,
    /// `μ₀ = (4π)^{−d}`
    pub mu0: f64,
    pub constants: Constants,
}

impl CounterexampleParams {
    pub fn new(model: ModelParams, constants: Constants) -> Result<Self> {
        let ModelParams { d, gamma, r, .. } = model;
        if d < 2 {
            return Err(invalid("d", "counterexample needs d ≥ 2"));
        }
        if !(gamma > 1.0 && gamma <= 2.0) {
            return Err(invalid("gamma", format!("counterexample needs 1 < γ ≤ 2, got {gamma}")));
        }
        constants.validate(d, gamma)?;
        let comb = CombScales::new(d, gamma, r);
        if comb.spacing <= 2.0 {
            return Err(invalid("R", "comb spacing D must exceed 2"));
        }
        let df = d as f64;
        Ok(CounterexampleParams {
            model,
            comb,
            q_scale: r.powf((gamma - 1.0) * (df - 1.0) / (2.0 * (df + 1.0))),
            mu0: (4.0 * PI).powi(-(d as i32)),
            constants,
        })
    }

    pub fn with_defaults(model: ModelParams) -> Result<Self> {
        CounterexampleParams::new(model, Constants::defaults(model.d, model.gamma))
    }

    pub fn d(&self) -> usize {
        self.model.d
    }

    pub fn gamma(&self) -> f64 {
        self.model.gamma
    }

    pub fn r(&self) -> f64 {
        self.model.r
    }

    /// `D`
    pub fn spacing(&self) -> f64 {
        self.comb.spacing
    }

    /// `R^{γ/2}/(D Q^{1/2})`, the size of one comb-sum main term.
    pub fn main_scale(&self) -> f64 {
        self.comb.lattice / self.q_scale.sqrt()
    }

    /// Relative defect of `Q^{d/(d−1)} = R^{γ/2}/D`.
    pub fn scale_identity_defect(&self) -> f64 {
        let df = self.d() as f64;
        let lhs = self.q_scale.powf(df / (df - 1.0));
        (lhs - self.comb.lattice).abs() / self.comb.lattice
    }

    pub fn descriptor(&self) -> Result<SpectrumDescriptor> {
        SpectrumDescriptor::case3(&self.model)
    }

    /// `[−c₁R^{γ/2−1}, −c₁R^{γ/2−1}/2]`, the `x₁`-window.
    pub fn x1_window(&self) -> (f64, f64) {
        let len = self.constants.c1 * self.r().powf(self.gamma() / 2.0 - 1.0);
        (-len, -len / 2.0)
    }

    /// `A₁ = πc₃/(4Q)`
    pub fn a1_half_width(&self) -> f64 {
        PI * self.constants.c3 / (4.0 * self.q_scale)
    }

    /// `A_j = πc₄/(μ₀ Q^{d/(d−1)})`
    pub fn aj_half_width(&self) -> f64 {
        let df = self.d() as f64;
        PI * self.constants.c4 / (self.mu0 * self.q_scale.powf(df / (df - 1.0)))
    }

    /// Admissible moduli: `q ≡ 0 (mod 4)`, `4μ₀Q ≤ q ≤ 4Q`.
    pub fn moduli(&self) -> Result<Vec<u64>> {
        let lo = 4.0 * self.mu0 * self.q_scale;
        let hi = 4.0 * self.q_scale;
        let first = ((lo / 4.0).ceil().max(1.0) as u64) * 4;
        let qs: Vec<u64> = (first..=hi.floor() as u64).step_by(4).collect();
        if qs.is_empty() {
            return Err(Error::NoAdmissibleModulus { lo, hi });
        }
        Ok(qs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Composite Simpson on a uniform grid; independent of the Gauss path.
    fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn mollifier_mass_against_simpson() {
        let oracle = simpson(-1.0, 1.0, 200_000, mollifier);
        assert!((mollifier_mass() - oracle).abs() < 1e-12);
        assert!((mollifier_mass() - 0.443_993_816_168_079_4).abs() < 1e-14);
    }

    #[test]
    fn bump_center_and_support() {
        let b = Bump1D::new(0.0, 1.0, 1.0).unwrap();
        assert_eq!(b.eval(0.0), (-1f64).exp());
        assert_eq!(b.eval(1.0), 0.0);
        assert_eq!(b.eval(-3.5), 0.0);
        let c = Bump1D::canonical(0.3, 0.7).unwrap();
        assert_eq!(c.eval(1.0), 0.0);
    }

    #[test]
    fn canonical_bump_has_unit_integral() {
        let b = Bump1D::canonical(0.0, 1.0).unwrap();
        let i = simpson(-1.0, 1.0, 100_000, |x| b.eval(x));
        assert!((i - 1.0).abs() < 1e-10);
        let w = Bump1D::canonical(2.0, 0.25).unwrap();
        let i = simpson(1.75, 2.25, 100_000, |x| w.eval(x));
        assert!((i - 1.0).abs() < 1e-10);
    }

    #[test]
    fn bump_rejects_bad_width() {
        assert!(Bump1D::new(0.0, 0.0, 1.0).is_err());
        assert!(Bump1D::new(0.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn radial_bump_plateau_and_support() {
        let b = RadialBump::default();
        assert_eq!(b.eval(&[1.0, 0.0]), 1.0);
        assert_eq!(b.eval(&[0.0, 0.5]), 1.0);
        assert_eq!(b.eval(&[2.0, 0.0]), 1.0);
        assert_eq!(b.eval(&[4.0, 0.0]), 0.0);
        assert_eq!(b.eval(&[0.3, 0.0]), 0.0);
        let v = b.eval(&[0.4, 0.0]);
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn radial_bump_is_smooth_at_junctions() {
        // All finite-difference derivatives up to order 4 vanish as the
        // junction is approached from the flat side and stay bounded on the
        // other side: the step is C^∞ and flat at both ends.
        let b = RadialBump::default();
        for &edge in &[1.0 / 3.0, 0.5, 2.0, 3.0] {
            let h = 1e-3;
            for k in 1..=4 {
                let left = fd(|r| b.eval_radius(r), edge - 2.0 * h * k as f64, h, k);
                let right = fd(|r| b.eval_radius(r), edge + 2.0 * h * k as f64, h, k);
                assert!(left.is_finite() && right.is_finite());
                assert!(left.abs().min(right.abs()) < 1e-12, "edge {edge}, order {k}");
            }
        }
        // monotone transitions
        let mut prev = 0.0;
        for i in 0..=100 {
            let r = 1.0 / 3.0 + (0.5 - 1.0 / 3.0) * i as f64 / 100.0;
            let v = b.eval_radius(r);
            assert!(v >= prev);
            prev = v;
        }
    }

    fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64, order: usize) -> f64 {
        // central difference of the given order via binomial stencil
        let mut acc = 0.0;
        let mut binom = 1.0;
        for j in 0..=order {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * binom * f(x + (order as f64 / 2.0 - j as f64) * h);
            binom = binom * (order - j) as f64 / (j + 1) as f64;
        }
        acc / h.powi(order as i32)
    }

    #[test]
    fn case3_lattice_count_d2_gamma2() {
        let sc = CombScales::new(2, 2.0, 4096.0);
        assert!((sc.spacing - 256.0).abs() < 1e-9);
        assert_eq!(sc.ell_lo, 16);
        assert_eq!(sc.ell_hi, 32);
        assert_eq!(sc.count(), 16);
    }

    #[test]
    fn case3_value_at_bump_centers() {
        let m = ModelParams::new(2, 2.0, 4096.0, 0.0).unwrap();
        let f = SpectrumDescriptor::case3(&m).unwrap();
        let center = canonical_bump(0.0);
        let v = f.eval(&[4096f64.powf(1.0), 256.0 * 17.0]).unwrap();
        let expected = 4096f64.powf(-0.5) * center * center;
        assert!((v.re - expected).abs() < 1e-15 && v.im == 0.0);
        // off the comb
        assert_eq!(f.eval(&[4096.0, 256.0 * 17.5]).unwrap().norm(), 0.0);
        // ℓ = 15 and ℓ = 32 are outside the lattice range
        assert_eq!(f.eval(&[4096.0, 256.0 * 15.0]).unwrap().norm(), 0.0);
        assert_eq!(f.eval(&[4096.0, 256.0 * 32.0]).unwrap().norm(), 0.0);
    }

    #[test]
    fn eval_rejects_dimension_mismatch() {
        let f = SpectrumDescriptor::case1(2, 8.0).unwrap();
        assert!(matches!(f.eval(&[1.0]), Err(Error::Dimension { .. })));
        assert!(f.eval(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn case3_support_annulus_is_comparable_to_scale() {
        for &r in &[4096.0, 65536.0] {
            let m = ModelParams::new(2, 2.0, r, 0.0).unwrap();
            let f = SpectrumDescriptor::case3(&m).unwrap();
            let (lo, hi) = f.support_annulus();
            let h = r.powf(1.0);
            assert!(lo >= h / 2.0 && hi <= 3.0 * h, "{lo} {hi} {h}");
        }
    }

    #[test]
    fn compact_support_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = ModelParams::new(2, 1.5, 2f64.powi(12), 0.0).unwrap();
        let descs = vec![
            SpectrumDescriptor::case1(2, 16.0).unwrap(),
            SpectrumDescriptor::case3(&m).unwrap(),
            SpectrumDescriptor::annulus(2, 16.0).unwrap(),
            SpectrumDescriptor::plane_wave(vec![20.0, -5.0], 0.5, 1.0).unwrap(),
            SpectrumDescriptor::modulated(SpectrumDescriptor::annulus(2, 16.0).unwrap(), vec![1, 2], 16.0)
                .unwrap(),
        ];
        for f in &descs {
            let (lo, hi) = f.support_annulus();
            let mut outside = 0;
            while outside < 10_000 {
                let rad = if rng.gen_bool(0.5) {
                    rng.gen_range(0.0..lo.max(1e-9))
                } else {
                    rng.gen_range(hi * 1.000_001..hi * 3.0)
                };
                if rad >= lo && rad <= hi {
                    continue;
                }
                let th: f64 = rng.gen_range(0.0..2.0 * PI);
                let xi = [rad * th.cos(), rad * th.sin()];
                assert_eq!(f.eval(&xi).unwrap().norm(), 0.0, "{} at {xi:?}", f.kind());
                outside += 1;
            }
        }
    }

    #[test]
    fn modulated_norm_is_base_norm() {
        let base = SpectrumDescriptor::annulus(2, 4.0).unwrap();
        let m = SpectrumDescriptor::modulated(base.clone(), vec![3, -2], 4.0).unwrap();
        assert_eq!(m.l2_norm().unwrap(), base.l2_norm().unwrap());
        let requad = m.l2_norm_by_quadrature().unwrap();
        assert!((requad - base.l2_norm().unwrap()).abs() < 1e-10 * requad);
    }

    #[test]
    fn case1_norm_scales_like_r_to_minus_half_d() {
        let mut prev: Option<f64> = None;
        for k in 2..6 {
            let r = 2f64.powi(k);
            let n = SpectrumDescriptor::case1(2, r).unwrap().l2_norm().unwrap();
            if let Some(p) = prev {
                // one doubling: ratio 2^{-d/2} = 1/2
                assert!((n / p - 0.5).abs() < 1e-9);
            }
            prev = Some(n);
        }
    }

    fn bump_l2() -> f64 {
        simpson(-1.0, 1.0, 200_000, |u| canonical_bump(u).powi(2)).sqrt()
    }

    #[test]
    fn case3_norm_factorizes_over_disjoint_teeth() {
        for &(d, gamma, r) in &[(2usize, 2.0, 4096.0), (2, 1.5, 65536.0), (3, 2.0, 4096.0)] {
            let m = ModelParams::new(d, gamma, r, 0.0).unwrap();
            let f = SpectrumDescriptor::case3(&m).unwrap();
            let count = CombScales::new(d, gamma, r).count() as f64;
            let oracle = (2.0 * PI).powf(-(d as f64) / 2.0)
                * r.powf(-0.25)
                * count.powf((d as f64 - 1.0) / 2.0)
                * bump_l2().powi(d as i32);
            let n = f.l2_norm().unwrap();
            assert!((n - oracle).abs() < 1e-6 * oracle, "{d} {gamma} {r}: {n} vs {oracle}");
        }
    }

    #[test]
    fn sobolev_zero_is_l2() {
        let f = SpectrumDescriptor::annulus(2, 8.0).unwrap();
        assert_eq!(f.sobolev_norm(0.0).unwrap(), f.l2_norm().unwrap());
        assert!(f.sobolev_norm(-1.0).is_err());
    }

    #[test]
    fn annulus_sobolev_within_support_bounds() {
        let r = 32.0;
        let f = SpectrumDescriptor::annulus(2, r).unwrap();
        let l2 = f.l2_norm().unwrap();
        for &s in &[0.5, 1.0, 2.0] {
            let hs = f.sobolev_norm(s).unwrap();
            let lo = (1.0 + (r / 3.0).powi(2)).powf(s / 2.0);
            let hi = (1.0 + (3.0 * r).powi(2)).powf(s / 2.0);
            assert!(hs >= lo * l2 && hs <= hi * l2);
            let ratio = hs / (r.powf(s) * l2);
            assert!(ratio >= 3f64.powf(-s) && ratio <= 3f64.powf(s) * 1.01);
        }
    }

    #[test]
    fn counterexample_scale_identity() {
        for &(d, gamma) in &[(2usize, 2.0), (2, 1.5), (3, 1.2), (4, 2.0)] {
            for k in [12, 16, 20, 24] {
                let m = ModelParams::new(d, gamma, 2f64.powi(k), 0.0).unwrap();
                let cp = CounterexampleParams::with_defaults(m).unwrap();
                assert!(cp.scale_identity_defect() <= 1e-12);
            }
        }
    }

    #[test]
    fn default_constants_satisfy_constraints() {
        for d in 2..6 {
            for &g in &[1.1, 1.5, 2.0] {
                Constants::defaults(d, g).validate(d, g).unwrap();
            }
        }
        let mut c = Constants::defaults(2, 2.0);
        c.c4 = 0.6;
        assert!(c.validate(2, 2.0).is_err());
        let m = ModelParams::new(2, 2.5, 4096.0, 0.0).unwrap();
        assert!(CounterexampleParams::with_defaults(m).is_err());
    }

    #[test]
    fn model_params_validation() {
        assert!(ModelParams::new(0, 1.0, 2.0, 0.0).is_err());
        assert!(ModelParams::new(2, -1.0, 2.0, 0.0).is_err());
        assert!(ModelParams::new(2, 1.0, 0.5, 0.0).is_err());
        assert!(ModelParams::new(2, 1.0, 2.0, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn descriptor_record_roundtrip(k in 2u32..10, d in 2usize..4, l0 in -5i64..5, l1 in -5i64..5, pick in 0usize..4) {
            let r = 2f64.powi(k as i32);
            let base = match pick {
                0 => SpectrumDescriptor::case1(d, r).unwrap(),
                1 => SpectrumDescriptor::annulus(d, r).unwrap(),
                2 => SpectrumDescriptor::case3(&ModelParams::new(d, 2.0, r.powi(2), 0.0).unwrap()).unwrap(),
                _ => SpectrumDescriptor::plane_wave(vec![r; d], 0.1, 1.5).unwrap(),
            };
            let mut shift = vec![0i64; d];
            shift[0] = l0;
            shift[1] = l1;
            let f = SpectrumDescriptor::modulated(base, shift, r).unwrap();
            let text = f.to_string();
            let back: SpectrumDescriptor = text.parse().unwrap();
            prop_assert_eq!(back, f);
        }
    }

    #[test]
    fn record_rejects_unknown_kind() {
        assert!("kind=gaussian d=2".parse::<SpectrumDescriptor>().is_err());
        assert!("kind=case1-product d=2 R=4 R=8".parse::<SpectrumDescriptor>().is_err());
    }
}
