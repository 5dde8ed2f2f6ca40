//! Composite Gauss–Legendre quadrature with panel doubling.
//!
//! Every integral in the crate goes through [`Adaptive`]: the interval is cut
//! into equal panels, each integrated with a fixed 16-point rule, and the panel
//! count doubles until two successive estimates agree relative to the
//! absolute-value integral of the integrand. Using `∫|g|` as the scale keeps the
//! stopping rule meaningful for oscillatory integrands whose value cancels to
//! nearly zero.

use std::cell::Cell;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub const RULE_POINTS: usize = 16;

/// Hard cap on integrand evaluations for one (possibly multi-dimensional)
/// integral.
pub const NODE_BUDGET: usize = 1 << 26;

struct Rule {
    nodes: [f64; RULE_POINTS],
    weights: [f64; RULE_POINTS],
}

fn rule() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| {
        let gl = GaussLegendre::new(RULE_POINTS).expect("16-point rule");
        let mut nodes = [0.0; RULE_POINTS];
        let mut weights = [0.0; RULE_POINTS];
        for (i, (x, w)) in gl.nodes().zip(gl.weights()).enumerate() {
            nodes[i] = *x;
            weights[i] = *w;
        }
        Rule { nodes, weights }
    })
}

/// Result of one quadrature: the value, `∫|g|` on the same nodes, and the
/// number of integrand evaluations spent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: C64,
    pub abs: f64,
    pub nodes: usize,
}

impl Estimate {
    pub const ZERO: Estimate = Estimate {
        value: C64 { re: 0.0, im: 0.0 },
        abs: 0.0,
        nodes: 0,
    };
}

/// Nodes and weights of the composite rule on `[a, b]` with `panels` panels.
pub fn composite_nodes(a: f64, b: f64, panels: usize) -> impl Iterator<Item = (f64, f64)> {
    let r = rule();
    let h = (b - a) / panels as f64;
    (0..panels).flat_map(move |p| {
        let mid = a + (p as f64 + 0.5) * h;
        (0..RULE_POINTS).map(move |k| (mid + 0.5 * h * r.nodes[k], 0.5 * h * r.weights[k]))
    })
}

fn composite_try<F>(a: f64, b: f64, panels: usize, f: &mut F) -> Result<Estimate>
where
    F: FnMut(f64) -> Result<C64>,
{
    let mut value = C64::new(0.0, 0.0);
    let mut abs = 0.0;
    for (x, w) in composite_nodes(a, b, panels) {
        let g = f(x)?;
        value += g * w;
        abs += g.norm() * w;
    }
    Ok(Estimate {
        value,
        abs,
        nodes: panels * RULE_POINTS,
    })
}

/// Fixed composite rule, no error control.
pub fn composite<F>(a: f64, b: f64, panels: usize, mut f: F) -> Estimate
where
    F: FnMut(f64) -> C64,
{
    composite_try(a, b, panels, &mut |x| Ok(f(x))).expect("infallible integrand")
}

/// Panel-doubling controller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adaptive {
    pub tol: f64,
    /// Absolute slack added to the relative test; lets near-zero integrals
    /// (slivers of a support cell) stop early.
    pub floor: f64,
    pub min_panels: usize,
    pub max_panels: usize,
}

impl Default for Adaptive {
    fn default() -> Self {
        Adaptive {
            tol: 1e-10,
            floor: 0.0,
            min_panels: 4,
            max_panels: 1 << 14,
        }
    }
}

impl Adaptive {
    pub fn with_tol(tol: f64) -> Self {
        Adaptive {
            tol,
            ..Adaptive::default()
        }
    }

    /// Integrate a fallible integrand over `[a, b]` starting from
    /// `initial_panels` (raised to `min_panels`).
    pub fn integrate_try<F>(&self, a: f64, b: f64, initial_panels: usize, mut f: F) -> Result<Estimate>
    where
        F: FnMut(f64) -> Result<C64>,
    {
        if !(b > a) {
            return Ok(Estimate::ZERO);
        }
        let mut panels = initial_panels.max(self.min_panels).min(self.max_panels);
        let mut coarse = composite_try(a, b, panels, &mut f)?;
        let mut spent = coarse.nodes;
        loop {
            if panels * 2 > self.max_panels {
                return Err(Error::Quadrature {
                    tol: self.tol,
                    estimate: coarse.value.norm(),
                    nodes: spent,
                });
            }
            panels *= 2;
            let fine = composite_try(a, b, panels, &mut f)?;
            spent += fine.nodes;
            let diff = (fine.value - coarse.value).norm();
            if diff <= self.tol * fine.abs + self.floor || fine.abs == 0.0 {
                return Ok(Estimate {
                    nodes: spent,
                    ..fine
                });
            }
            coarse = fine;
        }
    }

    pub fn integrate<F>(&self, a: f64, b: f64, initial_panels: usize, mut f: F) -> Result<Estimate>
    where
        F: FnMut(f64) -> C64,
    {
        self.integrate_try(a, b, initial_panels, |x| Ok(f(x)))
    }

    pub fn integrate_real<F>(&self, a: f64, b: f64, initial_panels: usize, mut f: F) -> Result<f64>
    where
        F: FnMut(f64) -> f64,
    {
        self.integrate(a, b, initial_panels, |x| C64::new(f(x), 0.0))
            .map(|e| e.value.re)
    }

    /// One-dimensional integral over a [`Span`].
    pub fn integrate_span<F>(&self, span: Span, initial_panels: usize, mut f: F) -> Result<Estimate>
    where
        F: FnMut(f64) -> C64,
    {
        let (a, b) = span.domain();
        self.integrate(a, b, initial_panels, |v| {
            let (x, jac) = span.map(v);
            f(x) * jac
        })
    }

    /// A family of integrals over one [`Span`] sharing nodes. `f(x, out)`
    /// fills `out` with the integrands at `x`; the whole family is refined
    /// until its worst member converges relative to the largest `∫|g_k|`.
    pub fn integrate_span_vec<F>(
        &self,
        span: Span,
        initial_panels: usize,
        n: usize,
        mut f: F,
    ) -> Result<Vec<C64>>
    where
        F: FnMut(f64, &mut [C64]),
    {
        let (a, b) = span.domain();
        let mut buf = vec![C64::new(0.0, 0.0); n];
        let mut pass = |panels: usize| {
            let mut value = vec![C64::new(0.0, 0.0); n];
            let mut abs = vec![0.0; n];
            for (v, w) in composite_nodes(a, b, panels) {
                let (x, jac) = span.map(v);
                f(x, &mut buf);
                let w = w * jac;
                for k in 0..n {
                    value[k] += buf[k] * w;
                    abs[k] += buf[k].norm() * w;
                }
            }
            let scale = abs.iter().cloned().fold(0.0, f64::max);
            (value, scale)
        };
        let mut panels = initial_panels.max(1).min(self.max_panels);
        let (mut coarse, _) = pass(panels);
        let mut spent = panels * RULE_POINTS;
        loop {
            if panels * 2 > self.max_panels {
                return Err(Error::Quadrature {
                    tol: self.tol,
                    estimate: coarse.iter().map(|c| c.norm()).fold(0.0, f64::max),
                    nodes: spent,
                });
            }
            panels *= 2;
            let (fine, scale) = pass(panels);
            spent += panels * RULE_POINTS;
            let diff = fine
                .iter()
                .zip(&coarse)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            if diff <= self.tol * scale + self.floor || scale == 0.0 {
                return Ok(fine);
            }
            coarse = fine;
        }
    }

    /// Iterated integral over the box `cell` (one `(lo, hi)` per axis).
    /// `panels[i]` seeds the panel count on axis `i`. A seed pass with the
    /// fixed rule fixes the scale `S ≈ ∫|f|`; the inner integral on axis `k`
    /// then stops once its change is below `tol·S/10` spread over the volume
    /// of the outer axes, so nearly empty slices are cheap. Fails once
    /// [`NODE_BUDGET`] evaluations are spent.
    pub fn tensor<F>(&self, cell: &[Span], panels: &[usize], f: &F) -> Result<Estimate>
    where
        F: Fn(&[f64]) -> C64,
    {
        assert_eq!(cell.len(), panels.len());
        let budget = Cell::new(0usize);
        let mut point = vec![0.0; cell.len()];
        let scale = seed_abs(0, cell, panels, f, &mut point, &budget)?;
        if !(scale > 0.0) {
            return Ok(Estimate {
                nodes: budget.get(),
                ..Estimate::ZERO
            });
        }
        let est = self.tensor_axis(0, cell, panels, f, &mut point, &budget, scale, 1.0)?;
        Ok(Estimate {
            nodes: budget.get(),
            ..est
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn tensor_axis<F>(
        &self,
        axis: usize,
        cell: &[Span],
        panels: &[usize],
        f: &F,
        point: &mut Vec<f64>,
        budget: &Cell<usize>,
        scale: f64,
        outer_volume: f64,
    ) -> Result<Estimate>
    where
        F: Fn(&[f64]) -> C64,
    {
        let (lo, hi) = cell[axis].domain();
        let last = axis + 1 == cell.len();
        let ctl = Adaptive {
            floor: if axis == 0 {
                self.floor
            } else {
                0.1 * self.tol * scale / outer_volume
            },
            ..*self
        };
        let (blo, bhi) = cell[axis].bounds();
        let inner_volume = outer_volume * (bhi - blo);
        ctl.integrate_try(lo, hi, panels[axis], |v| {
            let (x, jac) = cell[axis].map(v);
            point[axis] = x;
            if last {
                spend(budget, self.tol)?;
                Ok(f(point) * jac)
            } else {
                let mut sub = point.clone();
                self.tensor_axis(axis + 1, cell, panels, f, &mut sub, budget, scale, inner_volume)
                    .map(|e| e.value * jac)
            }
        })
    }
}

fn spend(budget: &Cell<usize>, tol: f64) -> Result<()> {
    let used = budget.get() + 1;
    if used > NODE_BUDGET {
        return Err(Error::Quadrature {
            tol,
            estimate: f64::NAN,
            nodes: used,
        });
    }
    budget.set(used);
    Ok(())
}

/// `∫|f|` over the box with the fixed seed rule.
fn seed_abs<F>(
    axis: usize,
    cell: &[Span],
    panels: &[usize],
    f: &F,
    point: &mut Vec<f64>,
    budget: &Cell<usize>,
) -> Result<f64>
where
    F: Fn(&[f64]) -> C64,
{
    let (lo, hi) = cell[axis].domain();
    let mut acc = 0.0;
    for (v, w) in composite_nodes(lo, hi, panels[axis].max(1)) {
        let (x, jac) = cell[axis].map(v);
        let w = w * jac;
        point[axis] = x;
        let v = if axis + 1 == cell.len() {
            spend(budget, f64::NAN)?;
            f(point).norm()
        } else {
            seed_abs(axis + 1, cell, panels, f, point, budget)?
        };
        acc += w * v;
    }
    Ok(acc)
}

/// One axis of a tensor-product domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Span {
    Interval(f64, f64),
    /// `[center − width, center + width]` carrying an integrand that vanishes
    /// to infinite order at both ends. Integrated after the substitution
    /// `ξ = center + width·tanh v`, `|v| ≤ BUMP_REACH`, which turns the flat
    /// ends into double-exponential decay.
    Bump { center: f64, width: f64 },
}

/// `tanh(3.5) = 1 − 1.8e-3`; a mollifier at that point is below `e^{-270}`.
pub const BUMP_REACH: f64 = 3.5;

impl Span {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Span::Interval(a, b) => (a, b),
            Span::Bump { center, width } => (center - width, center + width),
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        match *self {
            Span::Interval(a, b) => (a, b),
            Span::Bump { .. } => (-BUMP_REACH, BUMP_REACH),
        }
    }

    /// Point and Jacobian for integration variable `v`.
    pub fn map(&self, v: f64) -> (f64, f64) {
        match *self {
            Span::Interval(..) => (v, 1.0),
            Span::Bump { center, width } => {
                let c = v.cosh();
                (center + width * v.tanh(), width / (c * c))
            }
        }
    }
}

/// Panels needed so that a phase with gradient bound `grad` advances by at
/// most `4π` per 16-node panel (node spacing ≤ π/(4·grad)).
pub fn oscillation_panels(len: f64, grad: f64) -> usize {
    if !(grad > 0.0) || !(len > 0.0) {
        return 1;
    }
    (len * grad / (4.0 * std::f64::consts::PI)).ceil().max(1.0) as usize
}
