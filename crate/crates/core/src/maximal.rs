//! Time suprema of `|P_γ f|`, their `L²(B(0,1))` norms, and log–log sweeps
//! of the maximal ratio over a ladder of frequency scales.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::loglog_fit;
use crate::profiles::{canonical_bump, BumpTrain, SpectrumDescriptor};
use crate::propagator::{
    dissipation_rate, evaluate_p_gamma, SpaceTimePoint, DISSIPATION_CUTOFF,
};
use crate::quad::{composite_nodes, oscillation_panels};

pub const GOLDEN_ITERATIONS: usize = 30;
pub const GEOMETRIC_POINTS: usize = 64;
pub const TIME_CAP: usize = 1 << 14;
/// Smallest geometric time, relative to the knee `R^{−2}`.
const GEOMETRIC_DEPTH: f64 = 1e-4;
/// Lower bound on panels per bump tooth; resolves the mollifier envelope
/// to ~1e-13 even when the phase is flat.
const AXIS_MIN_PANELS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SpacingRule {
    /// `geometric` points in `(0, knee]`, then steps of `step` up to `t_max`.
    Hybrid {
        geometric: usize,
        knee: f64,
        step: f64,
    },
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub rule: SpacingRule,
    pub count: usize,
}

impl TimeGrid {
    pub fn uniform(t_min: f64, t_max: f64, count: usize) -> Result<Self> {
        let g = TimeGrid {
            t_min,
            t_max,
            rule: SpacingRule::Uniform,
            count,
        };
        g.validate()?;
        Ok(g)
    }

    /// `t = 0`, 64 geometric points in `(0, R^{−2}]`, then uniform steps of
    /// `R^{−2}/4` up to `t_max`, widened so the total stays within 2^14.
    pub fn hybrid(r: f64, t_max: f64) -> Result<Self> {
        if !(r >= 1.0) {
            return Err(invalid("R", "must be ≥ 1"));
        }
        let knee = (r * r).recip().min(t_max);
        let budget = TIME_CAP - GEOMETRIC_POINTS - 2;
        let step = (knee / 4.0).max((t_max - knee) / budget as f64);
        let mut g = TimeGrid {
            t_min: 0.0,
            t_max,
            rule: SpacingRule::Hybrid {
                geometric: GEOMETRIC_POINTS,
                knee,
                step,
            },
            count: 0,
        };
        g.validate_shape()?;
        g.count = g.points().len();
        Ok(g)
    }

    /// Twice as many points under the same rule.
    pub fn refined(&self) -> Self {
        let mut g = *self;
        g.count = 2 * self.count - 1;
        if let SpacingRule::Hybrid {
            geometric,
            knee,
            step,
        } = self.rule
        {
            g.rule = SpacingRule::Hybrid {
                geometric: 2 * geometric,
                knee,
                step: step / 2.0,
            };
            g.count = g.points().len();
        }
        g
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        if self.count == 0 {
            return Err(invalid("time grid", "count must be positive"));
        }
        Ok(())
    }

    fn validate_shape(&self) -> Result<()> {
        if !(self.t_min >= 0.0 && self.t_min < self.t_max && self.t_max <= 1.0) {
            return Err(invalid(
                "time grid",
                format!("need 0 ≤ t_min < t_max ≤ 1, got [{}, {}]", self.t_min, self.t_max),
            ));
        }
        if let SpacingRule::Hybrid { knee, step, .. } = self.rule {
            if !(knee > 0.0 && step > 0.0) {
                return Err(invalid("time grid", "knee and step must be positive"));
            }
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        match self.rule {
            SpacingRule::Uniform => {
                if self.count == 1 {
                    return vec![self.t_min];
                }
                let h = (self.t_max - self.t_min) / (self.count - 1) as f64;
                (0..self.count).map(|k| self.t_min + k as f64 * h).collect()
            }
            SpacingRule::Hybrid {
                geometric,
                knee,
                step,
            } => {
                let mut out = vec![self.t_min];
                let ratio = GEOMETRIC_DEPTH.powf(-1.0 / (geometric.max(2) - 1) as f64);
                let lo = knee * GEOMETRIC_DEPTH;
                out.extend((0..geometric).map(|k| lo * ratio.powi(k as i32)).filter(|t| *t > self.t_min));
                let mut k = 1;
                loop {
                    let t = knee + k as f64 * step;
                    if t >= self.t_max {
                        out.push(self.t_max);
                        break;
                    }
                    out.push(t);
                    k += 1;
                }
                out
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    pub radius: f64,
    pub count: usize,
}

impl SpaceGrid {
    pub fn new(radius: f64, count: usize) -> Result<Self> {
        if !(radius > 0.0) || count == 0 {
            return Err(invalid("space grid", "radius and count must be positive"));
        }
        Ok(SpaceGrid { radius, count })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.radius / self.count as f64
    }

    /// Cell midpoints along one axis.
    pub fn axis(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.count)
            .map(|i| -self.radius + (i as f64 + 0.5) * h)
            .collect()
    }

    /// Multi-indices (row-major) whose cell midpoints lie in the ball.
    pub fn ball_indices(&self, d: usize) -> Vec<usize> {
        let axis = self.axis();
        let n = self.count;
        let total = n.pow(d as u32);
        (0..total)
            .filter(|&flat| {
                let mut rest = flat;
                let mut r2 = 0.0;
                for _ in 0..d {
                    r2 += axis[rest % n].powi(2);
                    rest /= n;
                }
                r2 <= self.radius * self.radius
            })
            .collect()
    }

    pub fn point(&self, d: usize, flat: usize) -> Vec<f64> {
        let axis = self.axis();
        let mut rest = flat;
        let mut x = vec![0.0; d];
        for xi in x.iter_mut() {
            *xi = axis[rest % self.count];
            rest /= self.count;
        }
        x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub time: TimeGrid,
    pub space: SpaceGrid,
}

impl Grids {
    /// Hybrid time grid on `[0, 1]` and 128 cells per axis on `B(0,1)`.
    pub fn for_scale(r: f64) -> Result<Self> {
        Ok(Grids {
            time: TimeGrid::hybrid(r, 1.0)?,
            space: SpaceGrid::new(1.0, 128)?,
        })
    }

    pub fn refined(&self) -> Result<Self> {
        Ok(Grids {
            time: self.time.refined(),
            space: SpaceGrid::new(self.space.radius, 2 * self.space.count)?,
        })
    }
}

/// Nodes and complex weights for one axis of product-form data at a fixed
/// time; `Σ_k w_k e^{ixξ_k} ≈ ∫ train(ξ) e^{i(xξ+tξ²)} e^{−t^γξ²} dξ`.
struct AxisRule {
    xi: Vec<f64>,
    w: Vec<C64>,
}

impl AxisRule {
    fn new(train: &BumpTrain, t: f64, tg: f64, xmax: f64) -> Self {
        let cut = if tg > 0.0 {
            (DISSIPATION_CUTOFF / tg).sqrt()
        } else {
            f64::INFINITY
        };
        let mut xi = Vec::new();
        let mut w = Vec::new();
        for c in train.teeth() {
            let lo = (c - train.width).max(-cut);
            let hi = (c + train.width).min(cut);
            if lo >= hi {
                continue;
            }
            let reach = lo.abs().max(hi.abs());
            let grad = xmax + 2.0 * t * reach;
            let panels = oscillation_panels(hi - lo, grad).max(AXIS_MIN_PANELS);
            for (z, wt) in composite_nodes(lo, hi, panels) {
                let amp = train.height * canonical_bump((z - c) / train.width);
                if amp == 0.0 {
                    continue;
                }
                xi.push(z);
                w.push(C64::from_polar(amp * (-tg * z * z).exp() * wt, t * z * z));
            }
        }
        AxisRule { xi, w }
    }

    fn at(&self, x: f64) -> C64 {
        self.xi
            .iter()
            .zip(&self.w)
            .map(|(z, w)| w * C64::from_polar(1.0, x * z))
            .sum()
    }

    /// Values at `x0 + i·h`, `i < n`, by a per-node rotation recurrence.
    fn on_grid(&self, x0: f64, h: f64, n: usize) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); n];
        for (z, w) in self.xi.iter().zip(&self.w) {
            let mut v = w * C64::from_polar(1.0, x0 * z);
            let step = C64::from_polar(1.0, h * z);
            for o in out.iter_mut() {
                *o += v;
                v *= step;
            }
        }
        out
    }
}

/// Product-form data prepared for repeated evaluation.
struct SeparableField {
    scale: f64,
    axes: Vec<BumpTrain>,
    shift: Vec<f64>,
    gamma: f64,
    xmax: f64,
}

impl SeparableField {
    fn new(f: &SpectrumDescriptor, gamma: f64, xmax: f64) -> Option<Self> {
        let sep = f.separable()?;
        let shift_max = sep.shift.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        Some(SeparableField {
            scale: sep.amplitude / (2.0 * PI).powi(f.dim() as i32),
            axes: sep.axes,
            shift: sep.shift,
            gamma,
            xmax: xmax + shift_max,
        })
    }

    /// Distinct (axis, shift) pairs and the map from axes onto them.
    fn distinct_axes(&self) -> (Vec<usize>, Vec<usize>) {
        let mut reps: Vec<usize> = Vec::new();
        let mut map = Vec::with_capacity(self.axes.len());
        for j in 0..self.axes.len() {
            match reps
                .iter()
                .position(|&r| self.axes[r] == self.axes[j] && self.shift[r] == self.shift[j])
            {
                Some(k) => map.push(k),
                None => {
                    map.push(reps.len());
                    reps.push(j);
                }
            }
        }
        (reps, map)
    }

    fn modulus(&self, x: &[f64], t: f64) -> f64 {
        let tg = dissipation_rate(t, Some(self.gamma));
        let mut acc = self.scale;
        for ((axis, xj), m) in self.axes.iter().zip(x).zip(&self.shift) {
            acc *= AxisRule::new(axis, t, tg, self.xmax).at(xj + m).norm();
            if acc == 0.0 {
                break;
            }
        }
        acc
    }
}

/// Golden-section search for a maximum of `g` on `[a, b]`; returns the
/// best value seen (including both ends).
fn golden_max<G>(a: f64, b: f64, iterations: usize, mut g: G) -> Result<(f64, f64)>
where
    G: FnMut(f64) -> Result<f64>,
{
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (a, b);
    let mut best = (a, g(a)?);
    let gb = g(b)?;
    if gb > best.1 {
        best = (b, gb);
    }
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = g(x1)?;
    let mut f2 = g(x2)?;
    for _ in 0..iterations {
        for (x, v) in [(x1, f1), (x2, f2)] {
            if v > best.1 {
                best = (x, v);
            }
        }
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = g(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = g(x2)?;
        }
    }
    for (x, v) in [(x1, f1), (x2, f2)] {
        if v > best.1 {
            best = (x, v);
        }
    }
    Ok(best)
}

fn refine_around<G>(ts: &[f64], k: usize, grid_max: f64, g: G) -> Result<(f64, f64)>
where
    G: FnMut(f64) -> Result<f64>,
{
    if ts.len() < 2 {
        return Ok((ts[0], grid_max));
    }
    let a = ts[k.saturating_sub(1)];
    let b = ts[(k + 1).min(ts.len() - 1)];
    let (t, v) = golden_max(a, b, GOLDEN_ITERATIONS, g)?;
    Ok(if v > grid_max { (t, v) } else { (ts[k], grid_max) })
}

/// `max_t |P_γ f(x,t)|` over the grid, then a golden-section pass on the
/// two cells around the grid argmax.
pub fn sup_over_time(f: &SpectrumDescriptor, gamma: f64, x: &[f64], tg: &TimeGrid) -> Result<f64> {
    tg.validate()?;
    if x.len() != f.dim() {
        return Err(Error::Dimension {
            expected: f.dim(),
            got: x.len(),
        });
    }
    if !(gamma > 0.0) {
        return Err(invalid("gamma", "must be positive"));
    }
    let ts = tg.points();
    let xmax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sep = SeparableField::new(f, gamma, xmax);
    let g = |t: f64| -> Result<f64> {
        match &sep {
            Some(s) => Ok(s.modulus(x, t)),
            None => Ok(evaluate_p_gamma(f, gamma, &SpaceTimePoint::new(x.to_vec(), t)?)?.norm()),
        }
    };
    let mut best = (0usize, f64::NEG_INFINITY);
    for (k, &t) in ts.iter().enumerate() {
        let v = g(t)?;
        if v > best.1 {
            best = (k, v);
        }
    }
    Ok(refine_around(&ts, best.0, best.1, g)?.1)
}

/// Midpoint-rule `L²(B(0,radius))` norm of samples on the full grid;
/// cells whose midpoint lies outside the ball are skipped.
pub fn l2_ball_norm(grid: &SpaceGrid, d: usize, values: &[f64]) -> Result<f64> {
    let total = grid.count.pow(d as u32);
    if values.len() != total {
        return Err(invalid(
            "values",
            format!("field has {} samples, grid needs {total}", values.len()),
        ));
    }
    let cell = grid.spacing().powi(d as i32);
    let sum: f64 = grid
        .ball_indices(d)
        .into_iter()
        .map(|i| values[i] * values[i])
        .sum();
    Ok((sum * cell).sqrt())
}

/// `sup_t |P_γ f(x,t)|` on every grid cell (zero outside the ball).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximalField {
    pub grid: SpaceGrid,
    pub d: usize,
    pub sup: Vec<f64>,
    pub argmax_t: Vec<f64>,
    pub time_points: usize,
}

pub fn maximal_field(f: &SpectrumDescriptor, gamma: f64, grids: &Grids) -> Result<MaximalField> {
    grids.time.validate()?;
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(invalid("gamma", format!("must be positive, got {gamma}")));
    }
    let d = f.dim();
    let space = grids.space;
    let ts = grids.time.points();
    let inside = space.ball_indices(d);
    let mut sup = vec![0.0; space.count.pow(d as u32)];
    let mut argmax_t = vec![0.0; sup.len()];

    let Some(sep) = SeparableField::new(f, gamma, space.radius) else {
        let rows: Vec<(usize, f64, f64)> = inside
            .par_iter()
            .map(|&i| {
                let x = space.point(d, i);
                let mut best = (0usize, f64::NEG_INFINITY);
                for (k, &t) in ts.iter().enumerate() {
                    let v = evaluate_p_gamma(f, gamma, &SpaceTimePoint::new(x.clone(), t)?)?.norm();
                    if v > best.1 {
                        best = (k, v);
                    }
                }
                let (t, v) = refine_around(&ts, best.0, best.1, |t| {
                    Ok(evaluate_p_gamma(f, gamma, &SpaceTimePoint::new(x.clone(), t)?)?.norm())
                })?;
                Ok((i, v, t))
            })
            .collect::<Result<_>>()?;
        for (i, v, t) in rows {
            sup[i] = v;
            argmax_t[i] = t;
        }
        return Ok(MaximalField {
            grid: space,
            d,
            sup,
            argmax_t,
            time_points: ts.len(),
        });
    };

    let n = space.count;
    let h = space.spacing();
    let x0 = -space.radius + 0.5 * h;
    let (reps, map) = sep.distinct_axes();
    // per inside-point: (best modulus, best time index)
    let chunk = 256;
    let partial: Vec<Vec<(f64, usize)>> = ts
        .par_chunks(chunk)
        .enumerate()
        .map(|(c, block)| {
            let mut best = vec![(f64::NEG_INFINITY, 0usize); inside.len()];
            for (off, &t) in block.iter().enumerate() {
                let tg = dissipation_rate(t, Some(gamma));
                let fields: Vec<Vec<f64>> = reps
                    .iter()
                    .map(|&j| {
                        AxisRule::new(&sep.axes[j], t, tg, sep.xmax)
                            .on_grid(x0 + sep.shift[j], h, n)
                            .into_iter()
                            .map(|v| v.norm())
                            .collect()
                    })
                    .collect();
                for (slot, &flat) in best.iter_mut().zip(&inside) {
                    let mut rest = flat;
                    let mut v = sep.scale;
                    for &m in &map {
                        v *= fields[m][rest % n];
                        rest /= n;
                    }
                    if v > slot.0 {
                        *slot = (v, c * chunk + off);
                    }
                }
            }
            best
        })
        .collect();
    let mut best = vec![(f64::NEG_INFINITY, 0usize); inside.len()];
    for block in partial {
        for (b, p) in best.iter_mut().zip(block) {
            if p.0 > b.0 {
                *b = p;
            }
        }
    }
    let refined: Vec<(f64, f64)> = inside
        .par_iter()
        .zip(&best)
        .map(|(&flat, &(v, k))| {
            let x = space.point(d, flat);
            refine_around(&ts, k, v, |t| Ok(sep.modulus(&x, t)))
        })
        .collect::<Result<_>>()?;
    for (&flat, (t, v)) in inside.iter().zip(refined) {
        sup[flat] = v;
        argmax_t[flat] = t;
    }
    Ok(MaximalField {
        grid: space,
        d,
        sup,
        argmax_t,
        time_points: ts.len(),
    })
}

/// `‖sup_t |P_γ f|‖_{L²(B(0,1))} / ‖f‖₂`.
pub fn maximal_ratio(f: &SpectrumDescriptor, gamma: f64, grids: &Grids) -> Result<f64> {
    let norm = f.l2_norm()?;
    if !(norm > 0.0) {
        return Err(invalid("f", "zero data has no maximal ratio"));
    }
    let field = maximal_field(f, gamma, grids)?;
    Ok(l2_ball_norm(&field.grid, field.d, &field.sup)? / norm)
}

/// `min{d/(2(d+1)), (d/(d+1))·(1 − 1/γ)⁺}`.
pub fn theoretical_exponent(d: usize, gamma: f64) -> Result<f64> {
    if d == 0 {
        return Err(invalid("d", "dimension must be at least 1"));
    }
    if !(gamma > 0.0) {
        return Err(invalid("gamma", "must be positive"));
    }
    let df = d as f64;
    Ok((df / (2.0 * (df + 1.0))).min(df / (df + 1.0) * (1.0 - 1.0 / gamma).max(0.0)))
}

/// Local-in-time maximal bound on an interval of length `J`:
/// `1 + R^{d/(d+1)+ε} J^{d/(2(d+1))}` for `J ≤ 1/R`, else `R^{d/(2(d+1))+ε}`.
pub fn lemma1_bound(d: usize, r: f64, j_len: f64, eps: f64) -> Result<f64> {
    if d == 0 {
        return Err(invalid("d", "dimension must be at least 1"));
    }
    if !(r >= 1.0) {
        return Err(invalid("R", "must be ≥ 1"));
    }
    if !(j_len > 0.0 && j_len <= 1.0) {
        return Err(invalid("J_len", "must lie in (0, 1]"));
    }
    let df = d as f64;
    let e = df / (df + 1.0);
    Ok(if j_len <= 1.0 / r {
        1.0 + r.powf(e + eps) * j_len.powf(e / 2.0)
    } else {
        r.powf(e / 2.0 + eps)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    /// The family must not grow faster than the target.
    Upper,
    /// The family must grow at least as fast as the target.
    Lower,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingEntry {
    #[serde(rename = "R")]
    pub r: f64,
    pub ratio: f64,
    pub time_points: usize,
    pub space_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub family: String,
    pub d: usize,
    pub gamma: f64,
    pub bound: BoundKind,
    pub entries: Vec<ScalingEntry>,
    pub fitted_slope: f64,
    pub slope_stderr: f64,
    pub target: f64,
    pub tolerance: f64,
    pub verdict: bool,
    /// Set when a ladder entry failed; `entries` then holds the ones before it.
    pub failure: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    #[serde(rename = "R")]
    pub r: f64,
    pub ratio: f64,
    pub slope_running: Option<f64>,
}

impl ScalingReport {
    /// `(R, ratio, slope of the fit through the first k entries)`.
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let xs: Vec<f64> = self.entries.iter().map(|e| e.r).collect();
        let ys: Vec<f64> = self.entries.iter().map(|e| e.ratio).collect();
        (0..self.entries.len())
            .map(|k| CsvRow {
                r: xs[k],
                ratio: ys[k],
                slope_running: loglog_fit(&xs[..=k], &ys[..=k]).ok().map(|f| f.slope),
            })
            .collect()
    }
}

pub const SLOPE_TOLERANCE: f64 = 0.1;

pub fn validate_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.len() < 4 {
        return Err(Error::Ladder(format!("need ≥ 4 entries, got {}", ladder.len())));
    }
    if ladder.iter().any(|r| !(*r >= 1.0) || !r.is_finite()) {
        return Err(Error::Ladder("entries must be finite and ≥ 1".into()));
    }
    let q = ladder[1] / ladder[0];
    if !(q > 1.0) {
        return Err(Error::Ladder("entries must increase".into()));
    }
    for w in ladder.windows(2) {
        if ((w[1] / w[0]) / q - 1.0).abs() > 1e-9 {
            return Err(Error::Ladder(format!(
                "not geometric: ratio {} differs from {q}",
                w[1] / w[0]
            )));
        }
    }
    Ok(())
}

/// `R₀·q^k`, `k < n`.
pub fn geometric_ladder(r0: f64, q: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| r0 * q.powi(k as i32)).collect()
}

/// Runs `ratio_at` over the ladder and judges the fitted slope one-sided
/// against `target`.
pub fn sweep_with<F>(
    family: &str,
    d: usize,
    gamma: f64,
    bound: BoundKind,
    ladder: &[f64],
    mut ratio_at: F,
) -> Result<ScalingReport>
where
    F: FnMut(f64) -> Result<ScalingEntry>,
{
    validate_ladder(ladder)?;
    let target = theoretical_exponent(d, gamma)?;
    let mut entries = Vec::with_capacity(ladder.len());
    let mut failure = None;
    for &r in ladder {
        match ratio_at(r) {
            Ok(e) => entries.push(e),
            Err(e) => {
                failure = Some(format!("R = {r}: {e}"));
                break;
            }
        }
    }
    let (slope, stderr) = if entries.len() >= 2 {
        let xs: Vec<f64> = entries.iter().map(|e| e.r).collect();
        let ys: Vec<f64> = entries.iter().map(|e| e.ratio).collect();
        match loglog_fit(&xs, &ys) {
            Ok(fit) => (fit.slope, fit.stderr),
            Err(e) => {
                failure.get_or_insert(e.to_string());
                (f64::NAN, f64::NAN)
            }
        }
    } else {
        (f64::NAN, f64::NAN)
    };
    let within = match bound {
        BoundKind::Upper => slope <= target + SLOPE_TOLERANCE,
        BoundKind::Lower => slope >= target - SLOPE_TOLERANCE,
    };
    Ok(ScalingReport {
        family: family.to_string(),
        d,
        gamma,
        bound,
        entries,
        fitted_slope: slope,
        slope_stderr: stderr,
        target,
        tolerance: SLOPE_TOLERANCE,
        verdict: failure.is_none() && within,
        failure,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Case1,
    Annulus,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Case1 => "case1-product",
            Family::Annulus => "annulus-bump",
        }
    }

    pub fn descriptor(&self, d: usize, r: f64) -> Result<SpectrumDescriptor> {
        match self {
            Family::Case1 => SpectrumDescriptor::case1(d, r),
            Family::Annulus => SpectrumDescriptor::annulus(d, r),
        }
    }
}

/// Dense-grid maximal-ratio sweep of an upper-bound family.
pub fn exponent_sweep<G>(
    family: Family,
    d: usize,
    gamma: f64,
    ladder: &[f64],
    grids: G,
) -> Result<ScalingReport>
where
    G: Fn(f64) -> Result<Grids>,
{
    sweep_with(family.name(), d, gamma, BoundKind::Upper, ladder, |r| {
        let g = grids(r)?;
        let f = family.descriptor(d, r)?;
        Ok(ScalingEntry {
            r,
            ratio: maximal_ratio(&f, gamma, &g)?,
            time_points: g.time.points().len(),
            space_count: g.space.count,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagator::evaluate_separable;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exponent_examples() {
        assert!((theoretical_exponent(2, 2.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(theoretical_exponent(2, 1.0).unwrap(), 0.0);
        assert_eq!(theoretical_exponent(2, 0.5).unwrap(), 0.0);
        assert!((theoretical_exponent(3, 3.0).unwrap() - 3.0 / 8.0).abs() < 1e-15);
        assert!(theoretical_exponent(0, 2.0).is_err());
        assert!(theoretical_exponent(2, 0.0).is_err());
    }

    #[test]
    fn exponent_monotone_and_saturating() {
        for d in 1..6 {
            let half = d as f64 / (2.0 * (d as f64 + 1.0));
            let mut last = 0.0;
            for k in 1..200 {
                let g = 0.05 * k as f64;
                let e = theoretical_exponent(d, g).unwrap();
                assert!(e >= last - 1e-15);
                if g >= 2.0 {
                    assert!((e - half).abs() < 1e-15);
                }
                last = e;
            }
        }
    }

    #[test]
    fn lemma1_examples() {
        assert!((lemma1_bound(2, 64.0, 1.0, 0.0).unwrap() - 4.0).abs() < 1e-12);
        let tiny = lemma1_bound(2, 64.0, 1e-30, 0.0).unwrap();
        assert!((tiny - 1.0).abs() < 1e-6);
        for (d, r, eps) in [(1, 10.0, 0.0), (2, 64.0, 0.05), (3, 1000.0, 0.1)] {
            let df = d as f64;
            let e = df / (df + 1.0);
            let at = lemma1_bound(d, r, 1.0 / r, eps).unwrap();
            let second = r.powf(e / 2.0 + eps);
            assert!(((at - 1.0) / second - 1.0).abs() < 1e-12);
        }
        assert!(lemma1_bound(2, 64.0, 0.0, 0.0).is_err());
        assert!(lemma1_bound(2, 64.0, 1.5, 0.0).is_err());
    }

    #[test]
    fn ball_norm_examples() {
        let g = SpaceGrid::new(1.0, 256).unwrap();
        let ones = vec![1.0; 256 * 256];
        let v = l2_ball_norm(&g, 2, &ones).unwrap();
        assert!((v - PI.sqrt()).abs() < 1e-2);
        let scaled: Vec<f64> = ones.iter().map(|v| -2.5 * v).collect();
        let w = l2_ball_norm(&g, 2, &scaled).unwrap();
        assert!((w - 2.5 * v).abs() < 1e-12 * w);
        let axis = g.axis();
        let half: Vec<f64> = (0..256 * 256)
            .map(|i| if axis[i % 256] > 0.0 { 1.0 } else { 0.0 })
            .collect();
        let hv = l2_ball_norm(&g, 2, &half).unwrap();
        assert!((hv - (PI / 2.0).sqrt()).abs() < 1e-2);
        assert!(l2_ball_norm(&g, 2, &ones[1..]).is_err());
    }

    #[test]
    fn hybrid_grid_shape() {
        for r in [16.0, 64.0, 128.0] {
            let g = TimeGrid::hybrid(r, 1.0).unwrap();
            let ts = g.points();
            assert_eq!(ts.len(), g.count);
            assert!(ts.len() <= TIME_CAP);
            assert_eq!(ts[0], 0.0);
            assert_eq!(*ts.last().unwrap(), 1.0);
            assert!(ts.windows(2).all(|w| w[1] > w[0]));
            let SpacingRule::Hybrid { step, .. } = g.rule else { panic!() };
            // the 2^14 cap widens the step only slightly at R = 128
            assert!(step <= 1.01 * (r * r).recip());
            if r <= 32.0 {
                assert!((step - 0.25 / (r * r)).abs() < 1e-18);
            }
        }
        let one = TimeGrid::uniform(0.0, 1.0, 1).unwrap();
        assert_eq!(one.points(), vec![0.0]);
        assert!(TimeGrid::uniform(0.5, 0.5, 3).is_err());
        assert!(TimeGrid::uniform(0.0, 2.0, 3).is_err());
    }

    /// Whole support, no dissipative cutoff, adaptive panel doubling.
    fn plain_adaptive(train: &BumpTrain, x: f64, t: f64, tg: f64) -> C64 {
        train
            .teeth()
            .map(|c| {
                let (lo, hi) = (c - train.width, c + train.width);
                let grad = x.abs() + 2.0 * t * lo.abs().max(hi.abs());
                crate::quad::Adaptive::with_tol(1e-12)
                    .integrate(lo, hi, oscillation_panels(hi - lo, grad) + 8, |z| {
                        let b = train.height * canonical_bump((z - c) / train.width);
                        C64::from_polar(b * (-tg * z * z).exp(), x * z + t * z * z)
                    })
                    .unwrap()
                    .value
            })
            .sum()
    }

    #[test]
    fn axis_rule_matches_adaptive_integral() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trains = [
            BumpTrain::single(0.0, 64.0, 1.0),
            BumpTrain::single(30.0, 2.0, 0.5),
            BumpTrain {
                first: 40.0,
                spacing: 9.0,
                count: 5,
                width: 1.0,
                height: 1.0,
            },
        ];
        for train in &trains {
            let mass: f64 = train.count as f64 * train.height * train.width * 2.0;
            for _ in 0..20 {
                let x = rng.gen_range(-1.0..1.0);
                let t = 10f64.powf(rng.gen_range(-6.0..0.0));
                let gamma = rng.gen_range(0.4..2.0);
                let tg = t.powf(gamma);
                let fast = AxisRule::new(train, t, tg, 1.0).at(x);
                let slow = plain_adaptive(train, x, t, tg);
                assert!((fast - slow).norm() < 1e-10 * mass, "{train:?} x={x} t={t}: {fast} vs {slow}");
                let row = AxisRule::new(train, t, tg, 1.0).on_grid(x, 0.01, 50);
                let last = AxisRule::new(train, t, tg, 1.0).at(x + 0.49);
                assert!((row[49] - last).norm() < 1e-11 * mass);
            }
        }
    }

    #[test]
    fn plane_wave_sup_is_initial_value() {
        // the dissipation makes |P_γ f| at x = 0 decrease in t
        let f = SpectrumDescriptor::plane_wave(vec![6.0, 0.0], 0.5, 1.0).unwrap();
        let tg = TimeGrid::uniform(0.0, 1.0, 200).unwrap();
        let s = sup_over_time(&f, 1.0, &[0.0, 0.0], &tg).unwrap();
        let at0 = evaluate_separable(&f, Some(1.0), &SpaceTimePoint::new(vec![0.0, 0.0], 0.0).unwrap())
            .unwrap()
            .norm();
        assert!((s - at0).abs() < 1e-12 * at0);
        let single = TimeGrid::uniform(0.3, 1.0, 1).unwrap();
        let v = sup_over_time(&f, 1.0, &[0.0, 0.0], &single).unwrap();
        let at = evaluate_separable(&f, Some(1.0), &SpaceTimePoint::new(vec![0.0, 0.0], 0.3).unwrap())
            .unwrap()
            .norm();
        assert!((v - at).abs() < 1e-12 * at);
    }

    #[test]
    fn sup_over_time_grid_refinement() {
        let r = 64.0;
        let f = SpectrumDescriptor::case1(2, r).unwrap();
        let tg = TimeGrid::hybrid(r, 1.0).unwrap();
        for x in [[0.01, 0.0], [0.03, -0.02]] {
            let a = sup_over_time(&f, 1.5, &x, &tg).unwrap();
            let b = sup_over_time(&f, 1.5, &x, &tg.refined()).unwrap();
            assert!((a - b).abs() < 1e-3 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn golden_finds_interior_maximum() {
        let (t, v) = golden_max(0.0, 2.0, 60, |t| Ok(-(t - 0.7f64).powi(2))).unwrap();
        assert!((t - 0.7).abs() < 1e-6 && v.abs() < 1e-12);
    }

    #[test]
    fn modulation_invariance() {
        let r = 16.0;
        let grids = Grids {
            time: TimeGrid::hybrid(r, 1.0).unwrap(),
            space: SpaceGrid::new(1.0, 64).unwrap(),
        };
        let base = SpectrumDescriptor::case1(2, r).unwrap();
        let a = maximal_ratio(&base, 0.5, &grids).unwrap();
        let m = SpectrumDescriptor::modulated(base.clone(), vec![3, -2], r).unwrap();
        let b = maximal_ratio(&m, 0.5, &grids).unwrap();
        assert!((a - b).abs() < 1e-3 * a, "{a} vs {b}");
    }

    #[test]
    fn field_matches_pointwise_sup() {
        let r = 16.0;
        let grids = Grids {
            time: TimeGrid::hybrid(r, 0.05).unwrap(),
            space: SpaceGrid::new(1.0, 16).unwrap(),
        };
        let f = SpectrumDescriptor::case1(2, r).unwrap();
        let field = maximal_field(&f, 0.8, &grids).unwrap();
        for flat in grids.space.ball_indices(2).into_iter().step_by(17) {
            let x = grids.space.point(2, flat);
            let s = sup_over_time(&f, 0.8, &x, &grids.time).unwrap();
            assert!((field.sup[flat] - s).abs() <= 1e-9 * s.max(1e-300), "{x:?}");
        }
    }

    #[test]
    fn zero_data_rejected() {
        let f = SpectrumDescriptor::plane_wave(vec![1.0, 1.0], 0.5, 0.0).unwrap();
        let grids = Grids {
            time: TimeGrid::uniform(0.0, 1.0, 4).unwrap(),
            space: SpaceGrid::new(1.0, 8).unwrap(),
        };
        assert!(maximal_ratio(&f, 1.0, &grids).is_err());
    }

    #[test]
    fn synthetic_constant_family() {
        let ladder = geometric_ladder(16.0, 2.0, 5);
        let rep = sweep_with("constant", 2, 0.5, BoundKind::Upper, &ladder, |r| {
            Ok(ScalingEntry {
                r,
                ratio: 2.75,
                time_points: 0,
                space_count: 0,
            })
        })
        .unwrap();
        assert!(rep.fitted_slope.abs() < 1e-6);
        assert!(rep.verdict);
        assert_eq!(rep.csv_rows()[0].slope_running, None);
        assert!(rep.csv_rows()[4].slope_running.unwrap().abs() < 1e-9);
    }

    #[test]
    fn sweep_keeps_partial_report() {
        let ladder = geometric_ladder(16.0, 2.0, 5);
        let rep = sweep_with("flaky", 2, 2.0, BoundKind::Lower, &ladder, |r| {
            if r > 40.0 {
                Err(invalid("R", "boom"))
            } else {
                Ok(ScalingEntry {
                    r,
                    ratio: r.sqrt(),
                    time_points: 0,
                    space_count: 0,
                })
            }
        })
        .unwrap();
        assert_eq!(rep.entries.len(), 2);
        assert!(rep.failure.is_some());
        assert!(!rep.verdict);
        assert!(validate_ladder(&[16.0, 32.0, 64.0]).is_err());
        assert!(validate_ladder(&[16.0, 32.0, 64.0, 100.0]).is_err());
    }
}
