//! The lattice-comb construction for `1 < γ ≤ 2`: the sets `Ω` and `Ω*`,
//! the time selection `t_x`, the lattice sums, the error budgets and the
//! lower-bound scaling experiment.

use std::f64::consts::PI;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::loglog_fit;
use crate::maximal::{validate_ladder, SLOPE_TOLERANCE};
use crate::numbertheory::{union_measure, vitali_scaled_union, Cube, CubeFamily, VitaliOutcome};
use crate::profiles::{Constants, CounterexampleParams, ModelParams, SpectrumDescriptor};
use crate::propagator::{evaluate_p_gamma, factorized_evaluate, SpaceTimePoint};
use crate::C64;

const TAU: f64 = 2.0 * PI;

/// Representative of `v` in `[0, 2π)`.
fn wrap(v: f64) -> f64 {
    let r = v.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Representative of `v` in `[−π, π)`.
fn centered(v: f64) -> f64 {
    wrap(v + PI) - PI
}

/// Distance between two angles on the circle.
pub fn residue_error(a: f64, b: f64) -> f64 {
    centered(a - b).abs()
}

fn gcd(a: u64, b: u64) -> u64 {
    num_integer::Integer::gcd(&a, &b)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RationalAnchor {
    pub q: u64,
    pub a1: u64,
    pub a_rest: Vec<u64>,
}

impl RationalAnchor {
    pub fn check(&self, cp: &CounterexampleParams) -> Result<()> {
        let bad = |why: String| Err(invalid("anchor", format!("{self:?}: {why}")));
        if self.a_rest.len() + 1 != cp.d() {
            return Err(Error::Dimension {
                expected: cp.d() - 1,
                got: self.a_rest.len(),
            });
        }
        if self.q % 4 != 0 {
            return bad("q ≢ 0 mod 4".into());
        }
        let q = self.q as f64;
        if q < 4.0 * cp.mu0 * cp.q_scale || q > 4.0 * cp.q_scale {
            return bad("q outside [4μ₀Q, 4Q]".into());
        }
        if !(1..=self.q).contains(&self.a1) || gcd(self.a1, self.q) != 1 {
            return bad("a₁ not a unit in [1, q]".into());
        }
        if self.a_rest.iter().any(|&a| a % 2 != 0 || a < 2 || a > self.q / 2) {
            return bad("a_j must be even in [2, q/2]".into());
        }
        Ok(())
    }

    /// `2πa_i/q` for every coordinate.
    pub fn centers(&self) -> Vec<f64> {
        std::iter::once(self.a1)
            .chain(self.a_rest.iter().copied())
            .map(|a| TAU * a as f64 / self.q as f64)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaCell {
    pub anchor: RationalAnchor,
    pub half_widths: Vec<f64>,
}

impl OmegaCell {
    pub fn new(cp: &CounterexampleParams, anchor: RationalAnchor) -> Self {
        let mut half_widths = vec![cp.aj_half_width(); cp.d()];
        half_widths[0] = cp.a1_half_width();
        OmegaCell {
            anchor,
            half_widths,
        }
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        self.anchor
            .centers()
            .iter()
            .zip(&self.half_widths)
            .zip(y)
            .all(|((c, a), v)| residue_error(*v, *c) <= *a)
    }

    pub fn volume(&self) -> f64 {
        self.half_widths.iter().map(|a| 2.0 * a).product()
    }

    /// The cell as boxes in `[0, 2π)^d`, split where it wraps.
    pub fn boxes(&self) -> Vec<Vec<(f64, f64)>> {
        torus_boxes(&self.anchor.centers(), &self.half_widths)
    }
}

fn torus_interval(c: f64, a: f64) -> Vec<(f64, f64)> {
    if 2.0 * a >= TAU {
        return vec![(0.0, TAU)];
    }
    let lo = wrap(c - a);
    let hi = lo + 2.0 * a;
    if hi <= TAU {
        vec![(lo, hi)]
    } else {
        vec![(lo, TAU), (0.0, hi - TAU)]
    }
}

fn torus_boxes(centers: &[f64], half: &[f64]) -> Vec<Vec<(f64, f64)>> {
    let mut out: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
    for (c, a) in centers.iter().zip(half) {
        let pieces = torus_interval(*c, *a);
        out = out
            .into_iter()
            .flat_map(|b| {
                pieces.iter().map(move |p| {
                    let mut b = b.clone();
                    b.push(*p);
                    b
                })
            })
            .collect();
    }
    out
}

/// Mixed-radix index over all anchors: `q`, then `a₁` among the units, then
/// the even `a_j`.
struct AnchorIndex {
    d: usize,
    qs: Vec<u64>,
    units: Vec<Vec<u64>>,
    /// `(q/4)^{d−1}`
    per_unit: Vec<u64>,
    cumulative: Vec<u64>,
}

impl AnchorIndex {
    fn new(cp: &CounterexampleParams) -> Result<Self> {
        let qs = cp.moduli()?;
        let d = cp.d();
        let units: Vec<Vec<u64>> = qs
            .iter()
            .map(|&q| (1..=q).filter(|&a| gcd(a, q) == 1).collect())
            .collect();
        let per_unit: Vec<u64> = qs.iter().map(|&q| (q / 4).pow(d as u32 - 1)).collect();
        let mut cumulative = Vec::with_capacity(qs.len());
        let mut acc = 0u64;
        for (u, p) in units.iter().zip(&per_unit) {
            acc += u.len() as u64 * p;
            cumulative.push(acc);
        }
        Ok(AnchorIndex {
            d,
            qs,
            units,
            per_unit,
            cumulative,
        })
    }

    fn total(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }

    fn anchor(&self, idx: u64) -> RationalAnchor {
        let k = self.cumulative.partition_point(|&c| c <= idx);
        let mut rem = idx - if k == 0 { 0 } else { self.cumulative[k - 1] };
        let q = self.qs[k];
        let a1 = self.units[k][(rem / self.per_unit[k]) as usize];
        rem %= self.per_unit[k];
        let base = q / 4;
        let mut a_rest = Vec::with_capacity(self.d - 1);
        for _ in 1..self.d {
            a_rest.push(2 + 2 * (rem % base));
            rem /= base;
        }
        RationalAnchor { q, a1, a_rest }
    }
}

/// Anchors of `Ω`, exhaustive when there are at most `limit` of them and a
/// seeded uniform subsample of size `limit` otherwise.
pub fn enumerate_anchors(cp: &CounterexampleParams, limit: usize, seed: u64) -> Result<Vec<RationalAnchor>> {
    let ix = AnchorIndex::new(cp)?;
    let total = ix.total();
    if total <= limit as u64 {
        return Ok((0..total).map(|i| ix.anchor(i)).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<u64> = if total <= usize::MAX as u64 {
        index::sample(&mut rng, total as usize, limit)
            .into_iter()
            .map(|i| i as u64)
            .collect()
    } else {
        (0..limit).map(|_| rng.gen_range(0..total)).collect()
    };
    picks.sort_unstable();
    picks.dedup();
    Ok(picks.into_iter().map(|i| ix.anchor(i)).collect())
}

/// Number of anchors of `Ω`.
pub fn anchor_count(cp: &CounterexampleParams) -> Result<u64> {
    Ok(AnchorIndex::new(cp)?.total())
}

/// `𝒱₁(q)` as intervals of half-width `half` around the units `2πa₁/q`.
pub fn v1_intervals(q: u64, half: f64) -> Vec<(f64, f64)> {
    (1..=q)
        .filter(|&a| gcd(a, q) == 1)
        .flat_map(|a| torus_interval(TAU * a as f64 / q as f64, half))
        .collect()
}

/// `|𝒱₁(q)|`, measured as a union so overlaps would show.
pub fn v1_measure(q: u64, half: f64) -> f64 {
    let boxes: Vec<Vec<(f64, f64)>> = v1_intervals(q, half).into_iter().map(|iv| vec![iv]).collect();
    union_measure(&boxes)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaLowerBound {
    /// `min_q |𝒱₁(q)|` over the admissible moduli.
    pub min_v1: f64,
    /// `c_{ε₀} = min_q |𝒱₁(q)| · Q^{ε₀}`
    pub c_eps0: f64,
    /// `c_{ε₀}·2^{−d}·3^{1−d}·c₄^{d−1}·Q^{−ε₀}`
    pub bound: f64,
}

pub fn omega_measure_lower(cp: &CounterexampleParams) -> Result<OmegaLowerBound> {
    let a1 = cp.a1_half_width();
    let min_v1 = cp
        .moduli()?
        .into_iter()
        .map(|q| v1_measure(q, a1))
        .fold(f64::INFINITY, f64::min);
    let eps = cp.constants.eps0;
    let c_eps0 = min_v1 * cp.q_scale.powf(eps);
    Ok(OmegaLowerBound {
        min_v1,
        c_eps0,
        bound: c_eps0 * v2_bound(cp.d(), cp.constants.c4) * cp.q_scale.powf(-eps),
    })
}

/// `2^{−d}·3^{1−d}·c₄^{d−1}`
pub fn v2_bound(d: usize, c4: f64) -> f64 {
    let k = d as i32 - 1;
    2f64.powi(-(d as i32)) * 3f64.powi(-k) * c4.powi(k)
}

pub fn v2_measure_lower(cp: &CounterexampleParams) -> f64 {
    v2_bound(cp.d(), cp.constants.c4)
}

/// Boxes of `𝒱₂ = ∪_q ∪_{a'} ∏_j [2πa_j/q ± A_j]` in `[0, 2π)^{d−1}`.
fn v2_boxes(cp: &CounterexampleParams) -> Result<Vec<Vec<(f64, f64)>>> {
    let k = cp.d() - 1;
    let half = vec![cp.aj_half_width(); k];
    let mut out = Vec::new();
    for q in cp.moduli()? {
        let evens: Vec<u64> = (1..=q / 4).map(|m| 2 * m).collect();
        for_each_tuple(&evens, k, |a| {
            let c: Vec<f64> = a.iter().map(|&v| TAU * v as f64 / q as f64).collect();
            out.extend(torus_boxes(&c, &half));
        });
    }
    Ok(out)
}

fn for_each_tuple(vals: &[u64], k: usize, mut f: impl FnMut(&[u64])) {
    if vals.is_empty() {
        return;
    }
    let mut digits = vec![0usize; k];
    let mut buf = vec![0u64; k];
    loop {
        for (b, d) in buf.iter_mut().zip(&digits) {
            *b = vals[*d];
        }
        f(&buf);
        let mut i = 0;
        loop {
            if i == k {
                return;
            }
            digits[i] += 1;
            if digits[i] < vals.len() {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

/// Caps the exact union computations.
pub const EXACT_BOX_LIMIT: usize = 20_000;

/// Exact `|𝒱₂|`.
pub fn v2_measure_exact(cp: &CounterexampleParams) -> Result<f64> {
    let boxes = v2_boxes(cp)?;
    if boxes.len() > EXACT_BOX_LIMIT {
        return Err(invalid("R", format!("{} boxes exceed the exact-union limit", boxes.len())));
    }
    Ok(union_measure(&boxes))
}

/// Exact `|Ω|`.
pub fn omega_measure_exact(cp: &CounterexampleParams) -> Result<f64> {
    let n = anchor_count(cp)?;
    if n > EXACT_BOX_LIMIT as u64 {
        return Err(invalid("R", format!("{n} cells exceed the exact-union limit")));
    }
    let boxes: Vec<Vec<(f64, f64)>> = enumerate_anchors(cp, n as usize, 0)?
        .into_iter()
        .flat_map(|a| OmegaCell::new(cp, a).boxes())
        .collect();
    Ok(union_measure(&boxes))
}

/// The rescaling chain behind the `𝒱₂` bound, with each step measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct V2Chain {
    /// `|∪_{1≤q'≤Q} ∪_{1≤a'≤q'} J(q'; a')|`, the Dirichlet covering.
    pub covering: f64,
    /// The same union restricted to `μ₀Q ≤ q' ≤ Q`.
    pub trimmed: f64,
    /// Smallest shrink factor from `J(q'; a')` to the target cube.
    pub shrink: f64,
    /// Vitali applied to the trimmed family with factor `shrink`.
    pub vitali: VitaliOutcome,
    /// `2^{1−d}` times the Vitali bound: the halving `y = y'/2`.
    pub chain_bound: f64,
    pub exact: f64,
    pub formula: f64,
}

/// `J(q'; a')` are cubes of half-width `2π/(q'Q^{1/(d−1)})` around `2πa'/q'`;
/// every `y'` lies in one of them for some `q' ≤ Q`. The cubes with `q' =
/// q/4` halve into cells of `𝒱₂` after shrinking by at least `shrink`.
pub fn v2_chain(cp: &CounterexampleParams) -> Result<V2Chain> {
    let k = cp.d() - 1;
    let qq = cp.q_scale;
    let root = qq.powf(1.0 / k as f64);
    let family = |q_lo: u64| -> Vec<Cube> {
        let mut cubes = Vec::new();
        for q in q_lo.max(1)..=qq.floor() as u64 {
            let side = 2.0 * TAU / (q as f64 * root);
            let vals: Vec<u64> = (1..=q).collect();
            for_each_tuple(&vals, k, |a| {
                cubes.push(Cube {
                    center: a.iter().map(|&v| TAU * v as f64 / q as f64).collect(),
                    side,
                });
            });
        }
        cubes
    };
    let torus = |cubes: &[Cube]| -> f64 {
        let boxes: Vec<Vec<(f64, f64)>> = cubes
            .iter()
            .flat_map(|c| torus_boxes(&c.center, &vec![0.5 * c.side; k]))
            .collect();
        union_measure(&boxes)
    };
    let all = family(1);
    let trimmed_family = family((cp.mu0 * qq).ceil() as u64);
    if all.len() > EXACT_BOX_LIMIT {
        return Err(invalid("R", "covering family exceeds the exact-union limit"));
    }
    if trimmed_family.is_empty() {
        return Err(Error::NoAdmissibleModulus {
            lo: cp.mu0 * qq,
            hi: qq,
        });
    }
    // Target half-width in y'-coordinates is 2A_j; J has half-width 2π/(q'Q^{1/k}).
    let aj = cp.aj_half_width();
    let shrink = trimmed_family
        .iter()
        .map(|c| 2.0 * aj / (0.5 * c.side))
        .fold(f64::INFINITY, f64::min)
        .min(1.0 - 1e-12);
    let vitali = vitali_scaled_union(&CubeFamily {
        cubes: trimmed_family.clone(),
        c: shrink,
    })?;
    Ok(V2Chain {
        covering: torus(&all),
        trimmed: torus(&trimmed_family),
        shrink,
        vitali,
        chain_bound: 2f64.powi(-(k as i32)) * vitali.bound,
        exact: v2_measure_exact(cp)?,
        formula: v2_measure_lower(cp),
    })
}

/// Indices `a` in `0..q` with `2πa/q` within `half` of `y` on the circle.
fn near_residues(y: f64, q: u64, half: f64) -> impl Iterator<Item = u64> {
    let qf = q as f64;
    let lo = ((y - half) * qf / TAU).ceil() as i64;
    let hi = ((y + half) * qf / TAU).floor() as i64;
    (lo..=hi).map(move |a| a.rem_euclid(q as i64) as u64)
}

/// Number of cells of `Ω` that contain `y`.
pub fn omega_multiplicity(cp: &CounterexampleParams, qs: &[u64], y: &[f64]) -> u64 {
    let a1 = cp.a1_half_width();
    let aj = cp.aj_half_width();
    let mut total = 0u64;
    for &q in qs {
        let n1 = near_residues(y[0], q, a1)
            .filter(|&a| a >= 1 && gcd(a, q) == 1)
            .count() as u64;
        if n1 == 0 {
            continue;
        }
        let mut prod = n1;
        for &v in &y[1..] {
            prod *= near_residues(v, q, aj)
                .filter(|&a| a % 2 == 0 && a >= 2 && a <= q / 2)
                .count() as u64;
            if prod == 0 {
                break;
            }
        }
        total += prod;
    }
    total
}

/// `v2_multiplicity` for the last `d − 1` coordinates.
fn v2_member(cp: &CounterexampleParams, qs: &[u64], y: &[f64]) -> bool {
    let aj = cp.aj_half_width();
    qs.iter().any(|&q| {
        y.iter().all(|&v| {
            near_residues(v, q, aj)
                .filter(|&a| a % 2 == 0 && a >= 2 && a <= q / 2)
                .count()
                > 0
        })
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub estimate: f64,
    /// Half-width of the normal 95% interval.
    pub ci95: f64,
    pub samples: u64,
    pub hits: u64,
}

impl MonteCarlo {
    fn from_hits(volume: f64, hits: u64, n: u64) -> Self {
        let p = hits as f64 / n as f64;
        // Wilson-style floor so a handful of hits still gets a nonzero width.
        let var = (p * (1.0 - p)).max(1.0 / n as f64) / n as f64;
        MonteCarlo {
            estimate: volume * p,
            ci95: 1.96 * volume * var.sqrt(),
            samples: n,
            hits,
        }
    }
}

/// Uniform sampling of the torus `[0, 2π)^k` against a membership test.
fn torus_monte_carlo(k: usize, n: u64, seed: u64, member: impl Fn(&[f64]) -> bool + Sync) -> MonteCarlo {
    const CHUNK: u64 = 1 << 14;
    let chunks = n.div_ceil(CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let mut y = vec![0.0; k];
            let m = CHUNK.min(n - c * CHUNK);
            (0..m)
                .filter(|_| {
                    for v in y.iter_mut() {
                        *v = rng.gen_range(0.0..TAU);
                    }
                    member(&y)
                })
                .count() as u64
        })
        .sum();
    MonteCarlo::from_hits(TAU.powi(k as i32), hits, n)
}

pub fn omega_measure_monte_carlo(cp: &CounterexampleParams, n: u64, seed: u64) -> Result<MonteCarlo> {
    let qs = cp.moduli()?;
    Ok(torus_monte_carlo(cp.d(), n, seed, |y| omega_multiplicity(cp, &qs, y) > 0))
}

pub fn v2_measure_monte_carlo(cp: &CounterexampleParams, n: u64, seed: u64) -> Result<MonteCarlo> {
    let qs = cp.moduli()?;
    Ok(torus_monte_carlo(cp.d() - 1, n, seed, |y| v2_member(cp, &qs, y)))
}

/// `M₁ = D²/(2R^{γ/2})`, `M_j = D`.
pub fn scaling_factors(cp: &CounterexampleParams) -> Vec<f64> {
    let dd = cp.spacing();
    let mut m = vec![dd; cp.d()];
    m[0] = dd * dd / (2.0 * cp.comb.height);
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaStarSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub anchor: RationalAnchor,
    /// Periodic preimages of `y` in the box, per coordinate.
    pub preimages: Vec<u64>,
    /// Number of cells of `Ω` containing `y`.
    pub multiplicity: u64,
}

impl OmegaStarSample {
    /// Importance weight making the weighted samples uniform on `Ω*`.
    pub fn weight(&self) -> f64 {
        self.preimages.iter().map(|&n| n as f64).product::<f64>() / self.multiplicity as f64
    }

    /// Largest residue defect of `y₁ ≡ −M₁x₁`, `y_j ≡ Dx_j`, and box
    /// membership.
    pub fn check(&self, cp: &CounterexampleParams) -> Result<f64> {
        let m = scaling_factors(cp);
        let (lo, hi) = cp.x1_window();
        if self.x[0] < lo || self.x[0] > hi {
            return Err(invalid("x", format!("x₁ = {} outside [{lo}, {hi}]", self.x[0])));
        }
        let c1 = cp.constants.c1;
        if self.x[1..].iter().any(|v| v.abs() > c1) {
            return Err(invalid("x", "comb coordinate outside [−c₁, c₁]"));
        }
        let mut worst = residue_error(self.y[0], -m[0] * self.x[0]);
        for j in 1..self.x.len() {
            worst = worst.max(residue_error(self.y[j], m[j] * self.x[j]));
        }
        Ok(worst)
    }
}

/// Integers `k` with `(y + 2πk)·sign/m` inside `[lo, hi]`.
fn preimage_range(y: f64, m: f64, sign: f64, lo: f64, hi: f64) -> (i64, i64) {
    let (a, b) = if sign > 0.0 {
        (m * lo, m * hi)
    } else {
        (-m * hi, -m * lo)
    };
    (((a - y) / TAU).ceil() as i64, ((b - y) / TAU).floor() as i64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaStarDraw {
    pub samples: Vec<OmegaStarSample>,
    pub proposals: u64,
    /// `Σ |cell|` over all cells of `Ω`.
    pub cell_volume: f64,
    /// `|Ω|` from the same proposals.
    pub omega_estimate: f64,
    pub measure_estimate: f64,
    pub measure_ci95: f64,
}

/// Upper limit on proposals per requested sample.
pub const PROPOSALS_PER_SAMPLE: u64 = 10_000;

/// Draws cells uniformly, a point uniformly in the cell, and a uniformly
/// random periodic preimage in the box. Proposals without a preimage feed the
/// measure estimate only.
pub fn sample_omega_star(cp: &CounterexampleParams, n: usize, seed: u64) -> Result<OmegaStarDraw> {
    if n == 0 {
        return Err(invalid("n", "need at least one sample"));
    }
    let ix = AnchorIndex::new(cp)?;
    let qs = ix.qs.clone();
    let d = cp.d();
    let m = scaling_factors(cp);
    let (lo1, hi1) = cp.x1_window();
    let c1 = cp.constants.c1;
    let template = OmegaCell::new(cp, ix.anchor(0));
    let half = template.half_widths.clone();
    let cell_volume = ix.total() as f64 * template.volume();

    const CHUNK: u64 = 4096;
    let batch = rayon::current_num_threads().max(1) as u64 * 2;
    let cap = PROPOSALS_PER_SAMPLE * n as u64;
    let mut samples = Vec::with_capacity(n);
    let (mut sum, mut sum_sq, mut inv_mult, mut proposals) = (0.0, 0.0, 0.0, 0u64);
    let mut next_chunk = 0u64;
    while samples.len() < n {
        if proposals >= cap {
            return Err(Error::Precondition(format!(
                "only {} of {n} samples after {proposals} proposals: the x-box holds almost no \
                 periodic copy of Ω (c₁ too small for R = {})",
                samples.len(),
                cp.r()
            )));
        }
        let results: Vec<_> = (next_chunk..next_chunk + batch)
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c);
                let mut out = Vec::new();
                let (mut s, mut s2, mut im) = (0.0, 0.0, 0.0);
                for _ in 0..CHUNK {
                    let anchor = ix.anchor(rng.gen_range(0..ix.total()));
                    let y: Vec<f64> = anchor
                        .centers()
                        .iter()
                        .zip(&half)
                        .map(|(c, a)| wrap(c + rng.gen_range(-*a..=*a)))
                        .collect();
                    let mult = omega_multiplicity(cp, &qs, &y);
                    im += 1.0 / mult as f64;
                    let mut ranges = Vec::with_capacity(d);
                    ranges.push(preimage_range(y[0], m[0], -1.0, lo1, hi1));
                    for j in 1..d {
                        ranges.push(preimage_range(y[j], m[j], 1.0, -c1, c1));
                    }
                    let counts: Vec<u64> = ranges.iter().map(|(a, b)| (b - a + 1).max(0) as u64).collect();
                    let z: f64 = counts.iter().zip(&m).map(|(&k, mi)| k as f64 / mi).product::<f64>() / mult as f64;
                    s += z;
                    s2 += z * z;
                    if counts.iter().all(|&k| k > 0) {
                        let x: Vec<f64> = (0..d)
                            .map(|j| {
                                let (a, b) = ranges[j];
                                let k = rng.gen_range(a..=b) as f64;
                                let v = (y[j] + TAU * k) / m[j];
                                if j == 0 {
                                    (-v).clamp(lo1, hi1)
                                } else {
                                    v.clamp(-c1, c1)
                                }
                            })
                            .collect();
                        out.push(OmegaStarSample {
                            x,
                            y,
                            anchor,
                            preimages: counts,
                            multiplicity: mult,
                        });
                    }
                }
                (out, s, s2, im)
            })
            .collect();
        next_chunk += batch;
        // Chunks are consumed in index order and the tail of the batch is
        // dropped once `n` is reached, so the draw does not depend on `batch`.
        for (out, s, s2, im) in results {
            if samples.len() >= n {
                break;
            }
            proposals += CHUNK;
            sum += s;
            sum_sq += s2;
            inv_mult += im;
            samples.extend(out);
        }
    }
    samples.truncate(n);
    let nf = proposals as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0);
    Ok(OmegaStarDraw {
        samples,
        proposals,
        cell_volume,
        omega_estimate: cell_volume * inv_mult / nf,
        measure_estimate: cell_volume * mean,
        measure_ci95: 1.96 * cell_volume * (var / nf).sqrt(),
    })
}

/// `R^{γ/2−1}·c₁^d/(4(2π)^d)·|Ω|`, the lower bound on `|Ω*|` given `|Ω|`.
pub fn omega_star_lower(cp: &CounterexampleParams, omega: f64) -> f64 {
    let d = cp.d() as i32;
    cp.r().powf(cp.gamma() / 2.0 - 1.0) * cp.constants.c1.powi(d) / (4.0 * TAU.powi(d)) * omega
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSelection {
    pub t: f64,
    pub tau: f64,
    /// `s = D²τ`, the smallest-modulus solution of `y₁ + s ≡ 2πa₁/q`.
    pub s: f64,
}

/// `t_x = −x₁/(2R^{γ/2}) + τ` with `D²t_x ≡ 2πa₁/q (mod 2π)`.
pub fn select_time(cp: &CounterexampleParams, sample: &OmegaStarSample) -> Result<TimeSelection> {
    let dd = cp.spacing();
    let s = centered(sample.anchor.centers()[0] - sample.y[0]);
    let tau = s / (dd * dd);
    let window = cp.constants.c2 * cp.r().powf(-(cp.gamma() + 1.0) / 2.0);
    if tau.abs() >= window {
        return Err(Error::Precondition(format!(
            "|τ| = {} is not below c₂R^{{−(γ+1)/2}} = {window}",
            tau.abs()
        )));
    }
    let t = -sample.x[0] / (2.0 * cp.comb.height) + tau;
    if !(t > 0.0) {
        return Err(Error::Precondition(format!("selected time {t} is not positive")));
    }
    Ok(TimeSelection { t, tau, s })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSums {
    pub per_axis: Vec<C64>,
    pub product: C64,
}

fn lattice_range(cp: &CounterexampleParams, u: f64) -> Result<std::ops::Range<i64>> {
    let lo = cp.comb.lattice;
    let hi = cp.comb.ell_hi as f64;
    if !(u > lo && u <= hi) {
        return Err(invalid("u", format!("need {lo} < u ≤ {hi}, got {u}")));
    }
    let end = crate::profiles::ceil_snap(u);
    Ok(cp.comb.ell_lo..end.max(cp.comb.ell_lo))
}

/// `S_j(u) = Σ_{⌈R^{γ/2}/D⌉ ≤ ℓ < u} e^{i(Dℓx_j + D²ℓ²t)}` and their product.
pub fn lattice_sum_s(cp: &CounterexampleParams, x_rest: &[f64], t: f64, u: f64) -> Result<LatticeSums> {
    if x_rest.len() + 1 != cp.d() {
        return Err(Error::Dimension {
            expected: cp.d() - 1,
            got: x_rest.len(),
        });
    }
    let range = lattice_range(cp, u)?;
    let dd = cp.spacing();
    let per_axis: Vec<C64> = x_rest
        .iter()
        .map(|&x| {
            range
                .clone()
                .map(|l| {
                    let lf = l as f64;
                    C64::from_polar(1.0, dd * lf * x + dd * dd * lf * lf * t)
                })
                .sum()
        })
        .collect();
    let product = per_axis.iter().product();
    Ok(LatticeSums { per_axis, product })
}

/// `S̃_j(u) = Σ_ℓ e^{i(ℓ·2πa_j/q + ℓ²(y₁+s))}` for every comb axis.
pub fn lattice_sum_s_tilde(
    cp: &CounterexampleParams,
    anchor: &RationalAnchor,
    y1_plus_s: f64,
    u: f64,
) -> Result<Vec<C64>> {
    let range = lattice_range(cp, u)?;
    let q = anchor.q;
    Ok(anchor
        .a_rest
        .iter()
        .map(|&a| {
            range
                .clone()
                .map(|l| {
                    let lin = TAU * ((l as u64 % q) * a % q) as f64 / q as f64;
                    let sq = (l * l) as f64 * y1_plus_s;
                    C64::from_polar(1.0, lin + sq)
                })
                .sum()
        })
        .collect())
}

/// `√2·(u − R^{γ/2}/D)/q^{1/2}`
pub fn main_term(cp: &CounterexampleParams, q: u64, u: f64) -> f64 {
    2f64.sqrt() * (u - cp.comb.lattice) / (q as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    #[serde(rename = "R")]
    pub r: f64,
    pub delta0: f64,
    pub value: f64,
    /// `(q, a₁, a_j, u)` at the maximum.
    pub argmax: (u64, u64, u64, i64),
    /// `max |S̃_j(u)| / (R^{γ/2}/(DQ^{1/2}))`, for the uniform bound.
    pub uniform_ratio: f64,
}

/// Exhaustive calibration of `C_{δ₀}`: the largest
/// `| |S̃_j(u)| − √2(u − R^{γ/2}/D)/q^{1/2} | / (R^{γ/2−δ₀}/(DQ^{1/2}))` over
/// every anchor pair `(a₁, a_j)`, admissible `q` and integer `u`, with
/// `y₁ + s = 2πa₁/q`.
pub fn calibrate_c_delta0(cp: &CounterexampleParams) -> Result<Calibration> {
    let qs = cp.moduli()?;
    let scale = cp.main_scale();
    let norm = scale * cp.r().powf(-cp.constants.delta0);
    let (lo, hi) = (cp.comb.ell_lo, cp.comb.ell_hi);
    let best = qs
        .par_iter()
        .flat_map_iter(|&q| {
            let units: Vec<u64> = (1..=q).filter(|&a| gcd(a, q) == 1).collect();
            let evens: Vec<u64> = (1..=q / 4).map(|m| 2 * m).collect();
            units
                .into_iter()
                .flat_map(move |a1| evens.clone().into_iter().map(move |aj| (q, a1, aj)))
        })
        .map(|(q, a1, aj)| {
            let mut acc = C64::new(0.0, 0.0);
            let mut best = (0.0f64, 0.0f64, 0i64);
            for l in lo..hi {
                let r = ((l as u64 % q) * aj + (l as u64 % q).pow(2) % q * a1) % q;
                acc += C64::from_polar(1.0, TAU * r as f64 / q as f64);
                let u = l + 1;
                let dev = (acc.norm() - main_term(cp, q, u as f64)).abs() / norm;
                if dev > best.0 {
                    best.0 = dev;
                    best.2 = u;
                }
                best.1 = best.1.max(acc.norm() / scale);
            }
            (best, (q, a1, aj))
        })
        .collect::<Vec<_>>();
    let mut value = 0.0;
    let mut uniform_ratio: f64 = 0.0;
    let mut argmax = (0, 0, 0, 0);
    for ((dev, uni, u), (q, a1, aj)) in best {
        uniform_ratio = uniform_ratio.max(uni);
        if dev > value {
            value = dev;
            argmax = (q, a1, aj, u);
        }
    }
    Ok(Calibration {
        r: cp.r(),
        delta0: cp.constants.delta0,
        value,
        argmax,
        uniform_ratio,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub e1: f64,
    pub e2: f64,
    /// `2^{−(d+5)/2}·(R^{γ/2}/(DQ^{1/2}))^{d−1}`
    pub threshold: f64,
    pub admissible: bool,
}

/// `E(1)` and `E(2)` bounds at time `t`; `c_delta0` is the calibrated
/// constant of the main-term law.
pub fn error_budget(cp: &CounterexampleParams, t: f64, c_delta0: f64) -> ErrorBudget {
    let d = cp.d() as i32;
    let m = cp.main_scale();
    let k = cp.constants;
    let four_pi_d = (4.0 * PI).powi(d);
    let e1 = 2f64.powi(d + 1) * (2.0 * four_pi_d).powi(d - 2) * cp.r() * t * m.powi(d - 1);
    let bracket = c_delta0 * cp.r().powf(-k.delta0) + 12.0 * k.c4 * four_pi_d * four_pi_d;
    let e2 = (2f64.powi(d - 1) - 1.0) * bracket * m * (2f64.sqrt() * (4.0 * PI).powf(d as f64 / 2.0) * m).powi(d - 2);
    let threshold = 2f64.powf(-(d as f64 + 5.0) / 2.0) * m.powi(d - 1);
    ErrorBudget {
        e1,
        e2,
        threshold,
        admissible: e1 <= threshold && e2 <= threshold,
    }
}

/// What the experiment does with an inadmissible error budget.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetPolicy {
    /// Record the budget and keep measuring.
    #[default]
    Record,
    /// Abort the entry with a diagnosis.
    Abort,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub gamma: f64,
    #[serde(default)]
    pub s: f64,
    #[serde(rename = "R_ladder")]
    pub ladder: Vec<f64>,
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub constants: Option<Constants>,
    /// Frozen `C_{δ₀}`; calibrated at the first ladder entry when absent.
    #[serde(default)]
    pub c_delta0: Option<f64>,
    #[serde(default)]
    pub budget: BudgetPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundRecord {
    #[serde(rename = "R")]
    pub r: f64,
    pub samples: usize,
    pub proposals: u64,
    pub mean_modulus: f64,
    pub mean_sq_modulus: f64,
    pub measure_estimate: f64,
    pub measure_ci95: f64,
    /// `R^{γ/2−1}c₁^d/(4(2π)^d)·|Ω|` with `|Ω|` estimated from the proposals.
    pub measure_bound: f64,
    /// The same with `|Ω|` replaced by its closed-form lower bound.
    pub measure_chain_bound: f64,
    pub sobolev_norm: f64,
    pub ratio_estimate: f64,
    pub e1: f64,
    pub e2: f64,
    pub threshold: f64,
    pub admissible: bool,
    /// Smallest `|∏_{j≥2} I_j| / (√2R^{γ/2}/(Dq^{1/2}))^{d−1}` over samples.
    pub min_main_ratio: f64,
    /// Samples violating the main-term sandwich.
    pub sandwich_violations: usize,
    /// Largest congruence defect of samples and selected times.
    pub residue_error: f64,
    pub diagnosis: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub d: usize,
    pub gamma: f64,
    /// γ actually used for the data (γ > 2 reuses the γ = 2 construction).
    pub gamma_data: f64,
    pub s: f64,
    pub calibration: Calibration,
    pub records: Vec<LowerBoundRecord>,
    pub ratio_slope: f64,
    pub modulus_slope: f64,
    /// `d(γ−1)/(2(d+1)) − γs/2`
    pub ratio_target: f64,
    /// `(γ−1)(d−1)/4`
    pub modulus_target: f64,
    pub tolerance: f64,
    pub failure: Option<String>,
}

pub fn params_for(d: usize, gamma: f64, r: f64, s: f64, constants: Option<Constants>) -> Result<CounterexampleParams> {
    let model = ModelParams::new(d, gamma, r, s)?;
    CounterexampleParams::new(model, constants.unwrap_or_else(|| Constants::defaults(d, gamma)))
}

/// One ladder entry.
pub fn lower_bound_record(
    cp: &CounterexampleParams,
    s: f64,
    n: usize,
    seed: u64,
    c_delta0: f64,
    policy: BudgetPolicy,
) -> Result<LowerBoundRecord> {
    let draw = sample_omega_star(cp, n, seed)?;
    let d = cp.d() as i32;
    let c0 = cp.constants.c0;
    let dd = cp.spacing();
    let height = cp.comb.height;
    let evaluated = draw
        .samples
        .par_iter()
        .map(|smp| -> Result<_> {
            let ts = select_time(cp, smp)?;
            let res = smp
                .check(cp)?
                .max(residue_error(dd * dd * ts.t, smp.anchor.centers()[0]));
            let p = SpaceTimePoint::new(smp.x.clone(), ts.t)?;
            let fe = factorized_evaluate(cp, &p)?;
            let comb: f64 = fe.ij.iter().map(|c| c.norm()).product();
            let main = (2f64.sqrt() * height / (dd * (smp.anchor.q as f64).sqrt())).powi(d - 1);
            let budget = error_budget(cp, ts.t, c_delta0);
            let lower = (1.0 - c0).powi(d - 1) * main - budget.e1 - budget.e2;
            Ok((fe.product_modulus / TAU.powi(d), smp.weight(), comb / main, comb < lower, res, budget))
        })
        .collect::<Result<Vec<_>>>()?;
    let wsum: f64 = evaluated.iter().map(|e| e.1).sum();
    let mean_modulus = evaluated.iter().map(|e| e.0 * e.1).sum::<f64>() / wsum;
    let mean_sq_modulus = evaluated.iter().map(|e| e.0 * e.0 * e.1).sum::<f64>() / wsum;
    let (mut e1, mut e2, mut threshold) = (0.0f64, 0.0f64, 0.0);
    let mut admissible = true;
    for e in &evaluated {
        e1 = e1.max(e.5.e1);
        e2 = e2.max(e.5.e2);
        threshold = e.5.threshold;
        admissible &= e.5.admissible;
    }
    let diagnosis = (!admissible).then(|| {
        let mut why = Vec::new();
        if e1 > threshold {
            why.push(format!("E1 bound {e1:.3e} exceeds {threshold:.3e}"));
        }
        if e2 > threshold {
            why.push(format!("E2 bound {e2:.3e} exceeds {threshold:.3e}"));
        }
        why.join("; ")
    });
    if policy == BudgetPolicy::Abort {
        if let Some(why) = &diagnosis {
            return Err(Error::Inadmissible(format!("R = {}: {why}", cp.r())));
        }
    }
    let sobolev_norm = cp.descriptor()?.sobolev_norm(s)?;
    let chain = omega_measure_lower(cp)?.bound;
    Ok(LowerBoundRecord {
        r: cp.r(),
        samples: evaluated.len(),
        proposals: draw.proposals,
        mean_modulus,
        mean_sq_modulus,
        measure_estimate: draw.measure_estimate,
        measure_ci95: draw.measure_ci95,
        measure_bound: omega_star_lower(cp, draw.omega_estimate),
        measure_chain_bound: omega_star_lower(cp, chain),
        sobolev_norm,
        ratio_estimate: draw.measure_estimate.sqrt() * mean_modulus / sobolev_norm,
        e1,
        e2,
        threshold,
        admissible,
        min_main_ratio: evaluated.iter().map(|e| e.2).fold(f64::INFINITY, f64::min),
        sandwich_violations: evaluated.iter().filter(|e| e.3).count(),
        residue_error: evaluated.iter().map(|e| e.4).fold(0.0, f64::max),
        diagnosis,
    })
}

pub fn lower_bound_experiment(cfg: &ExperimentConfig) -> Result<LowerBoundReport> {
    validate_ladder(&cfg.ladder)?;
    if !(cfg.gamma > 1.0) {
        return Err(invalid("gamma", "the lattice-comb construction needs γ > 1"));
    }
    if cfg.n_samples == 0 {
        return Err(invalid("n_samples", "must be positive"));
    }
    let gamma_data = cfg.gamma.min(2.0);
    let d = cfg.d;
    let first = params_for(d, gamma_data, cfg.ladder[0], cfg.s, cfg.constants)?;
    let calibration = match cfg.c_delta0 {
        Some(value) => Calibration {
            r: f64::NAN,
            delta0: first.constants.delta0,
            value,
            argmax: (0, 0, 0, 0),
            uniform_ratio: f64::NAN,
        },
        None => calibrate_c_delta0(&first)?,
    };
    let mut records = Vec::new();
    let mut failure = None;
    for (i, &r) in cfg.ladder.iter().enumerate() {
        let out = params_for(d, gamma_data, r, cfg.s, cfg.constants).and_then(|cp| {
            lower_bound_record(
                &cp,
                cfg.s,
                cfg.n_samples,
                cfg.seed.wrapping_add(i as u64),
                calibration.value,
                cfg.budget,
            )
        });
        match out {
            Ok(rec) => records.push(rec),
            Err(e) => {
                failure = Some(format!("R = {r}: {e}"));
                break;
            }
        }
    }
    let slope = |f: fn(&LowerBoundRecord) -> f64| -> f64 {
        let xs: Vec<f64> = records.iter().map(|r| r.r).collect();
        let ys: Vec<f64> = records.iter().map(f).collect();
        loglog_fit(&xs, &ys).map(|fit| fit.slope).unwrap_or(f64::NAN)
    };
    let df = d as f64;
    Ok(LowerBoundReport {
        d,
        gamma: cfg.gamma,
        gamma_data,
        s: cfg.s,
        ratio_slope: slope(|r| r.ratio_estimate),
        modulus_slope: slope(|r| r.mean_modulus),
        ratio_target: df * (gamma_data - 1.0) / (2.0 * (df + 1.0)) - gamma_data * cfg.s / 2.0,
        modulus_target: (gamma_data - 1.0) * (df - 1.0) / 4.0,
        tolerance: SLOPE_TOLERANCE,
        calibration,
        records,
        failure,
    })
}

/// `min |P g(x,0)| / |P g(0,0)|` over `points` seeded points of
/// `B(0, 1/(1000R))` for the product profile of the `γ ≤ 1` regime.
pub fn case1_sanity(d: usize, r: f64, points: usize, seed: u64) -> Result<f64> {
    let f = SpectrumDescriptor::case1(d, r)?;
    let origin = evaluate_p_gamma(&f, 1.0, &SpaceTimePoint::new(vec![0.0; d], 0.0)?)?.norm();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rad = 1.0 / (1000.0 * r);
    let mut worst = f64::INFINITY;
    for _ in 0..points {
        let x: Vec<f64> = loop {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-rad..rad)).collect();
            if x.iter().map(|v| v * v).sum::<f64>() <= rad * rad {
                break x;
            }
        };
        let v = evaluate_p_gamma(&f, 1.0, &SpaceTimePoint::new(x, 0.0)?)?.norm();
        worst = worst.min(v / origin);
    }
    Ok(worst)
}
