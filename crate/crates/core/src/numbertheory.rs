//! Arithmetic kernels: quadratic Gauss and Weyl sums, discrete Abel
//! summation, Euler's totient, simultaneous Dirichlet approximation and the
//! scaled-union bound for axis-aligned cubes.
//!
//! Exponential sums with rational phases are reduced to residues in exact
//! integer arithmetic and then summed by multiplicity, one complex
//! exponential per residue class.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaussSumParams {
    pub a: i64,
    pub b: i64,
    pub q: u64,
}

impl GaussSumParams {
    pub fn new(a: i64, b: i64, q: u64) -> Result<Self> {
        if q == 0 {
            return Err(invalid("q", "modulus must be positive"));
        }
        Ok(GaussSumParams { a, b, q })
    }

    /// Hypotheses of the modulus law: `gcd(a,q) = 1`, `4 | q`, `b` even.
    pub fn check_law_hypotheses(&self) -> Result<()> {
        if self.q % 4 != 0 {
            return Err(Error::Precondition(format!("q = {} is not ≡ 0 mod 4", self.q)));
        }
        if self.a.gcd(&(self.q as i64)) != 1 {
            return Err(Error::Precondition(format!(
                "gcd(a, q) = gcd({}, {}) ≠ 1",
                self.a, self.q
            )));
        }
        if self.b % 2 != 0 {
            return Err(Error::Precondition(format!("b = {} is odd", self.b)));
        }
        Ok(())
    }
}

/// `e^{2πik/m}` for `k = 0..m`.
pub fn roots_of_unity(m: u64) -> Vec<C64> {
    (0..m)
        .map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64))
        .collect()
}

fn sum_by_multiplicity(counts: &[u64]) -> C64 {
    let m = counts.len() as u64;
    let roots = roots_of_unity(m);
    counts
        .iter()
        .zip(&roots)
        .filter(|(c, _)| **c > 0)
        .map(|(c, w)| *c as f64 * w)
        .sum()
}

/// `G(a,b;q) = Σ_{ℓ=1}^{q} e^{2πi(ℓb + ℓ²a)/q}`.
pub fn gauss_sum(p: GaussSumParams) -> C64 {
    let q = p.q as i128;
    let (a, b) = (p.a as i128, p.b as i128);
    let mut counts = vec![0u64; p.q as usize];
    for l in 1..=q {
        let k = (l * b + l * l % q * a).rem_euclid(q);
        counts[k as usize] += 1;
    }
    sum_by_multiplicity(&counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawCheck {
    pub modulus: f64,
    pub expected: f64,
    pub passed: bool,
}

/// Checks `|G(a,b;q)| = √(2q)` to `10⁻⁹√q`. An unmet hypothesis is an
/// `Err(Precondition)`; a failed law is `Ok` with `passed = false`.
pub fn gauss_modulus_law(p: GaussSumParams) -> Result<LawCheck> {
    p.check_law_hypotheses()?;
    let modulus = gauss_sum(p).norm();
    let expected = (2.0 * p.q as f64).sqrt();
    Ok(LawCheck {
        modulus,
        expected,
        passed: (modulus - expected).abs() <= 1e-9 * (p.q as f64).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussLawSummary {
    pub q_max: u64,
    pub cases: u64,
    pub failures: u64,
    pub max_deviation: f64,
}

/// Every `q ∈ {4, 8, …, q_max}`, every `a` coprime to `q`, every even `b` mod `q`.
pub fn gauss_law_exhaustive(q_max: u64) -> GaussLawSummary {
    use rayon::prelude::*;
    let per_q: Vec<(u64, u64, f64)> = (1..=q_max / 4)
        .into_par_iter()
        .map(|k| {
            let q = 4 * k;
            let (mut cases, mut failures, mut worst) = (0u64, 0u64, 0f64);
            for a in 1..q as i64 {
                if a.gcd(&(q as i64)) != 1 {
                    continue;
                }
                for b in (0..q as i64).step_by(2) {
                    let check = gauss_modulus_law(GaussSumParams { a, b, q })
                        .expect("hypotheses hold by construction");
                    cases += 1;
                    failures += !check.passed as u64;
                    worst = worst.max((check.modulus - check.expected).abs() / (q as f64).sqrt());
                }
            }
            (cases, failures, worst)
        })
        .collect();
    GaussLawSummary {
        q_max,
        cases: per_q.iter().map(|c| c.0).sum(),
        failures: per_q.iter().map(|c| c.1).sum(),
        max_deviation: per_q.iter().map(|c| c.2).fold(0.0, f64::max),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeylPhase {
    pub alpha: f64,
    pub beta: f64,
    pub m: i64,
    pub n: u64,
    pub a: i64,
    pub q: u64,
}

impl WeylPhase {
    pub fn new(alpha: f64, beta: f64, m: i64, n: u64, a: i64, q: u64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("N", "must be positive"));
        }
        if q == 0 {
            return Err(invalid("q", "must be positive"));
        }
        if a.gcd(&(q as i64)) != 1 {
            return Err(invalid("a", format!("gcd({a}, {q}) ≠ 1")));
        }
        let qf = q as f64;
        if (alpha - a as f64 / qf).abs() > 1.0 / (qf * qf) * (1.0 + 1e-12) {
            return Err(invalid("alpha", format!("|α − {a}/{q}| > 1/q²")));
        }
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(invalid("alpha", "must be finite"));
        }
        Ok(WeylPhase {
            alpha,
            beta,
            m,
            n,
            a,
            q,
        })
    }
}

/// Fractional part of `x·y` without losing the low bits of the product.
fn frac_product(x: f64, y: f64) -> f64 {
    let p = x * y;
    let err = x.mul_add(y, -p);
    let f = (p - p.floor()) + err;
    f - f.floor()
}

/// `Σ_{M ≤ n < M+N} e^{2πi(αn² + βn)}` in floating point.
pub fn weyl_sum(w: &WeylPhase) -> C64 {
    (0..w.n as i64)
        .map(|k| {
            let n = (w.m + k) as f64;
            let ph = frac_product(w.alpha, n * n) + frac_product(w.beta, n);
            C64::from_polar(1.0, 2.0 * PI * ph)
        })
        .sum()
}

/// Exact-phase variant for `α = a/q`, `β = num/den`.
pub fn weyl_sum_rational(a: i64, q: u64, beta: (i64, u64), m: i64, n: u64) -> C64 {
    let modulus = q as i128 * beta.1 as i128;
    let (aa, bb) = (a as i128 * beta.1 as i128, beta.0 as i128 * q as i128);
    let mut counts = vec![0u64; modulus as usize];
    for k in 0..n as i128 {
        let x = (m as i128 + k).rem_euclid(modulus);
        let r = (aa * (x * x % modulus) + bb * x).rem_euclid(modulus);
        counts[r as usize] += 1;
    }
    sum_by_multiplicity(&counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeylBound {
    pub value: f64,
    /// Set when `q = 1`, where `(log q)^{1/2}` vanishes and the trivial
    /// bound `N` is returned instead.
    pub trivial: bool,
}

/// `(N q^{−1/2} + q^{1/2}) (log q)^{1/2}`.
pub fn weyl_bound_rhs(n: u64, q: u64) -> Result<WeylBound> {
    if n == 0 || q == 0 {
        return Err(invalid("N", "N and q must be positive"));
    }
    if q == 1 {
        return Ok(WeylBound {
            value: n as f64,
            trivial: true,
        });
    }
    let (nf, qf) = (n as f64, q as f64);
    Ok(WeylBound {
        value: (nf / qf.sqrt() + qf.sqrt()) * qf.ln().sqrt(),
        trivial: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeylCalibration {
    pub q_max: u64,
    pub n_max: u64,
    pub rho_star: f64,
    /// `(a, q, β numerator, β denominator, M, N)` attaining `rho_star`.
    pub argmax: (i64, u64, i64, u64, i64, u64),
}

const WEYL_BETAS: [(i64, u64); 3] = [(0, 1), (1, 3), (1, 2)];

/// Lengths used for the `M = −N/2` family: powers of two and their
/// midpoints `3·2^{k−1}`, up to `n_max`.
fn centered_lengths(n_max: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while p <= n_max {
        out.push(p);
        if p + p / 2 <= n_max {
            out.push(p + p / 2);
        }
        p *= 2;
    }
    out
}

/// Maximum of `|S|/rhs` over `2 ≤ q ≤ q_max`, `a` coprime, `β ∈ {0,1/3,1/2}`,
/// and both `M = 0` (every `N ≤ n_max`) and `M = −N/2` (`N` on a geometric
/// grid). `α = a/q` exactly, so phases are exact residues.
pub fn weyl_calibration(q_max: u64, n_max: u64) -> Result<WeylCalibration> {
    use rayon::prelude::*;
    if q_max < 2 || n_max < 2 {
        return Err(invalid("q_max", "need q_max ≥ 2 and n_max ≥ 2"));
    }
    let centered = centered_lengths(n_max);
    let best = (2..=q_max)
        .into_par_iter()
        .map(|q| {
            let mut best = (0.0f64, (0i64, q, 0i64, 1u64, 0i64, 0u64));
            for a in 1..q as i64 {
                if a.gcd(&(q as i64)) != 1 {
                    continue;
                }
                for &(bn, bd) in &WEYL_BETAS {
                    let modulus = q as i128 * bd as i128;
                    let roots = roots_of_unity(modulus as u64);
                    let (aa, bb) = (a as i128 * bd as i128, bn as i128 * q as i128);
                    let term = |x: i64| {
                        let x = (x as i128).rem_euclid(modulus);
                        roots[(aa * (x * x % modulus) + bb * x).rem_euclid(modulus) as usize]
                    };
                    let mut s = C64::new(0.0, 0.0);
                    for n in 1..=n_max {
                        s += term(n as i64 - 1);
                        let rho = s.norm() / weyl_bound_rhs(n, q).unwrap().value;
                        if rho > best.0 {
                            best = (rho, (a, q, bn, bd, 0, n));
                        }
                    }
                    for &n in &centered {
                        let m = -(n as i64) / 2;
                        let s: C64 = (m..m + n as i64).map(term).sum();
                        let rho = s.norm() / weyl_bound_rhs(n, q).unwrap().value;
                        if rho > best.0 {
                            best = (rho, (a, q, bn, bd, m, n));
                        }
                    }
                }
            }
            best
        })
        .reduce(
            || (0.0, (0, 0, 0, 1, 0, 0)),
            |x, y| if y.0 > x.0 { y } else { x },
        );
    Ok(WeylCalibration {
        q_max,
        n_max,
        rho_star: best.0,
        argmax: best.1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbelSides {
    pub lhs: C64,
    pub rhs: C64,
}

/// Summation by parts with `A(u) = Σ_{M ≤ n ≤ u} aₙ`:
/// `Σ_{n=M}^{M+N} aₙh(n) = A(M+N)h(M+N) − ∫_M^{M+N} A(u)h'(u) du`.
/// `A` is constant on unit cells, so the integral is `Σ A(n)(h(n+1) − h(n))`.
/// `a[k]` holds `a_{M+k}`; `a.len()` must be `N + 1`.
pub fn abel_sum_identity<H>(a: &[C64], h: H, m: i64) -> Result<AbelSides>
where
    H: Fn(f64) -> C64,
{
    if a.is_empty() {
        return Err(invalid("a", "sequence must cover [M, M+N]"));
    }
    let hs: Vec<C64> = (0..a.len()).map(|k| h((m + k as i64) as f64)).collect();
    let lhs: C64 = a.iter().zip(&hs).map(|(x, y)| x * y).sum();
    let mut partial = C64::new(0.0, 0.0);
    let mut integral = C64::new(0.0, 0.0);
    for k in 0..a.len() - 1 {
        partial += a[k];
        integral += partial * (hs[k + 1] - hs[k]);
    }
    partial += a[a.len() - 1];
    Ok(AbelSides {
        lhs,
        rhs: partial * hs[a.len() - 1] - integral,
    })
}

pub fn totient(q: u64) -> u64 {
    let mut n = q;
    let mut out = q;
    let mut p = 2;
    while p * p <= n {
        if n % p == 0 {
            while n % p == 0 {
                n /= p;
            }
            out -= out / p;
        }
        p += 1;
    }
    if n > 1 {
        out -= out / n;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirichletApprox {
    pub q: u64,
    pub a: Vec<i64>,
}

/// Smallest `1 ≤ q ≤ Q` with integers `a_j` such that
/// `|target_j − 2πa_j/q| ≤ 2π/(q·Q^{1/k})`, `k = target.len()`.
pub fn dirichlet_simultaneous(target: &[f64], q_cap: f64) -> Result<DirichletApprox> {
    if target.is_empty() {
        return Err(invalid("target", "needs at least one coordinate"));
    }
    if !(q_cap >= 1.0) || !q_cap.is_finite() {
        return Err(invalid("Q", format!("must be ≥ 1, got {q_cap}")));
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(invalid("target", "must be finite"));
    }
    let shrink = q_cap.powf(-1.0 / target.len() as f64);
    for q in 1..=q_cap.floor() as u64 {
        let qf = q as f64;
        let tol = 2.0 * PI / qf * shrink * (1.0 + 1e-12);
        let a: Vec<i64> = target
            .iter()
            .map(|t| (t * qf / (2.0 * PI)).round() as i64)
            .collect();
        if target
            .iter()
            .zip(&a)
            .all(|(t, &aj)| (t - 2.0 * PI * aj as f64 / qf).abs() <= tol)
        {
            return Ok(DirichletApprox { q, a });
        }
    }
    // Minkowski's linear-forms theorem guarantees a solution; reaching
    // here means rounding defeated the search.
    Err(invalid("target", "no approximation found within the cap"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: Vec<f64>,
    pub side: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeFamily {
    pub cubes: Vec<Cube>,
    pub c: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VitaliOutcome {
    pub union_measure: f64,
    pub scaled_union_measure: f64,
    /// `c^k 3^{−k} · union_measure`, `k` the cube dimension.
    pub bound: f64,
    pub holds: bool,
}

type Boxes = Vec<Vec<(f64, f64)>>;

/// Exact Lebesgue measure of a finite union of axis-aligned boxes by
/// recursive slab sweeps along the leading axis.
pub fn union_measure(boxes: &[Vec<(f64, f64)>]) -> f64 {
    let Some(first) = boxes.first() else {
        return 0.0;
    };
    if first.len() == 1 {
        let mut iv: Vec<(f64, f64)> = boxes.iter().map(|b| b[0]).collect();
        iv.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut total = 0.0;
        let (mut lo, mut hi) = iv[0];
        for &(a, b) in &iv[1..] {
            if a > hi {
                total += hi - lo;
                (lo, hi) = (a, b);
            } else {
                hi = hi.max(b);
            }
        }
        return total + (hi - lo);
    }
    let mut cuts: Vec<f64> = boxes.iter().flat_map(|b| [b[0].0, b[0].1]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let slab: Boxes = boxes
            .iter()
            .filter(|b| b[0].0 < mid && mid < b[0].1)
            .map(|b| b[1..].to_vec())
            .collect();
        if !slab.is_empty() {
            total += (w[1] - w[0]) * union_measure(&slab);
        }
    }
    total
}

fn boxes_of(cubes: &[Cube], scale: f64) -> Boxes {
    cubes
        .iter()
        .map(|c| {
            let h = 0.5 * c.side * scale;
            c.center.iter().map(|x| (x - h, x + h)).collect()
        })
        .collect()
}

pub fn vitali_scaled_union(fam: &CubeFamily) -> Result<VitaliOutcome> {
    if !(fam.c > 0.0 && fam.c < 1.0) {
        return Err(invalid("c", format!("scale must lie in (0,1), got {}", fam.c)));
    }
    let Some(first) = fam.cubes.first() else {
        return Err(invalid("cubes", "family is empty"));
    };
    let k = first.center.len();
    if k == 0 {
        return Err(invalid("cubes", "zero-dimensional cube"));
    }
    for cube in &fam.cubes {
        if cube.center.len() != k {
            return Err(Error::Dimension {
                expected: k,
                got: cube.center.len(),
            });
        }
        if !(cube.side > 0.0) || !cube.side.is_finite() {
            return Err(invalid("side", format!("degenerate cube side {}", cube.side)));
        }
    }
    let union = union_measure(&boxes_of(&fam.cubes, 1.0));
    let scaled = union_measure(&boxes_of(&fam.cubes, fam.c));
    let bound = (fam.c / 3.0).powi(k as i32) * union;
    Ok(VitaliOutcome {
        union_measure: union,
        scaled_union_measure: scaled,
        bound,
        holds: scaled >= bound * (1.0 - 1e-12),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct_gauss(a: i64, b: i64, q: u64) -> C64 {
        (1..=q)
            .map(|l| {
                let l = l as f64;
                let qf = q as f64;
                C64::from_polar(1.0, 2.0 * PI * (l * b as f64 + l * l * a as f64) / qf)
            })
            .sum()
    }

    #[test]
    fn gauss_examples() {
        let g = gauss_sum(GaussSumParams::new(1, 0, 4).unwrap());
        assert!((g - C64::new(2.0, 2.0)).norm() < 1e-12);
        let g = gauss_sum(GaussSumParams::new(1, 2, 4).unwrap());
        assert!((g - C64::new(2.0, -2.0)).norm() < 1e-12);
        for (a, b) in [(0, 0), (7, -3), (-11, 5)] {
            let g = gauss_sum(GaussSumParams::new(a, b, 1).unwrap());
            assert!((g - C64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn gauss_matches_direct_summation() {
        for q in 1..40u64 {
            for a in -3..9i64 {
                for b in -2..5i64 {
                    let fast = gauss_sum(GaussSumParams { a, b, q });
                    assert!((fast - direct_gauss(a, b, q)).norm() < 1e-10);
                    assert!(fast.norm() <= q as f64 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn gauss_law_preconditions_are_distinct() {
        let e = gauss_modulus_law(GaussSumParams::new(1, 0, 6).unwrap()).unwrap_err();
        assert!(matches!(e, Error::Precondition(_)));
        let e = gauss_modulus_law(GaussSumParams::new(2, 0, 4).unwrap()).unwrap_err();
        assert!(matches!(e, Error::Precondition(_)));
        let e = gauss_modulus_law(GaussSumParams::new(1, 1, 8).unwrap()).unwrap_err();
        assert!(matches!(e, Error::Precondition(_)));
        assert!(gauss_modulus_law(GaussSumParams::new(3, 2, 8).unwrap()).unwrap().passed);
    }

    #[test]
    fn gauss_law_small_exhaustive() {
        let s = gauss_law_exhaustive(64);
        assert_eq!(s.failures, 0);
        assert!(s.cases > 0);
    }

    #[test]
    fn weyl_examples() {
        let w = WeylPhase::new(0.0, 0.0, 5, 17, 0, 1).unwrap();
        assert!((weyl_sum(&w) - C64::new(17.0, 0.0)).norm() < 1e-12);
        let w = WeylPhase::new(0.5, 0.0, 0, 4, 1, 2).unwrap();
        assert!(weyl_sum(&w).norm() < 1e-12);
        let w = WeylPhase::new(0.3127, 0.77, -40, 300, 5, 16).unwrap();
        let v = WeylPhase::new(-0.3127, -0.77, -40, 300, -5, 16).unwrap();
        assert!((weyl_sum(&w) - weyl_sum(&v).conj()).norm() < 1e-12);
    }

    #[test]
    fn weyl_rejects_bad_anchor() {
        assert!(WeylPhase::new(0.3, 0.0, 0, 10, 2, 4).is_err());
        assert!(WeylPhase::new(0.9, 0.0, 0, 10, 1, 4).is_err());
    }

    #[test]
    fn weyl_rational_matches_float() {
        for (a, q) in [(1i64, 2u64), (3, 8), (5, 12), (7, 64)] {
            for beta in WEYL_BETAS {
                for (m, n) in [(0i64, 100u64), (-50, 100), (17, 333)] {
                    let exact = weyl_sum_rational(a, q, beta, m, n);
                    let alpha = a as f64 / q as f64;
                    let w = WeylPhase::new(alpha, beta.0 as f64 / beta.1 as f64, m, n, a, q)
                        .unwrap();
                    assert!((exact - weyl_sum(&w)).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn weyl_bound_examples() {
        let b = weyl_bound_rhs(7, 7).unwrap();
        assert!((b.value - (7.0 / 7f64.sqrt() + 7f64.sqrt()) * 7f64.ln().sqrt()).abs() < 1e-12);
        assert!((b.value - 7.38).abs() < 0.01);
        let b = weyl_bound_rhs(1, 2).unwrap();
        assert!((b.value - 1.766).abs() < 1e-3);
        let b = weyl_bound_rhs(9, 1).unwrap();
        assert!(b.trivial && b.value == 9.0);
        // N/√q + √q is smallest at q = N
        let n = 400u64;
        let shape = |q: u64| n as f64 / (q as f64).sqrt() + (q as f64).sqrt();
        let best = (2..2000).min_by(|x, y| shape(*x).total_cmp(&shape(*y))).unwrap();
        assert_eq!(best, n);
        assert!((shape(n) - 2.0 * (n as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn weyl_calibration_is_finite_and_attained() {
        let c = weyl_calibration(16, 256).unwrap();
        assert!(c.rho_star.is_finite() && c.rho_star > 0.0);
        let (a, q, bn, bd, m, n) = c.argmax;
        let s = weyl_sum_rational(a, q, (bn, bd), m, n);
        assert!((s.norm() / weyl_bound_rhs(n, q).unwrap().value - c.rho_star).abs() < 1e-9);
    }

    #[test]
    fn abel_examples() {
        let ones = vec![C64::new(1.0, 0.0); 4];
        let s = abel_sum_identity(&ones, |u| C64::new(u, 0.0), 0).unwrap();
        assert!((s.lhs - 6.0).norm() < 1e-15 && (s.rhs - 6.0).norm() < 1e-15);
        let seq = [C64::new(0.5, 1.0), C64::new(-2.0, 0.25), C64::new(1.0, -1.0)];
        let s = abel_sum_identity(&seq, |_| C64::new(3.0, -1.0), -7).unwrap();
        let total: C64 = seq.iter().sum();
        assert!((s.rhs - total * C64::new(3.0, -1.0)).norm() < 1e-14);
        let s = abel_sum_identity(&seq[..1], |u| C64::new(u * u, 1.0), 4).unwrap();
        assert!((s.lhs - seq[0] * C64::new(16.0, 1.0)).norm() < 1e-14);
        assert_eq!(s.lhs, s.rhs);
    }

    #[test]
    fn abel_integral_form_by_quadrature() {
        // the cell sum equals ∫ A(u) h'(u) du evaluated cell by cell
        let seq: Vec<C64> = (0..6).map(|k| C64::new(k as f64 - 2.0, 0.5 * k as f64)).collect();
        let h = |u: f64| C64::new(u * u * u - u, u.sin());
        let dh = |u: f64| C64::new(3.0 * u * u - 1.0, u.cos());
        let m = -2i64;
        let mut integral = C64::new(0.0, 0.0);
        let mut partial = C64::new(0.0, 0.0);
        for k in 0..seq.len() - 1 {
            partial += seq[k];
            let lo = (m + k as i64) as f64;
            let e = crate::quad::Adaptive::with_tol(1e-14)
                .integrate(lo, lo + 1.0, 2, |u| partial * dh(u))
                .unwrap();
            integral += e.value;
        }
        let a_end: C64 = seq.iter().sum();
        let rhs = a_end * h((m + 5) as f64) - integral;
        let s = abel_sum_identity(&seq, h, m).unwrap();
        assert!((s.rhs - rhs).norm() < 1e-11);
        assert!((s.lhs - s.rhs).norm() < 1e-12);
    }

    fn sieve_totient(q: u64) -> u64 {
        (1..=q).filter(|a| a.gcd(&q) == 1).count() as u64
    }

    #[test]
    fn totient_examples() {
        assert_eq!(totient(1), 1);
        assert_eq!(totient(12), 4);
        assert_eq!(totient(35), totient(5) * totient(7));
        assert_eq!(totient(35), 24);
        for q in 1..500 {
            assert_eq!(totient(q), sieve_totient(q), "q = {q}");
        }
    }

    fn dirichlet_ok(target: &[f64], q_cap: f64, r: &DirichletApprox) -> bool {
        let tol = 2.0 * PI / (r.q as f64 * q_cap.powf(1.0 / target.len() as f64));
        r.q >= 1
            && r.q as f64 <= q_cap
            && target
                .iter()
                .zip(&r.a)
                .all(|(t, &a)| (t - 2.0 * PI * a as f64 / r.q as f64).abs() <= tol * (1.0 + 1e-9))
    }

    #[test]
    fn dirichlet_examples() {
        let r = dirichlet_simultaneous(&[0.0, 0.0], 10.0).unwrap();
        assert_eq!(r, DirichletApprox { q: 1, a: vec![0, 0] });
        let t = [2.0 * PI * 3.0 / 8.0];
        let r = dirichlet_simultaneous(&t, 8.0).unwrap();
        assert!(dirichlet_ok(&t, 8.0, &r));
        assert!(r.q <= 8);
        // exhaustive oracle: nothing smaller works
        for q in 1..r.q {
            let cand = DirichletApprox {
                q,
                a: vec![(t[0] * q as f64 / (2.0 * PI)).round() as i64],
            };
            let strict = (t[0] - 2.0 * PI * cand.a[0] as f64 / q as f64).abs()
                <= 2.0 * PI / (q as f64 * 8.0) * (1.0 - 1e-9);
            assert!(!strict);
        }
    }

    #[test]
    fn dirichlet_random_targets_and_covering() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let t = [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)];
            let r = dirichlet_simultaneous(&t, 64.0).unwrap();
            assert!(dirichlet_ok(&t, 64.0, &r), "{t:?} → {r:?}");
        }
        for _ in 0..10_000 {
            let t = [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)];
            assert!(dirichlet_simultaneous(&t, 25.0).is_ok());
        }
    }

    fn grid_measure(boxes: &[Vec<(f64, f64)>], n: usize) -> f64 {
        // midpoint grid oracle on [0,1]^k with boxes snapped to the grid
        let k = boxes[0].len();
        let h = 1.0 / n as f64;
        let mut count = 0usize;
        let mut idx = vec![0usize; k];
        loop {
            let p: Vec<f64> = idx.iter().map(|&i| (i as f64 + 0.5) * h).collect();
            if boxes
                .iter()
                .any(|b| b.iter().zip(&p).all(|((lo, hi), x)| lo <= x && x <= hi))
            {
                count += 1;
            }
            let mut j = 0;
            loop {
                if j == k {
                    return count as f64 * h.powi(k as i32);
                }
                idx[j] += 1;
                if idx[j] < n {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
    }

    #[test]
    fn union_measure_matches_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40;
        for k in 1..=3 {
            for _ in 0..20 {
                let boxes: Boxes = (0..rng.gen_range(1..8))
                    .map(|_| {
                        (0..k)
                            .map(|_| {
                                let a = rng.gen_range(0..n) as f64 / n as f64;
                                let b = rng.gen_range(0..n) as f64 / n as f64;
                                (a.min(b), a.max(b) + 1.0 / n as f64)
                            })
                            .collect()
                    })
                    .collect();
                let exact = union_measure(&boxes);
                let grid = grid_measure(&boxes, n);
                assert!((exact - grid).abs() < 1e-9, "k = {k}: {exact} vs {grid}");
            }
        }
    }

    #[test]
    fn vitali_examples() {
        let one = CubeFamily {
            cubes: vec![Cube {
                center: vec![0.0, 0.0],
                side: 1.0,
            }],
            c: 0.5,
        };
        let v = vitali_scaled_union(&one).unwrap();
        assert!((v.scaled_union_measure - 0.25).abs() < 1e-15);
        assert!((v.bound - 1.0 / 36.0).abs() < 1e-15);
        assert!(v.holds);
        let disjoint = CubeFamily {
            cubes: (0..4)
                .map(|i| Cube {
                    center: vec![3.0 * i as f64, 0.0, 1.0],
                    side: 1.0 + i as f64 * 0.1,
                })
                .collect(),
            c: 0.3,
        };
        let v = vitali_scaled_union(&disjoint).unwrap();
        assert!((v.scaled_union_measure - 0.027 * v.union_measure).abs() < 1e-12);
        let bad = CubeFamily {
            cubes: vec![Cube {
                center: vec![0.0],
                side: 0.0,
            }],
            c: 0.5,
        };
        assert!(vitali_scaled_union(&bad).is_err());
    }

    proptest! {
        #[test]
        fn vitali_bound_holds(
            k in 1usize..=3,
            c in 0.05f64..0.95,
            cubes in prop::collection::vec(
                (prop::collection::vec(0.0f64..1.0, 3), 0.02f64..0.6), 1..15),
        ) {
            let fam = CubeFamily {
                cubes: cubes
                    .into_iter()
                    .map(|(mut center, side)| { center.truncate(k); Cube { center, side } })
                    .collect(),
                c,
            };
            let v = vitali_scaled_union(&fam).unwrap();
            prop_assert!(v.holds);
            prop_assert!(v.scaled_union_measure <= v.union_measure + 1e-12);
        }

        #[test]
        fn abel_identity_random(
            m in -40i64..40,
            seq in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..65),
            coef in prop::collection::vec(-1.0f64..1.0, 1..5),
        ) {
            let a: Vec<C64> = seq.iter().map(|&(x, y)| C64::new(x, y)).collect();
            let n = a.len() as f64;
            let h = |u: f64| {
                let v = (u - m as f64) / n;
                C64::new(coef.iter().rev().fold(0.0, |acc, c| acc * v + c), 0.0)
            };
            let s = abel_sum_identity(&a, h, m).unwrap();
            prop_assert!((s.lhs - s.rhs).norm() < 1e-12);
        }

        #[test]
        fn gauss_modulus_never_exceeds_q(a in -500i64..500, b in -500i64..500, q in 1u64..300) {
            let g = gauss_sum(GaussSumParams { a, b, q });
            prop_assert!(g.norm() <= q as f64 * (1.0 + 1e-12));
        }
    }
}
