//! The critical level and the annealed survival probability.
//!
//! Everything here works on a fixed [`ChiSampleSet`]: `L_gamma` and `L_chi`
//! are sample means of `exp(-u gamma_i)` and `exp(-u chi_i)`, so the index
//! `f~'(L_gamma(u))` is an exactly decreasing function of `u` and bisection
//! on it is well defined.

use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::offspring::OffspringDistribution;
use crate::rng::{mix, tag};
use crate::roots::{bisect, Bracket};
use crate::sum::{mean_stderr, par_pairwise_sum};
use crate::transforms::{laplace_terms, sample_chi, ChiSampleSet, Transform};
use crate::Scalar;

/// Monte Carlo settings of [`critical_u`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McParams {
    pub n: usize,
    pub depth: u32,
    pub seed: u64,
    pub replicates: usize,
}

impl Default for McParams {
    fn default() -> Self {
        Self {
            n: 100_000,
            depth: 30,
            seed: 0,
            replicates: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult<T> {
    pub u_star: T,
    pub bracket: (T, T),
    pub tol: T,
    pub index_at_u_star: T,
    pub mc: McParams,
    pub seeds: Vec<u64>,
    /// `u*` re-solved on each replicate sample set.
    pub replicate_u_star: Vec<T>,
    /// `max - min` of `replicate_u_star`.
    pub spread: T,
}

impl<T: Scalar> SolverResult<T> {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "u_star": self.u_star.as_f64(),
            "bracket": [self.bracket.0.as_f64(), self.bracket.1.as_f64()],
            "tol": self.tol.as_f64(),
            "index_at": self.index_at_u_star.as_f64(),
            "n": self.mc.n,
            "depth": self.mc.depth,
            "seeds": self.seeds,
            "spread": self.spread.as_f64(),
            "replicate_u_star": self.replicate_u_star.iter().map(|x| x.as_f64()).collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointResult<T> {
    pub r: T,
    pub iterates: Vec<T>,
    pub converged: bool,
    pub u: T,
}

fn check_u<T: Scalar>(op: &'static str, u: T, strict: bool) -> Result<()> {
    let ok = u.is_finite()
        && if strict {
            u > T::zero()
        } else {
            u >= T::zero()
        };
    if ok {
        Ok(())
    } else {
        Err(Error::Domain(op, format!("level u = {u} out of range")))
    }
}

fn mean<T: Scalar>(xs: &[T]) -> T {
    par_pairwise_sum(xs) / T::from_count(xs.len())
}

/// `(L_gamma(u), L_chi(u))` as plain sample means.
pub fn transform_means<T: Scalar>(samples: &ChiSampleSet<T>, u: T) -> Result<(T, T)> {
    check_u("transform_means", u, false)?;
    Ok((
        mean(&laplace_terms(samples, u, Transform::Gamma)),
        mean(&laplace_terms(samples, u, Transform::Chi)),
    ))
}

/// `f~'(L_gamma(u))`; the vacant cluster percolates iff it exceeds 1.
pub fn criticality_index<T: Scalar>(
    samples: &ChiSampleSet<T>,
    dist: &OffspringDistribution<T>,
    u: T,
) -> Result<T> {
    check_u("criticality_index", u, false)?;
    Ok(dist.ft1(mean(&laplace_terms(samples, u, Transform::Gamma))))
}

const U_MIN: f64 = 1e-6;
const U_MAX: f64 = 1e6;

/// Solves `f~'(L_gamma(u)) = 1` on one sample set.
pub fn solve_critical_on<T: Scalar>(
    samples: &ChiSampleSet<T>,
    dist: &OffspringDistribution<T>,
    tol: T,
) -> Result<Bracket<T>> {
    if !(tol > T::zero()) {
        return Err(Error::Domain(
            "critical_u",
            format!("tol = {tol} must be positive"),
        ));
    }
    let excess = |u: T| criticality_index(samples, dist, u).map(|i| i - T::one());
    let two = T::lit(2.0);
    let (mut lo, mut hi) = (T::one(), T::one());
    if excess(T::one())? > T::zero() {
        while excess(hi)? > T::zero() {
            lo = hi;
            hi = hi * two;
            if hi > T::lit(U_MAX) {
                return Err(Error::NoBracket {
                    lo: lo.as_f64(),
                    hi: U_MAX,
                });
            }
        }
    } else {
        while excess(lo)? <= T::zero() {
            hi = lo;
            lo = lo / two;
            if lo < T::lit(U_MIN) {
                return Err(Error::NoBracket {
                    lo: U_MIN,
                    hi: hi.as_f64(),
                });
            }
        }
    }
    log::debug!("critical level bracketed in [{lo}, {hi}]");
    let tol = tol.max(T::epsilon() * hi);
    bisect(|u| excess(u).unwrap_or(T::nan()), lo, hi, tol, 400).ok_or(Error::NoBracket {
        lo: lo.as_f64(),
        hi: hi.as_f64(),
    })
}

/// Critical level from `mc.replicates` independent sample sets. The reported
/// `u*` solves the equation on their union; the spread of the per-replicate
/// solutions measures the Monte Carlo uncertainty.
pub fn critical_u<T: Scalar>(
    dist: &OffspringDistribution<T>,
    tol: T,
    mc: McParams,
) -> Result<SolverResult<T>> {
    if mc.replicates < 1 {
        return Err(Error::Domain(
            "critical_u",
            "need at least one replicate".into(),
        ));
    }
    let seeds: Vec<u64> = (0..mc.replicates as u64)
        .map(|r| mix(mix(mc.seed, tag::REPLICATE), r))
        .collect();
    let sets = seeds
        .iter()
        .map(|&s| sample_chi(dist, mc.n, mc.depth, s))
        .collect::<Result<Vec<_>>>()?;
    let replicate_u_star = sets
        .par_iter()
        .map(|s| solve_critical_on(s, dist, tol).map(|b| b.midpoint()))
        .collect::<Result<Vec<T>>>()?;
    let pooled = ChiSampleSet::pooled(&sets)?;
    let b = solve_critical_on(&pooled, dist, tol)?;
    let u_star = b.midpoint();
    let lo = replicate_u_star.iter().copied().fold(T::infinity(), T::min);
    let hi = replicate_u_star
        .iter()
        .copied()
        .fold(T::neg_infinity(), T::max);
    Ok(SolverResult {
        u_star,
        bracket: (b.lo, b.hi),
        tol,
        index_at_u_star: criticality_index(&pooled, dist, u_star)?,
        mc,
        seeds,
        replicate_u_star,
        spread: hi - lo,
    })
}

/// `phi(r) = L_chi - r - f~(L_gamma - r)`; its largest root in `[0, 1]` is the
/// annealed survival probability.
pub fn phi<T: Scalar>(dist: &OffspringDistribution<T>, l_gamma: T, l_chi: T, r: T) -> T {
    l_chi - r - dist.ft((l_gamma - r).max(T::zero()))
}

pub const DEFAULT_MAX_ITER: usize = 100_000;

pub fn fixed_point_r<T: Scalar>(
    samples: &ChiSampleSet<T>,
    dist: &OffspringDistribution<T>,
    u: T,
    tol: T,
) -> Result<FixedPointResult<T>> {
    check_u("fixed_point_r", u, true)?;
    let (lg, lc) = transform_means(samples, u)?;
    fixed_point_from(dist, lg, lc, u, tol, DEFAULT_MAX_ITER)
}

/// Iterates `r_{k+1} = L_chi - f~(L_gamma - r_k)` from `r_0 = L_chi`, clamped
/// to stay non-increasing and non-negative. The iteration stops once the
/// step, divided by the local contraction gap `1 - f~'(L_gamma - r)`, is
/// below `tol`, which bounds the distance to the limit.
///
/// When `f~'(L_gamma) <= 1`, `phi` is concave with `phi'(0) <= 0`, so its
/// largest root is 0 and that is what is returned.
pub fn fixed_point_from<T: Scalar>(
    dist: &OffspringDistribution<T>,
    l_gamma: T,
    l_chi: T,
    u: T,
    tol: T,
    max_iter: usize,
) -> Result<FixedPointResult<T>> {
    if !(tol > T::zero()) {
        return Err(Error::Domain(
            "fixed_point_r",
            format!("tol = {tol} must be positive"),
        ));
    }
    let mut r = l_chi;
    let mut iterates = vec![r];
    let subcritical = dist.ft1(l_gamma) <= T::one();
    let mut converged = false;
    for _ in 0..max_iter {
        let next = (l_chi - dist.ft((l_gamma - r).max(T::zero())))
            .min(r)
            .max(T::zero());
        let step = r - next;
        r = next;
        iterates.push(r);
        let gap = T::one() - dist.ft1((l_gamma - r).max(T::zero()));
        if step == T::zero() || (gap > T::zero() && step <= tol * gap) || (subcritical && r <= tol)
        {
            converged = true;
            break;
        }
    }
    if subcritical {
        r = T::zero();
        converged = true;
    }
    if !converged {
        log::warn!("fixed-point iteration at u = {u} hit the cap of {max_iter} steps");
    }
    Ok(FixedPointResult {
        r,
        iterates,
        converged,
        u,
    })
}

/// Largest root of `phi` by bisection, for cross-checking the iteration.
/// `None` when no positive root is visible on a uniform grid.
pub fn largest_root_bisect<T: Scalar>(
    dist: &OffspringDistribution<T>,
    l_gamma: T,
    l_chi: T,
    tol: T,
) -> Option<T> {
    const GRID: usize = 256;
    let h = l_chi / T::from_count(GRID);
    let f = |r: T| phi(dist, l_gamma, l_chi, r);
    let last_pos = (1..GRID)
        .rev()
        .find(|&i| f(h * T::from_count(i)) > T::zero())?;
    let lo = h * T::from_count(last_pos);
    let b = bisect(f, lo, lo + h, tol, 400)?;
    Some(b.midpoint())
}

/// Adaptive Simpson quadrature with an absolute tolerance.
pub fn adaptive_simpson<T: Scalar, F: Fn(T) -> T>(f: &F, a: T, b: T, tol: T) -> T {
    #[allow(clippy::too_many_arguments)]
    fn rec<T: Scalar, F: Fn(T) -> T>(
        f: &F,
        a: T,
        b: T,
        fa: T,
        fm: T,
        fb: T,
        whole: T,
        tol: T,
        depth: u32,
    ) -> T {
        let two = T::lit(2.0);
        let m = (a + b) / two;
        let (lm, rm) = ((a + m) / two, (m + b) / two);
        let (flm, frm) = (f(lm), f(rm));
        let six = T::lit(6.0);
        let left = (m - a) * (fa + T::lit(4.0) * flm + fm) / six;
        let right = (b - m) * (fm + T::lit(4.0) * frm + fb) / six;
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= T::lit(15.0) * tol {
            return left + right + delta / T::lit(15.0);
        }
        rec(f, a, m, fa, flm, fm, left, tol / two, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, tol / two, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let m = (a + b) / T::lit(2.0);
    let fm = f(m);
    let whole = (b - a) * (fa + T::lit(4.0) * fm + fb) / T::lit(6.0);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `g_u(x) = 1 - f~'(L_gamma) + x * int_0^1 (1 - t) f~''(L_gamma - t x) dt`,
/// chosen so that `x g_u(x) = x - f~(L_gamma) + f~(L_gamma - x)` by Taylor's
/// formula with integral remainder.
pub fn g_diagnostic<T: Scalar>(
    samples: &ChiSampleSet<T>,
    dist: &OffspringDistribution<T>,
    u: T,
    x: T,
) -> Result<T> {
    let (lg, _) = transform_means(samples, u)?;
    g_from(dist, lg, x)
}

pub fn g_from<T: Scalar>(dist: &OffspringDistribution<T>, l_gamma: T, x: T) -> Result<T> {
    if !(x >= T::zero() && x <= l_gamma) {
        return Err(Error::Domain(
            "g_diagnostic",
            format!("x = {x} outside [0, {l_gamma}]"),
        ));
    }
    let integrand = |t: T| (T::one() - t) * dist.ft2(l_gamma - t * x);
    let integral = adaptive_simpson(&integrand, T::zero(), T::one(), T::tol_floor(1e-12));
    Ok(T::one() - dist.ft1(l_gamma) + x * integral)
}

/// One step of the survival recursion with its delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecursionStep<T> {
    pub n: u32,
    pub r: T,
    pub stderr: T,
}

/// `r_0, ..., r_{n_max}` of the unclamped recursion from `r_0 = L_chi`, with
/// standard errors from the sensitivities `dr_k/dL_chi` and `dr_k/dL_gamma`
/// and the sample covariance of the two transforms.
pub fn recursion_sequence<T: Scalar>(
    samples: &ChiSampleSet<T>,
    dist: &OffspringDistribution<T>,
    u: T,
    n_max: u32,
) -> Result<Vec<RecursionStep<T>>> {
    check_u("recursion_sequence", u, false)?;
    let a = laplace_terms(samples, u, Transform::Chi);
    let b = laplace_terms(samples, u, Transform::Gamma);
    let (lc, lg) = (mean(&a), mean(&b));
    let nf = T::from_count(a.len());
    let (var_a, var_b, cov) = if a.len() > 1 {
        let (_, sa) = mean_stderr(&a);
        let (_, sb) = mean_stderr(&b);
        let prods: Vec<T> = a
            .iter()
            .zip(&b)
            .map(|(&x, &y)| (x - lc) * (y - lg))
            .collect();
        let c = par_pairwise_sum(&prods) / T::from_count(a.len() - 1) / nf;
        (sa * sa, sb * sb, c)
    } else {
        (T::infinity(), T::infinity(), T::zero())
    };
    let mut out = Vec::with_capacity(n_max as usize + 1);
    let (mut r, mut dc, mut dg) = (lc, T::one(), T::zero());
    for n in 0..=n_max {
        let var = dc * dc * var_a + dg * dg * var_b + T::lit(2.0) * dc * dg * cov;
        out.push(RecursionStep {
            n,
            r,
            stderr: var.max(T::zero()).sqrt(),
        });
        let s = (lg - r).max(T::zero());
        let slope = dist.ft1(s);
        r = lc - dist.ft(s);
        dc = T::one() + slope * dc;
        dg = -slope * (T::one() - dg);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::DistSpec;
    use std::f64::consts::LN_2;

    type D = OffspringDistribution<f64>;

    fn d2() -> D {
        D::new(DistSpec::Deterministic { d: 2 }).unwrap()
    }

    fn d2_samples() -> ChiSampleSet<f64> {
        sample_chi(&d2(), 8, 40, 0).unwrap()
    }

    #[test]
    fn index_examples() {
        let s = d2_samples();
        assert!((criticality_index(&s, &d2(), 0.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((criticality_index(&s, &d2(), 2.0 * LN_2).unwrap() - 1.0).abs() < 1e-9);
        assert!(criticality_index(&s, &d2(), 1e4).unwrap() < 1e-12);
        assert!(criticality_index(&s, &d2(), -1.0).is_err());
    }

    #[test]
    fn index_strictly_decreasing() {
        let d = D::new(DistSpec::Pmf {
            p: vec![0.25, 0.0, 0.75],
        })
        .unwrap();
        let s = sample_chi(&d, 2000, 14, 1).unwrap();
        let idx: Vec<f64> = (1..40)
            .map(|i| criticality_index(&s, &d, i as f64 * 0.1).unwrap())
            .collect();
        assert!(idx.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn critical_regular_trees() {
        for (d, expected) in [(2usize, 2.0 * LN_2), (3, 3.0 * 3f64.ln() / 4.0)] {
            let dist = D::new(DistSpec::Deterministic { d }).unwrap();
            let mc = McParams {
                n: 4,
                depth: 40,
                seed: 1,
                replicates: 8,
            };
            let res = critical_u(&dist, 1e-8, mc).unwrap();
            assert!((res.u_star - expected).abs() < 1e-6, "d={d}: {res:?}");
            assert!(res.bracket.0 <= res.u_star && res.u_star <= res.bracket.1);
            assert!(res.bracket.1 - res.bracket.0 <= 1e-8);
            assert_eq!(res.spread, 0.0);
            assert_eq!(res.seeds.len(), 8);
        }
    }

    #[test]
    fn result_json_keys() {
        let mc = McParams {
            n: 2,
            depth: 20,
            seed: 0,
            replicates: 8,
        };
        let res = critical_u(&d2(), 1e-6, mc).unwrap();
        let v = res.to_json();
        for k in [
            "u_star", "bracket", "tol", "index_at", "n", "depth", "seeds", "spread",
        ] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
    }

    #[test]
    fn bad_tolerance() {
        assert!(solve_critical_on(&d2_samples(), &d2(), 0.0).is_err());
        assert!(fixed_point_r(&d2_samples(), &d2(), 1.0, -1.0).is_err());
        assert!(fixed_point_r(&d2_samples(), &d2(), 0.0, 1e-9).is_err());
    }

    #[test]
    fn fixed_point_closed_forms() {
        let s = d2_samples();
        let sup = fixed_point_r(&s, &d2(), LN_2, 1e-12).unwrap();
        assert!(sup.converged);
        assert!((sup.r - (2f64.sqrt() - 1.0)).abs() < 1e-9, "{}", sup.r);
        assert!((sup.iterates[0] - 0.5).abs() < 1e-9);
        assert!(sup.iterates.windows(2).all(|w| w[1] <= w[0]));
        let sub = fixed_point_r(&s, &d2(), 2.0, 1e-12).unwrap();
        assert_eq!(sub.r, 0.0);
        let tangent = fixed_point_from(&d2(), 0.5, 0.25, 2.0 * LN_2, 1e-9, 1000).unwrap();
        assert_eq!(tangent.r, 0.0);
    }

    #[test]
    fn bisection_agrees_with_iteration() {
        let d = D::from_json(r#"{"family":"geometric","p":0.3}"#).unwrap();
        let s = sample_chi(&d, 4000, 14, 2).unwrap();
        let u = 0.3;
        assert!(criticality_index(&s, &d, u).unwrap() > 1.05);
        let (lg, lc) = transform_means(&s, u).unwrap();
        let it = fixed_point_from(&d, lg, lc, u, 1e-12, DEFAULT_MAX_ITER).unwrap();
        let bi = largest_root_bisect(&d, lg, lc, 1e-13).unwrap();
        assert!((it.r - bi).abs() < 1e-9, "{} vs {}", it.r, bi);
        assert!(phi(&d, lg, lc, it.r).abs() < 1e-10);
    }

    #[test]
    fn g_examples() {
        let s = d2_samples();
        let (lg, lc) = transform_means(&s, LN_2).unwrap();
        assert!((g_diagnostic(&s, &d2(), LN_2, 0.0).unwrap() - (1.0 - 2.0 * lg)).abs() < 1e-15);
        assert!(
            g_diagnostic(&s, &d2(), LN_2, 2f64.sqrt() - 1.0)
                .unwrap()
                .abs()
                < 1e-9
        );
        let at_top = g_diagnostic(&s, &d2(), LN_2, lg).unwrap();
        assert!((at_top - (lg - lc) / lg).abs() < 1e-9);
        assert!((at_top - (1.0 - 0.5f64.sqrt())).abs() < 1e-9);
        assert!(g_diagnostic(&s, &d2(), LN_2, lg + 0.01).is_err());
        assert!(g_diagnostic(&s, &d2(), LN_2, -0.01).is_err());
    }

    #[test]
    fn g_identity_general_law() {
        let d = D::from_json(r#"{"family":"poisson","lambda":2.2}"#).unwrap();
        let lg = 0.7;
        for i in 0..=20 {
            let x = lg * i as f64 / 20.0;
            let g = g_from(&d, lg, x).unwrap();
            let rhs = x - d.ft(lg) + d.ft(lg - x);
            assert!((x * g - rhs).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn simpson_on_polynomials_and_exp() {
        let v = adaptive_simpson(&|t: f64| t.powi(5), 0.0, 1.0, 1e-13);
        assert!((v - 1.0 / 6.0).abs() < 1e-12);
        let e = adaptive_simpson(&|t: f64| t.exp(), 0.0, 2.0, 1e-12);
        assert!((e - (2f64.exp() - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn recursion_matches_closed_form_iteration() {
        let s = d2_samples();
        let seq = recursion_sequence(&s, &d2(), LN_2, 30).unwrap();
        let mut r = 0.5f64;
        for step in &seq {
            assert!((step.r - r).abs() < 1e-8, "n={}", step.n);
            assert_eq!(step.stderr, 0.0);
            r = 0.5 - (0.5f64.sqrt() - r).powi(2);
        }
        assert!((seq[30].r - (2f64.sqrt() - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn recursion_stderr_positive_for_random_trees() {
        let d = D::new(DistSpec::Pmf {
            p: vec![0.25, 0.0, 0.75],
        })
        .unwrap();
        let s = sample_chi(&d, 2000, 12, 5).unwrap();
        let seq = recursion_sequence(&s, &d, 0.5, 10).unwrap();
        assert!(seq.iter().all(|x| x.stderr > 0.0 && x.stderr < 0.05));
    }

    #[test]
    fn f32_solver() {
        let d = OffspringDistribution::<f32>::new(DistSpec::Deterministic { d: 2 }).unwrap();
        let s = sample_chi(&d, 4, 30, 0).unwrap();
        let b = solve_critical_on(&s, &d, 1e-5).unwrap();
        assert!((b.midpoint() - 1.386_294).abs() < 1e-3);
    }
}
