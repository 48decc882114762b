//! Offspring laws, their generating functions, the extinction probability and
//! the Harris decomposition of a supercritical Galton-Watson tree conditioned
//! on survival.
//!
//! Conditioned on non-extinction, the vertices with an infinite line of
//! descent form a Galton-Watson tree (the backbone) whose generating function
//! is `f~(s) = (f(q + (1-q)s) - q) / (1-q)`. Each backbone vertex additionally
//! carries a random number of finite "bushes", which are Galton-Watson trees
//! of the extinction-conditioned law `rho^_k = rho_k q^(k-1)`.

use rand::Rng;
use rand_distr::{Distribution, WeightedAliasIndex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::roots::bisect;
use crate::Scalar;

pub const DEFAULT_TAIL_EPS: f64 = 1e-12;

const MAX_SUPPORT: usize = 100_000;

/// Structured description of an offspring law, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum DistSpec {
    Deterministic {
        d: usize,
    },
    Pmf {
        p: Vec<f64>,
    },
    Binomial {
        n: usize,
        p: f64,
    },
    Geometric {
        p: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tail_eps: Option<f64>,
    },
    Poisson {
        lambda: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tail_eps: Option<f64>,
    },
}

impl DistSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidDistribution(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    /// 64-bit digest of the canonical JSON form.
    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.to_json().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    fn tail_eps(&self) -> f64 {
        match self {
            DistSpec::Geometric { tail_eps, .. } | DistSpec::Poisson { tail_eps, .. } => {
                tail_eps.unwrap_or(DEFAULT_TAIL_EPS)
            }
            _ => 0.0,
        }
    }

    /// Unnormalized pmf and the tail mass dropped by truncation.
    fn raw_pmf(&self) -> Result<(Vec<f64>, f64)> {
        let bad = |m: String| Err(Error::InvalidDistribution(m));
        let eps = self.tail_eps();
        if !(0.0..1e-3).contains(&eps) {
            return bad(format!("tail_eps {eps} must be in [0, 1e-3)"));
        }
        match *self {
            DistSpec::Deterministic { d } => {
                let mut p = vec![0.0; d + 1];
                p[d] = 1.0;
                Ok((p, 0.0))
            }
            DistSpec::Pmf { ref p } => {
                if p.is_empty() {
                    return bad("empty pmf".into());
                }
                if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return bad("pmf entries must be finite and non-negative".into());
                }
                let s: f64 = p.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return bad(format!("pmf sums to {s}, expected 1"));
                }
                Ok((p.clone(), 0.0))
            }
            DistSpec::Binomial { n, p } => {
                if !(0.0..=1.0).contains(&p) || n > MAX_SUPPORT {
                    return bad(format!("binomial(n={n}, p={p}) out of range"));
                }
                let lf = ln_factorials(n);
                let pmf = (0..=n)
                    .map(|k| {
                        let lc = lf[n] - lf[k] - lf[n - k];
                        let a = if k == 0 { 0.0 } else { k as f64 * p.ln() };
                        let b = if k == n {
                            0.0
                        } else {
                            (n - k) as f64 * (1.0 - p).ln()
                        };
                        (lc + a + b).exp()
                    })
                    .collect();
                Ok((pmf, 0.0))
            }
            DistSpec::Geometric { p, .. } => {
                if !(p > 0.0 && p <= 1.0) {
                    return bad(format!("geometric p={p} must be in (0, 1]"));
                }
                if p == 1.0 {
                    return Ok((vec![1.0], 0.0));
                }
                // P(Z > K) = (1-p)^(K+1)
                let k_max = if eps == 0.0 {
                    MAX_SUPPORT
                } else {
                    ((eps.ln() / (1.0 - p).ln()).ceil() as usize).saturating_sub(1)
                };
                if k_max >= MAX_SUPPORT {
                    return bad(format!(
                        "geometric p={p} needs more than {MAX_SUPPORT} support points"
                    ));
                }
                let pmf = (0..=k_max).map(|k| p * (1.0 - p).powi(k as i32)).collect();
                Ok((pmf, (1.0 - p).powi(k_max as i32 + 1)))
            }
            DistSpec::Poisson { lambda, .. } => {
                if !(lambda > 0.0 && lambda <= 500.0) {
                    return bad(format!("poisson lambda={lambda} must be in (0, 500]"));
                }
                let mut pmf = vec![(-lambda).exp()];
                loop {
                    let k = pmf.len() - 1;
                    let next = pmf[k] * lambda / (k + 1) as f64;
                    // For K + 2 > lambda the tail beyond K is dominated by a geometric series.
                    let ratio = lambda / (k + 2) as f64;
                    if ratio < 1.0 && next / (1.0 - ratio) <= eps {
                        return Ok((pmf, next / (1.0 - ratio)));
                    }
                    if pmf.len() >= MAX_SUPPORT {
                        return bad("poisson tail does not converge".into());
                    }
                    pmf.push(next);
                }
            }
        }
    }
}

impl std::str::FromStr for DistSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_json(s)
    }
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

/// Alias tables for drawing child counts. Always `f64`-weighted.
#[derive(Debug, Clone)]
pub(crate) struct Samplers {
    pub offspring: WeightedAliasIndex<f64>,
    pub backbone: WeightedAliasIndex<f64>,
    pub extinct: Option<WeightedAliasIndex<f64>>,
    /// Indexed by backbone child count `k`; `None` where `rho~_k = 0`.
    pub bush: Vec<Option<WeightedAliasIndex<f64>>>,
}

fn alias<T: Scalar>(w: &[T]) -> WeightedAliasIndex<f64> {
    WeightedAliasIndex::new(w.iter().map(|x| x.as_f64()).collect()).expect("valid weights")
}

/// Backbone (Harris) decomposition of a supercritical law.
#[derive(Debug, Clone)]
pub struct BackboneView<T> {
    /// `rho_tilde[k]` for `k = 0..=K`; `rho_tilde[0] == 0`.
    pub rho_tilde: Vec<T>,
    /// `bush_kernel[k][m] = P(m bush children | k backbone children)`; empty where `rho_tilde[k] = 0`.
    pub bush_kernel: Vec<Vec<T>>,
    /// Offspring pmf of the extinction-conditioned process; empty when `q = 0`.
    pub extinct_pmf: Vec<T>,
    pub(crate) sampler: WeightedAliasIndex<f64>,
}

impl<T: Scalar> BackboneView<T> {
    /// `rho~_1..rho~_K`.
    pub fn pmf(&self) -> &[T] {
        &self.rho_tilde[1..]
    }

    pub fn mean(&self) -> T {
        self.rho_tilde
            .iter()
            .enumerate()
            .map(|(k, &p)| T::from_count(k) * p)
            .sum()
    }

    /// Backbone law built directly from a pmf over `k >= 1` (index 0 must be zero).
    pub fn from_rho_tilde(rho_tilde: Vec<T>) -> Result<Self> {
        if rho_tilde.first().copied().unwrap_or(T::zero()) != T::zero() {
            return Err(Error::InvalidDistribution(
                "backbone pmf needs rho~_0 = 0".into(),
            ));
        }
        let total: T = rho_tilde.iter().copied().sum();
        if rho_tilde.len() < 2 || (total - T::one()).abs() > T::tol_floor(1e-9) {
            return Err(Error::InvalidDistribution(
                "backbone pmf must sum to 1".into(),
            ));
        }
        let sampler = alias(&rho_tilde);
        Ok(Self {
            rho_tilde,
            bush_kernel: Vec::new(),
            extinct_pmf: Vec::new(),
            sampler,
        })
    }

    /// Draws a backbone child count.
    #[inline]
    pub fn sample_count<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }

    /// True when every backbone vertex has the same number of children.
    pub fn is_degenerate(&self) -> bool {
        self.rho_tilde.iter().filter(|p| **p > T::zero()).count() == 1
    }
}

/// A validated supercritical offspring law with its derived quantities.
#[derive(Debug, Clone)]
pub struct OffspringDistribution<T> {
    spec: DistSpec,
    pmf: Vec<T>,
    tail_discarded: f64,
    mean: T,
    q: T,
    backbone: BackboneView<T>,
    pub(crate) samplers: Samplers,
}

impl<T: Scalar> OffspringDistribution<T> {
    pub fn new(spec: DistSpec) -> Result<Self> {
        let (raw, tail_discarded) = spec.raw_pmf()?;
        let mut pmf: Vec<T> = raw.iter().map(|&x| T::lit(x)).collect();
        while pmf.len() > 1 && *pmf.last().expect("nonempty") == T::zero() {
            pmf.pop();
        }
        let total: T = pmf.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(Error::InvalidDistribution("pmf has no mass".into()));
        }
        for p in pmf.iter_mut() {
            *p = *p / total;
        }
        let mean: T = pmf
            .iter()
            .enumerate()
            .map(|(k, &p)| T::from_count(k) * p)
            .sum();
        if !(mean > T::one()) {
            return Err(Error::NotSupercritical {
                mean: mean.as_f64(),
            });
        }
        let q = extinction(&pmf)?;
        let backbone = harris(&pmf, q);
        let samplers = Samplers {
            offspring: alias(&pmf),
            backbone: backbone.sampler.clone(),
            extinct: (!backbone.extinct_pmf.is_empty()).then(|| alias(&backbone.extinct_pmf)),
            bush: backbone
                .bush_kernel
                .iter()
                .map(|w| (!w.is_empty()).then(|| alias(w)))
                .collect(),
        };
        Ok(Self {
            spec,
            pmf,
            tail_discarded,
            mean,
            q,
            backbone,
            samplers,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::new(DistSpec::from_json(s)?)
    }

    pub fn spec(&self) -> &DistSpec {
        &self.spec
    }

    /// `rho_0..rho_K` after truncation and renormalization.
    pub fn pmf(&self) -> &[T] {
        &self.pmf
    }

    /// Probability mass dropped when truncating an unbounded family.
    pub fn tail_discarded(&self) -> f64 {
        self.tail_discarded
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    /// Extinction probability: the smallest fixed point of `f` on `[0, 1]`.
    pub fn extinction_probability(&self) -> T {
        self.q
    }

    pub fn backbone(&self) -> &BackboneView<T> {
        &self.backbone
    }

    /// `f`, `f'` or `f''` at `s` in `[0, 1]`.
    pub fn pgf(&self, s: T, order: usize) -> Result<T> {
        check_unit("pgf", s)?;
        match order {
            0 => Ok(self.f(s)),
            1 => Ok(self.f1(s)),
            2 => Ok(self.f2(s)),
            _ => Err(Error::Domain(
                "pgf",
                format!("order {order} not supported (0, 1 or 2)"),
            )),
        }
    }

    /// Backbone generating function `f~` and its first two derivatives.
    pub fn backbone_pgf(&self, s: T, order: usize) -> Result<T> {
        check_unit("backbone_pgf", s)?;
        match order {
            0 => Ok(self.ft(s)),
            1 => Ok(self.ft1(s)),
            2 => Ok(self.ft2(s)),
            _ => Err(Error::Domain(
                "backbone_pgf",
                format!("order {order} not supported (0, 1 or 2)"),
            )),
        }
    }

    /// `rho~_1..rho~_K`.
    pub fn backbone_pmf(&self) -> &[T] {
        self.backbone.pmf()
    }

    /// `P(m bush children | k backbone children)` for `m = 0, 1, ...`.
    pub fn bush_count_distribution(&self, k: usize) -> Result<&[T]> {
        match self.backbone.bush_kernel.get(k) {
            Some(w) if k >= 1 && !w.is_empty() => Ok(w),
            _ => Err(Error::Domain(
                "bush_count_distribution",
                format!("backbone child count {k} has zero probability"),
            )),
        }
    }

    /// Law of the total child count of the root given survival:
    /// `rho_j (1 - q^j) / (1 - q)`.
    pub fn surviving_root_pmf(&self) -> Vec<T> {
        let q = self.q;
        let one = T::one();
        self.pmf
            .iter()
            .enumerate()
            .map(|(j, &p)| p * (one - q.powi(j as i32)) / (one - q))
            .collect()
    }

    #[inline]
    pub(crate) fn f(&self, s: T) -> T {
        horner(&self.pmf, s)
    }

    #[inline]
    pub(crate) fn f1(&self, s: T) -> T {
        let mut acc = T::zero();
        for k in (1..self.pmf.len()).rev() {
            acc = acc * s + T::from_count(k) * self.pmf[k];
        }
        acc
    }

    #[inline]
    pub(crate) fn f2(&self, s: T) -> T {
        let mut acc = T::zero();
        for k in (2..self.pmf.len()).rev() {
            acc = acc * s + T::from_count(k * (k - 1)) * self.pmf[k];
        }
        acc
    }

    #[inline]
    fn lift(&self, s: T) -> T {
        self.q + (T::one() - self.q) * s
    }

    /// Unchecked `f~`.
    #[inline]
    pub(crate) fn ft(&self, s: T) -> T {
        if self.q == T::zero() {
            return self.f(s);
        }
        (self.f(self.lift(s)) - self.q) / (T::one() - self.q)
    }

    #[inline]
    pub(crate) fn ft1(&self, s: T) -> T {
        self.f1(self.lift(s))
    }

    #[inline]
    pub(crate) fn ft2(&self, s: T) -> T {
        (T::one() - self.q) * self.f2(self.lift(s))
    }
}

fn check_unit<T: Scalar>(op: &'static str, s: T) -> Result<()> {
    if s >= T::zero() && s <= T::one() {
        Ok(())
    } else {
        Err(Error::Domain(op, format!("argument {s} outside [0, 1]")))
    }
}

#[inline]
fn horner<T: Scalar>(c: &[T], s: T) -> T {
    c.iter().rev().fold(T::zero(), |acc, &a| acc * s + a)
}

/// Smallest root of `f(s) = s` by bisection on the convex function `f(s) - s`,
/// which is positive on `[0, q)` and negative on `(q, 1)`.
fn extinction<T: Scalar>(pmf: &[T]) -> Result<T> {
    if pmf[0] == T::zero() {
        return Ok(T::zero());
    }
    let g = |s: T| horner(pmf, s) - s;
    let hi = T::one() - T::tol_floor(1e-9);
    let b = bisect(g, T::zero(), hi, T::zero(), 400).ok_or_else(|| {
        let mean: T = pmf
            .iter()
            .enumerate()
            .map(|(k, &p)| T::from_count(k) * p)
            .sum();
        Error::NotSupercritical {
            mean: mean.as_f64(),
        }
    })?;
    Ok(if b.f_lo.abs() <= b.f_hi.abs() {
        b.lo
    } else {
        b.hi
    })
}

fn harris<T: Scalar>(pmf: &[T], q: T) -> BackboneView<T> {
    let kmax = pmf.len() - 1;
    let one = T::one();
    let mut rho_tilde = vec![T::zero(); kmax + 1];
    let mut bush_kernel = vec![Vec::new(); kmax + 1];
    if q == T::zero() {
        for k in 1..=kmax {
            rho_tilde[k] = pmf[k];
            if pmf[k] > T::zero() {
                bush_kernel[k] = vec![T::one()];
            }
        }
        let sampler = alias(&rho_tilde);
        return BackboneView {
            rho_tilde,
            bush_kernel,
            extinct_pmf: Vec::new(),
            sampler,
        };
    }
    let lf: Vec<T> = ln_factorials(kmax).into_iter().map(T::lit).collect();
    let (lq, lp) = (q.ln(), (one - q).ln());
    for k in 1..=kmax {
        // w[m] = rho_{k+m} C(k+m, k) (1-q)^k q^m, computed in log space.
        let w: Vec<T> = (0..=kmax - k)
            .map(|m| {
                let j = k + m;
                if pmf[j] == T::zero() {
                    return T::zero();
                }
                let lc = lf[j] - lf[k] - lf[m];
                (pmf[j].ln() + lc + T::from_count(k) * lp + T::from_count(m) * lq).exp()
            })
            .collect();
        let total: T = w.iter().copied().sum();
        rho_tilde[k] = total / (one - q);
        if total > T::zero() {
            bush_kernel[k] = w.into_iter().map(|x| x / total).collect();
        }
    }
    // Normalize away rounding so the pmf sums to one.
    let s: T = rho_tilde.iter().copied().sum();
    for p in rho_tilde.iter_mut() {
        *p = *p / s;
    }
    let mut extinct_pmf: Vec<T> = pmf
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            if k == 0 {
                p / q
            } else {
                p * q.powi(k as i32 - 1)
            }
        })
        .collect();
    let s: T = extinct_pmf.iter().copied().sum();
    for p in extinct_pmf.iter_mut() {
        *p = *p / s;
    }
    let sampler = alias(&rho_tilde);
    BackboneView {
        rho_tilde,
        bush_kernel,
        extinct_pmf,
        sampler,
    }
}
