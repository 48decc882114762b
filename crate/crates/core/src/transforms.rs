//! Monte Carlo Laplace transforms of the root capacity `chi` and of the root
//! escape probability `gamma = chi / (1 + chi)`:
//! `L_chi(u) = E[exp(-u chi)]` and `L_gamma(u) = E[exp(-u gamma)]`.
//!
//! A [`ChiSampleSet`] is drawn once and reused for every `u`, so estimates
//! along a grid of levels share their random numbers and are exactly
//! monotone in `u`.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fmt::g9;
use crate::offspring::OffspringDistribution;
use crate::sampling::{BackboneSampler, SamplingPlan};
use crate::sum::{mean_stderr, par_pairwise_sum};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Gamma,
    Chi,
}

/// Direction of the truncation bias. `chi` computed at finite depth is an
/// upper bound, so each `exp(-u chi)` is a lower bound on its limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BiasSide {
    UpperBoundOnArgument,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate<T> {
    pub mean: T,
    pub stderr: T,
    pub n: usize,
    pub depth: u32,
    pub bias_side: BiasSide,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChiSampleSet<T> {
    pub chi: Vec<T>,
    pub depth: u32,
    pub master_seed: u64,
    pub dist_fingerprint: u64,
}

impl<T: Scalar> ChiSampleSet<T> {
    pub fn n(&self) -> usize {
        self.chi.len()
    }

    /// Concatenation of several sets drawn at the same depth for the same law.
    pub fn pooled(sets: &[ChiSampleSet<T>]) -> Result<Self> {
        let first = sets
            .first()
            .ok_or_else(|| Error::Domain("pooled", "no sample sets".into()))?;
        if sets
            .iter()
            .any(|s| s.depth != first.depth || s.dist_fingerprint != first.dist_fingerprint)
        {
            return Err(Error::Domain(
                "pooled",
                "sample sets differ in depth or distribution".into(),
            ));
        }
        Ok(Self {
            chi: sets.iter().flat_map(|s| s.chi.iter().copied()).collect(),
            depth: first.depth,
            master_seed: first.master_seed,
            dist_fingerprint: first.dist_fingerprint,
        })
    }

    const MAGIC: &'static [u8; 4] = b"GWIS";
    const VERSION: u32 = 1;

    /// Flat binary form: magic, version, n, depth, seed, digest, then `n`
    /// little-endian `f64` values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&(self.chi.len() as u64).to_le_bytes())?;
        w.write_all(&self.depth.to_le_bytes())?;
        w.write_all(&self.master_seed.to_le_bytes())?;
        w.write_all(&self.dist_fingerprint.to_le_bytes())?;
        for c in &self.chi {
            w.write_all(&c.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut b = [0u8; N];
            r.read_exact(&mut b)
                .map_err(|e| Error::Format(e.to_string()))?;
            Ok(b)
        }
        if &take::<4, _>(&mut r)? != Self::MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != Self::VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(take(&mut r)?) as usize;
        let depth = u32::from_le_bytes(take(&mut r)?);
        let master_seed = u64::from_le_bytes(take(&mut r)?);
        let dist_fingerprint = u64::from_le_bytes(take(&mut r)?);
        let mut chi = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let x = f64::from_le_bytes(take(&mut r)?);
            if !(x >= 0.0) {
                return Err(Error::Format(format!("negative or NaN chi value {x}")));
            }
            chi.push(T::lit(x));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after samples".into()));
        }
        Ok(Self {
            chi,
            depth,
            master_seed,
            dist_fingerprint,
        })
    }
}

/// `n` independent values of `chi` at truncation depth `depth`.
pub fn sample_chi<T: Scalar>(
    dist: &OffspringDistribution<T>,
    n: usize,
    depth: u32,
    seed: u64,
) -> Result<ChiSampleSet<T>> {
    let plan = SamplingPlan::auto(dist.backbone(), depth, n);
    sample_chi_with_plan(dist, n, plan, seed)
}

pub fn sample_chi_with_plan<T: Scalar>(
    dist: &OffspringDistribution<T>,
    n: usize,
    plan: SamplingPlan,
    seed: u64,
) -> Result<ChiSampleSet<T>> {
    if plan.depth < 1 {
        return Err(Error::Domain(
            "sample_chi",
            "depth must be at least 1".into(),
        ));
    }
    if n < 1 {
        return Err(Error::Domain(
            "sample_chi",
            "need at least one sample".into(),
        ));
    }
    let sampler = BackboneSampler::new(dist.backbone(), plan, seed);
    // A degenerate backbone law has a single tree: every sample is the same.
    let chi = if dist.backbone().is_degenerate() {
        vec![sampler.chi(0)?; n]
    } else {
        (0..n as u64)
            .into_par_iter()
            .map(|i| sampler.chi(i))
            .collect::<Result<Vec<T>>>()?
    };
    log::debug!(
        "sampled {n} chi values at depth {} (exact top depth {}, pool size {})",
        plan.depth,
        plan.exact_depth,
        plan.pool_size
    );
    Ok(ChiSampleSet {
        chi,
        depth: plan.depth,
        master_seed: seed,
        dist_fingerprint: dist.spec().fingerprint(),
    })
}

fn check_level<T: Scalar>(op: &'static str, u: T) -> Result<()> {
    if u >= T::zero() && u.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(
            op,
            format!("level u = {u} must be finite and non-negative"),
        ))
    }
}

/// Per-sample terms `exp(-u chi_i)` or `exp(-u gamma_i)`.
pub fn laplace_terms<T: Scalar>(samples: &ChiSampleSet<T>, u: T, which: Transform) -> Vec<T> {
    samples
        .chi
        .par_iter()
        .map(|&c| match which {
            Transform::Chi => (-u * c).exp(),
            Transform::Gamma => (-u * (c / (T::one() + c))).exp(),
        })
        .collect()
}

pub fn laplace<T: Scalar>(
    samples: &ChiSampleSet<T>,
    u: T,
    which: Transform,
) -> Result<McEstimate<T>> {
    check_level("laplace", u)?;
    let terms = laplace_terms(samples, u, which);
    let (mean, stderr) = mean_stderr(&terms);
    Ok(McEstimate {
        mean,
        stderr,
        n: terms.len(),
        depth: samples.depth,
        bias_side: BiasSide::UpperBoundOnArgument,
    })
}

/// Both transforms at one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplacePair<T> {
    pub u: T,
    pub gamma: McEstimate<T>,
    pub chi: McEstimate<T>,
}

pub fn laplace_pair<T: Scalar>(samples: &ChiSampleSet<T>, u: T) -> Result<LaplacePair<T>> {
    Ok(LaplacePair {
        u,
        gamma: laplace(samples, u, Transform::Gamma)?,
        chi: laplace(samples, u, Transform::Chi)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap<T> {
    pub gap: T,
    pub stderr: T,
    pub z: T,
}

/// `L_chi(u) - f~(L_gamma(u))`, which vanishes for the exact transforms, with
/// a delta-method standard error. A floor of `sqrt(eps)` on the error keeps
/// `z` finite for zero-variance sample sets.
pub fn consistency_gap<T: Scalar>(
    samples: &ChiSampleSet<T>,
    dist: &OffspringDistribution<T>,
    u: T,
) -> Result<Gap<T>> {
    check_level("consistency_gap", u)?;
    let a = laplace_terms(samples, u, Transform::Chi);
    let b = laplace_terms(samples, u, Transform::Gamma);
    let n = T::from_count(a.len());
    let la = par_pairwise_sum(&a) / n;
    let lb = par_pairwise_sum(&b) / n;
    let slope = dist.ft1(lb);
    let d: Vec<T> = a.iter().zip(&b).map(|(&x, &y)| x - slope * y).collect();
    let (_, se) = mean_stderr(&d);
    let gap = la - dist.ft(lb);
    let floor = T::epsilon().sqrt();
    let se_eff = if se.is_finite() {
        (se * se + floor * floor).sqrt()
    } else {
        se
    };
    Ok(Gap {
        gap,
        stderr: se,
        z: gap / se_eff,
    })
}

/// CSV rows `u,L_gamma,L_gamma_se,L_chi,L_chi_se,gap,z` over a grid of levels.
pub fn transforms_csv<T: Scalar>(
    samples: &ChiSampleSet<T>,
    dist: &OffspringDistribution<T>,
    grid: &[T],
) -> Result<String> {
    let mut out = String::from("u,L_gamma,L_gamma_se,L_chi,L_chi_se,gap,z\n");
    for &u in grid {
        let p = laplace_pair(samples, u)?;
        let g = consistency_gap(samples, dist, u)?;
        let row = [
            u,
            p.gamma.mean,
            p.gamma.stderr,
            p.chi.mean,
            p.chi.stderr,
            g.gap,
            g.z,
        ];
        let cells: Vec<String> = row.iter().map(|x| g9(x.as_f64())).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}
