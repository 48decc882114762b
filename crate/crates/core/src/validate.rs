//! Invariant suite behind the `validate` command.
//!
//! Every check is an exact or near-exact property of the implementation on
//! fresh random input; a failure signals a bug, not Monte Carlo noise.

use std::time::Instant;

use crate::cluster::simulate_cluster;
use crate::harmonic::{beta_table, gamma_chi};
use crate::offspring::{DistSpec, OffspringDistribution};
use crate::rng::mix;
use crate::solver::{criticality_index, g_from, phi, transform_means};
use crate::transforms::{consistency_gap, laplace, sample_chi, Transform};
use crate::treegen::{sample_backbone, sample_conditioned};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{} {} ({:.2}s) {}\n",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.seconds,
                    c.detail
                )
            })
            .collect()
    }
}

/// Suite size: `quick` is for smoke tests, the full suite for release checks.
#[derive(Debug, Clone, Copy)]
pub struct SuiteConfig {
    pub quick: bool,
    pub seed: u64,
}

impl SuiteConfig {
    fn trees(&self) -> u64 {
        if self.quick {
            4
        } else {
            20
        }
    }
    fn depth(&self) -> u32 {
        if self.quick {
            10
        } else {
            14
        }
    }
    fn samples(&self) -> usize {
        if self.quick {
            4_000
        } else {
            40_000
        }
    }
}

fn laws() -> Vec<OffspringDistribution<f64>> {
    [
        DistSpec::Pmf {
            p: vec![0.25, 0.0, 0.75],
        },
        DistSpec::Geometric {
            p: 0.35,
            tail_eps: None,
        },
        DistSpec::Poisson {
            lambda: 1.8,
            tail_eps: None,
        },
        DistSpec::Binomial { n: 3, p: 0.5 },
    ]
    .into_iter()
    .map(|s| OffspringDistribution::new(s).expect("valid built-in law"))
    .collect()
}

type Outcome = Result<std::result::Result<String, String>>;

fn run(name: &'static str, f: impl FnOnce() -> Outcome) -> Check {
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(e) => (false, format!("error: {e}")),
    };
    Check {
        name,
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn beta_monotone_in_depth(cfg: SuiteConfig) -> Outcome {
    let mut count = 0;
    for d in laws() {
        for t in 0..cfg.trees() {
            let seed = mix(cfg.seed, t);
            let mut prev = f64::INFINITY;
            for depth in 1..=cfg.depth() {
                // Backbone samples with one seed are nested across depths.
                let tree = sample_backbone(d.backbone(), depth, seed)?;
                let (_, chi) = gamma_chi::<f64>(&tree)?;
                if chi > prev {
                    return Ok(Err(format!(
                        "{}: chi rose from {prev} to {chi} at depth {depth}",
                        d.spec().to_json()
                    )));
                }
                prev = chi;
                count += 1;
            }
        }
    }
    Ok(Ok(format!("{count} truncations")))
}

fn bush_invariance(cfg: SuiteConfig) -> Outcome {
    let mut count = 0;
    for d in laws() {
        for t in 0..cfg.trees() {
            let full = sample_conditioned(&d, cfg.depth(), mix(cfg.seed, t))?;
            let bb = full.backbone_restriction();
            let a = gamma_chi::<f64>(&full)?;
            let b = gamma_chi::<f64>(&bb)?;
            if a.0.to_bits() != b.0.to_bits() || a.1.to_bits() != b.1.to_bits() {
                return Ok(Err(format!("(gamma, chi) differ: {a:?} vs {b:?}")));
            }
            let shuffled = gamma_chi::<f64>(&full.shuffled(mix(cfg.seed, t + 1000)))?;
            if shuffled.1.to_bits() != a.1.to_bits() {
                return Ok(Err(format!(
                    "chi changed under child shuffling: {} vs {}",
                    a.1, shuffled.1
                )));
            }
            for s in 0..20 {
                for &u in &[0.3, 1.0] {
                    let x = simulate_cluster(&full, u, s)?;
                    let y = simulate_cluster(&bb, u, s)?;
                    if x.depth_reached != y.depth_reached {
                        return Ok(Err(format!(
                            "cluster depth {} vs {}",
                            x.depth_reached, y.depth_reached
                        )));
                    }
                }
            }
            count += 1;
        }
    }
    Ok(Ok(format!("{count} trees")))
}

fn gamma_chi_relation(cfg: SuiteConfig) -> Outcome {
    for d in laws() {
        for t in 0..cfg.trees() {
            let tree = sample_backbone(d.backbone(), cfg.depth(), mix(cfg.seed, t))?;
            let (g, c) = gamma_chi::<f64>(&tree)?;
            let table = beta_table::<f64>(&tree);
            if g != c / (1.0 + c) || g != table.beta(tree.root()) || g > c {
                return Ok(Err(format!("gamma {g}, chi {c}")));
            }
        }
    }
    Ok(Ok("gamma = chi/(1+chi) = beta(root)".into()))
}

fn grid() -> Vec<f64> {
    (1..=60).map(|i| i as f64 * 0.05).collect()
}

fn laplace_monotone(cfg: SuiteConfig) -> Outcome {
    for d in laws() {
        let s = sample_chi(&d, cfg.samples(), cfg.depth(), cfg.seed)?;
        let mut prev = (1.0, 1.0);
        for u in grid() {
            let g = laplace(&s, u, Transform::Gamma)?.mean;
            let c = laplace(&s, u, Transform::Chi)?.mean;
            if g > prev.0 || c > prev.1 || c > g {
                return Ok(Err(format!(
                    "{} at u = {u}: L_gamma {g}, L_chi {c}",
                    d.spec().to_json()
                )));
            }
            prev = (g, c);
        }
    }
    Ok(Ok(format!("{} levels", grid().len())))
}

fn index_decreasing(cfg: SuiteConfig) -> Outcome {
    for d in laws() {
        let s = sample_chi(&d, cfg.samples(), cfg.depth(), mix(cfg.seed, 1))?;
        let mut prev = criticality_index(&s, &d, 0.0)?;
        if (prev - d.mean()).abs() > 1e-12 {
            return Ok(Err(format!(
                "index at u = 0 is {prev}, mean is {}",
                d.mean()
            )));
        }
        for u in grid() {
            let i = criticality_index(&s, &d, u)?;
            if !(i < prev) {
                return Ok(Err(format!("index not strictly decreasing at u = {u}")));
            }
            prev = i;
        }
    }
    Ok(Ok("strictly decreasing".into()))
}

fn phi_concave(cfg: SuiteConfig) -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for d in laws() {
        let s = sample_chi(&d, cfg.samples(), cfg.depth(), mix(cfg.seed, 2))?;
        for u in [0.2, 0.6, 1.0, 2.0] {
            let (lg, lc) = transform_means(&s, u)?;
            let h = lc / 100.0;
            for k in 1..100 {
                let r = k as f64 * h;
                let second =
                    phi(&d, lg, lc, r + h) - 2.0 * phi(&d, lg, lc, r) + phi(&d, lg, lc, r - h);
                worst = worst.max(second);
                if second > 1e-13 {
                    return Ok(Err(format!(
                        "second difference {second} at u = {u}, r = {r}"
                    )));
                }
            }
            let gap = consistency_gap(&s, &d, u)?;
            if gap.z.abs() > 6.0 {
                return Ok(Err(format!(
                    "phi(0) = {} is {} standard errors from 0",
                    gap.gap, gap.z
                )));
            }
        }
    }
    Ok(Ok(format!("max second difference {worst:e}")))
}

fn g_identity(_cfg: SuiteConfig) -> Outcome {
    let mut worst: f64 = 0.0;
    for dd in [2usize, 3, 4] {
        let d = OffspringDistribution::<f64>::new(DistSpec::Deterministic { d: dd })?;
        let s = sample_chi(&d, 2, 40, 0)?;
        for u in [0.1, 0.5, std::f64::consts::LN_2, 1.5, 3.0] {
            let (lg, lc) = transform_means(&s, u)?;
            for k in 0..=20 {
                let x = lg * k as f64 / 20.0;
                let lhs = x * g_from(&d, lg, x)?;
                let rhs = x - lc + d.backbone_pgf(lg - x, 0)?;
                worst = worst.max((lhs - rhs).abs());
            }
        }
    }
    if worst <= 1e-9 {
        Ok(Ok(format!("max deviation {worst:e}")))
    } else {
        Ok(Err(format!("max deviation {worst:e}")))
    }
}

pub fn run_suite(cfg: SuiteConfig) -> Report {
    let checks = vec![
        run("beta monotone in depth", || beta_monotone_in_depth(cfg)),
        run("bush invariance", || bush_invariance(cfg)),
        run("gamma = chi/(1+chi)", || gamma_chi_relation(cfg)),
        run("Laplace estimates monotone in u", || laplace_monotone(cfg)),
        run("criticality index decreasing", || index_decreasing(cfg)),
        run("phi concave", || phi_concave(cfg)),
        run("g identity", || g_identity(cfg)),
    ];
    for c in &checks {
        log::info!(
            "{} {}: {}",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    Report { checks }
}
