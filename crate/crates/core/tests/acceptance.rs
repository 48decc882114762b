//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

// Negated comparisons are deliberate: a NaN must fail a check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::f64::consts::LN_2;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gwri::cluster::annealed_survival_profile;
use gwri::harmonic::escape_mc;
use gwri::solver::{critical_u, fixed_point_r, recursion_sequence, solve_critical_on, McParams};
use gwri::transforms::{consistency_gap, sample_chi};
use gwri::validate::{run_suite, SuiteConfig};
use gwri::{DistSpec, Offspring, Tree};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn pmf() -> Offspring {
    Offspring::new(DistSpec::Pmf {
        p: vec![0.25, 0.0, 0.75],
    })
    .unwrap()
}

fn det(d: usize) -> Offspring {
    Offspring::new(DistSpec::Deterministic { d }).unwrap()
}

fn within_time(t: Instant, limit: Duration) -> Verdict {
    let e = t.elapsed();
    if e <= limit {
        Ok(format!("{:.1}s", e.as_secs_f64()))
    } else {
        Err(format!(
            "took {:.1}s, limit {:.0}s",
            e.as_secs_f64(),
            limit.as_secs_f64()
        ))
    }
}

fn regular_critical_level() -> Verdict {
    let mut notes = Vec::new();
    for (d, expected) in [(2usize, 1.386294), (3, 0.823959)] {
        let t = Instant::now();
        let df = d as f64;
        let closed = df * df.ln() / ((df - 1.0) * (df - 1.0));
        assert!((closed - expected).abs() < 1e-6);
        let res = critical_u(&det(d), 1e-7, McParams::default()).map_err(|e| e.to_string())?;
        let time = within_time(t, Duration::from_secs(5))?;
        if (res.u_star - closed).abs() > 1e-3 {
            return Err(format!("d={d}: u* = {} vs {closed}", res.u_star));
        }
        notes.push(format!("d={d}: u*={:.7} ({time})", res.u_star));
    }
    Ok(notes.join(", "))
}

fn extinction_algebra() -> Verdict {
    let t = Instant::now();
    let d = pmf();
    let q = d.extinction_probability();
    if (q - 1.0 / 3.0).abs() > 1e-12 {
        return Err(format!("q = {q}"));
    }
    // rho~_1, rho~_2, ...
    let rho = d.backbone_pmf();
    if rho.len() < 2
        || (rho[0] - 0.5).abs() > 1e-12
        || (rho[1] - 0.5).abs() > 1e-12
        || rho.iter().skip(2).any(|&x| x != 0.0)
    {
        return Err(format!("rho~ = {rho:?}"));
    }
    let g = Offspring::new(DistSpec::Geometric {
        p: 0.25,
        tail_eps: None,
    })
    .unwrap();
    let qg = g.extinction_probability();
    if (qg - 1.0 / 3.0).abs() > 1e-10 {
        return Err(format!("geometric q = {qg}"));
    }
    let time = within_time(t, Duration::from_secs(1))?;
    Ok(format!(
        "q={q:.15}, rho~=({:.15}, {:.15}), q_geom={qg:.12} ({time})",
        rho[0], rho[1]
    ))
}

fn walk_oracle() -> Verdict {
    let t = Instant::now();
    let tree = Tree::regular(2, 20).map_err(|e| e.to_string())?;
    let est = escape_mc(&tree, tree.root(), 1_000_000, 100_000, 20);
    let (lo, hi) = est.interval(3.0);
    let time = within_time(t, Duration::from_secs(30))?;
    let beta = 0.5;
    if !(lo <= beta && beta <= hi) {
        return Err(format!("interval [{lo}, {hi}] misses 0.5"));
    }
    if hi - lo >= 0.02 {
        return Err(format!("interval width {}", hi - lo));
    }
    Ok(format!(
        "estimate {:.4}, interval [{lo:.4}, {hi:.4}], unresolved {} ({time})",
        est.estimate, est.unresolved
    ))
}

fn laplace_identity() -> Verdict {
    let t = Instant::now();
    let d = pmf();
    let s = sample_chi(&d, 100_000, 30, 4).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for u in [0.25, 0.5, 1.0, 2.0] {
        let g = consistency_gap(&s, &d, u).map_err(|e| e.to_string())?;
        if !(g.gap.abs() <= 4.0 * g.stderr) {
            return Err(format!("u={u}: gap {:e}, stderr {:e}", g.gap, g.stderr));
        }
        notes.push(format!("u={u}: z={:+.2}", g.z));
    }
    let time = within_time(t, Duration::from_secs(120))?;
    Ok(format!("{} ({time})", notes.join(", ")))
}

fn fixed_point_closed_form() -> Verdict {
    let t = Instant::now();
    let d = det(2);
    let s = sample_chi(&d, 16, 40, 0).map_err(|e| e.to_string())?;
    let sup = fixed_point_r(&s, &d, LN_2, 1e-10).map_err(|e| e.to_string())?;
    let sub = fixed_point_r(&s, &d, 2.0, 1e-10).map_err(|e| e.to_string())?;
    let time = within_time(t, Duration::from_secs(1))?;
    let target = 2f64.sqrt() - 1.0;
    if !sup.converged || (sup.r - target).abs() > 1e-6 {
        return Err(format!("r(ln 2) = {} (converged {})", sup.r, sup.converged));
    }
    if !sub.converged || sub.r.abs() > 1e-6 {
        return Err(format!("r(2) = {}", sub.r));
    }
    Ok(format!("r(ln2)={:.9}, r(2)={} ({time})", sup.r, sub.r))
}

fn survival_vs_recursion() -> Verdict {
    const N: usize = 100_000;
    const NS: [u32; 4] = [0, 5, 10, 30];
    let t = Instant::now();
    let d = pmf();
    let s = sample_chi(&d, N, 30, 6).map_err(|e| e.to_string())?;
    let u_hat = solve_critical_on(&s, &d, 1e-8)
        .map_err(|e| e.to_string())?
        .midpoint();
    let s2 = sample_chi(&det(2), N, 30, 6).map_err(|e| e.to_string())?;
    let cases = [
        ("d=2", det(2), &s2, LN_2),
        ("pmf 0.5u", pmf(), &s, 0.5 * u_hat),
        ("pmf 1.5u", pmf(), &s, 1.5 * u_hat),
    ];
    let mut notes = vec![format!("u_hat={u_hat:.5}")];
    for (i, (name, dist, samples, u)) in cases.into_iter().enumerate() {
        let rec = recursion_sequence(samples, &dist, u, 30).map_err(|e| e.to_string())?;
        let run = annealed_survival_profile(&dist, u, &NS, N, 30, 100 + i as u64)
            .map_err(|e| e.to_string())?;
        let mut worst: f64 = 0.0;
        for e in &run.estimates {
            let r = rec[e.n as usize];
            // binomial variance under the hypothesis that the recursion is right
            let p = r.r.clamp(0.0, 1.0);
            let se = (p * (1.0 - p) / N as f64 + r.stderr * r.stderr).sqrt();
            let z = if se > 0.0 {
                (e.r_hat - r.r) / se
            } else if e.r_hat == r.r {
                0.0
            } else {
                f64::INFINITY
            };
            if !(z.abs() <= 4.0) {
                return Err(format!(
                    "{name} n={}: simulated {} vs recursion {} (z = {z:.2})",
                    e.n, e.r_hat, r.r
                ));
            }
            worst = worst.max(z.abs());
        }
        let r30 = run.estimates.last().unwrap().r_hat;
        notes.push(format!("{name}: r30={r30:.4} max|z|={worst:.2}"));
    }
    let time = within_time(t, Duration::from_secs(300))?;
    Ok(format!("{} ({time})", notes.join(", ")))
}

fn critical_level_determinism() -> Verdict {
    let t = Instant::now();
    let mc = McParams {
        n: 100_000,
        depth: 30,
        seed: 7,
        replicates: 8,
    };
    let res = critical_u(&pmf(), 1e-7, mc).map_err(|e| e.to_string())?;
    let time = within_time(t, Duration::from_secs(600))?;
    if res.replicate_u_star.len() != 8 {
        return Err(format!("{} replicates", res.replicate_u_star.len()));
    }
    if !(res.spread < 0.05) {
        return Err(format!("spread {}", res.spread));
    }
    let mean = res.replicate_u_star.iter().sum::<f64>() / 8.0;
    if let Some(bad) = res
        .replicate_u_star
        .iter()
        .find(|&&u| (u - mean).abs() > 3.0 * res.spread)
    {
        return Err(format!("run {bad} is more than 3 spreads from {mean}"));
    }
    if (res.u_star - mean).abs() > 3.0 * res.spread {
        return Err(format!(
            "pooled u* {} far from replicate mean {mean}",
            res.u_star
        ));
    }
    Ok(format!(
        "pooled u*={:.5}, replicate mean={mean:.5}, spread={:.5} ({time})",
        res.u_star, res.spread
    ))
}

fn property_suite() -> Verdict {
    let t = Instant::now();
    let report = run_suite(SuiteConfig {
        quick: false,
        seed: 2024,
    });
    let time = within_time(t, Duration::from_secs(120))?;
    if report.all_passed() {
        Ok(format!("{} checks ({time})", report.checks.len()))
    } else {
        Err(report
            .to_text()
            .lines()
            .filter(|l| l.starts_with("FAIL"))
            .collect::<Vec<_>>()
            .join("; "))
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("regular-tree critical level", regular_critical_level),
        ("extinction and backbone algebra", extinction_algebra),
        ("escape recursion vs walk oracle", walk_oracle),
        ("Laplace identity", laplace_identity),
        ("fixed point closed form", fixed_point_closed_form),
        ("survival simulation vs recursion", survival_vs_recursion),
        ("determinism of u*", critical_level_determinism),
        ("property suite", property_suite),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        match f() {
            Ok(note) => println!("criterion {id} PASS  {name}: {note}"),
            Err(why) => {
                failed += 1;
                println!("criterion {id} FAIL  {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
