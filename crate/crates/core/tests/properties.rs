use std::f64::consts::LN_2;

use gwri::cluster::{annealed_survival_profile, quenched_survival};
use gwri::harmonic::h_profile;
use gwri::solver::{
    critical_u, criticality_index, fixed_point_from, phi, solve_critical_on, transform_means,
    McParams, DEFAULT_MAX_ITER,
};
use gwri::transforms::{consistency_gap, sample_chi};
use gwri::treegen::sample_conditioned;
use gwri::{DistSpec, Offspring, Offspring32, Tree};

fn pmf() -> Offspring {
    Offspring::new(DistSpec::Pmf {
        p: vec![0.25, 0.0, 0.75],
    })
    .unwrap()
}

#[test]
fn fixed_point_root_equivalence() {
    let tol = 1e-10;
    for spec in [
        r#"{"family":"pmf","p":[0.25,0,0.75]}"#,
        r#"{"family":"poisson","lambda":1.6}"#,
    ] {
        let d = Offspring::from_json(spec).unwrap();
        let s = sample_chi(&d, 20_000, 18, 3).unwrap();
        for i in 1..=40 {
            let u = i as f64 * 0.1;
            let index = criticality_index(&s, &d, u).unwrap();
            let (lg, lc) = transform_means(&s, u).unwrap();
            let fp = fixed_point_from(&d, lg, lc, u, tol, DEFAULT_MAX_ITER).unwrap();
            assert!(fp.converged);
            assert!(fp.iterates.windows(2).all(|w| w[1] <= w[0] && w[1] >= 0.0));
            if (index - 1.0).abs() < 0.02 {
                continue;
            }
            assert_eq!(
                fp.r > 0.0,
                index > 1.0,
                "{spec} u={u} index={index} r={}",
                fp.r
            );
            if fp.r > 0.0 {
                assert!(phi(&d, lg, lc, fp.r).abs() <= 10.0 * tol);
            }
        }
        // phi(0) is the consistency gap, zero up to noise
        let g = consistency_gap(&s, &d, 1.0).unwrap();
        assert!(g.z.abs() < 5.0, "{g:?}");
    }
}

#[test]
fn phase_consistency_of_simulated_survival() {
    let d = pmf();
    let s = sample_chi(&d, 20_000, 24, 8).unwrap();
    let u_hat = solve_critical_on(&s, &d, 1e-8).unwrap().midpoint();
    for (u, supercritical) in [(0.6 * u_hat, true), (1.6 * u_hat, false)] {
        let index = criticality_index(&s, &d, u).unwrap();
        assert_eq!(index > 1.05, supercritical);
        assert_eq!(index < 0.95, !supercritical);
        let run =
            annealed_survival_profile(&d, u, &[0, 5, 10, 15, 20, 25, 30], 20_000, 20, 4).unwrap();
        let e = run.estimates.last().unwrap();
        if supercritical {
            assert!(e.r_hat / e.stderr > 3.0, "{e:?}");
        } else {
            assert!(e.r_hat < 4.0 * e.stderr.max(1.0 / 20_000.0), "{e:?}");
        }
        for w in run.estimates.windows(2) {
            assert!(w[0].r_hat + 4.0 * w[0].stderr >= w[1].r_hat);
        }
    }
}

#[test]
fn quenched_persistence_below_critical_level() {
    let d = pmf();
    let res = critical_u(
        &d,
        1e-6,
        McParams {
            n: 20_000,
            depth: 24,
            seed: 1,
            replicates: 8,
        },
    )
    .unwrap();
    assert!(res.spread < 0.1, "{res:?}");
    let u = 0.5 * res.u_star;
    for seed in 0..10 {
        let t = sample_conditioned(&d, 22, seed).unwrap();
        let q = quenched_survival(&t, u, 20, 2000, seed).unwrap();
        assert!(q.r_hat > 0.01, "tree {seed}: {q:?}");
    }
}

#[test]
fn quenched_tends_to_one_as_level_vanishes() {
    let t = sample_conditioned(&pmf(), 12, 5).unwrap();
    let q = quenched_survival(&t, 1e-9, 11, 500, 0).unwrap();
    assert_eq!(q.r_hat, 1.0);
}

#[test]
fn critical_binary_level_opens_half() {
    let t = Tree::regular(2, 18).unwrap();
    let prof = h_profile::<f64>(&t, 2.0 * LN_2).unwrap();
    for id in t.ids().filter(|id| t.depth(*id) >= 1 && t.depth(*id) <= 5) {
        assert!((prof[id.index()].p - 0.5).abs() < 1e-3);
    }
}

#[test]
fn single_precision_pipeline() {
    let d = Offspring32::new(DistSpec::Deterministic { d: 3 }).unwrap();
    let res = critical_u(
        &d,
        1e-5f32,
        McParams {
            n: 8,
            depth: 30,
            seed: 0,
            replicates: 8,
        },
    )
    .unwrap();
    assert!((res.u_star - 0.823_959).abs() < 1e-3, "{res:?}");
    let p = Offspring32::from_json(r#"{"family":"pmf","p":[0.25,0,0.75]}"#).unwrap();
    assert!((p.extinction_probability() - 1.0 / 3.0).abs() < 1e-6);
}

#[test]
fn binomial_critical_levels_solve_the_index_equation() {
    let mc = McParams {
        n: 10_000,
        depth: 20,
        seed: 2,
        replicates: 8,
    };
    let sparse = critical_u(
        &Offspring::from_json(r#"{"family":"binomial","n":2,"p":0.7}"#).unwrap(),
        1e-6,
        mc,
    )
    .unwrap();
    let dense = critical_u(
        &Offspring::from_json(r#"{"family":"binomial","n":4,"p":0.7}"#).unwrap(),
        1e-6,
        mc,
    )
    .unwrap();
    for r in [&sparse, &dense] {
        assert!(r.bracket.0 <= r.u_star && r.u_star <= r.bracket.1);
        assert!((r.index_at_u_star - 1.0).abs() < 1e-3);
    }
}
