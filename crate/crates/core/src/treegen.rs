//! Galton-Watson tree samplers: backbone only, conditioned on survival
//! (backbone plus bushes), and unconditioned.

use rand::Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::offspring::{BackboneView, OffspringDistribution};
use crate::rng;
use crate::tree::{NodeId, Tree, TreeBuilder, TreeKind};
use crate::Scalar;

pub const DEFAULT_MAX_NODES: usize = 50_000_000;
pub const DEFAULT_MAX_BUSH_NODES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_nodes: usize,
    pub max_bush_nodes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_nodes: DEFAULT_MAX_NODES,
            max_bush_nodes: DEFAULT_MAX_BUSH_NODES,
        }
    }
}

/// Backbone tree of law `f~` truncated at `depth`.
pub fn sample_backbone<T: Scalar>(bb: &BackboneView<T>, depth: u32, seed: u64) -> Result<Tree> {
    sample_backbone_with(bb, depth, &mut rng::stream(seed, 0), Limits::default())
}

pub fn sample_backbone_with<T: Scalar, R: Rng + ?Sized>(
    bb: &BackboneView<T>,
    depth: u32,
    rng: &mut R,
    limits: Limits,
) -> Result<Tree> {
    let mut b = TreeBuilder::new(true, limits.max_nodes);
    let mut i = 0;
    while i < b.len() {
        let id = NodeId(i as u32);
        if b.depth(id) < depth {
            let k = bb.sample_count(rng);
            b.push_children(id, std::iter::repeat_n(true, k))?;
        }
        i += 1;
    }
    Ok(b.finish(depth, TreeKind::Backbone))
}

/// Galton-Watson tree conditioned on non-extinction, built from its Harris
/// decomposition. Bushes are sampled to their natural end, also below `depth`.
pub fn sample_conditioned<T: Scalar>(
    dist: &OffspringDistribution<T>,
    depth: u32,
    seed: u64,
) -> Result<Tree> {
    sample_conditioned_with(dist, depth, &mut rng::stream(seed, 0), Limits::default())
}

pub fn sample_conditioned_with<T: Scalar, R: Rng + ?Sized>(
    dist: &OffspringDistribution<T>,
    depth: u32,
    rng: &mut R,
    limits: Limits,
) -> Result<Tree> {
    let s = &dist.samplers;
    let mut b = TreeBuilder::new(true, limits.max_nodes);
    // Bush root of every bush vertex, for the per-bush size cap.
    let mut bush_of: Vec<u32> = vec![u32::MAX];
    let mut bush_size: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let id = NodeId(i as u32);
        if b.is_backbone(id) {
            let k = s.backbone.sample(rng);
            let m = s.bush[k].as_ref().map_or(0, |w| w.sample(rng));
            let k = if b.depth(id) < depth { k } else { 0 };
            b.push_children(
                id,
                std::iter::repeat_n(true, k).chain(std::iter::repeat_n(false, m)),
            )?;
            bush_of.extend(std::iter::repeat_n(u32::MAX, k));
            for _ in 0..m {
                bush_of.push(bush_size.len() as u32);
                bush_size.push(1);
            }
        } else {
            let extinct = s.extinct.as_ref().expect("bushes only exist when q > 0");
            let c = extinct.sample(rng);
            let root = bush_of[i];
            let size = &mut bush_size[root as usize];
            *size += c;
            if *size > limits.max_bush_nodes {
                return Err(Error::ResourceLimit {
                    what: "bush",
                    limit: limits.max_bush_nodes,
                });
            }
            b.push_children(id, std::iter::repeat_n(false, c))?;
            bush_of.extend(std::iter::repeat_n(root, c));
        }
        i += 1;
    }
    Ok(b.finish(depth, TreeKind::Conditioned))
}

/// Plain Galton-Watson tree; may die out before `depth`.
pub fn sample_unconditioned<T: Scalar>(
    dist: &OffspringDistribution<T>,
    depth: u32,
    seed: u64,
) -> Result<Tree> {
    sample_unconditioned_with(dist, depth, &mut rng::stream(seed, 0), Limits::default())
}

pub fn sample_unconditioned_with<T: Scalar, R: Rng + ?Sized>(
    dist: &OffspringDistribution<T>,
    depth: u32,
    rng: &mut R,
    limits: Limits,
) -> Result<Tree> {
    let mut b = TreeBuilder::new(false, limits.max_nodes);
    let mut i = 0;
    while i < b.len() {
        let id = NodeId(i as u32);
        if b.depth(id) < depth {
            let c = dist.samplers.offspring.sample(rng);
            b.push_children(id, std::iter::repeat_n(false, c))?;
        }
        i += 1;
    }
    Ok(b.finish(depth, TreeKind::Unconditioned))
}

/// Vertices of an unconditioned tree that have a descendant at the
/// truncation depth, as a backbone-kind tree. Empty result means extinction
/// before the truncation depth.
pub fn surviving_skeleton(tree: &Tree) -> Option<Tree> {
    let d = tree.truncation_depth();
    let mut alive = vec![false; tree.len()];
    for id in tree.ids().rev() {
        alive[id.index()] = tree.depth(id) == d || tree.children(id).any(|c| alive[c.index()]);
    }
    if !alive[0] {
        return None;
    }
    let lists: Vec<Vec<usize>> = tree
        .ids()
        .map(|id| {
            tree.children(id)
                .filter(|c| alive[c.index()])
                .map(NodeId::index)
                .collect()
        })
        .collect();
    let flags = vec![true; tree.len()];
    Some(Tree::from_children(&lists, &flags, 0, d, TreeKind::Backbone).expect("valid skeleton"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::DistSpec;

    type D = OffspringDistribution<f64>;

    fn quarter() -> D {
        D::new(DistSpec::Pmf {
            p: vec![0.25, 0.0, 0.75],
        })
        .unwrap()
    }

    /// Pearson chi-square statistic and the 0.999 quantile for the given
    /// degrees of freedom (Wilson-Hilferty approximation).
    fn chi_square(observed: &[usize], expected_p: &[f64]) -> (f64, f64) {
        let n: usize = observed.iter().sum();
        let mut stat = 0.0;
        let mut cells = 0;
        for (o, p) in observed.iter().zip(expected_p) {
            let e = p * n as f64;
            if e > 0.0 {
                stat += (*o as f64 - e).powi(2) / e;
                cells += 1;
            } else {
                assert_eq!(*o, 0, "observed count in a zero-probability cell");
            }
        }
        let k = (cells - 1).max(1) as f64;
        let z = 3.090_232; // 0.999 normal quantile
        let crit = k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3);
        (stat, crit)
    }

    #[test]
    fn backbone_examples() {
        let d2 = D::new(DistSpec::Deterministic { d: 2 }).unwrap();
        let t = sample_backbone(d2.backbone(), 3, 1).unwrap();
        assert_eq!(t.len(), 15);
        assert_eq!(t, Tree::regular(2, 3).unwrap());
        let t0 = sample_backbone(quarter().backbone(), 0, 5).unwrap();
        assert_eq!(t0.len(), 1);
    }

    #[test]
    fn backbone_root_counts_follow_rho_tilde() {
        let d = quarter();
        let n = 100_000;
        let mut counts = [0usize; 3];
        let mut rng = rng::stream(42, 0);
        for _ in 0..n {
            let t = sample_backbone_with(d.backbone(), 1, &mut rng, Limits::default()).unwrap();
            counts[t.children(t.root()).len()] += 1;
        }
        let (stat, crit) = chi_square(&counts, &[0.0, 0.5, 0.5]);
        assert!(stat < crit, "chi2 {stat} >= {crit}");
    }

    #[test]
    fn conditioned_examples() {
        let d2 = D::new(DistSpec::Deterministic { d: 2 }).unwrap();
        let t = sample_conditioned(&d2, 2, 3).unwrap();
        assert_eq!(t.len(), 7);
        assert!(t.ids().all(|id| t.is_backbone(id)));
        let d = quarter();
        for seed in 0..200 {
            let t = sample_conditioned(&d, 0, seed).unwrap();
            t.validate().unwrap();
            assert_eq!(t.backbone_count(), 1);
            let t = sample_conditioned(&d, 1, seed).unwrap();
            t.validate().unwrap();
            let kids: Vec<NodeId> = t.children(t.root()).collect();
            let k = kids.iter().filter(|c| t.is_backbone(**c)).count();
            let m = kids.len() - k;
            assert!(k == 1 || k == 2);
            // a litter has at most two children, and k = 1 forces one bush child
            assert_eq!(m, 2 - k);
        }
    }

    #[test]
    fn conditioned_root_laws() {
        let d = quarter();
        let n = 100_000;
        let mut bb = [0usize; 3];
        let mut total = [0usize; 3];
        let mut rng = rng::stream(7, 0);
        for _ in 0..n {
            let t = sample_conditioned_with(&d, 1, &mut rng, Limits::default()).unwrap();
            let kids: Vec<NodeId> = t.children(t.root()).collect();
            bb[kids.iter().filter(|c| t.is_backbone(**c)).count()] += 1;
            total[kids.len()] += 1;
        }
        let (s1, c1) = chi_square(&bb, &[0.0, 0.5, 0.5]);
        assert!(s1 < c1, "backbone counts chi2 {s1}");
        let surv = d.surviving_root_pmf();
        let (s2, c2) = chi_square(&total, &surv);
        assert!(s2 < c2, "total counts chi2 {s2}");
    }

    #[test]
    fn bushes_are_complete_and_flags_consistent() {
        let d = D::from_json(r#"{"family":"poisson","lambda":1.5}"#).unwrap();
        for seed in 0..50 {
            let t = sample_conditioned(&d, 6, seed).unwrap();
            t.validate().unwrap();
            // no bush vertex is truncated: leaves of bushes are genuine leaves
            for id in t.ids().filter(|id| !t.is_backbone(*id)) {
                assert!(!t.is_frontier(id));
            }
            assert_eq!(t.backbone_restriction().len(), t.backbone_count());
        }
    }

    #[test]
    fn q_zero_conditioned_matches_backbone_in_law() {
        let d = D::new(DistSpec::Pmf {
            p: vec![0.0, 0.5, 0.5],
        })
        .unwrap();
        assert_eq!(d.extinction_probability(), 0.0);
        for seed in 0..20 {
            let t = sample_conditioned(&d, 5, seed).unwrap();
            assert_eq!(t.backbone_count(), t.len());
        }
    }

    #[test]
    fn unconditioned_examples() {
        let d3 = D::new(DistSpec::Deterministic { d: 3 }).unwrap();
        assert_eq!(sample_unconditioned(&d3, 2, 0).unwrap().len(), 13);
        assert_eq!(sample_unconditioned(&quarter(), 0, 0).unwrap().len(), 1);
    }

    #[test]
    fn unconditioned_survival_matches_iterated_pgf() {
        let d = quarter();
        let depth = 10;
        // q_D = f(q_{D-1}), q_0 = 0: probability of extinction by generation D
        let mut q = 0.0;
        for _ in 0..depth {
            q = d.pgf(q, 0).unwrap();
        }
        let n = 100_000;
        let mut rng = rng::stream(99, 0);
        let survived = (0..n)
            .filter(|_| {
                let t = sample_unconditioned_with(&d, depth, &mut rng, Limits::default()).unwrap();
                t.height() == depth
            })
            .count();
        let p = 1.0 - q;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let phat = survived as f64 / n as f64;
        assert!((phat - p).abs() < 4.0 * se, "{phat} vs {p}");
    }

    #[test]
    fn surviving_skeleton_approaches_backbone_law() {
        let d = quarter();
        let depth = 12;
        let mut rng = rng::stream(5, 0);
        let mut counts = [0usize; 3];
        let mut kept = 0;
        while kept < 20_000 {
            let t = sample_unconditioned_with(&d, depth, &mut rng, Limits::default()).unwrap();
            if let Some(s) = surviving_skeleton(&t) {
                s.validate().unwrap();
                counts[s.children(s.root()).len()] += 1;
                kept += 1;
            }
        }
        let (stat, crit) = chi_square(&counts, &[0.0, 0.5, 0.5]);
        assert!(stat < crit, "chi2 {stat}");
    }

    #[test]
    fn deterministic_given_seed() {
        let d = D::from_json(r#"{"family":"geometric","p":0.3}"#).unwrap();
        assert_eq!(
            sample_conditioned(&d, 5, 11).unwrap(),
            sample_conditioned(&d, 5, 11).unwrap()
        );
        assert_ne!(
            sample_conditioned(&d, 5, 11).unwrap(),
            sample_conditioned(&d, 5, 12).unwrap()
        );
    }

    #[test]
    fn resource_cap() {
        let d2 = D::new(DistSpec::Deterministic { d: 2 }).unwrap();
        let limits = Limits {
            max_nodes: 100,
            max_bush_nodes: 10,
        };
        let r = sample_backbone_with(d2.backbone(), 10, &mut rng::stream(0, 0), limits);
        assert!(matches!(r, Err(Error::ResourceLimit { .. })));
    }
}
