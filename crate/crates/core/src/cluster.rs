//! Direct simulation of the vacant cluster of the root.
//!
//! The root is vacant with probability `exp(-u chi)`. Given that, the cluster
//! is an inhomogeneous Bernoulli site percolation: each backbone child `z` of
//! an open vertex is open with probability `exp(-u h(z))`, `h = S beta`.
//! Bush vertices have `h = 0` and are open whenever their parent is, so they
//! never change the backbone part of the cluster and are not visited.
//!
//! Uniforms are keyed by the path from the root (`key(child) = mix(key,
//! rank)`, rank among backbone children), so runs at different levels `u`
//! and on a tree and its backbone restriction see the same randomness.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fmt::g9;
use crate::harmonic::{beta_table, site_weight, EscapeTable};
use crate::offspring::OffspringDistribution;
use crate::rng::{mix, tag, unit};
use crate::sampling::{BackbonePool, BackboneSampler, SampledTree, SamplingPlan};
use crate::tree::{NodeId, Tree};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterOutcome {
    pub root_vacant: bool,
    /// Largest backbone depth in the cluster; -1 when the root is occupied.
    pub depth_reached: i32,
    /// Backbone vertices visited. For survival runs that stop at a target
    /// depth this counts only the part explored before stopping.
    pub backbone_cluster_size: usize,
}

/// The backbone of a tree as seen by the cluster exploration.
trait Backbone<T> {
    type V: Copy;
    fn root(&self) -> Self::V;
    fn chi(&self) -> T;
    fn depth(&self, v: Self::V) -> u32;
    /// `(S, beta)` of a vertex.
    fn escape(&self, v: Self::V) -> (T, T);
    fn children(&self, v: Self::V, out: &mut Vec<Self::V>);
}

struct TreeView<'a, T> {
    tree: &'a Tree,
    table: &'a EscapeTable<T>,
}

impl<T: Scalar> Backbone<T> for TreeView<'_, T> {
    type V = NodeId;

    fn root(&self) -> NodeId {
        self.tree.root()
    }

    fn chi(&self) -> T {
        self.table.sum(self.tree.root())
    }

    fn depth(&self, v: NodeId) -> u32 {
        self.tree.depth(v)
    }

    fn escape(&self, v: NodeId) -> (T, T) {
        (self.table.sum(v), self.table.beta(v))
    }

    fn children(&self, v: NodeId, out: &mut Vec<NodeId>) {
        out.extend(
            self.tree
                .children(v)
                .filter(|&c| self.tree.is_structural(c)),
        );
    }
}

#[derive(Debug, Clone, Copy)]
enum PooledVertex {
    Top(NodeId),
    Pool { level: u32, idx: u32, depth: u32 },
}

struct PooledView<'a, T> {
    st: &'a SampledTree<T>,
    pool: Option<&'a BackbonePool<T>>,
}

impl<T: Scalar> Backbone<T> for PooledView<'_, T> {
    type V = PooledVertex;

    fn root(&self) -> PooledVertex {
        PooledVertex::Top(self.st.tree.root())
    }

    fn chi(&self) -> T {
        self.st.chi()
    }

    fn depth(&self, v: PooledVertex) -> u32 {
        match v {
            PooledVertex::Top(id) => self.st.tree.depth(id),
            PooledVertex::Pool { depth, .. } => depth,
        }
    }

    fn escape(&self, v: PooledVertex) -> (T, T) {
        match (v, self.pool) {
            (PooledVertex::Pool { level, idx, .. }, Some(pool)) => {
                let l = pool.level(level);
                (l.sum[idx as usize], l.beta[idx as usize])
            }
            (PooledVertex::Top(id), _) => (self.st.table.sum(id), self.st.table.beta(id)),
            _ => unreachable!("pool vertex without a pool"),
        }
    }

    fn children(&self, v: PooledVertex, out: &mut Vec<PooledVertex>) {
        let tree = &self.st.tree;
        match v {
            PooledVertex::Top(id) => match self.pool {
                // A frontier vertex stands for its pool entry; continue below it.
                Some(pool) if tree.is_frontier(id) => {
                    let (level, depth) = (self.st.pool_level, tree.depth(id));
                    let idx = self.st.attach[id.index()];
                    out.extend(pool.level(level).children(idx).iter().map(|&j| {
                        PooledVertex::Pool {
                            level: level - 1,
                            idx: j,
                            depth: depth + 1,
                        }
                    }));
                }
                _ => out.extend(tree.children(id).map(PooledVertex::Top)),
            },
            PooledVertex::Pool { level, idx, depth } => {
                if level > 0 {
                    let pool = self.pool.expect("pool vertex without a pool");
                    out.extend(pool.level(level).children(idx).iter().map(|&j| {
                        PooledVertex::Pool {
                            level: level - 1,
                            idx: j,
                            depth: depth + 1,
                        }
                    }));
                }
            }
        }
    }
}

/// Depth-first exploration of the cluster, stopping as soon as depth
/// `target` is reached when one is given.
fn explore<T: Scalar, G: Backbone<T>>(
    g: &G,
    u: T,
    key: u64,
    target: Option<u32>,
) -> ClusterOutcome {
    let vacancy = (-u * g.chi()).exp();
    if !(T::lit(unit(key)) < vacancy) {
        return ClusterOutcome {
            root_vacant: false,
            depth_reached: -1,
            backbone_cluster_size: 0,
        };
    }
    let mut size = 1usize;
    let mut deepest = 0u32;
    if target == Some(0) {
        return ClusterOutcome {
            root_vacant: true,
            depth_reached: 0,
            backbone_cluster_size: size,
        };
    }
    let mut stack = vec![(g.root(), key)];
    let mut kids = Vec::new();
    while let Some((v, k)) = stack.pop() {
        kids.clear();
        g.children(v, &mut kids);
        for (rank, &c) in kids.iter().enumerate() {
            let ck = mix(k, rank as u64);
            let (s, b) = g.escape(c);
            let w = site_weight(s, b, u);
            if T::lit(unit(ck)) < w.p {
                size += 1;
                deepest = deepest.max(g.depth(c));
                if target.is_some_and(|t| deepest >= t) {
                    return ClusterOutcome {
                        root_vacant: true,
                        depth_reached: deepest as i32,
                        backbone_cluster_size: size,
                    };
                }
                stack.push((c, ck));
            }
        }
    }
    ClusterOutcome {
        root_vacant: true,
        depth_reached: deepest as i32,
        backbone_cluster_size: size,
    }
}

fn check_u<T: Scalar>(op: &'static str, u: T) -> Result<()> {
    if u > T::zero() && u.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(
            op,
            format!("level u = {u} must be positive and finite"),
        ))
    }
}

fn cluster_key(seed: u64, replica: u64) -> u64 {
    mix(mix(seed, tag::OPEN), replica)
}

/// One cluster on a fixed tree, explored in full.
pub fn simulate_cluster<T: Scalar>(tree: &Tree, u: T, seed: u64) -> Result<ClusterOutcome> {
    let table = beta_table::<T>(tree);
    simulate_cluster_with(tree, &table, u, seed)
}

pub fn simulate_cluster_with<T: Scalar>(
    tree: &Tree,
    table: &EscapeTable<T>,
    u: T,
    seed: u64,
) -> Result<ClusterOutcome> {
    check_u("simulate_cluster", u)?;
    if tree.truncation_depth() < 1 {
        return Err(Error::Domain(
            "simulate_cluster",
            "tree depth must be at least 1".into(),
        ));
    }
    Ok(explore(
        &TreeView { tree, table },
        u,
        cluster_key(seed, 0),
        None,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalEstimate<T> {
    pub n: u32,
    pub r_hat: T,
    /// Binomial standard error `sqrt(r (1 - r) / N)`.
    pub stderr: T,
    pub replicas: usize,
}

fn binomial<T: Scalar>(n: u32, hits: usize, replicas: usize) -> SurvivalEstimate<T> {
    let nf = T::from_count(replicas);
    let r = T::from_count(hits) / nf;
    SurvivalEstimate {
        n,
        r_hat: r,
        stderr: (r * (T::one() - r) / nf).sqrt(),
        replicas,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRun<T> {
    pub u: T,
    /// Levels below depth `n_max` that feed the escape probabilities.
    pub lookahead: u32,
    pub seed: u64,
    pub estimates: Vec<SurvivalEstimate<T>>,
    pub outcomes: Vec<ClusterOutcome>,
}

impl<T: Scalar> SurvivalRun<T> {
    /// Rows `u,n,r_hat,stderr,N,depth,seed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("u,n,r_hat,stderr,N,depth,seed\n");
        for e in &self.estimates {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                g9(self.u.as_f64()),
                e.n,
                g9(e.r_hat.as_f64()),
                g9(e.stderr.as_f64()),
                e.replicas,
                self.lookahead,
                self.seed
            ));
        }
        out
    }

    /// Rows `replica,root_vacant,depth_reached,size`.
    pub fn replica_csv(&self) -> String {
        let mut out = String::from("replica,root_vacant,depth_reached,size\n");
        for (i, o) in self.outcomes.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{}\n",
                o.root_vacant as u8, o.depth_reached, o.backbone_cluster_size
            ));
        }
        out
    }
}

/// Annealed probability that the vacant cluster of the root reaches depth `n`,
/// for every `n` in `ns`, from `replicas` independent (tree, cluster) pairs.
///
/// Trees are backbone samples truncated at `max(ns) + lookahead`, so every
/// vertex the event depends on sees at least `lookahead` levels below it when
/// its escape probability is computed. The frontier is closed (`h = inf`),
/// which is why a truncation equal to `n` would give zero.
pub fn annealed_survival_profile<T: Scalar>(
    dist: &OffspringDistribution<T>,
    u: T,
    ns: &[u32],
    replicas: usize,
    lookahead: u32,
    seed: u64,
) -> Result<SurvivalRun<T>> {
    check_u("annealed_survival", u)?;
    if replicas < 1 {
        return Err(Error::Domain(
            "annealed_survival",
            "need at least one replica".into(),
        ));
    }
    if lookahead < 1 {
        return Err(Error::Domain(
            "annealed_survival",
            "lookahead depth must be at least 1".into(),
        ));
    }
    let n_max = ns
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::Domain("annealed_survival", "no target depths".into()))?;
    let depth = n_max
        .checked_add(lookahead)
        .ok_or_else(|| Error::Domain("annealed_survival", "depth overflow".into()))?;
    let bb = dist.backbone();
    let sampler = BackboneSampler::new(bb, SamplingPlan::auto(bb, depth, replicas), seed);
    let pool = sampler.pool();
    let shared = if bb.is_degenerate() {
        Some(sampler.sample(0)?)
    } else {
        None
    };
    let outcomes = (0..replicas as u64)
        .into_par_iter()
        .map(|i| {
            let key = cluster_key(seed, i);
            match &shared {
                Some(st) => Ok(explore(&PooledView { st, pool }, u, key, Some(n_max))),
                None => {
                    let st = sampler.sample(i)?;
                    Ok(explore(&PooledView { st: &st, pool }, u, key, Some(n_max)))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let estimates = ns
        .iter()
        .map(|&n| {
            binomial(
                n,
                outcomes
                    .iter()
                    .filter(|o| o.depth_reached >= n as i32)
                    .count(),
                replicas,
            )
        })
        .collect();
    Ok(SurvivalRun {
        u,
        lookahead,
        seed,
        estimates,
        outcomes,
    })
}

pub fn annealed_survival<T: Scalar>(
    dist: &OffspringDistribution<T>,
    u: T,
    n: u32,
    replicas: usize,
    lookahead: u32,
    seed: u64,
) -> Result<SurvivalEstimate<T>> {
    Ok(annealed_survival_profile(dist, u, &[n], replicas, lookahead, seed)?.estimates[0])
}

/// Probability, on one fixed tree, that the vacant cluster reaches depth `n`.
pub fn quenched_survival<T: Scalar>(
    tree: &Tree,
    u: T,
    n: u32,
    replicas: usize,
    seed: u64,
) -> Result<SurvivalEstimate<T>> {
    check_u("quenched_survival", u)?;
    if replicas < 1 {
        return Err(Error::Domain(
            "quenched_survival",
            "need at least one replica".into(),
        ));
    }
    if n > tree.truncation_depth() {
        return Err(Error::Domain(
            "quenched_survival",
            format!("n = {n} exceeds the tree depth"),
        ));
    }
    let table = beta_table::<T>(tree);
    let view = TreeView {
        tree,
        table: &table,
    };
    let hits = (0..replicas as u64)
        .into_par_iter()
        .filter(|&i| explore(&view, u, cluster_key(seed, i), Some(n)).depth_reached >= n as i32)
        .count();
    Ok(binomial(n, hits, replicas))
}
