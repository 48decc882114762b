//! Backbone samples truncated at a large depth without materializing the
//! whole truncated tree.
//!
//! A backbone tree of depth `D` with mean offspring `m` has about `m^D`
//! vertices, which is out of reach for `D = 30` and 10^5 samples. The escape
//! recursion contracts geometrically, so vertices far below the root matter
//! little. Each sample therefore consists of an exactly sampled top tree of
//! depth `k` whose frontier vertices are attached to entries of a shared
//! pool: `D - k` levels of backbone vertices, where every level-`j` entry
//! draws its child count from `rho~` and its children uniformly from level
//! `j - 1`, and level 0 is the absorbing frontier. Every pool entry is
//! therefore itself a (possibly self-overlapping) backbone tree of depth `j`.
//!
//! When the whole tree fits in the vertex budget the pool is not used and
//! samples are plain truncated backbone trees.

use rand::Rng;

use crate::error::Result;
use crate::harmonic::{beta_table_with, ordered_sum, EscapeTable};
use crate::offspring::BackboneView;
use crate::rng::{self, tag};
use crate::tree::{NodeId, Tree};
use crate::treegen::{sample_backbone_with, Limits};
use crate::Scalar;

/// Total top-tree vertices allowed per sample set.
pub const NODE_BUDGET: f64 = 3.0e7;
/// Lower bound on the per-tree vertex budget, whatever the sample count.
pub const MIN_TREE_NODES: f64 = 256.0;
pub const DEFAULT_POOL_SIZE: usize = 1 << 17;

/// Split of the truncation depth between the exact top tree and the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingPlan {
    pub depth: u32,
    pub exact_depth: u32,
    pub pool_size: usize,
}

impl SamplingPlan {
    /// Whole trees, no pool.
    pub fn exact(depth: u32) -> Self {
        Self {
            depth,
            exact_depth: depth,
            pool_size: 0,
        }
    }

    /// Deepest exact top tree whose expected size fits the budget for `samples` trees.
    pub fn auto<T: Scalar>(bb: &BackboneView<T>, depth: u32, samples: usize) -> Self {
        let per_tree = (NODE_BUDGET / samples.max(1) as f64).max(MIN_TREE_NODES);
        Self::with_budget(bb, depth, per_tree, DEFAULT_POOL_SIZE)
    }

    pub fn with_budget<T: Scalar>(
        bb: &BackboneView<T>,
        depth: u32,
        per_tree: f64,
        pool_size: usize,
    ) -> Self {
        let m = bb.mean().as_f64();
        let mut k = 0;
        let mut level = 1.0;
        let mut total = 1.0;
        while k < depth {
            level *= m;
            if total + level > per_tree {
                break;
            }
            total += level;
            k += 1;
        }
        if k >= depth {
            return Self::exact(depth);
        }
        let pool_size = if bb.is_degenerate() {
            1
        } else {
            pool_size.max(1)
        };
        Self {
            depth,
            exact_depth: k,
            pool_size,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.exact_depth >= self.depth
    }

    pub fn pool_levels(&self) -> u32 {
        self.depth.saturating_sub(self.exact_depth)
    }
}

#[derive(Debug, Clone)]
pub struct PoolLevel<T> {
    pub beta: Vec<T>,
    pub sum: Vec<T>,
    offsets: Vec<u32>,
    children: Vec<u32>,
}

impl<T> PoolLevel<T> {
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    #[inline]
    pub fn children(&self, i: u32) -> &[u32] {
        let i = i as usize;
        &self.children[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }
}

/// Levels `0..=L` of pooled backbone vertices; level `j` has remaining depth `j`.
#[derive(Debug, Clone)]
pub struct BackbonePool<T> {
    levels: Vec<PoolLevel<T>>,
}

impl<T: Scalar> BackbonePool<T> {
    pub fn build(bb: &BackboneView<T>, top_level: u32, size: usize, seed: u64) -> Self {
        let mut levels = Vec::with_capacity(top_level as usize + 1);
        levels.push(PoolLevel {
            beta: vec![T::one()],
            sum: vec![T::infinity()],
            offsets: vec![0, 0],
            children: vec![],
        });
        let mut buf = Vec::new();
        for j in 1..=top_level {
            let prev = &levels[j as usize - 1];
            let mut rng = rng::stream(rng::mix(seed, tag::POOL), j as u64);
            let mut lvl = PoolLevel {
                beta: Vec::with_capacity(size),
                sum: Vec::with_capacity(size),
                offsets: Vec::with_capacity(size + 1),
                children: Vec::with_capacity(size * 2),
            };
            lvl.offsets.push(0);
            for _ in 0..size {
                let c = bb.sample_count(&mut rng);
                buf.clear();
                for _ in 0..c {
                    let idx = if prev.len() == 1 {
                        0
                    } else {
                        rng.gen_range(0..prev.len() as u32)
                    };
                    lvl.children.push(idx);
                    buf.push(prev.beta[idx as usize]);
                }
                let s = ordered_sum(&mut buf);
                lvl.sum.push(s);
                lvl.beta.push(s / (T::one() + s));
                lvl.offsets.push(lvl.children.len() as u32);
            }
            levels.push(lvl);
        }
        Self { levels }
    }

    #[inline]
    pub fn level(&self, j: u32) -> &PoolLevel<T> {
        &self.levels[j as usize]
    }

    pub fn top_level(&self) -> u32 {
        self.levels.len() as u32 - 1
    }
}

/// One sampled backbone: an exact top tree plus, for each of its frontier
/// vertices, the pool entry that continues it.
#[derive(Debug, Clone)]
pub struct SampledTree<T> {
    pub tree: Tree,
    pub table: EscapeTable<T>,
    /// Pool index at level `depth - exact_depth` for frontier vertices; `u32::MAX` elsewhere.
    pub attach: Vec<u32>,
    pub pool_level: u32,
}

impl<T: Scalar> SampledTree<T> {
    pub fn chi(&self) -> T {
        self.table.sum(self.tree.root())
    }
}

/// Draws backbone samples according to a [`SamplingPlan`]. Sample `i` is a
/// function of `(seed, i)` only.
#[derive(Debug)]
pub struct BackboneSampler<'a, T> {
    bb: &'a BackboneView<T>,
    plan: SamplingPlan,
    pool: Option<BackbonePool<T>>,
    seed: u64,
    limits: Limits,
}

impl<'a, T: Scalar> BackboneSampler<'a, T> {
    pub fn new(bb: &'a BackboneView<T>, plan: SamplingPlan, seed: u64) -> Self {
        let pool = (!plan.is_exact())
            .then(|| BackbonePool::build(bb, plan.pool_levels(), plan.pool_size, seed));
        Self {
            bb,
            plan,
            pool,
            seed,
            limits: Limits::default(),
        }
    }

    pub fn plan(&self) -> SamplingPlan {
        self.plan
    }

    pub fn pool(&self) -> Option<&BackbonePool<T>> {
        self.pool.as_ref()
    }

    pub fn sample(&self, index: u64) -> Result<SampledTree<T>> {
        let mut rng = rng::stream(rng::mix(self.seed, tag::TOP), index);
        let tree = sample_backbone_with(self.bb, self.plan.exact_depth, &mut rng, self.limits)?;
        let mut attach = vec![u32::MAX; tree.len()];
        let (table, pool_level) = match &self.pool {
            None => (beta_table_with(&tree, |_| (T::one(), T::infinity())), 0),
            Some(pool) => {
                let lvl = pool.level(pool.top_level());
                for id in tree.ids().filter(|id| tree.is_frontier(*id)) {
                    attach[id.index()] = if lvl.len() == 1 {
                        0
                    } else {
                        rng.gen_range(0..lvl.len() as u32)
                    };
                }
                let table = beta_table_with(&tree, |id: NodeId| {
                    let i = attach[id.index()] as usize;
                    (lvl.beta[i], lvl.sum[i])
                });
                (table, pool.top_level())
            }
        };
        Ok(SampledTree {
            tree,
            table,
            attach,
            pool_level,
        })
    }

    pub fn chi(&self, index: u64) -> Result<T> {
        Ok(self.sample(index)?.chi())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::{beta_table, regular_beta};
    use crate::offspring::{DistSpec, OffspringDistribution};
    use crate::sum::mean_stderr;
    use crate::treegen;

    type D = OffspringDistribution<f64>;

    #[test]
    fn plan_respects_budget() {
        let d = D::new(DistSpec::Pmf {
            p: vec![0.25, 0.0, 0.75],
        })
        .unwrap();
        let p = SamplingPlan::with_budget(d.backbone(), 30, 300.0, 1024);
        // 1 + 1.5 + ... + 1.5^k <= 300
        assert_eq!(p.exact_depth, 11);
        assert_eq!(p.pool_levels(), 19);
        assert!(SamplingPlan::with_budget(d.backbone(), 5, 300.0, 1024).is_exact());
        let d2 = D::new(DistSpec::Deterministic { d: 2 }).unwrap();
        let p2 = SamplingPlan::with_budget(d2.backbone(), 40, 300.0, 1024);
        assert_eq!(p2.exact_depth, 7);
        assert_eq!(p2.pool_size, 1);
    }

    #[test]
    fn regular_tree_is_exact_through_the_pool() {
        let d2 = D::new(DistSpec::Deterministic { d: 2 }).unwrap();
        let plan = SamplingPlan::with_budget(d2.backbone(), 40, 100.0, 64);
        assert!(!plan.is_exact());
        let s = BackboneSampler::new(d2.backbone(), plan, 1);
        let chi = s.chi(0).unwrap();
        assert_eq!(chi, 2.0 * regular_beta::<f64>(2, 39));
    }

    #[test]
    fn exact_plan_matches_tree_pipeline() {
        let d = D::new(DistSpec::Pmf {
            p: vec![0.25, 0.0, 0.75],
        })
        .unwrap();
        let s = BackboneSampler::new(d.backbone(), SamplingPlan::exact(8), 3);
        let st = s.sample(5).unwrap();
        let direct = beta_table::<f64>(&st.tree);
        assert_eq!(st.table, direct);
        assert_eq!(st.tree.truncation_depth(), 8);
    }

    #[test]
    fn pool_entries_are_valid_escape_values() {
        let d = D::from_json(r#"{"family":"poisson","lambda":1.8}"#).unwrap();
        let pool = BackbonePool::build(d.backbone(), 12, 2000, 9);
        for j in 1..=12 {
            let lvl = pool.level(j);
            for i in 0..lvl.len() as u32 {
                let kids = lvl.children(i);
                assert!(!kids.is_empty());
                let s: f64 = kids
                    .iter()
                    .map(|&c| pool.level(j - 1).beta[c as usize])
                    .sum();
                assert!((lvl.sum[i as usize] - s).abs() < 1e-14);
                assert!(lvl.beta[i as usize] > 0.0 && lvl.beta[i as usize] < 1.0);
            }
        }
    }

    #[test]
    fn pooled_and_exact_laws_agree() {
        // Independent oracle: fully materialized trees at a moderate depth.
        let d = D::new(DistSpec::Pmf {
            p: vec![0.25, 0.0, 0.75],
        })
        .unwrap();
        let depth = 14;
        let n = 6000;
        let exact: Vec<f64> = (0..n)
            .map(|i| {
                let t = treegen::sample_backbone(d.backbone(), depth, 1000 + i).unwrap();
                beta_table::<f64>(&t).sum(t.root())
            })
            .collect();
        let plan = SamplingPlan::with_budget(d.backbone(), depth, 20.0, 1 << 14);
        assert!(plan.exact_depth < depth);
        let s = BackboneSampler::new(d.backbone(), plan, 77);
        let pooled: Vec<f64> = (0..n).map(|i| s.chi(i).unwrap()).collect();
        let (m1, se1) = mean_stderr(&exact);
        let (m2, se2) = mean_stderr(&pooled);
        let z = (m1 - m2) / (se1 * se1 + se2 * se2).sqrt();
        assert!(z.abs() < 4.0, "means {m1} vs {m2}, z = {z}");
        // Laplace transform at u = 1 as a second functional
        let l = |xs: &[f64]| mean_stderr(&xs.iter().map(|c| (-c).exp()).collect::<Vec<_>>());
        let ((a, sa), (b, sb)) = (l(&exact), l(&pooled));
        assert!(((a - b) / (sa * sa + sb * sb).sqrt()).abs() < 4.0);
    }
}
