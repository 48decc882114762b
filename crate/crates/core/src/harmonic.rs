//! Escape probabilities, capacities and the site-percolation profile of the
//! vacant cluster on a fixed tree.
//!
//! For a vertex `x` with parent `p`, `beta(x)` is the probability that a
//! simple random walk started at `x`, moving in `T_x` plus `p`, never visits
//! `p`. With unit conductances the subtree `T_x` has effective conductance
//! `S(x) = sum of beta over children`, and `beta(x) = S(x) / (1 + S(x))`.
//! Truncated vertices are absorbing (`beta = 1`), so every table entry is an
//! upper bound on the infinite-tree value and decreases with the depth.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::tree::{NodeId, Tree};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeTable<T> {
    pub beta: Vec<T>,
    /// Sum of the children's `beta`; `+inf` on frontier vertices without boundary data.
    pub sum: Vec<T>,
    pub depth_used: u32,
    /// True when the vertex's subtree contains no frontier vertex, so `beta` is exact.
    pub exact: Vec<bool>,
}

impl<T: Scalar> EscapeTable<T> {
    #[inline]
    pub fn beta(&self, id: NodeId) -> T {
        self.beta[id.index()]
    }

    #[inline]
    pub fn sum(&self, id: NodeId) -> T {
        self.sum[id.index()]
    }
}

/// Sum that does not depend on the order of `xs`. Sorting makes shuffled child
/// lists produce bit-identical results; zeros from bushes do not alter the sum.
#[inline]
pub(crate) fn ordered_sum<T: Scalar>(xs: &mut [T]) -> T {
    if xs.len() > 2 {
        xs.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite escape values"));
    }
    xs.iter().fold(T::zero(), |acc, &x| acc + x)
}

/// Escape table with absorbing frontier (`beta = 1`).
pub fn beta_table<T: Scalar>(tree: &Tree) -> EscapeTable<T> {
    beta_table_with(tree, |_| (T::one(), T::infinity()))
}

/// Escape table where every frontier vertex takes `(beta, S)` from `boundary`.
pub fn beta_table_with<T, F>(tree: &Tree, mut boundary: F) -> EscapeTable<T>
where
    T: Scalar,
    F: FnMut(NodeId) -> (T, T),
{
    let n = tree.len();
    let mut beta = vec![T::zero(); n];
    let mut sum = vec![T::zero(); n];
    let mut exact = vec![true; n];
    let mut buf: Vec<T> = Vec::new();
    for id in tree.ids().rev() {
        let i = id.index();
        if tree.is_frontier(id) {
            let (b, s) = boundary(id);
            beta[i] = b;
            sum[i] = s;
            exact[i] = false;
            continue;
        }
        buf.clear();
        let mut ex = true;
        for c in tree.children(id) {
            buf.push(beta[c.index()]);
            ex &= exact[c.index()];
        }
        let s = ordered_sum(&mut buf);
        sum[i] = s;
        beta[i] = s / (T::one() + s);
        exact[i] = ex;
    }
    EscapeTable {
        beta,
        sum,
        depth_used: tree.truncation_depth(),
        exact,
    }
}

/// `(gamma, chi)` of the tree: `chi = S(root)` is the capacity of the root and
/// `gamma = chi / (1 + chi)` the root's escape probability once an extra
/// vertex is attached to it.
pub fn gamma_chi<T: Scalar>(tree: &Tree) -> Result<(T, T)> {
    if tree.truncation_depth() == 0 {
        return Err(Error::Domain(
            "gamma_chi",
            "truncation depth must be at least 1".into(),
        ));
    }
    let t = beta_table::<T>(tree);
    Ok(gamma_chi_from(&t, tree))
}

pub fn gamma_chi_from<T: Scalar>(table: &EscapeTable<T>, tree: &Tree) -> (T, T) {
    let chi = table.sum(tree.root());
    (chi / (T::one() + chi), chi)
}

/// Beta at the root of a complete `d`-ary tree of depth `depth`, by the
/// one-dimensional level recursion `b <- d b / (1 + d b)` from `b = 1`.
pub fn regular_beta<T: Scalar>(d: usize, depth: u32) -> T {
    let d = T::from_count(d);
    (0..depth).fold(T::one(), |b, _| d * b / (T::one() + d * b))
}

/// Weight `h` and opening probability `p = exp(-u h)` of one vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteWeight<T> {
    pub h: T,
    pub p: T,
}

/// `h(z) = S(z) beta(z) = S(z)^2 / (1 + S(z))` for `z` below the root;
/// the root carries `h = 0`.
#[inline]
pub fn site_weight<T: Scalar>(sum: T, beta: T, u: T) -> SiteWeight<T> {
    if sum == T::zero() {
        return SiteWeight {
            h: T::zero(),
            p: T::one(),
        };
    }
    let h = if sum.is_infinite() {
        T::infinity()
    } else {
        sum * beta
    };
    SiteWeight {
        h,
        p: (-u * h).exp(),
    }
}

/// Site-percolation profile of the vacant cluster of the root at level `u`.
pub fn h_profile<T: Scalar>(tree: &Tree, u: T) -> Result<Vec<SiteWeight<T>>> {
    h_profile_from(tree, &beta_table(tree), u)
}

pub fn h_profile_from<T: Scalar>(
    tree: &Tree,
    table: &EscapeTable<T>,
    u: T,
) -> Result<Vec<SiteWeight<T>>> {
    if !(u > T::zero()) {
        return Err(Error::Domain(
            "h_profile",
            format!("level u = {u} must be positive"),
        ));
    }
    if tree.truncation_depth() == 0 {
        return Err(Error::Domain(
            "h_profile",
            "truncation depth must be at least 1".into(),
        ));
    }
    Ok(tree
        .ids()
        .map(|id| {
            if id == tree.root() {
                SiteWeight {
                    h: T::zero(),
                    p: T::one(),
                }
            } else {
                site_weight(table.sum(id), table.beta(id), u)
            }
        })
        .collect())
}

/// CSV rows `node_id,depth,backbone,beta,S,h,p_u`.
pub fn profile_csv<T: Scalar>(tree: &Tree, table: &EscapeTable<T>, u: T) -> Result<String> {
    use crate::fmt::g9;
    let prof = h_profile_from(tree, table, u)?;
    let mut out = String::from("node_id,depth,backbone,beta,S,h,p_u\n");
    for id in tree.ids() {
        let w = prof[id.index()];
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            id.0,
            tree.depth(id),
            tree.is_backbone(id) as u8,
            g9(table.beta(id).as_f64()),
            g9(table.sum(id).as_f64()),
            g9(w.h.as_f64()),
            g9(w.p.as_f64())
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityResult<T> {
    pub value: T,
    /// Equilibrium measure `e_K(x) = deg(x) P_x[no return to K]` for `x` in `K`.
    pub equilibrium: BTreeMap<NodeId, T>,
    /// Escape probability contributed by each outer neighbour of `K`.
    pub boundary_terms: BTreeMap<NodeId, T>,
}

/// Capacity of a connected vertex set. Each outer neighbour `y` of `K`
/// contributes its probability of escaping to infinity without re-entering
/// `K`: `beta(y)` for children of `K`, and the upward escape probability for
/// the parent of the top vertex of `K`.
pub fn capacity<T: Scalar>(tree: &Tree, k: &[NodeId]) -> Result<CapacityResult<T>> {
    capacity_from(tree, &beta_table(tree), k)
}

pub fn capacity_from<T: Scalar>(
    tree: &Tree,
    table: &EscapeTable<T>,
    k: &[NodeId],
) -> Result<CapacityResult<T>> {
    if k.is_empty() {
        return Err(Error::InvalidSet("empty set".into()));
    }
    let set: HashSet<NodeId> = k.iter().copied().collect();
    if let Some(bad) = set.iter().find(|id| id.index() >= tree.len()) {
        return Err(Error::InvalidSet(format!("{bad:?} is not a vertex")));
    }
    if let Some(f) = set.iter().find(|id| tree.is_frontier(**id)) {
        return Err(Error::InvalidSet(format!(
            "{f:?} lies on the truncation frontier"
        )));
    }
    let tops: Vec<NodeId> = set
        .iter()
        .copied()
        .filter(|id| tree.parent(*id).is_none_or(|p| !set.contains(&p)))
        .collect();
    if tops.len() != 1 {
        return Err(Error::InvalidSet("set is not connected".into()));
    }
    let top = tops[0];

    let mut equilibrium = BTreeMap::new();
    let mut boundary_terms = BTreeMap::new();
    for &x in set.iter() {
        let mut terms: Vec<T> = Vec::new();
        for c in tree.children(x).filter(|c| !set.contains(c)) {
            let b = table.beta(c);
            boundary_terms.insert(c, b);
            terms.push(b);
        }
        if x == top {
            if let Some(p) = tree.parent(x) {
                let b = upward_escape(tree, table, x);
                boundary_terms.insert(p, b);
                terms.push(b);
            }
        }
        equilibrium.insert(x, ordered_sum(&mut terms));
    }
    let mut all: Vec<T> = boundary_terms.values().copied().collect();
    let value = ordered_sum(&mut all);
    Ok(CapacityResult {
        value,
        equilibrium,
        boundary_terms,
    })
}

/// Probability that a walk from the parent of `x` escapes to infinity in
/// `T` without visiting `x`.
fn upward_escape<T: Scalar>(tree: &Tree, table: &EscapeTable<T>, x: NodeId) -> T {
    // Conductance to infinity from each ancestor, excluding the branch we came from.
    let mut path = vec![x];
    while let Some(p) = tree.parent(*path.last().expect("nonempty")) {
        path.push(p);
    }
    // path = [x, parent, ..., root]; walk down from the root.
    let mut up = T::zero(); // conductance via the parent edge of the current vertex
    let mut buf: Vec<T> = Vec::new();
    for w in (1..path.len()).rev() {
        let v = path[w];
        let skip = path[w - 1];
        buf.clear();
        buf.extend(
            tree.children(v)
                .filter(|c| *c != skip)
                .map(|c| table.beta(c)),
        );
        let c = ordered_sum(&mut buf) + up;
        if w == 1 {
            return c / (T::one() + c);
        }
        up = c / (T::one() + c);
    }
    unreachable!("x has a parent")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapeEstimate {
    pub estimate: f64,
    pub hits: u64,
    pub unresolved: u64,
    pub walks: u64,
    /// Binomial standard error of `estimate`.
    pub stderr: f64,
}

impl EscapeEstimate {
    /// `[hits/n, (hits + unresolved)/n]`, widened by `z` binomial standard errors.
    pub fn interval(&self, z: f64) -> (f64, f64) {
        let n = self.walks as f64;
        let lo = self.hits as f64 / n - z * self.stderr;
        let hi = (self.hits + self.unresolved) as f64 / n + z * self.stderr;
        (lo.max(0.0), hi.min(1.0))
    }
}

/// Monte Carlo estimate of `beta(node)`: simple random walks from `node` in
/// `T_node` plus its parent (a virtual extra vertex for the root), counting
/// those that reach the frontier before the parent.
pub fn escape_mc(
    tree: &Tree,
    node: NodeId,
    max_steps: u64,
    n_walks: u64,
    seed: u64,
) -> EscapeEstimate {
    let walk = |i: u64| -> (u64, u64) {
        let mut rng = rng::stream(rng::mix(seed, rng::tag::WALK), i);
        let mut at = node;
        for _ in 0..max_steps {
            if tree.is_frontier(at) {
                return (1, 0);
            }
            let kids = tree.node(at).child_count as u64;
            // neighbours: parent (index 0) and children
            let step = rng.gen_range(0..=kids);
            if step == 0 {
                if at == node {
                    return (0, 0);
                }
                at = tree.parent(at).expect("walk stays below the start vertex");
            } else {
                at = NodeId(tree.node(at).first_child + step as u32 - 1);
            }
        }
        (0, 1)
    };
    let (hits, unresolved) = (0..n_walks)
        .into_par_iter()
        .map(walk)
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = n_walks.max(1) as f64;
    let estimate = hits as f64 / n;
    EscapeEstimate {
        estimate,
        hits,
        unresolved,
        walks: n_walks,
        stderr: (estimate.max(1.0 / n) * (1.0 - estimate).max(1.0 / n) / n).sqrt(),
    }
}
