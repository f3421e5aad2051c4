//! Perfect binary routing tree, branches, propagation envelopes and coarse grainings.
//!
//! Routers are numbered in heap order: the root is 0 and router `r` has children
//! `2r + 1` (left) and `2r + 2` (right). Heap order is breadth-first order.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type RouterId = usize;

/// Digit of the passive wait level in three-level routers.
pub const WAIT: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouterModel {
    TwoLevel,
    ThreeLevel,
}

impl RouterModel {
    pub fn local_dim(self) -> u8 {
        match self {
            RouterModel::TwoLevel => 2,
            RouterModel::ThreeLevel => 3,
        }
    }

    pub fn wait_digit(self) -> Option<u8> {
        match self {
            RouterModel::TwoLevel => None,
            RouterModel::ThreeLevel => Some(WAIT),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeTopology {
    depth: usize,
    model: RouterModel,
    level: Vec<usize>,
    parent: Vec<Option<RouterId>>,
    children: Vec<Option<(RouterId, RouterId)>>,
    leaf_cells: Vec<Option<(usize, usize)>>,
}

pub fn build_tree(n: usize, model: RouterModel) -> Result<TreeTopology> {
    if n == 0 {
        return Err(Error::ZeroDepth);
    }
    let count = (1usize << n) - 1;
    let first_leaf = (1usize << (n - 1)) - 1;
    let mut level = Vec::with_capacity(count);
    let mut parent = Vec::with_capacity(count);
    let mut children = Vec::with_capacity(count);
    let mut leaf_cells = Vec::with_capacity(count);
    for r in 0..count {
        level.push((usize::BITS - (r + 1).leading_zeros()) as usize);
        parent.push(if r == 0 { None } else { Some((r - 1) / 2) });
        if r >= first_leaf {
            children.push(None);
            let j = r - first_leaf;
            leaf_cells.push(Some((2 * j, 2 * j + 1)));
        } else {
            children.push(Some((2 * r + 1, 2 * r + 2)));
            leaf_cells.push(None);
        }
    }
    Ok(TreeTopology { depth: n, model, level, parent, children, leaf_cells })
}

/// Bits of address `i`, most significant first.
pub fn address_bits(i: usize, n: usize) -> Vec<u8> {
    (0..n).map(|m| ((i >> (n - 1 - m)) & 1) as u8).collect()
}

impl TreeTopology {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn model(&self) -> RouterModel {
        self.model
    }

    pub fn router_count(&self) -> usize {
        self.level.len()
    }

    pub fn memory_size(&self) -> usize {
        1 << self.depth
    }

    pub fn routers(&self) -> std::ops::Range<RouterId> {
        0..self.router_count()
    }

    /// Level in `1..=depth`; the root is level 1.
    pub fn level(&self, r: RouterId) -> usize {
        self.level[r]
    }

    pub fn parent(&self, r: RouterId) -> Option<RouterId> {
        self.parent[r]
    }

    pub fn children(&self, r: RouterId) -> Option<(RouterId, RouterId)> {
        self.children[r]
    }

    pub fn leaf_cells(&self, r: RouterId) -> Option<(usize, usize)> {
        self.leaf_cells[r]
    }

    pub fn is_leaf(&self, r: RouterId) -> bool {
        self.children[r].is_none()
    }

    pub fn is_left_child(&self, r: RouterId) -> bool {
        r != 0 && r % 2 == 1
    }

    pub fn routers_at_level(&self, l: usize) -> std::ops::Range<RouterId> {
        ((1usize << (l - 1)) - 1)..((1usize << l) - 1)
    }

    /// Leaf router owning memory cell `cell` and the leg (0 left, 1 right).
    pub fn cell_router(&self, cell: usize) -> (RouterId, u8) {
        ((1usize << (self.depth - 1)) - 1 + cell / 2, (cell % 2) as u8)
    }

    fn check(&self, r: RouterId) -> Result<()> {
        if r < self.router_count() {
            Ok(())
        } else {
            Err(Error::NoSuchRouter(r))
        }
    }

    pub fn subtree(&self, r: RouterId) -> BTreeSet<RouterId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![r];
        while let Some(x) = stack.pop() {
            out.insert(x);
            if let Some((a, b)) = self.children[x] {
                stack.push(a);
                stack.push(b);
            }
        }
        out
    }

    /// Root-to-leaf router path selected by `address` (one bit per level).
    pub fn branch(&self, address: &[u8]) -> Result<Vec<RouterId>> {
        if address.len() != self.depth {
            return Err(Error::AddressLength { expected: self.depth, got: address.len() });
        }
        if let Some((site, &digit)) = address.iter().enumerate().find(|(_, &b)| b > 1) {
            return Err(Error::Radix { site, digit, radix: 2 });
        }
        let mut path = Vec::with_capacity(self.depth);
        let mut r = 0;
        for &bit in &address[..self.depth - 1] {
            path.push(r);
            r = 2 * r + 1 + bit as usize;
        }
        path.push(r);
        Ok(path)
    }

    pub fn branch_of(&self, i: usize) -> Vec<RouterId> {
        self.branch(&address_bits(i, self.depth)).expect("address in range")
    }

    /// Subtree rooted at the first ancestor-or-self of `r` that is a right child or the root.
    pub fn propagation_envelope(&self, r: RouterId) -> Result<BTreeSet<RouterId>> {
        self.check(r)?;
        let mut cur = r;
        while self.is_left_child(cur) {
            cur = self.parent[cur].expect("non-root");
        }
        Ok(self.subtree(cur))
    }

    /// True when `support` induces a connected subgraph of the tree.
    pub fn is_connected(&self, support: &BTreeSet<RouterId>) -> bool {
        if support.is_empty() {
            return false;
        }
        let internal_edges = support
            .iter()
            .filter(|&&r| self.parent[r].is_some_and(|p| support.contains(&p)))
            .count();
        internal_edges + 1 == support.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TopologyDoc::from(self)).expect("serializable")
    }

    pub fn coarse_grain(&self, d: usize, u: usize) -> Result<GrainedTree> {
        coarse_grain(self, d, u)
    }
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct TopologyDoc {
    pub depth: usize,
    pub model: RouterModel,
    pub memory_size: usize,
    pub routers: Vec<RouterId>,
    pub level: Vec<usize>,
    pub parent: Vec<Option<RouterId>>,
    pub children: Vec<Option<(RouterId, RouterId)>>,
    pub leaf_cells: Vec<Option<(usize, usize)>>,
}

impl From<&TreeTopology> for TopologyDoc {
    fn from(t: &TreeTopology) -> Self {
        TopologyDoc {
            depth: t.depth,
            model: t.model,
            memory_size: t.memory_size(),
            routers: t.routers().collect(),
            level: t.level.clone(),
            parent: t.parent.clone(),
            children: t.children.clone(),
            leaf_cells: t.leaf_cells.clone(),
        }
    }
}

/// Quotient of the tree in which runs of `d` consecutive levels become super-routers.
///
/// The first `u mod d` levels and any trailing levels that do not fill a run stay
/// uncontracted; for `d > 1` they are treated as noiseless in this graining.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrainedTree {
    pub d: usize,
    pub u: usize,
    /// Inclusive level ranges contracted into super-routers.
    pub runs: Vec<(usize, usize)>,
    pub quotient: Vec<Option<usize>>,
    pub supers: Vec<Vec<RouterId>>,
    /// Dimension `2^d + 1` of a super-router.
    pub super_dim: usize,
    pub noiseless_peripheries: Vec<RouterId>,
}

pub fn coarse_grain(tree: &TreeTopology, d: usize, u: usize) -> Result<GrainedTree> {
    let n = tree.depth;
    if d == 0 || d > n {
        return Err(Error::GrainSize { d, max: n });
    }
    if u == 0 || u > d {
        return Err(Error::GrainOffset { u, max: d });
    }
    let mut runs = Vec::new();
    let mut start = u % d + 1;
    while start + d - 1 <= n {
        runs.push((start, start + d - 1));
        start += d;
    }
    let mut quotient = vec![None; tree.router_count()];
    let mut supers = Vec::new();
    for &(lo, hi) in &runs {
        for top in tree.routers_at_level(lo) {
            let members: Vec<RouterId> =
                tree.subtree(top).into_iter().filter(|&r| tree.level(r) <= hi).collect();
            for &m in &members {
                quotient[m] = Some(supers.len());
            }
            supers.push(members);
        }
    }
    let noiseless_peripheries = tree.routers().filter(|&r| quotient[r].is_none()).collect();
    Ok(GrainedTree { d, u, runs, quotient, supers, super_dim: (1 << d) + 1, noiseless_peripheries })
}

/// Every graining `(d, u)` with `d <= max_d` and `u` in `1..=d`.
pub fn all_grainings(tree: &TreeTopology, max_d: usize) -> Result<Vec<GrainedTree>> {
    let mut out = Vec::new();
    for d in 1..=max_d.min(tree.depth()) {
        for u in 1..=d {
            out.push(coarse_grain(tree, d, u)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub channel: usize,
    pub d: usize,
    pub u: usize,
    pub super_router: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrainReport {
    pub eps: BTreeMap<usize, f64>,
    pub assignments: Vec<Assignment>,
}

/// Assigns each `(support, rate)` channel to the smallest graining that makes it
/// single-router local and sums the rates per super-router.
pub fn effective_error_rates(
    grainings: &[GrainedTree],
    channels: &[(BTreeSet<RouterId>, f64)],
) -> Result<GrainReport> {
    let mut order: Vec<&GrainedTree> = grainings.iter().collect();
    order.sort_by_key(|g| (g.d, g.u));
    let max_d = order.iter().map(|g| g.d).max().unwrap_or(0);
    let mut assignments = Vec::with_capacity(channels.len());
    let mut load: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for (index, (support, rate)) in channels.iter().enumerate() {
        let mut found = None;
        for g in &order {
            if found.is_some_and(|a: Assignment| a.d < g.d) {
                break;
            }
            let mut ids = support.iter().map(|&r| g.quotient.get(r).copied().flatten());
            let first = ids.next().flatten();
            if let Some(s) = first {
                if ids.all(|x| x == Some(s)) && found.is_none() {
                    found = Some(Assignment { channel: index, d: g.d, u: g.u, super_router: s });
                }
            }
        }
        let a = found.ok_or(Error::Unassignable { index, max_d })?;
        *load.entry((a.d, a.u, a.super_router)).or_insert(0.0) += rate;
        assignments.push(a);
    }
    let mut eps: BTreeMap<usize, f64> = order.iter().map(|g| (g.d, 0.0)).collect();
    for ((d, _, _), total) in load {
        let e = eps.entry(d).or_insert(0.0);
        *e = e.max(total);
    }
    Ok(GrainReport { eps, assignments })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(n: usize) -> TreeTopology {
        build_tree(n, RouterModel::ThreeLevel).unwrap()
    }

    #[test]
    fn sizes_match_depth() {
        let t = tree(3);
        assert_eq!(t.router_count(), 7);
        assert_eq!(t.memory_size(), 8);
        let sizes: Vec<usize> = (1..=3).map(|l| t.routers_at_level(l).len()).collect();
        assert_eq!(sizes, vec![1, 2, 4]);
        let t1 = tree(1);
        assert_eq!((t1.router_count(), 2 * t1.router_count(), t1.memory_size()), (1, 2, 2));
        let t2 = tree(2);
        assert!(t2.is_leaf(1) && t2.is_leaf(2));
        assert_eq!(t2.children(0), Some((1, 2)));
        assert_eq!(build_tree(0, RouterModel::TwoLevel), Err(Error::ZeroDepth));
    }

    #[test]
    fn leaf_cells_are_a_bijection() {
        for n in 1..=6 {
            let t = tree(n);
            let mut cells: Vec<usize> = t
                .routers()
                .filter_map(|r| t.leaf_cells(r))
                .flat_map(|(a, b)| [a, b])
                .collect();
            cells.sort_unstable();
            assert_eq!(cells, (0..t.memory_size()).collect::<Vec<_>>());
            for cell in 0..t.memory_size() {
                let (r, leg) = t.cell_router(cell);
                let (a, b) = t.leaf_cells(r).unwrap();
                assert_eq!(if leg == 0 { a } else { b }, cell);
            }
        }
    }

    #[test]
    fn parent_child_consistency() {
        let t = tree(5);
        for r in t.routers() {
            if let Some((a, b)) = t.children(r) {
                assert_eq!(t.parent(a), Some(r));
                assert_eq!(t.parent(b), Some(r));
                assert_eq!(t.level(a), t.level(r) + 1);
            }
        }
        assert_eq!(t.routers().filter(|&r| t.parent(r).is_none()).count(), 1);
    }

    #[test]
    fn branch_of_100_ends_at_cell_4() {
        let t = tree(3);
        let path = t.branch(&[1, 0, 0]).unwrap();
        assert_eq!(path, vec![0, 2, 5]);
        assert_eq!(t.leaf_cells(5).unwrap().0, 4);
        assert_eq!(t.branch(&[1, 0]), Err(Error::AddressLength { expected: 3, got: 2 }));
    }

    #[test]
    fn opposite_branches_meet_only_at_root() {
        let t = tree(2);
        let a: BTreeSet<_> = t.branch_of(0b00).into_iter().collect();
        let b: BTreeSet<_> = t.branch_of(0b11).into_iter().collect();
        assert_eq!(a.intersection(&b).copied().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn envelope_examples() {
        let t = tree(3);
        let all: BTreeSet<_> = t.routers().collect();
        assert_eq!(t.propagation_envelope(3).unwrap(), all);
        assert_eq!(t.propagation_envelope(2).unwrap(), t.subtree(2));
        assert_eq!(t.propagation_envelope(0).unwrap(), all);
        // router 4 is the right child of 1
        assert_eq!(t.propagation_envelope(4).unwrap(), BTreeSet::from([4]));
        // router 5 is a left child of the right child 2
        assert_eq!(t.propagation_envelope(5).unwrap(), BTreeSet::from([2, 5, 6]));
    }

    #[test]
    fn graining_examples() {
        let t2 = tree(2);
        let g = t2.coarse_grain(2, 2).unwrap();
        assert_eq!(g.supers, vec![vec![0, 1, 2]]);
        assert_eq!(g.super_dim, 5);
        let id = t2.coarse_grain(1, 1).unwrap();
        assert_eq!(id.supers.len(), 3);
        assert!(id.noiseless_peripheries.is_empty());
        let t4 = tree(4);
        let g = t4.coarse_grain(2, 1).unwrap();
        assert_eq!(g.runs, vec![(2, 3)]);
        let periph: Vec<usize> = g.noiseless_peripheries.iter().map(|&r| t4.level(r)).collect();
        assert!(periph.iter().all(|&l| l == 1 || l == 4));
        assert_eq!(periph.len(), 1 + 8);
        assert!(matches!(t2.coarse_grain(3, 1), Err(Error::GrainSize { .. })));
    }

    #[test]
    fn singleton_channels_stay_at_d1() {
        let t = tree(3);
        let gs = all_grainings(&t, 2).unwrap();
        let chans: Vec<_> = t.routers().flat_map(|r| [(BTreeSet::from([r]), 0.01), (BTreeSet::from([r]), 0.01)]).collect();
        let rep = effective_error_rates(&gs, &chans).unwrap();
        assert!((rep.eps[&1] - 0.02).abs() < 1e-15);
        assert_eq!(rep.eps[&2], 0.0);
    }

    #[test]
    fn distinct_clusters_add_in_one_super_router() {
        // n = 3, d = 2, u = 1 contracts levels 2-3 into {1,3,4} and {2,5,6}.
        let t = tree(3);
        let gs = all_grainings(&t, 2).unwrap();
        let chans = vec![(BTreeSet::from([1, 3]), 0.002), (BTreeSet::from([1, 4]), 0.003)];
        let rep = effective_error_rates(&gs, &chans).unwrap();
        assert!(rep.assignments.iter().all(|a| a.d == 2 && a.u == 1));
        assert!((rep.eps[&2] - 0.005).abs() < 1e-15);
        assert_eq!(rep.eps[&1], 0.0);
    }

    #[test]
    fn connectivity() {
        let t = tree(3);
        assert!(t.is_connected(&BTreeSet::from([0, 1, 3])));
        assert!(!t.is_connected(&BTreeSet::from([1, 2])));
    }
}
