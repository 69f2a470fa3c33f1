use crate::error::{contract, Result};
use crate::forest::Forest;
use crate::octant::{Octant, Space};

/// Split `arr`, a sorted array of strict descendants of `a`, into the slices
/// below each child of `a`: child `i` owns `arr[k[i]..k[i + 1]]`.
pub fn split_array(sp: &Space, arr: &[Octant], a: &Octant) -> Vec<usize> {
    debug_assert!(arr.iter().all(|x| x.level > a.level && sp.is_descendant(x, a)));
    let lv = a.level + 1;
    let n = sp.num_children();
    let mut k = Vec::with_capacity(n + 1);
    k.push(0);
    let mut lo = 0;
    for i in 1..n {
        lo += arr[lo..].partition_point(|x| sp.ancestor_id(x, lv) < i);
        k.push(lo);
    }
    k.push(arr.len());
    k
}

/// Checked variant of [`split_array`] that validates its precondition.
pub fn checked_split_array(sp: &Space, arr: &[Octant], a: &Octant) -> Result<Vec<usize>> {
    if !arr.windows(2).all(|w| w[0] < w[1]) {
        return Err(contract("array is not sorted"));
    }
    if !arr.iter().all(|x| x.level > a.level && sp.is_descendant(x, a)) {
        return Err(contract("array holds an octant that is not a strict descendant"));
    }
    Ok(split_array(sp, arr, a))
}

/// Callbacks driving a search.
pub trait Matcher {
    /// Called once for every octant the traversal reaches, before any query is tested.
    fn visit(&mut self, _oct: &Octant, _is_leaf: bool) {}

    /// Whether query `q` may match a leaf at or below `oct`; false positives are allowed
    /// above leaves.
    fn matches(&mut self, oct: &Octant, is_leaf: bool, q: usize) -> bool;
}

impl<F: FnMut(&Octant, bool, usize) -> bool> Matcher for F {
    fn matches(&mut self, oct: &Octant, is_leaf: bool, q: usize) -> bool {
        self(oct, is_leaf, q)
    }
}

fn recurse<M: Matcher + ?Sized>(sp: &Space, a: &Octant, arr: &[Octant], queries: &[usize], m: &mut M) {
    let is_leaf = arr.len() == 1 && arr[0] == *a;
    m.visit(a, is_leaf);
    let kept: Vec<usize> = queries.iter().copied().filter(|&q| m.matches(a, is_leaf, q)).collect();
    if kept.is_empty() || is_leaf {
        return;
    }
    let k = split_array(sp, arr, a);
    for i in 0..sp.num_children() {
        if k[i] < k[i + 1] {
            recurse(sp, &sp.child(a, i), &arr[k[i]..k[i + 1]], &kept, m);
        }
    }
}

/// Top-down search of the local leaves for every query, pruning subtrees lazily.
pub fn search<M: Matcher + ?Sized>(forest: &Forest, queries: &[usize], m: &mut M) {
    let sp = *forest.space();
    for (t, leaves) in forest.trees.iter().enumerate() {
        if leaves.is_empty() || queries.is_empty() {
            continue;
        }
        recurse(&sp, &sp.root(t as u32), leaves, queries, m);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_examples() {
        let sp = Space::new(2, 2).unwrap();
        let root = sp.root(0);
        assert_eq!(split_array(&sp, &[], &root), vec![0; 5]);
        assert_eq!(split_array(&sp, &sp.children(&root), &root), vec![0, 1, 2, 3, 4]);
        let a = [
            Octant::new(0, 2, [0, 0, 0]),
            Octant::new(0, 2, [1, 0, 0]),
            Octant::new(0, 1, [2, 2, 0]),
        ];
        assert_eq!(split_array(&sp, &a, &root), vec![0, 2, 2, 2, 3]);
        assert!(checked_split_array(&sp, &[root], &root).is_err());
    }
}
