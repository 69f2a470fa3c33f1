use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Dimension and maximum refinement level shared by every octant of a forest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Space {
    pub dim: u8,
    pub lmax: u8,
}

/// A tree-local hypercube: tree index, refinement level and lower-corner coordinates.
///
/// For `dim == 2` the third coordinate is always zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Octant {
    pub tree: u32,
    pub level: u8,
    pub x: [u64; 3],
}

/// Closed interval of atoms `[first, last]` in the total order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AtomRange {
    pub first: Octant,
    pub last: Octant,
}

#[inline]
fn less_msb(p: u64, q: u64) -> bool {
    p < q && p < (p ^ q)
}

impl Ord for Octant {
    fn cmp(&self, other: &Self) -> Ordering {
        if self.tree != other.tree {
            return self.tree.cmp(&other.tree);
        }
        let mut best = 0;
        let mut best_diff = self.x[0] ^ other.x[0];
        for j in 1..3 {
            let diff = self.x[j] ^ other.x[j];
            if !less_msb(diff, best_diff) {
                best = j;
                best_diff = diff;
            }
        }
        if best_diff == 0 {
            return self.level.cmp(&other.level);
        }
        self.x[best].cmp(&other.x[best])
    }
}

impl PartialOrd for Octant {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Octant {
    pub fn new(tree: u32, level: u8, x: [u64; 3]) -> Self {
        Octant { tree, level, x }
    }

    /// Fixed-width encoding used on the wire.
    pub fn to_words(&self) -> [u64; 5] {
        [
            self.tree as u64,
            self.level as u64,
            self.x[0],
            self.x[1],
            self.x[2],
        ]
    }

    pub fn from_words(w: &[u64]) -> Self {
        Octant {
            tree: w[0] as u32,
            level: w[1] as u8,
            x: [w[2], w[3], w[4]],
        }
    }
}

impl Space {
    pub fn new(dim: u8, lmax: u8) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(contract(format!("dimension {dim} not in {{2, 3}}")));
        }
        if lmax == 0 || (dim as u32) * (lmax as u32) > 63 {
            return Err(contract(format!("lmax {lmax} unsupported for d={dim}")));
        }
        Ok(Space { dim, lmax })
    }

    /// Default maximum level: 29 in 2D, 20 in 3D.
    pub fn with_default_lmax(dim: u8) -> Result<Self> {
        Space::new(dim, if dim == 2 { 29 } else { 20 })
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn num_children(&self) -> usize {
        1 << self.dim
    }

    /// Side length `2^lmax` of a tree root.
    #[inline]
    pub fn root_len(&self) -> u64 {
        1u64 << self.lmax
    }

    /// Side length of an octant at `level`.
    #[inline]
    pub fn len(&self, level: u8) -> u64 {
        1u64 << (self.lmax - level)
    }

    pub fn root(&self, tree: u32) -> Octant {
        Octant::new(tree, 0, [0; 3])
    }

    pub fn is_valid(&self, o: &Octant) -> bool {
        if o.level > self.lmax {
            return false;
        }
        let h = self.len(o.level);
        (0..3).all(|j| {
            if j >= self.d() {
                o.x[j] == 0
            } else {
                o.x[j] < self.root_len() && o.x[j] % h == 0
            }
        })
    }

    pub fn child(&self, o: &Octant, i: usize) -> Octant {
        debug_assert!(o.level < self.lmax && i < self.num_children());
        let h = self.len(o.level + 1);
        let mut c = *o;
        c.level += 1;
        for j in 0..self.d() {
            if i & (1 << j) != 0 {
                c.x[j] += h;
            }
        }
        c
    }

    pub fn children(&self, o: &Octant) -> Vec<Octant> {
        (0..self.num_children()).map(|i| self.child(o, i)).collect()
    }

    pub fn parent(&self, o: &Octant) -> Octant {
        debug_assert!(o.level > 0);
        self.ancestor(o, o.level - 1)
    }

    /// Ancestor of `o` at level `l <= o.level`.
    pub fn ancestor(&self, o: &Octant, l: u8) -> Octant {
        debug_assert!(l <= o.level);
        let mask = !(self.len(l) - 1);
        let mut a = *o;
        a.level = l;
        for j in 0..self.d() {
            a.x[j] &= mask;
        }
        a
    }

    /// Index of the child of `o`'s level-`(l-1)` ancestor that contains `o`.
    #[inline]
    pub fn ancestor_id(&self, o: &Octant, l: u8) -> usize {
        debug_assert!(l > 0 && l <= o.level);
        let sh = self.lmax - l;
        let mut id = 0;
        for j in 0..self.d() {
            id |= (((o.x[j] >> sh) & 1) as usize) << j;
        }
        id
    }

    pub fn checked_ancestor_id(&self, o: &Octant, l: u8) -> Result<usize> {
        if l == 0 || l > o.level {
            return Err(contract(format!(
                "ancestor_id level {l} outside (0, {}]",
                o.level
            )));
        }
        Ok(self.ancestor_id(o, l))
    }

    #[inline]
    pub fn child_id(&self, o: &Octant) -> usize {
        self.ancestor_id(o, o.level)
    }

    /// True iff `o` is `a` or one of its descendants.
    #[inline]
    pub fn is_descendant(&self, o: &Octant, a: &Octant) -> bool {
        if o.tree != a.tree || a.level > o.level {
            return false;
        }
        let sh = self.lmax - a.level;
        (0..self.d()).all(|j| (o.x[j] >> sh) == (a.x[j] >> sh))
    }

    /// True iff one of the two octants contains the other.
    #[inline]
    pub fn overlaps(&self, a: &Octant, b: &Octant) -> bool {
        self.is_descendant(a, b) || self.is_descendant(b, a)
    }

    #[inline]
    pub fn first_atom(&self, o: &Octant) -> Octant {
        Octant::new(o.tree, self.lmax, o.x)
    }

    #[inline]
    pub fn last_atom(&self, o: &Octant) -> Octant {
        let h = self.len(o.level) - 1;
        let mut a = Octant::new(o.tree, self.lmax, o.x);
        for j in 0..self.d() {
            a.x[j] += h;
        }
        a
    }

    pub fn range(&self, o: &Octant) -> AtomRange {
        AtomRange {
            first: self.first_atom(o),
            last: self.last_atom(o),
        }
    }

    /// Interleaved Morton index of an octant's lower corner.
    pub fn morton(&self, o: &Octant) -> u64 {
        let mut m = 0u64;
        let d = self.d();
        for b in 0..self.lmax as usize {
            for j in 0..d {
                m |= ((o.x[j] >> b) & 1) << (b * d + j);
            }
        }
        m
    }

    pub fn atom_from_morton(&self, tree: u32, m: u64) -> Octant {
        let mut x = [0u64; 3];
        let d = self.d();
        for b in 0..self.lmax as usize {
            for (j, xj) in x.iter_mut().enumerate().take(d) {
                *xj |= ((m >> (b * d + j)) & 1) << b;
            }
        }
        Octant::new(tree, self.lmax, x)
    }

    /// Number of atoms in one tree.
    pub fn atoms_per_tree(&self) -> u64 {
        1u64 << (self.d() * self.lmax as usize)
    }

    /// Atom immediately preceding `a` in the total order (crossing into the previous tree).
    pub fn pred_atom(&self, a: &Octant) -> Octant {
        let m = self.morton(a);
        if m == 0 {
            debug_assert!(a.tree > 0);
            self.atom_from_morton(a.tree - 1, self.atoms_per_tree() - 1)
        } else {
            self.atom_from_morton(a.tree, m - 1)
        }
    }

    /// Atom immediately following `a` in the total order (crossing into the next tree).
    pub fn succ_atom(&self, a: &Octant) -> Octant {
        let m = self.morton(a);
        if m + 1 == self.atoms_per_tree() {
            self.atom_from_morton(a.tree + 1, 0)
        } else {
            self.atom_from_morton(a.tree, m + 1)
        }
    }

    /// Lowest common ancestor of two octants in the same tree.
    pub fn nearest_common_ancestor(&self, a: &Octant, b: &Octant) -> Octant {
        debug_assert_eq!(a.tree, b.tree);
        let mut diff = 0u64;
        for j in 0..self.d() {
            diff |= a.x[j] ^ b.x[j];
        }
        let bits = 64 - diff.leading_zeros() as u8;
        let l = (self.lmax.saturating_sub(bits)).min(a.level).min(b.level);
        self.ancestor(a, l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o2(level: u8, x: u64, y: u64) -> Octant {
        Octant::new(0, level, [x, y, 0])
    }

    #[test]
    fn ancestors_precede_descendants() {
        assert!(o2(1, 0, 0) < o2(2, 0, 0));
        assert_eq!(o2(1, 2, 0).cmp(&o2(1, 2, 0)), Ordering::Equal);
    }

    #[test]
    fn siblings_follow_z_order() {
        let s = [o2(1, 0, 0), o2(1, 2, 0), o2(1, 0, 2), o2(1, 2, 2)];
        for w in s.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn ancestor_id_examples() {
        let sp = Space::new(3, 4).unwrap();
        let o = Octant::new(0, 3, [12, 4, 6]);
        assert_eq!(sp.ancestor_id(&o, 1), 1);
        assert_eq!(sp.ancestor_id(&o, 2), 7);
        assert!(sp.checked_ancestor_id(&o, 0).is_err());
        assert!(sp.checked_ancestor_id(&o, 4).is_err());
    }

    #[test]
    fn child_parent_and_range() {
        let sp = Space::new(2, 2).unwrap();
        let c = sp.child(&sp.root(0), 3);
        assert_eq!(c, o2(1, 2, 2));
        assert_eq!(sp.parent(&c), sp.root(0));
        let r = sp.range(&sp.root(0));
        assert_eq!(r.first.x, [0, 0, 0]);
        assert_eq!(r.last.x, [3, 3, 0]);
        let r = sp.range(&c);
        assert_eq!((r.first.x, r.last.x), ([2, 2, 0], [3, 3, 0]));
    }

    #[test]
    fn atom_successor_wraps_trees() {
        let sp = Space::new(2, 2).unwrap();
        let last = sp.last_atom(&sp.root(0));
        let next = sp.succ_atom(&last);
        assert_eq!(next, sp.first_atom(&sp.root(1)));
        assert_eq!(sp.pred_atom(&next), last);
    }

    #[test]
    fn words_round_trip() {
        let o = Octant::new(7, 3, [8, 16, 24]);
        assert_eq!(Octant::from_words(&o.to_words()), o);
    }
}
