use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::connectivity::Connectivity;
use crate::error::{contract, Error, Result};
use crate::ghost::{build_ghost, GhostLayer};
use crate::octant::{AtomRange, Octant, Space};
use crate::point::{child_boundary, num_boundary, Cell};
use crate::transport::Comm;

/// One rank's share of a distributed forest.
#[derive(Clone, Debug)]
pub struct Forest {
    pub conn: Arc<Connectivity>,
    pub rank: usize,
    pub size: usize,
    pub trees: Vec<Vec<Octant>>,
    /// First atom of every rank plus a terminal marker in tree `K`.
    pub first_atoms: Vec<Octant>,
    offsets: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestJson {
    pub rank: usize,
    pub size: usize,
    pub trees: Vec<Vec<(u8, [u64; 3])>>,
    pub first_atoms: Vec<Octant>,
}

/// All octants of a uniform refinement of every tree, in order.
pub fn uniform_leaves(sp: &Space, num_trees: u32, level: u8) -> Vec<Octant> {
    let n = 1u64 << (sp.d() * level as usize);
    let shift = sp.lmax - level;
    let lev = Space { dim: sp.dim, lmax: level };
    let mut out = Vec::with_capacity(n as usize * num_trees as usize);
    for t in 0..num_trees {
        for m in 0..n {
            let a = lev.atom_from_morton(t, m);
            out.push(Octant::new(t, level, [a.x[0] << shift, a.x[1] << shift, a.x[2] << shift]));
        }
    }
    out
}

impl Forest {
    fn build(conn: Arc<Connectivity>, rank: usize, size: usize, leaves: Vec<Octant>, first_atoms: Vec<Octant>) -> Forest {
        let k = conn.num_trees as usize;
        let mut trees = vec![Vec::new(); k];
        for o in leaves {
            trees[o.tree as usize].push(o);
        }
        let mut f = Forest {
            conn,
            rank,
            size,
            trees,
            first_atoms,
            offsets: Vec::new(),
        };
        f.reindex();
        f
    }

    fn reindex(&mut self) {
        let mut off = Vec::with_capacity(self.trees.len() + 1);
        let mut acc = 0;
        for t in &self.trees {
            off.push(acc);
            acc += t.len();
        }
        off.push(acc);
        self.offsets = off;
    }

    /// Split a globally sorted leaf list evenly across `size` ranks.
    pub fn from_leaves(conn: Arc<Connectivity>, leaves: &[Octant], size: usize) -> Result<Vec<Forest>> {
        let n = leaves.len();
        let sp = conn.space;
        let bounds: Vec<usize> = (0..=size).map(|q| q * n / size).collect();
        for q in 0..size {
            if bounds[q] == bounds[q + 1] {
                return Err(Error::EmptyRank(q));
            }
        }
        let mut f: Vec<Octant> = (0..size).map(|q| sp.first_atom(&leaves[bounds[q]])).collect();
        f.push(sp.first_atom(&sp.root(conn.num_trees)));
        Ok((0..size)
            .map(|q| Forest::build(conn.clone(), q, size, leaves[bounds[q]..bounds[q + 1]].to_vec(), f.clone()))
            .collect())
    }

    /// Every tree refined uniformly to `level`, split evenly.
    pub fn new_uniform(conn: Arc<Connectivity>, size: usize, level: u8) -> Result<Vec<Forest>> {
        if level > conn.space.lmax {
            return Err(contract(format!("level {level} exceeds lmax")));
        }
        let leaves = uniform_leaves(&conn.space, conn.num_trees, level);
        Forest::from_leaves(conn, &leaves, size)
    }

    /// Forest for one rank from its local leaves and a shared first-atoms array.
    pub fn from_parts(conn: Arc<Connectivity>, rank: usize, size: usize, leaves: Vec<Octant>, first_atoms: Vec<Octant>) -> Result<Forest> {
        if leaves.is_empty() {
            return Err(Error::EmptyRank(rank));
        }
        if first_atoms.len() != size + 1 {
            return Err(contract("first-atoms array must have P + 1 entries"));
        }
        Ok(Forest::build(conn, rank, size, leaves, first_atoms))
    }

    pub fn space(&self) -> &Space {
        &self.conn.space
    }

    pub fn num_local(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Local index of the first leaf of tree `t`.
    pub fn tree_offset(&self, t: usize) -> usize {
        self.offsets[t]
    }

    pub fn leaf(&self, j: usize) -> &Octant {
        let t = self.offsets.partition_point(|&o| o <= j) - 1;
        &self.trees[t][j - self.offsets[t]]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Octant> {
        self.trees.iter().flatten()
    }

    /// Local index of a local leaf.
    pub fn local_index(&self, o: &Octant) -> Option<usize> {
        let t = o.tree as usize;
        self.trees[t].binary_search(o).ok().map(|i| self.offsets[t] + i)
    }

    /// Rank owning atom `a`.
    pub fn locate(&self, a: &Octant) -> usize {
        self.first_atoms.partition_point(|f| f <= a) - 1
    }

    pub fn checked_locate(&self, a: &Octant) -> Result<usize> {
        if *a < self.first_atoms[0] || a.tree >= self.conn.num_trees {
            return Err(contract("atom outside the forest"));
        }
        Ok(self.locate(a))
    }

    /// Closed atom interval owned by rank `q`.
    pub fn rank_range(&self, q: usize) -> AtomRange {
        AtomRange {
            first: self.first_atoms[q],
            last: self.space().pred_atom(&self.first_atoms[q + 1]),
        }
    }

    /// Replace each matching leaf by its children, optionally repeatedly.
    pub fn refine(&mut self, recursive: bool, pred: impl Fn(&Octant) -> bool) {
        let sp = *self.space();
        for t in self.trees.iter_mut() {
            let mut out = Vec::with_capacity(t.len());
            for o in t.iter() {
                if o.level >= sp.lmax || !pred(o) {
                    out.push(*o);
                    continue;
                }
                let mut stack: Vec<Octant> = sp.children(o);
                stack.reverse();
                while let Some(x) = stack.pop() {
                    if recursive && x.level < sp.lmax && pred(&x) {
                        stack.extend(sp.children(&x).into_iter().rev());
                    } else {
                        out.push(x);
                    }
                }
            }
            *t = out;
        }
        self.reindex();
    }

    /// Replace complete local sibling families whose members all match by their parent.
    pub fn coarsen(&mut self, pred: impl Fn(&Octant) -> bool) {
        let sp = *self.space();
        let nc = sp.num_children();
        for t in self.trees.iter_mut() {
            let mut out = Vec::with_capacity(t.len());
            let mut i = 0;
            while i < t.len() {
                let o = t[i];
                if o.level > 0 && sp.child_id(&o) == 0 && i + nc <= t.len() {
                    let p = sp.parent(&o);
                    let fam = &t[i..i + nc];
                    let complete = fam
                        .iter()
                        .enumerate()
                        .all(|(k, x)| x.level == o.level && sp.parent(x) == p && sp.child_id(x) == k);
                    if complete && fam.iter().all(&pred) {
                        out.push(p);
                        i += nc;
                        continue;
                    }
                }
                out.push(o);
                i += 1;
            }
            *t = out;
        }
        self.reindex();
    }

    /// Every rank's leaves, concatenated in rank order.
    pub fn gather_leaves(&self, comm: &Comm) -> Result<Vec<Octant>> {
        let words: Vec<u64> = self.leaves().flat_map(|o| o.to_words()).collect();
        let all = comm.allgather_words(&words)?;
        Ok(all.iter().flat_map(|w| w.chunks_exact(5).map(Octant::from_words)).collect())
    }

    /// Redistribute leaves so that local counts differ by at most one.
    pub fn partition_even(&mut self, comm: &Comm) -> Result<()> {
        let p = self.size;
        let me = self.rank;
        let counts = comm.allgather_u64(self.num_local() as u64)?;
        let offs = Comm::prefix_sums(&counts);
        let n: u64 = counts.iter().sum();
        let target: Vec<u64> = (0..=p as u64).map(|q| q * n / p as u64).collect();
        if (0..p).any(|q| target[q] == target[q + 1]) {
            return Err(Error::EmptyRank((0..p).find(|&q| target[q] == target[q + 1]).unwrap()));
        }
        let overlap = |a0: u64, a1: u64, b0: u64, b1: u64| (a0.max(b0), a1.min(b1));
        let mine: Vec<Octant> = self.leaves().copied().collect();
        let (my0, my1) = (offs[me], offs[me] + counts[me]);
        let mut keep = Vec::new();
        for q in 0..p {
            let (s, e) = overlap(my0, my1, target[q], target[q + 1]);
            if s >= e {
                continue;
            }
            let slice = &mine[(s - my0) as usize..(e - my0) as usize];
            if q == me {
                keep = slice.to_vec();
            } else {
                let w: Vec<u64> = slice.iter().flat_map(|o| o.to_words()).collect();
                comm.send_words(q, &w)?;
            }
        }
        let mut leaves = Vec::new();
        for q in 0..p {
            let (s, e) = overlap(offs[q], offs[q] + counts[q], target[me], target[me + 1]);
            if s >= e {
                continue;
            }
            if q == me {
                leaves.extend_from_slice(&keep);
            } else {
                let w = comm.recv_words(q)?;
                leaves.extend(w.chunks_exact(5).map(Octant::from_words));
            }
        }
        let sp = *self.space();
        let firsts = comm.allgather_words(&sp.first_atom(&leaves[0]).to_words())?;
        let mut f: Vec<Octant> = firsts.iter().map(|w| Octant::from_words(w)).collect();
        f.push(sp.first_atom(&sp.root(self.conn.num_trees)));
        *self = Forest::build(self.conn.clone(), me, p, leaves, f);
        Ok(())
    }

    /// Merged local and ghost leaves of tree `t`, in order.
    pub fn merged_tree(&self, ghost: &GhostLayer, t: usize) -> Vec<Octant> {
        let mut v: Vec<Octant> = self.trees[t].clone();
        v.extend_from_slice(ghost.tree_ghosts(t));
        v.sort();
        v
    }

    /// Local leaves that have a leaf at least two levels finer touching their closure,
    /// judged from the local leaves and a codimension-`d` ghost layer.
    pub fn unbalanced_leaves(&self, ghost: &GhostLayer) -> Vec<usize> {
        let sp = *self.space();
        let merged: Vec<Vec<Octant>> = (0..self.trees.len()).map(|t| self.merged_tree(ghost, t)).collect();
        let mut out = Vec::new();
        for (j, o) in self.leaves().enumerate() {
            if o.level + 2 > sp.lmax {
                continue;
            }
            let cell = Cell::from_octant(&sp, o);
            'outer: for c in cell.boundary(&sp) {
                let c = if c.dim() == 0 { Cell { h: cell.h, ..c } } else { c };
                for e in self.conn.supp(&c) {
                    if e.oct == *o {
                        continue;
                    }
                    if deep_touch(&sp, &merged[e.oct.tree as usize], &e.oct, e.b, o.level + 2) {
                        out.push(j);
                        break 'outer;
                    }
                }
            }
        }
        out
    }

    /// Refine until every pair of touching leaves differs by at most one level.
    pub fn balance(&mut self, comm: &Comm) -> Result<()> {
        loop {
            let ghost = build_ghost(self, comm, self.space().dim)?;
            let marks = self.unbalanced_leaves(&ghost);
            let changed = comm.allgather_u64(marks.len() as u64)?;
            if changed.iter().all(|&c| c == 0) {
                return Ok(());
            }
            let set: std::collections::HashSet<Octant> = marks.iter().map(|&j| *self.leaf(j)).collect();
            self.refine(false, |o| set.contains(o));
        }
    }

    pub fn to_json(&self) -> ForestJson {
        ForestJson {
            rank: self.rank,
            size: self.size,
            trees: self
                .trees
                .iter()
                .map(|t| t.iter().map(|o| (o.level, o.x)).collect())
                .collect(),
            first_atoms: self.first_atoms.clone(),
        }
    }
}

/// Leaves of `arr` overlapping octant `s`: either one containing leaf, or its descendants.
pub fn overlap_range(arr: &[Octant], sp: &Space, s: &Octant) -> std::ops::Range<usize> {
    let i = arr.partition_point(|x| x < s);
    if i > 0 && sp.is_descendant(s, &arr[i - 1]) {
        return i - 1..i;
    }
    let last = sp.last_atom(s);
    let j = arr.partition_point(|x| *x <= last);
    i..j.max(i)
}

/// Whether some leaf inside `s` with level at least `min_level` touches the closed entity `b` of `s`.
pub fn deep_touch(sp: &Space, arr: &[Octant], s: &Octant, b: u8, min_level: u8) -> bool {
    let r = overlap_range(arr, sp, s);
    if r.is_empty() {
        return false;
    }
    let x = &arr[r.start];
    if r.len() == 1 && sp.is_descendant(s, x) {
        return x.level >= min_level;
    }
    if s.level >= sp.lmax {
        return false;
    }
    let sub = &arr[r];
    let mask = 1u32 << b;
    debug_assert!(b < num_boundary(sp.dim));
    (0..sp.num_children()).any(|j| child_boundary(sp.dim, j) & mask != 0 && deep_touch(sp, sub, &sp.child(s, j), b, min_level))
}
