use serde::{Deserialize, Serialize};

use crate::connectivity::Xform;
use crate::error::{contract, Result};
use crate::forest::Forest;
use crate::ghost::{find_range_boundaries, GhostLayer};
use crate::octant::{Octant, Space};
use crate::point::{child_boundary, corner_atom, from_codes, Cell, Code, PointKey};
use crate::search::split_array;

const MAX_SUPP: usize = 8;
const CACHE_SLOTS: usize = 8;

/// Which points are reported to the callback.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relevance {
    /// Points touching the closure of a local leaf.
    Open,
    /// Open points together with their closures.
    Closed,
}

#[derive(Clone, Copy, Debug)]
pub struct IterOptions {
    pub relevance: Relevance,
    /// Points of lower dimension are neither reported nor recursed into.
    pub min_dim: u8,
    pub split_cache: bool,
}

impl Default for IterOptions {
    fn default() -> Self {
        IterOptions {
            relevance: Relevance::Open,
            min_dim: 0,
            split_cache: true,
        }
    }
}

/// Operation counters for one traversal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterStats {
    pub interior_calls: u64,
    pub splits: u64,
    pub leaf_searches: u64,
    pub cache_hits: u64,
    pub callbacks: u64,
}

/// A leaf adjacent to the visited point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Side {
    pub oct: Octant,
    pub local: bool,
    /// Local leaf index if `local`, otherwise index into the ghost layer.
    pub index: usize,
    /// Map from the visit frame into the leaf's tree frame.
    pub xform: Xform,
}

/// Arguments of one callback invocation.
pub struct Visit<'a> {
    /// The point, expressed in the frame of its root entity's owning tree.
    pub cell: Cell,
    pub sides: &'a [Side],
}

impl Visit<'_> {
    pub fn dim(&self) -> u8 {
        self.cell.dim()
    }

    /// Canonical identity of the point.
    pub fn key(&self, forest: &Forest) -> PointKey {
        forest.conn.canonical(&self.cell)
    }
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    oct: Octant,
    b: u8,
    img: u8,
    lo: u32,
    hi: u32,
}

#[derive(Clone, Copy)]
struct Frame {
    cell: Cell,
    n: u8,
    entries: [Entry; MAX_SUPP],
}

struct TreeArr {
    octs: Vec<Octant>,
    src: Vec<(bool, usize)>,
    local_prefix: Vec<u32>,
}

#[derive(Clone, Copy)]
struct CacheSlot {
    oct: Octant,
    lo: u32,
    hi: u32,
    k: [u32; 9],
}

struct Walker<'a, F: FnMut(&Visit)> {
    forest: &'a Forest,
    sp: Space,
    opts: IterOptions,
    trees: Vec<TreeArr>,
    images: Vec<Xform>,
    cache: Vec<[Option<CacheSlot>; CACHE_SLOTS]>,
    cache_next: Vec<usize>,
    stats: IterStats,
    cb: F,
    stack: Vec<Frame>,
    sides: Vec<Side>,
}

fn empty_entry() -> Entry {
    Entry {
        oct: Octant::new(0, 0, [0; 3]),
        b: 0,
        img: 0,
        lo: 0,
        hi: 0,
    }
}

/// Visit every locally relevant point with its local leaf support.
pub fn iterate<F: FnMut(&Visit)>(forest: &Forest, ghost: &GhostLayer, opts: IterOptions, cb: F) -> Result<IterStats> {
    let sp = *forest.space();
    if forest.size > 1 && ghost.k != sp.dim {
        return Err(contract("iteration needs a full codimension-d ghost layer"));
    }
    if ghost.tree_offsets.len() != forest.trees.len() + 1 {
        return Err(contract("ghost layer does not match the forest"));
    }
    let mut trees = Vec::with_capacity(forest.trees.len());
    for t in 0..forest.trees.len() {
        let loc = &forest.trees[t];
        let gh = ghost.tree_ghosts(t);
        let goff = ghost.tree_offsets[t];
        let loff = forest.tree_offset(t);
        let mut octs = Vec::with_capacity(loc.len() + gh.len());
        let mut src = Vec::with_capacity(loc.len() + gh.len());
        let (mut i, mut j) = (0, 0);
        while i < loc.len() || j < gh.len() {
            if j == gh.len() || (i < loc.len() && loc[i] < gh[j]) {
                octs.push(loc[i]);
                src.push((true, loff + i));
                i += 1;
            } else {
                octs.push(gh[j]);
                src.push((false, goff + j));
                j += 1;
            }
        }
        let mut local_prefix = Vec::with_capacity(octs.len() + 1);
        let mut acc = 0u32;
        local_prefix.push(0);
        for s in &src {
            acc += s.0 as u32;
            local_prefix.push(acc);
        }
        trees.push(TreeArr { octs, src, local_prefix });
    }
    let mut w = Walker {
        forest,
        sp,
        opts,
        trees,
        images: Vec::new(),
        cache: vec![[None; CACHE_SLOTS]; sp.lmax as usize + 1],
        cache_next: vec![0; sp.lmax as usize + 1],
        stats: IterStats::default(),
        cb,
        stack: Vec::with_capacity(27 * (sp.lmax as usize + 1)),
        sides: Vec::with_capacity(MAX_SUPP * 4),
    };
    for t in 0..forest.conn.num_trees {
        let root = Cell::from_octant(&sp, &sp.root(t));
        for c in root.closure(&sp) {
            if c.dim() < opts.min_dim {
                continue;
            }
            let c = Cell { h: root.h, ..c };
            if forest.conn.canonical(&c).oct.tree != t {
                continue;
            }
            w.root_call(c);
        }
    }
    Ok(w.stats)
}

impl<F: FnMut(&Visit)> Walker<'_, F> {
    fn root_call(&mut self, c: Cell) {
        let sp = self.sp;
        let imgs = self.forest.conn.images(&c);
        self.images = imgs.iter().map(|(im, _)| im.xform).collect();
        let mut f = Frame {
            cell: c,
            n: 0,
            entries: [empty_entry(); MAX_SUPP],
        };
        for (k, (im, mc)) in imgs.iter().enumerate() {
            let b = from_codes(sp.dim, &mc.root_codes(&sp));
            let len = self.trees[im.tree as usize].octs.len() as u32;
            f.entries[f.n as usize] = Entry {
                oct: sp.root(im.tree),
                b,
                img: k as u8,
                lo: 0,
                hi: len,
            };
            f.n += 1;
        }
        self.stack.push(f);
        while let Some(fr) = self.stack.pop() {
            self.interior(fr);
        }
    }

    fn has_local(&self, e: &Entry) -> bool {
        let p = &self.trees[e.oct.tree as usize].local_prefix;
        p[e.hi as usize] > p[e.lo as usize]
    }

    fn split(&mut self, e: &Entry) -> [u32; 9] {
        let sp = self.sp;
        let lv = e.oct.level as usize;
        if self.opts.split_cache {
            for s in self.cache[lv].iter().flatten() {
                if s.oct == e.oct && s.lo == e.lo && s.hi == e.hi {
                    self.stats.cache_hits += 1;
                    return s.k;
                }
            }
        }
        self.stats.splits += 1;
        let arr = &self.trees[e.oct.tree as usize].octs[e.lo as usize..e.hi as usize];
        let ks = split_array(&sp, arr, &e.oct);
        let mut k = [0u32; 9];
        for (i, v) in ks.iter().enumerate() {
            k[i] = e.lo + *v as u32;
        }
        if self.opts.split_cache {
            let slot = self.cache_next[lv];
            self.cache[lv][slot] = Some(CacheSlot {
                oct: e.oct,
                lo: e.lo,
                hi: e.hi,
                k,
            });
            self.cache_next[lv] = (slot + 1) % CACHE_SLOTS;
        }
        k
    }

    fn side(&self, tree: u32, idx: usize, img: u8) -> Side {
        let ta = &self.trees[tree as usize];
        let (local, index) = ta.src[idx];
        Side {
            oct: ta.octs[idx],
            local,
            index,
            xform: self.images[img as usize],
        }
    }

    fn interior(&mut self, fr: Frame) {
        self.stats.interior_calls += 1;
        let sp = self.sp;
        let n = fr.n as usize;
        if !fr.entries[..n].iter().any(|e| self.has_local(e)) {
            return;
        }
        let dim = fr.cell.dim();
        self.sides.clear();
        let mut stop = false;
        let mut splits = [[0u32; 9]; MAX_SUPP];
        if dim > 0 {
            for i in 0..n {
                let e = fr.entries[i];
                let tree = e.oct.tree;
                let is_leaf = e.hi == e.lo + 1 && self.trees[tree as usize].octs[e.lo as usize] == e.oct;
                if is_leaf {
                    stop = true;
                    let s = self.side(tree, e.lo as usize, e.img);
                    self.sides.push(s);
                    continue;
                }
                if e.lo == e.hi {
                    continue;
                }
                let k = self.split(&e);
                splits[i] = k;
                for j in 0..sp.num_children() {
                    if child_boundary(sp.dim, j) & (1 << e.b) == 0 || k[j + 1] != k[j] + 1 {
                        continue;
                    }
                    let ch = sp.child(&e.oct, j);
                    if self.trees[tree as usize].octs[k[j] as usize] == ch {
                        let s = self.side(tree, k[j] as usize, e.img);
                        self.sides.push(s);
                    }
                }
            }
        } else {
            stop = true;
            for e in &fr.entries[..n] {
                self.stats.leaf_searches += 1;
                let a = corner_atom(&sp, &e.oct, e.b);
                let ta = &self.trees[e.oct.tree as usize];
                let arr = &ta.octs[e.lo as usize..e.hi as usize];
                let pos = arr.partition_point(|x| *x <= a);
                if pos > 0 && sp.is_descendant(&a, &arr[pos - 1]) {
                    let s = self.side(e.oct.tree, e.lo as usize + pos - 1, e.img);
                    self.sides.push(s);
                }
            }
        }
        if stop {
            if dim >= self.opts.min_dim && !self.sides.is_empty() && self.is_relevant(&fr.cell) {
                self.stats.callbacks += 1;
                self.sides.sort_by(|a, b| a.oct.cmp(&b.oct));
                let v = Visit {
                    cell: fr.cell,
                    sides: &self.sides,
                };
                (self.cb)(&v);
            }
            return;
        }
        let parts = fr.cell.part(&sp);
        for e in parts.iter().rev() {
            if e.dim() < self.opts.min_dim {
                continue;
            }
            let mut nf = Frame {
                cell: *e,
                n: 0,
                entries: [empty_entry(); MAX_SUPP],
            };
            for (i, s) in fr.entries[..n].iter().enumerate() {
                let ek = e.map(&sp, s.oct.tree, &self.images[s.img as usize]);
                let hh = sp.len(s.oct.level + 1) as i64;
                let mut opts: Vec<(usize, [Code; 3])> = vec![(0, [Code::Lo; 3])];
                for j in 0..sp.d() {
                    let x = s.oct.x[j] as i64;
                    let mut next = Vec::with_capacity(opts.len() * 2);
                    for (bits, cs) in &opts {
                        if ek.spans(j) {
                            let mut c = *cs;
                            c[j] = Code::Span;
                            let bit = (ek.lo[j] >= x + hh) as usize;
                            next.push((bits | (bit << j), c));
                        } else {
                            let v = ek.lo[j];
                            if v == x || v == x + hh {
                                let mut c = *cs;
                                c[j] = Code::Lo;
                                next.push((bits | (((v == x + hh) as usize) << j), c));
                            }
                            if v == x + hh || v == x + 2 * hh {
                                let mut c = *cs;
                                c[j] = Code::Hi;
                                next.push((bits | (((v == x + 2 * hh) as usize) << j), c));
                            }
                        }
                    }
                    opts = next;
                }
                let k = &splits[i];
                for (j, cs) in opts {
                    nf.entries[nf.n as usize] = Entry {
                        oct: sp.child(&s.oct, j),
                        b: from_codes(sp.dim, &cs),
                        img: s.img,
                        lo: k[j],
                        hi: k[j + 1],
                    };
                    nf.n += 1;
                }
            }
            nf.entries[..nf.n as usize].sort_by(|a, b| a.oct.cmp(&b.oct));
            self.stack.push(nf);
        }
    }

    fn is_relevant(&self, c: &Cell) -> bool {
        if self.sides.iter().any(|s| s.local) {
            return true;
        }
        if self.opts.relevance == Relevance::Open {
            return false;
        }
        let sp = self.sp;
        let conn = &self.forest.conn;
        let p = self.forest.rank;
        let rp = self.forest.rank_range(p);
        for s in &self.sides {
            let cs = c.map(&sp, s.oct.tree, &s.xform);
            let sc = Cell::from_octant(&sp, &s.oct);
            for e in sc.boundary(&sp) {
                if e.dim() <= cs.dim() {
                    continue;
                }
                if !e.boundary(&sp).iter().any(|x| same_point(x, &cs)) {
                    continue;
                }
                for se in conn.supp(&e) {
                    let r = sp.range(&se.oct);
                    let f = r.first.max(rp.first);
                    let l = r.last.min(rp.last);
                    if f <= l && find_range_boundaries(&sp, &f, &l, &se.oct, 1 << se.b) != 0 {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Same geometric point in the same frame, ignoring the level tag of corners.
pub fn same_point(a: &Cell, b: &Cell) -> bool {
    a.tree == b.tree && a.span == b.span && a.lo == b.lo && (a.span == 0 || a.h == b.h)
}

/// Boundary index of `c` (in the leaf's frame) relative to leaf `o`, if `c` lies in its closure.
pub fn index_in(sp: &Space, o: &Octant, c: &Cell) -> Option<u8> {
    let h = sp.len(o.level) as i64;
    let mut cs = [Code::Lo; 3];
    for j in 0..sp.d() {
        let x = o.x[j] as i64;
        if c.spans(j) {
            if c.lo[j] < x || c.lo[j] + c.h > x + h {
                return None;
            }
            cs[j] = Code::Span;
        } else if c.lo[j] == x {
            cs[j] = Code::Lo;
        } else if c.lo[j] == x + h {
            cs[j] = Code::Hi;
        } else if c.lo[j] > x && c.lo[j] < x + h {
            cs[j] = Code::Span;
        } else {
            return None;
        }
    }
    Some(from_codes(sp.dim, &cs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectivity::Connectivity;
    use std::collections::BTreeSet;
    use std::sync::Arc;

    #[test]
    fn uniform_counts() {
        let sp = Space::new(2, 4).unwrap();
        let conn = Arc::new(Connectivity::unitcube(sp));
        let f = Forest::new_uniform(conn, 1, 1).unwrap().remove(0);
        let g = GhostLayer::empty(1, 1, 2);
        let mut keys = BTreeSet::new();
        let mut by_dim = [0; 3];
        iterate(&f, &g, IterOptions::default(), |v| {
            assert!(keys.insert(v.key(&f)));
            by_dim[v.dim() as usize] += 1;
        })
        .unwrap();
        assert_eq!(by_dim, [9, 12, 4]);
    }

    #[test]
    fn periodic_brick_counts() {
        let sp = Space::new(3, 4).unwrap();
        let conn = Arc::new(Connectivity::brick(sp, [2, 2, 2], [true, true, true]).unwrap());
        let f = Forest::new_uniform(conn, 1, 1).unwrap().remove(0);
        let g = GhostLayer::empty(8, 1, 3);
        let mut by_dim = [0; 4];
        iterate(&f, &g, IterOptions::default(), |v| by_dim[v.dim() as usize] += 1).unwrap();
        assert_eq!(by_dim, [64, 192, 192, 64]);
    }
}
