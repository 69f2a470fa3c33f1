use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::forest::Forest;
use crate::octant::{Octant, Space};
use crate::point::{child_boundary, from_codes, volume, BMask, Cell, Code};
use crate::transport::Comm;

/// `B∩(f, l, s) ∩ query`: the queried boundary entities of `s` whose open domains
/// meet the closed union of the atoms in `[f, l]`. The volume index is always met.
pub fn find_range_boundaries(sp: &Space, f: &Octant, l: &Octant, s: &Octant, query: BMask) -> BMask {
    let v = query & (1 << volume(sp.dim));
    v | range_boundaries(sp, f, l, s, query & !v)
}

/// [`find_range_boundaries`] with its preconditions checked.
pub fn checked_find_range_boundaries(sp: &Space, f: &Octant, l: &Octant, s: &Octant, query: BMask) -> Result<BMask> {
    let atom = |a: &Octant| a.level == sp.lmax && sp.is_valid(a) && sp.is_descendant(a, s);
    if !atom(f) || !atom(l) || f > l {
        return Err(contract("range is not an ordered pair of atoms inside the octant"));
    }
    if query >> (volume(sp.dim) + 1) != 0 {
        return Err(contract("query mask holds an unknown boundary index"));
    }
    Ok(find_range_boundaries(sp, f, l, s, query))
}

fn range_boundaries(sp: &Space, f: &Octant, l: &Octant, s: &Octant, query: BMask) -> BMask {
    let mut f = *f;
    let l = *l;
    let mut s = *s;
    let mut query = query;
    let mut acc: BMask = 0;
    loop {
        if query == 0 || s.level == sp.lmax {
            return acc | query;
        }
        let lv = s.level + 1;
        let j = sp.ancestor_id(&f, lv);
        let k = sp.ancestor_id(&l, lv);
        if j == k {
            query &= child_boundary(sp.dim, j);
            s = sp.child(&s, j);
            continue;
        }
        let mut matched: BMask = 0;
        for i in j + 1..k {
            matched |= query & child_boundary(sp.dim, i);
        }
        let cj = sp.child(&s, j);
        let ck = sp.child(&s, k);
        let mut mj = (query & child_boundary(sp.dim, j)) & !matched;
        if f != sp.first_atom(&cj) {
            mj = range_boundaries(sp, &f, &sp.last_atom(&cj), &cj, mj);
        }
        let mk = ((query & child_boundary(sp.dim, k)) & !matched) & !mj;
        acc |= matched | mj;
        if l == sp.last_atom(&ck) {
            return acc | mk;
        }
        f = sp.first_atom(&ck);
        s = ck;
        query = mk;
    }
}

/// Remote leaves whose closure meets this rank's closed subdomain.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GhostLayer {
    pub k: u8,
    pub ghosts: Vec<Octant>,
    pub owners: Vec<usize>,
    /// Index of the first ghost of each tree, plus the total.
    pub tree_offsets: Vec<usize>,
    /// For every rank, the local leaf indices sent to it, in order.
    pub mirrors: Vec<Vec<usize>>,
}

impl GhostLayer {
    pub fn empty(num_trees: usize, size: usize, k: u8) -> Self {
        GhostLayer {
            k,
            ghosts: Vec::new(),
            owners: Vec::new(),
            tree_offsets: vec![0; num_trees + 1],
            mirrors: vec![Vec::new(); size],
        }
    }

    pub fn len(&self) -> usize {
        self.ghosts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ghosts.is_empty()
    }

    pub fn tree_ghosts(&self, t: usize) -> &[Octant] {
        &self.ghosts[self.tree_offsets[t]..self.tree_offsets[t + 1]]
    }

    pub fn index_of(&self, o: &Octant) -> Option<usize> {
        self.ghosts.binary_search(o).ok()
    }
}

/// Options for ghost construction.
#[derive(Clone, Copy, Debug)]
pub struct GhostOptions {
    pub insulation: bool,
}

impl Default for GhostOptions {
    fn default() -> Self {
        GhostOptions { insulation: true }
    }
}

fn insulated(forest: &Forest, o: &Octant) -> bool {
    let sp = forest.space();
    if o.level == 0 {
        return false;
    }
    let h = sp.len(o.level);
    let l = sp.root_len();
    let mut cs = [Code::Span; 3];
    let mut lo = *o;
    lo.level = sp.lmax;
    let mut hi = lo;
    for j in 0..sp.d() {
        if o.x[j] == 0 {
            cs[j] = Code::Lo;
        } else if o.x[j] + h == l {
            cs[j] = Code::Hi;
        }
        lo.x[j] = o.x[j].saturating_sub(h);
        hi.x[j] = (o.x[j] + 2 * h).min(l) - 1;
    }
    let b = from_codes(sp.dim, &cs);
    if b != volume(sp.dim) && !forest.conn.neighbors(o.tree, b).is_empty() {
        return false;
    }
    let p = forest.rank;
    forest.first_atoms[p] <= lo && hi < forest.first_atoms[p + 1]
}

/// The ranks `q != p` whose layer `G_{p->q}^k` contains local leaf `o`.
pub fn add_ghost(forest: &Forest, o: &Octant, k: u8, opts: GhostOptions) -> BTreeSet<usize> {
    let sp = *forest.space();
    let p = forest.rank;
    let mut out = BTreeSet::new();
    if forest.size == 1 || (opts.insulation && insulated(forest, o)) {
        return out;
    }
    let cell = Cell::from_octant(&sp, o);
    for c in cell.boundary(&sp) {
        let cd = c.dim();
        if cd + k < sp.dim {
            continue;
        }
        if cd == 0 {
            for a in forest.conn.atom_supp(&c) {
                let q = forest.locate(&a.oct);
                if q != p {
                    out.insert(q);
                }
            }
            continue;
        }
        for e in forest.conn.supp(&c) {
            if e.oct == *o {
                continue;
            }
            let r = sp.range(&e.oct);
            let (qf, ql) = (forest.locate(&r.first), forest.locate(&r.last));
            for q in qf..=ql {
                if q == p || out.contains(&q) {
                    continue;
                }
                let rq = forest.rank_range(q);
                let f = r.first.max(rq.first);
                let l = r.last.min(rq.last);
                if f > l {
                    continue;
                }
                if find_range_boundaries(&sp, &f, &l, &e.oct, 1 << e.b) != 0 {
                    out.insert(q);
                }
            }
        }
    }
    out
}

/// Collective: build this rank's codimension-`k` ghost layer.
pub fn build_ghost(forest: &Forest, comm: &Comm, k: u8) -> Result<GhostLayer> {
    build_ghost_with(forest, comm, k, GhostOptions::default())
}

pub fn build_ghost_with(forest: &Forest, comm: &Comm, k: u8, opts: GhostOptions) -> Result<GhostLayer> {
    let sp = forest.space();
    if k == 0 || k > sp.dim {
        return Err(contract(format!("codimension {k} outside 1..={}", sp.dim)));
    }
    let size = forest.size;
    let me = forest.rank;
    let mut mirrors = vec![Vec::new(); size];
    for (j, o) in forest.leaves().enumerate() {
        for q in add_ghost(forest, o, k, opts) {
            mirrors[q].push(j);
        }
    }
    for (q, m) in mirrors.iter().enumerate() {
        if q == me {
            continue;
        }
        comm.send_words(q, &[m.len() as u64])?;
        if !m.is_empty() {
            let w: Vec<u64> = m.iter().flat_map(|&j| forest.leaf(j).to_words()).collect();
            comm.send_words(q, &w)?;
        }
    }
    let mut ghosts = Vec::new();
    let mut owners = Vec::new();
    for q in 0..size {
        if q == me {
            continue;
        }
        let n = comm.recv_words(q)?[0] as usize;
        if n > 0 {
            let w = comm.recv_words(q)?;
            if w.len() != 5 * n {
                return Err(crate::error::Error::Decode("ghost record count mismatch".into()));
            }
            ghosts.extend(w.chunks_exact(5).map(Octant::from_words));
            owners.extend(std::iter::repeat(q).take(n));
        }
    }
    let nt = forest.conn.num_trees as usize;
    let tree_offsets = (0..=nt).map(|t| ghosts.partition_point(|g: &Octant| (g.tree as usize) < t)).collect();
    debug_assert!(ghosts.windows(2).all(|w| w[0] < w[1]));
    Ok(GhostLayer {
        k,
        ghosts,
        owners,
        tree_offsets,
        mirrors,
    })
}

/// Collective: deliver `width` words per local leaf to every rank holding it as a ghost.
pub fn exchange_ghost_data(forest: &Forest, ghost: &GhostLayer, comm: &Comm, width: usize, payload: &[u64]) -> Result<Vec<u64>> {
    if payload.len() != forest.num_local() * width {
        return Err(contract("payload size does not match the local leaf count"));
    }
    let me = forest.rank;
    for (q, m) in ghost.mirrors.iter().enumerate() {
        if q != me && !m.is_empty() {
            let w: Vec<u64> = m.iter().flat_map(|&j| payload[j * width..(j + 1) * width].iter().copied()).collect();
            comm.send_words(q, &w)?;
        }
    }
    let mut out = Vec::with_capacity(ghost.len() * width);
    let mut i = 0;
    while i < ghost.len() {
        let q = ghost.owners[i];
        let n = ghost.owners[i..].iter().take_while(|&&x| x == q).count();
        let w = comm.recv_words(q)?;
        if w.len() != n * width {
            return Err(contract("ghost payload size mismatch"));
        }
        out.extend(w);
        i += n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point::{corner, face};

    #[test]
    fn range_boundaries_examples() {
        let sp = Space::new(2, 2).unwrap();
        let root = sp.root(0);
        let c3 = sp.child(&root, 3);
        let r = sp.range(&c3);
        let full = crate::point::full_mask(2);
        let want = (1 << corner(2, 3)) | (1 << face(1)) | (1 << face(3));
        assert_eq!(find_range_boundaries(&sp, &r.first, &r.last, &root, full), want);
        assert_eq!(find_range_boundaries(&sp, &r.first, &r.last, &root, 0), 0);
        let r = sp.range(&root);
        assert_eq!(find_range_boundaries(&sp, &r.first, &r.last, &root, full), full);
        assert!(checked_find_range_boundaries(&sp, &r.last, &r.first, &root, full).is_err());
        assert!(checked_find_range_boundaries(&sp, &root, &r.last, &root, full).is_err());
    }
}
