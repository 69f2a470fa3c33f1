//! Brute-force reference implementations used to check the library.
//!
//! Everything here works in global brick coordinates with plain interval
//! arithmetic and quadratic scans, sharing no logic with the library beyond
//! its data types.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use octforest::{Cell, Connectivity, Octant, Space};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod laws;

/// A point in global brick coordinates: per axis a fixed position or an open
/// interval `(lo, lo + h)`. Zero-dimensional points carry `h = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GCell {
    pub lo: [i64; 3],
    pub h: i64,
    pub span: u8,
}

impl GCell {
    pub fn dim(&self) -> u32 {
        self.span.count_ones()
    }

    fn spans(&self, j: usize) -> bool {
        self.span & (1 << j) != 0
    }
}

/// Geometry of a brick connectivity.
#[derive(Clone, Copy, Debug)]
pub struct Geom {
    pub d: usize,
    pub lmax: u8,
    pub len: i64,
    pub dims: [u32; 3],
    pub periodic: [bool; 3],
}

impl Geom {
    pub fn of(conn: &Connectivity) -> Geom {
        let b = conn.brick.expect("oracles need a brick connectivity");
        Geom {
            d: conn.space.d(),
            lmax: conn.space.lmax,
            len: 1i64 << conn.space.lmax,
            dims: b.dims,
            periodic: b.periodic,
        }
    }

    pub fn period(&self, j: usize) -> i64 {
        self.dims[j] as i64 * self.len
    }

    fn tree_origin(&self, t: u32) -> [i64; 3] {
        let p = [
            t % self.dims[0],
            (t / self.dims[0]) % self.dims[1],
            t / (self.dims[0] * self.dims[1]),
        ];
        [
            p[0] as i64 * self.len,
            p[1] as i64 * self.len,
            p[2] as i64 * self.len,
        ]
    }

    fn wrap(&self, mut c: GCell) -> GCell {
        for j in 0..self.d {
            if self.periodic[j] {
                c.lo[j] = c.lo[j].rem_euclid(self.period(j));
            }
        }
        if c.span == 0 {
            c.h = 0;
        }
        c
    }

    pub fn leaf(&self, o: &Octant) -> GCell {
        let org = self.tree_origin(o.tree);
        let mut lo = [0; 3];
        for j in 0..self.d {
            lo[j] = org[j] + o.x[j] as i64;
        }
        GCell {
            lo,
            h: 1i64 << (self.lmax - o.level),
            span: (1 << self.d) - 1,
        }
    }

    /// A library cell expressed in global coordinates.
    pub fn cell(&self, c: &Cell) -> GCell {
        let org = self.tree_origin(c.tree);
        let mut lo = [0; 3];
        for j in 0..self.d {
            lo[j] = org[j] + c.lo[j];
        }
        self.wrap(GCell { lo, h: c.h, span: c.span })
    }

    /// The `3^dim` points making up the closure of `c`.
    pub fn closure(&self, c: &GCell) -> Vec<GCell> {
        let mut out = vec![*c];
        for j in 0..self.d {
            if !c.spans(j) {
                continue;
            }
            let mut next = Vec::new();
            for x in &out {
                next.push(*x);
                let mut a = *x;
                a.span &= !(1 << j);
                next.push(a);
                let mut b = a;
                b.lo[j] += c.h;
                next.push(b);
            }
            out = next;
        }
        out.into_iter().map(|x| self.wrap(GCell { h: c.h, ..x })).collect()
    }

    /// Shifts by whole periods that may bring `b` next to `a` along axis `j`.
    fn shifts(&self, j: usize) -> impl Iterator<Item = i64> {
        let p = self.period(j);
        let n = if self.periodic[j] { 3 } else { 1 };
        [0, -p, p].into_iter().take(n)
    }

    /// Does the open domain of `c` meet the closed box `x` (in some periodic copy)?
    pub fn open_meets_closed(&self, c: &GCell, x: &GCell) -> bool {
        (0..self.d).all(|j| {
            self.shifts(j).into_iter().any(|s| {
                let (x0, x1) = if x.spans(j) { (x.lo[j], x.lo[j] + x.h) } else { (x.lo[j], x.lo[j]) };
                let c0 = c.lo[j] + s;
                if c.spans(j) {
                    c0 < x1 && x0 < c0 + c.h
                } else {
                    x0 <= c0 && c0 <= x1
                }
            })
        })
    }

    /// Is the open domain of `c` a proper subset of the open domain of `x`?
    pub fn strictly_inside(&self, c: &GCell, x: &GCell) -> bool {
        if c == x {
            return false;
        }
        (0..self.d).all(|j| {
            self.shifts(j).into_iter().any(|s| {
                let c0 = c.lo[j] + s;
                match (c.spans(j), x.spans(j)) {
                    (_, false) => !c.spans(j) && c0 == x.lo[j],
                    (true, true) => x.lo[j] <= c0 && c0 + c.h <= x.lo[j] + x.h,
                    (false, true) => x.lo[j] < c0 && c0 < x.lo[j] + x.h,
                }
            })
        })
    }

    /// Largest dimension of the intersection of two closed boxes, if they meet.
    pub fn contact_dim(&self, a: &GCell, b: &GCell) -> Option<usize> {
        let mut dim = 0;
        for j in 0..self.d {
            let mut best: Option<usize> = None;
            for s in self.shifts(j) {
                let lo = a.lo[j].max(b.lo[j] + s);
                let hi = (a.lo[j] + a.h).min(b.lo[j] + s + b.h);
                if lo < hi {
                    best = Some(1);
                } else if lo == hi && best.is_none() {
                    best = Some(0);
                }
            }
            dim += best?;
        }
        Some(dim)
    }
}

/// `P_Ω`: every leaf closure point that is not strictly inside another leaf closure point.
pub fn partition(g: &Geom, leaves: &[Octant]) -> BTreeSet<GCell> {
    let boxes: Vec<GCell> = leaves.iter().map(|o| g.leaf(o)).collect();
    let mut cand = BTreeSet::new();
    for b in &boxes {
        cand.extend(g.closure(b));
    }
    let pts: Vec<Vec<GCell>> = boxes.iter().map(|b| g.closure(b)).collect();
    cand.into_iter()
        .filter(|c| {
            !boxes
                .iter()
                .zip(&pts)
                .any(|(b, cl)| g.open_meets_closed(c, b) && cl.iter().any(|x| g.strictly_inside(c, x)))
        })
        .collect()
}

/// `leafsupp(c)`: indices of the leaves whose closed domain meets the open domain of `c`.
pub fn leaf_support(g: &Geom, leaves: &[Octant], c: &GCell) -> Vec<usize> {
    (0..leaves.len()).filter(|&i| g.open_meets_closed(c, &g.leaf(&leaves[i]))).collect()
}

/// Owner rank of every leaf of a globally sorted array split into consecutive blocks.
pub fn owners(counts: &[usize]) -> Vec<usize> {
    counts.iter().enumerate().flat_map(|(q, &n)| std::iter::repeat(q).take(n)).collect()
}

/// `P_p` for every rank.
pub fn relevant(g: &Geom, leaves: &[Octant], part: &BTreeSet<GCell>, owner: &[usize], nranks: usize) -> Vec<BTreeSet<GCell>> {
    let mut out = vec![BTreeSet::new(); nranks];
    for c in part {
        for i in leaf_support(g, leaves, c) {
            out[owner[i]].insert(*c);
        }
    }
    out
}

/// `P̄_p`: closures of the points of `P_p`, restricted to `P_Ω`.
pub fn closed_relevant(g: &Geom, open: &[BTreeSet<GCell>], part: &BTreeSet<GCell>) -> Vec<BTreeSet<GCell>> {
    open.iter()
        .into_iter()
        .map(|set| {
            let mut s = BTreeSet::new();
            for c in set {
                for x in g.closure(c) {
                    if part.contains(&x) {
                        s.insert(x);
                    }
                }
            }
            s
        })
        .collect()
}

/// Ghost layer of every rank: remote leaves whose closure meets a local leaf closure
/// in a set of dimension at least `d - k`.
pub fn ghosts(g: &Geom, leaves: &[Octant], owner: &[usize], nranks: usize, k: usize) -> Vec<BTreeSet<Octant>> {
    let boxes: Vec<GCell> = leaves.iter().map(|o| g.leaf(o)).collect();
    let mut out = vec![BTreeSet::new(); nranks];
    for i in 0..leaves.len() {
        for j in 0..leaves.len() {
            if owner[i] == owner[j] {
                continue;
            }
            if let Some(dim) = g.contact_dim(&boxes[i], &boxes[j]) {
                if dim + k >= g.d {
                    out[owner[j]].insert(leaves[i]);
                }
            }
        }
    }
    out
}

/// Largest level difference between two touching leaves.
pub fn max_level_jump(g: &Geom, leaves: &[Octant]) -> u8 {
    let boxes: Vec<GCell> = leaves.iter().map(|o| g.leaf(o)).collect();
    let mut m = 0;
    for i in 0..leaves.len() {
        for j in 0..leaves.len() {
            if g.contact_dim(&boxes[i], &boxes[j]).is_some() {
                m = m.max(leaves[i].level.abs_diff(leaves[j].level));
            }
        }
    }
    m
}

/// Refine until touching leaves differ by at most one level.
pub fn balance(g: &Geom, sp: &Space, leaves: &[Octant]) -> Vec<Octant> {
    let mut cur: Vec<Octant> = leaves.to_vec();
    loop {
        let boxes: Vec<GCell> = cur.iter().map(|o| g.leaf(o)).collect();
        let mut split = vec![false; cur.len()];
        for i in 0..cur.len() {
            for j in 0..cur.len() {
                if cur[j].level >= cur[i].level + 2 && g.contact_dim(&boxes[i], &boxes[j]).is_some() {
                    split[i] = true;
                }
            }
        }
        if !split.iter().any(|&s| s) {
            cur.sort();
            return cur;
        }
        cur = cur
            .iter()
            .zip(&split)
            .flat_map(|(o, &s)| if s { sp.children(o) } else { vec![*o] })
            .collect();
    }
}

/// Node identity under continuity: the position a leaf's lattice node `k` is glued to.
///
/// Positions are scaled by `n` so that every lattice point is integral. Nodes on hanging
/// entities take the position of the same lattice index in the parent.
pub fn node_positions(g: &Geom, sp: &Space, leaves: &[Octant], n: i64) -> Vec<Vec<GCell>> {
    let part = partition(g, leaves);
    let npe = (n + 1) as usize;
    let per = npe.pow(g.d as u32);
    let lattice = |o: &Octant, k: usize| {
        let b = g.leaf(o);
        let mut lo = [0i64; 3];
        let mut r = k;
        for j in 0..g.d {
            lo[j] = n * b.lo[j] + (r % npe) as i64 * b.h;
            r /= npe;
        }
        lo
    };
    let entity = |o: &Octant, k: usize| {
        let b = g.leaf(o);
        let mut c = GCell { lo: b.lo, h: b.h, span: 0 };
        let mut r = k;
        for j in 0..g.d {
            let i = r % npe;
            r /= npe;
            if i == 0 {
            } else if i == npe - 1 {
                c.lo[j] += b.h;
            } else {
                c.span |= 1 << j;
            }
        }
        g.wrap(c)
    };
    leaves
        .iter()
        .map(|o| {
            (0..per)
                .map(|k| {
                    let src = if part.contains(&entity(o, k)) { *o } else { sp.parent(o) };
                    let mut p = GCell {
                        lo: lattice(&src, k),
                        h: 0,
                        span: 0,
                    };
                    for j in 0..g.d {
                        if g.periodic[j] {
                            p.lo[j] = p.lo[j].rem_euclid(n * g.period(j));
                        }
                    }
                    p
                })
                .collect()
        })
        .collect()
}

/// Number of nodes an order-`n` continuous discretisation must have.
pub fn node_count(g: &Geom, leaves: &[Octant], n: i64) -> u64 {
    partition(g, leaves).iter().map(|c| ((n - 1) as u64).pow(c.dim())).sum()
}

/// For order-2 nodes, which leaves reference the node at each glued position.
pub fn references(pos: &[Vec<GCell>]) -> BTreeMap<GCell, BTreeSet<usize>> {
    let mut out: BTreeMap<GCell, BTreeSet<usize>> = BTreeMap::new();
    for (i, ps) in pos.iter().enumerate() {
        for p in ps {
            out.entry(*p).or_default().insert(i);
        }
    }
    out
}

/// Leaves that reference point `c` through a hanging node without touching it.
///
/// `refs` comes from [`references`] over order-2 positions, where every point carries
/// exactly one node, at its centre.
pub fn remote_leaves(g: &Geom, leaves: &[Octant], refs: &BTreeMap<GCell, BTreeSet<usize>>, c: &GCell) -> BTreeSet<Octant> {
    let mut centre = GCell { lo: [0; 3], h: 0, span: 0 };
    for j in 0..g.d {
        centre.lo[j] = 2 * c.lo[j] + if c.spans(j) { c.h } else { 0 };
        if g.periodic[j] {
            centre.lo[j] = centre.lo[j].rem_euclid(2 * g.period(j));
        }
    }
    refs.get(&centre)
        .into_iter()
        .flatten()
        .filter(|&&i| !g.open_meets_closed(c, &g.leaf(&leaves[i])))
        .map(|&i| leaves[i])
        .collect()
}

/// Parameters for random forests.
#[derive(Clone, Copy, Debug)]
pub struct Recipe {
    pub dim: u8,
    pub lmax: u8,
    pub dims: [u32; 3],
    pub periodic: [bool; 3],
    /// Chance of refining a leaf, per level.
    pub refine: f64,
    pub balanced: bool,
}

impl Recipe {
    pub fn conn(&self) -> Arc<Connectivity> {
        let sp = Space::new(self.dim, self.lmax).unwrap();
        Arc::new(Connectivity::brick(sp, self.dims, self.periodic).unwrap())
    }
}

/// A seeded random forest as a globally sorted leaf array.
pub fn random_leaves(r: &Recipe, seed: u64) -> Vec<Octant> {
    let sp = Space::new(r.dim, r.lmax).unwrap();
    let conn = r.conn();
    let g = Geom::of(&conn);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut stack: Vec<Octant> = (0..conn.num_trees).rev().map(|t| sp.root(t)).collect();
    while let Some(o) = stack.pop() {
        let p = r.refine * (1.0 - o.level as f64 / (r.lmax as f64 + 1.0));
        if o.level < r.lmax && rng.gen_bool(p.clamp(0.0, 1.0)) {
            let mut ch = sp.children(&o);
            ch.reverse();
            stack.extend(ch);
        } else {
            out.push(o);
        }
    }
    if r.balanced {
        out = balance(&g, &sp, &out);
    }
    out.sort();
    out
}

/// Random recipe within the given bounds.
pub fn random_recipe(rng: &mut impl Rng, dim: u8, lmax: u8, balanced: bool) -> Recipe {
    let mut dims = [1, 1, 1];
    let mut periodic = [false; 3];
    for j in 0..dim as usize {
        dims[j] = rng.gen_range(1..=2);
        periodic[j] = dims[j] > 1 && rng.gen_bool(0.5);
    }
    Recipe {
        dim,
        lmax,
        dims,
        periodic,
        refine: rng.gen_range(0.25..0.75),
        balanced,
    }
}

/// Leaves of a globally sorted array keyed by their global cell.
pub fn index_by_cell(g: &Geom, leaves: &[Octant]) -> BTreeMap<GCell, usize> {
    leaves.iter().enumerate().map(|(i, o)| (g.leaf(o), i)).collect()
}

/// Every octant of tree `t`, coarse to fine, in row order per level.
pub fn all_octants(sp: &Space, t: u32) -> Vec<Octant> {
    let mut out = Vec::new();
    for l in 0..=sp.lmax {
        let n = 1u64 << l;
        let h = sp.len(l);
        let nz = if sp.dim == 3 { n } else { 1 };
        for z in 0..nz {
            for y in 0..n {
                for x in 0..n {
                    out.push(Octant::new(t, l, [x * h, y * h, z * h]));
                }
            }
        }
    }
    out
}

/// Morton index of the lower corner by explicit bit interleaving.
pub fn interleave(sp: &Space, o: &Octant) -> u128 {
    let mut m = 0u128;
    for bit in 0..sp.lmax as usize {
        for j in 0..sp.d() {
            m |= (((o.x[j] >> bit) & 1) as u128) << (bit * sp.d() + j);
        }
    }
    m
}

/// Reference order key: tree, interleaved lower corner, level.
pub fn order_key(sp: &Space, o: &Octant) -> (u32, u128, u8) {
    (o.tree, interleave(sp, o), o.level)
}

/// Whether `x` lies inside `a` geometrically, by coordinates.
pub fn inside(sp: &Space, x: &Octant, a: &Octant) -> bool {
    let (hx, ha) = (sp.len(x.level), sp.len(a.level));
    x.tree == a.tree && x.level >= a.level && (0..sp.d()).all(|j| a.x[j] <= x.x[j] && x.x[j] + hx <= a.x[j] + ha)
}

/// Atoms of `o` sorted by the reference order.
pub fn atoms_of(sp: &Space, o: &Octant) -> Vec<Octant> {
    let mut v: Vec<Octant> = all_octants(sp, o.tree).into_iter().filter(|a| a.level == sp.lmax && inside(sp, a, o)).collect();
    v.sort_by_key(|a| order_key(sp, a));
    v
}

/// Whether the open domain of boundary entity `b` of `s` meets the closed unit box at `a`.
fn entity_meets_atom(sp: &Space, s: &Octant, b: u8, a: &Octant) -> bool {
    let h = sp.len(s.level) as i64;
    let c = octforest::point::codes(sp.dim, b);
    (0..sp.d()).all(|j| {
        let (lo, x) = (s.x[j] as i64, a.x[j] as i64);
        match c[j] {
            octforest::Code::Span => x + 1 > lo && x < lo + h,
            octforest::Code::Lo => x <= lo && lo <= x + 1,
            octforest::Code::Hi => x <= lo + h && lo + h <= x + 1,
        }
    })
}

/// Queried boundary entities of `s` touched by the closed atoms in `atoms`.
pub fn range_boundaries(sp: &Space, atoms: &[Octant], s: &Octant, query: u32) -> u32 {
    let mut m = 0;
    for b in 0..32u8 {
        if query & (1 << b) != 0 && atoms.iter().any(|a| entity_meets_atom(sp, s, b, a)) {
            m |= 1 << b;
        }
    }
    m
}

/// Boundary entities of `s` touched by the closure of child `i`, by coordinates.
pub fn child_touch(sp: &Space, s: &Octant, i: usize) -> u32 {
    let ch = sp.child(s, i);
    range_boundaries(sp, &atoms_of(sp, &ch), s, (1 << octforest::point::num_boundary(sp.dim)) - 1)
}

/// Slice bounds of a sorted descendant array by a linear scan over child indices.
pub fn linear_split(sp: &Space, arr: &[Octant], a: &Octant) -> Vec<usize> {
    let n = sp.num_children();
    let mut k = vec![0; n + 1];
    for i in 0..n {
        let c = sp.child(a, i);
        k[i + 1] = k[i] + arr.iter().filter(|x| inside(sp, x, &c)).count();
    }
    k
}

/// A random sorted array of strict, non-overlapping descendants of `a`.
pub fn random_descendants(rng: &mut impl Rng, sp: &Space, a: &Octant) -> Vec<Octant> {
    let mut out = Vec::new();
    let mut stack = vec![*a];
    while let Some(o) = stack.pop() {
        if o.level < sp.lmax && (o == *a || rng.gen_bool(0.5)) {
            stack.extend(sp.children(&o));
        } else if rng.gen_bool(0.7) {
            out.push(o);
        }
    }
    out.sort_by_key(|o| order_key(sp, o));
    out
}

/// A seeded random forest with at least one touching pair more than one level apart.
pub fn unbalanced_leaves(r: &Recipe, seed: u64) -> Vec<Octant> {
    let sp = Space::new(r.dim, r.lmax).unwrap();
    let g = Geom::of(&r.conn());
    let mut out = random_leaves(r, seed);
    if max_level_jump(&g, &out) < 2 {
        let i = (0..out.len()).min_by_key(|&i| (out[i].level, i)).unwrap();
        let mut o = out.remove(i);
        while o.level < sp.lmax {
            let ch = sp.children(&o);
            out.extend_from_slice(&ch[1..]);
            o = ch[0];
        }
        out.push(o);
        out.sort();
    }
    out
}
