use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::connectivity::{Connectivity, Xform};
use crate::error::{contract, Error, Result};
use crate::forest::Forest;
use crate::ghost::GhostLayer;
use crate::iterate::{iterate, same_point, IterOptions, Relevance, Side};
use crate::octant::{Octant, Space};
use crate::point::{Cell, PointKey};
use crate::transport::Comm;

/// Identity of a node: the point carrying it and its lexicographic slot within that point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeKey {
    pub point: PointKey,
    pub slot: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalNode {
    pub index: u64,
    pub owner: usize,
    /// Every rank referencing the node, owner included, ascending.
    pub sharers: Vec<usize>,
}

/// Continuous node numbering for one rank.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Lnodes {
    pub order: u8,
    pub rank: usize,
    /// Nodes referenced on this rank, sorted by global index.
    pub nodes: Vec<GlobalNode>,
    pub keys: Vec<NodeKey>,
    /// Element-node table, `(order + 1)^d` entries per local leaf, indexing `nodes`.
    pub elements: Vec<usize>,
    pub per_element: usize,
    pub owned: usize,
    pub global_offset: u64,
    pub global_count: u64,
}

impl Lnodes {
    pub fn nodes_per_element(&self) -> usize {
        self.per_element
    }

    /// Positions in `nodes` of the element nodes of local leaf `j`.
    pub fn element(&self, j: usize) -> &[usize] {
        &self.elements[j * self.per_element..(j + 1) * self.per_element]
    }

    pub fn global_index(&self, j: usize, k: usize) -> u64 {
        self.nodes[self.element(j)[k]].index
    }

    /// Nodes shared with rank `q`, by position in `nodes`.
    pub fn shared_nodes(&self, q: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| q != self.rank && self.nodes[i].sharers.contains(&q) && (self.nodes[i].owner == self.rank || self.nodes[i].owner == q))
            .collect()
    }
}

fn pow(b: usize, e: u8) -> usize {
    b.pow(e as u32)
}

/// Rank owning the node records of point `c`: the rank of the first leaf touching it.
pub fn determine_owner_process(forest: &Forest, c: &Cell) -> usize {
    let sp = forest.space();
    let conn = &forest.conn;
    if c.dim() > 0 && c.h == 1 {
        return conn.supp(c).iter().map(|e| forest.locate(&sp.first_atom(&e.oct))).min().unwrap_or(0);
    }
    let mut e = *c;
    for j in 0..sp.d() {
        if c.spans(j) {
            e.lo[j] += c.h / 2;
        }
    }
    e.span = 0;
    let e = e.normalized(sp);
    conn.atom_supp(&e).iter().map(|a| forest.locate(&a.oct)).min().unwrap_or(0)
}

/// Leaves that reference `c` without touching it, reconstructed from its complete leaf support.
pub fn reconstruct_remote(conn: &Connectivity, c: &Cell, sides: &[Side]) -> BTreeSet<Octant> {
    let sp = conn.space;
    let mut out = BTreeSet::new();
    for s in sides {
        let cs = c.map(&sp, s.oct.tree, &s.xform);
        let sc = Cell::from_octant(&sp, &s.oct);
        for e in sc.boundary(&sp) {
            if e.h < 2 || e.dim() <= cs.dim() || !e.boundary(&sp).iter().any(|x| same_point(x, &cs)) {
                continue;
            }
            for ch in e.children(&sp) {
                for se in conn.supp(&ch) {
                    if !sides.iter().any(|l| sp.is_descendant(&se.oct, &l.oct)) {
                        out.insert(se.oct);
                    }
                }
            }
        }
    }
    out
}

struct Frame {
    key: PointKey,
    xf: Xform,
    cell: Cell,
}

fn frame_of(conn: &Connectivity, c: &Cell) -> Frame {
    let sp = conn.space;
    let key = conn.canonical(c);
    let xf = conn
        .images(c)
        .into_iter()
        .find(|(im, _)| im.tree == key.oct.tree)
        .map(|(im, _)| im.xform)
        .expect("canonical octant lies in an image frame");
    Frame {
        key,
        xf,
        cell: Cell::from_point(&sp, &key.point()),
    }
}

fn slot_of(sp: &Space, k: &Cell, p: &[i64; 3], n: i64) -> Option<u32> {
    let mut slot = 0i64;
    let mut mult = 1i64;
    for j in 0..sp.d() {
        if k.spans(j) {
            let q = p[j] - n * k.lo[j];
            if q % k.h != 0 {
                return None;
            }
            let s = q / k.h;
            if s < 1 || s > n - 1 {
                return None;
            }
            slot += (s - 1) * mult;
            mult *= n - 1;
        } else if p[j] != n * k.lo[j] {
            return None;
        }
    }
    Some(slot as u32)
}

fn in_closed(sp: &Space, c: &Cell, p: &[i64; 3], n: i64) -> bool {
    (0..sp.d()).all(|j| {
        if c.spans(j) {
            n * c.lo[j] <= p[j] && p[j] <= n * (c.lo[j] + c.h)
        } else {
            p[j] == n * c.lo[j]
        }
    })
}

fn containing(sp: &Space, c: &Cell, p: &[i64; 3], n: i64) -> Cell {
    let mut x = *c;
    for j in 0..sp.d() {
        if c.spans(j) && (p[j] == n * c.lo[j] || p[j] == n * (c.lo[j] + c.h)) {
            x.span &= !(1 << j);
            x.lo[j] = p[j] / n;
        }
    }
    x.normalized(sp)
}

struct Record {
    key: NodeKey,
    owner: usize,
    leaf: usize,
    sharers: Vec<usize>,
}

struct Builder<'a> {
    forest: &'a Forest,
    ghost: &'a GhostLayer,
    n: i64,
    records: Vec<Record>,
    index: HashMap<NodeKey, usize>,
    pending: HashMap<NodeKey, Vec<usize>>,
    elements: Vec<usize>,
    err: Option<Error>,
}

impl Builder<'_> {
    fn set(&mut self, e: usize, key: NodeKey) {
        match self.index.get(&key) {
            Some(&g) => self.elements[e] = g,
            None => self.pending.entry(key).or_default().push(e),
        }
    }

    fn rank_of(&self, s: &Side) -> usize {
        if s.local {
            self.forest.rank
        } else {
            self.ghost.owners[s.index]
        }
    }

    fn visit(&mut self, vc: &Cell, sides: &[Side]) {
        let forest = self.forest;
        let sp = *forest.space();
        let conn = &*forest.conn;
        let n = self.n;
        let nl = n * sp.root_len() as i64;
        let npe = (n + 1) as usize;
        let per = pow(npe, sp.dim);
        let dim = vc.dim();
        let fr = frame_of(conn, vc);
        let owner = determine_owner_process(forest, vc);
        let mut leaf = usize::MAX;
        let mut sharers = Vec::new();
        if owner == forest.rank {
            let first = sides.iter().min_by(|a, b| a.oct.cmp(&b.oct)).expect("visited points have support");
            if !first.local {
                self.err = Some(contract("owned point whose first support leaf is not local"));
                return;
            }
            leaf = first.index;
            let mut rs: BTreeSet<usize> = sides.iter().map(|s| self.rank_of(s)).collect();
            for o in reconstruct_remote(conn, vc, sides) {
                rs.insert(forest.locate(&sp.first_atom(&o)));
            }
            rs.insert(owner);
            sharers = rs.into_iter().collect();
        }
        let mut slots = vec![[0i64; 3]];
        for j in 0..sp.d() {
            if vc.spans(j) {
                let mut next = Vec::new();
                for s in 1..n {
                    for p in &slots {
                        let mut q = *p;
                        q[j] = n * vc.lo[j] + s * vc.h;
                        next.push(q);
                    }
                }
                slots = next;
            } else {
                for p in slots.iter_mut() {
                    p[j] = n * vc.lo[j];
                }
            }
        }
        let mut slot_keys = Vec::with_capacity(slots.len());
        for p in &slots {
            let slot = slot_of(&sp, &fr.cell, &fr.xf.apply(p, nl), n).expect("slot position lies on the point");
            let key = NodeKey { point: fr.key, slot };
            slot_keys.push(key);
        }
        let mut order: Vec<usize> = (0..slot_keys.len()).collect();
        order.sort_by_key(|&i| slot_keys[i].slot);
        for &i in &order {
            let key = slot_keys[i];
            if self.index.contains_key(&key) {
                continue;
            }
            let g = self.records.len();
            self.records.push(Record {
                key,
                owner,
                leaf,
                sharers: sharers.clone(),
            });
            self.index.insert(key, g);
            if let Some(es) = self.pending.remove(&key) {
                for e in es {
                    self.elements[e] = g;
                }
            }
        }
        for s in sides.iter().filter(|s| s.local) {
            let hs = sp.len(s.oct.level) as i64;
            let base = s.index * per;
            if dim == 0 || hs == vc.h {
                for (p, key) in slots.iter().zip(&slot_keys) {
                    let ps = s.xform.apply(p, nl);
                    let mut k = 0;
                    for j in (0..sp.d()).rev() {
                        k = k * npe + ((ps[j] - n * s.oct.x[j] as i64) / hs) as usize;
                    }
                    self.set(base + k, *key);
                }
            } else if 2 * hs == vc.h {
                let parent = sp.parent(&s.oct);
                let inv = s.xform.inverse();
                for k in 0..per {
                    let mut ps = [0i64; 3];
                    let mut pp = [0i64; 3];
                    let mut r = k;
                    for j in 0..sp.d() {
                        let i = (r % npe) as i64;
                        r /= npe;
                        ps[j] = n * s.oct.x[j] as i64 + i * hs;
                        pp[j] = n * parent.x[j] as i64 + i * 2 * hs;
                    }
                    if ps == pp || !in_closed(&sp, vc, &inv.apply(&ps, nl), n) {
                        continue;
                    }
                    let pv = inv.apply(&pp, nl);
                    let x = containing(&sp, vc, &pv, n);
                    let key = if x == *vc {
                        NodeKey {
                            point: fr.key,
                            slot: slot_of(&sp, &fr.cell, &fr.xf.apply(&pv, nl), n).expect("hanging node on the point"),
                        }
                    } else {
                        let fx = frame_of(conn, &x);
                        match slot_of(&sp, &fx.cell, &fx.xf.apply(&pv, nl), n) {
                            Some(slot) => NodeKey { point: fx.key, slot },
                            None => {
                                self.err = Some(contract("hanging node off its coarse point"));
                                return;
                            }
                        }
                    };
                    self.set(base + k, key);
                }
            } else {
                self.err = Some(Error::Unbalanced(format!("leaf {:?} is not adjacent to a 2:1 neighbour", s.oct)));
                return;
            }
        }
    }
}

/// Collective: number the order-`n` nodes of the forest continuously across ranks.
pub fn lnodes(forest: &Forest, ghost: &GhostLayer, comm: &Comm, n: u8) -> Result<Lnodes> {
    if n == 0 {
        return Err(contract("node order must be at least 1"));
    }
    let sp = *forest.space();
    let per = pow(n as usize + 1, sp.dim);
    let me = forest.rank;
    let mut b = Builder {
        forest,
        ghost,
        n: n as i64,
        records: Vec::new(),
        index: HashMap::new(),
        pending: HashMap::new(),
        elements: vec![usize::MAX; forest.num_local() * per],
        err: None,
    };
    let bad = forest.unbalanced_leaves(ghost);
    if !bad.is_empty() {
        b.err = Some(Error::Unbalanced(format!("{} local leaves violate 2:1 balance", bad.len())));
    } else {
        let opts = IterOptions {
            relevance: Relevance::Closed,
            ..IterOptions::default()
        };
        let r = iterate(forest, ghost, opts, |v| {
            if b.err.is_none() {
                b.visit(&v.cell, v.sides);
            }
        });
        if let Err(e) = r {
            b.err = Some(e);
        }
    }
    if b.err.is_none() && (!b.pending.is_empty() || b.elements.contains(&usize::MAX)) {
        b.err = Some(contract("element nodes left unresolved"));
    }
    let owned_count = b.records.iter().filter(|r| r.owner == me).count() as u64;
    let counts = comm.allgather_u64(if b.err.is_some() { u64::MAX } else { owned_count })?;
    if let Some(e) = b.err {
        return Err(e);
    }
    if let Some(q) = counts.iter().position(|&c| c == u64::MAX) {
        return Err(contract(format!("rank {q} failed to build its nodes")));
    }
    let offsets = Comm::prefix_sums(&counts);
    let offset = offsets[me];
    let global_count = counts.iter().sum::<u64>();
    let mut referenced = vec![false; b.records.len()];
    for &g in &b.elements {
        referenced[g] = true;
    }
    let mut index = vec![u64::MAX; b.records.len()];
    let mut next = offset;
    for j in 0..forest.num_local() {
        for &g in &b.elements[j * per..(j + 1) * per] {
            let r = &b.records[g];
            if r.owner == me && r.leaf == j && index[g] == u64::MAX {
                index[g] = next;
                next += 1;
            }
        }
    }
    if next != offset + owned_count {
        return Err(contract("owned node not referenced by its owning leaf"));
    }
    let mut sharers: Vec<Vec<usize>> = b.records.iter().map(|r| r.sharers.clone()).collect();
    for q in 0..forest.size {
        if q == me {
            continue;
        }
        let mut w = Vec::new();
        let mut own: Vec<usize> = (0..b.records.len()).filter(|&g| b.records[g].owner == me && b.records[g].sharers.contains(&q)).collect();
        own.sort_by_key(|&g| index[g]);
        for g in own {
            let r = &b.records[g];
            w.extend_from_slice(&r.key.point.oct.to_words());
            w.extend_from_slice(&[r.key.point.b as u64, r.key.slot as u64, index[g], r.sharers.len() as u64]);
            w.extend(r.sharers.iter().map(|&s| s as u64));
        }
        comm.send_words(q, &w)?;
    }
    for q in 0..forest.size {
        if q == me {
            continue;
        }
        let w = comm.recv_words(q)?;
        let mut i = 0;
        while i < w.len() {
            if i + 9 > w.len() {
                return Err(Error::Decode("truncated node record".into()));
            }
            let key = NodeKey {
                point: PointKey {
                    oct: Octant::from_words(&w[i..i + 5]),
                    b: w[i + 5] as u8,
                },
                slot: w[i + 6] as u32,
            };
            let gi = w[i + 7];
            let ns = w[i + 8] as usize;
            if i + 9 + ns > w.len() {
                return Err(Error::Decode("truncated node record".into()));
            }
            let sh: Vec<usize> = w[i + 9..i + 9 + ns].iter().map(|&s| s as usize).collect();
            i += 9 + ns;
            match b.index.get(&key) {
                Some(&g) if b.records[g].owner == q && referenced[g] => {
                    index[g] = gi;
                    sharers[g] = sh;
                }
                _ => return Err(contract(format!("rank {q} lists rank {me} as sharer of a node it does not reference"))),
            }
        }
    }
    let mut keep: Vec<usize> = (0..b.records.len()).filter(|&g| referenced[g]).collect();
    if keep.iter().any(|&g| index[g] == u64::MAX) {
        return Err(contract("referenced node received no global index"));
    }
    keep.sort_by_key(|&g| index[g]);
    let mut remap = vec![usize::MAX; b.records.len()];
    for (i, &g) in keep.iter().enumerate() {
        remap[g] = i;
    }
    Ok(Lnodes {
        order: n,
        rank: me,
        nodes: keep
            .iter()
            .map(|&g| GlobalNode {
                index: index[g],
                owner: b.records[g].owner,
                sharers: std::mem::take(&mut sharers[g]),
            })
            .collect(),
        keys: keep.iter().map(|&g| b.records[g].key).collect(),
        elements: b.elements.iter().map(|&g| remap[g]).collect(),
        per_element: per,
        owned: owned_count as usize,
        global_offset: offset,
        global_count,
    })
}
