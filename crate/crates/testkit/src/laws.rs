//! Exhaustive and randomized law checks shared by the unit suites and the acceptance run.
//!
//! Each check returns the number of cases examined, or a description of the first failure.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use octforest::ghost::{build_ghost, build_ghost_with, exchange_ghost_data, find_range_boundaries, GhostOptions};
use octforest::lnodes::reconstruct_remote;
use octforest::point::{from_codes, full_mask};
use octforest::search::split_array;
use octforest::transport::{run_ok, Schedule, Trace};
use octforest::{iterate, lnodes, Cell, Forest, GhostLayer, IterOptions, Lnodes, Octant, Relevance, Space};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{
    all_octants, atoms_of, closed_relevant, ghosts, inside, leaf_support, linear_split, node_count, node_positions, order_key, owners, partition, random_descendants,
    range_boundaries, references, relevant, remote_leaves, GCell, Geom, Recipe,
};

pub type Outcome = Result<usize, String>;

/// Total order, hierarchy coherence, `ancestor_id` monotonicity and range consistency
/// over every octant of two trees.
pub fn octant_laws(sp: &Space) -> Outcome {
    let mut all = all_octants(sp, 0);
    all.extend(all_octants(sp, 1));
    let mut cases = 0;
    for a in &all {
        for b in &all {
            cases += 1;
            let c = a.cmp(b);
            if c != order_key(sp, a).cmp(&order_key(sp, b)) {
                return Err(format!("order of {a:?} and {b:?} disagrees with interleaving"));
            }
            if c != b.cmp(a).reverse() || (c == Ordering::Equal) != (a == b) {
                return Err(format!("antisymmetry fails for {a:?}, {b:?}"));
            }
            let desc = inside(sp, b, a);
            if sp.is_descendant(b, a) != desc {
                return Err(format!("is_descendant({b:?}, {a:?}) wrong"));
            }
            if desc && b != a && a >= b {
                return Err(format!("{a:?} does not precede its descendant {b:?}"));
            }
            if b.level == sp.lmax {
                let r = sp.range(a);
                if (r.first <= *b && *b <= r.last) != desc {
                    return Err(format!("range of {a:?} inconsistent at atom {b:?}"));
                }
            }
        }
    }
    let mut sorted = all.clone();
    sorted.sort();
    for w in sorted.windows(3) {
        cases += 1;
        if !(w[0] < w[1] && w[1] < w[2] && w[0] < w[2]) {
            return Err(format!("transitivity fails at {:?}", w));
        }
    }
    for a in all.iter().filter(|a| a.level < sp.lmax) {
        let ch = sp.children(a);
        for (i, c) in ch.iter().enumerate() {
            if sp.child_id(c) != i || sp.parent(c) != *a {
                return Err(format!("child {i} of {a:?} inconsistent"));
            }
        }
        let groups: Vec<Vec<&Octant>> = ch.iter().map(|c| all.iter().filter(|x| inside(sp, x, c)).collect()).collect();
        for i in 0..groups.len() - 1 {
            let last = groups[i].iter().max().unwrap();
            let first = groups[i + 1].iter().min().unwrap();
            cases += 1;
            if last >= first {
                return Err(format!("descendants of child {i} of {a:?} overlap the next child"));
            }
        }
        let mut desc: Vec<Octant> = all.iter().filter(|x| x.level > a.level && inside(sp, x, a)).copied().collect();
        desc.sort();
        let ids: Vec<usize> = desc.iter().map(|x| sp.ancestor_id(x, a.level + 1)).collect();
        cases += 1;
        if ids.windows(2).any(|w| w[0] > w[1]) {
            return Err(format!("ancestor_id not monotone below {a:?}"));
        }
    }
    Ok(cases)
}

/// `split_array` against the linear scan on `n` random descendant arrays of random octants.
pub fn split_law(sp: &Space, n: usize, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<Octant> = all_octants(sp, 0).into_iter().filter(|o| o.level < sp.lmax).collect();
    for i in 0..n {
        let a = all[rand::Rng::gen_range(&mut rng, 0..all.len())];
        let arr = random_descendants(&mut rng, sp, &a);
        let got = split_array(sp, &arr, &a);
        let want = linear_split(sp, &arr, &a);
        if got != want {
            return Err(format!("case {i}: split of {} below {a:?} gave {got:?}, want {want:?}", arr.len()));
        }
    }
    Ok(n)
}

/// `find_range_boundaries` against atom enumeration for every `(s, f, l)` with the full query.
pub fn range_boundary_law(sp: &Space) -> Outcome {
    let mut cases = 0;
    let q = full_mask(sp.dim) | 1 << octforest::point::volume(sp.dim);
    for s in all_octants(sp, 0) {
        let atoms = atoms_of(sp, &s);
        for i in 0..atoms.len() {
            for j in i..atoms.len() {
                let got = find_range_boundaries(sp, &atoms[i], &atoms[j], &s, q);
                let want = range_boundaries(sp, &atoms[i..=j], &s, q);
                cases += 1;
                if got != want {
                    return Err(format!("s {s:?} f {:?} l {:?}: got {got:#x}, want {want:#x}", atoms[i], atoms[j]));
                }
            }
        }
    }
    Ok(cases)
}

macro_rules! ensure {
    ($c:expr, $($f:tt)+) => {
        if !$c {
            return Err(format!($($f)+));
        }
    };
}

fn even_counts(n: usize, ranks: usize) -> Vec<usize> {
    (0..ranks).map(|q| (q + 1) * n / ranks - q * n / ranks).collect()
}

/// Ghost layers of every rank and codimension against the pairwise adjacency oracle,
/// with and without the insulation shortcut, plus ghost payload delivery.
pub fn ghost_law(r: &Recipe, leaves: &[Octant], ranks: usize) -> Outcome {
    let conn = r.conn();
    let g = Geom::of(&conn);
    let fs = Forest::from_leaves(conn, leaves, ranks).map_err(|e| e.to_string())?;
    let own = owners(&even_counts(leaves.len(), ranks));
    let mut prev: Option<Vec<GhostLayer>> = None;
    let mut cases = 0;
    for k in 1..=r.dim {
        let build = |ins: bool| {
            run_ok(ranks, Schedule::Parallel, |c| {
                let f = &fs[c.rank()];
                let gh = build_ghost_with(f, c, k, GhostOptions { insulation: ins })?;
                let payload: Vec<u64> = (0..f.num_local()).map(|j| leaves.binary_search(f.leaf(j)).unwrap() as u64).collect();
                let data = exchange_ghost_data(f, &gh, c, 1, &payload)?;
                Ok((gh, data))
            })
            .map(|r| r.results)
            .map_err(|e| e.to_string())
        };
        let fast = build(true)?;
        let slow = build(false)?;
        let want = ghosts(&g, leaves, &own, ranks, k as usize);
        for p in 0..ranks {
            cases += 1;
            let (gh, data) = &fast[p];
            ensure!(*gh == slow[p].0, "k {k} rank {p}: insulation changes the layer");
            let got: BTreeSet<Octant> = gh.ghosts.iter().copied().collect();
            ensure!(got.len() == gh.len() && got == want[p], "k {k} rank {p}: {} ghosts, oracle {}", gh.len(), want[p].len());
            for (i, o) in gh.ghosts.iter().enumerate() {
                let gi = leaves.binary_search(o).unwrap();
                ensure!(gh.owners[i] == own[gi], "k {k} rank {p}: wrong owner for {o:?}");
                ensure!(data[i] == gi as u64, "k {k} rank {p}: wrong payload for {o:?}");
                ensure!(gh.tree_ghosts(o.tree as usize).contains(o), "k {k} rank {p}: tree offsets");
            }
            for q in 0..ranks {
                let sent: BTreeSet<Octant> = gh.mirrors[q].iter().map(|&j| *fs[p].leaf(j)).collect();
                let recv: BTreeSet<Octant> = if q == p { BTreeSet::new() } else { want[q].iter().filter(|o| own[leaves.binary_search(o).unwrap()] == p).copied().collect() };
                ensure!(sent == recv, "k {k}: mirrors of rank {p} towards {q}");
            }
            if let Some(pv) = &prev {
                ensure!(pv[p].ghosts.iter().all(|o| gh.index_of(o).is_some()), "k {k} rank {p}: layer shrinks with k");
            }
        }
        prev = Some(fast.into_iter().map(|x| x.0).collect());
    }
    Ok(cases)
}

struct Seen {
    points: BTreeMap<GCell, Vec<usize>>,
    dup: bool,
    bad_index: bool,
    order_ok: bool,
    known: BTreeSet<usize>,
}

fn iterate_run(r: &Recipe, leaves: &[Octant], ranks: usize, mode: Relevance, cache: bool) -> Result<Vec<Seen>, String> {
    let conn = r.conn();
    let g = Geom::of(&conn);
    let fs = Forest::from_leaves(conn, leaves, ranks).map_err(|e| e.to_string())?;
    let out = run_ok(ranks, Schedule::Parallel, |c| {
        let f = &fs[c.rank()];
        let gh = build_ghost(f, c, r.dim)?;
        let mut seen = Seen {
            points: BTreeMap::new(),
            dup: false,
            bad_index: false,
            order_ok: true,
            known: f.leaves().chain(&gh.ghosts).map(|o| leaves.binary_search(o).unwrap()).collect(),
        };
        let mut stamp: BTreeMap<GCell, ((u32, u8), usize)> = BTreeMap::new();
        let opts = IterOptions {
            relevance: mode,
            split_cache: cache,
            ..IterOptions::default()
        };
        iterate(f, &gh, opts, |v| {
            let gc = g.cell(&v.cell);
            let mut sup = Vec::new();
            for s in v.sides {
                let o = if s.local { *f.leaf(s.index) } else { gh.ghosts[s.index] };
                if o != s.oct {
                    seen.bad_index = true;
                }
                sup.push(leaves.binary_search(&o).unwrap());
            }
            sup.sort();
            let root = (v.cell.tree, from_codes(r.dim, &v.cell.root_codes(f.space())));
            let t = stamp.len();
            stamp.insert(gc, (root, t));
            if seen.points.insert(gc, sup).is_some() {
                seen.dup = true;
            }
        })?;
        for (c, (root, t)) in &stamp {
            for e in g.closure(c).iter().skip(1) {
                if let Some((re, te)) = stamp.get(e) {
                    if re == root && te < t {
                        seen.order_ok = false;
                    }
                }
            }
        }
        Ok(seen)
    });
    out.map(|r| r.results).map_err(|e| e.to_string())
}

/// Single rank: visited points equal the global partition, supports equal the leaf support,
/// each point fires once and before its boundary; with and without the split cache.
pub fn iterate_single_law(r: &Recipe, leaves: &[Octant]) -> Outcome {
    let g = Geom::of(&r.conn());
    let want = partition(&g, leaves);
    for cache in [false, true] {
        let seen = iterate_run(r, leaves, 1, Relevance::Open, cache)?.remove(0);
        ensure!(!seen.dup, "a point fired twice");
        ensure!(!seen.bad_index, "a side index does not dereference to its octant");
        ensure!(seen.order_ok, "a boundary point fired before its owner");
        let got: BTreeSet<GCell> = seen.points.keys().copied().collect();
        ensure!(got == want, "visited {} points, oracle {}", got.len(), want.len());
        for (c, sup) in &seen.points {
            ensure!(*sup == leaf_support(&g, leaves, c), "support of {c:?}");
        }
    }
    Ok(want.len())
}

/// Several ranks: open and closed visited sets equal the relevance oracles.
pub fn iterate_multi_law(r: &Recipe, leaves: &[Octant], ranks: usize) -> Outcome {
    let g = Geom::of(&r.conn());
    let own = owners(&even_counts(leaves.len(), ranks));
    let part = partition(&g, leaves);
    let open = relevant(&g, leaves, &part, &own, ranks);
    let closed = closed_relevant(&g, &open, &part);
    let so = iterate_run(r, leaves, ranks, Relevance::Open, true)?;
    let sc = iterate_run(r, leaves, ranks, Relevance::Closed, true)?;
    for p in 0..ranks {
        for s in [&so[p], &sc[p]] {
            ensure!(!s.dup && !s.bad_index && s.order_ok, "rank {p}: instrumentation");
        }
        let go: BTreeSet<GCell> = so[p].points.keys().copied().collect();
        let gc: BTreeSet<GCell> = sc[p].points.keys().copied().collect();
        ensure!(go == open[p], "rank {p}: open set");
        ensure!(gc == closed[p], "rank {p}: closed set");
        for (c, sup) in &so[p].points {
            ensure!(*sup == leaf_support(&g, leaves, c), "rank {p}: open support of {c:?}");
        }
        for (c, sup) in &sc[p].points {
            let want: Vec<usize> = leaf_support(&g, leaves, c).into_iter().filter(|i| sc[p].known.contains(i)).collect();
            ensure!(*sup == want, "rank {p}: closed support of {c:?}");
        }
    }
    Ok(ranks)
}

/// Node numbering on `ranks` ranks, with ghost layers built in a separate run.
pub fn number(r: &Recipe, leaves: &[Octant], ranks: usize, n: u8, schedule: Schedule) -> Result<(Vec<Lnodes>, Trace), String> {
    let fs = Forest::from_leaves(r.conn(), leaves, ranks).map_err(|e| e.to_string())?;
    let gs = run_ok(ranks, schedule, |c| build_ghost(&fs[c.rank()], c, r.dim)).map_err(|e| e.to_string())?.results;
    let out = run_ok(ranks, schedule, |c| lnodes(&fs[c.rank()], &gs[c.rank()], c, n)).map_err(|e| e.to_string())?;
    Ok((out.results, out.trace))
}

/// Global element-node table: `table[leaf][k]` = global index.
pub fn node_table(ls: &[Lnodes]) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    for l in ls {
        let per = l.nodes_per_element();
        for j in 0..l.elements.len() / per {
            out.push((0..per).map(|k| l.global_index(j, k)).collect());
        }
    }
    out
}

/// Single-rank numbering against the positional continuity oracle.
pub fn lnodes_continuity_law(r: &Recipe, leaves: &[Octant], n: u8) -> Outcome {
    let conn = r.conn();
    let g = Geom::of(&conn);
    let want = node_count(&g, leaves, n as i64);
    let pos = node_positions(&g, &conn.space, leaves, n as i64);
    let (ls, _) = number(r, leaves, 1, n, Schedule::RoundRobin)?;
    let serial = node_table(&ls);
    let mut by_pos: BTreeMap<GCell, u64> = BTreeMap::new();
    let mut by_idx: BTreeMap<u64, GCell> = BTreeMap::new();
    for (i, row) in serial.iter().enumerate() {
        for (k, &gi) in row.iter().enumerate() {
            let p = pos[i][k];
            ensure!(*by_pos.entry(p).or_insert(gi) == gi, "n {n}: one position, two indices at {p:?}");
            ensure!(*by_idx.entry(gi).or_insert(p) == p, "n {n}: one index {gi}, two positions");
        }
    }
    ensure!(by_idx.len() as u64 == want && ls[0].global_count == want, "n {n}: {} nodes, oracle {want}", by_idx.len());
    Ok(want as usize)
}

/// Tables for every rank count equal the single-rank table.
pub fn lnodes_partition_law(r: &Recipe, leaves: &[Octant], n: u8, ranks: &[usize]) -> Outcome {
    let serial = node_table(&number(r, leaves, 1, n, Schedule::Parallel)?.0);
    for &p in ranks {
        let got = node_table(&number(r, leaves, p, n, Schedule::Parallel)?.0);
        ensure!(got == serial, "n {n}: table on {p} ranks differs from one rank");
    }
    Ok(ranks.len())
}

/// Sharer sets equal referencing ranks, owners follow the first supporting leaf, and the
/// numbering communicates with one allgather and one message per ordered rank pair.
pub fn lnodes_sharer_law(r: &Recipe, leaves: &[Octant], n: u8, ranks: usize) -> Outcome {
    let conn = r.conn();
    let g = Geom::of(&conn);
    let sp = conn.space;
    let part = partition(&g, leaves);
    let (ls, trace) = number(r, leaves, ranks, n, Schedule::Parallel)?;
    let own = owners(&even_counts(leaves.len(), ranks));
    let mut refs: BTreeMap<u64, BTreeSet<usize>> = BTreeMap::new();
    for (p, l) in ls.iter().enumerate() {
        for &e in &l.elements {
            refs.entry(l.nodes[e].index).or_default().insert(p);
        }
    }
    for (p, l) in ls.iter().enumerate() {
        for (node, key) in l.nodes.iter().zip(&l.keys) {
            let sh: BTreeSet<usize> = node.sharers.iter().copied().collect();
            ensure!(sh == refs[&node.index], "rank {p}: sharers of node {}", node.index);
            let c = g.cell(&Cell::from_point(&sp, &key.point.point()));
            ensure!(part.contains(&c), "rank {p}: node key is not a partition point");
            ensure!(node.owner == own[leaf_support(&g, leaves, &c)[0]], "rank {p}: owner of {c:?}");
        }
        ensure!(l.nodes.iter().filter(|x| x.owner == p).count() == l.owned, "rank {p}: owned count");
        for q in 0..ranks {
            let mine: BTreeSet<u64> = l.shared_nodes(q).iter().map(|&i| l.nodes[i].index).collect();
            let theirs: BTreeSet<u64> = ls[q].shared_nodes(p).iter().map(|&i| ls[q].nodes[i].index).collect();
            ensure!(mine == theirs, "ranks {p} and {q} disagree on shared nodes");
        }
        let ev = &trace.ranks[p];
        let peers = |kind: &str| ev.iter().filter(|e| e.kind == kind).map(|e| e.peer.unwrap()).collect::<BTreeSet<_>>();
        let expect: BTreeSet<usize> = (0..ranks).filter(|&q| q != p).collect();
        ensure!(ev.len() == 1 + 2 * (ranks - 1), "rank {p}: {} transport events", ev.len());
        ensure!(ev.iter().filter(|e| e.kind == "allgather").count() == 1, "rank {p}: allgather count");
        ensure!(peers("send") == expect && peers("recv") == expect, "rank {p}: point-to-point pattern");
    }
    Ok(ranks)
}

/// Remote leaf reconstruction at every visited point against the order-2 node oracle.
pub fn remote_law(r: &Recipe, leaves: &[Octant]) -> Outcome {
    let conn = r.conn();
    let g = Geom::of(&conn);
    let f = Forest::from_leaves(conn.clone(), leaves, 1).map_err(|e| e.to_string())?.remove(0);
    let gh = GhostLayer::empty(conn.num_trees as usize, 1, r.dim);
    let refs = references(&node_positions(&g, &conn.space, leaves, 2));
    let mut bad = Vec::new();
    let mut cases = 0;
    iterate(&f, &gh, IterOptions::default(), |v| {
        cases += 1;
        let gc = g.cell(&v.cell);
        if reconstruct_remote(&conn, &v.cell, v.sides) != remote_leaves(&g, leaves, &refs, &gc) {
            bad.push(gc);
        }
    })
    .map_err(|e| e.to_string())?;
    ensure!(bad.is_empty(), "remote leaves differ at {:?}", &bad[..bad.len().min(3)]);
    Ok(cases)
}

/// Positions of a child's boundary entities that can hang: `(child id, boundary index)`
/// for every entity of positive dimension lying on the parent's boundary.
pub fn hanging_universe(sp: &Space) -> BTreeSet<(usize, u8)> {
    let mut out = BTreeSet::new();
    for i in 0..sp.num_children() {
        for b in 0..octforest::point::num_boundary(sp.dim) {
            let cs = octforest::point::codes(sp.dim, b);
            let span = (0..sp.d()).filter(|&j| cs[j] == octforest::Code::Span).count();
            let on = (0..sp.d()).all(|j| match cs[j] {
                octforest::Code::Span => true,
                octforest::Code::Lo => (i >> j) & 1 == 0,
                octforest::Code::Hi => (i >> j) & 1 == 1,
            });
            if span > 0 && on {
                out.insert((i, b));
            }
        }
    }
    out
}

/// The `(child id, boundary index)` pairs of leaf entities that hang in this forest.
pub fn hanging_configs(g: &Geom, sp: &Space, leaves: &[Octant]) -> BTreeSet<(usize, u8)> {
    let part = partition(g, leaves);
    let uni = hanging_universe(sp);
    let mut out = BTreeSet::new();
    for o in leaves.iter().filter(|o| o.level > 0) {
        let i = sp.child_id(o);
        let parent = sp.parent(o);
        for &(_, b) in uni.iter().filter(|(ci, _)| *ci == i) {
            let pc = g.cell(&Cell::from_point(sp, &octforest::Point { oct: parent, b }));
            if part.contains(&pc) {
                out.insert((i, b));
            }
        }
    }
    out
}

/// Point-location matcher over half-open boxes counting per-octant visits above the leaves.
pub struct Locator<'a> {
    pub sp: Space,
    pub points: &'a [(u32, [f64; 3])],
    pub interior_calls: u64,
    pub leaf_calls: BTreeMap<(Octant, usize), u32>,
}

impl<'a> Locator<'a> {
    pub fn new(sp: Space, points: &'a [(u32, [f64; 3])]) -> Self {
        Locator { sp, points, interior_calls: 0, leaf_calls: BTreeMap::new() }
    }

    fn inside(&self, o: &Octant, q: usize) -> bool {
        let (t, x) = self.points[q];
        let h = self.sp.len(o.level) as f64;
        t == o.tree && (0..self.sp.d()).all(|j| o.x[j] as f64 <= x[j] && x[j] < o.x[j] as f64 + h)
    }
}

impl octforest::search::Matcher for Locator<'_> {
    fn visit(&mut self, _: &Octant, is_leaf: bool) {
        if !is_leaf {
            self.interior_calls += 1;
        }
    }

    fn matches(&mut self, o: &Octant, is_leaf: bool, q: usize) -> bool {
        if is_leaf {
            *self.leaf_calls.entry((*o, q)).or_default() += 1;
        }
        self.inside(o, q)
    }
}

/// Uniformly random points in the trees of a recipe.
pub fn random_points(r: &Recipe, n: usize, seed: u64) -> Vec<(u32, [f64; 3])> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nt = r.dims.iter().product::<u32>();
    let l = (1u64 << r.lmax) as f64;
    (0..n)
        .map(|_| {
            let mut x = [0.0; 3];
            for xj in x.iter_mut().take(r.dim as usize) {
                *xj = rand::Rng::gen_range(&mut rng, 0.0..l);
            }
            (rand::Rng::gen_range(&mut rng, 0..nt), x)
        })
        .collect()
}

/// Point location by batched search equals a linear scan, every surviving `(leaf, query)` pair
/// is tested at the leaf exactly once, and batching visits fewer interior octants than
/// searching each query alone. Returns `(batched, single)` interior visit counts.
pub fn search_law(r: &Recipe, leaves: &[Octant], points: &[(u32, [f64; 3])], ranks: usize) -> Result<(u64, u64), String> {
    let fs = Forest::from_leaves(r.conn(), leaves, ranks).map_err(|e| e.to_string())?;
    let sp = *fs[0].space();
    let queries: Vec<usize> = (0..points.len()).collect();
    let mut found: BTreeMap<usize, Octant> = BTreeMap::new();
    let (mut batched, mut single) = (0, 0);
    for f in &fs {
        let mut m = Locator::new(sp, points);
        octforest::search::search(f, &queries, &mut m);
        batched += m.interior_calls;
        for (&(o, q), &n) in &m.leaf_calls {
            ensure!(n == 1, "leaf {o:?} tested {n} times for query {q}");
            if m.inside(&o, q) {
                ensure!(found.insert(q, o).is_none(), "query {q} located twice");
            }
        }
        for &q in &queries {
            let mut m = Locator::new(sp, points);
            octforest::search::search(f, &[q], &mut m);
            single += m.interior_calls;
        }
    }
    let l = sp.root_len() as f64;
    for (q, &(t, x)) in points.iter().enumerate() {
        let want = leaves.iter().find(|o| {
            let h = sp.len(o.level) as f64;
            o.tree == t && (0..sp.d()).all(|j| o.x[j] as f64 <= x[j] && x[j] < (o.x[j] as f64 + h).min(l + 1.0))
        });
        ensure!(found.get(&q) == want, "query {q} located at {:?}, scan says {want:?}", found.get(&q));
    }
    ensure!(single == 0 || batched < single, "batched search made {batched} interior visits, single queries {single}");
    Ok((batched, single))
}
