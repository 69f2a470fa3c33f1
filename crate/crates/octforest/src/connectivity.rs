use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::octant::{Octant, Space};
use crate::point::{codes, from_codes, num_boundary, volume, Cell, Code, Image};

/// Signed axis permutation plus integer shift in units of the root length:
/// `y_i = ±x_{perm_i} + shift_i * L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Xform {
    pub perm: [u8; 3],
    pub flip: [bool; 3],
    pub shift: [i8; 3],
}

impl Xform {
    pub fn identity() -> Self {
        Xform {
            perm: [0, 1, 2],
            flip: [false; 3],
            shift: [0; 3],
        }
    }

    pub fn translation(shift: [i8; 3]) -> Self {
        Xform {
            shift,
            ..Xform::identity()
        }
    }

    fn sign(&self, i: usize) -> i64 {
        if self.flip[i] {
            -1
        } else {
            1
        }
    }

    /// The map `x -> other(self(x))`.
    pub fn then(&self, other: &Xform) -> Xform {
        let mut r = Xform::identity();
        for i in 0..3 {
            let pb = other.perm[i] as usize;
            r.perm[i] = self.perm[pb];
            r.flip[i] = other.flip[i] != self.flip[pb];
            r.shift[i] = (other.sign(i) * self.shift[pb] as i64 + other.shift[i] as i64) as i8;
        }
        r
    }

    pub fn inverse(&self) -> Xform {
        let mut r = Xform::identity();
        for i in 0..3 {
            let p = self.perm[i] as usize;
            r.perm[p] = i as u8;
            r.flip[p] = self.flip[i];
            r.shift[p] = (-self.sign(i) * self.shift[i] as i64) as i8;
        }
        r
    }

    pub fn apply(&self, x: &[i64; 3], root_len: i64) -> [i64; 3] {
        let mut y = [0; 3];
        for i in 0..3 {
            y[i] = self.sign(i) * x[self.perm[i] as usize] + self.shift[i] as i64 * root_len;
        }
        y
    }

    pub fn is_translation(&self) -> bool {
        self.perm == [0, 1, 2] && self.flip == [false; 3]
    }
}

/// Neighbour across one tree face.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaceLink {
    pub tree: u32,
    pub face: u8,
    pub orientation: u8,
}

/// Neighbour across a tree corner or edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityLink {
    pub tree: u32,
    pub entity: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Brick {
    pub dims: [u32; 3],
    pub periodic: [bool; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ConnectivityData {
    dim: u8,
    lmax: u8,
    num_trees: u32,
    face_links: Vec<Vec<Option<FaceLink>>>,
    corner_links: Vec<Vec<Vec<EntityLink>>>,
    edge_links: Vec<Vec<Vec<EntityLink>>>,
    brick: Option<Brick>,
}

/// The replicated macro layer: trees and their adjacency.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ConnectivityData", into = "ConnectivityData")]
pub struct Connectivity {
    pub space: Space,
    pub num_trees: u32,
    pub face_links: Vec<Vec<Option<FaceLink>>>,
    pub corner_links: Vec<Vec<Vec<EntityLink>>>,
    pub edge_links: Vec<Vec<Vec<EntityLink>>>,
    pub brick: Option<Brick>,
    nbrs: Vec<Vec<Vec<Image>>>,
    derive_issues: Vec<String>,
}

impl From<Connectivity> for ConnectivityData {
    fn from(c: Connectivity) -> Self {
        ConnectivityData {
            dim: c.space.dim,
            lmax: c.space.lmax,
            num_trees: c.num_trees,
            face_links: c.face_links,
            corner_links: c.corner_links,
            edge_links: c.edge_links,
            brick: c.brick,
        }
    }
}

impl TryFrom<ConnectivityData> for Connectivity {
    type Error = Error;

    fn try_from(d: ConnectivityData) -> Result<Self> {
        let space = Space::new(d.dim, d.lmax)?;
        let mut c = Connectivity::from_face_links(space, d.face_links)?;
        c.brick = d.brick;
        c.corner_links = d.corner_links;
        c.edge_links = d.edge_links;
        let diags = c.validate();
        if !diags.is_empty() {
            return Err(Error::Connectivity(diags));
        }
        Ok(c)
    }
}

/// Transform carrying coordinates of the tree owning face `f` into the tree owning face `nf`.
pub fn face_xform(dim: u8, f: u8, nf: u8, orientation: u8) -> Xform {
    let (a, s) = ((f / 2) as usize, f % 2);
    let (na, ns) = ((nf / 2) as usize, nf % 2);
    let mut x = Xform::identity();
    let (flip, shift) = match (s, ns) {
        (0, 0) => (true, 0),
        (0, 1) => (false, 1),
        (1, 0) => (false, -1),
        _ => (true, 2),
    };
    x.perm[na] = a as u8;
    x.flip[na] = flip;
    x.shift[na] = shift;
    if dim == 2 {
        let (b, nb) = (1 - a, 1 - na);
        x.perm[nb] = b as u8;
        x.flip[nb] = orientation == 1;
        x.shift[nb] = (orientation == 1) as i8;
    }
    x
}

fn entity_cell(sp: &Space, tree: u32, b: u8) -> Cell {
    let l = sp.root_len() as i64;
    let cs = codes(sp.dim, b);
    let mut lo = [0; 3];
    let mut span = 0;
    for j in 0..sp.d() {
        match cs[j] {
            Code::Lo => lo[j] = 0,
            Code::Hi => lo[j] = l,
            Code::Span => span |= 1 << j,
        }
    }
    Cell {
        tree,
        lo,
        h: l,
        span,
    }
}

fn cell_entity(sp: &Space, c: &Cell) -> u8 {
    from_codes(sp.dim, &c.root_codes(sp))
}

impl Connectivity {
    /// Build from face links; corner and edge neighbours are derived.
    pub fn from_face_links(space: Space, face_links: Vec<Vec<Option<FaceLink>>>) -> Result<Self> {
        let k = face_links.len();
        if k == 0 {
            return Err(contract("connectivity needs at least one tree"));
        }
        let nf = 2 * space.d();
        for (t, fl) in face_links.iter().enumerate() {
            if fl.len() != nf {
                return Err(contract(format!("tree {t} has {} faces, expected {nf}", fl.len())));
            }
            for l in fl.iter().flatten() {
                if l.tree as usize >= k || l.face as usize >= nf || l.orientation > 1 {
                    return Err(contract(format!("tree {t} has an out-of-range face link")));
                }
            }
        }
        let mut c = Connectivity {
            space,
            num_trees: k as u32,
            face_links,
            corner_links: Vec::new(),
            edge_links: Vec::new(),
            brick: None,
            nbrs: Vec::new(),
            derive_issues: Vec::new(),
        };
        c.derive();
        Ok(c)
    }

    pub fn unitcube(space: Space) -> Self {
        Connectivity::brick(space, [1, 1, 1], [false; 3]).expect("unit cube is valid")
    }

    /// Axis-aligned `m x n (x p)` grid of trees numbered x-fastest, optionally periodic.
    pub fn brick(space: Space, dims: [u32; 3], periodic: [bool; 3]) -> Result<Self> {
        let d = space.d();
        let mut dims = dims;
        let mut periodic = periodic;
        if d == 2 {
            dims[2] = 1;
            periodic[2] = false;
        }
        for j in 0..d {
            if dims[j] == 0 {
                return Err(contract("brick extent must be positive"));
            }
            if periodic[j] && dims[j] == 1 {
                return Err(contract(format!(
                    "periodic axis {j} of extent 1 would make a tree adjacent to itself"
                )));
            }
        }
        let k = (dims[0] * dims[1] * dims[2]) as usize;
        let idx = |i: [u32; 3]| i[0] + dims[0] * (i[1] + dims[1] * i[2]);
        let mut links = vec![vec![None; 2 * d]; k];
        for (t, tl) in links.iter_mut().enumerate() {
            let t = t as u32;
            let pos = [t % dims[0], (t / dims[0]) % dims[1], t / (dims[0] * dims[1])];
            for a in 0..d {
                for s in 0..2u32 {
                    let mut q = pos;
                    let n = dims[a];
                    if s == 0 {
                        if pos[a] == 0 {
                            if !periodic[a] {
                                continue;
                            }
                            q[a] = n - 1;
                        } else {
                            q[a] -= 1;
                        }
                    } else if pos[a] + 1 == n {
                        if !periodic[a] {
                            continue;
                        }
                        q[a] = 0;
                    } else {
                        q[a] += 1;
                    }
                    tl[2 * a + s as usize] = Some(FaceLink {
                        tree: idx(q),
                        face: (2 * a as u32 + 1 - s) as u8,
                        orientation: 0,
                    });
                }
            }
        }
        let mut c = Connectivity::from_face_links(space, links)?;
        c.brick = Some(Brick { dims, periodic });
        Ok(c)
    }

    /// Images of root boundary entity `b` of tree `t` in every other tree sharing it.
    pub fn neighbors(&self, t: u32, b: u8) -> &[Image] {
        &self.nbrs[t as usize][b as usize]
    }

    fn derive(&mut self) {
        let sp = self.space;
        let d = sp.d();
        let nb = num_boundary(sp.dim) as usize;
        let l = sp.root_len() as i64;
        let mut nbrs = vec![vec![Vec::new(); nb]; self.num_trees as usize];
        let mut issues = Vec::new();
        for t in 0..self.num_trees {
            for b in 0..nb as u8 {
                let home = entity_cell(&sp, t, b);
                let mut seen: Vec<(Image, Cell)> = vec![(
                    Image {
                        tree: t,
                        xform: Xform::identity(),
                    },
                    home,
                )];
                let mut queue = VecDeque::from([0usize]);
                while let Some(i) = queue.pop_front() {
                    let (im, cell) = seen[i];
                    for a in 0..d {
                        if cell.spans(a) {
                            continue;
                        }
                        let s = if cell.lo[a] == 0 {
                            0
                        } else if cell.lo[a] == l {
                            1
                        } else {
                            continue;
                        };
                        let f = 2 * a + s;
                        let Some(link) = self.face_links[im.tree as usize][f] else {
                            continue;
                        };
                        let fx = face_xform(sp.dim, f as u8, link.face, link.orientation);
                        let xf = im.xform.then(&fx);
                        let nc = home.map(&sp, link.tree, &xf);
                        match seen
                            .iter()
                            .find(|(m, c)| m.tree == link.tree && c.lo == nc.lo && c.span == nc.span)
                        {
                            Some((m, _)) => {
                                if m.xform != xf && !self.same_on_neighborhood(&home, &m.xform, &xf) {
                                    issues.push(format!(
                                        "tree {t} entity {b}: inconsistent transforms into tree {}",
                                        link.tree
                                    ));
                                }
                            }
                            None => {
                                seen.push((
                                    Image {
                                        tree: link.tree,
                                        xform: xf,
                                    },
                                    nc,
                                ));
                                queue.push_back(seen.len() - 1);
                            }
                        }
                    }
                }
                for (im, c) in &seen[1..] {
                    if im.tree == t && c.lo == home.lo && c.span == home.span {
                        issues.push(format!("tree {t} entity {b} is linked to itself"));
                    }
                }
                nbrs[t as usize][b as usize] = seen[1..].iter().map(|(im, _)| *im).collect();
            }
        }
        let nc = 1usize << d;
        let links_for = |nbrs: &Vec<Vec<Vec<Image>>>, t: usize, b: u8| -> Vec<EntityLink> {
            let home = entity_cell(&sp, t as u32, b);
            let mut v: Vec<EntityLink> = nbrs[t][b as usize]
                .iter()
                .map(|im| EntityLink {
                    tree: im.tree,
                    entity: cell_entity(&sp, &home.map(&sp, im.tree, &im.xform)),
                })
                .collect();
            v.sort();
            v
        };
        let corner_base = crate::point::corner(sp.dim, 0);
        self.corner_links = (0..self.num_trees as usize)
            .map(|t| {
                (0..nc)
                    .map(|i| {
                        links_for(&nbrs, t, corner_base + i as u8)
                            .into_iter()
                            .map(|mut e| {
                                e.entity -= corner_base;
                                e
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        self.edge_links = if d == 3 {
            (0..self.num_trees as usize)
                .map(|t| {
                    (0..12u8)
                        .map(|e| {
                            links_for(&nbrs, t, 6 + e)
                                .into_iter()
                                .map(|mut l| {
                                    l.entity -= 6;
                                    l
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        self.nbrs = nbrs;
        self.derive_issues = issues;
    }

    fn same_on_neighborhood(&self, home: &Cell, a: &Xform, b: &Xform) -> bool {
        let l = self.space.root_len() as i64;
        let probe = |x: &Xform| {
            let mut p = home.lo;
            for j in 0..self.space.d() {
                if home.spans(j) {
                    p[j] = l / 2;
                }
            }
            x.apply(&p, l)
        };
        probe(a) == probe(b)
    }

    /// Consistency diagnostics; empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let sp = self.space;
        let d = sp.d();
        let mut diags = self.derive_issues.clone();
        for t in 0..self.num_trees as usize {
            for f in 0..2 * d {
                let Some(link) = self.face_links[t][f] else {
                    continue;
                };
                if link.tree as usize == t && link.face as usize == f {
                    diags.push(format!("tree {t} face {f} links to itself"));
                    continue;
                }
                if link.tree as usize == t {
                    diags.push(format!("tree {t} face {f} links to the same tree"));
                }
                match self.face_links[link.tree as usize][link.face as usize] {
                    Some(back)
                        if back.tree as usize == t
                            && back.face as usize == f
                            && back.orientation == link.orientation => {}
                    _ => diags.push(format!("tree {t} face {f}: link is not symmetric")),
                }
                if d == 3 && (link.face as usize != (f ^ 1) || link.orientation != 0) {
                    diags.push(format!(
                        "tree {t} face {f}: only translations are supported in 3D"
                    ));
                }
                let x = face_xform(sp.dim, f as u8, link.face, link.orientation);
                let y = face_xform(sp.dim, link.face, f as u8, link.orientation);
                if x.then(&y) != Xform::identity() {
                    diags.push(format!("tree {t} face {f}: transform round trip is not the identity"));
                }
            }
        }
        let nc = 1usize << d;
        let corner_base = crate::point::corner(sp.dim, 0);
        let corner_ok = |v: usize| if d == 2 { [1, 2, 4].contains(&v) } else { [1, 2, 4, 8].contains(&v) };
        for t in 0..self.num_trees as usize {
            for i in 0..nc {
                let v = self.nbrs[t][corner_base as usize + i].len() + 1;
                if !corner_ok(v) {
                    diags.push(format!("tree {t} corner {i}: unsupported valence {v}"));
                }
            }
            if d == 3 {
                for e in 0..12 {
                    let v = self.nbrs[t][6 + e].len() + 1;
                    if ![1, 2, 4].contains(&v) {
                        diags.push(format!("tree {t} edge {e}: unsupported valence {v}"));
                    }
                }
            }
        }
        let mut fresh = Connectivity {
            corner_links: Vec::new(),
            edge_links: Vec::new(),
            ..self.clone()
        };
        fresh.derive();
        if fresh.corner_links != self.corner_links || fresh.edge_links != self.edge_links {
            diags.push("corner or edge links disagree with the face links".into());
        }
        diags.sort();
        diags.dedup();
        diags
    }

    /// The octant of neighbour `nbr` that touches the shared root entity `b`
    /// where `o` touches it, with the same level and tangential position.
    pub fn transform_octant(&self, o: &Octant, b: u8, nbr: &Image) -> Result<Octant> {
        let sp = &self.space;
        let c = Cell::from_octant(sp, o);
        let mut touch = true;
        let cs = codes(sp.dim, b);
        let l = sp.root_len();
        let h = sp.len(o.level);
        for j in 0..sp.d() {
            touch &= match cs[j] {
                Code::Lo => o.x[j] == 0,
                Code::Hi => o.x[j] + h == l,
                Code::Span => true,
            };
        }
        if b == volume(sp.dim) || !touch || !self.neighbors(o.tree, b).contains(nbr) {
            return Err(contract("octant does not touch the given link"));
        }
        let m = c.map(sp, nbr.tree, &nbr.xform);
        let mut x = [0u64; 3];
        let (l, h) = (l as i64, h as i64);
        for j in 0..sp.d() {
            x[j] = m.lo[j].clamp(0, l - h) as u64;
        }
        Ok(Octant::new(nbr.tree, o.level, x))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("connectivity serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Decode(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unitcube_has_no_links() {
        let c = Connectivity::unitcube(Space::new(3, 3).unwrap());
        assert_eq!(c.num_trees, 1);
        assert!(c.face_links[0].iter().all(|l| l.is_none()));
        assert!(c.validate().is_empty());
    }

    #[test]
    fn brick_links() {
        let sp = Space::new(3, 3).unwrap();
        let c = Connectivity::brick(sp, [2, 1, 1], [false; 3]).unwrap();
        assert_eq!(c.face_links[0][1].unwrap().tree, 1);
        assert_eq!(c.face_links[1][0].unwrap().tree, 0);
        assert!(c.face_links[0][0].is_none());
        let p = Connectivity::brick(sp, [2, 1, 1], [true, false, false]).unwrap();
        assert_eq!(p.face_links[1][1].unwrap(), FaceLink { tree: 0, face: 0, orientation: 0 });
        assert!(p.validate().is_empty());
        assert!(Connectivity::brick(sp, [1, 1, 1], [true, false, false]).is_err());
    }

    #[test]
    fn transform_across_face() {
        let sp = Space::new(3, 3).unwrap();
        let c = Connectivity::brick(sp, [2, 1, 1], [false; 3]).unwrap();
        let o = Octant::new(0, 2, [6, 2, 4]);
        let im = c.neighbors(0, 1)[0];
        let n = c.transform_octant(&o, 1, &im).unwrap();
        assert_eq!(n, Octant::new(1, 2, [0, 2, 4]));
    }

    #[test]
    fn xform_algebra() {
        let x = face_xform(2, 1, 2, 1);
        let y = face_xform(2, 2, 1, 1);
        assert_eq!(x.then(&y), Xform::identity());
        assert_eq!(x.inverse(), y);
        let p = [3, 5, 0];
        assert_eq!(y.apply(&x.apply(&p, 8), 8), p);
    }

    #[test]
    fn json_round_trip() {
        let sp = Space::new(2, 4).unwrap();
        let c = Connectivity::brick(sp, [2, 3, 1], [true, false, false]).unwrap();
        let back = Connectivity::from_json(&c.to_json()).unwrap();
        assert_eq!(back.face_links, c.face_links);
        assert_eq!(back.corner_links, c.corner_links);
    }
}
