use serde::{Deserialize, Serialize};

use crate::connectivity::{Connectivity, Xform};
use crate::error::{contract, Result};
use crate::octant::{Octant, Space};

/// Per-axis position of a boundary entity relative to its octant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Code {
    Lo,
    Hi,
    Span,
}

/// Bitmask over boundary indices.
pub type BMask = u32;

/// Number of boundary indices excluding the volume: `3^d - 1`.
pub const fn num_boundary(dim: u8) -> u8 {
    if dim == 2 {
        8
    } else {
        26
    }
}

/// The volume index `v0`.
pub const fn volume(dim: u8) -> u8 {
    num_boundary(dim)
}

/// Mask of every boundary index excluding the volume.
pub const fn full_mask(dim: u8) -> BMask {
    (1 << num_boundary(dim)) - 1
}

pub fn face(f: u8) -> u8 {
    f
}

pub fn edge(e: u8) -> u8 {
    6 + e
}

pub fn corner(dim: u8, c: u8) -> u8 {
    if dim == 2 {
        4 + c
    } else {
        18 + c
    }
}

/// Per-axis codes of boundary index `b`.
pub fn codes(dim: u8, b: u8) -> [Code; 3] {
    let mut out = [Code::Lo; 3];
    let d = dim as usize;
    let nf = 2 * dim;
    if b == volume(dim) {
        for c in out.iter_mut().take(d) {
            *c = Code::Span;
        }
    } else if b < nf {
        for c in out.iter_mut().take(d) {
            *c = Code::Span;
        }
        out[(b / 2) as usize] = if b % 2 == 0 { Code::Lo } else { Code::Hi };
    } else if dim == 3 && b < 18 {
        let e = b - 6;
        let a = (e / 4) as usize;
        let (u, v) = match a {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        out[a] = Code::Span;
        out[u] = bit_code(e & 1);
        out[v] = bit_code((e >> 1) & 1);
    } else {
        let c = b - corner(dim, 0);
        for (j, o) in out.iter_mut().enumerate().take(d) {
            *o = bit_code((c >> j) & 1);
        }
    }
    out
}

fn bit_code(bit: u8) -> Code {
    if bit == 0 {
        Code::Lo
    } else {
        Code::Hi
    }
}

/// Boundary index with the given per-axis codes.
pub fn from_codes(dim: u8, c: &[Code; 3]) -> u8 {
    let d = dim as usize;
    let spans: Vec<usize> = (0..d).filter(|&j| c[j] == Code::Span).collect();
    let bit = |code: Code| -> u8 { (code == Code::Hi) as u8 };
    if spans.len() == d {
        volume(dim)
    } else if spans.len() + 1 == d {
        let a = (0..d).find(|j| c[*j] != Code::Span).unwrap();
        2 * a as u8 + bit(c[a])
    } else if spans.is_empty() {
        let mut i = 0;
        for (j, cj) in c.iter().enumerate().take(d) {
            i |= bit(*cj) << j;
        }
        corner(dim, i)
    } else {
        let a = spans[0];
        let (u, v) = match a {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        edge(4 * a as u8 + bit(c[u]) + 2 * bit(c[v]))
    }
}

/// Topological dimension of `dom_b`.
pub fn bdim(dim: u8, b: u8) -> u8 {
    codes(dim, b)
        .iter()
        .take(dim as usize)
        .filter(|c| **c == Code::Span)
        .count() as u8
}

/// Child-boundary intersection `B∩^i`: boundary entities of an octant touched by child `i`.
pub fn child_boundary(dim: u8, i: usize) -> BMask {
    let mut m = 0;
    for b in 0..num_boundary(dim) {
        let c = codes(dim, b);
        let ok = (0..dim as usize).all(|j| match c[j] {
            Code::Span => true,
            Code::Lo => (i >> j) & 1 == 0,
            Code::Hi => (i >> j) & 1 == 1,
        });
        if ok {
            m |= 1 << b;
        }
    }
    m
}

pub fn checked_child_boundary(dim: u8, i: usize) -> Result<BMask> {
    if i >= 1 << dim {
        return Err(contract(format!("child index {i} out of range")));
    }
    Ok(child_boundary(dim, i))
}

/// A point: an octant together with a boundary or volume index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub oct: Octant,
    pub b: u8,
}

/// Geometric form of a point in one tree frame: per axis either the closed
/// position `lo` (not spanning) or the half-open interval `[lo, lo + h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub tree: u32,
    pub lo: [i64; 3],
    pub h: i64,
    pub span: u8,
}

/// One entry of a support set: the support octant, the index of the point
/// relative to it, and which image frame produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SuppEntry {
    pub oct: Octant,
    pub b: u8,
    pub img: u8,
}

/// A frame in which a cell is visible: neighbouring tree and the map into it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Image {
    pub tree: u32,
    pub xform: Xform,
}

impl Cell {
    pub fn dim(&self) -> u8 {
        self.span.count_ones() as u8
    }

    pub fn spans(&self, j: usize) -> bool {
        self.span & (1 << j) != 0
    }

    pub fn level(&self, sp: &Space) -> u8 {
        sp.lmax - (self.h.trailing_zeros() as u8)
    }

    /// Closed per-axis extent `[lo, hi]`.
    pub fn extent(&self, j: usize) -> (i64, i64) {
        if self.spans(j) {
            (self.lo[j], self.lo[j] + self.h)
        } else {
            (self.lo[j], self.lo[j])
        }
    }

    pub fn from_point(sp: &Space, p: &Point) -> Cell {
        let h = sp.len(p.oct.level) as i64;
        let cs = codes(sp.dim, p.b);
        let mut lo = [0i64; 3];
        let mut span = 0u8;
        for j in 0..sp.d() {
            let x = p.oct.x[j] as i64;
            lo[j] = match cs[j] {
                Code::Lo => x,
                Code::Hi => x + h,
                Code::Span => {
                    span |= 1 << j;
                    x
                }
            };
        }
        let c = Cell {
            tree: p.oct.tree,
            lo,
            h,
            span,
        };
        c.normalized(sp)
    }

    pub fn from_octant(sp: &Space, o: &Octant) -> Cell {
        Cell::from_point(
            sp,
            &Point {
                oct: *o,
                b: volume(sp.dim),
            },
        )
    }

    /// Zero-dimensional cells carry the side length of their coarsest support level.
    pub fn normalized(mut self, sp: &Space) -> Cell {
        if self.span == 0 {
            let mut tz = sp.lmax as u32;
            for j in 0..sp.d() {
                if self.lo[j] != 0 {
                    tz = tz.min(self.lo[j].trailing_zeros());
                }
            }
            self.h = 1 << tz.min(sp.lmax as u32);
        }
        self
    }

    /// Map into another tree frame.
    pub fn map(&self, sp: &Space, tree: u32, xf: &Xform) -> Cell {
        let l = sp.root_len() as i64;
        let mut lo = [0i64; 3];
        let mut span = 0;
        for i in 0..sp.d() {
            let src = xf.perm[i] as usize;
            let s = if xf.flip[i] { -1 } else { 1 };
            let t = xf.shift[i] as i64 * l;
            if self.spans(src) {
                span |= 1 << i;
                lo[i] = (s * self.lo[src]).min(s * (self.lo[src] + self.h)) + t;
            } else {
                lo[i] = s * self.lo[src] + t;
            }
        }
        Cell {
            tree,
            lo,
            h: self.h,
            span,
        }
    }

    /// Per-axis root-entity codes of the smallest root boundary entity containing this cell.
    pub fn root_codes(&self, sp: &Space) -> [Code; 3] {
        let l = sp.root_len() as i64;
        let mut c = [Code::Span; 3];
        for (j, cj) in c.iter_mut().enumerate().take(sp.d()) {
            if !self.spans(j) {
                if self.lo[j] == 0 {
                    *cj = Code::Lo;
                } else if self.lo[j] == l {
                    *cj = Code::Hi;
                }
            }
        }
        c
    }

    /// True iff the closed box of `self` contains the closed box of `other` (same frame).
    pub fn closure_contains(&self, other: &Cell, d: usize) -> bool {
        (0..d).all(|j| {
            let (a0, a1) = self.extent(j);
            let (b0, b1) = other.extent(j);
            a0 <= b0 && b1 <= a1
        })
    }

    /// True iff the open domain of `other` lies in the closed box of `self`,
    /// which for aligned cells equals closure containment.
    pub fn closed_intersects(&self, other: &Cell, d: usize) -> bool {
        (0..d).all(|j| {
            let (a0, a1) = self.extent(j);
            let (b0, b1) = other.extent(j);
            a0 <= b1 && b0 <= a1
        })
    }

    /// Domain of a child-partition member or closure member as a point relative to an octant box.
    pub fn as_point(&self, sp: &Space) -> Point {
        let d = sp.d();
        let h = self.h;
        let mut x = [0u64; 3];
        let mut cs = [Code::Lo; 3];
        let l = sp.root_len() as i64;
        for j in 0..d {
            if self.spans(j) {
                x[j] = self.lo[j] as u64;
                cs[j] = Code::Span;
            } else if self.lo[j] < l {
                x[j] = self.lo[j] as u64;
                cs[j] = Code::Lo;
            } else {
                x[j] = (self.lo[j] - h) as u64;
                cs[j] = Code::Hi;
            }
        }
        Point {
            oct: Octant::new(self.tree, sp.lmax - h.trailing_zeros() as u8, x),
            b: from_codes(sp.dim, &cs),
        }
    }

    /// `part(c)`: the `3^dim` points one level finer partitioning `dom(c)`,
    /// ordered by decreasing dimension.
    pub fn part(&self, sp: &Space) -> Vec<Cell> {
        if self.span == 0 {
            return Vec::new();
        }
        let hh = self.h / 2;
        let mut out = vec![Cell {
            tree: self.tree,
            lo: self.lo,
            h: hh,
            span: self.span,
        }];
        for j in 0..sp.d() {
            if !self.spans(j) {
                continue;
            }
            let mut next = Vec::with_capacity(out.len() * 3);
            for c in &out {
                let mut low = *c;
                low.lo[j] = self.lo[j];
                let mut high = *c;
                high.lo[j] = self.lo[j] + hh;
                let mut mid = *c;
                mid.lo[j] = self.lo[j] + hh;
                mid.span &= !(1 << j);
                next.push(low);
                next.push(high);
                next.push(mid);
            }
            out = next;
        }
        let mut out: Vec<Cell> = out.into_iter().map(|c| c.normalized(sp)).collect();
        out.sort_by_key(|c| std::cmp::Reverse(c.dim()));
        out
    }

    /// `child(c)`: the `2^dim` members of `part(c)` with the same dimension as `c`.
    pub fn children(&self, sp: &Space) -> Vec<Cell> {
        let dim = self.dim();
        self.part(sp).into_iter().filter(|c| c.dim() == dim).collect()
    }

    /// `clos(c)`: the `3^dim` points whose domains partition the closure of `dom(c)`.
    pub fn closure(&self, sp: &Space) -> Vec<Cell> {
        let mut out = vec![*self];
        for j in 0..sp.d() {
            if !self.spans(j) {
                continue;
            }
            let mut next = Vec::with_capacity(out.len() * 3);
            for c in &out {
                next.push(*c);
                let mut lo = *c;
                lo.span &= !(1 << j);
                next.push(lo);
                let mut hi = lo;
                hi.lo[j] += self.h;
                next.push(hi);
            }
            out = next;
        }
        let mut out: Vec<Cell> = out
            .into_iter()
            .map(|mut c| {
                c.h = self.h;
                c.normalized(sp)
            })
            .collect();
        out.sort_by_key(|c| std::cmp::Reverse(c.dim()));
        out
    }

    /// `bound(c) = clos(c) \ {c}`.
    pub fn boundary(&self, sp: &Space) -> Vec<Cell> {
        let mut v = self.closure(sp);
        v.retain(|c| c != self);
        v
    }

    /// Same point in the same frame.
    pub fn same_as(&self, other: &Cell) -> bool {
        self.tree == other.tree && self.lo == other.lo && self.span == other.span && self.h == other.h
    }
}

/// Canonical identity of a point: the first support octant in the total order
/// together with the boundary index relative to it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PointKey {
    pub oct: Octant,
    pub b: u8,
}

impl PointKey {
    pub fn point(&self) -> Point {
        Point {
            oct: self.oct,
            b: self.b,
        }
    }
}

impl Connectivity {
    /// Every frame in which `c` is visible, home frame first.
    pub fn images(&self, c: &Cell) -> Vec<(Image, Cell)> {
        let sp = &self.space;
        let mut out = vec![(
            Image {
                tree: c.tree,
                xform: Xform::identity(),
            },
            *c,
        )];
        let rc = c.root_codes(sp);
        let b = from_codes(sp.dim, &rc);
        if b != volume(sp.dim) {
            for im in self.neighbors(c.tree, b) {
                out.push((*im, c.map(sp, im.tree, &im.xform)));
            }
        }
        out
    }

    /// `supp(c)`: octants at `level(c)` whose closure contains `dom(c)`, in total order.
    pub fn supp(&self, c: &Cell) -> Vec<SuppEntry> {
        let sp = &self.space;
        let l = sp.root_len() as i64;
        let lev = c.level(sp);
        let mut out = Vec::new();
        for (k, (im, cell)) in self.images(c).into_iter().enumerate() {
            let mut partial: Vec<([u64; 3], [Code; 3])> = vec![([0; 3], [Code::Lo; 3])];
            for j in 0..sp.d() {
                let mut next = Vec::with_capacity(partial.len() * 2);
                for (x, cs) in &partial {
                    if cell.spans(j) {
                        let mut x = *x;
                        let mut cs = *cs;
                        x[j] = cell.lo[j] as u64;
                        cs[j] = Code::Span;
                        next.push((x, cs));
                    } else {
                        let v = cell.lo[j];
                        if v - c.h >= 0 {
                            let mut x = *x;
                            let mut cs = *cs;
                            x[j] = (v - c.h) as u64;
                            cs[j] = Code::Hi;
                            next.push((x, cs));
                        }
                        if v + c.h <= l {
                            let mut x = *x;
                            let mut cs = *cs;
                            x[j] = v as u64;
                            cs[j] = Code::Lo;
                            next.push((x, cs));
                        }
                    }
                }
                partial = next;
            }
            for (x, cs) in partial {
                out.push(SuppEntry {
                    oct: Octant::new(im.tree, lev, x),
                    b: from_codes(sp.dim, &cs),
                    img: k as u8,
                });
            }
        }
        out.sort_by(|a, b| a.oct.cmp(&b.oct));
        out
    }

    /// `atomsupp(c)` for a 0-point: the atoms touching it, aligned with `supp(c)`.
    pub fn atom_supp(&self, c: &Cell) -> Vec<SuppEntry> {
        let sp = &self.space;
        self.supp(c)
            .into_iter()
            .map(|e| SuppEntry {
                oct: corner_atom(sp, &e.oct, e.b),
                ..e
            })
            .collect()
    }

    pub fn canonical(&self, c: &Cell) -> PointKey {
        let e = self.supp(c)[0];
        PointKey { oct: e.oct, b: e.b }
    }

    pub fn canonical_point(&self, p: &Point) -> PointKey {
        self.canonical(&Cell::from_point(&self.space, p))
    }
}

/// The atom of octant `o` touching its boundary entity `b`.
pub fn corner_atom(sp: &Space, o: &Octant, b: u8) -> Octant {
    let h = sp.len(o.level);
    let cs = codes(sp.dim, b);
    let mut a = Octant::new(o.tree, sp.lmax, o.x);
    for j in 0..sp.d() {
        if cs[j] == Code::Hi {
            a.x[j] += h - 1;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names3(m: BMask) -> Vec<String> {
        let mut v = Vec::new();
        for b in 0..26u8 {
            if m & (1 << b) != 0 {
                v.push(if b < 6 {
                    format!("f{b}")
                } else if b < 18 {
                    format!("e{}", b - 6)
                } else {
                    format!("c{}", b - 18)
                });
            }
        }
        v.sort();
        v
    }

    #[test]
    fn codes_round_trip() {
        for dim in [2u8, 3] {
            for b in 0..=num_boundary(dim) {
                assert_eq!(from_codes(dim, &codes(dim, b)), b);
            }
        }
    }

    #[test]
    fn child_boundary_table_3d() {
        let mut want = vec!["c0", "e0", "e4", "e8", "f0", "f2", "f4"];
        want.sort();
        assert_eq!(names3(child_boundary(3, 0)), want);
        let mut want = vec!["c7", "e3", "e7", "e11", "f1", "f3", "f5"];
        want.sort();
        assert_eq!(names3(child_boundary(3, 7)), want);
        for i in 0..8 {
            assert_eq!(child_boundary(3, i).count_ones(), 7);
        }
        assert_eq!(
            child_boundary(2, 0),
            (1 << corner(2, 0)) | (1 << face(0)) | (1 << face(2))
        );
        assert!(checked_child_boundary(2, 4).is_err());
    }

    #[test]
    fn set_sizes() {
        let sp = Space::new(3, 3).unwrap();
        let o = Octant::new(0, 1, [4, 4, 4]);
        let c = Cell::from_octant(&sp, &o);
        assert_eq!(c.closure(&sp).len(), 27);
        assert_eq!(c.boundary(&sp).len(), 26);
        assert_eq!(c.part(&sp).len(), 27);
        assert_eq!(c.children(&sp).len(), 8);
        let f = Cell::from_point(&sp, &Point { oct: o, b: face(1) });
        let part = f.part(&sp);
        assert_eq!(part.len(), 9);
        assert_eq!(part.iter().filter(|c| c.dim() == 2).count(), 4);
        assert_eq!(part.iter().filter(|c| c.dim() == 1).count(), 4);
        let e = Cell::from_point(&sp, &Point { oct: o, b: edge(0) });
        assert_eq!(e.boundary(&sp).len(), 2);
        let v = Cell::from_point(&sp, &Point { oct: o, b: corner(3, 0) });
        assert!(v.boundary(&sp).is_empty());
        assert!(v.part(&sp).is_empty());
    }
}
