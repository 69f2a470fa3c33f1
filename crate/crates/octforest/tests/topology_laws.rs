use std::collections::BTreeSet;

use octforest::connectivity::face_xform;
use octforest::point::{child_boundary, num_boundary, volume};
use octforest::{Cell, Connectivity, FaceLink, Octant, Point, Space, Xform};
use proptest::prelude::*;
use testkit::{all_octants, child_touch};

type Unit = [i64; 3];

/// Unit cells tiling a cell in doubled coordinates: `2x` for a vertex, `2x + 1` for `(x, x + 1)`.
fn units(sp: &Space, c: &Cell, closed: bool) -> Vec<Unit> {
    let mut out = vec![[0i64; 3]];
    for j in 0..sp.d() {
        let axis: Vec<i64> = if c.span & (1 << j) != 0 {
            let (a, b) = (2 * c.lo[j], 2 * (c.lo[j] + c.h));
            if closed { (a..=b).collect() } else { (a + 1..b).collect() }
        } else {
            vec![2 * c.lo[j]]
        };
        out = out.iter().flat_map(|u| axis.iter().map(move |&v| { let mut w = *u; w[j] = v; w })).collect();
    }
    out
}

fn all_points(sp: &Space) -> Vec<Cell> {
    let mut out = Vec::new();
    for o in all_octants(sp, 0) {
        for b in 0..=volume(sp.dim) {
            out.push(Cell::from_point(sp, &Point { oct: o, b }));
        }
    }
    out
}

fn tiles(parts: &[Vec<Unit>], whole: Vec<Unit>) -> bool {
    let mut seen = BTreeSet::new();
    for p in parts {
        for u in p {
            if !seen.insert(*u) {
                return false;
            }
        }
    }
    seen == whole.into_iter().collect()
}

#[test]
fn partition_and_closure_laws() {
    for (d, l) in [(2, 3), (3, 2)] {
        let sp = Space::new(d, l).unwrap();
        for c in all_points(&sp) {
            if c.dim() > 0 && c.h > 1 {
                let parts: Vec<Vec<Unit>> = c.part(&sp).iter().map(|p| units(&sp, p, false)).collect();
                assert_eq!(parts.len(), 3usize.pow(c.dim() as u32));
                assert!(tiles(&parts, units(&sp, &c, false)), "part of {c:?}");
                assert_eq!(c.children(&sp).len(), 1 << c.dim());
            }
            let clos = c.closure(&sp);
            assert_eq!(clos[0], c);
            let parts: Vec<Vec<Unit>> = clos.iter().map(|p| units(&sp, p, false)).collect();
            assert!(tiles(&parts, units(&sp, &c, true)), "closure of {c:?}");
        }
    }
}

#[test]
fn support_meets_every_touching_octant() {
    for (d, l) in [(2, 3), (3, 2)] {
        let sp = Space::new(d, l).unwrap();
        let conn = Connectivity::unitcube(sp);
        let octs = all_octants(&sp, 0);
        let boxes: Vec<BTreeSet<Unit>> = octs.iter().map(|o| units(&sp, &Cell::from_octant(&sp, o), true).into_iter().collect()).collect();
        for c in all_points(&sp) {
            let us = units(&sp, &c, false);
            let supp = conn.supp(&c);
            assert!(!supp.is_empty());
            assert!(supp.windows(2).all(|w| w[0].oct < w[1].oct));
            for s in &supp {
                assert!(Cell::from_point(&sp, &Point { oct: s.oct, b: s.b }).same_as(&c), "{c:?} {s:?}");
            }
            for (o, bx) in octs.iter().zip(&boxes) {
                if us.iter().any(|u| bx.contains(u)) {
                    assert!(supp.iter().any(|s| sp.overlaps(&s.oct, o)), "{c:?} misses {o:?}");
                }
            }
        }
    }
}

#[test]
fn child_boundary_table_matches_geometry() {
    for (d, l) in [(2, 3), (3, 2)] {
        let sp = Space::new(d, l).unwrap();
        let root = sp.root(0);
        let full = (1u32 << num_boundary(d)) - 1;
        for i in 0..1 << d {
            assert_eq!(child_boundary(d, i), child_touch(&sp, &root, i) & full, "d {d} child {i}");
        }
    }
}

fn rotated_pair() -> Connectivity {
    let sp = Space::new(2, 3).unwrap();
    let mut links = vec![vec![None; 4]; 2];
    links[0][1] = Some(FaceLink { tree: 1, face: 2, orientation: 1 });
    links[1][2] = Some(FaceLink { tree: 0, face: 1, orientation: 1 });
    Connectivity::from_face_links(sp, links).unwrap()
}

fn connectivities() -> Vec<Connectivity> {
    let mut out = vec![rotated_pair()];
    for d in [2u8, 3] {
        let sp = Space::new(d, if d == 2 { 3 } else { 2 }).unwrap();
        out.push(Connectivity::unitcube(sp));
        out.push(Connectivity::brick(sp, [2, 3, if d == 3 { 2 } else { 1 }], [false; 3]).unwrap());
        out.push(Connectivity::brick(sp, [2, 2, if d == 3 { 2 } else { 1 }], [true, false, d == 3]).unwrap());
        out.push(Connectivity::brick(sp, [3, 2, 1], [false, true, false]).unwrap());
    }
    out
}

#[test]
fn builders_validate_and_round_trip_json() {
    for c in connectivities() {
        assert!(c.validate().is_empty(), "{:?}", c.validate());
        let back = Connectivity::from_json(&c.to_json()).unwrap();
        assert_eq!(back.to_json(), c.to_json());
        assert_eq!(back.face_links, c.face_links);
    }
    let mut bad = rotated_pair();
    bad.face_links[1][2] = None;
    assert!(Connectivity::from_json(&bad.to_json()).is_err());
}

#[test]
fn transforms_round_trip_on_boundary_octants() {
    for c in connectivities() {
        let sp = c.space;
        for t in 0..c.num_trees {
            for o in all_octants(&sp, t) {
                for b in 0..num_boundary(sp.dim) {
                    for im in c.neighbors(t, b) {
                        let Ok(m) = c.transform_octant(&o, b, im) else { continue };
                        assert!(sp.is_valid(&m));
                        let back: Vec<Octant> = (0..num_boundary(sp.dim))
                            .flat_map(|b2| c.neighbors(m.tree, b2).iter().map(move |x| (b2, *x)))
                            .filter(|(_, x)| x.tree == t && x.xform == im.xform.inverse())
                            .filter_map(|(b2, x)| c.transform_octant(&m, b2, &x).ok())
                            .collect();
                        assert!(back.contains(&o), "{o:?} via {b} -> {m:?}");
                    }
                }
            }
        }
    }
}

fn xform() -> impl Strategy<Value = Xform> {
    (0u8..4, 0u8..4, 0u8..2, prop::sample::select(vec![0u8, 1, 2])).prop_map(|(f, nf, o, n)| {
        let x = face_xform(2, f, nf, o);
        (0..n).fold(x, |acc, _| acc.then(&face_xform(2, nf, f, o)))
    })
}

proptest! {
    #[test]
    fn xform_group_laws(a in xform(), b in xform(), p in prop::array::uniform3(0i64..9)) {
        let l = 8;
        let p = [p[0], p[1], 0];
        prop_assert_eq!(a.then(&a.inverse()), Xform::identity());
        prop_assert_eq!(b.apply(&a.apply(&p, l), l), a.then(&b).apply(&p, l));
        prop_assert_eq!(a.inverse().apply(&a.apply(&p, l), l), p);
    }

    #[test]
    fn canonical_key_is_shared_by_all_representatives(t in 0u32..12, l in 0u8..3, x in any::<[u64; 3]>(), b in 0u8..27) {
        let c = Connectivity::brick(Space::new(3, 2).unwrap(), [2, 3, 2], [true, false, true]).unwrap();
        let sp = c.space;
        let mut o = Octant::new(t, l, [0; 3]);
        for j in 0..3 {
            o.x[j] = (x[j] % sp.root_len()) & !(sp.len(l) - 1);
        }
        let key = c.canonical_point(&Point { oct: o, b });
        let cell = Cell::from_point(&sp, &Point { oct: o, b });
        for s in c.supp(&cell) {
            prop_assert_eq!(c.canonical_point(&Point { oct: s.oct, b: s.b }), key);
        }
    }
}
