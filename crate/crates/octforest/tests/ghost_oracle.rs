use std::collections::BTreeSet;
use std::sync::Arc;

use octforest::forest::uniform_leaves;
use octforest::ghost::{add_ghost, build_ghost, exchange_ghost_data, GhostOptions};
use octforest::transport::{run_ok, Schedule};
use octforest::{Connectivity, Forest, Octant, Space};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use testkit::laws::ghost_law;
use testkit::{max_level_jump, random_recipe, unbalanced_leaves, Geom};

#[test]
fn unbalanced_layers_match_adjacency_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut periodic = false;
    let mut tested = 0;
    let mut seed = 0;
    while tested < 30 {
        seed += 1;
        let dim = if seed % 2 == 0 { 2 } else { 3 };
        let r = random_recipe(&mut rng, dim, if dim == 2 { 5 } else { 3 }, false);
        let leaves = unbalanced_leaves(&r, seed);
        if max_level_jump(&Geom::of(&r.conn()), &leaves) < 2 {
            continue;
        }
        tested += 1;
        periodic |= r.periodic.iter().any(|&p| p);
        for ranks in [2, 4, 8] {
            if leaves.len() >= ranks {
                ghost_law(&r, &leaves, ranks).unwrap_or_else(|e| panic!("seed {seed} ranks {ranks} {r:?}: {e}"));
            }
        }
    }
    assert!(periodic);
}

fn two_rank_level_one() -> Vec<Forest> {
    let sp = Space::new(2, 3).unwrap();
    let conn = Arc::new(Connectivity::unitcube(sp));
    Forest::from_leaves(conn, &uniform_leaves(&sp, 1, 1), 2).unwrap()
}

#[test]
fn two_rank_uniform_example() {
    let fs = two_rank_level_one();
    let sp = *fs[0].space();
    let c0 = sp.child(&sp.root(0), 0);
    for k in 1..=2 {
        assert_eq!(add_ghost(&fs[0], &c0, k, GhostOptions::default()), BTreeSet::from([1]));
    }
    let out = run_ok(2, Schedule::RoundRobin, |c| build_ghost(&fs[c.rank()], c, 1)).unwrap().results;
    assert_eq!(out[0].ghosts, vec![sp.child(&sp.root(0), 2), sp.child(&sp.root(0), 3)]);
    assert_eq!(out[1].ghosts, vec![sp.child(&sp.root(0), 0), sp.child(&sp.root(0), 1)]);
}

#[test]
fn corner_contact_needs_full_codimension() {
    let sp = Space::new(2, 3).unwrap();
    let conn = Arc::new(Connectivity::unitcube(sp));
    let root = sp.root(0);
    let leaves: Vec<Octant> = uniform_leaves(&sp, 1, 1);
    let fs = Forest::from_leaves(conn, &leaves, 4).unwrap();
    let c0 = sp.child(&root, 0);
    assert_eq!(add_ghost(&fs[0], &c0, 1, GhostOptions::default()), BTreeSet::from([1, 2]));
    assert_eq!(add_ghost(&fs[0], &c0, 2, GhostOptions::default()), BTreeSet::from([1, 2, 3]));
}

#[test]
fn coarse_leaf_next_to_fine_leaves() {
    let sp = Space::new(2, 3).unwrap();
    let conn = Arc::new(Connectivity::brick(sp, [2, 1, 1], [false; 3]).unwrap());
    let mut leaves = vec![sp.root(0)];
    let mut o = sp.root(1);
    while o.level < 3 {
        let ch = sp.children(&o);
        leaves.extend_from_slice(&ch[1..]);
        o = ch[0];
    }
    leaves.push(o);
    leaves.sort();
    let f = vec![sp.first_atom(&sp.root(0)), sp.first_atom(&sp.root(1)), sp.first_atom(&sp.root(2))];
    let fs: Vec<Forest> = (0..2)
        .map(|q| Forest::from_parts(conn.clone(), q, 2, leaves.iter().filter(|o| o.tree == q as u32).copied().collect(), f.clone()).unwrap())
        .collect();
    let fine: Vec<Octant> = leaves.iter().filter(|x| x.tree == 1 && x.x[0] == 0).copied().collect();
    assert_eq!(fine.len(), 4);
    for k in 1..=2 {
        let out = run_ok(2, Schedule::Parallel, |c| build_ghost(&fs[c.rank()], c, k)).unwrap().results;
        assert_eq!(out[0].ghosts, fine);
        assert_eq!(out[1].ghosts, vec![sp.root(0)]);
        assert_eq!(out[1].mirrors[0].len(), 4);
        assert_eq!(out[0].mirrors[1], vec![0]);
    }
}

#[test]
fn single_rank_has_no_ghosts() {
    let sp = Space::new(3, 3).unwrap();
    let conn = Arc::new(Connectivity::brick(sp, [2, 1, 1], [true, false, false]).unwrap());
    let fs = Forest::from_leaves(conn, &uniform_leaves(&sp, 2, 2), 1).unwrap();
    let out = run_ok(1, Schedule::RoundRobin, |c| {
        let g = build_ghost(&fs[0], c, 3)?;
        let d = exchange_ghost_data(&fs[0], &g, c, 2, &vec![7; 2 * fs[0].num_local()])?;
        Ok((g, d))
    })
    .unwrap()
    .results;
    assert!(out[0].0.is_empty() && out[0].1.is_empty());
    let bad = run_ok(1, Schedule::RoundRobin, |c| build_ghost(&fs[0], c, 4));
    assert!(bad.is_err());
}
