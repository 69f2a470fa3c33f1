use octforest::transport::Schedule;
use octforest::Space;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use testkit::laws::{hanging_configs, hanging_universe, lnodes_continuity_law, lnodes_partition_law, lnodes_sharer_law, number, remote_law};
use testkit::{random_leaves, random_recipe, Geom};

#[test]
fn numbering_matches_continuity_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cover = [Default::default(), Default::default()];
    for seed in 0..30 {
        let dim = if seed % 3 == 0 { 3 } else { 2 };
        let r = random_recipe(&mut rng, dim, if dim == 2 { 4 } else { 3 }, true);
        let leaves = random_leaves(&r, seed);
        let g = Geom::of(&r.conn());
        let sp = Space::new(dim, r.lmax).unwrap();
        let c: &mut std::collections::BTreeSet<_> = &mut cover[dim as usize - 2];
        c.extend(hanging_configs(&g, &sp, &leaves));
        for n in 1..=if dim == 2 { 3 } else { 2 } {
            lnodes_continuity_law(&r, &leaves, n).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        }
    }
    for dim in [2, 3] {
        assert_eq!(cover[dim as usize - 2], hanging_universe(&Space::new(dim, 3).unwrap()), "dim {dim}");
    }
}

#[test]
fn tables_and_sharers_are_partition_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..16 {
        let dim = if seed % 2 == 0 { 2 } else { 3 };
        let r = random_recipe(&mut rng, dim, if dim == 2 { 4 } else { 3 }, true);
        let leaves = random_leaves(&r, seed);
        if leaves.len() < 4 {
            continue;
        }
        for n in 1..=2 {
            lnodes_partition_law(&r, &leaves, n, &[2, 4]).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            for ranks in [2, 3] {
                lnodes_sharer_law(&r, &leaves, n, ranks).unwrap_or_else(|e| panic!("seed {seed} ranks {ranks}: {e}"));
            }
        }
    }
}

#[test]
fn remote_reconstruction_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..30 {
        let dim = if seed % 3 == 0 { 3 } else { 2 };
        let r = random_recipe(&mut rng, dim, if dim == 2 { 4 } else { 3 }, true);
        remote_law(&r, &random_leaves(&r, seed)).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

#[test]
fn unbalanced_forest_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let r = random_recipe(&mut rng, 2, 5, false);
    let leaves = testkit::unbalanced_leaves(&r, 1);
    for ranks in [1, 3] {
        let e = number(&r, &leaves, ranks, 1, Schedule::RoundRobin).unwrap_err();
        assert!(e.contains("balance"), "{e}");
    }
}
