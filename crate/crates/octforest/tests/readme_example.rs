use std::sync::Arc;

use octforest::forest::uniform_leaves;
use octforest::ghost::build_ghost;
use octforest::transport::{run_ok, Schedule};
use octforest::{lnodes, Connectivity, Forest, Space};

#[test]
fn uniform_trilinear_node_count() -> octforest::Result<()> {
    let sp = Space::new(3, 10)?;
    let conn = Arc::new(Connectivity::unitcube(sp));
    let forests = Forest::from_leaves(conn, &uniform_leaves(&sp, 1, 2), 4)?;
    let run = run_ok(4, Schedule::Parallel, |c| {
        let f = &forests[c.rank()];
        let ghost = build_ghost(f, c, 3)?;
        lnodes(f, &ghost, c, 1)
    })?;
    assert_eq!(run.results[0].global_count, 125);
    Ok(())
}
