use std::fmt::Write;

use octforest::{Connectivity, Octant};

/// Lower corner of tree `t` in physical space: brick position, or a row along x.
pub fn tree_origin(conn: &Connectivity, t: u32) -> [f64; 3] {
    match conn.brick {
        Some(b) => {
            let d = b.dims;
            [(t % d[0]) as f64, ((t / d[0]) % d[1]) as f64, (t / (d[0] * d[1])) as f64]
        }
        None => [t as f64, 0.0, 0.0],
    }
}

/// Physical position of tree-local integer coordinates.
pub fn position(conn: &Connectivity, t: u32, x: [f64; 3]) -> [f64; 3] {
    let l = conn.space.root_len() as f64;
    let o = tree_origin(conn, t);
    let mut p = [0.0; 3];
    for j in 0..conn.space.d() {
        p[j] = o[j] + x[j] / l;
    }
    p
}

fn header(s: &mut String, title: &str, points: &[[f64; 3]]) {
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str(title);
    s.push_str("\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", points.len());
    for p in points {
        let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
    }
}

/// Leaves as pixels (2D) or voxels (3D) with rank, level and tree as cell data.
pub fn leaves(conn: &Connectivity, leaves: &[(Octant, usize)]) -> String {
    let sp = conn.space;
    let nc = sp.num_children();
    let mut pts = Vec::with_capacity(leaves.len() * nc);
    for (o, _) in leaves {
        let h = sp.len(o.level) as f64;
        for i in 0..nc {
            let mut x = [0.0; 3];
            for j in 0..sp.d() {
                x[j] = o.x[j] as f64 + if i & (1 << j) != 0 { h } else { 0.0 };
            }
            pts.push(position(conn, o.tree, x));
        }
    }
    let mut s = String::new();
    header(&mut s, "octforest leaves", &pts);
    let _ = writeln!(s, "CELLS {} {}", leaves.len(), leaves.len() * (nc + 1));
    for k in 0..leaves.len() {
        let ids: Vec<String> = (0..nc).map(|i| (k * nc + i).to_string()).collect();
        let _ = writeln!(s, "{nc} {}", ids.join(" "));
    }
    let ty = if sp.dim == 2 { 8 } else { 11 };
    let _ = writeln!(s, "CELL_TYPES {}", leaves.len());
    for _ in leaves {
        let _ = writeln!(s, "{ty}");
    }
    let _ = writeln!(s, "CELL_DATA {}", leaves.len());
    let fields: [(&str, Vec<u64>); 3] = [
        ("rank", leaves.iter().map(|x| x.1 as u64).collect()),
        ("level", leaves.iter().map(|x| x.0.level as u64).collect()),
        ("tree", leaves.iter().map(|x| x.0.tree as u64).collect()),
    ];
    for (name, vals) in fields {
        let _ = writeln!(s, "SCALARS {name} int 1\nLOOKUP_TABLE default");
        for v in vals {
            let _ = writeln!(s, "{v}");
        }
    }
    s
}

/// Nodes as vertex cells with their global index and owner rank.
pub fn nodes(points: &[([f64; 3], u64, usize)]) -> String {
    let pts: Vec<[f64; 3]> = points.iter().map(|p| p.0).collect();
    let mut s = String::new();
    header(&mut s, "octforest nodes", &pts);
    let _ = writeln!(s, "CELLS {} {}", points.len(), 2 * points.len());
    for k in 0..points.len() {
        let _ = writeln!(s, "1 {k}");
    }
    let _ = writeln!(s, "CELL_TYPES {}", points.len());
    for _ in points {
        s.push_str("1\n");
    }
    let _ = writeln!(s, "POINT_DATA {}", points.len());
    s.push_str("SCALARS global_index int 1\nLOOKUP_TABLE default\n");
    for p in points {
        let _ = writeln!(s, "{}", p.1);
    }
    s.push_str("SCALARS owner int 1\nLOOKUP_TABLE default\n");
    for p in points {
        let _ = writeln!(s, "{}", p.2);
    }
    s
}
