use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use octforest::forest::uniform_leaves;
use octforest::transport::Schedule;
use octforest::{iterate, Connectivity, Forest, GhostLayer, IterOptions, Space};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use testkit::laws::{
    ghost_law, hanging_configs, hanging_universe, iterate_multi_law, iterate_single_law, lnodes_continuity_law,
    lnodes_partition_law, lnodes_sharer_law, number, octant_laws, random_points, range_boundary_law, search_law,
    split_law,
};
use testkit::{max_level_jump, random_leaves, random_recipe, unbalanced_leaves, Geom, Recipe};

type Verdict = Result<String, String>;

fn spaces() -> [Space; 2] {
    [Space::new(2, 3).unwrap(), Space::new(3, 2).unwrap()]
}

fn octant_kernel() -> Verdict {
    let mut n = 0;
    for sp in spaces() {
        n += octant_laws(&sp)?;
    }
    Ok(format!("{n} cases"))
}

fn split() -> Verdict {
    let a = split_law(&Space::new(2, 6).unwrap(), 1000, 11)?;
    let b = split_law(&Space::new(3, 4).unwrap(), 1000, 12)?;
    Ok(format!("{} arrays", a + b))
}

fn range_boundaries() -> Verdict {
    let mut n = 0;
    for sp in spaces() {
        n += range_boundary_law(&sp)?;
    }
    Ok(format!("{n} triples"))
}

fn ghosts() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut tested, mut seed, mut periodic, mut layers) = (0, 0, 0, 0);
    while tested < 100 {
        seed += 1;
        let dim = if seed % 2 == 0 { 2 } else { 3 };
        let mut r = random_recipe(&mut rng, dim, if dim == 2 { 5 } else { 3 }, false);
        if tested == 0 {
            r.dims[0] = 2;
            r.periodic[0] = true;
        }
        let leaves = unbalanced_leaves(&r, seed);
        if max_level_jump(&Geom::of(&r.conn()), &leaves) < 2 {
            continue;
        }
        tested += 1;
        periodic += r.periodic.iter().any(|&p| p) as usize;
        for ranks in [2, 4, 8] {
            if leaves.len() >= ranks {
                layers += ghost_law(&r, &leaves, ranks).map_err(|e| format!("seed {seed} ranks {ranks}: {e}"))?;
            }
        }
    }
    Ok(format!("{tested} forests ({periodic} periodic), {layers} layers"))
}

fn iterate_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut points = 0;
    for seed in 0..200 {
        let dim = if seed % 2 == 0 { 2 } else { 3 };
        let r = random_recipe(&mut rng, dim, if dim == 2 { 4 } else { 3 }, true);
        let leaves = random_leaves(&r, seed);
        points += iterate_single_law(&r, &leaves).map_err(|e| format!("seed {seed}: {e}"))?;
        if seed % 4 == 0 {
            for ranks in [2, 3, 5] {
                if leaves.len() >= ranks {
                    iterate_multi_law(&r, &leaves, ranks).map_err(|e| format!("seed {seed} ranks {ranks}: {e}"))?;
                }
            }
        }
    }
    Ok(format!("200 forests, {points} points"))
}

fn single_tree(dim: u8, level: u8) -> Forest {
    let sp = Space::new(dim, 8).unwrap();
    Forest::from_leaves(Arc::new(Connectivity::unitcube(sp)), &uniform_leaves(&sp, 1, level), 1).unwrap().remove(0)
}

fn iterate_growth() -> Verdict {
    let mut work = Vec::new();
    for level in 3..=6 {
        let f = single_tree(2, level);
        let st = iterate(&f, &GhostLayer::empty(1, 1, 2), IterOptions::default(), |_| {}).map_err(|e| e.to_string())?;
        work.push(st.interior_calls + st.splits + st.leaf_searches);
    }
    let ratios: Vec<f64> = work.windows(2).map(|w| w[1] as f64 / w[0] as f64).collect();
    if ratios.iter().any(|&r| r > 4.5) {
        return Err(format!("ratios {ratios:.3?}"));
    }
    Ok(format!("counts {work:?}, ratios {ratios:.3?}"))
}

fn unit(dim: u8, lmax: u8) -> Recipe {
    Recipe { dim, lmax, dims: [1; 3], periodic: [false; 3], refine: 0.0, balanced: true }
}

fn closed_forms() -> Verdict {
    let mut n = 0;
    for (dim, levels) in [(2u8, 1..=4u8), (3, 1..=2)] {
        for level in levels {
            let r = unit(dim, 6);
            let leaves = uniform_leaves(&Space::new(dim, 6).unwrap(), 1, level);
            for order in 1..=3u8 {
                let (ls, _) = number(&r, &leaves, 1, order, Schedule::RoundRobin)?;
                let want = (order as u64 * (1 << level) + 1).pow(dim as u32);
                if ls[0].global_count != want {
                    return Err(format!("d {dim} L {level} n {order}: {} nodes, want {want}", ls[0].global_count));
                }
                n += 1;
            }
        }
    }
    Ok(format!("{n} configurations"))
}

fn partition_independence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut tested, mut seed) = (0, 0);
    while tested < 30 {
        seed += 1;
        let dim = if seed % 2 == 0 { 2 } else { 3 };
        let r = random_recipe(&mut rng, dim, if dim == 2 { 4 } else { 3 }, true);
        let leaves = random_leaves(&r, seed);
        if leaves.len() < 4 {
            continue;
        }
        tested += 1;
        for order in 1..=2 {
            lnodes_partition_law(&r, &leaves, order, &[2, 4]).map_err(|e| format!("seed {seed}: {e}"))?;
        }
    }
    Ok(format!("{tested} forests"))
}

fn continuity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut cover: [BTreeSet<(usize, u8)>; 2] = Default::default();
    let mut nodes = 0;
    for seed in 0..40 {
        let dim = if seed % 3 == 0 { 3 } else { 2 };
        let r = random_recipe(&mut rng, dim, if dim == 2 { 4 } else { 3 }, true);
        let leaves = random_leaves(&r, seed);
        cover[dim as usize - 2].extend(hanging_configs(&Geom::of(&r.conn()), &Space::new(dim, r.lmax).unwrap(), &leaves));
        for order in 1..=if dim == 2 { 3 } else { 2 } {
            nodes += lnodes_continuity_law(&r, &leaves, order).map_err(|e| format!("seed {seed}: {e}"))?;
        }
    }
    for dim in [2u8, 3] {
        let want = hanging_universe(&Space::new(dim, 3).unwrap());
        let got = &cover[dim as usize - 2];
        if *got != want {
            return Err(format!("d {dim}: {} of {} hanging configurations covered", got.len(), want.len()));
        }
    }
    Ok(format!("{nodes} nodes, hanging configurations {} + {}", cover[0].len(), cover[1].len()))
}

fn sharers() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let (mut tested, mut seed) = (0, 0);
    while tested < 20 {
        seed += 1;
        let dim = if seed % 2 == 0 { 2 } else { 3 };
        let r = random_recipe(&mut rng, dim, if dim == 2 { 4 } else { 3 }, true);
        let leaves = random_leaves(&r, seed);
        if leaves.len() < 5 {
            continue;
        }
        tested += 1;
        for ranks in [2, 3, 5] {
            lnodes_sharer_law(&r, &leaves, 2, ranks).map_err(|e| format!("seed {seed} ranks {ranks}: {e}"))?;
        }
    }
    Ok(format!("{tested} forests"))
}

fn search_library() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let (mut b, mut s) = (0, 0);
    for seed in 0..4 {
        let dim = if seed % 2 == 0 { 2 } else { 3 };
        let mut r = random_recipe(&mut rng, dim, if dim == 2 { 7 } else { 5 }, seed % 2 == 0);
        r.refine = 0.7;
        let leaves = random_leaves(&r, seed);
        let pts = random_points(&r, 10_000, seed);
        let (batched, single) = search_law(&r, &leaves, &pts, 3).map_err(|e| format!("seed {seed}: {e}"))?;
        if batched >= single {
            return Err(format!("seed {seed}: batched {batched} >= single {single}"));
        }
        b += batched;
        s += single;
    }
    Ok(format!("4 x 10^4 points, interior visits batched {b} single {s}"))
}

fn cli(args: &[&str], dir: Option<&Path>) -> Result<Value, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_octforest"));
    if let Some(d) = dir {
        cmd.arg("--out").arg(d);
    }
    let out = cmd.args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn search_cli() -> Verdict {
    let v = cli(&["--dim", "3", "--ranks", "3", "--level", "2", "--recipe", "fractal", "search", "--queries", "2000"], None)?;
    let visits = |k: &str| v[k]["interior_visits"].as_u64().unwrap_or(0);
    let ok = v["located_once"] == v["queries"] && v["batched_equals_single"] == true && visits("batched") < visits("single");
    if !ok {
        return Err(format!("search report {v}"));
    }
    Ok(format!("cli visits batched {} single {}", visits("batched"), visits("single")))
}

fn search_all() -> Verdict {
    Ok(format!("{}; {}", search_library()?, search_cli()?))
}

fn normalized(mut v: Value) -> String {
    if let Some(c) = v.get_mut("config").and_then(Value::as_object_mut) {
        c.remove("schedule");
    }
    v.to_string()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn vtk_schema(text: &str, cell_type: &str) -> Result<(), String> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.first() != Some(&"# vtk DataFile Version 3.0") || lines.get(2) != Some(&"ASCII") || lines.get(3) != Some(&"DATASET UNSTRUCTURED_GRID") {
        return Err("bad vtk header".into());
    }
    let at = |key: &str| lines.iter().position(|l| l.starts_with(key)).ok_or(format!("missing {key}"));
    let num = |i: usize, j: usize| lines[i].split_whitespace().nth(j).and_then(|s| s.parse::<usize>().ok()).unwrap_or(0);
    let p = at("POINTS ")?;
    let c = at("CELLS ")?;
    let t = at("CELL_TYPES ")?;
    let (np, nc) = (num(p, 1), num(c, 1));
    if c != p + 1 + np || t != c + 1 + nc || num(t, 1) != nc {
        return Err("inconsistent vtk section sizes".into());
    }
    if !lines[t + 1..t + 1 + nc].iter().all(|l| *l == cell_type) {
        return Err(format!("cell types are not {cell_type}"));
    }
    for l in &lines[c + 1..c + 1 + nc] {
        let ids: Vec<usize> = l.split_whitespace().map(|s| s.parse().unwrap()).collect();
        if ids[0] + 1 != ids.len() || ids[1..].iter().any(|&i| i >= np) {
            return Err("bad cell connectivity".into());
        }
    }
    Ok(())
}

fn determinism() -> Verdict {
    let commands: [&[&str]; 7] = [
        &["mesh"],
        &["search", "--queries", "500"],
        &["ghost", "--dump"],
        &["iterate", "--dump"],
        &["iterate", "--closed"],
        &["lnodes", "--order", "2", "--dump"],
        &["stats"],
    ];
    let configs: [&[&str]; 3] = [
        &["--dim", "2", "--ranks", "3", "--recipe", "fractal", "--seed", "3"],
        &["--dim", "3", "--ranks", "4", "--recipe", "corner", "--level", "1", "--depth", "2"],
        &["--dim", "2", "--ranks", "2", "--conn", "brick:2x1", "--periodic", "x", "--recipe", "fractal"],
    ];
    let tmp = std::env::temp_dir().join(format!("octforest-acceptance-{}", std::process::id()));
    let mut runs = 0;
    for (ci, cfg) in configs.iter().enumerate() {
        for cmd in commands {
            let mut outs = Vec::new();
            for (ri, sched) in ["round-robin", "round-robin", "parallel"].iter().enumerate() {
                let dir = tmp.join(format!("{ci}-{}-{ri}", cmd[0]));
                std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
                let mut args: Vec<&str> = cfg.to_vec();
                args.extend(["--schedule", sched]);
                args.extend(cmd.iter());
                let v = cli(&args, Some(&dir))?;
                outs.push((normalized(v), files(&dir)));
                runs += 1;
            }
            if outs[0] != outs[1] || outs[0] != outs[2] {
                return Err(format!("config {ci} {cmd:?}: outputs differ"));
            }
            let cell = if cfg[1] == "2" { "8" } else { "11" };
            for (name, body) in &outs[0].1 {
                let text = String::from_utf8_lossy(body);
                match name.as_str() {
                    "mesh.vtk" => vtk_schema(&text, cell)?,
                    "nodes.vtk" => vtk_schema(&text, "1")?,
                    n if n.ends_with(".json") => {
                        serde_json::from_str::<Value>(&text).map_err(|e| format!("{n}: {e}"))?;
                    }
                    _ => {}
                }
            }
        }
    }
    let _ = std::fs::remove_dir_all(&tmp);
    Ok(format!("{runs} runs, outputs identical"))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 12] = [
        ("octant kernel exhaustive laws", octant_kernel),
        ("split_array vs linear scan", split),
        ("find_range_boundaries vs atom enumeration", range_boundaries),
        ("ghost layers on unbalanced forests", ghosts),
        ("iterate oracle equivalence", iterate_oracles),
        ("iterate operation count growth", iterate_growth),
        ("lnodes closed-form node counts", closed_forms),
        ("lnodes partition independence", partition_independence),
        ("lnodes continuity and hanging coverage", continuity),
        ("sharer symmetry and communication pattern", sharers),
        ("search correctness and batching", search_all),
        ("cli determinism", determinism),
    ];
    let start = Instant::now();
    let results: Vec<(Verdict, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|&(_, f)| {
                s.spawn(move || {
                    let t = Instant::now();
                    let v = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
                    (v, t.elapsed().as_secs_f64())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut failed = 0;
    for (i, ((name, _), (v, secs))) in criteria.iter().zip(&results).enumerate() {
        match v {
            Ok(msg) => println!("criterion {:>2}: PASS  {name}: {msg} ({secs:.1}s)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2}: FAIL  {name}: {msg} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("acceptance: {} of 12 passed in {:.1}s", 12 - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
