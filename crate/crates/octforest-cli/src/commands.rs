use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use octforest::ghost::build_ghost;
use octforest::lnodes::determine_owner_process;
use octforest::search::search;
use octforest::transport::{run_ok, Comm, Trace};
use octforest::{iterate, lnodes, Connectivity, Forest, IterOptions, IterStats, Octant, Relevance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::geometry::{Distortion, PointMatcher};
use crate::vtk;

fn hex(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn words_hash<'a>(octs: impl Iterator<Item = &'a Octant>) -> String {
    let mut h = Sha256::new();
    for o in octs {
        for w in o.to_words() {
            h.update(w.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn write(out: &Path, name: &str, body: &str) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join(name), body).with_context(|| format!("writing {name}"))
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

/// Build the configured forest on every rank and run `f` on it.
fn collective<T, F>(cfg: &RunConfig, f: F) -> anyhow::Result<(Arc<Connectivity>, Vec<T>, Trace)>
where
    T: Send,
    F: Fn(&Comm, Forest) -> octforest::Result<T> + Sync,
{
    let conn = cfg.connectivity()?;
    let start = cfg.start_level(&conn)?;
    let run = run_ok(cfg.ranks, cfg.schedule.into(), |c| {
        let forest = cfg.build(&conn, start, c)?;
        f(c, forest)
    })?;
    if let Some(p) = &cfg.trace {
        std::fs::write(p, run.trace.to_json_lines()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok((conn, run.results, run.trace))
}

fn report(name: &str, cfg: &RunConfig, trace: &Trace, body: Value) -> Value {
    let mut v = json!({ "command": name, "config": cfg, "trace_sha256": trace.hash() });
    if let (Value::Object(m), Value::Object(b)) = (&mut v, body) {
        m.extend(b);
    }
    v
}

fn level_histogram<'a>(octs: impl Iterator<Item = &'a Octant>) -> BTreeMap<u8, u64> {
    let mut h = BTreeMap::new();
    for o in octs {
        *h.entry(o.level).or_insert(0) += 1;
    }
    h
}

pub fn mesh(cfg: &RunConfig) -> anyhow::Result<Value> {
    let (conn, forests, trace) = collective(cfg, |_, f| Ok(f))?;
    let all: Vec<(Octant, usize)> = forests.iter().flat_map(|f| f.leaves().map(move |o| (*o, f.rank))).collect();
    if let Some(out) = &cfg.out {
        write(out, "mesh.vtk", &vtk::leaves(&conn, &all))?;
        write(out, "connectivity.json", &(conn.to_json() + "\n"))?;
        let fj: Vec<_> = forests.iter().map(|f| f.to_json()).collect();
        write(out, "forest.json", &pretty(&fj))?;
    }
    Ok(report(
        "mesh",
        cfg,
        &trace,
        json!({
            "trees": conn.num_trees,
            "leaves": all.len(),
            "per_rank": forests.iter().map(|f| f.num_local()).collect::<Vec<_>>(),
            "levels": level_histogram(all.iter().map(|x| &x.0)),
            "leaves_sha256": words_hash(all.iter().map(|x| &x.0)),
        }),
    ))
}

pub fn search_demo(cfg: &RunConfig, queries: usize, amplitude: f64) -> anyhow::Result<Value> {
    if !(0.0..0.5).contains(&amplitude) {
        return Err(crate::config::Usage("distortion amplitude must lie in [0, 0.5)".into()).into());
    }
    let conn = cfg.connectivity()?;
    let map = Distortion::new(conn.space.d(), amplitude);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points: Vec<(u32, [f64; 3])> = (0..queries)
        .map(|_| {
            let t = rng.gen_range(0..conn.num_trees);
            let mut x = [0.0; 3];
            for xj in x.iter_mut().take(conn.space.d()) {
                *xj = rng.gen_range(0.0..1.0);
            }
            (t, map.map(&x))
        })
        .collect();
    let (_, per_rank, trace) = collective(cfg, |_, f| {
        let sp = *f.space();
        let all: Vec<usize> = (0..points.len()).collect();
        let t0 = Instant::now();
        let mut batched = PointMatcher::new(sp, map, &points);
        search(&f, &all, &mut batched);
        let t1 = Instant::now();
        let mut single = (0u64, 0u64, 0u64, Vec::new());
        for q in 0..points.len() {
            let mut m = PointMatcher::new(sp, map, &points);
            search(&f, &[q], &mut m);
            single.0 += m.interior_visits;
            single.1 += m.interior_tests;
            single.2 += m.leaf_tests;
            single.3.extend(m.found);
        }
        let t2 = Instant::now();
        Ok((batched, single, (t1 - t0).as_secs_f64(), (t2 - t1).as_secs_f64()))
    })?;
    let mut located = vec![0u32; queries];
    let mut agree = true;
    let (mut bv, mut bt, mut bl, mut sv, mut st, mut sl) = (0, 0, 0, 0, 0, 0);
    let (mut tb, mut ts) = (0.0, 0.0);
    for (b, s, t1, t2) in &per_rank {
        for (q, _) in &b.found {
            located[*q] += 1;
        }
        let mut x = b.found.clone();
        let mut y = s.3.clone();
        x.sort();
        y.sort();
        agree &= x == y;
        bv += b.interior_visits;
        bt += b.interior_tests;
        bl += b.leaf_tests;
        sv += s.0;
        st += s.1;
        sl += s.2;
        tb += t1;
        ts += t2;
    }
    eprintln!("search: batched {tb:.6} s, single {ts:.6} s (summed over ranks)");
    Ok(report(
        "search",
        cfg,
        &trace,
        json!({
            "queries": queries,
            "distortion": amplitude,
            "located_once": located.iter().filter(|&&n| n == 1).count(),
            "batched_equals_single": agree,
            "batched": { "interior_visits": bv, "interior_tests": bt, "leaf_tests": bl },
            "single": { "interior_visits": sv, "interior_tests": st, "leaf_tests": sl },
        }),
    ))
}

pub fn ghost(cfg: &RunConfig, k: Option<u8>, dump: bool) -> anyhow::Result<Value> {
    let d = cfg.dim;
    let ks: Vec<u8> = match k {
        Some(k) => vec![k],
        None => (1..=d).collect(),
    };
    let (_, per_rank, trace) = collective(cfg, |c, f| ks.iter().map(|&k| build_ghost(&f, c, k)).collect::<octforest::Result<Vec<_>>>())?;
    let mut layers = Vec::new();
    for (i, k) in ks.iter().enumerate() {
        let counts: Vec<usize> = per_rank.iter().map(|g| g[i].len()).collect();
        layers.push(json!({ "k": k, "per_rank": counts, "total": counts.iter().sum::<usize>() }));
        if dump {
            let out = cfg.out.as_deref().unwrap_or(Path::new("."));
            let body: Vec<Value> = per_rank.iter().map(|g| json!({ "ghosts": g[i].ghosts, "owners": g[i].owners })).collect();
            write(out, &format!("ghost_k{k}.json"), &pretty(&body))?;
        }
    }
    Ok(report("ghost", cfg, &trace, json!({ "layers": layers })))
}

pub fn iterate_cmd(cfg: &RunConfig, closed: bool, dump: bool) -> anyhow::Result<Value> {
    let d = cfg.dim as usize;
    let opts = IterOptions {
        relevance: if closed { Relevance::Closed } else { Relevance::Open },
        ..IterOptions::default()
    };
    let (_, per_rank, trace) = collective(cfg, |c, f| {
        let g = build_ghost(&f, c, f.space().dim)?;
        let mut visited = vec![0u64; d + 1];
        let mut owned = vec![0u64; d + 1];
        let mut rows = Vec::new();
        let st = iterate(&f, &g, opts, |v| {
            visited[v.dim() as usize] += 1;
            if determine_owner_process(&f, &v.cell) == f.rank {
                owned[v.dim() as usize] += 1;
            }
            if dump {
                rows.push(json!({ "key": v.key(&f), "dim": v.dim(), "sides": v.sides.len() }));
            }
        })?;
        Ok((visited, owned, st, rows))
    })?;
    let mut global = vec![0u64; d + 1];
    let mut stats = IterStats::default();
    for (_, o, s, _) in &per_rank {
        for j in 0..=d {
            global[j] += o[j];
        }
        stats.interior_calls += s.interior_calls;
        stats.splits += s.splits;
        stats.leaf_searches += s.leaf_searches;
        stats.cache_hits += s.cache_hits;
        stats.callbacks += s.callbacks;
    }
    if dump {
        let out = cfg.out.as_deref().unwrap_or(Path::new("."));
        let body: Vec<&Vec<Value>> = per_rank.iter().map(|r| &r.3).collect();
        write(out, "points.json", &pretty(&body))?;
    }
    Ok(report(
        "iterate",
        cfg,
        &trace,
        json!({
            "relevance": if closed { "closed" } else { "open" },
            "points_by_dim": global,
            "visited_by_dim_per_rank": per_rank.iter().map(|r| &r.0).collect::<Vec<_>>(),
            "stats": stats,
        }),
    ))
}

pub fn lnodes_cmd(cfg: &RunConfig, order: u8, dump: bool) -> anyhow::Result<Value> {
    if order == 0 {
        return Err(crate::config::Usage("order must be at least 1".into()).into());
    }
    let (conn, per_rank, trace) = collective(cfg, |c, f| {
        let g = build_ghost(&f, c, f.space().dim)?;
        let l = lnodes(&f, &g, c, order)?;
        let leaves: Vec<Octant> = f.leaves().copied().collect();
        Ok((l, leaves))
    })?;
    let mut table: Vec<Vec<u64>> = Vec::new();
    let mut h = Sha256::new();
    let mut nodes: BTreeMap<u64, (u8, [f64; 3], usize)> = BTreeMap::new();
    let sp = conn.space;
    let n = order as usize;
    for (l, leaves) in &per_rank {
        for (j, o) in leaves.iter().enumerate() {
            let row: Vec<u64> = (0..l.nodes_per_element()).map(|k| l.global_index(j, k)).collect();
            for (k, &gi) in row.iter().enumerate() {
                h.update(gi.to_le_bytes());
                let h = sp.len(o.level) as f64;
                let mut x = [0.0; 3];
                let mut r = k;
                for (j, xj) in x.iter_mut().enumerate().take(sp.d()) {
                    *xj = o.x[j] as f64 + h * (r % (n + 1)) as f64 / n as f64;
                    r /= n + 1;
                }
                let x = vtk::position(&conn, o.tree, x);
                let owner = l.nodes[l.element(j)[k]].owner;
                let e = nodes.entry(gi).or_insert((o.level, x, owner));
                if o.level < e.0 {
                    *e = (o.level, x, owner);
                }
            }
            table.push(row);
        }
    }
    if let Some(out) = &cfg.out {
        let pts: Vec<([f64; 3], u64, usize)> = nodes.iter().map(|(&gi, &(_, x, owner))| (x, gi, owner)).collect();
        write(out, "nodes.vtk", &vtk::nodes(&pts))?;
    }
    if dump {
        let out = cfg.out.as_deref().unwrap_or(Path::new("."));
        write(out, "lnodes.json", &pretty(&table))?;
    }
    Ok(report(
        "lnodes",
        cfg,
        &trace,
        json!({
            "order": order,
            "global_nodes": per_rank[0].0.global_count,
            "owned_per_rank": per_rank.iter().map(|r| r.0.owned).collect::<Vec<_>>(),
            "elements": table.len(),
            "table_sha256": hex(h),
        }),
    ))
}

pub fn stats(cfg: &RunConfig, k: Option<u8>) -> anyhow::Result<Value> {
    let k = k.unwrap_or(cfg.dim);
    let (_, per_rank, trace) = collective(cfg, |c, f| {
        let g = build_ghost(&f, c, k)?;
        Ok((f.leaves().copied().collect::<Vec<_>>(), g.len()))
    })?;
    let n: usize = per_rank.iter().map(|r| r.0.len()).sum();
    Ok(report(
        "stats",
        cfg,
        &trace,
        json!({
            "leaves": n,
            "per_rank": per_rank.iter().map(|r| r.0.len()).collect::<Vec<_>>(),
            "levels": level_histogram(per_rank.iter().flat_map(|r| r.0.iter())),
            "ghost_k": k,
            "ghosts_per_rank": per_rank.iter().map(|r| r.1).collect::<Vec<_>>(),
        }),
    ))
}
