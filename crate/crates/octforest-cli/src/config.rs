use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, ValueEnum};
use octforest::forest::uniform_leaves;
use octforest::transport::{Comm, Schedule};
use octforest::{Connectivity, Forest, Octant, Space};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Usage(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecipeKind {
    /// Every tree refined to `--level`.
    Uniform,
    /// From `--level`, refine `--depth` more times the children whose id has even parity
    /// after xor with the seed.
    Fractal,
    /// From `--level`, refine `--depth` more times towards the origin corner of tree 0.
    Corner,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleArg {
    RoundRobin,
    Parallel,
}

impl From<ScheduleArg> for Schedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::RoundRobin => Schedule::RoundRobin,
            ScheduleArg::Parallel => Schedule::Parallel,
        }
    }
}

/// Options shared by every subcommand; together with the subcommand they fix the output.
#[derive(Args, Clone, Debug, Serialize)]
pub struct RunConfig {
    /// Spatial dimension, 2 or 3.
    #[arg(long, global = true, default_value_t = 2)]
    pub dim: u8,
    /// Maximum refinement level (defaults to 29 in 2D and 20 in 3D).
    #[arg(long, global = true)]
    pub lmax: Option<u8>,
    /// `unitcube`, `brick:MxN[xP]`, or a connectivity JSON file.
    #[arg(long, global = true, default_value = "unitcube")]
    pub conn: String,
    /// Periodic axes of a brick, e.g. `x` or `xz`.
    #[arg(long, global = true, default_value = "")]
    pub periodic: String,
    /// Initial uniform level.
    #[arg(long, global = true, default_value_t = 2)]
    pub level: u8,
    #[arg(long, global = true, value_enum, default_value_t = RecipeKind::Uniform)]
    pub recipe: RecipeKind,
    /// Extra levels added by the fractal and corner recipes.
    #[arg(long, global = true, default_value_t = 2)]
    pub depth: u8,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Number of simulated ranks.
    #[arg(long, global = true, default_value_t = 1)]
    pub ranks: usize,
    #[arg(long, global = true, value_enum, default_value_t = ScheduleArg::RoundRobin)]
    pub schedule: ScheduleArg,
    /// Skip 2:1 balancing after refinement.
    #[arg(long, global = true)]
    pub unbalanced: bool,
    /// Directory for exported files.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Write the message trace as JSON lines to this file.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub trace: Option<PathBuf>,
}

impl RunConfig {
    pub fn space(&self) -> anyhow::Result<Space> {
        let sp = match self.lmax {
            Some(l) => Space::new(self.dim, l),
            None => Space::with_default_lmax(self.dim),
        };
        sp.map_err(|e| usage(e.to_string()))
    }

    pub fn connectivity(&self) -> anyhow::Result<Arc<Connectivity>> {
        let sp = self.space()?;
        let mut periodic = [false; 3];
        for ch in self.periodic.chars() {
            let j = "xyz".find(ch).ok_or_else(|| usage(format!("unknown periodic axis {ch:?}")))?;
            periodic[j] = true;
        }
        let conn = if self.conn == "unitcube" {
            if periodic.iter().any(|&p| p) {
                return Err(usage("the unit cube cannot be periodic"));
            }
            Connectivity::unitcube(sp)
        } else if let Some(dims) = self.conn.strip_prefix("brick:") {
            let parts: Vec<u32> = dims
                .split('x')
                .map(|s| s.parse().map_err(|_| usage(format!("bad brick extent {s:?}"))))
                .collect::<anyhow::Result<_>>()?;
            if parts.len() != self.dim as usize {
                return Err(usage(format!("brick needs {} extents", self.dim)));
            }
            let mut d = [1; 3];
            d[..parts.len()].copy_from_slice(&parts);
            Connectivity::brick(sp, d, periodic).map_err(|e| usage(e.to_string()))?
        } else {
            let text = std::fs::read_to_string(&self.conn).map_err(|e| usage(format!("{}: {e}", self.conn)))?;
            let c = Connectivity::from_json(&text).map_err(|e| usage(e.to_string()))?;
            if c.space.dim != self.dim {
                return Err(usage("connectivity dimension differs from --dim"));
            }
            c
        };
        let top = self.level + if self.recipe == RecipeKind::Uniform { 0 } else { self.depth };
        if top > conn.space.lmax {
            return Err(usage(format!("refinement to level {top} exceeds lmax {}", conn.space.lmax)));
        }
        if self.ranks == 0 {
            return Err(usage("need at least one rank"));
        }
        Ok(Arc::new(conn))
    }

    /// Coarsest uniform level with at least one leaf per rank.
    pub fn start_level(&self, conn: &Connectivity) -> anyhow::Result<u8> {
        let per = 1u64 << conn.space.d();
        let mut l = 0;
        let mut n = conn.num_trees as u64;
        while (n as usize) < self.ranks {
            l += 1;
            n *= per;
            if l > self.level {
                return Err(usage(format!("{} ranks exceed the {} leaves at level {}", self.ranks, n / per, self.level)));
            }
        }
        Ok(l)
    }

    fn wants_refine(&self, sp: &Space, o: &Octant) -> bool {
        if o.level < self.level {
            return true;
        }
        if o.level >= self.level + self.depth {
            return false;
        }
        match self.recipe {
            RecipeKind::Uniform => false,
            RecipeKind::Fractal => o.level == 0 || (sp.child_id(o) ^ (self.seed as usize % sp.num_children())).count_ones() % 2 == 0,
            RecipeKind::Corner => o.tree == 0 && o.x.iter().all(|&x| x == 0),
        }
    }

    /// Collective: build, refine, balance and partition this rank's forest.
    pub fn build(&self, conn: &Arc<Connectivity>, start: u8, c: &Comm) -> octforest::Result<Forest> {
        let sp = conn.space;
        let leaves = uniform_leaves(&sp, conn.num_trees, start);
        let mut f = Forest::from_leaves(conn.clone(), &leaves, self.ranks)?.swap_remove(c.rank());
        f.refine(true, |o| self.wants_refine(&sp, o));
        f.partition_even(c)?;
        if !self.unbalanced {
            f.balance(c)?;
            f.partition_even(c)?;
        }
        Ok(f)
    }
}
