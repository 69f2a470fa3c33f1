//! Batch driver: builds a refined, balanced, partitioned forest on simulated ranks and runs
//! one algorithm on it, printing a JSON report to stdout.

mod commands;
mod config;
mod geometry;
mod vtk;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{RunConfig, Usage};

#[derive(Parser, Debug)]
#[command(name = "octforest", version, about = "Forest-of-octrees AMR driver")]
struct Cli {
    #[command(flatten)]
    config: RunConfig,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the forest and export it (`mesh.vtk`, `forest.json`, `connectivity.json` under `--out`).
    Mesh,
    /// Locate random points on a distorted geometry, once batched and once per point.
    Search {
        #[arg(long, default_value_t = 1000)]
        queries: usize,
        /// Amplitude of the smooth distortion of each tree, in `[0, 0.5)`.
        #[arg(long, default_value_t = 0.2)]
        distortion: f64,
    },
    /// Ghost layer sizes for every codimension (or only `--k`).
    Ghost {
        #[arg(long)]
        k: Option<u8>,
        /// Write the layers to `ghost_k<k>.json`.
        #[arg(long)]
        dump: bool,
    },
    /// Count the points of the mesh partition by dimension.
    Iterate {
        /// Visit the closed locally relevant points instead of the open ones.
        #[arg(long)]
        closed: bool,
        /// Write every visited point to `points.json`.
        #[arg(long)]
        dump: bool,
    },
    /// Number the nodes of order `--order` elements.
    Lnodes {
        #[arg(long, default_value_t = 1)]
        order: u8,
        /// Write the element-node table to `lnodes.json`.
        #[arg(long)]
        dump: bool,
    },
    /// Leaf counts, level histogram and ghost sizes.
    Stats {
        #[arg(long)]
        k: Option<u8>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = &cli.config;
    let out = match &cli.command {
        Command::Mesh => commands::mesh(cfg),
        Command::Search { queries, distortion } => commands::search_demo(cfg, *queries, *distortion),
        Command::Ghost { k, dump } => commands::ghost(cfg, *k, *dump),
        Command::Iterate { closed, dump } => commands::iterate_cmd(cfg, *closed, *dump),
        Command::Lnodes { order, dump } => commands::lnodes_cmd(cfg, *order, *dump),
        Command::Stats { k } => commands::stats(cfg, *k),
    };
    match out {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("report serializes"));
            ExitCode::SUCCESS
        }
        Err(e) if e.is::<Usage>() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
