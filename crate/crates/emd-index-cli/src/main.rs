//! `nlbi`: generate corpora, build indexes, and run exact K-NN queries
//! over databases of discrete distributions under the Earth Mover's
//! Distance.
//!
//! Exit codes: 0 on success, 1 when verification fails (index audits or
//! `--oracle` mismatches), 2 on usage or input errors.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use emd_index::dataset::{load_dataset, save_dataset};
use emd_index::error::Error;
use emd_index::index::{BuildConfig, EmdIndex};
use emd_index::oracle::oracle_knn;
use emd_index::query::batch_query;
use emd_index::synthetic::{generate, Layout, SyntheticSpec};

#[derive(Parser)]
#[command(name = "nlbi", version, about = "Similarity search over distribution databases")]
struct Cli {
    /// Worker threads for parallel stages (0 uses all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Gen {
        /// Number of distributions.
        #[arg(long)]
        n_dists: usize,
        /// Bins per distribution.
        #[arg(long, default_value_t = 16)]
        bins: usize,
        /// Coordinate dimension.
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Number of cluster prototypes.
        #[arg(long, default_value_t = 8)]
        clusters: usize,
        /// Within-cluster jitter as a fraction of the extent.
        #[arg(long, default_value_t = 0.05)]
        spread: f64,
        /// Bin layout.
        #[arg(long, value_enum, default_value_t = LayoutArg::Scatter)]
        layout: LayoutArg,
        /// Coordinates live in [-extent, extent]^dim.
        #[arg(long, default_value_t = 10.0)]
        extent: f64,
        /// RNG seed; the output is byte-identical per seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an index file from a dataset.
    Build {
        /// Dataset path (native or JSON-lines format).
        dataset: PathBuf,
        /// Index output path.
        #[arg(long)]
        out: PathBuf,
        /// Number of projections (default: 2 for multi-dimensional data).
        #[arg(long)]
        projections: Option<usize>,
        /// Sub-intervals per error table (default: round(ln n)).
        #[arg(long)]
        sub_intervals: Option<usize>,
        /// Quad-tree leaf capacity (default: 100).
        #[arg(long)]
        node_capacity: Option<usize>,
        /// Rescale stored weights instead of rejecting off-by-more-than-1e-6 sums.
        #[arg(long)]
        renormalize: bool,
    },
    /// Run exact K-NN queries against an index.
    Query {
        /// Index path.
        index: PathBuf,
        /// Query file (same format as datasets).
        queries: PathBuf,
        /// Neighbors per query.
        #[arg(short, long, default_value_t = 1)]
        k: usize,
        /// Write results here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write per-query statistics as JSON lines.
        #[arg(long)]
        stats_out: Option<PathBuf>,
        /// Cross-check every result against a brute-force scan; exit 1 on
        /// any mismatch.
        #[arg(long)]
        oracle: bool,
        /// Renormalize query weights on load.
        #[arg(long)]
        renormalize: bool,
    },
    /// Sweep parameters and report per-configuration query statistics as CSV.
    Bench {
        /// Index path; sweeps rebuild from its embedded dataset.
        index: PathBuf,
        /// Query file.
        queries: PathBuf,
        /// k values to sweep.
        #[arg(short, long, value_delimiter = ',', default_value = "4")]
        k: Vec<usize>,
        /// Sub-interval counts to sweep (default: the index's own).
        #[arg(long, value_delimiter = ',')]
        sub_intervals: Vec<usize>,
        /// Node capacities to sweep (default: the index's own).
        #[arg(long, value_delimiter = ',')]
        node_capacity: Vec<usize>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Renormalize query weights on load.
        #[arg(long)]
        renormalize: bool,
    },
    /// Audit an index file: format, structure, and sampled bound soundness.
    Verify {
        /// Index path.
        index: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LayoutArg {
    Scatter,
    Grid,
}

impl From<LayoutArg> for Layout {
    fn from(v: LayoutArg) -> Self {
        match v {
            LayoutArg::Scatter => Layout::Scatter,
            LayoutArg::Grid => Layout::Grid,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let verifying = matches!(cli.command, Command::Verify { .. });
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e, verifying))
        }
    }
}

fn exit_code(e: &Error, verifying: bool) -> u8 {
    match e {
        Error::Verification(_) => 1,
        // For `verify`, an unparseable index is a failed verification, not
        // a usage mistake.
        Error::IndexFormat(_) if verifying => 1,
        _ => 2,
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: usize) -> Result<(), Error> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("cannot size the thread pool: {e}")))?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(threads: usize) -> Result<(), Error> {
    if threads > 1 {
        log::warn!("built without the parallel feature; --threads has no effect");
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Gen {
            n_dists,
            bins,
            dim,
            clusters,
            spread,
            layout,
            extent,
            seed,
            out,
        } => {
            let spec = SyntheticSpec {
                count: n_dists,
                bins,
                dim,
                clusters,
                spread,
                layout: layout.into(),
                extent,
            };
            let records = generate(&spec, seed)?;
            save_dataset(&out, &records)?;
            println!("wrote {} records to {}", records.len(), out.display());
            Ok(())
        }
        Command::Build {
            dataset,
            out,
            projections,
            sub_intervals,
            node_capacity,
            renormalize,
        } => {
            let records = load_dataset(&dataset, renormalize)?;
            let config = BuildConfig {
                projections,
                sub_intervals,
                node_capacity,
            };
            let index = EmdIndex::build(records, &config)?;
            index.save(&out)?;
            let n = index.len();
            let p = index.projections().len();
            let s = index.projections()[0].grid().count();
            println!(
                "indexed {n} records (dim {}) with {p} projections, {s} sub-intervals, node capacity {}",
                index.dim(),
                index.node_capacity()
            );
            println!(
                "summary table: {} bytes = {} reals (N x P x (3 + 2s) = {n} x {p} x {})",
                index.summary_table_bytes(),
                index.summary_table_reals(),
                3 + 2 * s
            );
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Query {
            index,
            queries,
            k,
            out,
            stats_out,
            oracle,
            renormalize,
        } => {
            let index = EmdIndex::load(&index)?;
            let query_set = load_dataset(&queries, renormalize)?;
            let (outcomes, report) = batch_query(&index, &query_set, k)?;

            let mut results = String::new();
            for (q, (res, _)) in query_set.iter().zip(&outcomes) {
                for (rank, (id, dist)) in res.neighbors.iter().enumerate() {
                    results.push_str(&format!("{}\t{}\t{}\t{}\n", q.id(), rank + 1, id, dist));
                }
            }
            write_text(out.as_ref(), &results)?;

            if let Some(path) = stats_out {
                let mut lines = String::new();
                for (q, (_, stats)) in query_set.iter().zip(&outcomes) {
                    let line = serde_json::json!({
                        "query_id": q.id(),
                        "nodes_visited": stats.nodes_visited,
                        "index_survivors": stats.index_survivors,
                        "projection_survivors": stats.projection_survivors,
                        "exact_emds": stats.exact_emds_performed,
                        "traversal_us": stats.traversal_time.as_secs_f64() * 1e6,
                        "projection_us": stats.projection_time.as_secs_f64() * 1e6,
                        "exact_us": stats.exact_time.as_secs_f64() * 1e6,
                    });
                    lines.push_str(&line.to_string());
                    lines.push('\n');
                }
                std::fs::write(path, lines)?;
            }

            eprintln!(
                "{} queries, k={k}: mean {:.1} us (median {:.1}), mean exact EMDs {:.1}, \
                 mean survivors {:.1} index / {:.1} projection, mean nodes {:.1}",
                report.queries,
                report.mean_wall_time.as_secs_f64() * 1e6,
                report.median_wall_time.as_secs_f64() * 1e6,
                report.mean_exact_emds,
                report.mean_index_survivors,
                report.mean_projection_survivors,
                report.mean_nodes_visited,
            );

            if oracle {
                for (q, (res, _)) in query_set.iter().zip(&outcomes) {
                    let expected = oracle_knn(index.dataset(), q, k)?;
                    if res.neighbors.len() != expected.len() {
                        return Err(Error::Verification(format!(
                            "query {}: {} neighbors, oracle found {}",
                            q.id(),
                            res.neighbors.len(),
                            expected.len()
                        )));
                    }
                    for (rank, (got, want)) in res.neighbors.iter().zip(&expected).enumerate() {
                        if got.0 != want.0
                            || (got.1 - want.1).abs() > 1e-9 * (1.0 + want.1.abs())
                        {
                            return Err(Error::Verification(format!(
                                "query {} rank {}: got object {} at {}, oracle says {} at {}",
                                q.id(),
                                rank + 1,
                                got.0,
                                got.1,
                                want.0,
                                want.1
                            )));
                        }
                    }
                }
                eprintln!("oracle cross-check passed for all {} queries", report.queries);
            }
            Ok(())
        }
        Command::Bench {
            index,
            queries,
            k,
            sub_intervals,
            node_capacity,
            out,
            renormalize,
        } => {
            let base = EmdIndex::load(&index)?;
            let query_set = load_dataset(&queries, renormalize)?;
            let base_s = base.projections()[0].grid().count();
            let base_cap = base.node_capacity();
            let p = base.projections().len();
            let s_list = if sub_intervals.is_empty() {
                vec![base_s]
            } else {
                sub_intervals
            };
            let cap_list = if node_capacity.is_empty() {
                vec![base_cap]
            } else {
                node_capacity
            };

            let mut csv = String::from(
                "sub_intervals,node_capacity,k,queries,mean_query_us,median_query_us,\
                 mean_nodes_visited,mean_index_survivors,mean_projection_survivors,mean_exact_emds\n",
            );
            for &s in &s_list {
                for &cap in &cap_list {
                    let rebuilt;
                    let current = if s == base_s && cap == base_cap {
                        &base
                    } else {
                        rebuilt = EmdIndex::build(
                            base.dataset().to_vec(),
                            &BuildConfig {
                                projections: Some(p),
                                sub_intervals: Some(s),
                                node_capacity: Some(cap),
                            },
                        )?;
                        &rebuilt
                    };
                    for &kk in &k {
                        let (_, report) = batch_query(current, &query_set, kk)?;
                        csv.push_str(&format!(
                            "{s},{cap},{kk},{},{:.1},{:.1},{:.1},{:.1},{:.1},{:.1}\n",
                            report.queries,
                            report.mean_wall_time.as_secs_f64() * 1e6,
                            report.median_wall_time.as_secs_f64() * 1e6,
                            report.mean_nodes_visited,
                            report.mean_index_survivors,
                            report.mean_projection_survivors,
                            report.mean_exact_emds,
                        ));
                    }
                }
            }
            write_text(out.as_ref(), &csv)?;
            Ok(())
        }
        Command::Verify { index } => {
            let report = EmdIndex::verify_file(&index)?;
            println!(
                "{} records, dim {}, {} projections, sub-intervals {:?}, node capacity {}",
                report.records,
                report.dim,
                report.projections,
                report.sub_intervals,
                report.node_capacity
            );
            for check in &report.checks {
                println!("ok: {check}");
            }
            println!("verification passed");
            Ok(())
        }
    }
}

/// Writes to the path when given, otherwise to stdout.
fn write_text(path: Option<&PathBuf>, content: &str) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, content)?,
        None => std::io::stdout().write_all(content.as_bytes())?,
    }
    Ok(())
}
