//! The `lamp` command-line interface.
//!
//! One binary wires the whole pipeline together: validate a data file,
//! materialise and analyse meta-path sub-graphs, train the model,
//! evaluate stored embeddings, and run the meta-path sensitivity study.
//! Every invocation resolves one [`TrainConfig`] — defaults, then
//! `--config`, then `--seed` — and prints its hash first, so any artefact
//! can be traced back to the exact settings that produced it.
//!
//! Exit codes are part of the contract: `0` success, `1` usage error,
//! `2` data or validation error, `3` numeric failure. Identical command
//! lines over identical files produce byte-identical output files; no
//! artefact embeds a timestamp.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::autodiff::params::{save_checkpoint, CheckpointError};
use crate::config::{ConfigError, TrainConfig};
use crate::eval::{self, EvalError};
use crate::hin::{Hin, HinError};
use crate::lma;
use crate::metapath::{
    self, IntegratedSubGraph, MaterializeOptions, MetaPathError, MetaPathSubGraph,
};
use crate::train::{self, TrainError};

/// Process exit codes of the `lamp` binary.
pub mod exit {
    /// Success.
    pub const OK: i32 = 0;
    /// Usage error: unknown flags or a malformed command line.
    pub const USAGE: i32 = 1;
    /// Data or validation error.
    pub const DATA: i32 = 2;
    /// Numeric failure: a non-finite loss or embedding.
    pub const NUMERIC: i32 = 3;
}

/// Anything a subcommand can fail with, mapped onto the exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Hin(#[from] HinError),
    #[error(transparent)]
    MetaPath(#[from] MetaPathError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
    #[error("validation found {errors} error(s)")]
    Invalid { errors: usize },
    #[error("{0} sensitivity combination(s) failed; see the written report")]
    CombinationsFailed(usize),
}

impl CliError {
    /// The process exit code this error maps to.
    pub fn exit_code(&self) -> i32 {
        fn train_code(e: &TrainError) -> i32 {
            match e {
                TrainError::NonFinite { .. } | TrainError::BadEmbeddings => exit::NUMERIC,
                _ => exit::DATA,
            }
        }
        match self {
            CliError::Train(e) => train_code(e),
            CliError::Eval(EvalError::Train(e)) => train_code(e),
            _ => exit::DATA,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lamp",
    version,
    about = "Meta-path guided contrastive representation learning for heterogeneous graphs"
)]
struct Cli {
    /// Root random seed (overrides the config file's `seed`).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Hyper-parameter file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a data file against every structural invariant.
    Validate {
        /// HIN document (JSON).
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
    /// Build one sub-graph per meta-path and report its size.
    Materialize {
        /// HIN document (JSON).
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Meta-path spec, shorthand (`PAP`) or explicit (`PAP=PA,~PA`);
        /// repeatable, and shorthand lists may be comma-separated.
        #[arg(long, value_name = "SPEC", required = true)]
        metapaths: Vec<String>,
        /// Skip instance counting (boolean reachability only).
        #[arg(long)]
        no_counts: bool,
        /// Densest intermediate product allowed during composition.
        #[arg(long, value_name = "N")]
        density_budget: Option<usize>,
        /// Directory for one `NAME.tsv` edge list per meta-path.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Union the meta-path sub-graphs into one encoded graph.
    Integrate {
        /// HIN document (JSON).
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Meta-path spec (see `materialize`).
        #[arg(long, value_name = "SPEC", required = true)]
        metapaths: Vec<String>,
        /// Directory for `integrated.tsv`.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Per-path statistics and pairwise overlap of meta-path sub-graphs.
    Analyze {
        /// HIN document (JSON).
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Meta-path spec (see `materialize`).
        #[arg(long, value_name = "SPEC", required = true)]
        metapaths: Vec<String>,
        /// Directory for `analysis.tsv` (also printed to stdout).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train the model and store checkpoint, embeddings, and log.
    Train {
        /// HIN document (JSON).
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Meta-path spec (see `materialize`).
        #[arg(long, value_name = "SPEC", required = true)]
        metapaths: Vec<String>,
        /// Output directory (checkpoint, embeddings.csv, log.jsonl,
        /// run_info.json).
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also write the final augmented graph as `augmented.tsv`.
        #[arg(long)]
        dump_augmented: bool,
    },
    /// Score stored embeddings on the labelled target nodes.
    Eval {
        #[command(subcommand)]
        task: EvalTask,
    },
    /// Train every meta-path combination and rank them by probe F1.
    Sensitivity {
        /// HIN document (JSON).
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Meta-path spec (see `materialize`).
        #[arg(long, value_name = "SPEC", required = true)]
        metapaths: Vec<String>,
        /// Smallest combination size to enumerate.
        #[arg(long, value_name = "N", default_value_t = 1)]
        min_size: usize,
        /// Training runs per combination.
        #[arg(long, value_name = "N", default_value_t = 3)]
        runs: usize,
        /// Also run the no-integration baseline (independent per-path
        /// models, mean-pooled embeddings) on the same seeds.
        #[arg(long)]
        baseline: bool,
        /// Directory for `report.json` and `ranking.tsv`.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum EvalTask {
    /// Linear-probe classification over a seeded stratified split.
    Classify {
        /// Embedding table written by `train` (`id,e0,...` CSV).
        #[arg(long, value_name = "CSV")]
        embeddings: PathBuf,
        /// HIN document carrying the labels.
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Directory for `classify.json` (also printed to stdout).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Seeded k-means agreement with the labels.
    Cluster {
        /// Embedding table written by `train` (`id,e0,...` CSV).
        #[arg(long, value_name = "CSV")]
        embeddings: PathBuf,
        /// HIN document carrying the labels.
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Restarts to average over.
        #[arg(long, value_name = "N", default_value_t = 10)]
        runs: usize,
        /// Directory for `cluster.json` (also printed to stdout).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

/// Parses `argv` and runs the requested subcommand, returning the process
/// exit code. The binary's `main` is a thin wrapper around this.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit::OK,
                _ => exit::USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli.config.as_deref(), cli.seed)?;
    println!("config {}", cfg.hash());
    match cli.command {
        Command::Validate { data } => cmd_validate(&data),
        Command::Materialize {
            data,
            metapaths,
            no_counts,
            density_budget,
            out,
        } => cmd_materialize(&data, &metapaths, no_counts, density_budget, out.as_deref()),
        Command::Integrate {
            data,
            metapaths,
            out,
        } => cmd_integrate(&data, &metapaths, out.as_deref()),
        Command::Analyze {
            data,
            metapaths,
            out,
        } => cmd_analyze(&data, &metapaths, out.as_deref()),
        Command::Train {
            data,
            metapaths,
            out,
            dump_augmented,
        } => cmd_train(&data, &metapaths, &out, dump_augmented, cfg),
        Command::Eval { task } => match task {
            EvalTask::Classify {
                embeddings,
                data,
                out,
            } => cmd_eval_classify(&embeddings, &data, out.as_deref(), cfg.seed),
            EvalTask::Cluster {
                embeddings,
                data,
                runs,
                out,
            } => cmd_eval_cluster(&embeddings, &data, runs, out.as_deref(), cfg.seed),
        },
        Command::Sensitivity {
            data,
            metapaths,
            min_size,
            runs,
            baseline,
            out,
        } => cmd_sensitivity(&data, &metapaths, min_size, runs, baseline, &out, &cfg),
    }
}

fn resolve_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig, CliError> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_validate(data: &Path) -> Result<(), CliError> {
    let hin = Hin::load(data)?;
    let report = hin.validate();
    println!("{report}");
    if report.is_clean() {
        Ok(())
    } else {
        Err(CliError::Invalid {
            errors: report.errors.len(),
        })
    }
}

fn cmd_materialize(
    data: &Path,
    specs: &[String],
    no_counts: bool,
    density_budget: Option<usize>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let hin = Hin::load(data)?;
    let mps = metapath::parse_metapath_args(specs, &hin)?;
    let mut opts = MaterializeOptions {
        count_instances: !no_counts,
        ..MaterializeOptions::default()
    };
    if let Some(b) = density_budget {
        opts.density_budget = b;
    }
    if let Some(dir) = out {
        ensure_dir(dir)?;
    }
    for mp in &mps {
        let g = metapath::materialize(&hin, mp, &opts)?;
        match &g.counts {
            Some(c) => println!(
                "{}\tedges\t{}\tinstances\t{}",
                g.name,
                g.edges.len(),
                c.iter().sum::<u64>()
            ),
            None => println!("{}\tedges\t{}", g.name, g.edges.len()),
        }
        if let Some(dir) = out {
            write_text(&dir.join(artifact_name(&g.name)?), &subgraph_tsv(&hin, &g))?;
        }
    }
    Ok(())
}

fn cmd_integrate(data: &Path, specs: &[String], out: Option<&Path>) -> Result<(), CliError> {
    let hin = Hin::load(data)?;
    let mps = metapath::parse_metapath_args(specs, &hin)?;
    let opts = MaterializeOptions::default();
    let subs = mps
        .iter()
        .map(|mp| metapath::materialize(&hin, mp, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    let isg = metapath::integrate(&subs)?;
    println!(
        "integrated\tedges\t{}\tmetapaths\t{}",
        isg.edges.len(),
        isg.n_metapaths()
    );
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_text(&dir.join("integrated.tsv"), &integrated_tsv(&hin, &isg))?;
    }
    Ok(())
}

fn cmd_analyze(data: &Path, specs: &[String], out: Option<&Path>) -> Result<(), CliError> {
    let hin = Hin::load(data)?;
    let mps = metapath::parse_metapath_args(specs, &hin)?;
    let opts = MaterializeOptions::default();
    let subs = mps
        .iter()
        .map(|mp| metapath::materialize(&hin, mp, &opts))
        .collect::<Result<Vec<_>, _>>()?;

    // Four columns: metric, first operand, second operand (empty for
    // per-path rows), value (`-` when undefined, e.g. unlabelled data).
    let mut t = String::from("metric\ta\tb\tvalue\n");
    for g in &subs {
        let _ = writeln!(t, "edges\t{}\t\t{}", g.name, g.edges.len());
        if let Some(c) = &g.counts {
            let _ = writeln!(t, "instances\t{}\t\t{}", g.name, c.iter().sum::<u64>());
        }
        let h = metapath::homophily_ratio(g, &hin)
            .map(|v| v.to_string())
            .unwrap_or_else(|_| "-".into());
        let _ = writeln!(t, "homophily\t{}\t\t{}", g.name, h);
    }
    for i in 0..subs.len() {
        for j in i + 1..subs.len() {
            let v = metapath::jaccard(&subs[i], &subs[j])
                .map(|v| v.to_string())
                .unwrap_or_else(|_| "-".into());
            let _ = writeln!(t, "jaccard\t{}\t{}\t{}", subs[i].name, subs[j].name, v);
        }
    }
    for a in &subs {
        for b in &subs {
            if a.name == b.name {
                continue;
            }
            let v = metapath::coverage(a, b)
                .map(|v| v.to_string())
                .unwrap_or_else(|_| "-".into());
            let _ = writeln!(t, "coverage\t{}\t{}\t{}", a.name, b.name, v);
        }
    }
    print!("{t}");
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_text(&dir.join("analysis.tsv"), &t)?;
    }
    Ok(())
}

fn cmd_train(
    data: &Path,
    specs: &[String],
    out: &Path,
    dump_augmented: bool,
    cfg: TrainConfig,
) -> Result<(), CliError> {
    let hin = Hin::load(data)?;
    let mps = metapath::parse_metapath_args(specs, &hin)?;
    ensure_dir(out)?;
    let model = train::train(&hin, &mps, cfg.clone())?;

    write_text(
        &out.join("embeddings.csv"),
        &embeddings_csv(&hin, &model.embeddings, model.dim),
    )?;

    let mut log = String::new();
    for rec in &model.log {
        log.push_str(&serde_json::to_string(rec)?);
        log.push('\n');
    }
    write_text(&out.join("log.jsonl"), &log)?;

    let retention = if model.inference.p.is_empty() {
        0.0
    } else {
        model.inference.p.iter().sum::<f64>() / model.inference.p.len() as f64
    };
    let described: Vec<String> = mps.iter().map(|m| m.describe(&hin)).collect();
    let info = serde_json::json!({
        "config": cfg.canonical_text(),
        "config_hash": cfg.hash(),
        "embedding_dim": model.dim,
        "epochs": model.log.len(),
        "final_loss": model.log.last().map(|r| r.j_step1),
        "metapaths": described,
        "retention_mean": retention,
        "stop": model.stop.to_string(),
        "targets": hin.target_count(),
    });
    write_text(
        &out.join("run_info.json"),
        &format!("{}\n", serde_json::to_string_pretty(&info)?),
    )?;

    let mut extra = serde_json::Map::new();
    extra.insert("config_hash".into(), cfg.hash().into());
    extra.insert("metapaths".into(), described.clone().into());
    save_checkpoint(
        &model.store,
        &out.join("checkpoint.bin"),
        &out.join("checkpoint.json"),
        extra,
    )?;

    if dump_augmented {
        let mut buf = Vec::new();
        lma::write_augmented_tsv(
            &mut buf,
            &hin,
            &model.inference.graph,
            &model.inference.omega,
            &model.inference.p,
        )
        .map_err(|e| CliError::Io {
            path: out.join("augmented.tsv").display().to_string(),
            source: e,
        })?;
        write_bytes(&out.join("augmented.tsv"), &buf)?;
    }

    println!("trained {} epoch(s); {}", model.log.len(), model.stop);
    if let Some(rec) = model.log.last() {
        println!("final loss {}", rec.j_step1);
    }
    println!("retention mean {retention}");
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_eval_classify(
    embeddings: &Path,
    data: &Path,
    out: Option<&Path>,
    seed: u64,
) -> Result<(), CliError> {
    let hin = Hin::load(data)?;
    let (z, dim) = read_embeddings(embeddings, &hin)?;
    let metrics = eval::probe_on_hin(&hin, &z, dim, seed)?;
    emit_metrics(&metrics, out, "classify.json")
}

fn cmd_eval_cluster(
    embeddings: &Path,
    data: &Path,
    runs: usize,
    out: Option<&Path>,
    seed: u64,
) -> Result<(), CliError> {
    if runs == 0 {
        return Err(CliError::Data("--runs must be at least 1".into()));
    }
    let hin = Hin::load(data)?;
    let (z, dim) = read_embeddings(embeddings, &hin)?;
    let metrics = eval::cluster_on_hin(&hin, &z, dim, seed, runs)?;
    emit_metrics(&metrics, out, "cluster.json")
}

fn emit_metrics(
    metrics: &impl serde::Serialize,
    out: Option<&Path>,
    file: &str,
) -> Result<(), CliError> {
    let json = format!("{}\n", serde_json::to_string_pretty(metrics)?);
    print!("{json}");
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_text(&dir.join(file), &json)?;
    }
    Ok(())
}

fn cmd_sensitivity(
    data: &Path,
    specs: &[String],
    min_size: usize,
    runs: usize,
    baseline: bool,
    out: &Path,
    cfg: &TrainConfig,
) -> Result<(), CliError> {
    if runs == 0 {
        return Err(CliError::Data("--runs must be at least 1".into()));
    }
    let hin = Hin::load(data)?;
    let mps = metapath::parse_metapath_args(specs, &hin)?;
    ensure_dir(out)?;

    let report = eval::sensitivity_study(&hin, &mps, cfg, min_size, runs)?;
    write_report(out, "report.json", "ranking.tsv", &report)?;
    println!(
        "combinations {}\tstd {}\tgap {}",
        report.combinations.len(),
        report.aggregate_std,
        report.gap
    );
    let mut failed = report
        .combinations
        .iter()
        .filter(|c| c.error.is_some())
        .count();

    if baseline {
        let base = eval::baseline_study(&hin, &mps, cfg, min_size, runs)?;
        write_report(out, "baseline_report.json", "baseline_ranking.tsv", &base)?;
        println!(
            "baseline combinations {}\tstd {}\tgap {}",
            base.combinations.len(),
            base.aggregate_std,
            base.gap
        );
        failed += base
            .combinations
            .iter()
            .filter(|c| c.error.is_some())
            .count();
    }

    if failed > 0 {
        Err(CliError::CombinationsFailed(failed))
    } else {
        Ok(())
    }
}

fn write_report(
    dir: &Path,
    json_name: &str,
    tsv_name: &str,
    report: &eval::SensitivityReport,
) -> Result<(), CliError> {
    write_text(
        &dir.join(json_name),
        &format!("{}\n", serde_json::to_string_pretty(report)?),
    )?;
    let mut tsv = Vec::new();
    eval::write_sensitivity_tsv(&mut tsv, report).map_err(|e| CliError::Io {
        path: dir.join(tsv_name).display().to_string(),
        source: e,
    })?;
    write_bytes(&dir.join(tsv_name), &tsv)
}

// ---------------------------------------------------------------------------
// Artefact formats
// ---------------------------------------------------------------------------

/// Meta-path names double as file names; refuse anything that would
/// escape the output directory.
fn artifact_name(name: &str) -> Result<String, CliError> {
    if name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(CliError::Data(format!(
            "meta-path name `{name}` cannot be used as a file name"
        )));
    }
    Ok(format!("{name}.tsv"))
}

fn subgraph_tsv(hin: &Hin, g: &MetaPathSubGraph) -> String {
    let offset = hin.target_range().start;
    let mut s = String::new();
    match &g.counts {
        Some(counts) => {
            s.push_str("u\tv\tcount\n");
            for (k, &(u, v)) in g.edges.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}",
                    hin.original_id(offset + u),
                    hin.original_id(offset + v),
                    counts[k]
                );
            }
        }
        None => {
            s.push_str("u\tv\n");
            for &(u, v) in &g.edges {
                let _ = writeln!(
                    s,
                    "{}\t{}",
                    hin.original_id(offset + u),
                    hin.original_id(offset + v)
                );
            }
        }
    }
    s
}

fn integrated_tsv(hin: &Hin, g: &IntegratedSubGraph) -> String {
    let offset = hin.target_range().start;
    let mut s = String::from("u\tv\te_bits\n");
    for (k, &(u, v)) in g.edges.iter().enumerate() {
        let bits: String = (0..g.n_metapaths())
            .map(|p| if g.has_path(k, p) { '1' } else { '0' })
            .collect();
        let _ = writeln!(
            s,
            "{}\t{}\t{}",
            hin.original_id(offset + u),
            hin.original_id(offset + v),
            bits
        );
    }
    s
}

fn embeddings_csv(hin: &Hin, z: &[f64], dim: usize) -> String {
    let mut s = String::from("id");
    for j in 0..dim {
        let _ = write!(s, ",e{j}");
    }
    s.push('\n');
    let offset = hin.target_range().start;
    for t in 0..hin.target_count() {
        s.push_str(hin.original_id(offset + t));
        for j in 0..dim {
            let _ = write!(s, ",{}", z[t * dim + j]);
        }
        s.push('\n');
    }
    s
}

/// Reads an `id,e0,...` CSV back into a row-per-target matrix. Every
/// target node must have exactly one row.
fn read_embeddings(path: &Path, hin: &Hin) -> Result<(Vec<f64>, usize), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let at = |line_no: usize| format!("{}:{line_no}", path.display());
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: empty embeddings file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"id") || cols.len() < 2 {
        return Err(CliError::Data(format!(
            "{}: expected an `id,e0,...` header, got `{header}`",
            path.display()
        )));
    }
    let dim = cols.len() - 1;
    let range = hin.target_range();
    let offset = range.start;
    let t = hin.target_count();
    let mut z = vec![0.0; t * dim];
    let mut seen = vec![false; t];
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != dim + 1 {
            return Err(CliError::Data(format!(
                "{}: expected {} columns, got {}",
                at(line_no),
                dim + 1,
                parts.len()
            )));
        }
        let node = hin
            .dense_id(parts[0])
            .filter(|d| range.contains(d))
            .ok_or_else(|| {
                CliError::Data(format!(
                    "{}: `{}` is not a target node of the data file",
                    at(line_no),
                    parts[0]
                ))
            })?;
        let local = node - offset;
        if seen[local] {
            return Err(CliError::Data(format!(
                "{}: duplicate row for `{}`",
                at(line_no),
                parts[0]
            )));
        }
        seen[local] = true;
        for (j, raw) in parts[1..].iter().enumerate() {
            z[local * dim + j] = raw.parse::<f64>().map_err(|_| {
                CliError::Data(format!("{}: `{raw}` is not a number", at(line_no)))
            })?;
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(CliError::Data(format!(
            "{}: no embedding row for target `{}`",
            path.display(),
            hin.original_id(offset + missing)
        )));
    }
    Ok((z, dim))
}

// ---------------------------------------------------------------------------
// Filesystem helpers
// ---------------------------------------------------------------------------

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_bytes(path, text.as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Hin {
        Hin::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/toy_acm.json")).unwrap()
    }

    #[test]
    fn config_resolution_layers_seed_over_file() {
        let cfg = resolve_config(None, None).unwrap();
        assert_eq!(cfg, TrainConfig::default());
        let cfg = resolve_config(None, Some(99)).unwrap();
        assert_eq!(cfg.seed, 99);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg");
        fs::write(&path, "seed = 5\nepochs = 7\n").unwrap();
        let cfg = resolve_config(Some(&path), None).unwrap();
        assert_eq!((cfg.seed, cfg.epochs), (5, 7));
        let cfg = resolve_config(Some(&path), Some(11)).unwrap();
        assert_eq!((cfg.seed, cfg.epochs), (11, 7));
    }

    #[test]
    fn embeddings_round_trip_through_csv() {
        let hin = toy();
        let z: Vec<f64> = (0..6).map(|i| i as f64 * 0.25 - 0.6).collect();
        let csv = embeddings_csv(&hin, &z, 2);
        assert!(csv.starts_with("id,e0,e1\np0,"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.csv");
        fs::write(&path, &csv).unwrap();
        let (back, dim) = read_embeddings(&path, &hin).unwrap();
        assert_eq!(dim, 2);
        assert_eq!(back, z);
    }

    #[test]
    fn embeddings_reader_rejects_bad_tables() {
        let hin = toy();
        let dir = tempfile::tempdir().unwrap();
        let check = |name: &str, content: &str, needle: &str| {
            let path = dir.path().join(name);
            fs::write(&path, content).unwrap();
            let err = read_embeddings(&path, &hin).unwrap_err().to_string();
            assert!(err.contains(needle), "{err}");
        };
        check("h.csv", "x,e0\np0,1\n", "header");
        check("m.csv", "id,e0\np0,1\np1,2\n", "no embedding row for target `p2`");
        check("a.csv", "id,e0\na0,1\n", "not a target node");
        check(
            "d.csv",
            "id,e0\np0,1\np0,2\np1,0\np2,0\n",
            "duplicate row",
        );
        check("n.csv", "id,e0\np0,abc\np1,0\np2,0\n", "is not a number");
        check("c.csv", "id,e0\np0\np1,0\np2,0\n", "columns");
    }

    #[test]
    fn subgraph_and_integrated_tables_use_original_ids() {
        let hin = toy();
        let opts = MaterializeOptions::default();
        let pap =
            metapath::materialize(&hin, &metapath::MetaPath::parse("PAP", &hin).unwrap(), &opts)
                .unwrap();
        let psp =
            metapath::materialize(&hin, &metapath::MetaPath::parse("PSP", &hin).unwrap(), &opts)
                .unwrap();
        assert_eq!(subgraph_tsv(&hin, &pap), "u\tv\tcount\np0\tp1\t1\np1\tp2\t1\n");
        let isg = metapath::integrate(&[pap, psp]).unwrap();
        assert_eq!(
            integrated_tsv(&hin, &isg),
            "u\tv\te_bits\np0\tp1\t10\np0\tp2\t01\np1\tp2\t10\n"
        );
    }

    #[test]
    fn artifact_names_reject_path_separators() {
        assert!(artifact_name("PAP").is_ok());
        assert!(artifact_name("a/b").is_err());
        assert!(artifact_name("..").is_err());
    }

    #[test]
    fn exit_codes_follow_the_contract() {
        let numeric = CliError::Train(TrainError::BadEmbeddings);
        assert_eq!(numeric.exit_code(), exit::NUMERIC);
        let data = CliError::Data("x".into());
        assert_eq!(data.exit_code(), exit::DATA);
        let nested = CliError::Eval(EvalError::NoLabels);
        assert_eq!(nested.exit_code(), exit::DATA);
    }

    #[test]
    fn bad_flags_and_help_map_to_the_right_codes() {
        assert_eq!(run(["lamp", "--bogus"]), exit::USAGE);
        assert_eq!(run(["lamp", "train", "--no-such-flag"]), exit::USAGE);
        assert_eq!(run(["lamp", "--help"]), exit::OK);
        assert_eq!(run(["lamp", "eval", "--help"]), exit::OK);
    }
}
