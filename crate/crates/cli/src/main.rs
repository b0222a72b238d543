use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use detscale::cluster::{metrics_csv, parse_trace, simulate, summary_csv, timeline_csv, ClusterConfig, SimMode};
use detscale::estrt::checkpoint_save;
use detscale::planner::{enumerate_configs, SearchSpace, WorkloadProfile};
use detscale_cli::repro::{self, Matrix, Mode};
use detscale_cli::runlog::{bitdiff, Diff, RunLog};
use detscale_cli::train::{self, TrainSpec};

#[derive(Parser)]
#[command(name = "detscale", version, about = "Bit-exact elastic training, planning and cluster simulation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a training schedule, writing a step log and the final checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Run every scenario of a reproducibility matrix under one mode.
    Reprocheck {
        #[arg(long)]
        mode: String,
        #[arg(long)]
        matrix: PathBuf,
    },
    /// Locate the first difference between two step logs.
    Bitdiff { a: PathBuf, b: PathBuf },
    /// List the best configurations for a pool and workload profile.
    Plan {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        minp: usize,
        #[arg(long)]
        maxp: usize,
        /// Rows to print.
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Only single-type configurations.
        #[arg(long)]
        homogeneous: bool,
    },
    /// Replay a job trace and write metrics, timeline and summary CSVs.
    Simulate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Capabilities keyed by device name, for `plan`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    #[serde(default = "one")]
    mu_per_executor: f64,
    capability: BTreeMap<String, f64>,
}

fn one() -> f64 {
    1.0
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(config: &Path, out: &Path, ckpt: &Path) -> Result<ExitCode> {
    let spec = TrainSpec::from_toml(&read(config)?).with_context(|| format!("parsing {}", config.display()))?;
    let run = train::run(&spec)?;
    write(out, run.log.to_jsonl())?;
    write(ckpt, checkpoint_save(&run.state)?)?;
    println!("{} steps, final hash {}", run.log.records.len(), run.log.final_hash().unwrap_or("-"));
    Ok(ExitCode::SUCCESS)
}

fn cmd_reprocheck(mode: &str, matrix: &Path) -> Result<ExitCode> {
    let mode: Mode = mode.parse()?;
    let m = Matrix::from_toml(&read(matrix)?).with_context(|| format!("parsing {}", matrix.display()))?;
    let results = repro::run_matrix(&m, mode)?;
    print!("{}", repro::render(&results));
    let bad = results.iter().filter(|r| r.violated()).count();
    let equal = results.iter().filter(|r| r.equal()).count();
    println!("{equal}/{} bitwise equal, {bad} guarantee violation(s)", results.len());
    Ok(if bad > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_bitdiff(a: &Path, b: &Path) -> Result<ExitCode> {
    let la = RunLog::from_jsonl(&read(a)?).with_context(|| format!("parsing {}", a.display()))?;
    let lb = RunLog::from_jsonl(&read(b)?).with_context(|| format!("parsing {}", b.display()))?;
    let d = bitdiff(&la, &lb)?;
    println!("{d}");
    Ok(if d == Diff::Identical { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_plan(pool: &Path, profile: &Path, minp: usize, maxp: usize, top: usize, homogeneous: bool) -> Result<ExitCode> {
    let cfg = ClusterConfig::from_toml(&read(pool)?).with_context(|| format!("parsing {}", pool.display()))?;
    let prof: ProfileFile = toml::from_str(&read(profile)?).with_context(|| format!("parsing {}", profile.display()))?;
    let pool = cfg.pool();
    for name in prof.capability.keys() {
        if pool.index_of(name).is_none() {
            bail!("profile names unknown device `{name}`");
        }
    }
    let caps = pool.types.iter().map(|t| prof.capability.get(&t.name).copied().unwrap_or(0.0)).collect();
    let profile = WorkloadProfile::from_history(caps, prof.mu_per_executor);
    let mut space = SearchSpace::new(minp, maxp);
    space.waste_threshold = cfg.sim.waste_threshold;
    space.homogeneous = homogeneous;
    let configs = enumerate_configs(&pool, &profile, &space)?;
    if configs.is_empty() {
        println!("no feasible configuration");
        return Ok(ExitCode::from(1));
    }
    let names: Vec<&str> = pool.types.iter().map(|t| t.name.as_str()).collect();
    let mut out = format!("rank  {:<16} {:<16} {:<16} cus  waste%    perf\n", "nums", "executors", "threads");
    let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    for (i, c) in configs.iter().take(top).enumerate() {
        let _ = writeln!(
            out,
            "{:<5} {:<16} {:<16} {:<16} {:<4} {:<9.3} {:.6}",
            i + 1,
            list(&c.nums),
            list(&c.executors),
            list(&c.threads),
            c.cu_capacity,
            c.waste_norm,
            c.perf
        );
    }
    print!("types {}\n{out}", names.join(","));
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(trace: &Path, pool: &Path, mode: &str, out: &Path) -> Result<ExitCode> {
    let mode: SimMode = mode.parse()?;
    let cfg = ClusterConfig::from_toml(&read(pool)?).with_context(|| format!("parsing {}", pool.display()))?;
    let jobs = parse_trace(&read(trace)?).with_context(|| format!("parsing {}", trace.display()))?;
    let m = simulate(&jobs, &cfg, mode)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("metrics.csv"), metrics_csv(&m))?;
    write(&out.join("timeline.csv"), timeline_csv(&m))?;
    write(&out.join("summary.csv"), summary_csv(std::slice::from_ref(&m)))?;
    for (id, why) in &m.rejected {
        eprintln!("job {id} rejected: {why}");
    }
    println!(
        "{}: {} jobs, mean JCT {:.3} s, makespan {:.3} s, mean GPUs {:.3}",
        m.mode,
        m.jobs.len(),
        m.mean_jct_s,
        m.makespan_s,
        m.mean_allocated()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Train { config, out, ckpt } => cmd_train(config, out, ckpt),
        Cmd::Reprocheck { mode, matrix } => cmd_reprocheck(mode, matrix),
        Cmd::Bitdiff { a, b } => cmd_bitdiff(a, b),
        Cmd::Plan { pool, profile, minp, maxp, top, homogeneous } => cmd_plan(pool, profile, *minp, *maxp, *top, *homogeneous),
        Cmd::Simulate { trace, pool, mode, out } => cmd_simulate(trace, pool, mode, out),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
