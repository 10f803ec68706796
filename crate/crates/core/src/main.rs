use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use tagfuzz::fuzzer::{Budget, Campaign, FuzzConfig, StackParams, SurgicalFeatures};
use tagfuzz::report::inspect;
use tagfuzz::structure::StructParams;
use tagfuzz::target::{find_target, register_reference_targets, Target};
use tagfuzz::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "tagfuzz", version, about = "Structure-inferring grey-box fuzzer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a fuzzing campaign.
    Fuzz(FuzzArgs),
    /// Print the inferred field and chunk layout of one input.
    Inspect(InspectArgs),
    /// List the built-in targets.
    Targets,
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(long)]
    target: String,
    /// Directory of seed inputs.
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long, env = "TAGFUZZ_OUT", default_value = "tagfuzz-out")]
    out: PathBuf,
    /// Execution budget.
    #[arg(long, conflicts_with = "seconds")]
    execs: Option<u64>,
    /// Wall-clock budget.
    #[arg(long)]
    seconds: Option<f64>,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0 / 15.0)]
    pr_field: f64,
    #[arg(long, default_value_t = 1.0 / 15.0)]
    pr_chunk: f64,
    #[arg(long, default_value_t = 0.1)]
    pr_i2s: f64,
    #[arg(long, default_value_t = 0.5)]
    pr_extend: f64,
    #[arg(long, default_value_t = 0.75)]
    pr_chunk12: f64,
    /// Inputs above this many bytes skip the surgical stage.
    #[arg(long, default_value_t = 3000)]
    surgical_cap: usize,
    /// Virtual microseconds charged per execution under --execs.
    #[arg(long, default_value_t = 10_000)]
    exec_cost_us: u64,
    #[arg(long)]
    no_operand_fuzz: bool,
    #[arg(long)]
    no_checksum: bool,
    #[arg(long)]
    no_struct_mutations: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    target: String,
    file: PathBuf,
    /// Emit JSON instead of text.
    #[arg(long)]
    json: bool,
    #[arg(long, default_value_t = 3000)]
    surgical_cap: usize,
}

fn target(name: &str) -> Result<Box<dyn Target>> {
    find_target(name).ok_or_else(|| Error::UnknownTarget(name.into()).into())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e).into())
}

fn load_seeds(dir: &Path) -> Result<Vec<Vec<u8>>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() {
            paths.push(p);
        }
    }
    paths.sort();
    let seeds: Vec<Vec<u8>> = paths
        .iter()
        .map(|p| read(p))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect();
    if seeds.is_empty() {
        return Err(Error::NoSeeds(dir.to_path_buf()).into());
    }
    Ok(seeds)
}

fn fuzz(a: FuzzArgs) -> Result<()> {
    let t = target(&a.target)?;
    let budget = match (a.execs, a.seconds) {
        (_, Some(s)) => Budget::Seconds(s),
        (Some(n), None) => Budget::Execs(n),
        (None, None) => Budget::Execs(100_000),
    };
    let cfg = FuzzConfig {
        budget,
        rng_seed: a.seed,
        stack: StackParams {
            pr_field: a.pr_field,
            pr_chunk: a.pr_chunk,
            structure: StructParams {
                pr_i2s: a.pr_i2s,
                pr_extend: a.pr_extend,
                pr_chunk12: a.pr_chunk12,
            },
        },
        surgical_cap: a.surgical_cap,
        us_per_exec: a.exec_cost_us,
        features: SurgicalFeatures {
            operand_fuzz: !a.no_operand_fuzz,
            checksums: !a.no_checksum,
        },
        struct_mutations: !a.no_struct_mutations,
        ..FuzzConfig::default()
    };
    cfg.validate()?;
    let seeds = load_seeds(&a.seeds)?;
    let mut c = Campaign::new(t.as_ref(), cfg, Some(&a.out))?;
    c.add_seeds(&seeds)?;
    let s = c.run()?;
    println!(
        "execs {} queue {} edges {} crashes {} checksums confirmed {} output {}",
        s.execs,
        s.queue_size,
        s.edges,
        s.crashes,
        s.checksums_confirmed,
        a.out.display()
    );
    Ok(())
}

fn run_inspect(a: InspectArgs) -> Result<()> {
    let t = target(&a.target)?;
    let input = read(&a.file)?;
    let r = inspect(t.as_ref(), &input, a.surgical_cap)
        .with_context(|| format!("inspecting {}", a.file.display()))?;
    if a.json {
        println!("{}", r.to_json()?);
    } else {
        print!("{}", r.to_text());
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Io { .. }) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Fuzz(a) => fuzz(a),
        Cmd::Inspect(a) => run_inspect(a),
        Cmd::Targets => {
            for t in register_reference_targets() {
                println!("{:<16} {}", t.name(), t.description());
            }
            Ok(())
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
