use clap::Parser;
use kinswarm_cli::config::{load, split_overrides};
use kinswarm_cli::run::run;
use kinswarm_cli::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Runs one experiment from a JSON configuration. Any `--a.b=value` flag
/// overrides the field at that dotted path.
#[derive(Parser, Debug)]
#[command(name = "kinswarm", version)]
struct Args {
    /// Configuration document.
    #[arg(long)]
    config: PathBuf,
    /// Parent of the run directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `sim.noise.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replica parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn real_main() -> Result<(), CliError> {
    let (rest, mut overrides) = split_overrides(std::env::args().collect())?;
    let args = Args::try_parse_from(rest).unwrap_or_else(|e| e.exit());
    if let Some(k) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("--threads: {e}")))?;
    }
    if let Some(seed) = args.seed {
        overrides.push(("sim.noise.master_seed".into(), seed.to_string()));
    }
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", args.config.display())))?;
    let cfg = load(&text, &overrides)?;
    let (dir, report) = run(&cfg, args.out.as_deref())?;
    let passed = report.checks.iter().filter(|c| c.pass).count();
    eprintln!("{passed}/{} checks passed", report.checks.len());
    for c in report.checks.iter().filter(|c| !c.pass) {
        eprintln!("failed: {} = {}", c.name, c.value);
    }
    println!("{}", dir.display());
    Ok(())
}
