use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use superburst_cli::config;
use superburst_cli::preset;
use superburst_cli::runner::{self, Manifest, RunReport};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "superburst", version, about = "Superradiant burst simulations of multilevel atom arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run {
        config: PathBuf,
        /// Output directory for this run.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run a figure preset bundle.
    Preset {
        name: String,
        /// Output root; the bundle goes to <root>/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Trajectory seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Exit with status 4 if any quantitative check fails.
        #[arg(long)]
        check: bool,
    },
    /// Print a manifest and verify the files it lists.
    Inspect { manifest: PathBuf },
}

struct Exit(u8, String);

fn env_root() -> Option<PathBuf> {
    std::env::var_os("SUPERBURST_OUT").filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn init_threads(threads: Option<usize>) -> Result<(), Exit> {
    if let Some(k) = threads {
        if k == 0 {
            return Err(Exit(EXIT_CONFIG, "--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Exit(EXIT_SOLVER, e.to_string()))?;
    }
    Ok(())
}

fn print_checks(report: &RunReport) -> bool {
    let mut all = true;
    for c in &report.checks {
        all &= c.pass;
        println!(
            "{} {}: {} (target {})",
            if c.pass { "PASS" } else { "FAIL" },
            c.what,
            c.value,
            c.target
        );
    }
    all
}

fn finish(report: &RunReport) -> Result<bool, Exit> {
    println!("wrote {}", report.dir.display());
    let checks_ok = print_checks(report);
    if !report.ok {
        return Err(Exit(
            EXIT_SOLVER,
            format!("solver failure: {}", report.error.as_deref().unwrap_or("unknown")),
        ));
    }
    Ok(checks_ok)
}

fn run(config_path: &Path, out: Option<PathBuf>, threads: Option<usize>) -> Result<(), Exit> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| Exit(EXIT_CONFIG, format!("cannot read {}: {e}", config_path.display())))?;
    let cfg = config::parse(&text).map_err(|e| Exit(EXIT_CONFIG, format!("{}: {e}", config_path.display())))?;
    init_threads(threads)?;
    let dir = out
        .or_else(|| env_root().map(|r| r.join(&cfg.name)))
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    let report = runner::run_to_dir(&cfg, &dir).map_err(|e| Exit(EXIT_SOLVER, format!("{e:#}")))?;
    finish(&report).map(|_| ())
}

fn run_preset(name: &str, out: Option<PathBuf>, threads: Option<usize>, seed: Option<u64>, check: bool) -> Result<(), Exit> {
    let bundle = preset::preset(name, seed).map_err(|e| Exit(EXIT_CONFIG, e.to_string()))?;
    init_threads(threads)?;
    let root = out.or_else(env_root).unwrap_or_else(|| PathBuf::from("out"));
    let report = runner::run_bundle(name, &bundle, &root.join(name)).map_err(|e| Exit(EXIT_SOLVER, format!("{e:#}")))?;
    let checks_ok = finish(&report)?;
    if check && !checks_ok {
        return Err(Exit(EXIT_CHECK, format!("{name}: quantitative checks failed")));
    }
    Ok(())
}

fn read_manifest(path: &Path) -> Result<Manifest, Exit> {
    let text = fs::read_to_string(path).map_err(|e| Exit(EXIT_CONFIG, format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Exit(EXIT_CONFIG, format!("{}: not a manifest: {e}", path.display())))
}

/// Print `path` and verify its files; returns the number of problems.
fn inspect_one(path: &Path, indent: &str) -> Result<usize, Exit> {
    let m = read_manifest(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    println!(
        "{indent}{} [{}] status={} partial={} version={} threads={} wall={:.2}s",
        m.name, m.kind, m.status, m.partial, m.version, m.threads, m.wall_time_s
    );
    println!("{indent}  config sha256 {}", m.config_sha256);
    let mut problems = usize::from(m.status != "ok");
    if let Some(e) = &m.error {
        println!("{indent}  error: {e}");
    }
    for f in &m.files {
        let state = match fs::read(dir.join(&f.path)) {
            Ok(bytes) if runner::sha256_hex(&bytes) == f.sha256 => "ok",
            Ok(_) => "MODIFIED",
            Err(_) => "MISSING",
        };
        problems += usize::from(state != "ok");
        println!("{indent}  {:<24} {:>10} bytes  {state}", f.path, f.bytes);
    }
    for c in &m.checks {
        println!(
            "{indent}  {} {}: {} (target {})",
            if c.pass { "PASS" } else { "FAIL" },
            c.what,
            c.value,
            c.target
        );
    }
    for r in &m.runs {
        problems += inspect_one(&dir.join(&r.manifest), &format!("{indent}  "))?;
    }
    Ok(problems)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, threads } => run(&config, out, threads),
        Command::Preset {
            name,
            out,
            threads,
            seed,
            check,
        } => run_preset(&name, out, threads, seed, check),
        Command::Inspect { manifest } => inspect_one(&manifest, "").and_then(|n| {
            if n == 0 {
                Ok(())
            } else {
                Err(Exit(EXIT_SOLVER, format!("{n} problem(s) found")))
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
