use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memdarcy::cli_io::{self, RunConfig, EXIT_OK, EXIT_PROPERTY};
use memdarcy::Result;

#[derive(Parser)]
#[command(name = "memdarcy", version, about = "Darcy's law with memory from cell problems with dynamic slip")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `[output] directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise seed, overriding `[noise] seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Mesh the unit cell and write a summary.
    Mesh(Common),
    /// Solve the cell problems and write the kernel table.
    CellKernels(Common),
    /// Integrate the macroscopic problem with a precomputed kernel table.
    DarcyRun {
        #[command(flatten)]
        common: Common,
        /// Kernel table written by `cell-kernels`.
        #[arg(long)]
        kernels: PathBuf,
        /// Monte Carlo mode over noise paths 0..R-1.
        #[arg(long)]
        paths: Option<usize>,
        /// Also render snapshots as SVG.
        #[arg(long)]
        svg: bool,
    },
    /// Compare fine-scale simulations against the homogenized run.
    MicroCompare(Common),
    /// Run the built-in validation suite.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Common {
    fn load(&self) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::with_cell(Default::default()),
        };
        if let Some(seed) = self.seed {
            cfg.noise.seed = seed;
        }
        let out = self.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
        Ok((cfg, out))
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serialises"));
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Mesh(common) => {
            let (cfg, out) = common.load()?;
            print_json(&cli_io::cmd_mesh(&cfg, &out)?);
            Ok(EXIT_OK)
        }
        Command::CellKernels(common) => {
            let (cfg, out) = common.load()?;
            let outcome = cli_io::cmd_cell_kernels(&cfg, &out)?;
            print_json(&outcome);
            Ok(if outcome.passed { EXIT_OK } else { EXIT_PROPERTY })
        }
        Command::DarcyRun {
            common,
            kernels,
            paths,
            svg,
        } => {
            let (cfg, out) = common.load()?;
            let svg = svg || cfg.output.svg;
            print_json(&cli_io::cmd_darcy_run(&cfg, &kernels, &out, paths, svg)?);
            Ok(EXIT_OK)
        }
        Command::MicroCompare(common) => {
            let (cfg, out) = common.load()?;
            print_json(&cli_io::cmd_micro_compare(&cfg, &out)?);
            Ok(EXIT_OK)
        }
        Command::Validate { seed, out } => {
            let report = cli_io::cmd_validate(seed, None)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let text = serde_json::to_string_pretty(&report).expect("report serialises");
                std::fs::write(dir.join("validation.json"), text)?;
            }
            print_json(&report);
            Ok(if report.passed { EXIT_OK } else { EXIT_PROPERTY })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("MEMDARCY_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            cli_io::exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
