//! Command-line front end for the solver and reduced-order pipelines.
//!
//! Exit codes: 0 success, 2 validation/config error, 3 numerical failure,
//! 4 missing artifact.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nsrom::error::Error;
use nsrom::harness::{
    cmd_compare, cmd_fom, cmd_online, cmd_pod, cmd_report, cmd_rom_offline,
    parse_experiment_config, ExperimentConfig, ROMVariant,
};
use nsrom::mesh::save_mesh;

#[derive(Parser)]
#[command(
    name = "nsrom",
    about = "Time-splitting incompressible-flow solver with POD-Galerkin and hybrid RBF reduced-order models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every pipeline command: a config file plus
/// `section.key=value` overrides applied on top.
#[derive(Args)]
struct ConfigArgs {
    /// Path to a `key = value` configuration file with [section] headers
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override any config key, e.g. --set time.dt=0.01 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Shorthand for --set output.dir=...
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let text = match &self.config {
            Some(path) => std::fs::read_to_string(path).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    Error::MissingArtifact(path.display().to_string())
                } else {
                    e.into()
                }
            })?,
            None => String::new(),
        };
        let mut overrides = Vec::new();
        for raw in &self.overrides {
            let Some((k, v)) = raw.split_once('=') else {
                return Err(Error::Config(format!(
                    "--set expects KEY=VALUE, got '{raw}'"
                )));
            };
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(dir) = &self.output_dir {
            overrides.push(("output.dir".to_string(), dir.display().to_string()));
        }
        parse_experiment_config(&text, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the scenario mesh and write it as a text file
    Mesh {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output mesh path (defaults to <output dir>/mesh.txt)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full-order solver for every training/test parameter
    Fom {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Build the modal bases from stored snapshots
    Pod {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Project the operators (and fit surrogates for hybrid variants)
    RomOffline {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the intrusive reduced model online and compare to the reference
    Rom {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the hybrid reduced model online and compare to the reference
    Hybrid {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Error-vs-rank study of the intrusive model
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated list of uniform mode counts
        #[arg(long, default_value = "2,4,6,8,10,12,14,16,18,20")]
        ranks: String,
    },
    /// Collect per-run reports into one summary
    Report {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Mesh { config, out } => {
            let cfg = config.load()?;
            let mesh = cfg.build_mesh()?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = out.unwrap_or_else(|| cfg.output_dir.join("mesh.txt"));
            save_mesh(&mesh, &path)?;
            println!(
                "wrote {} ({} vertices, {} triangles)",
                path.display(),
                mesh.vertices.len(),
                mesh.triangles.len()
            );
        }
        Command::Fom { config } => {
            let cfg = config.load()?;
            let sweep = cmd_fom(&cfg)?;
            for (re, n_snaps, wall) in &sweep.runs {
                println!(
                    "Re = {re}: {n_snaps} snapshots, {:.3} s wall time",
                    wall.as_secs_f64()
                );
            }
        }
        Command::Pod { config } => {
            let cfg = config.load()?;
            let bases = cmd_pod(&cfg)?;
            println!(
                "basis ranks: u={} u_tilde={} p={} phi={} phi_hat={}",
                bases.u.rank(),
                bases.u_tilde.rank(),
                bases.p.rank(),
                bases.phi.rank(),
                bases.phi_hat.rank()
            );
        }
        Command::RomOffline { config } => {
            let cfg = config.load()?;
            let ops = cmd_rom_offline(&cfg)?;
            println!(
                "projected operators written (r_u={}, r_p={}, variant={})",
                ops.r_u,
                ops.r_p,
                cfg.variant.as_str()
            );
        }
        Command::Rom { config } => {
            let mut cfg = config.load()?;
            cfg.variant = ROMVariant::Intrusive;
            print_reports(&cmd_online(&cfg)?);
        }
        Command::Hybrid { config } => {
            let cfg = config.load()?;
            if cfg.variant == ROMVariant::Intrusive {
                return Err(Error::Config(
                    "hybrid command needs rom.variant = hybrid-param or hybrid-extrap".into(),
                ));
            }
            print_reports(&cmd_online(&cfg)?);
        }
        Command::Compare { config, ranks } => {
            let cfg = config.load()?;
            let rank_list: Vec<usize> = ranks
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad rank '{p}' in --ranks")))
                })
                .collect::<Result<_, _>>()?;
            for point in cmd_compare(&cfg, &rank_list)? {
                println!(
                    "r = {:>3}: velocity error {:e}, online {:.4} s",
                    point.r, point.velocity_error, point.online_seconds
                );
            }
        }
        Command::Report { config } => {
            let cfg = config.load()?;
            print!("{}", cmd_report(&cfg)?);
        }
    }
    Ok(())
}

fn print_reports(reports: &[nsrom::harness::OnlineReport]) {
    for r in reports {
        println!(
            "Re = {}: velocity error {:e}, pressure error {:e}, online {:.4} s, speedup {:.1}x",
            r.re,
            r.velocity_error,
            r.pressure_error,
            r.online_time.as_secs_f64(),
            r.speedup()
        );
        if r.extrapolated_steps > 0 {
            println!(
                "  warning: {} steps queried the surrogate outside its training range",
                r.extrapolated_steps
            );
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
