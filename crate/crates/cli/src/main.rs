use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use darcy_smc::validation::RateStudyConfig;
use darcy_smc_cli::{commands, CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "darcy-smc",
    version,
    about = "Adaptive SMC for the Bayesian Darcy-flow inverse problem"
)]
struct Cli {
    /// TOML configuration; defaults to the chosen preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset used when no configuration file is given: desk, planar or volume.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    /// Overrides the configuration's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a truth from the prior and write synthetic observations of it.
    GenerateData,
    /// Sample the posterior for a data set.
    Run {
        /// Data set to invert (default: <out>/data.csv).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Repeat the pipeline for each configured observation count.
    ConsistencySweep,
    /// Run the rate study, sampling-operator and contraction checks.
    Validate,
    /// Render a field CSV to a pixmap.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::preset(&cli.preset)?,
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {threads} threads: {e}")))?;
    }
    if let Command::Render { input, output } = &cli.command {
        let p = commands::render_csv(input, output)?;
        println!("rendered {p}x{p} field to {}", output.display());
        return Ok(());
    }
    let config = load_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::GenerateData => {
            let (truth, data) = commands::generate_data(&config, out)?;
            println!(
                "wrote {} coefficients and {} observations to {}",
                truth.len(),
                data.len(),
                out.display()
            );
        }
        Command::Run { data } => {
            let result = commands::run(&config, out, data.as_deref())?;
            println!(
                "{} rounds, {} forward solves",
                result.trace.rounds.len(),
                result.trace.forward_solves(config.smc.particles)
            );
            if let (Some(rmse), Some(ball)) = (result.rmse, result.ball_probability) {
                println!("rmse to truth {rmse:.4}, ball probability {ball:.4}");
            }
        }
        Command::ConsistencySweep => {
            println!("count,rmse,ball_probability,rounds");
            for row in commands::consistency_sweep(&config, out)? {
                println!(
                    "{},{:.6},{:.6},{}",
                    row.count, row.rmse, row.ball_probability, row.rounds
                );
            }
        }
        Command::Validate => {
            let checks = commands::validate(&config, &RateStudyConfig::default(), out)?;
            for c in &checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                println!("{status} {}: {} (bound {})", c.name, c.value, c.bound);
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(CliError::ChecksFailed(failed));
            }
        }
        Command::ShowConfig => print!("{}", config.to_toml()),
        Command::Render { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
