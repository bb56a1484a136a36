use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use parahom_cli::{execute, parse_config, Command, ExperimentConfig, TensorMode};

#[derive(Parser)]
#[command(name = "parahom", version, about = "Space-time periodic homogenization experiments")]
struct Cli {
    /// Experiment config (sectioned key = value text, or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; overrides `harness.threads`.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Probe seed; overrides `harness.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the three corrector kinds at `cell.lambda`.
    Correctors,
    /// One effective tensor.
    Tensor {
        #[arg(long, value_enum, default_value_t = Mode::Lambda)]
        mode: Mode,
    },
    /// Â_λ along the λ ladders and the rates toward both limits.
    SweepLambda,
    /// ‖u_ε − u_0‖ in L² along the ε ladder.
    RateL2,
    /// Two-scale remainder in L²(H¹) along the ε ladder.
    RateH1,
    /// Normalized gradient energies over shrinking cylinders.
    Lipschitz,
    /// Excess over the corrected polynomial classes.
    Excess,
    /// The invariant suite.
    Verify,
    /// Print the fully resolved config.
    Resolve,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Lambda,
    Infinity,
    Zero,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => match fs::read_to_string(path)
            .map_err(|e| e.to_string())
            .and_then(|t| parse_config(&t).map_err(|e| e.to_string()))
        {
            Ok(c) => c,
            Err(e) => {
                eprintln!("parahom: {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.output.directory = out.to_string_lossy().into_owned();
    }
    if let Some(t) = cli.threads {
        config.harness.threads = t;
    }
    if let Some(s) = cli.seed {
        config.harness.seed = s;
    }
    if let Err(e) = config.validate() {
        eprintln!("parahom: {e}");
        return ExitCode::from(2);
    }
    let command = match cli.command {
        Cmd::Correctors => Command::Correctors,
        Cmd::Tensor { mode } => Command::Tensor(match mode {
            Mode::Lambda => TensorMode::Lambda,
            Mode::Infinity => TensorMode::Infinity,
            Mode::Zero => TensorMode::Zero,
        }),
        Cmd::SweepLambda => Command::SweepLambda,
        Cmd::RateL2 => Command::RateL2,
        Cmd::RateH1 => Command::RateH1,
        Cmd::Lipschitz => Command::Lipschitz,
        Cmd::Excess => Command::Excess,
        Cmd::Verify => Command::Verify,
        Cmd::Resolve => {
            print!("{}", config.to_text());
            return ExitCode::SUCCESS;
        }
    };
    let out = PathBuf::from(&config.output.directory);
    let (code, report) = execute(command, &config, &out);
    if let Some(r) = report {
        for c in &r.checks {
            println!("{} {} = {:e} (bound {:e})", if c.pass { "ok  " } else { "FAIL" }, c.name, c.value, c.bound);
        }
        println!("{}: {} -> {}", r.command, if r.pass { "pass" } else { "fail" }, out.join("report.json").display());
    }
    ExitCode::from(code as u8)
}
