use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gradhom::commands::{self, Global, Load, LogLevel, RegimeArg};
use gradhom_core::Error;

/// Periodic homogenization for second-gradient elasticity with chiral
/// couplings: cell solves, effective tensors, and convergence studies.
#[derive(Parser)]
#[command(name = "gradhom", version, about)]
struct Cli {
    /// Seed for every randomized probe in the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel corrector solves (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory receiving outputs, manifest.json, and timings.json.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Verbosity on stderr.
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Info)]
    log_level: LogLevel,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a coefficient field from a JSON cell spec.
    MakeCell {
        /// Cell spec file.
        #[arg(long)]
        spec: PathBuf,
        /// Output field container.
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify the scale-interaction regime of a field at one cell size.
    ScaleReport {
        /// Field container.
        #[arg(long)]
        cell: PathBuf,
        /// Cell size epsilon.
        #[arg(long)]
        epsilon: f64,
        /// Conjugate exponent p'.
        #[arg(long, default_value_t = 2.0)]
        pprime: f64,
        /// Conjugate exponent q'.
        #[arg(long, default_value_t = 2.0)]
        qprime: f64,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the unfolding identities and probes over a cell-size list.
    UnfoldCheck {
        /// Space dimension.
        #[arg(long)]
        d: usize,
        /// Comma-separated cell sizes.
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
        /// Output JSON report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve every corrector of one family on a cell.
    SolveCell {
        /// Field container.
        #[arg(long)]
        cell: PathBuf,
        /// Corrector family.
        #[arg(long, value_enum)]
        regime: RegimeArg,
        /// Relative residual tolerance.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Output corrector container.
        #[arg(long)]
        out: PathBuf,
    },
    /// Average a corrector set into effective tensors with diagnostics.
    Effective {
        /// Field container.
        #[arg(long)]
        cell: PathBuf,
        /// Corrector container from solve-cell.
        #[arg(long)]
        correctors: PathBuf,
        /// Corrector family expected in the container.
        #[arg(long, value_enum)]
        regime: RegimeArg,
        /// Output JSON report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-versus-homogenized error table over a cell-size list (1D).
    Converge {
        /// Field container (one space dimension).
        #[arg(long)]
        cell: PathBuf,
        /// Scale-interaction regime.
        #[arg(long, value_enum)]
        regime: RegimeArg,
        /// Comma-separated, strictly decreasing cell sizes.
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
        /// Body load: 'const:<value>' or 'sin:<k>' for sin(k pi x).
        #[arg(long, default_value = "const:1")]
        g: String,
        /// Fine-mesh resolution per period.
        #[arg(long, default_value_t = 8)]
        elements_per_period: usize,
        /// Output CSV table.
        #[arg(long)]
        out: PathBuf,
    },
    /// Spec-to-artifacts run: field, regime report, correctors, effective
    /// tensors, and an optional convergence table.
    Pipeline {
        /// Cell spec file.
        #[arg(long)]
        spec: PathBuf,
        /// Scale-interaction regime to solve in.
        #[arg(long, value_enum)]
        regime: RegimeArg,
        /// Cell size for the regime report.
        #[arg(long)]
        epsilon: f64,
        /// Comma-separated cell sizes; enables the convergence stage (1D).
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        /// Body load for the convergence stage.
        #[arg(long, default_value = "const:1")]
        g: String,
        /// Relative residual tolerance for the corrector solves.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Reshape a convergence table into tidy (epsilon, metric, value) rows.
    ExportPlotdata {
        /// Input CSV table from converge.
        #[arg(long)]
        table: PathBuf,
        /// Output tidy CSV.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated metric columns (default: l2_error,h1_error).
        #[arg(long, value_delimiter = ',')]
        metrics: Option<Vec<String>>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::SolverDiverged { .. } => 3,
        Error::NotCoercive { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("gradhom: cannot size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }

    let global = Global {
        seed: cli.seed,
        out_dir: cli.out_dir.clone(),
        log: cli.log_level,
    };

    let result = match cli.command {
        Command::MakeCell { spec, out } => commands::make_cell(&global, &spec, &out),
        Command::ScaleReport { cell, epsilon, pprime, qprime, out } => {
            commands::scale_report(&global, &cell, epsilon, pprime, qprime, out.as_deref())
                .map(|_| ())
        }
        Command::UnfoldCheck { d, eps, out } => {
            commands::unfold_check(&global, d, &eps, &out).map(|_| ())
        }
        Command::SolveCell { cell, regime, tol, out } => {
            commands::solve_cell(&global, &cell, regime.into(), tol, &out)
        }
        Command::Effective { cell, correctors, regime, out } => {
            commands::effective(&global, &cell, &correctors, regime.into(), &out).map(|_| ())
        }
        Command::Converge { cell, regime, eps, g, elements_per_period, out } => {
            Load::parse(&g).and_then(|load| {
                commands::converge(
                    &global,
                    &cell,
                    regime.into(),
                    &eps,
                    load,
                    elements_per_period,
                    &out,
                )
                .map(|_| ())
            })
        }
        Command::Pipeline { spec, regime, epsilon, eps, g, tol } => {
            Load::parse(&g).and_then(|load| {
                commands::pipeline(
                    &global,
                    &spec,
                    regime.into(),
                    epsilon,
                    eps.as_deref(),
                    load,
                    tol,
                )
            })
        }
        Command::ExportPlotdata { table, out, metrics } => {
            commands::export_plotdata(&global, &table, &out, metrics.as_deref()).map(|_| ())
        }
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gradhom: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
