mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use bernfit::io::DataFormat;
use bernfit::simulation::ScenarioKind;
use bernfit::{Error, ErrorClass};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "bernfit",
    version,
    about = "Shape-constrained functional regression with Bernstein polynomials"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Input dataset.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration's seed. Defaults to 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Results file. Companion CSV files are written next to it. Results go to
    /// standard output when neither this nor the configuration names a file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "BERNFIT_THREADS")]
    pub threads: Option<usize>,
    /// Dataset layout: wide_csv or long_csv.
    #[arg(long, global = true, default_value = "wide_csv")]
    pub format: DataFormat,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// sofr, fosr, flcm, fofr or qfosr; taken from the configuration when absent.
    #[arg(long)]
    pub model: Option<String>,
    /// Bernstein order; cross-validated when neither this nor the configuration sets one.
    #[arg(long)]
    pub order: Option<usize>,
    /// Shape name such as non_increasing, or a JSON shape object.
    #[arg(long)]
    pub shape: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub shape: Option<String>,
    /// Also compute a projection confidence band.
    #[arg(long)]
    pub ci: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: ScenarioKind,
    #[arg(long)]
    pub n: usize,
    /// Replication index within the seed.
    #[arg(long, default_value_t = 0)]
    pub rep: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub scenario: ScenarioKind,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    /// Fixed order for both variants; cross-validated when absent.
    #[arg(long)]
    pub order: Option<usize>,
    /// Record band coverage at the configured level.
    #[arg(long)]
    pub coverage: bool,
    /// Run the bootstrap test of this null shape in every replication.
    #[arg(long)]
    pub test_null: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scalar-on-function regression.
    FitSofr(FitArgs),
    /// Function-on-scalar regression.
    FitFosr(FitArgs),
    /// Concurrent functional linear model.
    FitFlcm(FitArgs),
    /// Function-on-function regression.
    FitFofr(FitArgs),
    /// Quantile function-on-scalar regression.
    FitQfosr(FitArgs),
    /// Bootstrap test of a shape hypothesis.
    TestShape(ModelArgs),
    /// Projection confidence band for the shaped coefficient.
    Ci(ModelArgs),
    /// Cross-validated choice of the Bernstein order.
    CvOrder(ModelArgs),
    /// Write one simulated dataset.
    Simulate(SimulateArgs),
    /// Monte Carlo benchmark of one scenario.
    Bench(BenchArgs),
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Data => 1,
        ErrorClass::Config => 2,
        ErrorClass::Numerical => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
