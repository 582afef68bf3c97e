mod commands;
mod report;
mod schema;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "czkit", version, about = "Calderón-Zygmund decompositions on finite metric measure spaces")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Print a bundled JSON schema (space, family, cubes, function,
    /// decomposition, report) and exit.
    #[arg(long, value_name = "NAME", num_args = 0..=1, default_missing_value = "all", exclusive = true)]
    schema: Option<String>,

    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a model space.
    Gen(GenArgs),
    /// Build dyadic cubes on a space.
    Cubes(CubesArgs),
    /// Build or verify set families.
    #[command(subcommand)]
    Family(FamilyCommand),
    /// Build the base-case family on a solvable product model.
    Basefamily(BaseFamilyArgs),
    /// Maximal function and weak (1,1) constant.
    Maximal(MaximalArgs),
    /// Calderón-Zygmund decomposition of a function.
    Decompose(DecomposeArgs),
    /// Verify a decomposition.
    Verify(VerifyArgs),
    /// Merge small pieces of a decomposition.
    Coarsen(CoarsenArgs),
    /// Decompose and verify over a grid of functions and levels.
    Scan(ScanArgs),
    /// Search for an r-doubling set.
    Folner(FolnerArgs),
    /// Merge reports into a summary and CSV tables.
    Report(ReportArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Path,
    Grid,
    Tree,
    Heisenberg,
    Bs12,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Generators {
    Standard,
    Extended,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Model description as JSON (any model, including solvable).
    #[arg(long, conflicts_with = "model")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long, value_enum, default_value = "standard")]
    pub generators: Generators,
}

#[derive(Args, Debug)]
pub struct Output {
    /// Artifact path.
    #[arg(short = 'o', long = "out")]
    pub out: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Model metadata next to the space.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    /// Run the model invariant checks with this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Subsample {
    Auto,
    None,
}

#[derive(Args, Debug)]
pub struct CubesArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub delta: f64,
    /// Number of levels; `ceil(log2 diam) + 2` by default.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Keep every m-th level (m >= 1), or pick m automatically.
    #[arg(long, conflicts_with = "subsample")]
    pub every: Option<usize>,
    #[arg(long, value_enum, default_value = "auto")]
    pub subsample: Subsample,
    /// Also write the distinct cubes as a family.
    #[arg(long)]
    pub family_out: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Loose,
    Strict,
}

#[derive(Subcommand, Debug)]
pub enum FamilyCommand {
    /// Check both doubling-family conditions.
    Verify(FamilyVerifyArgs),
    /// Distinct cubes of a cube tree.
    FromCubes(FromCubesArgs),
    /// Balls B(x, r) over every point and the given radii, plus the whole space.
    Balls(BallsArgs),
}

#[derive(Args, Debug)]
pub struct FamilyVerifyArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub family: PathBuf,
    /// Constant to test; the family's own constant when absent.
    #[arg(short = 'C', long = "constant")]
    pub constant: Option<f64>,
    #[arg(long, value_enum, default_value = "loose")]
    pub variant: VariantArg,
    /// Also report per-set doubling constants and density.
    #[arg(long)]
    pub details: bool,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct FromCubesArgs {
    #[arg(long)]
    pub cubes: PathBuf,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct BallsArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub radii: Vec<f64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct BaseFamilyArgs {
    /// Solvable model description as JSON.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub delta: f64,
    #[arg(long, default_value_t = 8)]
    pub depth: usize,
    /// Lattice stride for ball centres.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Override the chain constant M.
    #[arg(short = 'M', long = "m-const")]
    pub m_const: Option<f64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct MaximalArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub family: PathBuf,
    #[arg(long)]
    pub function: PathBuf,
    /// Levels for the weak-type check; breakpoints by default.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// Fail when the weak constant exceeds this bound.
    #[arg(short = 'C', long = "constant")]
    pub constant: Option<f64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub family: PathBuf,
    #[arg(long)]
    pub function: PathBuf,
    #[arg(long)]
    pub lambda: f64,
    /// Family constant to use instead of the computed one.
    #[arg(short = 'C', long = "constant")]
    pub constant: Option<f64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    LargeScale,
    SmallScale,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub decomposition: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    pub mode: ModeArg,
    /// Bound on every measured constant; `max(C^2, 2)` by default.
    #[arg(long)]
    pub bound: Option<f64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct CoarsenArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub decomposition: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub c_cz: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub family: PathBuf,
    #[arg(long = "function", required = true)]
    pub functions: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambdas: Vec<f64>,
    /// Read levels as multiples of C / mu(M) after normalizing each f to ||f||_1 = 1.
    #[arg(long)]
    pub relative: bool,
    /// Scale label carried into merged CSV tables.
    #[arg(long)]
    pub scale: Option<f64>,
    /// CSV table of every row.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct FolnerArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Search a metric space with dilation semantics instead of a group.
    #[arg(long, conflicts_with_all = ["model", "spec"])]
    pub space: Option<PathBuf>,
    /// Centre of the candidate balls in `--space`.
    #[arg(long, default_value_t = 0)]
    pub center: usize,
    #[arg(short = 'r', long)]
    pub r: f64,
    #[arg(long, default_value_t = 10_000)]
    pub budget: usize,
    /// Largest connected shape tried on free groups.
    #[arg(long, default_value_t = 12)]
    pub max_shape: usize,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// CSV of constants against scale.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("czkit: {e}");
            return ExitCode::from(2);
        }
    }
    if let Some(name) = cli.schema {
        return match schema::print(&name) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("czkit: {e}");
                ExitCode::from(2)
            }
        };
    }
    let Some(command) = cli.command else {
        return ExitCode::from(2);
    };
    match commands::run(command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("czkit: {e}");
            ExitCode::from(i32::from(e) as u8)
        }
    }
}
