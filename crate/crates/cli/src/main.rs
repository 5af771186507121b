//! `moralgeo`: command-line front end for concept-vector geometry, SAE
//! attribution and steering sweeps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use moralgeo_core::{ErrorClass, PairwiseConstruction};

mod data;
mod io;
mod sae;
mod sep;
mod steer;
mod toy;

/// Exit status for validation failures and usage errors.
const EXIT_VALIDATION: u8 = 2;
/// Exit status for filesystem and other environment failures.
const EXIT_IO: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "moralgeo", version, about = "Concept-vector geometry, SAE attribution and steering sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Inspect and validate store directories.
    #[command(subcommand)]
    Store(StoreCmd),
    /// Build concept vectors from activation dumps.
    #[command(subcommand)]
    Vectors(VectorsCmd),
    /// Project activations onto concept vectors.
    #[command(subcommand)]
    Project(ProjectCmd),
    /// Separability curves, pairwise matrices and densities.
    #[command(subcommand)]
    Sep(SepCmd),
    /// Sparse-autoencoder attribution and interpretation.
    #[command(subcommand)]
    Sae(SaeCmd),
    /// Steering sweeps and slope fits.
    #[command(subcommand)]
    Steer(SteerCmd),
    /// Questionnaire and capability scoring on the toy model.
    #[command(subcommand)]
    Score(ScoreCmd),
    /// The built-in toy transformer.
    #[command(subcommand)]
    Toy(ToyCmd),
    /// Summary reports.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Subcommand, Debug)]
enum StoreCmd {
    /// Load a store directory with full validation and print a JSON summary.
    Validate(data::ValidateArgs),
}

#[derive(Subcommand, Debug)]
enum VectorsCmd {
    /// Difference-of-means vectors for every target label and layer.
    Build(data::BuildArgs),
}

#[derive(Subcommand, Debug)]
enum ProjectCmd {
    /// Per-input projection scores at one layer (CSV).
    Run(data::ProjectArgs),
}

#[derive(Subcommand, Debug)]
enum SepCmd {
    /// Signed W1 per layer with an `optimal_layer` footer (CSV).
    Curve(sep::CurveArgs),
    /// W1 between every pair of labels at one layer (CSV).
    Pairwise(sep::PairwiseArgs),
    /// Baseline-standardized score histograms at one layer (CSV).
    Density(sep::DensityArgs),
}

#[derive(Subcommand, Debug)]
enum SaeCmd {
    /// Top-n feature alignment per layer against a random baseline (CSV).
    Align(sae::AlignArgs),
    /// Features whose decoder directions best match a concept vector (CSV).
    Fingerprint(sae::FingerprintArgs),
    /// Peak-centered evidence windows for one feature (JSON).
    Mine(sae::MineArgs),
    /// Interpretation prompt for one feature from mined windows (text).
    Prompt(sae::PromptArgs),
    /// Check an interpretation record against its schema (JSON).
    ValidateInterp(sae::ValidateInterpArgs),
}

// Parsed once per process, so the size gap between variants is harmless.
#[allow(clippy::large_enum_variant)]
#[derive(Subcommand, Debug)]
enum SteerCmd {
    /// Score the questionnaire over an alpha grid at each layer.
    Sweep(steer::SweepArgs),
    /// Fit response slopes to stored sweep results (CSV).
    Fit(steer::FitArgs),
}

#[derive(Subcommand, Debug)]
enum ScoreCmd {
    /// Foundation scorecard from the Likert questionnaire (JSON).
    Mfq(steer::MfqArgs),
    /// Accuracy on a seeded sample of multiple-choice items (JSON).
    Mcq(steer::McqArgs),
}

#[derive(Subcommand, Debug)]
enum ToyCmd {
    /// Run the synthetic end-to-end pipeline and write every artifact.
    Demo(toy::DemoArgs),
}

#[derive(Subcommand, Debug)]
enum ReportCmd {
    /// Markdown summary of curves, a pairwise matrix and steering slopes.
    Emit(toy::ReportArgs),
}

/// Activation set plus the concept vectors to read from it.
#[derive(Args, Debug, Clone)]
pub struct GeometryInputs {
    /// Activation-set directory.
    #[arg(long)]
    pub activations: PathBuf,
    /// Concept-vector directory.
    #[arg(long)]
    pub vectors: PathBuf,
}

/// Picks one family of concept vectors.
#[derive(Args, Debug, Clone)]
pub struct VectorChoice {
    /// Target label of the concept vectors.
    #[arg(long)]
    pub label: String,
    /// Contrast of the vectors (`rest` or a label). Needed only when the
    /// label has vectors for more than one contrast.
    #[arg(long)]
    pub contrast: Option<String>,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
pub enum ConstructionArg {
    Pairwise,
    #[value(name = "vs_rest")]
    VsRest,
}

impl From<ConstructionArg> for PairwiseConstruction {
    fn from(c: ConstructionArg) -> Self {
        match c {
            ConstructionArg::Pairwise => PairwiseConstruction::PairwiseContrast,
            ConstructionArg::VsRest => PairwiseConstruction::LabelVsRestPerVector,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Store(StoreCmd::Validate(a)) => data::validate(a),
        Command::Vectors(VectorsCmd::Build(a)) => data::build(a),
        Command::Project(ProjectCmd::Run(a)) => data::project(a),
        Command::Sep(SepCmd::Curve(a)) => sep::curve(a),
        Command::Sep(SepCmd::Pairwise(a)) => sep::pairwise(a),
        Command::Sep(SepCmd::Density(a)) => sep::density(a),
        Command::Sae(SaeCmd::Align(a)) => sae::align(a),
        Command::Sae(SaeCmd::Fingerprint(a)) => sae::fingerprint(a),
        Command::Sae(SaeCmd::Mine(a)) => sae::mine(a),
        Command::Sae(SaeCmd::Prompt(a)) => sae::prompt(a),
        Command::Sae(SaeCmd::ValidateInterp(a)) => sae::validate_interp(a),
        Command::Steer(SteerCmd::Sweep(a)) => steer::sweep(a),
        Command::Steer(SteerCmd::Fit(a)) => steer::fit(a),
        Command::Score(ScoreCmd::Mfq(a)) => steer::mfq(a),
        Command::Score(ScoreCmd::Mcq(a)) => steer::mcq(a),
        Command::Toy(ToyCmd::Demo(a)) => toy::demo(a),
        Command::Report(ReportCmd::Emit(a)) => toy::report(a),
    }
}

/// I/O anywhere in the chain wins; otherwise a core error decides.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<moralgeo_core::Error>() {
            return match e.class() {
                ErrorClass::Io => EXIT_IO,
                ErrorClass::Validation => EXIT_VALIDATION,
            };
        }
    }
    EXIT_VALIDATION
}

fn one_line(err: &anyhow::Error) -> String {
    let msg = format!("{err:#}");
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MORALGEO_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("moralgeo: error: {}", one_line(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
