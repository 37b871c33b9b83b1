use std::io;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use semisup_cli::commands::{
    self, EvalArgs, FeaturesArgs, PlanArgs, ReportArgs, StudentArgs, SynthArgs,
    TargetsGenerateArgs, TargetsInspectArgs, TeacherArgs,
};
use semisup_cli::error::EXIT_USAGE;
use semisup_cli::Result;

#[derive(Parser, Debug)]
#[command(
    name = "semisup",
    version,
    about = "Semi-supervised acoustic model training pipeline"
)]
struct Cli {
    /// Log progress (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled/unlabeled/held-out corpus.
    Synth(SynthArgs),
    /// Feature extraction.
    #[command(subcommand)]
    Features(FeaturesCmd),
    /// Training plans.
    #[command(subcommand)]
    Plan(PlanCmd),
    /// Teacher training on labeled data.
    #[command(subcommand)]
    Teacher(TeacherCmd),
    /// Teacher target stores.
    #[command(subcommand)]
    Targets(TargetsCmd),
    /// Student training under a plan.
    #[command(subcommand)]
    Student(StudentCmd),
    /// Same as `student train`.
    Train(StudentArgs),
    /// Frame error and cross-entropy per condition.
    Eval(EvalArgs),
    /// Merge metrics CSVs into a per-sub-epoch reduction table.
    Report(ReportArgs),
}

#[derive(Subcommand, Debug)]
enum FeaturesCmd {
    /// Log-mel, stacking and normalization into shard files.
    Extract(FeaturesArgs),
}

#[derive(Subcommand, Debug)]
enum PlanCmd {
    /// Write a phase plan.
    Build(PlanArgs),
}

#[derive(Subcommand, Debug)]
enum TeacherCmd {
    /// Train a bidirectional teacher with cross-entropy on hard labels.
    Train(TeacherArgs),
}

#[derive(Subcommand, Debug)]
enum TargetsCmd {
    /// Run the teacher and store its top-k logits.
    Generate(TargetsGenerateArgs),
    /// Print store metadata and records.
    Inspect(TargetsInspectArgs),
}

#[derive(Subcommand, Debug)]
enum StudentCmd {
    /// Train a unidirectional student.
    Train(StudentArgs),
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => commands::synth(&a).map(drop),
        Command::Features(FeaturesCmd::Extract(a)) => commands::features_extract(&a),
        Command::Plan(PlanCmd::Build(a)) => commands::plan_build(&a).map(drop),
        Command::Teacher(TeacherCmd::Train(a)) => commands::teacher_train(&a).map(drop),
        Command::Targets(TargetsCmd::Generate(a)) => commands::targets_generate(&a).map(drop),
        Command::Targets(TargetsCmd::Inspect(a)) => {
            commands::targets_inspect(&a, io::stdout().lock())
        }
        Command::Student(StudentCmd::Train(a)) | Command::Train(a) => {
            commands::student_train(&a).map(drop)
        }
        Command::Eval(a) => commands::eval(&a, io::stdout().lock()).map(drop),
        Command::Report(a) => commands::report(&a, io::stdout().lock()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
