mod commands;
mod export;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use probplan::scene::Ablation;

#[derive(Parser)]
#[command(
    name = "probplan",
    version,
    about = "Probabilistic trajectory planning over a discretized vocabulary"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone, Copy, Default)]
pub struct AblationFlags {
    #[arg(long)]
    pub no_map: bool,
    #[arg(long)]
    pub no_agents: bool,
    #[arg(long)]
    pub no_traffic: bool,
    #[arg(long)]
    pub no_navi: bool,
    #[arg(long)]
    pub no_state: bool,
}

impl AblationFlags {
    pub fn merge(&self, base: Ablation) -> Ablation {
        Ablation {
            no_map: base.no_map || self.no_map,
            no_agents: base.no_agents || self.no_agents,
            no_traffic: base.no_traffic || self.no_traffic,
            no_navi: base.no_navi || self.no_navi,
            no_state: base.no_state || self.no_state,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Argmax,
    Topk,
    Expert,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scripted expert over every scenario and seed and record frames.
    Collect {
        #[command(flatten)]
        common: Common,
    },
    /// Build the planning vocabulary from the recorded demonstrations.
    BuildVocab {
        #[command(flatten)]
        common: Common,
        /// Overrides the vocabulary size.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the scoring model; writes a checkpoint and a loss log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        lambda_conflict: Option<f64>,
        /// Train with the conflict loss only.
        #[arg(long)]
        no_dist_loss: bool,
        /// Continue from the existing checkpoint.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        ablation: AblationFlags,
    },
    /// Open-loop L2 and collision metrics on recorded frames.
    EvalOpen {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        #[command(flatten)]
        ablation: AblationFlags,
    },
    /// Closed-loop driving metrics on every scenario.
    EvalClosed {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "topk")]
        policy: PolicyKind,
        /// Overrides eval.k.
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        ablation: AblationFlags,
    },
    /// Turn a replay file into an SVG drawing and a CSV table.
    ReplayExport {
        /// Replay file written by eval-closed.
        #[arg(long)]
        replay: PathBuf,
        /// Scenario to draw the map from.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> probplan::Result<()> {
    match cli.command {
        Command::Collect { common } => commands::collect(&common),
        Command::BuildVocab { common, n } => commands::build_vocab(&common, n),
        Command::Train {
            common,
            steps,
            lambda_conflict,
            no_dist_loss,
            resume,
            ablation,
        } => commands::train(
            &common,
            commands::TrainOverrides {
                steps,
                lambda_conflict,
                no_dist_loss,
                resume,
                ablation,
            },
        ),
        Command::EvalOpen {
            common,
            split,
            ablation,
        } => commands::eval_open(&common, split, ablation),
        Command::EvalClosed {
            common,
            policy,
            k,
            ablation,
        } => commands::eval_closed(&common, policy, k, ablation),
        Command::ReplayExport { replay, scenario, out } => export::replay_export(&replay, scenario.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else if e.is_divergence() {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
