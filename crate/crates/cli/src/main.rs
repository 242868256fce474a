//! `fgflow`: lift labeled datasets, flow them, project labels, reproduce the
//! Gaussian-mixture experiments.
//!
//! Exit codes: 0 success, 1 usage or other errors, 2 I/O or parse errors,
//! 3 step safeguard exhausted.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fgflow::scenario::MixtureScenario;

use config::{EmbeddingChoice, LabelMethod, NoiseScheduleKind, ParseFailure, PreconditionerKind, RunConfig, StepScheduleKind, UsageFailure};

#[derive(Parser, Debug)]
#[command(name = "fgflow", version, about = "MMD gradient flows of labeled datasets on the feature-Gaussian manifold")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Lift a labeled CSV/NDJSON dataset to a measure plus class moments.
    Lift {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        embed: EmbedFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Flow a source measure towards a target measure.
    Flow {
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
        #[command(flatten)]
        kernel: KernelFlags,
        #[command(flatten)]
        flow: FlowFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Assign categorical labels to a measure by LP or k-NN.
    Project {
        #[arg(long)]
        measure: Option<PathBuf>,
        /// Class moments (NDJSON); used by the LP method.
        #[arg(long)]
        moments: Option<PathBuf>,
        /// Labeled reference measure; required by k-NN, and gives the LP
        /// its class moments when --moments is absent.
        #[arg(long)]
        target: Option<PathBuf>,
        #[command(flatten)]
        labels: LabelFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Run one of the built-in Gaussian-mixture experiments end to end.
    MixtureDemo {
        /// four_to_four or two_to_four.
        #[arg(long)]
        scenario: Option<MixtureScenario>,
        #[command(flatten)]
        kernel: KernelFlags,
        #[command(flatten)]
        flow: FlowFlags,
        #[command(flatten)]
        labels: LabelFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Print MMD², loss and dissipation of a measure against a target.
    Eval {
        #[arg(long)]
        measure: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
        #[command(flatten)]
        kernel: KernelFlags,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct KernelFlags {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args, Debug)]
struct FlowFlags {
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long, value_enum)]
    step_schedule: Option<StepScheduleKind>,
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long = "noise")]
    noise_level: Option<f64>,
    #[arg(long, value_enum)]
    noise_schedule: Option<NoiseScheduleKind>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, value_enum)]
    preconditioner: Option<PreconditionerKind>,
    #[arg(long)]
    max_retries: Option<usize>,
    #[arg(long)]
    snapshot_every: Option<usize>,
}

#[derive(Args, Debug)]
struct EmbedFlags {
    #[arg(long, value_enum)]
    embedding: Option<EmbeddingChoice>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    reg_eps: Option<f64>,
}

#[derive(Args, Debug)]
struct LabelFlags {
    #[arg(long, value_enum)]
    method: Option<LabelMethod>,
    #[arg(long)]
    k: Option<usize>,
}

fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *slot = v.clone();
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: &Option<PathBuf>) {
    if value.is_some() {
        *slot = value.clone();
    }
}

impl KernelFlags {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.alpha, &self.alpha);
        set(&mut c.beta, &self.beta);
        set(&mut c.gamma, &self.gamma);
    }
}

impl FlowFlags {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.step_size, &self.step_size);
        set(&mut c.step_schedule, &self.step_schedule);
        set(&mut c.tau0, &self.tau0);
        set(&mut c.noise_level, &self.noise_level);
        set(&mut c.noise_schedule, &self.noise_schedule);
        set(&mut c.iterations, &self.iterations);
        set(&mut c.preconditioner, &self.preconditioner);
        set(&mut c.max_retries, &self.max_retries);
        set(&mut c.snapshot_every, &self.snapshot_every);
    }
}

impl EmbedFlags {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.embedding, &self.embedding);
        if self.dim.is_some() {
            c.embedding_dim = self.dim;
        }
        set(&mut c.reg_eps, &self.reg_eps);
    }
}

impl LabelFlags {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.label_method, &self.method);
        set(&mut c.knn_k, &self.k);
    }
}

impl Common {
    fn resolve(&self, base: RunConfig) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => base.merge_file(path)?,
            None => base,
        };
        set(&mut c.seed, &self.seed);
        set(&mut c.workers, &self.workers);
        Ok(c)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Lift { dataset, embed, common } => {
            let mut c = common.resolve(RunConfig::default())?;
            embed.apply(&mut c);
            set_path(&mut c.dataset, &dataset);
            commands::lift(&c, &commands::out_dir(&common.out)?)
        }
        Command::Flow {
            source,
            target,
            kernel,
            flow,
            common,
        } => {
            let mut c = common.resolve(RunConfig::default())?;
            kernel.apply(&mut c);
            flow.apply(&mut c);
            set_path(&mut c.source, &source);
            set_path(&mut c.target, &target);
            commands::flow(&c, &commands::out_dir(&common.out)?)
        }
        Command::Project {
            measure,
            moments,
            target,
            labels,
            common,
        } => {
            let mut c = common.resolve(RunConfig::default())?;
            labels.apply(&mut c);
            set_path(&mut c.measure, &measure);
            set_path(&mut c.moments, &moments);
            set_path(&mut c.target, &target);
            commands::project(&c, &commands::out_dir(&common.out)?)
        }
        Command::MixtureDemo {
            scenario,
            kernel,
            flow,
            labels,
            common,
        } => {
            // The scenario picks the defaults, so it is looked up before the
            // config file is merged.
            let from_file = match &common.config {
                Some(path) => RunConfig::default().merge_file(path)?.scenario,
                None => None,
            };
            let Some(chosen) = scenario.or(from_file) else {
                anyhow::bail!(UsageFailure("mixture-demo needs --scenario".into()));
            };
            let mut c = common.resolve(RunConfig::for_scenario(chosen))?;
            c.scenario = Some(chosen);
            kernel.apply(&mut c);
            flow.apply(&mut c);
            labels.apply(&mut c);
            commands::mixture_demo(&c, chosen, &commands::out_dir(&common.out)?)
        }
        Command::Eval {
            measure,
            target,
            kernel,
            common,
        } => {
            let mut c = common.resolve(RunConfig::default())?;
            kernel.apply(&mut c);
            set_path(&mut c.measure, &measure);
            set_path(&mut c.target, &target);
            commands::eval(&c, common.out.as_deref())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<fgflow::Error>() {
            return match e {
                fgflow::Error::SafeguardExhausted { .. } => 3,
                fgflow::Error::Io(_) | fgflow::Error::Parse { .. } => 2,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<ParseFailure>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if cause.is::<UsageFailure>() {
            return 1;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
