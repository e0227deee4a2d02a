//! `divlab`: experiments, certificates and lower-bound instances from the
//! command line. Experiments print CSV, every other command prints JSON.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use divlab_core::complexity::{gaussian_complexity, rademacher_complexity, FunctionClass};
use divlab_core::diversity::{diversity_certificate, excess_table, negative_transfer_witness, transfer_ratio, FiniteInstance};
use divlab_core::eluder::{adversarial_task, dual_class, eluder_dimension, shortest_cover_dimension, FiniteClass, DEFAULT_NODE_CAP};
use divlab_core::experiments::{run_experiment, write_csv, ExperimentConfig, Which};
use divlab_core::hardness::{
    axis_index, build_general_hard_instance, build_relu_hard_instance, default_target, make_packing, Family, GridSettings,
    HardInstance, PackingStrategy,
};
use divlab_core::{Activation, Error};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "divlab", version, about = "Multi-task representation learning laboratory")]
struct Cli {
    /// Base seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of independent runs (experiments only).
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Write the output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Flat JSON experiment configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one of the transfer experiments and print CSV.
    Exp(ExpArgs),
    /// Transfer ratio and diversity of a finite instance.
    Diversity(DiversityArgs),
    /// Eluder dimension of a finite class.
    Eluder(EluderArgs),
    /// Lower-bound instances and packings.
    #[command(subcommand)]
    Hardness(HardnessCommand),
    /// Monte-Carlo complexity of a linear ball on fixed points.
    Complexity(ComplexityArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ExpName {
    A,
    B,
    C,
    D,
    Custom,
}

#[derive(Args, Debug)]
struct ExpArgs {
    which: ExpName,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    n_eval: Option<usize>,
}

#[derive(Args, Debug)]
struct DiversityArgs {
    instance: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// Initial bisection bracket for ν.
    #[arg(long, default_value_t = 1e6)]
    nu_cap: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EluderVariant {
    Longest,
    ShortestCover,
}

#[derive(Args, Debug)]
struct EluderArgs {
    class: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long, value_enum, default_value = "longest")]
    variant: EluderVariant,
    /// Work on the dual class (points and functions swapped).
    #[arg(long)]
    dual: bool,
    #[arg(long, default_value_t = DEFAULT_NODE_CAP)]
    node_cap: u64,
    /// Comma-separated function labels; also reports the adversarial next task.
    #[arg(long, value_delimiter = ',')]
    adversarial: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum HardnessCommand {
    /// ReLU threshold family on the axes packing.
    Relu(ReluArgs),
    /// General activation family at ε = 1/2 on the axes packing.
    General(GeneralArgs),
    /// Print a packing.
    Packing(PackingArgs),
}

#[derive(Args, Debug)]
struct InstanceArgs {
    #[arg(long)]
    d: usize,
    /// Comma-separated axes such as `e1,-e2`.
    #[arg(long, value_delimiter = ',', required = true)]
    sources: Vec<String>,
    /// Axis used as the target; defaults to the first admissible one.
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    directions: usize,
}

#[derive(Args, Debug)]
struct ReluArgs {
    #[arg(long)]
    eps: f64,
    #[command(flatten)]
    instance: InstanceArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SigmaName {
    Relu,
    Sigmoid,
    Identity,
}

#[derive(Args, Debug)]
struct GeneralArgs {
    #[arg(long, value_enum)]
    sigma: SigmaName,
    #[arg(long, allow_hyphen_values = true)]
    x1: f64,
    #[arg(long, allow_hyphen_values = true)]
    x2: f64,
    /// Separation constant; measured from σ when omitted.
    #[arg(long)]
    m: Option<f64>,
    #[command(flatten)]
    instance: InstanceArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyName {
    Axes,
    Greedy,
}

#[derive(Args, Debug)]
struct PackingArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    eps: f64,
    #[arg(long, value_enum, default_value = "axes")]
    strategy: StrategyName,
    #[arg(long, default_value_t = 50)]
    count: usize,
    /// Rejections allowed before the greedy strategy gives up.
    #[arg(long, default_value_t = 10_000)]
    budget: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Weights {
    Gaussian,
    Rademacher,
}

#[derive(Args, Debug)]
struct ComplexityArgs {
    weights: Weights,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Data points as `x11,x12;x21,x22`.
    #[arg(long, conflicts_with = "data")]
    points: Option<String>,
    /// JSON array of data points.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Usage(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 64,
            CliError::Core(e) => match e {
                Error::Numeric { .. } => 3,
                Error::BudgetExceeded { .. } => 4,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => f.write_str(m),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| io_error(p, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| io_error(Path::new("<stdout>"), e)),
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    emit(out, text.as_bytes())
}

fn load_config(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    ExperimentConfig::from_json(&text).map_err(|reason| {
        CliError::Core(Error::Parse {
            path: path.to_path_buf(),
            reason,
        })
    })
}

fn run_exp(cli: &Cli, args: &ExpArgs) -> CliResult<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    cfg.which = match args.which {
        ExpName::A => Which::A,
        ExpName::B => Which::B,
        ExpName::C => Which::C,
        ExpName::D => Which::D,
        ExpName::Custom => Which::Custom,
    };
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    if let Some(r) = cli.runs {
        cfg.runs = r;
        cfg.run_ids = None;
    }
    if let Some(o) = &cli.out {
        cfg.output = Some(o.clone());
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if let Some(n) = args.n_eval {
        cfg.n_eval = n;
    }
    let rows = run_experiment(&cfg)?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    emit(cfg.output.as_deref(), &buf)
}

#[derive(Serialize)]
struct DiversityReport {
    source_excess: Vec<f64>,
    target_excess: Vec<f64>,
    transfer: divlab_core::diversity::DiversityCertificate,
    diversity: divlab_core::diversity::DiversityCertificate,
    negative_transfer_witness: Option<usize>,
}

fn run_diversity(cli: &Cli, args: &DiversityArgs) -> CliResult<()> {
    let inst = FiniteInstance::load(&args.instance)?;
    let table = excess_table(&inst)?;
    let report = DiversityReport {
        source_excess: table.source_inf,
        target_excess: table.target_inf,
        transfer: transfer_ratio(&inst, args.mu, args.nu_cap)?,
        diversity: diversity_certificate(&inst, args.mu, args.nu_cap)?,
        negative_transfer_witness: negative_transfer_witness(&inst)?,
    };
    emit_json(cli.out.as_deref(), &report)
}

#[derive(Serialize)]
struct EluderReport {
    certificate: divlab_core::eluder::EluderCertificate,
    #[serde(skip_serializing_if = "Option::is_none")]
    adversarial: Option<divlab_core::eluder::AdversarialTask>,
}

fn run_eluder(cli: &Cli, args: &EluderArgs) -> CliResult<()> {
    let mut class = FiniteClass::load(&args.class)?;
    if args.dual {
        class = dual_class(&class);
    }
    let certificate = match args.variant {
        EluderVariant::Longest => eluder_dimension(&class, args.eps, args.node_cap)?,
        EluderVariant::ShortestCover => shortest_cover_dimension(&class, args.eps, args.node_cap)?,
    };
    let adversarial = if args.adversarial.is_empty() {
        None
    } else {
        let chosen = args
            .adversarial
            .iter()
            .map(|label| {
                class
                    .functions
                    .iter()
                    .position(|f| f == label)
                    .ok_or_else(|| CliError::Core(Error::Contract(format!("unknown function `{label}`"))))
            })
            .collect::<CliResult<Vec<usize>>>()?;
        Some(adversarial_task(&class, &chosen, args.eps)?)
    };
    emit_json(cli.out.as_deref(), &EluderReport { certificate, adversarial })
}

#[derive(Serialize)]
struct HardnessReport {
    source_excess: f64,
    target_excess: f64,
    ratio: divlab_core::Ratio,
    separation: f64,
    instance: HardInstance,
}

impl From<HardInstance> for HardnessReport {
    fn from(inst: HardInstance) -> Self {
        HardnessReport {
            source_excess: inst.measured.source_excess,
            target_excess: inst.measured.target_excess,
            ratio: inst.measured.ratio,
            separation: inst.family.separation(),
            instance: inst,
        }
    }
}

fn instance_indices(args: &InstanceArgs, packing_family: (&divlab_core::hardness::Packing, &Family)) -> CliResult<(Vec<usize>, usize)> {
    let (packing, family) = packing_family;
    let sources = args
        .sources
        .iter()
        .map(|s| axis_index(args.d, s))
        .collect::<divlab_core::Result<Vec<usize>>>()?;
    let target = match &args.target {
        Some(t) => axis_index(args.d, t)?,
        None => default_target(packing, family, &sources)
            .ok_or_else(|| Error::Infeasible("the sources leave no admissible target".into()))?,
    };
    Ok((sources, target))
}

fn grid(args: &InstanceArgs, seed: Option<u64>) -> GridSettings {
    GridSettings {
        directions: args.directions,
        seed: seed.unwrap_or(0),
        ..GridSettings::default()
    }
}

fn run_hardness(cli: &Cli, cmd: &HardnessCommand) -> CliResult<()> {
    match cmd {
        HardnessCommand::Relu(a) => {
            let packing = make_packing(a.instance.d, a.eps, PackingStrategy::Axes)?;
            let (sources, target) = instance_indices(&a.instance, (&packing, &Family::Relu { eps: a.eps }))?;
            let inst = build_relu_hard_instance(&packing, &sources, target, &grid(&a.instance, cli.seed))?;
            emit_json(cli.out.as_deref(), &HardnessReport::from(inst))
        }
        HardnessCommand::General(a) => {
            let sigma = match a.sigma {
                SigmaName::Relu => Activation::Relu,
                SigmaName::Sigmoid => Activation::Sigmoid,
                SigmaName::Identity => Activation::Identity,
            };
            let packing = make_packing(a.instance.d, 0.5, PackingStrategy::Axes)?;
            let probe = Family::General {
                sigma,
                x1: a.x1,
                x2: a.x2,
                m: divlab_core::Ratio::Infinite,
            };
            let (sources, target) = instance_indices(&a.instance, (&packing, &probe))?;
            let inst = build_general_hard_instance(sigma, a.x1, a.x2, a.m, &packing, &sources, target, &grid(&a.instance, cli.seed))?;
            emit_json(cli.out.as_deref(), &HardnessReport::from(inst))
        }
        HardnessCommand::Packing(a) => {
            let strategy = match a.strategy {
                StrategyName::Axes => PackingStrategy::Axes,
                StrategyName::Greedy => PackingStrategy::Greedy {
                    target: a.count,
                    budget: a.budget,
                    seed: cli.seed.unwrap_or(0),
                },
            };
            emit_json(cli.out.as_deref(), &make_packing(a.d, a.eps, strategy)?)
        }
    }
}

fn parse_points(text: &str) -> CliResult<Vec<Vec<f64>>> {
    text.split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| CliError::Usage(format!("bad coordinate `{v}`: {e}")))
                })
                .collect()
        })
        .collect()
}

fn run_complexity(cli: &Cli, args: &ComplexityArgs) -> CliResult<()> {
    let data = match (&args.points, &args.data) {
        (Some(p), _) => parse_points(p)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            serde_json::from_str(&text).map_err(|e| {
                CliError::Core(Error::Parse {
                    path: path.clone(),
                    reason: e.to_string(),
                })
            })?
        }
        (None, None) => return Err(CliError::Usage("one of --points or --data is required".into())),
    };
    let class = FunctionClass::LinearBall { radius: args.radius };
    let seed = cli.seed.unwrap_or(0);
    let est = match args.weights {
        Weights::Gaussian => gaussian_complexity(&class, &data, args.draws, seed)?,
        Weights::Rademacher => rademacher_complexity(&class, &data, args.draws, seed)?,
    };
    emit_json(cli.out.as_deref(), &est)
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Exp(a) => run_exp(cli, a),
        Command::Diversity(a) => run_diversity(cli, a),
        Command::Eluder(a) => run_eluder(cli, a),
        Command::Hardness(c) => run_hardness(cli, c),
        Command::Complexity(a) => run_complexity(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("divlab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
