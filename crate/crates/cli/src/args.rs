use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "artikit", version, about = "Articulated CAD assemblies from declarative plans")]
pub struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// TOML config file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    /// Seed for every sampled quantity.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan documents.
    #[command(subcommand)]
    Plan(PlanCommand),
    /// Assemble a plan at rest from part programs.
    Assemble {
        plan: PathBuf,
        /// Directory holding `<part>.json` programs for generated parts.
        #[arg(long)]
        programs: PathBuf,
        /// Write the model here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Poses at given joint coordinates.
    Fk {
        model: PathBuf,
        #[command(flatten)]
        q: JointValues,
    },
    /// Keyframes sweeping each coordinate through its range.
    Animate {
        model: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        /// Write one poses file per keyframe here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coincidence and interference checks at rest and over a sweep.
    Verify {
        model: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
    #[command(subcommand)]
    Export(ExportCommand),
    #[command(subcommand)]
    Metrics(MetricsCommand),
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    #[command(subcommand)]
    Store(StoreCommand),
}

#[derive(Debug, Subcommand)]
pub enum PlanCommand {
    /// Structural validation.
    Validate { plan: PathBuf },
}

#[derive(Debug, Clone, Args, Default)]
pub struct JointValues {
    /// `joint=v1,v2,...` in plan units (deg / mm); repeatable.
    #[arg(long = "set", value_name = "JOINT=V[,V..]")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum ExportCommand {
    /// URDF plus OBJ meshes.
    Urdf {
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Scene file plus OBJ meshes at one configuration.
    Scene {
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
        #[command(flatten)]
        q: JointValues,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Normalize {
    UnitCube,
    Diagonal,
}

#[derive(Debug, Clone, Args)]
pub struct ShapePair {
    /// Prediction: OBJ mesh, part program or model JSON.
    pub pred: PathBuf,
    /// Ground truth, same forms.
    pub gt: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub points: usize,
    /// Skip rigid alignment.
    #[arg(long)]
    pub no_icp: bool,
    #[arg(long, value_enum, default_value_t = Normalize::UnitCube)]
    pub normalize: Normalize,
    /// Meshing resolution for model inputs.
    #[arg(long)]
    pub resolution: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum MetricsCommand {
    /// Chamfer distance.
    Cd(ShapePair),
    /// Hausdorff distance.
    Hd(ShapePair),
    /// Bounding-box intersection over ground truth.
    Iogt(ShapePair),
    /// Joint-set accuracy and F1 between two models.
    Joints {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long, default_value_t = artikit::metrics::JOINT_MATCH_THRESHOLD)]
        threshold: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgentKind {
    Stub,
    Remote,
}

#[derive(Debug, Subcommand)]
pub enum PipelineCommand {
    /// Run the agent pipeline on a task file.
    Run {
        task: PathBuf,
        #[arg(long, value_enum)]
        agents: AgentKind,
        /// Stub reply directory.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Pick this design alternative without prompting.
        #[arg(long)]
        choose: Option<usize>,
        #[arg(long)]
        store: Option<PathBuf>,
        /// Write trace, model, URDF and scene here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run part workers one at a time.
        #[arg(long)]
        sequential: bool,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        /// Directory of `<role>.txt` prompt templates.
        #[arg(long)]
        templates: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Context {
    Design,
    Generation,
}

#[derive(Debug, Subcommand)]
pub enum StoreCommand {
    /// Add a case from a JSON file.
    Add {
        case: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Retrieve cases similar to a requirement.
    Query {
        text: String,
        #[arg(long, value_enum, default_value_t = Context::Design)]
        context: Context,
        #[arg(long)]
        k_good: Option<usize>,
        #[arg(long)]
        k_issue: Option<usize>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Case counts per partition.
    Stats {
        #[arg(long)]
        store: Option<PathBuf>,
    },
}
