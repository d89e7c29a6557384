//! Command-line surface. Every argument struct also serializes, so a report can
//! embed the exact configuration that produced it and `verify --replay` can rerun it.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "mechlearn", version, about = "Learn, evaluate and audit multi-item auctions")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct Global {
    /// Root seed; every random stream of the run is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Largest number of type profiles an exact oracle may enumerate.
    #[arg(long, global = true, default_value_t = 1e5)]
    pub guard_profiles: f64,
    /// Output file (the artifact for generate/learn/mech posted/exante curve, else the report).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Write a random instance file.
    Generate(GenerateArgs),
    /// Run a learner and write the mechanism it produces.
    Learn(LearnArgs),
    /// Evaluate one mechanism over a batch of instances and seeds.
    Eval(EvalArgs),
    /// Ex-ante relaxation and revenue curves.
    Exante {
        #[command(subcommand)]
        op: ExanteOp,
    },
    /// Build, run or evaluate a single mechanism.
    Mech {
        #[command(subcommand)]
        op: MechOp,
    },
    /// Brute-force benchmarks on tiny instances.
    Oracle {
        #[command(subcommand)]
        op: OracleOp,
    },
    /// Sample-complexity bounds from a complexity table.
    Bounds(BoundsArgs),
    /// Run invariant suites on instances, or replay a report.
    Verify(VerifyArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Learn(_) => "learn",
            Command::Eval(_) => "eval",
            Command::Exante { op: ExanteOp::Solve { .. } } => "exante solve",
            Command::Exante { op: ExanteOp::Curve { .. } } => "exante curve",
            Command::Mech { op: MechOp::Eval { .. } } => "mech eval",
            Command::Mech { op: MechOp::Run { .. } } => "mech run",
            Command::Mech { op: MechOp::Posted { .. } } => "mech posted",
            Command::Oracle { op } => match op {
                OracleOp::Bic { .. } => "oracle bic",
                OracleOp::Posted { .. } => "oracle posted",
                OracleOp::Core { .. } => "oracle core",
                OracleOp::Welfare { .. } => "oracle welfare",
            },
            Command::Bounds(_) => "bounds",
            Command::Verify(_) => "verify",
        }
    }

    /// Library module a failure of this command is attributed to.
    pub fn module(&self) -> &'static str {
        match self {
            Command::Generate(_) => "dist",
            Command::Learn(_) => "learn",
            Command::Eval(_) | Command::Mech { .. } => "mech",
            Command::Exante { op: ExanteOp::Curve { .. } } => "curve",
            Command::Exante { .. } => "exante",
            Command::Oracle { .. } => "oracle",
            Command::Bounds(_) => "converge",
            Command::Verify(_) => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Independent random discrete marginal in every cell.
    IidDiscrete,
    /// Random uniform / truncated exponential / equal-revenue cells, truncated at --max-value.
    TruncatedParametric,
    /// Symmetric XOS bidders whose item signals carry one value per clause.
    SymmetricXos,
    /// Every cell is a point mass at --value.
    PointMass,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum Class {
    Additive,
    UnitDemand,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub family: Family,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    /// Support points per discrete cell.
    #[arg(long, default_value_t = 3)]
    pub support: usize,
    /// Largest value a generated cell can take.
    #[arg(long, default_value_t = 4.0)]
    pub max_value: f64,
    /// Value of every cell of the point-mass family.
    #[arg(long, default_value_t = 1.0)]
    pub value: f64,
    /// Clauses per XOS bidder.
    #[arg(long, default_value_t = 2)]
    pub clauses: usize,
    /// Repeat one generated row for every bidder.
    #[arg(long)]
    pub symmetric: bool,
    #[arg(long, value_enum, default_value_t = Class::Additive)]
    pub class: Class,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    UdMaxmin,
    UdRegular,
    AdditiveBounded,
    AdditiveMaxmin,
    XosSample,
    SymXos,
    SymSubadditive,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum Access {
    /// The instance is the approximate prior itself.
    Prior,
    /// The learner sees only sample profiles drawn from the instance.
    Samples,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct LearnArgs {
    #[arg(long, value_enum)]
    pub model: Model,
    #[arg(long)]
    pub instance: PathBuf,
    /// Defaults to the model's natural access model.
    #[arg(long, value_enum)]
    pub access: Option<Access>,
    /// Sample profiles per batch under sample access.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Kolmogorov radius of the approximate prior.
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Truncation constant of the regular learner.
    #[arg(long, default_value_t = mechlearn::exante::DEFAULT_C)]
    pub c: f64,
    /// Order-statistic draws of the additive max-min entry fee.
    #[arg(long, default_value_t = mechlearn::learn::DEFAULT_FEE_DRAWS)]
    pub draws: usize,
    /// Threshold balance b of the symmetric learner (default n/(3 max(n, m))).
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    /// Price-net ceiling (default 2G).
    #[arg(long)]
    pub net_b: Option<f64>,
    /// Price-net step (default ceiling / 4).
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct EvalArgs {
    #[arg(long)]
    pub mech: PathBuf,
    /// Instance files; repeat the flag for a batch.
    #[arg(long, required = true)]
    pub instance: Vec<PathBuf>,
    /// Monte Carlo seeds, comma separated (default: the root seed).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    /// Also compute the exact expectation by enumeration.
    #[arg(long)]
    pub exact: bool,
    /// Revenue table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 4)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum Program {
    Exact,
    Approx,
    Regular,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum ExanteOp {
    /// Solve the ex-ante program and report {q, objective, tag}.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        /// Explicit caps: row cap, column cap.
        #[arg(long, value_delimiter = ',')]
        caps: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = Program::Exact)]
        program: Program,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        #[arg(long, default_value_t = mechlearn::exante::DEFAULT_C)]
        c: f64,
    },
    /// Export one cell's revenue curve as CSV.
    Curve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 0)]
        bidder: usize,
        #[arg(long, default_value_t = 0)]
        item: usize,
        #[arg(long, default_value_t = 20)]
        grid: usize,
    },
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum MechOp {
    /// Expected revenue of a mechanism file, exact or Monte Carlo.
    Eval {
        #[arg(long)]
        mech: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        exact: bool,
        /// Monte Carlo trials.
        #[arg(long)]
        mc: Option<usize>,
    },
    /// Run a mechanism on one profile drawn with the root seed.
    Run {
        #[arg(long)]
        mech: PathBuf,
        #[arg(long)]
        instance: PathBuf,
    },
    /// Write a posted-price mechanism with the given price grid.
    Posted {
        #[arg(long)]
        instance: PathBuf,
        /// Rows separated by ';', items by ',' (e.g. "1,2;1.5,2"). A single row is used for every bidder.
        #[arg(long)]
        prices: String,
        #[arg(long)]
        rationed: bool,
    },
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum OracleOp {
    /// Optimal BIC revenue by linear programming.
    Bic {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Best deterministic posted-price mechanism by exhaustive search.
    Posted {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        rationed: bool,
    },
    /// Exact Core of a symmetric instance at learned balanced thresholds.
    Core {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        b: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
    },
    /// Expected optimal welfare.
    Welfare {
        #[arg(long)]
        instance: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum TableKind {
    /// Axis-aligned boxes: every subset T with VC dimension 2|T|.
    Rectangles,
    /// Per-axis intervals of VC dimension 2.
    Convex,
    /// DKW entries on every axis.
    Dkw,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMode {
    Partition,
    Vc,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct BoundsArgs {
    #[arg(long, value_enum, default_value_t = TableKind::Rectangles, conflicts_with = "table_file")]
    pub table: TableKind,
    /// Complexity table as JSON {d, entries}.
    #[arg(long)]
    pub table_file: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, value_enum, default_value_t = BoundMode::Partition)]
    pub mode: BoundMode,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Curve,
    Exante,
    Mech,
    Oracle,
    Learn,
    Converge,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct VerifyArgs {
    /// Instances to check; repeat the flag for several.
    #[arg(long)]
    pub instance: Vec<PathBuf>,
    /// Suites to run (default: all).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub suite: Vec<Suite>,
    /// Rerun the configuration embedded in a report and compare the results.
    #[arg(long, conflicts_with_all = ["instance", "suite"])]
    pub replay: Option<PathBuf>,
    /// Monte Carlo trials of the mechanism suite.
    #[arg(long, default_value_t = 20_000)]
    pub trials: usize,
}
