use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Comma-separated components, e.g. `0,0.5,-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coords(pub Vec<f64>);

fn coords(s: &str) -> Result<Coords, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
        .collect::<Result<Vec<_>, _>>()
        .map(Coords)
}

#[derive(Parser, Debug)]
#[command(name = "cc-geom", version, about = "Numerical multi-parameter Carnot-Caratheodory geometry")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct Common {
    /// `builtin:<name>` or a path to a system JSON file.
    #[arg(long, global = true)]
    pub system: Option<String>,
    /// Base point; repeat for grids.
    #[arg(long, global = true, value_parser = coords, allow_hyphen_values = true)]
    pub point: Vec<Coords>,
    /// Multi-parameter radius; repeat for radius sets.
    #[arg(long, global = true, value_parser = coords, allow_hyphen_values = true)]
    pub delta: Vec<Coords>,
    /// Random seed; drawn and echoed when absent.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Json)]
    pub out: OutFormat,
    /// Report path; standard output when absent.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Worker threads; all available cores when absent.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Fixed chart radius instead of the adaptive one.
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    /// Relative singular-value tolerance for rank decisions.
    #[arg(long, global = true)]
    pub rank_tol: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutFormat {
    Json,
    Csv,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadKind {
    Grid,
    Mc,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeArg {
    Ball,
    Cube,
}

#[derive(Args, Debug, Clone)]
pub struct QuadArgs {
    #[arg(long, value_enum, default_value_t = QuadKind::Grid)]
    pub quadrature: QuadKind,
    /// Monte Carlo sample count.
    #[arg(long, default_value_t = 4000)]
    pub samples: usize,
    /// Radial (or per-axis) Gauss-Legendre nodes.
    #[arg(long, default_value_t = 8)]
    pub radial: usize,
    /// Direction count for polar grids.
    #[arg(long)]
    pub directions: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct FunctionArgs {
    /// Test function in the system's coordinates, e.g. `1+x^2`.
    #[arg(long, default_value = "1", allow_hyphen_values = true)]
    pub function: String,
}

#[derive(Args, Debug, Clone)]
pub struct FamilyArgs {
    /// Families as `;`-separated lists of field indices, e.g. `0,1,2;3,4,5`.
    /// Defaults to grouping fields by parameter.
    #[arg(long)]
    pub families: Option<String>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Build a scaling chart and verify it on random samples.
    Chart {
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Solve the structure equation on the chart grid by Picard iteration.
    Ode {
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 30)]
        max_iter: usize,
    },
    /// Ball volume; `--cloud N` adds a reachable-set sample.
    Volume {
        #[command(flatten)]
        quad: QuadArgs,
        #[arg(long)]
        cloud: Option<usize>,
    },
    /// `Vol(B(x, 2 delta)) / Vol(B(x, delta))`.
    Doubling {
        #[command(flatten)]
        quad: QuadArgs,
    },
    /// `rho_r(x, y)` by bisection.
    Distance {
        #[arg(long, value_parser = coords, allow_hyphen_values = true)]
        target: Coords,
        /// Direction `r` in `(0,1]^nu`; all ones by default.
        #[arg(long, value_parser = coords)]
        direction: Option<Coords>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// IN / OUT / UNCERTAIN for each target.
    Membership {
        #[arg(long, value_parser = coords, allow_hyphen_values = true, required = true)]
        target: Vec<Coords>,
    },
    /// Whether a candidate field is controlled by the system.
    Control {
        /// Candidate coefficients, comma-separated; the system's own candidate by default.
        #[arg(long, allow_hyphen_values = true)]
        candidate: Option<String>,
        #[arg(long, value_parser = coords)]
        candidate_degree: Option<Coords>,
        #[arg(long, default_value_t = 256)]
        samples: usize,
    },
    /// Average of a function over a ball.
    Average {
        #[command(flatten)]
        function: FunctionArgs,
        #[command(flatten)]
        quad: QuadArgs,
        #[arg(long, value_enum, default_value_t = ShapeArg::Ball)]
        shape: ShapeArg,
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Monte Carlo composition of family averages.
    Compose {
        #[command(flatten)]
        function: FunctionArgs,
        #[command(flatten)]
        families: FamilyArgs,
        #[arg(long, default_value_t = 4000)]
        budget: usize,
    },
    /// Histogram of the composed push-forward in joint-chart coordinates.
    Kernel {
        #[command(flatten)]
        families: FamilyArgs,
        #[arg(long, default_value_t = 9)]
        bins: usize,
        #[arg(long, default_value_t = 4000)]
        budget: usize,
    },
    /// Maximal function over the radius set at every point; `--product`
    /// also compares with the iterated family maximal functions.
    Maxfn {
        #[command(flatten)]
        function: FunctionArgs,
        #[command(flatten)]
        quad: QuadArgs,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        product: bool,
        #[command(flatten)]
        families: FamilyArgs,
    },
    /// Intersection volume of two family balls against the product formula.
    Intersect {
        #[command(flatten)]
        families: FamilyArgs,
        #[arg(long, default_value_t = 4000)]
        budget: usize,
        #[arg(long, value_enum, default_value_t = ShapeArg::Cube)]
        shape: ShapeArg,
    },
    /// Composed family distance against the joint distance.
    Metric {
        #[arg(long, value_parser = coords, allow_hyphen_values = true)]
        target: Coords,
        #[arg(long, value_parser = coords)]
        direction: Option<Coords>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[command(flatten)]
        families: FamilyArgs,
    },
    /// Largest `eta'` with `B(x, eta' delta)` steerable by generator controls.
    Generators {
        /// Generator field indices; the fields of least total degree by default.
        #[arg(long)]
        generators: Option<String>,
        #[arg(long, default_value_t = 8)]
        samples: usize,
    },
    /// The builtin catalog, or one builtin's system JSON with `--export`.
    ListBuiltins {
        #[arg(long)]
        export: Option<String>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Chart { .. } => "chart",
            Command::Ode { .. } => "ode",
            Command::Volume { .. } => "volume",
            Command::Doubling { .. } => "doubling",
            Command::Distance { .. } => "distance",
            Command::Membership { .. } => "membership",
            Command::Control { .. } => "control",
            Command::Average { .. } => "average",
            Command::Compose { .. } => "compose",
            Command::Kernel { .. } => "kernel",
            Command::Maxfn { .. } => "maxfn",
            Command::Intersect { .. } => "intersect",
            Command::Metric { .. } => "metric",
            Command::Generators { .. } => "generators",
            Command::ListBuiltins { .. } => "list-builtins",
        }
    }

    /// Commands with a CSV form.
    pub fn has_csv(&self) -> bool {
        matches!(self, Command::Volume { cloud: Some(_), .. } | Command::Kernel { .. } | Command::Maxfn { .. })
    }
}
