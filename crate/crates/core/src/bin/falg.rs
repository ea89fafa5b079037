use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use falg::cli::{run, Options};
use falg::Model;

#[derive(Parser)]
#[command(name = "falg", version, about = "Finsler geometry checks on anchored bundles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-Lie residual, convexity, homogeneity and Cartan identities.
    Check(Args),
    /// Christoffel symbols, nonlinear connection, torsion and compatibility.
    Connection(Args),
    /// Geodesic (or forced Euler-Lagrange) flow with conservation checks.
    Geodesic(Args),
    /// Dual Hamiltonian flow compared against the geodesic flow.
    Hamiltonian(Args),
    /// hh/hv-curvature and flag curvature at one point.
    Curvature(Args),
    /// Leaf reduction comparisons for block-anchor models.
    Leaf(Args),
}

impl Command {
    fn split(self) -> (&'static str, Args) {
        match self {
            Command::Check(a) => ("check", a),
            Command::Connection(a) => ("connection", a),
            Command::Geodesic(a) => ("geodesic", a),
            Command::Hamiltonian(a) => ("hamiltonian", a),
            Command::Curvature(a) => ("curvature", a),
            Command::Leaf(a) => ("leaf", a),
        }
    }
}

#[derive(clap::Args)]
struct Args {
    /// Path to a model JSON file, or gallery:NAME.
    model: String,
    /// Number of sample points.
    #[arg(long)]
    points: Option<usize>,
    /// Override the tolerance of every upper-bound check.
    #[arg(long)]
    tol: Option<f64>,
    /// Write the trajectory as CSV (geodesic, hamiltonian).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Initial base point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// Initial fiber point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    y0: Option<Vec<f64>>,
    /// Final time.
    #[arg(long = "time", visible_alias = "t")]
    time: Option<f64>,
    /// Integrator tolerance.
    #[arg(long)]
    rtol: Option<f64>,
    /// Evaluation point (base point, or leaf point for `leaf`).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    point: Option<Vec<f64>>,
    /// Flag pole and second vector, each comma separated.
    #[arg(long, num_args = 2, value_names = ["U", "V"], allow_hyphen_values = true)]
    flag: Option<Vec<String>>,
    /// Leaf velocity for `leaf`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    velocity: Option<Vec<f64>>,
    /// Suppress the text summary.
    #[arg(long, short)]
    quiet: bool,
}

fn numbers(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"))).collect()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (command, args) = cli.command.split();
    let flag = match &args.flag {
        None => None,
        Some(v) => match (numbers(&v[0]), numbers(&v[1])) {
            (Ok(u), Ok(w)) => Some((u, w)),
            (Err(e), _) | (_, Err(e)) => {
                eprintln!("error: --flag: {e}");
                return ExitCode::from(2);
            }
        },
    };
    let model = match Model::load(&args.model) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: cannot load {}: {e}", args.model);
            return ExitCode::from(2);
        }
    };
    let opts = Options {
        points: args.points,
        tol: args.tol,
        x0: args.x0,
        y0: args.y0,
        t_end: args.time,
        rtol: args.rtol,
        point: args.point,
        flag,
        velocity: args.velocity,
    };
    let report = match run(command, &model, &opts) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {command}: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(path) = &args.json {
        if let Err(e) = std::fs::write(path, report.to_json()) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    if let Some(path) = &args.csv {
        match &report.csv {
            Some(csv) => {
                if let Err(e) = std::fs::write(path, csv) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
            None => eprintln!("warning: `{command}` produces no trajectory; --csv ignored"),
        }
    }
    if !args.quiet {
        print!("{}", report.summary());
    }
    ExitCode::from(report.exit_code() as u8)
}
