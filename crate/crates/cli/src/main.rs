use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser};
use hetnoma::experiment::{recipe, run_experiment, write_outputs, ExperimentSpec, Format, RECIPES};
use hetnoma::Error;

/// Run a coverage/throughput experiment and write its result table.
#[derive(Debug, Parser)]
#[command(name = "hetnoma", version, about)]
#[command(group(ArgGroup::new("input").required(true).args(["spec", "recipe"])))]
struct Args {
    /// Experiment spec (TOML).
    #[arg(long, value_name = "PATH")]
    spec: Option<PathBuf>,

    /// Built-in experiment: fig1, fig2, fig3 or fig4.
    #[arg(long, value_name = "NAME")]
    recipe: Option<String>,

    /// Output directory [default: the experiment file's `output`, else ./results].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Monte Carlo trials per sweep point and tier.
    #[arg(long, value_name = "N")]
    trials: Option<u64>,

    /// Master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads; results do not depend on it.
    #[arg(long, value_name = "N", env = "HETNOMA_JOBS")]
    jobs: Option<usize>,

    #[arg(long, value_name = "FORMAT", default_value = "csv", value_parser = ["csv", "json"])]
    format: String,

    /// Print the resolved spec as TOML and exit.
    #[arg(long)]
    print_spec: bool,
}

/// 2 for anything wrong with the input, 3 for numerical failures.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_)
        | Error::InvalidAllocation(_)
        | Error::Index(_)
        | Error::NonPositiveArgument(_)
        | Error::EmptyFeasibleRegion(_)
        | Error::Spec(_) => 2,
        Error::Quadrature(_)
        | Error::Divergent(_)
        | Error::RetryBudgetExhausted { .. }
        | Error::DeploymentTooLarge { .. }
        | Error::NoBaseStations => 3,
        Error::Io(_) => 1,
    }
}

fn run(args: Args) -> Result<(), Error> {
    let mut spec = match (&args.spec, &args.recipe) {
        (Some(path), _) => ExperimentSpec::from_path(path)?,
        (None, Some(name)) => recipe(name)?,
        (None, None) => return Err(Error::Spec(format!("need --spec or --recipe ({})", RECIPES.join(", ")))),
    };
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    spec.validate()?;
    if args.print_spec {
        print!("{}", spec.resolved()?.to_toml()?);
        return Ok(());
    }
    let format: Format = args.format.parse()?;
    let dir = args
        .out
        .or_else(|| spec.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    let output = run_experiment(&spec, args.jobs)?;
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    let path = write_outputs(&output, &dir, format)?;
    println!("{}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
