use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geoaux_cli::commands::{dispatch, rerun, RunOptions};
use geoaux_cli::error::{CliError, Result};
use geoaux_cli::run::{parse_overrides, resolve, run_dir_name, RunManifest, OUT_ROOT_ENV};
use geoaux_cli::{report, specs};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

/// Geometric self-supervision experiments on synthetic point clouds.
///
/// Experiment commands take their parameters from built-in defaults, then
/// `--config FILE` (JSON), then flags. Any option can be given as
/// `--<path> VALUE` with its dotted path (`--train.lambda 0`) or, when
/// unambiguous, its last segment (`--lambda 0`). Use `--print-spec` to see
/// every option of a command.
#[derive(Parser)]
#[command(name = "geoaux", version)]
struct Cli {
    /// Root directory for run outputs.
    #[arg(long, global = true, env = OUT_ROOT_ENV, default_value = "runs")]
    out: PathBuf,
    /// Replace an existing run directory with the same spec hash.
    #[arg(long, global = true)]
    overwrite: bool,
    /// Worker threads for independent runs (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SpecArgs {
    /// JSON file with (part of) the command's spec.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one option by dotted path, e.g. `train.epochs=10`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Print the resolved spec and exit without running.
    #[arg(long)]
    print_spec: bool,
    /// `--<option> VALUE` pairs. Global flags (`--out`, `--jobs`, ...) must
    /// come before these.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--OPTION VALUE")]
    options: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with both label sets.
    Gen(SpecArgs),
    /// Estimate normals and curvature of an .off or .xyz file.
    Props(SpecArgs),
    /// Train one model and evaluate it on the test split.
    Train(SpecArgs),
    /// Evaluate a checkpoint, optionally on noisy points.
    Eval(SpecArgs),
    /// Properties as input vs as supervision, over seeds.
    #[command(name = "ablate-props")]
    AblateProps(SpecArgs),
    /// Accuracy over a grid of regression weights.
    #[command(name = "sweep-lambda")]
    SweepLambda(SpecArgs),
    /// PCA vs learned normals on noisy test clouds.
    Noise(SpecArgs),
    /// Normal-regression probes: scratch, frozen classifier, GeoSSL backbone.
    Probe(SpecArgs),
    /// Run the seed-averaged trend checks.
    Trends(SpecArgs),
    /// Re-execute a run from its manifest and verify every output hash.
    Rerun {
        manifest: PathBuf,
    },
    /// Group a CSV by columns and report mean and std of one column.
    Report {
        csv: PathBuf,
        /// Grouping columns, comma separated.
        #[arg(long, value_delimiter = ',')]
        by: Vec<String>,
        /// Numeric column to aggregate.
        #[arg(long)]
        value: String,
    },
}

impl SpecArgs {
    /// Moves the command's own flags out of the free-form option list;
    /// once the first option is seen clap leaves the rest unparsed.
    fn normalized(&self) -> Result<SpecArgs> {
        let mut out = SpecArgs {
            config: self.config.clone(),
            set: self.set.clone(),
            print_spec: self.print_spec,
            options: Vec::new(),
        };
        let mut it = self.options.iter();
        while let Some(arg) = it.next() {
            let mut value = |flag: &str| {
                it.next()
                    .cloned()
                    .ok_or_else(|| CliError::Invalid(format!("`{flag}` needs a value")))
            };
            match arg.as_str() {
                "--print-spec" => out.print_spec = true,
                "--config" => out.config = Some(value("--config")?.into()),
                "--set" => out.set.push(value("--set")?),
                a if a.starts_with("--config=") => out.config = Some(a["--config=".len()..].into()),
                a if a.starts_with("--set=") => out.set.push(a["--set=".len()..].to_string()),
                _ => out.options.push(arg.clone()),
            }
        }
        Ok(out)
    }
}

fn resolve_spec<T>(args: &SpecArgs) -> Result<Value>
where
    T: Default + Serialize + DeserializeOwned,
{
    let defaults = serde_json::to_value(T::default())?;
    let overrides = parse_overrides(&defaults, &args.options, &args.set)?;
    Ok(serde_json::to_value(resolve::<T>(args.config.as_deref(), &overrides)?)?)
}

fn summary(opts: &RunOptions, m: &RunManifest) -> Value {
    json!({
        "run_dir": opts.out_root.join(run_dir_name(&m.command, &m.spec_hash)),
        "command": m.command,
        "spec_hash": m.spec_hash,
        "outputs": m.outputs.keys().collect::<Vec<_>>(),
    })
}

fn experiment(name: &str, args: &SpecArgs, opts: &RunOptions) -> Result<Value> {
    use specs::*;
    let args = &args.normalized()?;
    let spec = match name {
        "gen" => resolve_spec::<GenSpec>(args)?,
        "props" => resolve_spec::<PropsSpec>(args)?,
        "train" => resolve_spec::<TrainSpec>(args)?,
        "eval" => resolve_spec::<EvalSpec>(args)?,
        "ablate-props" => resolve_spec::<AblateSpec>(args)?,
        "sweep-lambda" => resolve_spec::<SweepSpec>(args)?,
        "noise" => resolve_spec::<NoiseSpec>(args)?,
        "probe" => resolve_spec::<ProbeSpec>(args)?,
        "trends" => resolve_spec::<TrendSpec>(args)?,
        other => return Err(CliError::Invalid(format!("unknown command `{other}`"))),
    };
    if args.print_spec {
        return Ok(spec);
    }
    let manifest = dispatch(name, spec, opts)?;
    Ok(summary(opts, &manifest))
}

fn execute(cli: Cli) -> Result<Value> {
    let opts = RunOptions {
        out_root: cli.out,
        overwrite: cli.overwrite,
        jobs: cli.jobs,
    };
    match &cli.command {
        Command::Gen(a) => experiment("gen", a, &opts),
        Command::Props(a) => experiment("props", a, &opts),
        Command::Train(a) => experiment("train", a, &opts),
        Command::Eval(a) => experiment("eval", a, &opts),
        Command::AblateProps(a) => experiment("ablate-props", a, &opts),
        Command::SweepLambda(a) => experiment("sweep-lambda", a, &opts),
        Command::Noise(a) => experiment("noise", a, &opts),
        Command::Probe(a) => experiment("probe", a, &opts),
        Command::Trends(a) => experiment("trends", a, &opts),
        Command::Rerun { manifest } => {
            let m = rerun(manifest, &opts)?;
            let mut s = summary(&opts, &m);
            s["reproduced"] = json!(true);
            Ok(s)
        }
        Command::Report { csv, by, value } => {
            let stats = report::aggregate_file(csv, by, value)?;
            let _ = write!(std::io::stdout(), "{}", report::to_csv(by, value, &stats)?);
            Ok(Value::Null)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            // A closed pipe (`| head`) is not a failure of the run.
            let _ = writeln!(std::io::stdout(), "{v:#}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
