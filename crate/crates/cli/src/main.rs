mod convert;
mod detect;
mod error;
mod theory;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dart_core::stream_io::{read_stream, GroundTruth, StreamHeader};
use dart_core::synthetic::{self, bundled, ScenarioSpec};
use serde::Serialize;

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "dart", version, about = "Streaming OOD detection over layered feature streams")]
struct Cli {
    /// Output directory for generated files and reports.
    #[arg(long, global = true, env = "DART_OUT_DIR", default_value = "dart-out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic stream from a scenario file or bundled scenario name.
    Generate(GenerateArgs),
    /// Run a detector over one or more streams and write reports.
    Detect(detect::DetectArgs),
    /// Separation bound, Fisher alignment and BN decomposition reports.
    Theory(theory::TheoryArgs),
    /// Import per-layer CSV matrices into a stream file.
    Convert(convert::ConvertArgs),
    /// Print a stream's header and per-batch sizes as JSON.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Path to a scenario TOML file, or the name of a bundled scenario.
    #[arg(required_unless_present = "list")]
    scenario: Option<String>,
    /// Stream path; defaults to `<out-dir>/<name>.dfs`.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// List bundled scenarios and exit.
    #[arg(long)]
    list: bool,
    /// Print the resolved scenario TOML instead of generating.
    #[arg(long)]
    print_spec: bool,
}

#[derive(Args)]
struct InspectArgs {
    input: PathBuf,
    /// Also print ID/OOD/unknown label counts per batch.
    #[arg(long)]
    labels: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn load_scenario(arg: &str) -> Result<(String, ScenarioSpec), CliError> {
    let (name, text) = match bundled::get(arg) {
        Some(text) if !Path::new(arg).exists() => (arg.to_string(), text.to_string()),
        _ => {
            let path = Path::new(arg);
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let stem = path.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
            (stem, text)
        }
    };
    let spec = ScenarioSpec::from_toml(&text).map_err(|source| CliError::Scenario {
        context: arg.to_string(),
        source,
    })?;
    Ok((name, spec))
}

fn cmd_generate(args: GenerateArgs, out_dir: &Path) -> Result<(), CliError> {
    if args.list {
        for (name, text) in bundled::ALL {
            let spec = ScenarioSpec::from_toml(text).expect("bundled scenarios parse");
            println!("{name}\t{}", spec.description);
        }
        return Ok(());
    }
    let arg = args.scenario.expect("clap enforces scenario unless --list");
    let (name, mut spec) = load_scenario(&arg)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if args.print_spec {
        print!("{}", spec.to_toml());
        return Ok(());
    }
    let output = args.output.unwrap_or_else(|| out_dir.join(format!("{name}.dfs")));
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let manifest = synthetic::generate(&spec, &output).map_err(|source| CliError::Scenario {
        context: output.display().to_string(),
        source,
    })?;
    let manifest_path = output.with_extension("manifest.json");
    write_file(&manifest_path, &manifest.to_json())?;
    println!(
        "wrote {} ({} batches) and {}",
        output.display(),
        manifest.num_batches,
        manifest_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct BatchInfo {
    index: u32,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<[usize; 3]>,
}

#[derive(Serialize)]
struct InspectOutput<'a> {
    path: &'a Path,
    header: StreamHeader,
    num_batches: usize,
    num_samples: usize,
    batches: Vec<BatchInfo>,
}

fn cmd_inspect(args: InspectArgs) -> Result<(), CliError> {
    let path = &args.input;
    let (header, reader) = read_stream(path).map_err(|e| CliError::stream(path, e))?;
    let mut batches = Vec::new();
    for b in reader {
        let b = b.map_err(|e| CliError::stream(path, e))?;
        let labels = (args.labels).then(|| {
            let mut c = [0usize; 3];
            for l in b.labels.iter().flatten() {
                c[match l {
                    GroundTruth::Id => 0,
                    GroundTruth::Ood => 1,
                    GroundTruth::Unknown => 2,
                }] += 1;
            }
            c
        });
        batches.push(BatchInfo {
            index: b.index,
            n: b.len(),
            labels,
        });
    }
    let out = InspectOutput {
        path,
        header,
        num_batches: batches.len(),
        num_samples: batches.iter().map(|b| b.n).sum(),
        batches,
    };
    let json = serde_json::to_string_pretty(&out).expect("inspect output serializes");
    match writeln!(std::io::stdout().lock(), "{json}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a, &cli.out_dir),
        Command::Detect(a) => detect::run(a, &cli.out_dir),
        Command::Theory(a) => theory::run(a, &cli.out_dir),
        Command::Convert(a) => convert::run(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
