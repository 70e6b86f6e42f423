//! Command-line front end for the fault-diagnosis pipeline.
//!
//! `run` executes an experiment and writes its report, `sweep` repeats it
//! over one hyperparameter axis, `convert` and `inspect` handle the binary
//! record format, and `report` pretty-prints a saved result.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use ssidec_core::config::{RunMode, TrainingConfig};
use ssidec_core::harness::{
    emit_report, emit_sweep_report, run_experiment, run_sweep, SweepAxis,
};
use ssidec_core::signal::{read_record, write_record};

#[derive(Parser)]
#[command(
    name = "ssidec",
    version,
    about = "Semi-supervised deep-clustering fault diagnosis on vibration spectra"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its report directory.
    Run(RunArgs),
    /// Re-run an experiment at several values of one hyperparameter.
    Sweep(SweepArgs),
    /// Convert a plain-text signal (one sample per line) to a record file.
    Convert(ConvertArgs),
    /// Print the header and basic statistics of a record file.
    Inspect {
        /// Record file to inspect.
        input: PathBuf,
    },
    /// Summarize a saved result.json on stdout.
    Report {
        /// Path to a result.json written by `run`.
        input: PathBuf,
    },
}

/// Config resolution, lowest to highest precedence: built-in defaults, the
/// TOML file, `--desk`, then explicit flags.
#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; its keys mirror the config field names.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use reduced training budgets for quick local runs.
    #[arg(long)]
    desk: bool,
    /// Task id, e.g. C1..C5, M1, UnsupC1, UnsupM1, Synth2..Synth10.
    #[arg(long)]
    task: Option<String>,
    /// Pipeline mode: semisup or unsup.
    #[arg(long)]
    mode: Option<RunMode>,
    /// Base random seed; trial t runs with seed + t.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of independent trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Labeled samples per class.
    #[arg(long)]
    n_sp: Option<usize>,
    /// Directory containing record files (for recorded-data tasks).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Manifest CSV mapping record files to labels and conditions.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Skip the clustering stage (pseudo-labels from initial centers).
    #[arg(long)]
    no_idec: bool,
    /// Drop the adversarial smoothing term from the clustering stage.
    #[arg(long)]
    no_vat: bool,
    /// Remove the autoencoder's skip connections.
    #[arg(long)]
    no_skip: bool,
    /// Train the classifier on labeled samples only, from scratch.
    #[arg(long)]
    plain_cnn: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<TrainingConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainingConfig::from_toml_file(path)
                .with_context(|| format!("loading {}", path.display()))?,
            None => TrainingConfig::benchmark_profile(),
        };
        if self.desk {
            let desk = TrainingConfig::desk_profile();
            cfg.pretrain_epochs = desk.pretrain_epochs;
            cfg.clustering_epochs = desk.clustering_epochs;
            cfg.classifier_epochs = desk.classifier_epochs;
            cfg.n_un = desk.n_un;
            cfg.n_test = desk.n_test;
        }
        if let Some(task) = &self.task {
            cfg.task = task.clone();
        }
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        if let Some(n_sp) = self.n_sp {
            cfg.n_sp = n_sp;
        }
        if let Some(dir) = &self.data_dir {
            cfg.data_dir = dir.display().to_string();
        }
        if let Some(manifest) = &self.manifest {
            cfg.manifest = manifest.display().to_string();
        }
        cfg.no_idec |= self.no_idec;
        cfg.no_vat |= self.no_vat;
        cfg.no_skip |= self.no_skip;
        cfg.plain_cnn |= self.plain_cnn;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory (default: $SSIDEC_OUT or ./runs, plus a run name).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite an existing report in the output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Hyperparameter to vary: n_sp, n_rep, or gamma_c.
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated values for the axis.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ConvertArgs {
    /// Text file with one sample per line (commas also accepted).
    input: PathBuf,
    /// Record file to write.
    output: PathBuf,
    /// Sample rate of the signal in Hz.
    #[arg(long)]
    rate: f64,
    /// Class label to append to the manifest (with --manifest).
    #[arg(long)]
    label: Option<usize>,
    /// Condition tag to append to the manifest (with --manifest).
    #[arg(long)]
    condition: Option<String>,
    /// Manifest CSV to append to (created with a header if absent). The
    /// stored file name is the output's base name, so keep records and
    /// manifest in the same directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

fn default_out_dir(name: &str) -> PathBuf {
    let base = std::env::var_os("SSIDEC_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    base.join(name)
}

fn print_summary(result: &ssidec_core::harness::ExperimentResult) {
    println!(
        "task {} ({}), {} trial(s), config {}",
        result.task,
        result.mode,
        result.trials.len(),
        result.config_hash
    );
    for t in &result.trials {
        let mut parts = Vec::new();
        if let Some(e) = &t.raw_kmeans {
            parts.push(format!("raw k-means {:.4}", e.acc));
        }
        if let Some(e) = &t.stage1 {
            parts.push(format!("stage1 {:.4}", e.acc));
        }
        if let Some(e) = &t.stage2 {
            parts.push(format!("stage2 {:.4}", e.acc));
        }
        parts.push(format!(
            "final acc {:.4} nmi {:.4}",
            t.final_eval.acc, t.final_eval.nmi
        ));
        println!("  trial {} (seed {}): {}", t.trial, t.seed, parts.join(", "));
    }
    let s = &result.summary;
    println!(
        "  overall: acc {:.4} \u{b1} {:.4}, nmi {:.4} \u{b1} {:.4}",
        s.acc.mean, s.acc.std, s.nmi.mean, s.nmi.std
    );
}

fn cmd_run(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = args.config.resolve()?;
    let result = run_experiment(&cfg)?;
    let out = args.out.clone().unwrap_or_else(|| {
        default_out_dir(&format!(
            "{}-{}-{}",
            cfg.task,
            cfg.mode,
            &format!("{:016x}", cfg.config_hash())[..8]
        ))
    });
    emit_report(&result, &out, args.force)?;
    print_summary(&result);
    println!("report written to {}", out.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let cfg = args.config.resolve()?;
    let points = run_sweep(&cfg, args.axis, &args.values)?;
    let out = args.out.clone().unwrap_or_else(|| {
        default_out_dir(&format!(
            "sweep-{}-{}-{}",
            cfg.task,
            args.axis,
            &format!("{:016x}", cfg.config_hash())[..8]
        ))
    });
    emit_sweep_report(&points, &out, args.force)?;
    for p in &points {
        println!(
            "{} = {}: acc {:.4} \u{b1} {:.4}, nmi {:.4}",
            p.axis,
            p.value,
            p.result.summary.acc.mean,
            p.result.summary.acc.std,
            p.result.summary.nmi.mean
        );
    }
    println!("sweep written to {}", out.display());
    Ok(())
}

fn parse_samples(text: &str) -> anyhow::Result<Vec<f64>> {
    let mut samples = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        for token in line.split(',').flat_map(str::split_whitespace) {
            let v: f64 = token
                .parse()
                .with_context(|| format!("line {}: bad sample `{token}`", line_no + 1))?;
            samples.push(v);
        }
    }
    if samples.is_empty() {
        bail!("no samples found in input");
    }
    Ok(samples)
}

fn append_manifest(manifest: &Path, file: &str, label: usize, condition: &str) -> anyhow::Result<()> {
    use std::io::Write as _;
    let fresh = !manifest.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(manifest)
        .with_context(|| format!("opening {}", manifest.display()))?;
    if fresh {
        writeln!(f, "file,label,condition")?;
    }
    writeln!(f, "{file},{label},{condition}")?;
    Ok(())
}

fn cmd_convert(args: &ConvertArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let samples = parse_samples(&text)?;
    write_record(&args.output, &samples, args.rate)?;
    println!(
        "wrote {} samples at {} Hz to {}",
        samples.len(),
        args.rate,
        args.output.display()
    );
    if let Some(manifest) = &args.manifest {
        let (label, condition) = match (args.label, &args.condition) {
            (Some(l), Some(c)) => (l, c.as_str()),
            _ => bail!("--manifest requires both --label and --condition"),
        };
        let file = args
            .output
            .file_name()
            .and_then(|n| n.to_str())
            .context("output path has no file name")?;
        append_manifest(manifest, file, label, condition)?;
        println!("appended to {}", manifest.display());
    }
    Ok(())
}

fn cmd_inspect(input: &Path) -> anyhow::Result<()> {
    let (samples, rate) = read_record(input)?;
    let n = samples.len();
    let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let rms = (samples.iter().map(|s| s * s).sum::<f64>() / n as f64).sqrt();
    println!("{}", input.display());
    println!("  samples: {n}");
    println!("  rate:    {rate} Hz");
    println!("  length:  {:.3} s", n as f64 / rate);
    println!("  range:   [{min:.6}, {max:.6}], rms {rms:.6}");
    Ok(())
}

fn cmd_report(input: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("reading {}", input.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let task = v["task"].as_str().unwrap_or("?");
    let mode = v["mode"].as_str().unwrap_or("?");
    let hash = v["config_hash"].as_str().unwrap_or("?");
    println!("task {task} ({mode}), config {hash}");
    if let Some(trials) = v["trials"].as_array() {
        for t in trials {
            let trial = t["trial"].as_u64().unwrap_or(0);
            let acc = t["final_eval"]["acc"].as_f64().unwrap_or(f64::NAN);
            let nmi = t["final_eval"]["nmi"].as_f64().unwrap_or(f64::NAN);
            let mut extra = String::new();
            if let Some(a) = t["stage1"]["acc"].as_f64() {
                extra.push_str(&format!(" stage1 {a:.4}"));
            }
            if let Some(a) = t["stage2"]["acc"].as_f64() {
                extra.push_str(&format!(" stage2 {a:.4}"));
            }
            println!("  trial {trial}:{extra} final acc {acc:.4} nmi {nmi:.4}");
        }
    }
    let acc = &v["summary"]["acc"];
    let nmi = &v["summary"]["nmi"];
    println!(
        "  overall: acc {:.4} \u{b1} {:.4}, nmi {:.4} \u{b1} {:.4}",
        acc["mean"].as_f64().unwrap_or(f64::NAN),
        acc["std"].as_f64().unwrap_or(f64::NAN),
        nmi["mean"].as_f64().unwrap_or(f64::NAN),
        nmi["std"].as_f64().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Convert(args) => cmd_convert(args),
        Command::Inspect { input } => cmd_inspect(input),
        Command::Report { input } => cmd_report(input),
    }
}
