use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ranklab::checks::{gradient_suite, limit_suite, GradSuiteConfig, LimitSuiteConfig};
use ranklab::pairs::Strategy;
use ranklab::scorer::MlpScorer;
use ranklab::synth::{self, DatasetConfig, SynthError};
use ranklab::train::{
    ablate, evaluate, preset_grid, run_experiment, ExperimentConfig, GridCell, Preset, TrainError,
};

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "ranklab", version, about = "Train and evaluate ranking-regularized quality scorers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Gen(GenArgs),
    /// Train one configuration; writes a weight snapshot and a JSON report.
    Train(TrainArgs),
    /// Score a CSV with a weight snapshot and print the metrics as JSON.
    Eval(EvalArgs),
    /// Run an ablation grid over several seeds.
    Ablate(AblateArgs),
    /// Run the gradient and low-temperature limit checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DatasetConfig::default().n_contents)]
    n_contents: usize,
    #[arg(long, default_value_t = DatasetConfig::default().n_types)]
    n_types: usize,
    #[arg(long, default_value_t = DatasetConfig::default().n_severities)]
    n_severities: usize,
    #[arg(long, default_value_t = DatasetConfig::default().feature_noise_sd)]
    feature_noise_sd: f64,
    #[arg(long, default_value_t = DatasetConfig::default().mos_noise_sd)]
    mos_noise_sd: f64,
    #[arg(long, default_value_t = DatasetConfig::default().content_dim)]
    content_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Experiment settings: a JSON config file, then individual overrides.
#[derive(Args)]
struct ConfigArgs {
    /// JSON object keyed by config field names; missing keys use defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Train on this CSV instead of generated data.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Override any config field, e.g. `--set enable_tau=false`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, TrainError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.strategy {
            cfg.strategy = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.temperature {
            cfg.temperature = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = &self.dataset {
            cfg.dataset_csv = Some(v.clone());
        }
        for kv in &self.set {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("expected KEY=VALUE, got `{kv}`")))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Weight snapshot destination.
    #[arg(long)]
    out: PathBuf,
    /// JSON report destination; defaults to the snapshot path with a
    /// `.json` extension.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Built-in grid: pair-formation, regularizers or batch-size.
    #[arg(long, conflicts_with = "grid")]
    preset: Option<Preset>,
    /// JSON array of `{"label": .., "config": {..}}` cells.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Seeds 0..n.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Directory for report.json and report.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = GradSuiteConfig::default().points)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::Config(_) | TrainError::Data(SynthError::Config(_)) => EXIT_CONFIG,
            e if e.is_infeasible() => EXIT_INFEASIBLE,
            _ => EXIT_OTHER,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn other(context: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_OTHER,
        message: format!("{}: {e}", context.display()),
    }
}

fn gen(args: GenArgs) -> Result<(), Failure> {
    let cfg = DatasetConfig {
        n_contents: args.n_contents,
        n_types: args.n_types,
        n_severities: args.n_severities,
        feature_noise_sd: args.feature_noise_sd,
        mos_noise_sd: args.mos_noise_sd,
        content_dim: args.content_dim,
        seed: args.seed,
    };
    let data = synth::generate_dataset(&cfg).map_err(TrainError::from)?;
    synth::write_csv(&data, &args.out).map_err(|e| other(&args.out, e))?;
    println!("wrote {} samples to {}", data.len(), args.out.display());
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<(), Failure> {
    let cfg = args.config.resolve()?;
    let (model, report) = run_experiment(&cfg)?;
    model.save(&args.out).map_err(|e| other(&args.out, e))?;
    let report_path = args
        .report
        .unwrap_or_else(|| args.out.with_extension("json"));
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&report_path, json + "\n").map_err(|e| other(&report_path, e))?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    for (split, e) in [("train", &report.train_eval), ("test", &report.test_eval)] {
        println!(
            "{split:5} plcc={} srcc={} krcc={} pair_acc={}",
            fmt(e.plcc),
            fmt(e.srcc),
            fmt(e.krcc),
            fmt(e.pair_acc)
        );
    }
    println!("config_hash={} seed={}", report.config_hash, report.seed);
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<(), Failure> {
    let model = MlpScorer::load(&args.model).map_err(|e| other(&args.model, e))?;
    let data = synth::read_csv(&args.data).map_err(|e| other(&args.data, e))?;
    let e = evaluate(&model, &data)?;
    println!("{}", serde_json::to_string_pretty(&e).expect("metrics serialize"));
    Ok(())
}

fn ablate_cmd(args: AblateArgs) -> Result<(), Failure> {
    let base = args.config.resolve()?;
    let cells: Vec<GridCell> = match (&args.preset, &args.grid) {
        (Some(p), _) => preset_grid(*p, &base),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| other(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?
        }
        (None, None) => {
            return Err(TrainError::Config("one of --preset or --grid is required".into()).into())
        }
    };
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let report = ablate(&cells, &seeds)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| other(&args.out_dir, e))?;
    let json_path = args.out_dir.join("report.json");
    fs::write(&json_path, report.to_json() + "\n").map_err(|e| other(&json_path, e))?;
    let csv_path = args.out_dir.join("report.csv");
    let file = File::create(&csv_path).map_err(|e| other(&csv_path, e))?;
    report
        .write_csv(BufWriter::new(file))
        .map_err(|e| other(&csv_path, e))?;
    println!("{:24} {:>6} {:>8} {:>8} {:>8}", "cell", "failed", "plcc", "srcc", "krcc");
    for c in report.cells.iter().filter(|c| c.split == "test") {
        let med = |s: Option<ranklab::train::ablate::Spread>| {
            s.map_or_else(|| "n/a".to_string(), |s| format!("{:.4}", s.median))
        };
        println!(
            "{:24} {:>6} {:>8} {:>8} {:>8}",
            c.label,
            c.failures,
            med(c.plcc),
            med(c.srcc),
            med(c.krcc)
        );
    }
    println!("report written to {}", args.out_dir.display());
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let grad_cfg = GradSuiteConfig {
        points: args.points,
        seed: args.seed,
        ..GradSuiteConfig::default()
    };
    let limit_cfg = LimitSuiteConfig {
        seed: args.seed,
        ..LimitSuiteConfig::default()
    };
    let results: Vec<_> = gradient_suite(&grad_cfg)
        .into_iter()
        .chain(limit_suite(&limit_cfg))
        .collect();
    for r in &results {
        println!(
            "{} {:24} max_err={:.3e} tol={:.0e}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.value,
            r.tolerance
        );
    }
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_CHECK_FAILED,
            message: "gradient checks failed".into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
