//! `structdl` command-line driver.
//!
//! Exit codes: 0 success, 1 I/O or file format failure, 2 usage or invalid
//! argument, 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use structdl::classifier::accuracy;
use structdl::io::{load_labels, load_matrix, random_project, save_labels, save_matrix};
use structdl::synthetic::{
    run_sdi_experiment, split_indices, write_report, ExperimentConfig, Method, SparsityLevel,
};
use structdl::theory::{coherence_report, verify_block_support};
use structdl::{
    generate, DirtyCode, DlConfig, Error, Fidelity, GroupStructure, LabeledDataset, Mode,
    SolverConfig, SynthSpec, TrainedModel,
};

#[derive(Parser, Debug)]
#[command(
    name = "structdl",
    version,
    about = "Structured dictionary learning (HiDL / GDDL)"
)]
#[command(args_override_self = true)]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "STRUCTDL_THREADS", default_value_t = 0)]
    threads: usize,

    /// JSON file whose keys supply flags of the chosen command; flags given
    /// on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a dictionary and classifier.
    Train(TrainArgs),
    /// Code samples with a trained model.
    Encode(EncodeArgs),
    /// Label samples (or codes) with a trained model.
    Classify(ClassifyArgs),
    /// Generate synthetic data, or run the SDI comparison with --report.
    Synth(SynthArgs),
    /// Evaluate recovery conditions for a model.
    Check(CheckArgs),
    /// Random Gaussian projection with column normalization.
    Project(ProjectArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Hidl,
    Gddl,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FidelityArg {
    Exact,
    Penalized,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Data matrix (samples as columns) or CSV with one sample per line.
    #[arg(long)]
    data: PathBuf,
    /// One 1-based label per line.
    #[arg(long)]
    labels: PathBuf,
    /// Group sizes, one per class, e.g. 10,10,10.
    #[arg(long, value_delimiter = ',', conflicts_with = "atoms_per_class")]
    groups: Option<Vec<usize>>,
    /// Uniform group size for every class in the labels.
    #[arg(long)]
    atoms_per_class: Option<usize>,
    #[arg(long, value_enum, default_value = "hidl")]
    mode: ModeArg,
    /// HiDL: group weight. GDDL: row weight on the shared part.
    #[arg(long)]
    lambda1: Option<f64>,
    /// HiDL: entry weight. GDDL: entry weight on the unique part.
    #[arg(long)]
    lambda2: Option<f64>,
    /// GDDL group weight on the shared part.
    #[arg(long)]
    lambda3: Option<f64>,
    /// GDDL group weight on the unique part.
    #[arg(long)]
    lambda4: Option<f64>,
    /// Defaults to penalized for HiDL and exact for GDDL.
    #[arg(long, value_enum)]
    fidelity: Option<FidelityArg>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    mu_max: Option<f64>,
    #[arg(long, default_value_t = 200)]
    outer_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    obj_tol: f64,
    /// Ridge parameter; defaults to 1e-2 · tr(AAᵀ)/K.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of per-iteration training curves.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Codes (HiDL) or the shared part (GDDL).
    #[arg(long)]
    out: PathBuf,
    /// GDDL unique part; defaults to `<out stem>.unique.<ext>`.
    #[arg(long)]
    unique_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["data", "codes"])))]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Codes written by `encode` (the shared part for GDDL models).
    #[arg(long)]
    codes: Option<PathBuf>,
    /// Predicted labels, one 1-based label per line.
    #[arg(long)]
    out: PathBuf,
    /// True labels; prints accuracy when given.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    atoms_per_class: usize,
    #[arg(long, default_value_t = 200)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 5)]
    sparsity: usize,
    /// Omit for noiseless data.
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw code magnitudes as |N(0,1)|.
    #[arg(long)]
    nonnegative: bool,
    /// Also write a stratified train/test split with this training fraction.
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Output directory for generated files.
    #[arg(long, required_unless_present = "report")]
    out_dir: Option<PathBuf>,
    /// Run the SDI comparison and write its CSV report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Report mode: sparsity:lambda pairs.
    #[arg(long, value_delimiter = ',', default_value = "2:0.1,5:0.05,8:0.01")]
    levels: Vec<String>,
    /// Report mode: SNR grid in dB.
    #[arg(long, value_delimiter = ',', default_value = "10,30,50")]
    snrs: Vec<f64>,
    /// Report mode: trials per cell.
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// Report mode: outer training iterations.
    #[arg(long, default_value_t = 10)]
    outer_iters: usize,
    /// Report mode: methods to compare.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "hidl,gddl,l1-separate,l1-all"
    )]
    methods: Vec<String>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    model: PathBuf,
    /// Balance between group and entry penalties, in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Codes to test for block support (needs --labels).
    #[arg(long, requires = "labels")]
    codes: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Relative off-group tolerance for block support.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[arg(long)]
    data: PathBuf,
    /// Target dimension.
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the projection and only normalize columns.
    #[arg(long)]
    identity: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Lib(e) => match e {
                Error::InvalidArgument(_) | Error::DimensionMismatch(_) => 2,
                Error::Numerical { .. } | Error::Infeasible(_) => 3,
                _ => 1,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

const COMMANDS: [&str; 6] = ["train", "encode", "classify", "synth", "check", "project"];

/// Finds `--config` in raw arguments.
fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Turns a JSON object into flag tokens. `true` becomes a bare flag, `false`
/// and `null` are dropped, arrays are comma-joined.
fn config_tokens(value: &Value) -> CliResult<Vec<OsString>> {
    let Value::Object(map) = value else {
        return Err(Failure::Usage("config file must hold a JSON object".into()));
    };
    let scalar = |v: &Value| -> CliResult<String> {
        match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            other => Err(Failure::Usage(format!("unsupported config value {other}"))),
        }
    };
    let mut out = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Bool(true) => out.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let joined = items
                    .iter()
                    .map(scalar)
                    .collect::<CliResult<Vec<_>>>()?
                    .join(",");
                out.push(flag.into());
                out.push(joined.into());
            }
            other => {
                out.push(flag.into());
                out.push(scalar(other)?.into());
            }
        }
    }
    Ok(out)
}

/// Inserts config-file flags right after the subcommand so that later
/// command-line occurrences override them.
fn merge_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::Lib(e.into()))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Failure::Lib(e.into()))?;
    let tokens = config_tokens(&value)?;
    let Some(at) = args
        .iter()
        .position(|a| COMMANDS.contains(&a.to_string_lossy().as_ref()))
    else {
        return Ok(args);
    };
    let mut merged = args[..=at].to_vec();
    merged.extend(tokens);
    merged.extend_from_slice(&args[at + 1..]);
    Ok(merged)
}

fn main() -> ExitCode {
    let args = match merge_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
    {
        eprintln!("warning: thread pool already initialized: {e}");
    }
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Encode(a) => encode(a),
        Command::Classify(a) => classify(a),
        Command::Synth(a) => synth(a),
        Command::Check(a) => check(a),
        Command::Project(a) => project(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn train(a: TrainArgs) -> CliResult<()> {
    let x = load_matrix(&a.data)?;
    let labels = load_labels(&a.labels)?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let gs = match (&a.groups, a.atoms_per_class) {
        (Some(sizes), _) => GroupStructure::new(sizes)?,
        (None, Some(k)) => GroupStructure::uniform(classes, k)?,
        (None, None) => {
            return Err(Failure::Usage(
                "one of --groups or --atoms-per-class is required".into(),
            ))
        }
    };
    let data = LabeledDataset::new(x, labels, gs.num_groups())?;
    let mut cfg = match a.mode {
        ModeArg::Hidl => DlConfig::hidl(a.lambda1.unwrap_or(0.1), a.lambda2.unwrap_or(0.1)),
        ModeArg::Gddl => {
            let d = SolverConfig::default();
            DlConfig::gddl(SolverConfig {
                lambda1: a.lambda1.unwrap_or(d.lambda1),
                lambda2: a.lambda2.unwrap_or(d.lambda2),
                lambda3: a.lambda3.unwrap_or(d.lambda3),
                lambda4: a.lambda4.unwrap_or(d.lambda4),
                ..d
            })
        }
    };
    if let Some(f) = a.fidelity {
        cfg.solver.fidelity = match f {
            FidelityArg::Exact => Fidelity::Exact,
            FidelityArg::Penalized => Fidelity::Penalized,
        };
    }
    if let Some(v) = a.max_iters {
        cfg.solver.max_iters = v;
    }
    if let Some(v) = a.tol {
        cfg.solver.tol = v;
    }
    if let Some(v) = a.rho {
        cfg.solver.rho = v;
    }
    if let Some(v) = a.mu_max {
        cfg.solver.mu_max = v;
    }
    cfg.max_outer_iters = a.outer_iters;
    cfg.obj_rel_tol = a.obj_tol;
    cfg.seed = a.seed;
    let (model, stats) = TrainedModel::fit(&data, &gs, &cfg, a.eta)?;
    model.save(&a.out)?;
    if let Some(path) = &a.stats {
        let file = std::fs::File::create(path).map_err(Error::from)?;
        stats.write_csv(file)?;
    }
    println!(
        "{}",
        json!({
            "mode": cfg.mode.to_string(),
            "iterations": stats.iterations(),
            "objective": stats.objective.last(),
            "converged": stats.converged,
        })
    );
    Ok(())
}

fn unique_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.unique.{}", ext.to_string_lossy()),
        None => format!("{stem}.unique"),
    };
    out.with_file_name(name)
}

fn encode(a: EncodeArgs) -> CliResult<()> {
    let model = TrainedModel::load(&a.model)?;
    let code = model.encode(&load_matrix(&a.data)?)?;
    match model.config.mode {
        Mode::Hidl => save_matrix(&a.out, &code.unique)?,
        Mode::Gddl => {
            save_matrix(&a.out, &code.shared)?;
            let path = a.unique_out.unwrap_or_else(|| unique_path(&a.out));
            save_matrix(&path, &code.unique)?;
        }
    }
    Ok(())
}

fn classify(a: ClassifyArgs) -> CliResult<()> {
    let model = TrainedModel::load(&a.model)?;
    let predicted = match (&a.data, &a.codes) {
        (Some(d), _) => model.classify(&load_matrix(d)?)?,
        (None, Some(c)) => {
            let codes = load_matrix(c)?;
            // the file holds exactly the part the classifier reads
            let zeros = structdl::DMatrix::zeros(codes.nrows(), codes.ncols());
            let code = match model.config.mode {
                Mode::Hidl => DirtyCode {
                    shared: zeros,
                    unique: codes,
                    iterations: 0,
                    residuals: [0.0; 3],
                    converged: true,
                },
                Mode::Gddl => DirtyCode {
                    shared: codes,
                    unique: zeros,
                    iterations: 0,
                    residuals: [0.0; 3],
                    converged: true,
                },
            };
            model.classify_codes(&code)?
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    save_labels(&a.out, &predicted)?;
    if let Some(t) = &a.truth {
        let truth = load_labels(t)?;
        println!(
            "{}",
            json!({ "accuracy": accuracy(&predicted, &truth)?, "samples": truth.len() })
        );
    }
    Ok(())
}

fn parse_levels(levels: &[String]) -> CliResult<Vec<SparsityLevel>> {
    levels
        .iter()
        .map(|l| {
            let (s, lam) = l
                .split_once(':')
                .ok_or_else(|| Failure::Usage(format!("level {l:?} is not sparsity:lambda")))?;
            let sparsity = s
                .trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("bad sparsity in {l:?}")))?;
            let lambda = lam
                .trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("bad lambda in {l:?}")))?;
            Ok(SparsityLevel { sparsity, lambda })
        })
        .collect()
}

fn synth(a: SynthArgs) -> CliResult<()> {
    if let Some(report) = &a.report {
        let methods = a
            .methods
            .iter()
            .map(|m| m.parse::<Method>())
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = ExperimentConfig {
            classes: a.classes,
            dim: a.dim,
            atoms_per_class: a.atoms_per_class,
            samples_per_class: a.samples_per_class,
            levels: parse_levels(&a.levels)?,
            snrs_db: a.snrs.clone(),
            trials: a.trials,
            methods,
            outer_iters: a.outer_iters,
            seed: a.seed,
            ..ExperimentConfig::default()
        };
        let rows = run_sdi_experiment(&cfg)?;
        let file = std::fs::File::create(report).map_err(Error::from)?;
        write_report(&rows, file)?;
        return Ok(());
    }
    let dir = a
        .out_dir
        .as_ref()
        .expect("clap requires --out-dir without --report");
    std::fs::create_dir_all(dir).map_err(Error::from)?;
    let spec = SynthSpec {
        classes: a.classes,
        dim: a.dim,
        atoms_per_class: a.atoms_per_class,
        samples_per_class: a.samples_per_class,
        sparsity: a.sparsity,
        snr_db: a.snr_db,
        seed: a.seed,
        nonnegative: a.nonnegative,
    };
    let truth = generate(&spec)?;
    save_matrix(&dir.join("data.sdlm"), &truth.noisy)?;
    save_matrix(&dir.join("clean.sdlm"), &truth.clean)?;
    save_matrix(&dir.join("dictionary.sdlm"), truth.dictionary.atoms())?;
    save_matrix(&dir.join("codes.sdlm"), &truth.codes)?;
    save_labels(&dir.join("labels.txt"), &truth.labels)?;
    if let Some(f) = a.train_fraction {
        let (tr, te) = split_indices(&truth.labels, spec.classes, f, spec.seed)?;
        for (name, idx) in [("train", &tr), ("test", &te)] {
            save_matrix(
                &dir.join(format!("{name}_data.sdlm")),
                &truth.noisy.select_columns(idx.iter()),
            )?;
            let labels: Vec<usize> = idx.iter().map(|&i| truth.labels[i]).collect();
            save_labels(&dir.join(format!("{name}_labels.txt")), &labels)?;
        }
    }
    let snr = truth.realized_snr_db;
    println!(
        "{}",
        json!({
            "dim": truth.noisy.nrows(),
            "samples": truth.noisy.ncols(),
            "realized_snr_db": if snr.is_finite() { json!(snr) } else { Value::Null },
        })
    );
    Ok(())
}

fn check(a: CheckArgs) -> CliResult<()> {
    let model = TrainedModel::load(&a.model)?;
    let report = coherence_report(&model.dictionary, None, a.lambda)?;
    let mut out = json!({ "condition": report, "all_satisfied": report.all_satisfied() });
    if let (Some(c), Some(l)) = (&a.codes, &a.labels) {
        let codes = load_matrix(c)?;
        let labels = load_labels(l)?;
        let block = verify_block_support(&codes, &labels, model.dictionary.groups(), a.tol)?;
        out["block_support"] = serde_json::to_value(block).map_err(Error::from)?;
    }
    let text = serde_json::to_string_pretty(&out).map_err(Error::from)?;
    match &a.out {
        Some(p) => std::fs::write(p, text + "\n").map_err(Error::from)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn project(a: ProjectArgs) -> CliResult<()> {
    let x = load_matrix(&a.data)?;
    save_matrix(&a.out, &random_project(&x, a.dim, a.seed, a.identity)?)?;
    Ok(())
}
