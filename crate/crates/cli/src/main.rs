use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use sigstack::experiments::gan::{run_gan, GanConfig};
use sigstack::experiments::gradcheck::{run_gradcheck, GradSweepConfig};
use sigstack::experiments::hurst::{run_hurst, HurstConfig, HurstModel};
use sigstack::experiments::inversion::{run_inversion, thin, InversionExperimentConfig};
use sigstack::kernel::{permutation_test, KernelConfig};
use sigstack::synth::{gen_pen_strokes, generate_batch, hurst_dataset, HurstDatasetSpec, ProcessKind};
use sigstack::{
    increment_rmse, invert_signature, signature, time_augment, InversionConfig, SigError, Stream, StreamBatch,
    TruncatedTensor,
};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_GATE: u8 = 3;

#[derive(Parser)]
#[command(name = "sigstack", version, about = "Truncated path signatures and signature-model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Signature of a CSV stream.
    Compute(ComputeArgs),
    /// Recover a stream from its signature by gradient descent.
    Invert(InvertArgs),
    /// Hurst-parameter regression on fractional Brownian paths.
    Hurst(HurstArgs),
    /// Train a signature generator against the MMD discriminator on OU paths.
    Gan(GanArgs),
    /// Signature-kernel MMD permutation test between two JSONL batches.
    Mmd(MmdArgs),
    /// Write a seeded synthetic batch as JSONL plus a manifest.
    Generate(GenerateArgs),
    /// Finite-difference sweep over the signature gradient and every model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ComputeArgs {
    /// CSV stream with header `t,c1,...,cd` (the `t` column is optional).
    input: PathBuf,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Prepend the time channel before computing the signature.
    #[arg(long)]
    time_augment: bool,
    /// Also write the signature as a JSON file readable by `invert --signature`.
    #[arg(long, value_name = "PATH")]
    dump_signature: Option<PathBuf>,
}

#[derive(Args)]
struct InvertArgs {
    /// Stream whose signature is the target; its first point fixes the translation.
    #[arg(long, group = "source")]
    target: Option<PathBuf>,
    /// Signature file as written by `compute --dump-signature`.
    #[arg(long, group = "source")]
    signature: Option<PathBuf>,
    /// Comma-separated pen-stroke styles to invert as one experiment.
    #[arg(long, group = "source", value_delimiter = ',')]
    pen_style: Option<Vec<usize>>,
    /// Number of points to recover (required with --signature).
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    final_lr: Option<f64>,
    /// Initial weight of the curvature penalty (0 disables it).
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    early_stop: Option<f64>,
    /// Exit 0 only if the final loss is below this value.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep every k-th loss in the JSON trace.
    #[arg(long, default_value_t = 100)]
    trace_every: usize,
    /// Recovered stream CSV (one file per style, suffixed, for --pen-style).
    #[arg(long, default_value = "recovered.csv")]
    out: PathBuf,
    /// Full loss trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// TOML experiment config used as the base for --pen-style runs.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct HurstArgs {
    #[arg(long, value_parser = parse_model)]
    model: Option<HurstModel>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Seed for training; the dataset uses --data-seed (default: the same value).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GanArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    test_paths: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Generator signature depth.
    #[arg(long)]
    depth: Option<usize>,
    /// Discriminator signature depth.
    #[arg(long)]
    disc_depth: Option<usize>,
    #[arg(long)]
    permutations: Option<usize>,
    /// Draw fresh generator noise every epoch.
    #[arg(long)]
    resample_noise: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Generated sample paths (JSONL).
    #[arg(long, default_value = "gan_samples.jsonl")]
    samples: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MmdArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 500)]
    permutations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    target_norm: f64,
    /// Time-augment every stream before taking features.
    #[arg(long)]
    time_augment: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Brownian,
    Ou,
    Fbm,
    Pen,
    Hurst,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(value_enum)]
    kind: GenKind,
    /// Number of paths (train/test sizes come from --train/--test for `hurst`).
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Points per path (`hurst` uses --len - 1 time steps).
    #[arg(long, default_value_t = 100)]
    len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8.0)]
    theta: f64,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    x0: f64,
    #[arg(long, default_value_t = 0.5)]
    hurst: f64,
    /// Pen-stroke style.
    #[arg(long, default_value_t = 0)]
    style: usize,
    /// Pen-stroke jitter.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 600)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    test: usize,
    #[arg(long, default_value = "batch.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_points: Option<usize>,
    #[arg(long)]
    max_channels: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
}

fn parse_model(s: &str) -> Result<HurstModel, String> {
    s.parse().map_err(|e: SigError| e.to_string())
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<SigError> for Failure {
    fn from(e: SigError) -> Self {
        let code = match e {
            SigError::NonFinite(_) | SigError::Cholesky(_) => EXIT_NUMERICAL,
            SigError::GradientCheck(_) => EXIT_GATE,
            _ => EXIT_USAGE,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        SigError::from(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

type CliResult = Result<(), Failure>;

fn print_json(v: &Value) {
    let text = serde_json::to_string_pretty(v).expect("JSON values serialize");
    // a closed pipe (`| head`) is not an error worth a panic
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    fs::write(path, contents).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn load_config<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T, Failure> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn cmd_compute(args: ComputeArgs) -> CliResult {
    let mut x = Stream::read_csv(&args.input)?;
    if args.time_augment {
        x = time_augment(&x);
    }
    let sig = signature(&x, args.depth)?;
    print_json(&json!({
        "channels": sig.channels(),
        "depth": sig.depth(),
        "points": x.len(),
        "time_augmented": args.time_augment,
        "signature": sig.as_slice(),
        "levels": sig.levels(),
    }));
    if let Some(path) = &args.dump_signature {
        write_file(path, &serde_json::to_string(&sig).map_err(SigError::from)?)?;
    }
    Ok(())
}

fn trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("iteration,loss\n");
    for (i, l) in trace.iter().enumerate() {
        let _ = writeln!(s, "{i},{l:e}");
    }
    s
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("recovered");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

fn apply_optimizer_flags(cfg: &mut InversionConfig, args: &InvertArgs) {
    set(&mut cfg.adam.learning_rate, args.lr);
    set(&mut cfg.final_learning_rate, args.final_lr);
    set(&mut cfg.smoothing_weight, args.smoothing);
    set(&mut cfg.max_iterations, args.max_iter);
    set(&mut cfg.early_stop, args.early_stop);
}

fn cmd_invert(args: InvertArgs) -> CliResult {
    if let Some(styles) = &args.pen_style {
        let mut cfg: InversionExperimentConfig = load_config(&args.config)?;
        cfg.styles = styles.clone();
        set(&mut cfg.points, args.points);
        set(&mut cfg.depth, args.depth);
        set(&mut cfg.seed, args.seed);
        cfg.trace_every = args.trace_every;
        apply_optimizer_flags(&mut cfg.optimizer, &args);
        let (report, outcomes) = run_inversion(&cfg)?;
        for o in &outcomes {
            write_file(&suffixed(&args.out, &format!("style{}", o.style)), &o.recovered.to_csv())?;
            if let Some(t) = &args.trace {
                write_file(&suffixed(t, &format!("style{}", o.style)), &trace_csv(&o.loss_trace))?;
            }
        }
        print_json(&serde_json::to_value(&report).map_err(SigError::from)?);
        let worst = report.metrics["max_final_loss"];
        return if worst < args.tol {
            Ok(())
        } else {
            Err(Failure {
                code: EXIT_NUMERICAL,
                message: format!("final loss {worst:e} is not below --tol {:e}", args.tol),
            })
        };
    }
    if args.config.is_some() {
        return Err(usage("--config applies to --pen-style runs only"));
    }

    let (target, n, original) = if let Some(path) = &args.target {
        let x = Stream::read_csv(path)?;
        let n = args.points.unwrap_or(x.len());
        (signature(&x, args.depth.unwrap_or(12))?, n, Some(x))
    } else if let Some(path) = &args.signature {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        let sig: TruncatedTensor = serde_json::from_str(&text).map_err(SigError::from)?;
        let sig = TruncatedTensor::from_flat(sig.channels(), sig.depth(), sig.into_vec())?;
        if let Some(d) = args.depth {
            if d != sig.depth() {
                return Err(usage(format!("--depth {d} disagrees with the signature file's depth {}", sig.depth())));
            }
        }
        let n = args.points.ok_or_else(|| usage("--points is required with --signature"))?;
        (sig, n, None)
    } else {
        return Err(usage("one of --target, --signature or --pen-style is required"));
    };
    let mut opt = InversionConfig::default();
    apply_optimizer_flags(&mut opt, &args);
    let start = original.as_ref().filter(|x| x.len() == n).map(|x| x.point(0));
    let r = invert_signature(&target, n, &opt, args.seed.unwrap_or(0), start)?;
    write_file(&args.out, &r.recovered.to_csv())?;
    if let Some(t) = &args.trace {
        write_file(t, &trace_csv(&r.loss_trace))?;
    }
    let rmse = match &original {
        Some(x) if x.len() == n => Some(increment_rmse(x, &r.recovered)?),
        _ => None,
    };
    print_json(&json!({
        "final_loss": r.final_loss,
        "iterations_used": r.iterations_used,
        "increment_rmse": rmse,
        "loss_trace": thin(&r.loss_trace, args.trace_every),
        "recovered": r.recovered.to_rows(),
        "optimizer": opt,
        "seed": args.seed.unwrap_or(0),
    }));
    if r.final_loss < args.tol {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("final loss {:e} is not below --tol {:e}", r.final_loss, args.tol),
        })
    }
}

fn cmd_hurst(args: HurstArgs) -> CliResult {
    let mut cfg: HurstConfig = load_config(&args.config)?;
    set(&mut cfg.model, args.model);
    set(&mut cfg.epochs, args.epochs);
    set(&mut cfg.runs, args.runs);
    set(&mut cfg.batch_size, args.batch_size);
    set(&mut cfg.learning_rate, args.lr);
    set(&mut cfg.dataset.train, args.train);
    set(&mut cfg.dataset.test, args.test);
    set(&mut cfg.dataset.steps, args.steps);
    set(&mut cfg.seed, args.seed);
    set(&mut cfg.dataset.seed, args.data_seed.or(args.seed));
    let report = run_hurst(&cfg)?;
    print_json(&serde_json::to_value(&report).map_err(SigError::from)?);
    Ok(())
}

fn cmd_gan(args: GanArgs) -> CliResult {
    let mut cfg: GanConfig = load_config(&args.config)?;
    set(&mut cfg.epochs, args.epochs);
    set(&mut cfg.paths, args.paths);
    set(&mut cfg.test_paths, args.test_paths);
    set(&mut cfg.length, args.length);
    set(&mut cfg.learning_rate, args.lr);
    set(&mut cfg.generator_depth, args.depth);
    set(&mut cfg.kernel.depth, args.disc_depth);
    set(&mut cfg.permutations, args.permutations);
    set(&mut cfg.seed, args.seed);
    cfg.resample_noise |= args.resample_noise;
    let (report, samples) = run_gan(&cfg)?;
    write_file(&args.samples, &StreamBatch::new(samples)?.to_jsonl()?)?;
    print_json(&serde_json::to_value(&report).map_err(SigError::from)?);
    Ok(())
}

fn cmd_mmd(args: MmdArgs) -> CliResult {
    let load = |p: &Path| -> Result<StreamBatch, Failure> {
        let b = StreamBatch::read_jsonl(p)?;
        Ok(if args.time_augment {
            StreamBatch::new(b.streams().iter().map(time_augment).collect())?
        } else {
            b
        })
    };
    let a = load(&args.a)?;
    let b = load(&args.b)?;
    let cfg = KernelConfig {
        depth: args.depth,
        target: args.target_norm,
        ..KernelConfig::default()
    };
    cfg.validate()?;
    let r = permutation_test(&a, &b, &cfg, args.permutations, args.seed)?;
    print_json(&json!({
        "statistic": r.statistic,
        "p_value": r.p_value,
        "n": r.n,
        "m": r.m,
        "permutations": r.permutations,
        "depth": args.depth,
        "target_norm": args.target_norm,
        "time_augment": args.time_augment,
        "seed": args.seed,
    }));
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn cmd_generate(args: GenerateArgs) -> CliResult {
    let (streams, spec) = match args.kind {
        GenKind::Brownian | GenKind::Ou | GenKind::Fbm => {
            let kind = match args.kind {
                GenKind::Brownian => ProcessKind::Brownian,
                GenKind::Ou => ProcessKind::Ou {
                    theta: args.theta,
                    mu: args.mu,
                    sigma: args.sigma,
                    x0: args.x0,
                },
                _ => ProcessKind::Fbm { hurst: args.hurst },
            };
            let streams = generate_batch(kind, args.len, args.n, args.seed)?;
            (streams, json!({ "process": kind, "count": args.n, "length": args.len }))
        }
        GenKind::Pen => {
            let streams = (0..args.n as u64)
                .map(|i| gen_pen_strokes(args.style, args.len, args.noise, sigstack::synth::derive_seed(args.seed, i)))
                .collect::<sigstack::Result<Vec<_>>>()?;
            (
                streams,
                json!({ "pen_style": args.style, "noise": args.noise, "count": args.n, "length": args.len }),
            )
        }
        GenKind::Hurst => {
            if args.len < 2 {
                return Err(usage("--len must be at least 2"));
            }
            let spec = HurstDatasetSpec {
                train: args.train,
                test: args.test,
                steps: args.len - 1,
                seed: args.seed,
                ..HurstDatasetSpec::default()
            };
            let data = hurst_dataset(&spec)?;
            let labels: Vec<f64> = data.train.iter().chain(&data.test).map(|s| s.hurst).collect();
            let streams = data.train.into_iter().chain(data.test).map(|s| s.path).collect();
            (streams, json!({ "hurst_dataset": spec, "labels": labels }))
        }
    };
    write_file(&args.out, &StreamBatch::new(streams)?.to_jsonl()?)?;
    let manifest = json!({
        "version": sigstack::VERSION,
        "seed": args.seed,
        "spec": spec,
        "output": args.out.file_name().and_then(|s| s.to_str()),
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(SigError::from)?;
    write_file(&manifest_path(&args.out), &text)?;
    print_json(&manifest);
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> CliResult {
    let mut cfg = GradSweepConfig::default();
    set(&mut cfg.seed, args.seed);
    set(&mut cfg.max_points, args.max_points);
    set(&mut cfg.max_channels, args.max_channels);
    set(&mut cfg.max_depth, args.max_depth);
    let (report, checks) = run_gradcheck(&cfg)?;
    print_json(&serde_json::to_value(&report).map_err(SigError::from)?);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_GATE,
            message: format!("gradient checks failed: {}", failed.join(", ")),
        })
    }
}

fn init_threads() -> CliResult {
    let Ok(v) = std::env::var("SIGSTACK_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("SIGSTACK_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = init_threads().and_then(|()| match cli.command {
        Command::Compute(a) => cmd_compute(a),
        Command::Invert(a) => cmd_invert(a),
        Command::Hurst(a) => cmd_hurst(a),
        Command::Gan(a) => cmd_gan(a),
        Command::Mmd(a) => cmd_mmd(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
