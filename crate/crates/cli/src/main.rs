//! `memann`: run inference, reading, writing and dataset experiments on a
//! simulated memristor crossbar network and emit JSON/CSV reports.

mod output;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use memristor_ann::circuit::{CircuitState, Trace};
use memristor_ann::config::CircuitConfig;
use memristor_ann::evaluate::{evaluate_dataset, DATASET_STEP_FRACTION};
use memristor_ann::ingest::{load_idx, load_weights, synthetic_digits, synthetic_weights, weights_realizability, write_idx};
use memristor_ann::protocols::{
    infer_with_trace, matrix_rows, physical_targets, read_all, write_all, GainChoice, ReadOptions, WriteOptions,
};
use memristor_ann::signals::DEFAULT_TAU;
use memristor_ann::{Activation, AnnSpec, DeviceModel};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use output::{ensure_dir, Provenance};

/// Weight ranges of the synthetic 784-10-10 network used when no weights are given.
const SYNTHETIC_RANGES: [(f64, f64); 2] = [(-1.86, 1.85), (-0.55, 0.51)];
const SEEDED_FLUX_RANGE: (f64, f64) = (-3.0, 3.0);

#[derive(Parser)]
#[command(name = "memann", version, about = "Memristor crossbar neural network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the network with block-pulse inputs: yhat.json, trace.csv, noninvasiveness.json
    Infer(InferArgs),
    /// Read every memristor through its default path: read_report.json
    Read(ReadArgs),
    /// Steer every memristor to the weights: write_report.json, memductance_curves.csv
    Write(WriteArgs),
    /// Compare circuit and software outputs over IDX images: mnist_report.json
    Mnist(MnistArgs),
    /// Check model assumptions and oracle agreement: verify_report.json
    Verify(VerifyArgs),
}

#[derive(Args)]
struct CircuitArgs {
    /// Circuit configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Integration step; defaults to min(segment / 1000, 0.01).
    #[arg(long)]
    step: Option<f64>,
    /// Replace the configured flux by a seeded uniform draw on [-3, 3].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    circuit: CircuitArgs,
    /// Half-width of each block-pulse segment.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Comma-separated input amplitudes; overrides the config input.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    input: Option<Vec<f64>>,
    /// Keep every n-th integrator step in trace.csv (breakpoints are always kept).
    #[arg(long, default_value_t = 1)]
    decimation: usize,
}

#[derive(Args)]
struct ReadArgs {
    #[command(flatten)]
    circuit: CircuitArgs,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Read a whole column per pulse.
    #[arg(long)]
    batched: bool,
}

#[derive(Args)]
struct WriteArgs {
    #[command(flatten)]
    circuit: CircuitArgs,
    /// Accepted write error.
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    /// Length of each write interval.
    #[arg(long = "T", default_value_t = 1.0)]
    period: f64,
    /// Controller gain, or "auto" for the largest gain admissible in every layer.
    #[arg(long, default_value = "auto", value_parser = parse_alpha)]
    alpha: Alpha,
    /// Probe voltage of the first interval.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    x0: f64,
    /// Target weights; defaults to the config's weights file.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Write independent first-layer memristors simultaneously.
    #[arg(long)]
    batched: bool,
    #[arg(long, default_value_t = 1_000_000)]
    max_iterations: usize,
}

#[derive(Args)]
struct MnistArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Integration step; defaults to tau / 200.
    #[arg(long)]
    step: Option<f64>,
    /// Number of images to evaluate.
    #[arg(long, default_value_t = 50)]
    limit: usize,
    /// Evaluate every image in the file, ignoring --limit.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Seed for synthetic weights (used when no weights file is given) and synthetic images.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generate seeded synthetic IDX files in the output directory instead of reading images.
    #[arg(long)]
    synthetic: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Optional circuit configuration providing device, activation and depth.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Activation to validate instead of the configured one.
    #[arg(long)]
    activation: Option<String>,
    /// Gain to check against the admissible bound of every layer.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "T", default_value_t = 1.0)]
    period: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug)]
enum Alpha {
    Auto,
    Value(f64),
}

fn parse_alpha(s: &str) -> std::result::Result<Alpha, String> {
    if s == "auto" {
        return Ok(Alpha::Auto);
    }
    s.parse::<f64>()
        .map(Alpha::Value)
        .map_err(|_| format!("expected a number or \"auto\", got '{s}'"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Infer(a) => cmd_infer(a),
        Command::Read(a) => cmd_read(a),
        Command::Write(a) => cmd_write(a),
        Command::Mnist(a) => cmd_mnist(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("--{name} must be positive and finite, got {v}");
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<CircuitConfig> {
    CircuitConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn build(args: &CircuitArgs) -> Result<(CircuitConfig, CircuitState)> {
    if let Some(s) = args.step {
        positive("step", s)?;
    }
    let cfg = load_config(&args.config)?;
    let mut c = cfg.build_circuit()?;
    if let Some(seed) = args.seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = SEEDED_FLUX_RANGE;
        for x in &mut c.layers {
            x.phi = x.phi.map(|_| rng.random_range(lo..=hi));
        }
    }
    ensure_dir(&args.out)?;
    Ok((cfg, c))
}

fn provenance(verb: &'static str, path: &Path, cfg: &CircuitConfig, parameters: Value) -> Provenance {
    Provenance {
        verb,
        config_path: Some(path.to_path_buf()),
        config_hash: Some(cfg.hash().to_string()),
        parameters,
    }
}

fn circuit_summary(c: &CircuitState) -> Value {
    json!({
        "widths": c.widths(),
        "device": c.device().name(),
        "activation": c.activation().name(),
        "eta": c.activation().eta,
        "mode": c.mode(),
    })
}

fn cmd_infer(a: InferArgs) -> Result<ExitCode> {
    positive("tau", a.tau)?;
    let (cfg, mut c) = build(&a.circuit)?;
    let u = match (&a.input, cfg.input_vector()) {
        (Some(v), _) => DVector::from_column_slice(v),
        (None, Some(v)) => v,
        (None, None) => bail!("no input: pass --input or set \"input\" in the config"),
    };
    let oracle = c.effective_spec()?.forward(&u)?;
    let before = c.fluxes();
    let trace = Trace::new().with_decimation(a.decimation);
    let run = infer_with_trace(&mut c, &u, a.tau, a.circuit.step, trace)?;
    let per_layer: Vec<f64> = c
        .fluxes()
        .iter()
        .zip(&before)
        .map(|(after, b)| (after - b).amax())
        .collect();

    let prov = provenance(
        "infer",
        &a.circuit.config,
        &cfg,
        json!({
            "tau": a.tau,
            "step": a.circuit.step,
            "seed": a.circuit.seed,
            "input": u.as_slice(),
            "decimation": a.decimation,
            "circuit": circuit_summary(&c),
        }),
    );
    let y: Vec<f64> = run.y_hat.iter().copied().collect();
    prov.write_json(
        &a.circuit.out,
        "yhat.json",
        json!({
            "y_hat": y,
            "oracle": oracle.as_slice(),
            "max_abs_diff_to_oracle": (&run.y_hat - &oracle).amax(),
            "decode_time": 2.0 * a.tau,
            "protocol_time": 4.0 * a.tau,
        }),
    )?;
    prov.write_csv(&a.circuit.out, "trace.csv", |w| run.trace.write_csv(w))?;
    prov.write_json(
        &a.circuit.out,
        "noninvasiveness.json",
        json!({
            "max_flux_deviation": run.max_flux_deviation,
            "per_layer_max_flux_deviation": per_layer,
        }),
    )?;
    println!(
        "y_hat = {:?}  (software {:?}), max flux deviation {:.3e}",
        y,
        oracle.as_slice(),
        run.max_flux_deviation
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_read(a: ReadArgs) -> Result<ExitCode> {
    positive("tau", a.tau)?;
    let (cfg, mut c) = build(&a.circuit)?;
    let direct = c.memductances();
    let opts = ReadOptions {
        tau: a.tau,
        step: a.circuit.step,
        batched: a.batched,
        monitor_bounds: true,
    };
    let report = read_all(&mut c, &opts)?;
    let max_err = report
        .memductances
        .iter()
        .zip(&direct)
        .map(|(m, d)| (m - d).amax())
        .fold(0.0, f64::max);
    let prov = provenance(
        "read",
        &a.circuit.config,
        &cfg,
        json!({
            "tau": a.tau,
            "step": a.circuit.step,
            "seed": a.circuit.seed,
            "batched": a.batched,
            "circuit": circuit_summary(&c),
        }),
    );
    let mut result = serde_json::to_value(&report)?;
    result["direct_memductances"] = json!(direct.iter().map(matrix_rows).collect::<Vec<_>>());
    result["max_abs_diff_to_direct"] = json!(max_err);
    prov.write_json(&a.circuit.out, "read_report.json", result)?;
    println!(
        "read {} memristors in {} windows (protocol time {}), max |read - W(phi)| {:.3e}",
        report.entries.len(),
        report.windows,
        report.protocol_time,
        max_err
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_write(a: WriteArgs) -> Result<ExitCode> {
    positive("eps", a.eps)?;
    positive("T", a.period)?;
    let (cfg, mut c) = build(&a.circuit)?;
    let spec = match &a.weights {
        Some(p) => load_weights(p, c.activation().clone()).with_context(|| format!("loading {}", p.display()))?,
        None => cfg
            .weights_spec()?
            .ok_or_else(|| anyhow!("no targets: pass --weights or set \"weights\" in the config"))?,
    };
    let (targets, switches) = physical_targets(&spec, c.device(), c.mode())?;
    c.set_inference_switches(switches)?;
    c.restore_inference_switches();
    let opts = WriteOptions {
        eps: a.eps,
        period: a.period,
        x0: a.x0,
        gain: match a.alpha {
            Alpha::Auto => GainChoice::Uniform,
            Alpha::Value(v) => GainChoice::Fixed(v),
        },
        step: a.circuit.step,
        max_iterations: a.max_iterations,
        batched: a.batched,
        monitor_bounds: true,
    };
    let report = write_all(&mut c, &targets, &opts)?;
    let prov = provenance(
        "write",
        &a.circuit.config,
        &cfg,
        json!({
            "eps": a.eps,
            "T": a.period,
            "alpha": match a.alpha { Alpha::Auto => json!("auto"), Alpha::Value(v) => json!(v) },
            "x0": a.x0,
            "step": a.circuit.step,
            "seed": a.circuit.seed,
            "batched": a.batched,
            "weights": a.weights.as_ref().map(|p| p.display().to_string()),
            "circuit": circuit_summary(&c),
        }),
    );
    let mut result = serde_json::to_value(&report)?;
    result["sum_t_hat"] = json!(report.sum_t_hat());
    result["all_converged"] = json!(report.all_converged());
    result["final_flux"] = json!(c.fluxes().iter().map(matrix_rows).collect::<Vec<_>>());
    result["final_memductances"] = json!(c.memductances().iter().map(matrix_rows).collect::<Vec<_>>());
    prov.write_json(&a.circuit.out, "write_report.json", result)?;
    prov.write_csv(&a.circuit.out, "memductance_curves.csv", |w| report.write_curves_csv(w))?;
    let worst = report.entries.iter().map(|e| e.final_error).fold(0.0, f64::max);
    println!(
        "wrote {} memristors in {} intervals (protocol time {}), gains {:?}, max final error {:.4}",
        report.entries.len(),
        report.total_intervals,
        report.protocol_time,
        report.alphas,
        worst
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_mnist(a: MnistArgs) -> Result<ExitCode> {
    positive("tau", a.tau)?;
    if let Some(s) = a.step {
        positive("step", s)?;
    }
    let cfg = load_config(&a.config)?;
    ensure_dir(&a.out)?;
    let limit = if a.full { None } else { Some(a.limit) };
    let device: DeviceModel = cfg.device_model()?;
    let activation: Activation = cfg.activation_fn()?;

    let (images, labels) = if a.synthetic {
        let count = a.limit;
        let (pixels, digits) = synthetic_digits(count, 28, 28, a.seed);
        let (i, l) = (a.out.join("synthetic-images.idx3-ubyte"), a.out.join("synthetic-labels.idx1-ubyte"));
        write_idx(&pixels, &digits, 28, 28, &i, &l)?;
        (i, l)
    } else {
        let pick = |flag: &Option<PathBuf>, field: &Option<PathBuf>, what: &str| -> Result<PathBuf> {
            flag.clone()
                .or_else(|| field.as_ref().map(|p| cfg.resolve(p)))
                .ok_or_else(|| anyhow!("no {what} file: pass --{what}, set \"{what}\" in the config, or use --synthetic"))
        };
        (pick(&a.images, &cfg.images, "images")?, pick(&a.labels, &cfg.labels, "labels")?)
    };
    let data = load_idx(&images, &labels, limit)
        .with_context(|| format!("loading {} and {}", images.display(), labels.display()))?
        .with_pixel_scale(cfg.pixel_scale);

    let (spec, weights_source): (AnnSpec, Value) = match (&a.weights, cfg.weights_spec()?) {
        (Some(p), _) => (load_weights(p, activation.clone())?, json!(p.display().to_string())),
        (None, Some(s)) => (s, json!(cfg.weights.as_ref().map(|p| p.display().to_string()))),
        (None, None) => {
            let widths = cfg.layer_widths()?;
            if widths.len() != SYNTHETIC_RANGES.len() + 1 {
                bail!("synthetic weights need three layer widths, the config has {widths:?}");
            }
            let s = synthetic_weights(&widths, &SYNTHETIC_RANGES, activation.clone(), a.seed)?;
            (s, json!({ "synthetic_seed": a.seed, "ranges": SYNTHETIC_RANGES }))
        }
    };
    if spec.widths()[0] != data.rows * data.cols {
        bail!("network expects {} inputs but images have {} pixels", spec.widths()[0], data.rows * data.cols);
    }
    let realizability = weights_realizability(&spec, &device, cfg.mode);
    if !realizability.all_realizable() {
        bail!(
            "{} weights cannot be realised in {:?} mode; first: {:?}",
            realizability.violators.len(),
            cfg.mode,
            realizability.violators.first()
        );
    }
    let c = CircuitState::from_weights(&spec, device, cfg.mode)?;
    let report = evaluate_dataset(&c, &spec, &data, a.tau, a.step)?;

    let prov = provenance(
        "mnist",
        &a.config,
        &cfg,
        json!({
            "tau": a.tau,
            "step": a.step.unwrap_or(a.tau * DATASET_STEP_FRACTION),
            "limit": limit,
            "images": images.display().to_string(),
            "labels": labels.display().to_string(),
            "synthetic_images": a.synthetic,
            "weights": weights_source,
            "pixel_scale": cfg.pixel_scale,
            "seed": a.seed,
            "circuit": circuit_summary(&c),
        }),
    );
    prov.write_json(&a.out, "mnist_report.json", serde_json::to_value(&report)?)?;
    println!(
        "{} images: argmax agreement {}/{}, circuit accuracy {:.4}, software accuracy {:.4}, max |diff| {:.3e}",
        report.n_images,
        report.argmax_agreement,
        report.n_images,
        report.circuit_accuracy,
        report.oracle_accuracy,
        report.max_abs_diff
    );
    if let Some(first) = &report.first_image {
        println!("first image (label {}): circuit {:?}", first.label, first.circuit_output);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(a: VerifyArgs) -> Result<ExitCode> {
    positive("T", a.period)?;
    let cfg = a.config.as_deref().map(load_config).transpose()?;
    ensure_dir(&a.out)?;
    let device = match &cfg {
        Some(c) => c.device_model()?,
        None => DeviceModel::arctan(),
    };
    let activation = match (&a.activation, &cfg) {
        (Some(name), _) => Activation::by_name(name)?,
        (None, Some(c)) => c.activation_fn()?,
        (None, None) => Activation::tanh(),
    };
    let n_layers = match &cfg {
        Some(c) => c.layer_widths()?.len() - 1,
        None => 2,
    };
    let setup = verify::Setup {
        device,
        activation,
        n_layers,
        alpha: a.alpha,
        period: a.period,
        seed: a.seed,
    };
    let checks = verify::run(&setup)?;
    let all_pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        println!("[{}] {}", if c.pass { "PASS" } else { "FAIL" }, c.name);
    }
    let prov = Provenance {
        verb: "verify",
        config_path: a.config.clone(),
        config_hash: cfg.as_ref().map(|c| c.hash().to_string()),
        parameters: json!({
            "device": setup.device.name(),
            "activation": setup.activation.name(),
            "n_layers": n_layers,
            "alpha": a.alpha,
            "T": a.period,
            "seed": a.seed,
        }),
    };
    prov.write_json(
        &a.out,
        "verify_report.json",
        json!({
            "all_pass": all_pass,
            "checks": checks.iter().map(verify::Check::to_json).collect::<Vec<_>>(),
        }),
    )?;
    Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

