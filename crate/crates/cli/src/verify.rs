//! Assumption validators and seeded oracle cross-checks.

use memristor_ann::circuit::{CircuitState, Discard, Mode};
use memristor_ann::device::validate_device;
use memristor_ann::activation::validate_activation;
use memristor_ann::oracle::{chain_integrate_reference, write_fixed_point};
use memristor_ann::protocols::{gain_bound, infer, read_all, write_one, Path, ReadOptions, WriteOptions};
use memristor_ann::signals::SegmentSignal;
use memristor_ann::{Activation, DeviceModel};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const CASES: usize = 10;
const INFER_TOL: f64 = 1e-6;
const READ_TOL: f64 = 1e-6;
const CHAIN_TOL: f64 = 1e-8;
const WRITE_TOL: f64 = 1e-10;

pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: Value,
}

impl Check {
    pub fn to_json(&self) -> Value {
        json!({ "name": self.name, "pass": self.pass, "detail": self.detail })
    }
}

pub struct Setup {
    pub device: DeviceModel,
    pub activation: Activation,
    pub n_layers: usize,
    pub alpha: Option<f64>,
    pub period: f64,
    pub seed: u64,
}

pub fn run(s: &Setup) -> anyhow::Result<Vec<Check>> {
    let mut checks = Vec::new();

    let dev = validate_device(&s.device, (-50.0, 50.0), 20_001)?;
    checks.push(Check {
        name: "device_assumptions",
        pass: dev.is_clean(),
        detail: json!({ "device": s.device.name(), "summary": dev.summary(), "report": dev }),
    });

    let act = validate_activation(&s.activation, (-10.0, 10.0), 20_001)?;
    checks.push(Check {
        name: "activation_assumptions",
        pass: act.is_clean(),
        detail: json!({ "activation": s.activation.name(), "eta": s.activation.eta, "summary": act.summary(), "report": act }),
    });

    if let Some(alpha) = s.alpha {
        let layers: Vec<Value> = (1..=s.n_layers)
            .map(|l| {
                let bound = gain_bound(&s.device, &s.activation, l);
                json!({ "layer": l, "alpha_T": alpha * s.period, "bound": bound, "admissible": alpha > 0.0 && alpha * s.period <= bound })
            })
            .collect();
        let pass = layers.iter().all(|v| v["admissible"] == json!(true));
        checks.push(Check {
            name: "gain_condition",
            pass,
            detail: json!({ "alpha": alpha, "T": s.period, "layers": layers }),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    checks.push(inference_vs_software(s, &mut rng)?);
    checks.push(reading_vs_memductance(s, &mut rng)?);
    checks.push(chain_vs_reference(s, &mut rng)?);
    checks.push(write_vs_fixed_point(s, &mut rng)?);
    Ok(checks)
}

fn random_circuit(s: &Setup, rng: &mut ChaCha8Rng, n_widths: usize, mode: Mode) -> anyhow::Result<CircuitState> {
    let widths: Vec<usize> = (0..n_widths).map(|_| rng.random_range(1..=4)).collect();
    let mut c = CircuitState::new(&widths, s.device.clone(), s.activation.clone(), mode)?;
    for x in &mut c.layers {
        x.phi = x.phi.map(|_| rng.random_range(-3.0..=3.0));
    }
    Ok(c)
}

fn inference_vs_software(s: &Setup, rng: &mut ChaCha8Rng) -> anyhow::Result<Check> {
    let (mut worst, mut worst_flux) = (0.0f64, 0.0f64);
    for i in 0..CASES {
        let mode = if i % 2 == 0 { Mode::Single } else { Mode::Differential };
        let mut c = random_circuit(s, rng, 3, mode)?;
        let u = DVector::from_fn(c.widths()[0], |_, _| rng.random_range(-1.0..=1.0));
        let expected = c.effective_spec()?.forward(&u)?;
        let r = infer(&mut c, &u, 1.0, None)?;
        worst = worst.max((&r.y_hat - &expected).amax());
        worst_flux = worst_flux.max(r.max_flux_deviation);
    }
    Ok(Check {
        name: "inference_matches_software",
        pass: worst <= INFER_TOL && worst_flux <= INFER_TOL,
        detail: json!({ "cases": CASES, "max_abs_diff": worst, "max_flux_deviation": worst_flux, "tolerance": INFER_TOL }),
    })
}

fn reading_vs_memductance(s: &Setup, rng: &mut ChaCha8Rng) -> anyhow::Result<Check> {
    let mut worst = 0.0f64;
    for i in 0..CASES {
        let mode = if i % 2 == 0 { Mode::Single } else { Mode::Differential };
        let mut c = random_circuit(s, rng, 3, mode)?;
        let direct = c.memductances();
        let report = read_all(&mut c, &ReadOptions { tau: 1.0, ..Default::default() })?;
        for (m, d) in report.memductances.iter().zip(&direct) {
            worst = worst.max((m - d).amax());
        }
    }
    Ok(Check {
        name: "reading_matches_memductance",
        pass: worst <= READ_TOL,
        detail: json!({ "cases": CASES, "max_abs_diff": worst, "tolerance": READ_TOL }),
    })
}

fn chain_vs_reference(s: &Setup, rng: &mut ChaCha8Rng) -> anyhow::Result<Check> {
    let mut worst = 0.0f64;
    for i in 0..CASES {
        let mut c = random_circuit(s, rng, 2 + i % 3, Mode::Single)?;
        let widths = c.widths().to_vec();
        let l = c.n_layers();
        let g: Vec<usize> = widths.iter().map(|&n| rng.random_range(0..n)).collect();
        let path = Path::new(g.clone(), &c)?;
        let phi0: Vec<f64> = (1..=l).map(|k| c.layer(k).phi[(g[k], g[k - 1])]).collect();
        let p0 = rng.random_range(-1.0..=1.0);
        c.select_path(&path);
        let mut v = DVector::zeros(widths[0]);
        v[g[0]] = p0;
        c.integrate(&SegmentSignal::constant(0.0, 1.0, v)?, None, &mut Discard)?;
        let reference = chain_integrate_reference(&s.device, &s.activation, &phi0, p0, 1.0);
        for k in 1..=l {
            worst = worst.max((c.layer(k).phi[(g[k], g[k - 1])] - reference[k - 1]).abs());
        }
    }
    Ok(Check {
        name: "integrator_matches_reference",
        pass: worst <= CHAIN_TOL,
        detail: json!({ "cases": CASES, "max_abs_diff": worst, "tolerance": CHAIN_TOL }),
    })
}

fn write_vs_fixed_point(s: &Setup, rng: &mut ChaCha8Rng) -> anyhow::Result<Check> {
    let mut worst = 0.0f64;
    let mut mismatched_lengths = 0;
    let span = s.device.w_max - s.device.w_min;
    for _ in 0..CASES {
        let mut c = CircuitState::new(&[1, 1], s.device.clone(), s.activation.clone(), Mode::Single)?;
        let phi0 = rng.random_range(-3.0..=3.0);
        c.layers[0].phi[(0, 0)] = phi0;
        let target = s.device.w_min + rng.random_range(0.1..0.9) * span;
        let alpha = rng.random_range(0.5..=1.0) * gain_bound(&s.device, &s.activation, 1);
        let opts = WriteOptions { eps: 0.01, ..Default::default() };
        let e = write_one(&mut c, 1, 0, 0, target, alpha, &opts, 0.0, &mut Discard)?;
        let oracle = write_fixed_point(&s.device, target, phi0, alpha, opts.period, opts.eps, opts.x0, opts.max_iterations)?;
        if oracle.len() != e.flux.len() {
            mismatched_lengths += 1;
            continue;
        }
        for (a, b) in e.flux.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(Check {
        name: "write_matches_fixed_point",
        pass: worst <= WRITE_TOL && mismatched_lengths == 0,
        detail: json!({ "cases": CASES, "max_abs_diff": worst, "iteration_count_mismatches": mismatched_lengths, "tolerance": WRITE_TOL }),
    })
}
