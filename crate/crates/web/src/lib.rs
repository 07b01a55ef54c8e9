//! Browser bindings for three demo operations on small circuits: inference on
//! the 2-3-2 example network, a single-memristor write, and a full read-out.
//! Each export returns a JSON string. The functions behind them are plain
//! Rust so they can be tested without a browser.

use memristor_ann::circuit::{CircuitState, Discard, Mode, Trace};
use memristor_ann::protocols::{gain_bound, infer_with_trace, matrix_rows, read_all, write_one, ReadOptions, WriteOptions};
use memristor_ann::{Activation, AnnSpec, DeviceModel};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Points kept per plotted series.
const PLOT_POINTS: usize = 400;

fn example_spec() -> AnnSpec {
    AnnSpec::new(
        vec![
            DMatrix::from_row_slice(3, 2, &[0.5, 3.5, 2.5, 2.5, 3.5, 0.5]),
            DMatrix::from_row_slice(2, 3, &[0.5, 1.5, 3.5, 3.5, 1.0, 0.5]),
        ],
        Activation::tanh(),
    )
    .expect("example weights are consistent")
}

fn example_circuit() -> Result<CircuitState, String> {
    CircuitState::from_weights(&example_spec(), DeviceModel::arctan(), Mode::Single).map_err(|e| e.to_string())
}

fn check_positive(name: &str, v: f64) -> Result<(), String> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} must be positive, got {v}"))
    }
}

/// Block-pulse inference of the example network at `(u1, u2)`.
pub fn inference(u1: f64, u2: f64, tau: f64) -> Result<Value, String> {
    check_positive("tau", tau)?;
    let mut c = example_circuit()?;
    let u = DVector::from_vec(vec![u1, u2]);
    let oracle = example_spec().forward(&u).map_err(|e| e.to_string())?;
    // default stepping takes 1000 steps per segment
    let trace = Trace::new().with_decimation((4000 / PLOT_POINTS).max(1));
    let run = infer_with_trace(&mut c, &u, tau, None, trace).map_err(|e| e.to_string())?;
    let t = &run.trace;
    let potentials = |layer: usize| -> Vec<Vec<f64>> {
        (0..t.potentials[0][layer].len()).map(|k| t.potential_series(layer, k)).collect()
    };
    let device = c.device().clone();
    let memductance: Vec<Value> = (1..=c.n_layers())
        .flat_map(|l| {
            let (rows, cols) = c.layer(l).phi.shape();
            let device = device.clone();
            (0..rows).flat_map(move |k| (0..cols).map(move |j| (l, k, j))).map(move |(l, k, j)| {
                json!({
                    "label": format!("W{l}[{}][{}]", k + 1, j + 1),
                    "values": t.flux_series(l, k, j).iter().map(|&p| device.memductance(p)).collect::<Vec<_>>(),
                })
            })
        })
        .collect();
    Ok(json!({
        "tau": tau,
        "y_hat": run.y_hat.as_slice(),
        "oracle": oracle.as_slice(),
        "max_flux_deviation": run.max_flux_deviation,
        "times": t.times,
        "inputs": potentials(0),
        "hidden": potentials(1),
        "outputs": potentials(2),
        "memductance": memductance,
    }))
}

/// Writes a lone first-layer memristor, starting from zero flux, to `target`.
pub fn write_curve(target: f64, alpha: f64, x0: f64, eps: f64) -> Result<Value, String> {
    check_positive("eps", eps)?;
    let device = DeviceModel::arctan();
    let act = Activation::tanh();
    let mut c = CircuitState::new(&[1, 1], device.clone(), act.clone(), Mode::Single).map_err(|e| e.to_string())?;
    let opts = WriteOptions {
        eps,
        x0,
        max_iterations: 10_000,
        ..Default::default()
    };
    let e = write_one(&mut c, 1, 0, 0, target, alpha, &opts, 0.0, &mut Discard).map_err(|e| e.to_string())?;
    Ok(json!({
        "target": target,
        "alpha": alpha,
        "alpha_bound": gain_bound(&device, &act, 1) / opts.period,
        "w_range": [device.w_min, device.w_max],
        "times": e.times(opts.period),
        "memductance": e.memductance,
        "xi": e.xi,
        "iterations": e.iterations,
        "final_error": e.final_error,
        "lyapunov_nonincreasing": e.lyapunov_nonincreasing,
    }))
}

/// Reads every memristor of the example network after shifting each flux by
/// `offset`, and compares with the memductances set in the model.
pub fn read_out(offset: f64, tau: f64) -> Result<Value, String> {
    check_positive("tau", tau)?;
    let mut c = example_circuit()?;
    for x in &mut c.layers {
        x.phi.add_scalar_mut(offset);
    }
    let direct = c.memductances();
    let report = read_all(&mut c, &ReadOptions { tau, ..Default::default() }).map_err(|e| e.to_string())?;
    let max_err = report
        .memductances
        .iter()
        .zip(&direct)
        .map(|(m, d)| (m - d).amax())
        .fold(0.0, f64::max);
    Ok(json!({
        "read": report.memductances.iter().map(matrix_rows).collect::<Vec<_>>(),
        "direct": direct.iter().map(matrix_rows).collect::<Vec<_>>(),
        "max_abs_diff": max_err,
        "windows": report.windows,
        "protocol_time": report.protocol_time,
    }))
}

fn to_js(v: Result<Value, String>) -> Result<String, JsValue> {
    v.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = inferExample)]
pub fn infer_example(u1: f64, u2: f64, tau: f64) -> Result<String, JsValue> {
    to_js(inference(u1, u2, tau))
}

#[wasm_bindgen(js_name = writeMemristor)]
pub fn write_memristor(target: f64, alpha: f64, x0: f64, eps: f64) -> Result<String, JsValue> {
    to_js(write_curve(target, alpha, x0, eps))
}

#[wasm_bindgen(js_name = readExample)]
pub fn read_example(offset: f64, tau: f64) -> Result<String, JsValue> {
    to_js(read_out(offset, tau))
}
