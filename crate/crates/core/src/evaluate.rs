//! Circuit-versus-software comparison over an image dataset.

use rayon::prelude::*;
use serde::Serialize;

use crate::circuit::{CircuitState, Trace};
use crate::ingest::Dataset;
use crate::protocols::infer_with_trace;
use crate::{AnnSpec, Result};

/// Default integration step for dataset runs, as a fraction of `tau`.
pub const DATASET_STEP_FRACTION: f64 = 1.0 / 200.0;

#[derive(Debug, Clone, Serialize)]
pub struct ImageResult {
    pub index: usize,
    pub label: u8,
    pub circuit_output: Vec<f64>,
    pub oracle_output: Vec<f64>,
    pub circuit_argmax: usize,
    pub oracle_argmax: usize,
    pub max_abs_diff: f64,
    pub max_flux_deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetReport {
    pub n_images: usize,
    pub argmax_agreement: usize,
    pub agreement_rate: f64,
    pub circuit_accuracy: f64,
    pub oracle_accuracy: f64,
    pub max_abs_diff: f64,
    pub tau: f64,
    pub step: f64,
    pub first_image: Option<ImageResult>,
    pub images: Vec<ImageResult>,
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Runs inference on every image and compares it with the software network
/// `oracle`. Images are processed in parallel; results keep dataset order.
pub fn evaluate_dataset(
    c: &CircuitState,
    oracle: &AnnSpec,
    data: &Dataset,
    tau: f64,
    step: Option<f64>,
) -> Result<DatasetReport> {
    let step = step.unwrap_or(tau * DATASET_STEP_FRACTION);
    let results: Vec<Result<ImageResult>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let mut circuit = c.clone();
            let u = &data.images[i];
            let trace = Trace::new().without_flux().with_decimation(usize::MAX);
            let run = infer_with_trace(&mut circuit, u, tau, Some(step), trace)?;
            let reference = oracle.forward(u)?;
            let circuit_output: Vec<f64> = run.y_hat.iter().copied().collect();
            let oracle_output: Vec<f64> = reference.iter().copied().collect();
            Ok(ImageResult {
                index: i,
                label: data.labels[i],
                circuit_argmax: argmax(&circuit_output),
                oracle_argmax: argmax(&oracle_output),
                max_abs_diff: (&run.y_hat - &reference).amax(),
                max_flux_deviation: run.max_flux_deviation,
                circuit_output,
                oracle_output,
            })
        })
        .collect();
    let images = results.into_iter().collect::<Result<Vec<_>>>()?;
    let n = images.len();
    let agree = images.iter().filter(|r| r.circuit_argmax == r.oracle_argmax).count();
    let rate = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
    Ok(DatasetReport {
        n_images: n,
        argmax_agreement: agree,
        agreement_rate: rate(agree),
        circuit_accuracy: rate(images.iter().filter(|r| r.circuit_argmax == r.label as usize).count()),
        oracle_accuracy: rate(images.iter().filter(|r| r.oracle_argmax == r.label as usize).count()),
        max_abs_diff: images.iter().map(|r| r.max_abs_diff).fold(0.0, f64::max),
        tau,
        step,
        first_image: images.first().cloned(),
        images,
    })
}
