//! Piecewise-constant input schedules, the four-segment block pulse used for
//! inference and reading, and parity checks on sampled waveforms.

use std::io::Write;

use nalgebra::DVector;

use crate::circuit::Trace;
use crate::{Error, Result};

/// Default half-width of the block pulse, in seconds.
pub const DEFAULT_TAU: f64 = 5.0;

/// A piecewise-constant vector signal. Segment `i` spans
/// `[breakpoints[i], breakpoints[i + 1]]` and carries `values[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSignal {
    breakpoints: Vec<f64>,
    values: Vec<DVector<f64>>,
}

impl SegmentSignal {
    pub fn new(breakpoints: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.is_empty() || breakpoints.len() != values.len() + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} breakpoints cannot bound {} segments",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints.iter().any(|t| !t.is_finite()) || breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "breakpoints must be finite and strictly increasing".into(),
            ));
        }
        let dim = values[0].len();
        if let Some(bad) = values.iter().find(|v| v.len() != dim) {
            return Err(Error::dim("segment value", dim, bad.len()));
        }
        Ok(Self { breakpoints, values })
    }

    /// A single segment holding `value` on `[start, start + duration]`.
    pub fn constant(start: f64, duration: f64, value: DVector<f64>) -> Result<Self> {
        Self::new(vec![start, start + duration], vec![value])
    }

    /// The same schedule delayed by `offset` seconds.
    pub fn shifted(mut self, offset: f64) -> Self {
        self.breakpoints.iter_mut().for_each(|t| *t += offset);
        self
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn start(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// Iterates `(start, end, value)` per segment.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, &DVector<f64>)> {
        self.breakpoints
            .windows(2)
            .zip(&self.values)
            .map(|(w, v)| (w[0], w[1], v))
    }

    /// Value on the segment containing `t`; interior breakpoints belong to the
    /// segment they end. `None` outside the signal's support.
    pub fn value_at(&self, t: f64) -> Option<&DVector<f64>> {
        if t < self.start() || t > self.end() {
            return None;
        }
        let idx = self.breakpoints[1..].partition_point(|&b| b < t);
        self.values.get(idx.min(self.values.len() - 1))
    }

    /// Per-coordinate time integral over the whole support.
    pub fn integral(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dim());
        for (a, b, v) in self.segments() {
            acc += v * (b - a);
        }
        acc
    }

    /// Step-plot CSV: `time,u1,...,un`, two rows per segment.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("u{i}")));
        w.write_record(&header)?;
        for (a, b, v) in self.segments() {
            for t in [a, b] {
                let mut row = vec![t.to_string()];
                row.extend(v.iter().map(|x| x.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// The block pulse `Q(t)`: -1 on `[-2tau, -tau)`, +1 on `[-tau, tau]`,
/// -1 on `(tau, 2tau]`, zero elsewhere.
pub fn block_value(tau: f64, t: f64) -> f64 {
    if t < -2.0 * tau || t > 2.0 * tau {
        0.0
    } else if t < -tau || t > tau {
        -1.0
    } else {
        1.0
    }
}

/// Block pulse with a per-input amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSignal {
    pub tau: f64,
    pub amplitude: DVector<f64>,
}

impl BlockSignal {
    pub fn new(tau: f64, amplitude: DVector<f64>) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { tau, amplitude })
    }

    /// Total duration `T = 4 tau`.
    pub fn period(&self) -> f64 {
        4.0 * self.tau
    }

    /// `amplitude * Q(t - 2 tau)` on `[0, 4 tau]` as four constant segments.
    pub fn to_segments(&self) -> SegmentSignal {
        let tau = self.tau;
        let a = &self.amplitude;
        SegmentSignal {
            breakpoints: vec![0.0, tau, 2.0 * tau, 3.0 * tau, 4.0 * tau],
            values: vec![-a, a.clone(), a.clone(), -a],
        }
    }
}

/// Encodes an ANN input as the block-pulse voltage schedule.
pub fn encode(u_hat: &DVector<f64>, tau: f64) -> Result<SegmentSignal> {
    Ok(BlockSignal::new(tau, u_hat.clone())?.to_segments())
}

/// Reads the network output at the pulse midpoint `t = 2 tau`.
pub fn decode(trace: &Trace, tau: f64) -> Result<DVector<f64>> {
    let t = 2.0 * tau;
    let idx = trace.sample_index(t).ok_or(Error::MissingSample(t))?;
    Ok(trace.output(idx).clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Odd,
    Even,
}

/// Largest deviation from `f(t) = -f(a + b - t)` (odd) or
/// `f(t) = f(a + b - t)` (even) over the samples in `[a, b]`.
///
/// Mirror points between samples are linearly interpolated. For odd parity the
/// midpoint itself is skipped: a jump there has no convention-free value.
pub fn check_parity(times: &[f64], values: &[f64], interval: (f64, f64), parity: Parity) -> Result<f64> {
    let (a, b) = interval;
    if times.len() != values.len() {
        return Err(Error::dim("parity samples", times.len(), values.len()));
    }
    let tol = 1e-9 * (a.abs() + b.abs()).max(1.0);
    if times.is_empty() || times[0] > a + tol || *times.last().unwrap() < b - tol || a >= b {
        return Err(Error::InvalidParameter(format!(
            "samples do not cover the interval [{a}, {b}]"
        )));
    }
    let mid = 0.5 * (a + b);
    let mut worst: f64 = 0.0;
    for (&t, &f) in times.iter().zip(values) {
        if t < a - tol || t > mid + tol {
            continue;
        }
        if parity == Parity::Odd && (t - mid).abs() <= tol {
            continue;
        }
        let mirrored = interpolate(times, values, a + b - t, tol);
        let dev = match parity {
            Parity::Odd => (f + mirrored).abs(),
            Parity::Even => (f - mirrored).abs(),
        };
        worst = worst.max(dev);
    }
    Ok(worst)
}

fn interpolate(times: &[f64], values: &[f64], t: f64, tol: f64) -> f64 {
    let i = times.partition_point(|&s| s < t);
    if i < times.len() && (times[i] - t).abs() <= tol {
        return values[i];
    }
    if i > 0 && (times[i - 1] - t).abs() <= tol {
        return values[i - 1];
    }
    if i == 0 {
        return values[0];
    }
    if i == times.len() {
        return values[times.len() - 1];
    }
    let (t0, t1) = (times[i - 1], times[i]);
    let s = (t - t0) / (t1 - t0);
    values[i - 1] + s * (values[i] - values[i - 1])
}
