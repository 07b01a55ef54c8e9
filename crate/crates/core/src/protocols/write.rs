//! Closed-loop writing. After a probe interval at a fixed nonzero source
//! voltage, each interval of length `T` applies `P^0 = alpha (W_target - W_meas)`
//! until the measured memductance is within `eps` of the target.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::activation::Activation;
use crate::circuit::{format_num, Both, CircuitState, Discard, LastBreakpoint, Mode, Observer, TimeShift};
use crate::device::DeviceModel;
use crate::oracle::AnnSpec;
use crate::protocols::{BoundViolation, Path, PathBoundsMonitor};
use crate::signals::SegmentSignal;
use crate::{Error, Result};

/// Largest admissible `alpha T` for layer `l`: `1 / (beta (eta W_max)^(l-1))`.
pub fn gain_bound(device: &DeviceModel, act: &Activation, l: usize) -> f64 {
    1.0 / (device.beta * (act.eta * device.w_max).powi(l as i32 - 1))
}

/// Largest `alpha` admissible for layer `l` with interval `period`.
pub fn select_gain(device: &DeviceModel, act: &Activation, l: usize, period: f64) -> f64 {
    gain_bound(device, act, l) / period
}

/// Largest `alpha` admissible for every layer of an `n_layers`-layer circuit.
pub fn select_uniform_gain(device: &DeviceModel, act: &Activation, n_layers: usize, period: f64) -> f64 {
    let worst = (act.eta * device.w_max).powi(n_layers as i32 - 1).max(1.0);
    1.0 / (period * device.beta * worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainChoice {
    /// Largest admissible gain of each layer.
    PerLayer,
    /// One gain admissible for all layers.
    Uniform,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct WriteOptions {
    pub eps: f64,
    pub period: f64,
    pub x0: f64,
    pub gain: GainChoice,
    pub step: Option<f64>,
    pub max_iterations: usize,
    /// Write independent first-layer memristors simultaneously.
    pub batched: bool,
    pub monitor_bounds: bool,
}

impl Default for WriteOptions {
    fn default() -> Self {
        Self {
            eps: 0.05,
            period: 1.0,
            x0: 1.0,
            gain: GainChoice::Uniform,
            step: None,
            max_iterations: 1_000_000,
            batched: false,
            monitor_bounds: false,
        }
    }
}

/// Record of one memristor write. Sequences are sampled at the interval ends
/// `start + i T`, `i = 0, 1, ...`; index 1 follows the probe.
#[derive(Debug, Clone, Serialize)]
pub struct WriteEntry {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
    pub path: Vec<usize>,
    pub target: f64,
    pub alpha: f64,
    /// Controller intervals after the probe.
    pub iterations: usize,
    /// Probe plus controller intervals.
    pub intervals: usize,
    pub t_hat: f64,
    pub start_time: f64,
    pub final_memductance: f64,
    pub final_error: f64,
    pub flux: Vec<f64>,
    /// `(phi(iT) - phi_target)^2`.
    pub xi: Vec<f64>,
    /// Terminal-derived memductance; `NaN` at `i = 0`, where nothing is measured.
    #[serde(serialize_with = "ser_nan_as_null")]
    pub measured: Vec<f64>,
    pub memductance: Vec<f64>,
    /// Whether `xi` never increased after the probe interval.
    pub lyapunov_nonincreasing: bool,
}

fn ser_nan_as_null<S: serde::Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| if x.is_finite() { Some(*x) } else { None }))
}

impl WriteEntry {
    fn new(c: &CircuitState, path: &Path, target: f64, alpha: f64, start_time: f64) -> Result<Self> {
        let l = path.target_layer();
        let phi0 = c.layer(l).phi[(path.row(), path.col())];
        let phi_hat = c.device().flux_for(target)?;
        Ok(Self {
            layer: l,
            row: path.row(),
            col: path.col(),
            path: path.indices().to_vec(),
            target,
            alpha,
            iterations: 0,
            intervals: 0,
            t_hat: 0.0,
            start_time,
            final_memductance: c.device().memductance(phi0),
            final_error: f64::NAN,
            flux: vec![phi0],
            xi: vec![(phi0 - phi_hat).powi(2)],
            measured: vec![f64::NAN],
            memductance: vec![c.device().memductance(phi0)],
            lyapunov_nonincreasing: true,
        })
    }

    fn push(&mut self, c: &CircuitState, measured: f64, period: f64) -> Result<()> {
        let phi = c.layer(self.layer).phi[(self.row, self.col)];
        let phi_hat = c.device().flux_for(self.target)?;
        let xi = (phi - phi_hat).powi(2);
        if self.xi.len() >= 2 && xi > *self.xi.last().unwrap() {
            self.lyapunov_nonincreasing = false;
        }
        self.intervals += 1;
        self.iterations = self.intervals - 1;
        self.t_hat = self.intervals as f64 * period;
        self.flux.push(phi);
        self.xi.push(xi);
        self.measured.push(measured);
        self.final_memductance = c.device().memductance(phi);
        self.memductance.push(self.final_memductance);
        self.final_error = (self.target - measured).abs();
        Ok(())
    }

    /// Protocol times of the recorded samples.
    pub fn times(&self, period: f64) -> Vec<f64> {
        (0..self.flux.len()).map(|i| self.start_time + i as f64 * period).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WriteReport {
    pub entries: Vec<WriteEntry>,
    pub eps: f64,
    pub period: f64,
    pub x0: f64,
    /// Gain used per layer, index 0 for layer 1.
    pub alphas: Vec<f64>,
    pub batched: bool,
    /// Intervals applied in total, counting simultaneous intervals once.
    pub total_intervals: usize,
    pub protocol_time: f64,
    pub bound_checks: usize,
    pub bound_violations: Vec<BoundViolation>,
}

impl WriteReport {
    pub fn sum_t_hat(&self) -> f64 {
        self.entries.iter().map(|e| e.t_hat).sum()
    }

    pub fn all_converged(&self) -> bool {
        self.entries.iter().all(|e| e.final_error <= self.eps)
    }

    /// CSV of every recorded memductance: `protocol_time,layer,row,col,memductance`,
    /// with 1-based labels.
    pub fn write_curves_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["protocol_time", "layer", "row", "col", "memductance"])?;
        for e in &self.entries {
            for (t, m) in e.times(self.period).into_iter().zip(&e.memductance) {
                w.write_record([
                    format_num(t),
                    e.layer.to_string(),
                    (e.row + 1).to_string(),
                    (e.col + 1).to_string(),
                    format_num(*m),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out)?;
        Ok(())
    }
}

fn check_target(device: &DeviceModel, target: f64) -> Result<()> {
    if !device.is_realizable(target) {
        return Err(Error::Unrealizable {
            value: target,
            range: format!("({}, {})", device.w_min, device.w_max),
        });
    }
    Ok(())
}

fn check_gain(c: &CircuitState, l: usize, alpha: f64, period: f64) -> Result<()> {
    let bound = gain_bound(c.device(), c.activation(), l);
    if !(alpha > 0.0) || !(period > 0.0) || alpha * period > bound * (1.0 + 1e-12) {
        return Err(Error::GainCondition {
            product: alpha * period,
            bound,
            layer: l,
        });
    }
    Ok(())
}

/// Applies `p0` on `source` for one interval starting at protocol time `start`
/// and returns the potentials at its end.
fn apply_interval(
    c: &mut CircuitState,
    source: &DVector<f64>,
    opts: &WriteOptions,
    start: f64,
    observer: &mut dyn Observer,
) -> Result<crate::circuit::Potentials> {
    let signal = SegmentSignal::constant(0.0, opts.period, source.clone())?;
    let mut last = LastBreakpoint::default();
    c.integrate(&signal, opts.step, &mut Both(&mut last, &mut TimeShift(start, observer)))?;
    Ok(last.potentials.expect("integration always emits its final breakpoint"))
}

fn measure(p: &crate::circuit::Potentials, l: usize, row: usize, col: usize) -> Result<f64> {
    let divisor = p.potentials[l - 1][col];
    if divisor == 0.0 || !divisor.is_finite() {
        return Err(Error::DivisorTooSmall(divisor));
    }
    Ok(p.row_currents[l - 1][row] / divisor)
}

/// Writes memristor `(row, col)` of layer `l` to `target` along the default
/// path, starting at protocol time `start`.
#[allow(clippy::too_many_arguments)]
pub fn write_one(
    c: &mut CircuitState,
    l: usize,
    row: usize,
    col: usize,
    target: f64,
    alpha: f64,
    opts: &WriteOptions,
    start: f64,
    observer: &mut dyn Observer,
) -> Result<WriteEntry> {
    let path = Path::to_memristor(c, l, row, col)?;
    check_target(c.device(), target)?;
    check_gain(c, l, alpha, opts.period)?;
    if opts.x0 == 0.0 || !opts.x0.is_finite() {
        return Err(Error::InvalidParameter("probe voltage x0 must be nonzero".into()));
    }
    if !(opts.eps > 0.0) {
        return Err(Error::InvalidParameter("eps must be positive".into()));
    }
    c.select_path(&path);
    let result = write_path(c, &path, target, alpha, opts, start, observer);
    c.restore_inference_switches();
    result
}

fn write_path(
    c: &mut CircuitState,
    path: &Path,
    target: f64,
    alpha: f64,
    opts: &WriteOptions,
    start: f64,
    observer: &mut dyn Observer,
) -> Result<WriteEntry> {
    let l = path.target_layer();
    let mut entry = WriteEntry::new(c, path, target, alpha, start)?;
    let mut source = DVector::zeros(c.widths()[0]);
    source[path.source()] = opts.x0;
    loop {
        let t = start + entry.intervals as f64 * opts.period;
        let p = apply_interval(c, &source, opts, t, observer)?;
        let measured = measure(&p, l, path.row(), path.col())?;
        entry.push(c, measured, opts.period)?;
        let err = target - measured;
        if err.abs() <= opts.eps {
            return Ok(entry);
        }
        if entry.iterations >= opts.max_iterations {
            return Err(Error::Convergence {
                layer: l,
                row: path.row(),
                col: path.col(),
                iterations: entry.iterations,
                error: err.abs(),
            });
        }
        source[path.source()] = alpha * err;
    }
}

/// Groups the entries of an `n x m` array into generalized diagonals, each
/// with distinct rows and columns. Within a group, entries are in
/// column-then-row order.
fn diagonals(n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
    let size = n.max(m);
    (0..size)
        .map(|d| {
            let mut v: Vec<(usize, usize)> = (0..n)
                .filter_map(|k| {
                    let j = (k + d) % size;
                    (j < m).then_some((k, j))
                })
                .collect();
            v.sort_by_key(|&(k, j)| (j, k));
            v
        })
        .filter(|v| !v.is_empty())
        .collect()
}

/// Writes a diagonal of layer 1 simultaneously. Each memristor sees only its
/// own column source and feeds only its own row, so every flux follows the
/// same sequence as in a sequential write.
fn write_layer1_batch(
    c: &mut CircuitState,
    batch: &[(usize, usize)],
    targets: &DMatrix<f64>,
    alpha: f64,
    opts: &WriteOptions,
    start: f64,
) -> Result<(Vec<WriteEntry>, usize)> {
    let mut s1 = DMatrix::from_element(c.layer(1).n_rows(), c.layer(1).n_cols(), false);
    for &(k, j) in batch {
        s1[(k, j)] = true;
    }
    c.set_switches(1, s1)?;
    for l in 2..=c.n_layers() {
        let x = c.layer(l);
        let open = DMatrix::from_element(x.n_rows(), x.n_cols(), false);
        c.set_switches(l, open)?;
    }
    let mut entries = Vec::with_capacity(batch.len());
    for &(k, j) in batch {
        let path = Path::new(vec![j, k], c)?;
        entries.push(WriteEntry::new(c, &path, targets[(k, j)], alpha, start)?);
    }
    let mut source = DVector::zeros(c.widths()[0]);
    for &(_, j) in batch {
        source[j] = opts.x0;
    }
    let mut done = vec![false; batch.len()];
    let mut intervals = 0usize;
    while done.iter().any(|d| !d) {
        let p = apply_interval(c, &source, opts, start + intervals as f64 * opts.period, &mut Discard)?;
        intervals += 1;
        for (i, &(k, j)) in batch.iter().enumerate() {
            if done[i] {
                continue;
            }
            let measured = measure(&p, 1, k, j)?;
            entries[i].push(c, measured, opts.period)?;
            let err = entries[i].target - measured;
            if err.abs() <= opts.eps {
                done[i] = true;
                source[j] = 0.0;
            } else if entries[i].iterations >= opts.max_iterations {
                return Err(Error::Convergence {
                    layer: 1,
                    row: k,
                    col: j,
                    iterations: entries[i].iterations,
                    error: err.abs(),
                });
            } else {
                source[j] = alpha * err;
            }
        }
    }
    Ok((entries, intervals))
}

/// Writes every memristor to `targets` (one matrix per layer, physical rows):
/// layers from last to first, then columns, then rows.
pub fn write_all(c: &mut CircuitState, targets: &[DMatrix<f64>], opts: &WriteOptions) -> Result<WriteReport> {
    if targets.len() != c.n_layers() {
        return Err(Error::dim("target layers", c.n_layers(), targets.len()));
    }
    for (l, t) in targets.iter().enumerate() {
        let shape = c.layers[l].phi.shape();
        if t.shape() != shape {
            return Err(Error::InvalidParameter(format!(
                "targets for layer {} are {}x{}, array is {}x{}",
                l + 1,
                t.nrows(),
                t.ncols(),
                shape.0,
                shape.1
            )));
        }
        for &w in t.iter() {
            check_target(c.device(), w)?;
        }
    }
    let n_layers = c.n_layers();
    let alphas: Vec<f64> = (1..=n_layers)
        .map(|l| match opts.gain {
            GainChoice::PerLayer => select_gain(c.device(), c.activation(), l, opts.period),
            GainChoice::Uniform => select_uniform_gain(c.device(), c.activation(), n_layers, opts.period),
            GainChoice::Fixed(a) => a,
        })
        .collect();
    for (l, &a) in alphas.iter().enumerate() {
        check_gain(c, l + 1, a, opts.period)?;
    }
    if opts.x0 == 0.0 || !opts.x0.is_finite() {
        return Err(Error::InvalidParameter("probe voltage x0 must be nonzero".into()));
    }

    let mut entries = Vec::new();
    let mut total_intervals = 0usize;
    let mut checks = 0usize;
    let mut violations = Vec::new();
    let result = (|| -> Result<()> {
        for l in (1..=n_layers).rev() {
            let (n, m) = c.layer(l).phi.shape();
            if l == 1 && opts.batched {
                for batch in diagonals(n, m) {
                    let start = total_intervals as f64 * opts.period;
                    let (mut done, intervals) = write_layer1_batch(c, &batch, &targets[0], alphas[0], opts, start)?;
                    entries.append(&mut done);
                    total_intervals += intervals;
                }
                continue;
            }
            for j in 0..m {
                for k in 0..n {
                    let path = Path::to_memristor(c, l, k, j)?;
                    let mut monitor = PathBoundsMonitor::new(path);
                    let observer: &mut dyn Observer = if opts.monitor_bounds { &mut monitor } else { &mut Discard };
                    let start = total_intervals as f64 * opts.period;
                    let e = write_one(c, l, k, j, targets[l - 1][(k, j)], alphas[l - 1], opts, start, observer)?;
                    total_intervals += e.intervals;
                    entries.push(e);
                    checks += monitor.checks();
                    violations.extend(monitor.into_violations());
                }
            }
        }
        Ok(())
    })();
    c.restore_inference_switches();
    result?;

    Ok(WriteReport {
        entries,
        eps: opts.eps,
        period: opts.period,
        x0: opts.x0,
        alphas,
        batched: opts.batched,
        total_intervals,
        protocol_time: total_intervals as f64 * opts.period,
        bound_checks: checks,
        bound_violations: violations,
    })
}

/// Physical write targets and inference switches realising `spec` in `mode`.
pub fn physical_targets(
    spec: &AnnSpec,
    device: &DeviceModel,
    mode: Mode,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<bool>>)> {
    let mut targets = Vec::new();
    let mut switches = Vec::new();
    for m in &spec.weights {
        let (n, cols) = m.shape();
        match mode {
            Mode::Single => {
                for &w in m.iter() {
                    check_target(device, w)?;
                }
                targets.push(m.clone());
                switches.push(DMatrix::from_element(n, cols, true));
            }
            Mode::Differential => {
                let mut t = DMatrix::zeros(2 * n, cols);
                let mut s = DMatrix::from_element(2 * n, cols, true);
                for k in 0..n {
                    for j in 0..cols {
                        let split = crate::circuit::split_weight(m[(k, j)], device)?;
                        t[(k, j)] = split.w_plus;
                        t[(k + n, j)] = split.w_minus;
                        s[(k, j)] = split.s_plus;
                        s[(k + n, j)] = split.s_minus;
                    }
                }
                targets.push(t);
                switches.push(s);
            }
        }
    }
    Ok((targets, switches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::write_fixed_point;
    use std::f64::consts::PI;

    fn circuit(widths: &[usize]) -> CircuitState {
        CircuitState::new(widths, DeviceModel::arctan(), Activation::tanh(), Mode::Single).unwrap()
    }

    #[test]
    fn gain_selection() {
        let d = DeviceModel::arctan();
        let a = Activation::tanh();
        assert!((select_uniform_gain(&d, &a, 2, 1.0) - 2.0 / (4.0 + PI)).abs() < 1e-15);
        assert_eq!(select_gain(&d, &a, 1, 1.0), 1.0);
        assert!((select_gain(&d, &a, 2, 2.0) - 1.0 / (2.0 * (2.0 + PI / 2.0))).abs() < 1e-15);
        // eta W_max < 1 makes deeper layers less restrictive
        let s = Activation::tanh().with_eta(0.1);
        assert_eq!(select_uniform_gain(&d, &s, 3, 1.0), 1.0);
    }

    #[test]
    fn first_layer_write_matches_fixed_point_oracle() {
        let mut c = circuit(&[1, 1]);
        let opts = WriteOptions {
            eps: 1e-3,
            ..Default::default()
        };
        let e = write_one(&mut c, 1, 0, 0, 2.5, 0.25, &opts, 0.0, &mut Discard).unwrap();
        let oracle = write_fixed_point(c.device(), 2.5, 0.0, 0.25, 1.0, 1e-3, 1.0, 1000).unwrap();
        assert_eq!(e.flux.len(), oracle.len());
        for (a, b) in e.flux.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(e.final_error <= 1e-3);
        assert!(e.lyapunov_nonincreasing);
        assert_eq!(e.t_hat, e.intervals as f64);
    }

    #[test]
    fn already_on_target_takes_one_probe() {
        let mut c = circuit(&[1, 1]);
        let opts = WriteOptions {
            eps: 0.05,
            x0: 0.01,
            ..Default::default()
        };
        let e = write_one(&mut c, 1, 0, 0, 2.0, 0.25, &opts, 0.0, &mut Discard).unwrap();
        assert_eq!((e.iterations, e.intervals, e.t_hat), (0, 1, 1.0));
    }

    #[test]
    fn rejections() {
        let mut c = circuit(&[2, 3, 2]);
        let opts = WriteOptions::default();
        assert!(matches!(
            write_one(&mut c, 1, 0, 0, 4.0, 0.2, &opts, 0.0, &mut Discard),
            Err(Error::Unrealizable { .. })
        ));
        assert!(matches!(
            write_one(&mut c, 2, 0, 0, 2.5, 0.5, &opts, 0.0, &mut Discard),
            Err(Error::GainCondition { .. })
        ));
        let zero_probe = WriteOptions { x0: 0.0, ..opts };
        assert!(write_one(&mut c, 1, 0, 0, 2.5, 0.2, &zero_probe, 0.0, &mut Discard).is_err());
        let bad = vec![DMatrix::from_element(3, 2, 4.0), DMatrix::from_element(2, 3, 2.0)];
        assert!(matches!(write_all(&mut c, &bad, &opts), Err(Error::Unrealizable { .. })));
        // nothing ran
        assert!(c.fluxes().iter().all(|m| m.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn second_layer_write_converges_and_leaves_later_layers_alone() {
        let mut c = circuit(&[1, 2, 2, 1]);
        let before = c.fluxes();
        let opts = WriteOptions::default();
        let alpha = select_gain(c.device(), c.activation(), 2, 1.0);
        let mut monitor = PathBoundsMonitor::new(Path::to_memristor(&c, 2, 1, 1).unwrap());
        let e = write_one(&mut c, 2, 1, 1, 0.9, alpha, &opts, 0.0, &mut monitor).unwrap();
        assert!(e.final_error <= opts.eps);
        assert!((c.device().memductance(c.layer(2).phi[(1, 1)]) - 0.9).abs() <= opts.eps + 1e-9);
        assert!(e.lyapunov_nonincreasing);
        assert_eq!(c.layer(3).phi, before[2]);
        assert!(monitor.checks() > 0);
        assert!(monitor.violations().is_empty(), "{:?}", &monitor.violations()[..1]);
        // switches are back at the inference setting
        assert!(c.layer(3).switches.iter().all(|&s| s));
    }

    #[test]
    fn write_all_time_ledger_and_batching() {
        let mut c = circuit(&[3, 2, 2]);
        let targets = vec![
            DMatrix::from_row_slice(2, 3, &[0.8, 3.1, 2.2, 1.5, 2.9, 3.3]),
            DMatrix::from_row_slice(2, 2, &[1.2, 3.0, 2.6, 0.7]),
        ];
        let opts = WriteOptions::default();
        let mut c2 = c.clone();
        let seq = write_all(&mut c, &targets, &opts).unwrap();
        assert!(seq.all_converged());
        assert_eq!(seq.total_intervals, seq.entries.iter().map(|e| e.intervals).sum::<usize>());
        assert_eq!(seq.protocol_time, seq.sum_t_hat());
        let order: Vec<(usize, usize, usize)> = seq.entries.iter().map(|e| (e.layer, e.col, e.row)).collect();
        assert_eq!(order[0], (2, 0, 0));
        assert_eq!(order.last().copied(), Some((1, 2, 1)));

        let bat = write_all(
            &mut c2,
            &targets,
            &WriteOptions {
                batched: true,
                ..opts
            },
        )
        .unwrap();
        assert_eq!(c.fluxes(), c2.fluxes());
        assert!(bat.protocol_time < seq.protocol_time);
    }

    #[test]
    fn diagonal_groups_have_distinct_rows_and_columns() {
        for (n, m) in [(2, 3), (3, 2), (4, 4), (1, 5)] {
            let groups = diagonals(n, m);
            let total: usize = groups.iter().map(|g| g.len()).sum();
            assert_eq!(total, n * m);
            for g in groups {
                let mut rows: Vec<_> = g.iter().map(|p| p.0).collect();
                let mut cols: Vec<_> = g.iter().map(|p| p.1).collect();
                rows.dedup();
                cols.sort();
                cols.dedup();
                assert_eq!(rows.len(), g.len());
                assert_eq!(cols.len(), g.len());
            }
        }
    }

    #[test]
    fn curves_csv() {
        let mut c = circuit(&[1, 1]);
        let r = write_all(&mut c, &[DMatrix::from_element(1, 1, 2.5)], &WriteOptions::default()).unwrap();
        let mut buf = Vec::new();
        r.write_curves_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("protocol_time,layer,row,col,memductance\n0.0,1,1,1,2.0\n"));
        assert_eq!(text.lines().count(), 1 + r.entries[0].flux.len());
    }
}
