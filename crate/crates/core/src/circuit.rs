//! The layered interconnection of crossbar arrays and neurons, and its time
//! integration under piecewise-constant source voltages.
//!
//! Layer `l` (1-based) is an array whose columns are driven by the potentials
//! `P^(l-1)` and whose grounded rows feed the neurons producing `P^l`. Rows and
//! columns are 0-based throughout the API. In differential mode layer `l` has
//! `2 n_l` rows: row `k` is the positive member of a pair and row `k + n_l`
//! the negative one, and neuron `k` sees `Jbar_k - Jbar_(k + n_l)`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::crossbar::CrossbarState;
use crate::device::DeviceModel;
use crate::oracle::AnnSpec;
use crate::signals::SegmentSignal;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Single,
    Differential,
}

#[derive(Debug, Clone)]
pub struct CircuitState {
    pub layers: Vec<CrossbarState>,
    widths: Vec<usize>,
    device: DeviceModel,
    activation: Activation,
    mode: Mode,
    inference_switches: Vec<DMatrix<bool>>,
}

/// Instantaneous potentials and currents of the whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct Potentials {
    /// `P^0 ..= P^L`.
    pub potentials: Vec<DVector<f64>>,
    /// Physical row currents `Jbar^l`, one entry per array row.
    pub row_currents: Vec<DVector<f64>>,
    /// Neuron inputs, equal to the row currents in single mode and to the
    /// paired differences in differential mode.
    pub neuron_inputs: Vec<DVector<f64>>,
}

impl Potentials {
    pub fn output(&self) -> &DVector<f64> {
        self.potentials.last().unwrap()
    }
}

impl CircuitState {
    /// Zero flux everywhere, all switches closed.
    pub fn new(widths: &[usize], device: DeviceModel, activation: Activation, mode: Mode) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidParameter("need at least an input and one layer width".into()));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidParameter(format!("layer widths must be positive: {widths:?}")));
        }
        let factor = match mode {
            Mode::Single => 1,
            Mode::Differential => 2,
        };
        let layers: Vec<CrossbarState> = widths
            .windows(2)
            .map(|w| CrossbarState::new(factor * w[1], w[0]))
            .collect();
        let inference_switches = layers.iter().map(|x| x.switches.clone()).collect();
        Ok(Self {
            layers,
            widths: widths.to_vec(),
            device,
            activation,
            mode,
            inference_switches,
        })
    }

    /// Programs fluxes so the network computes `spec`. Single mode inverts the
    /// device curve entry by entry; differential mode splits each weight into a
    /// pair and opens the partner switch where a single memristor is needed.
    pub fn from_weights(spec: &AnnSpec, device: DeviceModel, mode: Mode) -> Result<Self> {
        let mut c = Self::new(&spec.widths(), device, spec.activation.clone(), mode)?;
        for (l, m) in spec.weights.iter().enumerate() {
            let (n, cols) = m.shape();
            match mode {
                Mode::Single => {
                    for k in 0..n {
                        for j in 0..cols {
                            c.layers[l].phi[(k, j)] = c.device.flux_for(m[(k, j)])?;
                        }
                    }
                }
                Mode::Differential => {
                    for k in 0..n {
                        for j in 0..cols {
                            let s = split_weight(m[(k, j)], &c.device)?;
                            c.layers[l].phi[(k, j)] = c.device.flux_for(s.w_plus)?;
                            c.layers[l].phi[(k + n, j)] = c.device.flux_for(s.w_minus)?;
                            c.layers[l].switches[(k, j)] = s.s_plus;
                            c.layers[l].switches[(k + n, j)] = s.s_minus;
                        }
                    }
                }
            }
        }
        c.inference_switches = c.layers.iter().map(|x| x.switches.clone()).collect();
        Ok(c)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn device(&self) -> &DeviceModel {
        &self.device
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// The array of layer `l` (1-based).
    pub fn layer(&self, l: usize) -> &CrossbarState {
        &self.layers[l - 1]
    }

    fn check_layer(&self, l: usize) -> Result<()> {
        if l == 0 || l > self.layers.len() {
            return Err(Error::InvalidParameter(format!(
                "layer {l} out of range 1..={}",
                self.layers.len()
            )));
        }
        Ok(())
    }

    pub fn set_switches(&mut self, l: usize, switches: DMatrix<bool>) -> Result<()> {
        self.check_layer(l)?;
        self.layers[l - 1].set_switches(switches)
    }

    /// Switch settings used for inference: all closed, except partners opened
    /// by a single-memristor split in differential mode.
    pub fn inference_switches(&self) -> &[DMatrix<bool>] {
        &self.inference_switches
    }

    pub fn set_inference_switches(&mut self, switches: Vec<DMatrix<bool>>) -> Result<()> {
        if switches.len() != self.layers.len() {
            return Err(Error::dim("inference switch layers", self.layers.len(), switches.len()));
        }
        for (x, s) in self.layers.iter().zip(&switches) {
            if x.switches.shape() != s.shape() {
                return Err(Error::InvalidParameter("inference switch shape mismatch".into()));
            }
        }
        self.inference_switches = switches;
        Ok(())
    }

    pub fn restore_inference_switches(&mut self) {
        for (x, s) in self.layers.iter_mut().zip(&self.inference_switches) {
            x.switches = s.clone();
        }
    }

    pub fn set_flux(&mut self, l: usize, phi: DMatrix<f64>) -> Result<()> {
        self.check_layer(l)?;
        let x = &mut self.layers[l - 1];
        if phi.shape() != x.phi.shape() {
            return Err(Error::InvalidParameter(format!(
                "flux for layer {l} is {}x{}, array is {}x{}",
                phi.nrows(),
                phi.ncols(),
                x.n_rows(),
                x.n_cols()
            )));
        }
        x.phi = phi;
        Ok(())
    }

    pub fn fluxes(&self) -> Vec<DMatrix<f64>> {
        self.layers.iter().map(|x| x.phi.clone()).collect()
    }

    pub fn memductances(&self) -> Vec<DMatrix<f64>> {
        self.layers.iter().map(|x| x.memductances(&self.device)).collect()
    }

    /// Largest absolute flux change relative to `before`.
    pub fn max_flux_deviation(&self, before: &[DMatrix<f64>]) -> f64 {
        self.layers
            .iter()
            .zip(before)
            .flat_map(|(x, b)| x.phi.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max)
    }

    /// The signed weights the circuit implements under its inference switch
    /// settings, as a software network.
    pub fn effective_spec(&self) -> Result<AnnSpec> {
        let weights = self
            .layers
            .iter()
            .zip(&self.inference_switches)
            .zip(self.widths.windows(2))
            .map(|((x, s), w)| {
                let masked = DMatrix::from_fn(x.n_rows(), x.n_cols(), |k, j| {
                    if s[(k, j)] {
                        self.device.memductance(x.phi[(k, j)])
                    } else {
                        0.0
                    }
                });
                match self.mode {
                    Mode::Single => masked,
                    Mode::Differential => {
                        let n = w[1];
                        masked.rows(0, n) - masked.rows(n, n)
                    }
                }
            })
            .collect();
        AnnSpec::new(weights, self.activation.clone())
    }

    /// Potentials and currents at the present fluxes for source voltage `u`.
    pub fn forward_potentials(&self, u: &DVector<f64>) -> Result<Potentials> {
        if u.len() != self.widths[0] {
            return Err(Error::dim("source voltages", self.widths[0], u.len()));
        }
        let mut work = Workspace::new(self);
        self.propagate(u.as_slice(), None, &mut work);
        Ok(work.to_potentials())
    }

    /// Evaluates the network with fluxes shifted by `shift = (c, k)`:
    /// `phi_kj + c S_kj k_(l-1)[j]`. Fills `work.p` and `work.rows`.
    fn propagate(&self, u: &[f64], shift: Option<(f64, &[Vec<f64>])>, work: &mut Workspace) {
        work.p[0].copy_from_slice(u);
        for (l, x) in self.layers.iter().enumerate() {
            let (before, after) = work.p.split_at_mut(l + 1);
            let p = &before[l];
            let rows = &mut work.rows[l];
            rows.iter_mut().for_each(|v| *v = 0.0);
            let n = x.n_rows();
            for (j, &pj) in p.iter().enumerate() {
                if pj == 0.0 {
                    continue;
                }
                let col_phi = x.phi.column(j);
                let col_s = x.switches.column(j);
                let delta = shift.map_or(0.0, |(c, k)| c * k[l][j]);
                for k in 0..n {
                    if col_s[k] {
                        rows[k] += self.device.memductance(col_phi[k] + delta) * pj;
                    }
                }
            }
            let next = &mut after[0];
            let inputs = &mut work.inputs[l];
            match self.mode {
                Mode::Single => inputs.copy_from_slice(rows),
                Mode::Differential => {
                    let half = n / 2;
                    for k in 0..half {
                        inputs[k] = rows[k] - rows[k + half];
                    }
                }
            }
            for (o, &i) in next.iter_mut().zip(inputs.iter()) {
                *o = self.activation.apply(i);
            }
        }
    }

    /// Advances the fluxes over `signal` with fixed-step classical RK4. Each
    /// segment is cut into `ceil(len / step)` equal substeps so that no step
    /// straddles a breakpoint. `step` defaults to `min(len / 1000, 0.01)` per
    /// segment.
    ///
    /// The observer sees the initial state and the state after every step.
    /// Samples landing on a breakpoint carry the potentials of the segment that
    /// ends there.
    pub fn integrate(
        &mut self,
        signal: &SegmentSignal,
        step: Option<f64>,
        observer: &mut dyn Observer,
    ) -> Result<()> {
        if signal.dim() != self.widths[0] {
            return Err(Error::dim("signal", self.widths[0], signal.dim()));
        }
        if let Some(h) = step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
            }
        }
        let mut work = Workspace::new(self);
        let mut k: [Vec<Vec<f64>>; 4] = std::array::from_fn(|_| work.p[..self.layers.len()].to_vec());
        let mut step_index = 0usize;

        if observer.wants(0, true) {
            let u = signal.values()[0].as_slice();
            self.propagate(u, None, &mut work);
            observer.observe(&Sample {
                time: signal.start(),
                at_breakpoint: true,
                circuit: self,
                potentials: &work.to_potentials(),
            });
        }

        for (t0, t1, value) in signal.segments() {
            let u = value.as_slice();
            let len = t1 - t0;
            let h_target = step.unwrap_or_else(|| (len / 1000.0).min(1e-2));
            let n = ((len / h_target) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            let h = len / n as f64;
            let idle = u.iter().all(|&v| v == 0.0);
            for i in 1..=n {
                if !idle {
                    self.rk4_step(u, h, &mut work, &mut k);
                    self.check_finite(t0 + len * i as f64 / n as f64)?;
                }
                step_index += 1;
                let at_breakpoint = i == n;
                if observer.wants(step_index, at_breakpoint) {
                    self.propagate(u, None, &mut work);
                    let time = if at_breakpoint { t1 } else { t0 + len * i as f64 / n as f64 };
                    observer.observe(&Sample {
                        time,
                        at_breakpoint,
                        circuit: self,
                        potentials: &work.to_potentials(),
                    });
                }
            }
        }
        Ok(())
    }

    fn rk4_step(&mut self, u: &[f64], h: f64, work: &mut Workspace, k: &mut [Vec<Vec<f64>>; 4]) {
        let n_layers = self.layers.len();
        let coeffs = [0.0, 0.5 * h, 0.5 * h, h];
        for s in 0..4 {
            if s == 0 {
                self.propagate(u, None, work);
            } else {
                let (prev, _) = k.split_at(s);
                self.propagate(u, Some((coeffs[s], &prev[s - 1])), work);
            }
            for l in 0..n_layers {
                k[s][l].copy_from_slice(&work.p[l]);
            }
        }
        for (l, x) in self.layers.iter_mut().enumerate() {
            let m = x.n_cols();
            for j in 0..m {
                let rate = (k[0][l][j] + 2.0 * k[1][l][j] + 2.0 * k[2][l][j] + k[3][l][j]) / 6.0;
                if rate == 0.0 {
                    continue;
                }
                let dphi = h * rate;
                let col_s = x.switches.column(j).clone_owned();
                let mut col = x.phi.column_mut(j);
                for r in 0..col.len() {
                    if col_s[r] {
                        col[r] += dphi;
                    }
                }
            }
        }
    }

    fn check_finite(&self, time: f64) -> Result<()> {
        for (l, x) in self.layers.iter().enumerate() {
            if x.phi.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { time, layer: l + 1 });
            }
        }
        Ok(())
    }
}

/// Preallocated buffers for one forward sweep.
struct Workspace {
    p: Vec<Vec<f64>>,
    rows: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(c: &CircuitState) -> Self {
        Self {
            p: c.widths.iter().map(|&n| vec![0.0; n]).collect(),
            rows: c.layers.iter().map(|x| vec![0.0; x.n_rows()]).collect(),
            inputs: c.widths[1..].iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn to_potentials(&self) -> Potentials {
        let conv = |v: &Vec<Vec<f64>>| v.iter().map(|x| DVector::from_column_slice(x)).collect();
        Potentials {
            potentials: conv(&self.p),
            row_currents: conv(&self.rows),
            neuron_inputs: conv(&self.inputs),
        }
    }
}

/// One observation handed to an [`Observer`] during integration.
pub struct Sample<'a> {
    pub time: f64,
    pub at_breakpoint: bool,
    pub circuit: &'a CircuitState,
    pub potentials: &'a Potentials,
}

pub trait Observer {
    /// Whether the sample after step `step` is wanted. Potentials are only
    /// computed for wanted samples.
    fn wants(&self, _step: usize, _at_breakpoint: bool) -> bool {
        true
    }

    fn observe(&mut self, sample: &Sample<'_>);
}

/// Ignores every sample.
pub struct Discard;

impl Observer for Discard {
    fn wants(&self, _step: usize, _at_breakpoint: bool) -> bool {
        false
    }

    fn observe(&mut self, _sample: &Sample<'_>) {}
}

impl<F: FnMut(&Sample<'_>)> Observer for F {
    fn observe(&mut self, sample: &Sample<'_>) {
        self(sample)
    }
}

/// Fans one integration out to two observers.
pub struct Both<'a, 'b>(pub &'a mut dyn Observer, pub &'b mut dyn Observer);

impl Observer for Both<'_, '_> {
    fn wants(&self, step: usize, at_breakpoint: bool) -> bool {
        self.0.wants(step, at_breakpoint) || self.1.wants(step, at_breakpoint)
    }

    fn observe(&mut self, sample: &Sample<'_>) {
        self.0.observe(sample);
        self.1.observe(sample);
    }
}

/// Forwards samples to an inner observer with times advanced by `offset`.
/// Lets protocols integrate every interval from zero, so repeated intervals
/// of equal length use bitwise identical step sizes.
pub struct TimeShift<'a>(pub f64, pub &'a mut dyn Observer);

impl Observer for TimeShift<'_> {
    fn wants(&self, step: usize, at_breakpoint: bool) -> bool {
        self.1.wants(step, at_breakpoint)
    }

    fn observe(&mut self, s: &Sample<'_>) {
        self.1.observe(&Sample {
            time: s.time + self.0,
            at_breakpoint: s.at_breakpoint,
            circuit: s.circuit,
            potentials: s.potentials,
        });
    }
}

/// Keeps the potentials of the most recent breakpoint sample.
#[derive(Default)]
pub struct LastBreakpoint {
    pub time: f64,
    pub potentials: Option<Potentials>,
}

impl Observer for LastBreakpoint {
    fn wants(&self, _step: usize, at_breakpoint: bool) -> bool {
        at_breakpoint
    }

    fn observe(&mut self, s: &Sample<'_>) {
        self.time = s.time;
        self.potentials = Some(s.potentials.clone());
    }
}

/// Recorded time series of an integration.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub times: Vec<f64>,
    /// Flux snapshots per sample, empty when flux recording is off.
    pub flux: Vec<Vec<DMatrix<f64>>>,
    pub row_currents: Vec<Vec<DVector<f64>>>,
    pub potentials: Vec<Vec<DVector<f64>>>,
    decimation: usize,
    skip_flux: bool,
}

impl Trace {
    pub fn new() -> Self {
        Self {
            decimation: 1,
            ..Default::default()
        }
    }

    /// Keep every `n`-th step; breakpoint samples are always kept.
    pub fn with_decimation(mut self, n: usize) -> Self {
        self.decimation = n.max(1);
        self
    }

    pub fn without_flux(mut self) -> Self {
        self.skip_flux = true;
        self
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the sample at time `t`, within a relative tolerance.
    pub fn sample_index(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * t.abs().max(1.0);
        let i = self.times.partition_point(|&s| s < t - tol);
        (i < self.times.len() && (self.times[i] - t).abs() <= tol).then_some(i)
    }

    /// Network output `y = P^L` at sample `idx`.
    pub fn output(&self, idx: usize) -> &DVector<f64> {
        self.potentials[idx].last().unwrap()
    }

    pub fn potential_series(&self, layer: usize, k: usize) -> Vec<f64> {
        self.potentials.iter().map(|p| p[layer][k]).collect()
    }

    /// Flux of `phi^l_kj` (layer 1-based) over time.
    pub fn flux_series(&self, l: usize, k: usize, j: usize) -> Vec<f64> {
        self.flux.iter().map(|f| f[l - 1][(k, j)]).collect()
    }

    pub fn row_current_series(&self, l: usize, k: usize) -> Vec<f64> {
        self.row_currents.iter().map(|r| r[l - 1][k]).collect()
    }

    /// CSV with header `time`, `phi[l][k][j]`, `Jbar[l][k]`, `P[l][k]`; layer,
    /// row and column labels are 1-based and `P[0][*]` is the source.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let Some(first_p) = self.potentials.first() else {
            w.write_record(["time"])?;
            w.flush()?;
            return Ok(());
        };
        let mut header = vec!["time".to_string()];
        if let Some(f) = self.flux.first() {
            for (l, m) in f.iter().enumerate() {
                for k in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        header.push(format!("phi[{}][{}][{}]", l + 1, k + 1, j + 1));
                    }
                }
            }
        }
        for (l, r) in self.row_currents[0].iter().enumerate() {
            for k in 0..r.len() {
                header.push(format!("Jbar[{}][{}]", l + 1, k + 1));
            }
        }
        for (l, p) in first_p.iter().enumerate() {
            for k in 0..p.len() {
                header.push(format!("P[{}][{}]", l, k + 1));
            }
        }
        w.write_record(&header)?;
        for i in 0..self.times.len() {
            let mut row = vec![format_num(self.times[i])];
            if let Some(f) = self.flux.get(i) {
                for m in f {
                    for k in 0..m.nrows() {
                        for j in 0..m.ncols() {
                            row.push(format_num(m[(k, j)]));
                        }
                    }
                }
            }
            row.extend(self.row_currents[i].iter().flat_map(|r| r.iter().map(|&v| format_num(v))));
            row.extend(self.potentials[i].iter().flat_map(|p| p.iter().map(|&v| format_num(v))));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest representation that round-trips.
pub(crate) fn format_num(v: f64) -> String {
    format!("{v:?}")
}

impl Observer for Trace {
    fn wants(&self, step: usize, at_breakpoint: bool) -> bool {
        at_breakpoint || step.is_multiple_of(self.decimation.max(1))
    }

    fn observe(&mut self, s: &Sample<'_>) {
        if let Some(&last) = self.times.last() {
            if s.time <= last {
                return;
            }
        }
        self.times.push(s.time);
        if !self.skip_flux {
            self.flux.push(s.circuit.fluxes());
        }
        self.row_currents.push(s.potentials.row_currents.clone());
        self.potentials.push(s.potentials.potentials.clone());
    }
}

/// A signed weight realised by a pair of memristors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitWeight {
    pub w_plus: f64,
    pub w_minus: f64,
    pub s_plus: bool,
    pub s_minus: bool,
}

impl SplitWeight {
    pub fn value(&self) -> f64 {
        let p = if self.s_plus { self.w_plus } else { 0.0 };
        let m = if self.s_minus { self.w_minus } else { 0.0 };
        p - m
    }
}

/// Splits `target` into a memristor pair. Inside the pair range
/// `|t| < W_max - W_min` both memristors are used, centred on the middle of the
/// memductance range. Otherwise a single memristor carries `|t|` and its
/// partner is switched out (held at the centre).
pub fn split_weight(target: f64, device: &DeviceModel) -> Result<SplitWeight> {
    let centre = 0.5 * (device.w_min + device.w_max);
    let span = device.w_max - device.w_min;
    if target.abs() < span {
        let (w_plus, w_minus) = (centre + 0.5 * target, centre - 0.5 * target);
        if device.is_realizable(w_plus) && device.is_realizable(w_minus) {
            return Ok(SplitWeight {
                w_plus,
                w_minus,
                s_plus: true,
                s_minus: true,
            });
        }
    }
    if device.is_realizable(target.abs()) {
        return Ok(if target > 0.0 {
            SplitWeight {
                w_plus: target,
                w_minus: centre,
                s_plus: true,
                s_minus: false,
            }
        } else {
            SplitWeight {
                w_plus: centre,
                w_minus: -target,
                s_plus: false,
                s_minus: true,
            }
        });
    }
    Err(Error::Unrealizable {
        value: target,
        range: format!("(-{w}, {w}) as a pair or single memristor", w = device.w_max),
    })
}

/// Whether `target` can be realised by [`split_weight`].
pub fn is_weight_realizable(target: f64, device: &DeviceModel) -> bool {
    split_weight(target, device).is_ok()
}
