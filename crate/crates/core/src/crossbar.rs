//! A single memristive crossbar array with one switch per crossing and
//! grounded row bars.
//!
//! Column `j` is driven by the potential `P_j`; row `k` is held at zero by the
//! neuron it feeds and delivers the current `Jbar_k = sum_j W(phi_kj) S_kj P_j`.

use nalgebra::{DMatrix, DVector};

use crate::device::DeviceModel;
use crate::{Error, Result};

/// Fluxes and switch settings of an `n x m` array.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossbarState {
    pub phi: DMatrix<f64>,
    /// `true` where the switch is closed.
    pub switches: DMatrix<bool>,
}

/// Potentials and currents at all terminals of an array.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossbarTerminals {
    /// Column potentials `P` (driven).
    pub col_potentials: DVector<f64>,
    /// Currents into the column terminals `J`.
    pub col_currents: DVector<f64>,
    /// Row potentials `Pbar`, grounded.
    pub row_potentials: DVector<f64>,
    /// Currents out of the row terminals `Jbar`.
    pub row_currents: DVector<f64>,
}

impl CrossbarState {
    /// Zero flux, all switches closed.
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Self {
            phi: DMatrix::zeros(n_rows, n_cols),
            switches: DMatrix::from_element(n_rows, n_cols, true),
        }
    }

    pub fn with_flux(phi: DMatrix<f64>) -> Self {
        let switches = DMatrix::from_element(phi.nrows(), phi.ncols(), true);
        Self { phi, switches }
    }

    pub fn n_rows(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.phi.ncols()
    }

    pub fn set_switches(&mut self, switches: DMatrix<bool>) -> Result<()> {
        if switches.shape() != self.phi.shape() {
            return Err(Error::InvalidParameter(format!(
                "switch matrix is {}x{}, array is {}x{}",
                switches.nrows(),
                switches.ncols(),
                self.n_rows(),
                self.n_cols()
            )));
        }
        self.switches = switches;
        Ok(())
    }

    fn check_input(&self, p: &DVector<f64>) -> Result<()> {
        if p.len() != self.n_cols() {
            return Err(Error::dim("column potentials", self.n_cols(), p.len()));
        }
        Ok(())
    }

    /// Time derivative of the fluxes, `S . (1 P^T)`.
    pub fn flux_rhs(&self, p: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_input(p)?;
        Ok(DMatrix::from_fn(self.n_rows(), self.n_cols(), |k, j| {
            if self.switches[(k, j)] {
                p[j]
            } else {
                0.0
            }
        }))
    }

    /// Row currents `Jbar = (W(phi) . S) P`.
    pub fn row_currents(&self, device: &DeviceModel, p: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(p)?;
        let mut out = DVector::zeros(self.n_rows());
        row_current_kernel(&self.phi, &self.switches, device, p.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// All terminal quantities for column potentials `p`, grounded rows.
    pub fn terminal_currents(&self, device: &DeviceModel, p: &DVector<f64>) -> Result<CrossbarTerminals> {
        self.check_input(p)?;
        let (n, m) = (self.n_rows(), self.n_cols());
        let mut col_currents = DVector::zeros(m);
        let mut row_currents = DVector::zeros(n);
        for j in 0..m {
            for k in 0..n {
                if self.switches[(k, j)] {
                    let i_kj = device.memductance(self.phi[(k, j)]) * p[j];
                    col_currents[j] += i_kj;
                    row_currents[k] += i_kj;
                }
            }
        }
        Ok(CrossbarTerminals {
            col_potentials: p.clone(),
            col_currents,
            row_potentials: DVector::zeros(n),
            row_currents,
        })
    }

    /// Memductance matrix `W(phi)`, ignoring switches.
    pub fn memductances(&self, device: &DeviceModel) -> DMatrix<f64> {
        self.phi.map(|x| device.memductance(x))
    }
}

/// Unchecked `out = (W(phi) . S) p`, shared with the circuit integrator.
/// Open crossings are skipped so their memductance is never evaluated.
pub(crate) fn row_current_kernel(
    phi: &DMatrix<f64>,
    switches: &DMatrix<bool>,
    device: &DeviceModel,
    p: &[f64],
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (j, &pj) in p.iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        let col_phi = phi.column(j);
        let col_s = switches.column(j);
        for (k, acc) in out.iter_mut().enumerate() {
            if col_s[k] {
                *acc += device.memductance(col_phi[k]) * pj;
            }
        }
    }
}
