use nalgebra::DMatrix;
use serde::Serialize;

use crate::circuit::{CircuitState, Mode};
use crate::{Error, Result};

/// Index sequence `(g_0, ..., g_l)` selecting one current path from source
/// `g_0` to row `g_l` of layer `l`. Indices are 0-based physical rows; in
/// differential mode the last index may address a negative row `k + n_l`
/// while intermediate indices address neurons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Path {
    indices: Vec<usize>,
}

impl Path {
    pub fn new(indices: Vec<usize>, circuit: &CircuitState) -> Result<Self> {
        let widths = circuit.widths();
        let l = indices.len().saturating_sub(1);
        if l == 0 || l > circuit.n_layers() {
            return Err(Error::InvalidPath(format!(
                "a path needs between 2 and {} indices, got {}",
                circuit.n_layers() + 1,
                indices.len()
            )));
        }
        for (kappa, &g) in indices.iter().enumerate() {
            let bound = if kappa == l {
                circuit.layer(l).n_rows()
            } else {
                widths[kappa]
            };
            if g >= bound {
                return Err(Error::InvalidPath(format!(
                    "index {g} at position {kappa} exceeds {}",
                    bound - 1
                )));
            }
        }
        Ok(Self { indices })
    }

    /// The default path to memristor `(row, col)` of layer `l`: every free
    /// index is 0.
    pub fn to_memristor(circuit: &CircuitState, l: usize, row: usize, col: usize) -> Result<Self> {
        let mut indices = vec![0; l + 1];
        if l >= 1 {
            indices[l - 1] = col;
            indices[l] = row;
        }
        Self::new(indices, circuit)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn target_layer(&self) -> usize {
        self.indices.len() - 1
    }

    pub fn row(&self) -> usize {
        self.indices[self.target_layer()]
    }

    pub fn col(&self) -> usize {
        self.indices[self.target_layer() - 1]
    }

    pub fn source(&self) -> usize {
        self.indices[0]
    }
}

/// Switch matrices for `path`: a single closed switch at `(g_k, g_(k-1))` in
/// every layer up to the target, every later layer fully open.
pub fn path_switches(path: &Path, circuit: &CircuitState) -> Vec<DMatrix<bool>> {
    let g = path.indices();
    circuit
        .layers
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut s = DMatrix::from_element(x.n_rows(), x.n_cols(), false);
            let kappa = i + 1;
            if kappa <= path.target_layer() {
                s[(g[kappa], g[kappa - 1])] = true;
            }
            s
        })
        .collect()
}

impl CircuitState {
    /// Applies [`path_switches`] to every layer.
    pub fn select_path(&mut self, path: &Path) {
        let switches = path_switches(path, self);
        for (x, s) in self.layers.iter_mut().zip(switches) {
            x.switches = s;
        }
    }

    /// Whether row `r` of layer `l` is a negative pair member.
    pub fn is_negative_row(&self, l: usize, r: usize) -> bool {
        self.mode() == Mode::Differential && r >= self.widths()[l]
    }
}
