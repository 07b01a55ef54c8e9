//! JSON circuit configuration.
//!
//! ```json
//! {
//!   "widths": [2, 3, 2],
//!   "device": "arctan",
//!   "activation": "tanh",
//!   "mode": "single",
//!   "initial_flux": 0.0,
//!   "weights": "academic_weights.json",
//!   "input": [-1.0, 1.0]
//! }
//! ```
//!
//! `device` may instead be a table `{ "table": "w.csv", "w_min": .., "w_max": ..,
//! "beta": .., "increasing": true }`. `activation` may carry an `eta` override
//! as `{ "name": "tanh", "eta": 1.0 }`. `initial_flux` is a scalar, explicit
//! per-layer matrices, or `"from_weights"`. Relative paths resolve against the
//! directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::circuit::{CircuitState, Mode};
use crate::ingest::load_weights;
use crate::{Activation, AnnSpec, DeviceModel, Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeviceConfig {
    Named(String),
    Table {
        table: PathBuf,
        w_min: f64,
        w_max: f64,
        beta: f64,
        #[serde(default = "yes")]
        increasing: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActivationConfig {
    Named(String),
    Detailed { name: String, eta: Option<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FluxConfig {
    Scalar(f64),
    Matrices(Vec<Vec<Vec<f64>>>),
    Keyword(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitConfig {
    #[serde(default)]
    pub widths: Option<Vec<usize>>,
    #[serde(default = "default_device")]
    pub device: DeviceConfig,
    #[serde(default = "default_activation")]
    pub activation: ActivationConfig,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_flux")]
    pub initial_flux: FluxConfig,
    /// Per-layer 0/1 matrices; all closed when absent.
    #[serde(default)]
    pub switches: Option<Vec<Vec<Vec<u8>>>>,
    /// Network weights: source of `"from_weights"` fluxes and of write targets.
    #[serde(default)]
    pub weights: Option<PathBuf>,
    #[serde(default)]
    pub input: Option<Vec<f64>>,
    #[serde(default)]
    pub images: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Factor applied to raw pixel bytes before encoding.
    #[serde(default = "default_pixel_scale")]
    pub pixel_scale: f64,
    #[serde(skip)]
    base_dir: PathBuf,
    #[serde(skip)]
    hash: String,
}

fn default_device() -> DeviceConfig {
    DeviceConfig::Named("arctan".into())
}

fn default_activation() -> ActivationConfig {
    ActivationConfig::Named("tanh".into())
}

fn default_mode() -> Mode {
    Mode::Single
}

fn default_flux() -> FluxConfig {
    FluxConfig::Scalar(0.0)
}

fn default_pixel_scale() -> f64 {
    1.0 / 255.0
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl CircuitConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text)?;
        cfg.base_dir = base_dir;
        cfg.hash = sha256_hex(text.as_bytes());
        Ok(cfg)
    }

    /// SHA-256 of the config text.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn device_model(&self) -> Result<DeviceModel> {
        match &self.device {
            DeviceConfig::Named(n) if n == "arctan" => Ok(DeviceModel::arctan()),
            DeviceConfig::Named(n) => Err(Error::Config(format!("unknown device '{n}'"))),
            DeviceConfig::Table {
                table,
                w_min,
                w_max,
                beta,
                increasing,
            } => DeviceModel::from_csv(&self.resolve(table), *w_min, *w_max, *beta, *increasing),
        }
    }

    pub fn activation_fn(&self) -> Result<Activation> {
        match &self.activation {
            ActivationConfig::Named(n) => Activation::by_name(n),
            ActivationConfig::Detailed { name, eta } => {
                let a = Activation::by_name(name)?;
                Ok(match eta {
                    Some(e) => a.with_eta(*e),
                    None => a,
                })
            }
        }
    }

    pub fn weights_spec(&self) -> Result<Option<AnnSpec>> {
        self.weights
            .as_ref()
            .map(|p| load_weights(self.resolve(p), self.activation_fn()?))
            .transpose()
    }

    pub fn input_vector(&self) -> Option<DVector<f64>> {
        self.input.as_ref().map(|v| DVector::from_column_slice(v))
    }

    /// Layer widths, from the config or else from the weights file.
    pub fn layer_widths(&self) -> Result<Vec<usize>> {
        let from_weights = self.weights_spec()?.map(|s| s.widths());
        match (&self.widths, from_weights) {
            (Some(w), Some(f)) if *w != f => Err(Error::Config(format!(
                "widths {w:?} disagree with the weights file {f:?}"
            ))),
            (Some(w), _) => Ok(w.clone()),
            (None, Some(f)) => Ok(f),
            (None, None) => Err(Error::Config("need either widths or a weights file".into())),
        }
    }

    pub fn build_circuit(&self) -> Result<CircuitState> {
        let device = self.device_model()?;
        let activation = self.activation_fn()?;
        let widths = self.layer_widths()?;
        let mut c = match &self.initial_flux {
            FluxConfig::Keyword(k) if k == "from_weights" => {
                let spec = self
                    .weights_spec()?
                    .ok_or_else(|| Error::Config("\"from_weights\" needs a weights file".into()))?;
                CircuitState::from_weights(&spec, device, self.mode)?
            }
            FluxConfig::Keyword(k) => return Err(Error::Config(format!("unknown initial_flux '{k}'"))),
            FluxConfig::Scalar(v) => {
                let mut c = CircuitState::new(&widths, device, activation, self.mode)?;
                for x in &mut c.layers {
                    x.phi.fill(*v);
                }
                c
            }
            FluxConfig::Matrices(ms) => {
                let mut c = CircuitState::new(&widths, device, activation, self.mode)?;
                if ms.len() != c.n_layers() {
                    return Err(Error::dim("initial_flux layers", c.n_layers(), ms.len()));
                }
                for (l, rows) in ms.iter().enumerate() {
                    c.set_flux(l + 1, nested_matrix(rows, "initial_flux")?)?;
                }
                c
            }
        };
        if let Some(sw) = &self.switches {
            if sw.len() != c.n_layers() {
                return Err(Error::dim("switch layers", c.n_layers(), sw.len()));
            }
            let mut all = Vec::new();
            for rows in sw {
                let m = nested_matrix(rows, "switches")?;
                if m.iter().any(|&v| v > 1) {
                    return Err(Error::Config("switch entries must be 0 or 1".into()));
                }
                all.push(m.map(|v| v == 1));
            }
            c.set_inference_switches(all)?;
            c.restore_inference_switches();
        }
        Ok(c)
    }
}

fn nested_matrix<T: Copy + nalgebra::Scalar>(rows: &[Vec<T>], what: &str) -> Result<DMatrix<T>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Config(format!("{what}: ragged or empty matrix")));
    }
    Ok(DMatrix::from_fn(n, m, |k, j| rows[k][j]))
}
