//! Simulation of neural networks realised as interconnected memristive
//! crossbar arrays, with the inference, reading and writing protocols that
//! operate such a circuit through its terminals only.

pub mod activation;
pub mod circuit;
pub mod config;
pub mod crossbar;
pub mod device;
mod error;
pub mod evaluate;
pub mod ingest;
pub mod oracle;
pub mod protocols;
pub mod signals;
pub mod validation;

pub use activation::Activation;
pub use circuit::{CircuitState, Mode, Trace};
pub use device::DeviceModel;
pub use error::{Error, Result};
pub use oracle::AnnSpec;
