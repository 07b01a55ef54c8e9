//! Circuit protocols that act only through source voltages, switch settings
//! and terminal measurements: inference, reading and writing.

mod bounds;
mod infer;
mod path;
mod read;
mod write;

pub use bounds::{BoundKind, BoundViolation, PathBoundsMonitor};
pub use infer::{infer, infer_with_trace, Inference};
pub use path::{path_switches, Path};
pub use read::{read_all, read_one, read_one_with, ReadMeasurement, ReadOptions, ReadReport};
pub use write::{
    gain_bound, physical_targets, select_gain, select_uniform_gain, write_all, write_one, GainChoice, WriteEntry, WriteOptions,
    WriteReport,
};

use nalgebra::DMatrix;
use serde::Serializer;

/// Serializes a list of matrices as nested row-major arrays.
pub(crate) fn ser_matrices<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(ms.len()))?;
    for m in ms {
        seq.serialize_element(&matrix_rows(m))?;
    }
    seq.end()
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}
