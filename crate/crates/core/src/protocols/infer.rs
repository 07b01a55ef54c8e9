use nalgebra::DVector;

use crate::circuit::{CircuitState, Trace};
use crate::signals::{decode, encode};
use crate::Result;

/// Outcome of one inference run.
#[derive(Debug, Clone)]
pub struct Inference {
    pub y_hat: DVector<f64>,
    pub trace: Trace,
    /// Largest `|phi(T) - phi(0)|` over all memristors.
    pub max_flux_deviation: f64,
}

/// Evaluates the implemented network at `u_hat` with the block pulse of
/// half-width `tau` and reads the output at `t = 2 tau`.
pub fn infer(c: &mut CircuitState, u_hat: &DVector<f64>, tau: f64, step: Option<f64>) -> Result<Inference> {
    infer_with_trace(c, u_hat, tau, step, Trace::new())
}

/// As [`infer`], recording into a caller-configured trace.
pub fn infer_with_trace(
    c: &mut CircuitState,
    u_hat: &DVector<f64>,
    tau: f64,
    step: Option<f64>,
    mut trace: Trace,
) -> Result<Inference> {
    c.restore_inference_switches();
    let before = c.fluxes();
    let signal = encode(u_hat, tau)?;
    c.integrate(&signal, step, &mut trace)?;
    let y_hat = decode(&trace, tau)?;
    Ok(Inference {
        y_hat,
        max_flux_deviation: c.max_flux_deviation(&before),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::Mode;
    use crate::{Activation, AnnSpec, DeviceModel};
    use nalgebra::DMatrix;

    #[test]
    fn zero_input_is_exactly_inert() {
        let mut c = CircuitState::new(&[2, 3, 2], DeviceModel::arctan(), Activation::tanh(), Mode::Single).unwrap();
        c.layers[0].phi[(1, 1)] = 0.7;
        let before = c.fluxes();
        let r = infer(&mut c, &DVector::zeros(2), 1.0, None).unwrap();
        assert_eq!(r.y_hat, DVector::zeros(2));
        assert_eq!(c.fluxes(), before);
        assert_eq!(r.max_flux_deviation, 0.0);
    }

    #[test]
    fn one_memristor_reads_tanh_two() {
        let mut c = CircuitState::new(&[1, 1], DeviceModel::arctan(), Activation::tanh(), Mode::Single).unwrap();
        let r = infer(&mut c, &DVector::from_vec(vec![1.0]), 3.0, None).unwrap();
        assert!((r.y_hat[0] - 2f64.tanh()).abs() < 1e-12);
        assert!(r.max_flux_deviation < 1e-12);
    }

    #[test]
    fn small_random_circuit_matches_software() {
        let d = DeviceModel::arctan();
        let mut c = CircuitState::new(&[2, 2], d.clone(), Activation::tanh(), Mode::Single).unwrap();
        c.set_flux(1, DMatrix::from_row_slice(2, 2, &[0.4, -1.3, 2.2, 0.1])).unwrap();
        let spec = AnnSpec::new(c.memductances(), Activation::tanh()).unwrap();
        let u = DVector::from_vec(vec![0.6, -0.9]);
        let r = infer(&mut c, &u, 5.0, None).unwrap();
        let reference = spec.forward(&u).unwrap();
        assert!((r.y_hat - reference).amax() < 1e-6);
        assert!(r.max_flux_deviation < 1e-6);
    }
}
