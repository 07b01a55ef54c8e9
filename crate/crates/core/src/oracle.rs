//! Reference computations that share no code path with the circuit
//! integrator: the software network, an adaptive integrator for a single
//! isolated current path, and the closed-form first-layer write iteration.

use nalgebra::{DMatrix, DVector};

use crate::activation::Activation;
use crate::device::DeviceModel;
use crate::{Error, Result};

/// Weight matrices `M^1 .. M^L` of a feedforward network without biases.
#[derive(Debug, Clone)]
pub struct AnnSpec {
    pub weights: Vec<DMatrix<f64>>,
    pub activation: Activation,
}

impl AnnSpec {
    pub fn new(weights: Vec<DMatrix<f64>>, activation: Activation) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("network needs at least one layer".into()));
        }
        for (l, w) in weights.iter().enumerate() {
            if w.nrows() == 0 || w.ncols() == 0 {
                return Err(Error::dim(format!("layer {} weights", l + 1), 1, 0));
            }
            if l > 0 && w.ncols() != weights[l - 1].nrows() {
                return Err(Error::dim(
                    format!("layer {} columns", l + 1),
                    weights[l - 1].nrows(),
                    w.ncols(),
                ));
            }
        }
        Ok(Self { weights, activation })
    }

    /// Layer widths `(n_0, ..., n_L)`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.weights[0].ncols()];
        w.extend(self.weights.iter().map(|m| m.nrows()));
        w
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// `a^0 = u`, `a^l = sigma(M^l a^(l-1))`, returns `a^L`.
    pub fn forward(&self, u_hat: &DVector<f64>) -> Result<DVector<f64>> {
        ann_forward(self, u_hat)
    }
}

pub fn ann_forward(spec: &AnnSpec, u_hat: &DVector<f64>) -> Result<DVector<f64>> {
    if u_hat.len() != spec.weights[0].ncols() {
        return Err(Error::dim("network input", spec.weights[0].ncols(), u_hat.len()));
    }
    let mut a = u_hat.clone();
    for m in &spec.weights {
        a = spec.activation.apply_vec(&(m * a));
    }
    Ok(a)
}

/// Right-hand side of the isolated path: `f^1 = P0`,
/// `f^(k+1) = sigma(W(phi^k) f^k)`.
fn chain_rhs(device: &DeviceModel, act: &Activation, p0: f64, phi: &[f64], out: &mut [f64]) {
    let mut f = p0;
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = f;
        f = act.apply(device.memductance(phi[k]) * f);
    }
}

/// Integrates the path fluxes `phi^1..phi^l` under a constant source `p0` for
/// `duration` seconds with an adaptive Dormand-Prince 5(4) pair.
pub fn chain_integrate_reference(
    device: &DeviceModel,
    act: &Activation,
    phi0: &[f64],
    p0: f64,
    duration: f64,
) -> Vec<f64> {
    chain_integrate_with_tolerance(device, act, phi0, p0, duration, 1e-12)
}

pub fn chain_integrate_with_tolerance(
    device: &DeviceModel,
    act: &Activation,
    phi0: &[f64],
    p0: f64,
    duration: f64,
    tol: f64,
) -> Vec<f64> {
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let _ = C; // autonomous system: stage times are not needed

    let n = phi0.len();
    let mut y = phi0.to_vec();
    if duration <= 0.0 || p0 == 0.0 || n == 0 {
        return y;
    }
    let mut t = 0.0;
    let mut h = (duration / 100.0).min(1e-2);
    let mut k = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    while t < duration {
        if t + h > duration {
            h = duration - t;
        }
        chain_rhs(device, act, p0, &y, &mut k[0]);
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (r, a) in A[s].iter().enumerate().take(s) {
                    acc += h * a * k[r][i];
                }
                stage[i] = acc;
            }
            let (done, rest) = k.split_at_mut(s);
            let _ = done;
            chain_rhs(device, act, p0, &stage, &mut rest[0]);
        }
        let mut err: f64 = 0.0;
        let mut y5 = vec![0.0; n];
        for i in 0..n {
            let mut hi = y[i];
            let mut lo = y[i];
            for s in 0..7 {
                hi += h * B5[s] * k[s][i];
                lo += h * B4[s] * k[s][i];
            }
            y5[i] = hi;
            let scale = tol + tol * y[i].abs().max(hi.abs());
            err = err.max((hi - lo).abs() / scale);
        }
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-14 * duration {
            h = 1e-14 * duration;
        }
    }
    y
}

/// First-layer write: probe `phi_1 = phi_0 + T x0`, then
/// `phi_(i+1) = phi_i + T alpha (W_target - W(phi_i))` until within `eps`.
/// Returns every iterate including `phi_0`.
#[allow(clippy::too_many_arguments)]
pub fn write_fixed_point(
    device: &DeviceModel,
    w_target: f64,
    phi0: f64,
    alpha: f64,
    period: f64,
    eps: f64,
    x0: f64,
    max_iterations: usize,
) -> Result<Vec<f64>> {
    if alpha * period > 1.0 / device.beta * (1.0 + 1e-12) {
        return Err(Error::GainCondition {
            product: alpha * period,
            bound: 1.0 / device.beta,
            layer: 1,
        });
    }
    let mut iterates = vec![phi0, phi0 + period * x0];
    loop {
        let phi = *iterates.last().unwrap();
        let err = w_target - device.memductance(phi);
        if err.abs() <= eps {
            return Ok(iterates);
        }
        if iterates.len() - 2 >= max_iterations {
            return Err(Error::Convergence {
                layer: 1,
                row: 0,
                col: 0,
                iterations: max_iterations,
                error: err.abs(),
            });
        }
        iterates.push(phi + period * alpha * err);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn academic() -> AnnSpec {
        AnnSpec::new(
            vec![
                DMatrix::from_row_slice(3, 2, &[1.0, 7.0, 5.0, 5.0, 7.0, 1.0]) * 0.5,
                DMatrix::from_row_slice(2, 3, &[1.0, 3.0, 7.0, 7.0, 2.0, 1.0]) * 0.5,
            ],
            Activation::tanh(),
        )
        .unwrap()
    }

    #[test]
    fn academic_forward_pass() {
        let y = academic().forward(&DVector::from_vec(vec![-1.0, 1.0])).unwrap();
        // hand-evaluated: M1 u = (3, 0, -3), so y = tanh(-+3 tanh(3))
        let t3 = 3f64.tanh();
        let expected = (3.0 * t3).tanh();
        assert!((y[0] + expected).abs() < 1e-15);
        assert!((y[1] - expected).abs() < 1e-15);
        assert!((y[0] + 0.9949062).abs() < 1e-7);
        // the reference value is (-0.99380, 0.99373)
        assert!((y[0] + 0.99380).abs() < 2e-3 && (y[1] - 0.99373).abs() < 2e-3);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let y = academic().forward(&DVector::zeros(2)).unwrap();
        assert_eq!(y, DVector::zeros(2));
    }

    #[test]
    fn scalar_identity_chain() {
        let spec = AnnSpec::new(vec![DMatrix::from_element(1, 1, 1.0)], Activation::tanh()).unwrap();
        let y = spec.forward(&DVector::from_vec(vec![0.4])).unwrap();
        assert_eq!(y[0], 0.4f64.tanh());
    }

    #[test]
    fn spec_validation() {
        assert!(AnnSpec::new(vec![], Activation::tanh()).is_err());
        assert!(AnnSpec::new(
            vec![DMatrix::zeros(3, 2), DMatrix::zeros(2, 2)],
            Activation::tanh()
        )
        .is_err());
        assert!(AnnSpec::new(vec![DMatrix::zeros(0, 2)], Activation::tanh()).is_err());
        assert!(academic().forward(&DVector::zeros(3)).is_err());
        assert_eq!(academic().widths(), vec![2, 3, 2]);
    }

    #[test]
    fn reference_chain_first_layer_is_linear() {
        let d = DeviceModel::arctan();
        let a = Activation::tanh();
        let y = chain_integrate_reference(&d, &a, &[0.3], -0.7, 2.0);
        assert!((y[0] - (0.3 - 1.4)).abs() < 1e-13);
        let z = chain_integrate_reference(&d, &a, &[0.3, -1.0, 2.0], 0.0, 5.0);
        assert_eq!(z, vec![0.3, -1.0, 2.0]);
    }

    #[test]
    fn reference_chain_two_layers_matches_quadrature() {
        // phi1(s) = s, so phi2(1) = int_0^1 tanh(2 + atan(s)) ds; Simpson on a fine grid
        let d = DeviceModel::arctan();
        let a = Activation::tanh();
        let y = chain_integrate_reference(&d, &a, &[0.0, 0.0], 1.0, 1.0);
        let n = 2000;
        let h = 1.0 / n as f64;
        let f = |s: f64| (2.0 + s.atan()).tanh();
        let mut acc = f(0.0) + f(1.0);
        for i in 1..n {
            acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let simpson = acc * h / 3.0;
        assert!((y[0] - 1.0).abs() < 1e-12);
        assert!((y[1] - simpson).abs() < 1e-12, "{} vs {}", y[1], simpson);
    }

    #[test]
    fn reference_chain_is_converged() {
        let d = DeviceModel::arctan();
        let a = Activation::tanh();
        let phi0 = [0.4, -1.2, 0.9];
        let coarse = chain_integrate_with_tolerance(&d, &a, &phi0, 0.8, 1.5, 1e-12);
        let fine = chain_integrate_with_tolerance(&d, &a, &phi0, 0.8, 1.5, 5e-13);
        for (c, f) in coarse.iter().zip(&fine) {
            assert!((c - f).abs() < 1e-10);
        }
    }

    #[test]
    fn fixed_point_already_on_target_only_probes() {
        let d = DeviceModel::arctan();
        // probe moves phi from 0 to 0.01, W changes by ~0.01 < eps
        let it = write_fixed_point(&d, 2.0, 0.0, 0.25, 1.0, 0.05, 0.01, 100).unwrap();
        assert_eq!(it, vec![0.0, 0.01]);
    }

    #[test]
    fn fixed_point_contracts_monotonically() {
        let d = DeviceModel::arctan();
        let it = write_fixed_point(&d, 2.5, 0.0, 0.25, 1.0, 1e-3, 1.0, 10_000).unwrap();
        let errs: Vec<f64> = it.iter().map(|&p| (2.5 - d.memductance(p)).abs()).collect();
        assert!(*errs.last().unwrap() <= 1e-3);
        for w in errs[1..].windows(2) {
            assert!(w[1] < w[0]);
            // contraction 1 - alpha T W'(xi) with 0 < W' <= 1
            assert!(w[1] / w[0] <= 1.0 - 1e-6);
        }
    }

    #[test]
    fn fixed_point_rejects_large_gain() {
        let d = DeviceModel::arctan();
        assert!(matches!(
            write_fixed_point(&d, 2.5, 0.0, 2.0, 1.0, 1e-3, 1.0, 10),
            Err(Error::GainCondition { .. })
        ));
    }

    #[test]
    fn fixed_point_cap() {
        let d = DeviceModel::arctan();
        assert!(matches!(
            write_fixed_point(&d, 3.5, 0.0, 1e-6, 1.0, 1e-9, 1.0, 5),
            Err(Error::Convergence { .. })
        ));
    }
}
