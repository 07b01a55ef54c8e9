//! Flux-controlled memristor models.
//!
//! A device is described by its charge-flux curve `q = g(phi)` and its
//! memductance `W(phi) = g'(phi)`, together with the declared constants the
//! protocols rely on: positive bounds `w_min <= W <= w_max`, a Lipschitz
//! constant `beta` for `W`, and the direction in which `W` is monotone.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use crate::validation::{sample_points, Property, ValidationReport, ViolationLog};
use crate::{Error, Result};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Curve {
    /// `g(x) = 2x - log(x^2 + 1)/2 + x atan(x)`, `W(x) = 2 + atan(x)`.
    Arctan,
    Tabulated(Table),
    Custom { charge: ScalarFn, memductance: ScalarFn },
}

/// Piecewise linear memductance table; the charge is its exact integral.
#[derive(Debug, Clone)]
struct Table {
    phi: Vec<f64>,
    w: Vec<f64>,
    /// Integral of W from `phi[0]` to `phi[i]`.
    cumulative: Vec<f64>,
}

impl Table {
    fn new(phi: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if phi.len() < 2 || phi.len() != w.len() {
            return Err(Error::Config(format!(
                "memductance table needs at least two (phi, W) rows of equal length, got {} and {}",
                phi.len(),
                w.len()
            )));
        }
        if phi.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Config(
                "memductance table phi column must be strictly increasing".into(),
            ));
        }
        if phi.iter().chain(&w).any(|v| !v.is_finite()) {
            return Err(Error::Config("memductance table has non-finite entries".into()));
        }
        let mut cumulative = Vec::with_capacity(phi.len());
        cumulative.push(0.0);
        for i in 1..phi.len() {
            let area = 0.5 * (w[i] + w[i - 1]) * (phi[i] - phi[i - 1]);
            cumulative.push(cumulative[i - 1] + area);
        }
        Ok(Self { phi, w, cumulative })
    }

    /// Index `i` with `phi[i] <= x < phi[i + 1]`, clamped to the table.
    fn segment(&self, x: f64) -> usize {
        let upper = self.phi.partition_point(|&p| p <= x);
        upper.saturating_sub(1).min(self.phi.len() - 2)
    }

    fn memductance(&self, x: f64) -> f64 {
        let last = self.phi.len() - 1;
        if x <= self.phi[0] {
            return self.w[0];
        }
        if x >= self.phi[last] {
            return self.w[last];
        }
        let i = self.segment(x);
        let s = (x - self.phi[i]) / (self.phi[i + 1] - self.phi[i]);
        self.w[i] + s * (self.w[i + 1] - self.w[i])
    }

    fn charge(&self, x: f64) -> f64 {
        let last = self.phi.len() - 1;
        if x <= self.phi[0] {
            return self.w[0] * (x - self.phi[0]);
        }
        if x >= self.phi[last] {
            return self.cumulative[last] + self.w[last] * (x - self.phi[last]);
        }
        let i = self.segment(x);
        let dx = x - self.phi[i];
        let slope = (self.w[i + 1] - self.w[i]) / (self.phi[i + 1] - self.phi[i]);
        self.cumulative[i] + self.w[i] * dx + 0.5 * slope * dx * dx
    }
}

/// A memristor model with its declared constants.
#[derive(Clone)]
pub struct DeviceModel {
    curve: Curve,
    name: String,
    pub w_min: f64,
    pub w_max: f64,
    pub beta: f64,
    pub increasing: bool,
}

impl fmt::Debug for DeviceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeviceModel")
            .field("name", &self.name)
            .field("w_min", &self.w_min)
            .field("w_max", &self.w_max)
            .field("beta", &self.beta)
            .field("increasing", &self.increasing)
            .finish()
    }
}

#[derive(Deserialize)]
struct TableRow {
    phi: f64,
    #[serde(rename = "W")]
    w: f64,
}

impl DeviceModel {
    /// The arctan device: `W(phi) = 2 + atan(phi)`, bounds `2 -+ pi/2`, `beta = 1`.
    pub fn arctan() -> Self {
        Self {
            curve: Curve::Arctan,
            name: "arctan".into(),
            w_min: 2.0 - FRAC_PI_2,
            w_max: 2.0 + FRAC_PI_2,
            beta: 1.0,
            increasing: true,
        }
    }

    /// A device from user-supplied `g` and `W` with declared constants.
    pub fn custom<G, W>(
        name: &str,
        charge: G,
        memductance: W,
        w_min: f64,
        w_max: f64,
        beta: f64,
        increasing: bool,
    ) -> Self
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
        W: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            curve: Curve::Custom {
                charge: Arc::new(charge),
                memductance: Arc::new(memductance),
            },
            name: name.into(),
            w_min,
            w_max,
            beta,
            increasing,
        }
    }

    /// A device whose memductance is linearly interpolated from `(phi, W)` pairs
    /// and held constant outside the table.
    pub fn tabulated(
        phi: Vec<f64>,
        w: Vec<f64>,
        w_min: f64,
        w_max: f64,
        beta: f64,
        increasing: bool,
    ) -> Result<Self> {
        Ok(Self {
            curve: Curve::Tabulated(Table::new(phi, w)?),
            name: "tabulated".into(),
            w_min,
            w_max,
            beta,
            increasing,
        })
    }

    /// Reads a `phi,W` CSV table (with header) and wraps it as a device.
    pub fn from_csv(
        path: &Path,
        w_min: f64,
        w_max: f64,
        beta: f64,
        increasing: bool,
    ) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut phi = Vec::new();
        let mut w = Vec::new();
        for row in reader.deserialize() {
            let row: TableRow = row?;
            phi.push(row.phi);
            w.push(row.w);
        }
        Self::tabulated(phi, w, w_min, w_max, beta, increasing)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Memductance `W(phi)` in siemens.
    pub fn memductance(&self, phi: f64) -> f64 {
        match &self.curve {
            Curve::Arctan => 2.0 + phi.atan(),
            Curve::Tabulated(t) => t.memductance(phi),
            Curve::Custom { memductance, .. } => memductance(phi),
        }
    }

    /// Charge `g(phi)` in coulomb.
    pub fn charge(&self, phi: f64) -> f64 {
        match &self.curve {
            Curve::Arctan => 2.0 * phi - 0.5 * (phi * phi + 1.0).ln() + phi * phi.atan(),
            Curve::Tabulated(t) => t.charge(phi),
            Curve::Custom { charge, .. } => charge(phi),
        }
    }

    /// Whether `w` lies strictly inside `(w_min, w_max)`.
    pub fn is_realizable(&self, w: f64) -> bool {
        w > self.w_min && w < self.w_max
    }

    /// Flux at which the memductance equals `w`.
    ///
    /// Closed form for the arctan device, bisection on the monotone `W`
    /// otherwise (flux tolerance 1e-12).
    pub fn flux_for(&self, w: f64) -> Result<f64> {
        if !self.is_realizable(w) {
            return Err(Error::Unrealizable {
                value: w,
                range: format!("({}, {})", self.w_min, self.w_max),
            });
        }
        if let Curve::Arctan = self.curve {
            return Ok((w - 2.0).tan());
        }
        let sign = if self.increasing { 1.0 } else { -1.0 };
        // residual is increasing in phi after the sign flip
        let residual = |x: f64| sign * (self.memductance(x) - w);
        let mut lo = -1.0;
        let mut hi = 1.0;
        while residual(lo) > 0.0 {
            lo *= 2.0;
            if lo < -1e12 {
                return Err(Error::Unrealizable {
                    value: w,
                    range: "no bracketing flux found".into(),
                });
            }
        }
        while residual(hi) < 0.0 {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::Unrealizable {
                    value: w,
                    range: "no bracketing flux found".into(),
                });
            }
        }
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= 1e-12 * mid.abs().max(1.0) {
                break;
            }
            if residual(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn derivative_slack(&self, h: f64) -> f64 {
        match self.curve {
            // kinks of the interpolant
            Curve::Tabulated(_) => self.beta * h,
            _ => 0.0,
        }
    }
}

/// Samples `model` on `[lo, hi]` and reports violated device assumptions.
pub fn validate_device(model: &DeviceModel, range: (f64, f64), n_samples: usize) -> Result<ValidationReport> {
    let (lo, hi) = range;
    let xs = sample_points(lo, hi, n_samples)?;
    let ws: Vec<f64> = xs.iter().map(|&x| model.memductance(x)).collect();
    let mut log = ViolationLog::default();
    let rel = 1e-12;

    for (&x, &w) in xs.iter().zip(&ws) {
        if !(w > 0.0) {
            log.record(Property::Positivity, x, -w);
        }
        if w < model.w_min - rel * model.w_min.abs() {
            log.record(Property::Bounds, x, model.w_min - w);
        } else if w > model.w_max + rel * model.w_max.abs() {
            log.record(Property::Bounds, x, w - model.w_max);
        }
    }

    // Adjacent pairs suffice on a sorted grid: both properties chain through
    // the triangle inequality.
    let sign = if model.increasing { 1.0 } else { -1.0 };
    for i in 1..xs.len() {
        let dx = xs[i] - xs[i - 1];
        let dw = ws[i] - ws[i - 1];
        let slope = dw.abs() / dx;
        if slope > model.beta * (1.0 + 1e-9) + 1e-12 {
            log.record(Property::Lipschitz, 0.5 * (xs[i] + xs[i - 1]), slope - model.beta);
        }
        let directed = sign * dw;
        let resolvable = dx > 1e-9 * (1.0 + xs[i].abs());
        if directed < 0.0 || (directed == 0.0 && resolvable) {
            log.record(Property::Monotonicity, xs[i - 1], -directed);
        }
    }

    let h = 1e-4 * ((hi - lo) / 20.0).max(1.0);
    for (&x, &w) in xs.iter().zip(&ws) {
        let fd = (model.charge(x + h) - model.charge(x - h)) / (2.0 * h);
        let err = (fd - w).abs();
        if err > 1e-6 + model.derivative_slack(h) {
            log.record(Property::Derivative, x, err);
        }
    }

    Ok(log.finish(xs.len(), range))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn arctan_memductance_values() {
        let d = DeviceModel::arctan();
        assert_eq!(d.memductance(0.0), 2.0);
        assert!((d.memductance(1f64.tan()) - 3.0).abs() < 1e-15);
        let far = d.memductance(1e12);
        assert!(far < 2.0 + PI / 2.0 && far > 3.5707);
    }

    #[test]
    fn arctan_charge_values() {
        let d = DeviceModel::arctan();
        assert_eq!(d.charge(0.0), 0.0);
        let expected_pos = 2.0 - 0.5 * 2f64.ln() + PI / 4.0;
        // (-1) * atan(-1) = +pi/4, so g is not odd
        let expected_neg = -2.0 - 0.5 * 2f64.ln() + PI / 4.0;
        assert!((d.charge(1.0) - expected_pos).abs() < 1e-14);
        assert!((d.charge(-1.0) - expected_neg).abs() < 1e-14);
        assert!((d.charge(1.0) - 2.4388245731).abs() < 1e-9);
        assert!((d.charge(-1.0) + 1.5611754269).abs() < 1e-9);
    }

    #[test]
    fn arctan_device_validates_clean() {
        let r = validate_device(&DeviceModel::arctan(), (-10.0, 10.0), 1000).unwrap();
        assert!(r.is_clean(), "{}", r.summary());
        assert_eq!(r.summary(), format!("no violation found on {} samples", r.n_samples));
    }

    #[test]
    fn identity_memductance_fails_positivity() {
        let d = DeviceModel::custom("linear", |x| 0.5 * x * x, |x| x, 0.1, 1.0, 1.0, true);
        let r = validate_device(&d, (-1.0, 1.0), 200).unwrap();
        assert!(r.has(Property::Positivity));
    }

    #[test]
    fn steep_arctan_fails_lipschitz_near_origin() {
        let d = DeviceModel::custom(
            "steep",
            |x: f64| 2.0 * x - (x * x + 1.0).ln() + 2.0 * x * x.atan(),
            |x: f64| 2.0 + 2.0 * x.atan(),
            2.0 - PI,
            2.0 + PI,
            1.0,
            true,
        );
        let r = validate_device(&d, (-5.0, 5.0), 500).unwrap();
        let v = r.get(Property::Lipschitz).expect("lipschitz violation");
        assert!(v.worst_at.abs() < 0.1, "worst at {}", v.worst_at);
        // W(x) = 2 + 2 atan(x) dips below zero past tan(-1)
        assert!(r.has(Property::Positivity));
    }

    #[test]
    fn wrong_declared_direction_is_reported() {
        let mut d = DeviceModel::arctan();
        d.increasing = false;
        let r = validate_device(&d, (-1.0, 1.0), 50).unwrap();
        assert!(r.has(Property::Monotonicity));
    }

    #[test]
    fn mismatched_charge_fails_derivative_check() {
        let d = DeviceModel::custom("bad", |x| 3.0 * x, |x: f64| 2.0 + x.atan(), 0.4, 3.6, 1.0, true);
        let r = validate_device(&d, (-2.0, 2.0), 100).unwrap();
        assert!(r.has(Property::Derivative));
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(validate_device(&DeviceModel::arctan(), (-1.0, 1.0), 1).is_err());
    }

    #[test]
    fn flux_for_inverts_arctan_and_rejects_out_of_range() {
        let d = DeviceModel::arctan();
        for w in [0.5, 2.0, 3.45] {
            let phi = d.flux_for(w).unwrap();
            assert!((d.memductance(phi) - w).abs() < 1e-12);
        }
        assert!(matches!(d.flux_for(4.0), Err(Error::Unrealizable { .. })));
        assert!(d.flux_for(2.0 - PI / 2.0).is_err());
    }

    #[test]
    fn bisection_inverse_matches_closed_form() {
        let arctan = DeviceModel::arctan();
        let generic = DeviceModel::custom(
            "arctan-copy",
            move |x| arctan.charge(x),
            |x: f64| 2.0 + x.atan(),
            2.0 - PI / 2.0,
            2.0 + PI / 2.0,
            1.0,
            true,
        );
        for w in [0.6, 1.5, 2.0, 2.7, 3.4] {
            let closed = (w - 2.0f64).tan();
            let bisected = generic.flux_for(w).unwrap();
            assert!((closed - bisected).abs() < 1e-10 * closed.abs().max(1.0), "{w}");
        }
    }

    #[test]
    fn tabulated_device_interpolates_and_integrates() {
        let d = DeviceModel::tabulated(vec![-1.0, 0.0, 1.0], vec![1.0, 2.0, 2.5], 1.0, 2.5, 1.0, true)
            .unwrap();
        assert_eq!(d.memductance(-0.5), 1.5);
        assert_eq!(d.memductance(0.5), 2.25);
        assert_eq!(d.memductance(-7.0), 1.0);
        assert_eq!(d.memductance(9.0), 2.5);
        // integral from -1 to 0 of (2 + x) dx = 1.5
        assert!((d.charge(0.0) - 1.5).abs() < 1e-15);
        let r = validate_device(&d, (-1.0, 1.0), 101).unwrap();
        // held constant outside the table, but the sampled range is inside it
        assert!(r.is_clean(), "{}", r.summary());
        let phi = d.flux_for(2.25).unwrap();
        assert!((phi - 0.5).abs() < 1e-10);
    }

    #[test]
    fn tabulated_rejects_unsorted_rows() {
        assert!(DeviceModel::tabulated(vec![0.0, 0.0], vec![1.0, 2.0], 1.0, 2.0, 1.0, true).is_err());
        assert!(DeviceModel::tabulated(vec![0.0], vec![1.0], 1.0, 2.0, 1.0, true).is_err());
    }

    #[test]
    fn csv_table_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        std::fs::write(&path, "phi,W\n-1,1.0\n0,2.0\n1,2.5\n").unwrap();
        let d = DeviceModel::from_csv(&path, 1.0, 2.5, 1.0, true).unwrap();
        assert_eq!(d.memductance(0.0), 2.0);
    }
}
