//! Runtime check of the path-rate properties along an isolated current path.
//!
//! With `f^1 = P^0` and `f^(k+1) = sigma(W(phi^k) f^k)`, the potential
//! `P^k` on the path equals `f^(k+1)`. Every sample is checked for
//! `sign(f^k) = sign(P^0)`, `|f^k| <= (eta W_max)^(k-1) |P^0|` and
//! `|f^(k+1)| >= sigma(W_min |f^k|)`.

use serde::Serialize;

use crate::circuit::{Observer, Sample};
use crate::protocols::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Sign,
    Growth,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundViolation {
    pub kind: BoundKind,
    pub time: f64,
    /// Index `k` of `f^k`.
    pub kappa: usize,
    pub value: f64,
    pub bound: f64,
}

/// Observer that checks the path-rate properties at every sample.
#[derive(Debug, Clone)]
pub struct PathBoundsMonitor {
    path: Path,
    checks: usize,
    violations: Vec<BoundViolation>,
}

const REL: f64 = 1e-12;

impl PathBoundsMonitor {
    pub fn new(path: Path) -> Self {
        Self {
            path,
            checks: 0,
            violations: Vec::new(),
        }
    }

    pub fn checks(&self) -> usize {
        self.checks
    }

    pub fn violations(&self) -> &[BoundViolation] {
        &self.violations
    }

    pub fn into_violations(self) -> Vec<BoundViolation> {
        self.violations
    }
}

impl Observer for PathBoundsMonitor {
    fn observe(&mut self, s: &Sample<'_>) {
        let g = self.path.indices();
        let l = self.path.target_layer();
        let c = s.circuit;
        let (eta, w_max, w_min) = (c.activation().eta, c.device().w_max, c.device().w_min);
        let act = c.activation();
        let p0 = s.potentials.potentials[0][g[0]];
        let mut prev = p0;
        for kappa in 1..=l {
            // f^kappa is the potential driving the path memristor of layer kappa
            let f = s.potentials.potentials[kappa - 1][g[kappa - 1]];
            self.checks += 1;
            let sign_ok = if p0 == 0.0 { f == 0.0 } else { f.signum() == p0.signum() && f != 0.0 };
            if !sign_ok {
                self.violations.push(BoundViolation {
                    kind: BoundKind::Sign,
                    time: s.time,
                    kappa,
                    value: f,
                    bound: p0,
                });
            }
            let growth = (eta * w_max).powi(kappa as i32 - 1) * p0.abs();
            if f.abs() > growth * (1.0 + REL) {
                self.violations.push(BoundViolation {
                    kind: BoundKind::Growth,
                    time: s.time,
                    kappa,
                    value: f.abs(),
                    bound: growth,
                });
            }
            if kappa >= 2 {
                let lower = act.apply(w_min * prev.abs());
                if f.abs() < lower * (1.0 - REL) {
                    self.violations.push(BoundViolation {
                        kind: BoundKind::Lower,
                        time: s.time,
                        kappa,
                        value: f.abs(),
                        bound: lower,
                    });
                }
            }
            prev = f;
        }
    }
}
