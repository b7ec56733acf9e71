//! Oscillatory mode description shared by the grid oracle and the modal
//! analysis of identified models.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// One eigenmode in continuous time.
///
/// Conjugate pairs are stored once with `omega >= 0`; a real eigenvalue has
/// `omega == 0` and `frequency_hz == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    /// Real part of the continuous eigenvalue (1/s).
    pub sigma: f64,
    /// Imaginary part of the continuous eigenvalue (rad/s), `>= 0`.
    pub omega: f64,
    /// `|omega| / 2 pi` (Hz).
    pub frequency_hz: f64,
    /// Damping ratio `-sigma / |lambda|`, in `(-1, 1]`.
    pub zeta: f64,
}

impl Mode {
    /// Builds a mode from a continuous eigenvalue. The eigenvalue is folded
    /// onto the upper half plane.
    pub fn from_lambda(lambda: Complex64) -> Self {
        let sigma = lambda.re;
        let omega = lambda.im.abs();
        let mag = (sigma * sigma + omega * omega).sqrt();
        let zeta = if mag == 0.0 { 0.0 } else { -sigma / mag };
        Mode {
            sigma,
            omega,
            frequency_hz: omega / (2.0 * std::f64::consts::PI),
            zeta,
        }
    }

    /// Continuous eigenvalue of a discrete pole: `ln(p) / Ts`, principal
    /// branch. Only meaningful for `p != 0`.
    pub fn from_discrete_pole(p: Complex64, ts: f64) -> Self {
        Mode::from_lambda(p.ln() / ts)
    }

    /// The continuous eigenvalue this mode was built from (upper half
    /// plane representative).
    pub fn lambda(&self) -> Complex64 {
        Complex64::new(self.sigma, self.omega)
    }

    /// True when the mode is an oscillation rather than a pure decay.
    pub fn is_oscillatory(&self) -> bool {
        self.omega > 0.0
    }
}
