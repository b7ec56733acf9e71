//! First-order discrete sections and cascades used by the damping
//! controllers. Sections come from the bilinear (Tustin) transform of
//! washout and lead-lag stages and run in transposed direct form II.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// One first-order IIR section `y[k] = b0 x[k] + b1 x[k-1] - a1 y[k-1]`.
#[derive(Debug, Clone)]
pub struct FirstOrderSection {
    pub b0: f64,
    pub b1: f64,
    pub a1: f64,
    state: f64,
}

impl FirstOrderSection {
    pub fn new(b0: f64, b1: f64, a1: f64) -> Self {
        FirstOrderSection {
            b0,
            b1,
            a1,
            state: 0.0,
        }
    }

    /// Tustin image of the washout `s T_w / (1 + s T_w)`.
    ///
    /// `b1 = -b0` exactly, so the section's DC gain is exactly zero.
    pub fn washout(tw: f64, ts: f64) -> Self {
        let den = ts + 2.0 * tw;
        let b0 = 2.0 * tw / den;
        FirstOrderSection::new(b0, -b0, (ts - 2.0 * tw) / den)
    }

    /// Tustin image of the lead-lag `(1 + s T_lead) / (1 + s T_lag)`.
    pub fn lead_lag(t_lead: f64, t_lag: f64, ts: f64) -> Self {
        let den = ts + 2.0 * t_lag;
        FirstOrderSection::new(
            (ts + 2.0 * t_lead) / den,
            (ts - 2.0 * t_lead) / den,
            (ts - 2.0 * t_lag) / den,
        )
    }

    pub fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.state;
        self.state = self.b1 * x - self.a1 * y;
        y
    }

    pub fn reset(&mut self) {
        self.state = 0.0;
    }

    /// Response at a point of the z-plane.
    pub fn response(&self, z: Complex64) -> Complex64 {
        (self.b0 * z + self.b1) / (z + self.a1)
    }

    /// (A, B, C, D) of the section with its single state.
    fn state_space(&self) -> (f64, f64, f64, f64) {
        (
            -self.a1,
            self.b1 - self.a1 * self.b0,
            1.0,
            self.b0,
        )
    }
}

/// A series connection of first-order sections.
#[derive(Debug, Clone, Default)]
pub struct Cascade {
    pub sections: Vec<FirstOrderSection>,
}

impl Cascade {
    pub fn new(sections: Vec<FirstOrderSection>) -> Self {
        Cascade { sections }
    }

    pub fn step(&mut self, x: f64) -> f64 {
        let mut v = x;
        for s in &mut self.sections {
            v = s.step(v);
        }
        v
    }

    pub fn reset(&mut self) {
        for s in &mut self.sections {
            s.reset();
        }
    }

    pub fn n_states(&self) -> usize {
        self.sections.len()
    }

    pub fn response(&self, z: Complex64) -> Complex64 {
        self.sections
            .iter()
            .map(|s| s.response(z))
            .product::<Complex64>()
    }

    /// Dense (A, B, C, D) of the whole series connection, one state per
    /// section, in processing order.
    pub fn state_space(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
        let n = self.sections.len();
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        // c starts empty (pure gain) and grows as sections are appended.
        let mut c = DVector::<f64>::zeros(n);
        let mut d = 1.0;
        for (i, sec) in self.sections.iter().enumerate() {
            let (ai, bi, ci, di) = sec.state_space();
            // section i is fed by the output of the prefix system (c, d)
            for j in 0..i {
                a[(i, j)] = bi * c[j];
            }
            a[(i, i)] = ai;
            b[i] = bi * d;
            for j in 0..i {
                c[j] *= di;
            }
            c[i] = ci;
            d *= di;
        }
        (a, b, c, d)
    }
}

/// Clamp to `[lo, hi]`.
pub fn saturate(x: f64, lo: f64, hi: f64) -> f64 {
    x.clamp(lo, hi)
}
