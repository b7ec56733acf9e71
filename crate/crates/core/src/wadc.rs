//! Residue-based design of the wide-area damping controller: a washout
//! stage in series with `m` identical lead-lag stages and a gain sized to
//! move the target mode to a requested damping ratio.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{saturate, Cascade, FirstOrderSection};
use crate::mode::Mode;

/// Default per-stage phase compensation limit in degrees.
pub const DEFAULT_PHI_MAX_DEG: f64 = 60.0;
/// Default cap on the number of lead-lag stages.
pub const DEFAULT_M_MAX: usize = 4;
/// Default target damping ratio.
pub const DEFAULT_ZETA_TARGET: f64 = 0.15;
/// Default washout time constant in seconds.
pub const DEFAULT_T_W: f64 = 10.0;
/// Default controller output limits in per unit.
pub const DEFAULT_V_LIMIT: f64 = 0.15;

#[derive(Debug, Error)]
pub enum WadcError {
    #[error("target mode is not oscillatory (omega = {0})")]
    NonOscillatory(f64),
    #[error("residue magnitude {0:.3e} too small to size a gain")]
    ZeroResidue(f64),
    #[error("zeta_target must lie in (0, 1), got {0}")]
    BadZetaTarget(f64),
    #[error("washout time constant must be positive, got {0}")]
    BadWashout(f64),
    #[error("per-stage phase limit must lie in (0, 90] degrees, got {0}")]
    BadStageLimit(f64),
    #[error("output limits must satisfy V_min < V_max, got ({0}, {1})")]
    BadLimits(f64, f64),
    #[error("required phase {phi_deg:.1} deg needs {needed} stages, cap is {m_max}")]
    Infeasible {
        phi_deg: f64,
        needed: usize,
        m_max: usize,
    },
    #[error("sample period {ts} too coarse for time constants (needs Ts < 2*min(T_lag, T_w) = {limit})")]
    SamplePeriodTooCoarse { ts: f64, limit: f64 },
    #[error("non-positive time constant in parameters: {0}")]
    BadTimeConstant(f64),
}

/// Tuned controller parameters. `K_WADC` is negative for the usual
/// tie-flow feedback polarity; stages are `m` identical lead-lag blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WadcParams {
    #[serde(rename = "K_WADC")]
    pub k_wadc: f64,
    #[serde(rename = "T_w")]
    pub t_w: f64,
    #[serde(rename = "T_lead")]
    pub t_lead: f64,
    #[serde(rename = "T_lag")]
    pub t_lag: f64,
    pub m: usize,
    #[serde(rename = "V_min")]
    pub v_min: f64,
    #[serde(rename = "V_max")]
    pub v_max: f64,
}

/// Continuous washout response `s T_w / (1 + s T_w)` at `s`.
fn washout_response(s: Complex64, t_w: f64) -> Complex64 {
    s * t_w / (Complex64::new(1.0, 0.0) + s * t_w)
}

/// Continuous lead-lag response `(1 + s T_lead) / (1 + s T_lag)` at `s`.
fn lead_lag_response(s: Complex64, t_lead: f64, t_lag: f64) -> Complex64 {
    (Complex64::new(1.0, 0.0) + s * t_lead) / (Complex64::new(1.0, 0.0) + s * t_lag)
}

/// Continuous response of the full compensator `W(s) L(s)^m` (unit gain).
pub fn compensator_response(p: &WadcParams, s: Complex64) -> Complex64 {
    washout_response(s, p.t_w) * lead_lag_response(s, p.t_lead, p.t_lag).powu(p.m as u32)
}

/// Sizes washout + lead-lag + gain from the residue `r` of the target
/// `mode` (continuous-domain residue of the selected loop).
///
/// Phase: the loop departs along `arg(-K R H(lambda))`; stages are chosen
/// so that `R H(lambda)` points along the negative real axis, i.e. the
/// required compensation is `180 - arg(R W(lambda))` split across at most
/// `m_max` stages of `phi_max_deg` each. Gain magnitude maps the mode to
/// the damping ratio `zeta_target` at unchanged natural frequency.
pub fn design(
    r: Complex64,
    mode: Mode,
    zeta_target: f64,
    t_w: f64,
    phi_max_deg: f64,
    v_limits: (f64, f64),
) -> Result<WadcParams, WadcError> {
    design_with_stage_cap(r, mode, zeta_target, t_w, phi_max_deg, v_limits, DEFAULT_M_MAX)
}

pub fn design_with_stage_cap(
    r: Complex64,
    mode: Mode,
    zeta_target: f64,
    t_w: f64,
    phi_max_deg: f64,
    v_limits: (f64, f64),
    m_max: usize,
) -> Result<WadcParams, WadcError> {
    if mode.omega <= 0.0 {
        return Err(WadcError::NonOscillatory(mode.omega));
    }
    if r.norm() < 1e-12 {
        return Err(WadcError::ZeroResidue(r.norm()));
    }
    if !(zeta_target > 0.0 && zeta_target < 1.0) {
        return Err(WadcError::BadZetaTarget(zeta_target));
    }
    if t_w <= 0.0 {
        return Err(WadcError::BadWashout(t_w));
    }
    if !(phi_max_deg > 0.0 && phi_max_deg <= 90.0) {
        return Err(WadcError::BadStageLimit(phi_max_deg));
    }
    if v_limits.0 >= v_limits.1 {
        return Err(WadcError::BadLimits(v_limits.0, v_limits.1));
    }

    let lambda = mode.lambda();
    let rw = r * washout_response(lambda, t_w);
    // required compensation, wrapped to (-180, 180]
    let mut phi = 180.0 - rw.arg().to_degrees();
    while phi > 180.0 {
        phi -= 360.0;
    }
    while phi <= -180.0 {
        phi += 360.0;
    }

    let needed = ((phi.abs() / phi_max_deg).ceil() as usize).max(1);
    if needed > m_max {
        return Err(WadcError::Infeasible {
            phi_deg: phi,
            needed,
            m_max,
        });
    }
    let m = needed;
    let phi_stage = (phi / m as f64).to_radians();
    let alpha = (1.0 - phi_stage.abs().sin()) / (1.0 + phi_stage.abs().sin());
    let mut t_lead = 1.0 / (mode.omega * alpha.sqrt());
    let mut t_lag = alpha * t_lead;
    if phi_stage < 0.0 {
        std::mem::swap(&mut t_lead, &mut t_lag);
    }

    let omega_n = lambda.norm();
    let lambda_des = omega_n
        * Complex64::new(-zeta_target, (1.0 - zeta_target * zeta_target).sqrt());
    let h1 = washout_response(lambda, t_w)
        * lead_lag_response(lambda, t_lead, t_lag).powu(m as u32);
    let shift = (lambda_des - lambda).norm();
    let mut k = if shift == 0.0 {
        0.0
    } else {
        -shift / (r * h1).norm()
    };
    if k != 0.0 {
        let departure = -k * r * h1;
        if departure.re > 0.0 {
            k = -k;
        }
    }

    Ok(WadcParams {
        k_wadc: k,
        t_w,
        t_lead,
        t_lag,
        m,
        v_min: v_limits.0,
        v_max: v_limits.1,
    })
}

/// Digital realization of [`WadcParams`]: Tustin sections stepped at the
/// sample rate, output saturated to the configured limits.
#[derive(Debug, Clone)]
pub struct DiscreteController {
    pub params: WadcParams,
    pub ts: f64,
    cascade: Cascade,
}

impl DiscreteController {
    /// One sample: filtered, gain-scaled, saturated injection for the
    /// measured input `y`. The sign convention is `u = -K * H(y)`, so the
    /// negative `K_WADC` of the usual design yields positive feedback
    /// gain on the filtered signal.
    pub fn step(&mut self, y: f64) -> f64 {
        let v = -self.params.k_wadc * self.cascade.step(y);
        saturate(v, self.params.v_min, self.params.v_max)
    }

    pub fn reset(&mut self) {
        self.cascade.reset();
    }

    pub fn n_states(&self) -> usize {
        self.cascade.n_states()
    }

    /// Linear response (saturation ignored) at `z`, including gain and
    /// sign: `-K_WADC * H_d(z)`.
    pub fn response(&self, z: Complex64) -> Complex64 {
        -self.params.k_wadc * self.cascade.response(z)
    }

    /// State-space of the linear part (saturation ignored):
    /// `x+ = A x + B y`, `u = C x + D y` with the `-K_WADC` sign folded
    /// into `C` and `D`.
    pub fn state_space(&self) -> (nalgebra::DMatrix<f64>, nalgebra::DVector<f64>, nalgebra::DVector<f64>, f64) {
        let (a, b, mut c, mut d) = self.cascade.state_space();
        c *= -self.params.k_wadc;
        d *= -self.params.k_wadc;
        (a, b, c, d)
    }
}

/// Discretizes `params` at sample period `ts`. Rejects sample periods too
/// coarse for the fastest time constant (`Ts >= 2 * min(T_lag, T_w)`
/// would fold the Tustin pole onto or past the unit circle).
pub fn realize(params: &WadcParams, ts: f64) -> Result<DiscreteController, WadcError> {
    for tc in [params.t_w, params.t_lead, params.t_lag] {
        if tc <= 0.0 {
            return Err(WadcError::BadTimeConstant(tc));
        }
    }
    if params.v_min >= params.v_max {
        return Err(WadcError::BadLimits(params.v_min, params.v_max));
    }
    let limit = 2.0 * params.t_lag.min(params.t_w);
    if ts >= limit {
        return Err(WadcError::SamplePeriodTooCoarse { ts, limit });
    }
    let mut sections = vec![FirstOrderSection::washout(params.t_w, ts)];
    for _ in 0..params.m {
        sections.push(FirstOrderSection::lead_lag(params.t_lead, params.t_lag, ts));
    }
    Ok(DiscreteController {
        params: *params,
        ts,
        cascade: Cascade::new(sections),
    })
}

/// Local power system stabilizer preset: washout plus one mild lead stage
/// on the machine's own speed, gain `k` (positive), output limits
/// +/- 0.10 pu. Same `u = -K * H(y)` convention as the wide-area
/// controller, so a positive `k` injects damping torque.
pub fn speed_damping_pss(k: f64, ts: f64) -> Result<DiscreteController, WadcError> {
    let params = WadcParams {
        k_wadc: k,
        t_w: 10.0,
        t_lead: 0.08,
        t_lag: 0.03,
        m: 1,
        v_min: -0.10,
        v_max: 0.10,
    };
    realize(&params, ts)
}
