//! Linear multi-machine grid surrogate.
//!
//! Classical swing dynamics around an operating point: per generator a
//! rotor angle deviation and a per-unit speed deviation, coupled through
//! linearized tie stiffnesses. Models expose mechanical power inputs per
//! generator, per-unit speed measurements, and tie-line MW flows, which
//! is all the downstream identification and control stages consume.

pub mod csv;
pub mod oracle;
pub mod sim;

pub use oracle::{closed_loop_modes, true_modes, true_residues};
pub use sim::{simulate, AttachedController, MeasChannel, SimRecord};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, eigenvalues_sorted};

/// Synchronous base speed, rad/s (60 Hz system).
pub const OMEGA_S: f64 = 2.0 * std::f64::consts::PI * 60.0;
/// Machine MVA base used to scale tie flows to engineering units.
pub const S_BASE_MVA: f64 = 900.0;

/// Two-area benchmark constants: inertias (s, machine base), uniform
/// damping, intra-area and tie stiffnesses (pu torque per rad), and the
/// stiffness anchoring generator 1 to the external grid.
pub const TWO_AREA_H: [f64; 4] = [6.5, 6.5, 6.175, 6.175];
pub const TWO_AREA_D: f64 = 2.0;
pub const TWO_AREA_K_INTRA: [f64; 2] = [2.8, 2.3];
pub const TWO_AREA_K_TIE: [f64; 2] = [0.96, 0.64];
pub const TWO_AREA_K_GRID: f64 = 16.0;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("dimension mismatch: {0}")]
    BadDimension(String),
    #[error("model is not strictly stable: eigenvalue {re}+{im}i")]
    Unstable { re: f64, im: f64 },
    #[error("model matrices contain non-finite entries")]
    NonFinite,
    #[error("invalid scenario: {0}")]
    BadScenario(String),
    #[error("invalid channel reference: {0}")]
    BadChannel(String),
    #[error("state magnitude {norm:.3e} exceeded 1e6 at t = {t:.4} s; simulation aborted")]
    Diverged { t: f64, norm: f64 },
    #[error("repeated discrete poles (min distance {dist:.3e}); model treated as defective")]
    Defective { dist: f64 },
    #[error("chain builder needs n_areas >= 2 and gens_per_area >= 1, got ({0}, {1})")]
    BadChainShape(usize, usize),
    #[error("record I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("linear algebra: {0}")]
    Linalg(#[from] crate::linalg::LinalgError),
    #[error("record parse: {0}")]
    Parse(String),
}

/// Linear state-space grid surrogate.
///
/// `x' = a x + b_u u` with one input per generator (mechanical power,
/// pu on machine base). Outputs: `c_speed x` gives per-generator speed
/// deviation in rad/s, `c_tie x` gives tie-line flow deviations in MW.
#[derive(Debug, Clone)]
pub struct LinearGridModel {
    pub a: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub c_speed: DMatrix<f64>,
    pub c_tie: DMatrix<f64>,
    /// 1-based area id per generator.
    pub area_of_gen: Vec<usize>,
    pub s_base_mva: f64,
}

impl LinearGridModel {
    pub fn from_parts(
        a: DMatrix<f64>,
        b_u: DMatrix<f64>,
        c_speed: DMatrix<f64>,
        c_tie: DMatrix<f64>,
        area_of_gen: Vec<usize>,
        s_base_mva: f64,
    ) -> Result<Self, GridError> {
        let model = Self {
            a,
            b_u,
            c_speed,
            c_tie,
            area_of_gen,
            s_base_mva,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_gens(&self) -> usize {
        self.b_u.ncols()
    }

    pub fn n_ties(&self) -> usize {
        self.c_tie.nrows()
    }

    /// Checks shapes, finiteness, and strict stability of `a`.
    pub fn validate(&self) -> Result<(), GridError> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(GridError::BadDimension(format!(
                "state matrix is {}x{}",
                self.a.nrows(),
                self.a.ncols()
            )));
        }
        if self.b_u.nrows() != n || self.b_u.ncols() == 0 {
            return Err(GridError::BadDimension(format!(
                "input matrix is {}x{}, expected {n} rows and at least one column",
                self.b_u.nrows(),
                self.b_u.ncols()
            )));
        }
        let g = self.b_u.ncols();
        if self.c_speed.nrows() != g || self.c_speed.ncols() != n {
            return Err(GridError::BadDimension(format!(
                "speed output matrix is {}x{}, expected {g}x{n}",
                self.c_speed.nrows(),
                self.c_speed.ncols()
            )));
        }
        if self.c_tie.ncols() != n || self.c_tie.nrows() == 0 {
            return Err(GridError::BadDimension(format!(
                "tie output matrix is {}x{}, expected at least one row of width {n}",
                self.c_tie.nrows(),
                self.c_tie.ncols()
            )));
        }
        if self.area_of_gen.len() != g {
            return Err(GridError::BadDimension(format!(
                "area map has {} entries for {g} generators",
                self.area_of_gen.len()
            )));
        }
        if self.area_of_gen.iter().any(|&a| a == 0) {
            return Err(GridError::BadDimension(
                "area ids are 1-based; found 0".into(),
            ));
        }
        for m in [&self.a, &self.b_u, &self.c_speed, &self.c_tie] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(GridError::NonFinite);
            }
        }
        if !(self.s_base_mva > 0.0) {
            return Err(GridError::BadDimension(format!(
                "MVA base must be positive, got {}",
                self.s_base_mva
            )));
        }
        for eig in eigenvalues_sorted(&self.a) {
            if eig.re >= -1e-9 {
                return Err(GridError::Unstable {
                    re: eig.re,
                    im: eig.im,
                });
            }
        }
        Ok(())
    }

    /// Order-sensitive hash of all matrix bits; equal fingerprints mean
    /// bit-identical models.
    pub fn fingerprint(&self) -> u64 {
        let mut bits: Vec<f64> = Vec::new();
        for m in [&self.a, &self.b_u, &self.c_speed, &self.c_tie] {
            bits.push(m.nrows() as f64);
            bits.push(m.ncols() as f64);
            bits.extend(m.iter().copied());
        }
        bits.extend(self.area_of_gen.iter().map(|&a| a as f64));
        bits.push(self.s_base_mva);
        linalg::fingerprint(&[&bits])
    }
}

/// Builds the swing-equation state matrices shared by both builders.
///
/// `anchor`: optional (gen index, stiffness) tying that machine's angle
/// to an external reference, which makes absolute angles observable. With
/// an anchor the state vector is `[delta_1..delta_G, w_1..w_G]`; without
/// it angles are expressed relative to the last generator and the state
/// vector is `[theta_1..theta_{G-1}, w_1..w_G]`.
fn assemble_swing(
    h: &[f64],
    d: &[f64],
    stiffness: &DMatrix<f64>,
    anchor: Option<(usize, f64)>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let g = h.len();
    let mut lap = stiffness.clone();
    if let Some((idx, k)) = anchor {
        lap[(idx, idx)] += k;
    }
    let (n_ang, n) = if anchor.is_some() {
        (g, 2 * g)
    } else {
        (g - 1, 2 * g - 1)
    };
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, g);
    for i in 0..n_ang {
        a[(i, n_ang + i)] = OMEGA_S;
        if anchor.is_none() {
            // angles relative to the last machine
            a[(i, n_ang + g - 1)] = -OMEGA_S;
        }
    }
    for r in 0..g {
        let m2 = 2.0 * h[r];
        for c in 0..n_ang {
            a[(n_ang + r, c)] = -lap[(r, c)] / m2;
        }
        a[(n_ang + r, n_ang + r)] -= d[r] / m2;
        b[(n_ang + r, r)] = 1.0 / m2;
    }
    (a, b)
}

fn speed_outputs(g: usize, n_ang: usize, n: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(g, n);
    for i in 0..g {
        c[(i, n_ang + i)] = OMEGA_S;
    }
    c
}

/// Two-area, four-machine surrogate anchored to an external grid.
///
/// Generators 1-2 form area 1, generators 3-4 area 2; two parallel tie
/// circuits connect the areas between generators 2 and 3. Generator 1 is
/// tied to the external grid, so all eight states are strictly stable.
/// The slowest electromechanical mode is the inter-area swing in the
/// 0.4-0.8 Hz range; local modes sit above 1 Hz.
pub fn build_two_area() -> LinearGridModel {
    let g = 4;
    let h = TWO_AREA_H;
    let d = [TWO_AREA_D; 4];
    let mut k = DMatrix::zeros(g, g);
    let add_edge = |k: &mut DMatrix<f64>, i: usize, j: usize, kij: f64| {
        k[(i, i)] += kij;
        k[(j, j)] += kij;
        k[(i, j)] -= kij;
        k[(j, i)] -= kij;
    };
    add_edge(&mut k, 0, 1, TWO_AREA_K_INTRA[0]);
    add_edge(&mut k, 2, 3, TWO_AREA_K_INTRA[1]);
    let k_tie_total: f64 = TWO_AREA_K_TIE.iter().sum();
    add_edge(&mut k, 1, 2, k_tie_total);

    let (a, b_u) = assemble_swing(&h, &d, &k, Some((0, TWO_AREA_K_GRID)));
    let n = 2 * g;
    let c_speed = speed_outputs(g, g, n);
    let mut c_tie = DMatrix::zeros(2, n);
    for (row, kt) in TWO_AREA_K_TIE.iter().enumerate() {
        c_tie[(row, 1)] = kt * S_BASE_MVA;
        c_tie[(row, 2)] = -kt * S_BASE_MVA;
    }
    LinearGridModel {
        a,
        b_u,
        c_speed,
        c_tie,
        area_of_gen: vec![1, 1, 2, 2],
        s_base_mva: S_BASE_MVA,
    }
}

/// Chain of `n_areas` areas with `gens_per_area` machines each, inertias
/// drawn from a seeded range. Angles are taken relative to the last
/// machine, so the model has `2G - 1` states and no marginal mode. One
/// tie-line output per adjacent area pair. The slowest oscillatory mode
/// stays inside 0.1-1.0 Hz for chains up to about eight areas.
pub fn build_chain(
    n_areas: usize,
    gens_per_area: usize,
    seed: u64,
) -> Result<LinearGridModel, GridError> {
    if n_areas < 2 || gens_per_area < 1 {
        return Err(GridError::BadChainShape(n_areas, gens_per_area));
    }
    const K_WITHIN: f64 = 1.8;
    const K_TIE: f64 = 0.4;
    let g = n_areas * gens_per_area;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h: Vec<f64> = (0..g).map(|_| rng.gen_range(4.5..7.5)).collect();
    let d = vec![1.8; g];

    let mut k = DMatrix::zeros(g, g);
    let add_edge = |k: &mut DMatrix<f64>, i: usize, j: usize, kij: f64| {
        k[(i, i)] += kij;
        k[(j, j)] += kij;
        k[(i, j)] -= kij;
        k[(j, i)] -= kij;
    };
    for area in 0..n_areas {
        let base = area * gens_per_area;
        for i in 0..gens_per_area.saturating_sub(1) {
            add_edge(&mut k, base + i, base + i + 1, K_WITHIN);
        }
    }
    let mut tie_edges = Vec::new();
    for area in 0..n_areas - 1 {
        let a_end = area * gens_per_area + gens_per_area - 1;
        let b_start = (area + 1) * gens_per_area;
        add_edge(&mut k, a_end, b_start, K_TIE);
        tie_edges.push((a_end, b_start));
    }

    let (a, b_u) = assemble_swing(&h, &d, &k, None);
    let n_ang = g - 1;
    let n = 2 * g - 1;
    let c_speed = speed_outputs(g, n_ang, n);
    let mut c_tie = DMatrix::zeros(tie_edges.len(), n);
    for (row, (i, j)) in tie_edges.iter().enumerate() {
        // delta_i - delta_j = theta_i - theta_j with theta of the
        // reference machine (last index) identically zero
        if *i < n_ang {
            c_tie[(row, *i)] = K_TIE * S_BASE_MVA;
        }
        if *j < n_ang {
            c_tie[(row, *j)] = -K_TIE * S_BASE_MVA;
        }
    }
    let area_of_gen = (0..g).map(|i| i / gens_per_area + 1).collect();
    let model = LinearGridModel {
        a,
        b_u,
        c_speed,
        c_tie,
        area_of_gen,
        s_base_mva: S_BASE_MVA,
    };
    model.validate()?;
    Ok(model)
}

/// Disturbance and probing channel reference: a generator input or a raw
/// state index. Serialized as `gen<k>.u` (1-based) or `state.<i>`
/// (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Input(usize),
    State(usize),
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Target::Input(i) => write!(f, "gen{}.u", i + 1),
            Target::State(i) => write!(f, "state.{i}"),
        }
    }
}

impl std::str::FromStr for Target {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("gen") {
            if let Some(num) = rest.strip_suffix(".u") {
                let idx: usize = num
                    .parse()
                    .map_err(|_| GridError::BadChannel(s.to_string()))?;
                if idx == 0 {
                    return Err(GridError::BadChannel(s.to_string()));
                }
                return Ok(Target::Input(idx - 1));
            }
        }
        if let Some(num) = s.strip_prefix("state.") {
            let idx: usize = num
                .parse()
                .map_err(|_| GridError::BadChannel(s.to_string()))?;
            return Ok(Target::State(idx));
        }
        Err(GridError::BadChannel(s.to_string()))
    }
}

impl Serialize for Target {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    /// Rectangular input deviation over `[t_start, t_start + duration)`.
    Pulse,
    /// Instantaneous state jump at `t_start`: `x += B_col * magnitude`
    /// for an input target, `x[i] += magnitude` for a state target.
    Impulse,
    /// Input step held from `t_start` to the end of the run.
    LoadStep,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub kind: DisturbanceKind,
    pub target: Target,
    /// Seconds from run start.
    pub t_start: f64,
    /// Pulse width in seconds; ignored for impulse and load step.
    #[serde(default)]
    pub duration: f64,
    pub magnitude: f64,
}

/// Staggered per-generator pseudo-random binary probing: generator `n`
/// (0-based) toggles between +/- `amplitude` on the sample grid inside
/// its own window `[start_s + n*segment_s, start_s + (n+1)*segment_s)`,
/// and is silent elsewhere. Windows never overlap, which keeps every
/// input channel separately excited.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSchedule {
    pub amplitude: f64,
    pub start_s: f64,
    pub segment_s: f64,
    pub seed: u64,
    /// Samples each random level is held for; the probe switches at
    /// `sample_hz / dwell`. Lets decimated identification see a
    /// zero-order-hold input at its own rate.
    #[serde(default = "default_dwell")]
    pub dwell: usize,
}

fn default_dwell() -> usize {
    1
}

fn default_dt() -> f64 {
    1e-3
}

fn default_sample_hz() -> f64 {
    50.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub disturbance: Option<Disturbance>,
    #[serde(default)]
    pub probe: Option<ProbeSchedule>,
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt_internal: f64,
    #[serde(default = "default_sample_hz")]
    pub sample_hz: f64,
}

impl ScenarioConfig {
    /// Pure free-run scenario of length `t_end` at default rates.
    pub fn quiet(t_end: f64) -> Self {
        Self {
            disturbance: None,
            probe: None,
            t_end,
            dt_internal: default_dt(),
            sample_hz: default_sample_hz(),
        }
    }

    pub fn validate(&self, model: &LinearGridModel) -> Result<(), GridError> {
        if !(self.t_end > 0.0) {
            return Err(GridError::BadScenario(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        if !(self.dt_internal > 0.0) {
            return Err(GridError::BadScenario(format!(
                "dt_internal must be positive, got {}",
                self.dt_internal
            )));
        }
        if !(self.sample_hz > 0.0) {
            return Err(GridError::BadScenario(format!(
                "sample_hz must be positive, got {}",
                self.sample_hz
            )));
        }
        let per = 1.0 / (self.dt_internal * self.sample_hz);
        if per < 1.0 - 1e-9 {
            return Err(GridError::BadScenario(format!(
                "dt_internal {} exceeds the sample period {}",
                self.dt_internal,
                1.0 / self.sample_hz
            )));
        }
        if (per - per.round()).abs() > 1e-9 {
            return Err(GridError::BadScenario(format!(
                "internal step {} must divide the sample period {} evenly",
                self.dt_internal,
                1.0 / self.sample_hz
            )));
        }
        if let Some(d) = &self.disturbance {
            if !d.magnitude.is_finite() {
                return Err(GridError::BadScenario("non-finite magnitude".into()));
            }
            if d.t_start < 0.0 || d.t_start > self.t_end {
                return Err(GridError::BadScenario(format!(
                    "disturbance start {} outside [0, {}]",
                    d.t_start, self.t_end
                )));
            }
            match d.kind {
                DisturbanceKind::Pulse => {
                    if !(d.duration > 0.0) {
                        return Err(GridError::BadScenario(
                            "pulse needs a positive duration".into(),
                        ));
                    }
                    if d.t_start + d.duration > self.t_end + 1e-9 {
                        return Err(GridError::BadScenario(
                            "pulse extends past t_end".into(),
                        ));
                    }
                }
                DisturbanceKind::Impulse | DisturbanceKind::LoadStep => {}
            }
            match d.target {
                Target::Input(i) => {
                    if i >= model.n_gens() {
                        return Err(GridError::BadChannel(format!(
                            "gen{}.u on a {}-generator model",
                            i + 1,
                            model.n_gens()
                        )));
                    }
                }
                Target::State(i) => {
                    if d.kind != DisturbanceKind::Impulse {
                        return Err(GridError::BadScenario(
                            "state targets are only valid for impulses".into(),
                        ));
                    }
                    if i >= model.n_states() {
                        return Err(GridError::BadChannel(format!(
                            "state.{i} on a {}-state model",
                            model.n_states()
                        )));
                    }
                }
            }
        }
        if let Some(p) = &self.probe {
            if !(p.amplitude.is_finite() && p.amplitude != 0.0) {
                return Err(GridError::BadScenario(
                    "probe amplitude must be finite and nonzero".into(),
                ));
            }
            if p.start_s < 0.0 || !(p.segment_s > 0.0) {
                return Err(GridError::BadScenario(
                    "probe needs start_s >= 0 and segment_s > 0".into(),
                ));
            }
            let end = p.start_s + model.n_gens() as f64 * p.segment_s;
            if end > self.t_end + 1e-9 {
                return Err(GridError::BadScenario(format!(
                    "probe schedule runs to {end} s but t_end is {} s",
                    self.t_end
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic probe sequence for one generator: value per sample
/// index, nonzero only inside the generator's window.
pub(crate) fn probe_values(
    p: &ProbeSchedule,
    gen: usize,
    sample_hz: f64,
    n_samples: usize,
) -> Vec<f64> {
    let mut vals = vec![0.0; n_samples];
    let w_start = ((p.start_s + gen as f64 * p.segment_s) * sample_hz).round() as usize;
    let w_end = ((p.start_s + (gen + 1) as f64 * p.segment_s) * sample_hz).round() as usize;
    let dwell = p.dwell.max(1);
    let mut rng =
        ChaCha8Rng::seed_from_u64(p.seed ^ ((gen as u64 + 1).wrapping_mul(0x9E3779B97F4A7C15)));
    let mut level = 0.0;
    for idx in w_start.min(n_samples)..w_end.min(n_samples) {
        if (idx - w_start) % dwell == 0 {
            level = if rng.gen::<bool>() {
                p.amplitude
            } else {
                -p.amplitude
            };
        }
        vals[idx] = level;
    }
    vals
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_area_shape_and_stability() {
        let m = build_two_area();
        assert_eq!(m.n_states(), 8);
        assert_eq!(m.n_gens(), 4);
        assert_eq!(m.n_ties(), 2);
        m.validate().unwrap();
        assert_eq!(m.area_of_gen, vec![1, 1, 2, 2]);
    }

    #[test]
    fn two_area_has_single_interarea_mode_in_band() {
        let m = build_two_area();
        let modes = oracle::true_modes(&m);
        let osc: Vec<_> = modes.iter().filter(|md| md.is_oscillatory()).collect();
        assert_eq!(osc.len(), 4, "expected four swing pairs, got {osc:?}");
        let in_band: Vec<_> = osc
            .iter()
            .filter(|md| md.frequency_hz >= 0.1 && md.frequency_hz <= 1.0)
            .collect();
        assert_eq!(in_band.len(), 1, "in-band modes: {in_band:?}");
        let ia = in_band[0];
        assert!(
            ia.frequency_hz > 0.4 && ia.frequency_hz < 0.8,
            "inter-area mode at {} Hz",
            ia.frequency_hz
        );
        assert!(
            ia.zeta > 0.005 && ia.zeta < 0.08,
            "inter-area damping {}",
            ia.zeta
        );
    }

    #[test]
    fn chain_two_single_machine_areas_has_one_swing_pair() {
        let m = build_chain(2, 1, 11).unwrap();
        assert_eq!(m.n_states(), 3);
        assert_eq!(m.n_ties(), 1);
        let modes = oracle::true_modes(&m);
        let osc: Vec<_> = modes.iter().filter(|md| md.is_oscillatory()).collect();
        assert_eq!(osc.len(), 1);
        assert!(
            osc[0].frequency_hz >= 0.1 && osc[0].frequency_hz <= 1.0,
            "swing at {} Hz",
            osc[0].frequency_hz
        );
    }

    #[test]
    fn chain_four_by_two_slowest_mode_in_band() {
        let m = build_chain(4, 2, 3).unwrap();
        assert_eq!(m.n_states(), 15);
        assert_eq!(m.n_ties(), 3);
        assert_eq!(m.area_of_gen, vec![1, 1, 2, 2, 3, 3, 4, 4]);
        let modes = oracle::true_modes(&m);
        let slowest = modes
            .iter()
            .filter(|md| md.is_oscillatory())
            .min_by(|a, b| a.frequency_hz.partial_cmp(&b.frequency_hz).unwrap())
            .unwrap();
        assert!(
            slowest.frequency_hz >= 0.1 && slowest.frequency_hz <= 1.0,
            "slowest mode at {} Hz",
            slowest.frequency_hz
        );
    }

    #[test]
    fn chain_is_seed_deterministic() {
        let a = build_chain(3, 2, 42).unwrap();
        let b = build_chain(3, 2, 42).unwrap();
        let c = build_chain(3, 2, 43).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn chain_rejects_degenerate_shapes() {
        assert!(matches!(
            build_chain(1, 3, 0),
            Err(GridError::BadChainShape(1, 3))
        ));
        assert!(matches!(
            build_chain(2, 0, 0),
            Err(GridError::BadChainShape(2, 0))
        ));
    }

    #[test]
    fn target_strings_round_trip() {
        for (s, t) in [
            ("gen1.u", Target::Input(0)),
            ("gen12.u", Target::Input(11)),
            ("state.0", Target::State(0)),
            ("state.7", Target::State(7)),
        ] {
            let parsed: Target = s.parse().unwrap();
            assert_eq!(parsed, t);
            assert_eq!(parsed.to_string(), s);
        }
        assert!("gen0.u".parse::<Target>().is_err());
        assert!("bus3.p".parse::<Target>().is_err());
    }

    #[test]
    fn scenario_validation_rejects_bad_rates_and_targets() {
        let m = build_two_area();
        let mut sc = ScenarioConfig::quiet(10.0);
        sc.dt_internal = 0.03; // coarser than the 20 ms sample period
        assert!(matches!(sc.validate(&m), Err(GridError::BadScenario(_))));

        let mut sc = ScenarioConfig::quiet(10.0);
        sc.dt_internal = 0.0007; // does not divide 20 ms evenly
        assert!(matches!(sc.validate(&m), Err(GridError::BadScenario(_))));

        let mut sc = ScenarioConfig::quiet(10.0);
        sc.disturbance = Some(Disturbance {
            kind: DisturbanceKind::Pulse,
            target: Target::State(2),
            t_start: 1.0,
            duration: 0.2,
            magnitude: 0.05,
        });
        assert!(matches!(sc.validate(&m), Err(GridError::BadScenario(_))));

        let mut sc = ScenarioConfig::quiet(10.0);
        sc.disturbance = Some(Disturbance {
            kind: DisturbanceKind::Pulse,
            target: Target::Input(9),
            t_start: 1.0,
            duration: 0.2,
            magnitude: 0.05,
        });
        assert!(matches!(sc.validate(&m), Err(GridError::BadChannel(_))));

        let mut sc = ScenarioConfig::quiet(5.0);
        sc.probe = Some(ProbeSchedule {
            amplitude: 0.01,
            start_s: 0.5,
            segment_s: 2.0,
            seed: 1,
        });
        // 4 generators * 2 s + 0.5 s start = 8.5 s > t_end
        assert!(matches!(sc.validate(&m), Err(GridError::BadScenario(_))));
    }

    #[test]
    fn scenario_config_rejects_unknown_fields() {
        let txt = r#"{"t_end": 10.0, "extra": 1}"#;
        assert!(serde_json::from_str::<ScenarioConfig>(txt).is_err());
    }

    #[test]
    fn probe_windows_are_disjoint_and_seeded() {
        let p = ProbeSchedule {
            amplitude: 0.01,
            start_s: 0.6,
            segment_s: 2.0,
            seed: 7,
        };
        let fs = 50.0;
        let n = 1000;
        let v0 = probe_values(&p, 0, fs, n);
        let v1 = probe_values(&p, 1, fs, n);
        for k in 0..n {
            assert!(
                v0[k] == 0.0 || v1[k] == 0.0,
                "overlap at sample {k}"
            );
        }
        // window of gen 0: [0.6, 2.6) s -> samples [30, 130)
        assert!(v0[..30].iter().all(|&v| v == 0.0));
        assert!(v0[30..130].iter().all(|&v| v.abs() == 0.01));
        assert!(v0[130..].iter().all(|&v| v == 0.0));
        // both signs occur
        assert!(v0[30..130].iter().any(|&v| v > 0.0));
        assert!(v0[30..130].iter().any(|&v| v < 0.0));
        let p2 = ProbeSchedule { seed: 8, ..p };
        assert_ne!(probe_values(&p2, 0, fs, n), v0);
    }
}
