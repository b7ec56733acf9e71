//! End-to-end damping-control workflow over the grid surrogate.
//!
//! A run walks the whole chain inside one output directory: ringdown
//! simulation, coherency grouping, staggered probing, consensus
//! identification of the shared-denominator tie/input model, residue
//! ranking of candidate loops, washout + lead-lag design for the selected
//! loop, and closed-loop verification across controller cases. Every
//! stage writes its artifact before the next one starts, so a failed
//! stage leaves the completed prefix behind for inspection, and each
//! stage can also be driven on its own against an existing directory.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admm::{self, run_consensus, AdmmError, AreaState, ConsensusState};
use crate::coherency::{default_sigma, group, CoherencyError, GroupReport};
use crate::grid::csv::{read_record_from_path, write_record_to_path};
use crate::grid::{
    build_chain, build_two_area, closed_loop_modes, simulate, AttachedController, Disturbance,
    DisturbanceKind, GridError, LinearGridModel, MeasChannel, ProbeSchedule, ScenarioConfig,
    SimRecord, Target, OMEGA_S,
};
use crate::modal::{
    self, assemble_table, rank_loops, LoopRanking, ModalError, ModeResidueTable, PairId,
    RankedLoop,
};
use crate::mode::Mode;
use crate::net::NetError;
use crate::sysid::{build_regression, ArxEstimate, RegressionBlock, SysidError};
use crate::wadc::{design, realize, speed_damping_pss, WadcError, WadcParams};

/// Frequency band (Hz) searched for the inter-area target mode.
pub const INTER_AREA_BAND: (f64, f64) = (0.1, 1.0);

pub const CONFIG_JSON: &str = "config.json";
pub const RINGDOWN_CSV: &str = "ringdown.csv";
pub const PROBE_CSV: &str = "probe.csv";
pub const GROUPING_JSON: &str = "grouping.json";
pub const IDENTIFIED_JSON: &str = "identified.json";
pub const TRACE_JSON: &str = "consensus_trace.json";
pub const MODAL_JSON: &str = "modal.json";
pub const WADC_JSON: &str = "wadc.json";
pub const WADC_WEAK_JSON: &str = "wadc_weak.json";
pub const SUMMARY_JSON: &str = "summary.json";
pub const REPORT_DIR: &str = "report";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing artifact(s): {name}; run the earlier stages first")]
    MissingArtifact { name: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Coherency(#[from] CoherencyError),
    #[error(transparent)]
    Sysid(#[from] SysidError),
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error(transparent)]
    Modal(#[from] ModalError),
    #[error(transparent)]
    Wadc(#[from] WadcError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// Process exit code the CLI maps this error to: 2 for configuration
    /// problems, 4 for wire-protocol failures, 3 for any other stage
    /// failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Net(_) => 4,
            _ => 3,
        }
    }
}

/// Which surrogate a run drives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    TwoArea,
    Chain {
        n_areas: usize,
        gens_per_area: usize,
        seed: u64,
    },
}

pub fn build_model(spec: &ModelSpec) -> Result<LinearGridModel, PipelineError> {
    match spec {
        ModelSpec::TwoArea => Ok(build_two_area()),
        ModelSpec::Chain {
            n_areas,
            gens_per_area,
            seed,
        } => Ok(build_chain(*n_areas, *gens_per_area, *seed)?),
    }
}

/// Controller configuration compared in the verification stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    /// Plant as built, no supplementary control.
    ExciterOnly,
    /// Local speed-feedback stabilizer on every machine.
    Pss,
    /// Wide-area controller on the strongest ranked loop.
    WadcStrong,
    /// Wide-area controller on the weakest ranked loop.
    WadcWeak,
    /// Local stabilizers plus the strong-loop wide-area controller.
    PssWadc,
}

impl CaseKind {
    pub const ALL: [CaseKind; 5] = [
        CaseKind::ExciterOnly,
        CaseKind::Pss,
        CaseKind::WadcStrong,
        CaseKind::WadcWeak,
        CaseKind::PssWadc,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CaseKind::ExciterOnly => "exciter_only",
            CaseKind::Pss => "pss",
            CaseKind::WadcStrong => "wadc_strong",
            CaseKind::WadcWeak => "wadc_weak",
            CaseKind::PssWadc => "pss_wadc",
        }
    }
}

pub fn closedloop_csv_name(case: CaseKind) -> String {
    format!("closedloop_{}.csv", case.label())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SysidSettings {
    /// Shared denominator order.
    #[serde(default = "default_order")]
    pub k: usize,
    /// Regression rows per (tie, gen) pair.
    #[serde(default = "default_rows")]
    pub n: usize,
    /// Remove the pre-disturbance operating point from the measured
    /// channels before regression.
    #[serde(default = "default_true")]
    pub detrend: bool,
    /// Staggered per-generator excitation injected during the
    /// identification run.
    pub probe: ProbeSchedule,
    /// Stride applied to the recorded channels before regression, so
    /// the model is fit at `sample_hz / decimate`. Longer chains need
    /// this: at the raw rate the lag window spans a small fraction of
    /// an inter-area cycle and the regressors turn collinear. Must
    /// match the probe dwell so the fit sees a held input.
    #[serde(default = "default_decimate")]
    pub decimate: usize,
    /// End time of the identification run; derived from the probe
    /// schedule when absent.
    #[serde(default)]
    pub ident_t_end: Option<f64>,
}

fn default_decimate() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmmSettings {
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_eps_abs")]
    pub eps_abs: f64,
    #[serde(default = "default_eps_rel")]
    pub eps_rel: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            rho: admm::DEFAULT_RHO,
            eps_abs: admm::DEFAULT_EPS_ABS,
            eps_rel: admm::DEFAULT_EPS_REL,
            max_iter: admm::DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoherencySettings {
    /// Number of groups to form.
    pub k: usize,
    /// Kernel width; median pairwise distance when absent.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Landmark count for the low-rank embedding; all generators when
    /// absent (exact spectral clustering).
    #[serde(default)]
    pub landmarks: Option<usize>,
    #[serde(default = "default_coherency_seed")]
    pub seed: u64,
    /// Ringdown window the grouping looks at, seconds from run start.
    #[serde(default = "default_window_start")]
    pub window_start_s: f64,
    #[serde(default = "default_window_len")]
    pub window_len_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WadcSettings {
    #[serde(default = "default_zeta_target")]
    pub zeta_target: f64,
    #[serde(default = "default_t_w")]
    pub t_w: f64,
    #[serde(default = "default_phi_max")]
    pub phi_max_deg: f64,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

impl Default for WadcSettings {
    fn default() -> Self {
        Self {
            zeta_target: default_zeta_target(),
            t_w: default_t_w(),
            phi_max_deg: default_phi_max(),
            v_min: default_v_min(),
            v_max: default_v_max(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelSpec,
    /// Ringdown scenario; also the closed-loop verification scenario.
    /// Its probe field must stay empty, probing belongs to `sysid`.
    pub scenario: ScenarioConfig,
    pub sysid: SysidSettings,
    #[serde(default)]
    pub admm: AdmmSettings,
    pub coherency: CoherencySettings,
    #[serde(default)]
    pub wadc: WadcSettings,
    /// Feedback delay of the wide-area loop, milliseconds.
    #[serde(default = "default_delay_ms")]
    pub delay_ms: f64,
    #[serde(default = "default_cases")]
    pub cases: Vec<CaseKind>,
    /// Gain of the per-machine speed stabilizers in the pss cases.
    #[serde(default = "default_pss_gain")]
    pub pss_gain: f64,
}

fn default_order() -> usize {
    8
}
fn default_rows() -> usize {
    250
}
fn default_true() -> bool {
    true
}
fn default_rho() -> f64 {
    admm::DEFAULT_RHO
}
fn default_eps_abs() -> f64 {
    admm::DEFAULT_EPS_ABS
}
fn default_eps_rel() -> f64 {
    admm::DEFAULT_EPS_REL
}
fn default_max_iter() -> usize {
    admm::DEFAULT_MAX_ITER
}
fn default_coherency_seed() -> u64 {
    17
}
fn default_window_start() -> f64 {
    3.2
}
fn default_window_len() -> f64 {
    10.0
}
fn default_zeta_target() -> f64 {
    0.15
}
fn default_t_w() -> f64 {
    10.0
}
fn default_phi_max() -> f64 {
    60.0
}
fn default_v_min() -> f64 {
    -0.15
}
fn default_v_max() -> f64 {
    0.15
}
fn default_delay_ms() -> f64 {
    200.0
}
fn default_cases() -> Vec<CaseKind> {
    CaseKind::ALL.to_vec()
}
fn default_pss_gain() -> f64 {
    5.0
}

impl PipelineConfig {
    /// Stock four-machine two-area study: pulse on the first machine of
    /// area 2, identification probing after the pulse clears.
    pub fn two_area_default() -> Self {
        Self {
            model: ModelSpec::TwoArea,
            scenario: ScenarioConfig {
                disturbance: Some(Disturbance {
                    kind: DisturbanceKind::Pulse,
                    target: Target::Input(2),
                    t_start: 1.0,
                    duration: 0.9,
                    magnitude: 0.05,
                }),
                probe: None,
                t_end: 14.0,
                dt_internal: 1e-3,
                sample_hz: 50.0,
            },
            sysid: SysidSettings {
                k: 8,
                n: 250,
                detrend: true,
                probe: ProbeSchedule {
                    amplitude: 0.02,
                    start_s: 3.0,
                    segment_s: 5.5,
                    seed: 24301,
                    dwell: 1,
                },
                decimate: 1,
                ident_t_end: None,
            },
            admm: AdmmSettings::default(),
            coherency: CoherencySettings {
                k: 2,
                sigma: None,
                landmarks: None,
                seed: 17,
                window_start_s: 3.2,
                window_len_s: 10.0,
            },
            wadc: WadcSettings::default(),
            delay_ms: 200.0,
            cases: CaseKind::ALL.to_vec(),
            pss_gain: default_pss_gain(),
        }
    }

    /// Stock chain-of-areas study; the pulse lands on the first machine
    /// of area 2 so adjacent areas swing against each other.
    pub fn chain_default(n_areas: usize, gens_per_area: usize, seed: u64) -> Self {
        let mut cfg = Self::two_area_default();
        cfg.model = ModelSpec::Chain {
            n_areas,
            gens_per_area,
            seed,
        };
        if let Some(d) = cfg.scenario.disturbance.as_mut() {
            d.target = Target::Input(gens_per_area);
            d.duration = 1.0;
        }
        cfg.scenario.t_end = 16.0;
        // the chain carries 2*n_gens - 1 states; matching the shared
        // order to that keeps neighbouring inter-area modes apart, and
        // a slower fit rate keeps the lag window comparable to an
        // inter-area cycle so the regressors stay independent
        cfg.sysid.k = 2 * n_areas * gens_per_area - 1;
        cfg.sysid.n = 80;
        cfg.sysid.decimate = 5;
        cfg.sysid.probe.dwell = 5;
        cfg.sysid.probe.segment_s = 10.0;
        cfg.coherency.k = n_areas;
        cfg.coherency.seed = 5;
        // single-loop damping budget the 200 ms and 400 ms checks both
        // tolerate; 0.15 destabilizes local modes on the longer chain
        cfg.wadc.zeta_target = 0.10;
        cfg
    }

    pub fn default_for(spec: &ModelSpec) -> Self {
        match spec {
            ModelSpec::TwoArea => Self::two_area_default(),
            ModelSpec::Chain {
                n_areas,
                gens_per_area,
                seed,
            } => Self::chain_default(*n_areas, *gens_per_area, *seed),
        }
    }

    /// Identification scenario: the ringdown disturbance plus the probe
    /// schedule, extended so the last probe window fits.
    pub fn probe_scenario(&self, n_gens: usize) -> ScenarioConfig {
        let probe = &self.sysid.probe;
        let probe_end = probe.start_s + n_gens as f64 * probe.segment_s;
        let t_end = self
            .sysid
            .ident_t_end
            .unwrap_or(probe_end + 0.5)
            .max(self.scenario.t_end);
        ScenarioConfig {
            disturbance: self.scenario.disturbance.clone(),
            probe: Some(probe.clone()),
            t_end,
            dt_internal: self.scenario.dt_internal,
            sample_hz: self.scenario.sample_hz,
        }
    }

    /// First instant anything is injected; samples before it estimate
    /// the operating point for detrending.
    fn first_activity_s(&self) -> f64 {
        let probe_start = self.sysid.probe.start_s;
        match &self.scenario.disturbance {
            Some(d) => d.t_start.min(probe_start),
            None => probe_start,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |msg: String| Err(PipelineError::Config(msg));
        if self.scenario.probe.is_some() {
            return fail("scenario.probe: set sysid.probe instead".into());
        }
        if self.sysid.k < 2 {
            return fail(format!("sysid.k: need at least 2, got {}", self.sysid.k));
        }
        if self.sysid.n < self.sysid.k + 1 {
            return fail(format!(
                "sysid.n: need more rows than the order {}, got {}",
                self.sysid.k, self.sysid.n
            ));
        }
        let probe = &self.sysid.probe;
        if probe.amplitude <= 0.0 {
            return fail(format!("sysid.probe.amplitude: {}", probe.amplitude));
        }
        if self.sysid.decimate < 1 {
            return fail("sysid.decimate: must be at least 1".into());
        }
        if probe.dwell != self.sysid.decimate {
            return fail(format!(
                "sysid.decimate: is {} but the probe holds each level for {} samples; \
                 the fit only sees a held input when they match",
                self.sysid.decimate, probe.dwell
            ));
        }
        let fs = self.scenario.sample_hz;
        let window = self.sysid.decimate * (self.sysid.n + self.sysid.k);
        let segment = (probe.segment_s * fs).floor() as usize;
        if window > segment {
            return fail(format!(
                "sysid.probe.segment_s: window needs {window} samples but a segment holds {segment}; \
                 raise segment_s or lower n"
            ));
        }
        // regression rows must not see the ringdown input: the pulse has
        // to clear before probing starts, and a load step never clears
        if let Some(d) = &self.scenario.disturbance {
            let clears = match d.kind {
                DisturbanceKind::Pulse => Some(d.t_start + d.duration),
                DisturbanceKind::Impulse => Some(d.t_start),
                DisturbanceKind::LoadStep => None,
            };
            match clears {
                Some(t) if t <= probe.start_s => {}
                Some(t) => {
                    return fail(format!(
                        "sysid.probe.start_s: disturbance input is active until {t} s, \
                         probing starts at {} s",
                        probe.start_s
                    ));
                }
                None => {
                    return fail(
                        "scenario.disturbance: a load step overlaps the probe windows; \
                         use a pulse or impulse for identification runs"
                            .into(),
                    );
                }
            }
        }
        if self.coherency.k < 1 {
            return fail("coherency.k: need at least 1 group".into());
        }
        if let Some(l) = self.coherency.landmarks {
            if l < self.coherency.k {
                return fail(format!(
                    "coherency.landmarks: {l} landmarks cannot separate {} groups",
                    self.coherency.k
                ));
            }
        }
        if self.coherency.window_len_s <= 0.0 {
            return fail(format!(
                "coherency.window_len_s: {}",
                self.coherency.window_len_s
            ));
        }
        if !(self.wadc.zeta_target > 0.0 && self.wadc.zeta_target < 1.0) {
            return fail(format!("wadc.zeta_target: {}", self.wadc.zeta_target));
        }
        if self.wadc.v_min >= self.wadc.v_max {
            return fail(format!(
                "wadc.v_min/v_max: [{}, {}]",
                self.wadc.v_min, self.wadc.v_max
            ));
        }
        if self.delay_ms < 0.0 {
            return fail(format!("delay_ms: {}", self.delay_ms));
        }
        if self.pss_gain < 0.0 {
            return fail(format!("pss_gain: {}", self.pss_gain));
        }
        if self.cases.is_empty() {
            return fail("cases: need at least one case".into());
        }
        for (i, c) in self.cases.iter().enumerate() {
            if self.cases[..i].contains(c) {
                return fail(format!("cases: duplicate entry {}", c.label()));
            }
        }
        Ok(())
    }
}

/// Reads and validates a run configuration; parse problems surface the
/// offending key in the message.
pub fn load_config(path: &Path) -> Result<PipelineConfig, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: PipelineConfig = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn artifact_path(dir: &Path, name: &str) -> Result<PathBuf, PipelineError> {
    let p = dir.join(name);
    if !p.is_file() {
        return Err(PipelineError::MissingArtifact {
            name: name.to_string(),
        });
    }
    Ok(p)
}

fn read_json<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T, PipelineError> {
    let text = fs::read_to_string(artifact_path(dir, name)?)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn read_record(dir: &Path, name: &str) -> Result<SimRecord, PipelineError> {
    Ok(read_record_from_path(&artifact_path(dir, name)?)?)
}

/// Per-generator speed traces over the grouping window.
fn speed_windows(rec: &SimRecord, start_s: f64, len_s: f64) -> Result<Vec<Vec<f64>>, PipelineError> {
    let fs = rec.sample_hz;
    let w0 = (start_s * fs).round() as usize;
    let n = (len_s * fs).round() as usize;
    let end = w0 + n;
    if n == 0 || end > rec.n_samples() {
        return Err(PipelineError::Config(format!(
            "coherency window [{w0}, {end}) does not fit a {}-sample record",
            rec.n_samples()
        )));
    }
    Ok(rec
        .gen_speed
        .iter()
        .map(|ch| ch[w0..end].to_vec())
        .collect())
}

/// Regression blocks grouped by owning area, areas ascending, pairs in
/// (gen, tie) order within an area.
pub type AreaBlocks = Vec<(usize, Vec<RegressionBlock>)>;

/// Slices each generator's probe window out of the identification record
/// and builds one regression block per (tie, gen) pair.
///
/// Window starts replicate the probe injection's own sample math, so the
/// sliced input column is exactly the probe sequence. Detrending removes
/// the mean of the pre-activity samples from the tie channels, which are
/// also rescaled from MW to per unit on the system base.
pub fn area_blocks(
    record: &SimRecord,
    cfg: &PipelineConfig,
    assignment: &[usize],
    s_base: f64,
) -> Result<AreaBlocks, PipelineError> {
    let n_gens = record.n_gens();
    if assignment.len() != n_gens {
        return Err(PipelineError::Config(format!(
            "grouping covers {} generators, record has {n_gens}",
            assignment.len()
        )));
    }
    let fs = record.sample_hz;
    let k = cfg.sysid.k;
    let n = cfg.sysid.n;
    let probe = &cfg.sysid.probe;
    let total = record.n_samples();
    let quiet = if cfg.sysid.detrend {
        ((cfg.first_activity_s() * fs).floor() as usize).min(total)
    } else {
        0
    };
    let tie_mean: Vec<f64> = record
        .tie_p
        .iter()
        .map(|ch| {
            if quiet == 0 {
                0.0
            } else {
                ch[..quiet].iter().sum::<f64>() / quiet as f64
            }
        })
        .collect();

    let d = cfg.sysid.decimate.max(1);
    let mut by_area: BTreeMap<usize, Vec<RegressionBlock>> = BTreeMap::new();
    for g in 0..n_gens {
        // same rounding as the probe injection uses for its window start
        let w_start = ((probe.start_s + g as f64 * probe.segment_s) * fs).round() as usize;
        let end = w_start + d * (n + k);
        if end > total {
            return Err(PipelineError::Config(format!(
                "probe window for gen {} needs samples [{w_start}, {end}) \
                 but the record holds {total}; extend ident_t_end",
                g + 1
            )));
        }
        let u: Vec<f64> = record.gen_u[g][w_start..end].iter().step_by(d).copied().collect();
        for m in 0..record.n_ties() {
            let p: Vec<f64> = record.tie_p[m][w_start..end]
                .iter()
                .step_by(d)
                .map(|v| (v - tie_mean[m]) / s_base)
                .collect();
            let pair = PairId {
                tie: m + 1,
                gen: g + 1,
            };
            let block = build_regression(pair, &p, &u, k, n, false)?;
            by_area.entry(assignment[g]).or_default().push(block);
        }
    }
    Ok(by_area.into_iter().collect())
}

/// Convergence record of one identification run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifyOutcome {
    pub converged: bool,
    pub iterations: usize,
    pub r_primal: f64,
    pub s_dual: f64,
    pub trace: Vec<ConsensusState>,
}

/// Swappable identification backend; the distributed driver substitutes
/// a networked session for the in-process solve.
pub type IdentifyFn<'a> =
    Box<dyn FnOnce(&AreaBlocks) -> Result<(ArxEstimate, IdentifyOutcome), PipelineError> + 'a>;

pub fn identify_in_process(
    blocks: &AreaBlocks,
    admm: &AdmmSettings,
    ts: f64,
) -> Result<(ArxEstimate, IdentifyOutcome), PipelineError> {
    let mut areas = Vec::with_capacity(blocks.len());
    for (q, bl) in blocks {
        areas.push(AreaState::init(*q, bl.clone(), admm.rho)?);
    }
    let out = run_consensus(
        &mut areas,
        admm.rho,
        admm.eps_abs,
        admm.eps_rel,
        admm.max_iter,
        true,
        ts,
    )?;
    let outcome = IdentifyOutcome {
        converged: out.converged,
        iterations: out.state.iter,
        r_primal: out.state.r_primal,
        s_dual: out.state.s_dual,
        trace: out.trace,
    };
    Ok((out.estimate, outcome))
}

/// Rebuilds the mode/residue table and loop ranking from the stored
/// estimate; deterministic, so later stages re-derive instead of
/// persisting the table.
pub fn derive_ranking(dir: &Path) -> Result<(ModeResidueTable, LoopRanking), PipelineError> {
    let estimate: ArxEstimate = read_json(dir, IDENTIFIED_JSON)?;
    let pairs: Vec<(PairId, Vec<f64>)> = estimate
        .pairs
        .iter()
        .copied()
        .zip(estimate.b.iter().cloned())
        .collect();
    let table = assemble_table(&estimate.a, &pairs, estimate.ts)?;
    let ranking = rank_loops(&table, INTER_AREA_BAND)?;
    Ok((table, ranking))
}

/// Sizes the wide-area compensator for one ranked loop.
///
/// The stored residue lives on the discrete model; the design works on
/// the continuous partial-fraction weight, recovered through the
/// zero-order-hold relation `R_d = R_c (e^{lambda Ts} - 1) / lambda`,
/// then rotated by the feedback delay the loop will see. The delay is
/// quantized to whole samples exactly like the simulator applies it.
pub fn design_for_pair(
    table: &ModeResidueTable,
    ranking: &LoopRanking,
    pair: PairId,
    wadc: &WadcSettings,
    delay_ms: f64,
    loop_ts: f64,
) -> Result<WadcParams, PipelineError> {
    let entry = table
        .entries
        .iter()
        .find(|e| e.mode_idx == ranking.mode_idx && e.pair == pair)
        .ok_or_else(|| {
            PipelineError::Config(format!("no residue entry for tie{} gen{}", pair.tie, pair.gen))
        })?;
    let mode = ranking.mode.mode;
    let lambda = mode.lambda();
    let ts = table.ts;
    let r_c = entry.residue * lambda / ((lambda * ts).exp() - Complex64::new(1.0, 0.0));
    let n_d = (delay_ms / 1000.0 / loop_ts).round();
    let r_eff = r_c * (-lambda * (n_d * loop_ts)).exp();
    Ok(design(
        r_eff,
        mode,
        wadc.zeta_target,
        wadc.t_w,
        wadc.phi_max_deg,
        (wadc.v_min, wadc.v_max),
    )?)
}

/// Relative l2 deviation of `actual` from `baseline`.
pub fn relative_error(baseline: &[f64], actual: &[f64]) -> Result<f64, PipelineError> {
    if baseline.len() != actual.len() {
        return Err(PipelineError::Config(format!(
            "relative error needs equal lengths, got {} and {}",
            baseline.len(),
            actual.len()
        )));
    }
    let norm: f64 = baseline.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(PipelineError::Config(
            "relative error is undefined against an all-zero baseline".into(),
        ));
    }
    let diff: f64 = baseline
        .iter()
        .zip(actual)
        .map(|(b, a)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}

/// Sample index of the deepest trough (global minimum) at or after
/// `after_s`; case studies compare deviations at this point.
fn trough_index(y: &[f64], time: &[f64], after_s: f64) -> Option<usize> {
    let mut best = None;
    let mut low = f64::INFINITY;
    for (i, (&t, &v)) in time.iter().zip(y).enumerate() {
        if t >= after_s && v < low {
            low = v;
            best = Some(i);
        }
    }
    best
}

fn disturbance_clear_s(d: &Disturbance) -> f64 {
    match d.kind {
        DisturbanceKind::Pulse => d.t_start + d.duration,
        DisturbanceKind::Impulse | DisturbanceKind::LoadStep => d.t_start,
    }
}

/// Oscillatory closed-loop mode nearest to `target_lambda` in the
/// continuous plane.
fn tracked_mode(modes: &[Mode], target_lambda: Complex64) -> Option<Mode> {
    modes
        .iter()
        .filter(|m| m.is_oscillatory())
        .min_by(|a, b| {
            let da = (a.lambda() - target_lambda).norm();
            let db = (b.lambda() - target_lambda).norm();
            da.total_cmp(&db)
        })
        .copied()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrackedMode {
    pub f_hz: f64,
    pub zeta: f64,
}

/// Verification result of one controller case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case: CaseKind,
    /// Every closed-loop mode decays and the simulation stayed finite.
    pub stable: bool,
    /// Target mode tracked into the closed loop; absent if the loop
    /// leaves no oscillatory mode near it.
    pub mode: Option<TrackedMode>,
    /// l2 deviation of the selected tie flow from the uncontrolled
    /// baseline, relative to the baseline energy.
    pub relative_error: f64,
    /// Reduction of the |tie deviation| at the baseline's deepest
    /// post-disturbance trough, percent.
    pub trough_reduction_pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelInfo {
    pub spec: ModelSpec,
    pub n_gens: usize,
    pub n_ties: usize,
    pub n_states: usize,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifySummary {
    pub converged: bool,
    pub iterations: usize,
    pub r_primal: f64,
    pub s_dual: f64,
    pub order: usize,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopInfo {
    pub tie: usize,
    pub gen: usize,
    #[serde(rename = "absR")]
    pub abs_r: f64,
    #[serde(rename = "argR")]
    pub arg_r_deg: f64,
}

impl From<&RankedLoop> for LoopInfo {
    fn from(l: &RankedLoop) -> Self {
        Self {
            tie: l.pair.tie,
            gen: l.pair.gen,
            abs_r: l.abs_r,
            arg_r_deg: l.arg_r_deg,
        }
    }
}

/// One-file digest of a full run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub model: ModelInfo,
    pub sample_hz: f64,
    pub delay_ms: f64,
    pub grouping: GroupReport,
    pub identification: IdentifySummary,
    /// Least-damped in-band mode of the identified model, open loop.
    pub target_mode: TrackedMode,
    pub selected_loop: LoopInfo,
    pub weak_loop: Option<LoopInfo>,
    pub wadc: WadcParams,
    pub wadc_weak: Option<WadcParams>,
    pub cases: Vec<CaseSummary>,
}

/// Runs both open-loop simulations and stores them with the resolved
/// configuration.
pub fn stage_simulate(
    cfg: &PipelineConfig,
    dir: &Path,
) -> Result<(SimRecord, SimRecord), PipelineError> {
    fs::create_dir_all(dir)?;
    write_json(dir, CONFIG_JSON, cfg)?;
    let model = build_model(&cfg.model)?;
    let ringdown = simulate(&model, &cfg.scenario, Vec::new())?;
    write_record_to_path(&ringdown, &dir.join(RINGDOWN_CSV))?;
    let probe_scn = cfg.probe_scenario(model.n_gens());
    let probe = simulate(&model, &probe_scn, Vec::new())?;
    write_record_to_path(&probe, &dir.join(PROBE_CSV))?;
    Ok((ringdown, probe))
}

/// Groups generators by ringdown coherency.
pub fn stage_group(cfg: &PipelineConfig, dir: &Path) -> Result<GroupReport, PipelineError> {
    let record = read_record(dir, RINGDOWN_CSV)?;
    let windows = speed_windows(
        &record,
        cfg.coherency.window_start_s,
        cfg.coherency.window_len_s,
    )?;
    let sigma = cfg
        .coherency
        .sigma
        .unwrap_or_else(|| default_sigma(&windows));
    let landmarks = cfg.coherency.landmarks.unwrap_or(windows.len());
    let grouping = group(&windows, cfg.coherency.k, sigma, landmarks, cfg.coherency.seed)?;
    let report = GroupReport {
        sigma,
        k: grouping.k,
        landmarks,
        seed: cfg.coherency.seed,
        assignment: grouping.assignment,
    };
    write_json(dir, GROUPING_JSON, &report)?;
    Ok(report)
}

/// Builds every area's regression blocks from the stored probe record
/// and grouping; the distributed driver's workers call this too, so both
/// paths feed identical numbers into the solve.
pub fn load_identify_inputs(
    cfg: &PipelineConfig,
    dir: &Path,
) -> Result<AreaBlocks, PipelineError> {
    let model = build_model(&cfg.model)?;
    let record = read_record(dir, PROBE_CSV)?;
    let grouping: GroupReport = read_json(dir, GROUPING_JSON)?;
    area_blocks(&record, cfg, &grouping.assignment, model.s_base_mva)
}

/// Identifies the shared-denominator model, in process by default or
/// through the supplied backend.
pub fn stage_identify(
    cfg: &PipelineConfig,
    dir: &Path,
    backend: Option<IdentifyFn<'_>>,
) -> Result<(ArxEstimate, IdentifyOutcome), PipelineError> {
    let blocks = load_identify_inputs(cfg, dir)?;
    let ts = cfg.sysid.decimate.max(1) as f64 / cfg.scenario.sample_hz;
    let (estimate, outcome) = match backend {
        Some(f) => f(&blocks)?,
        None => identify_in_process(&blocks, &cfg.admm, ts)?,
    };
    write_json(dir, IDENTIFIED_JSON, &estimate)?;
    write_json(dir, TRACE_JSON, &outcome)?;
    Ok((estimate, outcome))
}

/// Ranks candidate loops at the least-damped in-band mode.
pub fn stage_rank(dir: &Path) -> Result<(ModeResidueTable, LoopRanking), PipelineError> {
    let (table, ranking) = derive_ranking(dir)?;
    write_json(
        dir,
        MODAL_JSON,
        &modal::report(&table, &ranking, INTER_AREA_BAND),
    )?;
    Ok((table, ranking))
}

#[derive(Debug, Clone)]
pub struct DesignOutcome {
    pub strong: RankedLoop,
    pub weak: Option<RankedLoop>,
    pub params: WadcParams,
    pub weak_params: Option<WadcParams>,
}

/// Designs the wide-area compensator for the strongest loop, and for the
/// weakest distinct loop when one exists.
pub fn stage_design(cfg: &PipelineConfig, dir: &Path) -> Result<DesignOutcome, PipelineError> {
    let (table, ranking) = derive_ranking(dir)?;
    let strong = ranking
        .loops
        .first()
        .cloned()
        .ok_or_else(|| PipelineError::Config("ranking holds no loops".into()))?;
    let loop_ts = 1.0 / cfg.scenario.sample_hz;
    let params = design_for_pair(&table, &ranking, strong.pair, &cfg.wadc, cfg.delay_ms, loop_ts)?;
    write_json(dir, WADC_JSON, &params)?;
    let weak = ranking
        .loops
        .last()
        .filter(|l| l.pair != strong.pair)
        .cloned();
    let weak_params = match &weak {
        Some(l) => {
            let mut p = design_for_pair(&table, &ranking, l.pair, &cfg.wadc, cfg.delay_ms, loop_ts)?;
            // equal actuation budget: the weak-loop comparison isolates
            // channel strength, so its gain may not exceed the strong
            // loop's (the raw formula scales as 1/|R| and would rail)
            if p.k_wadc.abs() > params.k_wadc.abs() {
                p.k_wadc = p.k_wadc.signum() * params.k_wadc.abs();
            }
            // the comparison loop must itself be a viable controller:
            // back the gain off until the closed loop is stable
            let model = build_model(&cfg.model)?;
            for _ in 0..8 {
                let att = wadc_attachment(
                    "wadc-weak",
                    &p,
                    l.pair,
                    cfg.delay_ms,
                    loop_ts,
                    model.s_base_mva,
                )?;
                let modes = closed_loop_modes(&model, loop_ts, &[att])?;
                if modes.iter().all(|m| m.sigma < 0.0) {
                    break;
                }
                p.k_wadc *= 0.5;
            }
            write_json(dir, WADC_WEAK_JSON, &p)?;
            Some(p)
        }
        None => None,
    };
    if weak.is_none() && cfg.cases.contains(&CaseKind::WadcWeak) {
        return Err(PipelineError::Config(
            "cases: wadc_weak needs more than one candidate loop".into(),
        ));
    }
    Ok(DesignOutcome {
        strong,
        weak,
        params,
        weak_params,
    })
}

fn wadc_attachment(
    label: &str,
    params: &WadcParams,
    pair: PairId,
    delay_ms: f64,
    ts: f64,
    s_base: f64,
) -> Result<AttachedController, PipelineError> {
    Ok(AttachedController {
        label: label.to_string(),
        controller: realize(params, ts)?,
        input: MeasChannel::Tie(pair.tie - 1),
        input_scale: 1.0 / s_base,
        output_gen: pair.gen - 1,
        delay_ms,
    })
}

fn pss_attachments(
    n_gens: usize,
    gain: f64,
    ts: f64,
) -> Result<Vec<AttachedController>, PipelineError> {
    let mut out = Vec::with_capacity(n_gens);
    for g in 0..n_gens {
        out.push(AttachedController {
            label: format!("pss{}", g + 1),
            controller: speed_damping_pss(gain, ts)?,
            input: MeasChannel::Speed(g),
            input_scale: 1.0 / OMEGA_S,
            output_gen: g,
            delay_ms: 0.0,
        });
    }
    Ok(out)
}

fn case_attachments(
    case: CaseKind,
    cfg: &PipelineConfig,
    model: &LinearGridModel,
    design: &DesignOutcome,
    ts: f64,
) -> Result<Vec<AttachedController>, PipelineError> {
    let strong = || {
        wadc_attachment(
            "wadc",
            &design.params,
            design.strong.pair,
            cfg.delay_ms,
            ts,
            model.s_base_mva,
        )
    };
    match case {
        CaseKind::ExciterOnly => Ok(Vec::new()),
        CaseKind::Pss => pss_attachments(model.n_gens(), cfg.pss_gain, ts),
        CaseKind::WadcStrong => Ok(vec![strong()?]),
        CaseKind::WadcWeak => {
            let (pair, params) = match (&design.weak, &design.weak_params) {
                (Some(l), Some(p)) => (l.pair, p),
                _ => {
                    return Err(PipelineError::Config(
                        "cases: wadc_weak needs more than one candidate loop".into(),
                    ))
                }
            };
            Ok(vec![wadc_attachment(
                "wadc_weak",
                params,
                pair,
                cfg.delay_ms,
                ts,
                model.s_base_mva,
            )?])
        }
        CaseKind::PssWadc => {
            let mut atts = pss_attachments(model.n_gens(), cfg.pss_gain, ts)?;
            atts.push(strong()?);
            Ok(atts)
        }
    }
}

/// Simulates every configured case against the ringdown scenario and
/// scores it against the uncontrolled baseline.
pub fn stage_closedloop(
    cfg: &PipelineConfig,
    dir: &Path,
    design: &DesignOutcome,
) -> Result<Vec<CaseSummary>, PipelineError> {
    let model = build_model(&cfg.model)?;
    let ts = 1.0 / cfg.scenario.sample_hz;
    let tie_idx = design.strong.pair.tie - 1;
    let target_lambda = {
        let (_, ranking) = derive_ranking(dir)?;
        ranking.mode.mode.lambda()
    };
    let baseline = simulate(&model, &cfg.scenario, Vec::new())?;
    let after_s = cfg
        .scenario
        .disturbance
        .as_ref()
        .map(disturbance_clear_s)
        .unwrap_or(0.0);
    let base_tie = &baseline.tie_p[tie_idx];
    let trough_idx = trough_index(base_tie, &baseline.time, after_s);

    let mut out = Vec::with_capacity(cfg.cases.len());
    for &case in &cfg.cases {
        let atts = case_attachments(case, cfg, &model, design, ts)?;
        let rec = if atts.is_empty() {
            baseline.clone()
        } else {
            simulate(&model, &cfg.scenario, atts.clone())?
        };
        write_record_to_path(&rec, &dir.join(closedloop_csv_name(case)))?;
        let modes = closed_loop_modes(&model, ts, &atts)?;
        let finite = rec.tie_p[tie_idx].iter().all(|v| v.is_finite());
        let stable = finite && modes.iter().all(|m| m.sigma < 0.0);
        let mode = tracked_mode(&modes, target_lambda).map(|m| TrackedMode {
            f_hz: m.frequency_hz,
            zeta: m.zeta,
        });
        let rel = relative_error(base_tie, &rec.tie_p[tie_idx])?;
        let trough_reduction_pct = match trough_idx {
            Some(i) if base_tie[i] != 0.0 => {
                (1.0 - rec.tie_p[tie_idx][i].abs() / base_tie[i].abs()) * 100.0
            }
            _ => 0.0,
        };
        out.push(CaseSummary {
            case,
            stable,
            mode,
            relative_error: rel,
            trough_reduction_pct,
        });
    }
    Ok(out)
}

pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<Summary, PipelineError> {
    run_pipeline_with(cfg, out_dir, None)
}

/// Full run with a swappable identification backend; every stage artifact
/// lands in `out_dir`, capped by the summary digest.
pub fn run_pipeline_with(
    cfg: &PipelineConfig,
    out_dir: &Path,
    backend: Option<IdentifyFn<'_>>,
) -> Result<Summary, PipelineError> {
    cfg.validate()?;
    stage_simulate(cfg, out_dir)?;
    let grouping = stage_group(cfg, out_dir)?;
    let (estimate, ident) = stage_identify(cfg, out_dir, backend)?;
    let (_, ranking) = stage_rank(out_dir)?;
    let design = stage_design(cfg, out_dir)?;
    let cases = stage_closedloop(cfg, out_dir, &design)?;

    let model = build_model(&cfg.model)?;
    let summary = Summary {
        model: ModelInfo {
            spec: cfg.model.clone(),
            n_gens: model.n_gens(),
            n_ties: model.n_ties(),
            n_states: model.n_states(),
            fingerprint: format!("{:016x}", model.fingerprint()),
        },
        sample_hz: cfg.scenario.sample_hz,
        delay_ms: cfg.delay_ms,
        grouping,
        identification: IdentifySummary {
            converged: ident.converged,
            iterations: ident.iterations,
            r_primal: ident.r_primal,
            s_dual: ident.s_dual,
            order: estimate.a.len(),
            n_pairs: estimate.pairs.len(),
        },
        target_mode: TrackedMode {
            f_hz: ranking.mode.mode.frequency_hz,
            zeta: ranking.mode.mode.zeta,
        },
        selected_loop: LoopInfo::from(&design.strong),
        weak_loop: design.weak.as_ref().map(LoopInfo::from),
        wadc: design.params.clone(),
        wadc_weak: design.weak_params.clone(),
        cases,
    };
    write_json(out_dir, SUMMARY_JSON, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReportManifest {
    tie: usize,
    cases: Vec<String>,
    files: Vec<String>,
}

/// Renders comparison tables from a finished run into `report/`:
/// per-case relative machine speeds, the selected tie flow across cases,
/// and a manifest. Rerunning regenerates identical bytes.
pub fn write_report(run_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let summary: Summary = read_json(run_dir, SUMMARY_JSON)?;
    let mut missing = Vec::new();
    let mut recs = Vec::new();
    for cs in &summary.cases {
        let name = closedloop_csv_name(cs.case);
        match read_record(run_dir, &name) {
            Ok(rec) => recs.push((cs.case, rec)),
            Err(PipelineError::MissingArtifact { name }) => missing.push(name),
            Err(e) => return Err(e),
        }
    }
    if !missing.is_empty() {
        return Err(PipelineError::MissingArtifact {
            name: missing.join(", "),
        });
    }
    let dir = run_dir.join(REPORT_DIR);
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();

    // machine speeds relative to machine 1 expose the inter-area swing
    for (case, rec) in &recs {
        let name = format!("speed_rel_{}.csv", case.label());
        let mut text = String::from("time");
        for g in 1..rec.n_gens() {
            text.push_str(&format!(",gen{}.relspeed", g + 1));
        }
        text.push('\n');
        for s in 0..rec.n_samples() {
            text.push_str(&format!("{:.16e}", rec.time[s]));
            for g in 1..rec.n_gens() {
                text.push_str(&format!(
                    ",{:.16e}",
                    rec.gen_speed[g][s] - rec.gen_speed[0][s]
                ));
            }
            text.push('\n');
        }
        fs::write(dir.join(&name), text)?;
        files.push(name);
    }

    let tie_idx = summary.selected_loop.tie - 1;
    let mut text = String::from("time");
    for (case, _) in &recs {
        text.push_str(&format!(",{}", case.label()));
    }
    text.push('\n');
    let n_samples = recs.iter().map(|(_, r)| r.n_samples()).min().unwrap_or(0);
    for s in 0..n_samples {
        text.push_str(&format!("{:.16e}", recs[0].1.time[s]));
        for (_, rec) in &recs {
            text.push_str(&format!(",{:.16e}", rec.tie_p[tie_idx][s]));
        }
        text.push('\n');
    }
    fs::write(dir.join("tie_compare.csv"), text)?;
    files.push("tie_compare.csv".to_string());

    let manifest = ReportManifest {
        tie: summary.selected_loop.tie,
        cases: summary.cases.iter().map(|c| c.case.label().to_string()).collect(),
        files: files.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    files.push("manifest.json".to_string());

    Ok(files.into_iter().map(|f| dir.join(f)).collect())
}
