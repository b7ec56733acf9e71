//! Modal analysis of identified discrete transfer functions: pole
//! extraction, partial-fraction residues, and ranking of candidate
//! control loops by residue magnitude.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{monic_roots, polyder, polyval};
use crate::mode::Mode;

/// Minimum pairwise pole distance below which partial fractions are
/// refused (repeated poles have no simple-residue expansion).
pub const SIMPLE_POLE_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ModalError {
    #[error("empty denominator coefficient vector")]
    EmptyDenominator,
    #[error("numerator must have k+1 = {expected} coefficients, got {got}")]
    NumeratorLength { expected: usize, got: usize },
    #[error("pole at the origin; continuous mapping ln(p)/Ts is undefined")]
    ZeroPole,
    #[error("repeated poles (pairwise distance {dist:.3e} below {tol:.0e}); residues undefined")]
    RepeatedPoles { dist: f64, tol: f64 },
    #[error("sample period must be positive, got {0}")]
    BadSamplePeriod(f64),
    #[error("no oscillatory mode inside the band [{lo}, {hi}] Hz")]
    NoModeInBand { lo: f64, hi: f64 },
    #[error("residue table has no loop entries for the selected mode")]
    EmptyTable,
}

/// A retained discrete pole together with its continuous-time mode.
/// Conjugate pairs are stored once, upper half plane.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModeEntry {
    pub pole: Complex64,
    pub mode: Mode,
}

/// Identifies one candidate control loop: tie-line measurement `tie`
/// driving generator input `gen`. Indices are 1-based, matching the
/// `tie<m>.p` / `gen<n>.u` channel names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairId {
    pub tie: usize,
    pub gen: usize,
}

/// Residue of one (tie, gen) pair at one retained mode.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ResidueEntry {
    pub pair: PairId,
    pub mode_idx: usize,
    pub residue: Complex64,
}

/// Direct-term remainder of one pair (the `b0` constant of an equal-degree
/// transfer; zero for strictly proper systems).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairRemainder {
    pub pair: PairId,
    pub remainder: f64,
}

/// Full mode/residue bookkeeping for a set of (tie, gen) pairs sharing one
/// denominator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeResidueTable {
    /// Sample period of the discrete model the table was built from.
    pub ts: f64,
    /// Retained modes (conjugate pairs once, sorted by frequency).
    pub modes: Vec<ModeEntry>,
    /// One entry per pair per retained mode.
    pub entries: Vec<ResidueEntry>,
    /// Direct-term remainder per pair.
    pub remainders: Vec<PairRemainder>,
}

/// Strength classification of a ranked loop: top third of the ranking is
/// `Strong`, bottom third `Weak`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopClass {
    Strong,
    Middle,
    Weak,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedLoop {
    pub pair: PairId,
    pub abs_r: f64,
    pub arg_r_deg: f64,
    pub class: LoopClass,
}

/// Ranking of candidate loops for the selected (least-damped in-band)
/// mode, strongest first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopRanking {
    pub mode_idx: usize,
    pub mode: ModeEntry,
    pub loops: Vec<RankedLoop>,
}

/// Roots of `z^k + a1 z^(k-1) + ... + ak` mapped to continuous modes.
///
/// `a` is the denominator in the `1 + a1 z^-1 + ...` convention (the
/// exposed estimate convention), `ts` the sample period. Conjugate pairs
/// are folded once (upper half plane); result sorted by frequency, then
/// decay rate.
pub fn poles(a: &[f64], ts: f64) -> Result<Vec<ModeEntry>, ModalError> {
    if a.is_empty() {
        return Err(ModalError::EmptyDenominator);
    }
    if !(ts > 0.0) {
        return Err(ModalError::BadSamplePeriod(ts));
    }
    let roots = monic_roots(a);
    let mut out = Vec::new();
    for p in roots {
        if p.norm() < 1e-300 {
            return Err(ModalError::ZeroPole);
        }
        if p.im < 0.0 {
            // real-coefficient polynomial: the conjugate partner is kept
            continue;
        }
        out.push(ModeEntry {
            pole: p,
            mode: Mode::from_discrete_pole(p, ts),
        });
    }
    out.sort_by(|x, y| {
        x.mode
            .frequency_hz
            .partial_cmp(&y.mode.frequency_hz)
            .unwrap()
            .then(x.mode.sigma.partial_cmp(&y.mode.sigma).unwrap())
    });
    Ok(out)
}

/// Partial fractions of one pair's numerator `b` over the shared
/// denominator `a`:
///
/// `B(z)/A(z) = b0 + sum_i R_i / (z - p_i)` with
/// `R_i = B(p_i) / A'(p_i)` at the simple poles, where
/// `A(z) = z^k + a1 z^(k-1) + ...` and `B(z) = b0 z^k + ... + bk`.
///
/// Returns the retained (upper half plane) residues aligned with
/// [`poles`] plus the direct-term remainder `b0`. Conjugate residues are
/// the conjugates of the retained ones.
pub fn residues(
    a: &[f64],
    b: &[f64],
    ts: f64,
) -> Result<(Vec<ModeEntry>, Vec<Complex64>, f64), ModalError> {
    if b.len() != a.len() + 1 {
        return Err(ModalError::NumeratorLength {
            expected: a.len() + 1,
            got: b.len(),
        });
    }
    let all_roots = monic_roots(a);
    check_simple(&all_roots)?;
    let retained = poles(a, ts)?;
    let mut a_poly = Vec::with_capacity(a.len() + 1);
    a_poly.push(1.0);
    a_poly.extend_from_slice(a);
    let a_der = polyder(&a_poly);
    let res: Vec<Complex64> = retained
        .iter()
        .map(|entry| polyval(b, entry.pole) / polyval(&a_der, entry.pole))
        .collect();
    Ok((retained, res, b[0]))
}

fn check_simple(roots: &[Complex64]) -> Result<(), ModalError> {
    // computed roots of a true double pole separate by about sqrt(eps),
    // which can exceed the contract tolerance; widen the reject band to
    // the numerical separation floor so genuine repeats are still caught
    let scale = roots.iter().fold(1.0f64, |m, r| m.max(r.norm()));
    let tol = SIMPLE_POLE_TOL.max(1e-7 * scale);
    for i in 0..roots.len() {
        for j in (i + 1)..roots.len() {
            let d = (roots[i] - roots[j]).norm();
            if d <= tol {
                return Err(ModalError::RepeatedPoles { dist: d, tol });
            }
        }
    }
    Ok(())
}

/// Builds the full table for a set of pairs sharing the denominator `a`.
pub fn assemble_table(
    a: &[f64],
    pairs: &[(PairId, Vec<f64>)],
    ts: f64,
) -> Result<ModeResidueTable, ModalError> {
    let mut modes = Vec::new();
    let mut entries = Vec::new();
    let mut remainders = Vec::new();
    for (idx, (pair, b)) in pairs.iter().enumerate() {
        let (m, res, rem) = residues(a, b, ts)?;
        if idx == 0 {
            modes = m;
        }
        for (mode_idx, r) in res.into_iter().enumerate() {
            entries.push(ResidueEntry {
                pair: *pair,
                mode_idx,
                residue: r,
            });
        }
        remainders.push(PairRemainder {
            pair: *pair,
            remainder: rem,
        });
    }
    Ok(ModeResidueTable {
        ts,
        modes,
        entries,
        remainders,
    })
}

/// Selects the least-damped oscillatory mode inside `band` (Hz) and ranks
/// all pairs by residue magnitude at that mode, largest first. Ties sort
/// by (tie, gen). Top third of the ranking is classified `Strong`, bottom
/// third `Weak`.
pub fn rank_loops(table: &ModeResidueTable, band: (f64, f64)) -> Result<LoopRanking, ModalError> {
    // peak residue magnitude per mode, for the significance screen below
    let mut peak_r = vec![0.0f64; table.modes.len()];
    for e in &table.entries {
        peak_r[e.mode_idx] = peak_r[e.mode_idx].max(e.residue.norm());
    }
    let mut candidates: Vec<(usize, &ModeEntry)> = table
        .modes
        .iter()
        .enumerate()
        .filter(|(_, e)| {
            // identified tables of generous order grow artifact poles;
            // a genuine target is oscillatory, decaying, and observable
            e.mode.is_oscillatory()
                && e.mode.zeta > 0.0
                && e.mode.frequency_hz >= band.0
                && e.mode.frequency_hz <= band.1
        })
        .collect();
    let strongest = candidates
        .iter()
        .map(|(i, _)| peak_r[*i])
        .fold(0.0f64, f64::max);
    candidates.retain(|(i, _)| peak_r[*i] >= 0.05 * strongest);
    if candidates.is_empty() {
        return Err(ModalError::NoModeInBand {
            lo: band.0,
            hi: band.1,
        });
    }
    candidates.sort_by(|(_, x), (_, y)| {
        x.mode
            .zeta
            .partial_cmp(&y.mode.zeta)
            .unwrap()
            .then(x.mode.frequency_hz.partial_cmp(&y.mode.frequency_hz).unwrap())
    });
    let (mode_idx, mode) = (candidates[0].0, *candidates[0].1);

    let mut rows: Vec<(PairId, Complex64)> = table
        .entries
        .iter()
        .filter(|e| e.mode_idx == mode_idx)
        .map(|e| (e.pair, e.residue))
        .collect();
    if rows.is_empty() {
        return Err(ModalError::EmptyTable);
    }
    rows.sort_by(|(pa, ra), (pb, rb)| {
        rb.norm()
            .partial_cmp(&ra.norm())
            .unwrap()
            .then(pa.cmp(pb))
    });

    let n = rows.len();
    let side = n.div_ceil(3);
    let loops = rows
        .into_iter()
        .enumerate()
        .map(|(i, (pair, r))| {
            let class = if i < side {
                LoopClass::Strong
            } else if i >= n.saturating_sub(side) && i >= side {
                LoopClass::Weak
            } else {
                LoopClass::Middle
            };
            RankedLoop {
                pair,
                abs_r: r.norm(),
                arg_r_deg: r.arg().to_degrees(),
                class,
            }
        })
        .collect();

    Ok(LoopRanking {
        mode_idx,
        mode,
        loops,
    })
}

/// JSON report emitted by the ranking stage:
/// `{modes: [{f, zeta, pole}], loops: [{tie, gen, absR, argR, f}], selected: {tie, gen}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalReport {
    pub modes: Vec<ReportMode>,
    pub loops: Vec<ReportLoop>,
    pub selected: PairId,
    pub band: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportMode {
    pub f: f64,
    pub zeta: f64,
    pub pole: Complex64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportLoop {
    pub tie: usize,
    pub gen: usize,
    #[serde(rename = "absR")]
    pub abs_r: f64,
    #[serde(rename = "argR")]
    pub arg_r_deg: f64,
    pub f: f64,
    pub class: LoopClass,
}

pub fn report(table: &ModeResidueTable, ranking: &LoopRanking, band: (f64, f64)) -> ModalReport {
    ModalReport {
        modes: table
            .modes
            .iter()
            .map(|e| ReportMode {
                f: e.mode.frequency_hz,
                zeta: e.mode.zeta,
                pole: e.pole,
            })
            .collect(),
        loops: ranking
            .loops
            .iter()
            .map(|l| ReportLoop {
                tie: l.pair.tie,
                gen: l.pair.gen,
                abs_r: l.abs_r,
                arg_r_deg: l.arg_r_deg,
                f: ranking.mode.mode.frequency_hz,
                class: l.class,
            })
            .collect(),
        selected: ranking.loops[0].pair,
        band: [band.0, band.1],
    }
}
