//! Reference modal quantities computed directly from the state matrices,
//! independent of any identification: continuous modes, discrete-domain
//! residues of every (tie, gen) channel, and closed-loop modes with
//! sampled controllers in the loop.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::linalg::{eigenvalues_sorted, zoh_discretize};
use crate::modal::{ModeEntry, ModeResidueTable, PairId, PairRemainder, ResidueEntry};
use crate::mode::Mode;

use super::sim::{AttachedController, MeasChannel};
use super::{GridError, LinearGridModel};

/// Continuous electromechanical modes of the model, conjugate pairs
/// folded once, sorted by frequency then decay rate.
pub fn true_modes(model: &LinearGridModel) -> Vec<Mode> {
    let mut modes: Vec<Mode> = eigenvalues_sorted(&model.a)
        .into_iter()
        .filter(|e| e.im >= 0.0)
        .map(Mode::from_lambda)
        .collect();
    modes.sort_by(|a, b| {
        a.frequency_hz
            .partial_cmp(&b.frequency_hz)
            .unwrap()
            .then(a.sigma.partial_cmp(&b.sigma).unwrap())
    });
    modes
}

/// Least-damped oscillatory mode with frequency inside `band` (Hz).
pub fn least_damped_in_band(modes: &[Mode], band: (f64, f64)) -> Option<Mode> {
    modes
        .iter()
        .filter(|m| m.is_oscillatory() && m.frequency_hz >= band.0 && m.frequency_hz <= band.1)
        .min_by(|a, b| a.zeta.partial_cmp(&b.zeta).unwrap())
        .copied()
}

/// Exact discrete-domain residue table of the zero-order-hold
/// discretization at sample period `ts`: for every tie row and generator
/// input, partial fractions of `C_tie (zI - A_d)^{-1} B_d` over the
/// shared characteristic polynomial.
///
/// Tie flows scale to per unit on the machine base so the table is
/// directly comparable with estimates identified from per-unit records.
pub fn true_residues(model: &LinearGridModel, ts: f64) -> Result<ModeResidueTable, GridError> {
    model.validate()?;
    let (a_d, b_d) = zoh_discretize(&model.a, &model.b_u, ts)?;
    let n = a_d.nrows();

    let poles = eigenvalues_sorted(&a_d);
    let mut min_dist = f64::INFINITY;
    for i in 0..poles.len() {
        for j in (i + 1)..poles.len() {
            min_dist = min_dist.min((poles[i] - poles[j]).norm());
        }
    }
    if min_dist <= 1e-8 {
        return Err(GridError::Defective { dist: min_dist });
    }

    let mut retained: Vec<ModeEntry> = poles
        .iter()
        .filter(|p| p.im >= 0.0)
        .map(|&p| ModeEntry {
            pole: p,
            mode: Mode::from_discrete_pole(p, ts),
        })
        .collect();
    retained.sort_by(|a, b| {
        a.mode
            .frequency_hz
            .partial_cmp(&b.mode.frequency_hz)
            .unwrap()
            .then(a.mode.sigma.partial_cmp(&b.mode.sigma).unwrap())
    });

    // Residues come from eigentriples, R = (c v)(w' b) / (w' v), one
    // right/left pair per retained pole. Polynomial (adjugate) routes
    // cancel catastrophically once several discrete poles cluster near
    // z = 1, which already happens for a handful of areas at 50 Hz.
    let a_c = a_d.map(|v| Complex64::new(v, 0.0));
    let a_t = a_c.transpose();
    let triples: Vec<(DVector<Complex64>, DVector<Complex64>, Complex64)> = retained
        .iter()
        .map(|entry| {
            let v = eigvec_near(&a_c, entry.pole)
                .ok_or(GridError::Defective { dist: min_dist })?;
            let w = eigvec_near(&a_t, entry.pole)
                .ok_or(GridError::Defective { dist: min_dist })?;
            // w' v vanishes only for a defective pair, which the
            // separation check above has already ruled out
            let denom = w.dot(&v);
            if denom.norm() < 1e-12 {
                return Err(GridError::Defective { dist: min_dist });
            }
            Ok((v, w, denom))
        })
        .collect::<Result<_, GridError>>()?;

    let mut entries = Vec::new();
    let mut remainders = Vec::new();
    for tie in 0..model.n_ties() {
        let c_row = model.c_tie.row(tie) / model.s_base_mva;
        for gen in 0..model.n_gens() {
            let pair = PairId {
                tie: tie + 1,
                gen: gen + 1,
            };
            for (mode_idx, (v, w, denom)) in triples.iter().enumerate() {
                let mut cv = Complex64::new(0.0, 0.0);
                let mut wb = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    cv += c_row[j] * v[j];
                    wb += w[j] * b_d[(j, gen)];
                }
                entries.push(ResidueEntry {
                    pair,
                    mode_idx,
                    residue: cv * wb / denom,
                });
            }
            remainders.push(PairRemainder {
                pair,
                remainder: 0.0,
            });
        }
    }
    Ok(ModeResidueTable {
        ts,
        modes: retained,
        entries,
        remainders,
    })
}

/// Eigenvector of `a` for the eigenvalue closest to `p`, by inverse
/// iteration with a slightly offset shift. Scale and phase are
/// arbitrary; they cancel in any eigentriple residue.
fn eigvec_near(a: &DMatrix<Complex64>, p: Complex64) -> Option<DVector<Complex64>> {
    let n = a.nrows();
    let a_norm = a.norm();
    let off = 1e-9 * (1.0 + p.norm());
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] -= p + Complex64::new(off, off);
    }
    let lu = shifted.lu();
    // fixed pseudo-random start keeps the result deterministic and
    // avoids accidental orthogonality to the wanted eigenvector
    let mut v = DVector::from_fn(n, |i, _| {
        let t = (i + 1) as f64;
        Complex64::new((0.7391 * t).sin(), (1.1731 * t).cos())
    });
    v = v.unscale(v.norm());
    for _ in 0..8 {
        let next = lu.solve(&v)?;
        let nrm = next.norm();
        if !nrm.is_finite() || nrm == 0.0 {
            return None;
        }
        v = next.unscale(nrm);
        if (a * &v - &v * p).norm() <= 1e-12 * a_norm {
            return Some(v);
        }
    }
    // accept a looser residual before declaring failure; iteration on a
    // simple, separated eigenvalue stalls only in pathological cases
    if (a * &v - &v * p).norm() <= 1e-8 * a_norm {
        Some(v)
    } else {
        None
    }
}

/// Modes of the sampled closed loop: plant discretized with zero-order
/// hold, controllers in their linear region, feedback delays as whole
/// sample shifts. Deadbeat poles from the delay chain (at the origin)
/// are dropped; an unstable loop shows up as a mode with negative zeta.
pub fn closed_loop_modes(
    model: &LinearGridModel,
    ts: f64,
    attachments: &[AttachedController],
) -> Result<Vec<Mode>, GridError> {
    model.validate()?;
    let (a_d, b_d) = zoh_discretize(&model.a, &model.b_u, ts)?;
    let n = model.n_states();
    let fs = 1.0 / ts;

    struct Wired {
        a_c: DMatrix<f64>,
        b_c: nalgebra::DVector<f64>,
        c_c: nalgebra::DVector<f64>,
        d_c: f64,
        meas: nalgebra::RowDVector<f64>,
        b_col: nalgebra::DVector<f64>,
        n_c: usize,
        n_d: usize,
    }

    let mut wired = Vec::new();
    let mut total = n;
    for att in attachments {
        let meas_row = match att.input {
            MeasChannel::Tie(i) => {
                if i >= model.n_ties() {
                    return Err(GridError::BadChannel(format!(
                        "controller '{}' reads tie {} on a {}-tie model",
                        att.label,
                        i + 1,
                        model.n_ties()
                    )));
                }
                model.c_tie.row(i) * att.input_scale
            }
            MeasChannel::Speed(i) => {
                if i >= model.n_gens() {
                    return Err(GridError::BadChannel(format!(
                        "controller '{}' reads gen {} speed on a {}-generator model",
                        att.label,
                        i + 1,
                        model.n_gens()
                    )));
                }
                model.c_speed.row(i) * att.input_scale
            }
        };
        if att.output_gen >= model.n_gens() {
            return Err(GridError::BadChannel(format!(
                "controller '{}' drives gen {} on a {}-generator model",
                att.label,
                att.output_gen + 1,
                model.n_gens()
            )));
        }
        let (a_c, b_c, c_c, d_c) = att.controller.state_space();
        let n_c = a_c.nrows();
        let n_d = (att.delay_ms * fs / 1000.0).round() as usize;
        total += n_c + n_d;
        wired.push(Wired {
            a_c,
            b_c,
            c_c,
            d_c,
            meas: meas_row.into_owned(),
            b_col: b_d.column(att.output_gen).into_owned(),
            n_c,
            n_d,
        });
    }

    // state layout: plant states, then per controller its filter states
    // followed by its delay chain z_1..z_d with z_j(k) = v(k-j)
    let mut aug = DMatrix::<f64>::zeros(total, total);
    aug.view_mut((0, 0), (n, n)).copy_from(&a_d);
    let mut offset = n;
    for w in &wired {
        let c_off = offset;
        let d_off = offset + w.n_c;
        // filter states driven by the plant measurement
        for r in 0..w.n_c {
            for c in 0..w.n_c {
                aug[(c_off + r, c_off + c)] = w.a_c[(r, c)];
            }
            for c in 0..n {
                aug[(c_off + r, c)] = w.b_c[r] * w.meas[c];
            }
        }
        // v(k) = C_c xi + D_c * meas * x  (gain and sign already folded)
        if w.n_d == 0 {
            // direct injection: x+ += B_col * v(k)
            for r in 0..n {
                for c in 0..n {
                    aug[(r, c)] += w.b_col[r] * w.d_c * w.meas[c];
                }
                for c in 0..w.n_c {
                    aug[(r, c_off + c)] += w.b_col[r] * w.c_c[c];
                }
            }
        } else {
            // z_1+ = v(k)
            for c in 0..n {
                aug[(d_off, c)] = w.d_c * w.meas[c];
            }
            for c in 0..w.n_c {
                aug[(d_off, c_off + c)] = w.c_c[c];
            }
            // z_j+ = z_{j-1}
            for j in 1..w.n_d {
                aug[(d_off + j, d_off + j - 1)] = 1.0;
            }
            // x+ += B_col * z_d(k)
            let z_last = d_off + w.n_d - 1;
            for r in 0..n {
                aug[(r, z_last)] += w.b_col[r];
            }
        }
        offset += w.n_c + w.n_d;
    }

    let mut modes: Vec<Mode> = eigenvalues_sorted(&aug)
        .into_iter()
        .filter(|p| p.norm() > 1e-9 && p.im >= 0.0)
        .map(|p| Mode::from_discrete_pole(p, ts))
        .collect();
    modes.sort_by(|a, b| {
        a.frequency_hz
            .partial_cmp(&b.frequency_hz)
            .unwrap()
            .then(a.sigma.partial_cmp(&b.sigma).unwrap())
    });
    Ok(modes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sim::simulate;
    use crate::grid::{
        build_chain, build_two_area, Disturbance, DisturbanceKind, ScenarioConfig, Target,
    };
    use crate::linalg::resolvent_gain;
    use crate::wadc::{realize, WadcParams};
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, DVector};
    use num_complex::Complex64;

    #[test]
    fn one_state_residue_matches_closed_form() {
        // x' = -x + u, unit output: ZOH residue at p = e^{-Ts} is
        // exactly B_d = 1 - e^{-Ts}
        let m = LinearGridModel::from_parts(
            dmatrix![-1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            vec![1],
            1.0,
        )
        .unwrap();
        let ts = 0.02;
        let table = true_residues(&m, ts).unwrap();
        assert_eq!(table.modes.len(), 1);
        assert_relative_eq!(table.modes[0].pole.re, (-ts).exp(), epsilon = 1e-14);
        assert_eq!(table.entries.len(), 1);
        let r = table.entries[0].residue;
        assert_relative_eq!(r.re, 1.0 - (-ts).exp(), epsilon = 1e-13);
        assert_relative_eq!(r.im, 0.0, epsilon = 1e-15);
        assert_eq!(table.remainders[0].remainder, 0.0);
    }

    #[test]
    fn partial_fractions_reconstruct_the_resolvent() {
        // independent route: sum of R_i/(z - p_i) must equal
        // C (zI - A_d)^{-1} B_d at off-pole test points. The chain is
        // the hard case: its discrete poles cluster near z = 1.
        let models = [build_two_area(), build_chain(4, 2, 11).unwrap()];
        for m in &models {
            let ts = 0.02;
            let table = true_residues(m, ts).unwrap();
            let (a_d, b_d) = zoh_discretize(&m.a, &m.b_u, ts).unwrap();
            let pairs = [(0usize, 2usize), (m.n_ties() - 1, 0), (0, m.n_gens() - 1)];
            for (tie, gen) in pairs {
                let n = m.n_states();
                let c_row = DMatrix::from_fn(1, n, |_, j| m.c_tie[(tie, j)] / m.s_base_mva);
                let b_col = DMatrix::from_fn(n, 1, |i, _| b_d[(i, gen)]);
                for z in [
                    Complex64::new(1.3, 0.4),
                    Complex64::new(0.2, -1.1),
                    Complex64::new(-0.9, 0.8),
                    Complex64::new(1.02, 0.05),
                ] {
                    let direct = resolvent_gain(&a_d, &b_col, &c_row, z).unwrap()[(0, 0)];
                    let mut sum = Complex64::new(0.0, 0.0);
                    for e in table
                        .entries
                        .iter()
                        .filter(|e| e.pair.tie == tie + 1 && e.pair.gen == gen + 1)
                    {
                        let p = table.modes[e.mode_idx].pole;
                        if p.im > 0.0 {
                            sum += e.residue / (z - p) + e.residue.conj() / (z - p.conj());
                        } else {
                            sum += e.residue / (z - p);
                        }
                    }
                    assert_relative_eq!(direct.re, sum.re, epsilon = 1e-9, max_relative = 1e-8);
                    assert_relative_eq!(direct.im, sum.im, epsilon = 1e-9, max_relative = 1e-8);
                }
            }
        }
    }

    #[test]
    fn sampled_simulation_matches_zoh_prediction() {
        // the recorded channels must obey x+ = A_d x + B_d u exactly
        // (up to RK4 truncation), which pins down every input-alignment
        // convention in the simulator
        let m = build_two_area();
        let sc = ScenarioConfig {
            disturbance: Some(Disturbance {
                kind: DisturbanceKind::Pulse,
                target: Target::Input(0),
                t_start: 1.0,
                duration: 0.2,
                magnitude: 0.05,
            }),
            probe: Some(crate::grid::ProbeSchedule {
                amplitude: 0.01,
                start_s: 0.6,
                segment_s: 1.0,
                seed: 3,
            }),
            t_end: 6.0,
            // fine step so RK4 truncation sits well below the bound and
            // any input-alignment slip (order ts) stands out
            dt_internal: 2.5e-4,
            sample_hz: 50.0,
        };
        let rec = simulate(&m, &sc, Vec::new()).unwrap();
        let ts = 1.0 / sc.sample_hz;
        let (a_d, b_d) = zoh_discretize(&m.a, &m.b_u, ts).unwrap();
        let mut x = DVector::<f64>::zeros(m.n_states());
        let mut worst = 0.0f64;
        for k in 0..rec.n_samples() {
            let ties = &m.c_tie * &x;
            let speeds = &m.c_speed * &x;
            for t in 0..m.n_ties() {
                worst = worst.max((ties[t] - rec.tie_p[t][k]).abs());
            }
            for g in 0..m.n_gens() {
                worst = worst.max((speeds[g] - rec.gen_speed[g][k]).abs());
            }
            let mut u = DVector::<f64>::zeros(m.n_gens());
            for g in 0..m.n_gens() {
                u[g] = rec.gen_u[g][k];
            }
            x = &a_d * &x + &b_d * &u;
        }
        assert!(worst < 1e-7, "ZOH prediction error {worst}");
    }

    #[test]
    fn zero_gain_controller_leaves_modes_unchanged() {
        let m = build_two_area();
        let ts = 0.02;
        let open = true_modes(&m);
        let params = WadcParams {
            k_wadc: 0.0,
            t_w: 10.0,
            t_lead: 0.2,
            t_lag: 0.1,
            m: 1,
            v_min: -0.15,
            v_max: 0.15,
        };
        let att = AttachedController {
            label: "zero".into(),
            controller: realize(&params, ts).unwrap(),
            input: MeasChannel::Tie(0),
            input_scale: 1.0 / m.s_base_mva,
            output_gen: 2,
            delay_ms: 200.0,
        };
        let closed = closed_loop_modes(&m, ts, &[att]).unwrap();
        let open_ia = least_damped_in_band(&open, (0.1, 1.0)).unwrap();
        let closed_ia = least_damped_in_band(&closed, (0.1, 1.0)).unwrap();
        assert_relative_eq!(open_ia.frequency_hz, closed_ia.frequency_hz, epsilon = 1e-9);
        assert_relative_eq!(open_ia.zeta, closed_ia.zeta, epsilon = 1e-9);
    }

    #[test]
    fn discrete_open_loop_modes_match_continuous_eigenvalues() {
        let m = build_two_area();
        let ts = 0.02;
        let cont = true_modes(&m);
        let disc = closed_loop_modes(&m, ts, &[]).unwrap();
        assert_eq!(cont.len(), disc.len());
        for (c, d) in cont.iter().zip(disc.iter()) {
            assert_relative_eq!(c.frequency_hz, d.frequency_hz, epsilon = 1e-9);
            assert_relative_eq!(c.sigma, d.sigma, epsilon = 1e-8);
        }
    }
}
