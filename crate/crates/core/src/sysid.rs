//! Windowed least-squares regression for shared-denominator ARX models
//! and the alternating sub-solvers (a given b, b given a) used by the
//! consensus identification.
//!
//! Every (tie m, generator n) pair contributes one regression block
//! relating the tie power series to that generator's input series. All
//! pairs in the grid share one denominator; the numerators differ per
//! pair. Internally the solvers work in the regression sign convention
//! (positive coefficients on lagged outputs); the public estimate exposes
//! the denominator as `1 + a1 z^-1 + ... + ak z^-k`, so `a = -a_reg`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::monic_roots;
use crate::modal::PairId;

/// Default shared model order.
pub const DEFAULT_K: usize = 8;
/// Default observation window length (5 s at 50 Hz).
pub const DEFAULT_N: usize = 250;
/// Default sample period in seconds.
pub const DEFAULT_TS: f64 = 0.02;
/// Default relative ridge on the pooled denominator solve. Scaled by
/// trace(sum L^T L)/k so the regularization is unit-free.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Relative singular-value ratio below which a block is flagged as
/// rank-deficient (insufficient excitation).
const RANK_DEFICIENT_RATIO: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SysidError {
    #[error("model order k must be at least 2, got {0}")]
    BadOrder(usize),
    #[error("window N = {n} must be at least 2k+1 = {min} rows")]
    BadWindow { n: usize, min: usize },
    #[error("series too short: need at least N + k = {need} samples, got {have}")]
    TooShort { need: usize, have: usize },
    #[error("output series has {p_len} samples but input series has {u_len}")]
    Misaligned { p_len: usize, u_len: usize },
    #[error("series contains a non-finite sample")]
    NonFinite,
    #[error("blocks disagree on model order: {0} vs {1}")]
    MixedOrder(usize, usize),
    #[error("numerator for pair {index} has {got} coefficients, expected k+1 = {expected}")]
    BadNumerator {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("need one numerator per block: {blocks} blocks, {numerators} numerators")]
    CountMismatch { blocks: usize, numerators: usize },
    #[error("no regression blocks given")]
    Empty,
    #[error("singular normal equations (ridge = 0 and rank-deficient data)")]
    Singular,
    #[error("denominator has {got} coefficients, expected k = {expected}")]
    BadDenominator { got: usize, expected: usize },
}

/// Shared structure of the identification problem: one model order and
/// sample period for every (tie, gen) pair in an area.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArxStructure {
    pub k: usize,
    pub pairs: Vec<PairId>,
    pub ts: f64,
}

impl ArxStructure {
    pub fn new(k: usize, pairs: Vec<PairId>, ts: f64) -> Result<Self, SysidError> {
        if k < 2 {
            return Err(SysidError::BadOrder(k));
        }
        if pairs.is_empty() {
            return Err(SysidError::Empty);
        }
        Ok(Self { k, pairs, ts })
    }
}

/// One pair's windowed regression: `L a_reg + M b = Bvec` row by row,
/// where row i targets P(j-i) against lags P(j-i-1..j-i-k) and inputs
/// u(j-i..j-i-k), anchored at the last sample j. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionBlock {
    pub pair: PairId,
    pub l: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub bvec: DVector<f64>,
    /// True when the stacked [L M] matrix has a relative singular-value
    /// spread below 1e-10 (the data cannot pin the coefficients down).
    pub rank_deficient: bool,
}

impl RegressionBlock {
    pub fn n_rows(&self) -> usize {
        self.bvec.len()
    }

    pub fn order(&self) -> usize {
        self.l.ncols()
    }

    /// Squared residual of the glo-form equation at the given estimate
    /// (`a` in the exposed 1 + a1 z^-1 convention).
    pub fn squared_residual(&self, a: &[f64], b: &[f64]) -> f64 {
        let a_reg = DVector::from_iterator(a.len(), a.iter().map(|v| -v));
        let bv = DVector::from_column_slice(b);
        let r = &self.l * a_reg + &self.m * bv - &self.bvec;
        r.norm_squared()
    }
}

/// Exposed estimate: denominator `1 + a1 z^-1 + ... + ak z^-k` shared by
/// all pairs, one length-(k+1) numerator per pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArxEstimate {
    pub a: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    pub pairs: Vec<PairId>,
    pub ts: f64,
}

impl ArxEstimate {
    /// Largest pole magnitude of the shared denominator.
    pub fn max_pole_norm(&self) -> f64 {
        monic_roots(&self.a)
            .iter()
            .map(|p| p.norm())
            .fold(0.0, f64::max)
    }

    /// True when every denominator root is strictly inside the unit
    /// circle. Estimation can transiently produce unstable fits; callers
    /// must check rather than assume.
    pub fn is_stable(&self) -> bool {
        self.max_pole_norm() < 1.0
    }
}

/// Assembles the windowed regression of one (tie, gen) pair from aligned
/// sample series, anchored at the final sample.
///
/// With `detrend`, the mean of the leading segment the window never
/// touches (samples `0..len-(N+k)`) is removed from P first; that segment
/// is the pre-disturbance record when the caller aligns the window to
/// start at the disturbance. Falls back to P[0] when the window occupies
/// the whole series. Inputs are injected deviations already, so u is
/// taken verbatim.
pub fn build_regression(
    pair: PairId,
    p: &[f64],
    u: &[f64],
    k: usize,
    n: usize,
    detrend: bool,
) -> Result<RegressionBlock, SysidError> {
    if k < 2 {
        return Err(SysidError::BadOrder(k));
    }
    if n < 2 * k + 1 {
        return Err(SysidError::BadWindow { n, min: 2 * k + 1 });
    }
    if p.len() != u.len() {
        return Err(SysidError::Misaligned {
            p_len: p.len(),
            u_len: u.len(),
        });
    }
    if p.len() < n + k {
        return Err(SysidError::TooShort {
            need: n + k,
            have: p.len(),
        });
    }
    if !p.iter().chain(u.iter()).all(|v| v.is_finite()) {
        return Err(SysidError::NonFinite);
    }

    let offset = if detrend {
        let lead = p.len() - (n + k);
        if lead == 0 {
            p[0]
        } else {
            p[..lead].iter().sum::<f64>() / lead as f64
        }
    } else {
        0.0
    };

    let j = p.len() - 1;
    let mut l = DMatrix::<f64>::zeros(n, k);
    let mut m = DMatrix::<f64>::zeros(n, k + 1);
    let mut bvec = DVector::<f64>::zeros(n);
    for i in 0..n {
        let t = j - i;
        bvec[i] = p[t] - offset;
        for lag in 1..=k {
            l[(i, lag - 1)] = p[t - lag] - offset;
        }
        for lag in 0..=k {
            m[(i, lag)] = u[t - lag];
        }
    }

    let mut stacked = DMatrix::<f64>::zeros(n, 2 * k + 1);
    stacked.view_mut((0, 0), (n, k)).copy_from(&l);
    stacked.view_mut((0, k), (n, k + 1)).copy_from(&m);
    let sv = stacked.singular_values();
    let s_max = sv.max();
    let s_min = sv.min();
    let rank_deficient = s_max <= 0.0 || s_min / s_max < RANK_DEFICIENT_RATIO;

    Ok(RegressionBlock {
        pair,
        l,
        m,
        bvec,
        rank_deficient,
    })
}

/// Pooled denominator update: minimizes
/// `sum_h ||L_h a_reg - (Bvec_h - M_h b_h)||^2 + ridge_eff ||a_reg||^2`
/// over the single area-level a_reg and returns `a = -a_reg`.
///
/// `ridge` is relative: the effective Tikhonov weight is
/// `ridge * trace(sum L^T L) / k` (falling back to `ridge` itself when the
/// trace is zero), so the default 1e-8 stays tiny at any data scale.
/// Numerators are in the exposed convention (same sign in both).
pub fn solve_a_given_b(
    blocks: &[RegressionBlock],
    b: &[Vec<f64>],
    ridge: f64,
) -> Result<Vec<f64>, SysidError> {
    if blocks.is_empty() {
        return Err(SysidError::Empty);
    }
    let k = blocks[0].order();
    for bl in blocks {
        if bl.order() != k {
            return Err(SysidError::MixedOrder(k, bl.order()));
        }
    }
    if b.len() != blocks.len() {
        return Err(SysidError::CountMismatch {
            blocks: blocks.len(),
            numerators: b.len(),
        });
    }
    for (i, bi) in b.iter().enumerate() {
        if bi.len() != k + 1 {
            return Err(SysidError::BadNumerator {
                index: i,
                got: bi.len(),
                expected: k + 1,
            });
        }
    }

    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for (bl, bi) in blocks.iter().zip(b.iter()) {
        let bv = DVector::from_column_slice(bi);
        let resid = &bl.bvec - &bl.m * bv;
        gram += bl.l.transpose() * &bl.l;
        rhs += bl.l.transpose() * resid;
    }

    let trace = gram.trace();
    let lambda = if trace > 0.0 {
        ridge * trace / k as f64
    } else {
        ridge
    };
    for i in 0..k {
        gram[(i, i)] += lambda;
    }

    let a_reg = gram
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or(SysidError::Singular)?;
    Ok(a_reg.iter().map(|v| -v).collect())
}

/// Per-pair numerator update: minimum-norm least squares of
/// `M b = Bvec - L a_reg` via SVD pseudoinverse (zero input gives b = 0
/// exactly). `a` is in the exposed convention.
pub fn solve_b_given_a(block: &RegressionBlock, a: &[f64]) -> Result<Vec<f64>, SysidError> {
    let k = block.order();
    if a.len() != k {
        return Err(SysidError::BadDenominator {
            got: a.len(),
            expected: k,
        });
    }
    let a_reg = DVector::from_iterator(k, a.iter().map(|v| -v));
    let resid = &block.bvec - &block.l * a_reg;

    let svd = block.m.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let dims = block.m.nrows().max(block.m.ncols());
    let tol = s_max * dims as f64 * f64::EPSILON;
    let b = svd.solve(&resid, tol).map_err(|_| SysidError::Singular)?;
    Ok(b.iter().copied().collect())
}

/// Pooled squared residual of the glo-form equations across blocks; the
/// quantity each alternation half-step must not increase.
pub fn pooled_residual(blocks: &[RegressionBlock], a: &[f64], b: &[Vec<f64>]) -> f64 {
    blocks
        .iter()
        .zip(b.iter())
        .map(|(bl, bi)| bl.squared_residual(a, bi))
        .sum()
}

/// Simulates a shared-denominator ARX pair response from rest:
/// `P(t) = -sum a_i P(t-i) + sum b_i u(t-i)` with zero pre-history.
/// `a` in the exposed convention; used to synthesize test data and as the
/// reconstruction check for identified models.
pub fn simulate_arx(a: &[f64], b: &[f64], u: &[f64]) -> Vec<f64> {
    let k = a.len();
    let mut p = vec![0.0; u.len()];
    for t in 0..u.len() {
        let mut acc = 0.0;
        for (i, ai) in a.iter().enumerate() {
            if t > i {
                acc -= ai * p[t - 1 - i];
            }
        }
        for (i, bi) in b.iter().enumerate().take(k + 1) {
            if t >= i {
                acc += bi * u[t - i];
            }
        }
        p[t] = acc;
    }
    p
}
