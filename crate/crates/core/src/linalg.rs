//! Dense numerics shared across the crate: matrix exponential, ZOH
//! discretization, Leverrier-Faddeev resolvent polynomials, monic
//! polynomial roots, and complex polynomial evaluation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular system in {0}")]
    Singular(&'static str),
}

/// Matrix exponential by Pade-13 with scaling and squaring.
///
/// Degree-13 diagonal Pade approximant applied to `A / 2^s`, squared back
/// `s` times, with `s` chosen so the scaled 1-norm is below the approximant
/// validity radius. Accurate to machine precision for the well-scaled
/// matrices produced here (state matrices times a sample period).
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }

    const THETA_13: f64 = 5.371_920_351_148_152;
    #[rustfmt::skip]
    const B: [f64; 14] = [
        64_764_752_532_480_000.0, 32_382_376_266_240_000.0, 7_771_770_303_897_600.0,
        1_187_353_796_428_800.0, 129_060_195_264_000.0, 10_559_470_521_600.0,
        670_442_572_800.0, 33_522_128_640.0, 1_323_241_920.0, 40_840_800.0,
        960_960.0, 16_380.0, 182.0, 1.0,
    ];

    let norm = one_norm(a);
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let a_scaled = a * 2f64.powi(-s);

    let eye = DMatrix::<f64>::identity(n, n);
    let a2 = &a_scaled * &a_scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9])
        + &a6 * B[7]
        + &a4 * B[5]
        + &a2 * B[3]
        + &eye * B[1];
    let u = &a_scaled * u_inner;
    let v = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8])
        + &a6 * B[6]
        + &a4 * B[4]
        + &a2 * B[2]
        + &eye * B[0];

    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut r = lhs
        .lu()
        .solve(&rhs)
        .ok_or(LinalgError::Singular("expm Pade solve"))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

/// Zero-order-hold discretization of `x' = A x + B u` at period `ts`:
/// `A_d = exp(A ts)`, `B_d = integral_0^ts exp(A tau) dtau B`, computed
/// jointly via the block-augmented exponential so no invertibility of `A`
/// is assumed.
pub fn zoh_discretize(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    ts: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), LinalgError> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if b.nrows() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "B has {} rows, A is {}x{}",
            b.nrows(),
            n,
            n
        )));
    }
    let m = b.ncols();
    let mut aug = DMatrix::<f64>::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * ts));
    let e = expm(&aug)?;
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, m)).into_owned();
    Ok((ad, bd))
}

/// Roots of the monic polynomial `z^k + a[0] z^(k-1) + ... + a[k-1]` as
/// eigenvalues of its companion matrix, sorted by (re, im) for determinism.
pub fn monic_roots(a: &[f64]) -> Vec<Complex64> {
    let k = a.len();
    if k == 0 {
        return Vec::new();
    }
    let mut comp = DMatrix::<f64>::zeros(k, k);
    for (j, coef) in a.iter().enumerate() {
        comp[(0, j)] = -coef;
    }
    for i in 1..k {
        comp[(i, i - 1)] = 1.0;
    }
    eigenvalues_sorted(&comp)
}

/// Deterministic random orthogonal matrix (QR of a seeded uniform draw).
fn seeded_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    g.qr().q()
}

/// Eigenvalues of a real square matrix, sorted by (re, im).
///
/// The matrix is first rotated by a fixed random orthogonal similarity
/// and balanced: highly structured inputs (delay shift chains, companion
/// forms of sparse polynomials) can otherwise trap the QR iteration in a
/// shift cycle that never converges. The rotation leaves eigenvalues
/// unchanged and is seeded, so results stay deterministic.
pub fn eigenvalues_sorted(a: &DMatrix<f64>) -> Vec<Complex64> {
    let n = a.nrows();
    assert!(a.is_square(), "eigenvalues of a {}x{} matrix", n, a.ncols());
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![Complex64::new(a[(0, 0)], 0.0)];
    }
    let mut vals: Option<Vec<Complex64>> = None;
    for seed in [0x5eed_0001u64, 0x5eed_0002, 0x5eed_0003] {
        let q = seeded_orthogonal(n, seed);
        let mut t = q.transpose() * a * &q;
        nalgebra::linalg::balancing::balance_parlett_reinsch(&mut t);
        if let Some(s) = nalgebra::linalg::Schur::try_new(t, f64::EPSILON, 100_000) {
            vals = Some(s.complex_eigenvalues().iter().copied().collect());
            break;
        }
    }
    let mut vals = vals.unwrap_or_else(|| {
        panic!("eigenvalue iteration failed to converge on a {n}x{n} matrix")
    });
    vals.sort_by(|p, q| {
        p.re.partial_cmp(&q.re)
            .unwrap()
            .then(p.im.partial_cmp(&q.im).unwrap())
    });
    vals
}

/// Evaluates a real-coefficient polynomial (descending powers) at a complex
/// point by Horner's scheme.
pub fn polyval(coeffs_desc: &[f64], z: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for &c in coeffs_desc {
        acc = acc * z + c;
    }
    acc
}

/// Derivative coefficients of a real polynomial in descending powers.
pub fn polyder(coeffs_desc: &[f64]) -> Vec<f64> {
    let n = coeffs_desc.len();
    if n <= 1 {
        return vec![0.0];
    }
    coeffs_desc[..n - 1]
        .iter()
        .enumerate()
        .map(|(i, &c)| c * (n - 1 - i) as f64)
        .collect()
}

/// Evaluates the transfer matrix `C (zI - A)^-1 B` at one complex point by
/// a complex LU solve. Rows of the result follow rows of `C`, columns
/// follow columns of `B`.
pub fn resolvent_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    z: Complex64,
) -> Result<DMatrix<Complex64>, LinalgError> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || c.ncols() != n {
        return Err(LinalgError::DimensionMismatch(
            "resolvent_gain expects A n x n, B n x m, C p x n".into(),
        ));
    }
    let mut zi_a = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            zi_a[(i, j)] = -Complex64::new(a[(i, j)], 0.0);
        }
        zi_a[(i, i)] += z;
    }
    let bc: DMatrix<Complex64> = b.map(|v| Complex64::new(v, 0.0));
    let x = zi_a
        .lu()
        .solve(&bc)
        .ok_or(LinalgError::Singular("resolvent solve (z equals a pole?)"))?;
    let cc: DMatrix<Complex64> = c.map(|v| Complex64::new(v, 0.0));
    Ok(cc * x)
}

/// FNV-1a over the IEEE bit patterns of a float slice; stable fingerprint
/// for model matrices in record metadata.
pub fn fingerprint(parts: &[&[f64]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for v in *part {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    h
}

/// Column-major flat copy of a matrix, for fingerprinting.
pub fn matrix_bits(m: &DMatrix<f64>) -> Vec<f64> {
    m.iter().copied().collect()
}

/// Euclidean norm of a slice.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean norm of a DVector difference without allocating.
pub fn diff_norm(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
