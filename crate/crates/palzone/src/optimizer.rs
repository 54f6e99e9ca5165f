//! Acoustic contrast control: the bright/dark energy-ratio cost, the
//! generalized Hermitian eigensolver with ridge regularization, the
//! alternating eigen-iteration for PAL tensors, and the one-shot EDL
//! baseline.
//!
//! For a fixed s1 the cost is the Rayleigh quotient of
//! (G1b, G1d) with G1 = sum_m H_m^H s1 s1^H H_m; for a fixed s2 it is the
//! quotient of (G2b, G2d) with G2 = sum_m H_m s2 s2^H H_m^H. Each half
//! step takes the eigenvector of the maximal generalized eigenvalue, so
//! the contrast history is non-decreasing up to roundoff.

use crate::field::{audio_pressure, ArrayKind, SourcePair, TensorData, TransferTensor};
use crate::linalg::{
    cholesky, jacobi_hermitian_eig, normalize_phase_fixed, solve_lower, solve_lower_adjoint,
    vec_norm, CMat, C64, LinalgError,
};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Contrast sentinel for a zone with exactly zero energy.
pub const CONTRAST_CLAMP_DB: f64 = 300.0;
/// Ridge escalation factor and retry budget when the dark matrix fails
/// its Cholesky factorization.
const RIDGE_ESCALATION: f64 = 10.0;
const RIDGE_RETRIES: usize = 3;
/// Relative window inside which the top two eigenvalues count as tied.
const DEGENERACY_REL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Field(#[from] crate::field::FieldError),
    #[error("fixed drive vector is zero")]
    ZeroFixedVector,
    #[error("eigensolver failed after {retries} ridge escalations (last ridge {last_ridge:.3e})")]
    EigenFailure { retries: usize, last_ridge: f64 },
    #[error("expected a {expected:?} tensor")]
    WrongTensorKind { expected: ArrayKind },
}

/// Maximal generalized eigenpair of a Hermitian PSD pencil.
#[derive(Clone, Debug)]
pub struct EigenPairResult {
    pub eigenvalue: f64,
    /// Unit-norm, phase-fixed (largest component real positive).
    pub eigenvector: Vec<C64>,
    /// True when the top two eigenvalues coincided within 1e-12 relative;
    /// the Jacobi-ordering first one was kept.
    pub near_degenerate: bool,
}

/// Outcome of an ACC optimization run.
#[derive(Clone, Debug)]
pub struct ContrastResult {
    pub drives: SourcePair,
    /// Final acoustic contrast gamma_AC, dB.
    pub contrast_db: f64,
    /// Contrast after each full alternation (length == iterations_run).
    pub history: Vec<f64>,
    pub iterations_run: usize,
    /// Half-steps whose eigensolve hit a near-degenerate top pair.
    pub degenerate_steps: usize,
}

/// gamma_AC = 10 log10(E_bright / E_dark) over the tensor's control
/// points. Zero dark energy clamps to +300 dB (and zero bright to -300).
pub fn acoustic_contrast(
    tensor: &TransferTensor,
    drives: &SourcePair,
) -> Result<f64, SolverError> {
    let mut bright = 0.0;
    let mut dark = 0.0;
    for m in 0..tensor.n_points() {
        let p = audio_pressure(tensor, drives, m)?;
        if m < tensor.bright_count {
            bright += p.norm_sqr();
        } else {
            dark += p.norm_sqr();
        }
    }
    Ok(energy_ratio_db(bright, dark))
}

pub(crate) fn energy_ratio_db(bright: f64, dark: f64) -> f64 {
    if dark == 0.0 {
        return if bright == 0.0 { 0.0 } else { CONTRAST_CLAMP_DB };
    }
    if bright == 0.0 {
        return -CONTRAST_CLAMP_DB;
    }
    (10.0 * (bright / dark).log10()).clamp(-CONTRAST_CLAMP_DB, CONTRAST_CLAMP_DB)
}

/// Which drive vector is held fixed while the other is optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixedCarrier {
    /// s1 fixed: G1 = sum_m H_m^H s1 s1^H H_m acts on s2.
    S1,
    /// s2 fixed: G2 = sum_m H_m s2 s2^H H_m^H acts on s1.
    S2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZoneSelect {
    Bright,
    Dark,
}

/// Accumulate the Hermitian PSD quadratic-form matrix for one zone with
/// one carrier fixed. Control points are summed in index order so the
/// result is identical across thread counts.
pub fn build_g_matrices(
    tensor: &TransferTensor,
    fixed: &[C64],
    which: FixedCarrier,
    zone: ZoneSelect,
) -> Result<CMat, SolverError> {
    if vec_norm(fixed) == 0.0 {
        return Err(SolverError::ZeroFixedVector);
    }
    let ms = match &tensor.data {
        TensorData::Pal(ms) => ms,
        TensorData::Edl(_) => {
            return Err(SolverError::WrongTensorKind { expected: ArrayKind::Pal })
        }
    };
    let range = match zone {
        ZoneSelect::Bright => 0..tensor.bright_count,
        ZoneSelect::Dark => tensor.bright_count..tensor.n_points(),
    };
    let n = tensor.n_elements();
    let mut g = CMat::zeros(n);
    for m in range {
        let v = match which {
            FixedCarrier::S1 => ms[m].adjoint_matvec(fixed),
            FixedCarrier::S2 => ms[m].matvec(fixed),
        };
        g.rank1_update(&v, 1.0);
    }
    Ok(g)
}

/// Maximal generalized eigenpair of (A, B + ridge I): Cholesky-reduce to
/// a standard Hermitian problem and run cyclic Jacobi. The caller raises
/// the ridge if B + ridge I is not positive definite.
pub fn max_generalized_eigenpair(
    a: &CMat,
    b: &CMat,
    ridge: f64,
) -> Result<EigenPairResult, SolverError> {
    let n = a.n();
    if b.n() != n {
        return Err(SolverError::Linalg(LinalgError::DimensionMismatch(format!(
            "A is {n}x{n} but B is {}x{}",
            b.n(),
            b.n()
        ))));
    }
    let herm_tol = 1e-8;
    for (name, m) in [("A", a), ("B", b)] {
        let norm = m.frobenius_norm();
        let defect = m.hermitian_defect();
        if norm > 0.0 && defect > herm_tol * norm {
            let _ = name;
            return Err(SolverError::Linalg(LinalgError::NotHermitian {
                defect,
                tol: herm_tol * norm,
            }));
        }
    }
    let mut b_ridged = b.clone();
    for i in 0..n {
        b_ridged[(i, i)] += ridge;
    }
    let l = cholesky(&b_ridged)?;
    // C = L^-1 A L^-H, assembled column by column.
    let mut c = CMat::zeros(n);
    for j in 0..n {
        let col: Vec<C64> = (0..n).map(|i| a[(i, j)]).collect();
        let half = solve_lower(&l, &col); // L^-1 a_j
        for (i, v) in half.iter().enumerate() {
            c[(i, j)] = *v;
        }
    }
    // right-multiply by L^-H: solve row-wise via the adjoint system
    let mut reduced = CMat::zeros(n);
    for i in 0..n {
        let row: Vec<C64> = (0..n).map(|j| c[(i, j)].conj()).collect();
        let solved = solve_lower(&l, &row); // conj of row * L^-H
        for (j, v) in solved.iter().enumerate() {
            reduced[(i, j)] = v.conj();
        }
    }
    reduced.hermitize();
    let (evals, vecs) = jacobi_hermitian_eig(&reduced)?;
    let mut best = 0usize;
    for (i, &ev) in evals.iter().enumerate() {
        if ev > evals[best] {
            best = i;
        }
    }
    let lambda = evals[best];
    let near_degenerate = evals
        .iter()
        .enumerate()
        .any(|(i, &ev)| i != best && (ev - lambda).abs() <= DEGENERACY_REL * lambda.abs());
    let y: Vec<C64> = (0..n).map(|i| vecs[(i, best)]).collect();
    let mut v = solve_lower_adjoint(&l, &y);
    normalize_phase_fixed(&mut v);
    Ok(EigenPairResult { eigenvalue: lambda, eigenvector: v, near_degenerate })
}

/// Trace-scaled ridge, then escalation x10 per retry on Cholesky failure.
fn eigenpair_with_escalation(
    a: &CMat,
    b: &CMat,
    ridge_scale: f64,
) -> Result<EigenPairResult, SolverError> {
    let n = b.n().max(1) as f64;
    let trace = b.trace_real();
    let mut ridge = if trace > 0.0 {
        ridge_scale * trace / n
    } else {
        ridge_scale
    };
    let mut last = ridge;
    for _ in 0..=RIDGE_RETRIES {
        match max_generalized_eigenpair(a, b, ridge) {
            Ok(pair) => return Ok(pair),
            Err(SolverError::Linalg(LinalgError::NotPositiveDefinite { .. })) => {
                last = ridge;
                ridge = if ridge > 0.0 { ridge * RIDGE_ESCALATION } else { f64::EPSILON };
            }
            Err(e) => return Err(e),
        }
    }
    Err(SolverError::EigenFailure { retries: RIDGE_RETRIES, last_ridge: last })
}

/// Standard complex Gaussian via Box-Muller on the raw ChaCha stream.
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // uniforms in (0, 1]; the +1 keeps the log argument away from zero
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn random_unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    let mut v: Vec<C64> = (0..n)
        .map(|_| C64::new(standard_normal(rng), standard_normal(rng)))
        .collect();
    let norm = vec_norm(&v);
    if norm > 0.0 {
        for z in v.iter_mut() {
            *z /= norm;
        }
    } else {
        v[0] = C64::new(1.0, 0.0);
    }
    v
}

/// Alternating ACC for a PAL tensor: random s1, then n_itr rounds of the
/// two eigen-updates; both drives come out unit-norm. The history records
/// the contrast after each full round.
pub fn acc_pal(
    tensor: &TransferTensor,
    n_itr: usize,
    seed: u64,
    ridge_scale: f64,
) -> Result<ContrastResult, SolverError> {
    assert!(n_itr >= 1, "n_itr must be at least 1");
    if tensor.kind() != ArrayKind::Pal {
        return Err(SolverError::WrongTensorKind { expected: ArrayKind::Pal });
    }
    let n = tensor.n_elements();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s1 = random_unit_vector(&mut rng, n);
    let mut s2 = vec![C64::new(0.0, 0.0); n];
    let mut history = Vec::with_capacity(n_itr);
    let mut degenerate_steps = 0usize;
    for _ in 0..n_itr {
        let g1b = build_g_matrices(tensor, &s1, FixedCarrier::S1, ZoneSelect::Bright)?;
        let g1d = build_g_matrices(tensor, &s1, FixedCarrier::S1, ZoneSelect::Dark)?;
        let pair = eigenpair_with_escalation(&g1b, &g1d, ridge_scale)?;
        degenerate_steps += pair.near_degenerate as usize;
        s2 = pair.eigenvector;

        let g2b = build_g_matrices(tensor, &s2, FixedCarrier::S2, ZoneSelect::Bright)?;
        let g2d = build_g_matrices(tensor, &s2, FixedCarrier::S2, ZoneSelect::Dark)?;
        let pair = eigenpair_with_escalation(&g2b, &g2d, ridge_scale)?;
        degenerate_steps += pair.near_degenerate as usize;
        s1 = pair.eigenvector;

        history.push(acoustic_contrast(
            tensor,
            &SourcePair::Pal { s1: s1.clone(), s2: s2.clone() },
        )?);
    }
    let contrast_db = *history.last().unwrap();
    Ok(ContrastResult {
        drives: SourcePair::Pal { s1, s2 },
        contrast_db,
        history,
        iterations_run: n_itr,
        degenerate_steps,
    })
}

/// Multi-start wrapper: independent seeds derived from the base seed, the
/// best final contrast wins.
pub fn acc_pal_multi(
    tensor: &TransferTensor,
    n_itr: usize,
    seed: u64,
    ridge_scale: f64,
    n_starts: usize,
) -> Result<ContrastResult, SolverError> {
    let mut best: Option<ContrastResult> = None;
    for start in 0..n_starts.max(1) {
        let run = acc_pal(tensor, n_itr, mix_seed(seed, start as u64), ridge_scale)?;
        if best.as_ref().is_none_or(|b| run.contrast_db > b.contrast_db) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// SplitMix64-style seed derivation for independent substreams.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One-shot ACC for an EDL tensor: the maximal generalized eigenpair of
/// the bright/dark Gram matrices. Because the EDL pressure is h_m^T s,
/// the Gram matrices are built from the conjugated vectors
/// (sum_m conj(h_m) h_m^T), which makes the returned eigenvector the
/// maximizer of the measured contrast.
pub fn acc_edl(tensor: &TransferTensor, ridge_scale: f64) -> Result<ContrastResult, SolverError> {
    let vs = match &tensor.data {
        TensorData::Edl(vs) => vs,
        TensorData::Pal(_) => {
            return Err(SolverError::WrongTensorKind { expected: ArrayKind::Edl })
        }
    };
    let n = tensor.n_elements();
    let mut gb = CMat::zeros(n);
    let mut gd = CMat::zeros(n);
    for (m, h) in vs.iter().enumerate() {
        let conj: Vec<C64> = h.iter().map(|z| z.conj()).collect();
        if m < tensor.bright_count {
            gb.rank1_update(&conj, 1.0);
        } else {
            gd.rank1_update(&conj, 1.0);
        }
    }
    let pair = eigenpair_with_escalation(&gb, &gd, ridge_scale)?;
    let drives = SourcePair::Edl { s: pair.eigenvector };
    let contrast_db = acoustic_contrast(tensor, &drives)?;
    Ok(ContrastResult {
        drives,
        contrast_db,
        history: vec![contrast_db],
        iterations_run: 1,
        degenerate_steps: pair.near_degenerate as usize,
    })
}
