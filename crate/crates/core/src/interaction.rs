//! Generators of reversible dynamics on two noiseless direction bits.
//!
//! Generators act on coefficient vectors of the `(d+1)²`-dimensional tensor
//! space, indexed `i·(d+1)+j`. The basis is the one where local rotations
//! act orthogonally, so admissible generators are antisymmetric. Product
//! measurements use the noiseless spin effects `𝓜_x = ½(1, x)`.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    antisymmetry_defect, ser, derive_seed, kron_vec, null_space, random_unit, rng_from_seed,
};
use crate::qubit::{self, CMatrix};

const GAUGE_TOL: f64 = 1e-10;
const NORMALIZATION_TOL: f64 = 1e-12;
const FD_STEP: f64 = 1e-4;
const FD_REL_TOL: f64 = 1e-6;
const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generator {
    pub dim: usize,
    pub matrix: DMatrix<f64>,
}

impl Generator {
    /// Checked constructor: normalization-preserving and antisymmetric.
    pub fn new(dim: usize, matrix: DMatrix<f64>) -> Result<Self> {
        let g = Self::unchecked(dim, matrix)?;
        if g.normalization_defect() > NORMALIZATION_TOL {
            return Err(Error::input(format!(
                "generator does not preserve normalization (defect {:.3e})",
                g.normalization_defect()
            )));
        }
        if g.antisymmetry_defect() > GAUGE_TOL {
            return Err(Error::input(format!(
                "gauge error: generator is not antisymmetric (defect {:.3e})",
                g.antisymmetry_defect()
            )));
        }
        Ok(g)
    }

    /// Only the shape is checked; used to probe invalid dynamics.
    pub fn unchecked(dim: usize, matrix: DMatrix<f64>) -> Result<Self> {
        let n = (dim + 1) * (dim + 1);
        if dim == 0 || matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::input(format!("generator for d = {dim} must be {n}×{n}")));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("generator entries must be finite"));
        }
        Ok(Self { dim, matrix })
    }

    pub fn zero(dim: usize) -> Self {
        let n = (dim + 1) * (dim + 1);
        Self {
            dim,
            matrix: DMatrix::zeros(n, n),
        }
    }

    /// `max |(𝓤^{AB} ∘ W)_k|`.
    pub fn normalization_defect(&self) -> f64 {
        self.matrix.row(0).amax()
    }

    pub fn antisymmetry_defect(&self) -> f64 {
        antisymmetry_defect(&self.matrix)
    }

    pub fn exp(&self, t: f64) -> DMatrix<f64> {
        (&self.matrix * t).exp()
    }

    pub fn blocks(&self) -> BlockDecomposition {
        BlockDecomposition::of(self)
    }
}

/// Splits a generator along scalar, B-local, A-local and correlation
/// subspaces.
#[derive(Debug, Clone, Serialize)]
pub struct BlockDecomposition {
    pub scalar: f64,
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    /// `X⊗1 + 1⊗Y − Z`.
    pub v: DMatrix<f64>,
    /// Frobenius norm of everything outside the diagonal blocks.
    pub off_block_norm: f64,
}

fn b_local_indices(d: usize) -> Vec<usize> {
    (1..=d).collect()
}

fn a_local_indices(d: usize) -> Vec<usize> {
    (1..=d).map(|i| i * (d + 1)).collect()
}

fn correlation_indices(d: usize) -> Vec<usize> {
    (1..=d)
        .flat_map(|i| (1..=d).map(move |j| i * (d + 1) + j))
        .collect()
}

fn sub(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

impl BlockDecomposition {
    pub fn of(w: &Generator) -> Self {
        let d = w.dim;
        let m = &w.matrix;
        let (bi, ai, ci) = (b_local_indices(d), a_local_indices(d), correlation_indices(d));
        let y = sub(m, &bi);
        let x = sub(m, &ai);
        let z = sub(m, &ci);
        let id = DMatrix::identity(d, d);
        let v = x.kronecker(&id) + id.kronecker(&y) - &z;
        let mut label = vec![0usize; m.nrows()];
        for &k in &bi {
            label[k] = 1;
        }
        for &k in &ai {
            label[k] = 2;
        }
        for &k in &ci {
            label[k] = 3;
        }
        let mut off = 0.0;
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if label[r] != label[c] {
                    off += m[(r, c)] * m[(r, c)];
                }
            }
        }
        Self {
            scalar: m[(0, 0)],
            y,
            x,
            z,
            v,
            off_block_norm: f64::sqrt(off),
        }
    }

    pub fn is_block_diagonal(&self) -> bool {
        self.off_block_norm <= GAUGE_TOL && self.scalar.abs() <= GAUGE_TOL
    }
}

/// Generator with the given diagonal blocks.
pub fn block_diagonal_generator(x: &DMatrix<f64>, y: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<Generator> {
    let d = x.nrows();
    if x.shape() != (d, d) || y.shape() != (d, d) || z.shape() != (d * d, d * d) {
        return Err(Error::input("block shapes must be d×d, d×d and d²×d²"));
    }
    let n = (d + 1) * (d + 1);
    let mut m = DMatrix::zeros(n, n);
    for (block, idx) in [
        (y, b_local_indices(d)),
        (x, a_local_indices(d)),
        (z, correlation_indices(d)),
    ] {
        for r in 0..idx.len() {
            for c in 0..idx.len() {
                m[(idx[r], idx[c])] = block[(r, c)];
            }
        }
    }
    Generator::new(d, m)
}

fn lift(x: &DMatrix<f64>) -> DMatrix<f64> {
    let d = x.nrows();
    let mut out = DMatrix::zeros(d + 1, d + 1);
    out.view_mut((1, 1), (d, d)).copy_from(x);
    out
}

/// `X^A ⊗ 1 + 1 ⊗ X^B` with each local generator embedded as `0 ⊕ X`.
pub fn lift_local(xa: &DMatrix<f64>, xb: &DMatrix<f64>) -> Result<Generator> {
    let d = xa.nrows();
    if !xa.is_square() || xb.shape() != (d, d) {
        return Err(Error::input("local generators must be square of equal size"));
    }
    for (m, side) in [(xa, "A"), (xb, "B")] {
        if antisymmetry_defect(m) > GAUGE_TOL {
            return Err(Error::input(format!("gauge error: local generator {side} is not antisymmetric")));
        }
    }
    let id = DMatrix::identity(d + 1, d + 1);
    Generator::new(d, lift(xa).kronecker(&id) + id.kronecker(&lift(xb)))
}

/// Random antisymmetric matrix with unit Frobenius norm.
pub fn random_antisymmetric<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let a = &g - g.transpose();
    let norm = a.norm();
    if norm > 0.0 { a / norm } else { a }
}

fn check_pair(w: &Generator, x: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
    for (v, what) in [(x, "x"), (y, "y")] {
        if v.len() != w.dim {
            return Err(Error::input(format!("{what} must have dimension {}", w.dim)));
        }
        crate::linalg::check_unit(v, what)?;
    }
    Ok(())
}

fn full(x: &DVector<f64>, sign: f64) -> DVector<f64> {
    let mut v = DVector::zeros(x.len() + 1);
    v[0] = 1.0;
    v.rows_mut(1, x.len()).copy_from(&(x * sign));
    v
}

/// Covector of `𝓜_{sx} ⊗ 𝓜_{ty}`.
fn product_measurement(x: &DVector<f64>, y: &DVector<f64>, s: f64, t: f64) -> DVector<f64> {
    kron_vec(&full(x, s), &full(y, t)) / 4.0
}

fn product_state(x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    kron_vec(&full(x, 1.0), &full(y, 1.0))
}

/// `𝓜_x⊗𝓜_y(e^{tW} ω_x⊗ω_y)`.
pub fn circuit_f(w: &Generator, x: &DVector<f64>, y: &DVector<f64>, t: f64) -> Result<f64> {
    check_pair(w, x, y)?;
    if !t.is_finite() {
        return Err(Error::input("time must be finite"));
    }
    let e = w.exp(t);
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix exponential overflowed".into()));
    }
    Ok(product_measurement(x, y, 1.0, 1.0).dot(&(e * product_state(x, y))))
}

/// Outcome signs of the four product circuits. `(+,+)` has probability 1
/// at `t = 0`; the others have probability 0.
pub const CIRCUIT_SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeReport {
    pub samples: usize,
    /// `max |f′(0)|` over all samples and circuits.
    pub max_abs_first: f64,
    /// `max f″(0)` of the probability-one circuit.
    pub max_second: f64,
    /// Largest violation of the second-order signs: `f″ ≤ 0` at
    /// probability one, `f″ ≥ 0` at probability zero. Zero when none.
    pub second_order_violation: f64,
    /// Index of the sample with the largest `|f′(0)|`.
    pub worst_sample: Option<usize>,
    pub max_fd_rel_error: f64,
}

struct SampleDerivatives {
    first: [f64; 4],
    second: [f64; 4],
    fd_error: f64,
}

fn derivatives_at(
    w: &Generator,
    w2: &DMatrix<f64>,
    plus: &DMatrix<f64>,
    minus: &DMatrix<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> SampleDerivatives {
    let omega = product_state(x, y);
    let wo = &w.matrix * &omega;
    let w2o = w2 * &omega;
    let po = plus * &omega;
    let mo = minus * &omega;
    let mut out = SampleDerivatives {
        first: [0.0; 4],
        second: [0.0; 4],
        fd_error: 0.0,
    };
    for (k, &(s, t)) in CIRCUIT_SIGNS.iter().enumerate() {
        let m = product_measurement(x, y, s, t);
        let f0 = m.dot(&omega);
        let (fp, fm) = (m.dot(&po), m.dot(&mo));
        let first = m.dot(&wo);
        let second = m.dot(&w2o);
        let fd1 = (fp - fm) / (2.0 * FD_STEP);
        let fd2 = (fp - 2.0 * f0 + fm) / (FD_STEP * FD_STEP);
        let e1 = (fd1 - first).abs() / first.abs().max(1.0);
        let e2 = (fd2 - second).abs() / second.abs().max(1.0);
        out.first[k] = first;
        out.second[k] = second;
        out.fd_error = out.fd_error.max(e1).max(e2);
    }
    out
}

/// Analytic `f′(0)` and `f″(0)` for the four product circuits at each
/// `(x, y)`, cross-checked against central differences.
pub fn derivative_constraints(w: &Generator, samples: &[(DVector<f64>, DVector<f64>)]) -> Result<DerivativeReport> {
    for (x, y) in samples {
        check_pair(w, x, y)?;
    }
    let w2 = &w.matrix * &w.matrix;
    let plus = w.exp(FD_STEP);
    let minus = w.exp(-FD_STEP);
    let per: Vec<SampleDerivatives> = samples
        .par_iter()
        .map(|(x, y)| derivatives_at(w, &w2, &plus, &minus, x, y))
        .collect();
    let mut report = DerivativeReport {
        samples: samples.len(),
        max_abs_first: 0.0,
        max_second: f64::NEG_INFINITY,
        second_order_violation: 0.0,
        worst_sample: None,
        max_fd_rel_error: 0.0,
    };
    for (i, s) in per.iter().enumerate() {
        for k in 0..4 {
            if s.first[k].abs() > report.max_abs_first {
                report.max_abs_first = s.first[k].abs();
                report.worst_sample = Some(i);
            }
            let violation = if k == 0 { s.second[k] } else { -s.second[k] };
            report.second_order_violation = report.second_order_violation.max(violation);
        }
        report.max_second = report.max_second.max(s.second[0]);
        report.max_fd_rel_error = report.max_fd_rel_error.max(s.fd_error);
    }
    if report.max_fd_rel_error > FD_REL_TOL {
        return Err(Error::Numerical(format!(
            "analytic and finite-difference derivatives disagree (relative {:.3e})",
            report.max_fd_rel_error
        )));
    }
    Ok(report)
}

/// Random `(x, y)` pairs, one derived stream per index.
pub fn random_pairs(d: usize, count: usize, seed: u64) -> Vec<(DVector<f64>, DVector<f64>)> {
    (0..count)
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            (random_unit(d, &mut rng), random_unit(d, &mut rng))
        })
        .collect()
}

/// Sampling plan for [`admissibility_scan`].
#[derive(Debug, Clone, Serialize)]
pub struct ScanGrid {
    pub pairs: usize,
    pub times: Vec<f64>,
    /// Random B outcomes conditioned on per sample, besides the two
    /// directions along the evolved B marginal.
    pub extra_conditions: usize,
    pub seed: u64,
}

impl ScanGrid {
    pub fn new(pairs: usize, seed: u64) -> Self {
        use std::f64::consts::PI;
        Self {
            pairs,
            times: vec![PI / 8.0, PI / 4.0, PI / 2.0, PI, -PI / 4.0, -PI / 2.0, -PI],
            extra_conditions: 4,
            seed,
        }
    }

    pub fn samples(&self) -> usize {
        self.pairs * self.times.len()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    /// Sample index `pair · |times| + time index`.
    pub sample: usize,
    #[serde(serialize_with = "ser::vector")]
    pub x: DVector<f64>,
    #[serde(serialize_with = "ser::vector")]
    pub y: DVector<f64>,
    pub t: f64,
    /// B outcome direction conditioned on.
    #[serde(serialize_with = "ser::vector")]
    pub b: DVector<f64>,
    /// A outcome direction achieving the extreme probability.
    #[serde(serialize_with = "ser::vector")]
    pub a: DVector<f64>,
    /// Offending probability, below 0 or above 1.
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum ScanOutcome {
    Pass { samples_checked: usize },
    Violation(Box<Violation>),
}

impl ScanOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, ScanOutcome::Pass { .. })
    }

    pub fn violation(&self) -> Option<&Violation> {
        match self {
            ScanOutcome::Violation(v) => Some(v),
            ScanOutcome::Pass { .. } => None,
        }
    }
}

/// Extreme product-effect probabilities for B outcome `𝓜_b`: the A-side
/// functional `w = S·½(1,b)` gives probabilities `½(w₀ ± |w̄|)` over A
/// directions. The conditional A state lies in the ball iff the lower one
/// is nonnegative.
fn check_state(d: usize, state: &DVector<f64>, b: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
    let s = DMatrix::from_row_slice(d + 1, d + 1, state.as_slice());
    let w = s * full(b, 1.0) / 2.0;
    let wb = w.rows(1, d).into_owned();
    let n = wb.norm();
    let dir = if n > 0.0 { &wb / n } else { full(b, 1.0).rows(1, d).into_owned() };
    let low = (w[0] - n) / 2.0;
    let high = (w[0] + n) / 2.0;
    if low < -PROB_TOL {
        Some((low, -dir))
    } else if high > 1.0 + PROB_TOL {
        Some((high, dir))
    } else {
        None
    }
}

fn scan_sample(w: &Generator, grid: &ScanGrid, exps: &[DMatrix<f64>], sample: usize) -> Option<Violation> {
    let d = w.dim;
    let (pair, ti) = (sample / grid.times.len(), sample % grid.times.len());
    let mut rng = rng_from_seed(derive_seed(grid.seed, pair as u64));
    let x = random_unit(d, &mut rng);
    let y = random_unit(d, &mut rng);
    let state = &exps[ti] * product_state(&x, &y);
    let marginal = state.rows(1, d).into_owned();
    let mut conditions = Vec::with_capacity(grid.extra_conditions + 2);
    if marginal.norm() > 1e-12 {
        let m = marginal.normalize();
        conditions.push(-&m);
        conditions.push(m);
    }
    let mut crng = rng_from_seed(derive_seed(grid.seed ^ 0x5eed, sample as u64));
    for _ in 0..grid.extra_conditions {
        conditions.push(random_unit(d, &mut crng));
    }
    for b in conditions {
        if let Some((value, a)) = check_state(d, &state, &b) {
            return Some(Violation {
                sample,
                x,
                y,
                t: grid.times[ti],
                b,
                a,
                value,
            });
        }
    }
    None
}

/// Checks product-effect probabilities and conditional states along
/// `e^{tW}(ω_x⊗ω_y)` and returns the lowest-index violation.
pub fn admissibility_scan(w: &Generator, grid: &ScanGrid) -> ScanOutcome {
    let exps: Vec<DMatrix<f64>> = grid.times.iter().map(|&t| w.exp(t)).collect();
    let total = grid.samples();
    const CHUNK: usize = 512;
    let mut start = 0;
    while start < total {
        let end = (start + CHUNK).min(total);
        let found = (start..end)
            .into_par_iter()
            .filter_map(|s| scan_sample(w, grid, &exps, s))
            .min_by_key(|v| v.sample);
        if let Some(v) = found {
            return ScanOutcome::Violation(Box::new(v));
        }
        start = end;
    }
    ScanOutcome::Pass {
        samples_checked: total,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockWitness {
    #[serde(serialize_with = "ser::vector")]
    pub a: DVector<f64>,
    #[serde(serialize_with = "ser::vector")]
    pub b: DVector<f64>,
    /// `(a⊗b)ᵀ V² (a⊗b)`, negative.
    pub value: f64,
    pub trace_v2: f64,
    pub frobenius_sq: f64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum BlockVerdict {
    Pass,
    Witness(Box<BlockWitness>),
}

/// For antisymmetric `V` on `ℝ^d⊗ℝ^d`, finds unit `a, b` with
/// `(a⊗b)ᵀV²(a⊗b) = −|V(a⊗b)|² < 0`, or passes when `V = 0`.
pub fn block_reject(v: &DMatrix<f64>) -> Result<BlockVerdict> {
    let n = v.nrows();
    let d = (n as f64).sqrt().round() as usize;
    if !v.is_square() || d * d != n || d == 0 {
        return Err(Error::input("V must be d²×d²"));
    }
    if antisymmetry_defect(v) > GAUGE_TOL {
        return Err(Error::input("gauge error: V is not antisymmetric"));
    }
    let frob = v.norm_squared();
    if frob.sqrt() <= 1e-10 {
        return Ok(BlockVerdict::Pass);
    }
    let v2 = v * v;
    let trace_v2 = v2.trace();
    let value_at = |a: &DVector<f64>, b: &DVector<f64>| {
        let p = kron_vec(a, b);
        p.dot(&(&v2 * &p))
    };
    let threshold = -1e-14 * frob;
    let witness = |a: DVector<f64>, b: DVector<f64>| {
        let value = value_at(&a, &b);
        (value < threshold).then(|| {
            BlockVerdict::Witness(Box::new(BlockWitness {
                a,
                b,
                value,
                trace_v2,
                frobenius_sq: frob,
            }))
        })
    };
    // Seed: best rank-one product approximation of the top eigenvector of −V².
    let eig = (-&v2).symmetric_eigen();
    let top = eig.eigenvalues.imax();
    let u = eig.eigenvectors.column(top);
    let um = DMatrix::from_row_slice(d, d, u.as_slice());
    let svd = um.svd(true, true);
    let k = svd.singular_values.imax();
    let a = svd.u.as_ref().expect("u requested").column(k).into_owned();
    let b = svd.v_t.as_ref().expect("v_t requested").row(k).transpose();
    if let Some(w) = witness(a.normalize(), b.normalize()) {
        return Ok(w);
    }
    // Product basis vectors span the space, so one of them is moved by V.
    for i in 0..d {
        for j in 0..d {
            let mut a = DVector::zeros(d);
            let mut b = DVector::zeros(d);
            a[i] = 1.0;
            b[j] = 1.0;
            if let Some(w) = witness(a, b) {
                return Ok(w);
            }
        }
    }
    Err(Error::Verification(
        "no product witness found for a nonzero V; this indicates a bug".into(),
    ))
}

fn check_hermitian(h: &CMatrix, what: &str) -> Result<()> {
    if h.shape() != (4, 4) {
        return Err(Error::input(format!("{what} must be 4×4")));
    }
    if (h - h.adjoint()).camax() > 1e-12 {
        return Err(Error::input(format!("{what} is not Hermitian")));
    }
    Ok(())
}

/// Generator of `ρ ↦ e^{−iHt} ρ e^{iHt}` on Pauli coefficients:
/// `W_{μν,αβ} = ¼ tr((σ_μ⊗σ_ν)(−i)[H, σ_α⊗σ_β])`.
pub fn quantum_generator(h: &CMatrix) -> Result<Generator> {
    check_hermitian(h, "Hamiltonian")?;
    let minus_i = Complex::new(0.0, -1.0);
    let paulis: Vec<CMatrix> = (0..16).map(|k| qubit::pauli_pair(k / 4, k % 4)).collect();
    let mut w = DMatrix::zeros(16, 16);
    for (col, s) in paulis.iter().enumerate() {
        let comm = (h * s - s * h) * minus_i;
        for (row, p) in paulis.iter().enumerate() {
            w[(row, col)] = (p * &comm).trace().re / 4.0;
        }
    }
    Generator::new(3, w)
}

/// `e^{−iHt} ρ e^{iHt}`.
pub fn evolve_density(h: &CMatrix, rho: &CMatrix, t: f64) -> Result<CMatrix> {
    check_hermitian(h, "Hamiltonian")?;
    let u = (h * Complex::new(0.0, -t)).exp();
    Ok(&u * rho * u.adjoint())
}

/// The 15 traceless Pauli products `σ_μ⊗σ_ν`, `(μ,ν) ≠ (0,0)`.
pub fn pauli_hamiltonians() -> Vec<CMatrix> {
    (1..16).map(|k| qubit::pauli_pair(k / 4, k % 4)).collect()
}

/// `π|11⟩⟨11|`, which generates the controlled-Z gate at `t = 1`.
pub fn controlled_phase_hamiltonian() -> CMatrix {
    let mut h = CMatrix::zeros(4, 4);
    h[(3, 3)] = Complex::new(std::f64::consts::PI, 0.0);
    h
}

/// `|+⟩⊗|+⟩` as a density matrix.
pub fn plus_plus() -> CMatrix {
    qubit::projector(&[Complex::new(0.5, 0.0); 4])
}

/// Sum of the absolute negative eigenvalues of the partial transpose.
pub fn negativity(rho: &CMatrix) -> Result<f64> {
    check_hermitian(rho, "density matrix").map_err(|_| Error::input("invalid density matrix: not a Hermitian 4×4 matrix"))?;
    if (rho.trace().re - 1.0).abs() > 1e-9 {
        return Err(Error::input("invalid density matrix: trace is not 1"));
    }
    if qubit::min_eigenvalue(rho) < -1e-9 {
        return Err(Error::input("invalid density matrix: not positive semidefinite"));
    }
    let pt = CMatrix::from_fn(4, 4, |r, c| {
        let (i, j) = (r / 2, r % 2);
        let (k, l) = (c / 2, c % 2);
        rho[(2 * i + l, 2 * k + j)]
    });
    let herm = (&pt + pt.adjoint()) * Complex::new(0.5, 0.0);
    Ok(herm.symmetric_eigenvalues().iter().filter(|e| **e < 0.0).map(|e| -e).sum())
}

/// Negativity of the two-qubit state with Pauli coefficients `c`.
pub fn negativity_of_coefficients(c: &DVector<f64>) -> Result<f64> {
    if c.len() != 16 {
        return Err(Error::input("expected 16 coefficients"));
    }
    negativity(&qubit::density(c))
}

/// Basis `(k, l)` with `k < l` of antisymmetric matrices supported on
/// indices `1..n`, which is the space of normalization-preserving
/// antisymmetric generators.
fn generator_basis(n: usize) -> Vec<(usize, usize)> {
    (1..n).flat_map(|k| (k + 1..n).map(move |l| (k, l))).collect()
}

fn from_params(n: usize, basis: &[(usize, usize)], theta: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for (&(k, l), &v) in basis.iter().zip(theta) {
        m[(k, l)] = v;
        m[(l, k)] = -v;
    }
    m
}

fn to_params(m: &DMatrix<f64>, basis: &[(usize, usize)]) -> DVector<f64> {
    DVector::from_iterator(basis.len(), basis.iter().map(|&(k, l)| (m[(k, l)] - m[(l, k)]) / 2.0))
}

fn constraint_rows(d: usize, basis: &[(usize, usize)], pairs: &[(DVector<f64>, DVector<f64>)]) -> DMatrix<f64> {
    // f′(0) = pᵀWq for each zero-probability circuit; the probability-one
    // circuit is implied by antisymmetry.
    let rows: Vec<DVector<f64>> = pairs
        .par_iter()
        .flat_map_iter(|(x, y)| {
            let q = product_state(x, y);
            CIRCUIT_SIGNS[1..]
                .iter()
                .map(|&(s, t)| {
                    let p = product_measurement(x, y, s, t);
                    DVector::from_iterator(
                        basis.len(),
                        basis.iter().map(|&(k, l)| p[k] * q[l] - p[l] * q[k]),
                    )
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let _ = d;
    DMatrix::from_fn(rows.len(), basis.len(), |r, c| rows[r][c])
}

#[derive(Debug, Clone, Serialize)]
pub struct NonlocalVerdict {
    pub index: usize,
    pub outcome: ScanOutcome,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibleSpaceReport {
    pub dim: usize,
    pub sample_count: usize,
    pub feasible_dim: usize,
    /// Dimension of the lifted-local generators, `d(d−1)`.
    pub local_dim: usize,
    /// Dimension of the intersection of the feasible and lifted-local spaces.
    pub local_intersection_dim: usize,
    /// Feasible generators orthogonal to the lifted-local ones.
    #[serde(skip)]
    pub nonlocal_basis: Vec<Generator>,
    pub nonlocal_verdicts: Vec<NonlocalVerdict>,
    /// Set when halving the samples changes the dimension.
    pub inconclusive: bool,
    #[serde(skip)]
    pub basis: Vec<Generator>,
}

fn lifted_local_basis(d: usize, basis: &[(usize, usize)]) -> DMatrix<f64> {
    let mut cols = Vec::new();
    for side in 0..2 {
        for i in 0..d {
            for j in i + 1..d {
                let mut x = DMatrix::zeros(d, d);
                x[(i, j)] = 1.0;
                x[(j, i)] = -1.0;
                let z = DMatrix::zeros(d, d);
                let g = if side == 0 { lift_local(&x, &z) } else { lift_local(&z, &x) }
                    .expect("antisymmetric by construction");
                cols.push(to_params(&g.matrix, basis));
            }
        }
    }
    DMatrix::from_columns(&cols)
}

fn orthonormal_columns(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return m.clone();
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let cols: Vec<DVector<f64>> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol)
        .map(|i| u.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(m.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Solves the first-order constraints of the four product circuits at
/// `sample_count` random pairs over normalization-preserving antisymmetric
/// generators, and scans every feasible direction orthogonal to the
/// lifted-local ones.
pub fn feasible_generator_space(d: usize, sample_count: usize, seed: u64, scan: &ScanGrid) -> Result<FeasibleSpaceReport> {
    if d == 0 {
        return Err(Error::input("dimension must be at least 1"));
    }
    if sample_count == 0 {
        return Err(Error::input("sample count must be positive"));
    }
    let n = (d + 1) * (d + 1);
    let basis = generator_basis(n);
    let pairs = random_pairs(d, sample_count, seed);
    let rows = constraint_rows(d, &basis, &pairs);
    let null = null_space(&rows, 1e-9);
    let half = null_space(&constraint_rows(d, &basis, &pairs[..sample_count.div_ceil(2)]), 1e-9);
    let inconclusive = half.ncols() != null.ncols() || rows.nrows() < basis.len();

    let local = orthonormal_columns(&lifted_local_basis(d, &basis), 1e-9);
    let local_dim = local.ncols();
    let combined = if null.ncols() == 0 {
        local.clone()
    } else {
        let mut c = DMatrix::zeros(basis.len(), null.ncols() + local_dim);
        c.view_mut((0, 0), (basis.len(), null.ncols())).copy_from(&null);
        c.view_mut((0, null.ncols()), (basis.len(), local_dim)).copy_from(&local);
        c
    };
    let sum_dim = orthonormal_columns(&combined, 1e-9).ncols();
    let local_intersection_dim = null.ncols() + local_dim - sum_dim;

    // Component of the feasible space orthogonal to the local subspace.
    let projected = &null - &local * (local.transpose() * &null);
    let nonlocal = orthonormal_columns(&projected, 1e-7);
    let to_gen = |col: DVector<f64>| -> Result<Generator> {
        let m = from_params(n, &basis, col.as_slice());
        let norm = m.norm();
        Generator::new(d, m / norm)
    };
    let nonlocal_basis = nonlocal
        .column_iter()
        .map(|c| to_gen(c.into_owned()))
        .collect::<Result<Vec<_>>>()?;
    let nonlocal_verdicts = nonlocal_basis
        .iter()
        .enumerate()
        .map(|(index, g)| NonlocalVerdict {
            index,
            outcome: admissibility_scan(g, scan),
        })
        .collect();
    let basis_gens = null
        .column_iter()
        .map(|c| to_gen(c.into_owned()))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeasibleSpaceReport {
        dim: d,
        sample_count,
        feasible_dim: null.ncols(),
        local_dim,
        local_intersection_dim,
        nonlocal_basis,
        nonlocal_verdicts,
        inconclusive,
        basis: basis_gens,
    })
}

/// Distance from `w` to the span of the feasible basis, relative to `|w|`.
pub fn feasible_residual(report: &FeasibleSpaceReport, w: &Generator) -> f64 {
    let n = w.matrix.nrows();
    let basis = generator_basis(n);
    let target = to_params(&w.matrix, &basis);
    let cols: Vec<DVector<f64>> = report.basis.iter().map(|g| to_params(&g.matrix, &basis)).collect();
    if cols.is_empty() {
        return 1.0;
    }
    let q = orthonormal_columns(&DMatrix::from_columns(&cols), 1e-9);
    let residual = &target - &q * (q.transpose() * &target);
    residual.norm() / target.norm().max(f64::MIN_POSITIVE)
}

/// Least-squares distance from `w` to the lifted-local generators,
/// relative to `|w|`.
pub fn local_residual(w: &Generator) -> f64 {
    let n = w.matrix.nrows();
    let basis = generator_basis(n);
    let target = to_params(&w.matrix, &basis);
    let q = orthonormal_columns(&lifted_local_basis(w.dim, &basis), 1e-9);
    let residual = &target - &q * (q.transpose() * &target);
    residual.norm() / target.norm().max(f64::MIN_POSITIVE)
}
