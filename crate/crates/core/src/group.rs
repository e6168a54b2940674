//! Rotation-group sampling, stabilizer averaging, invariant inner products
//! and the noisiness (group-majorization) order on ball states.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpt::{BallSpace, BallState};
use crate::linalg::{
    check_dim, check_unit, derive_seed, gaussian_vector, orthogonality_defect,
    orthonormal_complement, rng_from_seed, sorted_eigen, MEMBERSHIP_TOL,
};
use crate::lp::convex_fit;

/// Orthogonality tolerance for [`Rotation`].
pub const ROTATION_TOL: f64 = 1e-10;

/// Element of SO(d), or of O(1) = {+1, −1} when d = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    matrix: DMatrix<f64>,
}

impl Rotation {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::input("rotation must be a non-empty square matrix"));
        }
        let defect = orthogonality_defect(&matrix);
        if !(defect <= ROTATION_TOL) {
            return Err(Error::input(format!(
                "matrix is not orthogonal (defect {defect:.3e})"
            )));
        }
        if matrix.nrows() >= 2 && matrix.determinant() < 0.0 {
            return Err(Error::input("rotation must have determinant +1"));
        }
        Ok(Self { matrix })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            matrix: DMatrix::identity(d, d),
        }
    }

    /// Rotation by `angle` in the oriented plane spanned by basis axes `i`, `j`.
    pub fn planar(d: usize, i: usize, j: usize, angle: f64) -> Result<Self> {
        if d < 2 || i >= d || j >= d || i == j {
            return Err(Error::input("planar rotation needs two distinct axes in d ≥ 2"));
        }
        let mut m = DMatrix::identity(d, d);
        let (s, c) = angle.sin_cos();
        m[(i, i)] = c;
        m[(j, j)] = c;
        m[(i, j)] = -s;
        m[(j, i)] = s;
        Ok(Self { matrix: m })
    }

    /// Rotation by `angle` in the plane spanned by orthonormal `u`, `v`, turning
    /// `u` towards `v`; identity on the orthogonal complement.
    pub fn in_plane(u: &DVector<f64>, v: &DVector<f64>, angle: f64) -> Self {
        let d = u.len();
        let (s, c) = angle.sin_cos();
        let m = DMatrix::identity(d, d)
            + (u * u.transpose() + v * v.transpose()) * (c - 1.0)
            + (v * u.transpose() - u * v.transpose()) * s;
        Self { matrix: m }
    }

    /// Minimal rotation taking unit vector `from` to unit vector `to`. For
    /// antipodal inputs the turning plane is chosen deterministically.
    pub fn aligning(from: &DVector<f64>, to: &DVector<f64>) -> Result<Self> {
        let d = from.len();
        check_unit(from, "source direction")?;
        check_unit(to, "target direction")?;
        if d == 1 {
            return Ok(Self {
                matrix: DMatrix::from_element(1, 1, (from[0] * to[0]).signum()),
            });
        }
        let cos = from.dot(to).clamp(-1.0, 1.0);
        let mut perp = to - from * cos;
        if perp.norm() < 1e-12 {
            if cos > 0.0 {
                return Ok(Self::identity(d));
            }
            perp = orthonormal_complement(from)[0].clone();
        }
        let perp = perp.normalize();
        let angle = perp.dot(to).atan2(cos);
        Ok(Self::in_plane(from, &perp, angle))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    pub fn inverse(&self) -> Self {
        Self {
            matrix: self.matrix.transpose(),
        }
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Self {
            matrix: &self.matrix * &other.matrix,
        }
    }

    /// Action on the Bloch vectors of `space`: `O R O⁻¹`.
    pub fn bloch_action(&self, space: &BallSpace) -> DMatrix<f64> {
        let o = space.frame();
        o * &self.matrix * o.transpose()
    }

    /// Block action `1 ⊕ O R O⁻¹` on full state vectors `(1, ω̂)`.
    pub fn state_action(&self, space: &BallSpace) -> DMatrix<f64> {
        let d = self.dim();
        let mut g = DMatrix::zeros(d + 1, d + 1);
        g[(0, 0)] = 1.0;
        g.view_mut((1, 1), (d, d)).copy_from(&self.bloch_action(space));
        g
    }

    pub fn act_on_state(&self, space: &BallSpace, state: &BallState) -> BallState {
        BallState::from_bloch_unchecked(self.bloch_action(space) * state.bloch())
    }
}

/// Haar-random element of SO(d) (uniform on O(1) for d = 1), deterministic in `seed`.
///
/// Gaussian matrix, QR, sign correction by the diagonal of R, then a column
/// negation if the determinant came out negative.
pub fn haar_sample(d: usize, seed: u64) -> Result<Rotation> {
    if d == 0 {
        return Err(Error::input("dimension must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    if d == 1 {
        let g = gaussian_vector(1, &mut rng)[0];
        let s = if g < 0.0 { -1.0 } else { 1.0 };
        return Ok(Rotation {
            matrix: DMatrix::from_element(1, 1, s),
        });
    }
    let g = DMatrix::from_fn(d, d, |_, _| {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            let col = -q.column(j);
            q.set_column(j, &col);
        }
    }
    if q.determinant() < 0.0 {
        let col = -q.column(0);
        q.set_column(0, &col);
    }
    Ok(Rotation { matrix: q })
}

/// Haar samples indexed by stream: sample `i` depends only on `(seed, i)`.
pub fn haar_pool(d: usize, count: usize, seed: u64) -> Result<Vec<Rotation>> {
    (0..count)
        .map(|i| haar_sample(d, derive_seed(seed, i as u64)))
        .collect()
}

/// Result of averaging a state over the stabilizer of a direction.
#[derive(Debug, Clone)]
pub struct StabilizerAverage {
    pub state: BallState,
    /// Monte Carlo standard error on the Bloch entries; zero for the exact
    /// rules used when d ≤ 3.
    pub std_error: f64,
}

/// Averages `G_R ω` over the rotations `R` that fix the physical direction `y`.
///
/// d ≤ 2: the stabilizer is trivial. d = 3: equally spaced circle
/// quadrature (exact for the degree-one action). d ≥ 4: Monte Carlo over
/// SO(d−1) acting on the complement of `O·y`.
pub fn stabilizer_average(
    space: &BallSpace,
    state: &BallState,
    y: &DVector<f64>,
    quadrature_size: usize,
    seed: u64,
) -> Result<StabilizerAverage> {
    let d = space.dim();
    check_dim(y, d, "stabilizer direction")?;
    check_dim(state.bloch(), d, "state")?;
    check_unit(y, "stabilizer direction")?;
    if d <= 2 {
        return Ok(StabilizerAverage {
            state: state.clone(),
            std_error: 0.0,
        });
    }
    if quadrature_size < 2 {
        return Err(Error::input("quadrature size must be at least 2 for d ≥ 3"));
    }
    let axis = space.frame() * y;
    let complement = orthonormal_complement(&axis);
    let w = state.bloch();
    if d == 3 {
        let (u, v) = (&complement[0], &complement[1]);
        let mut acc = DVector::zeros(3);
        for k in 0..quadrature_size {
            let t = 2.0 * std::f64::consts::PI * k as f64 / quadrature_size as f64;
            acc += Rotation::in_plane(u, v, t).apply(w);
        }
        return Ok(StabilizerAverage {
            state: BallState::from_bloch_unchecked(acc / quadrature_size as f64),
            std_error: 0.0,
        });
    }
    // Coordinates of ω̂ in the basis (axis, complement...).
    let along = axis.dot(w);
    let transverse = DVector::from_iterator(d - 1, complement.iter().map(|c| c.dot(w)));
    let mut sum = DVector::zeros(d - 1);
    let mut sum_sq = DVector::zeros(d - 1);
    for k in 0..quadrature_size {
        let r = haar_sample(d - 1, derive_seed(seed, k as u64))?;
        let img = r.apply(&transverse);
        sum_sq += img.component_mul(&img);
        sum += img;
    }
    let n = quadrature_size as f64;
    let mean = &sum / n;
    let var = (sum_sq / n - mean.component_mul(&mean)).map(|v| v.max(0.0));
    let std_error = (var.max() / (n - 1.0).max(1.0)).sqrt();
    let mut out = &axis * along;
    for (c, m) in complement.iter().zip(mean.iter()) {
        out += c * *m;
    }
    Ok(StabilizerAverage {
        state: BallState::from_bloch_unchecked(out),
        std_error,
    })
}

/// Noisiness order: `φ ⪯ ω` (φ at least as noisy as ω) iff `|φ̂| ≤ |ω̂|`.
pub fn majorization_le(_space: &BallSpace, phi: &BallState, omega: &BallState) -> bool {
    phi.norm() <= omega.norm() + MEMBERSHIP_TOL
}

/// Witness that `φ̂ = Σ λ_j R_j ω̂` up to `residual`.
///
/// `rotations` hold the Bloch-space action of each group element.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MajorizationCertificate {
    pub weights: Vec<f64>,
    pub rotations: Vec<Vec<Vec<f64>>>,
    pub residual: f64,
}

impl MajorizationCertificate {
    pub fn rotation_matrices(&self) -> Vec<DMatrix<f64>> {
        self.rotations
            .iter()
            .map(|rows| {
                let n = rows.len();
                DMatrix::from_fn(n, n, |i, j| rows[i][j])
            })
            .collect()
    }

    /// Recomputes `Σ λ_j R_j ω̂`.
    pub fn combine(&self, omega: &BallState) -> DVector<f64> {
        let mut acc = DVector::zeros(omega.dim());
        for (w, r) in self.weights.iter().zip(self.rotation_matrices()) {
            acc += r * omega.bloch() * *w;
        }
        acc
    }
}

/// Acceptance threshold on the certificate residual.
pub const CERTIFICATE_TOL: f64 = 1e-6;

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Searches for weights λ ≥ 0, Σλ = 1 with `Σ λ_j R_j ω̂ = φ̂` over `pool`
/// Haar rotations plus rotations that carry ω̂ onto ±φ̂ within
/// span{ω̂, φ̂}. Returns `None` when the best residual exceeds
/// [`CERTIFICATE_TOL`].
pub fn majorization_certificate(
    space: &BallSpace,
    phi: &BallState,
    omega: &BallState,
    pool: usize,
    seed: u64,
) -> Result<Option<MajorizationCertificate>> {
    let d = space.dim();
    check_dim(phi.bloch(), d, "φ")?;
    check_dim(omega.bloch(), d, "ω")?;
    let w = omega.bloch();
    let target = phi.bloch();

    let mut actions: Vec<DMatrix<f64>> = vec![DMatrix::identity(d, d)];
    if w.norm() > 1e-12 {
        let wu = w.normalize();
        let dirs: Vec<DVector<f64>> = if target.norm() > 1e-12 {
            let t = target.normalize();
            vec![t.clone(), -t]
        } else {
            vec![-wu.clone()]
        };
        for t in dirs {
            actions.push(Rotation::aligning(&wu, &t)?.matrix().clone());
        }
    }
    for r in haar_pool(d, pool, seed)? {
        actions.push(r.bloch_action(space));
    }

    let images: Vec<DVector<f64>> = actions.iter().map(|a| a * w).collect();
    let fit = convex_fit(&images, target)?;
    if fit.residual > CERTIFICATE_TOL {
        return Ok(None);
    }
    let mut weights = Vec::new();
    let mut rotations = Vec::new();
    for (lambda, a) in fit.weights.iter().zip(&actions) {
        if *lambda > 1e-12 {
            weights.push(*lambda);
            rotations.push(to_rows(a));
        }
    }
    let total: f64 = weights.iter().sum();
    for l in &mut weights {
        *l /= total;
    }
    let mut cert = MajorizationCertificate {
        weights,
        rotations,
        residual: 0.0,
    };
    cert.residual = (cert.combine(omega) - target).norm();
    if cert.residual > CERTIFICATE_TOL {
        return Ok(None);
    }
    Ok(Some(cert))
}

/// Invariant quadratic form estimated by group averaging.
#[derive(Debug, Clone)]
pub struct InvariantForm {
    /// `X = mean(GᵀG)`.
    pub matrix: DMatrix<f64>,
    /// Largest entrywise standard error of the mean.
    pub sampling_error: f64,
    /// `max_G ‖GᵀXG − X‖_max` over the samples.
    pub invariance_defect: f64,
    /// Distance of tested pair products to the nearest sample (max over pairs).
    pub closure_deviation: f64,
}

/// Averages `GᵀG` over the samples and reports how far the samples are from
/// forming a group.
pub fn invariant_inner_product(samples: &[DMatrix<f64>]) -> Result<InvariantForm> {
    let first = samples
        .first()
        .ok_or_else(|| Error::input("no group samples supplied"))?;
    let n = first.nrows();
    if samples.iter().any(|g| g.nrows() != n || g.ncols() != n) {
        return Err(Error::input("group samples must be square of equal size"));
    }
    let count = samples.len() as f64;
    let mut mean = DMatrix::zeros(n, n);
    let mut sq = DMatrix::zeros(n, n);
    for g in samples {
        let p = g.transpose() * g;
        sq += p.component_mul(&p);
        mean += p;
    }
    mean /= count;
    sq /= count;
    let sampling_error = if samples.len() > 1 {
        let var = (sq - mean.component_mul(&mean)).map(|v| v.max(0.0));
        (var.max() / (count - 1.0)).sqrt()
    } else {
        0.0
    };
    let (vals, _) = sorted_eigen(&mean);
    if vals[n - 1] <= 1e-12 * vals[0].max(1.0) {
        return Err(Error::Degenerate(
            "averaged form is not positive definite".into(),
        ));
    }
    let invariance_defect = samples
        .iter()
        .map(|g| (g.transpose() * &mean * g - &mean).amax())
        .fold(0.0, f64::max);

    let closure_deviation = closure_deviation(samples, 100);
    Ok(InvariantForm {
        matrix: mean,
        sampling_error,
        invariance_defect,
        closure_deviation,
    })
}

/// For up to `pairs` deterministic pseudo-random pairs (i, j), distance of
/// `G_i G_j` to the closest sample; the maximum is returned.
pub fn closure_deviation(samples: &[DMatrix<f64>], pairs: usize) -> f64 {
    let m = samples.len();
    if m == 0 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for k in 0..pairs.min(m * m) {
        let h = derive_seed(m as u64, k as u64);
        let i = (h % m as u64) as usize;
        let j = ((h >> 32) % m as u64) as usize;
        let prod = &samples[i] * &samples[j];
        let best = samples
            .iter()
            .map(|s| (&prod - s).amax())
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(best);
    }
    worst
}

/// Solves `GᵀXG = X` for all samples simultaneously; returns the symmetric
/// solution closest to `hint` (normalized to the trace of `hint`), or an
/// error if only the zero form survives.
pub fn exact_invariant_form(samples: &[DMatrix<f64>], hint: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = hint.nrows();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let k = pairs.len();
    let basis = |idx: usize| -> DMatrix<f64> {
        let (i, j) = pairs[idx];
        let mut e = DMatrix::zeros(n, n);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        e
    };
    // Normal matrix of the stacked linear map X ↦ GᵀXG − X.
    let mut normal = DMatrix::zeros(k, k);
    let images: Vec<Vec<DMatrix<f64>>> = samples
        .iter()
        .map(|g| (0..k).map(|a| g.transpose() * basis(a) * g - basis(a)).collect())
        .collect();
    for imgs in &images {
        for a in 0..k {
            for b in a..k {
                let v = imgs[a].dot(&imgs[b]);
                normal[(a, b)] += v;
                if a != b {
                    normal[(b, a)] += v;
                }
            }
        }
    }
    let (vals, vecs) = sorted_eigen(&normal);
    let cutoff = 1e-12 * vals[0].max(1e-300);
    let mut null: Vec<usize> = (0..k).filter(|&i| vals[i] <= cutoff).collect();
    if null.is_empty() {
        null.push(k - 1);
    }
    // Project the hint onto the numerical null space.
    let hint_coords = DVector::from_iterator(k, pairs.iter().map(|&(i, j)| hint[(i, j)]));
    let mut coords = DVector::zeros(k);
    for &c in &null {
        let v = vecs.column(c).into_owned();
        coords += &v * v.dot(&hint_coords);
    }
    let mut x = DMatrix::zeros(n, n);
    for (a, &(i, j)) in pairs.iter().enumerate() {
        x[(i, j)] = coords[a];
        x[(j, i)] = coords[a];
    }
    let tr = x.trace();
    if tr.abs() < 1e-14 {
        return Err(Error::Degenerate("no nonzero invariant form".into()));
    }
    Ok(x * (hint.trace() / tr))
}

/// One pair of the majorization cross-check.
#[derive(Debug, Clone, Serialize)]
pub struct MajorizationRow {
    pub pair: usize,
    pub phi_norm: f64,
    pub omega_norm: f64,
    pub norm_order: bool,
    pub certificate_found: bool,
    pub residual: Option<f64>,
    /// `tr(φ²) ≤ tr(ω²)` for the corresponding qubit states (d = 3 only).
    pub purity_order: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MajorizationCrossCheck {
    pub dim: usize,
    pub pool: usize,
    pub pairs: usize,
    pub lp_agreements: usize,
    pub purity_agreements: Option<usize>,
    pub rows: Vec<MajorizationRow>,
}

impl MajorizationCrossCheck {
    pub fn all_agree(&self) -> bool {
        self.lp_agreements == self.pairs && self.purity_agreements.is_none_or(|p| p == self.pairs)
    }
}

fn qubit_purity(bloch: &DVector<f64>) -> f64 {
    use crate::qubit::{pauli, CMatrix};
    use nalgebra::Complex;
    let mut rho = CMatrix::identity(2, 2) * Complex::new(0.5, 0.0);
    for k in 0..3 {
        rho += pauli(k + 1) * Complex::new(bloch[k] / 2.0, 0.0);
    }
    (&rho * &rho).trace().re
}

/// Compares the norm test with LP certificates on random state pairs, and
/// for `d = 3` with the qubit purity order.
pub fn majorization_cross_check(dim: usize, pairs: usize, pool: usize, seed: u64) -> Result<MajorizationCrossCheck> {
    use rayon::prelude::*;
    let space = BallSpace::noiseless(dim)?;
    let rows = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(derive_seed(seed, k as u64));
            let phi = BallState::new(crate::linalg::random_in_ball(dim, &mut rng))?;
            let omega = BallState::new(crate::linalg::random_in_ball(dim, &mut rng))?;
            let cert = majorization_certificate(&space, &phi, &omega, pool, derive_seed(seed ^ 0xa11, k as u64))?;
            let purity_order = (dim == 3).then(|| qubit_purity(phi.bloch()) <= qubit_purity(omega.bloch()));
            Ok(MajorizationRow {
                pair: k,
                phi_norm: phi.norm(),
                omega_norm: omega.norm(),
                norm_order: majorization_le(&space, &phi, &omega),
                certificate_found: cert.is_some(),
                residual: cert.map(|c| c.residual),
                purity_order,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lp_agreements = rows.iter().filter(|r| r.norm_order == r.certificate_found).count();
    let purity_agreements = (dim == 3).then(|| {
        rows.iter()
            .filter(|r| r.purity_order == Some(r.norm_order))
            .count()
    });
    Ok(MajorizationCrossCheck {
        dim,
        pool,
        pairs,
        lp_agreements,
        purity_agreements,
        rows,
    })
}
