//! The SO(3) frame bit: orbitope states `(1, M)`, their parametrization by
//! real 4×4 density matrices, frame effects, Procrustes maximizers and a
//! pair of codewords that the noisiness order cannot compare.

use nalgebra::DMatrix;
use num_rational::Ratio;
use num_traits::{Num, Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::group::Rotation;
use crate::linalg::sorted_eigen;

/// Real 4×4 density matrix: symmetric, PSD, unit trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RealDensity4 {
    u: DMatrix<f64>,
}

impl RealDensity4 {
    pub fn new(u: DMatrix<f64>) -> Result<Self> {
        if u.nrows() != 4 || u.ncols() != 4 {
            return Err(Error::input("density matrix must be 4×4"));
        }
        if (&u - u.transpose()).amax() > 1e-12 {
            return Err(Error::input("density matrix must be symmetric"));
        }
        if (u.trace() - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!("density matrix trace {} ≠ 1", u.trace())));
        }
        let (vals, _) = sorted_eigen(&u);
        if vals[3] < -1e-10 {
            return Err(Error::input(format!(
                "density matrix has negative eigenvalue {}",
                vals[3]
            )));
        }
        Ok(Self { u })
    }

    pub fn diagonal(d: [f64; 4]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&d)))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }
}

/// Orbitope coordinate `M` of the state `(1, M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBlochM {
    pub m: DMatrix<f64>,
}

impl FrameBlochM {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != 3 || m.ncols() != 3 {
            return Err(Error::input("frame Bloch matrix must be 3×3"));
        }
        Ok(Self { m })
    }

    /// Pure frame state `ω_Z`.
    pub fn pure(z: &Rotation) -> Result<Self> {
        Self::new(z.matrix().clone())
    }

    pub fn trace_norm(&self) -> f64 {
        self.m.singular_values().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.norm()
    }

    pub fn operator_norm(&self) -> f64 {
        self.m.singular_values().max()
    }
}

/// The nine affine entries of `M` in terms of the entries of `U`
/// (`u[i][j]`, 0-based), over any numeric field.
fn u_to_m_entries<T: Num + Copy>(u: &[[T; 4]; 4]) -> [[T; 3]; 3] {
    let two = T::one() + T::one();
    let d = |i: usize| u[i][i];
    let o = |i: usize, j: usize| two * u[i][j];
    [
        [
            d(0) + d(1) - d(2) - d(3),
            o(1, 2) - o(0, 3),
            o(0, 2) + o(1, 3),
        ],
        [
            o(1, 2) + o(0, 3),
            d(0) - d(1) + d(2) - d(3),
            o(2, 3) - o(0, 1),
        ],
        [
            o(1, 3) - o(0, 2),
            o(0, 1) + o(2, 3),
            d(0) - d(1) - d(2) + d(3),
        ],
    ]
}

/// Affine parametrization `U ↦ M`.
pub fn u_to_m(u: &RealDensity4) -> FrameBlochM {
    FrameBlochM {
        m: u_to_m_matrix(u.matrix()),
    }
}

/// `U ↦ M` on arbitrary 4×4 matrices (symmetrized first).
pub fn u_to_m_matrix(u: &DMatrix<f64>) -> DMatrix<f64> {
    let s = (u + u.transpose()) * 0.5;
    let arr: [[f64; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| s[(i, j)]));
    let m = u_to_m_entries(&arr);
    DMatrix::from_fn(3, 3, |i, j| m[i][j])
}

/// Inverse of [`u_to_m_matrix`] on symmetric trace-one matrices.
pub fn m_to_u(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = |i: usize, j: usize| m[(i, j)];
    let mut u = DMatrix::zeros(4, 4);
    u[(0, 0)] = (1.0 + e(0, 0) + e(1, 1) + e(2, 2)) / 4.0;
    u[(1, 1)] = (1.0 + e(0, 0) - e(1, 1) - e(2, 2)) / 4.0;
    u[(2, 2)] = (1.0 - e(0, 0) + e(1, 1) - e(2, 2)) / 4.0;
    u[(3, 3)] = (1.0 - e(0, 0) - e(1, 1) + e(2, 2)) / 4.0;
    let mut set = |i: usize, j: usize, v: f64| {
        u[(i, j)] = v;
        u[(j, i)] = v;
    };
    set(1, 2, (e(0, 1) + e(1, 0)) / 4.0);
    set(0, 3, (e(1, 0) - e(0, 1)) / 4.0);
    set(1, 3, (e(0, 2) + e(2, 0)) / 4.0);
    set(0, 2, (e(0, 2) - e(2, 0)) / 4.0);
    set(2, 3, (e(1, 2) + e(2, 1)) / 4.0);
    set(0, 1, (e(2, 1) - e(1, 2)) / 4.0);
    u
}

fn check_so3(y: &Rotation) -> Result<()> {
    if y.dim() != 3 {
        return Err(Error::input("frame effects are indexed by SO(3)"));
    }
    Ok(())
}

/// Probability `(tr(YᵀM) + 1)/4` of the frame effect `𝓜_Y`.
pub fn frame_effect(y: &Rotation, omega: &FrameBlochM) -> Result<f64> {
    check_so3(y)?;
    Ok(((y.matrix().transpose() * &omega.m).trace() + 1.0) / 4.0)
}

/// Maximizer of `tr(YᵀM)` over SO(3).
#[derive(Debug, Clone)]
pub struct Maximizer {
    pub rotation: Rotation,
    pub value: f64,
    /// Sum of the two smallest sign-adjusted singular values.
    pub spectral_gap: f64,
    pub unique: bool,
}

pub const UNIQUENESS_GAP: f64 = 1e-8;

fn procrustes(m: &DMatrix<f64>) -> (DMatrix<f64>, [f64; 3]) {
    let svd = m.clone().svd(true, true);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let p = DMatrix::from_fn(3, 3, |r, c| u[(r, idx[c])]);
    let q = DMatrix::from_fn(3, 3, |r, c| vt[(idx[c], r)]);
    let s = if (&p * q.transpose()).determinant() < 0.0 { -1.0 } else { 1.0 };
    let sig = [
        svd.singular_values[idx[0]],
        svd.singular_values[idx[1]],
        s * svd.singular_values[idx[2]],
    ];
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, s]));
    (&p * d * q.transpose(), sig)
}

/// `max_{Y ∈ SO(3)} tr(YᵀV)` for any 3×3 `V`.
pub fn max_trace_over_so3(v: &DMatrix<f64>) -> f64 {
    let (_, sig) = procrustes(v);
    sig.iter().sum()
}

/// Orthogonal Procrustes: `M = PΣQᵀ`, `Y* = P·diag(1, 1, det(PQᵀ))·Qᵀ`.
pub fn unique_maximizer(omega: &FrameBlochM) -> Maximizer {
    let (y, sig) = procrustes(&omega.m);
    let gap = sig[1] + sig[2];
    Maximizer {
        value: sig.iter().sum(),
        rotation: Rotation::new(y).expect("Procrustes output is special orthogonal"),
        spectral_gap: gap,
        unique: gap > UNIQUENESS_GAP,
    }
}

/// Exact rational value next to its floating-point evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactValue {
    pub exact: String,
    pub value: f64,
}

impl ExactValue {
    fn from_ratio(r: Ratio<i64>) -> Self {
        Self {
            exact: if *r.denom() == 1 {
                r.numer().to_string()
            } else {
                format!("{}/{}", r.numer(), r.denom())
            },
            value: *r.numer() as f64 / *r.denom() as f64,
        }
    }
}

/// Norms of one codeword of the incomparable pair.
#[derive(Debug, Clone, Serialize)]
pub struct CodewordNorms {
    pub u_diagonal: Vec<String>,
    pub m_diagonal: Vec<String>,
    pub trace_norm: ExactValue,
    /// Squared Frobenius norm (exact) and the Frobenius norm itself.
    pub frobenius_norm_squared: ExactValue,
    pub frobenius_norm: f64,
    pub maximizer_deviation: f64,
    pub maximizer_unique: bool,
}

/// Verification report for two frame-bit codewords of the identity frame
/// that are not rotation mixtures of one another.
#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleReport {
    pub first: CodewordNorms,
    pub second: CodewordNorms,
    /// `‖M‖₁ > ‖M′‖₁`.
    pub trace_norm_first_larger: bool,
    /// `‖M‖₂ < ‖M′‖₂`.
    pub frobenius_norm_second_larger: bool,
}

fn ratio_str(r: &Ratio<i64>) -> String {
    ExactValue::from_ratio(*r).exact
}

fn codeword_norms(diag: [Ratio<i64>; 4]) -> Result<CodewordNorms> {
    let zero = Ratio::zero();
    let u: [[Ratio<i64>; 4]; 4] =
        std::array::from_fn(|i| std::array::from_fn(|j| if i == j { diag[i] } else { zero }));
    let m = u_to_m_entries(&u);
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j && !v.is_zero() {
                return Err(Error::Verification("diagonal U produced off-diagonal M".into()));
            }
        }
    }
    let trace_norm: Ratio<i64> = (0..3).map(|i| m[i][i].abs()).sum();
    let frob_sq: Ratio<i64> = (0..3).map(|i| m[i][i] * m[i][i]).sum();

    let to_f = |r: &Ratio<i64>| *r.numer() as f64 / *r.denom() as f64;
    let density = RealDensity4::diagonal(std::array::from_fn(|i| to_f(&diag[i])))?;
    let fm = u_to_m(&density);
    let max = unique_maximizer(&fm);
    let deviation = (max.rotation.matrix() - DMatrix::<f64>::identity(3, 3)).amax();

    let tn = ExactValue::from_ratio(trace_norm);
    if (tn.value - fm.trace_norm()).abs() > 1e-12 {
        return Err(Error::Verification("trace norm mismatch".into()));
    }
    Ok(CodewordNorms {
        u_diagonal: diag.iter().map(ratio_str).collect(),
        m_diagonal: (0..3).map(|i| ratio_str(&m[i][i])).collect(),
        trace_norm: tn,
        frobenius_norm: to_f(&frob_sq).sqrt(),
        frobenius_norm_squared: ExactValue::from_ratio(frob_sq),
        maximizer_deviation: deviation,
        maximizer_unique: max.unique,
    })
}

/// Builds `U = diag(6,4,2,1)/13` and `U′ = diag(18,3,3,16)/40`, maps them to
/// the orbitope, and checks that both are codewords of the identity frame
/// whose trace and Frobenius norms are ordered oppositely. Since both norms
/// can only decrease under rotation mixtures, neither state is a rotation
/// mixture of the other.
pub fn assumption2_counterexample() -> Result<CounterexampleReport> {
    let r = |n: i64, d: i64| Ratio::new(n, d);
    let first = codeword_norms([r(6, 13), r(4, 13), r(2, 13), r(1, 13)])?;
    let second = codeword_norms([r(18, 40), r(3, 40), r(3, 40), r(16, 40)])?;
    for (name, c) in [("M", &first), ("M′", &second)] {
        if c.maximizer_deviation > 1e-10 || !c.maximizer_unique {
            return Err(Error::Verification(format!(
                "{name} is not a codeword of the identity frame"
            )));
        }
    }
    let report = CounterexampleReport {
        trace_norm_first_larger: first.trace_norm.value > second.trace_norm.value,
        frobenius_norm_second_larger: first.frobenius_norm < second.frobenius_norm,
        first,
        second,
    };
    if !report.trace_norm_first_larger || !report.frobenius_norm_second_larger {
        return Err(Error::Verification("norm inequalities do not oppose".into()));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{haar_pool, haar_sample};
    use crate::linalg::rng_from_seed;
    use rand::Rng;

    fn diag(v: [f64; 3]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&v))
    }

    #[test]
    fn parametrization_examples() {
        let pure = RealDensity4::diagonal([1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(u_to_m(&pure).m, DMatrix::identity(3, 3));
        let center = RealDensity4::diagonal([0.25; 4]).unwrap();
        assert_eq!(u_to_m(&center).m, DMatrix::zeros(3, 3));
        let u = RealDensity4::diagonal([6.0 / 13.0, 4.0 / 13.0, 2.0 / 13.0, 1.0 / 13.0]).unwrap();
        assert!((u_to_m(&u).m - diag([7.0 / 13.0, 3.0 / 13.0, 1.0 / 13.0])).amax() < 1e-15);
        let u = RealDensity4::diagonal([0.45, 0.075, 0.075, 0.4]).unwrap();
        assert!((u_to_m(&u).m - diag([0.05, 0.05, 0.7])).amax() < 1e-15);
    }

    #[test]
    fn density_validation() {
        assert!(RealDensity4::diagonal([0.5, 0.5, 0.5, -0.5]).is_err());
        assert!(RealDensity4::diagonal([0.5, 0.5, 0.0, 0.0]).is_ok());
        assert!(RealDensity4::diagonal([0.5, 0.5, 0.1, 0.0]).is_err());
    }

    #[test]
    fn round_trip_on_random_trace_one_matrices() {
        let mut rng = rng_from_seed(8);
        for _ in 0..1000 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let mut s = (&a + a.transpose()) * 0.5;
            let t = s.trace();
            for i in 0..4 {
                s[(i, i)] += (1.0 - t) / 4.0;
            }
            assert!((m_to_u(&u_to_m_matrix(&s)) - &s).amax() < 1e-12);
            let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            assert!((u_to_m_matrix(&m_to_u(&m)) - &m).amax() < 1e-12);
        }
    }

    #[test]
    fn valid_densities_have_operator_norm_at_most_one() {
        let mut rng = rng_from_seed(9);
        for _ in 0..500 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let p = &a * a.transpose();
            let u = RealDensity4::new(&p / p.trace()).unwrap();
            assert!(u_to_m(&u).operator_norm() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn pure_frame_states_are_rotations() {
        // Rank-one U maps to SO(3).
        let mut rng = rng_from_seed(10);
        for _ in 0..100 {
            let v = crate::linalg::random_unit(4, &mut rng);
            let m = u_to_m_matrix(&(&v * v.transpose()));
            assert!(crate::linalg::orthogonality_defect(&m) < 1e-12);
            assert!((m.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_effect_examples() {
        let id = Rotation::identity(3);
        let z = FrameBlochM::new(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(frame_effect(&id, &z).unwrap(), 1.0);
        let flip = Rotation::new(diag([-1.0, -1.0, 1.0])).unwrap();
        assert_eq!(frame_effect(&flip, &z).unwrap(), 0.0);
        let center = FrameBlochM::new(DMatrix::zeros(3, 3)).unwrap();
        for s in 0..10 {
            assert_eq!(frame_effect(&haar_sample(3, s).unwrap(), &center).unwrap(), 0.25);
        }
        assert!(frame_effect(&Rotation::identity(2), &center).is_err());
    }

    #[test]
    fn frame_effect_is_a_probability_on_pure_states() {
        let zs = haar_pool(3, 1000, 1).unwrap();
        let ys = haar_pool(3, 100, 2).unwrap();
        for z in &zs {
            let w = FrameBlochM::pure(z).unwrap();
            for y in &ys {
                let p = frame_effect(y, &w).unwrap();
                assert!((-1e-12..=1.0 + 1e-12).contains(&p));
            }
        }
    }

    #[test]
    fn frame_effect_rotation_covariance() {
        let mut rng = rng_from_seed(11);
        for k in 0..1000u64 {
            let y = haar_sample(3, 3 * k).unwrap();
            let r = haar_sample(3, 3 * k + 1).unwrap();
            let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.3..0.3));
            let lhs = frame_effect(&y, &FrameBlochM::new(r.matrix() * &m).unwrap()).unwrap();
            let rhs = frame_effect(&r.inverse().compose(&y), &FrameBlochM::new(m).unwrap()).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn maximizer_examples() {
        for m in [
            diag([7.0 / 13.0, 3.0 / 13.0, 1.0 / 13.0]),
            diag([0.05, 0.05, 0.7]),
        ] {
            let max = unique_maximizer(&FrameBlochM::new(m).unwrap());
            assert!((max.rotation.matrix() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);
            assert!(max.unique);
        }
        let max = unique_maximizer(&FrameBlochM::new(DMatrix::zeros(3, 3)).unwrap());
        assert!(!max.unique);
    }

    #[test]
    fn procrustes_beats_sampled_rotations() {
        let mut rng = rng_from_seed(12);
        let pool = haar_pool(3, 10_000, 13).unwrap();
        for _ in 0..5 {
            let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let max = unique_maximizer(&FrameBlochM::new(m.clone()).unwrap());
            let best = pool
                .iter()
                .map(|y| (y.matrix().transpose() * &m).trace())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(max.value >= best - 1e-12);
            assert!(max.value - best < 0.1);
            assert!(((max.rotation.matrix().transpose() * &m).trace() - max.value).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_mixtures_do_not_increase_norms() {
        let mut rng = rng_from_seed(14);
        let m = FrameBlochM::new(diag([7.0 / 13.0, 3.0 / 13.0, 1.0 / 13.0])).unwrap();
        for k in 0..1000u64 {
            let n = rng.random_range(1..5);
            let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let total: f64 = w.iter().sum();
            let mut mix = DMatrix::zeros(3, 3);
            for (j, wj) in w.iter().enumerate() {
                let r = haar_sample(3, 100 * k + j as u64).unwrap();
                mix += r.matrix() * &m.m * (wj / total);
            }
            let mix = FrameBlochM::new(mix).unwrap();
            assert!(mix.trace_norm() <= m.trace_norm() + 1e-12);
            assert!(mix.frobenius_norm() <= m.frobenius_norm() + 1e-12);
        }
    }

    #[test]
    fn counterexample_norms_are_exact() {
        let r = assumption2_counterexample().unwrap();
        assert_eq!(r.first.trace_norm.exact, "11/13");
        assert_eq!(r.second.trace_norm.exact, "4/5");
        assert_eq!(r.first.frobenius_norm_squared.exact, "59/169");
        assert_eq!(r.second.frobenius_norm_squared.exact, "99/200");
        assert!((r.first.frobenius_norm - 59f64.sqrt() / 13.0).abs() < 1e-12);
        assert!((r.second.frobenius_norm - 198f64.sqrt() / 20.0).abs() < 1e-12);
        assert_eq!(r.first.m_diagonal, ["7/13", "3/13", "1/13"]);
        assert_eq!(r.second.m_diagonal, ["1/20", "1/20", "7/10"]);
        assert!(r.trace_norm_first_larger && r.frobenius_norm_second_larger);
    }
}
