//! Two-qubit helpers: Pauli products and the map between 4×4 density
//! matrices and coefficient vectors `c_{μν} = tr(ρ σ_μ⊗σ_ν)`.

use nalgebra::{Complex, DMatrix, DVector};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// `σ_0 = 1, σ_1 = X, σ_2 = Y, σ_3 = Z`.
pub fn pauli(k: usize) -> CMatrix {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let entries = match k {
        0 => [one, z, z, one],
        1 => [z, one, one, z],
        2 => [z, c(0.0, -1.0), c(0.0, 1.0), z],
        3 => [one, z, z, -one],
        _ => panic!("Pauli index {k} out of range"),
    };
    CMatrix::from_row_slice(2, 2, &entries)
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// `σ_μ ⊗ σ_ν`.
pub fn pauli_pair(mu: usize, nu: usize) -> CMatrix {
    kron(&pauli(mu), &pauli(nu))
}

/// Coefficients `c_{μν} = tr(ρ σ_μ⊗σ_ν)`, index `4μ + ν`.
pub fn coefficients(rho: &CMatrix) -> DVector<f64> {
    DVector::from_iterator(
        16,
        (0..16).map(|k| (rho * pauli_pair(k / 4, k % 4)).trace().re),
    )
}

/// `ρ = ¼ Σ c_{μν} σ_μ⊗σ_ν`.
pub fn density(coeffs: &DVector<f64>) -> CMatrix {
    let mut rho = CMatrix::zeros(4, 4);
    for k in 0..16 {
        rho += pauli_pair(k / 4, k % 4) * c(coeffs[k] / 4.0, 0.0);
    }
    rho
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(h: &CMatrix) -> f64 {
    let herm = (h + h.adjoint()) * c(0.5, 0.0);
    herm.symmetric_eigenvalues().min()
}

/// Projector `|ψ⟩⟨ψ|`.
pub fn projector(psi: &[C64]) -> CMatrix {
    let v = nalgebra::DVector::from_row_slice(psi);
    &v * v.adjoint()
}

/// Coefficients of the singlet `(|01⟩ − |10⟩)/√2`: `c = diag(1, −1, −1, −1)`.
pub fn singlet() -> DVector<f64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    coefficients(&projector(&[c(0.0, 0.0), c(s, 0.0), c(-s, 0.0), c(0.0, 0.0)]))
}
