//! Small numeric helpers shared by every module: seeding, unit vectors,
//! direction sets, PSD projection.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Absolute tolerance for state and effect membership.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Tolerance for unit-vector preconditions.
pub const UNIT_TOL: f64 = 1e-10;

/// Stable per-stream seed: the output depends only on `(master, stream)`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    // splitmix64 over a combined word
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed derived from a path of stream indices.
pub fn derive_seed_path(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(master, |acc, &s| derive_seed(acc, s))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Uniformly distributed point on the unit sphere in `d` dimensions.
pub fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let g = gaussian_vector(d, rng);
        let n = g.norm();
        if n > 1e-12 {
            return g / n;
        }
    }
}

/// Uniformly distributed point in the closed unit ball.
pub fn random_in_ball<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    let u: f64 = rng.random();
    random_unit(d, rng) * u.powf(1.0 / d as f64)
}

pub fn check_unit(x: &DVector<f64>, what: &str) -> Result<()> {
    let n = x.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::input(format!("{what} must be a unit vector (norm {n})")));
    }
    Ok(())
}

pub fn check_dim(x: &DVector<f64>, d: usize, what: &str) -> Result<()> {
    if x.len() != d {
        return Err(Error::input(format!(
            "{what} has dimension {} but {d} was expected",
            x.len()
        )));
    }
    Ok(())
}

/// `max |MᵀM − I|` entrywise.
pub fn orthogonality_defect(m: &DMatrix<f64>) -> f64 {
    let g = m.transpose() * m - DMatrix::identity(m.ncols(), m.ncols());
    g.amax()
}

pub fn antisymmetry_defect(m: &DMatrix<f64>) -> f64 {
    (m + m.transpose()).amax()
}

pub fn kron_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() * b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[i * b.len() + j] = a[i] * b[j];
        }
    }
    out
}

/// Angle between two nonzero vectors, accurate for small and near-π angles.
pub fn angle_between(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let ua = a.normalize();
    let ub = b.normalize();
    let s = (&ua - &ub).norm();
    let c = (&ua + &ub).norm();
    2.0 * s.atan2(c)
}

/// Orthonormal basis of the complement of the unit vector `x`.
pub fn orthonormal_complement(x: &DVector<f64>) -> Vec<DVector<f64>> {
    let d = x.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d.saturating_sub(1));
    let mut frame = vec![x.normalize()];
    for k in 0..d {
        if basis.len() + 1 == d {
            break;
        }
        let mut v = DVector::zeros(d);
        v[k] = 1.0;
        for _ in 0..2 {
            for f in &frame {
                let p = f.dot(&v);
                v -= f * p;
            }
        }
        let n = v.norm();
        if n > 1e-6 {
            let v = v / n;
            frame.push(v.clone());
            basis.push(v);
        }
    }
    basis
}

/// `n` nearly uniform points on S² (golden-angle spiral).
pub fn fibonacci_sphere(n: usize) -> Vec<DVector<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            DVector::from_vec(vec![r * phi.cos(), r * phi.sin(), z])
        })
        .collect()
}

/// Default deterministic measurement-direction set: uniform angles for
/// d = 2, Fibonacci sphere for d = 3, orthoplex vertices followed by seeded
/// random directions for d ≥ 4. d = 1 returns ±1.
pub fn direction_set(d: usize, n: usize, seed: u64) -> Vec<DVector<f64>> {
    match d {
        0 => Vec::new(),
        1 => (0..n.max(2))
            .map(|i| DVector::from_element(1, if i % 2 == 0 { 1.0 } else { -1.0 }))
            .collect(),
        2 => (0..n)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect(),
        3 => fibonacci_sphere(n),
        _ => {
            let mut out = Vec::with_capacity(n.max(2 * d));
            for k in 0..d {
                for s in [1.0, -1.0] {
                    let mut v = DVector::zeros(d);
                    v[k] = s;
                    out.push(v);
                }
            }
            let mut rng = rng_from_seed(derive_seed(seed, 0xD1EC));
            while out.len() < n {
                out.push(random_unit(d, &mut rng));
            }
            out.truncate(n.max(2 * d));
            out
        }
    }
}

/// Symmetrized eigendecomposition with eigenvalues sorted descending.
pub fn sorted_eigen(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (x + x.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = x.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in idx.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Nearest positive semidefinite matrix in Frobenius norm. Returns the
/// projection and the largest clipped magnitude.
pub fn nearest_psd(x: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let (vals, vecs) = sorted_eigen(x);
    let mut clipped: f64 = 0.0;
    let clamped = vals.map(|v| {
        if v < 0.0 {
            clipped = clipped.max(-v);
            0.0
        } else {
            v
        }
    });
    let proj = &vecs * DMatrix::from_diagonal(&clamped) * vecs.transpose();
    (proj, clipped)
}

/// Least-squares solution of `a x = b` via SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-12)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))
}

/// Orthonormal basis (as columns) of the null space of `a`, using a
/// relative singular-value cutoff.
pub fn null_space(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // Pad so that the SVD returns a full right basis.
    let rows = a.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.max();
    let cutoff = rel_tol * smax.max(1.0);
    let cols: Vec<usize> = (0..n)
        .filter(|&i| svd.singular_values[i] <= cutoff)
        .collect();
    let mut out = DMatrix::zeros(n, cols.len());
    for (k, &i) in cols.iter().enumerate() {
        out.set_column(k, &vt.row(i).transpose());
    }
    out
}

/// Serde helpers writing vectors as plain arrays.
pub mod ser {
    use nalgebra::DVector;
    use serde::ser::SerializeSeq;
    use serde::Serializer;

    pub fn vector<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn vector_pair<S: Serializer>(p: &Option<(DVector<f64>, DVector<f64>)>, s: S) -> Result<S::Ok, S::Error> {
        match p {
            None => s.serialize_none(),
            Some((a, b)) => {
                let mut seq = s.serialize_seq(Some(2))?;
                seq.serialize_element(a.as_slice())?;
                seq.serialize_element(b.as_slice())?;
                seq.end()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        assert_ne!(derive_seed(7, 3), derive_seed(7, 4));
        assert_ne!(derive_seed(7, 3), derive_seed(8, 3));
    }

    #[test]
    fn complement_is_orthonormal() {
        let mut rng = rng_from_seed(1);
        for d in 1..7 {
            let x = random_unit(d, &mut rng);
            let c = orthonormal_complement(&x);
            assert_eq!(c.len(), d - 1);
            for (i, u) in c.iter().enumerate() {
                assert!(u.dot(&x).abs() < 1e-12);
                assert!((u.norm() - 1.0).abs() < 1e-12);
                for v in &c[i + 1..] {
                    assert!(u.dot(v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn angle_is_accurate_near_zero_and_pi() {
        let a = DVector::from_vec(vec![1.0, 0.0]);
        let b = DVector::from_vec(vec![1e-9f64.cos(), 1e-9f64.sin()]);
        assert!((angle_between(&a, &b) - 1e-9).abs() < 1e-15);
        assert!((angle_between(&a, &(-&a)) - std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn psd_projection_clips_negative_part() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-4]);
        let (p, clip) = nearest_psd(&x);
        assert!((clip - 1e-4).abs() < 1e-15);
        assert!(p[(1, 1)].abs() < 1e-15);
    }

    #[test]
    fn null_space_of_rank_one() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let ns = null_space(&a, 1e-10);
        assert_eq!(ns.ncols(), 2);
        assert!((&a * &ns).amax() < 1e-12);
    }

    #[test]
    fn direction_sets_span() {
        for d in 1..=5 {
            let dirs = direction_set(d, 20, 3);
            let mut g = DMatrix::<f64>::zeros(d, d);
            for y in &dirs {
                g += y * y.transpose();
            }
            assert!(g.determinant().abs() > 1e-6, "d={d}");
        }
    }
}
