//! Locally tomographic composites of two ball state spaces.
//!
//! A bipartite vector has `(d_A+1)(d_B+1)` coefficients `ω_{ij}` stored at
//! index `i·(d_B+1) + j`; `ω_{00}` is the normalization.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gpt::{BallEffect, BallSpace, BallState};
use crate::linalg::{
    direction_set, kron_vec, orthonormal_complement, random_in_ball, random_unit, rng_from_seed,
    MEMBERSHIP_TOL,
};
use crate::lp::convex_fit;
use crate::qubit;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BipartiteVector {
    pub dim_a: usize,
    pub dim_b: usize,
    pub coefficients: DVector<f64>,
}

impl BipartiteVector {
    pub fn new(dim_a: usize, dim_b: usize, coefficients: DVector<f64>) -> Result<Self> {
        if coefficients.len() != (dim_a + 1) * (dim_b + 1) {
            return Err(Error::input(format!(
                "expected {} coefficients for d_A = {dim_a}, d_B = {dim_b}, got {}",
                (dim_a + 1) * (dim_b + 1),
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("coefficients must be finite"));
        }
        Ok(Self {
            dim_a,
            dim_b,
            coefficients,
        })
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * (self.dim_b + 1) + j
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.coefficients[self.index(i, j)]
    }

    pub fn is_normalized(&self) -> bool {
        (self.coefficients[0] - 1.0).abs() <= 1e-12
    }

    /// Coefficients as a `(d_A+1)×(d_B+1)` matrix.
    pub fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim_a + 1, self.dim_b + 1, self.coefficients.as_slice())
    }

    /// Reduced state on A (apply `𝓤^B`).
    pub fn marginal_a(&self) -> DVector<f64> {
        self.as_matrix().column(0).into_owned()
    }

    pub fn marginal_b(&self) -> DVector<f64> {
        self.as_matrix().row(0).transpose()
    }

    /// Applies local linear maps on full state vectors: `(G_A ⊗ G_B) ω`.
    pub fn transform(&self, ga: &DMatrix<f64>, gb: &DMatrix<f64>) -> Self {
        let m = ga * self.as_matrix() * gb.transpose();
        Self {
            dim_a: self.dim_a,
            dim_b: self.dim_b,
            coefficients: DVector::from_row_slice(m.transpose().as_slice()),
        }
    }
}

/// `ω^A ⊗ ω^B`.
pub fn product(a: &BallState, b: &BallState) -> BipartiteVector {
    BipartiteVector {
        dim_a: a.dim(),
        dim_b: b.dim(),
        coefficients: kron_vec(&a.full(), &b.full()),
    }
}

/// Covector of `𝓜^A ⊗ 𝓝^B`.
pub fn product_effect(a: &BallEffect, b: &BallEffect) -> DVector<f64> {
    kron_vec(&a.covector(), &b.covector())
}

/// `e(ω)` for a bipartite covector.
pub fn evaluate(effect: &DVector<f64>, omega: &BipartiteVector) -> Result<f64> {
    if effect.len() != omega.coefficients.len() {
        return Err(Error::input("effect and state sizes differ"));
    }
    Ok(effect.dot(&omega.coefficients))
}

/// Extension `h⁽²⁾ = h ⊗ 𝓤 + 𝓤 ⊗ h` of a local observable to pairs.
#[derive(Debug, Clone, Serialize)]
pub struct ExtendedObservable {
    pub covector: DVector<f64>,
    /// Largest `|h⁽²⁾(ω^A⊗ω^B) − h(ω^A) − h(ω^B)|` over the random checks.
    pub additivity_defect: f64,
    /// Rank of the span of the sampled product states.
    pub product_span_rank: usize,
}

/// Builds `h⁽²⁾` for a local affine functional `ω ↦ offset + ⟨vector, ω̂⟩`
/// and checks additivity and that product states span the composite space,
/// which makes the extension unique.
pub fn extend_observable(offset: f64, vector: &DVector<f64>, seed: u64) -> Result<ExtendedObservable> {
    let d = vector.len();
    if d == 0 {
        return Err(Error::input("local dimension must be at least 1"));
    }
    let mut h = DVector::zeros(d + 1);
    h[0] = offset;
    h.rows_mut(1, d).copy_from(vector);
    let mut unit = DVector::zeros(d + 1);
    unit[0] = 1.0;
    let covector = kron_vec(&h, &unit) + kron_vec(&unit, &h);

    let mut rng = rng_from_seed(seed);
    let mut defect: f64 = 0.0;
    let n = (d + 1) * (d + 1);
    let mut span = DMatrix::zeros(n, 1000);
    for k in 0..1000 {
        let a = BallState::new(random_in_ball(d, &mut rng))?;
        let b = BallState::new(random_in_ball(d, &mut rng))?;
        let p = product(&a, &b);
        let lhs = covector.dot(&p.coefficients);
        let rhs = h.dot(&a.full()) + h.dot(&b.full());
        defect = defect.max((lhs - rhs).abs());
        span.set_column(k, &p.coefficients);
    }
    let rank = span.rank(1e-9);
    if rank < n {
        return Err(Error::Verification(format!(
            "product states span only {rank} of {n} dimensions; local tomography fails"
        )));
    }
    Ok(ExtendedObservable {
        covector,
        additivity_defect: defect,
        product_span_rank: rank,
    })
}

/// State of A conditioned on the B outcome `𝓝^B`.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionalState {
    #[serde(serialize_with = "crate::linalg::ser::vector")]
    pub bloch: DVector<f64>,
    /// Probability `𝓤^A⊗𝓝^B(ω)` of the conditioning outcome.
    pub probability: f64,
    /// `1 − |ω̂|`; negative when the conditional leaves the local ball.
    pub margin: f64,
    pub inside: bool,
}

impl ConditionalState {
    pub fn state(&self) -> Option<BallState> {
        BallState::new(self.bloch.clone()).ok()
    }
}

pub fn conditional_state(omega: &BipartiteVector, effect_b: &BallEffect) -> Result<ConditionalState> {
    if effect_b.vector.len() != omega.dim_b {
        return Err(Error::input("conditioning effect has the wrong dimension"));
    }
    let w = omega.as_matrix() * effect_b.covector();
    let p = w[0];
    if p <= 1e-12 {
        return Err(Error::input(format!(
            "conditional state undefined: outcome probability {p:.3e}"
        )));
    }
    let bloch = w.rows(1, omega.dim_a) / p;
    let margin = 1.0 - bloch.norm();
    Ok(ConditionalState {
        inside: margin >= -MEMBERSHIP_TOL,
        bloch,
        probability: p,
        margin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Convex hull of product states.
    Min,
    /// Everything nonnegative on products of local effects.
    Max,
    /// Two qubits: positive semidefinite 4×4 density matrices.
    QuantumD3,
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(Regime::Min),
            "max" => Ok(Regime::Max),
            "quantum-d3" | "quantum" => Ok(Regime::QuantumD3),
            other => Err(Error::input(format!("unknown regime '{other}'"))),
        }
    }
}

/// Composite of two ball spaces under one of the regimes.
#[derive(Debug, Clone)]
pub struct CompositeSpace {
    pub a: BallSpace,
    pub b: BallSpace,
    pub regime: Regime,
    /// Grid size for the max-regime search and per-side samples for the
    /// min-regime hull.
    pub grid: usize,
    /// Refinement rounds of the max-regime search.
    pub refine_depth: usize,
}

impl CompositeSpace {
    pub fn new(a: BallSpace, b: BallSpace, regime: Regime) -> Result<Self> {
        if regime == Regime::QuantumD3 && (a.dim() != 3 || b.dim() != 3) {
            return Err(Error::input("the quantum regime requires d = 3 on both sides"));
        }
        Ok(Self {
            a,
            b,
            regime,
            grid: 200,
            refine_depth: 40,
        })
    }

    pub fn with_resolution(mut self, grid: usize, refine_depth: usize) -> Self {
        self.grid = grid.max(1);
        self.refine_depth = refine_depth;
        self
    }
}

/// Result of a membership query.
#[derive(Debug, Clone, Serialize)]
pub struct MembershipReport {
    pub regime: Regime,
    /// Signed margin; negative means a violation was found.
    pub margin: f64,
    pub member: bool,
    /// Local effect directions achieving the margin (max regime).
    #[serde(serialize_with = "crate::linalg::ser::vector_pair")]
    pub witness: Option<(DVector<f64>, DVector<f64>)>,
    /// True when the local search stopped before its step size converged.
    pub inconclusive: bool,
    pub grid: usize,
    pub refine_depth: usize,
}

/// Local extreme effects as `(offset, scale)`: the covector is `(offset, scale·x)`.
fn extreme_effects(space: &BallSpace) -> Vec<(f64, f64)> {
    let (a, c) = (space.visibility(), space.noise());
    vec![(c, a / 2.0), (1.0 - c, a / 2.0)]
}

/// Minimum over B's effects of `(u ⊗ e_B)(ω)` for a fixed A covector `u`,
/// with the minimizing B direction.
fn min_over_b(space_b: &BallSpace, omega: &DMatrix<f64>, u: &DVector<f64>) -> (f64, DVector<f64>) {
    let w = omega.transpose() * u;
    let wb = w.rows(1, space_b.dim()).into_owned();
    let n = wb.norm();
    let dir = if n > 0.0 { -&wb / n } else { direction_set(space_b.dim(), 1, 0)[0].clone() };
    let mut best = (w[0], dir.clone());
    for (beta, s) in extreme_effects(space_b) {
        let v = beta * w[0] - s * n;
        if v < best.0 {
            best = (v, dir.clone());
        }
    }
    best
}

fn max_regime_value(space: &CompositeSpace, omega: &DMatrix<f64>, x: &DVector<f64>) -> (f64, DVector<f64>) {
    let mut best = (f64::INFINITY, DVector::zeros(space.b.dim()));
    let da = space.a.dim();
    let mut candidates: Vec<DVector<f64>> = Vec::new();
    let mut unit = DVector::zeros(da + 1);
    unit[0] = 1.0;
    candidates.push(unit);
    for (alpha, s) in extreme_effects(&space.a) {
        let mut u = DVector::zeros(da + 1);
        u[0] = alpha;
        u.rows_mut(1, da).copy_from(&(x * s));
        candidates.push(u);
    }
    for u in candidates {
        let r = min_over_b(&space.b, omega, &u);
        if r.0 < best.0 {
            best = r;
        }
    }
    best
}

fn max_regime(space: &CompositeSpace, omega: &BipartiteVector) -> MembershipReport {
    let m = omega.as_matrix();
    let da = space.a.dim();
    let grid = if da == 1 {
        vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)]
    } else {
        direction_set(da, space.grid, 0)
    };
    let mut x = grid[0].clone();
    let mut best = max_regime_value(space, &m, &x);
    for g in &grid[1..] {
        let v = max_regime_value(space, &m, g);
        if v.0 < best.0 {
            best = v;
            x = g.clone();
        }
    }
    let mut inconclusive = false;
    if da > 1 {
        let mut step: f64 = 0.2;
        let mut rounds = 0;
        while step > 1e-10 {
            if rounds == space.refine_depth {
                inconclusive = true;
                break;
            }
            rounds += 1;
            let mut improved = false;
            for t in orthonormal_complement(&x) {
                for s in [step, -step] {
                    let cand = (&x * s.cos() + &t * s.sin()).normalize();
                    let v = max_regime_value(space, &m, &cand);
                    if v.0 < best.0 {
                        best = v;
                        x = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
    }
    MembershipReport {
        regime: Regime::Max,
        margin: best.0,
        member: best.0 >= -MEMBERSHIP_TOL,
        witness: Some((x, best.1)),
        inconclusive,
        grid: space.grid,
        refine_depth: space.refine_depth,
    }
}

fn pure_points(d: usize, grid: usize) -> Vec<DVector<f64>> {
    if d == 1 {
        vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)]
    } else {
        direction_set(d, grid, 0)
    }
}

fn min_regime(space: &CompositeSpace, omega: &BipartiteVector) -> Result<MembershipReport> {
    let pa = pure_points(space.a.dim(), space.grid);
    let pb = pure_points(space.b.dim(), space.grid);
    let mut points = Vec::with_capacity(pa.len() * pb.len());
    for x in &pa {
        for y in &pb {
            let sa = BallState::new(x.clone())?;
            let sb = BallState::new(y.clone())?;
            points.push(product(&sa, &sb).coefficients);
        }
    }
    let fit = convex_fit(&points, &omega.coefficients)?;
    let distance = fit.residual;
    Ok(MembershipReport {
        regime: Regime::Min,
        margin: -distance,
        member: distance <= MEMBERSHIP_TOL,
        witness: None,
        inconclusive: false,
        grid: space.grid,
        refine_depth: 0,
    })
}

fn quantum_regime(space: &CompositeSpace, omega: &BipartiteVector) -> MembershipReport {
    let lam = qubit::min_eigenvalue(&qubit::density(&omega.coefficients));
    MembershipReport {
        regime: Regime::QuantumD3,
        margin: lam,
        member: lam >= -MEMBERSHIP_TOL,
        witness: None,
        inconclusive: false,
        grid: space.grid,
        refine_depth: 0,
    }
}

/// Signed membership margin of `ω` in the chosen regime.
///
/// Max: smallest value of a product of local extreme effects (minimized
/// exactly over B for each A direction; A directions by grid search with
/// local refinement, exact for `d_A = 1`). Min: minus the distance to the
/// hull of sampled pure product states (exact for `d_A = d_B = 1`).
/// Quantum: smallest eigenvalue of the density matrix.
pub fn omega_membership(space: &CompositeSpace, omega: &BipartiteVector) -> Result<MembershipReport> {
    if omega.dim_a != space.a.dim() || omega.dim_b != space.b.dim() {
        return Err(Error::input("state dimensions do not match the composite space"));
    }
    if !omega.is_normalized() {
        return Err(Error::input("state must be normalized (component (0,0) = 1)"));
    }
    match space.regime {
        Regime::Max => Ok(max_regime(space, omega)),
        Regime::Min => min_regime(space, omega),
        Regime::QuantumD3 => Ok(quantum_regime(space, omega)),
    }
}

/// Vertex enumeration for two noiseless 1-balls.
#[derive(Debug, Clone, Serialize)]
pub struct TetrahedronReport {
    pub vertices: Vec<[i64; 4]>,
    pub expected: Vec<[i64; 4]>,
    pub vertex_count: usize,
    pub dimension: usize,
    pub matches: bool,
    /// Every vertex is a product state, so the maximal and minimal
    /// composites coincide.
    pub max_equals_min: bool,
}

/// Enumerates the vertices of `{ω : ω₀₀ = 1, (1,s)⊗(1,t)·ω ≥ 0 for s,t = ±1}`
/// and compares them with the four product vertices.
pub fn tetrahedron_d1() -> Result<TetrahedronReport> {
    let signs = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];
    let rows: Vec<DVector<f64>> = signs
        .iter()
        .map(|&(s, t)| kron_vec(&DVector::from_vec(vec![1.0, s]), &DVector::from_vec(vec![1.0, t])))
        .collect();
    let mut vertices: Vec<[i64; 4]> = Vec::new();
    for skip in 0..4 {
        let mut a = DMatrix::zeros(4, 4);
        let mut b = DVector::zeros(4);
        a[(0, 0)] = 1.0;
        b[0] = 1.0;
        let mut r = 1;
        for (k, row) in rows.iter().enumerate() {
            if k != skip {
                a.row_mut(r).copy_from(&row.transpose());
                r += 1;
            }
        }
        let Some(v) = a.lu().solve(&b) else { continue };
        if rows.iter().all(|row| row.dot(&v) >= -1e-12) {
            let rounded: [i64; 4] = std::array::from_fn(|i| v[i].round() as i64);
            if (0..4).any(|i| (v[i] - rounded[i] as f64).abs() > 1e-12) {
                return Err(Error::Verification(format!("non-integral vertex {v:?}")));
            }
            if !vertices.contains(&rounded) {
                vertices.push(rounded);
            }
        }
    }
    let expected = vec![[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]];
    let matches = vertices.len() == 4 && expected.iter().all(|e| vertices.contains(e));
    let vm = DMatrix::from_fn(3, vertices.len(), |i, k| (vertices[k][i + 1] - vertices[0][i + 1]) as f64);
    let dimension = vm.rank(1e-12);
    let max_equals_min = vertices.iter().all(|v| {
        // Product iff v = (1, t, s, st).
        v[3] == v[1] * v[2] && v[1].abs() == 1 && v[2].abs() == 1
    });
    if !matches || dimension != 3 || !max_equals_min {
        return Err(Error::Verification(format!(
            "tetrahedron mismatch: vertices {vertices:?}, dimension {dimension}"
        )));
    }
    Ok(TetrahedronReport {
        vertex_count: vertices.len(),
        vertices,
        expected,
        dimension,
        matches,
        max_equals_min,
    })
}

/// `p[x][y][a][b]`: probability of outcomes `(a, b)` for settings `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Behavior {
    pub p: [[[[f64; 2]; 2]; 2]; 2],
}

impl Behavior {
    /// Deterministic local strategy: `a = fa[x]`, `b = fb[y]`.
    pub fn deterministic(fa: [usize; 2], fb: [usize; 2]) -> Self {
        let mut p = [[[[0.0; 2]; 2]; 2]; 2];
        for x in 0..2 {
            for y in 0..2 {
                p[x][y][fa[x]][fb[y]] = 1.0;
            }
        }
        Self { p }
    }

    /// Maximally nonlocal box: `a ⊕ b = x·y`, uniform marginals.
    pub fn pr_box() -> Self {
        let mut p = [[[[0.0; 2]; 2]; 2]; 2];
        for x in 0..2 {
            for y in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        if (a ^ b) == (x & y) {
                            p[x][y][a][b] = 0.5;
                        }
                    }
                }
            }
        }
        Self { p }
    }

    /// Statistics of spin measurements along the given directions, with
    /// outcome 0 the first outcome of `𝓜_x`.
    pub fn from_state(
        a: &BallSpace,
        b: &BallSpace,
        omega: &BipartiteVector,
        settings_a: [&DVector<f64>; 2],
        settings_b: [&DVector<f64>; 2],
    ) -> Result<Self> {
        let mut p = [[[[0.0; 2]; 2]; 2]; 2];
        for x in 0..2 {
            let ea = a.spin(settings_a[x])?;
            let outs_a = [ea.clone(), ea.complement()];
            for y in 0..2 {
                let eb = b.spin(settings_b[y])?;
                let outs_b = [eb.clone(), eb.complement()];
                for (ia, oa) in outs_a.iter().enumerate() {
                    for (ib, ob) in outs_b.iter().enumerate() {
                        p[x][y][ia][ib] = evaluate(&product_effect(oa, ob), omega)?;
                    }
                }
            }
        }
        Ok(Self { p })
    }

    fn correlator(&self, x: usize, y: usize) -> f64 {
        let q = &self.p[x][y];
        q[0][0] + q[1][1] - q[0][1] - q[1][0]
    }
}

/// `E₀₀ + E₀₁ + E₁₀ − E₁₁` of a no-signalling behavior.
pub fn chsh_value(behavior: &Behavior) -> Result<f64> {
    let p = &behavior.p;
    for x in 0..2 {
        for y in 0..2 {
            let total: f64 = p[x][y].iter().flatten().sum();
            if (total - 1.0).abs() > 1e-9 || p[x][y].iter().flatten().any(|v| *v < -1e-9) {
                return Err(Error::input(format!("settings ({x},{y}) do not give a distribution")));
            }
        }
    }
    let marg_a = |x: usize, y: usize| p[x][y][0][0] + p[x][y][0][1];
    let marg_b = |x: usize, y: usize| p[x][y][0][0] + p[x][y][1][0];
    for x in 0..2 {
        if (marg_a(x, 0) - marg_a(x, 1)).abs() > 1e-9 {
            return Err(Error::input("behavior signals from B to A"));
        }
    }
    for y in 0..2 {
        if (marg_b(0, y) - marg_b(1, y)).abs() > 1e-9 {
            return Err(Error::input("behavior signals from A to B"));
        }
    }
    Ok(behavior.correlator(0, 0) + behavior.correlator(0, 1) + behavior.correlator(1, 0)
        - behavior.correlator(1, 1))
}

/// Singlet state as a bipartite vector of two 3-balls.
pub fn singlet() -> BipartiteVector {
    BipartiteVector {
        dim_a: 3,
        dim_b: 3,
        coefficients: qubit::singlet(),
    }
}

/// Random local transformations: rotations act as `1 ⊕ O R Oᵀ`.
pub fn random_local_state(d: usize, seed: u64) -> BallState {
    let mut rng = rng_from_seed(seed);
    BallState::new(random_in_ball(d, &mut rng)).expect("sampled inside the ball")
}

/// Uniformly random pure state.
pub fn random_pure_state(d: usize, seed: u64) -> BallState {
    let mut rng = rng_from_seed(seed);
    BallState::new(random_unit(d, &mut rng)).expect("unit vector")
}
