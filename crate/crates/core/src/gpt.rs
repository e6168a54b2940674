//! Ball state spaces of direction bits: states, effects, spin measurements,
//! the noiseless lift, perfect-distinguishability capacity and the affine
//! canonicalization that turns a transitive orbit into a unit sphere.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framebit;
use crate::group::{exact_invariant_form, invariant_inner_product, haar_pool};
use crate::linalg::{
    check_dim, check_unit, derive_seed, orthogonality_defect, random_unit, rng_from_seed,
    sorted_eigen, MEMBERSHIP_TOL, UNIT_TOL,
};
use crate::lp::FeasibilityProblem;

/// Direction-bit state space: a `d`-ball with spin effects
/// `𝓜_x(ω) = c + (a/2)⟨O·x, ω̂⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallSpace {
    dim: usize,
    visibility: f64,
    noise: f64,
    frame: DMatrix<f64>,
}

impl BallSpace {
    /// Requires `d ≥ 1`, `0 < c < 1` and `0 < a ≤ 2·min(c, 1−c)`.
    pub fn new(dim: usize, visibility: f64, noise: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("dimension must be at least 1"));
        }
        if !(noise > 0.0 && noise < 1.0) {
            return Err(Error::input(format!("noise parameter {noise} not in (0,1)")));
        }
        let bound = 2.0 * noise.min(1.0 - noise);
        if !(visibility > 0.0 && visibility <= bound + 1e-12) {
            return Err(Error::input(format!(
                "visibility {visibility} violates 0 < a ≤ 2·min(c,1−c) = {bound}"
            )));
        }
        Ok(Self {
            dim,
            visibility,
            noise,
            frame: DMatrix::identity(dim, dim),
        })
    }

    /// `a = 1`, `c = 1/2`.
    pub fn noiseless(dim: usize) -> Result<Self> {
        Self::new(dim, 1.0, 0.5)
    }

    /// Replaces the physical-to-Bloch frame map `O`.
    pub fn with_frame(mut self, frame: DMatrix<f64>) -> Result<Self> {
        if frame.nrows() != self.dim || frame.ncols() != self.dim {
            return Err(Error::input("frame map has the wrong shape"));
        }
        let defect = orthogonality_defect(&frame);
        if !(defect <= 1e-10) {
            return Err(Error::input(format!("frame map not orthogonal (defect {defect:.2e})")));
        }
        self.frame = frame;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn visibility(&self) -> f64 {
        self.visibility
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    pub fn is_noiseless(&self) -> bool {
        (self.visibility - 1.0).abs() < 1e-12 && (self.noise - 0.5).abs() < 1e-12
    }

    /// Bloch direction `O·x` of the pure codeword for physical direction `x`.
    pub fn bloch_direction(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.frame * x
    }

    /// Physical direction `O⁻¹·v`.
    pub fn physical_direction(&self, v: &DVector<f64>) -> DVector<f64> {
        self.frame.transpose() * v
    }

    pub fn spin(&self, x: &DVector<f64>) -> Result<BallEffect> {
        check_dim(x, self.dim, "direction")?;
        check_unit(x, "direction")?;
        Ok(BallEffect {
            offset: self.noise,
            vector: self.bloch_direction(x) * (self.visibility / 2.0),
        })
    }
}

/// Normalized ball state `(1, ω̂)` with `|ω̂| ≤ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallState {
    bloch: DVector<f64>,
}

impl BallState {
    pub fn new(bloch: DVector<f64>) -> Result<Self> {
        let n = bloch.norm();
        if !n.is_finite() || n > 1.0 + UNIT_TOL {
            return Err(Error::input(format!("Bloch vector norm {n} exceeds 1")));
        }
        Ok(Self { bloch })
    }

    pub(crate) fn from_bloch_unchecked(bloch: DVector<f64>) -> Self {
        Self { bloch }
    }

    pub fn maximally_mixed(d: usize) -> Self {
        Self {
            bloch: DVector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.bloch.len()
    }

    pub fn bloch(&self) -> &DVector<f64> {
        &self.bloch
    }

    pub fn norm(&self) -> f64 {
        self.bloch.norm()
    }

    pub fn is_pure(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOL
    }

    /// Full vector `(1, ω̂)`.
    pub fn full(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim() + 1);
        v[0] = 1.0;
        v.rows_mut(1, self.dim()).copy_from(&self.bloch);
        v
    }

    /// Mixture `λ·self + (1−λ)·other`.
    pub fn mix(&self, other: &BallState, lambda: f64) -> BallState {
        Self::from_bloch_unchecked(&self.bloch * lambda + &other.bloch * (1.0 - lambda))
    }
}

/// Affine functional `ω ↦ α + ⟨v, ω̂⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallEffect {
    pub offset: f64,
    pub vector: DVector<f64>,
}

impl BallEffect {
    /// Validated effect: values on the ball stay in `[0, 1]`.
    pub fn new(offset: f64, vector: DVector<f64>) -> Result<Self> {
        let e = Self { offset, vector };
        if !e.is_valid(MEMBERSHIP_TOL) {
            return Err(Error::input(format!(
                "effect ({offset}, |v|={}) leaves [0,1] on the ball",
                e.vector.norm()
            )));
        }
        Ok(e)
    }

    pub fn unit(d: usize) -> Self {
        Self {
            offset: 1.0,
            vector: DVector::zeros(d),
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let r = self.vector.norm();
        self.offset.is_finite() && self.offset - r >= -tol && self.offset + r <= 1.0 + tol
    }

    pub fn is_unit(&self) -> bool {
        (self.offset - 1.0).abs() <= MEMBERSHIP_TOL && self.vector.amax() <= MEMBERSHIP_TOL
    }

    pub fn eval(&self, state: &BallState) -> f64 {
        self.offset + self.vector.dot(state.bloch())
    }

    /// Coefficients `(α, v)` as a covector on `(1, ω̂)`.
    pub fn covector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.vector.len() + 1);
        v[0] = self.offset;
        v.rows_mut(1, self.vector.len()).copy_from(&self.vector);
        v
    }

    pub fn complement(&self) -> BallEffect {
        Self {
            offset: 1.0 - self.offset,
            vector: -&self.vector,
        }
    }
}

fn check_state(space: &BallSpace, state: &BallState) -> Result<()> {
    check_dim(state.bloch(), space.dim(), "state")
}

/// Probability `c + (a/2)⟨O·x, ω̂⟩` of the first spin outcome.
pub fn spin_effect(space: &BallSpace, x: &DVector<f64>, state: &BallState) -> Result<f64> {
    check_state(space, state)?;
    Ok(space.spin(x)?.eval(state))
}

/// Direction contrast `L_z(ω) = 𝓜_z(ω) − 𝓜_{−z}(ω) = a⟨O·z, ω̂⟩`.
pub fn l_functional(space: &BallSpace, z: &DVector<f64>, state: &BallState) -> Result<f64> {
    check_state(space, state)?;
    check_dim(z, space.dim(), "direction")?;
    check_unit(z, "direction")?;
    Ok(space.visibility() * space.bloch_direction(z).dot(state.bloch()))
}

/// Codeword `λ·ω_x + (1−λ)·μ`, Bloch vector `λ·O·x`.
pub fn codeword(space: &BallSpace, x: &DVector<f64>, lambda: f64) -> Result<BallState> {
    check_dim(x, space.dim(), "direction")?;
    check_unit(x, "direction")?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::input(format!("mixing weight {lambda} not in [0,1]")));
    }
    Ok(BallState::from_bloch_unchecked(space.bloch_direction(x) * lambda))
}

/// Maps an effect of a noisy spin measurement to its noiseless counterpart:
/// `𝓜_x ↦ (1/a)𝓜_x + (1/2 − c/a)𝓤 = 𝓜'_x`, the complementary outcome
/// `𝓤 − 𝓜_x ↦ 𝓤 − 𝓜'_x`, and `𝓤 ↦ 𝓤`. Any other effect is rejected.
pub fn noiseless_lift(space: &BallSpace, effect: &BallEffect) -> Result<BallEffect> {
    check_dim(&effect.vector, space.dim(), "effect")?;
    if !effect.is_valid(MEMBERSHIP_TOL) {
        return Err(Error::input("effect is not valid on the ball"));
    }
    if effect.is_unit() {
        return Ok(BallEffect::unit(space.dim()));
    }
    let (a, c) = (space.visibility(), space.noise());
    let spin_norm = (effect.vector.norm() - a / 2.0).abs() <= 1e-9;
    let lift = |e: &BallEffect| BallEffect {
        offset: e.offset / a + 0.5 - c / a,
        vector: &e.vector / a,
    };
    if spin_norm && (effect.offset - c).abs() <= 1e-9 {
        return Ok(lift(effect));
    }
    if spin_norm && (effect.offset - (1.0 - c)).abs() <= 1e-9 {
        return Ok(lift(&effect.complement()).complement());
    }
    Err(Error::input(
        "the lift is defined for spin-measurement outcomes and the unit effect only",
    ))
}

/// Shape of a [`GenericStateSpace`].
#[derive(Debug, Clone, PartialEq)]
pub enum SpaceKind {
    /// Normalized states `(1, r)`, `|r| ≤ 1`.
    Ball { dim: usize },
    /// Convex hull of the listed normalized vertices.
    Polytope { label: String, vertices: Vec<DVector<f64>> },
    /// `conv{(1, X) : X ∈ SO(3)}` in 10 dimensions, `X` flattened row-major.
    Orbitope,
}

/// Which effects are allowed.
#[derive(Debug, Clone, PartialEq)]
pub enum EffectSet {
    /// Every functional with values in `[0, 1]` on the state space.
    All,
    /// Convex hull of the zero effect, the unit effect and the listed generators.
    Generated(Vec<DVector<f64>>),
}

/// Finite-dimensional state space described by its unit functional and
/// membership oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct GenericStateSpace {
    pub ambient_dim: usize,
    pub unit: DVector<f64>,
    pub kind: SpaceKind,
    pub effects: EffectSet,
}

fn unit_e0(n: usize) -> DVector<f64> {
    let mut u = DVector::zeros(n);
    u[0] = 1.0;
    u
}

impl GenericStateSpace {
    pub fn ball(dim: usize) -> Self {
        Self {
            ambient_dim: dim + 1,
            unit: unit_e0(dim + 1),
            kind: SpaceKind::Ball { dim },
            effects: EffectSet::All,
        }
    }

    /// Ball whose effects are the hull of `0`, `𝓤` and the given spin effects.
    pub fn ball_with_effects(dim: usize, effects: &[BallEffect]) -> Self {
        Self {
            effects: EffectSet::Generated(effects.iter().map(|e| e.covector()).collect()),
            ..Self::ball(dim)
        }
    }

    /// Classical `n`-level system: the probability simplex in ℝⁿ.
    pub fn simplex(n: usize) -> Self {
        let vertices = (0..n)
            .map(|i| {
                let mut v = DVector::zeros(n);
                v[i] = 1.0;
                v
            })
            .collect();
        Self {
            ambient_dim: n,
            unit: DVector::from_element(n, 1.0),
            kind: SpaceKind::Polytope {
                label: format!("simplex-{n}"),
                vertices,
            },
            effects: EffectSet::All,
        }
    }

    /// The square `(1, ±1, ±1)`.
    pub fn square() -> Self {
        let vertices = [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)]
            .iter()
            .map(|&(x, y)| DVector::from_vec(vec![1.0, x, y]))
            .collect();
        Self {
            ambient_dim: 3,
            unit: unit_e0(3),
            kind: SpaceKind::Polytope {
                label: "square".into(),
                vertices,
            },
            effects: EffectSet::All,
        }
    }

    pub fn orbitope() -> Self {
        Self {
            ambient_dim: 10,
            unit: unit_e0(10),
            kind: SpaceKind::Orbitope,
            effects: EffectSet::All,
        }
    }

    pub fn description(&self) -> &str {
        match &self.kind {
            SpaceKind::Ball { .. } => "ball",
            SpaceKind::Polytope { label, .. } => label,
            SpaceKind::Orbitope => "orbitope",
        }
    }

    /// Decides normalized-state membership to [`MEMBERSHIP_TOL`].
    pub fn contains(&self, state: &DVector<f64>) -> Result<bool> {
        if state.len() != self.ambient_dim {
            return Err(Error::input("state has the wrong ambient dimension"));
        }
        if (self.unit.dot(state) - 1.0).abs() > MEMBERSHIP_TOL {
            return Ok(false);
        }
        match &self.kind {
            SpaceKind::Ball { dim } => Ok(state.rows(1, *dim).norm() <= 1.0 + MEMBERSHIP_TOL),
            SpaceKind::Polytope { vertices, .. } => {
                let fit = crate::lp::convex_fit(vertices, state)?;
                Ok(fit.residual <= MEMBERSHIP_TOL)
            }
            SpaceKind::Orbitope => {
                let m = DMatrix::from_row_slice(3, 3, &state.as_slice()[1..]);
                let u = framebit::m_to_u(&m);
                let (vals, _) = sorted_eigen(&u);
                Ok(vals[3] >= -MEMBERSHIP_TOL)
            }
        }
    }

    /// Minimum and maximum of the functional `e` over the normalized states.
    pub fn functional_range(&self, e: &DVector<f64>) -> Result<(f64, f64)> {
        if e.len() != self.ambient_dim {
            return Err(Error::input("functional has the wrong ambient dimension"));
        }
        match &self.kind {
            SpaceKind::Ball { dim } => {
                let r = e.rows(1, *dim).norm();
                Ok((e[0] - r, e[0] + r))
            }
            SpaceKind::Polytope { vertices, .. } => {
                let vals: Vec<f64> = vertices.iter().map(|v| v.dot(e)).collect();
                Ok((
                    vals.iter().cloned().fold(f64::INFINITY, f64::min),
                    vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                ))
            }
            SpaceKind::Orbitope => {
                let v = DMatrix::from_row_slice(3, 3, &e.as_slice()[1..]);
                let hi = framebit::max_trace_over_so3(&v);
                let lo = -framebit::max_trace_over_so3(&(-v));
                Ok((e[0] + lo, e[0] + hi))
            }
        }
    }

    /// Decides whether `e` is an allowed effect.
    pub fn allows_effect(&self, e: &DVector<f64>) -> Result<bool> {
        let (lo, hi) = self.functional_range(e)?;
        if lo < -MEMBERSHIP_TOL || hi > 1.0 + MEMBERSHIP_TOL {
            return Ok(false);
        }
        match &self.effects {
            EffectSet::All => Ok(true),
            EffectSet::Generated(gens) => {
                // e = Σ θ_k g_k with θ ≥ 0, Σ θ ≤ 1 (the zero effect takes the rest).
                let mut gens = gens.clone();
                gens.push(self.unit.clone());
                let mut lp = FeasibilityProblem::new();
                let theta: Vec<usize> = gens.iter().map(|_| lp.add_var(0.0, f64::INFINITY)).collect();
                lp.le(theta.iter().map(|&t| (t, 1.0)).collect(), 1.0);
                for k in 0..self.ambient_dim {
                    let row: Vec<(usize, f64)> =
                        theta.iter().zip(&gens).map(|(&t, g)| (t, g[k])).collect();
                    lp.ge(row.clone(), e[k] - MEMBERSHIP_TOL);
                    lp.le(row, e[k] + MEMBERSHIP_TOL);
                }
                Ok(lp.solve()?.is_some())
            }
        }
    }

/// Extreme state at which the functional `e` attains its minimum.
    fn minimizing_state(&self, e: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            SpaceKind::Ball { dim } => {
                let v = e.rows(1, *dim);
                let n = v.norm();
                let mut p = unit_e0(dim + 1);
                if n > 0.0 {
                    p.rows_mut(1, *dim).copy_from(&(-v / n));
                } else {
                    p[1] = 1.0;
                }
                p
            }
            SpaceKind::Polytope { vertices, .. } => vertices
                .iter()
                .min_by(|a, b| a.dot(e).total_cmp(&b.dot(e)))
                .cloned()
                .unwrap_or_else(|| self.unit.clone()),
            SpaceKind::Orbitope => {
                let v = DMatrix::from_row_slice(3, 3, &e.as_slice()[1..]);
                let y = framebit::unique_maximizer(&framebit::FrameBlochM { m: -v }).rotation;
                let mut p = unit_e0(10);
                for i in 0..3 {
                    for j in 0..3 {
                        p[1 + 3 * i + j] = y.matrix()[(i, j)];
                    }
                }
                p
            }
        }
    }

    fn candidate_extremes(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        match &self.kind {
            SpaceKind::Polytope { vertices, .. } => vertices.clone(),
            SpaceKind::Ball { dim } => {
                let mut rng = rng_from_seed(seed);
                (0..count)
                    .map(|_| {
                        let r = random_unit(*dim, &mut rng);
                        let mut v = unit_e0(dim + 1);
                        v.rows_mut(1, *dim).copy_from(&r);
                        v
                    })
                    .collect()
            }
            SpaceKind::Orbitope => {
                let pool = haar_pool(3, count, seed).unwrap_or_default();
                pool.iter()
                    .map(|r| {
                        let mut v = unit_e0(10);
                        for i in 0..3 {
                            for j in 0..3 {
                                v[1 + 3 * i + j] = r.matrix()[(i, j)];
                            }
                        }
                        v
                    })
                    .collect()
            }
        }
    }

    /// Points at which effect validity is imposed inside the capacity LP.
    fn effect_test_points(&self, seed: u64) -> Vec<DVector<f64>> {
        match &self.kind {
            SpaceKind::Polytope { vertices, .. } => vertices.clone(),
            SpaceKind::Ball { dim } => {
                let mut pts = Vec::new();
                for k in 0..*dim {
                    for s in [1.0, -1.0] {
                        let mut v = unit_e0(dim + 1);
                        v[1 + k] = s;
                        pts.push(v);
                    }
                }
                pts.extend(self.candidate_extremes(64 * dim, derive_seed(seed, 77)));
                pts
            }
            SpaceKind::Orbitope => self.candidate_extremes(300, derive_seed(seed, 77)),
        }
    }
}

/// Outcome of the perfect-distinguishability search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityReport {
    /// Largest `n` for which a perfectly distinguishing family was found.
    pub capacity: usize,
    /// True when `capacity` is also a proven upper bound (exhaustive polytope
    /// search, or the center bound for balls with all effects).
    pub certified: bool,
    /// Number of candidate subsets tested.
    pub subsets_tested: usize,
}

const MAX_SUBSETS_PER_SIZE: usize = 20_000;
const RANDOM_SUBSETS_PER_SIZE: usize = 24;

fn combinations(m: usize, n: usize, limit: usize) -> (Vec<Vec<usize>>, bool) {
    let mut out = Vec::new();
    if n > m {
        return (out, true);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        if out.len() == limit {
            return (out, false);
        }
        out.push(idx.clone());
        let mut i = n;
        loop {
            if i == 0 {
                return (out, true);
            }
            i -= 1;
            if idx[i] != i + m - n {
                break;
            }
            if i == 0 {
                return (out, true);
            }
        }
        if idx[i] == i + m - n {
            return (out, true);
        }
        idx[i] += 1;
        for k in i + 1..n {
            idx[k] = idx[k - 1] + 1;
        }
    }
}

/// Tests whether the given states are perfectly distinguishable: effects
/// `e_1..e_n` with `e_i(ω_j) = δ_ij`, `Σ e_i = 𝓤`, each allowed.
///
/// Positivity is imposed at the test points and then tightened by cutting
/// planes: whenever an effect dips below zero, the state where it is
/// smallest joins the constraint set. Upper bounds follow from `Σ e_i = 𝓤`.
fn distinguishable(
    space: &GenericStateSpace,
    states: &[&DVector<f64>],
    test_points: &[DVector<f64>],
) -> Result<bool> {
    let mut points: Vec<DVector<f64>> = test_points.to_vec();
    for _ in 0..MAX_CUTTING_ROUNDS {
        let Some(effects) = solve_distinguishing(space, states, &points)? else {
            return Ok(false);
        };
        let mut violated = false;
        for e in &effects {
            let (lo, _) = space.functional_range(e)?;
            if lo < -CUT_TOL {
                points.push(space.minimizing_state(e));
                violated = true;
            }
        }
        if !violated {
            return Ok(true);
        }
    }
    Ok(false)
}

const MAX_CUTTING_ROUNDS: usize = 200;
// Matches the simplex solver's feasibility precision.
const CUT_TOL: f64 = 1e-7;

fn solve_distinguishing(
    space: &GenericStateSpace,
    states: &[&DVector<f64>],
    test_points: &[DVector<f64>],
) -> Result<Option<Vec<DVector<f64>>>> {
    let n = states.len();
    let m = space.ambient_dim;
    let mut lp = FeasibilityProblem::new();
    let coeffs: Vec<Vec<usize>> = (0..n).map(|_| lp.add_free_vars(m)).collect();
    let gen_weights: Option<(Vec<DVector<f64>>, Vec<Vec<usize>>)> = match &space.effects {
        EffectSet::All => None,
        EffectSet::Generated(gens) => {
            let mut gens = gens.clone();
            gens.push(space.unit.clone());
            let w: Vec<Vec<usize>> = (0..n)
                .map(|_| gens.iter().map(|_| lp.add_var(0.0, f64::INFINITY)).collect())
                .collect();
            Some((gens, w))
        }
    };
    for (i, c) in coeffs.iter().enumerate() {
        for (j, s) in states.iter().enumerate() {
            let row = c.iter().enumerate().map(|(k, &v)| (v, s[k])).collect();
            lp.eq(row, if i == j { 1.0 } else { 0.0 });
        }
        for p in test_points {
            let row: Vec<(usize, f64)> = c.iter().enumerate().map(|(k, &v)| (v, p[k])).collect();
            lp.ge(row, 0.0);
        }
    }
    for k in 0..m {
        lp.eq(coeffs.iter().map(|c| (c[k], 1.0)).collect(), space.unit[k]);
    }
    if let Some((gens, w)) = &gen_weights {
        for (c, wi) in coeffs.iter().zip(w) {
            lp.le(wi.iter().map(|&t| (t, 1.0)).collect(), 1.0);
            for k in 0..m {
                let mut row: Vec<(usize, f64)> =
                    wi.iter().zip(gens).map(|(&t, g)| (t, g[k])).collect();
                row.push((c[k], -1.0));
                lp.eq(row, 0.0);
            }
        }
    }
    Ok(lp.solve()?.map(|sol| {
        coeffs
            .iter()
            .map(|c| DVector::from_iterator(m, c.iter().map(|&v| sol[v])))
            .collect()
    }))
}

/// Largest number `n ≤ search_limit` of perfectly distinguishable states.
///
/// Polytopes are searched exhaustively over vertex subsets, which certifies
/// the result. Balls are capped at two by the center bound and try antipodal
/// pairs first. Orbitopes use random extreme subsets and yield a lower bound.
pub fn capacity(space: &GenericStateSpace, search_limit: usize, seed: u64) -> Result<CapacityReport> {
    if search_limit == 0 {
        return Err(Error::input("search limit must be at least 1"));
    }
    // Every effect reaching 1 on a pure ball state is ≥ 1/2 at the center,
    // so no ball admits three perfectly distinguishable states; restricting
    // effects can only lower this.
    let search_limit = match space.kind {
        SpaceKind::Ball { .. } => search_limit.min(2),
        _ => search_limit,
    };
    let test_points = space.effect_test_points(seed);
    let mut best = 1;
    let mut exhaustive = true;
    let mut tested = 0usize;
    for n in 2..=search_limit {
        let mut found = false;
        match &space.kind {
            SpaceKind::Polytope { vertices, .. } => {
                let (subsets, complete) = combinations(vertices.len(), n, MAX_SUBSETS_PER_SIZE);
                exhaustive &= complete;
                for sub in subsets {
                    tested += 1;
                    let states: Vec<&DVector<f64>> = sub.iter().map(|&i| &vertices[i]).collect();
                    if distinguishable(space, &states, &test_points)? {
                        found = true;
                        break;
                    }
                }
            }
            _ => {
                exhaustive = false;
                let mut candidates: Vec<Vec<DVector<f64>>> = Vec::new();
                if n == 2 {
                    for p in space.candidate_extremes(4, derive_seed(seed, 2)) {
                        let mut anti = p.clone();
                        let len = anti.len();
                        anti.rows_mut(1, len - 1).neg_mut();
                        candidates.push(vec![p, anti]);
                    }
                }
                for k in 0..RANDOM_SUBSETS_PER_SIZE {
                    candidates.push(space.candidate_extremes(n, derive_seed(seed, (n * 1000 + k) as u64)));
                }
                for cand in candidates {
                    tested += 1;
                    let states: Vec<&DVector<f64>> = cand.iter().collect();
                    if distinguishable(space, &states, &test_points)? {
                        found = true;
                        break;
                    }
                }
            }
        }
        if found {
            best = n;
        } else if exhaustive {
            // Subsets of a distinguishable family are distinguishable, so a
            // complete failure at n rules out every larger n.
            break;
        }
    }
    let certified = match space.kind {
        SpaceKind::Polytope { .. } => exhaustive,
        SpaceKind::Ball { .. } => best == 2,
        SpaceKind::Orbitope => false,
    };
    Ok(CapacityReport {
        capacity: best,
        certified,
        subsets_tested: tested,
    })
}

/// Affine map `φ(ω̂) = A·(ω̂ − μ̂)` that sends a transitive orbit onto the
/// unit sphere and the group onto orthogonal matrices.
#[derive(Debug, Clone)]
pub struct Canonicalization {
    pub linear: DMatrix<f64>,
    pub center: DVector<f64>,
    /// Largest orthogonality defect of the transformed group samples.
    pub group_defect: f64,
    /// Largest deviation of transformed pure-sample norms from 1.
    pub norm_defect: f64,
}

impl Canonicalization {
    pub fn apply(&self, point: &DVector<f64>) -> DVector<f64> {
        &self.linear * (point - &self.center)
    }

    /// Linear part of a group element in the new coordinates.
    pub fn transform_group(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (lin, _) = affine_parts(g)?;
        let inv = self
            .linear
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("canonical map not invertible".into()))?;
        Ok(&self.linear * lin * inv)
    }
}

/// Splits `(m+1)×(m+1)` normalization-preserving `G` into linear part and translation.
fn affine_parts(g: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = g.nrows();
    if n < 2 || g.ncols() != n {
        return Err(Error::input("group sample must be square of size ≥ 2"));
    }
    let first_row_ok = (g[(0, 0)] - 1.0).abs() <= 1e-9 && (1..n).all(|j| g[(0, j)].abs() <= 1e-9);
    if !first_row_ok {
        return Err(Error::input("group sample does not preserve normalization"));
    }
    Ok((
        g.view((1, 1), (n - 1, n - 1)).into_owned(),
        g.view((1, 0), (n - 1, 1)).column(0).into_owned(),
    ))
}

/// Builds the affine canonicalization from pure samples `(1, p)` lying in one
/// group orbit and normalization-preserving group samples.
pub fn canonicalize(
    pure_samples: &[DVector<f64>],
    group_samples: &[DMatrix<f64>],
) -> Result<Canonicalization> {
    if pure_samples.is_empty() || group_samples.is_empty() {
        return Err(Error::input("need pure samples and group samples"));
    }
    let n = pure_samples[0].len();
    if n < 2 {
        return Err(Error::input("states need at least one non-normalization coordinate"));
    }
    let m = n - 1;
    for s in pure_samples {
        if s.len() != n || (s[0] - 1.0).abs() > 1e-9 {
            return Err(Error::input("pure samples must be normalized vectors (1, p)"));
        }
    }
    let parts: Vec<(DMatrix<f64>, DVector<f64>)> = group_samples
        .iter()
        .map(|g| {
            if g.nrows() != n {
                return Err(Error::input("group sample size mismatch"));
            }
            affine_parts(g)
        })
        .collect::<Result<_>>()?;

    // Common fixed point: (L_G − I) μ = −t_G for every sample.
    let mut a = DMatrix::zeros(m * parts.len(), m);
    let mut b = DVector::zeros(m * parts.len());
    for (k, (lin, t)) in parts.iter().enumerate() {
        a.view_mut((k * m, 0), (m, m)).copy_from(&(lin - DMatrix::identity(m, m)));
        b.rows_mut(k * m, m).copy_from(&(-t));
    }
    let svd = a.clone().svd(true, true);
    let smin = svd.singular_values.min();
    if smin < 1e-8 * svd.singular_values.max().max(1.0) {
        return Err(Error::Degenerate("group samples have no unique fixed point".into()));
    }
    let center = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::Numerical(e.to_string()))?;

    let linear_parts: Vec<DMatrix<f64>> = parts.iter().map(|(l, _)| l.clone()).collect();
    let averaged = invariant_inner_product(&linear_parts)?;
    let form = exact_invariant_form(&linear_parts, &averaged.matrix)?;
    let (vals, vecs) = sorted_eigen(&form);
    if vals[m - 1] <= 1e-12 * vals[0] {
        return Err(Error::Degenerate("invariant form is not positive definite".into()));
    }
    let sqrt_form = &vecs * DMatrix::from_diagonal(&vals.map(f64::sqrt)) * vecs.transpose();

    let radii: Vec<f64> = pure_samples
        .iter()
        .map(|s| (&sqrt_form * (s.rows(1, m) - &center)).norm())
        .collect();
    let mean_r = radii.iter().sum::<f64>() / radii.len() as f64;
    if mean_r <= 1e-12 {
        return Err(Error::Degenerate("pure samples coincide with the fixed point".into()));
    }
    let linear = sqrt_form / mean_r;
    let mut out = Canonicalization {
        linear,
        center,
        group_defect: 0.0,
        norm_defect: 0.0,
    };
    for g in group_samples {
        out.group_defect = out.group_defect.max(orthogonality_defect(&out.transform_group(g)?));
    }
    for s in pure_samples {
        out.norm_defect = out
            .norm_defect
            .max((out.apply(&s.rows(1, m).into_owned()).norm() - 1.0).abs());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::haar_sample;
    use crate::linalg::random_in_ball;

    fn e(d: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    #[test]
    fn construction_checks_parameter_bounds() {
        assert!(BallSpace::new(3, 1.0, 0.5).is_ok());
        assert!(BallSpace::new(3, 0.6, 0.3).is_ok());
        assert!(BallSpace::new(3, 0.7, 0.3).is_err());
        assert!(BallSpace::new(3, 0.0, 0.5).is_err());
        assert!(BallSpace::new(3, 0.5, 1.0).is_err());
        assert!(BallSpace::new(0, 0.5, 0.5).is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(BallSpace::noiseless(2).unwrap().with_frame(bad).is_err());
    }

    #[test]
    fn spin_effect_examples() {
        let s = BallSpace::noiseless(3).unwrap();
        let x = e(3, 1);
        let aligned = BallState::new(s.bloch_direction(&x)).unwrap();
        assert_eq!(spin_effect(&s, &x, &aligned).unwrap(), 1.0);

        let noisy = BallSpace::new(3, 0.6, 0.5).unwrap();
        let mu = BallState::maximally_mixed(3);
        assert_eq!(spin_effect(&noisy, &x, &mu).unwrap(), 0.5);
        let anti = BallState::new(-noisy.bloch_direction(&x)).unwrap();
        assert!((spin_effect(&noisy, &x, &anti).unwrap() - 0.2).abs() < 1e-15);

        let nonunit = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        assert!(matches!(
            spin_effect(&s, &nonunit, &mu),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn l_functional_examples() {
        let s = BallSpace::noiseless(2).unwrap();
        let z = e(2, 0);
        let w = BallState::new(s.bloch_direction(&z)).unwrap();
        assert_eq!(l_functional(&s, &z, &w).unwrap(), 1.0);
        assert_eq!(l_functional(&s, &z, &BallState::maximally_mixed(2)).unwrap(), 0.0);
        let s = BallSpace::new(2, 0.4, 0.5).unwrap();
        let w = BallState::new(DVector::from_vec(vec![0.5, 0.3])).unwrap();
        assert!((l_functional(&s, &z, &w).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(
            l_functional(&s, &(-&z), &w).unwrap(),
            -l_functional(&s, &z, &w).unwrap()
        );
    }

    #[test]
    fn codeword_examples() {
        let s = BallSpace::noiseless(4).unwrap();
        let x = e(4, 0);
        assert!(codeword(&s, &x, 1.0).unwrap().is_pure());
        assert_eq!(codeword(&s, &x, 0.0).unwrap().norm(), 0.0);
        let c = codeword(&s, &x, 0.3).unwrap();
        assert_eq!(c.bloch().as_slice(), &[0.3, 0.0, 0.0, 0.0]);
        assert!(codeword(&s, &x, 1.2).is_err());
    }

    #[test]
    fn noiseless_lift_examples() {
        let s = BallSpace::noiseless(3).unwrap();
        let m = s.spin(&e(3, 2)).unwrap();
        assert_eq!(noiseless_lift(&s, &m).unwrap(), m);

        let noisy = BallSpace::new(3, 0.6, 0.5).unwrap();
        let m = noisy.spin(&e(3, 2)).unwrap();
        let lifted = noiseless_lift(&noisy, &m).unwrap();
        assert!((lifted.offset - 0.5).abs() < 1e-15);
        assert!((lifted.vector.norm() - 0.5).abs() < 1e-15);

        let u = BallEffect::unit(3);
        assert_eq!(noiseless_lift(&noisy, &u).unwrap(), u);
    }

    #[test]
    fn lift_of_complement_is_complement_of_lift() {
        let noisy = BallSpace::new(2, 0.5, 0.3).unwrap();
        let m = noisy.spin(&e(2, 0)).unwrap();
        let lifted = noiseless_lift(&noisy, &m).unwrap();
        let lifted_c = noiseless_lift(&noisy, &m.complement()).unwrap();
        assert!((lifted_c.offset - (1.0 - lifted.offset)).abs() < 1e-15);
        assert!((lifted_c.vector + lifted.vector).amax() < 1e-15);
        let half = BallEffect::new(0.2, DVector::from_vec(vec![0.1, 0.0])).unwrap();
        assert!(noiseless_lift(&noisy, &half).is_err());
    }

    #[test]
    fn capacity_of_ball_square_and_simplices() {
        for d in 1..=3 {
            let r = capacity(&GenericStateSpace::ball(d), 4, 1).unwrap();
            assert_eq!(r.capacity, 2, "ball d={d}");
            assert!(r.certified);
        }
        let r = capacity(&GenericStateSpace::square(), 4, 1).unwrap();
        assert_eq!(r.capacity, 2);
        assert!(r.certified);
        for n in 1..=5 {
            let r = capacity(&GenericStateSpace::simplex(n), 6, 1).unwrap();
            assert_eq!(r.capacity, n, "simplex {n}");
        }
    }

    #[test]
    fn restricting_effects_cannot_raise_capacity() {
        let noisy = BallSpace::new(2, 0.6, 0.5).unwrap();
        let spins: Vec<BallEffect> = crate::linalg::direction_set(2, 12, 0)
            .iter()
            .map(|x| noisy.spin(x).unwrap())
            .collect();
        let restricted = GenericStateSpace::ball_with_effects(2, &spins);
        let full = GenericStateSpace::ball(2);
        let r = capacity(&restricted, 3, 5).unwrap();
        let f = capacity(&full, 3, 5).unwrap();
        assert_eq!(r.capacity, 1);
        assert!(r.capacity <= f.capacity);

        let clean = BallSpace::noiseless(2).unwrap();
        let spins: Vec<BallEffect> = crate::linalg::direction_set(2, 12, 0)
            .iter()
            .map(|x| clean.spin(x).unwrap())
            .collect();
        let r = capacity(&GenericStateSpace::ball_with_effects(2, &spins), 3, 5).unwrap();
        assert!(r.capacity <= f.capacity);
    }

    #[test]
    fn generic_membership() {
        let ball = GenericStateSpace::ball(2);
        assert!(ball.contains(&DVector::from_vec(vec![1.0, 0.6, 0.8])).unwrap());
        assert!(!ball.contains(&DVector::from_vec(vec![1.0, 0.7, 0.8])).unwrap());
        assert!(!ball.contains(&DVector::from_vec(vec![0.5, 0.0, 0.0])).unwrap());
        let sq = GenericStateSpace::square();
        assert!(sq.contains(&DVector::from_vec(vec![1.0, 1.0, 0.0])).unwrap());
        assert!(sq.contains(&DVector::from_vec(vec![1.0, 1.0, 0.1])).unwrap());
        assert!(!sq.contains(&DVector::from_vec(vec![1.0, 1.1, 0.0])).unwrap());
        let orb = GenericStateSpace::orbitope();
        let mut id = unit_e0(10);
        id[1] = 1.0;
        id[5] = 1.0;
        id[9] = 1.0;
        assert!(orb.contains(&id).unwrap());
        id[9] = 1.2;
        assert!(!orb.contains(&id).unwrap());
    }

    #[test]
    fn canonicalize_identity_on_unit_ball() {
        let group: Vec<DMatrix<f64>> = (0..30)
            .map(|s| {
                let r = haar_sample(3, s).unwrap();
                let mut g = DMatrix::identity(4, 4);
                g.view_mut((1, 1), (3, 3)).copy_from(r.matrix());
                g
            })
            .collect();
        let p = DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]);
        let pure: Vec<DVector<f64>> = group.iter().map(|g| g * &p).collect();
        let c = canonicalize(&pure, &group).unwrap();
        assert!((c.linear.clone() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-9);
        assert!(c.center.amax() < 1e-9);
        assert!(c.group_defect < 1e-9);
        assert!(c.norm_defect < 1e-9);
    }

    #[test]
    fn canonicalize_undoes_ellipsoidal_deformation() {
        let s_mat = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.0, 1.0, 0.2, 0.3, 0.0, 0.5]);
        let s_inv = s_mat.clone().try_inverse().unwrap();
        let shift = DVector::from_vec(vec![0.2, -0.1, 0.4]);
        let group: Vec<DMatrix<f64>> = (0..40)
            .map(|k| {
                let r = haar_sample(3, 100 + k).unwrap();
                let lin = &s_mat * r.matrix() * &s_inv;
                let mut g = DMatrix::identity(4, 4);
                g.view_mut((1, 1), (3, 3)).copy_from(&lin);
                let t = &shift - &lin * &shift;
                g.view_mut((1, 0), (3, 1)).copy_from(&t);
                g
            })
            .collect();
        let mut rng = rng_from_seed(3);
        let pure: Vec<DVector<f64>> = (0..25)
            .map(|_| {
                let p = &s_mat * random_unit(3, &mut rng) + &shift;
                let mut v = unit_e0(4);
                v.rows_mut(1, 3).copy_from(&p);
                v
            })
            .collect();
        let c = canonicalize(&pure, &group).unwrap();
        assert!(c.group_defect < 1e-9, "group defect {}", c.group_defect);
        assert!(c.norm_defect < 1e-9, "norm defect {}", c.norm_defect);
        assert!((c.center.clone() - &shift).amax() < 1e-9);
        // φ∘S is orthogonal.
        let q = &c.linear * &s_mat;
        assert!(orthogonality_defect(&q) < 1e-9);

        // Idempotent up to an orthogonal factor.
        let pure2: Vec<DVector<f64>> = pure
            .iter()
            .map(|p| {
                let mut v = unit_e0(4);
                v.rows_mut(1, 3).copy_from(&c.apply(&p.rows(1, 3).into_owned()));
                v
            })
            .collect();
        let group2: Vec<DMatrix<f64>> = group
            .iter()
            .map(|g| {
                let mut h = DMatrix::identity(4, 4);
                h.view_mut((1, 1), (3, 3)).copy_from(&c.transform_group(g).unwrap());
                h
            })
            .collect();
        let c2 = canonicalize(&pure2, &group2).unwrap();
        assert!(orthogonality_defect(&c2.linear) < 1e-8);
        assert!(c2.center.amax() < 1e-8);
    }

    #[test]
    fn canonicalize_haar_orbit_monte_carlo() {
        let rots: Vec<DMatrix<f64>> = haar_pool(3, 200, 42)
            .unwrap()
            .into_iter()
            .map(|r| {
                let mut g = DMatrix::identity(4, 4);
                g.view_mut((1, 1), (3, 3)).copy_from(r.matrix());
                g
            })
            .collect();
        let p = DVector::from_vec(vec![1.0, 0.6, 0.0, 0.8]);
        let pure: Vec<DVector<f64>> = rots.iter().map(|g| g * &p).collect();
        let c = canonicalize(&pure, &rots).unwrap();
        for s in &pure {
            let img = c.apply(&s.rows(1, 3).into_owned());
            assert!((img.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn canonicalize_rejects_fixed_point_free_degeneracy() {
        // Only the identity: every point is fixed.
        let g = vec![DMatrix::identity(3, 3)];
        let p = vec![DVector::from_vec(vec![1.0, 1.0, 0.0])];
        assert!(matches!(canonicalize(&p, &g), Err(Error::Degenerate(_))));
    }

    #[test]
    fn spin_range_matches_visibility_bounds() {
        let mut rng = rng_from_seed(17);
        let s = BallSpace::new(4, 0.5, 0.35).unwrap();
        for _ in 0..2000 {
            let x = random_unit(4, &mut rng);
            let w = BallState::new(random_in_ball(4, &mut rng)).unwrap();
            let p = spin_effect(&s, &x, &w).unwrap();
            assert!(p >= 0.35 - 0.25 - 1e-15 && p <= 0.35 + 0.25 + 1e-15);
        }
    }
}
