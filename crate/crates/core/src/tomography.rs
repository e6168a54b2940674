//! Measuring angles between devices from outcome probabilities alone, and
//! reconstructing linear coordinates for device directions from effects.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Binomial, Distribution, StandardNormal};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gpt::{spin_effect, BallSpace, BallState};
use crate::group::exact_invariant_form;
use crate::linalg::{
    angle_between, check_dim, derive_seed_path, direction_set, nearest_psd, orthonormal_complement,
    rng_from_seed, sorted_eigen,
};

/// Condition number of the Gram matrix beyond which the preparations count
/// as linearly dependent.
pub const MAX_GRAM_CONDITION: f64 = 1e6;

/// Measurement device whose direction is hidden from the estimator.
#[derive(Debug, Clone)]
pub struct HiddenDevice {
    id: u64,
    secret: DVector<f64>,
}

impl HiddenDevice {
    pub fn new(id: u64, direction: DVector<f64>) -> Result<Self> {
        crate::linalg::check_unit(&direction, "device direction")?;
        Ok(Self {
            id,
            secret: direction,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Reveals the secret direction; for scoring only, never used by estimators.
    pub fn oracle_direction(&self) -> &DVector<f64> {
        &self.secret
    }
}

/// Source of copies of an unknown state.
#[derive(Debug, Clone)]
pub struct Preparation {
    id: u64,
    state: BallState,
}

impl Preparation {
    pub fn new(id: u64, state: BallState) -> Self {
        Self { id, state }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Reveals the prepared state; for scoring only.
    pub fn oracle_state(&self) -> &BallState {
        &self.state
    }
}

/// Runs `shots` measurements of `𝓜_x` on a preparation and returns the
/// observed frequency. The seed fixes the outcomes.
fn measure(space: &BallSpace, prep: &Preparation, x: &DVector<f64>, shots: u64, seed: u64) -> Result<f64> {
    let p = spin_effect(space, x, &prep.state)?.clamp(0.0, 1.0);
    let k = Binomial::new(shots, p)
        .map_err(|e| Error::Numerical(format!("binomial: {e}")))?
        .sample(&mut rng_from_seed(seed));
    Ok(k as f64 / shots as f64)
}

/// Effort spent on each probability estimate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TomographyBudget {
    /// Shots per estimated probability.
    pub shots: u64,
    /// Coarse search directions.
    pub grid: usize,
    /// Line-search rounds after the coarse search.
    pub refine_steps: usize,
}

impl Default for TomographyBudget {
    fn default() -> Self {
        Self {
            shots: 1_000_000,
            grid: 400,
            refine_steps: 20,
        }
    }
}

/// Estimated `|ω̂|` and the direction `x` whose Bloch image points along ω̂.
#[derive(Debug, Clone, Serialize)]
pub struct Alignment {
    pub norm: f64,
    pub norm_std_error: f64,
    pub direction: DVector<f64>,
    pub shots_used: u64,
}

// Seed-path tags.
const TAG_GRID: u64 = 1;
const TAG_REFINE: u64 = 2;
const TAG_FINAL: u64 = 3;
const TAG_PAIR: u64 = 4;
const TAG_DEVICE: u64 = 5;
const TAG_BOOT: u64 = 6;

/// Maximizes the estimated `𝓜_x(ω)` over directions: a coarse grid, then
/// rounds of three-point cosine fits along each tangent axis. Along the great
/// circle `x cos φ + t sin φ` the probability is exactly `c + A cos(φ − φ₀)`,
/// so three probes at `−h, 0, h` determine `φ₀` without knowing `c`.
pub fn estimate_norm_and_align(
    space: &BallSpace,
    prep: &Preparation,
    budget: &TomographyBudget,
    seed: u64,
) -> Result<Alignment> {
    if budget.shots == 0 || budget.grid == 0 {
        return Err(Error::input("budgets must be at least 1"));
    }
    let d = space.dim();
    let base = [seed, prep.id];
    let mut shots_used = 0u64;
    let grid = direction_set(d, budget.grid, derive_seed_path(seed, &[TAG_GRID]));
    let probes: Vec<f64> = grid
        .par_iter()
        .enumerate()
        .map(|(k, x)| measure(space, prep, x, budget.shots, derive_seed_path(base[0], &[base[1], TAG_GRID, k as u64])))
        .collect::<Result<_>>()?;
    shots_used += budget.shots * grid.len() as u64;
    let mut best = 0;
    for (k, p) in probes.iter().enumerate() {
        if *p > probes[best] {
            best = k;
        }
    }
    let mut x = grid[best].clone();
    let mut counter = 0u64;
    for step in 0..budget.refine_steps {
        let h = (std::f64::consts::FRAC_PI_2 * 0.8f64.powi(step as i32)).max(std::f64::consts::FRAC_PI_4);
        for t in orthonormal_complement(&x) {
            let mut p = [0.0; 3];
            for (slot, phi) in [-h, 0.0, h].iter().enumerate() {
                let dir = (&x * phi.cos() + &t * phi.sin()).normalize();
                counter += 1;
                p[slot] = measure(
                    space,
                    prep,
                    &dir,
                    budget.shots,
                    derive_seed_path(base[0], &[base[1], TAG_REFINE, counter]),
                )?;
                shots_used += budget.shots;
            }
            let sine = (p[2] - p[0]) / (2.0 * h.sin());
            let cosine = (2.0 * p[1] - p[0] - p[2]) / (2.0 * (1.0 - h.cos()));
            let phase = sine.atan2(cosine);
            x = (&x * phase.cos() + &t * phase.sin()).normalize();
        }
    }
    let p = measure(space, prep, &x, budget.shots, derive_seed_path(base[0], &[base[1], TAG_FINAL]))?;
    shots_used += budget.shots;
    let a = space.visibility();
    let norm = 2.0 * (p - space.noise()) / a;
    let se = 2.0 * (p * (1.0 - p) / budget.shots as f64).sqrt() / a;
    if norm <= 5.0 * se {
        return Err(Error::ProtocolFailure(format!(
            "state too mixed: estimated norm {norm:.3e} within 5 standard errors ({se:.3e})"
        )));
    }
    Ok(Alignment {
        norm,
        norm_std_error: se,
        direction: x,
        shots_used,
    })
}

/// Estimated Gram matrix `X_ij = ⟨ω̂_i, ω̂_j⟩`.
#[derive(Debug, Clone, Serialize)]
pub struct GramEstimate {
    pub x: DMatrix<f64>,
    pub std_errors: DMatrix<f64>,
}

/// `S` with `SᵀS` equal to the nearest PSD matrix of `X`.
#[derive(Debug, Clone)]
pub struct GramFactor {
    pub s: DMatrix<f64>,
    /// Largest negative eigenvalue magnitude removed before factoring.
    pub clipped: f64,
    pub condition_number: f64,
}

/// Symmetric square-root factor after nearest-PSD projection.
pub fn gram_factor(x: &DMatrix<f64>) -> Result<GramFactor> {
    if x.nrows() != x.ncols() || x.nrows() == 0 {
        return Err(Error::input("Gram matrix must be square and nonempty"));
    }
    let sym = (x + x.transpose()) * 0.5;
    let (psd, clipped) = nearest_psd(&sym);
    let (vals, vecs) = sorted_eigen(&psd);
    let root = vals.map(|v| v.max(0.0).sqrt());
    let s = DMatrix::from_diagonal(&root) * vecs.transpose();
    let n = vals.len();
    let condition_number = if vals[n - 1] > 0.0 { vals[0] / vals[n - 1] } else { f64::INFINITY };
    Ok(GramFactor {
        s,
        clipped,
        condition_number,
    })
}

/// Angle between two hidden devices with a bootstrap error bar.
#[derive(Debug, Clone, Serialize)]
pub struct AngleEstimate {
    pub estimated_angle_rad: f64,
    pub error_bar: f64,
    pub gram_condition_number: f64,
    pub gram_clipped: f64,
    pub shots_used: u64,
    pub warnings: Vec<String>,
}

fn bloch_overlap(space: &BallSpace, p: f64) -> f64 {
    2.0 * (p - space.noise()) / space.visibility()
}

fn overlap_se(space: &BallSpace, p: f64, shots: u64) -> f64 {
    2.0 * (p.clamp(0.0, 1.0) * (1.0 - p.clamp(0.0, 1.0)) / shots as f64).sqrt() / space.visibility()
}

fn angle_from(s: &DMatrix<f64>, gy: &DVector<f64>, gz: &DVector<f64>) -> Result<f64> {
    // Sᵀv = g gives the coordinates of ω̂_y in the frame of S.
    let st = s.transpose();
    let lu = st.lu();
    let vy = lu.solve(gy).ok_or_else(|| Error::ProtocolFailure("Gram factor singular".into()))?;
    let vz = lu.solve(gz).ok_or_else(|| Error::ProtocolFailure("Gram factor singular".into()))?;
    if vy.norm() == 0.0 || vz.norm() == 0.0 {
        return Err(Error::ProtocolFailure("device coordinates vanish".into()));
    }
    Ok(angle_between(&vy, &vz))
}

/// Estimates the angle between two devices using `d` unknown preparations.
///
/// Randomness for each probability is keyed by the ids of the preparations
/// and devices involved, so reordering the preparations leaves the result
/// unchanged.
pub fn protocol_c1(
    space: &BallSpace,
    device_y: &HiddenDevice,
    device_z: &HiddenDevice,
    preps: &[Preparation],
    budget: &TomographyBudget,
    seed: u64,
) -> Result<AngleEstimate> {
    let d = space.dim();
    if preps.len() != d {
        return Err(Error::input(format!("need exactly {d} preparations, got {}", preps.len())));
    }
    let mut ids: Vec<u64> = preps.iter().map(|p| p.id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != d {
        return Err(Error::input("preparation ids must be distinct"));
    }
    // Canonical order by id keeps the floating-point path order-independent.
    let mut preps: Vec<&Preparation> = preps.iter().collect();
    preps.sort_by_key(|p| p.id);

    let aligns: Vec<Alignment> = preps
        .iter()
        .map(|p| estimate_norm_and_align(space, p, budget, seed))
        .collect::<Result<_>>()?;
    let mut shots_used: u64 = aligns.iter().map(|a| a.shots_used).sum();

    let mut x = DMatrix::zeros(d, d);
    let mut se = DMatrix::zeros(d, d);
    for i in 0..d {
        x[(i, i)] = aligns[i].norm * aligns[i].norm;
        se[(i, i)] = 2.0 * aligns[i].norm * aligns[i].norm_std_error;
        for j in 0..d {
            if i == j {
                continue;
            }
            let p = measure(
                space,
                preps[j],
                &aligns[i].direction,
                budget.shots,
                derive_seed_path(seed, &[TAG_PAIR, preps[i].id, preps[j].id]),
            )?;
            shots_used += budget.shots;
            x[(i, j)] = bloch_overlap(space, p) * aligns[i].norm;
            se[(i, j)] = overlap_se(space, p, budget.shots) * aligns[i].norm;
        }
    }
    let xs = (&x + x.transpose()) * 0.5;
    let ses = se.zip_map(&se.transpose(), |a, b| 0.5 * (a * a + b * b).sqrt());

    let factor = gram_factor(&xs)?;
    if !(factor.condition_number <= MAX_GRAM_CONDITION) {
        return Err(Error::ProtocolFailure(format!(
            "preparations nearly dependent (Gram condition number {:.3e}); repeat with fresh preparations",
            factor.condition_number
        )));
    }
    let mut warnings = Vec::new();
    if factor.clipped > 0.0 {
        warnings.push(format!(
            "Gram matrix clipped to positive semidefinite (removed eigenvalue {:.3e})",
            -factor.clipped
        ));
    }

    let device_overlaps = |dev: &HiddenDevice| -> Result<(DVector<f64>, DVector<f64>)> {
        let mut g = DVector::zeros(d);
        let mut s = DVector::zeros(d);
        for (i, p) in preps.iter().enumerate() {
            let f = measure(
                space,
                p,
                &dev.secret,
                budget.shots,
                derive_seed_path(seed, &[TAG_DEVICE, dev.id, p.id]),
            )?;
            g[i] = bloch_overlap(space, f);
            s[i] = overlap_se(space, f, budget.shots);
        }
        Ok((g, s))
    };
    let (gy, sy) = device_overlaps(device_y)?;
    let (gz, sz) = device_overlaps(device_z)?;
    shots_used += 2 * budget.shots * d as u64;
    let angle = angle_from(&factor.s, &gy, &gz)?;

    // Parametric bootstrap with Gaussian perturbations of every estimate.
    const REPLICAS: usize = 64;
    let mut rng = rng_from_seed(derive_seed_path(seed, &[TAG_BOOT, device_y.id, device_z.id]));
    let mut boot = Vec::with_capacity(REPLICAS);
    for _ in 0..REPLICAS {
        let mut noise = |sd: f64| sd * rng.sample::<f64, _>(StandardNormal);
        let mut xb = xs.clone();
        for i in 0..d {
            for j in i..d {
                let v = xs[(i, j)] + noise(ses[(i, j)]);
                xb[(i, j)] = v;
                xb[(j, i)] = v;
            }
        }
        let gyb = DVector::from_iterator(d, (0..d).map(|i| gy[i] + noise(sy[i])));
        let gzb = DVector::from_iterator(d, (0..d).map(|i| gz[i] + noise(sz[i])));
        if let Ok(f) = gram_factor(&xb) {
            if let Ok(a) = angle_from(&f.s, &gyb, &gzb) {
                boot.push(a);
            }
        }
    }
    let mean = boot.iter().sum::<f64>() / boot.len().max(1) as f64;
    let var = boot.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (boot.len().max(2) - 1) as f64;

    Ok(AngleEstimate {
        estimated_angle_rad: angle,
        error_bar: var.sqrt(),
        gram_condition_number: factor.condition_number,
        gram_clipped: factor.clipped,
        shots_used,
        warnings,
    })
}

/// Outcome of [`protocol_c1_repeated`].
#[derive(Debug, Clone, Serialize)]
pub struct RepeatedAngleEstimate {
    pub estimate: AngleEstimate,
    pub attempts: usize,
    /// Shots over all attempts, including discarded ones.
    pub total_shots: u64,
}

/// Repeats [`protocol_c1`] with fresh preparations until an attempt succeeds
/// with an error bar at most `max_error_bar` (radians). Nearly dependent
/// preparations show up as large error bars or as protocol failures, and
/// are treated alike.
pub fn protocol_c1_repeated<F>(
    space: &BallSpace,
    device_y: &HiddenDevice,
    device_z: &HiddenDevice,
    mut fresh_preparations: F,
    budget: &TomographyBudget,
    max_error_bar: f64,
    max_attempts: usize,
    seed: u64,
) -> Result<RepeatedAngleEstimate>
where
    F: FnMut(usize) -> Vec<Preparation>,
{
    if max_attempts == 0 {
        return Err(Error::input("at least one attempt is required"));
    }
    let mut total_shots = 0u64;
    let mut last = None;
    for attempt in 0..max_attempts {
        let preps = fresh_preparations(attempt);
        match protocol_c1(space, device_y, device_z, &preps, budget, derive_seed_path(seed, &[attempt as u64])) {
            Ok(est) => {
                total_shots += est.shots_used;
                if est.error_bar <= max_error_bar {
                    return Ok(RepeatedAngleEstimate {
                        estimate: est,
                        attempts: attempt + 1,
                        total_shots,
                    });
                }
                last = Some(Error::ProtocolFailure(format!(
                    "error bar {:.3e} rad exceeds {max_error_bar:.3e}",
                    est.error_bar
                )));
            }
            Err(e @ Error::ProtocolFailure(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::ProtocolFailure("no attempt succeeded".into())))
}

/// Setup for repeated angle measurements between random device pairs.
#[derive(Debug, Clone, Serialize)]
pub struct AngleExperiment {
    pub dim: usize,
    pub visibility: f64,
    pub noise: f64,
    pub pairs: usize,
    pub budget: TomographyBudget,
    /// Attempts whose bootstrap error bar exceeds this (radians) are retried.
    pub max_error_bar: f64,
    pub max_attempts: usize,
    pub seed: u64,
}

impl AngleExperiment {
    pub fn new(dim: usize, pairs: usize, seed: u64) -> Self {
        Self {
            dim,
            visibility: 1.0,
            noise: 0.5,
            pairs,
            budget: TomographyBudget::default(),
            max_error_bar: 0.5f64.to_radians(),
            max_attempts: 10,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AngleTrial {
    pub pair: usize,
    pub true_angle_rad: f64,
    pub estimated_angle_rad: Option<f64>,
    pub error_bar: Option<f64>,
    pub gram_condition_number: Option<f64>,
    pub attempts: usize,
    pub shots_used: u64,
    pub failure: Option<String>,
}

impl AngleTrial {
    pub fn abs_error_deg(&self) -> Option<f64> {
        self.estimated_angle_rad
            .map(|a| (a - self.true_angle_rad).abs().to_degrees())
    }
}

/// Preparations with Haar-random directions and Bloch norms in `[0.6, 1)`.
pub fn random_preparations(d: usize, seed: u64) -> Vec<Preparation> {
    let mut rng = rng_from_seed(seed);
    (0..d)
        .map(|i| {
            let r = rng.random_range(0.6..1.0);
            let v = crate::linalg::random_unit(d, &mut rng) * r;
            Preparation::new(10 + i as u64, BallState::new(v).expect("norm below one"))
        })
        .collect()
}

/// Measures the angle between `pairs` random device pairs. Pair `k` draws
/// everything from `(seed, k)`.
pub fn run_angle_experiment(cfg: &AngleExperiment) -> Result<Vec<AngleTrial>> {
    let space = BallSpace::new(cfg.dim, cfg.visibility, cfg.noise)?;
    (0..cfg.pairs)
        .into_par_iter()
        .map(|k| {
            let pair_seed = derive_seed_path(cfg.seed, &[k as u64]);
            let mut rng = rng_from_seed(pair_seed);
            let y = crate::linalg::random_unit(cfg.dim, &mut rng);
            let z = crate::linalg::random_unit(cfg.dim, &mut rng);
            let truth = angle_between(&y, &z);
            let dy = HiddenDevice::new(1, y)?;
            let dz = HiddenDevice::new(2, z)?;
            let res = protocol_c1_repeated(
                &space,
                &dy,
                &dz,
                |a| random_preparations(cfg.dim, derive_seed_path(pair_seed, &[1, a as u64])),
                &cfg.budget,
                cfg.max_error_bar,
                cfg.max_attempts,
                derive_seed_path(pair_seed, &[2]),
            );
            Ok(match res {
                Ok(r) => AngleTrial {
                    pair: k,
                    true_angle_rad: truth,
                    estimated_angle_rad: Some(r.estimate.estimated_angle_rad),
                    error_bar: Some(r.estimate.error_bar),
                    gram_condition_number: Some(r.estimate.gram_condition_number),
                    attempts: r.attempts,
                    shots_used: r.total_shots,
                    failure: None,
                },
                Err(e @ Error::ProtocolFailure(_)) => AngleTrial {
                    pair: k,
                    true_angle_rad: truth,
                    estimated_angle_rad: None,
                    error_bar: None,
                    gram_condition_number: None,
                    attempts: cfg.max_attempts,
                    shots_used: 0,
                    failure: Some(e.to_string()),
                },
                Err(e) => return Err(e),
            })
        })
        .collect()
}

/// A group element given as its action on effect labels (if known) and on states.
#[derive(Debug, Clone)]
pub struct GroupSample {
    /// `permutation[x]` is the label of `E_{H(x)}`.
    pub permutation: Option<Vec<usize>>,
    pub transform: DMatrix<f64>,
}

/// Coordinates `λ(x)` of device directions and their invariant norms.
#[derive(Debug, Clone, Serialize)]
pub struct CoordinateReport {
    pub coordinates: Vec<DVector<f64>>,
    /// Constant value `m = E_x(μ)`.
    pub offset: f64,
    pub invariant_form: DMatrix<f64>,
    pub norms: Vec<f64>,
    /// Largest relative deviation of the norms from their mean.
    pub norm_spread: f64,
    /// Largest mismatch `|E_{H(x)} − E_x∘H'|` over the supplied permutations.
    pub covariance_defect: f64,
}

/// Fixed point of the state transformations with unit normalization.
fn invariant_state(unit: &DVector<f64>, group: &[GroupSample]) -> Result<DVector<f64>> {
    let n = unit.len();
    let mut a = DMatrix::zeros(n * group.len() + 1, n);
    let mut b = DVector::zeros(n * group.len() + 1);
    for (k, g) in group.iter().enumerate() {
        a.view_mut((k * n, 0), (n, n))
            .copy_from(&(&g.transform - DMatrix::identity(n, n)));
    }
    a.row_mut(n * group.len()).copy_from(&unit.transpose());
    b[n * group.len()] = 1.0;
    crate::linalg::lstsq(&a, &b)
}

/// Builds linear coordinates for the labels of a family of effects that a
/// transitive group permutes, following the construction `λ(x) = Λ(E_x − m·𝓤)`.
pub fn reconstruct_coordinates(
    unit: &DVector<f64>,
    effects: &[DVector<f64>],
    group: &[GroupSample],
    mu: Option<&DVector<f64>>,
    tolerance: f64,
) -> Result<CoordinateReport> {
    let n = unit.len();
    if n < 2 {
        return Err(Error::input("ambient dimension must be at least 2"));
    }
    let d = n - 1;
    if effects.is_empty() || group.is_empty() {
        return Err(Error::input("need effects and group samples"));
    }
    for e in effects {
        check_dim(e, n, "effect")?;
    }
    for g in group {
        if g.transform.nrows() != n || g.transform.ncols() != n {
            return Err(Error::input("group transform has the wrong size"));
        }
    }
    let mu = match mu {
        Some(m) => {
            check_dim(m, n, "invariant state")?;
            m.clone()
        }
        None => invariant_state(unit, group)?,
    };
    let values: Vec<f64> = effects.iter().map(|e| e.dot(&mu)).collect();
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let spread = values.iter().map(|v| (v - m).abs()).fold(0.0, f64::max);
    if spread > tolerance.max(1e-12) * m.abs().max(1.0) {
        return Err(Error::input(format!(
            "effects disagree on the invariant state (spread {spread:.3e}); inconsistent input"
        )));
    }
    // Greedy basis F_1..F_d of {f : f(μ) = 0} from the shifted effects.
    let shifted: Vec<DVector<f64>> = effects.iter().map(|e| e - unit * m).collect();
    let scale = shifted.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut ortho: Vec<DVector<f64>> = Vec::new();
    for f in &shifted {
        let mut r = f.clone();
        for q in &ortho {
            r -= q * q.dot(&r);
        }
        if r.norm() > 1e-8 * scale {
            ortho.push(r.normalize());
            basis.push(f.clone());
            if basis.len() == d {
                break;
            }
        }
    }
    if basis.len() < d {
        return Err(Error::input(format!(
            "effects affinely span only {} of {d} dimensions",
            basis.len()
        )));
    }
    let fmat = DMatrix::from_columns(&basis);
    let lambda = |v: &DVector<f64>| crate::linalg::lstsq(&fmat, v);
    let coordinates: Vec<DVector<f64>> = shifted.iter().map(lambda).collect::<Result<_>>()?;

    // L_H acts on functionals by f ↦ H'ᵀ f; express it in λ-coordinates.
    let mut mats = Vec::with_capacity(group.len());
    let mut covariance_defect: f64 = 0.0;
    for g in group {
        let ht = g.transform.transpose();
        let cols: Vec<DVector<f64>> = basis.iter().map(|f| lambda(&(&ht * f))).collect::<Result<_>>()?;
        mats.push(DMatrix::from_columns(&cols));
        if let Some(perm) = &g.permutation {
            if perm.len() != effects.len() || perm.iter().any(|&k| k >= effects.len()) {
                return Err(Error::input("permutation does not match the effect labels"));
            }
            for (x, &hx) in perm.iter().enumerate() {
                covariance_defect = covariance_defect.max((&effects[hx] - &ht * &effects[x]).amax());
            }
        }
    }
    let hint = crate::group::invariant_inner_product(&mats)?.matrix;
    let form = exact_invariant_form(&mats, &hint)?;
    let norms: Vec<f64> = coordinates
        .iter()
        .map(|l| (l.transpose() * &form * l)[(0, 0)].max(0.0).sqrt())
        .collect();
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    let norm_spread = norms.iter().map(|r| (r - mean).abs()).fold(0.0, f64::max) / mean.max(1e-300);
    if norm_spread > tolerance {
        return Err(Error::Verification(format!(
            "coordinate norms not constant (relative spread {norm_spread:.3e})"
        )));
    }
    Ok(CoordinateReport {
        coordinates,
        offset: m,
        invariant_form: form,
        norms,
        norm_spread,
        covariance_defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::haar_sample;
    use crate::linalg::random_unit;

    fn e(d: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    #[test]
    fn alignment_recovers_pure_state_direction() {
        let s = BallSpace::noiseless(3).unwrap();
        let x = DVector::from_vec(vec![0.36, 0.48, 0.8]);
        let prep = Preparation::new(1, BallState::new(x.clone()).unwrap());
        let budget = TomographyBudget { shots: 100_000_000, grid: 400, refine_steps: 20 };
        let a = estimate_norm_and_align(&s, &prep, &budget, 3).unwrap();
        assert!(angle_between(&a.direction, &x) < 1e-3);
        assert!((a.norm - 1.0).abs() < 1e-3);
    }

    #[test]
    fn alignment_refuses_mixed_state() {
        let s = BallSpace::noiseless(3).unwrap();
        let prep = Preparation::new(1, BallState::maximally_mixed(3));
        let budget = TomographyBudget { shots: 10_000, grid: 100, refine_steps: 3 };
        assert!(matches!(
            estimate_norm_and_align(&s, &prep, &budget, 1),
            Err(Error::ProtocolFailure(_))
        ));
    }

    #[test]
    fn norm_estimates_are_accurate() {
        let s = BallSpace::noiseless(3).unwrap();
        let budget = TomographyBudget { shots: 1_000_000, grid: 400, refine_steps: 20 };
        let mut ok = 0;
        for k in 0..20u64 {
            let mut rng = rng_from_seed(k);
            let prep = Preparation::new(k, BallState::new(random_unit(3, &mut rng) * 0.8).unwrap());
            let a = estimate_norm_and_align(&s, &prep, &budget, 100 + k).unwrap();
            ok += ((a.norm - 0.8).abs() <= 0.02) as usize;
        }
        assert!(ok >= 19, "{ok}");
    }

    #[test]
    fn gram_factor_examples() {
        let f = gram_factor(&DMatrix::identity(3, 3)).unwrap();
        assert!(crate::linalg::orthogonality_defect(&f.s) < 1e-12);

        let mut rng = rng_from_seed(4);
        let vs: Vec<DVector<f64>> = (0..4).map(|_| random_unit(4, &mut rng)).collect();
        let x = DMatrix::from_fn(4, 4, |i, j| vs[i].dot(&vs[j]));
        let f = gram_factor(&x).unwrap();
        assert!((f.s.transpose() * &f.s - &x).amax() < 1e-10);
        for i in 0..4 {
            for j in 0..4 {
                let a = angle_between(&f.s.column(i).into_owned(), &f.s.column(j).into_owned());
                assert!((a - angle_between(&vs[i], &vs[j])).abs() < 1e-9);
            }
        }

        let q = haar_sample(3, 9).unwrap();
        let noisy = q.matrix() * DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, -1e-4])) * q.matrix().transpose();
        let f = gram_factor(&noisy).unwrap();
        assert!((f.clipped - 1e-4).abs() < 1e-12);
        let (clipped, _) = nearest_psd(&noisy);
        assert!((f.s.transpose() * &f.s - clipped).amax() < 1e-10);
    }

    #[test]
    fn gram_factors_differ_by_an_orthogonal_map() {
        let mut rng = rng_from_seed(5);
        let s1 = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let x = s1.transpose() * &s1;
        let s2 = gram_factor(&x).unwrap().s;
        let q = &s2 * s1.clone().try_inverse().unwrap();
        assert!(crate::linalg::orthogonality_defect(&q) < 1e-8);
    }

    fn random_preps(d: usize, seed: u64) -> Vec<Preparation> {
        let mut rng = rng_from_seed(seed);
        (0..d)
            .map(|i| {
                let r = rng.random_range(0.6..1.0);
                Preparation::new(10 + i as u64, BallState::new(random_unit(d, &mut rng) * r).unwrap())
            })
            .collect()
    }

    #[test]
    fn identical_and_antipodal_devices() {
        let s = BallSpace::noiseless(3).unwrap();
        let y = DVector::from_vec(vec![0.0, 0.6, 0.8]);
        let dy = HiddenDevice::new(1, y.clone()).unwrap();
        let dz = HiddenDevice::new(1, y.clone()).unwrap();
        let anti = HiddenDevice::new(2, -&y).unwrap();
        let budget = TomographyBudget { shots: 1_000_000, grid: 200, refine_steps: 10 };
        let preps = random_preps(3, 1);
        let same = protocol_c1(&s, &dy, &dz, &preps, &budget, 2).unwrap();
        assert!(same.estimated_angle_rad < 1e-12);
        let opp = protocol_c1(&s, &dy, &anti, &preps, &budget, 2).unwrap();
        assert!((opp.estimated_angle_rad - std::f64::consts::PI).abs() < 3.0f64.to_radians());
    }

    #[test]
    fn sixty_degrees_in_three_dimensions() {
        let s = BallSpace::noiseless(3).unwrap();
        let y = e(3, 0);
        let z = DVector::from_vec(vec![0.5, 3f64.sqrt() / 2.0, 0.0]);
        let budget = TomographyBudget::default();
        let mut ok = 0;
        let runs = 20;
        for k in 0..runs {
            let dy = HiddenDevice::new(1, y.clone()).unwrap();
            let dz = HiddenDevice::new(2, z.clone()).unwrap();
            let est = protocol_c1_repeated(
                &s,
                &dy,
                &dz,
                |a| random_preps(3, 1000 * k + a as u64),
                &budget,
                0.5f64.to_radians(),
                10,
                k,
            )
            .unwrap();
            ok += ((est.estimate.estimated_angle_rad.to_degrees() - 60.0).abs() <= 2.0) as usize;
        }
        assert!(ok >= 19, "{ok}/{runs}");
    }

    #[test]
    fn single_attempts_report_honest_error_bars() {
        let s = BallSpace::noiseless(3).unwrap();
        let dy = HiddenDevice::new(1, e(3, 0)).unwrap();
        let dz = HiddenDevice::new(2, e(3, 1)).unwrap();
        let budget = TomographyBudget { shots: 1_000_000, grid: 200, refine_steps: 10 };
        let mut z = Vec::new();
        for k in 0..30 {
            let Ok(est) = protocol_c1(&s, &dy, &dz, &random_preps(3, 300 + k), &budget, k) else {
                continue;
            };
            z.push((est.estimated_angle_rad - std::f64::consts::FRAC_PI_2) / est.error_bar);
        }
        let within = z.iter().filter(|v| v.abs() <= 3.0).count();
        assert!(z.len() >= 25 && within + 2 >= z.len(), "{z:?}");
    }

    #[test]
    fn relabeling_preparations_leaves_angle_unchanged() {
        let s = BallSpace::new(3, 0.8, 0.5).unwrap();
        let dy = HiddenDevice::new(1, e(3, 2)).unwrap();
        let dz = HiddenDevice::new(2, e(3, 1)).unwrap();
        let budget = TomographyBudget { shots: 100_000, grid: 100, refine_steps: 5 };
        let preps = random_preps(3, 8);
        let a = protocol_c1(&s, &dy, &dz, &preps, &budget, 4).unwrap();
        let mut rev = preps.clone();
        rev.reverse();
        let b = protocol_c1(&s, &dy, &dz, &rev, &budget, 4).unwrap();
        assert!((a.estimated_angle_rad - b.estimated_angle_rad).abs() < 1e-9);
    }

    #[test]
    fn dependent_preparations_fail() {
        let s = BallSpace::noiseless(3).unwrap();
        let dy = HiddenDevice::new(1, e(3, 0)).unwrap();
        let dz = HiddenDevice::new(2, e(3, 1)).unwrap();
        let v = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let preps = vec![
            Preparation::new(1, BallState::new(v.clone()).unwrap()),
            Preparation::new(2, BallState::new(-&v).unwrap()),
            Preparation::new(3, BallState::new(e(3, 2)).unwrap()),
        ];
        let budget = TomographyBudget { shots: 10_000_000, grid: 200, refine_steps: 10 };
        assert!(matches!(
            protocol_c1(&s, &dy, &dz, &preps, &budget, 1),
            Err(Error::ProtocolFailure(_))
        ));
    }

    fn spin_setup(conj: Option<&DMatrix<f64>>) -> (DVector<f64>, Vec<DVector<f64>>, Vec<GroupSample>, Vec<DVector<f64>>) {
        let xs = crate::linalg::fibonacci_sphere(30);
        let mut unit = e(4, 0);
        let mut effects: Vec<DVector<f64>> = xs
            .iter()
            .map(|x| {
                let mut v = DVector::zeros(4);
                v[0] = 0.5;
                v.rows_mut(1, 3).copy_from(&(x * 0.5));
                v
            })
            .collect();
        let mut group: Vec<GroupSample> = (0..12)
            .map(|k| {
                let r = haar_sample(3, 200 + k).unwrap();
                let mut g = DMatrix::identity(4, 4);
                g.view_mut((1, 1), (3, 3)).copy_from(r.matrix());
                GroupSample { permutation: None, transform: g }
            })
            .collect();
        if let Some(t) = conj {
            let tinv = t.clone().try_inverse().unwrap();
            unit = tinv.transpose() * unit;
            effects = effects.into_iter().map(|f| tinv.transpose() * f).collect();
            group = group
                .into_iter()
                .map(|g| GroupSample { permutation: None, transform: t * g.transform * &tinv })
                .collect();
        }
        (unit, effects, group, xs)
    }

    #[test]
    fn coordinates_of_spin_effects_are_an_orthogonal_image() {
        let (unit, effects, group, xs) = spin_setup(None);
        let r = reconstruct_coordinates(&unit, &effects, &group, None, 1e-8).unwrap();
        assert!((r.offset - 0.5).abs() < 1e-12);
        // λ(x) = A x for one linear A; after the invariant form, A is a scaled isometry.
        let lam = DMatrix::from_columns(&r.coordinates);
        let xm = DMatrix::from_columns(&xs);
        let a = &lam * xm.clone().pseudo_inverse(1e-12).unwrap();
        assert!((&a * &xm - &lam).amax() < 1e-10);
        let g = a.transpose() * &r.invariant_form * &a;
        let scaled = &g / g[(0, 0)];
        assert!((scaled - DMatrix::<f64>::identity(3, 3)).amax() < 1e-8);
    }

    #[test]
    fn conjugated_representation_still_gives_constant_norms() {
        let mut rng = rng_from_seed(21);
        let mut t = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-0.5..0.5));
        for i in 0..4 {
            t[(i, i)] += 1.5;
        }
        let (unit, effects, group, _) = spin_setup(Some(&t));
        let r = reconstruct_coordinates(&unit, &effects, &group, None, 1e-8).unwrap();
        assert!(r.norm_spread < 1e-8);
    }

    #[test]
    fn repeated_effect_does_not_span() {
        let (unit, effects, group, _) = spin_setup(None);
        let same = vec![effects[0].clone(); 5];
        assert!(matches!(
            reconstruct_coordinates(&unit, &same, &group, None, 1e-8),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn permutations_are_checked_against_the_action() {
        // Quarter turn about the third axis permutes the four equatorial spin effects.
        let mut unit = DVector::zeros(4);
        unit[0] = 1.0;
        let dirs = [
            e(3, 0), e(3, 1), -e(3, 0), -e(3, 1), e(3, 2), -e(3, 2),
        ];
        let effects: Vec<DVector<f64>> = dirs
            .iter()
            .map(|x| {
                let mut v = DVector::zeros(4);
                v[0] = 0.5;
                v.rows_mut(1, 3).copy_from(&(x * 0.5));
                v
            })
            .collect();
        let quarter = |axis: (usize, usize)| {
            let r = crate::group::Rotation::planar(3, axis.0, axis.1, std::f64::consts::FRAC_PI_2).unwrap();
            let mut g = DMatrix::identity(4, 4);
            g.view_mut((1, 1), (3, 3)).copy_from(r.matrix());
            g
        };
        // E_x∘H' = E_{Rᵀx}: label map x ↦ Rᵀx.
        let g1 = GroupSample { permutation: Some(vec![3, 0, 1, 2, 4, 5]), transform: quarter((0, 1)) };
        let g2 = GroupSample { permutation: None, transform: quarter((1, 2)) };
        let r = reconstruct_coordinates(&unit, &effects, &[g1, g2], None, 1e-8).unwrap();
        assert!(r.covariance_defect < 1e-12);
        assert!(r.norm_spread < 1e-12);
    }
}
