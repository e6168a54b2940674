//! Direction transmission: Alice encodes a direction into a ball state, Bob
//! measures many copies along known directions and decodes.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gpt::{l_functional, BallSpace, BallState};
use crate::group::{stabilizer_average, Rotation};
use crate::linalg::{
    angle_between, check_dim, check_unit, derive_seed, direction_set, orthonormal_complement,
    random_unit, rng_from_seed,
};

/// Decoded Bloch norms below this many standard errors carry no direction.
pub const DIRECTION_SIGNIFICANCE: f64 = 5.0;

type CustomMap = Arc<dyn Fn(&DVector<f64>) -> Result<BallState> + Send + Sync>;
type TwistMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// How Alice turns a physical direction into a state.
#[derive(Clone)]
pub enum EncodingKind {
    /// `λ·ω_x + (1−λ)·μ`.
    Canonical { lambda: f64 },
    /// Any continuous map supplied by the caller.
    Custom(CustomMap),
    /// d = 2 only: `ω̂ = λ·O·R_{θ(λ)}·x` with a purity-dependent rotation angle.
    Twisted2d { lambda: f64, theta: TwistMap },
}

impl fmt::Debug for EncodingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Canonical { lambda } => write!(f, "Canonical {{ lambda: {lambda} }}"),
            Self::Custom(_) => write!(f, "Custom(..)"),
            Self::Twisted2d { lambda, .. } => write!(f, "Twisted2d {{ lambda: {lambda}, .. }}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncodingScheme {
    kind: EncodingKind,
}

impl EncodingScheme {
    pub fn canonical(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::input(format!("canonical weight {lambda} not in (0,1]")));
        }
        Ok(Self {
            kind: EncodingKind::Canonical { lambda },
        })
    }

    pub fn custom<F>(map: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<BallState> + Send + Sync + 'static,
    {
        Self {
            kind: EncodingKind::Custom(Arc::new(map)),
        }
    }

    /// Twisted scheme; refused unless `space` is two-dimensional.
    pub fn twisted_2d<F>(space: &BallSpace, lambda: f64, theta: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if space.dim() != 2 {
            return Err(Error::input(format!(
                "purity-dependent twists exist only for d = 2 (got d = {})",
                space.dim()
            )));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::input(format!("twisted weight {lambda} not in (0,1]")));
        }
        Ok(Self {
            kind: EncodingKind::Twisted2d {
                lambda,
                theta: Arc::new(theta),
            },
        })
    }

    pub fn kind(&self) -> &EncodingKind {
        &self.kind
    }

    pub fn encode(&self, space: &BallSpace, x: &DVector<f64>) -> Result<BallState> {
        check_dim(x, space.dim(), "direction")?;
        check_unit(x, "direction")?;
        match &self.kind {
            EncodingKind::Canonical { lambda } => crate::gpt::codeword(space, x, *lambda),
            EncodingKind::Custom(map) => {
                let s = map(x)?;
                check_dim(s.bloch(), space.dim(), "encoded state")?;
                Ok(s)
            }
            EncodingKind::Twisted2d { lambda, theta } => {
                let r = Rotation::planar(2, 0, 1, theta(*lambda))?;
                BallState::new(space.bloch_direction(&r.apply(x)) * *lambda)
            }
        }
    }
}

/// Outcome counts of one measurement direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShotRecord {
    pub direction: DVector<f64>,
    pub trials: u64,
    pub successes: u64,
}

impl ShotRecord {
    pub fn new(direction: DVector<f64>, trials: u64, successes: u64) -> Result<Self> {
        if successes > trials {
            return Err(Error::input(format!(
                "successes {successes} exceed trials {trials}"
            )));
        }
        if trials == 0 {
            return Err(Error::input("a record needs at least one trial"));
        }
        check_unit(&direction, "measurement direction")?;
        Ok(Self {
            direction,
            trials,
            successes,
        })
    }

    pub fn frequency(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// Samples `Binomial(shots, 𝓜_y(ω))` for every direction. Record `i` depends
/// only on `(seed, i)`, so the output is independent of the thread count.
pub fn simulate_shots(
    space: &BallSpace,
    state: &BallState,
    directions: &[DVector<f64>],
    shots_per_direction: u64,
    seed: u64,
) -> Result<Vec<ShotRecord>> {
    if shots_per_direction == 0 {
        return Err(Error::input("shots per direction must be at least 1"));
    }
    check_dim(state.bloch(), space.dim(), "state")?;
    directions
        .par_iter()
        .enumerate()
        .map(|(i, y)| {
            let p = crate::gpt::spin_effect(space, y, state)?.clamp(0.0, 1.0);
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let dist = Binomial::new(shots_per_direction, p)
                .map_err(|e| Error::Numerical(format!("binomial: {e}")))?;
            Ok(ShotRecord {
                direction: y.clone(),
                trials: shots_per_direction,
                successes: dist.sample(&mut rng),
            })
        })
        .collect()
}

/// Bob's guess.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeResult {
    /// Unit physical direction from the least-squares decoder.
    pub estimate: DVector<f64>,
    /// Fitted Bloch vector ω̂.
    pub bloch_estimate: DVector<f64>,
    pub bloch_norm_std_error: f64,
    /// Standard error of the direction, in radians.
    pub angular_std_error: f64,
    /// Argmax of the interpolated contrast `L̂_z`.
    pub secondary_estimate: DVector<f64>,
    /// The two decoders agree within five angular standard errors.
    pub decoders_agree: bool,
    pub shots_used: u64,
    /// Whether an angular error bar was estimated (false for exact probabilities).
    pub angular_error_available: bool,
}

/// Probability estimate along one direction with its sampling variance.
#[derive(Debug, Clone)]
struct Observation {
    direction: DVector<f64>,
    p: f64,
    trials: f64,
}

fn canonical_order(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

fn validate_records(space: &BallSpace, records: &[ShotRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::input("no shot records"));
    }
    for r in records {
        check_dim(&r.direction, space.dim(), "record direction")?;
        check_unit(&r.direction, "record direction")?;
        if r.trials == 0 || r.successes > r.trials {
            return Err(Error::input("record counts inconsistent"));
        }
    }
    Ok(())
}

/// Least-squares fit of ω̂ from `p_y = c + (a/2)⟨O·y, ω̂⟩` with sandwich
/// covariance (per-record variance from the fitted probabilities).
fn fit_bloch(space: &BallSpace, obs: &[Observation]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = space.dim();
    let half_a = space.visibility() / 2.0;
    let n = obs.len();
    let mut design = DMatrix::zeros(n, d);
    let mut rhs = DVector::zeros(n);
    for (i, o) in obs.iter().enumerate() {
        let w = o.trials.sqrt();
        let row = space.bloch_direction(&o.direction) * (half_a * w);
        design.row_mut(i).copy_from(&row.transpose());
        rhs[i] = (o.p - space.noise()) * w;
    }
    let normal = design.transpose() * &design;
    let (vals, _) = crate::linalg::sorted_eigen(&normal);
    if vals[d - 1] <= 1e-10 * vals[0].max(1e-300) {
        return Err(Error::input("measurement directions do not span the space"));
    }
    let inv = normal
        .try_inverse()
        .ok_or_else(|| Error::input("measurement directions do not span the space"))?;
    let fit = &inv * design.transpose() * &rhs;
    // Sandwich: Var(rhs_i) = trials·p(1−p)/trials = p(1−p).
    let mut meat = DMatrix::zeros(d, d);
    for (i, o) in obs.iter().enumerate() {
        let p = (space.noise() + half_a * space.bloch_direction(&o.direction).dot(&fit)).clamp(0.0, 1.0);
        let var = p * (1.0 - p);
        let row = design.row(i).transpose();
        meat += &row * row.transpose() * var;
    }
    let cov = &inv * meat * &inv;
    Ok((fit, cov))
}

/// Locally weighted linear fit of `p(y) ≈ β₀ + βᵀy` with weights
/// `exp(κ⟨z, y⟩)`, evaluated at `z`.
fn local_probability(obs: &[Observation], z: &DVector<f64>) -> f64 {
    const KAPPA: f64 = 2.0;
    let d = z.len();
    let mut normal = DMatrix::zeros(d + 1, d + 1);
    let mut rhs = DVector::zeros(d + 1);
    for o in obs {
        let w = (KAPPA * z.dot(&o.direction)).exp() * o.trials;
        let mut f = DVector::zeros(d + 1);
        f[0] = 1.0;
        f.rows_mut(1, d).copy_from(&o.direction);
        normal += &f * f.transpose() * w;
        rhs += f * (w * o.p);
    }
    let beta = crate::linalg::lstsq(&normal, &rhs).unwrap_or_else(|_| DVector::zeros(d + 1));
    beta[0] + beta.rows(1, d).dot(z)
}

fn contrast(obs: &[Observation], z: &DVector<f64>) -> f64 {
    local_probability(obs, z) - local_probability(obs, &(-z))
}

/// Argmax of the interpolated contrast over a grid, lowest index on ties,
/// followed by coordinate ascent in the tangent space with shrinking steps.
fn secondary_decoder(obs: &[Observation], d: usize) -> DVector<f64> {
    if d == 1 {
        let plus = DVector::from_element(1, 1.0);
        return if contrast(obs, &plus) >= 0.0 { plus } else { -plus };
    }
    let grid = direction_set(d, if d == 2 { 72 } else { 200 }, 0);
    let mut best = grid[0].clone();
    let mut best_val = contrast(obs, &best);
    for z in &grid[1..] {
        let v = contrast(obs, z);
        if v > best_val {
            best_val = v;
            best = z.clone();
        }
    }
    let mut step: f64 = 0.3;
    while step > 1e-9 {
        let mut improved = false;
        for t in orthonormal_complement(&best) {
            for s in [step, -step] {
                let cand = (&best * s.cos() + &t * s.sin()).normalize();
                let v = contrast(obs, &cand);
                if v > best_val {
                    best_val = v;
                    best = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

fn decode_observations(space: &BallSpace, mut obs: Vec<Observation>, shots: u64) -> Result<DecodeResult> {
    obs.sort_by(|a, b| {
        canonical_order(&a.direction, &b.direction)
            .then(a.trials.total_cmp(&b.trials))
            .then(a.p.total_cmp(&b.p))
    });
    let d = space.dim();
    let (bloch, cov) = fit_bloch(space, &obs)?;
    let norm = bloch.norm();
    if norm <= 1e-12 {
        return Err(Error::NoDirectionInformation(
            "fitted Bloch vector vanishes".into(),
        ));
    }
    let u = &bloch / norm;
    let norm_se = (u.transpose() * &cov * &u)[(0, 0)].max(0.0).sqrt();
    if norm < DIRECTION_SIGNIFICANCE * norm_se {
        return Err(Error::NoDirectionInformation(format!(
            "|ω̂| = {norm:.3e} is below {DIRECTION_SIGNIFICANCE} standard errors ({norm_se:.3e})"
        )));
    }
    let proj = DMatrix::identity(d, d) - &u * u.transpose();
    let ang_se = (proj.clone() * &cov * proj).trace().max(0.0).sqrt() / norm;
    let estimate = space.physical_direction(&u);
    let secondary = space.physical_direction(&space.bloch_direction(&secondary_decoder(&obs, d)));
    let disagreement = angle_between(&estimate, &secondary);
    Ok(DecodeResult {
        decoders_agree: disagreement <= DIRECTION_SIGNIFICANCE * ang_se + 1e-6,
        estimate,
        bloch_estimate: bloch,
        bloch_norm_std_error: norm_se,
        angular_std_error: ang_se,
        secondary_estimate: secondary,
        shots_used: shots,
        angular_error_available: ang_se > 0.0,
    })
}

/// Decodes shot records. The result does not depend on record order.
pub fn decode(space: &BallSpace, records: &[ShotRecord]) -> Result<DecodeResult> {
    validate_records(space, records)?;
    let obs = records
        .iter()
        .map(|r| Observation {
            direction: r.direction.clone(),
            p: r.frequency(),
            trials: r.trials as f64,
        })
        .collect();
    decode_observations(space, obs, records.iter().map(|r| r.trials).sum())
}

/// Decodes exact outcome probabilities (the infinite-shot limit).
pub fn decode_exact(
    space: &BallSpace,
    directions: &[DVector<f64>],
    probabilities: &[f64],
) -> Result<DecodeResult> {
    if directions.len() != probabilities.len() || directions.is_empty() {
        return Err(Error::input("need one probability per direction"));
    }
    for y in directions {
        check_dim(y, space.dim(), "direction")?;
        check_unit(y, "direction")?;
    }
    // Equal weights; the error model is irrelevant without sampling noise.
    let obs = directions
        .iter()
        .zip(probabilities)
        .map(|(y, &p)| Observation {
            direction: y.clone(),
            p,
            trials: 1.0,
        })
        .collect();
    decode_observations_exact(space, obs)
}

fn decode_observations_exact(space: &BallSpace, obs: Vec<Observation>) -> Result<DecodeResult> {
    let mut obs = obs;
    obs.sort_by(|a, b| canonical_order(&a.direction, &b.direction).then(a.p.total_cmp(&b.p)));
    let d = space.dim();
    let (bloch, _) = fit_bloch(space, &obs)?;
    let norm = bloch.norm();
    if norm <= 1e-12 {
        return Err(Error::NoDirectionInformation(
            "fitted Bloch vector vanishes".into(),
        ));
    }
    let estimate = space.physical_direction(&(&bloch / norm));
    let secondary = space.physical_direction(&space.bloch_direction(&secondary_decoder(&obs, d)));
    Ok(DecodeResult {
        decoders_agree: angle_between(&estimate, &secondary) <= 1e-6,
        estimate,
        bloch_estimate: bloch,
        bloch_norm_std_error: 0.0,
        angular_std_error: 0.0,
        secondary_estimate: secondary,
        shots_used: 0,
        angular_error_available: false,
    })
}

/// A codeword whose contrast `L_z` has its unique maximum at `direction`.
#[derive(Debug, Clone)]
pub struct StandardCodeword {
    pub state: BallState,
    pub direction: DVector<f64>,
    /// Monte Carlo standard error of the stabilizer averages (0 for d ≤ 3).
    pub std_error: f64,
}

/// Replaces `ω(x)` by a codeword of the standard form `λ·ω_y + (1−λ)·μ`.
///
/// The encoded state is first averaged over the rotations fixing `x` (an
/// encoding that sends no more than `x` must be invariant under them). The
/// direction `y` maximizing `L_y` is then taken, and the state is averaged
/// over the stabilizer of `y`. Fails if no direction has positive contrast.
pub fn standardize_codeword(
    space: &BallSpace,
    encoding: &EncodingScheme,
    x: &DVector<f64>,
    quadrature_size: usize,
    seed: u64,
) -> Result<StandardCodeword> {
    let d = space.dim();
    let raw = encoding.encode(space, x)?;
    let sym = stabilizer_average(space, &raw, x, quadrature_size, derive_seed(seed, 1))?;
    let bloch = sym.state.bloch();
    // L_y = a⟨O·y, ω̂⟩ is maximized over unit y at y = O⁻¹ω̂/|ω̂|.
    let tol = 1e-9_f64.max(DIRECTION_SIGNIFICANCE * sym.std_error);
    if space.visibility() * bloch.norm() <= tol {
        return Err(Error::EncodingViolation(
            "no direction has positive contrast; the encoding is too symmetric to carry a direction"
                .into(),
        ));
    }
    let y = space.physical_direction(&bloch.normalize());
    let avg = stabilizer_average(space, &sym.state, &y, quadrature_size, derive_seed(seed, 2))?;
    let peak = l_functional(space, &y, &avg.state)?;
    let grid = direction_set(d, if d <= 2 { 72 } else { 400 }, seed);
    for z in &grid {
        let gap = angle_between(z, &y);
        if gap > 1e-6 && l_functional(space, z, &avg.state)? >= peak {
            return Err(Error::Numerical(
                "standardized codeword lacks a unique contrast maximum".into(),
            ));
        }
    }
    Ok(StandardCodeword {
        state: avg.state,
        direction: y,
        std_error: sym.std_error.max(avg.std_error),
    })
}

fn untwist(space: &BallSpace, mut r: DecodeResult, theta: &dyn Fn(f64) -> f64) -> Result<DecodeResult> {
    if space.dim() != 2 {
        return Err(Error::input("twisted decoding is defined for d = 2 only"));
    }
    let purity = r.bloch_estimate.norm();
    let inv = Rotation::planar(2, 0, 1, -theta(purity))?;
    r.estimate = inv.apply(&r.estimate);
    r.secondary_estimate = inv.apply(&r.secondary_estimate);
    Ok(r)
}

/// Decodes a twisted d = 2 encoding: standard decoding, then the inverse of
/// the rotation selected by the fitted purity.
pub fn twisted_decode_2d<F>(space: &BallSpace, records: &[ShotRecord], theta: F) -> Result<DecodeResult>
where
    F: Fn(f64) -> f64,
{
    if space.dim() != 2 {
        return Err(Error::input("twisted decoding is defined for d = 2 only"));
    }
    untwist(space, decode(space, records)?, &theta)
}

/// Exact-probability variant of [`twisted_decode_2d`].
pub fn twisted_decode_2d_exact<F>(
    space: &BallSpace,
    directions: &[DVector<f64>],
    probabilities: &[f64],
    theta: F,
) -> Result<DecodeResult>
where
    F: Fn(f64) -> f64,
{
    if space.dim() != 2 {
        return Err(Error::input("twisted decoding is defined for d = 2 only"));
    }
    untwist(space, decode_exact(space, directions, probabilities)?, &theta)
}

/// Comparison of direct decoding with decoding after a frame rotation.
#[derive(Debug, Clone, Serialize)]
pub struct EquivarianceReport {
    pub direct: DVector<f64>,
    /// `R · decode(G_{R⁻¹} ω(x))`.
    pub rotated: DVector<f64>,
    pub discrepancy_rad: f64,
    /// Five combined angular standard errors.
    pub tolerance_rad: f64,
    pub within_tolerance: bool,
}

/// Decodes `ω(x)` directly and via `G_{R⁻¹}ω(x)` followed by `R`, and
/// compares the two guesses.
#[allow(clippy::too_many_arguments)]
pub fn equivariance_test(
    space: &BallSpace,
    encoding: &EncodingScheme,
    rotation: &Rotation,
    x: &DVector<f64>,
    directions: &[DVector<f64>],
    shots: u64,
    seed: u64,
) -> Result<EquivarianceReport> {
    let state = encoding.encode(space, x)?;
    let moved = rotation.inverse().act_on_state(space, &state);
    let direct = decode(space, &simulate_shots(space, &state, directions, shots, derive_seed(seed, 1))?)?;
    let turned = decode(space, &simulate_shots(space, &moved, directions, shots, derive_seed(seed, 2))?)?;
    let rotated = rotation.apply(&turned.estimate);
    let discrepancy = angle_between(&direct.estimate, &rotated);
    let tolerance = DIRECTION_SIGNIFICANCE
        * (direct.angular_std_error.powi(2) + turned.angular_std_error.powi(2)).sqrt();
    Ok(EquivarianceReport {
        direct: direct.estimate,
        rotated,
        discrepancy_rad: discrepancy,
        tolerance_rad: tolerance,
        within_tolerance: discrepancy <= tolerance + 1e-12,
    })
}

/// Parameters of a repeated transmission experiment.
#[derive(Debug, Clone, Serialize)]
pub struct TransmissionConfig {
    pub dim: usize,
    pub visibility: f64,
    pub noise: f64,
    pub lambda: f64,
    pub directions: usize,
    pub shots: u64,
    pub trials: usize,
    pub seed: u64,
}

/// Angular errors of independent transmissions of random directions.
#[derive(Debug, Clone, Serialize)]
pub struct TransmissionReport {
    pub errors_deg: Vec<f64>,
    pub median_error_deg: f64,
    /// Trials whose decoding found no direction information.
    pub undecodable: usize,
    pub decoders_agree: usize,
}

/// Trial `t` sends a Haar-random direction drawn from `(seed, t)`; results
/// are independent of the thread count.
pub fn run_transmission(cfg: &TransmissionConfig) -> Result<TransmissionReport> {
    let space = BallSpace::new(cfg.dim, cfg.visibility, cfg.noise)?;
    let encoding = EncodingScheme::canonical(cfg.lambda)?;
    if cfg.trials == 0 || cfg.directions == 0 {
        return Err(Error::input("trials and directions must be positive"));
    }
    let dirs = direction_set(cfg.dim, cfg.directions, cfg.seed);
    let outcomes: Vec<Result<(f64, bool)>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, 2 * t as u64));
            let x = random_unit(cfg.dim, &mut rng);
            let state = encoding.encode(&space, &x)?;
            let records = simulate_shots(&space, &state, &dirs, cfg.shots, derive_seed(cfg.seed, 2 * t as u64 + 1))?;
            let r = decode(&space, &records)?;
            Ok((angle_between(&r.estimate, &x).to_degrees(), r.decoders_agree))
        })
        .collect();
    let mut errors = Vec::with_capacity(cfg.trials);
    let mut undecodable = 0;
    let mut agree = 0;
    for o in outcomes {
        match o {
            Ok((e, a)) => {
                errors.push(e);
                agree += a as usize;
            }
            Err(Error::NoDirectionInformation(_)) => {
                undecodable += 1;
                errors.push(180.0);
            }
            Err(e) => return Err(e),
        }
    }
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(TransmissionReport {
        errors_deg: errors,
        median_error_deg: median,
        undecodable,
        decoders_agree: agree,
    })
}

/// Least-squares slope of `log(y)` against `log(x)`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// CSV table `dir_index,y_1..y_d,trials,successes`.
pub fn records_to_csv(records: &[ShotRecord]) -> String {
    let d = records.first().map_or(0, |r| r.direction.len());
    let mut out = String::from("dir_index");
    for k in 1..=d {
        out.push_str(&format!(",y_{k}"));
    }
    out.push_str(",trials,successes\n");
    for (i, r) in records.iter().enumerate() {
        out.push_str(&i.to_string());
        for v in r.direction.iter() {
            out.push_str(&format!(",{v:?}"));
        }
        out.push_str(&format!(",{},{}\n", r.trials, r.successes));
    }
    out
}
