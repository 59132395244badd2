//! The perturbed consensus system
//!
//! ```text
//! z_i(t+1) = z_i(t) + sum_{j != i} a_ijt (z_j(t) - z_i(t)) + e_i(t)
//! ```
//!
//! with `a_ijt` in `[delta, 1]`, `sum_j a_ijt <= 1` and `|e_i(t)| <= eps`, plus
//! checks for its two basic facts: every step stays inside the previous convex
//! hull fattened by `eps`, and once the diameter exceeds `10 eps / (n delta)`
//! it shrinks by at least a factor `1 - n delta / 20`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::diameter;
use crate::Scalar;

/// Absolute slack for the hull comparison.
pub const HULL_TOLERANCE: f64 = 1e-10;
/// Random directions used by the hull check, on top of the `2 s` axis directions.
pub const HULL_DIRECTIONS: usize = 64;
const HULL_SEED: u64 = 0x5eed_4011;
const COEFF_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DynState<T> {
    pub z: Array2<T>,
    pub t: usize,
}

impl<T: Scalar> DynState<T> {
    pub fn new(z: Array2<T>, t: usize) -> Result<Self> {
        if z.nrows() == 0 || z.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "state needs at least one point and one dimension, got {}x{}",
                z.nrows(),
                z.ncols()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite state coordinate".into()));
        }
        Ok(Self {
            z: z.as_standard_layout().into_owned(),
            t,
        })
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn diameter(&self) -> T {
        diameter(self.z.view())
    }

    /// The scalar system seen along direction `u`.
    pub fn project(&self, u: &[T]) -> Self {
        let p = Array1::from_iter(self.z.rows().into_iter().map(|r| r.iter().zip(u).map(|(&a, &b)| a * b).sum::<T>()));
        Self {
            z: p.insert_axis(Axis(1)),
            t: self.t,
        }
    }
}

/// `delta` and `eps` of a regime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeBounds<T> {
    pub delta: T,
    pub eps: T,
}

impl<T: Scalar> RegimeBounds<T> {
    pub fn new(delta: T, eps: T) -> Result<Self> {
        if !(delta > T::zero() && delta <= T::one()) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, 1], got {delta}"
            )));
        }
        if !(eps >= T::zero()) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!("eps must be >= 0, got {eps}")));
        }
        Ok(Self { delta, eps })
    }

    /// `10 eps / (n delta)`: above this diameter a step must contract.
    pub fn contraction_threshold(&self, n: usize) -> T {
        T::lit(10.0) * self.eps / (T::from_count(n) * self.delta)
    }

    /// `1 - n delta / 20`.
    pub fn contraction_factor(&self, n: usize) -> T {
        T::one() - T::from_count(n) * self.delta / T::lit(20.0)
    }
}

/// Coefficients `a_ij` (diagonal ignored) and perturbations `e_i` for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficients<T> {
    pub alpha: Array2<T>,
    pub eps: Array2<T>,
}

/// Produces the coefficients for the next step of a state.
pub trait CoefficientOracle<T: Scalar>: Send {
    fn coefficients(&mut self, state: &DynState<T>, bounds: RegimeBounds<T>) -> Coefficients<T>;
}

pub struct CoefficientRegime<T: Scalar> {
    bounds: RegimeBounds<T>,
    oracle: Box<dyn CoefficientOracle<T>>,
}

impl<T: Scalar> CoefficientRegime<T> {
    pub fn new(delta: T, eps: T, oracle: Box<dyn CoefficientOracle<T>>) -> Result<Self> {
        Ok(Self {
            bounds: RegimeBounds::new(delta, eps)?,
            oracle,
        })
    }

    /// Regime driven by [`UniformRandomOracle`].
    pub fn uniform_random(delta: T, eps: T, seed: u64) -> Result<Self> {
        Self::new(delta, eps, Box::new(UniformRandomOracle::new(seed)))
    }

    pub fn bounds(&self) -> RegimeBounds<T> {
        self.bounds
    }

    pub fn delta(&self) -> T {
        self.bounds.delta
    }

    pub fn eps(&self) -> T {
        self.bounds.eps
    }

    /// Asks the oracle for the next coefficients and validates them.
    pub fn produce(&mut self, state: &DynState<T>) -> Result<Coefficients<T>> {
        let c = self.oracle.coefficients(state, self.bounds);
        validate_coefficients(&c, state, self.bounds)?;
        Ok(c)
    }
}

impl<T: Scalar> std::fmt::Debug for CoefficientRegime<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientRegime")
            .field("delta", &self.bounds.delta)
            .field("eps", &self.bounds.eps)
            .finish_non_exhaustive()
    }
}

pub fn validate_coefficients<T: Scalar>(
    c: &Coefficients<T>,
    state: &DynState<T>,
    bounds: RegimeBounds<T>,
) -> Result<()> {
    let (n, s, t) = (state.n(), state.dim(), state.t);
    if c.alpha.dim() != (n, n) || c.eps.dim() != (n, s) {
        return Err(Error::DimensionMismatch(format!(
            "coefficients {:?} / perturbations {:?} for a state of {n} points in R^{s}",
            c.alpha.dim(),
            c.eps.dim()
        )));
    }
    let slack = T::lit(COEFF_TOLERANCE);
    for i in 0..n {
        let mut sum = T::zero();
        for j in 0..n {
            if i == j {
                continue;
            }
            let a = c.alpha[[i, j]];
            if !(a >= bounds.delta && a <= T::one()) {
                return Err(Error::RegimeViolation {
                    t,
                    detail: format!("coefficient a[{i},{j}] = {a} outside [{}, 1]", bounds.delta),
                });
            }
            sum += a;
        }
        if sum > T::one() + slack {
            return Err(Error::RegimeViolation {
                t,
                detail: format!("coefficients of point {i} sum to {sum} > 1"),
            });
        }
        let norm = c.eps.row(i).iter().map(|&v| v * v).sum::<T>().sqrt();
        if !(norm <= bounds.eps * (T::one() + slack)) {
            return Err(Error::RegimeViolation {
                t,
                detail: format!("perturbation of point {i} has norm {norm} > eps = {}", bounds.eps),
            });
        }
    }
    Ok(())
}

/// Applies already validated coefficients.
pub fn apply_coefficients<T: Scalar>(state: &DynState<T>, c: &Coefficients<T>) -> DynState<T> {
    let (n, s) = (state.n(), state.dim());
    let z = &state.z;
    let next = Array2::from_shape_fn((n, s), |(i, k)| {
        let zi = z[[i, k]];
        let mut pull = T::zero();
        for j in 0..n {
            if j != i {
                pull += c.alpha[[i, j]] * (z[[j, k]] - zi);
            }
        }
        zi + pull + c.eps[[i, k]]
    });
    DynState { z: next, t: state.t + 1 }
}

pub fn dynsys_step<T: Scalar>(state: &DynState<T>, regime: &mut CoefficientRegime<T>) -> Result<DynState<T>> {
    let c = regime.produce(state)?;
    Ok(apply_coefficients(state, &c))
}

#[derive(Clone, Debug, PartialEq)]
pub enum HullCheck<T> {
    Pass,
    /// `direction` is the unit vector with the largest support-function excess.
    Fail { direction: Vec<T>, excess: T },
}

impl<T> HullCheck<T> {
    pub fn passed(&self) -> bool {
        matches!(self, HullCheck::Pass)
    }
}

/// The fixed probe directions for dimension `s`: `2 s` signed axes followed by
/// [`HULL_DIRECTIONS`] seeded random unit vectors.
pub fn probe_directions<T: Scalar>(s: usize) -> Vec<Vec<T>> {
    let mut dirs = Vec::with_capacity(2 * s + HULL_DIRECTIONS);
    for k in 0..s {
        for sign in [1.0, -1.0] {
            let mut u = vec![T::zero(); s];
            u[k] = T::lit(sign);
            dirs.push(u);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(HULL_SEED ^ s as u64);
    while dirs.len() < 2 * s + HULL_DIRECTIONS {
        let v: Vec<f64> = (0..s).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            dirs.push(v.iter().map(|x| T::lit(x / norm)).collect());
        }
    }
    dirs
}

fn support<T: Scalar>(z: ArrayView2<'_, T>, u: &[T]) -> T {
    z.rows()
        .into_iter()
        .map(|r| r.iter().zip(u).map(|(&a, &b)| a * b).sum::<T>())
        .fold(T::neg_infinity(), T::max)
}

/// Checks `conv(after) ⊆ conv(before) + B(0, eps)` along the probe directions.
pub fn hull_stability_check<T: Scalar>(before: &DynState<T>, after: &DynState<T>, eps: T) -> HullCheck<T> {
    assert_eq!(before.z.dim(), after.z.dim(), "hull check on states of different shape");
    let tol = T::lit(HULL_TOLERANCE);
    let mut worst: Option<(Vec<T>, T)> = None;
    for u in probe_directions::<T>(before.dim()) {
        let excess = support(after.z.view(), &u) - support(before.z.view(), &u) - eps;
        if excess > tol && worst.as_ref().is_none_or(|(_, w)| excess > *w) {
            worst = Some((u, excess));
        }
    }
    match worst {
        None => HullCheck::Pass,
        Some((direction, excess)) => HullCheck::Fail { direction, excess },
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ContractionCheck<T> {
    /// The diameter was below the trigger `10 eps / (n delta)`.
    NotApplicable { diameter: T, threshold: T },
    /// `ratio = diam(after) / diam(before)` (0 when both vanish).
    Contracted { ratio: T },
    Violation { before: T, after: T },
}

impl<T> ContractionCheck<T> {
    pub fn is_violation(&self) -> bool {
        matches!(self, ContractionCheck::Violation { .. })
    }
}

pub fn contraction_check<T: Scalar>(
    before: &DynState<T>,
    after: &DynState<T>,
    bounds: RegimeBounds<T>,
) -> ContractionCheck<T> {
    let n = before.n();
    let (d0, d1) = (before.diameter(), after.diameter());
    let threshold = bounds.contraction_threshold(n);
    if d0 < threshold {
        return ContractionCheck::NotApplicable { diameter: d0, threshold };
    }
    // Once points agree to working precision their differences are pure
    // rounding, which no factor can shrink.
    let scale = before.z.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let rounding = T::lit(64.0) * T::epsilon() * scale;
    let allowed = bounds.contraction_factor(n) * d0 * (T::one() + T::lit(COEFF_TOLERANCE)) + rounding;
    if d1 <= allowed {
        let ratio = if d0 > T::zero() { d1 / d0 } else { T::zero() };
        ContractionCheck::Contracted { ratio }
    } else {
        ContractionCheck::Violation { before: d0, after: d1 }
    }
}

/// Both checks along each direction in `dirs`; returns the number of failures.
pub fn projected_violations<T: Scalar>(
    before: &DynState<T>,
    after: &DynState<T>,
    bounds: RegimeBounds<T>,
    dirs: &[Vec<T>],
) -> usize {
    dirs.iter()
        .map(|u| {
            let (b, a) = (before.project(u), after.project(u));
            usize::from(!hull_stability_check(&b, &a, bounds.eps).passed())
                + usize::from(contraction_check(&b, &a, bounds).is_violation())
        })
        .sum()
}

#[derive(Clone, Debug)]
pub struct DynTrajectory<T> {
    /// `steps + 1` states, starting with `z0`.
    pub states: Vec<DynState<T>>,
    pub diameters: Vec<T>,
    /// One entry per step.
    pub hull: Vec<HullCheck<T>>,
    pub contraction: Vec<ContractionCheck<T>>,
}

impl<T: Scalar> DynTrajectory<T> {
    pub fn final_state(&self) -> &DynState<T> {
        self.states.last().expect("trajectory holds z0")
    }

    pub fn violations(&self) -> usize {
        self.hull.iter().filter(|h| !h.passed()).count()
            + self.contraction.iter().filter(|c| c.is_violation()).count()
    }
}

pub fn run_dynsys<T: Scalar>(
    z0: &DynState<T>,
    regime: &mut CoefficientRegime<T>,
    steps: usize,
) -> Result<DynTrajectory<T>> {
    let mut traj = DynTrajectory {
        states: vec![z0.clone()],
        diameters: vec![z0.diameter()],
        hull: Vec::with_capacity(steps),
        contraction: Vec::with_capacity(steps),
    };
    for _ in 0..steps {
        let before = traj.states.last().expect("nonempty");
        let after = dynsys_step(before, regime)?;
        traj.hull.push(hull_stability_check(before, &after, regime.eps()));
        traj.contraction.push(contraction_check(before, &after, regime.bounds()));
        traj.diameters.push(after.diameter());
        traj.states.push(after);
    }
    Ok(traj)
}

/// Off-diagonal coefficients i.i.d. uniform on `[delta, min(upper, 1/n)]` and
/// perturbations uniform on the `eps`-ball.
///
/// The `1/n` cap keeps every row sum below `1 - 1/n`. Coefficients allowed up
/// to 1 can overshoot: two points with `a_12 = a_21 = 1` swap places and the
/// diameter never shrinks. If `delta > 1/n` the oracle emits `delta` everywhere.
pub struct UniformRandomOracle {
    rng: ChaCha8Rng,
    upper: f64,
}

impl UniformRandomOracle {
    pub fn new(seed: u64) -> Self {
        Self::with_upper(seed, 1.0)
    }

    pub fn with_upper(seed: u64, upper: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            upper,
        }
    }
}

impl<T: Scalar> CoefficientOracle<T> for UniformRandomOracle {
    fn coefficients(&mut self, state: &DynState<T>, bounds: RegimeBounds<T>) -> Coefficients<T> {
        let (n, s) = (state.n(), state.dim());
        let lo = bounds.delta.as_f64();
        let hi = self.upper.min(1.0 / n as f64).max(lo);
        let rng = &mut self.rng;
        let alpha = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                T::zero()
            } else {
                T::lit(rng.random_range(lo..=hi))
            }
        });
        let eps = bounds.eps.as_f64();
        let mut e = Array2::zeros((n, s));
        for mut row in e.rows_mut() {
            let v: Vec<f64> = (0..s).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let u: f64 = rng.random();
            // The ball radius, shrunk by a hair so the f64 -> T rounding stays legal.
            let r = eps * u.powf(1.0 / s as f64) * (1.0 - 1e-9);
            if norm > 0.0 {
                for (dst, x) in row.iter_mut().zip(&v) {
                    *dst = T::lit(r * x / norm);
                }
            }
        }
        Coefficients { alpha, eps: e }
    }
}

/// Replays the same coefficients every step.
pub struct ConstantOracle<T>(pub Coefficients<T>);

impl<T: Scalar> CoefficientOracle<T> for ConstantOracle<T> {
    fn coefficients(&mut self, _state: &DynState<T>, _bounds: RegimeBounds<T>) -> Coefficients<T> {
        self.0.clone()
    }
}

/// One line of a randomized trial report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub n: usize,
    pub s: usize,
    pub delta: f64,
    pub eps: f64,
    pub steps: usize,
    /// Hull failures plus contraction violations.
    pub violations: usize,
    pub hull_failures: usize,
    /// Full-dimension and projected.
    pub contraction_violations: usize,
    /// Steps on which the contraction trigger fired.
    pub contraction_steps: usize,
    pub final_diameter: f64,
}

impl TrialRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain record serializes")
    }
}

/// Ranges the randomized trials draw from.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialPlan {
    pub trials: usize,
    pub steps: usize,
    pub n_range: (usize, usize),
    pub dims: Vec<usize>,
    pub max_eps: f64,
    pub seed: u64,
}

impl Default for TrialPlan {
    fn default() -> Self {
        Self {
            trials: 1000,
            steps: 1,
            n_range: (2, 50),
            dims: vec![1, 2, 3],
            max_eps: 0.1,
            seed: 0,
        }
    }
}

/// Runs independent random trials in parallel. Each trial draws `n`, `s`,
/// `delta` in `(0, 1/n]`, `eps` (zero for a quarter of the trials) and a
/// start in `[-1, 1]^s` from its own seeded stream, then counts hull and contraction
/// violations in full dimension and along every probe direction.
pub fn run_trials(plan: &TrialPlan) -> Result<Vec<TrialRecord>> {
    if plan.n_range.0 < 2 || plan.n_range.0 > plan.n_range.1 || plan.dims.is_empty() || plan.dims.contains(&0) {
        return Err(Error::InvalidParameter(format!("invalid trial plan {plan:?}")));
    }
    (0..plan.trials)
        .into_par_iter()
        .map(|trial| run_trial(plan, trial))
        .collect()
}

fn run_trial(plan: &TrialPlan, trial: usize) -> Result<TrialRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(trial as u64 + 1);
    let n = rng.random_range(plan.n_range.0..=plan.n_range.1);
    let s = plan.dims[rng.random_range(0..plan.dims.len())];
    let delta = rng.random_range(0.01..=1.0) / n as f64;
    let eps = if rng.random_range(0..4) == 0 {
        0.0
    } else {
        rng.random_range(0.0..=plan.max_eps)
    };
    // Spread the start over several orders of magnitude so both sides of the
    // contraction trigger are exercised.
    let scale = 10f64.powf(rng.random_range(-3.0..=1.0));
    let z0 = Array2::from_shape_simple_fn((n, s), || scale * rng.random_range(-1.0..=1.0));
    let mut regime = CoefficientRegime::uniform_random(delta, eps, rng.random())?;
    let traj = run_dynsys(&DynState::new(z0, 0)?, &mut regime, plan.steps)?;
    let dirs = probe_directions::<f64>(s);
    let projected: usize = traj
        .states
        .windows(2)
        .map(|w| projected_violations(&w[0], &w[1], regime.bounds(), &dirs))
        .sum();
    Ok(TrialRecord {
        trial,
        n,
        s,
        delta,
        eps,
        steps: plan.steps,
        violations: traj.violations() + projected,
        hull_failures: traj.hull.iter().filter(|h| !h.passed()).count(),
        contraction_violations: traj.contraction.iter().filter(|c| c.is_violation()).count() + projected,
        contraction_steps: traj
            .contraction
            .iter()
            .filter(|c| !matches!(c, ContractionCheck::NotApplicable { .. }))
            .count(),
        final_diameter: traj.final_state().diameter(),
    })
}

/// `n` points evenly spaced on the unit circle.
pub fn unit_circle<T: Scalar>(n: usize) -> Array2<T> {
    Array2::from_shape_fn((n, 2), |(i, k)| {
        let a = std::f64::consts::TAU * i as f64 / n as f64;
        T::lit(if k == 0 { a.cos() } else { a.sin() })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::{prop_assert_eq, prop_oneof, proptest, any, Just, ProptestConfig};

    fn state(z: Array2<f64>) -> DynState<f64> {
        DynState::new(z, 0).unwrap()
    }

    fn constant(alpha: Array2<f64>, eps: Array2<f64>, delta: f64, e: f64) -> CoefficientRegime<f64> {
        CoefficientRegime::new(delta, e, Box::new(ConstantOracle(Coefficients { alpha, eps }))).unwrap()
    }

    fn random_state(n: usize, s: usize, scale: f64, seed: u64) -> DynState<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        state(Array2::from_shape_simple_fn((n, s), || scale * rng.random_range(-1.0..=1.0)))
    }

    fn midpoint_regime() -> CoefficientRegime<f64> {
        constant(array![[0.0, 0.5], [0.5, 0.0]], Array2::zeros((2, 1)), 0.5, 0.0)
    }

    #[test]
    fn two_points_meet_in_the_middle() {
        let z0 = state(array![[0.0], [1.0]]);
        let z1 = dynsys_step(&z0, &mut midpoint_regime()).unwrap();
        assert_eq!(z1.z, array![[0.5], [0.5]]);
        assert_eq!(z1.t, 1);
        assert_eq!(z1.diameter(), 0.0);
        let bounds = RegimeBounds::new(0.5, 0.0).unwrap();
        assert_eq!(bounds.contraction_factor(2), 0.95);
        assert_eq!(contraction_check(&z0, &z1, bounds), ContractionCheck::Contracted { ratio: 0.0 });
    }

    #[test]
    fn tiny_coefficients_nearly_translate() {
        let n = 5;
        let delta = 1e-9;
        let v = [0.03, -0.04];
        let eps_norm = 0.05;
        let alpha = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { delta });
        let e = Array2::from_shape_fn((n, 2), |(_, k)| v[k]);
        let z0 = state(unit_circle(n));
        let z1 = dynsys_step(&z0, &mut constant(alpha, e, delta, eps_norm)).unwrap();
        for i in 0..n {
            let off = (0..2).map(|k| (z1.z[[i, k]] - z0.z[[i, k]] - v[k]).powi(2)).sum::<f64>().sqrt();
            assert!(off < 1e-8, "point {i} strays {off} from a pure translation");
        }
    }

    #[test]
    fn illegal_coefficients_are_rejected() {
        let z0 = state(array![[0.0], [1.0], [3.0]]);
        let small = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 0.0 } else { 0.1 });
        let mut r = constant(small.clone(), Array2::zeros((3, 1)), 0.2, 0.0);
        assert!(matches!(dynsys_step(&z0, &mut r), Err(Error::RegimeViolation { t: 0, .. })));

        let big = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 0.0 } else { 0.6 });
        let mut r = constant(big, Array2::zeros((3, 1)), 0.1, 0.0);
        assert!(matches!(dynsys_step(&z0, &mut r), Err(Error::RegimeViolation { .. })));

        let mut r = constant(small, Array2::from_elem((3, 1), 0.5), 0.1, 0.1);
        assert!(matches!(dynsys_step(&z0, &mut r), Err(Error::RegimeViolation { .. })));

        assert!(RegimeBounds::new(0.0, 0.1).is_err());
        assert!(RegimeBounds::new(0.1, -1.0).is_err());
    }

    #[test]
    fn unchanged_state_passes_hull_check() {
        let z = state(unit_circle(7));
        for eps in [0.0, 0.3] {
            assert_eq!(hull_stability_check(&z, &z, eps), HullCheck::Pass);
        }
    }

    #[test]
    fn translation_by_twice_eps_is_caught() {
        let eps = 0.01;
        let dir = [0.6, 0.8];
        let z0 = state(unit_circle(9));
        let z1 = state(z0.z.clone() + &array![[2.0 * eps * dir[0], 2.0 * eps * dir[1]]]);
        match hull_stability_check(&z0, &z1, eps) {
            HullCheck::Fail { direction, excess } => {
                let cos = direction[0] * dir[0] + direction[1] * dir[1];
                assert!(cos > 0.99, "witness {direction:?} far from the shift");
                assert!((excess - eps).abs() < 1e-3 * eps + 1e-12 || excess < eps);
                assert!(excess > 0.9 * eps);
            }
            HullCheck::Pass => panic!("shifted state passed"),
        }
    }

    #[test]
    fn full_weight_pair_swaps_without_contracting() {
        let z0 = state(array![[0.0], [1.0]]);
        let mut r = constant(array![[0.0, 1.0], [1.0, 0.0]], Array2::zeros((2, 1)), 1.0, 0.0);
        let z1 = dynsys_step(&z0, &mut r).unwrap();
        assert_eq!(z1.z, array![[1.0], [0.0]]);
        assert_eq!(
            contraction_check(&z0, &z1, r.bounds()),
            ContractionCheck::Violation { before: 1.0, after: 1.0 }
        );
        assert!(hull_stability_check(&z0, &z1, 0.0).passed());
    }

    #[test]
    fn small_state_is_not_applicable() {
        let bounds = RegimeBounds::new(0.1, 0.1).unwrap();
        let z = state(array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]]);
        assert!(matches!(contraction_check(&z, &z, bounds), ContractionCheck::NotApplicable { .. }));
        let big = state(array![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]]);
        assert!(contraction_check(&big, &big, bounds).is_violation());
    }

    #[test]
    fn zero_steps_is_just_the_start() {
        let z0 = state(unit_circle(4));
        let traj = run_dynsys(&z0, &mut CoefficientRegime::uniform_random(0.1, 0.0, 1).unwrap(), 0).unwrap();
        assert_eq!(traj.states.len(), 1);
        assert_eq!(traj.diameters.len(), 1);
        assert!(traj.hull.is_empty());
    }

    #[test]
    fn noiseless_run_contracts_every_step() {
        let n = 12;
        let delta = 0.02;
        let bounds = RegimeBounds::new(delta, 0.0).unwrap();
        let z0 = state(unit_circle(n));
        let mut regime = CoefficientRegime::uniform_random(delta, 0.0, 3).unwrap();
        let traj = run_dynsys(&z0, &mut regime, 200).unwrap();
        let factor = bounds.contraction_factor(n);
        for t in 1..traj.diameters.len() {
            let (d0, d1) = (traj.diameters[t - 1], traj.diameters[t]);
            assert!(d1 <= d0 + 1e-15);
            assert!(d1 <= factor.powi(t as i32) * traj.diameters[0] * (1.0 + 1e-9) + 1e-15);
        }
        assert_eq!(traj.violations(), 0);
    }

    #[test]
    fn twelve_points_on_a_circle_settle_at_the_noise_scale() {
        let n = 12;
        let (delta, eps) = (0.02, 0.001);
        let mut regime = CoefficientRegime::uniform_random(delta, eps, 7).unwrap();
        let traj = run_dynsys(&state(unit_circle(n)), &mut regime, 200).unwrap();
        let scale = regime.bounds().contraction_threshold(n);
        assert!(traj.final_state().diameter() <= 2.0 * scale);
        let plateau = traj.diameters.iter().position(|&d| d <= scale).expect("reaches the plateau");
        assert!(traj.diameters[plateau..].iter().all(|&d| d <= scale + 2.0 * eps));
        assert_eq!(traj.violations(), 0);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = |seed| {
            let mut regime = CoefficientRegime::uniform_random(0.01, 0.05, seed).unwrap();
            run_dynsys(&state(unit_circle(10)), &mut regime, 30).unwrap()
        };
        let (a, b) = (run(11), run(11));
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!(x.z.iter().zip(&y.z).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
        assert_ne!(run(12).final_state(), a.final_state());
    }

    #[test]
    fn trials_report_no_violations() {
        let plan = TrialPlan {
            trials: 200,
            steps: 3,
            ..TrialPlan::default()
        };
        let records = run_trials(&plan).unwrap();
        assert_eq!(records.len(), 200);
        assert!(records.iter().all(|r| r.violations == 0));
        assert!(records.iter().any(|r| r.contraction_steps > 0));
        let line = records[0].to_json_line();
        assert!(line.starts_with("{\"trial\":0,"));
        assert_eq!(run_trials(&plan).unwrap(), records);
    }

    #[test]
    fn probe_directions_are_unit_and_fixed() {
        for s in 1..=3 {
            let dirs = probe_directions::<f64>(s);
            assert_eq!(dirs.len(), 2 * s + HULL_DIRECTIONS);
            for u in &dirs {
                assert!((u.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            }
            assert_eq!(dirs, probe_directions::<f64>(s));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn legal_steps_keep_hull_and_contract(
            n in 2usize..=50,
            s in 1usize..=3,
            delta_frac in 0.01f64..=1.0,
            eps in prop_oneof![Just(0.0), 0.0f64..0.5],
            scale in 1e-3f64..10.0,
            seed in any::<u64>(),
        ) {
            let delta = delta_frac / n as f64;
            let z0 = random_state(n, s, scale, seed);
            let mut regime = CoefficientRegime::uniform_random(delta, eps, seed ^ 0xabcd).unwrap();
            let traj = run_dynsys(&z0, &mut regime, 2).unwrap();
            prop_assert_eq!(traj.violations(), 0);
            let dirs = probe_directions::<f64>(s);
            for w in traj.states.windows(2) {
                prop_assert_eq!(projected_violations(&w[0], &w[1], regime.bounds(), &dirs), 0);
            }
        }
    }
}
