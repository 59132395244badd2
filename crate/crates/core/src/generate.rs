//! Seeded synthetic datasets: a line and a swiss roll in `R^3`, a mixture of
//! narrow Gaussians, and points on the unit circle.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::affinity::Dataset;
use crate::error::{Error, Result};
use crate::Scalar;

/// Roll height for [`GeneratorKind::SwissRoll`].
pub const SWISS_ROLL_HEIGHT: f64 = 21.0;
/// Parameter bins used as coarse labels for the manifold generators.
pub const MANIFOLD_BINS: usize = 10;
const LINE_LENGTH: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Points on a segment of length 10 along `(1, 2, 3)` through `(1, -1, 0.5)`.
    Line3d,
    /// `(u cos u, v, u sin u)` with `u` in `[1.5 pi, 1.5 pi + 2 pi turns]` and
    /// `v` uniform on `[0, 21]`, plus optional isotropic Gaussian noise.
    SwissRoll { turns: f64, noise: f64 },
    /// `k` balanced isotropic Gaussians in `R^dim` with standard deviation
    /// `sigma`, centered at `e_c * separation / sqrt 2` so every pair of centers
    /// is exactly `separation` apart.
    GaussianMixture {
        k: usize,
        dim: usize,
        sigma: f64,
        separation: f64,
    },
    /// Evenly spaced points on the unit circle in `R^2`.
    Circle,
}

impl GeneratorKind {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorKind::Line3d => "line3d",
            GeneratorKind::SwissRoll { .. } => "swiss_roll",
            GeneratorKind::GaussianMixture { .. } => "gaussian_mixture",
            GeneratorKind::Circle => "circle",
        }
    }

    /// The standard roll, `u` in `[1.5 pi, 4.5 pi]`.
    pub fn swiss_roll() -> Self {
        GeneratorKind::SwissRoll { turns: 1.5, noise: 0.0 }
    }

    /// `k` Gaussians in `R^dim` with unit deviation, 20 deviations apart.
    pub fn mixture(k: usize, dim: usize) -> Self {
        GeneratorKind::GaussianMixture {
            k,
            dim,
            sigma: 1.0,
            separation: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    pub n: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, n: usize, seed: u64) -> Self {
        Self { kind, n, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidSpec(format!("need n >= 2, got {}", self.n)));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{name} must be positive, got {v}")))
            }
        };
        match self.kind {
            GeneratorKind::SwissRoll { turns, noise } => {
                positive("turns", turns)?;
                if !(noise >= 0.0 && noise.is_finite()) {
                    return Err(Error::InvalidSpec(format!("noise must be >= 0, got {noise}")));
                }
            }
            GeneratorKind::GaussianMixture { k, dim, sigma, separation } => {
                if k == 0 || k > self.n {
                    return Err(Error::InvalidSpec(format!("need 1 <= k <= n, got k = {k}")));
                }
                if dim < k {
                    return Err(Error::InvalidSpec(format!(
                        "centers on coordinate axes need dim >= k, got dim = {dim}, k = {k}"
                    )));
                }
                positive("sigma", sigma)?;
                positive("separation", separation)?;
            }
            GeneratorKind::Line3d | GeneratorKind::Circle => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated<T> {
    pub dataset: Dataset<T>,
    /// Cluster labels for mixtures, parameter bins for the manifolds.
    pub labels: Vec<i64>,
    /// Position along the manifold, increasing with the point index; `None` for mixtures.
    pub parameter: Option<Vec<f64>>,
    /// One-line account of how the data was drawn.
    pub description: String,
}

pub fn generate<T: Scalar>(spec: &GeneratorSpec) -> Result<Generated<T>> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (rows, labels, parameter, description): (Vec<Vec<f64>>, Vec<i64>, Option<Vec<f64>>, String) = match spec.kind {
        GeneratorKind::Line3d => {
            let t = sorted_uniform(&mut rng, n, 0.0, LINE_LENGTH);
            let norm = 14f64.sqrt();
            let rows = t
                .iter()
                .map(|&s| vec![1.0 + s / norm, -1.0 + 2.0 * s / norm, 0.5 + 3.0 * s / norm])
                .collect();
            let labels = bins(&t, 0.0, LINE_LENGTH);
            (rows, labels, Some(t), format!("line3d: {n} points, length {LINE_LENGTH}, seed {}", spec.seed))
        }
        GeneratorKind::SwissRoll { turns, noise } => {
            let lo = 1.5 * std::f64::consts::PI;
            let hi = lo + std::f64::consts::TAU * turns;
            let u = sorted_uniform(&mut rng, n, lo, hi);
            let rows = u
                .iter()
                .map(|&s| {
                    let v = rng.random_range(0.0..=SWISS_ROLL_HEIGHT);
                    let mut r = vec![s * s.cos(), v, s * s.sin()];
                    if noise > 0.0 {
                        for x in &mut r {
                            *x += noise * rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                    r
                })
                .collect();
            let labels = bins(&u, lo, hi);
            let d = format!(
                "swiss_roll: {n} points, u in [{lo:.6}, {hi:.6}] ({turns} turns), height {SWISS_ROLL_HEIGHT}, noise {noise}, seed {}",
                spec.seed
            );
            (rows, labels, Some(u), d)
        }
        GeneratorKind::GaussianMixture { k, dim, sigma, separation } => {
            let offset = separation / std::f64::consts::SQRT_2;
            let (base, extra) = (n / k, n % k);
            let mut rows = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for c in 0..k {
                for _ in 0..base + usize::from(c < extra) {
                    let mut x: Vec<f64> = (0..dim).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
                    x[c] += offset;
                    rows.push(x);
                    labels.push(c as i64);
                }
            }
            let d = format!(
                "gaussian_mixture: {n} points, k = {k}, dim = {dim}, sigma = {sigma}, center separation = {separation} ({} sigma), seed {}",
                separation / sigma,
                spec.seed
            );
            (rows, labels, None, d)
        }
        GeneratorKind::Circle => {
            let a: Vec<f64> = (0..n).map(|i| std::f64::consts::TAU * i as f64 / n as f64).collect();
            let rows = a.iter().map(|&t| vec![t.cos(), t.sin()]).collect();
            let labels = bins(&a, 0.0, std::f64::consts::TAU);
            (rows, labels, Some(a), format!("circle: {n} points on the unit circle"))
        }
    };
    let d = rows[0].len();
    let flat: Vec<T> = rows.into_iter().flatten().map(T::lit).collect();
    let x = Array2::from_shape_vec((n, d), flat).expect("rows have equal length");
    Ok(Generated {
        dataset: Dataset::new(x)?,
        labels,
        parameter,
        description,
    })
}

/// A Gaussian mixture whose perplexity-calibrated affinities satisfy the
/// within-cluster margin `p_ij >= 1 / (10 n |C|)`, halving `sigma` up to
/// `max_halvings` times until they do. Returns the data and the `sigma` used.
///
/// Far from the other clusters the calibrated within-cluster affinities do not
/// depend on `sigma` at all, so halving only helps while clusters still
/// overlap; past that the error reports the margin the search settled at.
pub fn clustered_mixture<T: Scalar>(
    spec: &GeneratorSpec,
    perplexity: f64,
    max_halvings: usize,
) -> Result<(Generated<T>, f64)> {
    let GeneratorKind::GaussianMixture { k, dim, sigma, separation } = spec.kind else {
        return Err(Error::InvalidSpec(format!("{} is not a mixture", spec.kind.name())));
    };
    let mut s = sigma;
    let mut margin = f64::NAN;
    for _ in 0..=max_halvings {
        let trial = GeneratorSpec::new(GeneratorKind::GaussianMixture { k, dim, sigma: s, separation }, spec.n, spec.seed);
        let mut g = generate::<T>(&trial)?;
        let p = crate::affinity::affinities_from_data(&g.dataset, T::lit(perplexity))?;
        let pi = crate::diagnostics::ClusterAssignment::from_labels(&g.labels)?;
        let margins = crate::diagnostics::check_assumption1(&p, &pi)?;
        margin = margins.iter().map(|m| m.min_margin.as_f64()).fold(f64::INFINITY, f64::min);
        if margins.iter().all(|m| m.pass) {
            g.description.push_str(&format!("; sigma chosen for the clustering margin at perplexity {perplexity}: {s}"));
            return Ok((g, s));
        }
        s /= 2.0;
    }
    Err(Error::InvalidSpec(format!(
        "no sigma down to {} gives within-cluster margins >= 1 at perplexity {perplexity} (smallest margin {margin:.4e})",
        s * 2.0
    )))
}

fn sorted_uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn bins(t: &[f64], lo: f64, hi: f64) -> Vec<i64> {
    t.iter()
        .map(|&x| (((x - lo) / (hi - lo) * MANIFOLD_BINS as f64) as i64).clamp(0, MANIFOLD_BINS as i64 - 1))
        .collect()
}
