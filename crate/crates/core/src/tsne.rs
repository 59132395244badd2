//! Embedding-space similarities, the KL objective and the early-exaggeration
//! gradient iteration.
//!
//! The step is plain gradient descent without momentum or gains:
//!
//! ```text
//! y_i <- y_i - h * g_i
//! g_i  = sum_j alpha p_ij (q_ij Z) (y_i - y_j) - sum_j q_ij^2 Z (y_i - y_j)
//! ```
//!
//! `g_i` is a quarter of the (exaggerated) KL gradient, so `h` here is the step
//! size of the `h/4 dC/dy` form.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::affinity::AffinityMatrix;
use crate::error::{Error, Result};
use crate::geometry::{bounding_diagonal, diameter, sq_dist};
use crate::Scalar;

/// Half-width of the initialization box `[-0.01, 0.01]^s`.
pub const INIT_HALF_WIDTH: f64 = 0.01;
/// Embeddings whose diameter exceeds this are treated as diverged.
pub const DIVERGENCE_DIAMETER: f64 = 1e6;
pub const DEFAULT_EE_ITERATIONS: usize = 250;
pub const DEFAULT_CAPTURE_EVERY: usize = 10;

/// `n` points in `R^s`, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<T> {
    points: Array2<T>,
}

impl<T: Scalar> Embedding<T> {
    pub fn new(points: Array2<T>) -> Result<Self> {
        if points.ncols() == 0 {
            return Err(Error::DimensionMismatch("embedding dimension is 0".into()));
        }
        if let Some(((i, k), _)) = points.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite embedding coordinate at point {i}, column {k}"
            )));
        }
        Ok(Self {
            points: points.as_standard_layout().into_owned(),
        })
    }

    pub fn zeros(n: usize, s: usize) -> Self {
        Self {
            points: Array2::zeros((n, s)),
        }
    }

    /// I.i.d. uniform points in `[-half_width, half_width]^s`.
    pub fn random_uniform(n: usize, s: usize, half_width: T, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = half_width.as_f64();
        let points = Array2::from_shape_simple_fn((n, s), || T::lit(rng.random_range(-w..=w)));
        Self { points }
    }

    /// The default initialization: uniform on `[-0.01, 0.01]^s`.
    pub fn random_init(n: usize, s: usize, seed: u64) -> Self {
        Self::random_uniform(n, s, T::lit(INIT_HALF_WIDTH), seed)
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, T> {
        self.points.view()
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, T> {
        self.points.row(i)
    }

    pub fn into_points(self) -> Array2<T> {
        self.points
    }

    pub fn max_abs(&self) -> T {
        self.points.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Whether every coordinate lies in `[-half_width, half_width]`.
    pub fn within_box(&self, half_width: T) -> bool {
        self.max_abs() <= half_width
    }

    pub fn diameter(&self) -> T {
        diameter(self.points.view())
    }

    pub(crate) fn from_points_unchecked(points: Array2<T>) -> Self {
        Self { points }
    }

    fn coords(&self) -> &[T] {
        self.points
            .as_slice()
            .expect("embeddings are kept in standard layout")
    }
}

/// Unnormalized Student-t kernel values `q_ij Z = (1 + |y_i - y_j|^2)^-1`
/// and their sum `Z` over ordered pairs.
#[derive(Clone, Debug)]
pub struct QMatrix<T> {
    qz: Array2<T>,
    z: T,
}

impl<T: Scalar> QMatrix<T> {
    pub fn qz(&self) -> ArrayView2<'_, T> {
        self.qz.view()
    }

    pub fn z(&self) -> T {
        self.z
    }

    pub fn q(&self, i: usize, j: usize) -> T {
        self.qz[[i, j]] / self.z
    }

    pub fn n(&self) -> usize {
        self.qz.nrows()
    }
}

/// Parameters of the exaggerated descent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExaggerationConfig<T> {
    pub alpha: T,
    pub h: T,
    pub iterations: usize,
    /// Snapshot stride; `0` keeps only the first and last embedding.
    pub capture_every: usize,
}

impl<T: Scalar> ExaggerationConfig<T> {
    pub fn new(alpha: T, h: T, iterations: usize) -> Result<Self> {
        let cfg = Self {
            alpha,
            h,
            iterations,
            capture_every: DEFAULT_CAPTURE_EVERY,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Splits a product `alpha * h` for a given step size.
    pub fn from_alpha_h(alpha_h: T, h: T, iterations: usize) -> Result<Self> {
        if !(h > T::zero()) {
            return Err(Error::InvalidParameter(format!("step size h must be > 0, got {h}")));
        }
        Self::new(alpha_h / h, h, iterations)
    }

    pub fn with_capture_every(mut self, stride: usize) -> Self {
        self.capture_every = stride;
        self
    }

    pub fn alpha_h(&self) -> T {
        self.alpha * self.h
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= T::one()) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "exaggeration alpha must be >= 1, got {}",
                self.alpha
            )));
        }
        if !(self.h >= T::zero()) || !self.h.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "step size h must be >= 0, got {}",
                self.h
            )));
        }
        Ok(())
    }
}

/// The un-exaggerated phase that follows early exaggeration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PostConfig<T> {
    pub h: T,
    pub iterations: usize,
}

/// An embedding captured after `step` iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<T> {
    pub step: usize,
    pub embedding: Embedding<T>,
}

/// Receives the embeddings of a run as they are captured.
pub trait TrajectoryObserver<T: Scalar> {
    /// Called once with the initial embedding; `in_init_box` reports whether it
    /// lies in `[-0.01, 0.01]^s`.
    fn on_start(&mut self, _y0: &Embedding<T>, _in_init_box: bool) {}

    fn on_snapshot(&mut self, step: usize, y: &Embedding<T>);
}

#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub final_embedding: Embedding<T>,
    pub snapshots: Vec<Snapshot<T>>,
}

fn check_sizes<T: Scalar>(p: &AffinityMatrix<T>, y: &Embedding<T>) -> Result<()> {
    if p.n() != y.n() {
        return Err(Error::DimensionMismatch(format!(
            "affinities for {} points but embedding has {}",
            p.n(),
            y.n()
        )));
    }
    Ok(())
}

#[inline]
fn kernel<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut d2 = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        d2 += d * d;
    }
    T::one() / (T::one() + d2)
}

/// `Z`, summed row by row in a fixed order so the result is reproducible.
pub fn normalizer<T: Scalar>(y: &Embedding<T>) -> T {
    let s = y.dim();
    let c = y.coords();
    let partial: Vec<T> = (0..y.n())
        .into_par_iter()
        .map(|i| {
            let yi = &c[i * s..(i + 1) * s];
            let mut acc = T::zero();
            for (j, yj) in c.chunks_exact(s).enumerate() {
                if j != i {
                    acc += kernel(yi, yj);
                }
            }
            acc
        })
        .collect();
    partial.into_iter().sum()
}

pub fn compute_q<T: Scalar>(y: &Embedding<T>) -> QMatrix<T> {
    let n = y.n();
    let mut qz = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = T::one() / (T::one() + sq_dist(y.point(i), y.point(j)));
            qz[[i, j]] = v;
            qz[[j, i]] = v;
        }
    }
    let z = qz.iter().copied().sum();
    QMatrix { qz, z }
}

/// `KL(P || Q) = sum_{i != j} p_ij log(p_ij / q_ij)` with `0 log 0 = 0`.
pub fn kl_cost<T: Scalar>(p: &AffinityMatrix<T>, q: &QMatrix<T>) -> T {
    let n = p.n();
    let mut cost = T::zero();
    for i in 0..n {
        for j in 0..n {
            let pij = p.get(i, j);
            if i != j && pij > T::zero() {
                cost += pij * (pij / q.q(i, j)).ln();
            }
        }
    }
    cost
}

/// Weighted pairwise force `sum_j (a p_ij w_ij - r w_ij^2 / Z) (y_i - y_j)`.
fn pair_forces<T: Scalar>(
    p: Option<&AffinityMatrix<T>>,
    y: &Embedding<T>,
    attraction_weight: T,
    repulsion_weight: T,
) -> Array2<T> {
    let (n, s) = (y.n(), y.dim());
    let c = y.coords();
    let inv_z = if repulsion_weight == T::zero() {
        T::zero()
    } else {
        T::one() / normalizer(y)
    };
    let mut out = vec![T::zero(); n * s];
    out.par_chunks_mut(s).enumerate().for_each(|(i, gi)| {
        let yi = &c[i * s..(i + 1) * s];
        let prow = p.map(|p| p.row_slice(i));
        for (j, yj) in c.chunks_exact(s).enumerate() {
            if j == i {
                continue;
            }
            let w = kernel(yi, yj);
            let mut coef = -repulsion_weight * w * w * inv_z;
            if let Some(prow) = prow {
                coef += attraction_weight * prow[j] * w;
            }
            if coef != T::zero() {
                for k in 0..s {
                    gi[k] += coef * (yi[k] - yj[k]);
                }
            }
        }
    });
    Array2::from_shape_vec((n, s), out).expect("shape matches buffer")
}

/// Exaggerated attraction `sum_j alpha p_ij (q_ij Z) (y_i - y_j)` per point.
pub fn attraction<T: Scalar>(p: &AffinityMatrix<T>, y: &Embedding<T>, alpha: T) -> Result<Array2<T>> {
    check_sizes(p, y)?;
    Ok(pair_forces(Some(p), y, alpha, T::zero()))
}

/// Repulsion `sum_j q_ij^2 Z (y_i - y_j)` per point (enters the gradient with a minus sign).
pub fn repulsion<T: Scalar>(y: &Embedding<T>) -> Array2<T> {
    pair_forces(None, y, T::zero(), -T::one())
}

/// A quarter of the exaggerated KL gradient, one row per point.
///
/// With `alpha = 1` this is exactly `dC/dy / 4`.
pub fn gradient<T: Scalar>(p: &AffinityMatrix<T>, y: &Embedding<T>, alpha: T) -> Result<Array2<T>> {
    check_sizes(p, y)?;
    Ok(pair_forces(Some(p), y, alpha, T::one()))
}

pub(crate) fn step_in_place<T: Scalar>(
    y: &mut Embedding<T>,
    p: &AffinityMatrix<T>,
    alpha: T,
    h: T,
    iteration: usize,
) -> Result<()> {
    if h == T::zero() {
        return Ok(());
    }
    let g = pair_forces(Some(p), y, alpha, T::one());
    y.points.scaled_add(-h, &g);
    if y.points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteUpdate { iteration });
    }
    let limit = T::lit(DIVERGENCE_DIAMETER);
    if bounding_diagonal(y.points.view()) > limit {
        let d = y.diameter();
        if d > limit {
            return Err(Error::Diverged {
                iteration,
                diameter: d.as_f64(),
            });
        }
    }
    Ok(())
}

/// One exaggerated gradient step `y - h g`.
pub fn ee_step<T: Scalar>(
    y: &Embedding<T>,
    p: &AffinityMatrix<T>,
    cfg: &ExaggerationConfig<T>,
) -> Result<Embedding<T>> {
    check_sizes(p, y)?;
    cfg.validate()?;
    let mut next = y.clone();
    step_in_place(&mut next, p, cfg.alpha, cfg.h, 1)?;
    Ok(next)
}

pub(crate) fn should_capture(step: usize, stride: usize, last: usize) -> bool {
    step == 0 || step == last || (stride > 0 && step.is_multiple_of(stride))
}

/// Runs `cfg.iterations` exaggerated steps from `y0`, capturing snapshots at
/// step 0, every `cfg.capture_every` steps and at the final step.
pub fn run_early_exaggeration<T: Scalar>(
    y0: &Embedding<T>,
    p: &AffinityMatrix<T>,
    cfg: &ExaggerationConfig<T>,
    mut observer: Option<&mut dyn TrajectoryObserver<T>>,
) -> Result<Trajectory<T>> {
    check_sizes(p, y0)?;
    cfg.validate()?;
    if let Some(obs) = observer.as_deref_mut() {
        obs.on_start(y0, y0.within_box(T::lit(INIT_HALF_WIDTH)));
    }

    let mut y = y0.clone();
    let mut snapshots = Vec::new();
    for t in 0..=cfg.iterations {
        if t > 0 {
            step_in_place(&mut y, p, cfg.alpha, cfg.h, t)?;
        }
        if should_capture(t, cfg.capture_every, cfg.iterations) {
            if let Some(obs) = observer.as_deref_mut() {
                obs.on_snapshot(t, &y);
            }
            snapshots.push(Snapshot {
                step: t,
                embedding: y.clone(),
            });
        }
    }
    Ok(Trajectory {
        final_embedding: y,
        snapshots,
    })
}

/// Early exaggeration followed by plain (`alpha = 1`) gradient descent.
pub fn run_full_tsne<T: Scalar>(
    y0: &Embedding<T>,
    p: &AffinityMatrix<T>,
    ee: &ExaggerationConfig<T>,
    post: &PostConfig<T>,
) -> Result<Embedding<T>> {
    let ee = ee.with_capture_every(0);
    let mut y = run_early_exaggeration(y0, p, &ee, None)?.final_embedding;
    if !(post.h >= T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "post-phase step size must be >= 0, got {}",
            post.h
        )));
    }
    for t in 1..=post.iterations {
        step_in_place(&mut y, p, T::one(), post.h, ee.iterations + t)?;
    }
    Ok(y)
}

/// Column-wise mean of an embedding.
pub fn centroid<T: Scalar>(y: &Embedding<T>) -> Vec<T> {
    y.points
        .mean_axis(Axis(0))
        .map(|m| m.to_vec())
        .unwrap_or_default()
}
