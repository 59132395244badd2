//! The `alpha -> inf, h -> 0` limit of early exaggeration with `alpha h` fixed.
//!
//! Absorbing `alpha h` into the affinities and dropping the repulsion leaves the
//! linear iteration `y(t+1) = A y(t)` with the random-walk matrix
//!
//! ```text
//! A_ii = 1 - sum_{k != i} p_ik,    A_ij = p_ji  (i != j)
//! ```
//!
//! applied to each embedding coordinate separately. Affinities are required to
//! be symmetric, so `p_ji = p_ij` and `A` is doubly stochastic.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::affinity::{AffinityMatrix, Normalization, ROW_BOUND_TOLERANCE};
use crate::error::{Error, Result};
use crate::geometry::dist;
use crate::tsne::{
    should_capture, ExaggerationConfig, Embedding, Snapshot, Trajectory, TrajectoryObserver,
};
use crate::Scalar;

/// Row-stochastic transition matrix of the limiting Markov chain.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix<T> {
    a: Array2<T>,
}

impl<T: Scalar> TransitionMatrix<T> {
    pub fn a(&self) -> ArrayView2<'_, T> {
        self.a.view()
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
}

pub fn build_transition_matrix<T: Scalar>(p: &AffinityMatrix<T>) -> Result<TransitionMatrix<T>> {
    let n = p.n();
    let bound = T::one() + T::lit(ROW_BOUND_TOLERANCE);
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        let mut off = T::zero();
        for k in 0..n {
            if k != i {
                off += p.get(i, k);
            }
        }
        if off > bound {
            return Err(Error::NormalizationViolation {
                row: Some(i),
                sum: off.as_f64(),
            });
        }
        for j in 0..n {
            a[[i, j]] = if i == j {
                (T::one() - off).max(T::zero())
            } else {
                p.get(j, i)
            };
        }
    }
    Ok(TransitionMatrix { a })
}

/// `alpha h * p`, retagged with the row-bounded normalization.
///
/// Fails unless `alpha h * max_i sum_j p_ij <= 1`.
pub fn rescale_for_limit<T: Scalar>(p: &AffinityMatrix<T>, alpha_h: T) -> Result<AffinityMatrix<T>> {
    if !(alpha_h >= T::zero()) || !alpha_h.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "alpha h must be a finite nonnegative number, got {alpha_h}"
        )));
    }
    let max_row = p.max_row_sum();
    let scaled = alpha_h * max_row;
    if scaled > T::one() + T::lit(ROW_BOUND_TOLERANCE) {
        return Err(Error::NormalizationViolation {
            row: None,
            sum: scaled.as_f64(),
        });
    }
    Ok(p.scaled_unchecked(alpha_h, Normalization::SpectralRowBounded))
}

/// One chain step `A y`.
pub fn spectral_step<T: Scalar>(a: &TransitionMatrix<T>, y: &Embedding<T>) -> Result<Embedding<T>> {
    if a.n() != y.n() {
        return Err(Error::DimensionMismatch(format!(
            "transition matrix for {} points but embedding has {}",
            a.n(),
            y.n()
        )));
    }
    Ok(apply(a, y))
}

fn apply<T: Scalar>(a: &TransitionMatrix<T>, y: &Embedding<T>) -> Embedding<T> {
    let (n, s) = (y.n(), y.dim());
    let pts = y.points();
    let mut out = vec![T::zero(); n * s];
    out.par_chunks_mut(s).enumerate().for_each(|(i, row)| {
        let ai = a.a.row(i);
        for j in 0..n {
            let w = ai[j];
            for k in 0..s {
                row[k] += w * pts[[j, k]];
            }
        }
    });
    Embedding::from_points_unchecked(Array2::from_shape_vec((n, s), out).expect("shape"))
}

/// Runs `steps` chain steps, capturing every `stride` steps (plus first and last).
pub fn spectral_iterate<T: Scalar>(
    a: &TransitionMatrix<T>,
    y0: &Embedding<T>,
    steps: usize,
    stride: usize,
    mut observer: Option<&mut dyn TrajectoryObserver<T>>,
) -> Result<Trajectory<T>> {
    let mut y = y0.clone();
    spectral_step(a, &y)?;
    if let Some(obs) = observer.as_deref_mut() {
        obs.on_start(y0, y0.within_box(T::lit(crate::tsne::INIT_HALF_WIDTH)));
    }
    let mut snapshots = Vec::new();
    for t in 0..=steps {
        if t > 0 {
            y = apply(a, &y);
        }
        if should_capture(t, stride, steps) {
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

/// `max_i |y_i - w_i|`.
pub fn max_deviation<T: Scalar>(y: &Embedding<T>, w: &Embedding<T>) -> T {
    (0..y.n())
        .map(|i| dist(y.point(i), w.point(i)))
        .fold(T::zero(), T::max)
}

/// Feeds the same seeded initialization to exaggerated t-SNE with `cfg` and to
/// the limiting chain built from `alpha h * p`, and returns the per-step
/// maximum pointwise distance between the two (entry `t` after `t` steps).
pub fn compare_trajectories<T: Scalar>(
    p: &AffinityMatrix<T>,
    cfg: &ExaggerationConfig<T>,
    steps: usize,
    seed: u64,
) -> Result<Vec<T>> {
    let y0 = Embedding::random_init(p.n(), 2, seed);
    compare_from(p, cfg, steps, &y0)
}

/// [`compare_trajectories`] from a caller-supplied initialization.
pub fn compare_from<T: Scalar>(
    p: &AffinityMatrix<T>,
    cfg: &ExaggerationConfig<T>,
    steps: usize,
    y0: &Embedding<T>,
) -> Result<Vec<T>> {
    cfg.validate()?;
    let a = build_transition_matrix(&rescale_for_limit(p, cfg.alpha_h())?)?;
    let one = cfg.with_capture_every(0);
    let mut tsne = y0.clone();
    let mut chain = y0.clone();
    spectral_step(&a, &chain)?;
    let mut series = Vec::with_capacity(steps + 1);
    series.push(T::zero());
    for t in 1..=steps {
        tsne = crate::tsne::ee_step(&tsne, p, &one).map_err(|e| match e {
            Error::NonFiniteUpdate { .. } => Error::NonFiniteUpdate { iteration: t },
            Error::Diverged { diameter, .. } => Error::Diverged { iteration: t, diameter },
            other => other,
        })?;
        chain = apply(&a, &chain);
        series.push(max_deviation(&tsne, &chain));
    }
    Ok(series)
}
