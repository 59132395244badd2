//! Small dense-geometry helpers shared by the engines and the checks.

use ndarray::{ArrayView1, ArrayView2};

use crate::Scalar;

/// Squared Euclidean distance by direct differences (exactly zero for duplicates).
#[inline]
pub fn sq_dist<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |acc, (&x, &y)| {
            let d = x - y;
            acc + d * d
        })
}

#[inline]
pub fn dist<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    sq_dist(a, b).sqrt()
}

/// Maximum pairwise Euclidean distance over all rows. Zero for fewer than two rows.
pub fn diameter<T: Scalar>(points: ArrayView2<'_, T>) -> T {
    let n = points.nrows();
    let mut best = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(points.row(i), points.row(j));
            if d > best {
                best = d;
            }
        }
    }
    best.sqrt()
}

/// Diameter of the rows selected by `members`.
pub fn diameter_of<T: Scalar>(points: ArrayView2<'_, T>, members: &[usize]) -> T {
    let mut best = T::zero();
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            let d = sq_dist(points.row(i), points.row(j));
            if d > best {
                best = d;
            }
        }
    }
    best.sqrt()
}

/// Length of the bounding-box diagonal, an upper bound on the diameter.
pub fn bounding_diagonal<T: Scalar>(points: ArrayView2<'_, T>) -> T {
    let mut total = T::zero();
    for col in points.columns() {
        let (lo, hi) = col
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if hi >= lo {
            total += (hi - lo) * (hi - lo);
        }
    }
    total.sqrt()
}
