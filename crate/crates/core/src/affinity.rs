//! Input-space affinities.
//!
//! Raw points are turned into conditional Gaussian affinities `p_{j|i}` whose
//! bandwidths are calibrated to a target perplexity, then symmetrized into the
//! joint matrix `p_ij = (p_{j|i} + p_{i|j}) / 2n`. Externally computed matrices
//! can be loaded instead, under either of the two normalizations the rest of the
//! crate understands.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::sq_dist;
use crate::Scalar;

/// Allowed deviation between the calibrated and the requested perplexity.
pub const PERPLEXITY_TOLERANCE: f64 = 1e-5;
/// Search bracket for the kernel bandwidth.
pub const SIGMA_BRACKET: (f64, f64) = (1e-12, 1e12);
pub const MAX_BISECTION_STEPS: usize = 200;
/// Largest `|p_ij - p_ji|` accepted by [`load_affinities`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
/// Slack on `sum p_ij = 1` for the t-SNE normalization.
pub const SUM_TOLERANCE: f64 = 1e-9;
/// Slack on `sum_j p_ij <= 1` for the row-bounded normalization.
pub const ROW_BOUND_TOLERANCE: f64 = 1e-12;

/// A point cloud of `n` points in `R^d`, one point per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    points: Array2<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(points: Array2<T>) -> Result<Self> {
        let (n, d) = points.dim();
        if n < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 points, got {n}")));
        }
        if d < 1 {
            return Err(Error::InvalidDataset("points have dimension 0".into()));
        }
        if let Some(((i, k), _)) = points.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite coordinate at point {i}, column {k}"
            )));
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "point {i} has dimension {}, expected {d}",
                rows[i].len()
            )));
        }
        let flat: Vec<T> = rows.iter().flatten().copied().collect();
        let points = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::InvalidDataset(e.to_string()))?;
        Self::new(points)
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
}

/// Row-normalized Gaussian affinities together with their calibrated bandwidths.
///
/// `rows[[i, j]]` is the probability of picking `j` as the neighbour of `i`.
#[derive(Clone, Debug)]
pub struct ConditionalAffinities<T> {
    rows: Array2<T>,
    sigmas: Vec<T>,
    perplexity: T,
}

impl<T: Scalar> ConditionalAffinities<T> {
    pub fn rows(&self) -> ArrayView2<'_, T> {
        self.rows.view()
    }

    pub fn sigmas(&self) -> &[T] {
        &self.sigmas
    }

    pub fn perplexity(&self) -> T {
        self.perplexity
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }
}

/// Which normalization an [`AffinityMatrix`] satisfies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Entries over all ordered pairs sum to one.
    TsneSumOne,
    /// Every row sums to at most one (the scaling of the spectral limit).
    SpectralRowBounded,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::TsneSumOne => "tsne_sum_one",
            Normalization::SpectralRowBounded => "spectral_row_bounded",
        })
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsne_sum_one" => Ok(Normalization::TsneSumOne),
            "spectral_row_bounded" => Ok(Normalization::SpectralRowBounded),
            other => Err(Error::InvalidParameter(format!("unknown normalization `{other}`"))),
        }
    }
}

/// Symmetric, nonnegative pairwise affinities with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix<T> {
    p: Array2<T>,
    normalization: Normalization,
}

impl<T: Scalar> AffinityMatrix<T> {
    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn p(&self) -> ArrayView2<'_, T> {
        self.p.view()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.p[[i, j]]
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn row_sum(&self, i: usize) -> T {
        self.p.row(i).iter().copied().sum()
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.n()).map(|i| self.row_sum(i)).collect()
    }

    pub fn max_row_sum(&self) -> T {
        self.row_sums().into_iter().fold(T::zero(), T::max)
    }

    pub fn total(&self) -> T {
        self.p.iter().copied().sum()
    }

    pub(crate) fn row_slice(&self, i: usize) -> &[T] {
        let n = self.n();
        &self.p.as_slice().expect("affinities are kept in standard layout")[i * n..(i + 1) * n]
    }

    pub fn into_inner(self) -> Array2<T> {
        self.p
    }

    /// Multiplies every entry by `factor` and retags the result. No checks.
    pub(crate) fn scaled_unchecked(&self, factor: T, normalization: Normalization) -> Self {
        Self {
            p: self.p.mapv(|v| v * factor),
            normalization,
        }
    }
}

/// Calibrates one Gaussian bandwidth per point so that each conditional row has
/// the requested perplexity, and returns the normalized rows.
pub fn conditional_affinities<T: Scalar>(
    data: &Dataset<T>,
    perplexity: T,
) -> Result<ConditionalAffinities<T>> {
    let n = data.n();
    if !(perplexity > T::one()) || perplexity > T::from_count(n - 1) {
        return Err(Error::PerplexityOutOfRange {
            perplexity: perplexity.as_f64(),
            n,
        });
    }

    let calibrated: Vec<(Vec<T>, T)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sq: Vec<T> = (0..n)
                .map(|j| {
                    if j == i {
                        T::zero()
                    } else {
                        sq_dist(data.point(i), data.point(j))
                    }
                })
                .collect();
            calibrate_row(&sq, i, perplexity)
        })
        .collect::<Result<_>>()?;

    let mut rows = Array2::zeros((n, n));
    let mut sigmas = Vec::with_capacity(n);
    for (i, (row, sigma)) in calibrated.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            rows[[i, j]] = v;
        }
        sigmas.push(sigma);
    }
    Ok(ConditionalAffinities {
        rows,
        sigmas,
        perplexity,
    })
}

/// Entropy in bits of the Gaussian row of point `owner` at bandwidth `sigma`.
///
/// `sq_dists[owner]` is ignored.
pub fn row_entropy_bits<T: Scalar>(sq_dists: &[T], owner: usize, sigma: T) -> T {
    gaussian_row(sq_dists, owner, sigma).1
}

/// Normalized Gaussian weights and their entropy in bits.
///
/// Distances are shifted by the row minimum before exponentiation, which leaves
/// the normalized row unchanged and keeps the largest weight at one.
fn gaussian_row<T: Scalar>(sq_dists: &[T], owner: usize, sigma: T) -> (Vec<T>, T) {
    let min = sq_dists
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != owner)
        .fold(T::infinity(), |m, (_, &d)| m.min(d));
    let beta = T::one() / (T::lit(2.0) * sigma * sigma);

    let mut weights = vec![T::zero(); sq_dists.len()];
    let mut total = T::zero();
    let mut weighted = T::zero();
    for (j, &d) in sq_dists.iter().enumerate() {
        if j == owner {
            continue;
        }
        let e = d - min;
        let w = (-beta * e).exp();
        weights[j] = w;
        total += w;
        if w > T::zero() {
            weighted += w * beta * e;
        }
    }
    let nats = total.ln() + weighted / total;
    for w in &mut weights {
        *w /= total;
    }
    (weights, nats / T::lit(std::f64::consts::LN_2))
}

fn calibrate_row<T: Scalar>(sq: &[T], owner: usize, perplexity: T) -> Result<(Vec<T>, T)> {
    let tol = T::lit(PERPLEXITY_TOLERANCE);
    let stop = tol * T::lit(1e-3);
    let two = T::lit(2.0);

    // Bisection on log(sigma); perplexity is nondecreasing in sigma.
    let mut lo = T::lit(SIGMA_BRACKET.0).ln();
    let mut hi = T::lit(SIGMA_BRACKET.1).ln();
    let mut best: Option<(T, Vec<T>, T)> = None;
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = (lo + hi) / two;
        let sigma = mid.exp();
        let (row, bits) = gaussian_row(sq, owner, sigma);
        let achieved = two.powf(bits);
        let err = (achieved - perplexity).abs();
        if best.as_ref().is_none_or(|(e, _, _)| err < *e) {
            best = Some((err, row, sigma));
        }
        if err <= stop {
            break;
        }
        if achieved > perplexity {
            hi = mid;
        } else {
            lo = mid;
        }
        if !(hi > lo) {
            break;
        }
    }
    let (err, row, sigma) = best.expect("at least one bisection step");
    if err > tol {
        return Err(Error::DegenerateRow {
            index: owner,
            achieved: (perplexity + err).as_f64(),
        });
    }
    Ok((row, sigma))
}

/// Joint affinities `p_ij = (p_{j|i} + p_{i|j}) / 2n`, summing to one.
pub fn symmetrize<T: Scalar>(cond: &ConditionalAffinities<T>) -> AffinityMatrix<T> {
    let n = cond.n();
    let denom = T::lit(2.0) * T::from_count(n);
    let r = &cond.rows;
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (r[[i, j]] + r[[j, i]]) / denom;
            p[[i, j]] = v;
            p[[j, i]] = v;
        }
    }
    AffinityMatrix {
        p,
        normalization: Normalization::TsneSumOne,
    }
}

/// Validates an externally supplied affinity matrix.
///
/// Entries that differ from their transpose by at most [`SYMMETRY_TOLERANCE`]
/// are replaced by the pair average, so exactly symmetric input is kept bit
/// for bit.
pub fn load_affinities<T: Scalar>(
    source: Array2<T>,
    normalization: Normalization,
) -> Result<AffinityMatrix<T>> {
    let (n, m) = source.dim();
    if n != m {
        return Err(Error::DimensionMismatch(format!(
            "affinity matrix must be square, got {n} x {m}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidAffinities(format!("need at least 2 points, got {n}")));
    }
    for ((i, j), &v) in source.indexed_iter() {
        if !v.is_finite() || v < T::zero() {
            return Err(Error::InvalidAffinities(format!(
                "entry ({i}, {j}) = {v} is not a finite nonnegative number"
            )));
        }
        if i == j && v != T::zero() {
            return Err(Error::InvalidAffinities(format!(
                "diagonal entry ({i}, {i}) = {v} is not zero"
            )));
        }
    }

    let mut p = source.as_standard_layout().into_owned();
    let sym_tol = T::lit(SYMMETRY_TOLERANCE);
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (p[[i, j]], p[[j, i]]);
            if a != b {
                if (a - b).abs() > sym_tol {
                    return Err(Error::AsymmetricInput {
                        i,
                        j,
                        a: a.as_f64(),
                        b: b.as_f64(),
                    });
                }
                let avg = (a + b) / T::lit(2.0);
                p[[i, j]] = avg;
                p[[j, i]] = avg;
            }
        }
    }

    let matrix = AffinityMatrix { p, normalization };
    match normalization {
        Normalization::TsneSumOne => {
            let total = matrix.total();
            if (total - T::one()).abs() > T::lit(SUM_TOLERANCE) {
                return Err(Error::NormalizationViolation {
                    row: None,
                    sum: total.as_f64(),
                });
            }
        }
        Normalization::SpectralRowBounded => {
            let bound = T::one() + T::lit(ROW_BOUND_TOLERANCE);
            for i in 0..n {
                let s = matrix.row_sum(i);
                if s > bound {
                    return Err(Error::NormalizationViolation {
                        row: Some(i),
                        sum: s.as_f64(),
                    });
                }
            }
        }
    }
    Ok(matrix)
}

/// Convenience: calibrate and symmetrize in one go.
pub fn affinities_from_data<T: Scalar>(data: &Dataset<T>, perplexity: T) -> Result<AffinityMatrix<T>> {
    Ok(symmetrize(&conditional_affinities(data, perplexity)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn line5() -> Dataset<f64> {
        Dataset::new(array![[0.0], [1.0], [2.0], [3.0], [4.0]]).unwrap()
    }

    fn equilateral() -> Dataset<f64> {
        let h = 3f64.sqrt() / 2.0;
        Dataset::new(array![[0.0, 0.0], [1.0, 0.0], [0.5, h]]).unwrap()
    }

    /// Row `i` straight from the defining formula, no shifting.
    fn oracle_row(x: &[f64], i: usize, sigma: f64) -> Vec<f64> {
        let w: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(j, &xj)| {
                if j == i {
                    0.0
                } else {
                    (-(x[i] - xj).powi(2) / (2.0 * sigma * sigma)).exp()
                }
            })
            .collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }

    fn oracle_perplexity(row: &[f64]) -> f64 {
        let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum();
        2f64.powf(h)
    }

    /// Plain bisection on sigma itself over the full bracket.
    fn oracle_sigma(x: &[f64], i: usize, target: f64) -> f64 {
        let (mut lo, mut hi) = (1e-12f64, 1e12f64);
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if oracle_perplexity(&oracle_row(x, i, mid)) > target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn equidistant_rows_are_uniform() {
        let cond = conditional_affinities(&equilateral(), 2.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.0 } else { 0.5 };
                assert!((cond.rows()[[i, j]] - expect).abs() < 1e-12);
            }
        }
        let p = symmetrize(&cond);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.0 } else { 1.0 / 6.0 };
                assert!((p.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_points_reject_every_perplexity() {
        let data = Dataset::new(array![[0.0], [1.0]]).unwrap();
        for perp in [1.0, 1.5, 1.999, 2.0, 3.0] {
            assert!(matches!(
                conditional_affinities(&data, perp),
                Err(Error::PerplexityOutOfRange { .. })
            ));
        }
    }

    #[test]
    fn perplexity_bounds() {
        let data = line5();
        assert!(matches!(
            conditional_affinities(&data, 1.0),
            Err(Error::PerplexityOutOfRange { .. })
        ));
        assert!(matches!(
            conditional_affinities(&data, 5.0),
            Err(Error::PerplexityOutOfRange { .. })
        ));
        assert!(matches!(
            conditional_affinities(&data, f64::NAN),
            Err(Error::PerplexityOutOfRange { .. })
        ));
    }

    #[test]
    fn degenerate_row_is_reported() {
        // Point 0 sees the other three at identical distance, so its row is
        // uniform (perplexity 3) for every bandwidth.
        let data = Dataset::new(array![[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]).unwrap();
        match conditional_affinities(&data, 2.0) {
            Err(Error::DegenerateRow { index, .. }) => assert_eq!(index, 0),
            other => panic!("expected DegenerateRow, got {other:?}"),
        }
    }

    #[test]
    fn line_matches_bisection_oracle() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let cond = conditional_affinities(&line5(), 2.0).unwrap();
        for i in 0..5 {
            let sigma = oracle_sigma(&x, i, 2.0);
            let row = oracle_row(&x, i, sigma);
            assert!((oracle_perplexity(&row) - 2.0).abs() < 1e-9);
            let got = cond.rows();
            for j in 0..5 {
                assert!((got[[i, j]] - row[j]).abs() < 1e-6, "row {i} col {j}");
            }
            // Interior points have two tied nearest neighbours: every small sigma
            // gives perplexity 2, so only the row itself is determined.
            if i == 0 || i == 4 {
                assert!((cond.sigmas()[i] - sigma).abs() / sigma < 1e-5);
            }
            let achieved = oracle_perplexity(&got.row(i).to_vec());
            assert!((achieved - 2.0).abs() <= PERPLEXITY_TOLERANCE);
        }
    }

    #[test]
    fn symmetrize_matches_first_principles() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let cond = conditional_affinities(&line5(), 2.0).unwrap();
        let p = symmetrize(&cond);
        // Rebuild from oracle-calibrated bandwidths with the plain formula.
        let rows: Vec<Vec<f64>> = (0..5).map(|i| oracle_row(&x, i, oracle_sigma(&x, i, 2.0))).collect();
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 0.0 } else { (rows[i][j] + rows[j][i]) / 10.0 };
                assert!((p.get(i, j) - expect).abs() < 1e-7);
                assert_eq!(p.get(i, j), p.get(j, i));
            }
        }
        assert!((p.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicates_receive_maximal_affinity() {
        let data = Dataset::new(array![[0.0], [0.0], [1.0], [2.5], [4.0]]).unwrap();
        let cond = conditional_affinities(&data, 2.0).unwrap();
        let row = cond.rows().row(0).to_vec();
        assert!(row[1] > row[2] && row[1] > row[3] && row[1] > row[4]);
    }

    #[test]
    fn load_examples() {
        let ok = load_affinities(array![[0.0, 0.5], [0.5, 0.0]], Normalization::SpectralRowBounded);
        assert!(ok.is_ok());
        let bad = load_affinities(array![[0.0, 0.7], [0.6, 0.0]], Normalization::SpectralRowBounded);
        assert!(matches!(bad, Err(Error::AsymmetricInput { i: 0, j: 1, .. })));
        let over = load_affinities(array![[0.0, 1.5], [1.5, 0.0]], Normalization::SpectralRowBounded);
        assert!(matches!(
            over,
            Err(Error::NormalizationViolation { row: Some(0), .. })
        ));
        let not_one = load_affinities(array![[0.0, 0.25], [0.25, 0.0]], Normalization::TsneSumOne);
        assert!(matches!(not_one, Err(Error::NormalizationViolation { row: None, .. })));
        let diag = load_affinities(array![[0.1, 0.4], [0.4, 0.0]], Normalization::SpectralRowBounded);
        assert!(matches!(diag, Err(Error::InvalidAffinities(_))));
        let neg = load_affinities(array![[0.0, -0.4], [-0.4, 0.0]], Normalization::SpectralRowBounded);
        assert!(matches!(neg, Err(Error::InvalidAffinities(_))));
        let rect = load_affinities(Array2::<f64>::zeros((2, 3)), Normalization::SpectralRowBounded);
        assert!(matches!(rect, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let p = affinities_from_data(&line5(), 2.0).unwrap();
        let again = load_affinities(p.p().to_owned(), Normalization::TsneSumOne).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn near_symmetric_input_is_averaged() {
        let m = array![[0.0, 0.5], [0.5 + 5e-13, 0.0]];
        let p = load_affinities(m, Normalization::SpectralRowBounded).unwrap();
        assert_eq!(p.get(0, 1), p.get(1, 0));
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(array![[1.0, 2.0]]).is_err());
        assert!(Dataset::new(array![[1.0, f64::NAN], [0.0, 0.0]]).is_err());
        assert!(Dataset::<f64>::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(Dataset::new(Array2::<f64>::zeros((3, 0))).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let data = Dataset::new(array![[0.0f32], [1.0], [2.0], [3.0], [4.0]]).unwrap();
        let p = affinities_from_data(&data, 2.0f32).unwrap();
        assert!((p.total() - 1.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn entropy_is_monotone_in_sigma(
            dists in proptest::collection::vec(0.0f64..25.0, 2..20),
            mut sigmas in proptest::collection::vec(1e-3f64..1e3, 10),
        ) {
            let mut sq = vec![0.0];
            sq.extend(dists);
            sigmas.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let h: Vec<f64> = sigmas.iter().map(|&s| row_entropy_bits(&sq, 0, s)).collect();
            for w in h.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
        }

        #[test]
        fn calibrated_rows_are_stochastic(
            coords in proptest::collection::vec(-5.0f64..5.0, 24..60),
            frac in 0.05f64..0.9,
        ) {
            let d = 3;
            let n = coords.len() / d;
            let pts = Array2::from_shape_vec((n, d), coords[..n * d].to_vec()).unwrap();
            let data = Dataset::new(pts).unwrap();
            let perp = 1.0 + frac * (n as f64 - 2.0);
            let cond = conditional_affinities(&data, perp).unwrap();
            let rows = cond.rows();
            for i in 0..n {
                let row = rows.row(i);
                prop_assert!((row.sum() - 1.0).abs() <= 1e-9);
                prop_assert_eq!(row[i], 0.0);
                prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert!(cond.sigmas()[i] > 0.0);
            }
            let p = symmetrize(&cond);
            prop_assert!((p.total() - 1.0).abs() <= 1e-9);
            prop_assert!(p.p() == p.p().t());
        }
    }
}
