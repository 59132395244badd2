//! Cluster-level diagnostics for the exaggeration phase: the two assumptions
//! on the affinities and step size, the recommended `alpha h`, the
//! post-contraction diameter bound and per-cluster diameter tracking.

use std::fmt::Write as _;

use serde::Serialize;

use crate::affinity::AffinityMatrix;
use crate::error::{Error, Result};
use crate::geometry::{diameter_of, sq_dist};
use crate::tsne::{Embedding, Snapshot, TrajectoryObserver};
use crate::Scalar;

/// Default for the universal constant in the diameter bound.
pub const DEFAULT_C: f64 = 10.0;
/// Admissible range for `alpha h * sum_same p_ij`.
pub const ASSUMPTION2_RANGE: (f64, f64) = (0.01, 0.9);
/// Slack when classifying values that sit exactly on a boundary.
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;
/// Rate fits only use diameters above this multiple of the bound.
pub const FIT_BOUND_MULTIPLE: f64 = 1.5;

/// Map from point index to cluster `0..k`, with every cluster nonempty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidAssignment("no points".into()));
        }
        let mut members = vec![Vec::new(); k];
        for (i, &c) in labels.iter().enumerate() {
            if c >= k {
                return Err(Error::InvalidAssignment(format!(
                    "point {i} has label {c}, expected < {k}"
                )));
            }
            members[c].push(i);
        }
        if let Some(c) = members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidAssignment(format!("cluster {c} is empty")));
        }
        Ok(Self { labels, members })
    }

    /// Renumbers arbitrary integer labels to `0..k` in increasing label order.
    pub fn from_labels(raw: &[i64]) -> Result<Self> {
        let mut distinct: Vec<i64> = raw.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let labels = raw
            .iter()
            .map(|l| distinct.binary_search(l).expect("label present"))
            .collect();
        Self::new(labels, distinct.len())
    }

    /// Every point in one cluster.
    pub fn single(n: usize) -> Result<Self> {
        Self::new(vec![0; n], 1)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn members(&self, c: usize) -> &[usize] {
        &self.members[c]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn size_of_cluster_of(&self, i: usize) -> usize {
        self.members[self.labels[i]].len()
    }

    fn check_n(&self, n: usize) -> Result<()> {
        if self.n() != n {
            return Err(Error::DimensionMismatch(format!(
                "cluster assignment covers {} points, affinities {n}",
                self.n()
            )));
        }
        Ok(())
    }
}

/// `(sum over same cluster, sum over other clusters)` of `p_ij`, per point.
pub fn split_row_sums<T: Scalar>(p: &AffinityMatrix<T>, pi: &ClusterAssignment) -> Result<(Vec<T>, Vec<T>)> {
    pi.check_n(p.n())?;
    let n = p.n();
    let mut same = vec![T::zero(); n];
    let mut other = vec![T::zero(); n];
    for i in 0..n {
        let row = p.row_slice(i);
        for (j, &v) in row.iter().enumerate() {
            if j == i {
                continue;
            }
            if pi.label(j) == pi.label(i) {
                same[i] += v;
            } else {
                other[i] += v;
            }
        }
    }
    Ok((same, other))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterMargin<T> {
    pub cluster: usize,
    pub size: usize,
    /// `min p_ij * 10 n |C|` over pairs inside the cluster; infinite for singletons.
    pub min_margin: T,
    pub witness: Option<(usize, usize)>,
    pub pass: bool,
}

/// Per-cluster minimum of `p_ij * 10 n |C|` over distinct pairs inside `C`.
pub fn check_assumption1<T: Scalar>(p: &AffinityMatrix<T>, pi: &ClusterAssignment) -> Result<Vec<ClusterMargin<T>>> {
    pi.check_n(p.n())?;
    let n = T::from_count(p.n());
    Ok((0..pi.k())
        .map(|c| {
            let m = pi.members(c);
            let scale = T::lit(10.0) * n * T::from_count(m.len());
            let mut best: Option<(T, usize, usize)> = None;
            for (a, &i) in m.iter().enumerate() {
                for &j in &m[a + 1..] {
                    let v = p.get(i, j) * scale;
                    if best.is_none_or(|(b, _, _)| v < b) {
                        best = Some((v, i, j));
                    }
                }
            }
            match best {
                Some((v, i, j)) => ClusterMargin {
                    cluster: c,
                    size: m.len(),
                    min_margin: v,
                    witness: Some((i, j)),
                    pass: v >= T::one(),
                },
                None => ClusterMargin {
                    cluster: c,
                    size: m.len(),
                    min_margin: T::infinity(),
                    witness: None,
                    pass: true,
                },
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Below,
    Within,
    Above,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Below => "below",
            Verdict::Within => "within",
            Verdict::Above => "above",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assumption2<T> {
    /// `alpha h * sum_{j != i, same cluster} p_ij`.
    pub values: Vec<T>,
    pub verdicts: Vec<Verdict>,
}

impl<T: Scalar> Assumption2<T> {
    pub fn count(&self, v: Verdict) -> usize {
        self.verdicts.iter().filter(|&&x| x == v).count()
    }

    pub fn all_within(&self) -> bool {
        self.count(Verdict::Within) == self.verdicts.len()
    }

    pub fn max_value(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min_value(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }
}

pub fn classify<T: Scalar>(v: T) -> Verdict {
    let tol = T::lit(BOUNDARY_TOLERANCE);
    if v < T::lit(ASSUMPTION2_RANGE.0) - tol {
        Verdict::Below
    } else if v > T::lit(ASSUMPTION2_RANGE.1) + tol {
        Verdict::Above
    } else {
        Verdict::Within
    }
}

pub fn check_assumption2<T: Scalar>(
    p: &AffinityMatrix<T>,
    pi: &ClusterAssignment,
    alpha: T,
    h: T,
) -> Result<Assumption2<T>> {
    let (same, _) = split_row_sums(p, pi)?;
    let ah = alpha * h;
    let values: Vec<T> = same.iter().map(|&s| ah * s).collect();
    let verdicts = values.iter().map(|&v| classify(v)).collect();
    Ok(Assumption2 { values, verdicts })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Guideline<T> {
    /// `0.9 / max_i sum_same p_ij`, safe for every cluster at once.
    pub alpha_h: T,
    /// `0.9 / sum_same p_ij` for each point.
    pub per_point: Vec<T>,
}

pub fn guideline_alpha_h<T: Scalar>(p: &AffinityMatrix<T>, pi: &ClusterAssignment) -> Result<Guideline<T>> {
    let (same, _) = split_row_sums(p, pi)?;
    if let Some(i) = same.iter().position(|&s| !(s > T::zero())) {
        return Err(Error::DegenerateCluster { index: i });
    }
    let top = T::lit(ASSUMPTION2_RANGE.1);
    let max = same.iter().copied().fold(T::zero(), T::max);
    Ok(Guideline {
        alpha_h: top / max,
        per_point: same.iter().map(|&s| top / s).collect(),
    })
}

/// Per-cluster `c h (alpha max_{i in C} sum_other p_ij + 1/n)`.
pub fn theorem_bound<T: Scalar>(p: &AffinityMatrix<T>, pi: &ClusterAssignment, alpha: T, h: T, c: T) -> Result<Vec<T>> {
    let (_, other) = split_row_sums(p, pi)?;
    let inv_n = T::one() / T::from_count(p.n());
    Ok((0..pi.k())
        .map(|k| {
            let worst = pi.members(k).iter().map(|&i| other[i]).fold(T::zero(), T::max);
            c * h * (alpha * worst + inv_n)
        })
        .collect())
}

/// Heuristic per-step factor `1 - alpha h / n`.
pub fn kappa<T: Scalar>(alpha_h: T, n: usize) -> T {
    T::one() - alpha_h / T::from_count(n)
}

/// The provable per-step factor `1 - |C| delta / 20` with
/// `delta = (9/100) (alpha h / n) / |C|`.
pub fn lemma_factor<T: Scalar>(alpha_h: T, n: usize, cluster_size: usize) -> T {
    let size = T::from_count(cluster_size);
    let delta = T::lit(0.09) * (alpha_h / T::from_count(n)) / size;
    T::one() - size * delta / T::lit(20.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub cluster: usize,
    /// Least-squares slope of `ln diameter` per iteration; `None` with fewer than two usable points.
    pub rate: Option<f64>,
    pub points_used: usize,
    /// First captured step whose diameter is below the bound.
    pub plateau_step: Option<usize>,
    /// Every capture from the plateau on stays below the bound.
    pub stays_below: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiameterSeries<T> {
    pub steps: Vec<usize>,
    /// `diameters[t][c]`: diameter of cluster `c` at `steps[t]`.
    pub diameters: Vec<Vec<T>>,
    pub fits: Vec<RateFit>,
}

impl<T: Scalar> DiameterSeries<T> {
    pub fn cluster(&self, c: usize) -> Vec<T> {
        self.diameters.iter().map(|d| d[c]).collect()
    }

    pub fn k(&self) -> usize {
        self.fits.len()
    }

    /// Per-cluster diameter at the last capture.
    pub fn last(&self) -> Option<&[T]> {
        self.diameters.last().map(Vec::as_slice)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step");
        for c in 0..self.k() {
            let _ = write!(out, ",cluster{c}");
        }
        out.push('\n');
        for (s, row) in self.steps.iter().zip(&self.diameters) {
            let _ = write!(out, "{s}");
            for d in row {
                let _ = write!(out, ",{:.16e}", d.as_f64());
            }
            out.push('\n');
        }
        out
    }
}

pub fn cluster_diameters<T: Scalar>(y: &Embedding<T>, pi: &ClusterAssignment) -> Vec<T> {
    (0..pi.k()).map(|c| diameter_of(y.points(), pi.members(c))).collect()
}

/// Per-cluster diameters of each snapshot with a log-linear rate fit.
///
/// With `bounds`, the fit covers the captures before the plateau whose
/// diameter exceeds [`FIT_BOUND_MULTIPLE`] times the bound; without, every
/// capture with positive diameter.
pub fn track_diameters<T: Scalar>(
    snapshots: &[Snapshot<T>],
    pi: &ClusterAssignment,
    bounds: Option<&[T]>,
) -> Result<DiameterSeries<T>> {
    let mut tracker = DiameterTracker::new(pi.clone());
    for s in snapshots {
        if s.embedding.n() != pi.n() {
            return Err(Error::DimensionMismatch(format!(
                "snapshot at step {} has {} points, assignment {}",
                s.step,
                s.embedding.n(),
                pi.n()
            )));
        }
        tracker.on_snapshot(s.step, &s.embedding);
    }
    tracker.finish(bounds)
}

/// Records per-cluster diameters while a run is in progress.
#[derive(Clone, Debug)]
pub struct DiameterTracker<T> {
    pi: ClusterAssignment,
    steps: Vec<usize>,
    diameters: Vec<Vec<T>>,
}

impl<T: Scalar> DiameterTracker<T> {
    pub fn new(pi: ClusterAssignment) -> Self {
        Self {
            pi,
            steps: Vec::new(),
            diameters: Vec::new(),
        }
    }

    pub fn finish(self, bounds: Option<&[T]>) -> Result<DiameterSeries<T>> {
        let k = self.pi.k();
        if let Some(b) = bounds {
            if b.len() != k {
                return Err(Error::DimensionMismatch(format!("{} bounds for {k} clusters", b.len())));
            }
        }
        let fits = (0..k)
            .map(|c| {
                let d: Vec<T> = self.diameters.iter().map(|row| row[c]).collect();
                fit_cluster(c, &self.steps, &d, bounds.map(|b| b[c]))
            })
            .collect();
        Ok(DiameterSeries {
            steps: self.steps,
            diameters: self.diameters,
            fits,
        })
    }
}

impl<T: Scalar> TrajectoryObserver<T> for DiameterTracker<T> {
    fn on_snapshot(&mut self, step: usize, y: &Embedding<T>) {
        self.steps.push(step);
        self.diameters.push(cluster_diameters(y, &self.pi));
    }
}

fn fit_cluster<T: Scalar>(cluster: usize, steps: &[usize], d: &[T], bound: Option<T>) -> RateFit {
    let (plateau, cutoff) = match bound {
        Some(b) => (d.iter().position(|&x| x < b), b * T::lit(FIT_BOUND_MULTIPLE)),
        None => (None, T::zero()),
    };
    let end = plateau.unwrap_or(d.len());
    let pts: Vec<(f64, f64)> = (0..end)
        .filter(|&t| d[t] > cutoff && d[t] > T::zero())
        .map(|t| (steps[t] as f64, d[t].as_f64().ln()))
        .collect();
    let stays_below = match (plateau, bound) {
        (Some(p), Some(b)) => d[p..].iter().all(|&x| x < b),
        _ => false,
    };
    RateFit {
        cluster,
        rate: least_squares_slope(&pts),
        points_used: pts.len(),
        plateau_step: plateau.map(|p| steps[p]),
        stays_below,
    }
}

fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// For each cluster, the smallest `c` for which the final diameter would have
/// met the bound: `diam / (h (alpha max sum_other + 1/n))`.
pub fn smallest_sufficient_c<T: Scalar>(final_diameters: &[T], unit_bounds: &[T]) -> Vec<T> {
    final_diameters
        .iter()
        .zip(unit_bounds)
        .map(|(&d, &u)| d / u)
        .collect()
}

/// Fraction of points whose nearest label centroid is their own.
pub fn nearest_centroid_purity<T: Scalar>(y: &Embedding<T>, pi: &ClusterAssignment) -> f64 {
    let s = y.dim();
    let centroids: Vec<ndarray::Array1<T>> = (0..pi.k())
        .map(|c| {
            let m = pi.members(c);
            let mut acc = ndarray::Array1::zeros(s);
            for &i in m {
                acc += &y.point(i);
            }
            let size = T::from_count(m.len());
            acc.mapv(|v| v / size)
        })
        .collect();
    let hits = (0..y.n())
        .filter(|&i| {
            let best = (0..pi.k())
                .min_by(|&a, &b| {
                    sq_dist(y.point(i), centroids[a].view())
                        .partial_cmp(&sq_dist(y.point(i), centroids[b].view()))
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .expect("at least one cluster");
            best == pi.label(i)
        })
        .count();
    hits as f64 / y.n() as f64
}

/// Everything the diagnostics know about one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsReport<T> {
    pub n: usize,
    pub sizes: Vec<usize>,
    pub alpha: T,
    pub h: T,
    pub c: T,
    pub assumption1: Vec<ClusterMargin<T>>,
    pub assumption2: Assumption2<T>,
    pub guideline: Option<Guideline<T>>,
    pub theorem_bounds: Vec<T>,
    pub kappa: T,
    /// Per cluster.
    pub lemma_factors: Vec<T>,
    pub series: Option<DiameterSeries<T>>,
    pub smallest_c: Option<Vec<T>>,
}

impl<T: Scalar> DiagnosticsReport<T> {
    /// Static checks only; attach a run with [`Self::with_trajectory`].
    pub fn build(p: &AffinityMatrix<T>, pi: &ClusterAssignment, alpha: T, h: T, c: T) -> Result<Self> {
        if !(c >= T::zero()) {
            return Err(Error::InvalidParameter(format!("c must be >= 0, got {c}")));
        }
        let n = p.n();
        let ah = alpha * h;
        Ok(Self {
            n,
            sizes: pi.sizes(),
            alpha,
            h,
            c,
            assumption1: check_assumption1(p, pi)?,
            assumption2: check_assumption2(p, pi, alpha, h)?,
            guideline: guideline_alpha_h(p, pi).ok(),
            theorem_bounds: theorem_bound(p, pi, alpha, h, c)?,
            kappa: kappa(ah, n),
            lemma_factors: pi.sizes().iter().map(|&m| lemma_factor(ah, n, m)).collect(),
            series: None,
            smallest_c: None,
        })
    }

    /// Attaches per-cluster diameters tracked during a run, fitting rates
    /// against the diameter bounds.
    pub fn with_trajectory(mut self, tracker: DiameterTracker<T>, p: &AffinityMatrix<T>, pi: &ClusterAssignment) -> Result<Self> {
        let series = tracker.finish(Some(&self.theorem_bounds))?;
        let unit = theorem_bound(p, pi, self.alpha, self.h, T::one())?;
        self.smallest_c = series.last().map(|d| smallest_sufficient_c(d, &unit));
        self.series = Some(series);
        Ok(self)
    }

    pub fn assumption1_pass(&self) -> bool {
        self.assumption1.iter().all(|m| m.pass)
    }

    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let f = |x: T| format!("{:.6e}", x.as_f64());
        let _ = writeln!(o, "points            {}", self.n);
        let _ = writeln!(o, "clusters          {}", self.sizes.len());
        let _ = writeln!(o, "alpha             {}", f(self.alpha));
        let _ = writeln!(o, "h                 {}", f(self.h));
        let _ = writeln!(o, "alpha*h           {}", f(self.alpha * self.h));
        let _ = writeln!(o, "c                 {}", f(self.c));
        let _ = writeln!(o, "kappa             {}", f(self.kappa));
        match &self.guideline {
            Some(g) => {
                let _ = writeln!(o, "guideline alpha*h {}", f(g.alpha_h));
            }
            None => {
                let _ = writeln!(o, "guideline alpha*h undefined (a point has no same-cluster affinity)");
            }
        }
        let a2 = &self.assumption2;
        let _ = writeln!(
            o,
            "assumption 2      {} within, {} below, {} above  (range {} .. {})",
            a2.count(Verdict::Within),
            a2.count(Verdict::Below),
            a2.count(Verdict::Above),
            f(a2.min_value()),
            f(a2.max_value())
        );
        let _ = writeln!(o);
        let _ = writeln!(
            o,
            "{:>7} {:>6} {:>13} {:>5} {:>13} {:>13} {:>13} {:>11} {:>8} {:>13}",
            "cluster", "size", "margin", "A1", "bound", "lemma", "rate", "plateau", "stays", "min c"
        );
        for k in 0..self.sizes.len() {
            let m = &self.assumption1[k];
            let fit = self.series.as_ref().map(|s| &s.fits[k]);
            let _ = writeln!(
                o,
                "{:>7} {:>6} {:>13} {:>5} {:>13} {:>13} {:>13} {:>11} {:>8} {:>13}",
                k,
                self.sizes[k],
                f(m.min_margin),
                if m.pass { "pass" } else { "FAIL" },
                f(self.theorem_bounds[k]),
                f(self.lemma_factors[k]),
                fit.and_then(|x| x.rate).map_or("-".into(), |r| format!("{r:.6e}")),
                fit.and_then(|x| x.plateau_step).map_or("-".into(), |s| s.to_string()),
                fit.map_or("-", |x| if x.stays_below { "yes" } else { "no" }),
                self.smallest_c.as_ref().map_or("-".into(), |c| f(c[k])),
            );
        }
        o
    }

    /// One `key = value` per line.
    pub fn to_key_values(&self) -> String {
        let mut o = String::new();
        let f = |x: T| format!("{:.16e}", x.as_f64());
        let _ = writeln!(o, "n = {}", self.n);
        let _ = writeln!(o, "k = {}", self.sizes.len());
        let _ = writeln!(o, "alpha = {}", f(self.alpha));
        let _ = writeln!(o, "h = {}", f(self.h));
        let _ = writeln!(o, "alpha_h = {}", f(self.alpha * self.h));
        let _ = writeln!(o, "c = {}", f(self.c));
        let _ = writeln!(o, "kappa = {}", f(self.kappa));
        match &self.guideline {
            Some(g) => {
                let _ = writeln!(o, "guideline_alpha_h = {}", f(g.alpha_h));
            }
            None => {
                let _ = writeln!(o, "guideline_alpha_h = undefined");
            }
        }
        let a2 = &self.assumption2;
        let _ = writeln!(o, "assumption1.pass = {}", self.assumption1_pass());
        let _ = writeln!(o, "assumption2.within = {}", a2.count(Verdict::Within));
        let _ = writeln!(o, "assumption2.below = {}", a2.count(Verdict::Below));
        let _ = writeln!(o, "assumption2.above = {}", a2.count(Verdict::Above));
        let _ = writeln!(o, "assumption2.min = {}", f(a2.min_value()));
        let _ = writeln!(o, "assumption2.max = {}", f(a2.max_value()));
        for k in 0..self.sizes.len() {
            let m = &self.assumption1[k];
            let p = format!("cluster.{k}");
            let _ = writeln!(o, "{p}.size = {}", self.sizes[k]);
            let _ = writeln!(o, "{p}.assumption1_margin = {}", f(m.min_margin));
            let _ = writeln!(o, "{p}.assumption1_pass = {}", m.pass);
            if let Some((i, j)) = m.witness {
                let _ = writeln!(o, "{p}.assumption1_witness = {i},{j}");
            }
            let _ = writeln!(o, "{p}.theorem_bound = {}", f(self.theorem_bounds[k]));
            let _ = writeln!(o, "{p}.lemma_factor = {}", f(self.lemma_factors[k]));
            if let Some(s) = &self.series {
                let fit = &s.fits[k];
                if let Some(r) = fit.rate {
                    let _ = writeln!(o, "{p}.rate = {r:.16e}");
                }
                let _ = writeln!(o, "{p}.rate_points = {}", fit.points_used);
                if let Some(st) = fit.plateau_step {
                    let _ = writeln!(o, "{p}.plateau_step = {st}");
                }
                let _ = writeln!(o, "{p}.stays_below = {}", fit.stays_below);
                if let Some(d) = s.last() {
                    let _ = writeln!(o, "{p}.final_diameter = {}", f(d[k]));
                }
            }
            if let Some(c) = &self.smallest_c {
                let _ = writeln!(o, "{p}.smallest_c = {}", f(c[k]));
            }
        }
        o
    }
}
