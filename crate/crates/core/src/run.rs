//! Resolved run configurations and the run directory they produce.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::{affinities_from_data, AffinityMatrix, Dataset};
use crate::diagnostics::{guideline_alpha_h, nearest_centroid_purity, ClusterAssignment, DiagnosticsReport, DiameterTracker};
use crate::error::{Error, Result};
use crate::generate::{generate, GeneratorSpec};
use crate::io::{format_csv, load_csv, load_idx, load_idx_labels, write_file};
use crate::plot::render_svg;
use crate::spectral::{build_transition_matrix, max_deviation, rescale_for_limit, spectral_iterate};
use crate::tsne::{run_early_exaggeration, step_in_place, Embedding, ExaggerationConfig, Snapshot};

/// Environment variable naming the default root for run directories.
pub const OUTPUT_ROOT_ENV: &str = "TSNE_EE_OUT";
pub const DEFAULT_PERPLEXITY: f64 = 30.0;
pub const DEFAULT_N: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum InputSource {
    Csv {
        path: PathBuf,
        label_column: String,
    },
    /// Unsigned-byte IDX images, optionally filtered by label and subsampled.
    Idx {
        images: PathBuf,
        labels: Option<PathBuf>,
        digits: Vec<i64>,
        limit: Option<usize>,
    },
    Generator { generator: GeneratorSpec },
}

/// Points and optional labels, however they were obtained.
#[derive(Clone, Debug)]
pub struct Input {
    pub dataset: Dataset<f64>,
    pub labels: Option<Vec<i64>>,
}

impl InputSource {
    /// `seed` drives the IDX subsample.
    pub fn load(&self, seed: u64) -> Result<Input> {
        match self {
            InputSource::Csv { path, label_column } => {
                let t = load_csv(path, label_column.parse()?)?;
                Ok(Input {
                    dataset: t.dataset,
                    labels: t.labels,
                })
            }
            InputSource::Generator { generator } => {
                let g = generate(generator)?;
                Ok(Input {
                    dataset: g.dataset,
                    labels: Some(g.labels),
                })
            }
            InputSource::Idx { images, labels, digits, limit } => {
                let x = load_idx::<f64>(images)?;
                let l = labels.as_ref().map(load_idx_labels).transpose()?;
                if let Some(l) = &l {
                    if l.len() != x.n() {
                        return Err(Error::DimensionMismatch(format!("{} labels for {} images", l.len(), x.n())));
                    }
                }
                let mut keep: Vec<usize> = (0..x.n())
                    .filter(|&i| digits.is_empty() || l.as_ref().is_some_and(|l| digits.contains(&l[i])))
                    .collect();
                if !digits.is_empty() && l.is_none() {
                    return Err(Error::InvalidParameter("a digit filter needs a label file".into()));
                }
                if let Some(m) = *limit {
                    if m < keep.len() {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        let mut picked = rand::seq::index::sample(&mut rng, keep.len(), m).into_vec();
                        picked.sort_unstable();
                        keep = picked.into_iter().map(|k| keep[k]).collect();
                    }
                }
                let rows: Vec<f64> = keep.iter().flat_map(|&i| x.point(i).to_vec()).collect();
                let data = Array2::from_shape_vec((keep.len(), x.dim()), rows).expect("rectangular");
                Ok(Input {
                    dataset: Dataset::new(data)?,
                    labels: l.map(|l| keep.iter().map(|&i| l[i]).collect()),
                })
            }
        }
    }
}

/// How `alpha h` is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaH {
    Guideline,
    Value(f64),
    /// A multiple of `n`.
    TimesN(f64),
}

impl FromStr for AlphaH {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |t: &str| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| Error::InvalidParameter(format!("alpha h must be `guideline`, a number or `<x>n`, got {s:?}")))
        };
        if s == "guideline" {
            Ok(AlphaH::Guideline)
        } else if let Some(x) = s.strip_suffix('n') {
            Ok(AlphaH::TimesN(num(x)?))
        } else {
            Ok(AlphaH::Value(num(s)?))
        }
    }
}

impl fmt::Display for AlphaH {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaH::Guideline => f.write_str("guideline"),
            AlphaH::Value(v) => write!(f, "{v}"),
            AlphaH::TimesN(x) => write!(f, "{x}n"),
        }
    }
}

impl AlphaH {
    pub fn resolve(&self, p: &AffinityMatrix<f64>, pi: &ClusterAssignment) -> Result<f64> {
        match *self {
            AlphaH::Guideline => Ok(guideline_alpha_h(p, pi)?.alpha_h),
            AlphaH::Value(v) => Ok(v),
            AlphaH::TimesN(x) => Ok(x * p.n() as f64),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Tsne,
    Spectral,
    Both,
}

impl Engine {
    fn tsne(self) -> bool {
        matches!(self, Engine::Tsne | Engine::Both)
    }

    fn spectral(self) -> bool {
        matches!(self, Engine::Spectral | Engine::Both)
    }
}

/// What the user asked for, before `alpha h` is resolved against the data.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRequest {
    pub input: InputSource,
    pub perplexity: f64,
    pub alpha_h: AlphaH,
    pub h: f64,
    pub ee_iterations: usize,
    pub post_iterations: usize,
    /// Post-phase step size; defaults to `h`.
    pub post_h: Option<f64>,
    pub engine: Engine,
    pub seed: u64,
    pub output: PathBuf,
    pub snapshot_stride: usize,
    pub c: f64,
}

/// A fully concrete run, persisted as `config.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub perplexity: f64,
    pub alpha_h_request: String,
    pub alpha_h: f64,
    pub alpha: f64,
    pub h: f64,
    pub ee_iterations: usize,
    pub post_iterations: usize,
    pub post_h: f64,
    pub engine: Engine,
    pub seed: u64,
    pub output: PathBuf,
    pub snapshot_stride: usize,
    pub c: f64,
    pub n: usize,
    pub input_dim: usize,
    pub clusters: usize,
    pub input: InputSource,
}

/// Default run directory: `$TSNE_EE_OUT/<name>` or `runs/<name>`.
pub fn default_output(name: &str) -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
        .join(name)
}

/// Writes files under a root and remembers them for the manifest.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    /// Creates `root`, which must be missing or empty unless `force` clears it.
    pub fn create(root: &Path, force: bool) -> Result<Self> {
        if root.exists() {
            let nonempty = fs::read_dir(root).map_err(|e| Error::io(root, e))?.next().is_some();
            if nonempty {
                if !force {
                    return Err(Error::InvalidParameter(format!(
                        "output directory {} is not empty (use --force to replace it)",
                        root.display()
                    )));
                }
                fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
            }
        }
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        write_file(self.root.join(rel), contents)?;
        self.written.push(rel.to_owned());
        Ok(())
    }

    /// Writes `manifest.txt` (sorted, listing itself) and returns the entries.
    pub fn finish(mut self) -> Result<Vec<String>> {
        self.written.push("manifest.txt".into());
        self.written.sort();
        self.written.dedup();
        let mut text = self.written.join("\n");
        text.push('\n');
        write_file(self.root.join("manifest.txt"), text)?;
        Ok(self.written)
    }
}

/// What a finished (or diverged) run reports back.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub config: RunConfig,
    pub files: Vec<String>,
    /// The divergence error, when the exaggerated run blew up.
    pub diverged: Option<String>,
    pub report_text: String,
}

fn snapshot_name(engine: &str, step: usize) -> String {
    format!("snapshots/{engine}/step_{step:06}.csv")
}

fn write_snapshots(dir: &mut RunDir, engine: &str, snaps: &[Snapshot<f64>], labels: Option<&[i64]>) -> Result<()> {
    for s in snaps {
        dir.write(&snapshot_name(engine, s.step), format_csv(s.embedding.points(), labels, "y")?)?;
    }
    Ok(())
}

/// Loads the input, resolves `alpha h`, and runs the requested engines into
/// a fresh run directory.
pub fn execute(req: &RunRequest, force: bool) -> Result<RunSummary> {
    if !(req.h > 0.0 && req.h.is_finite()) {
        return Err(Error::InvalidParameter(format!("h must be > 0, got {}", req.h)));
    }
    if !(req.c >= 0.0) {
        return Err(Error::InvalidParameter(format!("c must be >= 0, got {}", req.c)));
    }
    let input = req.input.load(req.seed)?;
    let n = input.dataset.n();
    let p = affinities_from_data(&input.dataset, req.perplexity)?;
    let pi = match &input.labels {
        Some(l) => ClusterAssignment::from_labels(l)?,
        None => ClusterAssignment::single(n)?,
    };
    let alpha_h = req.alpha_h.resolve(&p, &pi)?;
    let ee = ExaggerationConfig::from_alpha_h(alpha_h, req.h, req.ee_iterations)?.with_capture_every(req.snapshot_stride);
    let post_h = req.post_h.unwrap_or(req.h);
    if !(post_h >= 0.0 && post_h.is_finite()) {
        return Err(Error::InvalidParameter(format!("post-phase h must be >= 0, got {post_h}")));
    }
    let config = RunConfig {
        perplexity: req.perplexity,
        alpha_h_request: req.alpha_h.to_string(),
        alpha_h,
        alpha: ee.alpha,
        h: ee.h,
        ee_iterations: req.ee_iterations,
        post_iterations: req.post_iterations,
        post_h,
        engine: req.engine,
        seed: req.seed,
        output: req.output.clone(),
        snapshot_stride: req.snapshot_stride,
        c: req.c,
        n,
        input_dim: input.dataset.dim(),
        clusters: pi.k(),
        input: req.input.clone(),
    };
    let spectral_a = if req.engine.spectral() {
        Some(build_transition_matrix(&rescale_for_limit(&p, alpha_h)?)?)
    } else {
        None
    };

    let mut dir = RunDir::create(&req.output, force)?;
    dir.write("config.toml", toml::to_string(&config).map_err(|e| Error::Serialize(e.to_string()))?)?;
    let labels = input.labels.as_deref();
    let y0 = Embedding::<f64>::random_init(n, 2, req.seed);
    let mut report = DiagnosticsReport::build(&p, &pi, ee.alpha, ee.h, req.c)?;
    let mut extra = Vec::new();
    let mut diverged = None;

    let mut tsne_final = None;
    if req.engine.tsne() {
        let mut tracker = DiameterTracker::new(pi.clone());
        match run_early_exaggeration(&y0, &p, &ee, Some(&mut tracker)) {
            Ok(traj) => {
                write_snapshots(&mut dir, "tsne", &traj.snapshots, labels)?;
                report = report.with_trajectory(tracker, &p, &pi)?;
                let series = report.series.as_ref().expect("attached");
                dir.write("diameters_tsne.csv", series.to_csv())?;
                let ee_final = traj.final_embedding;
                dir.write("plot_tsne_ee.svg", render_svg(&ee_final, labels, "t-SNE after early exaggeration")?)?;
                let mut y = ee_final.clone();
                let mut post_err = None;
                for t in 1..=req.post_iterations {
                    if let Err(e) = step_in_place(&mut y, &p, 1.0, post_h, req.ee_iterations + t) {
                        post_err = Some(e);
                        break;
                    }
                }
                match post_err {
                    Some(e) if e.is_divergence() => diverged = Some(e.to_string()),
                    Some(e) => return Err(e),
                    None => {
                        dir.write("embedding.csv", format_csv(y.points(), labels, "y")?)?;
                        if req.post_iterations > 0 {
                            dir.write("plot_tsne.svg", render_svg(&y, labels, "t-SNE")?)?;
                        }
                        if input.labels.is_some() {
                            extra.push(("purity_tsne".to_owned(), format!("{:.16e}", nearest_centroid_purity(&y, &pi))));
                        }
                    }
                }
                tsne_final = Some(ee_final);
            }
            Err(e) if e.is_divergence() => diverged = Some(e.to_string()),
            Err(e) => return Err(e),
        }
    }

    if let Some(a) = &spectral_a {
        let mut tracker = DiameterTracker::new(pi.clone());
        let traj = spectral_iterate(a, &y0, req.ee_iterations, req.snapshot_stride, Some(&mut tracker))?;
        write_snapshots(&mut dir, "spectral", &traj.snapshots, labels)?;
        let series = if req.engine.tsne() {
            tracker.finish(Some(&report.theorem_bounds))?
        } else {
            report = report.with_trajectory(tracker, &p, &pi)?;
            report.series.clone().expect("attached")
        };
        dir.write("diameters_spectral.csv", series.to_csv())?;
        dir.write("spectral_embedding.csv", format_csv(traj.final_embedding.points(), labels, "y")?)?;
        dir.write("plot_spectral.svg", render_svg(&traj.final_embedding, labels, "spectral limit")?)?;
        if input.labels.is_some() {
            extra.push((
                "purity_spectral".to_owned(),
                format!("{:.16e}", nearest_centroid_purity(&traj.final_embedding, &pi)),
            ));
        }
        if let Some(t) = &tsne_final {
            extra.push(("final_deviation".to_owned(), format!("{:.16e}", max_deviation(t, &traj.final_embedding))));
        }
    }

    let mut kv = format!(
        "engine = {}\nperplexity = {:.16e}\nseed = {}\n",
        serde_json::to_value(req.engine).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
        req.perplexity,
        req.seed
    );
    kv.push_str(&report.to_key_values());
    let mut text = report.to_text();
    if let Some(d) = &diverged {
        kv.push_str(&format!("diverged = {d}\n"));
        text.push_str(&format!("\nDIVERGED: {d}\n"));
    }
    for (k, v) in &extra {
        kv.push_str(&format!("{k} = {v}\n"));
        text.push_str(&format!("{k:<17} {v}\n"));
    }
    dir.write("report.kv", &kv)?;
    dir.write("report.txt", &text)?;
    let files = dir.finish()?;
    Ok(RunSummary {
        config,
        files,
        diverged,
        report_text: text,
    })
}

/// Deviation series of the exaggerated and limiting engines for several step
/// sizes at one `alpha h`, as CSV with one column per `h`.
pub fn compare_csv(series: &[(f64, Vec<f64>)]) -> String {
    let mut out = String::from("step");
    for (h, _) in series {
        out.push_str(&format!(",h={h}"));
    }
    out.push('\n');
    let len = series.iter().map(|s| s.1.len()).max().unwrap_or(0);
    for t in 0..len {
        out.push_str(&t.to_string());
        for (_, s) in series {
            match s.get(t) {
                Some(v) => out.push_str(&format!(",{v:.16e}")),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::GeneratorKind;

    fn request(dir: &Path, alpha_h: AlphaH, engine: Engine) -> RunRequest {
        RunRequest {
            input: InputSource::Generator {
                generator: GeneratorSpec::new(GeneratorKind::mixture(3, 5), 60, 2),
            },
            perplexity: 10.0,
            alpha_h,
            h: 1.0,
            ee_iterations: 30,
            post_iterations: 5,
            post_h: None,
            engine,
            seed: 4,
            output: dir.to_path_buf(),
            snapshot_stride: 10,
            c: 10.0,
        }
    }

    #[test]
    fn alpha_h_parsing() {
        assert_eq!("guideline".parse::<AlphaH>().unwrap(), AlphaH::Guideline);
        assert_eq!("12.5".parse::<AlphaH>().unwrap(), AlphaH::Value(12.5));
        assert_eq!("0.1n".parse::<AlphaH>().unwrap(), AlphaH::TimesN(0.1));
        assert!("-1".parse::<AlphaH>().is_err());
        assert!("fast".parse::<AlphaH>().is_err());
        assert_eq!(AlphaH::TimesN(2.0).to_string(), "2n");
    }

    #[test]
    fn run_directory_is_complete() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("run");
        let s = execute(&request(&out, AlphaH::TimesN(0.1), Engine::Both), false).unwrap();
        assert!(s.diverged.is_none());
        for f in [
            "config.toml",
            "report.txt",
            "report.kv",
            "embedding.csv",
            "spectral_embedding.csv",
            "diameters_tsne.csv",
            "diameters_spectral.csv",
            "plot_tsne_ee.svg",
            "plot_tsne.svg",
            "plot_spectral.svg",
            "snapshots/tsne/step_000000.csv",
            "snapshots/tsne/step_000030.csv",
            "snapshots/spectral/step_000020.csv",
            "manifest.txt",
        ] {
            assert!(s.files.contains(&f.to_owned()), "{f} missing from manifest");
        }
        let mut on_disk = Vec::new();
        for e in walk(&out) {
            on_disk.push(e.strip_prefix(&out).unwrap().to_string_lossy().replace('\\', "/"));
        }
        on_disk.sort();
        assert_eq!(on_disk, s.files);
        let config: RunConfig = toml::from_str(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
        assert_eq!(config, s.config);
        assert!((config.alpha_h - 6.0).abs() < 1e-12);
        assert!(execute(&request(&out, AlphaH::TimesN(0.1), Engine::Both), false).is_err());
        execute(&request(&out, AlphaH::TimesN(0.1), Engine::Both), true).unwrap();
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn guideline_run_and_divergence() {
        let tmp = tempfile::tempdir().unwrap();
        let s = execute(&request(&tmp.path().join("g"), AlphaH::Guideline, Engine::Tsne), false).unwrap();
        assert!(s.diverged.is_none());
        assert!(s.config.alpha_h > 0.0);
        let mut r = request(&tmp.path().join("d"), AlphaH::Value(1e12), Engine::Tsne);
        r.h = 1e12;
        let s = execute(&r, false).unwrap();
        assert!(s.diverged.is_some());
        assert!(s.files.contains(&"report.kv".to_owned()));
    }

    #[test]
    fn too_small_alpha_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let r = execute(&request(&tmp.path().join("x"), AlphaH::Value(0.5), Engine::Tsne), false);
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
        assert!(!tmp.path().join("x").exists());
    }

    #[test]
    fn compare_csv_layout() {
        let csv = compare_csv(&[(1.0, vec![0.0, 0.5]), (0.5, vec![0.0, 0.25])]);
        assert_eq!(csv.lines().next().unwrap(), "step,h=1,h=0.5");
        assert_eq!(csv.lines().count(), 3);
    }
}
