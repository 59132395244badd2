//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on I/O failures or failed dynamical-system
//! checks, 2 on invalid input or parameters, 3 when an embedding diverges.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::affinity::{affinities_from_data, load_affinities, AffinityMatrix, Normalization};
use crate::diagnostics::{ClusterAssignment, DiagnosticsReport};
use crate::dynsys::{run_trials, TrialPlan};
use crate::error::{Error, Result};
use crate::generate::{generate, GeneratorKind, GeneratorSpec};
use crate::io::{load_labels, read_matrix, save_dataset, write_file};
use crate::run::{compare_csv, default_output, execute, AlphaH, Engine, InputSource, RunRequest, DEFAULT_N, DEFAULT_PERPLEXITY};
use crate::spectral::compare_trajectories;
use crate::tsne::{ExaggerationConfig, DEFAULT_CAPTURE_EVERY, DEFAULT_EE_ITERATIONS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "tsne-ee", version, about = "Early-exaggeration t-SNE, its spectral limit, and cluster diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run exaggerated t-SNE and/or the spectral limit into a run directory.
    Embed(EmbedArgs),
    /// Print the clustering diagnostics for a dataset or affinity matrix.
    Diagnose(DiagnoseArgs),
    /// Random trials of the discrete dynamical system.
    Dynsys(DynsysArgs),
    /// Deviation between exaggerated t-SNE and the spectral limit for several h.
    Compare(CompareArgs),
    /// Write a synthetic dataset as CSV.
    Gen(GenArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Line3d,
    SwissRoll,
    GaussianMixture,
    Circle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Tsne,
    Spectral,
    Both,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Tsne => Engine::Tsne,
            EngineArg::Spectral => Engine::Spectral,
            EngineArg::Both => Engine::Both,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct GenParams {
    #[arg(long, default_value_t = DEFAULT_N)]
    pub n: usize,
    /// Mixture components.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Mixture ambient dimension.
    #[arg(long, default_value_t = 25)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 20.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.5)]
    pub turns: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Seed of the synthetic data.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

impl GenParams {
    fn spec(&self, kind: KindArg) -> GeneratorSpec {
        let kind = match kind {
            KindArg::Line3d => GeneratorKind::Line3d,
            KindArg::Circle => GeneratorKind::Circle,
            KindArg::SwissRoll => GeneratorKind::SwissRoll {
                turns: self.turns,
                noise: self.noise,
            },
            KindArg::GaussianMixture => GeneratorKind::GaussianMixture {
                k: self.k,
                dim: self.dim,
                sigma: self.sigma,
                separation: self.separation,
            },
        };
        GeneratorSpec::new(kind, self.n, self.data_seed)
    }
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// CSV of points, one per row, optionally with a label column.
    #[arg(long, conflicts_with_all = ["idx", "generate"])]
    pub input: Option<PathBuf>,
    /// auto, last or none.
    #[arg(long, default_value = "auto")]
    pub label_column: String,
    /// IDX image file (unsigned bytes, scaled to [0, 1]).
    #[arg(long, conflicts_with = "generate")]
    pub idx: Option<PathBuf>,
    #[arg(long, requires = "idx")]
    pub idx_labels: Option<PathBuf>,
    /// Keep only these labels, e.g. `0,1,2,3`.
    #[arg(long, value_delimiter = ',', requires = "idx_labels")]
    pub digits: Vec<i64>,
    /// Random subsample size (seeded by --seed).
    #[arg(long, requires = "idx")]
    pub limit: Option<usize>,
    /// Synthetic input instead of a file.
    #[arg(long, value_enum)]
    pub generate: Option<KindArg>,
    #[command(flatten)]
    pub gen: GenParams,
}

impl InputArgs {
    fn source(&self) -> Result<InputSource> {
        if let Some(path) = &self.input {
            self.label_column.parse::<crate::io::LabelColumn>()?;
            Ok(InputSource::Csv {
                path: path.clone(),
                label_column: self.label_column.clone(),
            })
        } else if let Some(images) = &self.idx {
            Ok(InputSource::Idx {
                images: images.clone(),
                labels: self.idx_labels.clone(),
                digits: self.digits.clone(),
                limit: self.limit,
            })
        } else if let Some(kind) = self.generate {
            Ok(InputSource::Generator {
                generator: self.gen.spec(kind),
            })
        } else {
            Err(Error::InvalidParameter("one of --input, --idx or --generate is required".into()))
        }
    }
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = DEFAULT_PERPLEXITY)]
    pub perplexity: f64,
    /// `guideline`, a number, or a multiple of n such as `0.1n`.
    #[arg(long, default_value = "guideline")]
    pub alpha_h: String,
    #[arg(long, default_value_t = 1.0)]
    pub h: f64,
    #[arg(long, default_value_t = DEFAULT_EE_ITERATIONS)]
    pub ee_iters: usize,
    /// Plain gradient steps after exaggeration.
    #[arg(long, default_value_t = 0)]
    pub post_iters: usize,
    /// Step size after exaggeration (defaults to --h).
    #[arg(long)]
    pub post_h: Option<f64>,
    #[arg(long, value_enum, default_value = "tsne")]
    pub engine: EngineArg,
    /// Seed of the initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run directory (default `$TSNE_EE_OUT/run-<seed>`, else `runs/run-<seed>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace a non-empty run directory.
    #[arg(long)]
    pub force: bool,
    /// Snapshot every this many steps.
    #[arg(long, default_value_t = DEFAULT_CAPTURE_EVERY)]
    pub stride: usize,
    #[arg(long, default_value_t = crate::diagnostics::DEFAULT_C)]
    pub c: f64,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Precomputed affinity matrix (CSV) instead of points.
    #[arg(long, conflicts_with_all = ["input", "idx", "generate"], requires = "labels")]
    pub affinities: Option<PathBuf>,
    /// tsne_sum_one or spectral_row_bounded.
    #[arg(long, default_value = "tsne_sum_one")]
    pub normalization: String,
    /// One integer label per line, for --affinities.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PERPLEXITY)]
    pub perplexity: f64,
    #[arg(long, default_value = "guideline")]
    pub alpha_h: String,
    #[arg(long, default_value_t = 1.0)]
    pub h: f64,
    #[arg(long, default_value_t = crate::diagnostics::DEFAULT_C)]
    pub c: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write report.txt and report.kv here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DynsysArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    #[arg(long, default_value_t = 2)]
    pub n_min: usize,
    #[arg(long, default_value_t = 50)]
    pub n_max: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub max_eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON lines, one record per trial.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = DEFAULT_PERPLEXITY)]
    pub perplexity: f64,
    #[arg(long, default_value = "guideline")]
    pub alpha_h: String,
    /// Step sizes to compare at fixed alpha h.
    #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.25")]
    pub hs: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV of the deviation series (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_enum, required_unless_present = "spec")]
    pub kind: Option<KindArg>,
    #[command(flatten)]
    pub params: GenParams,
    /// Same as --data-seed.
    #[arg(long, conflicts_with = "data_seed")]
    pub seed: Option<u64>,
    /// TOML generator spec, replacing the flags above.
    #[arg(long, conflicts_with = "kind")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        e if e.is_divergence() => EXIT_DIVERGED,
        Error::Io { .. } | Error::Serialize(_) => EXIT_FAILURE,
        _ => EXIT_INVALID,
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Embed(a) => embed(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Dynsys(a) => dynsys(a),
        Command::Compare(a) => compare(a),
        Command::Gen(a) => gen(a),
    }
}

fn embed(a: EmbedArgs) -> Result<i32> {
    let req = RunRequest {
        input: a.input.source()?,
        perplexity: a.perplexity,
        alpha_h: a.alpha_h.parse()?,
        h: a.h,
        ee_iterations: a.ee_iters,
        post_iterations: a.post_iters,
        post_h: a.post_h,
        engine: a.engine.into(),
        seed: a.seed,
        output: a.out.unwrap_or_else(|| default_output(&format!("run-{}", a.seed))),
        snapshot_stride: a.stride,
        c: a.c,
    };
    let s = execute(&req, a.force)?;
    print!("{}", s.report_text);
    println!("wrote {} files to {}", s.files.len(), req.output.display());
    match s.diverged {
        Some(d) => {
            eprintln!("error: {d}");
            Ok(EXIT_DIVERGED)
        }
        None => Ok(EXIT_OK),
    }
}

fn affinities_and_labels(input: &InputArgs, perplexity: f64, seed: u64) -> Result<(AffinityMatrix<f64>, ClusterAssignment)> {
    let data = input.source()?.load(seed)?;
    let p = affinities_from_data(&data.dataset, perplexity)?;
    let pi = match &data.labels {
        Some(l) => ClusterAssignment::from_labels(l)?,
        None => ClusterAssignment::single(data.dataset.n())?,
    };
    Ok((p, pi))
}

fn diagnose(a: DiagnoseArgs) -> Result<i32> {
    let (p, pi) = match &a.affinities {
        Some(path) => {
            let norm: Normalization = a.normalization.parse()?;
            let p = load_affinities(read_matrix::<f64>(path)?, norm)?;
            let labels = load_labels(a.labels.as_ref().expect("required by clap"))?;
            (p, ClusterAssignment::from_labels(&labels)?)
        }
        None => affinities_and_labels(&a.input, a.perplexity, a.seed)?,
    };
    if pi.n() != p.n() {
        return Err(Error::DimensionMismatch(format!("{} labels for {} points", pi.n(), p.n())));
    }
    let alpha_h = a.alpha_h.parse::<AlphaH>()?.resolve(&p, &pi)?;
    let cfg = ExaggerationConfig::from_alpha_h(alpha_h, a.h, 0)?;
    let report = DiagnosticsReport::build(&p, &pi, cfg.alpha, cfg.h, a.c)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(dir) = &a.out {
        write_file(dir.join("report.txt"), &text)?;
        write_file(dir.join("report.kv"), report.to_key_values())?;
    }
    Ok(EXIT_OK)
}

fn dynsys(a: DynsysArgs) -> Result<i32> {
    let plan = TrialPlan {
        trials: a.trials,
        steps: a.steps,
        n_range: (a.n_min, a.n_max),
        dims: a.dims,
        max_eps: a.max_eps,
        seed: a.seed,
    };
    let records = run_trials(&plan)?;
    if let Some(path) = &a.out {
        let mut lines = String::new();
        for r in &records {
            lines.push_str(&r.to_json_line());
            lines.push('\n');
        }
        write_file(path, lines)?;
    }
    let violations: usize = records.iter().map(|r| r.violations).sum();
    let failed = records.iter().filter(|r| r.violations > 0).count();
    let fired: usize = records.iter().map(|r| r.contraction_steps).sum();
    println!("trials = {}", records.len());
    println!("failed_trials = {failed}");
    println!("violations = {violations}");
    println!("contraction_steps = {fired}");
    Ok(if violations == 0 { EXIT_OK } else { EXIT_FAILURE })
}

fn compare(a: CompareArgs) -> Result<i32> {
    let (p, pi) = affinities_and_labels(&a.input, a.perplexity, a.seed)?;
    let alpha_h = a.alpha_h.parse::<AlphaH>()?.resolve(&p, &pi)?;
    let mut series = Vec::new();
    for &h in &a.hs {
        let cfg = ExaggerationConfig::from_alpha_h(alpha_h, h, a.steps)?;
        let dev = compare_trajectories(&p, &cfg, a.steps, a.seed)?;
        eprintln!("h = {h}: final deviation {:.6e}", dev.last().copied().unwrap_or(0.0));
        series.push((h, dev));
    }
    let csv = compare_csv(&series);
    match &a.out {
        Some(path) => write_file(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}

fn gen(a: GenArgs) -> Result<i32> {
    let spec = match (&a.spec, a.kind) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<GeneratorSpec>(&text).map_err(|e| Error::Parse {
                path: path.clone(),
                location: e.span().map(|s| format!("byte {}", s.start)).unwrap_or_else(|| "input".into()),
                message: e.message().to_owned(),
            })?
        }
        (None, Some(kind)) => {
            let mut params = a.params.clone();
            params.data_seed = a.seed.unwrap_or(params.data_seed);
            params.spec(kind)
        }
        (None, None) => return Err(Error::InvalidParameter("--kind or --spec is required".into())),
    };
    let g = generate::<f64>(&spec)?;
    save_dataset(&a.out, &g.dataset, Some(&g.labels))?;
    println!("{}", g.description);
    Ok(EXIT_OK)
}
