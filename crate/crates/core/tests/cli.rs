use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tsne_ee::diagnostics::{nearest_centroid_purity, ClusterAssignment};
use tsne_ee::io::{load_csv, LabelColumn};
use tsne_ee::tsne::Embedding;

fn tsne_ee(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsne-ee"))
        .args(args)
        .current_dir(cwd)
        .env_remove("TSNE_EE_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_then_embed_from_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = tsne_ee(&["gen", "--kind", "gaussian-mixture", "--n", "90", "--k", "3", "--dim", "4", "--out", "mix.csv"], d);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("mixture"));

    let o = tsne_ee(
        &[
            "embed", "--input", "mix.csv", "--perplexity", "10", "--ee-iters", "40", "--post-iters", "20", "--engine", "both",
            "--out", "run",
        ],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(d.join("run/manifest.txt")).unwrap();
    for f in manifest.lines() {
        assert!(d.join("run").join(f).is_file(), "{f} listed but missing");
    }
    assert!(manifest.lines().any(|l| l == "manifest.txt"));
    let config = fs::read_to_string(d.join("run/config.toml")).unwrap();
    assert!(config.contains("alpha_h_request = \"guideline\""));
    assert!(config.contains("source = \"csv\""));

    let t = load_csv::<f64>(d.join("run/embedding.csv"), LabelColumn::Auto).unwrap();
    let labels = t.labels.unwrap();
    let y = Embedding::new(t.dataset.into_points()).unwrap();
    let pi = ClusterAssignment::from_labels(&labels).unwrap();
    assert!(nearest_centroid_purity(&y, &pi) > 0.99);
    let kv = fs::read_to_string(d.join("run/report.kv")).unwrap();
    assert!(kv.contains("purity_spectral"));
    assert!(kv.contains("final_deviation"));
}

#[test]
fn line_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = tsne_ee(&["gen", "--kind", "line3d", "--n", "100", "--seed", "1", "--out", "d.csv"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = tsne_ee(&["embed", "--input", "d.csv", "--engine", "tsne", "--alpha-h", "guideline", "--h", "1", "--out", "run"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("run/snapshots/tsne/step_000250.csv").is_file());
    assert!(d.join("run/plot_tsne_ee.svg").is_file());
}

#[test]
fn divergence_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tsne_ee(
        &["embed", "--generate", "circle", "--n", "40", "--perplexity", "5", "--alpha-h", "1e12", "--h", "1e12", "--out", "d"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
    assert!(tmp.path().join("d/report.txt").is_file());
}

#[test]
fn invalid_requests_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cases: [&[&str]; 5] = [
        &["embed", "--generate", "circle", "--n", "40", "--perplexity", "40"],
        &["embed", "--generate", "circle", "--n", "40", "--alpha-h", "0.5"],
        &["embed", "--input", "missing.csv", "--label-column", "sideways"],
        &["gen", "--kind", "gaussian-mixture", "--k", "5", "--dim", "2", "--out", "x.csv"],
        &["diagnose"],
    ];
    for args in cases {
        let o = tsne_ee(args, d);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    fs::write(d.join("bad.csv"), "1,2\n3,4\n5\n").unwrap();
    let o = tsne_ee(&["embed", "--input", "bad.csv"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn non_empty_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let args = ["embed", "--generate", "line3d", "--n", "30", "--perplexity", "5", "--alpha-h", "3", "--ee-iters", "5", "--out", "r"];
    assert!(tsne_ee(&args, d).status.success());
    assert_eq!(tsne_ee(&args, d).status.code(), Some(2));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert!(tsne_ee(&forced, d).status.success());
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_tsne-ee"))
        .args(["embed", "--generate", "swiss-roll", "--n", "50", "--perplexity", "8", "--ee-iters", "5", "--seed", "4"])
        .current_dir(tmp.path())
        .env("TSNE_EE_OUT", tmp.path().join("root"))
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("root/run-4/manifest.txt").is_file());
}

#[test]
fn diagnose_mixture_and_affinities() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = tsne_ee(
        &["diagnose", "--generate", "gaussian-mixture", "--n", "200", "--k", "2", "--dim", "5", "--perplexity", "90", "--out", "diag"],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let kv = fs::read_to_string(d.join("diag/report.kv")).unwrap();
    assert!(kv.contains("assumption1.pass = true"), "{kv}");

    fs::write(d.join("p.csv"), "0,0.25,0,0\n0.25,0,0,0\n0,0,0,0.25\n0,0,0.25,0\n").unwrap();
    fs::write(d.join("labels.txt"), "0\n0\n1\n1\n").unwrap();
    let o = tsne_ee(&["diagnose", "--affinities", "p.csv", "--labels", "labels.txt", "--alpha-h", "2"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("guideline alpha*h 3.600000e0"));
}

#[test]
fn dynsys_and_compare_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = tsne_ee(&["dynsys", "--trials", "100", "--steps", "3", "--out", "trials.jsonl"], d);
    assert!(o.status.success());
    assert!(stdout(&o).contains("violations = 0"));
    assert_eq!(fs::read_to_string(d.join("trials.jsonl")).unwrap().lines().count(), 100);

    let o = tsne_ee(
        &["compare", "--generate", "gaussian-mixture", "--n", "80", "--k", "2", "--dim", "3", "--perplexity", "10", "--steps", "20"],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = stdout(&o);
    assert_eq!(csv.lines().next().unwrap(), "step,h=1,h=0.5,h=0.25");
    assert_eq!(csv.lines().count(), 22);
}

#[test]
fn gen_from_toml_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("spec.toml"), "kind = \"swiss_roll\"\nturns = 1.5\nnoise = 0.0\nn = 25\nseed = 3\n").unwrap();
    let o = tsne_ee(&["gen", "--spec", "spec.toml", "--out", "roll.csv"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = load_csv::<f64>(d.join("roll.csv"), LabelColumn::Auto).unwrap();
    assert_eq!((t.dataset.n(), t.dataset.dim()), (25, 3));
}

/// Digits 0-3 of an MNIST IDX pair in `$TSNE_EE_MNIST_DIR`, 10000 points.
#[test]
#[ignore = "needs MNIST files in TSNE_EE_MNIST_DIR"]
fn mnist_digits_separate() {
    let dir = std::path::PathBuf::from(std::env::var("TSNE_EE_MNIST_DIR").expect("TSNE_EE_MNIST_DIR"));
    let tmp = tempfile::tempdir().unwrap();
    let images = dir.join("train-images-idx3-ubyte");
    let labels = dir.join("train-labels-idx1-ubyte");
    let o = Command::new(env!("CARGO_BIN_EXE_tsne-ee"))
        .args(["embed", "--idx"])
        .arg(&images)
        .arg("--idx-labels")
        .arg(&labels)
        .args(["--digits", "0,1,2,3", "--limit", "10000", "--engine", "both", "--out"])
        .arg(tmp.path().join("mnist"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let kv = fs::read_to_string(tmp.path().join("mnist/report.kv")).unwrap();
    let purity: f64 = kv
        .lines()
        .find_map(|l| l.strip_prefix("purity_tsne = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(purity > 0.9, "purity {purity}");
}
