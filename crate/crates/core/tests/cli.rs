use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use adaptdhm::cli::{read_sweep, CentersReport, Manifest, RunReport};
use adaptdhm::metrics::MetricReport;

const SMALL: &[&str] = &[
    "--set",
    "synth.n_train=3000",
    "--set",
    "synth.n_test=1000",
    "--set",
    "hidden=16,8",
    "--set",
    "batch_size=128",
];

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaptdhm"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn binary")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small(extra: &[&str]) -> Vec<String> {
    SMALL.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn ok_small(dir: &Path, extra: &[&str]) -> String {
    let args = small(extra);
    ok(dir, &args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_writes_deterministic_files_and_echoes_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["--set", "synth.n_train=1000", "--set", "synth.n_test=200", "--seed", "4"];
    for out in ["a", "b"] {
        let mut full = args.to_vec();
        full.extend(["--out", out, "generate"]);
        ok(tmp.path(), &full);
    }
    let train = fs::read_to_string(tmp.path().join("a/train.csv")).unwrap();
    assert_eq!(train.lines().count(), 1001);
    assert_eq!(fs::read_to_string(tmp.path().join("a/test.csv")).unwrap().lines().count(), 201);
    for file in ["train.csv", "test.csv", "manifest.json"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(file)).unwrap(),
            fs::read(tmp.path().join("b").join(file)).unwrap(),
            "{file} differs between runs"
        );
    }
    let manifest: Manifest = read_json(tmp.path().join("a/manifest.json"));
    assert_eq!(manifest.synth_config.n_train, 1000);
    assert_eq!(manifest.synth_config.n_test, 200);
    assert_eq!(manifest.synth_config.seed, 4);
    assert_eq!(manifest.n_train, 1000);
}

/// One MLP copy from its layer widths.
fn p_mlp(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[test]
fn train_is_deterministic_and_reports_parameter_counts() {
    let tmp = tempfile::tempdir().unwrap();
    ok_small(tmp.path(), &["--out", "data", "generate"]);
    for out in ["r1", "r2"] {
        ok(
            tmp.path(),
            &[
                "--set", "data_dir=data", "--set", "hidden=16,8", "--set", "batch_size=128",
                "--set", "epochs=2", "--set", "num_clusters=3", "--out", out, "train",
            ],
        );
    }
    let r1: RunReport = read_json(tmp.path().join("r1/report.json"));
    let mut r2: RunReport = read_json(tmp.path().join("r2/report.json"));
    // the config echo records each run's own output directory
    r2.config.out_dir = r1.config.out_dir.clone();
    assert_eq!(r1.without_timing(), r2.without_timing());
    assert_eq!(
        fs::read(tmp.path().join("r1/checkpoint.json")).unwrap(),
        fs::read(tmp.path().join("r2/checkpoint.json")).unwrap()
    );
    assert_eq!(r1.epochs.len(), 2);
    let losses: Vec<f64> = r1.epochs.iter().map(|e| e.train_loss).collect();
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(r1.epochs[1].cumulative_seconds >= r1.epochs[0].cumulative_seconds);
    assert_eq!(r1.epochs[0].cumulative_seconds, r1.epochs[0].seconds);

    let manifest: Manifest = read_json(tmp.path().join("data/manifest.json"));
    let dim = r1.config.model.embedding_dim;
    let widths = vec![manifest.schema.fields.len() * dim, 16, 8, 1];
    let p = p_mlp(&widths);
    let embeddings: usize = manifest.schema.fields.iter().map(|f| f.vocab_size * dim).sum();
    assert_eq!(r1.parameters.mlp_total, 4 * p);
    assert_eq!(r1.parameters.embeddings, embeddings);
    assert_eq!(r1.parameters.total, 4 * p + embeddings);
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("exp.conf"),
        "# small run\nkind = dnn\nepochs = 3\nsynth.n_train = 2000\nsynth.n_test = 500\nhidden = 8\n",
    )
    .unwrap();
    ok(tmp.path(), &["--config", "exp.conf", "--set", "epochs=1", "--out", "o", "train"]);
    let report: RunReport = read_json(tmp.path().join("o/report.json"));
    assert_eq!(report.model_kind.as_str(), "dnn");
    assert_eq!(report.epochs.len(), 1);
    assert_eq!(report.config.model.hidden, vec![8]);
}

#[test]
fn eval_is_read_only_and_per_domain_aucs_bracket_gauc() {
    let tmp = tempfile::tempdir().unwrap();
    ok_small(tmp.path(), &["--out", "m", "train"]);
    let first = ok_small(tmp.path(), &["--out", "e1", "eval", "--checkpoint", "m/checkpoint.json"]);
    let second = ok_small(tmp.path(), &["--out", "e2", "--threads", "3", "eval", "--checkpoint", "m/checkpoint.json"]);
    assert_eq!(first, second);
    let report: MetricReport = read_json(tmp.path().join("e1/eval.json"));
    let trained: RunReport = read_json(tmp.path().join("m/report.json"));
    assert_eq!(&report, &trained.epochs.last().unwrap().metrics);

    assert!(report.purity.is_some(), "planted labels give purity");
    assert_eq!(report.per_domain_count.values().sum::<usize>(), report.records);
    let aucs: Vec<f64> = report.per_domain_auc.values().copied().collect();
    assert!(!aucs.is_empty());
    assert!(aucs.iter().all(|a| (0.0..=1.0).contains(a)));
    let lo = aucs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = aucs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let g = report.gauc.unwrap();
    assert!(lo <= g && g <= hi, "gauc {g} outside [{lo}, {hi}]");
}

#[test]
fn eval_rejects_a_checkpoint_with_another_schema() {
    let tmp = tempfile::tempdir().unwrap();
    ok_small(tmp.path(), &["--out", "m", "--set", "epochs=1", "train"]);
    let args = small(&["--set", "synth.content_fields=c0:10", "eval", "--checkpoint", "m/checkpoint.json"]);
    let out = run(tmp.path(), &args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
}

#[test]
fn inspect_centers_prints_a_symmetric_unit_diagonal_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        tmp.path(),
        &["--set", "epochs=3", "--set", "batch_size=256", "--seed", "1", "--out", "m", "train"],
    );
    let text = ok(tmp.path(), &["--out", "m", "inspect-centers", "--checkpoint", "m/checkpoint.json"]);
    let report: CentersReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report, read_json(tmp.path().join("m/centers.json")));
    assert_eq!(report.num_clusters, 3);
    assert_eq!(report.centers.len(), 3);
    assert!(report.centers.iter().all(|c| c.len() == report.dim));
    for i in 0..3 {
        assert!((report.cosine[i][i] - 1.0).abs() <= 1e-9);
        for j in 0..3 {
            assert_eq!(report.cosine[i][j], report.cosine[j][i]);
            if i != j {
                assert!(report.cosine[i][j] < 0.5, "centers {i},{j} cosine {}", report.cosine[i][j]);
            }
        }
    }
}

#[test]
fn inspect_centers_rejects_baselines() {
    let tmp = tempfile::tempdir().unwrap();
    ok_small(tmp.path(), &["--set", "kind=dnn", "--set", "epochs=1", "--out", "m", "train"]);
    let out = run(tmp.path(), &["inspect-centers", "--checkpoint", "m/checkpoint.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("adaptdhm"));
}

#[test]
fn sweep_writes_one_row_per_k() {
    let tmp = tempfile::tempdir().unwrap();
    ok_small(tmp.path(), &["--set", "epochs=1", "--out", "s2", "sweep-k", "--k-list", "1,3"]);
    let rows = read_sweep(&tmp.path().join("s2/sweep_k.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![1, 3]);
    assert!(rows.iter().all(|r| r.auc.is_some() && r.gauc.is_some()));

    ok_small(tmp.path(), &["--set", "epochs=1", "--out", "s1", "sweep-k", "--k-list", "1"]);
    assert_eq!(read_sweep(&tmp.path().join("s1/sweep_k.csv")).unwrap().len(), 1);
}

#[test]
fn adaptdhm_counts_fewer_mlp_flops_than_shared_bottom_when_k_plus_1_below_m() {
    let tmp = tempfile::tempdir().unwrap();
    let flops = |kind: &str| {
        let out = format!("f_{kind}");
        ok_small(
            tmp.path(),
            &["--set", &format!("kind={kind}"), "--set", "num_clusters=3", "--set", "synth.num_domains=6", "--set", "epochs=1", "--out", &out, "train"],
        );
        let report: RunReport = read_json(tmp.path().join(out).join("report.json"));
        report.epochs[0].mlp_flops
    };
    let adapt = flops("adaptdhm");
    let shared_bottom = flops("shared_bottom");
    assert!(adapt < shared_bottom, "adaptdhm {adapt} vs shared_bottom {shared_bottom}");
}

#[test]
fn k1_with_identity_branch_matches_dnn_auc() {
    let tmp = tempfile::tempdir().unwrap();
    let auc = |extra: &[&str], out: &str| {
        let mut args = extra.to_vec();
        args.extend(["--out", out, "train"]);
        let report: MetricReport = serde_json::from_str(&ok_small(tmp.path(), &args)).unwrap();
        report.auc.unwrap()
    };
    let k1 = auc(&["--set", "num_clusters=1", "--set", "freeze_branches=true"], "k1");
    let dnn = auc(&["--set", "kind=dnn"], "dnn");
    assert!((k1 - dnn).abs() <= 0.005, "K=1 {k1} vs dnn {dnn}");
}

#[test]
fn missing_inputs_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [
        &["--set", "data_dir=nowhere", "train"],
        &["--config", "missing.conf", "train"],
        &["eval", "--checkpoint", "missing.json"],
        &["--set", "no_such_key=1", "train"],
    ];
    for args in cases {
        let out = run(tmp.path(), args);
        assert!(!out.status.success(), "{args:?} succeeded");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.starts_with("error: "), "{args:?}: {stderr}");
    }
}
