//! End-to-end tests of the `privfed` binary: real processes, real files,
//! real sockets, and the documented exit-code contract (0 success, 2 for
//! usage or data errors, 1 otherwise).

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_privfed"))
}

struct Dirs {
    data: tempfile::TempDir,
    out: tempfile::TempDir,
}

fn dirs() -> Dirs {
    Dirs { data: tempfile::tempdir().unwrap(), out: tempfile::tempdir().unwrap() }
}

fn write_cfg(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

/// Run to completion, asserting the expected exit code; returns stderr.
fn run_expect(cmd: &mut Command, code: i32) -> String {
    let out = cmd.output().unwrap();
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code}\nstdout: {}\nstderr: {stderr}",
        String::from_utf8_lossy(&out.stdout)
    );
    stderr
}

fn gen_data(d: &Dirs, cfg: &Path) {
    run_expect(
        bin()
            .arg("gen-data")
            .arg("--config")
            .arg(cfg)
            .arg("--data-dir")
            .arg(d.data.path())
            .arg("--out-dir")
            .arg(d.out.path())
            .arg("--log-level")
            .arg("quiet"),
        0,
    );
}

const SMALL_CFG: &str = "nodes = 2\nper_node = 24\ntest = 9\nside = 8\narch = mlp\nhidden = 10\n\
                         rounds = 2\nepochs = 1\nlr = 0.2\nbatch_size = 8\nseed = 5\n";

#[test]
fn usage_errors_exit_2_and_success_exits_0() {
    // clap-level: unknown subcommand and bad flag values.
    run_expect(bin().arg("no-such-command"), 2);
    run_expect(bin().args(["attack", "--scenario", "bogus"]), 2);
    run_expect(bin().args(["infer-serve", "--model", "m.pmd1", "--port", "99999"]), 2);

    // Unknown config key: caught before any work happens.
    let d = dirs();
    let cfg = write_cfg(d.out.path(), "not_a_real_key = 1\n");
    let err = run_expect(
        bin()
            .arg("gen-data")
            .arg("--config")
            .arg(&cfg)
            .arg("--data-dir")
            .arg(d.data.path())
            .arg("--out-dir")
            .arg(d.out.path()),
        2,
    );
    assert!(err.contains("not_a_real_key"), "stderr names the bad key: {err}");

    // Missing config file.
    run_expect(
        bin()
            .arg("gen-data")
            .arg("--config")
            .arg(d.out.path().join("absent.cfg"))
            .arg("--data-dir")
            .arg(d.data.path())
            .arg("--out-dir")
            .arg(d.out.path()),
        2,
    );

    // A well-formed run succeeds and leaves a manifest behind.
    let cfg = write_cfg(d.out.path(), SMALL_CFG);
    gen_data(&d, &cfg);
    assert!(d.out.path().join("manifest.json").exists());
    assert!(d.data.path().join("dataset.json").exists());
}

#[test]
fn missing_dataset_is_a_data_error() {
    let d = dirs();
    let err = run_expect(
        bin()
            .arg("train-local")
            .arg("--data-dir")
            .arg(d.data.path())
            .arg("--out-dir")
            .arg(d.out.path())
            .arg("--log-level")
            .arg("quiet"),
        2,
    );
    assert!(err.contains("gen-data"), "error suggests the fix: {err}");
}

#[test]
fn data_dir_env_var_is_honored() {
    let d = dirs();
    let cfg = write_cfg(d.out.path(), SMALL_CFG);
    run_expect(
        bin()
            .env("PRIMIA_DATA_DIR", d.data.path())
            .arg("gen-data")
            .arg("--config")
            .arg(&cfg)
            .arg("--out-dir")
            .arg(d.out.path())
            .arg("--log-level")
            .arg("quiet"),
        0,
    );
    assert!(d.data.path().join("node0/train-images.idx").exists());

    // Neither the flag nor the variable: a usage error naming the variable.
    let err = run_expect(
        bin()
            .env_remove("PRIMIA_DATA_DIR")
            .arg("train-local")
            .arg("--out-dir")
            .arg(d.out.path()),
        2,
    );
    assert!(err.contains("PRIMIA_DATA_DIR"), "{err}");
}

#[test]
fn federated_training_is_idempotent_across_processes() {
    let d = dirs();
    let cfg = write_cfg(d.out.path(), SMALL_CFG);
    gen_data(&d, &cfg);

    let mut runs = Vec::new();
    for _ in 0..2 {
        run_expect(
            bin()
                .arg("train-federated")
                .arg("--secure")
                .arg("--config")
                .arg(&cfg)
                .arg("--data-dir")
                .arg(d.data.path())
                .arg("--out-dir")
                .arg(d.out.path())
                .arg("--log-level")
                .arg("quiet"),
            0,
        );
        runs.push((
            std::fs::read(d.out.path().join("model.pmd1")).unwrap(),
            std::fs::read(d.out.path().join("rounds.jsonl")).unwrap(),
            std::fs::read(d.out.path().join("metrics.json")).unwrap(),
        ));
    }
    assert_eq!(runs[0].0, runs[1].0, "same seed, same checkpoint bytes");
    assert_eq!(runs[0].1, runs[1].1, "same round telemetry");
    assert_eq!(runs[0].2, runs[1].2, "same metrics");

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.out.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "train-federated");
    assert_eq!(manifest["seed"], 5, "config file seed reaches the manifest");
    assert_eq!(manifest["settings"]["secure"], "true");
    for (_, path) in manifest["artifacts"].as_object().unwrap() {
        assert!(Path::new(path.as_str().unwrap()).exists());
    }
}

/// Spawn `infer-serve --port 0` and scrape the bound address from stdout.
fn spawn_server(model: &Path, out_dir: &Path, sessions: usize) -> (Child, String) {
    let mut child = bin()
        .arg("infer-serve")
        .arg("--model")
        .arg(model)
        .arg("--port")
        .arg("0")
        .arg("--sessions")
        .arg(sessions.to_string())
        .arg("--out-dir")
        .arg(out_dir)
        .arg("--log-level")
        .arg("quiet")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let stdout = child.stdout.take().unwrap();
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    (child, addr)
}

#[test]
fn serve_and_client_round_trip_over_a_real_socket() {
    let d = dirs();
    let cfg = write_cfg(d.out.path(), SMALL_CFG);
    gen_data(&d, &cfg);
    run_expect(
        bin()
            .arg("train-local")
            .arg("--config")
            .arg(&cfg)
            .arg("--data-dir")
            .arg(d.data.path())
            .arg("--out-dir")
            .arg(d.out.path())
            .arg("--log-level")
            .arg("quiet"),
        0,
    );

    let model = d.out.path().join("model.pmd1");
    let serve_out = tempfile::tempdir().unwrap();
    let (mut child, addr) = spawn_server(&model, serve_out.path(), 1);
    let (host, port) = addr.rsplit_once(':').unwrap();

    let client_out = tempfile::tempdir().unwrap();
    run_expect(
        bin()
            .arg("infer-client")
            .arg("--host")
            .arg(host)
            .arg("--port")
            .arg(port)
            .arg("--images")
            .arg(d.data.path().join("test-images.idx"))
            .arg("--labels")
            .arg(d.data.path().join("test-labels.idx"))
            .arg("--norm")
            .arg(d.out.path().join("norm.json"))
            .arg("--probabilities")
            .arg("--out-dir")
            .arg(client_out.path())
            .arg("--log-level")
            .arg("quiet"),
        0,
    );
    let status = child.wait().unwrap();
    assert!(status.success(), "server exits cleanly after its session quota");

    let preds: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(client_out.path().join("predictions.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(preds["labels"].as_array().unwrap().len(), 9);
    assert_eq!(preds["probabilities"].as_array().unwrap().len(), 9);
    assert!(preds["scored"]["accuracy"].as_f64().unwrap() >= 0.0);

    let serve_report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(serve_out.path().join("serve_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(serve_report["sessions"], 1);
    assert_eq!(serve_report["images"], 9);
    assert_eq!(serve_report["failures"], 0);
}

#[test]
fn benchmark_attack_and_compare_commands_produce_their_reports() {
    let d = dirs();

    // benchmark --latency-ms 10,100 --protocol fss --repeats 2 --out ...
    let bench_path = d.out.path().join("bench.json");
    run_expect(
        bin()
            .args(["benchmark", "--latency-ms", "10,100", "--protocol", "fss", "--repeats", "2"])
            .arg("--out")
            .arg(&bench_path)
            .arg("--config")
            .arg(write_cfg(d.out.path(), "arch = mlp\nhidden = 8\nside = 8\n"))
            .arg("--out-dir")
            .arg(d.out.path())
            .arg("--log-level")
            .arg("quiet"),
        0,
    );
    let bench: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&bench_path).unwrap()).unwrap();
    assert_eq!(bench["deterministic_across_repeats"], true);
    let points = bench["benchmark"]["points"].as_array().unwrap();
    assert_eq!(points.len(), 2);
    for p in points {
        assert!(
            p["fss_ns"].as_u64().unwrap() < p["baseline_ns"].as_u64().unwrap(),
            "fss beats the multi-round baseline at every latency"
        );
    }

    // attack --scenario local --config ... --out report.json
    let atk_cfg = write_cfg(
        d.data.path(),
        "nodes = 2\nside = 8\nhidden = 10\niterations = 50\nrestarts = 1\nseed = 5\n",
    );
    let report_path = d.out.path().join("report.json");
    run_expect(
        bin()
            .args(["attack", "--scenario", "local"])
            .arg("--config")
            .arg(&atk_cfg)
            .arg("--out")
            .arg(&report_path)
            .arg("--out-dir")
            .arg(d.out.path())
            .arg("--log-level")
            .arg("quiet"),
        0,
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["scenario"], "local");
    assert!(report["quality"]["mse"].as_f64().unwrap().is_finite());
    assert!(d.out.path().join("recon.idx").exists());
    assert!(d.out.path().join("truth.idx").exists());

    // compare over two prediction files against IDX truth.
    let cfg = write_cfg(d.out.path(), SMALL_CFG);
    gen_data(&d, &cfg);
    let mk_preds = |name: &str, labels: &[u8]| {
        let p = d.out.path().join(name);
        let doc = serde_json::json!({ "labels": labels });
        std::fs::write(&p, serde_json::to_string(&doc).unwrap()).unwrap();
        p
    };
    let truth_path = d.data.path().join("test-labels.idx");
    let truth_n = 9;
    let a = mk_preds("a.json", &vec![0u8; truth_n]);
    let b = mk_preds("b.json", &vec![1u8; truth_n]);
    let compare_path = d.out.path().join("compare.json");
    run_expect(
        bin()
            .arg("compare")
            .arg("--preds")
            .arg(&a)
            .arg("--preds")
            .arg(&b)
            .arg("--truth")
            .arg(&truth_path)
            .arg("--out")
            .arg(&compare_path)
            .arg("--out-dir")
            .arg(d.out.path())
            .arg("--log-level")
            .arg("quiet"),
        0,
    );
    let cmp: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&compare_path).unwrap()).unwrap();
    assert_eq!(cmp["samples"], truth_n);
    assert_eq!(cmp["models"].as_array().unwrap().len(), 2);
    assert_eq!(cmp["pairs"].as_array().unwrap().len(), 1);
    assert_eq!(cmp["pairs"][0]["kappa"].as_f64().unwrap(), 0.0, "constant disagreement");

    // One prediction file is not enough to compare.
    run_expect(
        bin()
            .arg("compare")
            .arg("--preds")
            .arg(&a)
            .arg("--truth")
            .arg(&truth_path)
            .arg("--out-dir")
            .arg(d.out.path()),
        2,
    );
}

#[test]
fn stats_command_writes_secure_and_plain_agreement() {
    let d = dirs();
    let cfg = write_cfg(d.out.path(), "nodes = 3\nper_node = 15\ntest = 0\nside = 8\nseed = 2\n");
    gen_data(&d, &cfg);
    run_expect(
        bin()
            .arg("stats")
            .arg("--config")
            .arg(&cfg)
            .arg("--data-dir")
            .arg(d.data.path())
            .arg("--out-dir")
            .arg(d.out.path())
            .arg("--log-level")
            .arg("quiet"),
        0,
    );
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.out.path().join("stats.json")).unwrap())
            .unwrap();
    assert_eq!(doc["nodes"].as_array().unwrap().len(), 3);
    assert!(doc["mean_abs_error"].as_f64().unwrap() < 1e-4);
}
