mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use common::fixture;
use evcomp::backend::{LanguageModel, LogitServer, ToyTableLM};
use evcomp::harness::report::{self, ScoreRecord};

fn evcomp(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_evcomp"));
    cmd.args(args)
        .env_remove("EVCOMP_COMPRESSION_ENDPOINT")
        .env_remove("EVCOMP_TARGET_ENDPOINT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn config() -> String {
    fixture("capitals.toml").display().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn scores(dir: &Path) -> Vec<ScoreRecord> {
    report::read_jsonl(&dir.join(report::SCORES_FILE)).unwrap()
}

#[test]
fn evaluate_is_deterministic_and_reaggregates() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ra = evcomp(&["--config", &config(), "--out", p(&a), "evaluate"], &[]);
    let rb = evcomp(&["--config", &config(), "--out", p(&b), "evaluate"], &[]);
    assert_eq!(code(&ra), 0, "{}", stderr(&ra));
    assert_eq!(code(&rb), 0);
    assert_eq!(stdout(&ra), stdout(&rb));
    for f in [report::RECORDS_FILE, report::SCORES_FILE, report::TRACES_FILE, report::SUMMARY_FILE] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let table = stdout(&ra);
    assert!(table.contains("Hits=0") && table.contains("Hits=1"), "{table}");

    let re = evcomp(&["--out", p(&a), "evaluate", "--reaggregate"], &[]);
    assert_eq!(code(&re), 0, "{}", stderr(&re));
    assert!(stdout(&re).contains("reaggregate\tmatch"));
    // the reaggregated table is the one printed by the run
    assert!(stdout(&re).starts_with(&table));
}

#[test]
fn tampered_scores_fail_reaggregation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(code(&evcomp(&["--config", &config(), "--out", p(&out), "evaluate"], &[])), 0);
    let path = out.join(report::SCORES_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.pop();
    fs::write(&path, lines.join("\n")).unwrap();
    assert_eq!(code(&evcomp(&["--out", p(&out), "evaluate", "--reaggregate"], &[])), 1);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = tmp.path().join("out");
    let o = evcomp(&["--config", &config(), "--dataset", p(&empty), "--out", p(&out), "compress"], &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = evcomp(&["--config", &config(), "--alpha", "1.5", "--out", p(&out), "evaluate"], &[]);
    assert_eq!(code(&o), 2);
    let o = evcomp(&["--config", &config(), "--out", p(&out), "sweep", "--grid", "0,0.5,0.5"], &[]);
    assert_eq!(code(&o), 2);
    let o = evcomp(&["--config", &config(), "--strategy", "beam", "--out", p(&out), "evaluate"], &[]);
    assert_eq!(code(&o), 2);
    let missing = tmp.path().join("nope.toml");
    assert_eq!(code(&evcomp(&["--config", p(&missing), "evaluate"], &[])), 2);
    assert!(!out.exists());
}

fn write_config(dir: &Path, target: &str) -> String {
    let text = format!(
        "dataset = {:?}\n\n[backends.compression]\nkind = \"toy\"\npath = {:?}\n\n[backends.target]\n{target}\n",
        p(&fixture("capitals.jsonl")),
        p(&fixture("compressor.lm")),
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn reordered_target(dir: &Path) -> std::path::PathBuf {
    let text = fs::read_to_string(fixture("target.lm"))
        .unwrap()
        .replace("@vocab <unk> </s> capital", "@vocab </s> <unk> capital");
    let path = dir.join("reordered.lm");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn incompatible_backends_exit_3_with_fingerprints() {
    let tmp = tempfile::tempdir().unwrap();
    let lm = reordered_target(tmp.path());
    let cfg = write_config(tmp.path(), &format!("kind = \"toy\"\npath = {:?}", p(&lm)));
    let out = tmp.path().join("out");
    let o = evcomp(&["--config", &cfg, "--out", p(&out), "compress"], &[]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    let comp = ToyTableLM::load(&fixture("compressor.lm")).unwrap();
    let tgt = ToyTableLM::load(&lm).unwrap();
    assert!(err.contains(&comp.descriptor().fingerprint().to_hex()), "{err}");
    assert!(err.contains(&tgt.descriptor().fingerprint().to_hex()), "{err}");
}

#[test]
fn exact_accuracy_never_exceeds_containment() {
    let tmp = tempfile::tempdir().unwrap();
    for mode in ["containment", "exact"] {
        for alpha in ["0", "0.5", "1"] {
            let out = tmp.path().join(format!("{mode}-{alpha}"));
            let o = evcomp(
                &["--config", &config(), "--metric-mode", mode, "--alpha", alpha, "--out", p(&out), "evaluate"],
                &[],
            );
            assert_eq!(code(&o), 0);
            for s in scores(&out) {
                assert!(s.acc_exact <= s.acc_containment);
                let expected = if mode == "exact" { s.acc_exact } else { s.acc_containment };
                assert_eq!(s.acc, expected);
            }
        }
    }
}

#[test]
fn sweep_writes_one_row_and_report_per_grid_value() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let o = evcomp(&["--config", &config(), "--out", p(&out), "sweep", "--grid", "0,0.5,1"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(out.join("sweep.tsv")).unwrap();
    assert_eq!(table, stdout(&o));
    assert_eq!(table.lines().count(), 4);
    for (alpha, strategy) in [("0", "compression-only"), ("1", "generation-only")] {
        let single = tmp.path().join(strategy);
        let o = evcomp(&["--config", &config(), "--strategy", strategy, "--out", p(&single), "evaluate"], &[]);
        assert_eq!(code(&o), 0);
        assert_eq!(scores(&out.join(format!("alpha-{alpha}"))), scores(&single));
    }
}

#[test]
fn compress_then_answer_equals_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let (c, a, e) = (tmp.path().join("c"), tmp.path().join("a"), tmp.path().join("e"));
    let o = evcomp(&["--config", &config(), "--out", p(&c), "compress"], &[]);
    assert_eq!(code(&o), 0);
    let summary = stdout(&o);
    assert!(summary.contains("examples\t4"), "{summary}");
    assert!(summary.contains("mean_compression_rate"));
    assert!(scores(&c).is_empty());
    assert_eq!(code(&evcomp(&["--config", &config(), "--out", p(&a), "answer", "--evidence", p(&c)], &[])), 0);
    assert_eq!(code(&evcomp(&["--config", &config(), "--out", p(&e), "evaluate"], &[])), 0);
    assert_eq!(
        fs::read(a.join(report::RECORDS_FILE)).unwrap(),
        fs::read(e.join(report::RECORDS_FILE)).unwrap()
    );
}

#[test]
fn nothing_is_written_outside_the_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    fs::create_dir(&fx).unwrap();
    for f in ["capitals.toml", "capitals.jsonl", "compressor.lm", "target.lm"] {
        fs::copy(fixture(f), fx.join(f)).unwrap();
    }
    let out = tmp.path().join("out");
    let cfg = fx.join("capitals.toml");
    for args in [
        vec!["compress"],
        vec!["evaluate"],
        vec!["sweep"],
        vec!["score", "--text", "capital is paris"],
    ] {
        let mut full = vec!["--config", p(&cfg), "--out", p(&out)];
        full.extend(args);
        let o = Command::new(env!("CARGO_BIN_EXE_evcomp"))
            .args(&full)
            .current_dir(tmp.path())
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{full:?}: {}", stderr(&o));
    }
    let mut top: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    top.sort();
    assert_eq!(top, vec!["fx", "out"]);
    assert_eq!(fs::read_dir(&fx).unwrap().count(), 4);
}

#[test]
fn score_prints_perplexity() {
    let o = evcomp(
        &["--config", &config(), "score", "--prefix", "france Context:", "--text", "largest city is london"],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["tokens"], 4);
    // 0.6 * 1 * 1 * 0.5 over four tokens
    let expected = (-(0.6f64.ln() + 0.5f64.ln()) / 4.0).exp();
    assert!((v["perplexity"].as_f64().unwrap() - expected).abs() < 1e-12);
}

fn serve(lm_path: &Path) -> LogitServer {
    let lm: Arc<dyn LanguageModel> = Arc::new(ToyTableLM::load(lm_path).unwrap());
    LogitServer::spawn("127.0.0.1:0", lm).unwrap()
}

fn remote_target(endpoint: &str) -> String {
    format!(
        "kind = \"remote\"\nendpoint = {endpoint:?}\nvocab = {:?}",
        p(&fixture("shared.vocab"))
    )
}

#[test]
fn remote_target_matches_local_toy() {
    let server = serve(&fixture("target.lm"));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &remote_target(&server.local_addr().to_string()));
    let (remote, local) = (tmp.path().join("remote"), tmp.path().join("local"));
    let o = evcomp(&["--config", &cfg, "--out", p(&remote), "evaluate"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&evcomp(&["--config", &config(), "--out", p(&local), "evaluate"], &[])), 0);
    // the client renormalizes what it receives, which can move log-probs by an ulp
    for (r, l) in scores(&remote).into_iter().zip(scores(&local)) {
        assert_eq!((&r.id, r.acc, r.f1, r.hits, r.cr), (&l.id, l.acc, l.f1, l.hits, l.cr));
        assert!((r.ppl.unwrap() - l.ppl.unwrap()).abs() < 1e-12);
    }
    assert_eq!(
        fs::read_to_string(remote.join(report::RECORDS_FILE))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["compressed_evidence"].clone())
            .collect::<Vec<_>>(),
        fs::read_to_string(local.join(report::RECORDS_FILE))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["compressed_evidence"].clone())
            .collect::<Vec<_>>()
    );
}

#[test]
fn endpoint_environment_variable_overrides_config() {
    let server = serve(&fixture("target.lm"));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &remote_target("127.0.0.1:1"));
    let out = tmp.path().join("out");
    let addr = server.local_addr().to_string();
    let o = evcomp(
        &["--config", &cfg, "--out", p(&out), "evaluate"],
        &[("EVCOMP_TARGET_ENDPOINT", &addr)],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn remote_vocabulary_mismatch_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let server = serve(&reordered_target(tmp.path()));
    let cfg = write_config(tmp.path(), &remote_target(&server.local_addr().to_string()));
    let o = evcomp(&["--config", &cfg, "--out", p(&tmp.path().join("out")), "evaluate"], &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("fingerprint"), "{}", stderr(&o));
}

#[test]
fn unreachable_backend_fails_examples_and_exits_4() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &remote_target(&format!("127.0.0.1:{port}")));
    let out = tmp.path().join("out");
    let o = evcomp(&["--config", &cfg, "--out", p(&out), "evaluate"], &[]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let summary = report::read_summary(&out).unwrap();
    assert_eq!(summary.failed, 4);
}
