use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use ultralong_core::harness::mock::{oracle_script, MockServer};
use ultralong_core::packer::format::{read_upkd, write_udoc};
use ultralong_core::packer::Document;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ultralong"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn version_has_build_id() {
    let v = ok(&["--version"]);
    assert!(v.starts_with("ultralong 0.1.0 ("), "{v}");
}

#[test]
fn rope_table_target_and_conflicts() {
    let d = tempfile::tempdir().unwrap();
    let t = d.path().join("t.json");
    let stdout = ok(&["rope-table", "--method", "yarn", "--target", "1048576", "--base-context", "8192", "--output", s(&t)]);
    assert!(stdout.contains("attention_scale"));
    let echo = read_json(&d.path().join("t.json.config.json"));
    assert_eq!(echo["s"], json!(128.0));
    assert_eq!(read_json(&t)["freqs"].as_array().unwrap().len(), 64);

    let again = d.path().join("again.json");
    let cfg = d.path().join("t.json.config.json");
    ok(&["rope-table", "--config", s(&cfg), "--output", s(&again)]);
    assert_eq!(std::fs::read(&t).unwrap(), std::fs::read(&again).unwrap());

    assert_eq!(code(&["rope-table", "--method", "yarn", "--s", "4", "--target", "1048576", "--output", s(&t)]), 2);
    assert_eq!(code(&["rope-table", "--method", "yarn", "--output", s(&t)]), 2);
    assert_eq!(code(&["rope-table", "--set", "nope=1", "--output", s(&t)]), 2);

    let base = d.path().join("base.json");
    let one = d.path().join("one.json");
    ok(&["rope-table", "--output", s(&base)]);
    ok(&["rope-table", "--method", "yarn", "--s", "1", "--output", s(&one)]);
    let (b, o) = (read_json(&base), read_json(&one));
    assert_eq!(b["freqs"], o["freqs"]);
    assert_eq!(o["attention_scale"], json!(1.0));
}

fn tiny_corpus(dir: &Path) -> PathBuf {
    let p = dir.join("docs.jsonl");
    let docs = [
        json!({"id": "a", "source": "web", "tokens": [5, 6, 7, 8, 9]}),
        json!({"id": "b", "source": "web", "tokens": [10, 11, 12]}),
        json!({"id": "c", "source": "book", "tokens": [13, 14, 15, 16, 17, 18, 19]}),
    ];
    let text: String = docs.iter().map(|d| format!("{d}\n")).collect();
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn pack_fixture_accounting_and_reproducibility() {
    let d = tempfile::tempdir().unwrap();
    let input = tiny_corpus(d.path());
    let out = d.path().join("p.upkd");
    let stats = d.path().join("stats.json");
    let stdout = ok(&["pack", "--input", s(&input), "--output", s(&out), "--stats", s(&stats), "--target-len", "4", "--seed", "3"]);
    assert!(stdout.contains("\"accounting_holds\": true"));
    let st = read_json(&stats);
    let g = |k: &str| st["stats"][k].as_u64().unwrap();
    assert_eq!(
        g("resampled_tokens") + g("separators_inserted") + g("pad_tokens"),
        g("sequences") * 4 + g("tokens_dropped")
    );
    assert_eq!(g("input_tokens"), 15);
    let echo_path = d.path().join("p.upkd.config.json");
    let echo = read_json(&echo_path);
    assert_eq!(echo["bucket_bounds"], json!([4096, 8192]));
    // Every document is short, so the largest reachable mass is 0.5 x 15.
    assert_eq!(echo["target_total_tokens"], json!(7));
    let packed = read_upkd(&out).unwrap();
    assert_eq!(packed.sequences.len() as u64, g("sequences"));

    let out2 = d.path().join("q.upkd");
    let stats2 = d.path().join("stats2.json");
    ok(&["pack", "--config", s(&echo_path), "--input", s(&input), "--output", s(&out2), "--stats", s(&stats2)]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&out2).unwrap());

    // Asking for more tokens than the bucket weights can reach is a planning error.
    let big = ["pack", "--input", s(&input), "--output", s(&out2), "--stats", s(&stats2), "--target-total-tokens", "1000"];
    assert_eq!(code(&big), 2);
}

#[test]
fn pack_rejects_corrupt_udoc() {
    let d = tempfile::tempdir().unwrap();
    let udoc = d.path().join("c.udoc");
    write_udoc(&udoc, &[Document::new("a", "s", vec![1, 2, 3])]).unwrap();
    let mut bytes = std::fs::read(&udoc).unwrap();
    bytes[3] = b'X';
    std::fs::write(&udoc, bytes).unwrap();
    let out = d.path().join("p.upkd");
    let stats = d.path().join("s.json");
    assert_eq!(code(&["pack", "--input", s(&udoc), "--output", s(&out), "--stats", s(&stats)]), 3);
    assert_eq!(code(&["pack", "--input", s(&d.path().join("missing")), "--output", s(&out), "--stats", s(&stats)]), 3);
}

fn lines(p: &Path) -> Vec<Value> {
    std::fs::read_to_string(p).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn gen_niah_defaults_and_determinism() {
    let d = tempfile::tempdir().unwrap();
    let a = d.path().join("a.jsonl");
    ok(&["gen-niah", "--output", s(&a)]);
    let cases = lines(&a);
    assert_eq!(cases.len(), 400);
    let b = d.path().join("b.jsonl");
    ok(&["gen-niah", "--config", s(&d.path().join("a.jsonl.config.json")), "--output", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let m = d.path().join("m.jsonl");
    ok(&["gen-niah", "--num-depths", "1", "--max-length", "8000", "--output", s(&m)]);
    let cases = lines(&m);
    assert_eq!(cases.len(), 40);
    assert!(cases.iter().all(|c| c["depth_fractions"] == json!([0.5])));

    let r = d.path().join("r.jsonl");
    ok(&["gen-ruler", "--task", "niah-multi-value", "--max-length", "4000", "--output", s(&r)]);
    let cases = lines(&r);
    assert_eq!(cases.len(), 80);
    assert!(cases.iter().all(|c| c["gold"].as_array().unwrap().len() == 4));
    assert_eq!(code(&["gen-ruler", "--task", "bogus", "--output", s(&r)]), 2);
}

#[test]
fn score_matches_brute_force_fixture() {
    let d = tempfile::tempdir().unwrap();
    let report = d.path().join("report.json");
    let heat = d.path().join("heat.tsv");
    ok(&[
        "score",
        "--config",
        s(&fixture("score_config.json")),
        "--cases",
        s(&fixture("cases.jsonl")),
        "--responses",
        s(&fixture("responses.jsonl")),
        "--output",
        s(&report),
        "--heatmap",
        s(&heat),
    ]);
    let got = read_json(&report);
    let want = read_json(&fixture("expected_report.json"));
    for key in ["buckets", "per_length", "overall", "thresholds"] {
        assert_eq!(got[key], want[key], "{key}");
    }
    assert_eq!(got["grid"]["lengths"], want["grid"]["lengths"]);
    assert_eq!(got["grid"]["depths"], want["grid"]["depths"]);
    assert_eq!(got["grid"]["cells"], want["grid"]["cells"]);
    let got_cases = got["per_case"].as_array().unwrap();
    let want_cases = want["per_case"].as_array().unwrap();
    assert_eq!(got_cases.len(), want_cases.len());
    for (g, w) in got_cases.iter().zip(want_cases) {
        assert_eq!((&g["case_id"], &g["found"], &g["total"]), (&w["case_id"], &w["found"], &w["total"]));
    }
    let tsv = std::fs::read_to_string(&heat).unwrap();
    assert!(tsv.starts_with("depth\t60\t120\t180\t240\n"));
    assert!(tsv.contains("NA"));

    // Re-bucketing through `report` agrees with scoring at those thresholds.
    let heat2 = d.path().join("heat2.tsv");
    let summary = d.path().join("summary.tsv");
    ok(&["report", "--report", s(&report), "--heatmap", s(&heat2), "--summary", s(&summary), "--thresholds", "60,240"]);
    assert_eq!(std::fs::read(&heat).unwrap(), std::fs::read(&heat2).unwrap());
    let text = std::fs::read_to_string(&summary).unwrap();
    assert!(text.contains("bucket\t<=60\t3\t0.6667\t2/3\n"), "{text}");
    assert!(text.contains("overall\tall\t16\t0.6250\t5/8\n"));

    let strict = d.path().join("strict.json");
    ok(&[
        "score",
        "--mode",
        "strict",
        "--cases",
        s(&fixture("cases.jsonl")),
        "--responses",
        s(&fixture("responses.jsonl")),
        "--output",
        s(&strict),
    ]);
    // Cases 3 and 9 only match as substrings of a longer digit run.
    assert_eq!(read_json(&strict)["overall"]["exact"], json!("1/2"));

    let (cases, none) = (fixture("cases.jsonl"), d.path().join("none"));
    assert_eq!(code(&["score", "--cases", s(&cases), "--responses", s(&none), "--output", s(&strict)]), 3);
}

#[test]
fn run_against_mock_endpoint() {
    let d = tempfile::tempdir().unwrap();
    let cases = d.path().join("cases.jsonl");
    ok(&["gen-niah", "--min-length", "50", "--max-length", "100", "--num-lengths", "2", "--num-depths", "3", "--output", s(&cases)]);
    let server = MockServer::start(0, oracle_script(), Some("tok".into())).unwrap();
    let url = server.base_url();
    let resp = d.path().join("resp.jsonl");
    let base = ["run", "--cases", s(&cases), "--output", s(&resp), "--base-url", &url, "--backoff-base-ms", "1"];

    let mut missing = base.to_vec();
    missing.extend(["--auth-env-var", "ULTRALONG_CLI_TEST_UNSET"]);
    assert_eq!(code(&missing), 2);
    assert_eq!(server.requests(), 0);

    let mut authed = base.to_vec();
    authed.extend(["--auth-env-var", "ULTRALONG_CLI_TEST_TOKEN"]);
    let out = bin().args(&authed).env("ULTRALONG_CLI_TEST_TOKEN", "tok").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(lines(&resp).len(), 6);
    let echo = read_json(&d.path().join("resp.jsonl.config.json"));
    assert_eq!(echo["auth_env_var"], json!("ULTRALONG_CLI_TEST_TOKEN"));

    let report = d.path().join("report.json");
    ok(&["score", "--cases", s(&cases), "--responses", s(&resp), "--output", s(&report)]);
    assert_eq!(read_json(&report)["overall"]["exact"], json!("1/1"));

    // Without the token every request is rejected; the run exits as an endpoint failure.
    let mut noauth = base.to_vec();
    noauth.extend(["--retries", "0"]);
    assert_eq!(code(&noauth), 4);
}

fn tiny_model() -> Value {
    json!({
        "layers": 1, "d_model": 16, "heads": 2, "vocab_size": 32, "mlp_hidden": 16,
        "context_length": 32,
        "rope": {"head_dim": 8, "base_theta": 10000.0, "original_context": 32},
        "scaling": {"method": "none"}, "seed": 0
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

#[test]
fn toylab_train_extend_eval() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(
        d.path(),
        "train.json",
        &json!({"model": tiny_model(), "corpus": {"sequences": 16, "min_doc_len": 8, "max_doc_len": 32}, "train": {"steps": 20, "batch_size": 2, "warmup_steps": 2}}),
    );
    let ck = d.path().join("m.ck");
    let rep = d.path().join("m.json");
    ok(&["toylab", "train", "--config", s(&cfg), "--output", s(&ck), "--report", s(&rep), "--seed", "5"]);
    let r = read_json(&rep);
    assert_ne!(r["initial_digest"], r["final_digest"]);
    assert_eq!(r["report"]["steps"].as_array().unwrap().len(), 20);

    let ck2 = d.path().join("m2.ck");
    let rep2 = d.path().join("m2.json");
    ok(&["toylab", "train", "--config", s(&d.path().join("m.ck.config.json")), "--output", s(&ck2), "--report", s(&rep2)]);
    assert_eq!(std::fs::read(&ck).unwrap(), std::fs::read(&ck2).unwrap());

    let frozen = d.path().join("f.ck");
    let frep = d.path().join("f.json");
    ok(&["toylab", "train", "--config", s(&cfg), "--init", s(&ck), "--lr", "0", "--output", s(&frozen), "--report", s(&frep)]);
    let f = read_json(&frep);
    assert_eq!(f["initial_digest"], f["final_digest"]);
    assert_eq!(f["final_digest"], r["final_digest"]);

    let ev = |ck: &Path, out: &Path| {
        ok(&["toylab", "eval", "--checkpoint", s(ck), "--lengths", "16,32", "--num-depths", "3", "--cases-per-cell", "4", "--output", s(out)]);
        std::fs::read(out).unwrap()
    };
    let before = ev(&ck, &d.path().join("e1.json"));
    let ext = d.path().join("x.ck");
    ok(&["toylab", "extend", "--input", s(&ck), "--s", "1", "--output", s(&ext)]);
    assert_eq!(before, ev(&ext, &d.path().join("e2.json")));

    let long = d.path().join("l.ck");
    ok(&["toylab", "extend", "--input", s(&ck), "--method", "ntk-aware", "--s", "2", "--output", s(&long)]);
    assert_eq!(read_json(&d.path().join("l.ck.config.json"))["new_context"], json!(64));
    let out = d.path().join("e3.json");
    ok(&["toylab", "eval", "--checkpoint", s(&long), "--lengths", "64", "--output", s(&out)]);
    assert_eq!(code(&["toylab", "eval", "--checkpoint", s(&ck), "--lengths", "64", "--output", s(&out)]), 2);
    assert_eq!(code(&["toylab", "extend", "--input", s(&ck), "--s", "2", "--new-context", "50", "--output", s(&out)]), 2);
}

#[test]
fn toylab_divergence_is_a_verification_failure() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(
        d.path(),
        "train.json",
        &json!({"model": tiny_model(), "corpus": {"sequences": 4, "min_doc_len": 8, "max_doc_len": 32}, "train": {"steps": 80, "batch_size": 2, "warmup_steps": 0, "clip_norm": 0.0, "lr": 1e300}}),
    );
    let ck = d.path().join("m.ck");
    let rep = d.path().join("m.json");
    assert_eq!(code(&["toylab", "train", "--config", s(&cfg), "--output", s(&ck), "--report", s(&rep)]), 5);
}

#[test]
fn toylab_ablate_structure() {
    let d = tempfile::tempdir().unwrap();
    let stage = |ctx: usize, steps: usize| {
        json!({"context_length": ctx, "method": "yarn", "separator": "special", "steps": steps, "batch_size": 2, "lr": 1e-3, "warmup_steps": 1})
    };
    let exp = json!({
        "model": tiny_model(),
        "base": {"context_length": 32, "method": "none", "separator": "special", "steps": 6, "batch_size": 2, "lr": 1e-3, "warmup_steps": 1},
        "arms": [
            {"name": "one-step", "stages": [stage(128, 4)]},
            {"name": "two-step", "stages": [stage(64, 4), stage(128, 2)]},
            {"name": "begin-end", "stages": [{"context_length": 128, "method": "yarn", "separator": "begin-end", "steps": 4, "batch_size": 2, "lr": 1e-3, "warmup_steps": 1}]}
        ],
        "eval": {"lengths": [32, 64, 128], "num_depths": 2, "cases_per_cell": 2, "bucket_edges": [32, 128], "seed": 1},
        "key_tokens": 6,
        "min_doc_len": 8
    });
    let cfg = write_config(d.path(), "ablate.json", &json!({"experiment": exp}));
    let out = d.path().join("ablate.json.out");
    let grids = d.path().join("grids");
    let stdout = ok(&[
        "toylab", "ablate", "--config", s(&cfg), "--arms", "one-step,two-step", "--seeds", "3", "--output", s(&out), "--grids",
        s(&grids),
    ]);
    assert!(stdout.contains("6 runs"), "{stdout}");
    let r = read_json(&out);
    let rows = r["rows"].as_array().unwrap();
    let runs: Vec<&Value> = rows.iter().filter(|x| x["arm"] != json!("base-unextended")).collect();
    assert_eq!(runs.len(), 6);
    assert!(runs.iter().all(|x| x["budget_tokens"] == json!(1024)));
    assert_eq!(r["seeds"], json!([0, 1, 2]));
    assert_eq!(std::fs::read_dir(&grids).unwrap().count(), 9);
    let echo = read_json(&d.path().join("ablate.json.out.config.json"));
    assert_eq!(echo["experiment"]["arms"].as_array().unwrap().len(), 2);

    // Unequal budgets are refused before any training.
    let mut bad = read_json(&cfg);
    bad["experiment"]["arms"][0]["stages"][0]["steps"] = json!(5);
    let bad = write_config(d.path(), "bad.json", &bad);
    assert_eq!(code(&["toylab", "ablate", "--config", s(&bad), "--output", s(&out)]), 2);
    assert_eq!(code(&["toylab", "ablate", "--config", s(&cfg), "--arms", "nope", "--output", s(&out)]), 2);
}
