use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use num_rational::Ratio;
use ultralong_core::evalgen::{generate_niah, write_cases, EvalCase, NiahConfig};
use ultralong_core::harness::mock::{oracle_script, MockReply, MockServer};
use ultralong_core::harness::{
    aggregate, read_responses, run, score_files, write_responses, CaseScore, EndpointConfig, ScoringMode, Status,
    DEFAULT_THRESHOLDS,
};
use ultralong_core::Error;

fn small_cases(n_lengths: usize) -> Vec<EvalCase> {
    generate_niah(&NiahConfig {
        min_length: 40,
        max_length: 40 * n_lengths as u64,
        num_lengths: n_lengths,
        ..Default::default()
    })
    .unwrap()
}

fn endpoint(server: &MockServer) -> EndpointConfig {
    EndpointConfig {
        base_url: server.base_url(),
        max_concurrency: 8,
        retries: 2,
        backoff_base_ms: 1,
        request_timeout_secs: 10.0,
        ..Default::default()
    }
}

#[test]
fn pairs_every_case_with_bounded_concurrency() {
    let dir = tempfile::tempdir().unwrap();
    let cases = small_cases(40);
    assert_eq!(cases.len(), 400);
    let cf = dir.path().join("cases.jsonl");
    write_cases(&cf, &cases).unwrap();
    let inner = oracle_script();
    let server = MockServer::start(
        0,
        Arc::new(move |r| {
            let mut reply = inner(r);
            reply.delay = Duration::from_millis(2);
            reply
        }),
        None,
    )
    .unwrap();
    let out = dir.path().join("responses.jsonl");
    let summary = run(&cf, &endpoint(&server), &out, false).unwrap();
    summary.check().unwrap();
    assert_eq!(summary.requests, 400);
    assert!(server.peak_in_flight() <= 8);
    let records = read_responses(&out).unwrap();
    assert_eq!(records.len(), 400);
    let ids: Vec<&str> = records.iter().map(|r| r.case_id.as_str()).collect();
    let mut want: Vec<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
    want.sort();
    assert_eq!(ids, want);
    assert!(records.iter().all(|r| r.prompt_tokens.is_some()));

    let scores = score_files(&cf, &out, ScoringMode::Substring).unwrap();
    let report = aggregate(scores, &DEFAULT_THRESHOLDS).unwrap();
    assert_eq!(report.overall.mean, 1.0);
}

#[test]
fn resume_sends_only_missing_cases_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cases = small_cases(40);
    let cf = dir.path().join("cases.jsonl");
    write_cases(&cf, &cases).unwrap();
    let out = dir.path().join("responses.jsonl");

    let first = MockServer::start(0, oracle_script(), None).unwrap();
    run(&cf, &endpoint(&first), &out, false).unwrap().check().unwrap();
    // Simulate an interrupt after 250 answers.
    let mut records = read_responses(&out).unwrap();
    records.truncate(250);
    write_responses(&out, &records).unwrap();

    let second = MockServer::start(0, oracle_script(), None).unwrap();
    let s = run(&cf, &endpoint(&second), &out, true).unwrap();
    assert_eq!((s.skipped, s.attempted, s.requests), (250, 150, 150));
    assert_eq!(second.requests(), 150);
    let complete = std::fs::read(&out).unwrap();
    assert_eq!(read_responses(&out).unwrap().len(), 400);

    let third = MockServer::start(0, oracle_script(), None).unwrap();
    let s = run(&cf, &endpoint(&third), &out, true).unwrap();
    assert_eq!((s.attempted, third.requests()), (0, 0));
    assert_eq!(std::fs::read(&out).unwrap(), complete);
}

#[test]
fn retry_exhaustion_records_http_status() {
    let dir = tempfile::tempdir().unwrap();
    let cases = &small_cases(1)[..1];
    let cf = dir.path().join("cases.jsonl");
    write_cases(&cf, cases).unwrap();
    let server = MockServer::start(0, Arc::new(|_| MockReply::status(500)), None).unwrap();
    let out = dir.path().join("r.jsonl");
    let s = run(&cf, &endpoint(&server), &out, false).unwrap();
    assert_eq!(server.requests(), 3);
    assert!(matches!(s.check(), Err(Error::Endpoint(_))));
    let r = read_responses(&out).unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].status, Status::Error);
    assert_eq!(r[0].error_kind.as_deref(), Some("http_status"));
    assert_eq!(r[0].latency_ms, None);

    // Transient failures recover within the retry budget.
    let flaky = MockServer::start(
        0,
        Arc::new(|r| if r.index < 2 { MockReply::status(503) } else { MockReply::ok("ok") }),
        None,
    )
    .unwrap();
    let s = run(&cf, &endpoint(&flaky), &out, true).unwrap();
    s.check().unwrap();
    assert_eq!(flaky.requests(), 3);
}

#[test]
fn auth_token_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cf = dir.path().join("cases.jsonl");
    write_cases(&cf, &small_cases(1)[..2]).unwrap();
    let server = MockServer::start(0, oracle_script(), Some("sekrit".into())).unwrap();
    let out = dir.path().join("r.jsonl");
    let mut ep = endpoint(&server);
    ep.auth_env_var = Some("ULTRALONG_TEST_MISSING_TOKEN".into());
    assert!(matches!(run(&cf, &ep, &out, false), Err(Error::Config(_))));
    assert_eq!(server.requests(), 0);

    std::env::set_var("ULTRALONG_TEST_TOKEN", "sekrit");
    ep.auth_env_var = Some("ULTRALONG_TEST_TOKEN".into());
    run(&cf, &ep, &out, false).unwrap().check().unwrap();

    ep.auth_env_var = None;
    let s = run(&cf, &ep, &out, false).unwrap();
    assert_eq!(s.errors, 2);
    assert_eq!(server.requests(), 4);
}

#[test]
fn unreachable_endpoint_yields_error_records() {
    let dir = tempfile::tempdir().unwrap();
    let cf = dir.path().join("cases.jsonl");
    write_cases(&cf, &small_cases(1)[..3]).unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let ep = EndpointConfig {
        base_url: format!("http://127.0.0.1:{port}/v1"),
        retries: 1,
        backoff_base_ms: 1,
        ..Default::default()
    };
    let out = dir.path().join("r.jsonl");
    let s = run(&cf, &ep, &out, false).unwrap();
    assert_eq!(s.errors, 3);
    let r = read_responses(&out).unwrap();
    assert!(r.iter().all(|x| x.error_kind.as_deref() == Some("connect")));
}

#[test]
fn malformed_case_file_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let cf = dir.path().join("cases.jsonl");
    std::fs::write(&cf, "not json\n").unwrap();
    let server = MockServer::start(0, oracle_script(), None).unwrap();
    let err = run(&cf, &endpoint(&server), &dir.path().join("r.jsonl"), false).unwrap_err();
    assert!(matches!(err, Error::Format { .. }));
}

/// Recomputes every mean from per-case scores by direct enumeration.
fn brute_force(scores: &[CaseScore], thresholds: &[u64]) -> (BTreeMap<u64, Ratio<i128>>, Ratio<i128>) {
    let mean = |xs: Vec<&CaseScore>| {
        let n = xs.len() as i128;
        xs.iter().map(|s| Ratio::new(s.found as i128, s.total as i128)).sum::<Ratio<i128>>() / n
    };
    let mut buckets = BTreeMap::new();
    for &t in thresholds {
        let xs: Vec<&CaseScore> = scores.iter().filter(|s| s.target_length <= t).collect();
        if !xs.is_empty() {
            buckets.insert(t, mean(xs));
        }
    }
    (buckets, mean(scores.iter().collect()))
}

#[test]
fn aggregation_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let cases = small_cases(12);
    let cf = dir.path().join("cases.jsonl");
    write_cases(&cf, &cases).unwrap();
    // Answer correctly for roughly two thirds of prompts.
    let inner = oracle_script();
    let server = MockServer::start(
        0,
        Arc::new(move |r| if r.prompt.len() % 3 == 0 { MockReply::ok("no idea") } else { inner(r) }),
        None,
    )
    .unwrap();
    let out = dir.path().join("r.jsonl");
    run(&cf, &endpoint(&server), &out, false).unwrap();
    let scores = score_files(&cf, &out, ScoringMode::Substring).unwrap();
    let thresholds = [100, 250, 480];
    let report = aggregate(scores.clone(), &thresholds).unwrap();
    let (buckets, overall) = brute_force(&scores, &thresholds);
    assert_eq!(report.overall.ratio(), overall);
    assert_eq!(report.buckets.keys().copied().collect::<Vec<_>>(), buckets.keys().copied().collect::<Vec<_>>());
    for (t, m) in &buckets {
        assert_eq!(report.buckets[t].ratio(), *m);
    }
    for cell in &report.grid.cells {
        let xs: Vec<&CaseScore> =
            scores.iter().filter(|s| s.target_length == cell.length && s.depth == cell.depth).collect();
        let n = xs.len() as i128;
        let m: Ratio<i128> = xs.iter().map(|s| s.exact()).sum::<Ratio<i128>>() / n;
        assert_eq!(cell.mean.ratio(), m);
    }
    let covered: Vec<BTreeSet<&str>> = thresholds
        .iter()
        .map(|&t| scores.iter().filter(|s| s.target_length <= t).map(|s| s.case_id.as_str()).collect())
        .collect();
    assert!(covered.windows(2).all(|w| w[0].is_subset(&w[1])));
}
