use std::time::Duration;

use readscale_fetch::stub::StubProvider;
use readscale_fetch::{fetch_counts, Cache, FetchError, ProviderConfig};

fn config(url: String) -> ProviderConfig {
    let mut c = ProviderConfig::new(url, "READSCALE_PROVIDER_KEY");
    c.backoff_initial_ms = 10;
    c.backoff_max_ms = 40;
    c.rate_limit = 50.0;
    c
}

fn dois(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[tokio::test]
async fn threshold_filters_low_matches() {
    let stub = StubProvider::builder()
        .answer("10.1/high", 31, 0.95)
        .answer("10.1/low", 12, 0.80)
        .answer("10.1/edge", 7, 0.90)
        .start()
        .await;
    let dir = tempfile::tempdir().unwrap();
    let mut cache = Cache::open(dir.path().join("cache.jsonl")).unwrap();
    let out = fetch_counts(
        &dois(&["10.1/high", "10.1/low", "10.1/edge", "10.1/unknown"]),
        &config(stub.url()),
        Some("secret"),
        &mut cache,
    )
    .await
    .unwrap();
    let reads: Vec<Option<u64>> = out.results.iter().map(|r| r.reads).collect();
    assert_eq!(reads, vec![Some(31), None, None, None]);
    assert_eq!(out.results[3].match_probability, Some(0.0));
    // all answers are cached, hits and misses alike
    assert_eq!(cache.len(), 4);
    assert_eq!(cache.lookup("10.1/low").unwrap().readers, Some(12));
}

#[tokio::test]
async fn warm_cache_makes_no_requests() {
    let stub = StubProvider::builder().answer("10.1/a", 3, 0.99).answer("10.1/b", 4, 0.99).start().await;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let cfg = config(stub.url());
    let list = dois(&["10.1/a", "10.1/b"]);
    let first = fetch_counts(&list, &cfg, Some("k"), &mut Cache::open(&path).unwrap()).await.unwrap();
    assert_eq!(first.requests, 1);
    let seen = stub.request_count();

    // no key needed when nothing has to be fetched
    let second = fetch_counts(&list, &cfg, None, &mut Cache::open(&path).unwrap()).await.unwrap();
    assert_eq!(stub.request_count(), seen);
    assert_eq!(second.requests, 0);
    assert_eq!(second.cache_hits, 2);
    assert!(second.results.iter().all(|r| r.from_cache));
    assert_eq!(
        first.results.iter().map(|r| r.reads).collect::<Vec<_>>(),
        second.results.iter().map(|r| r.reads).collect::<Vec<_>>()
    );
}

#[tokio::test]
async fn bearer_key_is_sent() {
    let stub = StubProvider::builder().answer("10.1/a", 3, 0.99).start().await;
    let dir = tempfile::tempdir().unwrap();
    let mut cache = Cache::open(dir.path().join("c.jsonl")).unwrap();
    fetch_counts(&dois(&["10.1/a"]), &config(stub.url()), Some("s3cret"), &mut cache).await.unwrap();
    assert_eq!(stub.requests()[0].authorization.as_deref(), Some("Bearer s3cret"));
}

#[tokio::test]
async fn missing_key_is_an_error_when_fetching() {
    let dir = tempfile::tempdir().unwrap();
    let mut cache = Cache::open(dir.path().join("c.jsonl")).unwrap();
    let err = fetch_counts(&dois(&["10.1/a"]), &config("http://127.0.0.1:9".into()), None, &mut cache)
        .await
        .unwrap_err();
    assert!(matches!(err, FetchError::MissingKey(ref v) if v == "READSCALE_PROVIDER_KEY"));
}

#[tokio::test]
async fn rate_limit_holds_per_second() {
    for rate in [4.0, 2.5] {
        let mut b = StubProvider::builder();
        for i in 0..12 {
            b = b.answer(&format!("10.9/{i}"), i, 0.99);
        }
        let stub = b.start().await;
        let mut cfg = config(stub.url());
        cfg.rate_limit = rate;
        cfg.batch_size = 1;
        cfg.concurrency = 4;
        let dir = tempfile::tempdir().unwrap();
        let mut cache = Cache::open(dir.path().join("c.jsonl")).unwrap();
        let list: Vec<String> = (0..12).map(|i| format!("10.9/{i}")).collect();
        let out = fetch_counts(&list, &cfg, Some("k"), &mut cache).await.unwrap();
        assert_eq!(out.requests, 12);
        assert_eq!(out.with_reads(), 12);
        let worst = stub.max_in_window(Duration::from_secs(1));
        assert!(worst <= rate.ceil() as usize, "rate {rate}: {worst} requests in one second");
    }
}

#[tokio::test]
async fn transient_errors_are_retried() {
    let stub = StubProvider::builder().answer("10.1/a", 8, 0.97).fail_first(2).start().await;
    let dir = tempfile::tempdir().unwrap();
    let mut cache = Cache::open(dir.path().join("c.jsonl")).unwrap();
    let out = fetch_counts(&dois(&["10.1/a"]), &config(stub.url()), Some("k"), &mut cache).await.unwrap();
    assert_eq!(out.requests, 3);
    assert_eq!(out.results[0].reads, Some(8));
}

#[tokio::test]
async fn rejected_batch_becomes_failures_and_others_continue() {
    let stub = StubProvider::builder().answer("10.1/ok", 5, 0.99).reject("10.1/bad").start().await;
    let mut cfg = config(stub.url());
    cfg.batch_size = 1;
    cfg.max_retries = 2;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let mut cache = Cache::open(&path).unwrap();
    let out = fetch_counts(&dois(&["10.1/bad", "10.1/ok"]), &cfg, Some("k"), &mut cache).await.unwrap();
    assert_eq!(out.failures(), 1);
    assert_eq!(out.results[0].error.as_deref(), Some("HTTP 400"));
    assert_eq!(out.results[1].reads, Some(5));
    assert_eq!(out.requests, 4);
    let reopened = Cache::open(&path).unwrap();
    assert!(reopened.lookup("10.1/bad").is_none());
    assert!(reopened.lookup("10.1/ok").is_some());
}

#[tokio::test]
async fn unreachable_provider_keeps_partial_cache() {
    let stub = StubProvider::builder().answer("10.1/first", 2, 0.99).hang("10.1/stuck").start().await;
    let mut cfg = config(stub.url());
    cfg.batch_size = 1;
    cfg.concurrency = 1;
    cfg.max_retries = 1;
    cfg.timeout_ms = 200;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let mut cache = Cache::open(&path).unwrap();
    let err = fetch_counts(&dois(&["10.1/first", "10.1/stuck"]), &cfg, Some("k"), &mut cache)
        .await
        .unwrap_err();
    match err {
        FetchError::Unreachable { attempts, cached, .. } => {
            assert_eq!(attempts, 2);
            assert_eq!(cached, 1);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(Cache::open(&path).unwrap().lookup("10.1/first").unwrap().readers, Some(2));
}

#[tokio::test]
async fn connection_refused_is_fatal() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let mut cfg = config(url);
    cfg.max_retries = 2;
    let dir = tempfile::tempdir().unwrap();
    let mut cache = Cache::open(dir.path().join("c.jsonl")).unwrap();
    let err = fetch_counts(&dois(&["10.1/a"]), &cfg, Some("k"), &mut cache).await.unwrap_err();
    assert!(matches!(err, FetchError::Unreachable { attempts: 3, cached: 0, .. }), "{err}");
}

#[tokio::test]
async fn raising_threshold_never_adds_reads() {
    let probs = [0.5, 0.85, 0.9, 0.91, 0.95, 0.99, 1.0];
    let mut b = StubProvider::builder();
    for (i, p) in probs.iter().enumerate() {
        b = b.answer(&format!("10.2/{i}"), 10 + i as u64, *p);
    }
    let stub = b.start().await;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let list: Vec<String> = (0..probs.len()).map(|i| format!("10.2/{i}")).collect();
    let mut previous: Option<Vec<String>> = None;
    for t in [0.0, 0.5, 0.85, 0.9, 0.95, 0.99, 1.0] {
        let mut cfg = config(stub.url());
        cfg.min_match_probability = t;
        let out = fetch_counts(&list, &cfg, Some("k"), &mut Cache::open(&path).unwrap()).await.unwrap();
        let with: Vec<String> = out.results.iter().filter(|r| r.reads.is_some()).map(|r| r.doi.clone()).collect();
        if let Some(prev) = &previous {
            assert!(with.iter().all(|d| prev.contains(d)), "threshold {t}");
        }
        previous = Some(with);
    }
    // only the first pass went to the network
    assert_eq!(stub.request_count(), 1);
}
