use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::mock::{MockEmbedder, MockGenerator};
use super::*;

/// Fails with a transport error a fixed number of times, then echoes.
struct Flaky {
    failures: usize,
    calls: AtomicUsize,
}

impl TextGenerator for Flaky {
    fn id(&self) -> &str {
        "flaky"
    }
    fn complete(&self, req: &GenRequest) -> Result<String, ProviderError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.failures {
            Err(ProviderError::Transport("connection reset".into()))
        } else {
            Ok(req.prompt.clone())
        }
    }
}

/// Records the virtual time of each call.
struct Stamped {
    clock: Arc<SimClock>,
    stamps: Mutex<Vec<Duration>>,
}

impl TextGenerator for Stamped {
    fn id(&self) -> &str {
        "stamped"
    }
    fn complete(&self, req: &GenRequest) -> Result<String, ProviderError> {
        self.stamps.lock().unwrap().push(self.clock.now());
        Ok(req.prompt.clone())
    }
}

fn req(prompt: &str) -> GenRequest {
    GenRequest::new(prompt, 0.5, 64).unwrap().with_seed(1)
}

#[test]
fn echo_round_trips_through_the_gateway() {
    let gw = Gateway::mock();
    assert_eq!(gw.complete(&req("echo:X")).unwrap(), "X");
}

#[test]
fn second_identical_call_is_served_from_cache() {
    let gw = Gateway::mock();
    let r = req("Generate a poem related to the topic ฝน. Write in Thai.");
    let first = gw.complete(&r).unwrap();
    let before = gw.stats();
    let second = gw.complete(&r).unwrap();
    let after = gw.stats();
    assert_eq!(first, second);
    assert_eq!(after.provider_calls, before.provider_calls);
    assert_eq!(after.cache_hits, before.cache_hits + 1);
}

#[test]
fn cache_on_disk_survives_a_new_gateway() {
    let dir = tempfile::tempdir().unwrap();
    let budget = ProviderBudget {
        cache_dir: Some(dir.path().to_path_buf()),
        ..ProviderBudget::default()
    };
    let r = req("Generate a tweet related to the topic ดาว. Write in Thai.");
    let a = Gateway::builder().budget(budget.clone()).build().unwrap();
    let first = a.complete(&r).unwrap();
    let b = Gateway::builder().budget(budget).build().unwrap();
    assert_eq!(b.complete(&r).unwrap(), first);
    assert_eq!(b.stats().provider_calls, 0);
}

#[test]
fn different_parameters_do_not_share_cache_entries() {
    let gw = Gateway::mock();
    let p = "Generate a song related to the topic ทะเล. Write in Thai.";
    let a = gw
        .complete(&GenRequest::new(p, 0.5, 64).unwrap().with_seed(1))
        .unwrap();
    let b = gw
        .complete(&GenRequest::new(p, 0.5, 64).unwrap().with_seed(2))
        .unwrap();
    assert_ne!(a, b);
    assert_eq!(gw.stats().provider_calls, 2);
}

#[test]
fn transient_failures_are_retried_with_backoff() {
    let clock = Arc::new(SimClock::new());
    let flaky = Arc::new(Flaky {
        failures: 2,
        calls: AtomicUsize::new(0),
    });
    let gw = Gateway::builder()
        .generator(flaky.clone())
        .clock(clock.clone())
        .backoff_base(Duration::from_millis(100))
        .build()
        .unwrap();
    assert_eq!(gw.complete(&req("hello")).unwrap(), "hello");
    assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
    assert_eq!(gw.stats().retries, 2);
    // 100ms then 200ms, each stretched by at most 50% jitter
    let waited = clock.now();
    assert!(waited >= Duration::from_millis(300), "{waited:?}");
    assert!(waited <= Duration::from_millis(450), "{waited:?}");
}

#[test]
fn retries_stop_at_the_limit() {
    let flaky = Arc::new(Flaky {
        failures: 100,
        calls: AtomicUsize::new(0),
    });
    let gw = Gateway::builder()
        .generator(flaky.clone())
        .clock(Arc::new(SimClock::new()))
        .build()
        .unwrap();
    let err = gw.complete(&req("hello")).unwrap_err();
    assert!(matches!(err, ProviderError::Transport(_)));
    assert_eq!(flaky.calls.load(Ordering::SeqCst), 4);
}

#[test]
fn remote_calls_respect_requests_per_minute() {
    let clock = Arc::new(SimClock::new());
    let gen = Arc::new(Stamped {
        clock: clock.clone(),
        stamps: Mutex::new(Vec::new()),
    });
    let gw = Gateway::builder()
        .generator(gen.clone())
        .clock(clock)
        .budget(ProviderBudget {
            max_concurrent: 1,
            requests_per_minute: 10,
            ..ProviderBudget::default()
        })
        .build()
        .unwrap();
    for i in 0..35 {
        gw.complete(&req(&format!("p{i}"))).unwrap();
    }
    let stamps = gen.stamps.lock().unwrap().clone();
    for (k, t) in stamps.iter().enumerate() {
        assert_eq!(t.as_secs(), (k as u64 / 10) * 60);
    }
}

#[test]
fn embedding_order_matches_unchunked_call() {
    let texts: Vec<String> = (0..150).map(|i| format!("ข้อความ {i}")).collect();
    let small = Gateway::builder()
        .embedder(Arc::new(MockEmbedder {
            dimension: 256,
            batch: 7,
        }))
        .build()
        .unwrap();
    let big = Gateway::builder()
        .embedder(Arc::new(MockEmbedder {
            dimension: 256,
            batch: 1000,
        }))
        .build()
        .unwrap();
    assert_eq!(small.embed(&texts).unwrap(), big.embed(&texts).unwrap());
}

#[test]
fn translate_validates_inputs() {
    let gw = Gateway::mock();
    assert_eq!(gw.translate("x", "th", "en").unwrap(), "en⟨x⟩");
    assert!(matches!(
        gw.translate("", "th", "en"),
        Err(ProviderError::InvalidRequest(_))
    ));
    assert!(matches!(
        gw.translate("x", "th", "de"),
        Err(ProviderError::Config(_))
    ));
}

#[test]
fn paraphrase_returns_exactly_count() {
    let gw = Gateway::mock();
    assert_eq!(gw.paraphrase("ก ข ค", 4, 9).unwrap().len(), 4);
    assert!(matches!(
        gw.paraphrase("ก ข ค", 0, 9),
        Err(ProviderError::InvalidRequest(_))
    ));
}

#[test]
fn wiki_search_is_ranked_and_truncated() {
    let gw = Gateway::mock();
    let refs = gw.wiki_search("ประวัติศาสตร์ ของ ดนตรี", 3).unwrap();
    assert!(refs.len() <= 3);
    assert!(refs
        .windows(2)
        .all(|w| w[0].relevance_rank < w[1].relevance_rank));
}

#[test]
fn well_formed_mock_never_emits_malformed_payloads() {
    let gw = Gateway::builder()
        .generator(Arc::new(MockGenerator::well_formed()))
        .build()
        .unwrap();
    for i in 0..50 {
        let out = gw
            .complete(&GenRequest::new(
                "Please generate 20 completely random topics. Each topic should be a short phrase or sentence.",
                0.95,
                512,
            )
            .unwrap()
            .with_seed(i))
            .unwrap();
        assert!(out.contains('[') && out.contains(']'));
    }
}
