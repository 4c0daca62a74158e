//! HTTP oracle and embedder against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use budget_er::embed::{embed_dataset, EmbedderConfig, Provider};
use budget_er::oracle::{Candidate, HttpLlmOracle, HttpOracleConfig, Oracle, OracleQuery};
use budget_er::engine::Label;
use budget_er::select::Pricing;
use budget_er::{Dataset, Error, Record};

struct Mock {
    url: String,
    requests: Arc<Mutex<Vec<(String, String)>>>,
}

/// Serve `replies` (status, body) in order, one per connection, recording
/// each request's authorization header and body.
fn serve(replies: Vec<(u16, String)>) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let (mut len, mut auth) = (0usize, String::new());
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line["authorization:".len()..].trim().to_string();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push((auth, String::from_utf8(buf).unwrap()));
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    Mock { url, requests }
}

fn chat(content: &str, usage: Option<(u64, u64)>) -> String {
    let mut v = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]});
    if let Some((i, o)) = usage {
        v["usage"] = serde_json::json!({"prompt_tokens": i, "completion_tokens": o});
    }
    v.to_string()
}

fn query() -> OracleQuery {
    let texts: Vec<String> = ["name: ann lee", "name: anne lee", "name: bob ray"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    OracleQuery::new(
        0,
        vec![
            Candidate { record: 1, label: Label(1) },
            Candidate { record: 2, label: Label(2) },
        ],
        &texts,
    )
}

fn oracle(url: &str, retries: u32) -> HttpLlmOracle {
    let cfg = HttpOracleConfig {
        endpoint: url.to_string(),
        model: "test-model".into(),
        api_key_env: None,
        max_retries: retries,
        backoff_ms: 1,
        ..Default::default()
    };
    HttpLlmOracle::new(cfg, Pricing::default(), 4).unwrap()
}

#[test]
fn answer_uses_reported_usage() {
    let mock = serve(vec![(200, chat("1", Some((1_000_000, 0))))]);
    let q = query();
    let a = oracle(&mock.url, 0).ask(&q).unwrap();
    assert_eq!(a.choice, Some(1));
    assert_eq!(a.chosen_record(&q), Some(1));
    assert_eq!((a.tokens_in, a.tokens_out), (1_000_000, 0));
    assert!((a.cost - 0.25).abs() < 1e-12);

    let reqs = mock.requests.lock().unwrap();
    let body: serde_json::Value = serde_json::from_str(&reqs[0].1).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], q.prompt.as_str());
}

#[test]
fn missing_usage_falls_back_to_estimate() {
    let mock = serve(vec![(200, chat("NONE", None))]);
    let q = query();
    let a = oracle(&mock.url, 0).ask(&q).unwrap();
    assert_eq!(a.choice, None);
    assert_eq!(a.tokens_in, q.prompt.chars().count().div_ceil(4) as u64);
    assert_eq!(a.tokens_out, 1);
}

#[test]
fn transport_errors_are_retried() {
    let mock = serve(vec![
        (500, "{}".into()),
        (503, "{}".into()),
        (200, chat("2", Some((10, 1)))),
    ]);
    let a = oracle(&mock.url, 2).ask(&query()).unwrap();
    assert_eq!(a.choice, Some(2));
    assert_eq!(mock.requests.lock().unwrap().len(), 3);
}

#[test]
fn retries_exhausted_is_an_oracle_error() {
    let mock = serve(vec![(500, "{}".into()), (500, "{}".into())]);
    match oracle(&mock.url, 1).ask(&query()) {
        Err(Error::Oracle { tokens_in, tokens_out, .. }) => assert_eq!((tokens_in, tokens_out), (0, 0)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unparseable_reply_is_reasked_once_and_billed() {
    let mock = serve(vec![
        (200, chat("The answer is 1", Some((100, 5)))),
        (200, chat(" 1 ", Some((100, 1)))),
    ]);
    let a = oracle(&mock.url, 0).ask(&query()).unwrap();
    assert_eq!(a.choice, Some(1));
    assert_eq!((a.tokens_in, a.tokens_out), (200, 6));

    let mock = serve(vec![
        (200, chat("maybe", Some((100, 1)))),
        (200, chat("7", Some((100, 1)))),
    ]);
    match oracle(&mock.url, 0).ask(&query()) {
        Err(Error::Oracle { tokens_in, tokens_out, .. }) => assert_eq!((tokens_in, tokens_out), (200, 2)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn api_key_sent_as_bearer() {
    let mock = serve(vec![(200, chat("1", None))]);
    std::env::set_var("BUDGET_ER_TEST_KEY", "secret");
    let cfg = HttpOracleConfig {
        endpoint: mock.url.clone(),
        api_key_env: Some("BUDGET_ER_TEST_KEY".into()),
        ..Default::default()
    };
    HttpLlmOracle::new(cfg, Pricing::default(), 4).unwrap().ask(&query()).unwrap();
    assert_eq!(mock.requests.lock().unwrap()[0].0, "Bearer secret");

    let missing = HttpOracleConfig {
        endpoint: mock.url.clone(),
        api_key_env: Some("BUDGET_ER_TEST_KEY_UNSET".into()),
        ..Default::default()
    };
    assert!(matches!(HttpLlmOracle::new(missing, Pricing::default(), 4), Err(Error::Config(_))));
}

fn dataset() -> Dataset {
    Dataset::new(vec![
        Record::new("a").with("name", "x"),
        Record::new("b").with("name", "y"),
    ])
    .unwrap()
}

fn http_embedder(url: &str) -> EmbedderConfig {
    EmbedderConfig {
        provider: Provider::Http,
        endpoint: Some(url.to_string()),
        model: Some("emb".into()),
        ..Default::default()
    }
}

#[test]
fn embedder_accepts_both_response_shapes() {
    let mock = serve(vec![
        (200, r#"{"data":[{"embedding":[3.0,4.0]},{"embedding":[0.0,2.0]}]}"#.into()),
        (200, r#"{"embeddings":[[1.0,0.0],[0.0,1.0]]}"#.into()),
    ]);
    let cfg = http_embedder(&mock.url);
    let e = embed_dataset(&dataset(), &cfg).unwrap();
    assert_eq!(e[0].as_slice(), &[0.6, 0.8]);
    assert_eq!(e[1].as_slice(), &[0.0, 1.0]);
    let e = embed_dataset(&dataset(), &cfg).unwrap();
    assert_eq!(e[0].as_slice(), &[1.0, 0.0]);

    let body: serde_json::Value = serde_json::from_str(&mock.requests.lock().unwrap()[0].1).unwrap();
    assert_eq!(body["model"], "emb");
    assert_eq!(body["input"][0], "name: x");
}

#[test]
fn embedder_rejects_bad_responses() {
    let mock = serve(vec![
        (200, r#"{"embeddings":[[1.0,0.0]]}"#.into()),
        (200, r#"{"embeddings":[[1.0,0.0],[1.0]]}"#.into()),
        (500, "{}".into()),
    ]);
    let cfg = http_embedder(&mock.url);
    assert!(matches!(embed_dataset(&dataset(), &cfg), Err(Error::EmbeddingProvider(_))));
    assert!(matches!(embed_dataset(&dataset(), &cfg), Err(Error::DimensionMismatch { .. })));
    assert!(matches!(embed_dataset(&dataset(), &cfg), Err(Error::EmbeddingProvider(_))));
}
