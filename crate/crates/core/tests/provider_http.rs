use effiset_core::language::Language;
use effiset_core::provider::{self, CompletionBackend, HttpChatProvider, PromptTemplate, ProviderError, ProviderHandle};
use effiset_core::task::Task;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
struct Captured {
    headers: BTreeMap<String, String>,
    body: serde_json::Value,
}

struct Reply {
    status: u16,
    headers: Vec<(&'static str, String)>,
    body: String,
}

fn reply(status: u16, body: impl Into<String>) -> Reply {
    Reply { status, headers: vec![], body: body.into() }
}

fn ok_choices(texts: &[&str]) -> Reply {
    let choices: Vec<_> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| serde_json::json!({"index": i, "message": {"role": "assistant", "content": t}}))
        .collect();
    reply(200, serde_json::json!({ "choices": choices }).to_string())
}

/// Serves the scripted replies in order, one per connection, and records requests.
fn serve(script: Vec<Reply>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        for r in script {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = BTreeMap::new();
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            loop {
                line.clear();
                reader.read_line(&mut line).unwrap();
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                if let Some((k, v)) = l.split_once(':') {
                    headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
                }
            }
            let len: usize = headers.get("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let body = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
            let auth = headers.get("authorization").cloned().unwrap_or_default();
            log.lock().unwrap().push(Captured { headers, body });
            let text = r.body.replace("{AUTH}", &auth);
            let mut out = stream;
            let mut head = format!(
                "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
                r.status,
                text.len()
            );
            for (k, v) in &r.headers {
                head.push_str(&format!("{k}: {v}\r\n"));
            }
            let _ = out.write_all(format!("{head}\r\n{text}").as_bytes());
        }
    });
    (url, seen)
}

fn handle(url: &str, key_env: Option<&str>) -> ProviderHandle {
    let mut h = ProviderHandle::http_chat("remote", url, "coder-model");
    h.api_key_env = key_env.map(str::to_string);
    h.rate_limit_rpm = 6000.0;
    h.request_timeout_s = 10.0;
    h
}

fn task() -> Task {
    Task {
        id: "sq".into(),
        language: Language::Python,
        source_dataset: "s".into(),
        instruction: "def square(x):\n    \"\"\"Return x squared.\"\"\"\n".into(),
        initial_solution: "def square(x):\n    return x ** 2\n".into(),
        tests: vec![],
        metadata: BTreeMap::new(),
    }
}

#[test]
fn wire_format_and_parsing() {
    std::env::set_var("EFFISET_TEST_KEY_WIRE", "k-wire");
    let (url, seen) = serve(vec![ok_choices(&["```python\ndef square(x):\n    return x * x\n```", "no code here"])]);
    let backend = handle(&url, Some("EFFISET_TEST_KEY_WIRE")).connect().unwrap();
    let out = provider::generate_candidates(&task(), &[backend], 2, &PromptTemplate::generation()).unwrap();
    assert_eq!(out.candidates.len(), 1);
    assert_eq!(out.candidates[0].source_code.trim_end(), "def square(x):\n    return x * x");
    assert_eq!(out.candidates[0].provider_label, "remote");
    let req = seen.lock().unwrap()[0].clone();
    assert_eq!(req.headers["authorization"], "Bearer k-wire");
    assert_eq!(req.body["model"], "coder-model");
    assert_eq!(req.body["n"], 2);
    assert_eq!(req.body["temperature"], 0.2);
    assert_eq!(req.body["messages"][0]["role"], "user");
    let content = req.body["messages"][0]["content"].as_str().unwrap();
    assert!(content.starts_with("Please continue to complete the function."));
    assert!(content.contains("```python\ndef square(x):"));
}

#[test]
fn retries_server_errors() {
    let (url, seen) = serve(vec![reply(500, "oops"), reply(503, "busy"), ok_choices(&["```python\nx = 1\n```"])]);
    let backend = handle(&url, None).connect().unwrap();
    let got = backend.complete("t", "p", 1).unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![reply(400, "bad request"), ok_choices(&["unused"])]);
    let backend = handle(&url, None).connect().unwrap();
    match backend.complete("t", "p", 1) {
        Err(ProviderError::Http { status, .. }) => assert_eq!(status, 400),
        other => panic!("expected http error, got {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn gives_up_after_max_retries() {
    let (url, seen) = serve((0..4).map(|_| reply(500, "down")).collect());
    let mut h = handle(&url, None);
    h.max_retries = 1;
    let backend = h.connect().unwrap();
    assert!(matches!(backend.complete("t", "p", 1), Err(ProviderError::Http { status: 500, .. })));
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn honors_retry_after() {
    let mut limited = reply(429, "slow down");
    limited.headers.push(("Retry-After", "2".into()));
    let (url, _) = serve(vec![limited, ok_choices(&["ok"])]);
    let backend = handle(&url, None).connect().unwrap();
    let start = Instant::now();
    backend.complete("t", "p", 1).unwrap();
    assert!(start.elapsed() >= Duration::from_secs(2));
}

#[test]
fn transport_failure_reduces_candidates_without_aborting() {
    let dead = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}/v1/chat/completions", l.local_addr().unwrap())
    };
    let mut h = handle(&dead, None);
    h.max_retries = 0;
    let (url, _) = serve(vec![ok_choices(&["```python\ndef square(x):\n    return x*x\n```"])]);
    let providers: Vec<Box<dyn CompletionBackend>> = vec![h.connect().unwrap(), handle(&url, None).connect().unwrap()];
    let out = provider::generate_candidates(&task(), &providers, 1, &PromptTemplate::generation()).unwrap();
    assert_eq!(out.candidates.len(), 1);
    assert_eq!(out.failures.len(), 1);
    assert!(!out.generation_failed);
}

#[test]
fn missing_key_variable_is_reported() {
    let h = handle("http://127.0.0.1:9/x", Some("EFFISET_TEST_KEY_DEFINITELY_UNSET"));
    assert!(matches!(h.connect(), Err(ProviderError::MissingApiKey(v)) if v == "EFFISET_TEST_KEY_DEFINITELY_UNSET"));
}

#[test]
fn planted_key_never_surfaces() {
    const KEY: &str = "sk-planted-0123456789abcdef";
    std::env::set_var("EFFISET_TEST_KEY_PLANTED", KEY);
    // the server echoes the authorization header back in its error body
    let (url, seen) = serve(vec![reply(401, "{\"error\": \"bad credentials: {AUTH}\"}")]);
    let backend = HttpChatProvider::new(&handle(&url, Some("EFFISET_TEST_KEY_PLANTED"))).unwrap();
    let debug = format!("{backend:?}");
    let err = backend.complete("t", "p", 1).unwrap_err();
    assert_eq!(seen.lock().unwrap()[0].headers["authorization"], format!("Bearer {KEY}"));
    for text in [debug, err.to_string(), format!("{err:?}")] {
        assert!(!text.contains(KEY), "key leaked: {text}");
    }
    let h = handle(&url, Some("EFFISET_TEST_KEY_PLANTED"));
    assert!(!serde_json::to_string(&h).unwrap().contains(KEY));
}
