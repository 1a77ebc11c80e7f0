use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use codeplay_core::policy::{ApiMode, Policy, PolicyError, PolicyRequest, RemoteConfig, RemotePolicy, SamplingParams};
use serde_json::{json, Value};

struct Captured {
    path: String,
    headers: Vec<String>,
    body: Value,
}

/// Serves one canned `(status, body)` per connection, in order, then stops.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = std::thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Captured {
                path: request_line.split_whitespace().nth(1).unwrap_or_default().to_string(),
                headers,
                body: serde_json::from_slice(&buf).unwrap_or(Value::Null),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (base, seen, handle)
}

fn config(base: String) -> RemoteConfig {
    RemoteConfig {
        base_url: base,
        model: "tiny".into(),
        api_key_env: None,
        max_retries: 2,
        initial_backoff: Duration::from_millis(10),
        max_backoff: Duration::from_millis(40),
        request_timeout: Duration::from_secs(10),
        max_in_flight: 2,
        ..RemoteConfig::default()
    }
}

fn chat(text: &str, finish: &str) -> String {
    json!({
        "choices": [{ "message": { "role": "assistant", "content": text }, "finish_reason": finish }],
        "usage": { "prompt_tokens": 12, "completion_tokens": 5 }
    })
    .to_string()
}

fn request(prompt: &str) -> PolicyRequest {
    PolicyRequest::new("solve.deduction".to_string(), prompt.to_string(), SamplingParams { temperature: 0.6, top_p: 0.9, max_response_tokens: 64 })
}

#[test]
fn chat_request_round_trip() {
    let (base, seen, h) = serve(vec![(200, chat("<answer>6</answer>", "stop"))]);
    let p = RemotePolicy::new(config(base)).unwrap();
    let t = p.generate(&request("double 3")).unwrap();
    h.join().unwrap();
    assert_eq!(t.response, "<answer>6</answer>");
    assert_eq!(t.prompt, "double 3");
    assert!(!t.truncated);
    assert_eq!(t.usage.map(|u| u.completion_tokens), Some(5));

    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/chat/completions");
    let b = &seen[0].body;
    assert_eq!(b["model"], "tiny");
    assert_eq!(b["temperature"], 0.6);
    assert_eq!(b["top_p"], 0.9);
    assert_eq!(b["max_tokens"], 64);
    assert_eq!(b["messages"][0]["content"], "double 3");
    assert!(!seen[0].headers.iter().any(|h| h.to_ascii_lowercase().starts_with("authorization")));
}

#[test]
fn completion_mode_and_length_finish() {
    let body = json!({ "choices": [{ "text": "<answer>", "finish_reason": "length" }] }).to_string();
    let (base, seen, h) = serve(vec![(200, body)]);
    let p = RemotePolicy::new(RemoteConfig {
        mode: ApiMode::Completion,
        ..config(base)
    })
    .unwrap();
    let t = p.generate(&request("x")).unwrap();
    h.join().unwrap();
    assert!(t.truncated);
    assert!(t.usage.is_none());
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/completions");
    assert_eq!(seen[0].body["prompt"], "x");
}

#[test]
fn bearer_token_from_environment() {
    std::env::set_var("CODEPLAY_TEST_TOKEN", "s3cret");
    let (base, seen, h) = serve(vec![(200, chat("ok", "stop"))]);
    let p = RemotePolicy::new(RemoteConfig {
        api_key_env: Some("CODEPLAY_TEST_TOKEN".into()),
        ..config(base)
    })
    .unwrap();
    p.generate(&request("x")).unwrap();
    h.join().unwrap();
    assert!(seen.lock().unwrap()[0].headers.iter().any(|h| h == "authorization: Bearer s3cret" || h == "Authorization: Bearer s3cret"));
}

#[test]
fn service_unavailable_is_retried() {
    let (base, seen, h) = serve(vec![(503, "{}".into()), (429, "{}".into()), (200, chat("fine", "stop"))]);
    let p = RemotePolicy::new(config(base)).unwrap();
    let t = p.generate(&request("x")).unwrap();
    h.join().unwrap();
    assert_eq!(t.response, "fine");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn retries_are_bounded() {
    let (base, seen, h) = serve(vec![(503, "busy".into()), (503, "busy".into()), (503, "busy".into())]);
    let p = RemotePolicy::new(config(base)).unwrap();
    let err = p.generate(&request("x")).unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, PolicyError::Status { status: 503, .. }), "{err}");
    assert!(err.is_transient());
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (base, seen, h) = serve(vec![(400, "{\"error\": \"bad\"}".into())]);
    let p = RemotePolicy::new(config(base)).unwrap();
    let err = p.generate(&request("x")).unwrap_err();
    h.join().unwrap();
    match err {
        PolicyError::Status { status, body } => {
            assert_eq!(status, 400);
            assert!(body.contains("bad"));
        }
        other => panic!("{other}"),
    }
    assert!(!PolicyError::Status { status: 400, body: String::new() }.is_transient());
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_body_is_a_decode_error() {
    let (base, _, h) = serve(vec![(200, "{\"choices\": []}".into())]);
    let p = RemotePolicy::new(config(base)).unwrap();
    let err = p.generate(&request("x")).unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, PolicyError::Decode(_)), "{err}");
}

#[test]
fn unreachable_port_is_a_transport_error_after_retries() {
    let closed = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = closed.local_addr().unwrap().port();
    drop(closed);
    let p = RemotePolicy::new(config(format!("http://127.0.0.1:{port}/v1"))).unwrap();
    match p.generate(&request("x")).unwrap_err() {
        PolicyError::Transport { attempts, .. } => assert_eq!(attempts, 3),
        other => panic!("{other}"),
    }
}

#[test]
fn batch_preserves_request_order() {
    let replies = (0..4).map(|_| (200, chat("same", "stop"))).collect();
    let (base, seen, h) = serve(replies);
    let p = RemotePolicy::new(config(base)).unwrap();
    let reqs: Vec<_> = (0..4).map(|i| request(&format!("prompt {i}"))).collect();
    let out = p.generate_batch(&reqs);
    h.join().unwrap();
    for (i, r) in out.iter().enumerate() {
        assert_eq!(r.as_ref().unwrap().prompt, format!("prompt {i}"));
    }
    assert_eq!(seen.lock().unwrap().len(), 4);
}

#[test]
fn invalid_sampling_params_rejected_before_sending() {
    let p = RemotePolicy::new(config("http://127.0.0.1:9/v1".into())).unwrap();
    let bad = PolicyRequest::new("t".to_string(), "x".to_string(), SamplingParams { temperature: -1.0, ..SamplingParams::default() });
    assert!(matches!(p.generate(&bad), Err(PolicyError::Params(_))));
}
