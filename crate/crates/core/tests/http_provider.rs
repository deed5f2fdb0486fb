use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::Value;
use strata_core::provider::{
    extract_attributes, ChatProvider, ChatRequest, Embedder, HttpChat, HttpEmbedder, ProviderConfig, ProviderError, ProviderKind,
};

/// Serves the given (status, body) replies in order, one per connection,
/// and records the request bodies.
fn scripted_server(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Value>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(serde_json::from_slice(&buf).unwrap_or(Value::Null));
            let mut stream = stream;
            let head = format!("HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len());
            stream.write_all(head.as_bytes()).unwrap();
            stream.write_all(body.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1/chat/completions"), seen)
}

fn cfg(endpoint: String, retries: u32) -> ProviderConfig {
    ProviderConfig { kind: ProviderKind::Http, endpoint, timeout_secs: 5, max_retries: retries, ..Default::default() }
}

fn chat_reply(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn server_error_is_retried_then_succeeds() {
    let (url, seen) = scripted_server(vec![(503, "busy".into()), (200, chat_reply("hello"))]);
    let c = cfg(url, 1);
    let chat = HttpChat::new(c.clone());
    let out = chat.chat(&ChatRequest::new(&c, "sys".into(), "hi".into())).unwrap();
    assert_eq!(out, "hello");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[0]["temperature"], 0.0);
    assert_eq!(seen[0]["messages"][0]["role"], "system");
    assert_eq!(seen[0]["messages"][1]["content"], "hi");
}

#[test]
fn client_error_is_not_retried() {
    let (url, seen) = scripted_server(vec![(401, "nope".into()), (200, chat_reply("late"))]);
    let c = cfg(url, 3);
    let err = HttpChat::new(c.clone()).chat(&ChatRequest::new(&c, "s".into(), "u".into())).unwrap_err();
    assert!(matches!(err, ProviderError::Status { status: 401, .. }));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn fenced_extraction_over_http_parses() {
    let body = "```json\n{\"entities\":[\"Melanie\"],\"topic\":\"music\",\"relationships\":[],\"semantic_facts\":[\"Melanie plays clarinet\"],\"dates_mentioned\":[],\"summary\":\"Melanie plays clarinet.\"}\n```";
    let (url, seen) = scripted_server(vec![(200, chat_reply(body))]);
    let c = cfg(url, 0);
    let attrs = extract_attributes(&HttpChat::new(c.clone()), &c, "Melanie", "I play clarinet", "").unwrap();
    assert_eq!(attrs.entities, vec!["Melanie"]);
    assert_eq!(attrs.speaker, "Melanie");
    let seen = seen.lock().unwrap();
    let user = seen[0]["messages"][1]["content"].as_str().unwrap();
    assert!(user.contains("- Speaker: Melanie\n- Text: I play clarinet\n- Context: "));
}

#[test]
fn embedder_checks_dimension() {
    let reply = serde_json::json!({"data": [{"embedding": [0.1, 0.2, 0.3]}]}).to_string();
    let (url, _) = scripted_server(vec![(200, reply.clone()), (200, reply)]);
    let ok = HttpEmbedder::new(cfg(url.clone(), 0), 3);
    assert_eq!(ok.embed(&["x".into()]).unwrap(), vec![vec![0.1f32, 0.2, 0.3]]);
    let wrong = HttpEmbedder::new(cfg(url, 0), 4);
    assert!(wrong.embed(&["x".into()]).is_err());
}
