//! Wire protocol round trips over a local HTTP server and a stdio child.

mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use selfneg_core::evaluation::run_scnt;
use selfneg_core::model::protocol::handle_request;
use selfneg_core::model::{
    BackendDescriptor, Client, HttpBackend, MaskedLm, MockBackend, MockKind, RetryPolicy,
    StdioBackend,
};
use selfneg_core::selection::{select_triplets, SelectionConfig};
use selfneg_core::Error;

fn fast() -> RetryPolicy {
    RetryPolicy {
        retries: 3,
        base_delay: Duration::from_millis(5),
    }
}

/// Minimal HTTP/1.1 server answering with `handle_request`. The first
/// `fail_first` requests get a 503.
fn serve(backend: Arc<dyn MaskedLm>, fail_first: usize) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let seen = Arc::new(AtomicUsize::new(0));
    let counter = seen.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0u8; length];
            reader.read_exact(&mut body).unwrap();
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let (status, reply) = if n < fail_first {
                (503, r#"{"error":"warming up"}"#.to_string())
            } else {
                handle_request(backend.as_ref(), std::str::from_utf8(&body).unwrap())
            };
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    (url, seen)
}

#[test]
fn http_backend_matches_in_process_mock() {
    let mock: Arc<dyn MaskedLm> = Arc::new(MockBackend::new(MockKind::Perfect));
    let (url, _) = serve(mock.clone(), 0);
    let remote = Client::new(Arc::new(HttpBackend::new("mock:perfect", &url, fast()))).with_batch_size(4);
    let local = Client::new(mock);

    let config = SelectionConfig::default();
    let names = common::names();
    let profs = common::professions();
    let lex = common::lexicon("mock:perfect");
    let a = select_triplets(&remote, &names, &profs, &lex, &config).unwrap();
    let b = select_triplets(&local, &names, &profs, &lex, &config).unwrap();
    assert_eq!(a, b);
    let ra = run_scnt(&remote, &a).unwrap();
    let rb = run_scnt(&local, &b).unwrap();
    assert_eq!(ra.results, rb.results);

    assert_eq!(remote.single_token(&["sail".into()]).unwrap(), vec![true]);
    assert_eq!(remote.mask_token().as_deref(), Some("[MASK]"));
}

#[test]
fn http_5xx_is_retried_then_succeeds() {
    let (url, seen) = serve(Arc::new(MockBackend::new(MockKind::Blind)), 2);
    let b = HttpBackend::new("mock:blind", &url, fast());
    let out = b
        .fill_mask_batch(&["She likes to run. He is happy to ⟨MASK⟩.".into()], 1)
        .unwrap();
    assert_eq!(out[0][0].token, "run");
    assert_eq!(seen.load(Ordering::SeqCst), 3);
}

#[test]
fn http_wrong_backend_id_is_a_protocol_error_without_retry() {
    let (url, seen) = serve(Arc::new(MockBackend::new(MockKind::Blind)), 0);
    let b = HttpBackend::new("roberta-large", &url, fast());
    let err = b.single_token_batch(&["sail".into()]).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
    assert_eq!(seen.load(Ordering::SeqCst), 1);
}

#[test]
fn http_persistent_5xx_exhausts_retries() {
    let (url, seen) = serve(Arc::new(MockBackend::new(MockKind::Blind)), usize::MAX);
    let b = HttpBackend::new("mock:blind", &url, fast());
    let err = b.fill_mask_batch(&["to ⟨MASK⟩.".into()], 1).unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 4, .. }), "{err}");
    assert_eq!(seen.load(Ordering::SeqCst), 4);
}

#[test]
fn stdio_backend_round_trip() {
    let script = r#"while IFS= read -r line; do
  case "$line" in
    *single_token*) echo '{"single":[true,false],"mask_token":"<mask>"}' ;;
    *) echo '[{"predictions":[{"token":"Ġswim","score":0.9},{"token":"Ġrun","score":0.1}]}]' ;;
  esac
done"#;
    let b = StdioBackend::new("roberta-large", script, fast());
    let client = Client::new(Arc::new(b));
    let out = client.fill_mask(&["He likes to swim. He is happy to ⟨MASK⟩.".into()], 2).unwrap();
    assert_eq!(out[0].len(), 2);
    assert!(client.matches(&out[0][0].token, "swim"));
    assert_eq!(
        client.single_token(&["sail".into(), "overthink".into()]).unwrap(),
        vec![true, false]
    );
    assert_eq!(client.mask_token().as_deref(), Some("<mask>"));
}

#[test]
fn stdio_malformed_response_is_a_protocol_error() {
    let b = StdioBackend::new("m", "while read l; do echo '[{\"predictions\":[]}]'; done", fast());
    let client = Client::new(Arc::new(b));
    let err = client.fill_mask(&["to ⟨MASK⟩.".into()], 1).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
}

#[test]
fn descriptor_parsing() {
    assert!(BackendDescriptor::parse("mock:perfect", None).is_ok());
    assert!(BackendDescriptor::parse("mock:perfect", Some("http://x")).is_err());
    assert!(BackendDescriptor::parse("bert-large-cased", None).is_err());
    assert!(BackendDescriptor::parse("bert-large-cased", Some("stdio:python sidecar.py")).is_ok());
    assert!(BackendDescriptor::parse("bert-large-cased", Some("http://127.0.0.1:8000/")).is_ok());
    assert!(BackendDescriptor::parse("bert-large-cased", Some("ftp://x")).is_err());
}
