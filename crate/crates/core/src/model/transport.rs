//! Remote backends speaking the wire protocol over HTTP or a child
//! process's stdin/stdout.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use serde::Deserialize;

use super::protocol::{self, FillMaskResponse, Request, SingleTokenResponse};
use super::{MaskedLm, Prediction};
use crate::error::{Error, Result};

/// Transport failures are retried `retries` times with exponential backoff
/// starting at `base_delay`; anything else fails immediately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

/// Outcome of one transport attempt.
enum Attempt {
    Retryable(String),
    Fatal(Error),
}

impl RetryPolicy {
    fn run<T>(&self, context: &str, mut attempt: impl FnMut() -> Result<T, Attempt>) -> Result<T> {
        let mut delay = self.base_delay;
        let mut tries = 0;
        loop {
            tries += 1;
            match attempt() {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(msg)) if tries > self.retries => {
                    return Err(Error::Transport {
                        attempts: tries,
                        context: context.to_string(),
                        message: msg,
                    })
                }
                Err(Attempt::Retryable(msg)) => {
                    log::warn!("attempt {tries} failed for {context}: {msg}; retrying");
                    std::thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                }
            }
        }
    }
}

fn describe(request: &Request) -> String {
    match request {
        Request::FillMask { texts, .. } => format!("{:?}", texts.first().map(String::as_str).unwrap_or("")),
        Request::SingleToken { words, .. } => format!("{:?}", words.first().map(String::as_str).unwrap_or("")),
    }
}

/// Sends requests and parses responses; shared by both transports.
trait Exchange {
    fn backend_id(&self) -> &str;
    fn exchange(&self, request: &Request) -> Result<String, Attempt>;
    fn mask_slot(&self) -> &RwLock<Option<String>>;
    fn retry(&self) -> RetryPolicy;

    fn call<T: for<'de> Deserialize<'de>>(&self, request: &Request) -> Result<T> {
        let context = describe(request);
        let body = self.retry().run(&context, || self.exchange(request))?;
        protocol::decode(&body)
    }

    fn do_fill_mask(&self, texts: &[String], top_k: usize) -> Result<Vec<Vec<Prediction>>> {
        let request = Request::FillMask {
            texts: texts.to_vec(),
            top_k,
            backend_id: Some(self.backend_id().to_string()),
        };
        let response: FillMaskResponse = self.call(&request)?;
        Ok(response.into_iter().map(|item| item.predictions).collect())
    }

    fn do_single_token(&self, words: &[String]) -> Result<Vec<bool>> {
        let request = Request::SingleToken {
            words: words.to_vec(),
            backend_id: Some(self.backend_id().to_string()),
        };
        let response: SingleTokenResponse = self.call(&request)?;
        *self.mask_slot().write().expect("mask slot poisoned") = Some(response.mask_token);
        Ok(response.single)
    }
}

pub struct HttpBackend {
    backend_id: String,
    url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    mask_token: RwLock<Option<String>>,
}

impl HttpBackend {
    pub fn new(backend_id: &str, url: &str, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(600)))
            .build()
            .into();
        HttpBackend {
            backend_id: backend_id.to_string(),
            url: url.to_string(),
            agent,
            retry,
            mask_token: RwLock::new(None),
        }
    }
}

impl Exchange for HttpBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn exchange(&self, request: &Request) -> Result<String, Attempt> {
        let mut response = self
            .agent
            .post(&self.url)
            .send_json(request)
            .map_err(|e| Attempt::Retryable(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .with_config()
            .limit(1 << 30)
            .read_to_string()
            .map_err(|e| Attempt::Retryable(e.to_string()))?;
        match status {
            200..=299 => Ok(body),
            500..=599 => Err(Attempt::Retryable(format!("HTTP {status}: {body}"))),
            _ => Err(Attempt::Fatal(match protocol::decode::<serde_json::Value>(&body) {
                Err(e) => Error::Protocol(format!("HTTP {status}: {e}")),
                Ok(_) => Error::Protocol(format!("HTTP {status}")),
            })),
        }
    }

    fn mask_slot(&self) -> &RwLock<Option<String>> {
        &self.mask_token
    }

    fn retry(&self) -> RetryPolicy {
        self.retry
    }
}

impl MaskedLm for HttpBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn mask_token(&self) -> Option<String> {
        self.mask_token.read().expect("mask slot poisoned").clone()
    }

    fn fill_mask_batch(&self, texts: &[String], top_k: usize) -> Result<Vec<Vec<Prediction>>> {
        self.do_fill_mask(texts, top_k)
    }

    fn single_token_batch(&self, words: &[String]) -> Result<Vec<bool>> {
        self.do_single_token(words)
    }
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for ChildIo {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Runs `sh -c <command>` and exchanges one JSON line per request. A child
/// that dies is respawned on the next attempt.
pub struct StdioBackend {
    backend_id: String,
    command: String,
    retry: RetryPolicy,
    io: Mutex<Option<ChildIo>>,
    mask_token: RwLock<Option<String>>,
}

impl StdioBackend {
    pub fn new(backend_id: &str, command: &str, retry: RetryPolicy) -> Self {
        StdioBackend {
            backend_id: backend_id.to_string(),
            command: command.to_string(),
            retry,
            io: Mutex::new(None),
            mask_token: RwLock::new(None),
        }
    }

    fn spawn(&self) -> std::io::Result<ChildIo> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ChildIo { child, stdin, stdout })
    }
}

impl Exchange for StdioBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn exchange(&self, request: &Request) -> Result<String, Attempt> {
        let line = serde_json::to_string(request).map_err(|e| Attempt::Fatal(e.into()))?;
        let mut guard = self.io.lock().expect("stdio backend poisoned");
        if guard.is_none() {
            *guard = Some(self.spawn().map_err(|e| Attempt::Retryable(format!("spawn: {e}")))?);
        }
        let io = guard.as_mut().expect("child present");
        let result = (|| -> std::io::Result<String> {
            io.stdin.write_all(line.as_bytes())?;
            io.stdin.write_all(b"\n")?;
            io.stdin.flush()?;
            let mut response = String::new();
            if io.stdout.read_line(&mut response)? == 0 {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    "backend process closed its output",
                ));
            }
            Ok(response)
        })();
        match result {
            Ok(r) => Ok(r),
            Err(e) => {
                *guard = None;
                Err(Attempt::Retryable(e.to_string()))
            }
        }
    }

    fn mask_slot(&self) -> &RwLock<Option<String>> {
        &self.mask_token
    }

    fn retry(&self) -> RetryPolicy {
        self.retry
    }
}

impl MaskedLm for StdioBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn mask_token(&self) -> Option<String> {
        self.mask_token.read().expect("mask slot poisoned").clone()
    }

    fn fill_mask_batch(&self, texts: &[String], top_k: usize) -> Result<Vec<Vec<Prediction>>> {
        self.do_fill_mask(texts, top_k)
    }

    fn single_token_batch(&self, words: &[String]) -> Result<Vec<bool>> {
        self.do_single_token(words)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast() -> RetryPolicy {
        RetryPolicy {
            retries: 3,
            base_delay: Duration::from_millis(1),
        }
    }

    #[test]
    fn retries_then_gives_up() {
        let mut calls = 0;
        let r: Result<()> = fast().run("text", || {
            calls += 1;
            Err(Attempt::Retryable("boom".into()))
        });
        assert_eq!(calls, 4);
        match r {
            Err(Error::Transport { attempts, context, .. }) => {
                assert_eq!(attempts, 4);
                assert_eq!(context, "text");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn recovers_within_budget_and_fatal_is_not_retried() {
        let mut calls = 0;
        let r = fast().run("t", || {
            calls += 1;
            if calls < 3 {
                Err(Attempt::Retryable("flaky".into()))
            } else {
                Ok(7)
            }
        });
        assert_eq!(r.unwrap(), 7);

        let mut calls = 0;
        let r: Result<()> = fast().run("t", || {
            calls += 1;
            Err(Attempt::Fatal(Error::Protocol("bad".into())))
        });
        assert_eq!(calls, 1);
        assert!(matches!(r, Err(Error::Protocol(_))));
    }

    #[test]
    fn unreachable_http_endpoint_is_a_transport_error() {
        let b = HttpBackend::new("m", "http://127.0.0.1:9/", fast());
        let err = b
            .fill_mask_batch(&["x ⟨MASK⟩.".to_string()], 1)
            .unwrap_err();
        assert!(matches!(err, Error::Transport { attempts: 4, .. }), "{err}");
        assert!(err.to_string().contains("x ⟨MASK⟩."));
    }

    #[test]
    fn dead_stdio_child_is_a_transport_error() {
        let b = StdioBackend::new("m", "exit 0", fast());
        assert!(matches!(
            b.single_token_batch(&["sail".to_string()]),
            Err(Error::Transport { .. })
        ));
    }
}
