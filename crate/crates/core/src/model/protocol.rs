//! JSON wire protocol shared by the HTTP and stdio transports.
//!
//! Requests:
//!
//! ```text
//! {"op":"fill_mask","texts":["... ⟨MASK⟩."],"top_k":5}
//! {"op":"single_token","words":["sail","smoke"]}
//! ```
//!
//! Either request may carry `"backend_id"` to address one model slot of a
//! multi-model server. A `fill_mask` response is a JSON array with one
//! `{"predictions":[{"token":t,"score":s},...]}` object per text, in request
//! order. A `single_token` response is `{"single":[...],"mask_token":"..."}`.
//! Failures are `{"error":"..."}`.

use serde::{Deserialize, Serialize};

use super::{MaskedLm, Prediction};
use crate::error::{Error, Result};
use crate::patterns::MASK_PLACEHOLDER;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    FillMask {
        texts: Vec<String>,
        top_k: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        backend_id: Option<String>,
    },
    SingleToken {
        words: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        backend_id: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillMaskItem {
    pub predictions: Vec<Prediction>,
}

pub type FillMaskResponse = Vec<FillMaskItem>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingleTokenResponse {
    pub single: Vec<bool>,
    pub mask_token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

/// Parses a response body, surfacing `{"error":...}` as a protocol error.
pub fn decode<T: for<'de> Deserialize<'de>>(body: &str) -> Result<T> {
    if let Ok(ErrorResponse { error }) = serde_json::from_str::<ErrorResponse>(body) {
        return Err(Error::Protocol(format!("backend error: {error}")));
    }
    serde_json::from_str(body)
        .map_err(|e| Error::Protocol(format!("malformed response ({e}): {}", truncate(body))))
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(200) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Status code and body a server returns for `body`.
///
/// 400 for malformed requests, 404 for an unknown `backend_id`, 500 when
/// the backend itself fails.
pub fn handle_request(backend: &dyn MaskedLm, body: &str) -> (u16, String) {
    let fail = |status: u16, error: String| {
        let body = serde_json::to_string(&ErrorResponse { error }).expect("error serializes");
        (status, body)
    };
    let request: Request = match serde_json::from_str(body) {
        Ok(r) => r,
        Err(e) => return fail(400, format!("malformed request: {e}")),
    };
    let addressed = match &request {
        Request::FillMask { backend_id, .. } | Request::SingleToken { backend_id, .. } => {
            backend_id.as_deref()
        }
    };
    if let Some(id) = addressed {
        if id != backend.backend_id() {
            return fail(404, format!("unknown backend_id {id:?}"));
        }
    }
    match request {
        Request::FillMask { texts, top_k, .. } => {
            if top_k == 0 {
                return fail(400, "top_k must be at least 1".into());
            }
            if let Some(t) = texts.iter().find(|t| t.matches(MASK_PLACEHOLDER).count() != 1) {
                return fail(400, format!("text must contain exactly one {MASK_PLACEHOLDER}: {t:?}"));
            }
            match backend.fill_mask_batch(&texts, top_k) {
                Ok(all) => {
                    let response: FillMaskResponse = all
                        .into_iter()
                        .map(|predictions| FillMaskItem { predictions })
                        .collect();
                    (200, serde_json::to_string(&response).expect("response serializes"))
                }
                Err(e) => fail(500, e.to_string()),
            }
        }
        Request::SingleToken { words, .. } => {
            if let Some(w) = words.iter().find(|w| w.is_empty() || w.chars().any(char::is_whitespace)) {
                return fail(400, format!("invalid word {w:?}"));
            }
            match backend.single_token_batch(&words) {
                Ok(single) => {
                    let response = SingleTokenResponse {
                        single,
                        mask_token: backend.mask_token().unwrap_or_default(),
                    };
                    (200, serde_json::to_string(&response).expect("response serializes"))
                }
                Err(e) => fail(500, e.to_string()),
            }
        }
    }
}
