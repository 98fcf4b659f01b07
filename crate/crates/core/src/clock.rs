//! Wall-clock timestamps, pinned by `SOURCE_DATE_EPOCH` when it is set.

use chrono::{DateTime, SecondsFormat, Utc};

pub const SOURCE_DATE_EPOCH: &str = "SOURCE_DATE_EPOCH";

pub fn now() -> DateTime<Utc> {
    std::env::var(SOURCE_DATE_EPOCH)
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now)
}

pub fn now_rfc3339() -> String {
    now().to_rfc3339_opts(SecondsFormat::Secs, true)
}
