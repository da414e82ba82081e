use std::time::Duration;

use serde_json::json;

use super::{ConsistencyScorer, ScoreError};
use crate::wire::{bounded_map, post_json, route, PostError};

/// Scores slightly outside `[0, 1]` by at most this much are clamped.
const CLAMP_SLACK: f64 = 1e-9;

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

/// `POST {endpoint}/score` with `{"hypothesis", "reference"}`; expects
/// `{"consistency": float}` back.
pub fn remote_score(
    endpoint: &str,
    hyp: &str,
    reference: &str,
    timeout: Duration,
) -> Result<f64, ScoreError> {
    let url = route(endpoint, "/score");
    let body = json!({ "hypothesis": hyp, "reference": reference });
    let reply = post_json(&url, &body, timeout).map_err(|e| match e {
        PostError::Network(message) => ScoreError::Network {
            endpoint: url.clone(),
            message,
        },
        PostError::Timeout => ScoreError::Timeout {
            endpoint: url.clone(),
        },
        PostError::Status(status) => ScoreError::Status {
            endpoint: url.clone(),
            status,
        },
        PostError::Malformed(message) => ScoreError::Malformed {
            endpoint: url.clone(),
            message,
        },
    })?;
    let value = reply
        .get("consistency")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| ScoreError::Malformed {
            endpoint: url.clone(),
            message: format!("expected {{\"consistency\": number}}, got {reply}"),
        })?;
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else if value >= -CLAMP_SLACK && value <= 1.0 + CLAMP_SLACK {
        Ok(value.clamp(0.0, 1.0))
    } else {
        Err(ScoreError::OutOfRange { value })
    }
}

/// Client for an external consistency evaluator.
#[derive(Debug, Clone)]
pub struct RemoteScorer {
    pub endpoint: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl RemoteScorer {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_max_in_flight(mut self, cap: usize) -> Self {
        self.max_in_flight = cap.max(1);
        self
    }

    /// Scores many pairs with at most `max_in_flight` concurrent requests.
    /// Result `k` always answers pair `k`.
    pub fn score_batch(&self, pairs: &[(String, String)]) -> Vec<Result<f64, ScoreError>> {
        bounded_map(pairs, self.max_in_flight, |(h, r)| {
            remote_score(&self.endpoint, h, r, self.timeout)
        })
    }
}

impl ConsistencyScorer for RemoteScorer {
    fn name(&self) -> &str {
        "remote"
    }
    fn is_pure(&self) -> bool {
        false
    }
    fn score(&self, hypothesis: &str, reference: &str) -> Result<f64, ScoreError> {
        remote_score(&self.endpoint, hypothesis, reference, self.timeout)
    }
}
