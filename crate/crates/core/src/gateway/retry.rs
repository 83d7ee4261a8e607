use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_jitter_fraction: f64,
    pub max_backoff_ms: u64,
    pub retryable_statuses: Vec<u16>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 500,
            backoff_jitter_fraction: 0.2,
            max_backoff_ms: 30_000,
            retryable_statuses: vec![408, 500, 502, 503, 504],
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts < 1 {
            return Err("retry.max_attempts must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.backoff_jitter_fraction) {
            return Err("retry.backoff_jitter_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Delay before attempt `attempt + 1`, where `attempt` (1-based) has just
    /// failed. A server-suggested delay takes precedence over the exponential
    /// schedule; both are capped at `max_backoff_ms`.
    pub fn delay_after(&self, attempt: u32, server_hint: Option<Duration>) -> Duration {
        let cap = Duration::from_millis(self.max_backoff_ms);
        if let Some(hint) = server_hint {
            return hint.min(cap);
        }
        let exp = attempt.saturating_sub(1).min(20);
        let base = self.backoff_base_ms.saturating_mul(1u64 << exp) as f64;
        let jitter = if self.backoff_jitter_fraction > 0.0 {
            rand::rng().random_range(-1.0..=1.0) * self.backoff_jitter_fraction
        } else {
            0.0
        };
        Duration::from_millis((base * (1.0 + jitter)).max(0.0) as u64).min(cap)
    }
}
