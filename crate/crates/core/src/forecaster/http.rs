use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::ForecastBackend;
use crate::error::{DiclError, Result};

pub const ICL_FORECAST_PATH: &str = "/v1/icl_forecast";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpForecastRequest {
    pub series_bins: Vec<u16>,
    pub k: u32,
    /// Either the string `"all"` or an explicit list of positions.
    pub return_positions: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpForecastResponse {
    pub logits: Vec<Vec<f64>>,
}

/// Exponential backoff for retryable failures (5xx and transport errors).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *p == 0 {
            p = self.cv.wait(p).unwrap_or_else(|e| e.into_inner());
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Remote in-context forecaster speaking the `/v1/icl_forecast` JSON protocol.
pub struct LlmHttp {
    url: String,
    agent: ureq::Agent,
    temperature: f64,
    max_concurrency: usize,
    max_context: Option<usize>,
    retry: RetryPolicy,
    slots: Semaphore,
}

impl std::fmt::Debug for LlmHttp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmHttp")
            .field("url", &self.url)
            .field("temperature", &self.temperature)
            .field("max_concurrency", &self.max_concurrency)
            .field("max_context", &self.max_context)
            .finish()
    }
}

enum Attempt {
    Done(HttpForecastResponse),
    Retry(DiclError),
}

impl LlmHttp {
    pub fn default_concurrency() -> usize {
        4
    }

    pub fn default_timeout_secs() -> u64 {
        60
    }

    pub fn default_temperature() -> f64 {
        1.0
    }

    pub fn new(endpoint: &str, max_concurrency: usize, timeout_secs: u64, temperature: f64) -> Result<Self> {
        if !endpoint.starts_with("http://") && !endpoint.starts_with("https://") {
            return Err(DiclError::invalid(format!(
                "endpoint must be an http(s) URL: {endpoint}"
            )));
        }
        if max_concurrency == 0 {
            return Err(DiclError::invalid("max_concurrency must be >= 1"));
        }
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(DiclError::invalid("temperature must be > 0"));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            url: format!("{}{}", endpoint.trim_end_matches('/'), ICL_FORECAST_PATH),
            agent,
            temperature,
            max_concurrency,
            max_context: None,
            retry: RetryPolicy::default(),
            slots: Semaphore::new(max_concurrency),
        })
    }

    /// Reject series longer than `max_context` before contacting the server.
    pub fn with_max_context(mut self, max_context: Option<usize>) -> Self {
        self.max_context = max_context;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn attempt(&self, req: &HttpForecastRequest) -> Result<Attempt> {
        let _permit = self.slots.acquire();
        let mut resp = match self.agent.post(&self.url).send_json(req) {
            Ok(r) => r,
            Err(e) => {
                return Ok(Attempt::Retry(DiclError::Backend {
                    status: None,
                    retryable: true,
                    message: format!("transport error: {e}"),
                }))
            }
        };
        let status = resp.status().as_u16();
        match status {
            200..=299 => {
                let body: HttpForecastResponse = resp.body_mut().read_json().map_err(|e| DiclError::Backend {
                    status: Some(status),
                    retryable: false,
                    message: format!("malformed response: {e}"),
                })?;
                Ok(Attempt::Done(body))
            }
            413 => Err(DiclError::ContextOverflow {
                len: req.series_bins.len(),
            }),
            500..=599 => Ok(Attempt::Retry(DiclError::Backend {
                status: Some(status),
                retryable: true,
                message: format!("server error {status}"),
            })),
            _ => Err(DiclError::Backend {
                status: Some(status),
                retryable: false,
                message: resp.body_mut().read_to_string().unwrap_or_default(),
            }),
        }
    }

    fn call(&self, req: &HttpForecastRequest) -> Result<HttpForecastResponse> {
        let mut last = None;
        for i in 0..self.retry.max_attempts.max(1) {
            if i > 0 {
                std::thread::sleep(self.retry.base_delay * 2u32.pow(i - 1));
            }
            match self.attempt(req)? {
                Attempt::Done(r) => return Ok(r),
                Attempt::Retry(e) => {
                    log::warn!("icl_forecast attempt {} failed: {e}", i + 1);
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn softmax(&self, logits: &[f64]) -> Result<Vec<f64>> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() || logits.iter().any(|l| l.is_nan()) {
            return Err(DiclError::Numerical("backend returned non-finite logits".into()));
        }
        Ok(logits.iter().map(|&l| ((l - max) / self.temperature).exp()).collect())
    }
}

impl ForecastBackend for LlmHttp {
    fn forecast_bins(&self, bins: &[u16], n_bins: usize, positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        if let Some(max) = self.max_context {
            if bins.len() > max {
                return Err(DiclError::ContextOverflow { len: bins.len() });
            }
        }
        let k = (n_bins as f64).log10().round() as u32;
        let all = positions.len() == bins.len() && positions.iter().enumerate().all(|(i, &p)| i == p);
        let req = HttpForecastRequest {
            series_bins: bins.to_vec(),
            k,
            return_positions: if all {
                serde_json::Value::from("all")
            } else {
                serde_json::Value::from(positions.to_vec())
            },
        };
        let resp = self.call(&req)?;
        if resp.logits.len() != positions.len() {
            return Err(DiclError::Backend {
                status: Some(200),
                retryable: false,
                message: format!("expected {} logit rows, got {}", positions.len(), resp.logits.len()),
            });
        }
        resp.logits
            .iter()
            .map(|row| {
                if row.len() != n_bins {
                    return Err(DiclError::DimMismatch {
                        expected: n_bins,
                        got: row.len(),
                    });
                }
                self.softmax(row)
            })
            .collect()
    }

    fn describe(&self) -> String {
        format!("llm_http({})", self.url)
    }

    fn prefers_concurrency(&self) -> bool {
        self.max_concurrency > 1
    }
}
