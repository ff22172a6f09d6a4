//! Blocking HTTP client for the KNN service.

use std::time::Duration;

use crate::error::ClientError;
use crate::protocol::{ErrorBody, KnnRequest, KnnResponse};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Client bound to one endpoint URL (the full `.../knn-service` URL).
/// Safe to share across threads; every call is one independent round trip.
pub struct KnnClient {
    http: reqwest::blocking::Client,
    endpoint: String,
}

impl KnnClient {
    pub fn new(endpoint: impl Into<String>) -> Result<KnnClient, ClientError> {
        KnnClient::with_timeout(endpoint, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(
        endpoint: impl Into<String>,
        timeout: Duration,
    ) -> Result<KnnClient, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(KnnClient {
            http,
            endpoint: endpoint.into(),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// One request/response round trip. The parsed response is validated
    /// against the protocol invariants (sorted results, length bound) before
    /// being returned.
    pub fn query(&self, request: &KnnRequest) -> Result<KnnResponse, ClientError> {
        let response = self
            .http
            .post(&self.endpoint)
            .json(request)
            .send()
            .map_err(|source| ClientError::Transport {
                endpoint: self.endpoint.clone(),
                source,
            })?;

        let status = response.status();
        let body = response.text().map_err(|source| ClientError::Transport {
            endpoint: self.endpoint.clone(),
            source,
        })?;

        if !status.is_success() {
            // Prefer the structured {error, message} body when present.
            let detail = match serde_json::from_str::<ErrorBody>(&body) {
                Ok(eb) => format!("{}: {}", eb.error, eb.message),
                Err(_) => body,
            };
            return Err(ClientError::Remote {
                endpoint: self.endpoint.clone(),
                status: status.as_u16(),
                body: detail,
            });
        }

        let parsed: KnnResponse =
            serde_json::from_str(&body).map_err(|e| ClientError::Protocol {
                endpoint: self.endpoint.clone(),
                detail: format!("response does not parse: {e}"),
            })?;
        parsed
            .validate(request.num_images)
            .map_err(|detail| ClientError::Protocol {
                endpoint: self.endpoint.clone(),
                detail,
            })?;
        Ok(parsed)
    }
}

/// One-shot remote query with the default timeout.
pub fn query_remote(endpoint: &str, request: &KnnRequest) -> Result<KnnResponse, ClientError> {
    KnnClient::new(endpoint)?.query(request)
}
