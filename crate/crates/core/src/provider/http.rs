use std::time::Duration;

use serde_json::{json, Value};

use super::{ModelProvider, ProviderError, Request};

/// Generic gateway transport: `POST {"prompt", "schema", "temperature": 0}`,
/// response `{"payload": {...}}`. Vendor adapters sit behind the gateway.
pub struct HttpProvider {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("endpoint", &self.endpoint)
            .finish()
    }
}

impl HttpProvider {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(HttpProvider {
            endpoint: endpoint.into(),
            api_key,
            client,
        })
    }

    /// JSON body sent for a request.
    pub fn body(request: &Request) -> Value {
        json!({
            "prompt": request.prompt,
            "schema": request.schema.schema,
            "temperature": request.temperature(),
        })
    }
}

impl ModelProvider for HttpProvider {
    fn complete(&self, request: &Request) -> Result<Value, ProviderError> {
        let mut req = self.client.post(&self.endpoint).json(&Self::body(request));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(ProviderError::Transport(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Rejected(format!("status {status}")));
        }
        let mut body: Value = resp
            .json()
            .map_err(|e| ProviderError::Malformed(e.to_string()))?;
        match body.get_mut("payload") {
            Some(payload) => Ok(payload.take()),
            None => Err(ProviderError::Malformed("response has no \"payload\" field".into())),
        }
    }
}
