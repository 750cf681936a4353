use std::time::Duration;

use serde_json::Value;
use streamqa::provider::{JsonTransport, ProviderError};

const TIMEOUT: Duration = Duration::from_secs(120);

/// POSTs each provider request as JSON to a fixed URL.
pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(TIMEOUT)).build().into();
        Self { url: url.into(), agent }
    }
}

impl JsonTransport for HttpTransport {
    fn call(&self, request: &Value) -> Result<Value, ProviderError> {
        let mut response = self
            .agent
            .post(&self.url)
            .send_json(request)
            .map_err(|e| ProviderError::Transport(format!("{}: {e}", self.url)))?;
        response.body_mut().read_json::<Value>().map_err(|e| ProviderError::BadResponse(format!("{}: {e}", self.url)))
    }
}
