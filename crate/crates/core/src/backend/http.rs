use std::time::Duration;

use ureq::Agent;

use super::{Backend, BackendSpec, ItemResult, Request, Response};
use crate::error::{Error, Result};

/// One JSON request per HTTP POST to `endpoint_or_cmd`.
pub struct HttpBackend {
    spec: BackendSpec,
    agent: Agent,
}

impl HttpBackend {
    pub fn new(spec: BackendSpec) -> Self {
        let agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(spec.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend { spec, agent }
    }
}

impl Backend for HttpBackend {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    fn call(&self, request: &Request) -> Result<ItemResult> {
        let url = &self.spec.endpoint_or_cmd;
        let mut resp = match self.agent.post(url).send_json(request) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Ok(Err(format!("timeout after {}s", self.spec.timeout_s)))
            }
            Err(e) => return Err(Error::Http(format!("{url}: {e}"))),
        };
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Ok(Err(format!("HTTP status {status}")));
        }
        let response: Response = match resp.body_mut().read_json() {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Ok(Err(format!("timeout after {}s", self.spec.timeout_s)))
            }
            Err(e) => return Err(Error::Backend(format!("{url}: malformed response: {e}"))),
        };
        response.into_item(&request.id)
    }
}
