use std::io::{BufRead, BufReader};

use gridarena_core::orchestrator::{EventRecord, StatusMap};
use gridarena_service::ApiError;
use ureq::http::StatusCode;
use ureq::Agent;

/// Thin blocking client for the service routes.
pub struct Client {
    base: String,
    token: Option<String>,
    agent: Agent,
}

fn transport(e: ureq::Error) -> ApiError {
    ApiError::new(
        StatusCode::SERVICE_UNAVAILABLE,
        "unreachable",
        e.to_string(),
    )
}

impl Client {
    pub fn new(base: &str, token: Option<String>) -> Self {
        let agent = Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: base.trim_end_matches('/').to_string(),
            token,
            agent,
        }
    }

    fn finish(
        &self,
        res: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<String, ApiError> {
        let mut res = res.map_err(transport)?;
        let status = res.status();
        let body = res.body_mut().read_to_string().map_err(transport)?;
        if status.is_success() {
            Ok(body)
        } else {
            Err(ApiError::from_xml(status, &body).unwrap_or_else(|_| {
                ApiError::new(status, "http", format!("{status}: {}", body.trim()))
            }))
        }
    }

    pub fn get(&self, path: &str) -> Result<String, ApiError> {
        let mut req = self.agent.get(format!("{}{path}", self.base));
        if let Some(t) = &self.token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        self.finish(req.call())
    }

    pub fn post(&self, path: &str, body: &str) -> Result<String, ApiError> {
        let mut req = self
            .agent
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/xml");
        if let Some(t) = &self.token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        self.finish(req.send(body))
    }

    pub fn status(&self, id: &str) -> Result<StatusMap, ApiError> {
        let doc = self.get(&format!("/experiments/{id}"))?;
        StatusMap::from_xml(&doc)
            .map_err(|e| ApiError::internal(format!("bad status document: {e}")))
    }

    /// Streams `/events` from the start and hands each event to `each`
    /// until it returns false.
    pub fn follow(&self, mut each: impl FnMut(u64, EventRecord) -> bool) -> Result<(), ApiError> {
        let mut req = self.agent.get(format!("{}/events?since=0", self.base));
        if let Some(t) = &self.token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let res = req.call().map_err(transport)?;
        if !res.status().is_success() {
            return self.finish(Ok(res)).map(|_| ());
        }
        let reader = BufReader::new(res.into_body().into_reader());
        let mut id = None;
        for line in reader.lines() {
            let line = line.map_err(|e| {
                ApiError::new(
                    StatusCode::SERVICE_UNAVAILABLE,
                    "unreachable",
                    e.to_string(),
                )
            })?;
            if let Some(v) = line.strip_prefix("id:") {
                id = v.trim().parse().ok();
            } else if let Some(v) = line.strip_prefix("data:") {
                let ev = EventRecord::parse_line(v.trim()).map_err(ApiError::internal)?;
                if !each(id.unwrap_or(0), ev) {
                    return Ok(());
                }
            }
        }
        Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "unreachable",
            "event stream closed before the experiment finished",
        ))
    }
}
