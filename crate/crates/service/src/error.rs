use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use gridarena_core::orchestrator::OrchestratorError;
use gridarena_core::tournament::TournamentError;
use gridarena_core::xml::{self, XmlError, XmlWriter};

/// The single error document every non-success response carries:
/// `<error code=".." message=".."><detail>..</detail>*</error>`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub detail: Vec<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_string(),
            message: message.into(),
            detail: Vec::new(),
        }
    }

    pub fn not_found(kind: &str, id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no such {kind} `{id}`"),
        )
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn validation(violations: Vec<String>) -> Self {
        Self {
            detail: violations,
            ..Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "validation",
                "invalid manifest",
            )
        }
    }

    pub fn unauthorized() -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or wrong API token",
        )
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn to_xml(&self) -> String {
        let mut w = XmlWriter::new();
        let attrs = [
            ("code", self.code.clone()),
            ("message", self.message.clone()),
        ];
        if self.detail.is_empty() {
            w.empty("error", &attrs);
        } else {
            w.open("error", &attrs);
            for d in &self.detail {
                w.text("detail", &[], d);
            }
            w.close("error");
        }
        w.finish()
    }

    /// Reads an error document received with `status`.
    pub fn from_xml(status: StatusCode, doc: &str) -> Result<Self, XmlError> {
        let e = xml::parse(doc)?;
        e.expect_name("error")?;
        Ok(Self {
            status,
            code: e.attr("code")?.to_string(),
            message: e.attr("message")?.to_string(),
            detail: e.children_named("detail").map(|d| d.text.clone()).collect(),
        })
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            [(header::CONTENT_TYPE, crate::XML)],
            self.to_xml(),
        )
            .into_response()
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::NotFound { kind, id } => Self::not_found(kind, &id),
            OrchestratorError::Conflict(m) => Self::conflict(m),
            OrchestratorError::Tournament(TournamentError::Invalid(v)) => Self::validation(v),
            OrchestratorError::Persistence(_) => Self::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "persistence",
                e.to_string(),
            ),
            other => Self::internal(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_document_round_trips() {
        let e = ApiError::validation(vec!["needs >= 2 agents".into(), "id <bad>".into()]);
        let doc = e.to_xml();
        assert!(doc.contains("code=\"validation\""));
        assert_eq!(ApiError::from_xml(e.status, &doc).unwrap(), e);
        let plain = ApiError::conflict("busy");
        assert_eq!(
            ApiError::from_xml(plain.status, &plain.to_xml()).unwrap(),
            plain
        );
    }
}
