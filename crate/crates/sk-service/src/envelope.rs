//! Response envelope shared by every endpoint.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::extract::{FromRequest, FromRequestParts};
use axum::Json;
use fedsec_core::gatekeeper::Rule;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const API_VERSION: &str = "v3";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEnvelope {
    pub status: String,
    pub message: String,
    pub result: Value,
    pub version: String,
}

impl ApiEnvelope {
    pub fn success(message: impl Into<String>, result: impl Serialize) -> Self {
        ApiEnvelope {
            status: "success".into(),
            message: message.into(),
            result: serde_json::to_value(result).expect("result serializes"),
            version: API_VERSION.into(),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == "success"
    }

    /// Machine-readable error code, if this is an error envelope.
    pub fn code(&self) -> Option<&str> {
        self.result.get("code")?.as_str()
    }

    pub fn rule(&self) -> Option<Rule> {
        Rule::parse(self.result.get("rule")?.as_str()?)
    }
}

pub fn ok(message: &str, result: impl Serialize) -> Response {
    Json(ApiEnvelope::success(message, result)).into_response()
}

/// Error response: HTTP status plus a code in `result.code`.
#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub rule: Option<Rule>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into(), rule: None }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    pub fn forbidden(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, code, message)
    }

    /// 401 for signature problems, 403 for every other rule.
    pub fn rejected(rule: Rule, detail: impl Into<String>) -> Self {
        let status = if rule == Rule::R1 { StatusCode::UNAUTHORIZED } else { StatusCode::FORBIDDEN };
        ApiError { status, code: "RequestRejected", message: detail.into(), rule: Some(rule) }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut result = json!({ "code": self.code });
        if let Some(rule) = self.rule {
            result["rule"] = json!(rule.label());
        }
        let body = ApiEnvelope { status: "error".into(), message: self.message, result, version: API_VERSION.into() };
        (self.status, Json(body)).into_response()
    }
}

pub type ApiResult = Result<Response, ApiError>;

/// JSON body whose rejection is an envelope.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: serde::de::DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(ApiError::bad_request(e.body_text())),
        }
    }
}

/// Query string whose rejection is an envelope.
pub struct Params<T>(pub T);

impl<S: Send + Sync, T: serde::de::DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut axum::http::request::Parts, state: &S) -> Result<Self, Self::Rejection> {
        match axum::extract::Query::<T>::from_request_parts(parts, state).await {
            Ok(axum::extract::Query(v)) => Ok(Params(v)),
            Err(e) => Err(ApiError::bad_request(e.body_text())),
        }
    }
}

pub async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}
