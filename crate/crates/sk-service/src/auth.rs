//! Gatekeeper extraction for axum handlers.

use std::sync::Arc;

use axum::extract::FromRequestParts;
use axum::http::request::Parts;
use axum::http::HeaderMap;
use fedsec_core::clock::Clock;
use fedsec_core::gatekeeper::{validate_request, InboundRequest, Rule, HEADER_OBO_TENANT, HEADER_OBO_USER, HEADER_TOKEN};
use fedsec_core::registry::{RegistryHandle, RegistrySnapshot};
use fedsec_core::sharing::{HEADER_SAC_APP, HEADER_SAC_GRANTOR};
use fedsec_core::token::{AccountType, TokenClaims};
use fedsec_core::{Caller, UserIdentity};

use crate::envelope::ApiError;

/// What a service needs to validate its inbound requests.
#[derive(Clone)]
pub struct Gate {
    /// Name this service is registered under, e.g. `security-kernel`.
    pub service: String,
    pub site: String,
    pub registry: Arc<RegistryHandle>,
    pub clock: Arc<dyn Clock>,
}

pub trait HasGate {
    fn gate(&self) -> &Gate;
}

impl HasGate for Gate {
    fn gate(&self) -> &Gate {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SacHeaders {
    pub grantor: String,
    pub app_id: String,
}

/// An accepted request.
#[derive(Debug, Clone)]
pub struct Authenticated {
    pub claims: TokenClaims,
    /// Token subject for user tokens, on-behalf-of identity for service tokens.
    pub effective: UserIdentity,
    pub sac: Option<SacHeaders>,
}

impl Authenticated {
    pub fn is_service(&self) -> bool {
        self.claims.account_type == AccountType::Service
    }

    /// The identity authorization decisions are made against: the sending
    /// service for service tokens, the user otherwise.
    pub fn caller(&self) -> Caller {
        match (self.is_service(), self.claims.subject()) {
            (true, Some(svc)) => Caller::Service(svc),
            _ => Caller::User(self.effective.clone()),
        }
    }

    pub fn service_name(&self) -> Option<&str> {
        self.is_service().then(|| self.claims.username())
    }

    /// Tenant the request operates in.
    pub fn tenant(&self) -> &str {
        &self.effective.tenant
    }
}

fn header<'a>(headers: &'a HeaderMap, name: &str) -> Result<Option<&'a str>, ApiError> {
    match headers.get(name) {
        None => Ok(None),
        Some(v) => v.to_str().map(Some).map_err(|_| ApiError::bad_request(format!("{name} is not valid text"))),
    }
}

impl Gate {
    pub fn snapshot(&self) -> Arc<RegistrySnapshot> {
        self.registry.snapshot()
    }

    pub fn authenticate(&self, headers: &HeaderMap) -> Result<Authenticated, ApiError> {
        let token = match headers.get(HEADER_TOKEN).map(|v| v.to_str()) {
            Some(Ok(t)) if !t.is_empty() => t,
            _ => return Err(ApiError::rejected(Rule::R1, format!("missing or unreadable {HEADER_TOKEN}"))),
        };
        let mut req = InboundRequest::new(token, &self.service, &self.site);
        req.obo_user = header(headers, HEADER_OBO_USER)?.map(String::from);
        req.obo_tenant = header(headers, HEADER_OBO_TENANT)?.map(String::from);
        let verdict = validate_request(&req, &self.snapshot(), self.clock.now());
        if !verdict.accepted {
            return Err(ApiError::rejected(verdict.rule_violated.unwrap_or(Rule::R1), verdict.detail));
        }
        let (Some(claims), Some(effective)) = (verdict.claims, verdict.effective_user) else {
            return Err(ApiError::rejected(Rule::R1, "accepted verdict without identity"));
        };
        let sac = match (header(headers, HEADER_SAC_GRANTOR)?, header(headers, HEADER_SAC_APP)?) {
            (None, None) => None,
            (Some(g), Some(a)) if !g.is_empty() && !a.is_empty() => Some(SacHeaders { grantor: g.into(), app_id: a.into() }),
            _ => return Err(ApiError::bad_request(format!("{HEADER_SAC_GRANTOR} and {HEADER_SAC_APP} go together"))),
        };
        if sac.is_some() && claims.account_type == AccountType::User {
            return Err(ApiError::forbidden("SacOnUserToken", "shared application context is only accepted from services"));
        }
        Ok(Authenticated { claims, effective, sac })
    }
}

impl<S: HasGate + Send + Sync> FromRequestParts<S> for Authenticated {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        state.gate().authenticate(&parts.headers)
    }
}
