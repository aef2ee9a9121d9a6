//! Per-site routing decision for inbound HTTP requests.

use serde::{Deserialize, Serialize};

use crate::registry::RegistrySnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RouteKind {
    Local,
    ForwardToPrimary,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub kind: RouteKind,
    pub service: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tenant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl RouteDecision {
    fn reject(service: &str, tenant: Option<&str>, reason: &str) -> Self {
        RouteDecision {
            kind: RouteKind::Reject,
            service: service.into(),
            tenant: tenant.map(String::from),
            reason: Some(reason.into()),
        }
    }
}

/// Service named by a `/v3/<segment>/...` path.
pub fn service_from_path(path: &str) -> Option<String> {
    let rest = path.strip_prefix("/v3/")?;
    let segment = rest.split(['/', '?']).next().filter(|s| !s.is_empty())?;
    Some(match segment {
        "security" => "security-kernel".to_string(),
        other => other.to_string(),
    })
}

/// Routing for the router of `local_site`.
pub struct SiteRouter {
    local_site: String,
}

impl SiteRouter {
    pub fn new(local_site: &str) -> Self {
        SiteRouter { local_site: local_site.into() }
    }

    pub fn local_site(&self) -> &str {
        &self.local_site
    }

    pub fn route(&self, tenant_host: &str, url_path: &str, reg: &RegistrySnapshot) -> RouteDecision {
        let Some(tenant) = reg.tenant_by_host(tenant_host) else {
            return RouteDecision::reject(&service_from_path(url_path).unwrap_or_default(), None, "unknown tenant");
        };
        let tid = Some(tenant.tenant_id.as_str());
        let Some(service) = service_from_path(url_path).filter(|s| reg.known_services().contains(s)) else {
            return RouteDecision::reject(&service_from_path(url_path).unwrap_or_default(), tid, "unknown service");
        };
        let Ok(local) = reg.site(&self.local_site) else {
            return RouteDecision::reject(&service, tid, "router site not in registry");
        };
        let decided = |kind| RouteDecision { kind, service: service.clone(), tenant: tid.map(String::from), reason: None };
        if local.is_primary {
            return decided(RouteKind::Local);
        }
        if tenant.owning_site != local.site_id {
            return RouteDecision::reject(&service, tid, "wrong site");
        }
        if local.runs(&service) {
            decided(RouteKind::Local)
        } else {
            decided(RouteKind::ForwardToPrimary)
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::registry::fixtures::document;

    fn reg() -> RegistrySnapshot {
        RegistrySnapshot::load(document(), 0).unwrap()
    }

    #[test]
    fn listed_decisions() {
        let reg = reg();
        let r = SiteRouter::new("assoc1");
        let host = "tenant1.assoc1.example.org";
        assert_eq!(r.route(host, "/v3/streams/projects", &reg).kind, RouteKind::Local);
        assert_eq!(r.route(host, "/v3/jobs/submit", &reg).kind, RouteKind::ForwardToPrimary);
        assert_eq!(r.route(host, "/v3/security/roles", &reg).service, "security-kernel");
        assert_eq!(r.route(host, "/v3/security/roles", &reg).kind, RouteKind::Local);
        let unknown = r.route("nobody.example.org", "/v3/jobs", &reg);
        assert_eq!((unknown.kind, unknown.reason.as_deref()), (RouteKind::Reject, Some("unknown tenant")));
        assert_eq!(r.route(host, "/v3/gizmo", &reg).kind, RouteKind::Reject);
        assert_eq!(r.route(host, "/other", &reg).kind, RouteKind::Reject);
        // assoc1's router does not serve assoc2's tenants
        assert_eq!(r.route("tenant2.assoc2.example.org", "/v3/security/roles", &reg).reason.as_deref(), Some("wrong site"));
        // the primary serves forwarded requests locally
        assert_eq!(SiteRouter::new("primary").route(host, "/v3/jobs/submit", &reg).kind, RouteKind::Local);
    }

    #[test]
    fn path_parsing() {
        assert_eq!(service_from_path("/v3/jobs"), Some("jobs".into()));
        assert_eq!(service_from_path("/v3/jobs?x=1"), Some("jobs".into()));
        assert_eq!(service_from_path("/v3//jobs"), None);
        assert_eq!(service_from_path("/v2/jobs"), None);
    }

    proptest! {
        #[test]
        fn totality_and_hub_and_spoke(t in 0usize..6, s in 0usize..8) {
            let reg = reg();
            let tenants: Vec<_> = reg.tenants().cloned().collect();
            let services: Vec<_> = reg.known_services().iter().cloned().collect();
            let tenant = &tenants[t % tenants.len()];
            let service = &services[s % services.len()];
            let owner = SiteRouter::new(&tenant.owning_site);
            let d = owner.route(&tenant.base_url, &format!("/v3/{service}/x"), &reg);
            prop_assert_ne!(d.kind, RouteKind::Reject);
            if d.kind == RouteKind::ForwardToPrimary {
                // the hop ends at the primary, which serves it
                prop_assert_eq!(SiteRouter::new("primary").route(&tenant.base_url, &format!("/v3/{service}/x"), &reg).kind, RouteKind::Local);
            }
            let primary = SiteRouter::new("primary").route(&tenant.base_url, &format!("/v3/{service}/x"), &reg);
            prop_assert_eq!(primary.kind, RouteKind::Local);
        }
    }
}
