//! Latency added by routing through an associate to the primary.

use std::time::Instant;

use reqwest::Method;
use serde::{Deserialize, Serialize};

use crate::client::Outbound;
use crate::federation::Federation;
use crate::matrix::target_path;
use crate::{FedsimError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenaltyReport {
    pub service: String,
    pub remote_tenant: String,
    pub local_tenant: String,
    pub samples: usize,
    pub local_median_ms: f64,
    pub remote_median_ms: f64,
    pub delta_ms: f64,
    /// Routers the last remote request passed through.
    pub remote_hops: Option<String>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Median latency of GETs to `service` from a user of `remote_tenant`
/// minus the same from a user of `local_tenant`, over `samples` pairs.
pub async fn measure_cross_site_penalty(fed: &Federation, service: &str, remote_tenant: &str, local_tenant: &str, samples: usize) -> Result<PenaltyReport> {
    let user = "penalty-probe";
    let remote = fed.login(remote_tenant, user).await?.access_token;
    let local = fed.login(local_tenant, user).await?.access_token;
    let path = target_path(service);
    let mut hops = None;
    let mut remote_ms = Vec::with_capacity(samples);
    let mut local_ms = Vec::with_capacity(samples);
    // one untimed round each to open connections
    for (tenant, token) in [(remote_tenant, &remote), (local_tenant, &local)] {
        fed.request(tenant, Method::GET, path, Outbound { token: Some(token), ..Default::default() }).await;
    }
    for _ in 0..samples {
        for (tenant, token, sink) in [(remote_tenant, &remote, &mut remote_ms), (local_tenant, &local, &mut local_ms)] {
            let t0 = Instant::now();
            let resp = fed.request(tenant, Method::GET, path, Outbound { token: Some(token), ..Default::default() }).await;
            let ms = t0.elapsed().as_secs_f64() * 1000.0;
            if !resp.ok() {
                return Err(FedsimError::Http(format!("{path} as {user}@{tenant}: {} {}", resp.status, resp.env.message)));
            }
            if tenant == remote_tenant {
                hops = resp.hops;
            }
            sink.push(ms);
        }
    }
    let (l, r) = (median(local_ms), median(remote_ms));
    Ok(PenaltyReport {
        service: service.into(),
        remote_tenant: remote_tenant.into(),
        local_tenant: local_tenant.into(),
        samples,
        local_median_ms: l,
        remote_median_ms: r,
        delta_ms: r - l,
        remote_hops: hops,
    })
}
