//! Paced isPermitted load against a running federation.
//!
//! Permissions are seeded straight into the primary's RBAC in blocks of one
//! thousand path permissions per simulated system, spread over five user
//! archetype roles. Virtual users each hold one archetype and query through
//! the primary's router with their own token, pausing a random wait between
//! requests.

use std::time::{Duration, Instant};

use fedsec_core::Caller;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use reqwest::Method;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::client::{send, Outbound};
use crate::federation::Federation;
use crate::{FedsimError, Result};

pub const ARCHETYPES: [&str; 5] = ["scientists", "developers", "project-managers", "collaborators", "public"];
pub const PERMISSIONS_PER_SYSTEM: usize = 1000;
pub const DEFAULT_WAIT: (f64, f64) = (0.01, 0.1);
/// Share of queries aimed at something the user's archetype was granted.
pub const HIT_RATIO: f64 = 0.8;

const PRIVILEGES: [&str; 3] = ["READ", "READ,MODIFY", "*"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub permission_count: usize,
    pub concurrent_users: usize,
    /// Seconds between one user's requests, drawn uniformly.
    pub wait_time_range: (f64, f64),
    pub duration: f64,
    /// Seconds of load before measurement starts.
    #[serde(default)]
    pub warmup: f64,
    #[serde(default)]
    pub seed: u64,
}

impl LoadProfile {
    pub fn new(permission_count: usize, concurrent_users: usize, duration: f64) -> Self {
        LoadProfile { permission_count, concurrent_users, wait_time_range: DEFAULT_WAIT, duration, warmup: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.wait_time_range;
        let bad = |m: &str| Err(FedsimError::SeedingFailed(m.into()));
        if self.permission_count == 0 || self.concurrent_users == 0 {
            return bad("permission count and user count must be positive");
        }
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("wait range must be positive and ordered");
        }
        if !(self.duration > 0.0 && self.warmup >= 0.0) {
            return bad("duration must be positive");
        }
        Ok(())
    }
}

/// Wait range from `a:b` seconds.
pub fn parse_wait(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got `{s}`"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    Ok((a, b))
}

/// One row of the report, in the column layout of a classic load table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub scenario: String,
    pub permissions: usize,
    pub users: usize,
    pub requests: usize,
    pub failures: usize,
    pub rps: f64,
    pub min_ms: f64,
    pub avg_ms: f64,
    pub max_ms: f64,
    pub p75_ms: f64,
    pub p999_ms: f64,
}

impl LoadReport {
    pub fn header() -> &'static str {
        "Scenario | #Permissions | #Users | #Requests | RPS | Min | Avg | Max | 75%ile | 99.9%ile (ms)"
    }

    pub fn row(&self) -> String {
        format!(
            "{} | {} | {} | {} | {:.1} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2}",
            self.scenario, self.permissions, self.users, self.requests, self.rps, self.min_ms, self.avg_ms, self.max_ms, self.p75_ms, self.p999_ms
        )
    }
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    // the epsilon keeps 99.9% of 1000 at rank 999 despite rounding
    let rank = ((p / 100.0) * sorted.len() as f64 - 1e-9).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Statistics over latencies in milliseconds.
pub fn summarize(scenario: &str, permissions: usize, users: usize, mut samples: Vec<f64>, failures: usize, elapsed: f64) -> LoadReport {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let avg = if n == 0 { 0.0 } else { samples.iter().sum::<f64>() / n as f64 };
    LoadReport {
        scenario: scenario.into(),
        permissions,
        users,
        requests: n,
        failures,
        rps: if elapsed > 0.0 { n as f64 / elapsed } else { 0.0 },
        min_ms: samples.first().copied().unwrap_or(0.0),
        avg_ms: avg,
        max_ms: samples.last().copied().unwrap_or(0.0),
        p75_ms: percentile(&samples, 75.0),
        p999_ms: percentile(&samples, 99.9),
    }
}

/// Permission `j` of system `n`, and the archetype holding it.
pub fn seeded_permission(tenant: &str, n: usize, j: usize) -> (&'static str, String) {
    let arch = ARCHETYPES[j % ARCHETYPES.len()];
    let privilege = PRIVILEGES[(j / ARCHETYPES.len()) % PRIVILEGES.len()];
    (arch, format!("files:{tenant}:{privilege}:load-sys{n}:/projects/p{j}/{arch}"))
}

/// A READ query below permission `j` of system `n`.
pub fn query_for(tenant: &str, n: usize, j: usize) -> String {
    let arch = ARCHETYPES[j % ARCHETYPES.len()];
    format!("files:{tenant}:READ:load-sys{n}:/projects/p{j}/{arch}/results.dat")
}

/// Grows the seeded permission set on the primary.
pub struct Seeder {
    pub tenant: String,
    seeded: usize,
}

impl Seeder {
    pub fn new(fed: &Federation, tenant: &str) -> Result<Self> {
        let rbac = &fed.primary().rbac;
        for arch in ARCHETYPES {
            match rbac.create_role(&Caller::Bootstrap, tenant, arch, "load", "load archetype") {
                Ok(_) | Err(fedsec_core::rbac::RbacError::RoleExists(_)) => {}
                Err(e) => return Err(FedsimError::SeedingFailed(e.to_string())),
            }
        }
        Ok(Seeder { tenant: tenant.into(), seeded: 0 })
    }

    pub fn seeded(&self) -> usize {
        self.seeded
    }

    pub fn systems(&self) -> usize {
        self.seeded.div_ceil(PERMISSIONS_PER_SYSTEM)
    }

    /// Seeds until `count` permissions exist. `count` is rounded up to whole
    /// systems.
    pub fn seed_to(&mut self, fed: &Federation, count: usize) -> Result<()> {
        let rbac = &fed.primary().rbac;
        let target = count.div_ceil(PERMISSIONS_PER_SYSTEM) * PERMISSIONS_PER_SYSTEM;
        while self.seeded < target {
            let n = self.seeded / PERMISSIONS_PER_SYSTEM;
            let j = self.seeded % PERMISSIONS_PER_SYSTEM;
            let (arch, perm) = seeded_permission(&self.tenant, n, j);
            rbac.grant_permission(&Caller::Bootstrap, &self.tenant, arch, &perm).map_err(|e| FedsimError::SeedingFailed(format!("{perm}: {e}")))?;
            self.seeded += 1;
        }
        Ok(())
    }
}

/// Logs in `count` virtual users, one archetype each, and returns their
/// (name, archetype index, token).
pub async fn virtual_users(fed: &Federation, tenant: &str, count: usize) -> Result<Vec<(String, usize, String)>> {
    let rbac = &fed.primary().rbac;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let name = format!("load-user-{i}");
        let arch = i % ARCHETYPES.len();
        let id = fedsec_core::UserIdentity::new(name.clone(), tenant);
        rbac.grant_role(&Caller::Bootstrap, &id, ARCHETYPES[arch]).map_err(|e| FedsimError::SeedingFailed(e.to_string()))?;
        let pair = fed.login(tenant, &name).await?;
        out.push((name, arch, pair.access_token));
    }
    Ok(out)
}

struct UserRun {
    samples: Vec<f64>,
    failures: usize,
}

/// Runs `profile` against the permissions already seeded by `seeder`.
pub async fn run_load(fed: &Federation, seeder: &Seeder, profile: &LoadProfile) -> Result<LoadReport> {
    profile.validate()?;
    let systems = seeder.systems();
    if systems == 0 {
        return Err(FedsimError::SeedingFailed("nothing seeded".into()));
    }
    let tenant = seeder.tenant.clone();
    let users = virtual_users(fed, &tenant, profile.concurrent_users).await?;
    let host = fed.tenant_host(&tenant).ok_or_else(|| FedsimError::SeedingFailed(format!("no host for {tenant}")))?;
    let router = fed.dns.resolve(&host).ok_or_else(|| FedsimError::SeedingFailed(format!("no router for {host}")))?;

    let driver = tokio::runtime::Builder::new_multi_thread().worker_threads(2).thread_name("load-driver").enable_all().build()?;
    let http = reqwest::Client::new();
    let start = Instant::now();
    let measure_from = start + Duration::from_secs_f64(profile.warmup);
    let stop = measure_from + Duration::from_secs_f64(profile.duration);
    let (lo, hi) = profile.wait_time_range;
    let mut handles = Vec::new();
    for (i, (name, arch, token)) in users.into_iter().enumerate() {
        let http = http.clone();
        let host = host.clone();
        let router = router.clone();
        let tenant = tenant.clone();
        let seed = profile.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        handles.push(driver.spawn(async move {
            let mut rng = StdRng::seed_from_u64(seed);
            let mut run = UserRun { samples: Vec::new(), failures: 0 };
            loop {
                tokio::time::sleep(Duration::from_secs_f64(rng.gen_range(lo..=hi))).await;
                if Instant::now() >= stop {
                    break;
                }
                let n = rng.gen_range(0..systems);
                let slot = rng.gen_range(0..PERMISSIONS_PER_SYSTEM / ARCHETYPES.len());
                let hit = rng.gen_bool(HIT_RATIO);
                let owner = if hit { arch } else { (arch + rng.gen_range(1..ARCHETYPES.len())) % ARCHETYPES.len() };
                let j = slot * ARCHETYPES.len() + owner;
                let body = json!({ "username": name, "permission": query_for(&tenant, n, j) });
                let sent = Instant::now();
                let out = Outbound { token: Some(&token), body: Some(&body), ..Default::default() };
                let resp = send(&http, &router, Some(&host), Method::POST, "/v3/security/perms/isPermitted", out).await;
                let ms = sent.elapsed().as_secs_f64() * 1000.0;
                if sent < measure_from {
                    continue;
                }
                let correct = resp.ok() && resp.env.result.as_bool() == Some(hit);
                run.samples.push(ms);
                if !correct {
                    run.failures += 1;
                }
            }
            run
        }));
    }
    let mut samples = Vec::new();
    let mut failures = 0;
    for h in handles {
        let run = h.await.map_err(|e| FedsimError::Http(e.to_string()))?;
        samples.extend(run.samples);
        failures += run.failures;
    }
    driver.shutdown_background();
    let scenario = format!("{}K/{}u", seeder.seeded() / 1000, profile.concurrent_users);
    Ok(summarize(&scenario, seeder.seeded(), profile.concurrent_users, samples, failures, profile.duration))
}

/// Seeds and runs each rung of `ladder` in turn on one federation.
pub async fn run_ladder(fed: &Federation, tenant: &str, ladder: &[usize], base: &LoadProfile) -> Result<Vec<LoadReport>> {
    let mut seeder = Seeder::new(fed, tenant)?;
    let mut reports = Vec::new();
    for &count in ladder {
        seeder.seed_to(fed, count)?;
        let profile = LoadProfile { permission_count: count, ..base.clone() };
        reports.push(run_load(fed, &seeder, &profile).await?);
    }
    Ok(reports)
}
