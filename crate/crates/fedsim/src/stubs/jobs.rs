//! Synchronous job execution over Apps, Systems and Files.
//!
//! A submitted job walks PENDING, PROCESSING_INPUTS, STAGING_INPUTS, RUNNING
//! and optionally ARCHIVING before it ends FINISHED, FAILED or ABORTED. A
//! refusal (403) aborts; anything else that goes wrong fails the job.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::Router;
use fedsec_core::UserIdentity;
use parking_lot::RwLock;
use reqwest::Method;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sk_service::auth::SacHeaders;
use sk_service::envelope::{ok, ApiResult, Body};
use sk_service::{ApiError, Authenticated, Gate, HasGate};

use super::apps::AppView;
use super::files::TransferResult;
use super::systems::Resolved;
use super::{FileRef, SiteContext};
use crate::client::{Response as ClientResponse, ServiceClient};
use crate::transcript::{Event, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobStatus {
    Pending,
    ProcessingInputs,
    StagingInputs,
    Running,
    Archiving,
    Finished,
    Failed,
    Aborted,
}

impl JobStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Pending => "PENDING",
            JobStatus::ProcessingInputs => "PROCESSING_INPUTS",
            JobStatus::StagingInputs => "STAGING_INPUTS",
            JobStatus::Running => "RUNNING",
            JobStatus::Archiving => "ARCHIVING",
            JobStatus::Finished => "FINISHED",
            JobStatus::Failed => "FAILED",
            JobStatus::Aborted => "ABORTED",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub app_id: String,
    pub owner: String,
    pub tenant: String,
    pub status: JobStatus,
    pub sac_grantor: Option<String>,
    /// Login used on each system the job touched.
    pub credentials: BTreeMap<String, String>,
    /// Error code of the step that ended the job.
    pub reason: Option<String>,
    pub history: Vec<JobStatus>,
}

#[derive(Clone)]
pub struct JobsState {
    gate: Gate,
    client: Arc<ServiceClient>,
    transcript: Transcript,
    next_id: Arc<AtomicU64>,
    jobs: Arc<RwLock<BTreeMap<String, Job>>>,
}

impl JobsState {
    pub fn new(ctx: &SiteContext, client: Arc<ServiceClient>) -> Self {
        JobsState {
            gate: ctx.gate("jobs"),
            client,
            transcript: ctx.transcript.clone(),
            next_id: Arc::new(AtomicU64::new(1)),
            jobs: Default::default(),
        }
    }
}

impl HasGate for JobsState {
    fn gate(&self) -> &Gate {
        &self.gate
    }
}

pub fn router(state: JobsState) -> Router {
    Router::new()
        .route("/v3/jobs", get(list))
        .route("/v3/jobs/submit", post(submit))
        .route("/v3/jobs/{id}", get(fetch))
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub app_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archive_system: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archive_dir: Option<String>,
}

fn basename(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

/// A failed step: the status it leaves the job in and why.
struct Stop(JobStatus, String);

impl From<&ClientResponse> for Stop {
    fn from(r: &ClientResponse) -> Self {
        let status = if r.status == 403 { JobStatus::Aborted } else { JobStatus::Failed };
        Stop(status, r.code().unwrap_or("Error").to_string())
    }
}

struct Run<'a> {
    state: &'a JobsState,
    me: UserIdentity,
    job: Job,
}

impl Run<'_> {
    fn enter(&mut self, status: JobStatus) {
        self.job.status = status;
        self.job.history.push(status);
        self.state.transcript.push(Event::JobState { job: self.job.id.clone(), state: status.as_str().into() });
    }

    fn sac(&self) -> Option<SacHeaders> {
        self.job.sac_grantor.as_ref().map(|g| SacHeaders { grantor: g.clone(), app_id: self.job.app_id.clone() })
    }

    async fn transfer(&mut self, source: FileRef, destination: FileRef) -> Result<(), Stop> {
        let body = serde_json::to_value(json!({ "source": source, "destination": destination })).expect("transfer serializes");
        let sac = self.sac();
        let resp = self.state.client.call(Method::POST, "/v3/files/transfer", &self.me, sac.as_ref(), Some(&body)).await;
        if !resp.ok() {
            return Err(Stop::from(&resp));
        }
        let done: TransferResult = serde_json::from_value(resp.env.result).map_err(|_| Stop(JobStatus::Failed, "BadTransfer".into()))?;
        self.job.credentials.insert(source.system, done.source_login);
        self.job.credentials.insert(destination.system, done.destination_login);
        Ok(())
    }

    async fn execute(&mut self, req: &SubmitRequest) -> Result<(), Stop> {
        let app = self.state.client.call(Method::GET, &format!("/v3/apps/{}", req.app_id), &self.me, None, None).await;
        if !app.ok() {
            return Err(Stop::from(&app));
        }
        let view: AppView = serde_json::from_value(app.env.result).map_err(|_| Stop(JobStatus::Failed, "BadApp".into()))?;
        self.job.sac_grantor = view.sac_grantor.clone();
        let app = view.app;

        self.enter(JobStatus::ProcessingInputs);
        let sac = self.sac();
        let path = format!("/v3/systems/{}?privilege=EXECUTE", app.exec_system);
        let exec = self.state.client.call(Method::GET, &path, &self.me, sac.as_ref(), None).await;
        if !exec.ok() {
            return Err(Stop::from(&exec));
        }
        let exec: Resolved = serde_json::from_value(exec.env.result).map_err(|_| Stop(JobStatus::Failed, "BadSystem".into()))?;
        if let Some(c) = &exec.credential {
            self.job.credentials.insert(app.exec_system.clone(), c.login.clone());
        }

        self.enter(JobStatus::StagingInputs);
        for input in &app.inputs {
            let dest = FileRef { system: app.exec_system.clone(), path: format!("{}/{}", app.exec_dir, basename(&input.path)) };
            self.transfer(input.clone(), dest).await?;
        }

        self.enter(JobStatus::Running);

        let archive = match (&req.archive_system, &req.archive_dir) {
            (Some(s), Some(d)) => Some(FileRef { system: s.clone(), path: d.clone() }),
            _ => app.archive.clone(),
        };
        if let Some(archive) = archive {
            self.enter(JobStatus::Archiving);
            let source = FileRef { system: app.exec_system.clone(), path: format!("{}/output", app.exec_dir) };
            let dest = FileRef { system: archive.system, path: format!("{}/{}", archive.path.trim_end_matches('/'), self.job.id) };
            self.transfer(source, dest).await?;
        }
        Ok(())
    }
}

async fn submit(State(state): State<JobsState>, auth: Authenticated, Body(req): Body<SubmitRequest>) -> ApiResult {
    let me = auth.effective.clone();
    let id = format!("job-{}", state.next_id.fetch_add(1, Ordering::SeqCst));
    let job = Job {
        id,
        app_id: req.app_id.clone(),
        owner: me.username.clone(),
        tenant: me.tenant.clone(),
        status: JobStatus::Pending,
        sac_grantor: None,
        credentials: BTreeMap::new(),
        reason: None,
        history: Vec::new(),
    };
    let mut run = Run { state: &state, me, job };
    run.enter(JobStatus::Pending);
    match run.execute(&req).await {
        Ok(()) => run.enter(JobStatus::Finished),
        Err(Stop(status, reason)) => {
            run.job.reason = Some(reason);
            run.enter(status);
        }
    }
    let job = run.job;
    state.jobs.write().insert(job.id.clone(), job.clone());
    Ok(ok("job", job))
}

async fn list(State(state): State<JobsState>, auth: Authenticated) -> ApiResult {
    let me = &auth.effective;
    let mine: Vec<Job> = state.jobs.read().values().filter(|j| j.tenant == me.tenant && j.owner == me.username).cloned().collect();
    Ok(ok("jobs", mine))
}

async fn fetch(State(state): State<JobsState>, auth: Authenticated, Path(id): Path<String>) -> ApiResult {
    let job = state
        .jobs
        .read()
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "NoSuchJob", format!("no job {id}")))?;
    if job.tenant != auth.tenant() || (job.owner != auth.effective.username && !auth.is_service()) {
        return Err(ApiError::forbidden("NotAuthorized", format!("{id} belongs to someone else")));
    }
    Ok(ok("job", job))
}
