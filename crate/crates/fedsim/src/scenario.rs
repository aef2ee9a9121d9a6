//! Scripted multi-user scenarios and the shared-application walkthrough.
//!
//! A script is a list of steps, each an action taken by one user of the
//! script's tenant together with what it must produce. Running stops at the
//! first step whose outcome differs from its expectation.

use std::collections::{BTreeMap, HashMap};

use reqwest::Method;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::client::{Outbound, Response};
use crate::federation::Federation;
use crate::stubs::apps::AppDef;
use crate::stubs::jobs::{Job, JobStatus, SubmitRequest};
use crate::stubs::FileRef;
use crate::transcript::Event;
use crate::{FedsimError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    CreateSystem { id: String, host: String, credential: String },
    SetCredential { system: String, user: String, login: String, secret: String },
    GrantSystem {
        system: String,
        user: String,
        privileges: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<String>,
    },
    RevokeSystem { system: String, user: String },
    ShareSystem { system: String, user: String, privileges: Vec<String> },
    UnshareSystem { system: String, user: String, privileges: Vec<String> },
    CreateApp { app: AppDef },
    ShareApp { app: String, user: String },
    SubmitJob { request: SubmitRequest },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::CreateSystem { .. } => "create_system",
            Action::SetCredential { .. } => "set_credential",
            Action::GrantSystem { .. } => "grant_system",
            Action::RevokeSystem { .. } => "revoke_system",
            Action::ShareSystem { .. } => "share_system",
            Action::UnshareSystem { .. } => "unshare_system",
            Action::CreateApp { .. } => "create_app",
            Action::ShareApp { .. } => "share_app",
            Action::SubmitJob { .. } => "submit_job",
        }
    }

    fn request(&self) -> (Method, String, Value) {
        match self {
            Action::CreateSystem { id, host, credential } => {
                (Method::POST, "/v3/systems".into(), json!({ "id": id, "host": host, "credential": credential }))
            }
            Action::SetCredential { system, user, login, secret } => {
                (Method::POST, format!("/v3/systems/{system}/credentials/{user}"), json!({ "login": login, "secret": secret }))
            }
            Action::GrantSystem { system, user, privileges, path } => {
                (Method::POST, format!("/v3/systems/{system}/perms"), json!({ "user": user, "privileges": privileges, "path": path }))
            }
            Action::RevokeSystem { system, user } => (Method::DELETE, format!("/v3/systems/{system}/perms/{user}"), Value::Null),
            Action::ShareSystem { system, user, privileges } => {
                (Method::POST, format!("/v3/systems/{system}/share"), json!({ "user": user, "privileges": privileges }))
            }
            Action::UnshareSystem { system, user, privileges } => {
                (Method::DELETE, format!("/v3/systems/{system}/share"), json!({ "user": user, "privileges": privileges }))
            }
            Action::CreateApp { app } => (Method::POST, "/v3/apps".into(), serde_json::to_value(app).expect("app serializes")),
            Action::ShareApp { app, user } => (Method::POST, format!("/v3/apps/{app}/share"), json!({ "user": user })),
            Action::SubmitJob { request } => {
                (Method::POST, "/v3/jobs/submit".into(), serde_json::to_value(request).expect("request serializes"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "expect", rename_all = "snake_case")]
pub enum Expect {
    Ok,
    Error {
        code: String,
    },
    Job {
        status: JobStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
        /// Login expected on each system.
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        credentials: BTreeMap<String, String>,
        /// How Systems decided access, by system, for the submitting user.
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        decisions: BTreeMap<String, String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub actor: String,
    #[serde(flatten)]
    pub action: Action,
    pub expect: Expect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub name: String,
    pub tenant: String,
    pub steps: Vec<Step>,
}

impl ScenarioScript {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| FedsimError::ScenarioDivergence { step: 0, detail: format!("unreadable script: {e}") })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepOutcome {
    pub index: usize,
    pub actor: String,
    pub action: String,
    pub status: u16,
    pub code: Option<String>,
    pub job: Option<Job>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub steps: Vec<StepOutcome>,
    pub events: Vec<Event>,
}

/// Last decision Systems made for `user` on each system among `events`.
pub fn decisions_for(events: &[Event], user: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for e in events {
        if let Event::Decision { system, user: u, via, .. } = e {
            if u == user {
                out.insert(system.clone(), via.clone());
            }
        }
    }
    out
}

fn check(index: usize, step: &Step, resp: &Response, events: &[Event]) -> Result<Option<Job>> {
    let diverged = |detail: String| FedsimError::ScenarioDivergence { step: index, detail };
    match &step.expect {
        Expect::Ok if resp.ok() => Ok(None),
        Expect::Ok => Err(diverged(format!("{} failed: {} {}", step.action.name(), resp.status, resp.env.message))),
        Expect::Error { code } if !resp.ok() && resp.code() == Some(code.as_str()) => Ok(None),
        Expect::Error { code } => Err(diverged(format!("expected {code}, got {} {:?}", resp.status, resp.code()))),
        Expect::Job { status, reason, credentials, decisions } => {
            if !resp.ok() {
                return Err(diverged(format!("submit failed: {} {}", resp.status, resp.env.message)));
            }
            let job: Job = serde_json::from_value(resp.env.result.clone()).map_err(|e| diverged(e.to_string()))?;
            if job.status != *status {
                return Err(diverged(format!("job ended {:?} ({:?}), expected {status:?}", job.status, job.reason)));
            }
            if reason.is_some() && job.reason != *reason {
                return Err(diverged(format!("job reason {:?}, expected {reason:?}", job.reason)));
            }
            for (system, login) in credentials {
                if job.credentials.get(system) != Some(login) {
                    return Err(diverged(format!("{system} used {:?}, expected {login}", job.credentials.get(system))));
                }
            }
            let seen = decisions_for(events, &step.actor);
            for (system, via) in decisions {
                if seen.get(system) != Some(via) {
                    return Err(diverged(format!("{system} decided {:?}, expected {via}", seen.get(system))));
                }
            }
            Ok(Some(job))
        }
    }
}

/// Runs `script` against `fed`, logging every actor in first.
pub async fn run_scenario(fed: &Federation, script: &ScenarioScript) -> Result<ScenarioReport> {
    let start = fed.transcript.len();
    let mut tokens: HashMap<String, String> = HashMap::new();
    let mut outcomes = Vec::new();
    for (i, step) in script.steps.iter().enumerate() {
        let index = i + 1;
        if !tokens.contains_key(&step.actor) {
            let pair = fed.login(&script.tenant, &step.actor).await?;
            tokens.insert(step.actor.clone(), pair.access_token);
        }
        fed.transcript.push(Event::Step { index, actor: step.actor.clone(), action: step.action.name().into() });
        let mark = fed.transcript.len();
        let (method, path, body) = step.action.request();
        let out = Outbound { token: Some(&tokens[&step.actor]), body: (!body.is_null()).then_some(&body), ..Default::default() };
        let resp = fed.request(&script.tenant, method, &path, out).await;
        let job = check(index, step, &resp, &fed.transcript.since(mark))?;
        outcomes.push(StepOutcome {
            index,
            actor: step.actor.clone(),
            action: step.action.name().into(),
            status: resp.status,
            code: resp.code().map(String::from),
            job,
        });
    }
    Ok(ScenarioReport { name: script.name.clone(), steps: outcomes, events: fed.transcript.since(start) })
}

fn step(actor: &str, action: Action, expect: Expect) -> Step {
    Step { actor: actor.into(), action, expect }
}

fn strs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn logins(v: &[(&str, &str)]) -> BTreeMap<String, String> {
    v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

/// Alice shares an application with Bob, who runs it against systems he
/// reaches only through her, then with his own access, then not at all.
pub fn sac_walkthrough() -> ScenarioScript {
    let system = |id: &str, credential: &str| Action::CreateSystem { id: id.into(), host: format!("{}.example.org", id.to_lowercase()), credential: credential.into() };
    let grant = |system: &str, user: &str, privileges: &[&str], path: Option<&str>| Action::GrantSystem {
        system: system.into(),
        user: user.into(),
        privileges: strs(privileges),
        path: path.map(String::from),
    };
    let cred = |system: &str, user: &str, login: &str| Action::SetCredential {
        system: system.into(),
        user: user.into(),
        login: login.into(),
        secret: format!("{login}-key"),
    };
    let submit = || Action::SubmitJob {
        request: SubmitRequest { app_id: "aliceApp".into(), archive_system: Some("arcSys".into()), archive_dir: Some("/arcDir".into()) },
    };
    let app = AppDef {
        id: "aliceApp".into(),
        owner: String::new(),
        exec_system: "execSys".into(),
        exec_dir: "/scratch/aliceApp".into(),
        inputs: vec![FileRef { system: "storeSys".into(), path: "/data/inputFile".into() }],
        archive: None,
    };
    let job = |status: JobStatus, reason: Option<&str>, credentials: &[(&str, &str)], decisions: &[(&str, &str)]| Expect::Job {
        status,
        reason: reason.map(String::from),
        credentials: logins(credentials),
        decisions: logins(decisions),
    };
    let share_exec = || Action::ShareSystem { system: "execSys".into(), user: "bob".into(), privileges: strs(&["READ", "EXECUTE"]) };
    let unshare_exec = || Action::UnshareSystem { system: "execSys".into(), user: "bob".into(), privileges: strs(&["READ", "EXECUTE"]) };
    ScenarioScript {
        name: "sac-walkthrough".into(),
        tenant: "tacc".into(),
        steps: vec![
            step("hpcAdmin", system("execSys", "${requester}"), Expect::Ok),
            step("storeAdmin", system("storeSys", "storeAdmin"), Expect::Ok),
            step("archivist", system("arcSys", "${requester}"), Expect::Ok),
            step("storeAdmin", cred("storeSys", "storeAdmin", "storeAdmin"), Expect::Ok),
            step("alice", Action::CreateApp { app }, Expect::Ok),
            step("alice", Action::ShareApp { app: "aliceApp".into(), user: "bob".into() }, Expect::Error { code: "ShareTimeCheckFailed".into() }),
            step("hpcAdmin", grant("execSys", "alice", &["READ", "EXECUTE"], None), Expect::Ok),
            step("storeAdmin", grant("storeSys", "alice", &["READ", "MODIFY"], None), Expect::Ok),
            step("alice", Action::ShareApp { app: "aliceApp".into(), user: "bob".into() }, Expect::Ok),
            step("archivist", grant("arcSys", "bob", &["READ"], None), Expect::Ok),
            step("archivist", grant("arcSys", "bob", &["MODIFY"], Some("/arcDir")), Expect::Ok),
            step("bob", cred("arcSys", "bob", "bob"), Expect::Ok),
            step("bob", submit(), job(JobStatus::Failed, Some("NoCredentials"), &[], &[("execSys", "sac:GrantorAuthorized")])),
            step("bob", cred("execSys", "bob", "bob"), Expect::Ok),
            step(
                "bob",
                submit(),
                job(
                    JobStatus::Finished,
                    None,
                    &[("execSys", "bob"), ("storeSys", "storeAdmin"), ("arcSys", "bob")],
                    &[("execSys", "sac:GrantorAuthorized"), ("storeSys", "sac:GrantorAuthorized"), ("arcSys", "permission")],
                ),
            ),
            step("hpcAdmin", Action::RevokeSystem { system: "execSys".into(), user: "alice".into() }, Expect::Ok),
            step("hpcAdmin", share_exec(), Expect::Ok),
            step(
                "bob",
                submit(),
                job(
                    JobStatus::Finished,
                    None,
                    &[("execSys", "bob"), ("storeSys", "storeAdmin"), ("arcSys", "bob")],
                    &[("execSys", "sac:GranteeAuthorized"), ("storeSys", "sac:GrantorAuthorized"), ("arcSys", "permission")],
                ),
            ),
            step("hpcAdmin", unshare_exec(), Expect::Ok),
            step("bob", submit(), job(JobStatus::Aborted, Some("SacDenied"), &[], &[("execSys", "denied:403")])),
        ],
    }
}
