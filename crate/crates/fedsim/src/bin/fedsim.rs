use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedsim::isolation::run_isolation;
use fedsim::load::{parse_wait, run_load, LoadProfile, LoadReport, Seeder};
use fedsim::matrix::{run_validation_matrix, Axes};
use fedsim::penalty::measure_cross_site_penalty;
use fedsim::scenario::{run_scenario, sac_walkthrough, ScenarioScript};
use fedsim::{build_federation, FedsimError, Topology};

#[derive(Parser)]
#[command(name = "fedsim", about = "Run a simulated multi-site federation")]
struct Cli {
    /// Topology JSON; the built-in two-site topology when omitted.
    #[arg(long, global = true)]
    topology: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scripted scenario and print its transcript.
    Run {
        /// Scenario JSON; the built-in SAC walkthrough when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Print the report as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Paced isPermitted load against the primary.
    Load {
        #[arg(long, default_value_t = 1000)]
        permissions: usize,
        #[arg(long, default_value_t = 20)]
        users: usize,
        /// Seconds between one user's requests, as lo:hi.
        #[arg(long, value_parser = parse_wait, default_value = "0.01:0.1")]
        wait: (f64, f64),
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, default_value_t = 0.0)]
        warmup: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "tacc")]
        tenant: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Send the gatekeeper validation matrix over the wire.
    Matrix {
        /// Print every cell, not only disagreements.
        #[arg(long)]
        all: bool,
    },
    /// Latency added by the associate-to-primary hop.
    Penalty {
        #[arg(long, default_value = "jobs")]
        service: String,
        #[arg(long, default_value = "tenant1")]
        remote: String,
        #[arg(long, default_value = "tacc")]
        local: String,
        /// Per-direction link delay in ms; the topology's when omitted.
        #[arg(long)]
        latency: Option<f64>,
        #[arg(long, default_value_t = 15)]
        samples: usize,
    },
    /// Randomized cross-tenant probes.
    Isolation {
        #[arg(long, default_value_t = 500)]
        probes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "tacc,dev,tenant1")]
        tenants: Vec<String>,
    },
    /// Print the built-in topology or walkthrough as JSON.
    Show {
        #[arg(value_parser = ["topology", "scenario"])]
        what: String,
    },
}

fn read(path: &Path) -> Result<String, FedsimError> {
    std::fs::read_to_string(path).map_err(|e| FedsimError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn topology(path: Option<&Path>) -> Result<Topology, FedsimError> {
    match path {
        Some(p) => Topology::from_json(&read(p)?),
        None => Ok(Topology::canonical()),
    }
}

async fn run(cli: Cli) -> Result<bool, FedsimError> {
    let topo = topology(cli.topology.as_deref())?;
    match cli.command {
        Command::Show { what } => {
            match what.as_str() {
                "topology" => println!("{}", topo.to_json_pretty()),
                _ => println!("{}", sac_walkthrough().to_json_pretty()),
            }
            Ok(true)
        }
        Command::Run { scenario, json } => {
            let script = match scenario {
                Some(p) => ScenarioScript::from_json(&read(&p)?)?,
                None => sac_walkthrough(),
            };
            let fed = build_federation(topo).await?;
            let result = run_scenario(&fed, &script).await;
            let events = fed.transcript.events();
            if json {
                let out = serde_json::json!({
                    "scenario": script.name,
                    "steps": result.as_ref().map(|r| r.steps.clone()).unwrap_or_default(),
                    "error": result.as_ref().err().map(|e| e.to_string()),
                    "events": events,
                });
                println!("{}", serde_json::to_string_pretty(&out).expect("report serializes"));
            } else {
                for ev in &events {
                    println!("{}", serde_json::to_string(ev).expect("event serializes"));
                }
                if let Ok(r) = &result {
                    for s in &r.steps {
                        let job = s.job.as_ref().map(|j| format!(" {} {}", j.id, j.status.as_str())).unwrap_or_default();
                        println!("step {:>2} {:<10} {:<16} {}{job}", s.index, s.actor, s.action, s.status);
                    }
                }
            }
            match result {
                Ok(_) => Ok(true),
                Err(e) => {
                    eprintln!("fedsim: {e}");
                    Ok(false)
                }
            }
        }
        Command::Load { permissions, users, wait, duration, warmup, seed, tenant, out } => {
            let profile = LoadProfile { permission_count: permissions, concurrent_users: users, wait_time_range: wait, duration, warmup, seed };
            profile.validate()?;
            let fed = build_federation(topo).await?;
            let mut seeder = Seeder::new(&fed, &tenant)?;
            seeder.seed_to(&fed, permissions)?;
            let report = run_load(&fed, &seeder, &profile).await?;
            println!("{}", LoadReport::header());
            println!("{}", report.row());
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes"))?;
            }
            Ok(report.failures == 0)
        }
        Command::Matrix { all } => {
            let fed = build_federation(topo).await?;
            let report = run_validation_matrix(&fed, &Axes::canonical()).await?;
            for r in &report.results {
                if all || !r.agrees() {
                    let mark = if r.agrees() { "ok  " } else { "DIFF" };
                    println!("{mark} {} expected {:?}/{} got {:?}/{}", r.cell, r.expected, r.expected_status, r.rule, r.status);
                }
            }
            let bad = report.disagreements().len();
            println!("{} cells, {bad} disagreements", report.results.len());
            Ok(bad == 0)
        }
        Command::Penalty { service, remote, local, latency, samples } => {
            let fed = build_federation(topo).await?;
            if let Some(ms) = latency {
                let site = fed.site_of(&remote).map(|s| s.id.clone()).ok_or_else(|| FedsimError::TopologyInvalid(format!("unknown tenant {remote}")))?;
                fed.set_link_latency(&site, ms);
            }
            let r = measure_cross_site_penalty(&fed, &service, &remote, &local, samples).await?;
            println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
            Ok(true)
        }
        Command::Isolation { probes, seed, tenants } => {
            let fed = build_federation(topo).await?;
            let names: Vec<&str> = tenants.iter().map(String::as_str).collect();
            let report = run_isolation(&fed, &names, probes, seed).await?;
            for p in report.leaks() {
                println!("LEAK {} as {}@{} on {} via {}: {}", serde_json::to_string(&p.kind).unwrap_or_default(), p.attacker, p.attacker_tenant, p.victim_tenant, p.via_host, p.leak.as_deref().unwrap_or_default());
            }
            for c in &report.controls_failed {
                println!("CONTROL FAILED {c}");
            }
            println!("{} probes, {} leaks, {} controls passed", report.probes.len(), report.leaks().len(), report.controls_passed);
            Ok(report.leaks().is_empty() && report.controls_failed.is_empty())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("fedsim: {e}");
            return ExitCode::FAILURE;
        }
    };
    let outcome = rt.block_on(run(cli));
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("fedsim: {e}");
            ExitCode::from(2)
        }
    }
}
