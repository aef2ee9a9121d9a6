use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use fedsec_core::secrets::{FileBackend, MasterKey, SecretsStore};
use sk_admin::{
    check_deployment_order, export_secrets, exchange_associate_key, run_bootstrap, AdminError, AdminResult, BootstrapConfig, DeployStep,
    ExportTarget, SiteKind,
};

#[derive(Parser)]
#[command(name = "sk-admin", about = "Bootstrap a site's secrets and check its deployment order")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportKind {
    Kube,
    File,
}

#[derive(Subcommand)]
enum Command {
    /// Create missing secrets; optionally regenerate those matching a pattern.
    Bootstrap {
        #[arg(long)]
        config: PathBuf,
        /// Glob over `tenant/category/owner/name`.
        #[arg(long)]
        replace: Option<String>,
        #[arg(long, value_enum, requires = "out")]
        export: Option<ExportKind>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a deployment event list.
    CheckOrder {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        site_kind: String,
    },
    /// Add an associate's admin-tenant public key to the primary's config.
    ExchangeKey {
        #[arg(long)]
        site: String,
        #[arg(long)]
        key: PathBuf,
        /// Primary bootstrap config, updated in place.
        #[arg(long)]
        config: PathBuf,
        /// Extra `tenant=pem-file` pairs for the associate's other tenants.
        #[arg(long = "tenant-key")]
        tenant_keys: Vec<String>,
    },
}

fn read(path: &Path) -> AdminResult<String> {
    std::fs::read_to_string(path).map_err(|e| AdminError::ConfigInvalid(format!("{}: {e}", path.display())))
}

fn load_config(path: &Path) -> AdminResult<BootstrapConfig> {
    BootstrapConfig::from_json(&read(path)?)
}

fn open_store(config: &BootstrapConfig, config_path: &Path) -> AdminResult<SecretsStore> {
    let sc = config.store.as_ref().ok_or_else(|| AdminError::ConfigInvalid("config has no `store` section".into()))?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let key = MasterKey::from_base64(&read(&base.join(&sc.master_key_file))?).map_err(|e| AdminError::ConfigInvalid(e.to_string()))?;
    let store_path = base.join(&sc.path);
    if let Some(dir) = store_path.parent() {
        if !dir.as_os_str().is_empty() && !dir.is_dir() {
            return Err(AdminError::StoreUnreachable(format!("{} does not exist", dir.display())));
        }
    }
    let backend = FileBackend::open(&store_path)?;
    Ok(SecretsStore::new(&config.site_id, config.admin_tenant()?, Arc::new(backend), key))
}

fn write_out(path: &Path, bytes: &[u8]) -> AdminResult<()> {
    std::fs::write(path, bytes).map_err(|e| AdminError::ExportFailed(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> AdminResult<()> {
    match cli.command {
        Command::Bootstrap { config, replace, export, out } => {
            let cfg = load_config(&config)?;
            let store = open_store(&cfg, &config)?;
            let report = run_bootstrap(&cfg, &store, replace.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if let (Some(kind), Some(out)) = (export, out) {
                let artifact = match kind {
                    ExportKind::Kube => export_secrets(&cfg, &store, ExportTarget::OrchestratorSecrets, None)?,
                    ExportKind::File => {
                        let key = MasterKey::generate();
                        let artifact = export_secrets(&cfg, &store, ExportTarget::EncryptedFile, Some(&key))?;
                        let mut key_path = out.clone().into_os_string();
                        key_path.push(".key");
                        write_out(Path::new(&key_path), key.to_base64().as_bytes())?;
                        artifact
                    }
                };
                write_out(&out, &artifact.to_bytes())?;
            }
            Ok(())
        }
        Command::CheckOrder { events, site_kind } => {
            let kind: SiteKind = site_kind.parse().map_err(AdminError::ConfigInvalid)?;
            let names: Vec<String> = serde_json::from_str(&read(&events)?).map_err(|e| AdminError::ConfigInvalid(e.to_string()))?;
            let steps = names.iter().map(|n| n.parse::<DeployStep>()).collect::<Result<Vec<_>, _>>().map_err(AdminError::ConfigInvalid)?;
            check_deployment_order(&steps, kind)?;
            println!("ok");
            Ok(())
        }
        Command::ExchangeKey { site, key, config, tenant_keys } => {
            let mut cfg = load_config(&config)?;
            let admin = cfg
                .topology
                .sites
                .iter()
                .find(|s| s.site_id == site)
                .map(|s| s.admin_tenant.clone())
                .ok_or_else(|| AdminError::ConfigInvalid(format!("unknown site `{site}`")))?;
            let mut keys = BTreeMap::from([(admin, read(&key)?)]);
            for pair in tenant_keys {
                let (tenant, file) = pair.split_once('=').ok_or_else(|| AdminError::ConfigInvalid(format!("expected tenant=file, got `{pair}`")))?;
                keys.insert(tenant.to_string(), read(Path::new(file))?);
            }
            exchange_associate_key(&mut cfg, &site, keys)?;
            std::fs::write(&config, cfg.to_json_pretty()).map_err(|e| AdminError::ConfigInvalid(e.to_string()))?;
            println!("added keys for {site}; re-run bootstrap and reload the registry");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sk-admin: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
