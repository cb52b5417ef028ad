//! `agentseal` subcommands: `keygen`, `run` and `audit`.
//!
//! Exit codes: 0 when nothing suspicious was found, 2 when the report lists
//! anomalies, 1 for usage, input and setup errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use agentseal::encoding::{Canonical, DecodeError, Decoder, Encoder};
use agentseal::registry::RegistrySnapshot;
use agentseal::sim::{
    final_audit, run_scenario, AuditReport, CertBundle, ScenarioConfig, ScenarioKeys, SetupError,
};
use agentseal::{Agent, HostId, KeyPair, TrustAnchor};
use clap::{Parser, Subcommand};
use thiserror::Error;

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_ANOMALIES: i32 = 2;

pub const CA_KEY: &str = "ca.key";
pub const CERTS: &str = "certs.bin";
pub const AGENT: &str = "agent.bin";
pub const REGISTRIES: &str = "rs.bin";
pub const SERVER_KEY: &str = "server.key";
pub const TRANSCRIPT: &str = "transcript.jsonl";
pub const REPORT: &str = "report.json";
pub const AUDIT: &str = "audit.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: malformed contents: {source}")]
    Decode { path: PathBuf, source: DecodeError },
    #[error("{0}")]
    Bundle(String),
    #[error(transparent)]
    Setup(#[from] SetupError),
}

#[derive(Debug, Parser)]
#[command(
    name = "agentseal",
    version,
    about = "Mobile-agent data protection simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive a CA and per-host key pairs from a seed and certify them.
    Keygen {
        #[arg(long)]
        seed: u64,
        /// Comma-separated host ids.
        #[arg(long, value_delimiter = ',', required = true)]
        hosts: Vec<String>,
        #[arg(long, default_value = "keys")]
        out_dir: PathBuf,
    },
    /// Run a scenario and write transcript, report and audit inputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Accept any certificate.
        #[arg(long)]
        no_ca: bool,
    },
    /// Re-audit an agent offline from files written by `run`.
    Audit {
        #[arg(long)]
        agent: PathBuf,
        #[arg(long)]
        rs: PathBuf,
        #[arg(long)]
        certs: PathBuf,
        /// Needed to open encrypted entries; partially encrypted entries
        /// are verified without it.
        #[arg(long)]
        server_key: Option<PathBuf>,
        #[arg(long)]
        no_ca: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_ERROR
            } else {
                EXIT_CLEAN
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("agentseal: {e}");
            EXIT_ERROR
        }
    }
}

pub fn execute(cmd: Command) -> Result<i32, CliError> {
    match cmd {
        Command::Keygen {
            seed,
            hosts,
            out_dir,
        } => {
            let hosts: Vec<HostId> = hosts.into_iter().map(HostId::new).collect();
            keygen(seed, &hosts, &out_dir)?;
            Ok(EXIT_CLEAN)
        }
        Command::Run {
            config,
            out_dir,
            seed,
            no_ca,
        } => {
            let report = run(&config, out_dir.as_deref(), seed, no_ca)?;
            Ok(if report.has_anomalies() {
                EXIT_ANOMALIES
            } else {
                EXIT_CLEAN
            })
        }
        Command::Audit {
            agent,
            rs,
            certs,
            server_key,
            no_ca,
            out,
        } => {
            let report = audit(&agent, &rs, &certs, server_key.as_deref(), no_ca)?;
            match out {
                Some(path) => write(&path, report.to_json().as_bytes())?,
                None => print!("{}", report.to_json()),
            }
            Ok(if report.anomalies.is_empty() {
                EXIT_CLEAN
            } else {
                EXIT_ANOMALIES
            })
        }
    }
}

/// Writes `ca.key`, `certs.bin` and one `<host>.key` per host.
pub fn keygen(seed: u64, hosts: &[HostId], out_dir: &Path) -> Result<(), CliError> {
    if hosts.is_empty() {
        return Err(CliError::Usage("at least one host is required".into()));
    }
    let keys = ScenarioKeys::derive(seed, hosts).map_err(SetupError::from)?;
    create_dir(out_dir)?;
    write(&out_dir.join(CA_KEY), &keys.ca.to_canonical())?;
    write(&out_dir.join(CERTS), &keys.bundle().to_canonical())?;
    for (host, kp) in &keys.keys {
        write(&out_dir.join(key_file(host)?), &kp.to_canonical())?;
    }
    Ok(())
}

/// Loads a bundle written by [`keygen`]. Only the keys of `hosts` are read.
pub fn load_keys(dir: &Path, hosts: &[&HostId]) -> Result<ScenarioKeys, CliError> {
    let ca: KeyPair = read_decoded(&dir.join(CA_KEY))?;
    let bundle: CertBundle = read_decoded(&dir.join(CERTS))?;
    if bundle.ca_public != ca.public {
        return Err(CliError::Bundle(format!(
            "{}: certificates were not issued by {CA_KEY}",
            dir.display()
        )));
    }
    let mut keys = std::collections::BTreeMap::new();
    for host in hosts {
        let path = dir.join(key_file(host)?);
        if !path.exists() {
            return Err(SetupError::MissingKey((*host).clone()).into());
        }
        let kp: KeyPair = read_decoded(&path)?;
        if &kp.owner != *host {
            return Err(CliError::Bundle(format!(
                "{}: key belongs to {}",
                path.display(),
                kp.owner
            )));
        }
        keys.insert(kp.owner.clone(), kp);
    }
    Ok(ScenarioKeys {
        ca,
        keys,
        certs: bundle.directory,
    })
}

/// Runs the scenario at `config_path` and writes its outputs.
pub fn run(
    config_path: &Path,
    out_dir: Option<&Path>,
    seed: Option<u64>,
    no_ca: bool,
) -> Result<agentseal::sim::ScenarioReport, CliError> {
    let text = read_text(config_path)?;
    let mut cfg = ScenarioConfig::from_toml(&text)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
        cfg.validate()?;
    }
    if no_ca {
        cfg.ca_enabled = false;
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    let out_dir = match (out_dir, &cfg.output.out_dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => base.join(d),
        (None, None) => base.join("out"),
    };
    let keys = match &cfg.output.keys {
        Some(dir) => {
            let hosts: Vec<&HostId> = std::iter::once(&cfg.server).chain(&cfg.route).collect();
            load_keys(&base.join(dir), &hosts)?
        }
        None => {
            let hosts: Vec<HostId> = std::iter::once(cfg.server.clone())
                .chain(cfg.route.iter().cloned())
                .collect();
            ScenarioKeys::derive(cfg.seed, &hosts).map_err(SetupError::from)?
        }
    };
    let outcome = run_scenario(&cfg, &keys)?;

    create_dir(&out_dir)?;
    write(
        &out_dir.join(TRANSCRIPT),
        outcome.transcript.to_jsonl().as_bytes(),
    )?;
    write(&out_dir.join(REPORT), outcome.report.to_json().as_bytes())?;
    let snapshots: Vec<RegistrySnapshot> =
        outcome.registries.iter().map(|r| r.snapshot()).collect();
    write(
        &out_dir.join(REGISTRIES),
        &Encoder::new().list(&snapshots).finish(),
    )?;
    let bundle = CertBundle {
        ca_public: keys.ca.public.clone(),
        directory: outcome.directory.clone(),
    };
    write(&out_dir.join(CERTS), &bundle.to_canonical())?;
    write(
        &out_dir.join(SERVER_KEY),
        &keys.key(&cfg.server)?.to_canonical(),
    )?;
    let agent_path = out_dir.join(AGENT);
    let audit_path = out_dir.join(AUDIT);
    match (&outcome.agent, &outcome.report.final_audit) {
        (Some(agent), Some(audit)) => {
            write(&agent_path, &agent.to_canonical())?;
            write(&audit_path, audit.to_json().as_bytes())?;
        }
        _ => {
            // Remove files left by an earlier run.
            for p in [agent_path, audit_path] {
                if p.exists() {
                    fs::remove_file(&p).map_err(|source| CliError::Io {
                        path: p.clone(),
                        source,
                    })?;
                }
            }
        }
    }
    Ok(outcome.report)
}

/// Offline audit of files written by [`run`].
pub fn audit(
    agent_path: &Path,
    rs_path: &Path,
    certs_path: &Path,
    server_key: Option<&Path>,
    no_ca: bool,
) -> Result<AuditReport, CliError> {
    let agent: Agent = read_decoded(agent_path)?;
    let rs_bytes = read(rs_path)?;
    let mut dec = Decoder::new(&rs_bytes);
    let registries: Vec<RegistrySnapshot> = dec
        .list()
        .and_then(|l| dec.finish().map(|_| l))
        .map_err(|source| CliError::Decode {
            path: rs_path.to_path_buf(),
            source,
        })?;
    let bundle: CertBundle = read_decoded(certs_path)?;
    let server = server_key.map(read_decoded::<KeyPair>).transpose()?;
    let trust = if no_ca {
        TrustAnchor::Unverified
    } else {
        TrustAnchor::Ca(bundle.ca_public.clone())
    };
    let observer = agent.id().server_id.clone();
    Ok(final_audit(
        &agent,
        &registries,
        &bundle.directory,
        &trust,
        server.as_ref().map(|k| &k.private),
        &observer,
    ))
}

fn key_file(host: &HostId) -> Result<String, CliError> {
    let id = host.as_str();
    let safe = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !id.starts_with('.');
    if !safe || id == "ca" {
        return Err(CliError::Usage(format!(
            "host id {id:?} cannot be used as a file name"
        )));
    }
    Ok(format!("{id}.key"))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_decoded<T: Canonical>(path: &Path) -> Result<T, CliError> {
    T::from_canonical(&read(path)?).map_err(|source| CliError::Decode {
        path: path.to_path_buf(),
        source,
    })
}
