mod author;
mod econ;
mod operator;
mod output;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use attestrep::bytes::{Digest32, PublicKeyBytes};
use clap::{Args, Parser, Subcommand};
use rust_decimal::Decimal;

/// Attested execution of replication packages.
#[derive(Debug, Parser)]
#[command(name = "attestrep", version)]
pub struct Cli {
    /// Print canonical JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pack a package directory into a deterministic tar archive.
    Pack {
        dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print the digest of a package directory.
    Digest { dir: PathBuf },
    /// Execute a package and print its execution record.
    Run {
        dir: PathBuf,
        #[command(flatten)]
        exec: ExecArgs,
        /// Compute price per hour, USD.
        #[arg(long)]
        hourly_rate: Option<Decimal>,
    },
    /// Execute a package and write a proof bundle for the run.
    Attest {
        dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        exec: ExecArgs,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Verify a proof bundle against trusted provider roots.
    Verify {
        bundle: PathBuf,
        /// Trusted root public key (hex); repeatable.
        #[arg(long = "root", env = "ATTESTREP_ROOTS", value_delimiter = ',', required = true)]
        roots: Vec<PublicKeyBytes>,
        /// Package digest the archive holds for this submission.
        #[arg(long)]
        archive_digest: Option<Digest32>,
        /// Verification time, seconds since the epoch.
        #[arg(long)]
        now: Option<u64>,
    },
    /// Upload an archive to a portal.
    Submit {
        archive: PathBuf,
        #[arg(long)]
        portal: String,
        #[arg(long)]
        author: String,
        /// Ask the portal to run and attest the submission right away.
        #[arg(long)]
        process: bool,
    },
    /// Operate a submission portal.
    Portal {
        #[command(subcommand)]
        command: PortalCommand,
    },
    /// Inspect the attestation provider.
    Provider {
        #[command(subcommand)]
        command: ProviderCommand,
    },
    /// Incentive and cost models.
    Econ {
        #[command(subcommand)]
        command: econ::EconCommand,
    },
    /// Aggregate pilot trial records.
    Report {
        /// Trial CSV; the bundled first-batch data when omitted.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PortalCommand {
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Extra trusted roots besides the portal's own provider.
        #[arg(long = "root", value_delimiter = ',')]
        roots: Vec<PublicKeyBytes>,
        #[arg(long, default_value_t = attestrep::portal::DEFAULT_DUPLICATE_WINDOW)]
        duplicate_window: u64,
        #[command(flatten)]
        exec: ExecArgs,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Recompute the audit hash chain.
    AuditCheck {
        #[command(flatten)]
        store: StoreArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum ProviderCommand {
    /// Print the provider's root key and attestation key id.
    Show {
        #[command(flatten)]
        provider: ProviderArgs,
    },
}

#[derive(Debug, Args)]
pub struct StoreArgs {
    #[arg(long, env = "ATTESTREP_STORE")]
    pub store: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExecArgs {
    #[arg(long, default_value_t = 6 * 3600)]
    pub max_seconds: u64,
    #[arg(long, default_value_t = 1 << 30)]
    pub max_output_bytes: u64,
    /// Where job directories are created.
    #[arg(long)]
    pub work_dir: Option<PathBuf>,
    /// Deterministic nonces, for reproducible fixtures only.
    #[arg(long)]
    pub nonce_seed: Option<u64>,
    /// Freeze the clock at this many seconds since the epoch.
    #[arg(long)]
    pub now: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    /// 32-byte hex seed of the simulated provider root.
    #[arg(long, env = "ATTESTREP_PROVIDER_SEED", hide_env_values = true)]
    pub provider_seed: Option<Digest32>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Failure(e.to_string())
    }
}

pub type CliResult = Result<ExitCode, CliError>;

fn dispatch(cli: Cli) -> CliResult {
    let json = cli.json;
    match cli.command {
        Command::Pack { dir, output } => author::pack(&dir, &output, json),
        Command::Digest { dir } => author::digest(&dir, json),
        Command::Run { dir, exec, hourly_rate } => author::run(&dir, &exec, hourly_rate, json),
        Command::Attest { dir, output, exec, provider } => author::attest(&dir, &output, &exec, &provider, json),
        Command::Verify { bundle, roots, archive_digest, now } => {
            author::verify(&bundle, &roots, archive_digest, now, json)
        }
        Command::Submit { archive, portal, author, process } => {
            operator::submit(&archive, &portal, &author, process, json)
        }
        Command::Portal { command } => match command {
            PortalCommand::Serve { store, listen, roots, duplicate_window, exec, provider } => {
                operator::serve(&store.store, listen, roots, duplicate_window, &exec, &provider)
            }
            PortalCommand::AuditCheck { store } => operator::audit_check(&store.store, json),
        },
        Command::Provider { command: ProviderCommand::Show { provider } } => author::provider_show(&provider, json),
        Command::Econ { command } => econ::run(command, json),
        Command::Report { csv } => econ::report(csv.as_deref(), json),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = match cli.command {
        Command::Portal { command: PortalCommand::Serve { .. } } => "info",
        _ => "warn",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .init();

    match dispatch(cli) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `attestrep --help` for usage");
            ExitCode::from(2)
        }
        Err(CliError::Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
