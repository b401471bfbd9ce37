use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use gridtoken_broker::HttpBroker;
use gridtoken_client::Terminal;
use gridtoken_core::secret::SecretString;
use gridtoken_core::SystemClock;
use gridtoken_robotmgr::{
    http_stores, LocalDirTransport, ManagerSettings, RobotConfig, RobotError, RobotManager,
};

/// Keeps robot broker tokens renewed and delivered.
#[derive(Debug, Parser)]
#[command(name = "robotmgr", version)]
struct Cli {
    /// State directory: journal, robot keys and current tokens.
    #[arg(long, env = "ROBOTMGR_STATE")]
    state: PathBuf,
    /// Broker base URL.
    #[arg(long, env = "GETTOKEN_BROKER")]
    broker: String,
    /// Local directory holding one subdirectory per destination node.
    #[arg(long, env = "ROBOTMGR_NODES_ROOT")]
    nodes_root: Option<PathBuf>,
    /// Never deliver a broker token older than this many seconds.
    #[arg(long, default_value_t = 86_400)]
    renew_after: i64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Bootstrap and enroll a new robot, then run its first cycle.
    Onboard {
        #[arg(long)]
        config: PathBuf,
        /// File holding the broker admin credential.
        #[arg(long, env = "ROBOTMGR_ADMIN_CREDENTIAL_FILE")]
        admin_credential: PathBuf,
        #[arg(long, default_value_t = 5, hide = true)]
        poll_interval: u64,
    },
    /// Run renewal and delivery cycles.
    Run(RunArgs),
    /// Print each robot's state as JSON.
    Status,
}

#[derive(Debug, Args)]
#[group(multiple = false)]
struct RunArgs {
    /// One cycle, then exit.
    #[arg(long)]
    once: bool,
    /// Seconds between cycles.
    #[arg(long, default_value_t = 21_600)]
    interval: u64,
}

fn fail(e: impl std::fmt::Display, code: u8) -> ExitCode {
    eprintln!("robotmgr: {e}");
    ExitCode::from(code)
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let poll_interval = match &cli.command {
        Command::Onboard { poll_interval, .. } => *poll_interval,
        _ => 5,
    };
    let mut settings = ManagerSettings {
        renew_after: cli.renew_after,
        poll_interval,
        ..ManagerSettings::default()
    };
    if let Command::Run(RunArgs {
        once: false,
        interval,
    }) = &cli.command
    {
        settings.cycle_period = *interval as i64;
    }
    let nodes_root = cli
        .nodes_root
        .clone()
        .unwrap_or_else(|| cli.state.join("nodes"));
    let mgr = match RobotManager::open(
        &cli.state,
        Arc::new(HttpBroker::new(&cli.broker)),
        Arc::new(SystemClock),
        Arc::new(LocalDirTransport::new(nodes_root)),
        http_stores(),
        settings,
    ) {
        Ok(m) => m,
        Err(e) => return fail(e, 1),
    };

    match cli.command {
        Command::Onboard {
            config,
            admin_credential,
            ..
        } => {
            let config = match RobotConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(e, 1),
            };
            let admin = match std::fs::read_to_string(&admin_credential) {
                Ok(t) => SecretString::new(t.trim()),
                Err(e) => return fail(format!("{}: {e}", admin_credential.display()), 1),
            };
            match mgr
                .onboard(&Terminal { quiet: false }, &admin, config)
                .await
            {
                Ok((record, report)) => {
                    println!(
                        "{}",
                        serde_json::to_string(&record).expect("record serializes")
                    );
                    for line in report.log_lines() {
                        println!("{line}");
                    }
                    if report.all_ok() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => fail(&e, e.exit_code() as u8),
            }
        }
        Command::Run(args) => loop {
            let ok = match mgr.run_cycle().await {
                Ok(report) => {
                    for line in report.log_lines() {
                        println!("{line}");
                    }
                    report.all_ok()
                }
                Err(e) => {
                    eprintln!("robotmgr: {e}");
                    false
                }
            };
            if args.once {
                return if ok {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(1)
                };
            }
            tokio::select! {
                _ = tokio::time::sleep(Duration::from_secs(args.interval)) => {}
                _ = tokio::signal::ctrl_c() => return ExitCode::SUCCESS,
            }
        },
        Command::Status => match mgr.status().await {
            Ok(records) => {
                for r in records {
                    println!("{}", serde_json::to_string(&r).expect("record serializes"));
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e, RobotError::exit_code(&e) as u8),
        },
    }
}
