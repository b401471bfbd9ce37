use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use gridtoken_broker::HttpBroker;
use gridtoken_client::discovery::GETTOKEN_BROKER;
use gridtoken_client::{ClientError, ClientOptions, EnvVars, Terminal, TokenClient};
use gridtoken_core::SystemClock;

/// Get a bearer token for an experiment from the credential broker.
///
/// Looks for a usable token first (BEARER_TOKEN, BEARER_TOKEN_FILE,
/// $XDG_RUNTIME_DIR/bt_u<uid>, /tmp/bt_u<uid>), then tries the stored broker
/// token, then secondary-key renewal, then browser authentication.
#[derive(Debug, Parser)]
#[command(name = "gettoken", version)]
struct Args {
    /// Experiment (issuer alias).
    #[arg(short, long)]
    experiment: String,
    /// Role within the experiment.
    #[arg(short, long)]
    role: Option<String>,
    /// Reduced scopes, comma separated.
    #[arg(short, long, value_delimiter = ',')]
    scopes: Vec<String>,
    /// Audience to restrict the token to.
    #[arg(short, long)]
    audience: Option<String>,
    /// Broker base URL.
    #[arg(short, long, env = GETTOKEN_BROKER)]
    broker: String,
    /// Write the access token here instead of the discovered location.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Identity hint, appended to the broker-token file name.
    #[arg(long)]
    credkey: Option<String>,
    /// File with the hex seed of the secondary signing key.
    #[arg(long)]
    secondary_key: Option<PathBuf>,
    /// Fail with auth-required rather than start browser authentication.
    #[arg(long)]
    nooidc: bool,
    /// Print the token rather than its path.
    #[arg(long)]
    showtoken: bool,
    #[arg(short, long, conflicts_with = "verbose")]
    quiet: bool,
    #[arg(short, long)]
    verbose: bool,
    #[arg(long, default_value_t = gridtoken_client::flow::POLL_INTERVAL, hide = true)]
    poll_interval: u64,
}

fn uid() -> u32 {
    // SAFETY: getuid has no preconditions and cannot fail.
    unsafe { libc::getuid() }
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> ExitCode {
    let args = Args::parse();
    let opts = ClientOptions {
        experiment: args.experiment,
        role: args.role,
        scopes: args.scopes,
        audience: args.audience,
        out: args.out,
        credkey: args.credkey,
        secondary_key: args.secondary_key,
        no_oidc: args.nooidc,
    };
    let client = TokenClient::new(
        Arc::new(HttpBroker::new(args.broker)),
        Arc::new(SystemClock),
        Arc::new(Terminal { quiet: args.quiet }),
        EnvVars::from_process(),
        uid(),
    )
    .with_poll_interval(args.poll_interval);
    match client.get_token(&opts).await {
        Ok(out) => {
            if args.verbose {
                eprintln!(
                    "source={} expires_at={} broker_token_file={}",
                    out.source.as_str(),
                    out.expires_at,
                    out.layout.broker.display()
                );
            }
            if args.showtoken {
                println!("{}", out.access_token);
            } else {
                println!("{}", out.layout.access.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gettoken: {e}");
            exit(&e)
        }
    }
}

fn exit(e: &ClientError) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
