use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use gridtoken_core::peek_claims;
use gridtoken_testbed::stack::{serve_stack, ServedStack, Stack};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

struct Cli {
    served: ServedStack,
    home: tempfile::TempDir,
}

impl Cli {
    async fn new() -> Cli {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap()
            .as_secs() as i64;
        Cli {
            served: serve_stack(Stack::builder().auto_approve().start(now)).await,
            home: tempfile::tempdir().unwrap(),
        }
    }

    fn dir(&self, name: &str) -> PathBuf {
        let p = self.home.path().join(name);
        std::fs::create_dir_all(&p).unwrap();
        p
    }

    fn command(&self, broker: &str, args: &[&str]) -> Command {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_gettoken"));
        cmd.env_clear()
            .env("USER", "alice")
            .env("XDG_RUNTIME_DIR", self.dir("run"))
            .env("TMPDIR", self.dir("tmp"))
            .env("GETTOKEN_CREDDIR", self.dir("creds"))
            .env("GETTOKEN_BROKER", broker)
            .arg("--poll-interval")
            .arg("1")
            .args(args)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        cmd
    }

    /// Run gettoken, opening any URL it prints the way a browser would.
    async fn run(&self, args: &[&str]) -> Run {
        self.run_against(&self.served.broker_url.clone(), args, true)
            .await
    }

    async fn run_against(&self, broker: &str, args: &[&str], browse: bool) -> Run {
        let mut child = self.command(broker, args).spawn().unwrap();
        let (tx, rx) = mpsc::channel::<String>();
        let stderr = child.stderr.take().unwrap();
        let reader = std::thread::spawn(move || {
            let mut all = String::new();
            for line in BufReader::new(stderr).lines() {
                let line = line.unwrap();
                if line.trim_start().starts_with("http") {
                    let _ = tx.send(line.trim().to_string());
                }
                all.push_str(&line);
                all.push('\n');
            }
            all
        });
        let url =
            tokio::task::spawn_blocking(move || rx.recv_timeout(Duration::from_secs(20)).ok())
                .await
                .unwrap();
        if let (Some(url), true) = (url, browse) {
            let resp = reqwest::get(&url).await.unwrap();
            assert!(resp.status().is_success(), "{}", resp.status());
            assert!(resp
                .text()
                .await
                .unwrap()
                .contains("Authentication complete"));
        }
        let (code, stdout) = tokio::task::spawn_blocking(move || wait(&mut child))
            .await
            .unwrap();
        Run {
            code,
            stdout,
            stderr: reader.join().unwrap(),
        }
    }
}

fn wait(child: &mut Child) -> (i32, String) {
    let mut out = String::new();
    child
        .stdout
        .take()
        .unwrap()
        .read_to_string(&mut out)
        .unwrap();
    let status = child.wait().unwrap();
    (status.code().unwrap_or(-1), out)
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn bootstrap_then_cached_run_prints_the_same_path() {
    let cli = Cli::new().await;
    let first = cli.run(&["-e", "dune", "-r", "production", "-v"]).await;
    assert_eq!(first.code, 0, "{}", first.stderr);
    assert!(
        first.stderr.contains("source=bootstrapped"),
        "{}",
        first.stderr
    );
    let path = PathBuf::from(first.stdout.trim());
    assert!(path.starts_with(cli.home.path().join("run")));
    assert!(path
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .starts_with("bt_u"));
    let token = read(&path);
    assert_eq!(peek_claims(token.trim()).unwrap().sub, "alice");
    let requests = cli.served.stack.broker.request_count();

    let second = cli.run(&["-e", "dune", "-r", "production", "-v"]).await;
    assert_eq!(second.code, 0, "{}", second.stderr);
    assert!(second.stderr.contains("source=cached"), "{}", second.stderr);
    assert_eq!(second.stdout, first.stdout);
    assert_eq!(read(&path), token);
    assert_eq!(cli.served.stack.broker.request_count(), requests);

    let shown = cli
        .run(&["-e", "dune", "-r", "production", "--showtoken"])
        .await;
    assert_eq!(shown.stdout, token);
}

#[tokio::test(flavor = "multi_thread")]
async fn downscope_out_and_refusal() {
    let cli = Cli::new().await;
    let first = cli.run(&["-e", "dune", "-r", "production"]).await;
    assert_eq!(first.code, 0);
    // a full-grant token in the default location would satisfy the narrower request
    std::fs::remove_file(first.stdout.trim()).unwrap();

    let out = cli.home.path().join("narrow");
    let narrow = cli
        .run(&[
            "-e",
            "dune",
            "-r",
            "production",
            "-s",
            "storage.read:/dune/raw,compute.create",
            "-o",
            out.to_str().unwrap(),
        ])
        .await;
    assert_eq!(narrow.code, 0, "{}", narrow.stderr);
    assert_eq!(narrow.stdout.trim(), out.to_str().unwrap());
    let claims = peek_claims(read(&out).trim()).unwrap();
    let mut scopes: Vec<String> = claims.scope.iter().map(ToString::to_string).collect();
    scopes.sort();
    assert_eq!(
        scopes,
        vec![
            "compute.create".to_string(),
            "storage.read:/dune/raw".to_string()
        ]
    );

    let refused = cli
        .run(&[
            "-e",
            "dune",
            "-r",
            "production",
            "-s",
            "storage.modify:/dune",
            "-o",
            "/dev/null",
        ])
        .await;
    assert_eq!(refused.code, 3, "{}", refused.stderr);
    assert!(
        refused.stderr.contains("storage.modify:/dune"),
        "{}",
        refused.stderr
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn failures_map_to_exit_codes() {
    let cli = Cli::new().await;

    let no_oidc = cli.run(&["-e", "nova", "--nooidc"]).await;
    assert_eq!(no_oidc.code, 2, "{}", no_oidc.stderr);
    assert!(
        no_oidc.stderr.starts_with("gettoken: "),
        "{}",
        no_oidc.stderr
    );

    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let dead = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let down = cli.run_against(&dead, &["-e", "nova"], false).await;
    assert_eq!(down.code, 4, "{}", down.stderr);

    let unknown = cli.run(&["-e", "atlas"]).await;
    assert_eq!(unknown.code, 1, "{}", unknown.stderr);

    let usage = cli.run(&["-r", "production"]).await;
    assert_eq!(usage.code, 2, "{}", usage.stderr);
}
