#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::Method;
use serde_json::{json, Value};

use splitledger_core::{Ledger, LedgerOptions};
use splitledger_server::{router, AppState, PushHub};

pub const PASSWORD: &str = "correct horse battery";
pub const GOOD_PAN: &str = "4242424242424242";
pub const DECLINE_PAN: &str = "4000000000000002";

/// Every response body any test saw, for the PAN scan.
pub fn captured() -> &'static Mutex<Vec<String>> {
    static CAPTURED: OnceLock<Mutex<Vec<String>>> = OnceLock::new();
    CAPTURED.get_or_init(|| Mutex::new(Vec::new()))
}

/// Every server stderr log written by this test binary.
pub fn log_files() -> &'static Mutex<Vec<PathBuf>> {
    static LOGS: OnceLock<Mutex<Vec<PathBuf>>> = OnceLock::new();
    LOGS.get_or_init(|| Mutex::new(Vec::new()))
}

/// A `splitledger` process.
pub struct Server {
    child: Child,
    _stdout: BufReader<ChildStdout>,
    pub addr: SocketAddr,
    pub startup_line: String,
    pub log: PathBuf,
    _log_dir: tempfile::TempDir,
}

impl Server {
    pub fn memory() -> Server {
        Server::start(&["--store", "memory"], &[])
    }

    pub fn file(dir: &Path) -> Server {
        Server::start(&["--store", "file", "--data-dir", dir.to_str().unwrap()], &[])
    }

    pub fn start(args: &[&str], envs: &[(&str, &str)]) -> Server {
        Server::try_start(args, envs).unwrap_or_else(|(code, log)| panic!("server exited with {code:?}: {log}"))
    }

    /// Starts the binary on a free port. On failure returns the exit status
    /// and whatever the process logged.
    pub fn try_start(args: &[&str], envs: &[(&str, &str)]) -> Result<Server, (Option<i32>, String)> {
        let log_dir = tempfile::tempdir().unwrap();
        let log = log_dir.path().join("stderr.log");
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_splitledger"));
        if !args.contains(&"--port") {
            cmd.args(["--port", "0"]);
        }
        cmd.args(args)
            .env("SPLITLEDGER_KDF_ITERATIONS", "1000")
            .env("RUST_LOG", "info")
            .env_remove("SPLITLEDGER_PORT")
            .env_remove("SPLITLEDGER_DATA_DIR")
            .env_remove("SPLITLEDGER_FAULT")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(std::fs::File::create(&log).unwrap());
        for (k, v) in envs {
            cmd.env(k, v);
        }
        let mut child = cmd.spawn().expect("spawn server");
        let mut stdout = BufReader::new(child.stdout.take().unwrap());
        let mut line = String::new();
        stdout.read_line(&mut line).unwrap();
        if line.is_empty() {
            let status = child.wait().unwrap();
            return Err((status.code(), std::fs::read_to_string(&log).unwrap_or_default()));
        }
        let addr = line
            .split_whitespace()
            .find_map(|w| w.strip_prefix("http://"))
            .and_then(|a| a.parse().ok())
            .unwrap_or_else(|| panic!("unexpected startup line {line:?}"));
        log_files().lock().unwrap().push(log.clone());
        Ok(Server {
            child,
            _stdout: stdout,
            addr,
            startup_line: line.trim().to_string(),
            log,
            _log_dir: log_dir,
        })
    }

    pub fn api(&self) -> Api {
        Api::new(self.addr)
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    /// SIGKILL: no shutdown hooks run.
    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
        self.keep_log();
    }

    /// SIGTERM and wait for a clean exit.
    pub fn terminate(mut self) -> Option<i32> {
        let status = Command::new("kill").args(["-TERM", &self.child.id().to_string()]).status().unwrap();
        assert!(status.success());
        let code = self.child.wait().unwrap().code();
        self.keep_log();
        code
    }

    /// Waits for the process to exit on its own.
    pub fn wait_exit(mut self, timeout: Duration) -> std::process::ExitStatus {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            if let Some(status) = self.child.try_wait().unwrap() {
                self.keep_log();
                return status;
            }
            assert!(std::time::Instant::now() < deadline, "server did not exit");
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    // The temp dir goes away with the server; keep a copy of the log for
    // the end-of-run scan.
    fn keep_log(&mut self) {
        let text = std::fs::read_to_string(&self.log).unwrap_or_default();
        captured().lock().unwrap().push(text);
        log_files().lock().unwrap().retain(|p| p != &self.log);
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            let _ = self.child.kill();
            let _ = self.child.wait();
            self.keep_log();
        }
    }
}

/// The router served in-process, so tests can reach into the ledger.
pub struct InProcess {
    pub addr: SocketAddr,
    pub ledger: Arc<Ledger>,
    pub hub: Arc<PushHub>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl InProcess {
    pub fn start(options: impl FnOnce(Arc<PushHub>) -> LedgerOptions) -> InProcess {
        let hub = Arc::new(PushHub::new());
        let ledger = Arc::new(Ledger::in_memory(options(hub.clone())));
        let state = AppState { ledger: ledger.clone(), hub: hub.clone() };
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (shutdown, stop) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, router(state))
                    .with_graceful_shutdown(async {
                        let _ = stop.await;
                    })
                    .await
                    .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        InProcess { addr, ledger, hub, shutdown: Some(shutdown), thread: Some(thread) }
    }

    pub fn api(&self) -> Api {
        Api::new(self.addr)
    }
}

impl Drop for InProcess {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn fast_auth() -> splitledger_core::auth::AuthConfig {
    splitledger_core::auth::AuthConfig { kdf_iterations: 1000, ..Default::default() }
}

#[derive(Debug, Clone)]
pub struct Resp {
    pub status: u16,
    pub body: Value,
}

impl Resp {
    pub fn code(&self) -> &str {
        self.body["error"]["code"].as_str().unwrap_or("")
    }

    #[track_caller]
    pub fn ok(self) -> Value {
        assert!((200..300).contains(&self.status), "expected success, got {} {}", self.status, self.body);
        self.body
    }

    #[track_caller]
    pub fn expect(self, status: u16, code: &str) -> Value {
        assert_eq!((self.status, self.code()), (status, code), "body: {}", self.body);
        self.body
    }
}

#[derive(Clone)]
pub struct Api {
    http: Client,
    pub addr: SocketAddr,
}

impl Api {
    pub fn new(addr: SocketAddr) -> Api {
        let http = Client::builder().timeout(Duration::from_secs(60)).pool_max_idle_per_host(32).build().unwrap();
        Api { http, addr }
    }

    pub fn try_call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> reqwest::Result<Resp> {
        let mut req = self.http.request(method, format!("http://{}{path}", self.addr));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send()?;
        let status = resp.status().as_u16();
        let text = resp.text()?;
        let body = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap_or(Value::String(text.clone())) };
        captured().lock().unwrap().push(text);
        Ok(Resp { status, body })
    }

    pub fn call(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> Resp {
        self.try_call(method, path, token, body).unwrap_or_else(|e| panic!("{path}: {e}"))
    }

    pub fn get(&self, path: &str, token: &str) -> Resp {
        self.call(Method::GET, path, Some(token), None)
    }

    pub fn post(&self, path: &str, token: &str, body: Value) -> Resp {
        self.call(Method::POST, path, Some(token), Some(body))
    }

    pub fn put(&self, path: &str, token: &str, body: Value) -> Resp {
        self.call(Method::PUT, path, Some(token), Some(body))
    }

    pub fn delete(&self, path: &str, token: &str) -> Resp {
        self.call(Method::DELETE, path, Some(token), None)
    }

    pub fn signup(&self, username: &str) -> User {
        let body = self
            .call(
                Method::POST,
                "/auth/signup",
                None,
                Some(json!({
                    "display_name": username.to_uppercase(),
                    "username": username,
                    "email": format!("{username}@example.test"),
                    "password": PASSWORD,
                })),
            )
            .ok();
        User {
            token: body["token"].as_str().unwrap().to_string(),
            id: body["user"]["id"].as_str().unwrap().to_string(),
            username: username.to_string(),
        }
    }

    pub fn befriend(&self, a: &User, b: &User) {
        let req = self.post("/friends/requests", &a.token, json!({ "username": b.username })).ok();
        let id = req["id"].as_str().unwrap();
        self.post(&format!("/friends/requests/{id}/respond"), &b.token, json!({ "accept": true })).ok();
    }

    pub fn add_card(&self, user: &User, pan: &str) -> String {
        let card = self
            .post(
                "/cards",
                &user.token,
                json!({ "pan": pan, "expiry_month": 12, "expiry_year": 2099, "holder_name": user.username, "cvv": "123" }),
            )
            .ok();
        card["id"].as_str().unwrap().to_string()
    }

    /// Creates an event and returns its JSON representation.
    pub fn create_event(&self, host: &User, title: &str, total: Value, rule: Value, invitees: &[&User]) -> Value {
        let ids: Vec<&str> = invitees.iter().map(|u| u.id.as_str()).collect();
        self.post("/events", &host.token, json!({ "title": title, "total": total, "rule": rule, "invitees": ids }))
            .ok()
    }

    pub fn respond(&self, user: &User, event: &str, accept: bool) -> Value {
        self.post(&format!("/events/{event}/respond"), &user.token, json!({ "accept": accept })).ok()
    }

    pub fn pay(&self, user: &User, event: &str, card: &str) -> Resp {
        self.post(&format!("/events/{event}/pay"), &user.token, json!({ "card_id": card }))
    }

    pub fn home_ids(&self, user: &User) -> Vec<String> {
        let list = self.get("/events", &user.token).ok();
        list.as_array().unwrap().iter().map(|e| e["event_id"].as_str().unwrap().to_string()).collect()
    }

    /// The caller's conversation with `peer`.
    pub fn chat_with(&self, user: &User, peer: &User) -> String {
        let chats = self.get("/chats", &user.token).ok();
        chats
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["peer"]["id"] == peer.id.as_str())
            .map(|c| c["id"].as_str().unwrap().to_string())
            .unwrap_or_else(|| panic!("{} has no chat with {}", user.username, peer.username))
    }

    pub fn messages(&self, user: &User, chat: &str) -> Vec<Value> {
        self.get(&format!("/chats/{chat}/messages"), &user.token).ok().as_array().unwrap().clone()
    }
}

#[derive(Debug, Clone)]
pub struct User {
    pub token: String,
    pub id: String,
    pub username: String,
}

/// Short random suffix so names stay unique across servers and reruns.
pub fn unique(prefix: &str) -> String {
    format!("{prefix}{}", &uuid_like()[..8])
}

fn uuid_like() -> String {
    use rand::Rng;
    let n: u64 = rand::thread_rng().gen();
    format!("{n:016x}")
}

/// Blocking push-channel client.
pub struct Push {
    socket: tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<std::net::TcpStream>>,
}

impl Push {
    pub fn connect(addr: SocketAddr, token: &str) -> Push {
        let (socket, _) = tungstenite::connect(format!("ws://{addr}/ws?token={token}")).expect("ws connect");
        if let tungstenite::stream::MaybeTlsStream::Plain(s) = socket.get_ref() {
            s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        }
        Push { socket }
    }

    /// Next envelope, or None on timeout or close.
    pub fn next(&mut self) -> Option<Value> {
        loop {
            match self.socket.read() {
                Ok(tungstenite::Message::Text(t)) => {
                    captured().lock().unwrap().push(t.to_string());
                    return Some(serde_json::from_str(&t).unwrap());
                }
                Ok(tungstenite::Message::Close(_)) | Err(_) => return None,
                Ok(_) => {}
            }
        }
    }

    /// Reads envelopes until one matches, failing after `limit` frames.
    pub fn next_matching(&mut self, limit: usize, pred: impl Fn(&Value) -> bool) -> Value {
        for _ in 0..limit {
            let env = self.next().expect("push frame");
            if pred(&env) {
                return env;
            }
        }
        panic!("no matching push frame within {limit} frames");
    }
}

/// Every digit run of 13 or more in `text`. Masked card
/// numbers (`**** **** **** 4242`) never qualify.
pub fn long_digit_runs(text: &str) -> Vec<String> {
    let re = regex::Regex::new(r"[0-9]{13,}").unwrap();
    re.find_iter(text).map(|m| m.as_str().to_string()).collect()
}
