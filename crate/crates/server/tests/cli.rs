use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

fn huddle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_huddle")).args(args).output().unwrap()
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
    }
}

fn serve(dir: &Path) -> (Server, String) {
    let script = dir.join("backend.json");
    std::fs::write(&script, r#"{"candidate":{"fallback":"Labs first, then the gym."}}"#).unwrap();
    let config = dir.join("server.json");
    std::fs::write(&config, r#"{"logDir":"logs","flushIntervalMs":100,"backend":{"kind":"scripted","script":"backend.json"}}"#).unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port().to_string();
    let child = Command::new(env!("CARGO_BIN_EXE_huddle"))
        .args(["serve", "--config", config.to_str().unwrap(), "--port", &port])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    while TcpStream::connect(format!("127.0.0.1:{port}")).is_err() {
        assert!(Instant::now() < deadline, "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    }
    (Server(child), format!("ws://127.0.0.1:{port}/ws"))
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).to_string()
}

#[test]
fn host_commands_drive_a_running_server() {
    let dir = tempfile::tempdir().unwrap();
    let (_server, url) = serve(dir.path());

    let out = stdout(&huddle(&["create-session", "--url", &url, "--session", "cli", "--mode", "roundtable"]));
    assert_eq!(out.trim(), "created cli");

    let out = stdout(&huddle(&[
        "say", "--url", &url, "--session", "cli", "--as", "D1", "--room", "main", "--listen-ms", "1500",
        "Lisa, what do you think?",
    ]));
    assert!(out.lines().any(|l| l == r#"{"type":"agent_speech","room":"main","text":"Labs first, then the gym."}"#), "{out}");

    // D1 has left, so the main room can change mode. It has a history, so a
    // fresh main room replaces it.
    let out = stdout(&huddle(&["set-mode", "--url", &url, "--session", "cli", "--mode", "peripheral"]));
    assert_eq!(out.trim(), "main-2");

    let failed = huddle(&["move", "--url", &url, "--session", "cli", "--participant", "ghost", "--room", "main"]);
    assert_eq!(failed.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&failed.stderr).contains("NoSuchParticipant"));

    let bad = huddle(&["create-session", "--url", &url, "--session", "x", "--mode", "circus"]);
    assert_eq!(bad.status.code(), Some(2));

    std::thread::sleep(Duration::from_millis(300));
    let log = std::fs::read_to_string(dir.path().join("logs/cli__main.events.jsonl")).unwrap();
    assert!(log.contains("Labs first, then the gym."));
}
