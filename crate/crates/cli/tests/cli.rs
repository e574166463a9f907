use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hullsight"))
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn lab() -> PathBuf {
    root().join("rooms/lab.json")
}

fn write_script(dir: &Path, steps: Value) -> PathBuf {
    let p = dir.join("script.json");
    std::fs::write(&p, json!({"name": "t", "steps": steps}).to_string()).unwrap();
    p
}

fn short_hover(dir: &Path) -> PathBuf {
    let script = write_script(
        dir,
        json!([{"action": "takeoff"}, {"action": "keep", "duration": 2}, {"action": "keep", "duration": 6}, {"action": "land"}]),
    );
    let out = dir.join("run");
    let o = bin()
        .args(["run", "--seed", "5", "--fast", "--world"])
        .arg(lab())
        .arg("--script")
        .arg(&script)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["exit"], "success");
    out
}

#[test]
fn run_writes_log_events_and_manifest_then_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = short_hover(dir.path());
    let log = std::fs::read_to_string(out.join("log.csv")).unwrap();
    let header = log.lines().next().unwrap();
    for col in [
        "t",
        "phase",
        "x_true",
        "cmd_vx",
        "user_vx",
        "min_obstacle_d",
        "active_behaviors",
    ] {
        assert!(
            header.split(',').any(|c| c == col),
            "missing {col} in {header}"
        );
    }
    assert!(log.lines().count() > 100);
    assert!(out.join("events.jsonl").exists());

    let o = bin()
        .arg("replay")
        .arg("--manifest")
        .arg(out.join("manifest.json"))
        .arg("--out")
        .arg(dir.path().join("again"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["log_matches"], true);
    assert_eq!(
        std::fs::read(out.join("log.csv")).unwrap(),
        std::fs::read(dir.path().join("again/log.csv")).unwrap()
    );
}

#[test]
fn invalid_inputs_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("world.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let script = write_script(dir.path(), json!([{"action": "takeoff"}]));
    let o = bin()
        .args(["run", "--fast", "--world"])
        .arg(&bad)
        .arg("--script")
        .arg(&script)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());

    let bad_script = dir.path().join("s.json");
    std::fs::write(
        &bad_script,
        r#"{"name":"x","steps":[{"action":"teleport"}]}"#,
    )
    .unwrap();
    let o = bin()
        .args(["run", "--fast", "--world"])
        .arg(lab())
        .arg("--script")
        .arg(&bad_script)
        .arg("--out")
        .arg(dir.path().join("o2"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn metrics_hover_prints_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = short_hover(dir.path());
    let rep = dir.path().join("rep");
    let o = bin()
        .args(["metrics", "hover", "--log"])
        .arg(out.join("log.csv"))
        .arg("--out")
        .arg(&rep)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["kind"], "hover");
    assert_eq!(r["axes"].as_array().unwrap().len(), 3);
    for a in r["axes"].as_array().unwrap() {
        assert!(a["mean"].as_f64().unwrap().abs() < 0.05, "{a}");
    }
    let on_disk: Value =
        serde_json::from_str(&std::fs::read_to_string(rep.join("report.json")).unwrap()).unwrap();
    assert_eq!(on_disk, r);
    assert!(std::fs::read_to_string(rep.join("report.csv"))
        .unwrap()
        .starts_with("axis,center,density"));

    let o = bin()
        .args(["metrics", "hover", "--log"])
        .arg(dir.path().join("missing.csv"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

struct Server {
    child: Child,
    port: u16,
}

impl Server {
    fn start(speed: f64) -> Self {
        let mut child = bin()
            .args([
                "serve",
                "--port",
                "0",
                "--seed",
                "2",
                "--speed",
                &speed.to_string(),
                "--world",
            ])
            .arg(lab())
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let port = line.trim().rsplit(':').next().unwrap().parse().unwrap();
        Self { child, port }
    }

    fn connect(&self) -> Client {
        let s = TcpStream::connect(("127.0.0.1", self.port)).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
        Client {
            reader: BufReader::new(s.try_clone().unwrap()),
            stream: s,
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct Client {
    stream: TcpStream,
    reader: BufReader<TcpStream>,
}

impl Client {
    fn send(&mut self, v: Value) {
        self.send_raw(&v.to_string());
    }

    fn send_raw(&mut self, s: &str) {
        self.stream.write_all(s.as_bytes()).unwrap();
        self.stream.write_all(b"\n").unwrap();
    }

    fn next(&mut self) -> Value {
        let mut line = String::new();
        assert!(
            self.reader.read_line(&mut line).unwrap() > 0,
            "server closed the connection"
        );
        serde_json::from_str(&line).unwrap()
    }

    /// Read until `pred` matches, failing after `limit` wall seconds.
    fn until(&mut self, limit: f64, mut pred: impl FnMut(&Value) -> bool) -> Value {
        let start = Instant::now();
        loop {
            let m = self.next();
            if pred(&m) {
                return m;
            }
            assert!(
                start.elapsed().as_secs_f64() < limit,
                "timed out, last message {m}"
            );
        }
    }
}

fn is_ack(m: &Value, id: i64) -> bool {
    m["type"] == "ack" && m["ref"] == id
}

#[test]
fn tcp_session_acks_streams_and_survives_garbage() {
    let server = Server::start(4.0);
    let mut c = server.connect();
    c.send(json!({"id": 1, "type": "takeoff"}));
    let ack = c.until(10.0, |m| m["type"] == "ack");
    assert_eq!(
        ack,
        json!({"type": "ack", "ref": 1, "command": "takeoff", "status": "ok"})
    );

    c.send_raw("this is not json");
    let err = c.until(10.0, |m| m["type"] == "ack");
    assert_eq!(err["status"], "error");
    c.send(json!({"id": 2, "type": "warp_drive"}));
    let err = c.until(10.0, |m| m["type"] == "ack");
    assert_eq!(
        (err["ref"].clone(), err["status"].clone()),
        (json!(2), json!("error"))
    );

    let mut last_t = 0.0;
    let (mut telemetry, mut scans) = (0, 0);
    c.until(20.0, |m| {
        match m["type"].as_str().unwrap() {
            "telemetry" => {
                let t = m["t"].as_f64().unwrap();
                assert!(t > last_t);
                last_t = t;
                telemetry += 1;
                assert!(m["state"]["position"].is_array());
            }
            "scan" => {
                scans += 1;
                assert!(!m["points"].as_array().unwrap().is_empty());
            }
            _ => {}
        }
        telemetry >= 40
    });
    assert!(
        (15..=25).contains(&scans),
        "{scans} scans per 40 telemetry frames"
    );

    c.send(json!({"id": 3, "type": "heartbeat"}));
    c.send(json!({"id": 4, "type": "velocity", "vx": 0.2}));
    c.until(10.0, |m| is_ack(m, 4));
    c.send(json!({"id": 5, "type": "takeoff"}));
    let rejected = c.until(10.0, |m| is_ack(m, 5));
    assert_eq!(rejected["status"], "rejected");
    assert!(rejected["reason"].is_string());
}

#[test]
fn second_operator_is_turned_away() {
    let server = Server::start(1.0);
    let mut first = server.connect();
    first.until(10.0, |m| m["type"] == "telemetry");
    let mut second = server.connect();
    let m = second.next();
    assert_eq!(m["type"], "ack");
    assert_eq!(m["status"], "error");
    let mut rest = String::new();
    assert_eq!(second.reader.read_line(&mut rest).unwrap_or(0), 0);
    first.until(10.0, |m| m["type"] == "telemetry");
}

/// Take off with a live link and hand over to manual flight.
fn fly_manual(c: &mut Client) {
    c.send(json!({"id": 1, "type": "takeoff"}));
    let start = Instant::now();
    loop {
        let m = c.next();
        if m["type"] == "telemetry" {
            c.send(json!({"type": "heartbeat"}));
        }
        if m["type"] == "event"
            && m["kind"] == "phase_change"
            && m["detail"].as_str().unwrap().ends_with("-> flying")
        {
            break;
        }
        assert!(start.elapsed() < Duration::from_secs(20));
    }
    c.send(json!({"type": "heartbeat"}));
    c.send(json!({"id": 2, "type": "velocity", "vx": 0.1}));
    c.until(10.0, |m| is_ack(m, 2));
}

#[test]
fn disconnect_leaves_vehicle_holding() {
    let server = Server::start(4.0);
    let mut c = server.connect();
    fly_manual(&mut c);
    drop(c);
    std::thread::sleep(Duration::from_millis(1500));
    let mut c = server.connect();
    let m = c.until(10.0, |m| m["type"] == "telemetry");
    assert_eq!(m["mode"], "keep_position", "{}", m["mode"]);
    assert_eq!(m["phase"], "flying");
    assert!(m["heartbeat_age"].as_f64().unwrap() < 0.5);
}

#[test]
fn heartbeat_loss_engages_keep_then_lands() {
    let server = Server::start(4.0);
    let mut c = server.connect();
    fly_manual(&mut c);
    let keep = c.until(20.0, |m| {
        m["type"] == "event" && m["kind"] == "keep_position_engaged"
    });
    assert!(
        keep["detail"].as_str().unwrap().contains("heartbeat"),
        "{keep}"
    );
    let t_keep = keep["t"].as_f64().unwrap();
    let land = c.until(20.0, |m| {
        m["type"] == "event" && m["kind"] == "land_now_abort"
    });
    let gap = land["t"].as_f64().unwrap() - t_keep;
    assert!((gap - 8.0).abs() < 0.5, "hold to land took {gap} s");
}

#[test]
fn websocket_clients_share_the_port() {
    use tungstenite::Message;
    let server = Server::start(4.0);
    let (mut ws, _) = tungstenite::connect(format!("ws://127.0.0.1:{}/", server.port)).unwrap();
    ws.send(Message::text(
        json!({"id": "w1", "type": "takeoff"}).to_string(),
    ))
    .unwrap();
    let start = Instant::now();
    let mut saw_telemetry = false;
    loop {
        assert!(start.elapsed() < Duration::from_secs(20));
        let Message::Text(t) = ws.read().unwrap() else {
            continue;
        };
        let m: Value = serde_json::from_str(t.as_str()).unwrap();
        saw_telemetry |= m["type"] == "telemetry";
        if m["type"] == "ack" {
            assert_eq!(m["ref"], "w1");
            assert_eq!(m["status"], "ok");
            break;
        }
    }
    ws.send(Message::text("{oops")).unwrap();
    loop {
        let Message::Text(t) = ws.read().unwrap() else {
            continue;
        };
        let m: Value = serde_json::from_str(t.as_str()).unwrap();
        saw_telemetry |= m["type"] == "telemetry";
        if m["type"] == "ack" {
            assert_eq!(m["status"], "error");
            break;
        }
    }
    while !saw_telemetry {
        if let Message::Text(t) = ws.read().unwrap() {
            saw_telemetry =
                serde_json::from_str::<Value>(t.as_str()).unwrap()["type"] == "telemetry";
        }
    }
    let _ = ws.close(None);
}
