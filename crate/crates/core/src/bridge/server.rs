//! Live protocol endpoint: one simulated vehicle, one operator session.
//!
//! The control loop owns the session and talks to the network only through
//! two queues. Commands come in on an unbounded channel; outgoing lines go
//! through a bounded outbox that sheds the oldest telemetry first. Plain TCP
//! clients and WebSocket clients share the port; a connection that opens
//! with an HTTP `GET` is upgraded.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant as WallInstant};

use serde_json::Value;

use super::autopilot::Command;
use super::protocol::{
    parse_client, Ack, AckStatus, ClientMessage, Malformed, PlanFrame, ScanFrame, ServerMessage,
};
use super::session::Session;
use crate::config::RunConfig;
use crate::sim::WorldModel;

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub world: WorldModel,
    pub seed: u64,
    pub config: RunConfig,
    pub addr: SocketAddr,
    /// Simulated seconds per wall-clock second; 0 runs as fast as possible.
    pub speed: f64,
}

enum Inbound {
    Connected,
    Disconnected,
    Line(Result<ClientMessage, Malformed>),
}

struct OutboxState {
    lines: VecDeque<(bool, String)>,
    open: bool,
}

/// Bounded outgoing queue. Overflow drops the oldest droppable line; acks,
/// events and plans are always kept.
struct Outbox {
    state: Mutex<OutboxState>,
    ready: Condvar,
    capacity: usize,
    dropped: AtomicU64,
}

impl Outbox {
    fn new(capacity: usize) -> Self {
        Self {
            state: Mutex::new(OutboxState {
                lines: VecDeque::new(),
                open: false,
            }),
            ready: Condvar::new(),
            capacity: capacity.max(1),
            dropped: AtomicU64::new(0),
        }
    }

    fn set_open(&self, open: bool) {
        let mut s = self.state.lock().expect("outbox lock");
        s.open = open;
        s.lines.clear();
    }

    fn push(&self, msg: &ServerMessage) {
        let mut s = self.state.lock().expect("outbox lock");
        if !s.open {
            return;
        }
        if s.lines.len() >= self.capacity {
            if let Some(i) = s.lines.iter().position(|(droppable, _)| *droppable) {
                s.lines.remove(i);
                self.dropped.fetch_add(1, Ordering::Relaxed);
            }
        }
        s.lines.push_back((msg.droppable(), msg.to_line()));
        self.ready.notify_one();
    }

    fn take(&self, wait: Duration) -> Vec<String> {
        let mut s = self.state.lock().expect("outbox lock");
        if s.lines.is_empty() && !wait.is_zero() {
            s = self.ready.wait_timeout(s, wait).expect("outbox lock").0;
        }
        s.lines.drain(..).map(|(_, l)| l).collect()
    }
}

/// Running server. Dropping the handle without `stop` leaves it running
/// until the process exits.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    outbox: Arc<Outbox>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Telemetry lines shed under back-pressure so far.
    pub fn dropped(&self) -> u64 {
        self.outbox.dropped.load(Ordering::Relaxed)
    }

    pub fn stop(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Block until the server stops.
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Bind and start the control loop and the acceptor.
pub fn serve(options: ServeOptions) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(options.addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let outbox = Arc::new(Outbox::new(options.config.bridge.telemetry_queue));
    let (tx, rx) = channel();

    let control = {
        let stop = stop.clone();
        let outbox = outbox.clone();
        std::thread::Builder::new()
            .name("control".into())
            .spawn(move || control_loop(options, rx, &outbox, &stop))?
    };
    let acceptor = {
        let stop = stop.clone();
        let outbox = outbox.clone();
        std::thread::Builder::new()
            .name("acceptor".into())
            .spawn(move || accept_loop(listener, tx, outbox, stop))?
    };
    Ok(ServerHandle {
        addr,
        stop,
        outbox,
        threads: vec![control, acceptor],
    })
}

fn ack(
    reference: Option<Value>,
    command: Option<&str>,
    status: AckStatus,
    reason: Option<String>,
) -> ServerMessage {
    ServerMessage::Ack(Ack {
        reference,
        command: command.map(str::to_string),
        status,
        reason,
    })
}

fn control_loop(options: ServeOptions, rx: Receiver<Inbound>, outbox: &Outbox, stop: &AtomicBool) {
    let bridge = options.config.bridge;
    let mut session = Session::new(options.world, options.seed, options.config, true);
    let telemetry_period = 1.0 / bridge.telemetry_hz.max(1e-3);
    let scan_period = 1.0 / bridge.scan_hz.max(1e-3);
    let mut next_telemetry = 0.0;
    let mut next_scan = 0.0;
    let mut pending: VecDeque<(f64, Inbound)> = VecDeque::new();
    let mut since_frame = Vec::new();
    let mut last_plan: Option<PlanFrame> = None;
    let started = WallInstant::now();
    let t0 = session.time();

    while !stop.load(Ordering::SeqCst) {
        while let Ok(m) = rx.try_recv() {
            pending.push_back((session.time() + bridge.latency_s, m));
        }
        while pending
            .front()
            .is_some_and(|(due, _)| *due <= session.time() + 1e-9)
        {
            let (_, m) = pending.pop_front().expect("front checked");
            match m {
                Inbound::Connected => {
                    outbox.set_open(true);
                    let _ = session.apply(&Command::Heartbeat);
                    last_plan = None;
                }
                Inbound::Disconnected => outbox.set_open(false),
                Inbound::Line(Ok(msg)) => {
                    let name = msg.command.name();
                    let reply = match session.apply(&msg.command) {
                        Ok(()) => ack(msg.id, Some(name), AckStatus::Ok, None),
                        Err(r) => ack(msg.id, Some(name), AckStatus::Rejected, Some(r.reason)),
                    };
                    outbox.push(&reply);
                }
                Inbound::Line(Err(bad)) => {
                    outbox.push(&ack(bad.id, None, AckStatus::Error, Some(bad.reason)))
                }
            }
        }

        session.step();
        let t = session.time();
        for e in session.drain_events() {
            outbox.push(&ServerMessage::Event(e.clone()));
            since_frame.push(e);
        }
        let plan = PlanFrame::new(t, session.autopilot().plan());
        if last_plan.as_ref().is_none_or(|p| plan.differs(p)) {
            outbox.push(&ServerMessage::Plan(plan.clone()));
            last_plan = Some(plan);
        }
        if t + 1e-9 >= next_telemetry {
            outbox.push(&ServerMessage::Telemetry(
                session.telemetry(std::mem::take(&mut since_frame)),
            ));
            next_telemetry += telemetry_period;
        }
        if t + 1e-9 >= next_scan {
            if let Some(scan) = ScanFrame::from_session(&session) {
                outbox.push(&ServerMessage::Scan(scan));
            }
            next_scan += scan_period;
        }

        if options.speed > 0.0 {
            let target = Duration::from_secs_f64((t - t0) / options.speed);
            if let Some(wait) = target.checked_sub(started.elapsed()) {
                std::thread::sleep(wait);
            }
        }
    }
}

fn accept_loop(
    listener: TcpListener,
    tx: Sender<Inbound>,
    outbox: Arc<Outbox>,
    stop: Arc<AtomicBool>,
) {
    let busy = Arc::new(AtomicBool::new(false));
    let mut sessions: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                if busy.swap(true, Ordering::SeqCst) {
                    reject(stream);
                    continue;
                }
                let (tx, outbox, stop, busy) =
                    (tx.clone(), outbox.clone(), stop.clone(), busy.clone());
                sessions.retain(|h| !h.is_finished());
                let spawned = std::thread::Builder::new()
                    .name("session".into())
                    .spawn(move || {
                        let _ = tx.send(Inbound::Connected);
                        if let Err(e) = run_connection(stream, &tx, &outbox, &stop) {
                            log::debug!("session ended: {e}");
                        }
                        let _ = tx.send(Inbound::Disconnected);
                        busy.store(false, Ordering::SeqCst);
                    });
                match spawned {
                    Ok(h) => sessions.push(h),
                    Err(e) => log::warn!("could not start session thread: {e}"),
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(10))
            }
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(Duration::from_millis(10));
            }
        }
    }
    for h in sessions {
        let _ = h.join();
    }
}

/// Later connections get one error line and are closed.
fn reject(mut stream: TcpStream) {
    let _ = stream.set_nonblocking(false);
    let msg = ack(
        None,
        None,
        AckStatus::Error,
        Some("another operator session is active".into()),
    );
    let _ = writeln!(stream, "{}", msg.to_line());
    let _ = stream.shutdown(Shutdown::Both);
}

fn run_connection(
    stream: TcpStream,
    tx: &Sender<Inbound>,
    outbox: &Outbox,
    stop: &AtomicBool,
) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_millis(200)))?;
    let mut head = [0u8; 4];
    let is_http = match stream.peek(&mut head) {
        Ok(n) => head[..n].starts_with(b"GET"),
        Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => false,
        Err(e) => return Err(e),
    };
    if is_http {
        run_websocket(stream, tx, outbox, stop)
    } else {
        run_tcp(stream, tx, outbox, stop)
    }
}

fn forward(line: &str, tx: &Sender<Inbound>) {
    let line = line.trim();
    if !line.is_empty() {
        let _ = tx.send(Inbound::Line(parse_client(line)));
    }
}

fn run_tcp(
    stream: TcpStream,
    tx: &Sender<Inbound>,
    outbox: &Outbox,
    stop: &AtomicBool,
) -> std::io::Result<()> {
    stream.set_read_timeout(None)?;
    let closed = Arc::new(AtomicBool::new(false));
    let reader = {
        let stream = stream.try_clone()?;
        let tx = tx.clone();
        let closed = closed.clone();
        std::thread::spawn(move || {
            for line in BufReader::new(stream).lines() {
                match line {
                    Ok(l) => forward(&l, &tx),
                    Err(_) => break,
                }
            }
            closed.store(true, Ordering::SeqCst);
        })
    };
    let mut out = std::io::BufWriter::new(stream.try_clone()?);
    let result = (|| {
        while !stop.load(Ordering::SeqCst) && !closed.load(Ordering::SeqCst) {
            let lines = outbox.take(Duration::from_millis(20));
            for l in &lines {
                out.write_all(l.as_bytes())?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
        Ok(())
    })();
    let _ = stream.shutdown(Shutdown::Both);
    let _ = reader.join();
    result
}

fn run_websocket(
    stream: TcpStream,
    tx: &Sender<Inbound>,
    outbox: &Outbox,
    stop: &AtomicBool,
) -> std::io::Result<()> {
    use tungstenite::{Error, Message};
    stream.set_read_timeout(None)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| std::io::Error::other(e.to_string()))?;
    ws.get_mut()
        .set_read_timeout(Some(Duration::from_millis(5)))?;
    while !stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => text.as_str().lines().for_each(|l| forward(l, tx)),
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(Error::Io(e))
                if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(Error::ConnectionClosed | Error::AlreadyClosed) => break,
            Err(e) => return Err(std::io::Error::other(e.to_string())),
        }
        for l in outbox.take(Duration::ZERO) {
            ws.send(Message::text(l))
                .map_err(|e| std::io::Error::other(e.to_string()))?;
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    Ok(())
}
