//! Headless scripted runs: log, event journal and manifest, plus replay.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::autopilot::{Command, Mode};
use super::session::Session;
use crate::config::RunConfig;
use crate::control::FlightPhase;
use crate::events::{Event, EventKind};
use crate::mission::{MissionScript, PlanStatus, ScriptAction, ScriptStep};
use crate::sim::{WorldModel, SIM_DT};
use crate::{RunError, ScriptError, WorldError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Success,
    InvalidInput,
    LandNowAbort,
    ScriptTimeout,
    MissionFailure,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            Self::Success => 0,
            Self::InvalidInput => 1,
            Self::LandNowAbort => 2,
            Self::ScriptTimeout => 3,
            Self::MissionFailure => 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub world: PathBuf,
    pub script: PathBuf,
    pub seed: u64,
    pub fast: bool,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    /// Also write the per-tick estimation trace.
    pub trace: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub exit: ExitStatus,
    pub reason: Option<String>,
    pub control_ticks: u64,
    pub sim_ticks: u64,
    pub sim_time: f64,
    pub wall_time_s: f64,
}

/// Everything needed to reproduce a run bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub fast: bool,
    pub trace: bool,
    pub world_path: String,
    pub world_sha256: String,
    pub world: String,
    pub script_path: String,
    pub script_sha256: String,
    pub script: String,
    pub config_sha256: String,
    pub config: RunConfig,
    pub log_sha256: String,
    pub events_sha256: String,
    pub summary: RunSummary,
}

pub const LOG_FILE: &str = "log.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_FILE: &str = "estimation.csv";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<String, std::io::Error> {
    std::fs::read_to_string(path)
}

enum Poll {
    Running,
    Done,
    Failed(ExitStatus, String),
}

struct ScriptRunner {
    steps: Vec<ScriptStep>,
    index: usize,
    started_at: f64,
    issued: bool,
}

impl ScriptRunner {
    fn new(script: &MissionScript) -> Self {
        Self {
            steps: script.steps.clone(),
            index: 0,
            started_at: 0.0,
            issued: false,
        }
    }

    fn issue(step: &ScriptStep, session: &mut Session) -> Result<(), Poll> {
        let cmd = match &step.action {
            ScriptAction::Takeoff => Some(Command::Takeoff),
            ScriptAction::Velocity {
                vx,
                vy,
                vz,
                yaw_rate,
                ..
            } => Some(Command::Velocity {
                vx: *vx,
                vy: *vy,
                vz: *vz,
                yaw_rate: *yaw_rate,
            }),
            ScriptAction::Sweep(s) => Some(Command::StartSweep(*s)),
            ScriptAction::Vertical(v) => Some(Command::StartVertical(*v)),
            ScriptAction::GoHome => Some(Command::GoHome),
            ScriptAction::SetHome { x, y, z, yaw } => Some(Command::SetHome {
                x: *x,
                y: *y,
                z: *z,
                yaw: *yaw,
            }),
            ScriptAction::Keep { .. } => Some(Command::Keep),
            ScriptAction::InspectionMode { on } => Some(Command::InspectionMode { on: *on }),
            ScriptAction::Land => Some(Command::Land),
            ScriptAction::Wait { .. } => None,
        };
        match cmd.map(|c| session.apply(&c)) {
            Some(Err(r)) if r.planning => Err(Poll::Failed(ExitStatus::MissionFailure, r.reason)),
            Some(Err(r)) => Err(Poll::Failed(
                ExitStatus::MissionFailure,
                format!("{} rejected: {}", step.action.name(), r.reason),
            )),
            _ => Ok(()),
        }
    }

    fn finished(step: &ScriptStep, session: &Session, elapsed: f64) -> Result<bool, String> {
        let a = session.autopilot();
        Ok(match &step.action {
            ScriptAction::Takeoff => a.phase() == FlightPhase::Flying,
            ScriptAction::Land => a.phase() == FlightPhase::OnGround,
            ScriptAction::Velocity { duration, .. }
            | ScriptAction::Keep { duration }
            | ScriptAction::Wait { duration } => elapsed >= *duration - 1e-9,
            ScriptAction::Sweep(_) | ScriptAction::Vertical(_) | ScriptAction::GoHome => {
                match a.mode() {
                    Mode::Mission(p) if p.status == PlanStatus::Complete => true,
                    Mode::Mission(p) if p.status == PlanStatus::Active => false,
                    _ => return Err(format!("{} mission interrupted", step.action.name())),
                }
            }
            ScriptAction::SetHome { .. } | ScriptAction::InspectionMode { .. } => true,
        })
    }

    /// Advance the script at a control-tick boundary.
    fn poll(&mut self, session: &mut Session, events: &mut Vec<Event>) -> Poll {
        let t = session.autopilot().state().timestamp.max(session.time());
        loop {
            let Some(step) = self.steps.get(self.index).cloned() else {
                return Poll::Done;
            };
            if !self.issued {
                let detail = serde_json::json!({ "index": self.index, "step": step });
                events.push(
                    Event::new(t, EventKind::ScriptAction, detail.to_string())
                        .at(&session.autopilot().state().position),
                );
                self.issued = true;
                self.started_at = t;
                if let Err(p) = Self::issue(&step, session) {
                    return p;
                }
            }
            let elapsed = t - self.started_at;
            match Self::finished(&step, session, elapsed) {
                Ok(true) => {
                    self.index += 1;
                    self.issued = false;
                }
                Ok(false) => {
                    if let Some(limit) = step.effective_timeout() {
                        if elapsed > limit {
                            let reason = format!(
                                "step {} ({}) exceeded {limit} s",
                                self.index,
                                step.action.name()
                            );
                            events.push(Event::new(t, EventKind::ScriptTimeout, reason.clone()));
                            return Poll::Failed(ExitStatus::ScriptTimeout, reason);
                        }
                    }
                    return Poll::Running;
                }
                Err(reason) => return Poll::Failed(ExitStatus::MissionFailure, reason),
            }
        }
    }
}

/// Seconds of simulated time allowed after a land-now abort to reach the ground.
const ABORT_LANDING_S: f64 = 120.0;
/// Hard cap on simulated time for any run.
const MAX_SIM_S: f64 = 7200.0;

/// Execute a script against a world and write the run artifacts into `out`.
pub fn run_documents(
    world_text: &str,
    script_text: &str,
    seed: u64,
    config: &RunConfig,
    out: &Path,
    fast: bool,
    trace: bool,
) -> Result<RunSummary, RunError> {
    let world = WorldModel::from_json(world_text)?;
    let script = MissionScript::from_json(script_text)?;
    std::fs::create_dir_all(out)?;
    let mut log = csv::Writer::from_writer(BufWriter::new(File::create(out.join(LOG_FILE))?));
    let mut journal = BufWriter::new(File::create(out.join(EVENTS_FILE))?);
    let mut trace_out = if trace {
        Some(csv::Writer::from_writer(BufWriter::new(File::create(
            out.join(TRACE_FILE),
        )?)))
    } else {
        None
    };
    let csv_err = |e: csv::Error| RunError::Io(std::io::Error::other(e));

    let mut session = Session::new(world, seed, *config, false);
    let mut runner = ScriptRunner::new(&script);
    let started = Instant::now();
    let mut control_ticks = 0u64;
    let mut sim_ticks = 0u64;
    let mut pending: Vec<Event> = Vec::new();
    let mut abort_at: Option<f64> = None;
    let mut outcome: Option<(ExitStatus, Option<String>)> = None;
    let mut control_due = true;

    while outcome.is_none() {
        if control_due {
            if let Some(t0) = abort_at {
                if session.autopilot().phase() == FlightPhase::OnGround
                    || session.time() - t0 > ABORT_LANDING_S
                {
                    outcome = Some((
                        ExitStatus::LandNowAbort,
                        Some("land-now viability abort".into()),
                    ));
                    break;
                }
            } else {
                match runner.poll(&mut session, &mut pending) {
                    Poll::Running => {}
                    Poll::Done => {
                        outcome = Some((ExitStatus::Success, None));
                    }
                    Poll::Failed(status, reason) => outcome = Some((status, Some(reason))),
                }
            }
        }
        if session.time() > MAX_SIM_S {
            outcome = Some((
                ExitStatus::ScriptTimeout,
                Some(format!("run exceeded {MAX_SIM_S} s")),
            ));
        }
        // The tick that ends the run is still logged so the journal closes cleanly.
        let mut row = None;
        let mut trace_row = None;
        control_due = session.step_with(|s, control| {
            if control {
                row = Some(s.log_row());
            }
            if trace {
                trace_row = Some(s.trace_row());
            }
        });
        sim_ticks += 1;
        if let Some(r) = row {
            log.serialize(r).map_err(csv_err)?;
            control_ticks += 1;
        }
        if let (Some(w), Some(r)) = (trace_out.as_mut(), trace_row) {
            w.serialize(r).map_err(csv_err)?;
        }
        let mut events = std::mem::take(&mut pending);
        events.extend(session.drain_events());
        for e in &events {
            if e.kind == EventKind::LandNowAbort && abort_at.is_none() {
                abort_at = Some(e.t);
            }
            serde_json::to_writer(&mut journal, e).map_err(|e| RunError::Io(e.into()))?;
            journal.write_all(b"\n")?;
        }
        if !fast {
            let ahead = Duration::from_secs_f64(sim_ticks as f64 * SIM_DT);
            if let Some(wait) = ahead.checked_sub(started.elapsed()) {
                std::thread::sleep(wait);
            }
        }
    }
    log.flush()?;
    journal.flush()?;
    if let Some(mut w) = trace_out {
        w.flush()?;
    }
    let (exit, reason) = outcome.expect("loop exits with an outcome");
    Ok(RunSummary {
        exit,
        reason,
        control_ticks,
        sim_ticks,
        sim_time: sim_ticks as f64 * SIM_DT,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn hash_file(path: &Path) -> Result<String, std::io::Error> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[allow(clippy::too_many_arguments)]
fn write_manifest(
    opts_world: &str,
    world_text: &str,
    opts_script: &str,
    script_text: &str,
    seed: u64,
    fast: bool,
    trace: bool,
    config: &RunConfig,
    out: &Path,
    summary: &RunSummary,
) -> Result<Manifest, RunError> {
    let config_json =
        serde_json::to_string(config).map_err(|e| RunError::Manifest(e.to_string()))?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        fast,
        trace,
        world_path: opts_world.to_string(),
        world_sha256: sha256_hex(world_text.as_bytes()),
        world: world_text.to_string(),
        script_path: opts_script.to_string(),
        script_sha256: sha256_hex(script_text.as_bytes()),
        script: script_text.to_string(),
        config_sha256: sha256_hex(config_json.as_bytes()),
        config: *config,
        log_sha256: hash_file(&out.join(LOG_FILE))?,
        events_sha256: hash_file(&out.join(EVENTS_FILE))?,
        summary: summary.clone(),
    };
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| RunError::Manifest(e.to_string()))?;
    std::fs::write(out.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

/// Run a script file against a world file.
pub fn run_headless(opts: &RunOptions) -> Result<RunSummary, RunError> {
    let world_text = read(&opts.world).map_err(|source| WorldError::Io {
        path: opts.world.display().to_string(),
        source,
    })?;
    let script_text = read(&opts.script).map_err(|source| ScriptError::Io {
        path: opts.script.display().to_string(),
        source,
    })?;
    let config = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let summary = run_documents(
        &world_text,
        &script_text,
        opts.seed,
        &config,
        &opts.out,
        opts.fast,
        opts.trace,
    )?;
    write_manifest(
        &opts.world.display().to_string(),
        &world_text,
        &opts.script.display().to_string(),
        &script_text,
        opts.seed,
        opts.fast,
        opts.trace,
        &config,
        &opts.out,
        &summary,
    )?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    pub summary: RunSummary,
    pub log_matches: bool,
    pub events_match: bool,
}

/// Re-run a recorded manifest into `out` and compare the artifacts.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<ReplayReport, RunError> {
    let text = read(manifest_path)?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| RunError::Manifest(e.to_string()))?;
    if sha256_hex(m.world.as_bytes()) != m.world_sha256
        || sha256_hex(m.script.as_bytes()) != m.script_sha256
    {
        return Err(RunError::Manifest(
            "embedded document does not match its hash".into(),
        ));
    }
    let summary = run_documents(&m.world, &m.script, m.seed, &m.config, out, true, m.trace)?;
    write_manifest(
        &m.world_path,
        &m.world,
        &m.script_path,
        &m.script,
        m.seed,
        m.fast,
        m.trace,
        &m.config,
        out,
        &summary,
    )?;
    Ok(ReplayReport {
        summary,
        log_matches: hash_file(&out.join(LOG_FILE))? == m.log_sha256,
        events_match: hash_file(&out.join(EVENTS_FILE))? == m.events_sha256,
    })
}

/// Exit status for an error raised before or during a run.
pub fn exit_status_for(error: &RunError) -> ExitStatus {
    match error {
        RunError::World(_) | RunError::Script(_) | RunError::Config(_) | RunError::Manifest(_) => {
            ExitStatus::InvalidInput
        }
        RunError::Io(_) => ExitStatus::InvalidInput,
    }
}
