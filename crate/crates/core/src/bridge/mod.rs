//! Run orchestration: the onboard stack, headless runs, metrics and the
//! ground-station protocol.

mod autopilot;
mod metrics;
mod protocol;
mod run;
mod server;
mod session;

pub use autopilot::{Autopilot, Command, Mode, Rejection};
pub use metrics::{
    collision_report, go_home_run, hover_report, keep_windows, mission_report,
    safety_dominance_violations, AxisError, CollisionReport, CollisionSample, DistanceBin,
    DominanceViolation, GoHomeReport, GoHomeRun, HistogramBin, HoverReport, Instant, MetricKind,
    MissionReport, Report, RunRecord, HOVER_BAND,
};
pub use protocol::{
    parse_client, Ack, AckStatus, ClientMessage, Malformed, PlanFrame, PlanWaypoint, ScanFrame,
    ServerMessage,
};
pub use run::{
    exit_status_for, replay, run_documents, run_headless, sha256_hex, ExitStatus, Manifest,
    ReplayReport, RunOptions, RunSummary, EVENTS_FILE, LOG_FILE, MANIFEST_FILE, TRACE_FILE,
};
pub use server::{serve, ServeOptions, ServerHandle};
pub use session::{
    BehaviorActivation, CommandReport, LogRow, MissionProgress, Session, TelemetryFrame, TraceRow,
    TruthPose, LOG_COLUMNS,
};
