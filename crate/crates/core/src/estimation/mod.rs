//! State estimation: scan preprocessing, consecutive-scan matching, height
//! filtering, velocity fusion and the local/global EKF cascade.

mod ekf;
mod height;
mod pipeline;
mod preprocess;
mod scan_match;
mod state;
mod velocity;

pub use ekf::{ekf_step, EkfConfig, EkfMeasurements, EkfState, FixOutcome, FrameOffset};
pub use height::{update_height, HeightFilterConfig, HeightFilterState};
pub use pipeline::{EstimationConfig, Estimator};
pub use preprocess::{preprocess, CorrectedFrame, PlanarScan, ScanPoint, MAX_COMPENSATED_TILT};
pub use scan_match::{match_scans, IcpConfig, ScanMatchResult};
pub use state::VehicleState;
pub use velocity::{FusedVelocity, ScanDisplacement, VelocityFusion, VelocityFusionConfig};
