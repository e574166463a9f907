use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Symmetric output saturation.
    pub output_limit: f64,
    /// Symmetric clamp on the integral state.
    pub integral_limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidController {
    pub gains: PidGains,
    integral: f64,
    last_error: Option<f64>,
}

impl PidController {
    pub fn new(gains: PidGains) -> Self {
        Self {
            gains,
            integral: 0.0,
            last_error: None,
        }
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.last_error = None;
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn step(&mut self, error: f64, dt: f64) -> f64 {
        let g = &self.gains;
        self.integral = (self.integral + error * dt).clamp(-g.integral_limit, g.integral_limit);
        let derivative = match self.last_error {
            Some(prev) if dt > 0.0 => (error - prev) / dt,
            _ => 0.0,
        };
        self.last_error = Some(error);
        (g.kp * error + g.ki * self.integral + g.kd * derivative)
            .clamp(-g.output_limit, g.output_limit)
    }
}
