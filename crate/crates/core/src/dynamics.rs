//! X-configuration quadrotor rigid body driven directly by rotor speeds.
//!
//! Frames: world is z-up; the body frame has x forward, y left, z up. Rotors
//! sit on the diagonals at `L/√2` from each body axis in the order
//! front-right, back-left, front-left, back-right. The first two spin
//! clockwise seen from above (reaction torque +z on the body), the last two
//! counter-clockwise.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("simulation diverged: non-finite state")]
    Diverged,
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Reaction-torque sign of each rotor about body z.
pub const YAW_SIGNS: [f64; 4] = [1.0, 1.0, -1.0, -1.0];

/// Rotor positions in body x/y as multiples of `L/√2`.
pub const ROTOR_XY: [(f64, f64); 4] = [(1.0, -1.0), (-1.0, 1.0), (1.0, 1.0), (-1.0, -1.0)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadModel {
    pub mass: f64,
    pub arm_length: f64,
    /// Thrust per rotor is `kf·rpm²` newtons.
    pub kf: f64,
    /// Drag torque per rotor is `km·rpm²` newton-metres.
    pub km: f64,
    pub inertia: [f64; 3],
    pub gravity: f64,
    pub rpm_max: f64,
    pub dt_phys: f64,
}

/// Thrust-to-weight ratio at full throttle used to derive `rpm_max`.
pub const THRUST_TO_WEIGHT: f64 = 2.25;

impl Default for QuadModel {
    /// CrazyFlie 2.0 class vehicle.
    fn default() -> Self {
        let mut m = QuadModel {
            mass: 0.027,
            arm_length: 0.0397,
            kf: 3.16e-10,
            km: 7.94e-12,
            inertia: [1.4e-5, 1.4e-5, 2.17e-5],
            gravity: 9.81,
            rpm_max: 0.0,
            dt_phys: 0.004,
        };
        m.rpm_max = m.hover_rpm() * THRUST_TO_WEIGHT.sqrt();
        m
    }
}

impl QuadModel {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positive = [
            self.mass,
            self.arm_length,
            self.kf,
            self.km,
            self.inertia[0],
            self.inertia[1],
            self.inertia[2],
            self.gravity,
            self.rpm_max,
            self.dt_phys,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(DynamicsError::InvalidModel("all constants must be finite and positive".into()));
        }
        if 4.0 * self.kf * self.rpm_max * self.rpm_max <= self.mass * self.gravity {
            return Err(DynamicsError::InvalidModel("maximum thrust cannot lift the vehicle".into()));
        }
        Ok(())
    }

    /// Per-rotor speed whose total thrust equals weight.
    pub fn hover_rpm(&self) -> f64 {
        (self.mass * self.gravity / (4.0 * self.kf)).sqrt()
    }

    fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.inertia))
    }
}

/// Rotor speeds in RPM, ordered front-right, back-left, front-left, back-right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpmCommand(pub [f64; 4]);

impl RpmCommand {
    /// Clamps every rotor into `[0, rpm_max]`.
    pub fn clamped(self, model: &QuadModel) -> Self {
        RpmCommand(self.0.map(|u| u.clamp(0.0, model.rpm_max)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadState {
    pub position: Vector3<f64>,
    /// World frame.
    pub velocity: Vector3<f64>,
    /// Body to world.
    pub orientation: UnitQuaternion<f64>,
    /// Body frame.
    pub angular_velocity: Vector3<f64>,
}

impl QuadState {
    /// Level and at rest.
    pub fn at_rest(position: Vector3<f64>) -> Self {
        QuadState {
            position,
            velocity: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
            angular_velocity: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
    }
}

/// Rotor thrusts and the resulting body torque.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench {
    pub thrusts: [f64; 4],
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn total_thrust(&self) -> f64 {
        self.thrusts.iter().sum()
    }
}

/// Torque contributed by rotor `i` producing `thrust` newtons.
pub fn rotor_torque(model: &QuadModel, i: usize, thrust: f64, rpm: f64) -> Vector3<f64> {
    let d = model.arm_length / std::f64::consts::SQRT_2;
    let (rx, ry) = ROTOR_XY[i];
    // r × (0, 0, F) = (r_y·F, −r_x·F, 0)
    Vector3::new(ry * d * thrust, -rx * d * thrust, YAW_SIGNS[i] * model.km * rpm * rpm)
}

pub fn motor_wrench(model: &QuadModel, cmd: &RpmCommand) -> Wrench {
    let mut thrusts = [0.0; 4];
    let mut torque = Vector3::zeros();
    for (i, &u) in cmd.0.iter().enumerate() {
        thrusts[i] = model.kf * u * u;
        torque += rotor_torque(model, i, thrusts[i], u);
    }
    Wrench { thrusts, torque }
}

/// Advances the state by `dt` with semi-implicit Euler: velocities first,
/// then positions and attitude from the updated velocities. The attitude is
/// advanced with the exact rotation for the new body rate and renormalised.
pub fn step(model: &QuadModel, s: &QuadState, cmd: &RpmCommand, dt: f64) -> Result<QuadState, DynamicsError> {
    let w = motor_wrench(model, cmd);
    let thrust_world = s.orientation * Vector3::new(0.0, 0.0, w.total_thrust());
    let accel = thrust_world / model.mass - Vector3::new(0.0, 0.0, model.gravity);
    let velocity = s.velocity + accel * dt;
    let position = s.position + velocity * dt;

    let inertia = model.inertia_matrix();
    let omega = s.angular_velocity;
    let gyro = omega.cross(&(inertia * omega));
    let alpha = Vector3::new(
        (w.torque.x - gyro.x) / model.inertia[0],
        (w.torque.y - gyro.y) / model.inertia[1],
        (w.torque.z - gyro.z) / model.inertia[2],
    );
    let angular_velocity = omega + alpha * dt;
    let delta = UnitQuaternion::from_scaled_axis(angular_velocity * dt);
    let orientation = UnitQuaternion::new_normalize((s.orientation * delta).into_inner());

    let next = QuadState {
        position,
        velocity,
        orientation,
        angular_velocity,
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(DynamicsError::Diverged)
    }
}

/// Z-Y-X (yaw, pitch, roll) Euler angles `(φ, θ, ψ)` of the body attitude.
/// Roll and yaw lie in (−π, π]; pitch is clamped to [−π/2, π/2].
pub fn euler_angles(s: &QuadState) -> (f64, f64, f64) {
    let q = s.orientation.quaternion();
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
    let pitch = (2.0 * (w * y - z * x)).clamp(-1.0, 1.0).asin();
    let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
    (wrap_half_open(roll), pitch, wrap_half_open(yaw))
}

fn wrap_half_open(a: f64) -> f64 {
    if a <= -std::f64::consts::PI {
        a + 2.0 * std::f64::consts::PI
    } else {
        a
    }
}
