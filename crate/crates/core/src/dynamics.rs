//! DynamicUnicycle2D: state propagation, the circular-obstacle barrier and
//! its Lie-derivative chain up to relative degree two.
//!
//! The barrier is `h = |p - c|² - r²` where `r` is the obstacle radius already
//! inflated by the robot radius. Acceleration and turn rate both enter `ḧ`, so
//! the CBF constraint is affine in the full input `(a, ω)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wrap an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    /// Heading, kept in `(-π, π]`.
    pub theta: f64,
    /// Forward speed.
    pub v: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
            v,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite() && self.v.is_finite()
    }

    pub fn distance_to(&self, px: f64, py: f64) -> f64 {
        (self.x - px).hypot(self.y - py)
    }

    fn deriv(&self, u: ControlInput) -> [f64; 4] {
        [
            self.v * self.theta.cos(),
            self.v * self.theta.sin(),
            u.omega,
            u.accel,
        ]
    }

    fn offset(&self, k: &[f64; 4], h: f64) -> Self {
        // theta is deliberately not wrapped inside the RK4 stages
        Self {
            x: self.x + h * k[0],
            y: self.y + h * k[1],
            theta: self.theta + h * k[2],
            v: self.v + h * k[3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub accel: f64,
    pub omega: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput {
        accel: 0.0,
        omega: 0.0,
    };

    pub fn new(accel: f64, omega: f64) -> Self {
        Self { accel, omega }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.accel, self.omega]
    }
}

/// Box input set `|a| ≤ a_max`, `|ω| ≤ ω_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputBounds {
    pub a_max: f64,
    pub omega_max: f64,
}

impl Default for InputBounds {
    fn default() -> Self {
        Self {
            a_max: 1.0,
            omega_max: 1.0,
        }
    }
}

impl InputBounds {
    pub fn contains(&self, u: ControlInput, tol: f64) -> bool {
        u.accel.abs() <= self.a_max + tol && u.omega.abs() <= self.omega_max + tol
    }

    pub fn clamp(&self, u: ControlInput) -> ControlInput {
        ControlInput {
            accel: u.accel.clamp(-self.a_max, self.a_max),
            omega: u.omega.clamp(-self.omega_max, self.omega_max),
        }
    }

    /// Euclidean norm of the largest admissible input.
    pub fn norm_max(&self) -> f64 {
        self.a_max.hypot(self.omega_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub cx: f64,
    pub cy: f64,
    /// Radius inflated by the robot radius.
    pub radius: f64,
}

impl Obstacle {
    pub fn new(cx: f64, cy: f64, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !cx.is_finite() || !cy.is_finite() || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "obstacle needs finite center and radius > 0, got ({cx}, {cy}, {radius})"
            )));
        }
        Ok(Self { cx, cy, radius })
    }
}

/// CBF parameters `(γ0, γ1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPair {
    pub g0: f64,
    pub g1: f64,
}

impl GammaPair {
    pub fn new(g0: f64, g1: f64) -> Self {
        Self { g0, g1 }
    }

    pub fn splat(g: f64) -> Self {
        Self { g0: g, g1: g }
    }

    pub fn sum(&self) -> f64 {
        self.g0 + self.g1
    }

    pub fn product(&self) -> f64 {
        self.g0 * self.g1
    }

    pub fn dist(&self, other: &GammaPair) -> f64 {
        (self.g0 - other.g0).hypot(self.g1 - other.g1)
    }
}

/// `h`, `ḣ` and the decomposition `ḧ = lf2h + lglfh · u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierEval {
    pub h: f64,
    pub h_dot: f64,
    pub lf2h: f64,
    pub lglfh: [f64; 2],
}

impl BarrierEval {
    pub fn h_ddot(&self, u: ControlInput) -> f64 {
        self.lf2h + self.lglfh[0] * u.accel + self.lglfh[1] * u.omega
    }
}

fn check_finite(state: &RobotState, what: &'static str) -> Result<()> {
    if state.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// One RK4 step of `ẋ = v cosθ, ẏ = v sinθ, θ̇ = ω, v̇ = a` under a held input.
pub fn step(state: RobotState, u: ControlInput, dt: f64) -> Result<RobotState> {
    check_finite(&state, "state")?;
    if !u.accel.is_finite() || !u.omega.is_finite() {
        return Err(Error::NonFinite("control input"));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let next = rk4(state, u, dt);
    check_finite(&next, "integrated state")?;
    Ok(next)
}

fn rk4(state: RobotState, u: ControlInput, dt: f64) -> RobotState {
    let k1 = state.deriv(u);
    let k2 = state.offset(&k1, dt / 2.0).deriv(u);
    let k3 = state.offset(&k2, dt / 2.0).deriv(u);
    let k4 = state.offset(&k3, dt).deriv(u);
    let mut incr = [0.0; 4];
    for i in 0..4 {
        incr[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
    }
    let next = state.offset(&incr, dt);
    RobotState::new(next.x, next.y, next.theta, next.v)
}

pub fn eval_barrier(state: &RobotState, obs: &Obstacle) -> BarrierEval {
    let dx = state.x - obs.cx;
    let dy = state.y - obs.cy;
    let (s, c) = state.theta.sin_cos();
    let v = state.v;
    BarrierEval {
        h: dx * dx + dy * dy - obs.radius * obs.radius,
        h_dot: 2.0 * v * (dx * c + dy * s),
        lf2h: 2.0 * v * v,
        lglfh: [2.0 * (dx * c + dy * s), 2.0 * v * (-dx * s + dy * c)],
    }
}

/// CBF margin `ψ = ḧ(u) + (γ0 + γ1) ḣ + γ0 γ1 h`.
pub fn psi(be: &BarrierEval, u: ControlInput, gamma: GammaPair) -> f64 {
    be.h_ddot(u) + gamma.sum() * be.h_dot + gamma.product() * be.h
}

/// Center distance and relative heading `Δθ ∈ [0, π]` of the robot w.r.t. an obstacle.
pub fn relative_geometry(state: &RobotState, obs: &Obstacle) -> (f64, f64) {
    let d = state.distance_to(obs.cx, obs.cy);
    let bearing = (obs.cy - state.y).atan2(obs.cx - state.x);
    (d, wrap_angle(bearing - state.theta).abs())
}

/// Index of the obstacle with the smallest barrier value.
pub fn most_critical(state: &RobotState, obstacles: &[Obstacle]) -> Option<(usize, BarrierEval)> {
    obstacles
        .iter()
        .enumerate()
        .map(|(i, o)| (i, eval_barrier(state, o)))
        .min_by(|a, b| a.1.h.total_cmp(&b.1.h))
}
