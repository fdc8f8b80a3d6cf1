//! Nominal go-to-goal controller and the CBF-filtered control step shared by
//! data generation and the closed-loop benchmark.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    eval_barrier, wrap_angle, BarrierEval, ControlInput, GammaPair, InputBounds, Obstacle,
    RobotState,
};
use crate::qp::{build_qp, solve_or_least_violating, QpSolution};

/// Proportional heading/speed controller toward a goal point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NominalController {
    pub k_theta: f64,
    pub k_v: f64,
    pub v_ref: f64,
}

impl Default for NominalController {
    fn default() -> Self {
        Self {
            k_theta: 2.0,
            k_v: 1.0,
            v_ref: 1.0,
        }
    }
}

impl NominalController {
    pub fn command(&self, state: &RobotState, goal: (f64, f64), bounds: &InputBounds) -> ControlInput {
        let heading = (goal.1 - state.y).atan2(goal.0 - state.x);
        bounds.clamp(ControlInput {
            accel: self.k_v * (self.v_ref - state.v),
            omega: self.k_theta * wrap_angle(heading - state.theta),
        })
    }
}

/// Outcome of one filtered control step against the most critical obstacle.
#[derive(Debug, Clone, Copy)]
pub struct FilteredStep {
    pub u_nom: ControlInput,
    pub solution: QpSolution,
    pub infeasible: bool,
    /// Index of the enforced obstacle and its barrier evaluation.
    pub obstacle: Option<(usize, BarrierEval)>,
}

/// Nominal command filtered through the CBF-QP of the obstacle with the
/// smallest `h`. Without obstacles the nominal command passes through.
pub fn filtered_step(
    state: &RobotState,
    obstacles: &[Obstacle],
    goal: (f64, f64),
    gamma: GammaPair,
    nominal: &NominalController,
    bounds: &InputBounds,
) -> FilteredStep {
    let u_nom = nominal.command(state, goal, bounds);
    let critical = obstacles
        .iter()
        .enumerate()
        .map(|(i, o)| (i, eval_barrier(state, o)))
        .min_by(|a, b| a.1.h.total_cmp(&b.1.h));
    match critical {
        Some((i, be)) => {
            let qp = build_qp(&be, u_nom, gamma, *bounds);
            let (solution, infeasible) = solve_or_least_violating(&qp);
            FilteredStep {
                u_nom,
                solution,
                infeasible,
                obstacle: Some((i, be)),
            }
        }
        None => FilteredStep {
            u_nom,
            solution: QpSolution {
                u: u_nom,
                margin: f64::INFINITY,
                active_set: Default::default(),
            },
            infeasible: false,
            obstacle: None,
        },
    }
}
