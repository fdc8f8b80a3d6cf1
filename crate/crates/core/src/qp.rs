//! The two-input CBF-QP
//!
//! ```text
//! min ‖u − u_nom‖²  s.t.  row·u + c ≥ 0,  |a| ≤ a_max,  |ω| ≤ ω_max
//! ```
//!
//! solved exactly by enumerating the candidate active sets of a 2-variable
//! problem with one affine constraint and a box.

use serde::{Deserialize, Serialize};

use crate::dynamics::{BarrierEval, ControlInput, GammaPair, InputBounds};
use crate::error::{Error, Result};

/// Tolerance used to classify active constraints.
pub const ACTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub u_nom: ControlInput,
    /// Coefficient of `u` in ψ.
    pub constraint_row: [f64; 2],
    /// `u`-independent part of ψ.
    pub constraint_const: f64,
    pub bounds: InputBounds,
}

impl QpProblem {
    pub fn margin(&self, u: ControlInput) -> f64 {
        self.constraint_row[0] * u.accel + self.constraint_row[1] * u.omega + self.constraint_const
    }

    fn scale(&self) -> f64 {
        1.0 + self.constraint_const.abs()
            + self.constraint_row[0].abs() * self.bounds.a_max
            + self.constraint_row[1].abs() * self.bounds.omega_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActiveSet {
    pub cbf: bool,
    pub a_lo: bool,
    pub a_hi: bool,
    pub omega_lo: bool,
    pub omega_hi: bool,
}

impl ActiveSet {
    pub fn is_empty(&self) -> bool {
        !(self.cbf || self.a_lo || self.a_hi || self.omega_lo || self.omega_hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub u: ControlInput,
    /// ψ achieved by `u`.
    pub margin: f64,
    pub active_set: ActiveSet,
}

pub fn build_qp(
    be: &BarrierEval,
    u_nom: ControlInput,
    gamma: GammaPair,
    bounds: InputBounds,
) -> QpProblem {
    QpProblem {
        u_nom,
        constraint_row: be.lglfh,
        constraint_const: be.lf2h + gamma.sum() * be.h_dot + gamma.product() * be.h,
        bounds,
    }
}

/// Largest achievable ψ over the input box.
pub fn margin_max(qp: &QpProblem) -> f64 {
    qp.constraint_const
        + qp.constraint_row[0].abs() * qp.bounds.a_max
        + qp.constraint_row[1].abs() * qp.bounds.omega_max
}

/// Box input attaining [`margin_max`]; coordinates with a zero coefficient
/// stay as close to the nominal input as the box allows.
pub fn least_violating_input(qp: &QpProblem) -> ControlInput {
    let nom = qp.bounds.clamp(qp.u_nom);
    let pick = |coef: f64, lim: f64, nominal: f64| {
        if coef > 0.0 {
            lim
        } else if coef < 0.0 {
            -lim
        } else {
            nominal
        }
    };
    ControlInput {
        accel: pick(qp.constraint_row[0], qp.bounds.a_max, nom.accel),
        omega: pick(qp.constraint_row[1], qp.bounds.omega_max, nom.omega),
    }
}

fn classify(qp: &QpProblem, u: ControlInput, margin: f64) -> ActiveSet {
    let b = qp.bounds;
    let tol = ACTIVE_TOL * qp.scale();
    ActiveSet {
        cbf: margin.abs() <= tol,
        a_lo: (u.accel + b.a_max).abs() <= ACTIVE_TOL,
        a_hi: (u.accel - b.a_max).abs() <= ACTIVE_TOL,
        omega_lo: (u.omega + b.omega_max).abs() <= ACTIVE_TOL,
        omega_hi: (u.omega - b.omega_max).abs() <= ACTIVE_TOL,
    }
}

fn candidates(qp: &QpProblem) -> Vec<ControlInput> {
    let b = qp.bounds;
    let [r0, r1] = qp.constraint_row;
    let c = qp.constraint_const;
    let mut out = Vec::with_capacity(10);
    // box-only minimizer
    out.push(b.clamp(qp.u_nom));
    // projection onto the constraint line
    let rr = r0 * r0 + r1 * r1;
    if rr > 0.0 {
        let t = (qp.margin(qp.u_nom)) / rr;
        out.push(ControlInput::new(qp.u_nom.accel - t * r0, qp.u_nom.omega - t * r1));
    }
    // line ∩ box faces
    if r1 != 0.0 {
        for a in [-b.a_max, b.a_max] {
            out.push(ControlInput::new(a, -(c + r0 * a) / r1));
        }
    }
    if r0 != 0.0 {
        for w in [-b.omega_max, b.omega_max] {
            out.push(ControlInput::new(-(c + r1 * w) / r0, w));
        }
    }
    // vertices
    for a in [-b.a_max, b.a_max] {
        for w in [-b.omega_max, b.omega_max] {
            out.push(ControlInput::new(a, w));
        }
    }
    out.push(least_violating_input(qp));
    out
}

fn cost(qp: &QpProblem, u: ControlInput) -> f64 {
    let da = u.accel - qp.u_nom.accel;
    let dw = u.omega - qp.u_nom.omega;
    da * da + dw * dw
}

/// Exact minimizer of the CBF-QP, or [`Error::Infeasible`] when the
/// constraint half-plane misses the input box.
pub fn solve(qp: &QpProblem) -> Result<QpSolution> {
    let mmax = margin_max(qp);
    if !(mmax >= 0.0) {
        return Err(Error::Infeasible { margin_max: mmax });
    }
    let tol = ACTIVE_TOL * qp.scale();
    let mut best: Option<(f64, ControlInput)> = None;
    for u in candidates(qp) {
        if !qp.bounds.contains(u, ACTIVE_TOL) || qp.margin(u) < -tol {
            continue;
        }
        let u = qp.bounds.clamp(u);
        let j = cost(qp, u);
        if best.map_or(true, |(bj, _)| j < bj) {
            best = Some((j, u));
        }
    }
    // the least-violating vertex is always a feasible candidate when mmax >= 0
    let (_, u) = best.expect("feasible candidate exists when margin_max >= 0");
    let margin = qp.margin(u);
    Ok(QpSolution {
        u,
        margin,
        active_set: classify(qp, u, margin),
    })
}

/// Closed-loop policy: the QP solution when feasible, otherwise the
/// least-violating input. The flag reports infeasibility.
pub fn solve_or_least_violating(qp: &QpProblem) -> (QpSolution, bool) {
    match solve(qp) {
        Ok(sol) => (sol, false),
        Err(_) => {
            let u = least_violating_input(qp);
            let margin = qp.margin(u);
            (
                QpSolution {
                    u,
                    margin,
                    active_set: classify(qp, u, margin),
                },
                true,
            )
        }
    }
}
