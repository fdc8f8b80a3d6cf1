//! Closed-loop scenario runner for fixed and adaptive controllers over the
//! standard layouts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::control::{filtered_step, NominalController};
use crate::dynamics::{eval_barrier, step, GammaPair, InputBounds, Obstacle, RobotState};
use crate::error::{Error, Result};
use crate::forge::Features;
use crate::qp::{build_qp, margin_max};
use crate::selector::{smooth_select, CandidateGrid, SafetyPredictor, SelectorParams};
use crate::surrogate::DomainBounds;

/// Physical obstacle radius plus robot radius.
pub const INFLATED_RADIUS: f64 = 0.4;
pub const ROBOT_RADIUS: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub start: RobotState,
    pub goal: (f64, f64),
    pub obstacles: Vec<Obstacle>,
    pub horizon: f64,
    pub dt: f64,
    /// Start-pose jitter applied for seeds other than 0: `(position m, heading rad)`.
    pub jitter: (f64, f64),
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon >= self.dt) {
            return Err(Error::InvalidArgument(format!("scenario {}: bad horizon/dt", self.name)));
        }
        for o in &self.obstacles {
            if eval_barrier(&self.start, o).h <= 0.0 {
                return Err(Error::InvalidArgument(format!("scenario {}: start inside an obstacle", self.name)));
            }
            if (self.goal.0 - o.cx).hypot(self.goal.1 - o.cy) <= o.radius {
                return Err(Error::InvalidArgument(format!("scenario {}: goal inside an obstacle", self.name)));
            }
        }
        Ok(())
    }

    /// Start state for `seed`; seed 0 is the nominal start.
    pub fn start_for(&self, seed: u64) -> RobotState {
        if seed == 0 {
            return self.start;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dp, dth) = self.jitter;
        let mut s = self.start;
        s.y += rng.random_range(-dp..=dp);
        s.theta += rng.random_range(-dth..=dth);
        s
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Single obstacle slightly off the straight start-goal line.
pub fn single_obstacle_layout() -> Scenario {
    Scenario {
        name: "single".into(),
        start: RobotState::new(0.0, 0.0, 0.0, 1.0),
        goal: (6.0, 0.0),
        obstacles: vec![Obstacle {
            cx: 3.0,
            cy: 0.3,
            radius: INFLATED_RADIUS,
        }],
        horizon: 20.0,
        dt: 0.05,
        jitter: (0.2, 0.1),
    }
}

/// `simple`: three obstacles on a 10 × 10 m field; `complex`: 16 obstacles
/// in a staggered grid.
pub fn build_standard_layouts() -> (Scenario, Scenario) {
    let o = |cx: f64, cy: f64| Obstacle {
        cx,
        cy,
        radius: INFLATED_RADIUS,
    };
    let simple = Scenario {
        name: "simple".into(),
        start: RobotState::new(1.0, 5.0, 0.0, 1.0),
        goal: (9.0, 5.0),
        obstacles: vec![o(3.2, 5.3), o(5.2, 4.7), o(7.2, 5.3)],
        horizon: 30.0,
        dt: 0.05,
        jitter: (0.2, 0.1),
    };
    let mut grid = Vec::with_capacity(16);
    for c in 0..4 {
        let x = 2.5 + 1.6 * c as f64;
        let shift = if c % 2 == 1 { 0.95 } else { 0.0 };
        for r in 0..4 {
            grid.push(o(x, 2.15 + 1.9 * r as f64 + shift));
        }
    }
    let complex = Scenario {
        name: "complex".into(),
        start: RobotState::new(0.5, 5.0, 0.0, 1.0),
        goal: (9.5, 5.0),
        obstacles: grid,
        horizon: 40.0,
        dt: 0.05,
        jitter: (0.2, 0.1),
    };
    (simple, complex)
}

/// Smallest edge-to-edge gap between the physical obstacles (inflated radii
/// minus the robot radius).
pub fn min_gap(obstacles: &[Obstacle]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in obstacles.iter().enumerate() {
        for b in &obstacles[i + 1..] {
            let phys = (a.radius - ROBOT_RADIUS) + (b.radius - ROBOT_RADIUS);
            best = best.min((a.cx - b.cx).hypot(a.cy - b.cy) - phys);
        }
    }
    best
}

pub enum Controller<'a> {
    Fixed(GammaPair),
    Adaptive(&'a dyn SafetyPredictor),
}

pub struct ControllerSpec<'a> {
    pub name: String,
    pub kind: Controller<'a>,
}

/// Parameters shared by all closed-loop runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub nominal: NominalController,
    pub bounds: InputBounds,
    pub domain: DomainBounds,
    pub selector: SelectorParams,
    pub grid: CandidateGrid,
    pub goal_tolerance: f64,
    /// Deadlock: mean speed over this final window below `deadlock_speed`.
    pub deadlock_window: f64,
    pub deadlock_speed: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            nominal: NominalController::default(),
            bounds: InputBounds::default(),
            domain: DomainBounds::default(),
            selector: SelectorParams::default(),
            grid: CandidateGrid::default(),
            goal_tolerance: 0.3,
            deadlock_window: 2.0,
            deadlock_speed: 0.05,
        }
    }
}

fn ser_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

fn de_inf<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scenario: String,
    pub controller: String,
    pub seed: u64,
    pub trajectory: Vec<RobotState>,
    pub gamma_trace: Vec<GammaPair>,
    /// Distinct entries into `h < 0`.
    pub collisions: u32,
    pub reached: bool,
    pub deadlock: bool,
    /// `+∞` (serialized as null) without obstacles.
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub min_h: f64,
    /// Smallest best-achievable CBF margin at the selected `γ` over visited states.
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub min_margin: f64,
    /// Time to goal, or the horizon when not reached.
    pub time_to_goal: f64,
    pub infeasible_steps: u32,
}

pub fn run_episode(
    sc: &Scenario,
    controller: &ControllerSpec<'_>,
    seed: u64,
    cfg: &BenchConfig,
) -> Result<EpisodeResult> {
    sc.validate()?;
    let mut state = sc.start_for(seed);
    let n = sc.steps();
    let mut trajectory = Vec::with_capacity(n + 1);
    let mut gamma_trace = Vec::with_capacity(n);
    let mut inside = vec![false; sc.obstacles.len()];
    let mut collisions = 0;
    let mut min_h = f64::INFINITY;
    let mut min_margin = f64::INFINITY;
    let mut infeasible_steps = 0;
    let mut reached_at = None;
    trajectory.push(state);
    for k in 0..=n {
        for (i, o) in sc.obstacles.iter().enumerate() {
            let h = eval_barrier(&state, o).h;
            min_h = min_h.min(h);
            if h < 0.0 && !inside[i] {
                collisions += 1;
                inside[i] = true;
            } else if h > 0.0 {
                inside[i] = false;
            }
        }
        if state.distance_to(sc.goal.0, sc.goal.1) <= cfg.goal_tolerance {
            reached_at = Some(k as f64 * sc.dt);
            break;
        }
        if k == n {
            break;
        }
        let gamma = match &controller.kind {
            Controller::Fixed(g) => *g,
            Controller::Adaptive(pred) => match crate::dynamics::most_critical(&state, &sc.obstacles) {
                Some((i, _)) => {
                    let s = Features::relative_to(&state, &sc.obstacles[i], &cfg.domain);
                    smooth_select(&s, *pred, &cfg.grid, &cfg.selector)?.gamma
                }
                None => cfg.grid.bounding_box().1,
            },
        };
        gamma_trace.push(gamma);
        let fs = filtered_step(&state, &sc.obstacles, sc.goal, gamma, &cfg.nominal, &cfg.bounds);
        if let Some((_, be)) = fs.obstacle {
            min_margin = min_margin.min(margin_max(&build_qp(&be, fs.u_nom, gamma, cfg.bounds)));
        }
        if fs.infeasible {
            infeasible_steps += 1;
        }
        state = step(state, fs.solution.u, sc.dt)?;
        trajectory.push(state);
    }
    let deadlock = reached_at.is_none() && {
        let w = ((cfg.deadlock_window / sc.dt).round() as usize).clamp(1, trajectory.len());
        let tail = &trajectory[trajectory.len() - w..];
        let mean_speed = tail.iter().map(|s| s.v.abs()).sum::<f64>() / w as f64;
        mean_speed < cfg.deadlock_speed
    };
    Ok(EpisodeResult {
        scenario: sc.name.clone(),
        controller: controller.name.clone(),
        seed,
        trajectory,
        gamma_trace,
        collisions,
        reached: reached_at.is_some(),
        deadlock,
        min_h,
        min_margin,
        time_to_goal: reached_at.unwrap_or(sc.horizon),
        infeasible_steps,
    })
}

/// Aggregates of one (scenario, controller) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub scenario: String,
    pub controller: String,
    pub runs: usize,
    pub collisions: u32,
    pub collision_runs: usize,
    pub deadlock_rate: f64,
    pub success_rate: f64,
    pub mean_time_to_goal: f64,
    pub mean_min_h: f64,
    pub infeasible_steps: u32,
}

impl SuiteRow {
    pub fn from_episodes(eps: &[EpisodeResult]) -> Self {
        let n = eps.len().max(1) as f64;
        Self {
            scenario: eps.first().map(|e| e.scenario.clone()).unwrap_or_default(),
            controller: eps.first().map(|e| e.controller.clone()).unwrap_or_default(),
            runs: eps.len(),
            collisions: eps.iter().map(|e| e.collisions).sum(),
            collision_runs: eps.iter().filter(|e| e.collisions > 0).count(),
            deadlock_rate: eps.iter().filter(|e| e.deadlock).count() as f64 / n,
            success_rate: eps.iter().filter(|e| e.reached).count() as f64 / n,
            mean_time_to_goal: eps.iter().map(|e| e.time_to_goal).sum::<f64>() / n,
            mean_min_h: eps.iter().map(|e| e.min_h).sum::<f64>() / n,
            infeasible_steps: eps.iter().map(|e| e.infeasible_steps).sum(),
        }
    }
}

pub struct SuiteOutput {
    pub rows: Vec<SuiteRow>,
    /// Episodes in (scenario, controller, seed) order.
    pub episodes: Vec<EpisodeResult>,
}

pub fn run_suite(
    scenarios: &[Scenario],
    controllers: &[ControllerSpec<'_>],
    seeds: &[u64],
    cfg: &BenchConfig,
) -> Result<SuiteOutput> {
    if scenarios.is_empty() || controllers.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("suite needs scenarios, controllers and seeds".into()));
    }
    let jobs: Vec<(usize, usize, u64)> = (0..scenarios.len())
        .flat_map(|s| (0..controllers.len()).flat_map(move |c| seeds.iter().map(move |&k| (s, c, k))))
        .collect();
    let episodes: Vec<EpisodeResult> = jobs
        .par_iter()
        .map(|&(s, c, k)| run_episode(&scenarios[s], &controllers[c], k, cfg))
        .collect::<Result<_>>()?;
    let rows = episodes.chunks(seeds.len()).map(SuiteRow::from_episodes).collect();
    Ok(SuiteOutput { rows, episodes })
}
