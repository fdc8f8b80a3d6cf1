//! Randomized single-obstacle simulation sweep producing labeled samples,
//! the train/test split, the safety-weighted risk, and the NDJSON dataset
//! format.
//!
//! Each episode places the robot at the origin and the obstacle `d` metres
//! away on the x-axis, so the initial heading equals the relative heading
//! `Δθ` to the obstacle. The goal lies along the initial heading, past the
//! obstacle, with a small perpendicular offset that the features do not see. The CBF-QP runs with the drawn
//! `γ` for the whole episode. Labels:
//!
//! * `phi`: the largest safety loss met during the episode, with ψ taken at
//!   the applied input and `d` saturated into the operating domain;
//! * `td`: time to reach the goal, capped at the horizon.

use std::collections::HashSet;
use std::f64::consts::FRAC_PI_2;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{filtered_step, NominalController};
use crate::digest::config_digest;
use crate::dynamics::{
    eval_barrier, psi, relative_geometry, step, GammaPair, InputBounds, Obstacle, RobotState,
};
use crate::error::{Error, Result};
use crate::penn::{safety_nll, EnsembleModel};
use crate::surrogate::{phi, DomainBounds, PhiInputs, SurrogateParams};

pub const DATASET_VERSION: u32 = 1;

/// Relative state `s = (d, v, Δθ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Features {
    pub d: f64,
    pub v: f64,
    pub dtheta: f64,
}

impl Features {
    pub fn model_input(&self, gamma: GammaPair) -> [f64; 5] {
        [self.d, self.v, self.dtheta, gamma.g0, gamma.g1]
    }

    /// Features of `state` relative to `obs`, with `d` saturated to the domain.
    pub fn relative_to(state: &RobotState, obs: &Obstacle, domain: &DomainBounds) -> Self {
        let (d, dtheta) = relative_geometry(state, obs);
        Self {
            d: domain.clamp_distance(d),
            v: state.v,
            dtheta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Collision,
    Deadlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: u64,
    pub s: Features,
    pub gamma: GammaPair,
    pub phi: f64,
    pub td: f64,
    pub outcome: Outcome,
    /// Episode step that produced `phi`.
    pub worst: PhiInputs,
}

impl LabeledSample {
    pub fn model_input(&self) -> [f64; 5] {
        self.s.model_input(self.gamma)
    }

    pub fn targets(&self) -> [f64; 2] {
        [self.phi, self.td]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub seed: u64,
    pub config_hash: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    /// Same provenance, different sample subset.
    pub fn with_samples(&self, samples: Vec<LabeledSample>) -> Self {
        Self {
            samples,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
        }
    }

    pub fn without(&self, removed: &HashSet<u64>) -> Self {
        self.with_samples(
            self.samples
                .iter()
                .filter(|s| !removed.contains(&s.id))
                .copied()
                .collect(),
        )
    }

    pub fn outcome_counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for s in &self.samples {
            match s.outcome {
                Outcome::Success => c.0 += 1,
                Outcome::Collision => c.1 += 1,
                Outcome::Deadlock => c.2 += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub d: Range,
    pub v: Range,
    pub theta: Range,
    pub gamma: Range,
    /// Obstacle radius already inflated by the robot radius.
    pub obstacle_radius: f64,
    /// Goal distance along the initial heading, beyond `d`…
    pub goal_ahead: f64,
    /// …plus a uniform perpendicular offset in `[-goal_lateral, goal_lateral]`.
    pub goal_lateral: f64,
    pub goal_tolerance: f64,
    pub horizon: f64,
    pub dt: f64,
    pub nominal: NominalController,
    pub bounds: InputBounds,
    pub surrogate: SurrogateParams,
    pub domain: DomainBounds,
    pub monitor_defect: MonitorDefect,
}

/// Defect model of the safety monitor: in a random fraction of episodes it
/// reports the loss of the final step instead of the episode maximum, so the
/// recorded `phi` understates the safety loss. Outcome and `td` come from the
/// mission log and stay intact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorDefect {
    pub fraction: f64,
}

impl MonitorDefect {
    pub const NONE: MonitorDefect = MonitorDefect { fraction: 0.0 };
}

impl Default for MonitorDefect {
    fn default() -> Self {
        Self { fraction: 0.1 }
    }
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            d: Range::new(0.65, 2.5),
            v: Range::new(0.01, 1.0),
            theta: Range::new(0.01, FRAC_PI_2),
            gamma: Range::new(0.5, 2.5),
            obstacle_radius: 0.4,
            goal_ahead: 1.5,
            goal_lateral: 0.25,
            goal_tolerance: 0.3,
            horizon: 20.0,
            dt: 0.05,
            nominal: NominalController::default(),
            bounds: InputBounds::default(),
            surrogate: SurrogateParams::default(),
            domain: DomainBounds::default(),
            monitor_defect: MonitorDefect::default(),
        }
    }
}

impl GenerationConfig {
    pub fn digest(&self) -> String {
        config_digest(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.surrogate.validate()?;
        if self.d.lo < self.domain.d_min || self.d.hi > self.domain.d_max {
            return Err(Error::Config(format!(
                "distance range {:?} leaves the domain [{}, {}]",
                self.d, self.domain.d_min, self.domain.d_max
            )));
        }
        if self.d.lo <= self.obstacle_radius {
            return Err(Error::Config("episodes would start inside the obstacle".into()));
        }
        if !(0.0..=1.0).contains(&self.monitor_defect.fraction) {
            return Err(Error::Config("monitor defect fraction must be in [0, 1]".into()));
        }
        if !(self.dt > 0.0 && self.horizon > self.dt) {
            return Err(Error::Config(format!(
                "need 0 < dt < horizon, got dt={} horizon={}",
                self.dt, self.horizon
            )));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Everything an episode needs beyond `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub d: f64,
    pub v: f64,
    pub theta: f64,
    /// Perpendicular goal offset (left of the initial heading is positive).
    pub goal_offset: f64,
    /// The safety monitor reports the last step instead of the maximum.
    pub stale_monitor: bool,
}

impl InitialCondition {
    /// Canonical episode for a feature triple (no goal offset).
    pub fn canonical(s: &Features) -> Self {
        Self {
            d: s.d,
            v: s.v,
            theta: s.dtheta,
            goal_offset: 0.0,
            stale_monitor: false,
        }
    }
}

/// Extremes of barrier quantities seen over a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepStats {
    pub h_max: f64,
    pub hdot_max: f64,
    /// Largest `‖L_g L_f h‖` (input-coupling row of `ḧ`).
    pub lgh_max: f64,
    /// Largest `|dψ/dt|` between samples with the input held.
    pub psi_dot_max: f64,
    pub infeasible_steps: u64,
}

impl SweepStats {
    fn merge(&mut self, o: &SweepStats) {
        self.h_max = self.h_max.max(o.h_max);
        self.hdot_max = self.hdot_max.max(o.hdot_max);
        self.lgh_max = self.lgh_max.max(o.lgh_max);
        self.psi_dot_max = self.psi_dot_max.max(o.psi_dot_max);
        self.infeasible_steps += o.infeasible_steps;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeLabel {
    pub phi: f64,
    pub td: f64,
    pub outcome: Outcome,
    pub worst: PhiInputs,
    pub stats: SweepStats,
}

/// Run one labeled single-obstacle episode.
pub fn label_episode(
    ic: &InitialCondition,
    gamma: GammaPair,
    cfg: &GenerationConfig,
) -> Result<EpisodeLabel> {
    let obs = Obstacle::new(ic.d, 0.0, cfg.obstacle_radius)?;
    let reach = ic.d + cfg.goal_ahead;
    let (sin, cos) = ic.theta.sin_cos();
    let goal = (reach * cos - ic.goal_offset * sin, reach * sin + ic.goal_offset * cos);
    let mut state = RobotState::new(0.0, 0.0, ic.theta, ic.v);
    let mut best: Option<(f64, PhiInputs)> = None;
    let mut last = None;
    let mut stats = SweepStats::default();
    let mut collided = false;
    let mut reached = None;
    let obstacles = [obs];
    for k in 0..cfg.steps() {
        if state.distance_to(goal.0, goal.1) <= cfg.goal_tolerance {
            reached = Some(k as f64 * cfg.dt);
            break;
        }
        let fs = filtered_step(&state, &obstacles, goal, gamma, &cfg.nominal, &cfg.bounds);
        let (_, be) = fs.obstacle.expect("one obstacle");
        if be.h < 0.0 {
            collided = true;
        }
        if fs.infeasible {
            stats.infeasible_steps += 1;
        }
        let (d, dtheta) = relative_geometry(&state, &obs);
        let inputs = PhiInputs {
            d: cfg.domain.clamp_distance(d),
            delta_theta: dtheta,
            psi: fs.solution.margin,
        };
        let value = phi(&inputs, &cfg.surrogate, &cfg.domain)?;
        last = Some((value, inputs));
        if best.map_or(true, |(b, _)| value > b) {
            best = Some((value, inputs));
        }
        let next = step(state, fs.solution.u, cfg.dt)?;
        // the envelope only covers the operating domain
        if d <= cfg.domain.d_max {
            stats.h_max = stats.h_max.max(be.h.abs());
            stats.hdot_max = stats.hdot_max.max(be.h_dot.abs());
            stats.lgh_max = stats.lgh_max.max(be.lglfh[0].hypot(be.lglfh[1]));
            let be_next = eval_barrier(&next, &obs);
            let drift = (psi(&be_next, fs.solution.u, gamma) - fs.solution.margin) / cfg.dt;
            stats.psi_dot_max = stats.psi_dot_max.max(drift.abs());
        }
        state = next;
    }
    if eval_barrier(&state, &obs).h < 0.0 {
        collided = true;
    }
    if reached.is_none() && state.distance_to(goal.0, goal.1) <= cfg.goal_tolerance {
        reached = Some(cfg.horizon);
    }
    let reported = if ic.stale_monitor { last } else { best };
    let (phi_label, worst) = reported.expect("episode runs at least one step");
    let outcome = if collided {
        Outcome::Collision
    } else if reached.is_none() {
        Outcome::Deadlock
    } else {
        Outcome::Success
    };
    Ok(EpisodeLabel {
        phi: phi_label,
        td: reached.unwrap_or(cfg.horizon),
        outcome,
        worst,
        stats,
    })
}

fn episode_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draw the initial condition and `γ` of sample `id`.
pub fn draw_episode(seed: u64, id: u64, cfg: &GenerationConfig) -> (InitialCondition, GammaPair) {
    let mut rng = episode_rng(seed, id);
    let mut ic = InitialCondition {
        d: cfg.d.draw(&mut rng),
        v: cfg.v.draw(&mut rng),
        theta: cfg.theta.draw(&mut rng),
        goal_offset: Range::new(-cfg.goal_lateral, cfg.goal_lateral).draw(&mut rng),
        stale_monitor: false,
    };
    let gamma = GammaPair::new(cfg.gamma.draw(&mut rng), cfg.gamma.draw(&mut rng));
    let p = cfg.monitor_defect.fraction;
    ic.stale_monitor = p > 0.0 && rng.random::<f64>() < p;
    (ic, gamma)
}

pub fn generate(n: usize, seed: u64, cfg: &GenerationConfig) -> Result<Dataset> {
    generate_with_stats(n, seed, cfg).map(|(ds, _)| ds)
}

pub fn generate_with_stats(
    n: usize,
    seed: u64,
    cfg: &GenerationConfig,
) -> Result<(Dataset, SweepStats)> {
    cfg.validate()?;
    let results: Vec<Result<(LabeledSample, SweepStats)>> = (0..n as u64)
        .into_par_iter()
        .map(|id| {
            let (ic, gamma) = draw_episode(seed, id, cfg);
            let label = label_episode(&ic, gamma, cfg)?;
            let sample = LabeledSample {
                id,
                s: Features {
                    d: ic.d,
                    v: ic.v,
                    dtheta: ic.theta.abs(),
                },
                gamma,
                phi: label.phi,
                td: label.td,
                outcome: label.outcome,
                worst: label.worst,
            };
            Ok((sample, label.stats))
        })
        .collect();
    let mut samples = Vec::with_capacity(n);
    let mut stats = SweepStats::default();
    for r in results {
        let (s, st) = r?;
        stats.merge(&st);
        samples.push(s);
    }
    Ok((
        Dataset {
            samples,
            seed,
            config_hash: cfg.digest(),
        },
        stats,
    ))
}

/// Deterministic shuffled split; both parts keep id order.
pub fn split(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {train_frac}"
        )));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_frac * ds.len() as f64).round() as usize;
    let mut train_idx = idx[..n_train].to_vec();
    let mut test_idx = idx[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |ix: &[usize]| ds.with_samples(ix.iter().map(|&i| ds.samples[i]).collect());
    Ok((pick(&train_idx), pick(&test_idx)))
}

/// Linear-interpolation empirical quantile (the common "type 7" rule).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// `Φ_thr` for a quantile level; level 0 admits every sample.
pub fn unsafe_threshold(test: &Dataset, thr_quantile: f64) -> f64 {
    if thr_quantile <= 0.0 || test.is_empty() {
        return f64::NEG_INFINITY;
    }
    let labels: Vec<f64> = test.samples.iter().map(|s| s.phi).collect();
    quantile(&labels, thr_quantile)
}

/// Test samples whose label exceeds the `thr_quantile` empirical quantile.
pub fn unsafe_subset(test: &Dataset, thr_quantile: f64) -> Result<Dataset> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let thr = unsafe_threshold(test, thr_quantile);
    let subset: Vec<LabeledSample> = test.samples.iter().filter(|s| s.phi > thr).copied().collect();
    if subset.is_empty() {
        return Err(Error::EmptyUnsafeSet {
            quantile: thr_quantile,
            threshold: thr,
        });
    }
    Ok(test.with_samples(subset))
}

/// RMSE of the pooled safety-loss mean over `ds`.
pub fn phi_rmse(model: &EnsembleModel, ds: &Dataset) -> f64 {
    let se: f64 = ds
        .samples
        .iter()
        .map(|s| (model.predict(&s.s, s.gamma).phi_mean() - s.phi).powi(2))
        .sum();
    (se / ds.len().max(1) as f64).sqrt()
}

/// Largest absolute error of the pooled safety-loss mean over `ds`.
pub fn phi_max_abs_error(model: &EnsembleModel, ds: &Dataset) -> f64 {
    ds.samples
        .iter()
        .map(|s| (model.predict(&s.s, s.gamma).phi_mean() - s.phi).abs())
        .fold(0.0, f64::max)
}

/// Safety-weighted RMSE: [`phi_rmse`] over the unsafe subset of `test`.
pub fn safety_weighted_rmse(model: &EnsembleModel, test: &Dataset, thr_quantile: f64) -> Result<f64> {
    Ok(phi_rmse(model, &unsafe_subset(test, thr_quantile)?))
}

/// Mean Gaussian NLL of the safety-loss prediction (original units) over the
/// unsafe subset, averaged over ensemble members.
pub fn safety_weighted_risk(model: &EnsembleModel, test: &Dataset, thr_quantile: f64) -> Result<f64> {
    let unsafe_set = unsafe_subset(test, thr_quantile)?;
    let mut total = 0.0;
    for s in &unsafe_set.samples {
        total += safety_nll(model, s);
    }
    Ok(total / unsafe_set.len() as f64)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Header {
        seed: u64,
        config_hash: String,
        version: u32,
    },
    Sample {
        id: u64,
        s: [f64; 3],
        gamma: [f64; 2],
        phi: f64,
        td: f64,
        outcome: Outcome,
        worst: [f64; 3],
    },
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Record::Header {
        seed: ds.seed,
        config_hash: ds.config_hash.clone(),
        version: DATASET_VERSION,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for s in &ds.samples {
        let rec = Record::Sample {
            id: s.id,
            s: [s.s.d, s.s.v, s.s.dtheta],
            gamma: [s.gamma.g0, s.gamma.g1],
            phi: s.phi,
            td: s.td,
            outcome: s.outcome,
            worst: [s.worst.d, s.worst.delta_theta, s.worst.psi],
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let corrupt = |reason: String| Error::CorruptArtifact {
        path: path.to_path_buf(),
        reason,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut header = None;
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| corrupt(format!("line {}: {e}", lineno + 1)))?;
        match rec {
            Record::Header {
                seed,
                config_hash,
                version,
            } => {
                if lineno != 0 {
                    return Err(corrupt("header record must come first".into()));
                }
                if version != DATASET_VERSION {
                    return Err(corrupt(format!("unsupported version {version}")));
                }
                header = Some((seed, config_hash));
            }
            Record::Sample {
                id,
                s,
                gamma,
                phi,
                td,
                outcome,
                worst,
            } => {
                if header.is_none() {
                    return Err(corrupt("sample before header".into()));
                }
                if !seen.insert(id) {
                    return Err(corrupt(format!("duplicate sample id {id}")));
                }
                samples.push(LabeledSample {
                    id,
                    s: Features {
                        d: s[0],
                        v: s[1],
                        dtheta: s[2],
                    },
                    gamma: GammaPair::new(gamma[0], gamma[1]),
                    phi,
                    td,
                    outcome,
                    worst: PhiInputs {
                        d: worst[0],
                        delta_theta: worst[1],
                        psi: worst[2],
                    },
                });
            }
        }
    }
    let (seed, config_hash) = header.ok_or_else(|| corrupt("missing header".into()))?;
    Ok(Dataset {
        samples,
        seed,
        config_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_generation() {
        let ds = generate(0, 1, &GenerationConfig::default()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn deterministic_generation() {
        let cfg = GenerationConfig::default();
        let a = generate(40, 9, &cfg).unwrap();
        let b = generate(40, 9, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate(40, 10, &cfg).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn labels_reproduce_from_worst_step() {
        let cfg = GenerationConfig::default();
        let ds = generate(60, 3, &cfg).unwrap();
        for s in &ds.samples {
            assert!(s.phi > 0.0);
            assert!(s.td >= 0.0 && s.td <= cfg.horizon);
            let again = phi(&s.worst, &cfg.surrogate, &cfg.domain).unwrap();
            assert_eq!(again, s.phi);
            assert!(s.s.d >= cfg.domain.d_min && s.s.d <= cfg.domain.d_max);
        }
    }

    #[test]
    fn split_sizes_and_partition() {
        let cfg = GenerationConfig::default();
        let ds = generate(30, 1, &cfg).unwrap();
        let (tr, te) = split(&ds, 0.7, 5).unwrap();
        assert_eq!(tr.len(), 21);
        assert_eq!(te.len(), 9);
        let mut ids: Vec<u64> = tr.ids().into_iter().chain(te.ids()).collect();
        ids.sort_unstable();
        assert_eq!(ids, ds.ids());
        let two = ds.with_samples(ds.samples[..2].to_vec());
        let (a, b) = split(&two, 0.5, 0).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
        assert!(split(&ds, 1.0, 0).is_err());
    }

    #[test]
    fn default_split_counts() {
        let mut ds = generate(1, 1, &GenerationConfig::default()).unwrap();
        let s = ds.samples[0];
        ds.samples = (0..1500).map(|i| LabeledSample { id: i, ..s }).collect();
        let (tr, te) = split(&ds, 0.7, 42).unwrap();
        assert_eq!((tr.len(), te.len()), (1050, 450));
    }

    #[test]
    fn quantile_monotone_subset() {
        let cfg = GenerationConfig::default();
        let ds = generate(50, 2, &cfg).unwrap();
        let mut prev = usize::MAX;
        for q in [0.0, 0.1, 0.25, 0.5, 0.75, 0.9] {
            let n = unsafe_subset(&ds, q).map(|d| d.len()).unwrap_or(0);
            assert!(n <= prev);
            prev = n;
        }
        assert_eq!(unsafe_subset(&ds, 0.0).unwrap().len(), ds.len());
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.5), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.75), 4.0);
    }

    #[test]
    fn dataset_file_round_trip() {
        let cfg = GenerationConfig::default();
        let ds = generate(12, 4, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.ndjson");
        write_dataset(&ds, &p).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back, ds);
        let first = std::fs::read_to_string(&p).unwrap();
        let head = first.lines().next().unwrap();
        assert!(head.starts_with(r#"{"kind":"header","seed":4,"config_hash":""#));
        assert!(first.lines().nth(1).unwrap().starts_with(r#"{"kind":"sample","id":0,"s":["#));
    }

    #[test]
    fn corrupt_dataset_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ndjson");
        std::fs::write(&p, "{\"kind\":\"sample\"}\n").unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::CorruptArtifact { .. })));
        assert!(matches!(
            read_dataset(&dir.path().join("none")),
            Err(Error::MissingArtifact(_))
        ));
    }
}
