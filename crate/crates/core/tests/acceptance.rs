//! End-to-end acceptance checks. Every criterion prints one line
//! `ACCEPTANCE <n> [PASS|FAIL] ...` on stdout (bypassing the test harness
//! capture) and then asserts.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use dacbf::bench::SuiteRow;
use dacbf::config::PipelineConfig;
use dacbf::dynamics::{ControlInput, InputBounds};
use dacbf::forge::{generate, GenerationConfig};
use dacbf::penn::mlp::{nll_loss, SAFETY_HEAD};
use dacbf::penn::uncertainty::{cvar_gaussian, jrd_gaussians};
use dacbf::penn::{MlpWeights, BOTH_HEADS};
use dacbf::pipeline::*;
use dacbf::qp::{margin_max, solve, QpProblem};
use dacbf::selector::{lipschitz_constant, select_with, CandidateGrid, SelectorParams};
use dacbf::surrogate::*;
use dacbf::tracin::{loo_validate, LooConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn report(n: u32, title: &str, pass: bool, detail: &str, elapsed: Duration) {
    let line = format!(
        "ACCEPTANCE {n:>2} [{}] {title}: {detail} ({:.1} s)\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

#[test]
fn c01_surrogate_sandwich() {
    let t = Instant::now();
    let p = SurrogateParams::default();
    let b = DomainBounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut violations = 0;
    for _ in 0..100_000 {
        let inp = PhiInputs {
            d: rng.random_range(b.d_min..=b.d_max),
            delta_theta: rng.random_range(0.0..=PI),
            psi: rng.random_range(-10.0..10.0),
        };
        let v = phi(&inp, &p, &b).unwrap();
        let (lo, hi) = two_sided_bounds(inp.psi, &b, &p);
        violations += usize::from(!(lo <= v && v <= hi));
    }
    let el = t.elapsed();
    report(
        1,
        "surrogate sandwich",
        violations == 0 && el < Duration::from_secs(5),
        &format!("{violations} violations in 1e5 samples"),
        el,
    );
}

#[test]
fn c02_margin_error_inversion() {
    let t = Instant::now();
    let p = SurrogateParams::default();
    let b = DomainBounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut violations, mut vacuous, mut worst) = (0, 0, 0.0f64);
    for _ in 0..10_000 {
        let inp = PhiInputs {
            d: rng.random_range(b.d_min..=b.d_max),
            delta_theta: rng.random_range(0.0..=PI),
            psi: rng.random_range(-5.0..5.0),
        };
        let truth = phi(&inp, &p, &b).unwrap();
        let eps = truth * rng.random_range(0.0..0.9);
        let phi_hat = truth + eps * rng.random_range(-1.0..=1.0);
        // margin implied by the prediction at the same geometry
        let psi_hat = inp.psi - (phi_hat / truth).ln() / p.lambda2;
        let bound = psi_error_bound(phi_hat, eps, &b, &p).unwrap();
        if bound.is_infinite() {
            vacuous += 1;
            continue;
        }
        let err = (psi_hat - inp.psi).abs();
        worst = worst.max(err / bound.max(1e-300));
        violations += usize::from(err > bound * (1.0 + 1e-12) + 1e-12);
    }
    let el = t.elapsed();
    report(
        2,
        "margin-error inversion",
        violations == 0 && el < Duration::from_secs(5),
        &format!("{violations} violations in 1e4 pairs, {vacuous} vacuous, max |ψ̂−ψ|/bound = {worst:.3}"),
        el,
    );
}

fn grid_oracle(qp: &QpProblem, center: (f64, f64), half: (f64, f64), n: usize) -> Option<(f64, (f64, f64))> {
    let mut best: Option<(f64, (f64, f64))> = None;
    for i in 0..n {
        let a = (center.0 - half.0 + 2.0 * half.0 * i as f64 / (n - 1) as f64).clamp(-qp.bounds.a_max, qp.bounds.a_max);
        for j in 0..n {
            let w = (center.1 - half.1 + 2.0 * half.1 * j as f64 / (n - 1) as f64)
                .clamp(-qp.bounds.omega_max, qp.bounds.omega_max);
            if qp.margin(ControlInput::new(a, w)) >= 0.0 {
                let c = (a - qp.u_nom.accel).powi(2) + (w - qp.u_nom.omega).powi(2);
                if best.is_none_or(|(bc, _)| c < bc) {
                    best = Some((c, (a, w)));
                }
            }
        }
    }
    best
}

fn boundary_oracle(qp: &QpProblem, n: usize) -> f64 {
    let (am, wm) = (qp.bounds.a_max, qp.bounds.omega_max);
    let [r0, r1] = qp.constraint_row;
    let cost = |u: ControlInput| (u.accel - qp.u_nom.accel).powi(2) + (u.omega - qp.u_nom.omega).powi(2);
    let mut best = if qp.margin(qp.u_nom) >= 0.0 && qp.u_nom.accel.abs() <= am && qp.u_nom.omega.abs() <= wm {
        0.0
    } else {
        f64::INFINITY
    };
    for i in 0..=n {
        let t = -1.0 + 2.0 * i as f64 / n as f64;
        // the constraint line, parametrized along its flatter coordinate
        let on_line = if r1.abs() >= r0.abs() {
            ControlInput::new(t * am, -(qp.constraint_const + r0 * t * am) / r1)
        } else {
            ControlInput::new(-(qp.constraint_const + r1 * t * wm) / r0, t * wm)
        };
        let cands = [
            ControlInput::new(am, t * wm),
            ControlInput::new(-am, t * wm),
            ControlInput::new(t * am, wm),
            ControlInput::new(t * am, -wm),
            on_line,
        ];
        for u in cands {
            if u.accel.abs() <= am && u.omega.abs() <= wm && qp.margin(u) >= -1e-9 {
                best = best.min(cost(u));
            }
        }
    }
    best
}

#[test]
fn c03_qp_optimality_and_dichotomy() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let n = 401;
    let (mut worst_gap, mut dichotomy_errors, mut feasible, mut better_than_solver) = (0.0f64, 0, 0, 0);
    for _ in 0..1000 {
        let qp = QpProblem {
            u_nom: ControlInput::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            constraint_row: [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
            constraint_const: rng.random_range(-5.0..4.0),
            bounds: InputBounds::default(),
        };
        let (a, w) = (qp.bounds.a_max, qp.bounds.omega_max);
        let coarse = grid_oracle(&qp, (0.0, 0.0), (a, w), n);
        let sol = solve(&qp);
        if sol.is_err() != (margin_max(&qp) < 0.0) || sol.is_err() != coarse.is_none() {
            dichotomy_errors += 1;
        }
        let (Ok(sol), Some((grid_best, _))) = (sol, coarse) else {
            continue;
        };
        feasible += 1;
        // a convex optimum is u_nom or lies on the boundary of the feasible
        // set, so the grid is backed by a dense scan of that boundary
        let oracle = grid_best.min(boundary_oracle(&qp, 50_000));
        let cost = (sol.u.accel - qp.u_nom.accel).powi(2) + (sol.u.omega - qp.u_nom.omega).powi(2);
        better_than_solver += usize::from(grid_best < cost - 1e-9);
        worst_gap = worst_gap.max((cost - oracle).abs());
    }
    let el = t.elapsed();
    report(
        3,
        "CBF-QP optimality",
        worst_gap <= 1e-3 && dichotomy_errors == 0 && better_than_solver == 0 && el < Duration::from_secs(30),
        &format!(
            "{feasible}/1000 feasible, max |cost − grid oracle| = {worst_gap:.2e}, \
             grid beat solver {better_than_solver}×, dichotomy errors {dichotomy_errors}"
        ),
        el,
    );
}

#[test]
fn c04_selector_lipschitz() {
    let t = Instant::now();
    let p = SelectorParams::default();
    let b = DomainBounds::default();
    let grid = CandidateGrid::default();
    let l_m = lipschitz_constant(&p, &b);
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (mut violations, mut worst) = (0, 0.0f64);
    for _ in 0..10_000 {
        let phi: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-1.0..6.0)).collect();
        // gates held fixed while the predictions move
        let gates: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-8.0..0.0)).collect();
        let scale = 10f64.powf(rng.random_range(-4.0..0.5));
        let moved: Vec<f64> = phi.iter().map(|v| v + scale * rng.random_range(-1.0..=1.0)).collect();
        let sup = phi.iter().zip(&moved).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let ga = select_with(&grid, &phi, &gates, &p);
        let gb = select_with(&grid, &moved, &gates, &p);
        let ratio = ga.dist(&gb) / sup;
        worst = worst.max(ratio);
        violations += usize::from(ratio > l_m * (1.0 + 1e-9));
    }
    let el = t.elapsed();
    report(
        4,
        "selector Lipschitz bound",
        violations == 0 && (l_m - 1.414).abs() <= 0.01 && el < Duration::from_secs(60),
        &format!("L_M = {l_m:.4}, max empirical ratio {worst:.4}, {violations} violations in 1e4"),
        el,
    );
}

#[test]
fn c05_gradient_check() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let net = MlpWeights::init(&[5, 7, 6, 4], &mut rng);
    let mut net = net;
    for p in net.params.iter_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    let mut worst = 0.0f64;
    for heads in [BOTH_HEADS, SAFETY_HEAD, [0.0, 1.0]] {
        for _ in 0..5 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.5..1.5)).collect();
            let y = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let g = net.sample_grad(&x, &y, heads);
            let loss = |w: &MlpWeights| {
                let o = w.forward(&x);
                (0..2).map(|k| heads[k] * dacbf::penn::head_nll(&o, &y, k)).sum::<f64>()
            };
            let h = 1e-6;
            let mut num = vec![0.0; g.len()];
            for i in 0..g.len() {
                let (mut a, mut b) = (net.clone(), net.clone());
                a.params[i] += h;
                b.params[i] -= h;
                num[i] = (loss(&a) - loss(&b)) / (2.0 * h);
            }
            let diff = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = num.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            worst = worst.max(diff / scale);
        }
    }
    // the summed loss is what training descends
    let x = [0.3, -0.2, 0.9, 0.1, -1.0];
    let y = [0.4, -0.3];
    let both = net.sample_grad(&x, &y, BOTH_HEADS);
    let eps = 1e-6;
    let mut a = net.clone();
    a.params[0] += eps;
    let mut b = net.clone();
    b.params[0] -= eps;
    let fd0 = (nll_loss(&a.forward(&x), &y) - nll_loss(&b.forward(&x), &y)) / (2.0 * eps);
    worst = worst.max((fd0 - both[0]).abs() / fd0.abs().max(1e-12));
    let el = t.elapsed();
    report(
        5,
        "backprop vs finite differences",
        worst < 1e-5 && el < Duration::from_secs(10),
        &format!("max relative error {worst:.2e} over both heads"),
        el,
    );
}

fn quadrature_jrd(members: &[(f64, f64)]) -> f64 {
    let lo = members.iter().map(|m| m.0 - 14.0 * m.1.sqrt()).fold(f64::INFINITY, f64::min);
    let hi = members.iter().map(|m| m.0 + 14.0 * m.1.sqrt()).fold(f64::NEG_INFINITY, f64::max);
    let n = 400_000;
    let h = (hi - lo) / n as f64;
    let pdf = |x: f64, (m, v): (f64, f64)| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
    let k = members.len() as f64;
    let (mut mix2, mut own2) = (0.0, 0.0);
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let mix = members.iter().map(|&m| pdf(x, m)).sum::<f64>() / k;
        mix2 += w * mix * mix;
        own2 += w * members.iter().map(|&m| pdf(x, m).powi(2)).sum::<f64>() / k;
    }
    (own2 * h / 3.0).ln() - (mix2 * h / 3.0).ln()
}

#[test]
fn c06_uncertainty_oracles() {
    let t = Instant::now();
    let fixtures: Vec<Vec<(f64, f64)>> = vec![
        vec![(0.0, 1.0), (1.0, 1.0)],
        vec![(0.2, 0.05), (0.5, 0.2), (-0.1, 0.01)],
        vec![(1.0, 0.3), (1.0, 0.6), (1.4, 0.3), (0.7, 0.9)],
        vec![(3.0, 0.5), (-3.0, 0.5)],
    ];
    let mut worst_jrd = 0.0f64;
    for f in &fixtures {
        worst_jrd = worst_jrd.max((jrd_gaussians(f) - quadrature_jrd(f)).abs());
    }
    let identical = jrd_gaussians(&[(0.7, 0.2); 3]);
    let (mean, sd, alpha) = (1.0, 0.5, 0.95);
    let closed = cvar_gaussian(mean, sd, alpha).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let normal = Normal::new(mean, sd).unwrap();
    let mut draws: Vec<f64> = (0..1_000_000).map(|_| normal.sample(&mut rng)).collect();
    draws.sort_by(f64::total_cmp);
    let tail = &draws[(alpha * draws.len() as f64) as usize..];
    let mc = tail.iter().sum::<f64>() / tail.len() as f64;
    let rel = (mc - closed).abs() / closed.abs();
    let el = t.elapsed();
    report(
        6,
        "JRD and CVaR oracles",
        worst_jrd <= 1e-6 && rel <= 0.005 && identical == 0.0 && el < Duration::from_secs(60),
        &format!(
            "max |JRD − quadrature| {worst_jrd:.2e}, CVaR closed {closed:.5} vs MC {mc:.5} ({:.3}%), identical JRD {identical}",
            100.0 * rel
        ),
        el,
    );
}

#[test]
fn c07_tracin_tracks_leave_one_out() {
    let t = Instant::now();
    let cfg = LooConfig::default();
    let pool = generate(cfg.n_train + cfg.n_test, 7, &GenerationConfig::default()).unwrap();
    let rep = loo_validate(&pool, &cfg).unwrap();
    let signs = rep
        .base
        .predicted
        .iter()
        .zip(&rep.base.actual)
        .filter(|(p, a)| p.signum() == a.signum())
        .count() as f64
        / rep.base.predicted.len() as f64;
    let el = t.elapsed();
    let pass = rep.base.spearman >= 0.6
        && (2.5..=6.0).contains(&rep.residual_ratio)
        && el < Duration::from_secs(600);
    report(
        7,
        "TracIn vs leave-one-out",
        pass,
        &format!(
            "{} unsafe points, Spearman {:.3}, residual ratio lr/(lr/2) {:.2}, sign agreement {:.0}%, \
             max |E|/‖∇ℓ‖² {:.3e}",
            rep.n_unsafe,
            rep.base.spearman,
            rep.residual_ratio,
            100.0 * signs,
            rep.base.residual_per_grad_sq
        ),
        el,
    );
}

struct Full {
    _dir: tempfile::TempDir,
    p: Pipeline,
    elapsed: Duration,
}

/// The default seeded pipeline, run once and shared by criteria 8 to 11.
fn full() -> &'static Full {
    static FULL: OnceLock<Full> = OnceLock::new();
    FULL.get_or_init(|| {
        let t = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(PipelineConfig::default(), dir.path()).unwrap();
        p.run_all().unwrap();
        Full {
            _dir: dir,
            p,
            elapsed: t.elapsed(),
        }
    })
}

fn evaluation(f: &Full) -> Evaluation {
    f.p.read_json(&f.p.path(EVALUATION), &f.p.digests().retrain).unwrap()
}

#[test]
fn c08_curation_efficacy() {
    let f = full();
    let e = evaluation(f);
    let at = |rho: f64| e.sweep.iter().find(|r| (r.rho - rho).abs() < 1e-9).unwrap().safety_rmse;
    let base = at(0.0);
    let best = e.sweep.iter().min_by(|a, b| a.safety_rmse.total_cmp(&b.safety_rmse)).unwrap();
    let gain = 1.0 - at(0.10) / base;
    let pass = gain >= 0.10
        && [0.10, 0.15].iter().any(|r| (best.rho - r).abs() < 1e-9)
        && at(0.20) > best.safety_rmse
        && f.elapsed < Duration::from_secs(1800);
    let sweep: Vec<String> = e.sweep.iter().map(|r| format!("{:.2}→{:.4}", r.rho, r.safety_rmse)).collect();
    report(
        8,
        "curation efficacy",
        pass,
        &format!(
            "safety-weighted RMSE sweep [{}], reduction at ρ=0.10 {:.1}%, minimum at ρ={:.2}",
            sweep.join(", "),
            100.0 * gain,
            best.rho
        ),
        f.elapsed,
    );
}

#[test]
fn c09_ablation_ordering() {
    let f = full();
    let e = evaluation(f);
    let get = |name: &str| e.ablation.iter().find(|r| r.mix_name == name).unwrap().safety_rmse;
    let (c, i, s) = (get("combined"), get("influence"), get("self"));
    report(
        9,
        "ablation ordering",
        c <= i && i <= s,
        &format!("combined {c:.4} ≤ influence-only {i:.4} ≤ self-only {s:.4}"),
        f.elapsed,
    );
}

#[test]
fn c10_certified_set_nesting() {
    let t = Instant::now();
    let f = full();
    let cert: CertificateReport = f.p.read_json(&f.p.path(CERTIFICATE), &f.p.digests().certify).unwrap();
    let mut levels: Vec<(f64, &[bool])> = cert.ladder.iter().map(|l| (l.eps, &l.set.mask[..])).collect();
    for m in &cert.models {
        levels.push((m.eps_max_abs, &m.certified_max_abs.mask));
        levels.push((m.eps_rmse, &m.certified_rmse.mask));
    }
    let mut nesting_errors = 0;
    for &(e, big) in &levels {
        for &(e2, small) in &levels {
            if e2 < e {
                nesting_errors += big.iter().zip(small).filter(|(b, s)| **b && !**s).count();
            }
        }
    }
    let (base, cur) = (&cert.models[0], &cert.models[1]);
    let expands = cur.eps_rmse < base.eps_rmse && cur.certified_rmse.fraction > base.certified_rmse.fraction;
    report(
        10,
        "certified-set nesting",
        nesting_errors == 0 && expands && t.elapsed() < Duration::from_secs(300),
        &format!(
            "{} levels, {nesting_errors} nesting violations; RMSE ε {:.4}→{:.4} certifies {:.1}%→{:.1}% of states, \
             margin requirement −{:.1}% (max-abs ε {:.3}→{:.3}: {:.1}%→{:.1}%)",
            levels.len(),
            base.eps_rmse,
            cur.eps_rmse,
            100.0 * base.certified_rmse.fraction,
            100.0 * cur.certified_rmse.fraction,
            100.0 * cert.margin_reduction_rmse,
            base.eps_max_abs,
            cur.eps_max_abs,
            100.0 * base.certified_max_abs.fraction,
            100.0 * cur.certified_max_abs.fraction,
        ),
        t.elapsed(),
    );
}

fn row<'a>(rows: &'a [SuiteRow], scenario: &str, controller: &str) -> &'a SuiteRow {
    rows.iter().find(|r| r.scenario == scenario && r.controller == controller).unwrap()
}

#[test]
fn c11_closed_loop_consistency() {
    let f = full();
    let cl: ClosedLoop = f.p.read_json(&f.p.path(CLOSED_LOOP), &f.p.digests().simulate).unwrap();
    let cert: CertificateReport = f.p.read_json(&f.p.path(CERTIFICATE), &f.p.digests().certify).unwrap();
    let delta_emp = cl
        .episodes
        .iter()
        .filter(|e| e.scenario == "simple" && e.controller == "oracle")
        .map(|e| e.min_margin)
        .fold(f64::INFINITY, f64::min);
    let eps = cert.models[1].eps_max_abs;
    let eps_star = delta_emp / (cert.l_psi.value * cert.l_m.value);
    let premise = delta_emp > 0.0 && eps <= eps_star;
    let da_h_events = cl
        .episodes
        .iter()
        .filter(|e| e.scenario == "simple" && e.controller == "da_cbf")
        .filter(|e| e.min_h < 0.0)
        .count();
    let low = row(&cl.rows, "simple", "fixed_low").collisions;
    let (da, un) = (row(&cl.rows, "complex", "da_cbf").collisions, row(&cl.rows, "complex", "uncurated").collisions);
    let pass = (!premise || da_h_events == 0) && low >= 1 && da <= un && f.elapsed < Duration::from_secs(1800);
    report(
        11,
        "closed-loop safety consistency",
        pass,
        &format!(
            "premise {} (oracle visited margin {delta_emp:.3}, ε {eps:.3} vs ε*_emp {eps_star:.2e}); \
             DA-CBF h<0 episodes on simple {da_h_events}; Fixed Low collisions on simple {low}; \
             complex collisions DA-CBF {da} vs uncurated {un}",
            if premise { "holds" } else { "fails, consequence vacuous" }
        ),
        f.elapsed,
    );
}

const SMALL: &str = r#"
seed = 5
[data]
n_samples = 240
[train]
epochs = 6
n_checkpoints = 3
hidden = [16, 16]
[bench]
seeds = 2
scenarios = ["single", "simple"]
"#;

fn files(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        out.push(entry.strip_prefix(dir).unwrap().display().to_string());
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(walk(&p));
        } else {
            v.push(p);
        }
    }
    v
}

#[test]
fn c12_determinism() {
    let t = Instant::now();
    let cfg = PipelineConfig::from_toml_str(SMALL).unwrap();
    let stages = [
        Command::Generate,
        Command::Train,
        Command::Attribute,
        Command::Curate,
        Command::Retrain,
        Command::Simulate,
    ];
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        let p = Pipeline::new(cfg.clone(), d.path()).unwrap();
        for &c in &stages {
            p.run(c).unwrap();
        }
    }
    let names = files(dirs[0].path());
    let checked: HashSet<&str> = [
        DATASET, REFERENCE, SWEEP, MODEL, CHECKPOINTS, TRAIN_LOSS, ATTRIBUTION, LOO, CLOSED_LOOP, CLOSED_LOOP_CSV,
        TRAJECTORIES,
    ]
    .into_iter()
    .collect();
    let mut differing = Vec::new();
    for n in &names {
        let a = std::fs::read(dirs[0].path().join(n)).unwrap();
        let b = std::fs::read(dirs[1].path().join(n)).ok();
        if b.as_deref() != Some(&a[..]) {
            differing.push(n.clone());
        }
    }
    let missing: Vec<&&str> = checked.iter().filter(|c| !names.iter().any(|n| n == **c)).collect();
    let el = t.elapsed();
    report(
        12,
        "determinism",
        differing.is_empty() && missing.is_empty() && files(dirs[1].path()) == names,
        &format!("{} artifacts byte-identical across two runs, differing {differing:?}", names.len()),
        el,
    );
}
