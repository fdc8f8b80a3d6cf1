use std::collections::HashSet;

use dacbf::forge::*;
use dacbf::penn::*;
use dacbf::tracin::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn clean_data(n: usize, seed: u64) -> Dataset {
    let cfg = GenerationConfig {
        monitor_defect: MonitorDefect::NONE,
        ..Default::default()
    };
    generate(n, seed, &cfg).unwrap()
}

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        hidden: vec![10, 10],
        ensemble_size: 2,
        epochs: 4,
        n_checkpoints: 2,
        batch_size: 4,
        lr: 1e-3,
        ..Default::default()
    }
}

#[test]
fn per_sample_gradient_matches_finite_differences() {
    let ds = clean_data(30, 1);
    let (model, _) = train(&ds, &tiny_cfg(), 1).unwrap();
    let norm = &model.normalizer;
    for z in &ds.samples[..5] {
        let w = &model.members[0];
        let g = per_sample_gradient(w, norm, z);
        let x = norm.input(&z.model_input());
        let y = norm.target(&z.targets());
        let loss = |w: &MlpWeights| head_nll(&w.forward(&x), &y, 0);
        let h = 1e-6;
        for i in 0..w.n_params() {
            let (mut a, mut b) = (w.clone(), w.clone());
            a.params[i] += h;
            b.params[i] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-4);
            assert!(err < 1e-5, "param {i}: analytic {} vs fd {fd}", g[i]);
        }
    }
}

#[test]
fn checkpoint_sums_are_additive() {
    let ds = clean_data(40, 2);
    let (tr, te) = split(&ds, 0.75, 2).unwrap();
    let (model, ck) = train(&tr, &tiny_cfg(), 2).unwrap();
    let u = unsafe_subset(&te, 0.5).unwrap();
    let norm = &model.normalizer;
    let all = influence_scores(&tr, &ck, &u, norm).unwrap();
    let first = influence_scores(&tr, &ck[..1], &u, norm).unwrap();
    let second = influence_scores(&tr, &ck[1..], &u, norm).unwrap();
    let doubled: Vec<Checkpoint> = ck.iter().chain(ck.iter()).cloned().collect();
    let twice = influence_scores(&tr, &doubled, &u, norm).unwrap();
    for i in 0..tr.len() {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * (1.0 + a.abs() + b.abs());
        assert!(close(all[i].tau_safety, first[i].tau_safety + second[i].tau_safety));
        assert!(close(all[i].tau_self, first[i].tau_self + second[i].tau_self));
        assert!(close(twice[i].tau_self, 2.0 * all[i].tau_self));
        assert!(all[i].tau_self >= 0.0);
        assert!(close(all[i].tau_self, tau_self(&tr.samples[i], &ck, norm)));
    }
}

#[test]
fn sole_unsafe_point_is_its_own_harm() {
    let ds = clean_data(20, 3);
    let (model, ck) = train(&ds, &tiny_cfg(), 3).unwrap();
    let z = ds.samples[4];
    let only = ds.with_samples(vec![z]);
    let ts = tau_safety(&z, &ck, &only, &model.normalizer).unwrap();
    let tself = tau_self(&z, &ck, &model.normalizer);
    assert!((ts + tself).abs() <= 1e-12 * tself.max(1.0));
}

#[test]
fn empty_unsafe_set_is_rejected() {
    let ds = clean_data(10, 4);
    let (model, ck) = train(&ds, &tiny_cfg(), 4).unwrap();
    let empty = ds.with_samples(Vec::new());
    assert!(influence_scores(&ds, &ck, &empty, &model.normalizer).is_err());
    assert!(influence_scores(&ds, &[], &ds, &model.normalizer).is_err());
}

#[test]
fn self_influence_finds_corrupted_labels() {
    let mut ds = clean_data(200, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sd = {
        let m = ds.samples.iter().map(|s| s.phi).sum::<f64>() / ds.len() as f64;
        (ds.samples.iter().map(|s| (s.phi - m).powi(2)).sum::<f64>() / ds.len() as f64).sqrt()
    };
    let mut corrupted = HashSet::new();
    while corrupted.len() < 20 {
        corrupted.insert(rng.random_range(0..ds.len()));
    }
    for &i in &corrupted {
        ds.samples[i].phi += 4.0 * sd;
    }
    let cfg = TrainConfig {
        hidden: vec![32, 32],
        ensemble_size: 2,
        epochs: 10,
        n_checkpoints: 5,
        batch_size: 16,
        lr: 3e-3,
        ..Default::default()
    };
    let (model, ck) = train(&ds, &cfg, 5).unwrap();
    let mut scored: Vec<(f64, usize)> = ds
        .samples
        .iter()
        .enumerate()
        .map(|(i, z)| (tau_self(z, &ck, &model.normalizer), i))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let hits = scored[..20].iter().filter(|(_, i)| corrupted.contains(i)).count();
    assert!(hits >= 12, "top-decile hit rate {hits}/20");
}

fn brute_force_risk(model: &EnsembleModel, test: &Dataset, q: f64) -> f64 {
    let mut phis: Vec<f64> = test.samples.iter().map(|s| s.phi).collect();
    phis.sort_by(|a, b| a.total_cmp(b));
    // linear interpolation between order statistics
    let pos = q * (phis.len() - 1) as f64;
    let (lo, frac) = (pos.floor() as usize, pos - pos.floor());
    let thr = phis[lo] + frac * (phis[(lo + 1).min(phis.len() - 1)] - phis[lo]);
    let mut total = 0.0;
    let mut n = 0;
    for s in test.samples.iter().filter(|s| s.phi > thr) {
        let pred = model.predict_input(&s.model_input());
        let per: f64 = pred
            .members
            .iter()
            .map(|m| {
                let r = s.phi - m.mean[0];
                0.5 * ((2.0 * std::f64::consts::PI * m.var[0]).ln() + r * r / m.var[0])
            })
            .sum::<f64>()
            / pred.members.len() as f64;
        total += per;
        n += 1;
    }
    total / n as f64
}

#[test]
fn safety_weighted_risk_matches_brute_force() {
    let ds = clean_data(40, 6);
    let (model, _) = train(&ds, &tiny_cfg(), 6).unwrap();
    let test = ds.with_samples(ds.samples[..20].to_vec());
    let got = safety_weighted_risk(&model, &test, 0.75).unwrap();
    let want = brute_force_risk(&model, &test, 0.75);
    assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()), "{got} vs {want}");
    assert_eq!(unsafe_subset(&test, 0.75).unwrap().len(), 5);
}

fn records(scores: &[(f64, f64)]) -> Vec<RawInfluence> {
    scores
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| RawInfluence {
            id: i as u64,
            tau_safety: a,
            tau_self: b,
        })
        .collect()
}

fn fake_dataset(n: usize) -> Dataset {
    let base = clean_data(1, 7).samples[0];
    Dataset {
        samples: (0..n as u64).map(|id| LabeledSample { id, ..base }).collect(),
        seed: 7,
        config_hash: String::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn curate_removes_the_top_k(
        scores in proptest::collection::vec((-10.0f64..10.0, 0.0f64..10.0), 5..80),
        rho in 0.0f64..0.9,
    ) {
        let ds = fake_dataset(scores.len());
        let recs = score_records(&records(&scores), ScoreMix::COMBINED);
        let cur = curate(&ds, &recs, rho).unwrap();
        let k = (rho * scores.len() as f64).round() as usize;
        let mut order: Vec<(f64, u64)> = recs.iter().map(|r| (r.score, r.id)).collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let expect: Vec<u64> = order[..k].iter().map(|o| o.1).collect();
        prop_assert_eq!(&cur.removed_ids, &expect);
        prop_assert_eq!(cur.kept.len(), scores.len() - k);
        let removed: HashSet<u64> = expect.into_iter().collect();
        prop_assert!(cur.kept.samples.iter().all(|s| !removed.contains(&s.id)));
    }

    #[test]
    fn ordering_ignores_affine_rescaling(
        scores in proptest::collection::vec((-10.0f64..10.0, 0.0f64..10.0), 5..60),
        a in 0.01f64..100.0, b in -50.0f64..50.0, c in 0.01f64..100.0, d in -50.0f64..50.0,
    ) {
        let base = score_records(&records(&scores), ScoreMix::COMBINED);
        let scaled: Vec<(f64, f64)> = scores.iter().map(|&(s, t)| (a * s + b, c * t + d)).collect();
        let moved = score_records(&records(&scaled), ScoreMix::COMBINED);
        for (x, y) in base.iter().zip(&moved) {
            prop_assert!((x.score - y.score).abs() <= 1e-6 * (1.0 + x.score.abs()));
        }
    }

    #[test]
    fn spearman_is_rank_invariant(
        xs in proptest::collection::vec(-10.0f64..10.0, 3..40),
    ) {
        let ys: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0).collect();
        let distinct = xs.iter().collect::<Vec<_>>().windows(2).any(|w| w[0] != w[1]);
        if distinct {
            prop_assert!((spearman(&xs, &ys) - 1.0).abs() < 1e-9);
            let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
            prop_assert!((spearman(&xs, &neg) + 1.0).abs() < 1e-9);
        }
    }
}
