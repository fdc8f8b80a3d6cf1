//! Batch pipeline behind the `dacbf` command line. Each stage reads its
//! upstream artifacts from the output directory, checks that they were made
//! under the same configuration, and writes its own.
//!
//! JSON artifacts are wrapped in [`Stamped`]; CSV artifacts start with a
//! `# config_digest=… seed=…` comment line; the datasets carry the digest in
//! their header record.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bench::{
    build_standard_layouts, run_suite, single_obstacle_layout, Controller, ControllerSpec, EpisodeResult, Scenario,
    SuiteRow,
};
use crate::certificate::{
    certified_set, covering_probability, delta_req, lipschitz_Psi, lipschitz_psi, max_difference_quotient,
    oracle_margin_bound, qp_feasibility_check, safety_budget, sampling_bound, state_grid, CertifiedSet, Constant,
    CoveringBound, FeasibilityCheck, StateEnvelope,
};
use crate::config::{PipelineConfig, StageDigests};
use crate::dynamics::{eval_barrier, ControlInput, GammaPair, Obstacle, RobotState};
use crate::error::{Error, Result};
use crate::forge::{
    draw_episode, generate_with_stats, phi_max_abs_error, phi_rmse, quantile, read_dataset, safety_weighted_risk,
    safety_weighted_rmse, split, unsafe_subset, write_dataset, Dataset, Features, GenerationConfig, MonitorDefect,
    SweepStats,
};
use crate::penn::{train_with_normalizer, Checkpoint, EnsembleModel, Trainer};
use crate::plot;
use crate::qp::{build_qp, margin_max};
use crate::selector::{lipschitz_constant, smooth_select, OraclePredictor};
use crate::tracin::{
    curate, influence_scores_scoped, loo_validate, score_records, LooReport, RawInfluence, ScoreMix,
};

/// JSON artifact envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub stage: String,
    pub config_digest: String,
    pub seed: u64,
    pub payload: T,
}

/// Pipeline commands in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Attribute,
    Curate,
    Retrain,
    Evaluate,
    Certify,
    Simulate,
    Report,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Generate,
        Command::Train,
        Command::Attribute,
        Command::Curate,
        Command::Retrain,
        Command::Evaluate,
        Command::Certify,
        Command::Simulate,
        Command::Report,
    ];
}

pub const DATASET: &str = "dataset.ndjson";
pub const REFERENCE: &str = "reference.ndjson";
pub const SWEEP: &str = "sweep.json";
pub const MODEL: &str = "model.json";
pub const CHECKPOINTS: &str = "checkpoints.json";
pub const TRAIN_LOSS: &str = "train_loss.csv";
pub const ATTRIBUTION: &str = "attribution.json";
pub const LOO: &str = "loo.json";
pub const CURATION: &str = "curation.json";
pub const INFLUENCE: &str = "influence.csv";
pub const MODELS_DIR: &str = "models";
pub const EVALUATION: &str = "evaluation.json";
pub const RMSE_TABLE: &str = "rmse_table.csv";
pub const ABLATION_TABLE: &str = "ablation_table.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_SVG: &str = "sweep.svg";
pub const HIST_CSV: &str = "influence_hist.csv";
pub const HIST_SVG: &str = "influence_hist.svg";
pub const CERTIFICATE: &str = "certificate.json";
pub const CLOSED_LOOP: &str = "closed_loop.json";
pub const CLOSED_LOOP_CSV: &str = "closed_loop.csv";
pub const TRAJECTORIES: &str = "trajectories.csv";
pub const REPORT: &str = "report.md";

/// Output of the generate stage besides the datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub n_samples: usize,
    pub stats: SweepStats,
    /// `(success, collision, deadlock)`.
    pub outcomes: (usize, usize, usize),
    /// Samples whose label came from the defective monitor.
    pub stale_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub unsafe_threshold: f64,
    pub unsafe_ids: Vec<u64>,
    pub raw: Vec<RawInfluence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationEntry {
    pub label: String,
    pub mix_name: String,
    pub mix: ScoreMix,
    pub rho: f64,
    pub n_kept: usize,
    /// In removal order.
    pub removed_ids: Vec<u64>,
    /// Removed samples that carry a defective-monitor label.
    pub stale_removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curation {
    pub primary: String,
    pub entries: Vec<CurationEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    pub mix_name: String,
    pub rho: f64,
    pub n_kept: usize,
    /// Pooled-mean RMSE on the unsafe test subset.
    pub safety_rmse: f64,
    pub test_rmse: f64,
    /// Mean safety-head NLL on the unsafe test subset.
    pub safety_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub sweep: Vec<EvalRow>,
    pub ablation: Vec<EvalRow>,
}

/// Prediction-error measurements and certificate conditions of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCertificate {
    pub label: String,
    /// Largest absolute error against defect-free test labels.
    pub eps_max_abs: f64,
    /// RMSE against defect-free test labels.
    pub eps_rmse: f64,
    pub eps_safety_rmse: f64,
    pub sigma: Constant,
    pub l_phi_nn: Constant,
    pub l_e: Constant,
    pub delta_req_max_abs: f64,
    pub delta_req_rmse: f64,
    pub within_budget: Option<bool>,
    pub sampling_period: Option<f64>,
    pub sampling_note: Option<String>,
    pub covering: Option<CoveringBound>,
    pub covering_note: Option<String>,
    pub feasibility: FeasibilityCheck,
    pub certified_max_abs: CertifiedSet,
    pub certified_rmse: CertifiedSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderLevel {
    pub eps: f64,
    pub set: CertifiedSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub envelope: BTreeMap<String, Constant>,
    pub l_psi: Constant,
    pub l_big_psi: Constant,
    pub l_m: Constant,
    pub l_phi_true: Constant,
    pub delta_min: Constant,
    pub eps_star: Option<f64>,
    pub covering_radius: f64,
    pub domain_diameter: f64,
    pub grid: Vec<Features>,
    pub oracle_gamma: Vec<GammaPair>,
    /// Best achievable CBF margin at the oracle selection, per grid state.
    pub oracle_margins: Vec<f64>,
    pub models: Vec<ModelCertificate>,
    /// Relative reduction of the required margin from curation, per error convention.
    pub margin_reduction_max_abs: f64,
    pub margin_reduction_rmse: f64,
    pub ladder: Vec<LadderLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoop {
    pub rows: Vec<SuiteRow>,
    /// Trajectories are kept only for the exported seeds.
    pub episodes: Vec<EpisodeResult>,
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    digests: StageDigests,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptArtifact {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

/// Write only when the content changed, so reruns leave files untouched.
fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Ok(old) = fs::read(path) {
        if old == bytes {
            return Ok(());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn write_csv(path: &Path, digest: &str, seed: u64, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = format!("# config_digest={digest} seed={seed}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    write_bytes(path, &buf)
}

fn f(v: f64) -> String {
    format!("{v}")
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let out = out.into();
        fs::create_dir_all(&out)?;
        let digests = cfg.digests();
        Ok(Self { cfg, out, digests })
    }

    pub fn digests(&self) -> &StageDigests {
        &self.digests
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn model_path(&self, label: &str) -> PathBuf {
        self.out.join(MODELS_DIR).join(format!("{label}.json"))
    }

    fn write_json<T: Serialize>(&self, name: &Path, stage: &str, digest: &str, payload: &T) -> Result<()> {
        let doc = Stamped {
            stage: stage.to_string(),
            config_digest: digest.to_string(),
            seed: self.cfg.seed,
            payload,
        };
        write_bytes(name, &serde_json::to_vec(&doc)?)
    }

    /// Load a stamped artifact and check it against the expected digest.
    pub fn read_json<T: DeserializeOwned>(&self, path: &Path, expected: &str) -> Result<T> {
        require(path)?;
        let doc: Stamped<T> =
            serde_json::from_slice(&fs::read(path)?).map_err(|e| corrupt(path, e.to_string()))?;
        if doc.config_digest != expected {
            return Err(Error::DigestMismatch {
                path: path.display().to_string(),
                found: doc.config_digest,
                expected: expected.to_string(),
            });
        }
        if doc.seed != self.cfg.seed {
            return Err(corrupt(path, format!("seed {} differs from the configured {}", doc.seed, self.cfg.seed)));
        }
        Ok(doc.payload)
    }

    fn read_model(&self, path: &Path, expected: &str) -> Result<EnsembleModel> {
        let m: EnsembleModel = self.read_json(path, expected)?;
        m.check().map_err(|r| corrupt(path, r))?;
        Ok(m)
    }

    fn read_dataset_checked(&self, name: &str) -> Result<Dataset> {
        let path = self.path(name);
        let ds = read_dataset(&path)?;
        if ds.config_hash != self.digests.generate {
            return Err(Error::DigestMismatch {
                path: path.display().to_string(),
                found: ds.config_hash,
                expected: self.digests.generate.clone(),
            });
        }
        Ok(ds)
    }

    /// Train/test split of the recorded dataset.
    pub fn split(&self) -> Result<(Dataset, Dataset)> {
        let ds = self.read_dataset_checked(DATASET)?;
        split(&ds, self.cfg.data.train_frac, self.cfg.seed)
    }

    /// Test split with defect-free labels.
    pub fn reference_test(&self) -> Result<Dataset> {
        let (_, test) = self.split()?;
        let reference = self.read_dataset_checked(REFERENCE)?;
        let ids: HashSet<u64> = test.ids().into_iter().collect();
        Ok(reference.with_samples(reference.samples.iter().filter(|s| ids.contains(&s.id)).copied().collect()))
    }

    pub fn run(&self, cmd: Command) -> Result<()> {
        match cmd {
            Command::Generate => self.cmd_generate(),
            Command::Train => self.cmd_train(),
            Command::Attribute => self.cmd_attribute(),
            Command::Curate => self.cmd_curate(),
            Command::Retrain => self.cmd_retrain(),
            Command::Evaluate => self.cmd_evaluate(),
            Command::Certify => self.cmd_certify(),
            Command::Simulate => self.cmd_simulate(),
            Command::Report => self.cmd_report(),
        }
    }

    pub fn run_all(&self) -> Result<()> {
        Command::ALL.iter().try_for_each(|&c| self.run(c))
    }

    pub fn cmd_generate(&self) -> Result<()> {
        let gen = &self.cfg.generation;
        let (mut ds, stats) = generate_with_stats(self.cfg.data.n_samples, self.cfg.seed, gen)?;
        ds.config_hash = self.digests.generate.clone();
        let clean_cfg = GenerationConfig {
            monitor_defect: MonitorDefect::NONE,
            ..gen.clone()
        };
        let mut reference = generate_with_stats(self.cfg.data.n_samples, self.cfg.seed, &clean_cfg)?.0;
        reference.config_hash = self.digests.generate.clone();
        let stale_ids = ds
            .ids()
            .into_iter()
            .filter(|&id| draw_episode(self.cfg.seed, id, gen).0.stale_monitor)
            .collect();
        let summary = GenerationSummary {
            n_samples: ds.len(),
            stats,
            outcomes: ds.outcome_counts(),
            stale_ids,
        };
        let tmp = self.path("dataset.ndjson.tmp");
        write_dataset(&ds, &tmp)?;
        write_bytes(&self.path(DATASET), &fs::read(&tmp)?)?;
        write_dataset(&reference, &tmp)?;
        write_bytes(&self.path(REFERENCE), &fs::read(&tmp)?)?;
        fs::remove_file(&tmp)?;
        self.write_json(&self.path(SWEEP), "generate", &self.digests.generate, &summary)
    }

    pub fn cmd_train(&self) -> Result<()> {
        let (train, _) = self.split()?;
        let out = Trainer::new(&train, &self.cfg.train, self.cfg.seed, None)?.finish_full()?;
        let d = &self.digests.train;
        self.write_json(&self.path(MODEL), "train", d, &out.model)?;
        self.write_json(&self.path(CHECKPOINTS), "train", d, &out.checkpoints)?;
        let rows: Vec<Vec<String>> = out
            .loss_history
            .iter()
            .enumerate()
            .map(|(e, l)| vec![(e + 1).to_string(), f(*l)])
            .collect();
        write_csv(&self.path(TRAIN_LOSS), d, self.cfg.seed, &["epoch", "loss"], &rows)
    }

    pub fn cmd_attribute(&self) -> Result<()> {
        let (train, test) = self.split()?;
        let model = self.read_model(&self.path(MODEL), &self.digests.train)?;
        let ckpts: Vec<Checkpoint> = self.read_json(&self.path(CHECKPOINTS), &self.digests.train)?;
        let q = self.cfg.data.thr_quantile;
        let unsafe_set = unsafe_subset(&test, q)?;
        let raw = influence_scores_scoped(&train, &ckpts, &unsafe_set, &model.normalizer, self.cfg.attribution.scope)?;
        let attribution = Attribution {
            unsafe_threshold: crate::forge::unsafe_threshold(&test, q),
            unsafe_ids: unsafe_set.ids(),
            raw,
        };
        let d = &self.digests.attribute;
        self.write_json(&self.path(ATTRIBUTION), "attribute", d, &attribution)?;
        let pool = self.read_dataset_checked(DATASET)?;
        let loo: LooReport = loo_validate(&pool, &self.cfg.loo)?;
        self.write_json(&self.path(LOO), "attribute", d, &loo)
    }

    pub fn cmd_curate(&self) -> Result<()> {
        let (train, _) = self.split()?;
        let attribution: Attribution = self.read_json(&self.path(ATTRIBUTION), &self.digests.attribute)?;
        let summary: GenerationSummary = self.read_json(&self.path(SWEEP), &self.digests.generate)?;
        let stale: HashSet<u64> = summary.stale_ids.into_iter().collect();
        let a = &self.cfg.attribution;
        let mut plan: Vec<(String, ScoreMix, f64)> = a.rho_sweep.iter().map(|&r| ("combined".to_string(), a.mix, r)).collect();
        plan.push(("combined".into(), a.mix, a.rho));
        if a.ablation {
            plan.push(("influence".into(), ScoreMix::INFLUENCE_ONLY, a.rho));
            plan.push(("self".into(), ScoreMix::SELF_ONLY, a.rho));
        }
        let mut entries: Vec<CurationEntry> = Vec::new();
        for (name, mix, rho) in plan {
            let label = entry_label(&name, rho);
            if entries.iter().any(|e| e.label == label) {
                continue;
            }
            let records = score_records(&attribution.raw, mix);
            let c = curate(&train, &records, rho)?;
            entries.push(CurationEntry {
                stale_removed: c.removed_ids.iter().filter(|id| stale.contains(id)).count(),
                label,
                mix_name: name,
                mix,
                rho,
                n_kept: c.kept.len(),
                removed_ids: c.removed_ids,
            });
        }
        let curation = Curation {
            primary: entry_label("combined", a.rho),
            entries,
        };
        let d = &self.digests.attribute;
        self.write_json(&self.path(CURATION), "curate", d, &curation)?;
        let primary = curation.primary_entry();
        let removed: HashSet<u64> = primary.removed_ids.iter().copied().collect();
        let rows: Vec<Vec<String>> = score_records(&attribution.raw, a.mix)
            .iter()
            .map(|r| {
                vec![
                    r.id.to_string(),
                    f(r.tau_safety),
                    f(r.tau_self),
                    f(r.score),
                    u8::from(removed.contains(&r.id)).to_string(),
                    u8::from(stale.contains(&r.id)).to_string(),
                ]
            })
            .collect();
        write_csv(
            &self.path(INFLUENCE),
            d,
            self.cfg.seed,
            &["id", "tau_safety", "tau_self", "score", "removed", "stale_label"],
            &rows,
        )
    }

    fn curation(&self) -> Result<Curation> {
        self.read_json(&self.path(CURATION), &self.digests.attribute)
    }

    pub fn cmd_retrain(&self) -> Result<()> {
        let (train, _) = self.split()?;
        let base = self.read_model(&self.path(MODEL), &self.digests.train)?;
        for e in self.curation()?.entries.iter().filter(|e| !e.removed_ids.is_empty()) {
            let removed: HashSet<u64> = e.removed_ids.iter().copied().collect();
            let (m, _) = train_with_normalizer(&train.without(&removed), &self.cfg.train, self.cfg.seed, base.normalizer.clone())?;
            self.write_json(&self.model_path(&e.label), "retrain", &self.digests.retrain, &m)?;
        }
        Ok(())
    }

    /// Model of a curation entry; entries that removed nothing are the base model.
    pub fn entry_model(&self, e: &CurationEntry) -> Result<EnsembleModel> {
        if e.removed_ids.is_empty() {
            self.read_model(&self.path(MODEL), &self.digests.train)
        } else {
            self.read_model(&self.model_path(&e.label), &self.digests.retrain)
        }
    }

    pub fn cmd_evaluate(&self) -> Result<()> {
        let (_, test) = self.split()?;
        let curation = self.curation()?;
        let q = self.cfg.data.thr_quantile;
        let row = |e: &CurationEntry| -> Result<EvalRow> {
            let m = self.entry_model(e)?;
            Ok(EvalRow {
                label: e.label.clone(),
                mix_name: e.mix_name.clone(),
                rho: e.rho,
                n_kept: e.n_kept,
                safety_rmse: safety_weighted_rmse(&m, &test, q)?,
                test_rmse: phi_rmse(&m, &test),
                safety_risk: safety_weighted_risk(&m, &test, q)?,
            })
        };
        let a = &self.cfg.attribution;
        let mut sweep = Vec::new();
        for &rho in &a.rho_sweep {
            sweep.push(row(curation.entry(&entry_label("combined", rho))?)?);
        }
        let mut ablation = Vec::new();
        if a.ablation {
            for name in ["combined", "influence", "self"] {
                ablation.push(row(curation.entry(&entry_label(name, a.rho))?)?);
            }
        }
        let eval = Evaluation { sweep, ablation };
        let (d, seed) = (&self.digests.retrain, self.cfg.seed);
        self.write_json(&self.path(EVALUATION), "evaluate", d, &eval)?;
        let header = ["label", "scores", "rho", "kept", "safety_rmse", "test_rmse", "safety_risk"];
        let table = |rows: &[EvalRow]| -> Vec<Vec<String>> {
            rows.iter()
                .map(|r| {
                    vec![
                        r.label.clone(),
                        r.mix_name.clone(),
                        f(r.rho),
                        r.n_kept.to_string(),
                        f(r.safety_rmse),
                        f(r.test_rmse),
                        f(r.safety_risk),
                    ]
                })
                .collect()
        };
        write_csv(&self.path(RMSE_TABLE), d, seed, &header, &table(&eval.sweep))?;
        write_csv(&self.path(ABLATION_TABLE), d, seed, &header, &table(&eval.ablation))?;
        let mut pts: Vec<(f64, f64)> = eval.sweep.iter().map(|r| (r.rho, r.safety_rmse)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let rows: Vec<Vec<String>> = pts.iter().map(|(x, y)| vec![f(*x), f(*y)]).collect();
        write_csv(&self.path(SWEEP_CSV), d, seed, &["rho", "safety_rmse"], &rows)?;
        write_bytes(
            &self.path(SWEEP_SVG),
            plot::line_chart("Safety-weighted RMSE vs removal fraction", "removal fraction", "safety-weighted RMSE", &pts)
                .as_bytes(),
        )?;
        let attribution: Attribution = self.read_json(&self.path(ATTRIBUTION), &self.digests.attribute)?;
        let removed: HashSet<u64> = curation.primary_entry().removed_ids.iter().copied().collect();
        let records = score_records(&attribution.raw, a.mix);
        let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
        let flags: Vec<bool> = records.iter().map(|r| removed.contains(&r.id)).collect();
        let bins = plot::histogram_bins(&scores, &flags, 30);
        let rows: Vec<Vec<String>> = bins
            .iter()
            .map(|b| vec![f(b.lo), f(b.hi), b.count.to_string(), b.highlighted.to_string()])
            .collect();
        write_csv(&self.path(HIST_CSV), d, seed, &["lo", "hi", "count", "removed"], &rows)?;
        write_bytes(
            &self.path(HIST_SVG),
            plot::histogram("Curation score distribution (removed in red)", "score", &bins).as_bytes(),
        )
    }

    /// Per-point standard deviation of the pooled mean across retrains with
    /// different seeds, 95th percentile.
    fn fit_sigma(&self, train: &Dataset, base: &EnsembleModel, points: &Dataset) -> Result<f64> {
        let n = self.cfg.certificate.sigma_retrains as u64;
        let preds: Vec<Vec<f64>> = (1..=n)
            .map(|k| {
                let (m, _) = train_with_normalizer(train, &self.cfg.train, self.cfg.seed.wrapping_add(k), base.normalizer.clone())?;
                Ok(points.samples.iter().map(|s| m.predict(&s.s, s.gamma).phi_mean()).collect())
            })
            .collect::<Result<_>>()?;
        let sds: Vec<f64> = (0..points.len())
            .map(|i| {
                let mean = preds.iter().map(|p| p[i]).sum::<f64>() / n as f64;
                (preds.iter().map(|p| (p[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            })
            .collect();
        Ok(quantile(&sds, 0.95))
    }

    pub fn cmd_certify(&self) -> Result<()> {
        let cfg = &self.cfg;
        let cc = &cfg.certificate;
        let gen = &cfg.generation;
        let summary: GenerationSummary = self.read_json(&self.path(SWEEP), &self.digests.generate)?;
        let (train, _) = self.split()?;
        let reference = self.read_dataset_checked(REFERENCE)?;
        let ref_test = self.reference_test()?;
        let curation = self.curation()?;
        let primary = curation.primary_entry();
        let base_entry = curation
            .entries
            .iter()
            .find(|e| e.removed_ids.is_empty())
            .cloned()
            .unwrap_or_else(|| CurationEntry {
                label: entry_label("combined", 0.0),
                mix_name: "combined".into(),
                mix: cfg.attribution.mix,
                rho: 0.0,
                n_kept: train.len(),
                removed_ids: Vec::new(),
                stale_removed: 0,
            });

        let mut env = StateEnvelope::from_sweep(&summary.stats, gen.bounds.norm_max());
        let mut envelope = BTreeMap::new();
        {
            let o = &cc.envelope;
            let mut set = |name: &str, field: &mut f64, over: Option<f64>| {
                let c = match over {
                    Some(v) => {
                        *field = v;
                        Constant::user(v)
                    }
                    None => Constant::estimated(*field),
                };
                envelope.insert(name.to_string(), c);
            };
            set("h_max", &mut env.h_max, o.h_max);
            set("hdot_max", &mut env.hdot_max, o.hdot_max);
            set("lgh_max", &mut env.lgh_max, o.lgh_max);
            set("v_psi", &mut env.v_psi, o.v_psi);
            envelope.insert("u_max".into(), Constant::analytic(env.u_max));
        }
        let domain = &gen.domain;
        let l_psi = lipschitz_psi(&env, domain);
        let l_big_psi = lipschitz_Psi(&env, domain);
        let l_m = lipschitz_constant(&cfg.selector.params, domain);
        let points: Vec<([f64; 5], f64)> = reference.samples.iter().map(|s| (s.model_input(), s.phi)).collect();
        let l_phi_true = max_difference_quotient(&points);

        let n = cc.state_grid_n;
        let (d_rng, v_rng, t_rng) = ((gen.d.lo, gen.d.hi), (gen.v.lo, gen.v.hi), (gen.theta.lo, gen.theta.hi));
        let grid = state_grid(d_rng, v_rng, t_rng, n);
        let half = |(lo, hi): (f64, f64)| 0.5 * (hi - lo) / (n - 1) as f64;
        let covering_radius = (half(d_rng).powi(2) + half(v_rng).powi(2) + half(t_rng).powi(2)).sqrt();
        let width = |(lo, hi): (f64, f64)| hi - lo;
        let domain_diameter = (width(d_rng).powi(2) + width(v_rng).powi(2) + width(t_rng).powi(2)).sqrt();
        let oracle = OraclePredictor { generation: gen.clone() };
        let cand = cfg.candidate_grid()?;
        let selected: Vec<(GammaPair, f64)> = grid
            .par_iter()
            .map(|s| {
                let g = smooth_select(s, &oracle, &cand, &cfg.selector.params)?.gamma;
                let state = RobotState::new(0.0, 0.0, s.dtheta, s.v);
                let be = eval_barrier(&state, &Obstacle::new(s.d, 0.0, gen.obstacle_radius)?);
                Ok((g, margin_max(&build_qp(&be, ControlInput::ZERO, g, gen.bounds))))
            })
            .collect::<Result<_>>()?;
        let (oracle_gamma, oracle_margins): (Vec<GammaPair>, Vec<f64>) = selected.into_iter().unzip();

        let delta_min = match cc.delta_min {
            Some(v) => Constant::user(v),
            None => Constant::estimated(oracle_margin_bound(&oracle_margins, l_psi, l_m, l_phi_true, covering_radius)),
        };
        let eps_star = safety_budget(delta_min.value, l_psi, l_m).ok();
        let eps_cover = safety_budget(cc.covering_delta_min, l_psi, l_m)?;
        let q = cfg.data.thr_quantile;

        let mut models = Vec::new();
        for e in [&base_entry, primary] {
            let m = self.entry_model(e)?;
            let kept = train.without(&e.removed_ids.iter().copied().collect());
            let eps_max_abs = phi_max_abs_error(&m, &ref_test);
            let eps_rmse = phi_rmse(&m, &ref_test);
            let preds: Vec<([f64; 5], f64)> = ref_test
                .samples
                .iter()
                .map(|s| (s.model_input(), m.predict(&s.s, s.gamma).phi_mean()))
                .collect();
            let l_nn = max_difference_quotient(&preds);
            let l_e = match cc.envelope.l_e {
                Some(v) => Constant::user(v),
                None => Constant::estimated(l_nn + l_phi_true),
            };
            let sigma = match cc.envelope.sigma {
                Some(v) => Constant::user(v),
                None => Constant::estimated(self.fit_sigma(&kept, &m, &ref_test)?),
            };
            let menv = StateEnvelope {
                l_e: l_e.value,
                sigma: sigma.value,
                ..env
            };
            let (sampling_period, sampling_note) =
                match sampling_bound(delta_min.value, eps_max_abs, l_psi, l_m, env.v_psi) {
                    Ok(v) => (Some(v), None),
                    Err(err) => (None, Some(err.to_string())),
                };
            let (covering, covering_note) =
                match covering_probability(eps_cover, covering_radius, &menv, 3, cand.len(), domain_diameter) {
                    Ok(c) => (Some(c), None),
                    Err(err) => (None, Some(err.to_string())),
                };
            models.push(ModelCertificate {
                label: e.label.clone(),
                eps_max_abs,
                eps_rmse,
                eps_safety_rmse: safety_weighted_rmse(&m, &ref_test, q)?,
                sigma,
                l_phi_nn: Constant::estimated(l_nn),
                l_e,
                delta_req_max_abs: delta_req(eps_max_abs, l_psi, l_m),
                delta_req_rmse: delta_req(eps_rmse, l_psi, l_m),
                within_budget: eps_star.map(|s| eps_max_abs <= s),
                sampling_period,
                sampling_note,
                covering,
                covering_note,
                feasibility: qp_feasibility_check(&oracle_margins, eps_max_abs, l_big_psi, l_m),
                certified_max_abs: certified_set(&oracle_margins, eps_max_abs, l_psi, l_m),
                certified_rmse: certified_set(&oracle_margins, eps_rmse, l_psi, l_m),
            });
        }
        let reduction = |a: f64, b: f64| if a > 0.0 { 1.0 - b / a } else { 0.0 };
        let top = models.iter().map(|m| m.eps_max_abs).fold(0.0, f64::max);
        let ladder = (0..cc.ladder_len)
            .map(|i| {
                let eps = top * i as f64 / (cc.ladder_len - 1) as f64;
                LadderLevel {
                    eps,
                    set: certified_set(&oracle_margins, eps, l_psi, l_m),
                }
            })
            .collect();
        let report = CertificateReport {
            envelope,
            l_psi: Constant::analytic(l_psi),
            l_big_psi: Constant::analytic(l_big_psi),
            l_m: Constant::analytic(l_m),
            l_phi_true: Constant::estimated(l_phi_true),
            delta_min,
            eps_star,
            covering_radius,
            domain_diameter,
            grid,
            oracle_gamma,
            oracle_margins,
            margin_reduction_max_abs: reduction(models[0].eps_max_abs, models[1].eps_max_abs),
            margin_reduction_rmse: reduction(models[0].eps_rmse, models[1].eps_rmse),
            models,
            ladder,
        };
        self.write_json(&self.path(CERTIFICATE), "certify", &self.digests.certify, &report)
    }

    pub fn scenarios(&self) -> Vec<Scenario> {
        let (simple, complex) = build_standard_layouts();
        let all = [single_obstacle_layout(), simple, complex];
        self.cfg
            .bench
            .scenarios
            .iter()
            .filter_map(|name| all.iter().find(|s| &s.name == name).cloned())
            .collect()
    }

    pub fn cmd_simulate(&self) -> Result<()> {
        let b = &self.cfg.bench;
        let bench_cfg = self.cfg.bench_config()?;
        let curation = self.curation()?;
        let base = self.read_model(&self.path(MODEL), &self.digests.train)?;
        let curated = self.entry_model(curation.primary_entry())?;
        let fixed = |name: &str, g: f64| ControllerSpec {
            name: name.to_string(),
            kind: Controller::Fixed(GammaPair::splat(g)),
        };
        let controllers = vec![
            fixed("fixed_low", b.fixed_low),
            fixed("fixed_high", b.fixed_high),
            fixed("fixed_low_in", b.fixed_low_in),
            fixed("fixed_high_in", b.fixed_high_in),
            ControllerSpec {
                name: "uncurated".into(),
                kind: Controller::Adaptive(&base),
            },
            ControllerSpec {
                name: "da_cbf".into(),
                kind: Controller::Adaptive(&curated),
            },
        ];
        let seeds: Vec<u64> = (0..b.seeds).collect();
        let scenarios = self.scenarios();
        let mut out = run_suite(&scenarios, &controllers, &seeds, &bench_cfg)?;
        let oracle_scenarios: Vec<Scenario> =
            scenarios.iter().filter(|s| b.oracle_scenarios.contains(&s.name)).cloned().collect();
        if !oracle_scenarios.is_empty() {
            let oracle = OraclePredictor {
                generation: self.cfg.generation.clone(),
            };
            let spec = [ControllerSpec {
                name: "oracle".into(),
                kind: Controller::Adaptive(&oracle),
            }];
            let extra = run_suite(&oracle_scenarios, &spec, &seeds, &bench_cfg)?;
            out.rows.extend(extra.rows);
            out.episodes.extend(extra.episodes);
        }
        let mut traj_rows = Vec::new();
        for e in out.episodes.iter_mut() {
            if e.seed < b.trajectory_seeds {
                for (k, s) in e.trajectory.iter().enumerate() {
                    let g = e.gamma_trace.get(k).copied();
                    traj_rows.push(vec![
                        e.scenario.clone(),
                        e.controller.clone(),
                        e.seed.to_string(),
                        k.to_string(),
                        f(s.x),
                        f(s.y),
                        f(s.theta),
                        f(s.v),
                        g.map(|g| f(g.g0)).unwrap_or_default(),
                        g.map(|g| f(g.g1)).unwrap_or_default(),
                    ]);
                }
            } else {
                e.trajectory.clear();
                e.gamma_trace.clear();
            }
        }
        let (d, seed) = (&self.digests.simulate, self.cfg.seed);
        let rows: Vec<Vec<String>> = out
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.scenario.clone(),
                    r.controller.clone(),
                    r.runs.to_string(),
                    r.collisions.to_string(),
                    r.collision_runs.to_string(),
                    f(r.deadlock_rate),
                    f(r.success_rate),
                    f(r.mean_time_to_goal),
                    f(r.mean_min_h),
                    r.infeasible_steps.to_string(),
                ]
            })
            .collect();
        write_csv(
            &self.path(CLOSED_LOOP_CSV),
            d,
            seed,
            &[
                "scenario",
                "controller",
                "runs",
                "collisions",
                "collision_runs",
                "deadlock_rate",
                "success_rate",
                "mean_time_to_goal",
                "mean_min_h",
                "infeasible_steps",
            ],
            &rows,
        )?;
        write_csv(
            &self.path(TRAJECTORIES),
            d,
            seed,
            &["scenario", "controller", "seed", "step", "x", "y", "theta", "v", "gamma0", "gamma1"],
            &traj_rows,
        )?;
        let doc = ClosedLoop {
            rows: out.rows,
            episodes: out.episodes,
        };
        self.write_json(&self.path(CLOSED_LOOP), "simulate", d, &doc)
    }

    pub fn cmd_report(&self) -> Result<()> {
        for name in [SWEEP, DATASET, REFERENCE, MODEL, ATTRIBUTION, LOO, CURATION, EVALUATION, CERTIFICATE, CLOSED_LOOP] {
            require(&self.path(name))?;
        }
        let dg = &self.digests;
        let summary: GenerationSummary = self.read_json(&self.path(SWEEP), &dg.generate)?;
        let _: EnsembleModel = self.read_model(&self.path(MODEL), &dg.train)?;
        let _: Attribution = self.read_json(&self.path(ATTRIBUTION), &dg.attribute)?;
        let loo: LooReport = self.read_json(&self.path(LOO), &dg.attribute)?;
        let curation = self.curation()?;
        let eval: Evaluation = self.read_json(&self.path(EVALUATION), &dg.retrain)?;
        let cert: CertificateReport = self.read_json(&self.path(CERTIFICATE), &dg.certify)?;
        let cl: ClosedLoop = self.read_json(&self.path(CLOSED_LOOP), &dg.simulate)?;
        let text = render_report(&self.cfg, dg, &summary, &loo, &curation, &eval, &cert, &cl);
        write_bytes(&self.path(REPORT), text.as_bytes())
    }
}

pub fn entry_label(mix_name: &str, rho: f64) -> String {
    format!("{mix_name}_{rho:.2}")
}

impl Curation {
    pub fn entry(&self, label: &str) -> Result<&CurationEntry> {
        self.entries
            .iter()
            .find(|e| e.label == label)
            .ok_or_else(|| Error::InvalidArgument(format!("no curation entry {label}")))
    }

    pub fn primary_entry(&self) -> &CurationEntry {
        self.entry(&self.primary).expect("primary entry is always curated")
    }
}

#[allow(clippy::too_many_arguments)]
fn render_report(
    cfg: &PipelineConfig,
    dg: &StageDigests,
    summary: &GenerationSummary,
    loo: &LooReport,
    curation: &Curation,
    eval: &Evaluation,
    cert: &CertificateReport,
    cl: &ClosedLoop,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Pipeline report\n");
    let _ = writeln!(s, "- seed: {}", cfg.seed);
    let _ = writeln!(s, "- simulate digest: `{}`", dg.simulate);
    let _ = writeln!(s, "- certify digest: `{}`\n", dg.certify);

    let (ok, col, dead) = summary.outcomes;
    let _ = writeln!(s, "## Data\n");
    let _ = writeln!(
        s,
        "{} episodes: {ok} success, {col} collision, {dead} deadlock; {} labels from the defective monitor.\n",
        summary.n_samples,
        summary.stale_ids.len()
    );

    let table = |s: &mut String, rows: &[EvalRow]| {
        let _ = writeln!(s, "| model | ρ | kept | safety-weighted RMSE | test RMSE | safety NLL |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for r in rows {
            let _ = writeln!(
                s,
                "| {} | {:.2} | {} | {:.4} | {:.4} | {:.4} |",
                r.mix_name, r.rho, r.n_kept, r.safety_rmse, r.test_rmse, r.safety_risk
            );
        }
        let _ = writeln!(s);
    };
    let _ = writeln!(s, "## Removal-fraction sweep\n");
    table(&mut s, &eval.sweep);
    if let (Some(base), Some(p)) = (
        eval.sweep.iter().find(|r| r.rho == 0.0),
        eval.sweep.iter().find(|r| r.label == curation.primary),
    ) {
        let _ = writeln!(
            s,
            "Safety-weighted RMSE reduction at ρ = {:.2}: {:.1}%.\n",
            p.rho,
            100.0 * (1.0 - p.safety_rmse / base.safety_rmse)
        );
    }
    if !eval.ablation.is_empty() {
        let _ = writeln!(s, "## Score ablation\n");
        table(&mut s, &eval.ablation);
    }
    let p = curation.primary_entry();
    let _ = writeln!(
        s,
        "The primary curation removed {} samples, {} of them with defective-monitor labels.\n",
        p.removed_ids.len(),
        p.stale_removed
    );
    let _ = writeln!(s, "## Influence check against leave-one-out retraining\n");
    let _ = writeln!(
        s,
        "Spearman ρ = {:.3} at lr {}, {:.3} at lr {}; residual ratio {:.2}.\n",
        loo.base.spearman, loo.base.lr, loo.half.spearman, loo.half.lr, loo.residual_ratio
    );

    let _ = writeln!(s, "## Certificate\n");
    let _ = writeln!(s, "| constant | value | provenance |");
    let _ = writeln!(s, "|---|---|---|");
    let mut consts: Vec<(String, Constant)> = cert.envelope.iter().map(|(k, v)| (k.clone(), *v)).collect();
    consts.extend([
        ("L_psi".to_string(), cert.l_psi),
        ("L_Psi".to_string(), cert.l_big_psi),
        ("L_M".to_string(), cert.l_m),
        ("L_phi_true".to_string(), cert.l_phi_true),
        ("delta_min".to_string(), cert.delta_min),
    ]);
    for (k, c) in consts {
        let _ = writeln!(s, "| {k} | {:.4} | {} |", c.value, format!("{:?}", c.provenance).to_lowercase());
    }
    let _ = writeln!(s);
    match cert.eps_star {
        Some(e) => {
            let _ = writeln!(s, "Error budget ε* = {e:.4}.\n");
        }
        None => {
            let _ = writeln!(s, "No error budget: the estimated δ_min is not positive.\n");
        }
    }
    let _ = writeln!(
        s,
        "| model | ε max-abs | ε RMSE | σ | δ_req (max-abs) | δ_req (RMSE) | certified (max-abs) | certified (RMSE) | QP feasibility |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
    for m in &cert.models {
        let _ = writeln!(
            s,
            "| {} | {:.4} | {:.4} | {:.4} | {:.2} | {:.2} | {:.1}% | {:.1}% | {} |",
            m.label,
            m.eps_max_abs,
            m.eps_rmse,
            m.sigma.value,
            m.delta_req_max_abs,
            m.delta_req_rmse,
            100.0 * m.certified_max_abs.fraction,
            100.0 * m.certified_rmse.fraction,
            if m.feasibility.pass { "pass" } else { "fail" }
        );
    }
    let _ = writeln!(
        s,
        "\nRequired-margin reduction from curation: {:.1}% (max-abs error), {:.1}% (RMSE).\n",
        100.0 * cert.margin_reduction_max_abs,
        100.0 * cert.margin_reduction_rmse
    );
    for m in &cert.models {
        if let Some(c) = &m.covering {
            let _ = writeln!(s, "- {}: covering bound {:.4} (vacuous: {})", m.label, c.probability, c.vacuous);
        }
        if let Some(n) = &m.covering_note {
            let _ = writeln!(s, "- {}: covering bound unavailable ({n})", m.label);
        }
        if let Some(n) = &m.sampling_note {
            let _ = writeln!(s, "- {}: no admissible sampling period ({n})", m.label);
        }
    }
    let _ = writeln!(s);

    let _ = writeln!(s, "## Closed loop\n");
    let _ = writeln!(s, "| scenario | controller | runs | collisions | deadlock rate | success rate | mean time to goal | mean min h |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
    for r in &cl.rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {:.2} | {:.2} | {:.2} | {:.3} |",
            r.scenario, r.controller, r.runs, r.collisions, r.deadlock_rate, r.success_rate, r.mean_time_to_goal, r.mean_min_h
        );
    }
    s
}
