//! Evaluation: RMSE, leave-one-out folds, the cross-model matrix and reports.

pub mod pipeline;

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{initial_labels, recursive_cluster, train_cluster_models, session_rmse, ClusterConfig, InitConfig, SessionRecord};
use crate::ensemble::{align_trace_to_trials, attach_recorded, predict, train_ensemble, EnsembleConfig, PredictMode, PredictionTrace, TrainingSession};
use crate::error::{Error, Result};
use crate::mixture::GridCell;
use crate::provenance::config_hash;
use crate::signal::{FeatureSet, TrialEvent};
use crate::stats::{mean_std, median};
use crate::svr::{self, TrainConfig};

/// Root mean squared difference of two equal-length, non-empty vectors.
pub fn rmse(pred: &[f64], rec: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != rec.len() {
        return Err(Error::invalid(format!(
            "RMSE needs equal non-empty inputs, got {} and {}",
            pred.len(),
            rec.len()
        )));
    }
    let se: f64 = pred.iter().zip(rec).map(|(p, r)| (p - r) * (p - r)).sum();
    Ok((se / pred.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        MeanStd { mean, std, n: values.len() }
    }
}

/// A featurized session ready for evaluation.
#[derive(Debug, Clone)]
pub struct EvalSession {
    pub subject_id: String,
    pub record: SessionRecord,
    pub features: FeatureSet,
    pub events: Vec<TrialEvent>,
}

impl EvalSession {
    pub fn new(subject_id: &str, features: FeatureSet, events: Vec<TrialEvent>) -> Result<Self> {
        Ok(EvalSession {
            subject_id: subject_id.to_string(),
            record: SessionRecord::from_features(&features, &events)?,
            features,
            events,
        })
    }

    pub fn id(&self) -> &str {
        &self.record.session_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Each fold clusters its own training sessions.
    #[default]
    Clustered,
    /// Training sessions keep the labels passed in.
    Given,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldUnit {
    #[default]
    Session,
    Subject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Trace row at each trial's onset second against that trial's RT.
    #[default]
    Trial,
    /// Every trace row against the most recent recorded RT.
    Hold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub k: usize,
    pub max_iter: usize,
    pub init: InitConfig,
    pub ensemble: EnsembleConfig,
    pub labels: LabelSource,
    pub folds: FoldUnit,
    pub pairing: Pairing,
    pub modes: Vec<PredictMode>,
    /// Keep held-out traces in memory (never serialized).
    pub keep_traces: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 3,
            max_iter: 50,
            init: InitConfig::default(),
            ensemble: EnsembleConfig::default(),
            labels: LabelSource::Clustered,
            folds: FoldUnit::Session,
            pairing: Pairing::Trial,
            modes: PredictMode::ALL.to_vec(),
            keep_traces: false,
        }
    }
}

impl EvalConfig {
    pub fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig {
            k: self.k,
            max_iter: self.max_iter,
            svr: self.ensemble.svr.clone(),
        }
    }
}

/// Which sessions trained a fold's models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldManifest {
    pub held_out: Vec<String>,
    pub train_sessions: Vec<String>,
    /// Zero-based training label of each `train_sessions` entry.
    pub train_labels: Vec<usize>,
    pub skipped: Option<String>,
}

impl FoldManifest {
    /// Held-out ids that also appear among the training ids.
    pub fn leaks(&self) -> Vec<String> {
        let train: BTreeSet<&String> = self.train_sessions.iter().collect();
        self.held_out.iter().filter(|h| train.contains(h)).cloned().collect()
    }
}

/// Total held-out ids found in training manifests across all folds.
pub fn fold_violations(folds: &[FoldManifest]) -> usize {
    folds.iter().map(|f| f.leaks().len()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEval {
    pub session_id: String,
    pub subject_id: String,
    /// Zero-based label used for aggregation.
    pub cluster: usize,
    /// RMSE in seconds per mode name.
    pub rmse: BTreeMap<String, f64>,
    pub n_pairs: usize,
    pub excluded_trials: usize,
    #[serde(skip)]
    pub traces: Vec<PredictionTrace>,
}

impl SessionEval {
    pub fn rmse_of(&self, mode: PredictMode) -> Option<f64> {
        self.rmse.get(mode.name()).copied()
    }

    pub fn trace(&self, mode: PredictMode) -> Option<&PredictionTrace> {
        self.traces.iter().find(|t| t.mode == mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    /// One-based cluster number.
    pub cluster: usize,
    pub n_sessions: usize,
    pub rmse: BTreeMap<String, MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossMatrix {
    pub k: usize,
    /// `mean[i][j]`: RMSE of the cluster-`i` model on cluster-`j` sessions.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub n: Vec<Vec<usize>>,
    pub session_ids: Vec<String>,
    /// `per_session[s][i]`: RMSE of model `i` on session `s`; own-cluster
    /// entries come from models trained without that session.
    pub per_session: Vec<Vec<f64>>,
}

impl CrossMatrix {
    /// Rows whose diagonal is not strictly below every other entry.
    pub fn dominance_failures(&self) -> Vec<usize> {
        (0..self.k)
            .filter(|&i| {
                let d = self.mean[i][i];
                !d.is_finite() || (0..self.k).any(|j| j != i && !(d < self.mean[i][j]))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub modes: Vec<String>,
    pub sessions: Vec<SessionEval>,
    pub per_cluster: Vec<ClusterSummary>,
    pub overall: BTreeMap<String, MeanStd>,
    pub median: BTreeMap<String, f64>,
    pub cross_model: Option<CrossMatrix>,
    pub accuracy: Vec<GridCell>,
    pub excluded_trials: usize,
    pub skipped_folds: usize,
    pub folds: Vec<FoldManifest>,
    pub seed: u64,
    pub config_hash: String,
}

fn check_labels(n: usize, labels: &[usize], k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::invalid(format!("{} labels for {n} sessions", labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!("label {} outside 1..={k}", l + 1)));
    }
    Ok(())
}

/// Session groups held out together, in first-appearance order.
fn fold_groups(sessions: &[EvalSession], unit: FoldUnit) -> Vec<Vec<usize>> {
    match unit {
        FoldUnit::Session => (0..sessions.len()).map(|i| vec![i]).collect(),
        FoldUnit::Subject => {
            let mut order: Vec<&str> = Vec::new();
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, s) in sessions.iter().enumerate() {
                if !groups.contains_key(s.subject_id.as_str()) {
                    order.push(&s.subject_id);
                }
                groups.entry(&s.subject_id).or_default().push(i);
            }
            order.iter().map(|s| groups[s].clone()).collect()
        }
    }
}

struct FoldOutcome {
    manifest: FoldManifest,
    evals: Vec<SessionEval>,
}

fn run_fold(sessions: &[EvalSession], labels: &[usize], held: &[usize], cfg: &EvalConfig) -> Result<FoldOutcome> {
    let train: Vec<usize> = (0..sessions.len()).filter(|i| !held.contains(i)).collect();
    let mut manifest = FoldManifest {
        held_out: held.iter().map(|&i| sessions[i].id().to_string()).collect(),
        train_sessions: train.iter().map(|&i| sessions[i].id().to_string()).collect(),
        train_labels: Vec::new(),
        skipped: None,
    };
    let skip = |mut m: FoldManifest, why: String| {
        warn!("skipping fold {}: {why}", m.held_out.join("+"));
        m.skipped = Some(why);
        Ok(FoldOutcome { manifest: m, evals: Vec::new() })
    };

    let train_labels = match cfg.labels {
        LabelSource::Given => {
            let l: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            if let Some(c) = (0..cfg.k).find(|c| !l.contains(c)) {
                return skip(manifest, format!("cluster {} would have no training session", c + 1));
            }
            l
        }
        LabelSource::Clustered => {
            if train.len() < cfg.k {
                return skip(manifest, format!("{} training sessions cannot fill {} clusters", train.len(), cfg.k));
            }
            let records: Vec<SessionRecord> = train.iter().map(|&i| sessions[i].record.clone()).collect();
            let rts: Vec<&[f64]> = records.iter().map(|r| r.all_rts.as_slice()).collect();
            let init = initial_labels(&rts, &cfg.init)?;
            recursive_cluster(&records, &init, &cfg.cluster_config())?.labels
        }
    };
    manifest.train_labels = train_labels.clone();

    let ts: Vec<TrainingSession> = train
        .iter()
        .map(|&i| TrainingSession {
            record: &sessions[i].record,
            features: &sessions[i].features,
        })
        .collect();
    let model = train_ensemble(&ts, &train_labels, &cfg.ensemble)?;
    let held_ids: BTreeSet<&str> = held.iter().map(|&i| sessions[i].id()).collect();
    if let Some(leak) = model.provenance.session_ids.iter().find(|s| held_ids.contains(s.as_str())) {
        return Err(Error::numeric(format!("held-out session {leak} appears in its fold's training data")));
    }

    let mut evals = Vec::new();
    for &h in held {
        let s = &sessions[h];
        let mut out = SessionEval {
            session_id: s.id().to_string(),
            subject_id: s.subject_id.clone(),
            cluster: labels[h],
            rmse: BTreeMap::new(),
            n_pairs: 0,
            excluded_trials: 0,
            traces: Vec::new(),
        };
        for &mode in &cfg.modes {
            let mut trace = predict(&model, &s.features, mode)?;
            let a = align_trace_to_trials(&trace, &s.events);
            out.excluded_trials = a.excluded;
            let value = match cfg.pairing {
                Pairing::Trial => {
                    out.n_pairs = a.rt_rec.len();
                    rmse(&a.rt_pred, &a.rt_rec)?
                }
                Pairing::Hold => {
                    attach_recorded(&mut trace, &s.events, true);
                    let (p, r): (Vec<f64>, Vec<f64>) =
                        trace.rows.iter().filter_map(|row| row.rt_rec_s.map(|v| (row.rt_pred_s, v))).unzip();
                    out.n_pairs = p.len();
                    rmse(&p, &r)?
                }
            };
            out.rmse.insert(mode.name().to_string(), value);
            if cfg.keep_traces {
                out.traces.push(trace);
            }
        }
        evals.push(out);
    }
    Ok(FoldOutcome { manifest, evals })
}

/// Leave-one-out evaluation of every prediction mode. `labels` (zero-based)
/// group the held-out results; with [`LabelSource::Given`] they also train.
pub fn loso_evaluate(sessions: &[EvalSession], labels: &[usize], cfg: &EvalConfig) -> Result<EvalReport> {
    check_labels(sessions.len(), labels, cfg.k)?;
    if cfg.init.thresholds.len() + 1 != cfg.k {
        return Err(Error::invalid(format!(
            "{} ratio thresholds do not make {} initial clusters",
            cfg.init.thresholds.len(),
            cfg.k
        )));
    }
    if cfg.modes.is_empty() {
        return Err(Error::invalid("no prediction modes requested"));
    }
    let mut ids = BTreeSet::new();
    if let Some(s) = sessions.iter().find(|s| !ids.insert(s.id())) {
        return Err(Error::invalid(format!("duplicate session id {}", s.id())));
    }
    let groups = fold_groups(sessions, cfg.folds);
    let outcomes: Vec<FoldOutcome> = groups
        .par_iter()
        .map(|g| run_fold(sessions, labels, g, cfg))
        .collect::<Result<_>>()?;

    let mut folds = Vec::new();
    let mut evals = Vec::new();
    for o in outcomes {
        folds.push(o.manifest);
        evals.extend(o.evals);
    }
    if fold_violations(&folds) > 0 {
        return Err(Error::numeric("fold manifests leak held-out sessions"));
    }
    let mode_names: Vec<String> = cfg.modes.iter().map(|m| m.name().to_string()).collect();
    let collect = |filter: &dyn Fn(&SessionEval) -> bool, name: &str| -> Vec<f64> {
        evals.iter().filter(|e| filter(e)).filter_map(|e| e.rmse.get(name).copied()).collect()
    };
    let per_cluster = (0..cfg.k)
        .map(|c| ClusterSummary {
            cluster: c + 1,
            n_sessions: evals.iter().filter(|e| e.cluster == c).count(),
            rmse: mode_names
                .iter()
                .map(|m| (m.clone(), MeanStd::of(&collect(&|e| e.cluster == c, m))))
                .collect(),
        })
        .collect();
    let overall = mode_names.iter().map(|m| (m.clone(), MeanStd::of(&collect(&|_| true, m)))).collect();
    let med = mode_names.iter().map(|m| (m.clone(), median(&collect(&|_| true, m)))).collect();
    Ok(EvalReport {
        k: cfg.k,
        modes: mode_names,
        excluded_trials: evals.iter().map(|e| e.excluded_trials).sum(),
        skipped_folds: folds.iter().filter(|f| f.skipped.is_some()).count(),
        sessions: evals,
        per_cluster,
        overall,
        median: med,
        cross_model: None,
        accuracy: Vec::new(),
        folds,
        seed: cfg.ensemble.seed,
        config_hash: config_hash(cfg)?,
    })
}

/// Each cluster's SVR applied to every cluster's sessions. Own-cluster
/// entries leave the scored session out of training.
pub fn cross_model_matrix(sessions: &[SessionRecord], labels: &[usize], k: usize, svr_cfg: &TrainConfig) -> Result<CrossMatrix> {
    check_labels(sessions.len(), labels, k)?;
    if let Some(c) = (0..k).find(|c| !labels.contains(c)) {
        return Err(Error::invalid(format!("cluster {} has no sessions", c + 1)));
    }
    let full = train_cluster_models(sessions, labels, k, svr_cfg)?;
    let per_session: Vec<Vec<f64>> = (0..sessions.len())
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>> {
            let own = labels[j];
            (0..k)
                .map(|i| {
                    if i != own {
                        return session_rmse(&full[i], &sessions[j]);
                    }
                    let (x, rt): (Vec<Vec<f64>>, Vec<f64>) = sessions
                        .iter()
                        .zip(labels)
                        .enumerate()
                        .filter(|(s, (_, l))| **l == own && *s != j)
                        .flat_map(|(_, (r, _))| r.x.iter().cloned().zip(r.rt.iter().copied()))
                        .unzip();
                    if x.is_empty() {
                        warn!("cluster {} has one session; its diagonal entry is undefined", own + 1);
                        return Ok(f64::NAN);
                    }
                    session_rmse(&svr::train(&x, &rt, svr_cfg)?, &sessions[j])
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut mean = vec![vec![f64::NAN; k]; k];
    let mut std = vec![vec![f64::NAN; k]; k];
    let mut n = vec![vec![0; k]; k];
    for i in 0..k {
        for c in 0..k {
            let v: Vec<f64> = per_session
                .iter()
                .zip(labels)
                .filter(|(r, l)| **l == c && r[i].is_finite())
                .map(|(r, _)| r[i])
                .collect();
            let s = MeanStd::of(&v);
            mean[i][c] = s.mean;
            std[i][c] = s.std;
            n[i][c] = s.n;
        }
    }
    Ok(CrossMatrix {
        k,
        mean,
        std,
        n,
        session_ids: sessions.iter().map(|s| s.session_id.clone()).collect(),
        per_session,
    })
}
