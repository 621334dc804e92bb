//! Single-model, fixed-weight and dynamically weighted RT predictors.

use std::fmt;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::clustering::SessionRecord;
use crate::error::{Error, Result};
use crate::mixture::{cluster_weights, ClusterWeightModel, WeightModelConfig};
use crate::provenance::config_hash;
use crate::signal::io::{read_json, write_atomic, write_json};
use crate::signal::{FeatureSet, TrialEvent, WeightingSpec};
use crate::svr::{self, SvrModel, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictMode {
    Single,
    Fixed,
    #[default]
    Dynamic,
}

impl PredictMode {
    pub const ALL: [PredictMode; 3] = [PredictMode::Single, PredictMode::Fixed, PredictMode::Dynamic];

    pub fn name(self) -> &'static str {
        match self {
            PredictMode::Single => "single",
            PredictMode::Fixed => "fixed",
            PredictMode::Dynamic => "dynamic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl fmt::Display for PredictMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub svr: TrainConfig,
    pub weights: WeightModelConfig,
    pub weighting: WeightingSpec,
    /// Frames ending at or before this second train the mixtures and set
    /// the fixed weights.
    pub first_window_end_s: u32,
    pub mode: PredictMode,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            svr: TrainConfig::default(),
            weights: WeightModelConfig::default(),
            weighting: WeightingSpec::default(),
            first_window_end_s: 300,
            mode: PredictMode::Dynamic,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub session_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub k: usize,
    pub mode: PredictMode,
    pub first_window_end_s: u32,
    pub svrs: Vec<SvrModel>,
    pub weight_model: ClusterWeightModel,
    pub single_svr: SvrModel,
    pub provenance: Provenance,
}

/// A featurized training session with its regression pairs.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSession<'a> {
    pub record: &'a SessionRecord,
    pub features: &'a FeatureSet,
}

pub fn train_ensemble(sessions: &[TrainingSession], labels: &[usize], cfg: &EnsembleConfig) -> Result<EnsembleModel> {
    if sessions.len() != labels.len() {
        return Err(Error::invalid("one label per training session is required"));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if k == 0 {
        return Err(Error::invalid("no training sessions"));
    }
    if let Some(c) = (0..k).find(|c| !labels.contains(c)) {
        return Err(Error::invalid(format!("cluster {} has no training sessions", c + 1)));
    }

    let mut groups: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k];
    for (s, &l) in sessions.iter().zip(labels) {
        for f in s.features.frames.iter().filter(|f| f.t_s <= cfg.first_window_end_s) {
            groups[l].push(cfg.weighting.vector(f)?);
        }
    }
    if let Some(c) = groups.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!(
            "cluster {} has no feature frames ending by {} s",
            c + 1,
            cfg.first_window_end_s
        )));
    }
    let weight_model = ClusterWeightModel::fit(&groups, cfg.weighting.clone(), &cfg.weights, cfg.seed)?;

    let records: Vec<SessionRecord> = sessions.iter().map(|s| s.record.clone()).collect();
    let svrs = crate::clustering::train_cluster_models(&records, labels, k, &cfg.svr)?;
    let (x, rt): (Vec<Vec<f64>>, Vec<f64>) = records
        .iter()
        .flat_map(|r| r.x.iter().cloned().zip(r.rt.iter().copied()))
        .unzip();
    let single_svr = svr::train(&x, &rt, &cfg.svr)?;

    Ok(EnsembleModel {
        k,
        mode: cfg.mode,
        first_window_end_s: cfg.first_window_end_s,
        svrs,
        weight_model,
        single_svr,
        provenance: Provenance {
            session_ids: records.iter().map(|r| r.session_id.clone()).collect(),
            labels: labels.to_vec(),
            seed: cfg.seed,
            config_hash: config_hash(cfg)?,
        },
    })
}

impl EnsembleModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: EnsembleModel = read_json(path)?;
        if m.svrs.len() != m.k || m.weight_model.k() != m.k {
            return Err(Error::parse(path, "model member counts disagree with k"));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t_s: u32,
    pub rt_pred_s: f64,
    pub weights: Vec<f64>,
    pub rt_rec_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrace {
    pub session_id: String,
    pub mode: PredictMode,
    pub rows: Vec<TraceRow>,
    /// Seconds skipped because no feature frame ended there.
    pub gaps: usize,
}

/// Predictions of every cluster model at each frame.
fn sub_predictions(model: &EnsembleModel, features: &FeatureSet) -> Result<Vec<Vec<f64>>> {
    features
        .frames
        .iter()
        .map(|f| model.svrs.iter().map(|s| svr::predict(s, &f.oz_spectrum)).collect())
        .collect()
}

fn count_gaps(features: &FeatureSet) -> usize {
    let gaps: usize = features
        .frames
        .windows(2)
        .map(|w| (w[1].t_s - w[0].t_s).saturating_sub(1) as usize)
        .sum();
    if gaps > 0 {
        warn!("session {}: {gaps} seconds without a feature frame", features.session_id);
    }
    gaps
}

fn combine(features: &FeatureSet, mode: PredictMode, subs: &[Vec<f64>], weights: &[Vec<f64>]) -> PredictionTrace {
    let rows = features
        .frames
        .iter()
        .zip(subs.iter().zip(weights))
        .map(|(f, (p, w))| TraceRow {
            t_s: f.t_s,
            rt_pred_s: p.iter().zip(w).map(|(a, b)| a * b).sum(),
            weights: w.clone(),
            rt_rec_s: None,
        })
        .collect();
    PredictionTrace {
        session_id: features.session_id.clone(),
        mode,
        rows,
        gaps: count_gaps(features),
    }
}

pub fn dynamic_weights(model: &EnsembleModel, features: &FeatureSet) -> Result<Vec<Vec<f64>>> {
    let spec = &model.weight_model.features;
    features
        .frames
        .iter()
        .map(|f| cluster_weights(&model.weight_model, &spec.vector(f)?))
        .collect()
}

pub fn predict_dynamic(model: &EnsembleModel, features: &FeatureSet) -> Result<PredictionTrace> {
    let subs = sub_predictions(model, features)?;
    let w = dynamic_weights(model, features)?;
    Ok(combine(features, PredictMode::Dynamic, &subs, &w))
}

/// Mean posterior over the first-window frames, renormalized.
pub fn fixed_weights(model: &EnsembleModel, features: &FeatureSet) -> Result<Vec<f64>> {
    let end = model.first_window_end_s;
    if features.frames.last().map_or(true, |f| f.t_s < end) {
        return Err(Error::invalid(format!(
            "fixed weights need a session of at least {end} s (session {})",
            features.session_id
        )));
    }
    let spec = &model.weight_model.features;
    let mut acc = vec![0.0; model.k];
    let mut n = 0usize;
    for f in features.frames.iter().filter(|f| f.t_s <= end) {
        let w = cluster_weights(&model.weight_model, &spec.vector(f)?)?;
        acc.iter_mut().zip(&w).for_each(|(a, b)| *a += b);
        n += 1;
    }
    let s: f64 = acc.iter().sum();
    if n == 0 || s <= 0.0 {
        return Err(Error::numeric("fixed weights are degenerate"));
    }
    Ok(acc.iter().map(|a| a / s).collect())
}

pub fn predict_fixed(model: &EnsembleModel, features: &FeatureSet) -> Result<PredictionTrace> {
    let w = fixed_weights(model, features)?;
    let subs = sub_predictions(model, features)?;
    let ws = vec![w; subs.len()];
    Ok(combine(features, PredictMode::Fixed, &subs, &ws))
}

pub fn predict_single(model: &EnsembleModel, features: &FeatureSet) -> Result<PredictionTrace> {
    let subs = features
        .frames
        .iter()
        .map(|f| Ok(vec![svr::predict(&model.single_svr, &f.oz_spectrum)?]))
        .collect::<Result<Vec<_>>>()?;
    let ws = vec![vec![1.0]; subs.len()];
    Ok(combine(features, PredictMode::Single, &subs, &ws))
}

pub fn predict(model: &EnsembleModel, features: &FeatureSet, mode: PredictMode) -> Result<PredictionTrace> {
    match mode {
        PredictMode::Single => predict_single(model, features),
        PredictMode::Fixed => predict_fixed(model, features),
        PredictMode::Dynamic => predict_dynamic(model, features),
    }
}

/// Trial-level (recorded, predicted) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialAlignment {
    pub rt_rec: Vec<f64>,
    pub rt_pred: Vec<f64>,
    pub excluded: usize,
}

/// Pairs each trial with the trace row at `floor(deviation_onset_s)`.
pub fn align_trace_to_trials(trace: &PredictionTrace, events: &[TrialEvent]) -> TrialAlignment {
    let mut out = TrialAlignment {
        rt_rec: Vec::new(),
        rt_pred: Vec::new(),
        excluded: 0,
    };
    for e in events {
        let t = e.deviation_onset_s.floor();
        let row = (t >= 0.0)
            .then(|| trace.rows.binary_search_by_key(&(t as u32), |r| r.t_s).ok())
            .flatten();
        match row {
            Some(i) => {
                out.rt_rec.push(e.rt_s);
                out.rt_pred.push(trace.rows[i].rt_pred_s);
            }
            None => out.excluded += 1,
        }
    }
    out
}

/// Fills `rt_rec_s`: at trial seconds only, or held until the next trial.
pub fn attach_recorded(trace: &mut PredictionTrace, events: &[TrialEvent], hold: bool) {
    let mut marks: Vec<(u32, f64)> = events
        .iter()
        .filter(|e| e.deviation_onset_s >= 0.0)
        .map(|e| (e.deviation_onset_s.floor() as u32, e.rt_s))
        .collect();
    marks.sort_by_key(|m| m.0);
    let mut next = 0;
    let mut held = None;
    for row in &mut trace.rows {
        let mut here = None;
        while next < marks.len() && marks[next].0 <= row.t_s {
            if marks[next].0 == row.t_s {
                here = Some(marks[next].1);
            }
            held = Some(marks[next].1);
            next += 1;
        }
        row.rt_rec_s = if hold { held } else { here };
    }
}

pub fn trace_csv(trace: &PredictionTrace) -> Result<Vec<u8>> {
    let k = trace.rows.first().map_or(0, |r| r.weights.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::invalid(format!("trace serialization: {e}"));
    let mut header = vec!["t_s".to_string(), "rt_pred_s".to_string()];
    header.extend((1..=k).map(|i| format!("w_{i}")));
    header.push("rt_rec_s".into());
    w.write_record(&header).map_err(err)?;
    for r in &trace.rows {
        let mut row = vec![r.t_s.to_string(), r.rt_pred_s.to_string()];
        row.extend(r.weights.iter().map(f64::to_string));
        row.push(r.rt_rec_s.map(|v| v.to_string()).unwrap_or_default());
        w.write_record(row).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

pub fn write_trace(path: &Path, trace: &PredictionTrace) -> Result<()> {
    write_atomic(path, &trace_csv(trace)?)
}
