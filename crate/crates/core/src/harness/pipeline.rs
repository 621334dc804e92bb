//! File-level pipeline stages: synth, features, cluster, train, predict, eval.
//!
//! Corpus layout: `manifest.csv` plus `sessions/<id>/` holding the session
//! files, `truth.json` and, after the features stage, `features.csv`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::{cross_model_matrix, loso_evaluate, EvalConfig, EvalReport, EvalSession};
use crate::clustering::{initial_labels, recursive_cluster, ClusteringResult, SessionRecord};
use crate::ensemble::{attach_recorded, predict, trace_csv, train_ensemble, EnsembleModel, PredictMode, PredictionTrace, TrainingSession};
use crate::error::{Error, Result};
use crate::harness::Pairing;
use crate::mixture::{accuracy_grid, GridConfig, LabeledSession};
use crate::provenance::{config_hash, stamp_csv};
use crate::signal::io::{features_csv, read_events, read_features, read_json, read_session, read_to_string, write_atomic, write_json, EVENTS_FILE, FEATURES_FILE};
use crate::signal::{extract_features, FeatureConfig, FeatureSet, NamedBand, WeightingSpec};
use crate::svr::{self, GridPoint, TrainConfig};
use crate::synthgen::{read_manifest, write_corpus, GeneratorConfig, Manifest, ManifestRow, MANIFEST_FILE, SESSIONS_DIR};

pub const CLUSTERS_FILE: &str = "clusters.json";
pub const MODEL_FILE: &str = "ensemble.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Sessions per archetype for `synth`.
    pub counts: Vec<usize>,
    pub generator: GeneratorConfig,
    pub features: FeatureConfig,
    pub eval: EvalConfig,
    /// Pick SVR hyperparameters by grid search on the pooled corpus before clustering.
    pub svr_search: bool,
    pub accuracy: GridConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            counts: vec![36, 14, 23],
            generator: GeneratorConfig::default(),
            features: FeatureConfig::default(),
            eval: EvalConfig::default(),
            svr_search: false,
            accuracy: GridConfig {
                m_values: vec![1, 3, 5, 10, 15],
                test_stride: 5,
                ..GridConfig::default()
            },
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    /// Propagates one master seed to every seeded stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.generator.seed = seed;
        self.eval.ensemble.seed = seed;
        self.eval.ensemble.svr.seed = seed;
        self.accuracy.seed = seed;
        self
    }

    /// Sets `k`, extending or trimming the ratio thresholds to `k - 1` values.
    pub fn with_k(mut self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let t = &mut self.eval.init.thresholds;
        while t.len() + 1 < k {
            let next = t.last().map_or(2.0, |v| v + 1.0);
            t.push(next);
        }
        t.truncate(k - 1);
        self.eval.k = k;
        self.accuracy.k = k;
        Ok(self)
    }

    pub fn with_m(mut self, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("m must be at least 1"));
        }
        self.eval.ensemble.weights.m = m;
        Ok(self)
    }

    /// Weighting bands; features gain the extra per-channel band powers they
    /// need. The accuracy grid scores each band's power alone and the full
    /// weighting set.
    pub fn with_bands(mut self, bands: &[NamedBand]) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::invalid("at least one band is required"));
        }
        self.features.extra_bands = bands.iter().copied().filter(|b| *b != NamedBand::Theta).collect();
        self.eval.ensemble.weighting.bands = bands.to_vec();
        let mut sets: Vec<WeightingSpec> = bands
            .iter()
            .map(|&b| WeightingSpec {
                bands: vec![b],
                alpha_plv: false,
            })
            .collect();
        if !sets.contains(&self.eval.ensemble.weighting) {
            sets.push(self.eval.ensemble.weighting.clone());
        }
        self.accuracy.band_sets = sets;
        Ok(self)
    }

    pub fn with_pad_factor(mut self, pad: usize) -> Result<Self> {
        if pad != 2 && pad != 4 {
            return Err(Error::invalid(format!("pad factor must be 2 or 4, got {pad}")));
        }
        self.features.spectrum.pad_factor = pad;
        Ok(self)
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }
}

pub fn session_dir(corpus: &Path, session_id: &str) -> PathBuf {
    corpus.join(SESSIONS_DIR).join(session_id)
}

pub fn corpus_rows(corpus: &Path) -> Result<Vec<ManifestRow>> {
    Ok(read_manifest(&corpus.join(MANIFEST_FILE))?.0)
}

pub fn synth(out: &Path, cfg: &PipelineConfig) -> Result<Manifest> {
    write_corpus(out, &cfg.counts, &cfg.generator)
}

/// Featurizes one session directory and writes `features.csv` to `out`.
pub fn features_session(dir: &Path, out: &Path, cfg: &PipelineConfig) -> Result<FeatureSet> {
    let session = read_session(dir)?;
    let set = extract_features(&session, &cfg.features)?;
    write_atomic(out, &stamp_csv(&cfg.hash()?, cfg.seed, &features_csv(&set)?))?;
    Ok(set)
}

/// Featurizes every session of a corpus in place.
pub fn features_corpus(corpus: &Path, cfg: &PipelineConfig) -> Result<usize> {
    let rows = corpus_rows(corpus)?;
    for r in &rows {
        let dir = session_dir(corpus, &r.session_id);
        features_session(&dir, &dir.join(FEATURES_FILE), cfg)?;
        info!("featurized {}", r.session_id);
    }
    Ok(rows.len())
}

pub fn load_session(corpus: &Path, row: &ManifestRow) -> Result<EvalSession> {
    let dir = session_dir(corpus, &row.session_id);
    let path = dir.join(FEATURES_FILE);
    if !path.exists() {
        return Err(Error::invalid(format!(
            "{} is missing; run the features stage first",
            path.display()
        )));
    }
    let features = read_features(&path, &row.session_id)?;
    let events = read_events(&dir.join(EVENTS_FILE))?;
    EvalSession::new(&row.subject_id, features, events)
}

pub fn load_corpus(corpus: &Path) -> Result<Vec<EvalSession>> {
    corpus_rows(corpus)?.iter().map(|r| load_session(corpus, r)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersFile {
    pub config_hash: String,
    pub seed: u64,
    pub k: usize,
    /// SVR settings used by every clustering round and by later stages.
    pub svr: TrainConfig,
    pub svr_grid: Vec<GridPoint>,
    /// One-based initial and final labels by session id.
    pub initial: BTreeMap<String, usize>,
    pub labels: BTreeMap<String, usize>,
    pub result: ClusteringResult,
}

impl ClustersFile {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Zero-based label of every session, in the given order.
    pub fn labels_for(&self, sessions: &[EvalSession]) -> Result<Vec<usize>> {
        sessions
            .iter()
            .map(|s| {
                self.labels
                    .get(s.id())
                    .map(|l| l - 1)
                    .ok_or_else(|| Error::invalid(format!("session {} has no cluster label", s.id())))
            })
            .collect()
    }
}

pub fn cluster_sessions(sessions: &[EvalSession], cfg: &PipelineConfig) -> Result<ClustersFile> {
    let records: Vec<SessionRecord> = sessions.iter().map(|s| s.record.clone()).collect();
    let mut svr_cfg = cfg.eval.ensemble.svr.clone();
    let mut svr_grid = Vec::new();
    if cfg.svr_search {
        let (x, rt): (Vec<Vec<f64>>, Vec<f64>) = records
            .iter()
            .flat_map(|r| r.x.iter().cloned().zip(r.rt.iter().copied()))
            .unzip();
        let (best, points) = svr::grid_search(&x, &rt, &svr_cfg)?;
        info!("SVR grid search chose C = {}, epsilon = {}, gamma = {:?}", best.c, best.epsilon, best.gamma);
        svr_cfg = best;
        svr_grid = points;
    }
    let rts: Vec<&[f64]> = records.iter().map(|r| r.all_rts.as_slice()).collect();
    let init = initial_labels(&rts, &cfg.eval.init)?;
    let mut ccfg = cfg.eval.cluster_config();
    ccfg.svr = svr_cfg.clone();
    let result = recursive_cluster(&records, &init, &ccfg)?;
    let one_based = |l: &[usize]| -> BTreeMap<String, usize> {
        records.iter().zip(l).map(|(r, &v)| (r.session_id.clone(), v + 1)).collect()
    };
    Ok(ClustersFile {
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        k: cfg.eval.k,
        svr: svr_cfg,
        svr_grid,
        initial: one_based(&init),
        labels: one_based(&result.labels),
        result,
    })
}

pub fn cluster(corpus: &Path, out: &Path, cfg: &PipelineConfig) -> Result<ClustersFile> {
    let c = cluster_sessions(&load_corpus(corpus)?, cfg)?;
    write_json(out, &c)?;
    Ok(c)
}

pub fn train_sessions(sessions: &[EvalSession], clusters: &ClustersFile, cfg: &PipelineConfig) -> Result<EnsembleModel> {
    let labels = clusters.labels_for(sessions)?;
    let ts: Vec<TrainingSession> = sessions
        .iter()
        .map(|s| TrainingSession {
            record: &s.record,
            features: &s.features,
        })
        .collect();
    let mut ecfg = cfg.eval.ensemble.clone();
    ecfg.svr = clusters.svr.clone();
    let mut model = train_ensemble(&ts, &labels, &ecfg)?;
    model.provenance.config_hash = cfg.hash()?;
    Ok(model)
}

pub fn train(corpus: &Path, clusters: &Path, out: &Path, cfg: &PipelineConfig) -> Result<EnsembleModel> {
    let model = train_sessions(&load_corpus(corpus)?, &ClustersFile::load(clusters)?, cfg)?;
    model.save(out)?;
    Ok(model)
}

/// Features of a session directory: its `features.csv` when present,
/// otherwise computed from the raw recording.
fn session_features(dir: &Path, cfg: &PipelineConfig) -> Result<(FeatureSet, Vec<crate::signal::TrialEvent>)> {
    let events = read_events(&dir.join(EVENTS_FILE))?;
    let path = dir.join(FEATURES_FILE);
    if path.exists() {
        let meta = crate::signal::io::read_session_meta(dir)?;
        return Ok((read_features(&path, &meta.session_id)?, events));
    }
    let session = read_session(dir)?;
    Ok((extract_features(&session, &cfg.features)?, events))
}

/// Trace file name for `mode` when `n_modes` traces are written together.
pub fn trace_file(mode: PredictMode, n_modes: usize) -> String {
    if n_modes == 1 {
        TRACE_FILE.to_string()
    } else {
        format!("trace_{}.csv", mode.name())
    }
}

/// Predicts one session in each mode and writes the traces into `out_dir`.
pub fn predict_session(model_path: &Path, dir: &Path, modes: &[PredictMode], out_dir: &Path, cfg: &PipelineConfig) -> Result<Vec<PredictionTrace>> {
    let model = EnsembleModel::load(model_path)?;
    let (features, events) = session_features(dir, cfg)?;
    let hash = model.provenance.config_hash.clone();
    let mut out = Vec::new();
    for &mode in modes {
        let mut trace = predict(&model, &features, mode)?;
        attach_recorded(&mut trace, &events, cfg.eval.pairing == Pairing::Hold);
        let bytes = stamp_csv(&hash, model.provenance.seed, &trace_csv(&trace)?);
        write_atomic(&out_dir.join(trace_file(mode, modes.len())), &bytes)?;
        out.push(trace);
    }
    Ok(out)
}

pub fn evaluate_sessions(sessions: &[EvalSession], clusters: &ClustersFile, cfg: &PipelineConfig) -> Result<EvalReport> {
    let labels = clusters.labels_for(sessions)?;
    let mut ecfg = cfg.eval.clone();
    ecfg.ensemble.svr = clusters.svr.clone();
    let mut report = loso_evaluate(sessions, &labels, &ecfg)?;
    let records: Vec<SessionRecord> = sessions.iter().map(|s| s.record.clone()).collect();
    report.cross_model = Some(cross_model_matrix(&records, &labels, cfg.eval.k, &clusters.svr)?);
    let labeled: Vec<LabeledSession> = sessions
        .iter()
        .zip(&labels)
        .map(|(s, &label)| LabeledSession {
            label,
            features: &s.features,
        })
        .collect();
    let mut grid = cfg.accuracy.clone();
    grid.k = cfg.eval.k;
    report.accuracy = accuracy_grid(&labeled, &grid)?;
    report.config_hash = cfg.hash()?;
    report.seed = cfg.seed;
    Ok(report)
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

fn to_csv(rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r).map_err(|e| Error::invalid(format!("table serialization: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

/// Summary tables keyed by file name.
pub fn report_tables(r: &EvalReport) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();

    let mut head = vec!["cluster".to_string(), "n_sessions".to_string()];
    for m in &r.modes {
        head.push(format!("{m}_mean"));
        head.push(format!("{m}_std"));
    }
    let mut rows = vec![head];
    for c in &r.per_cluster {
        let mut row = vec![c.cluster.to_string(), c.n_sessions.to_string()];
        for m in &r.modes {
            row.push(fmt(c.rmse[m].mean));
            row.push(fmt(c.rmse[m].std));
        }
        rows.push(row);
    }
    let mut row = vec!["all".to_string(), r.sessions.len().to_string()];
    for m in &r.modes {
        row.push(fmt(r.overall[m].mean));
        row.push(fmt(r.overall[m].std));
    }
    rows.push(row);
    out.push(("rmse_by_cluster.csv".to_string(), to_csv(rows)?));

    let mut rows = vec![vec!["session_id".to_string(), "subject_id".to_string(), "cluster".to_string(), "n_pairs".to_string(), "excluded_trials".to_string()]];
    rows[0].extend(r.modes.iter().map(|m| format!("rmse_{m}")));
    for s in &r.sessions {
        let mut row = vec![
            s.session_id.clone(),
            s.subject_id.clone(),
            (s.cluster + 1).to_string(),
            s.n_pairs.to_string(),
            s.excluded_trials.to_string(),
        ];
        row.extend(r.modes.iter().map(|m| fmt(s.rmse[m])));
        rows.push(row);
    }
    out.push(("rmse_by_session.csv".to_string(), to_csv(rows)?));

    if let Some(x) = &r.cross_model {
        let mut head = vec!["model".to_string()];
        for j in 0..x.k {
            head.push(format!("group_{}_mean", j + 1));
            head.push(format!("group_{}_std", j + 1));
        }
        let mut rows = vec![head];
        for i in 0..x.k {
            let mut row = vec![(i + 1).to_string()];
            for j in 0..x.k {
                row.push(fmt(x.mean[i][j]));
                row.push(fmt(x.std[i][j]));
            }
            rows.push(row);
        }
        out.push(("cross_model.csv".to_string(), to_csv(rows)?));
    }

    if !r.accuracy.is_empty() {
        let mut rows = vec![vec!["band_set", "m", "accuracy_mean", "accuracy_std", "folds_skipped"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>()];
        let k = r.k;
        let mut conf = vec![vec!["band_set".to_string(), "m".to_string(), "cluster".to_string()]];
        conf[0].extend((1..=k).map(|j| format!("assigned_{j}")));
        for c in &r.accuracy {
            rows.push(vec![
                c.band_set.clone(),
                c.m.to_string(),
                fmt(c.accuracy_mean),
                fmt(c.accuracy_std),
                c.folds_skipped.to_string(),
            ]);
            for (i, row) in c.confusion_mean.iter().enumerate() {
                let mut line = vec![c.band_set.clone(), c.m.to_string(), (i + 1).to_string()];
                line.extend(row.iter().map(|v| fmt(*v)));
                conf.push(line);
            }
        }
        out.push(("accuracy.csv".to_string(), to_csv(rows)?));
        out.push(("confusion.csv".to_string(), to_csv(conf)?));
    }
    Ok(out)
}

pub fn eval(corpus: &Path, clusters: &Path, out_dir: &Path, cfg: &PipelineConfig) -> Result<EvalReport> {
    let report = evaluate_sessions(&load_corpus(corpus)?, &ClustersFile::load(clusters)?, cfg)?;
    write_report(out_dir, &report)?;
    Ok(report)
}

pub fn write_report(out_dir: &Path, report: &EvalReport) -> Result<()> {
    write_json(&out_dir.join(REPORT_FILE), report)?;
    for (name, bytes) in report_tables(report)? {
        write_atomic(&out_dir.join(name), &stamp_csv(&report.config_hash, report.seed, &bytes))?;
    }
    Ok(())
}
