//! Recursive clustering of sessions by their EEG-RT relationship.
//!
//! Sessions start from task-performance labels (RT ratio buckets). Each
//! round trains one SVR per cluster, scores every session against every
//! cluster's model and moves sessions to the model that fits them best,
//! until the labels stop changing.

use std::collections::HashMap;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{FeatureSet, TrialEvent};
use crate::stats::mean;
use crate::svr::{self, SvrModel, TrainConfig};

pub const MIN_TRIALS: usize = 10;

/// Session-level regression data: the Oz spectrum at each trial paired with
/// that trial's RT, plus every recorded RT for task-performance labelling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub x: Vec<Vec<f64>>,
    pub rt: Vec<f64>,
    pub all_rts: Vec<f64>,
    /// Trials dropped because they precede the first feature frame.
    pub excluded_trials: usize,
}

impl SessionRecord {
    /// Pairs each trial with the frame ending at `floor(deviation_onset_s)`.
    pub fn from_features(features: &FeatureSet, events: &[TrialEvent]) -> Result<Self> {
        Self::build(&features.session_id, |t| features.frame_at(t).map(|f| f.oz_spectrum.as_slice()), events)
    }

    /// Same pairing from bare `(t_s, spectrum)` rows in time order.
    pub fn from_spectra(session_id: &str, spectra: &[(u32, Vec<f64>)], events: &[TrialEvent]) -> Result<Self> {
        let first = spectra.first().map_or(0, |r| r.0);
        Self::build(
            session_id,
            |t| {
                let i = t.checked_sub(first)? as usize;
                spectra.get(i).filter(|r| r.0 == t).map(|r| r.1.as_slice())
            },
            events,
        )
    }

    fn build<'a>(session_id: &str, lookup: impl Fn(u32) -> Option<&'a [f64]>, events: &[TrialEvent]) -> Result<Self> {
        let mut x = Vec::new();
        let mut rt = Vec::new();
        let mut excluded = 0;
        for e in events {
            match lookup(e.deviation_onset_s.floor() as u32) {
                Some(row) if e.deviation_onset_s >= 0.0 => {
                    x.push(row.to_vec());
                    rt.push(e.rt_s);
                }
                _ => excluded += 1,
            }
        }
        let rec = SessionRecord {
            session_id: session_id.to_string(),
            x,
            rt,
            all_rts: events.iter().map(|e| e.rt_s).collect(),
            excluded_trials: excluded,
        };
        if rec.all_rts.len() < MIN_TRIALS || rec.rt.is_empty() {
            return Err(Error::invalid(format!(
                "session {} has {} trials ({} inside feature frames); at least {MIN_TRIALS} are required",
                rec.session_id,
                rec.all_rts.len(),
                rec.rt.len()
            )));
        }
        Ok(rec)
    }
}

/// Each RT divided by the mean of the session's fastest 10% (rounded up).
pub fn rt_ratio(rts: &[f64]) -> Result<Vec<f64>> {
    if rts.len() < MIN_TRIALS {
        return Err(Error::invalid(format!(
            "RT ratio needs at least {MIN_TRIALS} trials, got {}",
            rts.len()
        )));
    }
    if let Some(i) = rts.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::NonFinite {
            what: "reaction times (must be finite and positive)".into(),
            index: i,
        });
    }
    let mut sorted = rts.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n_fast = (rts.len() as f64 * 0.1).ceil() as usize;
    let baseline = mean(&sorted[..n_fast]);
    Ok(rts.iter().map(|v| v / baseline).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionLabelRule {
    /// Most common per-trial bucket; ties go to the better bucket.
    #[default]
    Modal,
    /// Bucket of the mean ratio.
    MeanRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Upper ratio bounds of every bucket but the last (`k - 1` values).
    pub thresholds: Vec<f64>,
    pub rule: SessionLabelRule,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            thresholds: vec![2.0, 3.0],
            rule: SessionLabelRule::Modal,
        }
    }
}

fn bucket(ratio: f64, thresholds: &[f64]) -> usize {
    thresholds.iter().take_while(|&&t| ratio > t).count()
}

/// Zero-based performance bucket of every session.
pub fn initial_labels<R: AsRef<[f64]>>(sessions_rts: &[R], cfg: &InitConfig) -> Result<Vec<usize>> {
    if cfg.thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("ratio thresholds must be strictly increasing"));
    }
    let k = cfg.thresholds.len() + 1;
    sessions_rts
        .iter()
        .map(|rts| {
            let ratios = rt_ratio(rts.as_ref())?;
            Ok(match cfg.rule {
                SessionLabelRule::Modal => {
                    let mut counts = vec![0usize; k];
                    for r in &ratios {
                        counts[bucket(*r, &cfg.thresholds)] += 1;
                    }
                    let mut best = 0;
                    for (i, c) in counts.iter().enumerate() {
                        if *c > counts[best] {
                            best = i;
                        }
                    }
                    best
                }
                SessionLabelRule::MeanRatio => bucket(mean(&ratios), &cfg.thresholds),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub k: usize,
    pub max_iter: usize,
    pub svr: TrainConfig,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 3,
            max_iter: 50,
            svr: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Fixpoint,
    Cycle,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub session_ids: Vec<String>,
    /// Final zero-based label per session.
    pub labels: Vec<usize>,
    pub iterations: usize,
    /// Every labelling visited, starting with the initial one.
    pub history: Vec<Vec<usize>>,
    /// RMSE of each cluster's model on each session, for the final labelling.
    pub per_session_rmse: Vec<Vec<f64>>,
    /// Summed own-cluster RMSE of each evaluated labelling, in history order.
    pub total_rmse: Vec<f64>,
    pub converged: bool,
    pub stop: StopReason,
    pub repairs: usize,
}

impl ClusteringResult {
    pub fn label_of(&self, session_id: &str) -> Option<usize> {
        self.session_ids.iter().position(|s| s == session_id).map(|i| self.labels[i])
    }
}

pub fn session_rmse(model: &SvrModel, s: &SessionRecord) -> Result<f64> {
    let mut se = 0.0;
    for (x, y) in s.x.iter().zip(&s.rt) {
        let p = svr::predict(model, x)?;
        se += (p - y) * (p - y);
    }
    Ok((se / s.rt.len() as f64).sqrt())
}

/// Trains one SVR on the pooled trials of each cluster.
pub fn train_cluster_models(sessions: &[SessionRecord], labels: &[usize], k: usize, cfg: &TrainConfig) -> Result<Vec<SvrModel>> {
    (0..k)
        .into_par_iter()
        .map(|c| {
            let (x, rt): (Vec<Vec<f64>>, Vec<f64>) = sessions
                .iter()
                .zip(labels)
                .filter(|(_, l)| **l == c)
                .flat_map(|(s, _)| s.x.iter().cloned().zip(s.rt.iter().copied()))
                .unzip();
            svr::train(&x, &rt, cfg)
        })
        .collect()
}

fn rmse_matrix(sessions: &[SessionRecord], models: &[SvrModel]) -> Result<Vec<Vec<f64>>> {
    sessions
        .par_iter()
        .map(|s| models.iter().map(|m| session_rmse(m, s)).collect())
        .collect()
}

/// Moves sessions from the largest clusters into empty ones, picking the
/// session whose mean RT is most extreme in the empty cluster's direction.
fn fill_empty_initial(sessions: &[SessionRecord], labels: &mut [usize], k: usize) -> usize {
    let mut moved = 0;
    for c in 0..k {
        if labels.iter().any(|&l| l == c) {
            continue;
        }
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let donor = (0..k).max_by_key(|&d| (counts[d], std::cmp::Reverse(d))).expect("k >= 1");
        if counts[donor] < 2 {
            continue;
        }
        let members = (0..sessions.len()).filter(|&j| labels[j] == donor);
        let key = |j: &usize| mean(&sessions[*j].all_rts);
        let pick = if c > donor {
            members.max_by(|a, b| key(a).total_cmp(&key(b)))
        } else {
            members.min_by(|a, b| key(a).total_cmp(&key(b)))
        };
        if let Some(j) = pick {
            warn!("initial cluster {} is empty; moving session {} into it", c + 1, sessions[j].session_id);
            labels[j] = c;
            moved += 1;
        }
    }
    moved
}

pub fn recursive_cluster(sessions: &[SessionRecord], initial: &[usize], cfg: &ClusterConfig) -> Result<ClusteringResult> {
    let k = cfg.k;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if sessions.len() != initial.len() {
        return Err(Error::invalid("one initial label per session is required"));
    }
    if sessions.len() < k {
        return Err(Error::invalid(format!("{} sessions cannot fill {k} clusters", sessions.len())));
    }
    if let Some(l) = initial.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!("initial label {} outside 1..={k}", l + 1)));
    }
    let mut labels = initial.to_vec();
    let mut repairs = fill_empty_initial(sessions, &mut labels, k);
    if (0..k).any(|c| !labels.contains(&c)) {
        return Err(Error::invalid("cannot populate every cluster"));
    }

    let mut history = vec![labels.clone()];
    let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut evaluated: Vec<(f64, Vec<Vec<f64>>)> = Vec::new();
    let mut iterations = 0;
    let stop = loop {
        seen.insert(labels.clone(), evaluated.len());
        iterations += 1;
        let models = train_cluster_models(sessions, &labels, k, &cfg.svr)?;
        let rmse = rmse_matrix(sessions, &models)?;
        let total: f64 = rmse.iter().zip(&labels).map(|(r, &l)| r[l]).sum();

        let mut next: Vec<usize> = rmse
            .iter()
            .zip(&labels)
            .map(|(row, &cur)| {
                let best = row.iter().copied().fold(f64::INFINITY, f64::min);
                if row[cur] <= best + 1e-12 {
                    cur
                } else {
                    row.iter().position(|&v| v == best).expect("minimum present")
                }
            })
            .collect();
        for (j, (&n, &c)) in next.iter().zip(&labels).enumerate() {
            debug_assert!(rmse[j][n] <= rmse[j][c], "relabel increased own RMSE");
        }
        for c in 0..k {
            if next.contains(&c) {
                continue;
            }
            // keep the leaving session that loses least by staying
            let keep = (0..sessions.len())
                .filter(|&j| labels[j] == c)
                .min_by(|&a, &b| {
                    let ma = rmse[a][c] - rmse[a][next[a]];
                    let mb = rmse[b][c] - rmse[b][next[b]];
                    ma.total_cmp(&mb).then(a.cmp(&b))
                })
                .expect("cluster was populated");
            warn!("relabeling would empty cluster {}; keeping session {}", c + 1, sessions[keep].session_id);
            next[keep] = c;
            repairs += 1;
        }
        evaluated.push((total, rmse));
        info!("clustering iteration {iterations}: total RMSE {total:.4}");

        history.push(next.clone());
        if next == labels {
            break StopReason::Fixpoint;
        }
        if seen.contains_key(&next) {
            break StopReason::Cycle;
        }
        if iterations >= cfg.max_iter {
            break StopReason::MaxIter;
        }
        labels = next;
    };

    // best evaluated labelling; ties favour the latest
    let visited: Vec<(&Vec<usize>, usize)> = {
        let mut v: Vec<_> = seen.iter().map(|(l, &i)| (l, i)).collect();
        v.sort_by_key(|x| x.1);
        v
    };
    let (best_labels, best_idx) = visited
        .iter()
        .min_by(|a, b| evaluated[a.1].0.total_cmp(&evaluated[b.1].0).then(b.1.cmp(&a.1)))
        .map(|(l, i)| ((*l).clone(), *i))
        .expect("at least one evaluation");
    let total_rmse = evaluated.iter().map(|e| e.0).collect();
    Ok(ClusteringResult {
        session_ids: sessions.iter().map(|s| s.session_id.clone()).collect(),
        labels: best_labels,
        iterations,
        per_session_rmse: evaluated[best_idx].1.clone(),
        total_rmse,
        converged: stop == StopReason::Fixpoint,
        history,
        stop,
        repairs,
    })
}

/// Fraction of sessions whose label matches `truth` under the best
/// one-to-one renaming of clusters (exhaustive over permutations).
pub fn matched_agreement(labels: &[usize], truth: &[usize], k: usize) -> f64 {
    assert_eq!(labels.len(), truth.len());
    let mut counts = vec![vec![0usize; k]; k];
    for (&l, &t) in labels.iter().zip(truth) {
        counts[l][t] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let s: usize = (0..k).map(|i| counts[i][p[i]]).sum();
        best = best.max(s);
    });
    best as f64 / labels.len().max(1) as f64
}

fn permute(p: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
    if i == p.len() {
        f(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, f);
        p.swap(i, j);
    }
}
