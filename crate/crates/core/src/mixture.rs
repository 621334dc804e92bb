//! Gaussian mixtures fitted by EM, the per-cluster posterior weighting built
//! on them, and MAP classification accuracy grids.

use std::f64::consts::PI;

use log::{debug, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::rng;
use crate::signal::{FeatureSet, WeightingSpec};
use crate::stats::{mean_std, Scaler};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Weight given to a re-seeded component. Small enough that the re-seed
/// itself lowers the log-likelihood by at most `n * 1e-12`.
const RESEED_WEIGHT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    #[default]
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub variance_floor: f64,
    pub restarts: usize,
    pub covariance: CovarianceKind,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 500,
            rel_tol: 1e-7,
            variance_floor: 1e-6,
            restarts: 3,
            covariance: CovarianceKind::Diagonal,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ComponentRepr {
    weight: f64,
    mean: Vec<f64>,
    variances: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariance: Option<Vec<f64>>,
}

/// One mixture component. Diagonal components carry only `variances`; full
/// ones also carry a row-major covariance whose diagonal equals `variances`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComponentRepr", into = "ComponentRepr")]
pub struct GaussianComponent {
    weight: f64,
    mean: Vec<f64>,
    variances: Vec<f64>,
    covariance: Option<Vec<f64>>,
    // derived
    log_norm: f64,
    inv_var: Vec<f64>,
    chol: Option<Vec<f64>>,
}

impl From<GaussianComponent> for ComponentRepr {
    fn from(c: GaussianComponent) -> Self {
        ComponentRepr {
            weight: c.weight,
            mean: c.mean,
            variances: c.variances,
            covariance: c.covariance,
        }
    }
}

impl TryFrom<ComponentRepr> for GaussianComponent {
    type Error = Error;
    fn try_from(r: ComponentRepr) -> Result<Self> {
        match r.covariance {
            None => GaussianComponent::diagonal(r.weight, r.mean, r.variances),
            Some(cov) => GaussianComponent::full(r.weight, r.mean, cov),
        }
    }
}

impl GaussianComponent {
    pub fn diagonal(weight: f64, mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.len() != variances.len() || mean.is_empty() {
            return Err(Error::invalid("component mean and variances differ in length"));
        }
        if variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::numeric("component variance must be positive and finite"));
        }
        let d = mean.len() as f64;
        let log_norm = -0.5 * (d * LN_2PI + variances.iter().map(|v| v.ln()).sum::<f64>());
        let inv_var = variances.iter().map(|v| 1.0 / v).collect();
        Ok(GaussianComponent {
            weight,
            mean,
            variances,
            covariance: None,
            log_norm,
            inv_var,
            chol: None,
        })
    }

    pub fn full(weight: f64, mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.len() != d * d || d == 0 {
            return Err(Error::invalid("covariance is not d x d"));
        }
        let l = cholesky(&covariance, d)
            .ok_or_else(|| Error::numeric("covariance is not positive definite"))?;
        let log_det_half: f64 = (0..d).map(|i| l[i * d + i].ln()).sum();
        let variances: Vec<f64> = (0..d).map(|i| covariance[i * d + i]).collect();
        Ok(GaussianComponent {
            weight,
            inv_var: variances.iter().map(|v| 1.0 / v).collect(),
            variances,
            log_norm: -0.5 * d as f64 * LN_2PI - log_det_half,
            mean,
            covariance: Some(covariance),
            chol: Some(l),
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn covariance(&self) -> Option<&[f64]> {
        self.covariance.as_deref()
    }

    /// Log of the component density (without the mixing weight).
    pub fn log_pdf(&self, y: &[f64]) -> f64 {
        match &self.chol {
            None => {
                let q: f64 = y
                    .iter()
                    .zip(&self.mean)
                    .zip(&self.inv_var)
                    .map(|((a, m), iv)| (a - m) * (a - m) * iv)
                    .sum();
                self.log_norm - 0.5 * q
            }
            Some(l) => {
                let d = self.mean.len();
                let mut z = vec![0.0; d];
                for i in 0..d {
                    let mut s = y[i] - self.mean[i];
                    for j in 0..i {
                        s -= l[i * d + j] * z[j];
                    }
                    z[i] = s / l[i * d + i];
                }
                self.log_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
            }
        }
    }
}

fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub reseeds: usize,
    /// Per-iteration log-likelihood of every restart, in restart order.
    #[serde(skip)]
    pub traces: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub components: Vec<GaussianComponent>,
    pub dim: usize,
    pub diagnostics: FitDiagnostics,
}

impl GmmModel {
    pub fn m(&self) -> usize {
        self.components.len()
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// `log sum_l w_l N(y; mu_l, Sigma_l)`.
pub fn log_density(model: &GmmModel, y: &[f64]) -> Result<f64> {
    if y.len() != model.dim {
        return Err(Error::invalid(format!(
            "feature vector has {} entries, model expects {}",
            y.len(),
            model.dim
        )));
    }
    ensure_finite("feature vector", y)?;
    Ok(log_density_unchecked(model, y, &mut Vec::with_capacity(model.m())))
}

fn log_density_unchecked(model: &GmmModel, y: &[f64], buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(model.components.iter().map(|c| c.weight.ln() + c.log_pdf(y)));
    log_sum_exp(buf)
}

/// Fits an `m`-component mixture; the best of `cfg.restarts` seeded runs wins.
pub fn fit_em(data: &[Vec<f64>], m: usize, seed: u64, cfg: &EmConfig) -> Result<GmmModel> {
    let n = data.len();
    if m == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    if n < m {
        return Err(Error::invalid(format!("{n} rows cannot support {m} components")));
    }
    let d = data[0].len();
    if d == 0 {
        return Err(Error::invalid("feature dimension is zero"));
    }
    for (i, row) in data.iter().enumerate() {
        if row.len() != d {
            return Err(Error::invalid(format!("row {i} has {} features, expected {d}", row.len())));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("EM data row {i}"),
                index: j,
            });
        }
    }
    if !(cfg.variance_floor > 0.0) {
        return Err(Error::invalid("variance floor must be positive"));
    }

    let mut best: Option<(Vec<GaussianComponent>, f64, usize, bool, usize)> = None;
    let mut traces = Vec::new();
    for r in 0..cfg.restarts.max(1) {
        let mut rng = rng::stream(seed, "em-restart", r as u64);
        let (comps, trace, converged, reseeds) = run_em(data, m, cfg, &mut rng)?;
        let ll = *trace.last().expect("at least one E-step");
        let iters = trace.len();
        traces.push(trace);
        if best.as_ref().map_or(true, |b| ll > b.1) {
            best = Some((comps, ll, iters, converged, reseeds));
        }
    }
    let (components, log_likelihood, iterations, converged, reseeds) = best.expect("one restart");
    Ok(GmmModel {
        components,
        dim: d,
        diagnostics: FitDiagnostics {
            log_likelihood,
            iterations,
            converged,
            reseeds,
            traces,
        },
    })
}

fn kmeanspp(data: &[Vec<f64>], m: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = data.len();
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = data.iter().map(|x| dist2(x, &data[chosen[0]])).collect();
    while chosen.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            // every point coincides with a chosen centre
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen.push(pick);
        for (v, x) in d2.iter_mut().zip(data) {
            *v = v.min(dist2(x, &data[pick]));
        }
    }
    chosen
}

type EmRun = (Vec<GaussianComponent>, Vec<f64>, bool, usize);

fn run_em(data: &[Vec<f64>], m: usize, cfg: &EmConfig, rng: &mut impl Rng) -> Result<EmRun> {
    let n = data.len();
    let d = data[0].len();
    let floor = cfg.variance_floor;
    let global_mean: Vec<f64> = (0..d).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let global_var: Vec<f64> = (0..d)
        .map(|j| {
            let v = data.iter().map(|r| (r[j] - global_mean[j]).powi(2)).sum::<f64>() / n as f64;
            v.max(floor)
        })
        .collect();
    let make = |w: f64, mean: Vec<f64>| -> Result<GaussianComponent> {
        match cfg.covariance {
            CovarianceKind::Diagonal => GaussianComponent::diagonal(w, mean, global_var.clone()),
            CovarianceKind::Full => {
                let mut cov = vec![0.0; d * d];
                for j in 0..d {
                    cov[j * d + j] = global_var[j];
                }
                GaussianComponent::full(w, mean, cov)
            }
        }
    };
    let mut comps: Vec<GaussianComponent> = kmeanspp(data, m, rng)
        .into_iter()
        .map(|i| make(1.0 / m as f64, data[i].clone()))
        .collect::<Result<_>>()?;

    let mut resp = vec![0.0; n * m];
    let mut point_ll = vec![0.0; n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut reseeds = 0;
    let mut buf = vec![0.0; m];
    loop {
        // E-step
        let mut ll = 0.0;
        for (i, x) in data.iter().enumerate() {
            for (b, c) in buf.iter_mut().zip(&comps) {
                *b = c.weight.ln() + c.log_pdf(x);
            }
            let lse = log_sum_exp(&buf);
            if !lse.is_finite() {
                return Err(Error::numeric(format!("log-likelihood of row {i} is not finite")));
            }
            point_ll[i] = lse;
            ll += lse;
            let row = &mut resp[i * m..(i + 1) * m];
            let mut s = 0.0;
            for (r, b) in row.iter_mut().zip(&buf) {
                *r = (b - lse).exp();
                s += *r;
            }
            row.iter_mut().for_each(|r| *r /= s);
        }
        let prev = trace.last().copied();
        trace.push(ll);
        if let Some(p) = prev {
            if (ll - p).abs() <= cfg.rel_tol * p.abs() {
                converged = true;
                break;
            }
        }
        if trace.len() > cfg.max_iter {
            break;
        }

        // M-step
        let mut next = Vec::with_capacity(m);
        let mut empty = Vec::new();
        for k in 0..m {
            let nk: f64 = (0..n).map(|i| resp[i * m + k]).sum();
            if nk <= 1e-12 * n as f64 {
                empty.push(k);
                next.push(comps[k].clone());
                continue;
            }
            let mut mu = vec![0.0; d];
            for (i, x) in data.iter().enumerate() {
                let r = resp[i * m + k];
                for (a, v) in mu.iter_mut().zip(x) {
                    *a += r * v;
                }
            }
            mu.iter_mut().for_each(|a| *a /= nk);
            let comp = match cfg.covariance {
                CovarianceKind::Diagonal => {
                    let mut var = vec![0.0; d];
                    for (i, x) in data.iter().enumerate() {
                        let r = resp[i * m + k];
                        for ((s, v), mu_j) in var.iter_mut().zip(x).zip(&mu) {
                            *s += r * (v - mu_j) * (v - mu_j);
                        }
                    }
                    var.iter_mut().for_each(|s| *s = (*s / nk).max(floor));
                    GaussianComponent::diagonal(nk / n as f64, mu, var)?
                }
                CovarianceKind::Full => {
                    let mut cov = vec![0.0; d * d];
                    for (i, x) in data.iter().enumerate() {
                        let r = resp[i * m + k];
                        for a in 0..d {
                            let da = x[a] - mu[a];
                            for b in 0..=a {
                                cov[a * d + b] += r * da * (x[b] - mu[b]);
                            }
                        }
                    }
                    for a in 0..d {
                        for b in 0..=a {
                            let v = cov[a * d + b] / nk;
                            cov[a * d + b] = v;
                            cov[b * d + a] = v;
                        }
                        cov[a * d + a] += floor;
                    }
                    GaussianComponent::full(nk / n as f64, mu, cov)?
                }
            };
            next.push(comp);
        }
        if !empty.is_empty() {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| point_ll[a].total_cmp(&point_ll[b]).then(a.cmp(&b)));
            let live: f64 = (0..m).filter(|k| !empty.contains(k)).map(|k| next[k].weight).sum();
            let scale = (1.0 - RESEED_WEIGHT * empty.len() as f64) / live;
            for (k, c) in next.iter_mut().enumerate() {
                c.weight = if empty.contains(&k) { RESEED_WEIGHT } else { c.weight * scale };
            }
            for (slot, &k) in empty.iter().enumerate() {
                let worst = order[slot.min(n - 1)];
                debug!("EM: component {k} lost its mass; re-seeding at row {worst}");
                next[k] = make(RESEED_WEIGHT, data[worst].clone())?;
                reseeds += 1;
            }
        }
        comps = next;
    }
    Ok((comps, trace, converged, reseeds))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    #[default]
    Proportional,
    Equal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightModelConfig {
    pub m: usize,
    pub priors: PriorMode,
    pub em: EmConfig,
}

impl Default for WeightModelConfig {
    fn default() -> Self {
        WeightModelConfig {
            m: 3,
            priors: PriorMode::Proportional,
            em: EmConfig::default(),
        }
    }
}

/// The map from a raw weighting vector to per-cluster posterior weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterWeightModel {
    pub gmms: Vec<GmmModel>,
    pub cluster_priors: Vec<f64>,
    pub scaler: Scaler,
    pub features: WeightingSpec,
}

/// Posterior weights plus whether they fell back to the priors.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub weights: Vec<f64>,
    pub fallback: bool,
}

impl ClusterWeightModel {
    /// Fits one mixture per cluster on standardized rows. `groups[i]` holds
    /// the raw training vectors of cluster `i`.
    pub fn fit(groups: &[Vec<Vec<f64>>], features: WeightingSpec, cfg: &WeightModelConfig, seed: u64) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::invalid("no clusters to model"));
        }
        if let Some(i) = groups.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("cluster {} has no training frames", i + 1)));
        }
        let pooled: Vec<&Vec<f64>> = groups.iter().flatten().collect();
        let scaler = Scaler::fit(&pooled)?;
        let gmms = groups
            .par_iter()
            .enumerate()
            .map(|(i, rows)| {
                let z: Vec<Vec<f64>> = rows.iter().map(|r| scaler.transform(r)).collect();
                let mut m = cfg.m;
                if z.len() < m {
                    m = (z.len() / 5).max(1);
                    warn!(
                        "cluster {} has {} frames, fewer than m = {}; using m = {m}",
                        i + 1,
                        z.len(),
                        cfg.m
                    );
                }
                fit_em(&z, m, rng::sub_seed(seed, "gmm", i as u64), &cfg.em)
            })
            .collect::<Result<Vec<_>>>()?;
        let total = pooled.len() as f64;
        let cluster_priors = match cfg.priors {
            PriorMode::Proportional => groups.iter().map(|g| g.len() as f64 / total).collect(),
            PriorMode::Equal => vec![1.0 / groups.len() as f64; groups.len()],
        };
        Ok(ClusterWeightModel {
            gmms,
            cluster_priors,
            scaler,
            features,
        })
    }

    pub fn k(&self) -> usize {
        self.gmms.len()
    }

    pub fn posterior(&self, y: &[f64]) -> Result<Posterior> {
        if y.len() != self.scaler.dim() {
            return Err(Error::invalid(format!(
                "weighting vector has {} entries, model expects {}",
                y.len(),
                self.scaler.dim()
            )));
        }
        ensure_finite("weighting vector", y)?;
        let z = self.scaler.transform(y);
        let mut buf = Vec::new();
        let logs: Vec<f64> = self
            .gmms
            .iter()
            .zip(&self.cluster_priors)
            .map(|(g, p)| p.ln() + log_density_unchecked(g, &z, &mut buf))
            .collect();
        let lse = log_sum_exp(&logs);
        if !lse.is_finite() {
            warn!("all cluster densities underflowed; falling back to priors");
            return Ok(Posterior {
                weights: self.cluster_priors.clone(),
                fallback: true,
            });
        }
        let mut w: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        Ok(Posterior {
            weights: w,
            fallback: false,
        })
    }
}

pub fn cluster_weights(model: &ClusterWeightModel, y: &[f64]) -> Result<Vec<f64>> {
    Ok(model.posterior(y)?.weights)
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(w: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in w.iter().enumerate() {
        if *v > w[best] {
            best = i;
        }
    }
    best
}

/// Zero-based index of the most probable cluster.
pub fn map_classify(model: &ClusterWeightModel, y: &[f64]) -> Result<usize> {
    Ok(argmax(&cluster_weights(model, y)?))
}

/// A featurized session with its cluster label (zero-based).
#[derive(Debug, Clone, Copy)]
pub struct LabeledSession<'a> {
    pub label: usize,
    pub features: &'a FeatureSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub k: usize,
    pub m_values: Vec<usize>,
    pub band_sets: Vec<WeightingSpec>,
    /// GMMs train on frames with `t_s` up to this second.
    pub train_until_s: u32,
    /// Held-out frames are scored every `test_stride` seconds.
    pub test_stride: usize,
    pub weights: WeightModelConfig,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            k: 3,
            m_values: (1..=15).collect(),
            band_sets: vec![WeightingSpec::default()],
            train_until_s: 300,
            test_stride: 1,
            weights: WeightModelConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub m: usize,
    pub band_set: String,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    /// Row `i`: mean fraction of cluster-`i` frames assigned to each model.
    pub confusion_mean: Vec<Vec<f64>>,
    pub confusion_std: Vec<Vec<f64>>,
    pub sessions_per_cluster: Vec<usize>,
    pub folds_skipped: usize,
}

/// Leave-one-session-out MAP accuracy for every `(band set, m)` pair.
pub fn accuracy_grid(sessions: &[LabeledSession], cfg: &GridConfig) -> Result<Vec<GridCell>> {
    if cfg.k == 0 || cfg.m_values.is_empty() || cfg.band_sets.is_empty() {
        return Err(Error::invalid("accuracy grid needs k >= 1, m values and band sets"));
    }
    if let Some(s) = sessions.iter().find(|s| s.label >= cfg.k) {
        return Err(Error::invalid(format!(
            "session {} has label {} outside 1..={}",
            s.features.session_id,
            s.label + 1,
            cfg.k
        )));
    }
    let stride = cfg.test_stride.max(1);
    let mut cells = Vec::new();
    for spec in &cfg.band_sets {
        let train_rows: Vec<Vec<Vec<f64>>> = sessions
            .iter()
            .map(|s| {
                s.features
                    .frames
                    .iter()
                    .filter(|f| f.t_s <= cfg.train_until_s)
                    .map(|f| spec.vector(f))
                    .collect()
            })
            .collect::<Result<_>>()?;
        let test_rows: Vec<Vec<Vec<f64>>> = sessions
            .iter()
            .map(|s| s.features.frames.iter().step_by(stride).map(|f| spec.vector(f)).collect())
            .collect::<Result<_>>()?;
        for &m in &cfg.m_values {
            let folds: Vec<Option<Vec<f64>>> = (0..sessions.len())
                .into_par_iter()
                .map(|h| -> Result<Option<Vec<f64>>> {
                    let mut groups = vec![Vec::new(); cfg.k];
                    for (j, s) in sessions.iter().enumerate() {
                        if j != h {
                            groups[s.label].extend(train_rows[j].iter().cloned());
                        }
                    }
                    if groups.iter().any(Vec::is_empty) {
                        warn!(
                            "skipping fold {}: a cluster has no training session",
                            sessions[h].features.session_id
                        );
                        return Ok(None);
                    }
                    let wcfg = WeightModelConfig { m, ..cfg.weights.clone() };
                    let model = ClusterWeightModel::fit(&groups, spec.clone(), &wcfg, cfg.seed)?;
                    let mut counts = vec![0.0; cfg.k];
                    for y in &test_rows[h] {
                        counts[map_classify(&model, y)?] += 1.0;
                    }
                    let total = test_rows[h].len().max(1) as f64;
                    Ok(Some(counts.into_iter().map(|c| c / total).collect()))
                })
                .collect::<Result<_>>()?;
            let mut per_cluster: Vec<Vec<Vec<f64>>> = vec![Vec::new(); cfg.k];
            let mut acc = Vec::new();
            let mut skipped = 0;
            for (s, f) in sessions.iter().zip(folds) {
                match f {
                    Some(frac) => {
                        acc.push(frac[s.label]);
                        per_cluster[s.label].push(frac);
                    }
                    None => skipped += 1,
                }
            }
            let (accuracy_mean, accuracy_std) = mean_std(&acc);
            let column_stats = |rows: &Vec<Vec<f64>>| -> (Vec<f64>, Vec<f64>) {
                (0..cfg.k)
                    .map(|c| {
                        let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
                        mean_std(&col)
                    })
                    .unzip()
            };
            let (confusion_mean, confusion_std) = per_cluster.iter().map(column_stats).unzip();
            cells.push(GridCell {
                m,
                band_set: spec.label(),
                accuracy_mean,
                accuracy_std,
                confusion_mean,
                confusion_std,
                sessions_per_cluster: per_cluster.iter().map(Vec::len).collect(),
                folds_skipped: skipped,
            });
        }
    }
    Ok(cells)
}

/// Reference density `sum_l w_l N(y)` by direct summation, for tests.
#[doc(hidden)]
pub fn naive_density(model: &GmmModel, y: &[f64]) -> f64 {
    model
        .components
        .iter()
        .map(|c| {
            let d = y.len() as f64;
            match c.covariance() {
                None => {
                    let det: f64 = c.variances().iter().product();
                    let q: f64 = y
                        .iter()
                        .zip(c.mean())
                        .zip(c.variances())
                        .map(|((a, m), v)| (a - m) * (a - m) / v)
                        .sum();
                    c.weight() * (-0.5 * q).exp() / ((2.0 * PI).powf(d / 2.0) * det.sqrt())
                }
                Some(_) => c.weight() * c.log_pdf(y).exp(),
            }
        })
        .sum()
}
