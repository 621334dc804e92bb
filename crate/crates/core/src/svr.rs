//! Epsilon-insensitive support vector regression with an RBF kernel.
//!
//! The dual is solved over `2n` variables `(alpha, alpha*)` with
//! sequential minimal optimization, picking the maximal violating pair at
//! every step. Features and targets are standardized before solving and
//! predictions are mapped back to seconds.

use log::debug;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{Scaler, TargetScaler};

const TAU: f64 = 1e-12;

/// Above this many training rows the kernel is evaluated on demand instead
/// of being cached in full.
const FULL_CACHE_ROWS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrGrid {
    pub c: Vec<f64>,
    /// Tube half-widths in seconds.
    pub epsilon: Vec<f64>,
    /// Kernel widths as multiples of `1 / d`.
    pub gamma_scale: Vec<f64>,
}

impl Default for SvrGrid {
    fn default() -> Self {
        SvrGrid {
            c: vec![0.1, 1.0, 10.0, 100.0],
            epsilon: vec![0.01, 0.05, 0.1, 0.2],
            gamma_scale: vec![0.1, 1.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub c: f64,
    /// Tube half-width in seconds.
    pub epsilon: f64,
    /// RBF width in standardized feature units; `None` means `1 / d`.
    pub gamma: Option<f64>,
    pub kkt_tol: f64,
    pub max_updates: usize,
    pub cv_folds: usize,
    pub seed: u64,
    pub grid: SvrGrid,
    /// Grid search runs on at most this many rows (seeded subsample).
    pub grid_max_rows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c: 1.0,
            epsilon: 0.1,
            gamma: None,
            kkt_tol: 1e-3,
            max_updates: 1_000_000,
            cv_folds: 5,
            seed: 0,
            grid: SvrGrid::default(),
            grid_max_rows: 600,
        }
    }
}

impl TrainConfig {
    pub fn gamma_for(&self, d: usize) -> f64 {
        self.gamma.unwrap_or(1.0 / d as f64)
    }

    fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.c) || !(self.epsilon >= 0.0) || !pos(self.kkt_tol) || self.gamma.map_or(false, |g| !pos(g)) {
            return Err(Error::invalid("SVR C, gamma and kkt_tol must be positive, epsilon non-negative"));
        }
        if self.max_updates == 0 {
            return Err(Error::invalid("max_updates must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverStats {
    pub updates: usize,
    pub final_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    /// Standardized support vectors.
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha - alpha*` per support vector, in standardized target units.
    pub dual_coeffs: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    pub epsilon: f64,
    pub scaler: Scaler,
    pub target_scaler: TargetScaler,
    pub solver: SolverStats,
}

/// Per-update record of the solver, for auditing convergence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    /// Dual objective (maximization form) after each update, starting at 0.
    pub objective: Vec<f64>,
    /// Largest box-constraint breach seen after any update.
    pub max_box_violation: f64,
    /// Largest `|sum(alpha - alpha*)|` seen after any update.
    pub max_equality_violation: f64,
}

enum Kernel<'a> {
    Full { k: Vec<f64>, n: usize },
    Lazy { x: &'a [Vec<f64>], gamma: f64 },
}

impl Kernel<'_> {
    fn n(&self) -> usize {
        match self {
            Kernel::Full { n, .. } => *n,
            Kernel::Lazy { x, .. } => x.len(),
        }
    }

    fn row(&self, i: usize, out: &mut Vec<f64>) {
        out.clear();
        match self {
            Kernel::Full { k, n } => out.extend_from_slice(&k[i * n..(i + 1) * n]),
            Kernel::Lazy { x, gamma } => out.extend(x.iter().map(|xj| rbf(&x[i], xj, *gamma))),
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * sq_dist(a, b)).exp()
}

fn sq_dist_matrix(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v = sq_dist(&x[i], &x[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

fn kernel_from_dists(d2: &[f64], n: usize, gamma: f64) -> Kernel<'static> {
    Kernel::Full {
        k: d2.iter().map(|v| (-gamma * v).exp()).collect(),
        n,
    }
}

struct Solution {
    beta: Vec<f64>,
    bias: f64,
    stats: SolverStats,
}

/// SMO on `min 1/2 a'Qa + p'a, y'a = 0, 0 <= a <= C` with
/// `a = (alpha, alpha*)`, `y = (+1, -1)`, `p = (eps - z, eps + z)`.
fn smo(kernel: &Kernel, z: &[f64], c: f64, eps: f64, tol: f64, max_updates: usize, mut trace: Option<&mut SolverTrace>) -> Result<Solution> {
    let n = kernel.n();
    let l = 2 * n;
    let y = |t: usize| if t < n { 1.0 } else { -1.0 };
    let p: Vec<f64> = (0..l).map(|t| if t < n { eps - z[t] } else { eps + z[t - n] }).collect();
    let mut alpha = vec![0.0; l];
    let mut g = p.clone();
    let mut ki = Vec::with_capacity(n);
    let mut kj = Vec::with_capacity(n);
    let mut kdiag = vec![0.0; n];
    for (i, v) in kdiag.iter_mut().enumerate() {
        kernel.row(i, &mut ki);
        *v = ki[i];
    }
    if let Some(t) = trace.as_deref_mut() {
        t.objective.push(0.0);
    }
    let mut updates = 0;
    let violation = loop {
        // maximal violating pair
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax2 = f64::NEG_INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..l {
            if y(t) > 0.0 {
                if alpha[t] < c && -g[t] >= gmax {
                    gmax = -g[t];
                    i = t;
                }
            } else if alpha[t] > 0.0 && g[t] >= gmax {
                gmax = g[t];
                i = t;
            }
        }
        for t in 0..l {
            if y(t) > 0.0 {
                if alpha[t] > 0.0 && g[t] >= gmax2 {
                    gmax2 = g[t];
                    j = t;
                }
            } else if alpha[t] < c && -g[t] >= gmax2 {
                gmax2 = -g[t];
                j = t;
            }
        }
        let gap = gmax + gmax2;
        if i == usize::MAX || j == usize::MAX || gap < tol {
            break gap.max(0.0);
        }
        if updates >= max_updates {
            return Err(Error::numeric(format!(
                "SMO did not converge within {max_updates} updates (violation {gap:.3e})"
            )));
        }
        updates += 1;

        let (ni, nj) = (i % n, j % n);
        kernel.row(ni, &mut ki);
        kernel.row(nj, &mut kj);
        let (yi, yj) = (y(i), y(j));
        let qij = yi * yj * ki[nj];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if yi != yj {
            let quad = (kdiag[ni] + kdiag[nj] + 2.0 * qij).max(TAU);
            let delta = (-g[i] - g[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (kdiag[ni] + kdiag[nj] - 2.0 * qij).max(TAU);
            let delta = (g[i] - g[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        for t in 0..l {
            let yt = y(t);
            let nt = t % n;
            g[t] += yt * (yi * ki[nt] * di + yj * kj[nt] * dj);
        }

        if let Some(tr) = trace.as_deref_mut() {
            let f: f64 = (0..l).map(|t| 0.5 * alpha[t] * (g[t] + p[t])).sum();
            tr.objective.push(-f);
            let bv = alpha.iter().map(|a| (-a).max(a - c).max(0.0)).fold(0.0, f64::max);
            let eq: f64 = (0..l).map(|t| y(t) * alpha[t]).sum();
            tr.max_box_violation = tr.max_box_violation.max(bv);
            tr.max_equality_violation = tr.max_equality_violation.max(eq.abs());
        }
    };

    // offset: mean over free variables, else midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..l {
        let yg = y(t) * g[t];
        if alpha[t] >= c {
            if y(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum_free += yg;
            n_free += 1;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { 0.5 * (ub + lb) };
    debug!("SMO: {updates} updates, violation {violation:.3e}, {n_free} free");
    Ok(Solution {
        beta: (0..n).map(|t| alpha[t] - alpha[t + n]).collect(),
        bias: -rho,
        stats: SolverStats {
            updates,
            final_violation: violation,
        },
    })
}

fn check_inputs(x: &[Vec<f64>], rt: &[f64]) -> Result<usize> {
    if x.len() != rt.len() {
        return Err(Error::invalid(format!("{} feature rows but {} targets", x.len(), rt.len())));
    }
    if x.len() < 2 {
        return Err(Error::invalid(format!("SVR needs at least 2 training rows, got {}", x.len())));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(Error::invalid("feature dimension is zero"));
    }
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(Error::invalid(format!("row {i} has {} features, expected {d}", row.len())));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("SVR feature row {i}"),
                index: j,
            });
        }
    }
    if let Some(i) = rt.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::NonFinite {
            what: "reaction times (must be finite and positive)".into(),
            index: i,
        });
    }
    Ok(d)
}

fn assemble(sol: Solution, z_x: Vec<Vec<f64>>, gamma: f64, c: f64, epsilon: f64, scaler: Scaler, ts: TargetScaler) -> SvrModel {
    let (support_vectors, dual_coeffs): (Vec<_>, Vec<_>) = z_x
        .into_iter()
        .zip(sol.beta)
        .filter(|(_, b)| *b != 0.0)
        .unzip();
    SvrModel {
        support_vectors,
        dual_coeffs,
        bias: sol.bias,
        gamma,
        c,
        epsilon,
        scaler,
        target_scaler: ts,
        solver: sol.stats,
    }
}

fn train_impl(x: &[Vec<f64>], rt: &[f64], cfg: &TrainConfig, trace: Option<&mut SolverTrace>) -> Result<SvrModel> {
    cfg.validate()?;
    let d = check_inputs(x, rt)?;
    let scaler = Scaler::fit(x)?;
    let ts = TargetScaler::fit(rt);
    let z_x: Vec<Vec<f64>> = x.iter().map(|r| scaler.transform(r)).collect();
    let z: Vec<f64> = rt.iter().map(|&v| ts.forward(v)).collect();
    let gamma = cfg.gamma_for(d);
    let kernel = if z_x.len() <= FULL_CACHE_ROWS {
        kernel_from_dists(&sq_dist_matrix(&z_x), z_x.len(), gamma)
    } else {
        Kernel::Lazy { x: &z_x, gamma }
    };
    let sol = smo(&kernel, &z, cfg.c, cfg.epsilon / ts.std, cfg.kkt_tol, cfg.max_updates, trace)?;
    drop(kernel);
    Ok(assemble(sol, z_x, gamma, cfg.c, cfg.epsilon, scaler, ts))
}

/// Trains on rows `x` (features) and reaction times `rt` in seconds.
pub fn train(x: &[Vec<f64>], rt: &[f64], cfg: &TrainConfig) -> Result<SvrModel> {
    train_impl(x, rt, cfg, None)
}

/// As [`train`], also recording the dual objective after every update.
pub fn train_traced(x: &[Vec<f64>], rt: &[f64], cfg: &TrainConfig) -> Result<(SvrModel, SolverTrace)> {
    let mut trace = SolverTrace::default();
    let m = train_impl(x, rt, cfg, Some(&mut trace))?;
    Ok((m, trace))
}

impl SvrModel {
    pub fn dim(&self) -> usize {
        self.scaler.dim()
    }

    /// Decision value in standardized target units for a standardized input.
    pub fn decision_std(&self, z: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coeffs)
            .map(|(sv, b)| b * rbf(z, sv, self.gamma))
            .sum::<f64>()
            + self.bias
    }
}

/// Predicted reaction time in seconds.
pub fn predict(model: &SvrModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::invalid(format!(
            "input has {} features, model expects {}",
            x.len(),
            model.dim()
        )));
    }
    if let Some(j) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "SVR input".into(),
            index: j,
        });
    }
    let v = model.target_scaler.inverse(model.decision_std(&model.scaler.transform(x)));
    if !v.is_finite() {
        return Err(Error::numeric("SVR prediction is not finite"));
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub c: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub cv_rmse: f64,
}

/// Cross-validated grid search; returns `cfg` with the winning `c`,
/// `epsilon` and `gamma`, plus every evaluated point in grid order.
pub fn grid_search(x: &[Vec<f64>], rt: &[f64], cfg: &TrainConfig) -> Result<(TrainConfig, Vec<GridPoint>)> {
    let d = check_inputs(x, rt)?;
    let g = &cfg.grid;
    if g.c.is_empty() || g.epsilon.is_empty() || g.gamma_scale.is_empty() {
        return Err(Error::invalid("every grid axis needs at least one value"));
    }
    if cfg.cv_folds < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.shuffle(&mut rng::stream(cfg.seed, "svr-grid", 0));
    idx.truncate(cfg.grid_max_rows.max(cfg.cv_folds));
    let n = idx.len();
    if n < cfg.cv_folds + 1 {
        return Err(Error::invalid(format!(
            "{n} rows leave a fold of {} folds without training data",
            cfg.cv_folds
        )));
    }

    struct Fold {
        train_x: Vec<Vec<f64>>,
        train_z: Vec<f64>,
        d2: Vec<f64>,
        test_x: Vec<Vec<f64>>,
        test_rt: Vec<f64>,
        ts: TargetScaler,
    }
    let folds: Vec<Fold> = (0..cfg.cv_folds)
        .map(|f| -> Result<Fold> {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..n).partition(|p| p % cfg.cv_folds == f);
            let test: Vec<usize> = test.into_iter().map(|p| idx[p]).collect();
            let train: Vec<usize> = train.into_iter().map(|p| idx[p]).collect();
            let raw: Vec<Vec<f64>> = train.iter().map(|&r| x[r].clone()).collect();
            let scaler = Scaler::fit(&raw)?;
            let rt_train: Vec<f64> = train.iter().map(|&r| rt[r]).collect();
            let ts = TargetScaler::fit(&rt_train);
            let train_x: Vec<Vec<f64>> = raw.iter().map(|r| scaler.transform(r)).collect();
            Ok(Fold {
                d2: sq_dist_matrix(&train_x),
                train_z: rt_train.iter().map(|&v| ts.forward(v)).collect(),
                test_x: test.iter().map(|&r| scaler.transform(&x[r])).collect(),
                test_rt: test.iter().map(|&r| rt[r]).collect(),
                train_x,
                ts,
            })
        })
        .collect::<Result<_>>()?;

    let mut points = Vec::new();
    for &gs in &g.gamma_scale {
        let gamma = gs / d as f64;
        let kernels: Vec<Kernel> = folds
            .iter()
            .map(|f| kernel_from_dists(&f.d2, f.train_x.len(), gamma))
            .collect();
        let combos: Vec<(f64, f64)> = g
            .c
            .iter()
            .flat_map(|&c| g.epsilon.iter().map(move |&e| (c, e)))
            .collect();
        let rmses: Vec<f64> = combos
            .par_iter()
            .map(|&(c, e)| -> Result<f64> {
                let mut se = 0.0;
                let mut count = 0usize;
                for (f, k) in folds.iter().zip(&kernels) {
                    let sol = smo(k, &f.train_z, c, e / f.ts.std, cfg.kkt_tol, cfg.max_updates, None)?;
                    for (tx, tr) in f.test_x.iter().zip(&f.test_rt) {
                        let v: f64 = f
                            .train_x
                            .iter()
                            .zip(&sol.beta)
                            .filter(|(_, b)| **b != 0.0)
                            .map(|(sv, b)| b * rbf(tx, sv, gamma))
                            .sum::<f64>()
                            + sol.bias;
                        let pred = f.ts.inverse(v);
                        se += (pred - tr) * (pred - tr);
                        count += 1;
                    }
                }
                Ok((se / count as f64).sqrt())
            })
            .collect::<Result<_>>()?;
        for ((c, epsilon), cv_rmse) in combos.into_iter().zip(rmses) {
            points.push(GridPoint { c, epsilon, gamma, cv_rmse });
        }
    }
    let best = points
        .iter()
        .min_by(|a, b| {
            a.cv_rmse
                .total_cmp(&b.cv_rmse)
                .then(a.c.total_cmp(&b.c))
                .then(b.epsilon.total_cmp(&a.epsilon))
                .then(a.gamma.total_cmp(&b.gamma))
        })
        .expect("non-empty grid");
    let chosen = TrainConfig {
        c: best.c,
        epsilon: best.epsilon,
        gamma: Some(best.gamma),
        ..cfg.clone()
    };
    Ok((chosen, points))
}
