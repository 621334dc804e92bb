//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line each and exits nonzero if any fails.
//!
//! `cargo test -p rtens-core --test acceptance` runs all of them; extra
//! arguments such as `c1 c7` select a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rtens_core::clustering::{initial_labels, matched_agreement, recursive_cluster, ClusterConfig, InitConfig, SessionRecord};
use rtens_core::ensemble::PredictMode;
use rtens_core::harness::pipeline::{self, PipelineConfig};
use rtens_core::harness::{cross_model_matrix, fold_violations, loso_evaluate, EvalConfig, EvalReport, EvalSession, FoldUnit};
use rtens_core::mixture::{fit_em, EmConfig};
use rtens_core::provenance::read_stamp;
use rtens_core::signal::{
    extract_features, plv, regression_spectra, sliding_log_spectrum, Band, FeatureConfig, NamedBand, PlvParams, SpectrumConfig, Taper,
};
use rtens_core::stats::{mean, median};
use rtens_core::svr::{self, TrainConfig};
use rtens_core::synthgen::{corpus_plan, generate_channels, generate_session, GeneratorConfig, GroundTruth};

const FS: f64 = 500.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Fails the criterion when `elapsed` exceeds its budget.
fn within(o: Outcome, elapsed: Duration, limit_s: f64) -> Outcome {
    let t = elapsed.as_secs_f64();
    let ok = t <= limit_s;
    outcome(o.pass && ok, format!("{}; {t:.1} s (limit {limit_s} s)", o.detail))
}

// ---------------------------------------------------------------- C1

/// Dense dual solve of epsilon-SVR by accelerated projected gradient.
/// Variables are `(alpha, alpha_star)` in `[0, C]^2n` with
/// `sum(alpha) = sum(alpha_star)`.
struct QpOracle {
    beta: Vec<f64>,
    bias: f64,
}

fn project(v: &[f64], n: usize, c: f64) -> Vec<f64> {
    let sign = |i: usize| if i < n { 1.0 } else { -1.0 };
    let at = |lam: f64| -> (Vec<f64>, f64) {
        let x: Vec<f64> = v.iter().enumerate().map(|(i, vi)| (vi - lam * sign(i)).clamp(0.0, c)).collect();
        let s = x.iter().enumerate().map(|(i, xi)| sign(i) * xi).sum();
        (x, s)
    };
    let bound = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid).1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi)).0
}

fn qp_oracle(k: &[Vec<f64>], z: &[f64], c: f64, eps: f64) -> QpOracle {
    let n = z.len();
    // gradient of 0.5 b'Kb + eps sum(a + a*) - z'b with b = a - a*
    let grad = |x: &[f64]| -> Vec<f64> {
        let b: Vec<f64> = (0..n).map(|i| x[i] - x[i + n]).collect();
        let kb: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i][j] * b[j]).sum()).collect();
        let mut g = vec![0.0; 2 * n];
        for i in 0..n {
            g[i] = kb[i] + eps - z[i];
            g[i + n] = -kb[i] + eps + z[i];
        }
        g
    };
    let lipschitz = 2.0 * k.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / lipschitz;
    let mut x = vec![0.0; 2 * n];
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..400_000 {
        let g = grad(&y);
        let v: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        let next = project(&v, n, c);
        let change = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        // restart momentum when it points uphill
        let uphill: f64 = g.iter().zip(next.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
        if uphill > 0.0 {
            y = next.clone();
            t = 1.0;
        } else {
            y = next.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / t_next * (a - b)).collect();
            t = t_next;
        }
        x = next;
        if change < 1e-15 {
            break;
        }
    }
    let beta: Vec<f64> = (0..n).map(|i| x[i] - x[i + n]).collect();
    let kb: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i][j] * beta[j]).sum()).collect();
    let tol = 1e-7 * c;
    let mut free = Vec::new();
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..n {
        let (a, s) = (x[i], x[i + n]);
        let up = z[i] - eps - kb[i];
        let down = z[i] + eps - kb[i];
        if a > tol && a < c - tol {
            free.push(up);
        } else if s > tol && s < c - tol {
            free.push(down);
        } else if a >= c - tol {
            hi = hi.min(up);
        } else if s >= c - tol {
            lo = lo.max(down);
        } else {
            lo = lo.max(up);
            hi = hi.min(down);
        }
    }
    let bias = if free.is_empty() { 0.5 * (lo + hi) } else { mean(&free) };
    QpOracle { beta, bias }
}

fn standardize_cols(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mu: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| {
            let s = (x.iter().map(|r| (r[j] - mu[j]).powi(2)).sum::<f64>() / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mu, sd)
}

fn c1() -> Outcome {
    let mut worst = 0.0f64;
    for inst in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst);
        let n = rng.gen_range(5..=30);
        let d = rng.gen_range(1..=8);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let rt: Vec<f64> = x
            .iter()
            .map(|r| 1.0 + 0.3 * r[0].sin() + 0.1 * r.iter().sum::<f64>() + 0.05 * rng.sample::<f64, _>(StandardNormal))
            .map(|v: f64| v.max(0.2))
            .collect();
        let c = [0.5, 1.0, 5.0, 20.0][rng.gen_range(0..4)];
        let eps = [0.01, 0.03, 0.05, 0.1][rng.gen_range(0..4)];
        let gamma = if rng.gen_bool(0.5) { None } else { Some(rng.gen_range(0.05..1.0)) };
        let cfg = TrainConfig {
            c,
            epsilon: eps,
            gamma,
            kkt_tol: 1e-9,
            ..Default::default()
        };
        let model = svr::train(&x, &rt, &cfg).expect("svr trains");

        let (mu, sd) = standardize_cols(&x);
        let zx: Vec<Vec<f64>> = x.iter().map(|r| r.iter().zip(&mu).zip(&sd).map(|((v, m), s)| (v - m) / s).collect()).collect();
        let t_mu = mean(&rt);
        let t_sd = (rt.iter().map(|v| (v - t_mu).powi(2)).sum::<f64>() / n as f64).sqrt();
        let z: Vec<f64> = rt.iter().map(|v| (v - t_mu) / t_sd).collect();
        let g = gamma.unwrap_or(1.0 / d as f64);
        let kern = |a: &[f64], b: &[f64]| (-g * a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()).exp();
        let k: Vec<Vec<f64>> = zx.iter().map(|a| zx.iter().map(|b| kern(a, b)).collect()).collect();
        let qp = qp_oracle(&k, &z, c, eps / t_sd);

        for _ in 0..100 {
            let probe: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.5..2.5)).collect();
            let zp: Vec<f64> = probe.iter().zip(&mu).zip(&sd).map(|((v, m), s)| (v - m) / s).collect();
            let f: f64 = zx.iter().zip(&qp.beta).map(|(sv, b)| b * kern(sv, &zp)).sum::<f64>() + qp.bias;
            let oracle = f * t_sd + t_mu;
            let got = svr::predict(&model, &probe).expect("prediction");
            worst = worst.max((got - oracle).abs());
        }
    }
    outcome(worst <= 1e-4, format!("max |SMO - QP| prediction gap {worst:.2e} s over 50 instances x 100 probes"))
}

// ---------------------------------------------------------------- C2

fn c2() -> Outcome {
    let dims = [2usize, 10, 75];
    let ms = [1usize, 3, 8, 15];
    let mut violations = 0;
    let mut checked = 0;
    for ds in 0..100u64 {
        let d = dims[(ds % 3) as usize];
        let m = ms[((ds / 3) % 4) as usize];
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + ds);
        let centers: Vec<Vec<f64>> = (0..rng.gen_range(1..=5)).map(|_| (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let data: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                let c = &centers[rng.gen_range(0..centers.len())];
                let scale = rng.gen_range(0.3..2.0);
                c.iter().map(|v| v + scale * rng.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect();
        let model = fit_em(&data, m, ds, &EmConfig::default()).expect("EM fits");
        for trace in &model.diagnostics.traces {
            for w in trace.windows(2) {
                checked += 1;
                if w[1] < w[0] - 1e-9 * w[0].abs() {
                    violations += 1;
                }
            }
        }
    }
    outcome(violations == 0, format!("{violations} log-likelihood decreases in {checked} EM steps over 100 datasets"))
}

// ---------------------------------------------------------------- C3

fn c3() -> Outcome {
    let alpha = PlvParams::new(NamedBand::Alpha.band(), FS);
    let n = 45_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let same = plv(&base, &base, &alpha).expect("plv");

    let t = |i: usize| i as f64 / FS;
    let a: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * 10.0 * t(i)).sin()).collect();
    let b: Vec<f64> = (0..n).map(|i| 0.5 * (2.0 * std::f64::consts::PI * 10.0 * t(i) + 1.1).sin()).collect();
    let offset = plv(&a, &b, &alpha).expect("plv");

    // Null level scales as 1/sqrt(bandwidth x duration), so the noise bound is
    // checked over the full 1-30 Hz analysis band; the alpha figure is reported.
    let p99 = |params: &PlvParams| {
        let mut v: Vec<f64> = (0..100u64)
            .map(|s| {
                let mut r = ChaCha8Rng::seed_from_u64(30_000 + s);
                let x: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
                let y: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
                plv(&x, &y, params).expect("plv")
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v[98]
    };
    let broad = p99(&PlvParams::new(Band::BROAD, FS));
    let narrow = p99(&alpha);
    let ok = (same - 1.0).abs() <= 1e-9 && offset >= 0.999 && broad <= 0.05;
    outcome(
        ok,
        format!("identical {same:.12}, phase offset {offset:.6}, noise p99 {broad:.4} (1-30 Hz; alpha band {narrow:.4} for reference)"),
    )
}

// ---------------------------------------------------------------- C4

/// Naive DFT power of the tapered segment at bin `k` of an `nfft`-point transform.
fn dft_power(seg: &[f64], taper: &[f64], nfft: usize, k: usize) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (i, (x, w)) in seg.iter().zip(taper).enumerate() {
        let ph = -2.0 * std::f64::consts::PI * (k * i) as f64 / nfft as f64;
        re += x * w * ph.cos();
        im += x * w * ph.sin();
    }
    re * re + im * im
}

fn c4() -> Outcome {
    let n = 100 * FS as usize;
    let sine: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * 10.0 * i as f64 / FS).sin()).collect();
    let mut notes = Vec::new();
    let mut ok = true;
    for pad in [2usize, 4] {
        let cfg = SpectrumConfig {
            pad_factor: pad,
            ..Default::default()
        };
        let frames = sliding_log_spectrum("x", &sine, FS, &cfg).expect("spectrum");
        let f = &frames[0];
        let peak = (0..f.log_power_db.len()).max_by(|&a, &b| f.log_power_db[a].total_cmp(&f.log_power_db[b])).unwrap();
        // oracle: direct DFT of the first sub-window with the periodic Hamming taper
        let nfft = 512 * pad;
        let ham: Vec<f64> = (0..512).map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / 512.0).cos()).collect();
        let want = (0..=nfft / 2)
            .filter(|&k| {
                let hz = k as f64 * FS / nfft as f64;
                (1.0..=30.0).contains(&hz)
            })
            .max_by(|&a, &b| dft_power(&sine[..512], &ham, nfft, a).total_cmp(&dft_power(&sine[..512], &ham, nfft, b)))
            .unwrap();
        let want_hz = want as f64 * FS / nfft as f64;
        let got_hz = f.bin_hz[peak];
        let hit = (got_hz - want_hz).abs() < 1e-9 && (got_hz - 10.0).abs() <= FS / nfft as f64 / 2.0;
        ok &= hit;
        notes.push(format!("pad {pad}: peak {got_hz:.4} Hz (oracle {want_hz:.4})"));
    }

    // Parseval: at 512 Hz a one-second window is exactly one sub-window
    let fs = 512.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..512).map(|_| rng.sample(StandardNormal)).collect();
    let mut worst = 0.0f64;
    for pad in [2usize, 4] {
        let cfg = SpectrumConfig {
            window_s: 1,
            pad_factor: pad,
            taper: Taper::Rectangular,
            power_floor: 1e-300,
            band: Band::new(0.0, fs / 2.0),
            ..Default::default()
        };
        let frames = sliding_log_spectrum("x", &x, fs, &cfg).expect("spectrum");
        let f = &frames[0];
        let nfft = 512 * pad;
        assert_eq!(f.bin_hz.len(), nfft / 2 + 1, "full one-sided band");
        let two_sided: f64 = f
            .log_power_db
            .iter()
            .enumerate()
            .map(|(k, db)| {
                let p = 10f64.powf(db / 10.0);
                if k == 0 || k == nfft / 2 {
                    p
                } else {
                    2.0 * p
                }
            })
            .sum();
        let ms = x.iter().map(|v| v * v).sum::<f64>() / 512.0;
        worst = worst.max((two_sided / ms - 1.0).abs());
    }
    ok &= worst <= 1e-6;
    notes.push(format!("Parseval relative error {worst:.2e}"));
    outcome(ok, notes.join(", "))
}

// ---------------------------------------------------------------- C5 / C6

struct PlantedRun {
    agreement: f64,
    dominance_failures: Vec<usize>,
    diag: Vec<f64>,
}

fn planted_runs() -> Vec<(u64, PlantedRun, Duration, Duration)> {
    let fc = FeatureConfig::default();
    (1..=5u64)
        .map(|seed| {
            let t0 = Instant::now();
            let cfg = GeneratorConfig {
                seed,
                ..Default::default()
            };
            let plan = corpus_plan(&[36, 14, 23], &cfg).expect("plan");
            let recs: Vec<SessionRecord> = plan
                .iter()
                .enumerate()
                .map(|(i, &a)| {
                    let p = generate_channels(a, i as u64, &cfg, &["Oz"]).expect("session");
                    let sp = regression_spectra(&p.samples[0], FS, &fc).expect("spectra");
                    SessionRecord::from_spectra(&p.truth.session_id, &sp, &p.events).expect("record")
                })
                .collect();
            let truth: Vec<usize> = plan.iter().map(|&a| a as usize - 1).collect();
            let rts: Vec<&[f64]> = recs.iter().map(|r| r.all_rts.as_slice()).collect();
            let init = initial_labels(&rts, &InitConfig::default()).expect("initial labels");
            let svr_cfg = TrainConfig::default();
            let cc = ClusterConfig {
                svr: svr_cfg.clone(),
                ..Default::default()
            };
            let result = recursive_cluster(&recs, &init, &cc).expect("clustering");
            let agreement = matched_agreement(&result.labels, &truth, 3);
            let t_cluster = t0.elapsed();
            let t1 = Instant::now();
            let m = cross_model_matrix(&recs, &result.labels, 3, &svr_cfg).expect("cross matrix");
            let run = PlantedRun {
                agreement,
                dominance_failures: m.dominance_failures(),
                diag: (0..3).map(|i| m.mean[i][i]).collect(),
            };
            (seed, run, t_cluster, t1.elapsed())
        })
        .collect()
}

fn c5_c6() -> (Outcome, Outcome) {
    let runs = planted_runs();
    let t5: Duration = runs.iter().map(|r| r.2).sum();
    let t6: Duration = runs.iter().map(|r| r.2 + r.3).sum();
    let agree: Vec<String> = runs.iter().map(|(s, r, ..)| format!("seed {s} {:.3}", r.agreement)).collect();
    let ok5 = runs.iter().all(|(_, r, ..)| r.agreement >= 0.9);
    let good6 = runs.iter().filter(|(_, r, ..)| r.dominance_failures.is_empty()).count();
    let diag: Vec<String> = runs
        .iter()
        .map(|(s, r, ..)| format!("seed {s} [{}]", r.diag.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" ")))
        .collect();
    (
        within(outcome(ok5, format!("matched agreement {}", agree.join(", "))), t5, 600.0),
        within(
            outcome(good6 == runs.len(), format!("{good6}/{} seeds diagonal-dominant; diagonals {}", runs.len(), diag.join(", "))),
            t6,
            600.0,
        ),
    )
}

// ---------------------------------------------------------------- C7 / C8 / C10

struct SeedEval {
    seed: u64,
    report: EvalReport,
    truths: Vec<GroundTruth>,
    sessions: Vec<EvalSession>,
}

fn featurized_corpus(seed: u64, counts: &[usize]) -> (Vec<EvalSession>, Vec<GroundTruth>) {
    let cfg = GeneratorConfig {
        seed,
        ..Default::default()
    };
    let fc = FeatureConfig::default();
    let plan = corpus_plan(counts, &cfg).expect("plan");
    plan.iter()
        .enumerate()
        .map(|(i, &a)| {
            let (s, truth) = generate_session(a, i as u64, &cfg).expect("session");
            let fs = extract_features(&s, &fc).expect("features");
            (EvalSession::new(&truth.subject_id, fs, s.events).expect("eval session"), truth)
        })
        .unzip()
}

fn ensemble_eval_config(seed: u64) -> EvalConfig {
    let mut ec = EvalConfig::default();
    ec.ensemble.seed = seed;
    ec.keep_traces = true;
    ec
}

fn ensemble_runs() -> (Vec<SeedEval>, Duration) {
    let t0 = Instant::now();
    let runs = (1..=10u64)
        .map(|seed| {
            let (sessions, truths) = featurized_corpus(seed, &[8, 6, 6]);
            let labels: Vec<usize> = truths.iter().map(|t| t.archetype_id as usize - 1).collect();
            let report = loso_evaluate(&sessions, &labels, &ensemble_eval_config(seed)).expect("loso");
            SeedEval {
                seed,
                report,
                truths,
                sessions,
            }
        })
        .collect();
    (runs, t0.elapsed())
}

const DRIFT_HEAVY: f64 = 0.25;

fn c7(runs: &[SeedEval], elapsed: Duration) -> Outcome {
    let mut all: BTreeMap<PredictMode, Vec<f64>> = BTreeMap::new();
    let mut heavy: BTreeMap<PredictMode, Vec<f64>> = BTreeMap::new();
    for r in runs {
        for (e, t) in r.report.sessions.iter().zip(&r.truths) {
            assert_eq!(e.session_id, t.session_id);
            for mode in PredictMode::ALL {
                let v = e.rmse_of(mode).expect("mode evaluated");
                all.entry(mode).or_default().push(v);
                if t.excursion_fraction >= DRIFT_HEAVY {
                    heavy.entry(mode).or_default().push(v);
                }
            }
        }
    }
    let med = |m: &BTreeMap<PredictMode, Vec<f64>>, mode| median(&m[&mode]);
    let (d, f, s) = (med(&all, PredictMode::Dynamic), med(&all, PredictMode::Fixed), med(&all, PredictMode::Single));
    let (hd, hs) = (med(&heavy, PredictMode::Dynamic), med(&heavy, PredictMode::Single));
    let n_heavy = heavy[&PredictMode::Dynamic].len();
    let ok = d <= f && f <= s && n_heavy > 0 && hd <= 0.8 * hs;
    within(
        outcome(
            ok,
            format!(
                "median RMSE dynamic {d:.3} fixed {f:.3} single {s:.3} over {} sessions x {} seeds; drift-heavy ({n_heavy}) dynamic {hd:.3} vs 0.8 x single {:.3}",
                all[&PredictMode::Dynamic].len() / runs.len(),
                runs.len(),
                0.8 * hs
            ),
        ),
        elapsed,
        1200.0,
    )
}

/// Mean weight of model 1 in the lowest minus the highest fatigue tercile of
/// each session, averaged over sessions.
fn low_minus_high_w1(r: &SeedEval) -> f64 {
    let diffs: Vec<f64> = r
        .report
        .sessions
        .iter()
        .zip(&r.truths)
        .map(|(e, truth)| {
            let trace = e.trace(PredictMode::Dynamic).expect("dynamic trace kept");
            let mut rows: Vec<(f64, f64)> = trace.rows.iter().map(|row| (truth.window_fatigue(row.t_s, 90), row.weights[0])).collect();
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            let third = rows.len() / 3;
            let lo = mean(&rows[..third].iter().map(|r| r.1).collect::<Vec<_>>());
            let hi = mean(&rows[rows.len() - third..].iter().map(|r| r.1).collect::<Vec<_>>());
            lo - hi
        })
        .collect();
    mean(&diffs)
}

fn c8(runs: &[SeedEval]) -> Outcome {
    let five = &runs[..5.min(runs.len())];
    let diffs: Vec<(u64, f64)> = five.iter().map(|r| (r.seed, low_minus_high_w1(r))).collect();
    let good = diffs.iter().filter(|(_, d)| *d > 0.0).count();
    outcome(
        good == 5,
        format!(
            "{good}/5 seeds with low-fatigue w1 above high-fatigue w1; differences {}",
            diffs.iter().map(|(s, d)| format!("seed {s} {d:+.3}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn c10(runs: &[SeedEval]) -> Outcome {
    let mut violations = 0;
    let mut folds = 0;
    let mut accounting = 0;
    for r in runs {
        folds += r.report.folds.len();
        violations += fold_violations(&r.report.folds);
        // independent check: held-out and training ids are disjoint and together cover the corpus
        for f in &r.report.folds {
            let train: BTreeSet<&String> = f.train_sessions.iter().collect();
            violations += f.held_out.iter().filter(|h| train.contains(h)).count();
            if f.skipped.is_none() && train.len() + f.held_out.len() != r.sessions.len() {
                accounting += 1;
            }
        }
    }
    // subject-level folds: pair sessions into two-session subjects
    let first = &runs[0];
    let mut paired = first.sessions.clone();
    for (i, s) in paired.iter_mut().enumerate() {
        s.subject_id = format!("pair{}", i / 2);
    }
    let labels: Vec<usize> = first.truths.iter().map(|t| t.archetype_id as usize - 1).collect();
    let mut ec = ensemble_eval_config(first.seed);
    ec.keep_traces = false;
    ec.folds = FoldUnit::Subject;
    let rep = loso_evaluate(&paired, &labels, &ec).expect("subject folds");
    let subject_of: BTreeMap<&str, &str> = paired.iter().map(|s| (s.id(), s.subject_id.as_str())).collect();
    for f in &rep.folds {
        folds += 1;
        let held: BTreeSet<&str> = f.held_out.iter().map(|h| subject_of[h.as_str()]).collect();
        violations += f.train_sessions.iter().filter(|t| held.contains(subject_of[t.as_str()])).count();
        violations += fold_violations(std::slice::from_ref(f));
    }
    outcome(
        violations == 0 && accounting == 0,
        format!("{violations} held-out ids in training manifests and {accounting} accounting mismatches over {folds} folds (session and subject folds)"),
    )
}

// ---------------------------------------------------------------- C9

fn run_pipeline(root: &Path) -> Vec<PathBuf> {
    let mut cfg = PipelineConfig::default().with_seed(9);
    cfg.counts = vec![3, 3, 3];
    cfg.generator.duration_s = 400;
    let corpus = root.join("corpus");
    pipeline::synth(&corpus, &cfg).expect("synth");
    pipeline::features_corpus(&corpus, &cfg).expect("features");
    let clusters = corpus.join(pipeline::CLUSTERS_FILE);
    pipeline::cluster(&corpus, &clusters, &cfg).expect("cluster");
    let model = root.join(pipeline::MODEL_FILE);
    pipeline::train(&corpus, &clusters, &model, &cfg).expect("train");
    let session = pipeline::session_dir(&corpus, "s004");
    pipeline::predict_session(&model, &session, &PredictMode::ALL, &root.join("predict"), &cfg).expect("predict");
    pipeline::eval(&corpus, &clusters, &root.join("eval"), &cfg).expect("eval");
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).expect("listing") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    files
}

fn json_has_hash(v: &serde_json::Value, hashes: &[String]) -> bool {
    match v {
        serde_json::Value::Object(m) => m.iter().any(|(k, v)| {
            (k == "config_hash" && v.as_str().map_or(false, |h| hashes.iter().any(|x| x == h))) || json_has_hash(v, hashes)
        }),
        _ => false,
    }
}

/// The config hash carried by an artifact: CSV stamp line, manifest column,
/// JSON field, or for raw sample files the sidecar `meta.json`.
fn embeds_hash(root: &Path, rel: &Path, hashes: &[String]) -> bool {
    let p = root.join(rel);
    match p.extension().and_then(|e| e.to_str()) {
        Some("csv") => {
            let text = std::fs::read_to_string(&p).unwrap();
            if let Some((h, _)) = read_stamp(&text) {
                return hashes.contains(&h);
            }
            let mut lines = text.lines();
            let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
            let Some(col) = header.iter().position(|c| *c == "config_hash") else { return false };
            lines.all(|l| l.split(',').nth(col).map_or(false, |h| hashes.iter().any(|x| x == h)))
        }
        Some("json") => {
            let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
            json_has_hash(&v, hashes)
        }
        Some("bin") => embeds_hash(root, &rel.with_file_name("meta.json"), hashes),
        _ => false,
    }
}

fn c9() -> Outcome {
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    let files_a = run_pipeline(a.path());
    let files_b = run_pipeline(b.path());
    let mut differing = Vec::new();
    if files_a != files_b {
        differing.push("file lists".to_string());
    }
    for f in &files_a {
        if std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok() {
            differing.push(f.display().to_string());
        }
    }
    let mut cfg = PipelineConfig::default().with_seed(9);
    cfg.counts = vec![3, 3, 3];
    cfg.generator.duration_s = 400;
    let hashes = vec![cfg.hash().unwrap(), rtens_core::provenance::config_hash(&cfg.generator).unwrap()];
    let unstamped: Vec<String> = files_a
        .iter()
        .filter(|f| !embeds_hash(a.path(), f, &hashes))
        .map(|f| f.display().to_string())
        .collect();
    outcome(
        differing.is_empty() && unstamped.is_empty(),
        format!(
            "{} artifacts, {} differ between runs {:?}, {} without config hash {:?}",
            files_a.len(),
            differing.len(),
            differing,
            unstamped.len(),
            unstamped
        ),
    )
}

// ---------------------------------------------------------------- driver

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        }
    }
}

fn main() {
    let picks: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).map(|a| a.to_lowercase()).collect();
    let wanted = |id: &str| picks.is_empty() || picks.iter().any(|p| p == id);
    let mut results: Vec<(&str, &str, Outcome)> = Vec::new();
    let mut report = |id: &'static str, name: &'static str, o: Outcome| {
        println!("{} {id} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };

    let timed = |f: fn() -> Outcome, limit: f64| {
        move || {
            let t = Instant::now();
            let o = f();
            within(o, t.elapsed(), limit)
        }
    };
    if wanted("c1") {
        report("C1", "SVR oracle equivalence", guarded(timed(c1, 10.0)));
    }
    if wanted("c2") {
        report("C2", "EM monotonicity", guarded(timed(c2, 60.0)));
    }
    if wanted("c3") {
        report("C3", "PLV calibration", guarded(timed(c3, 30.0)));
    }
    if wanted("c4") {
        report("C4", "spectral correctness", guarded(timed(c4, 5.0)));
    }
    if wanted("c5") || wanted("c6") {
        match catch_unwind(c5_c6) {
            Ok((o5, o6)) => {
                report("C5", "clustering recovery", o5);
                report("C6", "diagonal dominance", o6);
            }
            Err(_) => {
                report("C5", "clustering recovery", outcome(false, "panicked".into()));
                report("C6", "diagonal dominance", outcome(false, "panicked".into()));
            }
        }
    }
    if wanted("c7") || wanted("c8") || wanted("c10") {
        match catch_unwind(ensemble_runs) {
            Ok((runs, elapsed)) => {
                report("C7", "ensemble ordering", guarded(|| c7(&runs, elapsed)));
                report("C8", "weight-trace sanity", guarded(|| c8(&runs)));
                report("C10", "fold hygiene", guarded(|| c10(&runs)));
            }
            Err(_) => {
                for (id, name) in [("C7", "ensemble ordering"), ("C8", "weight-trace sanity"), ("C10", "fold hygiene")] {
                    report(id, name, outcome(false, "evaluation panicked".into()));
                }
            }
        }
    }
    if wanted("c9") {
        report("C9", "determinism", guarded(c9));
    }

    let failed: Vec<&str> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
