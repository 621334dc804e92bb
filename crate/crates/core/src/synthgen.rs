//! Seeded synthetic driving sessions with known ground truth.
//!
//! Each session follows a hidden fatigue path. Its archetype fixes a home
//! regime, which is the EEG-RT mapping the session follows most of the
//! time. After the first five minutes, a susceptible session can leave its
//! home regime while fatigue stays past a threshold. RTs come from the
//! active regime. The EEG is a 1/f background plus band oscillators:
//! - posterior theta, delta and beta track fatigue;
//! - frontal theta and the alpha phase coupling of the weighting channels
//!   track the active regime.

use std::path::Path;

use log::info;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provenance::{bytes_hash, config_hash};
use crate::rng::{stream, sub_seed};
use crate::signal::io::{write_atomic, write_json, write_session, Origin, EEG_FILE};
use crate::signal::{is_posterior, BandpassFilter, EegSession, TrialEvent, CHANNELS, SAMPLE_RATE_HZ, WEIGHTING_CHANNELS};

pub const TRUTH_FILE: &str = "truth.json";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SESSIONS_DIR: &str = "sessions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectArchetype {
    pub archetype_id: u8,
    pub rt_baseline_s: f64,
    /// RT multiplier per unit fatigue.
    pub fatigue_rt_gain: f64,
    /// dB per unit fatigue on posterior channels.
    pub theta_gain_posterior: f64,
    pub alpha_plv_level: f64,
    pub spectral_slope: f64,
    pub rt_noise_sigma: f64,
    /// Theta level on non-posterior channels while this regime is active, dB.
    pub frontal_theta_db: f64,
}

impl SubjectArchetype {
    pub fn defaults() -> Vec<SubjectArchetype> {
        vec![
            SubjectArchetype {
                archetype_id: 1,
                rt_baseline_s: 0.8,
                fatigue_rt_gain: 0.6,
                theta_gain_posterior: 6.0,
                alpha_plv_level: 0.2,
                spectral_slope: 1.0,
                rt_noise_sigma: 0.06,
                frontal_theta_db: 0.0,
            },
            SubjectArchetype {
                archetype_id: 2,
                rt_baseline_s: 0.6,
                fatigue_rt_gain: 4.0,
                theta_gain_posterior: 6.0,
                alpha_plv_level: 0.5,
                spectral_slope: 1.0,
                rt_noise_sigma: 0.06,
                frontal_theta_db: 4.0,
            },
            SubjectArchetype {
                archetype_id: 3,
                rt_baseline_s: 0.5,
                fatigue_rt_gain: 20.0,
                theta_gain_posterior: 6.0,
                alpha_plv_level: 0.85,
                spectral_slope: 1.0,
                rt_noise_sigma: 0.06,
                frontal_theta_db: 8.0,
            },
        ]
    }

    fn validate(&self) -> Result<()> {
        let finite = [
            self.rt_baseline_s,
            self.fatigue_rt_gain,
            self.theta_gain_posterior,
            self.spectral_slope,
            self.rt_noise_sigma,
            self.frontal_theta_db,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || self.rt_baseline_s <= 0.0 || self.rt_noise_sigma < 0.0 || self.fatigue_rt_gain < 0.0 {
            return Err(Error::invalid(format!("archetype {} has invalid parameters", self.archetype_id)));
        }
        if !(0.0..=1.0).contains(&self.alpha_plv_level) {
            return Err(Error::invalid(format!("archetype {}: alpha_plv_level outside [0, 1]", self.archetype_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FatigueDynamics {
    #[default]
    RandomWalk,
    TwoState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FatigueConfig {
    pub dynamics: FatigueDynamics,
    /// Initial level is uniform on `[0, start_max]` and held for `alert_s`.
    pub start_max: f64,
    pub alert_s: f64,
    /// Seconds to climb from the initial level to the plateau.
    pub ramp_s: f64,
    pub plateau: (f64, f64),
    pub reversion_per_s: f64,
    pub step_sigma: f64,
    pub step_cap: f64,
    /// Largest late shift of the plateau, applied after `drift_start_s`.
    pub drift_max: f64,
    pub drift_start_s: f64,
    pub drift_ramp_s: f64,
    /// Chance that the late shift points toward the archetype's excursion.
    pub drift_toward_prob: f64,
    /// Two-state mode: levels and mean dwell time.
    pub two_state_levels: (f64, f64),
    pub dwell_s: f64,
}

impl Default for FatigueConfig {
    fn default() -> Self {
        FatigueConfig {
            dynamics: FatigueDynamics::RandomWalk,
            start_max: 0.05,
            alert_s: 50.0,
            ramp_s: 30.0,
            plateau: (0.47, 0.53),
            reversion_per_s: 0.03,
            step_sigma: 0.01,
            step_cap: 0.05,
            drift_max: 0.4,
            drift_start_s: 360.0,
            drift_ramp_s: 60.0,
            drift_toward_prob: 0.75,
            two_state_levels: (0.2, 0.8),
            dwell_s: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExcursionConfig {
    /// Share of sessions that can leave their home regime.
    pub probability: f64,
    pub start_s: u32,
    /// Archetypes that move one regime up while fatigue is above `high`.
    pub up_from: Vec<u8>,
    /// Archetypes that move one regime down while fatigue is below `low`.
    pub down_from: Vec<u8>,
    pub high: f64,
    pub low: f64,
    pub hysteresis: f64,
    pub min_dwell_s: u32,
}

impl Default for ExcursionConfig {
    fn default() -> Self {
        ExcursionConfig {
            probability: 0.6,
            start_s: 360,
            up_from: vec![1],
            down_from: vec![2, 3],
            high: 0.72,
            low: 0.35,
            hysteresis: 0.05,
            min_dwell_s: 90,
        }
    }
}

/// Component amplitudes in microvolts (RMS) and fatigue couplings in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Amplitudes {
    pub background_uv: f64,
    pub delta_uv: f64,
    pub theta_uv: f64,
    pub alpha_uv: f64,
    pub beta_uv: f64,
    pub delta_fatigue_db: f64,
    pub beta_fatigue_db: f64,
}

impl Default for Amplitudes {
    fn default() -> Self {
        Amplitudes {
            background_uv: 5.0,
            delta_uv: 2.0,
            theta_uv: 4.0,
            alpha_uv: 6.0,
            beta_uv: 1.5,
            delta_fatigue_db: 4.0,
            beta_fatigue_db: -3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub duration_s: u32,
    pub n_channels: usize,
    pub sample_rate_hz: f64,
    pub archetypes: Vec<SubjectArchetype>,
    pub fatigue: FatigueConfig,
    pub excursions: ExcursionConfig,
    pub trial_gap_s: (f64, f64),
    pub correction_s: (f64, f64),
    pub amplitudes: Amplitudes,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            duration_s: 600,
            n_channels: CHANNELS.len(),
            sample_rate_hz: SAMPLE_RATE_HZ,
            archetypes: SubjectArchetype::defaults(),
            fatigue: FatigueConfig::default(),
            excursions: ExcursionConfig::default(),
            trial_gap_s: (5.0, 10.0),
            correction_s: (0.5, 1.5),
            amplitudes: Amplitudes::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.duration_s < 400 {
            return Err(Error::invalid(format!(
                "duration_s = {} is too short; at least 400 s are required",
                self.duration_s
            )));
        }
        if self.n_channels != CHANNELS.len() {
            return Err(Error::invalid(format!("n_channels must be {}", CHANNELS.len())));
        }
        if self.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::invalid(format!("sample_rate_hz must be {SAMPLE_RATE_HZ}")));
        }
        if self.archetypes.is_empty() {
            return Err(Error::invalid("at least one archetype is required"));
        }
        for (i, a) in self.archetypes.iter().enumerate() {
            a.validate()?;
            if a.archetype_id as usize != i + 1 {
                return Err(Error::invalid("archetype ids must be 1, 2, ... in order"));
            }
        }
        let (g0, g1) = self.trial_gap_s;
        let (c0, c1) = self.correction_s;
        if !(g0 > 0.0 && g1 >= g0 && c0 >= 0.0 && c1 >= c0) {
            return Err(Error::invalid("trial gap and correction bounds must be ordered and positive"));
        }
        let f = &self.fatigue;
        if !(f.step_cap > 0.0 && f.step_sigma >= 0.0 && (0.0..=1.0).contains(&f.reversion_per_s)) {
            return Err(Error::invalid("fatigue step parameters out of range"));
        }
        if !(0.0..=1.0).contains(&self.excursions.probability) {
            return Err(Error::invalid("excursion probability outside [0, 1]"));
        }
        Ok(())
    }

    fn archetype(&self, id: u8) -> Result<&SubjectArchetype> {
        self.archetypes
            .get((id as usize).wrapping_sub(1))
            .ok_or_else(|| Error::invalid(format!("unknown archetype {id}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub session_id: String,
    pub subject_id: String,
    pub archetype_id: u8,
    pub seed: u64,
    /// Fatigue level at every whole second.
    pub fatigue: Vec<f64>,
    /// Active regime (archetype id) at every whole second.
    pub regime: Vec<u8>,
    pub susceptible: bool,
    /// Signed late shift of the fatigue plateau.
    pub drift: f64,
    /// Share of seconds after the excursion start spent away from home.
    pub excursion_fraction: f64,
}

impl GroundTruth {
    /// Mean planted fatigue over the window `(t - window_s, t]`.
    pub fn window_fatigue(&self, t_s: u32, window_s: u32) -> f64 {
        let end = (t_s as usize).min(self.fatigue.len());
        let start = end.saturating_sub(window_s as usize);
        let s = &self.fatigue[start..end];
        s.iter().sum::<f64>() / s.len().max(1) as f64
    }
}

fn simulate_fatigue(cfg: &GeneratorConfig, home: u8, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let f = &cfg.fatigue;
    let n = cfg.duration_s as usize;
    let mut path = Vec::with_capacity(n);
    let toward = rng.gen_bool(f.drift_toward_prob);
    let up = cfg.excursions.up_from.contains(&home);
    let down = cfg.excursions.down_from.contains(&home);
    let sign = match (up, down) {
        (true, false) => 1.0,
        (false, true) => -1.0,
        _ => {
            if rng.gen_bool(0.5) {
                1.0
            } else {
                -1.0
            }
        }
    };
    let drift = if toward { sign } else { -sign } * rng.gen_range(0.0..=f.drift_max);
    match f.dynamics {
        FatigueDynamics::RandomWalk => {
            let f0 = rng.gen_range(0.0..=f.start_max);
            let plateau = rng.gen_range(f.plateau.0..=f.plateau.1);
            let target = |t: f64| {
                f0 + (plateau - f0) * ((t - f.alert_s) / f.ramp_s).clamp(0.0, 1.0)
                    + drift * ((t - f.drift_start_s) / f.drift_ramp_s).clamp(0.0, 1.0)
            };
            let mut u = 0.0f64;
            let mut prev = f0;
            for t in 0..n {
                if t > 0 {
                    let z: f64 = StandardNormal.sample(rng);
                    u = u * (1.0 - f.reversion_per_s) + f.step_sigma * z;
                }
                let want = (target(t as f64) + u).clamp(0.0, 1.0);
                let v = if t == 0 { want } else { prev + (want - prev).clamp(-f.step_cap, f.step_cap) };
                path.push(v);
                prev = v;
            }
        }
        FatigueDynamics::TwoState => {
            let (lo, hi) = f.two_state_levels;
            let mut high = false;
            let mut prev = lo;
            for t in 0..n {
                if t > 0 && rng.gen_bool((1.0 / f.dwell_s).min(1.0)) {
                    high = !high;
                }
                let want = if high { hi } else { lo };
                let v = if t == 0 { want } else { prev + (want - prev).clamp(-f.step_cap, f.step_cap) };
                path.push(v);
                prev = v;
            }
        }
    }
    (path, drift)
}

fn simulate_regime(cfg: &GeneratorConfig, home: u8, susceptible: bool, fatigue: &[f64]) -> Vec<u8> {
    let e = &cfg.excursions;
    let k = cfg.archetypes.len() as u8;
    let up = e.up_from.contains(&home) && home < k;
    let down = e.down_from.contains(&home) && home > 1;
    let mut regime = vec![home; fatigue.len()];
    if !susceptible {
        return regime;
    }
    let mut state = home;
    let mut dwell = u32::MAX / 2;
    for (t, &f) in fatigue.iter().enumerate().skip(e.start_s as usize) {
        dwell = dwell.saturating_add(1);
        if dwell >= e.min_dwell_s {
            let next = if state == home {
                if up && f > e.high {
                    home + 1
                } else if down && f < e.low {
                    home - 1
                } else {
                    home
                }
            } else if (state > home && f < e.high - e.hysteresis) || (state < home && f > e.low + e.hysteresis) {
                home
            } else {
                state
            };
            if next != state {
                state = next;
                dwell = 0;
            }
        }
        regime[t] = state;
    }
    regime
}

fn lerp_at(v: &[f64], t: f64) -> f64 {
    let t = t.max(0.0);
    let i = t.floor() as usize;
    if i + 1 >= v.len() {
        return *v.last().expect("non-empty path");
    }
    let a = t - i as f64;
    v[i] * (1.0 - a) + v[i + 1] * a
}

/// Centred moving average over `half` seconds each side.
fn smooth(v: &[f64], half: usize) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let s = &v[i.saturating_sub(half)..(i + half + 1).min(v.len())];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

fn place_trials(cfg: &GeneratorConfig, fatigue: &[f64], regime: &[u8], rng: &mut ChaCha8Rng) -> Result<Vec<TrialEvent>> {
    let dur = cfg.duration_s as f64;
    let (g0, g1) = cfg.trial_gap_s;
    let (c0, c1) = cfg.correction_s;
    let mut events = Vec::new();
    let mut onset = rng.gen_range(g0..=g1);
    loop {
        let a = cfg.archetype(regime[(onset.floor() as usize).min(regime.len() - 1)])?;
        let f = lerp_at(fatigue, onset);
        let z: f64 = StandardNormal.sample(rng);
        let rt = a.rt_baseline_s * (1.0 + a.fatigue_rt_gain * f) * (a.rt_noise_sigma * z).exp();
        let e = TrialEvent::new(onset, rt, rng.gen_range(c0..=c1));
        if e.response_offset_s >= dur {
            break;
        }
        let gap = rng.gen_range(g0..=g1);
        // the next lane departure waits for the current correction to end
        onset = (onset + gap).max(e.response_offset_s + 0.5);
        events.push(e);
    }
    Ok(events)
}

fn unit_rms(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
}

/// Unit-variance uniform noise. Every use is band-limited afterwards, which
/// makes it Gaussian for practical purposes at a fraction of the cost.
fn white(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut raw = vec![0u32; n];
    rng.fill(&mut raw[..]);
    let h = 3f64.sqrt();
    let scale = 2.0 * h / 4_294_967_296.0;
    raw.into_iter().map(|u| u as f64 * scale - h).collect()
}

fn band_noise(filter: &BandpassFilter, rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut x = white(n, rng);
    filter.lfilter(&mut x);
    unit_rms(&mut x);
    x
}

struct PinkPlan {
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    shape: Vec<f64>,
}

impl PinkPlan {
    fn new(n: usize, slope: f64, fs: f64) -> Self {
        let mut planner = RealFftPlanner::new();
        let shape = (0..n / 2 + 1)
            .map(|k| if k == 0 { 0.0 } else { (k as f64 * fs / n as f64).max(0.5).powf(-slope / 2.0) })
            .collect();
        PinkPlan {
            r2c: planner.plan_fft_forward(n),
            c2r: planner.plan_fft_inverse(n),
            shape,
        }
    }

    fn noise(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.r2c.len();
        let mut x = white(n, rng);
        let mut spec = self.r2c.make_output_vec();
        self.r2c.process(&mut x, &mut spec).expect("length matches plan");
        for (c, g) in spec.iter_mut().zip(&self.shape) {
            *c *= *g;
        }
        // the inverse transform needs real DC and Nyquist bins
        spec[0].im = 0.0;
        if n % 2 == 0 {
            if let Some(last) = spec.last_mut() {
                last.im = 0.0;
            }
        }
        self.c2r.process(&mut spec, &mut x).expect("length matches plan");
        unit_rms(&mut x);
        x
    }
}

struct Envelopes {
    fatigue: Vec<f64>,
    plv_level: Vec<f64>,
    frontal_db: Vec<f64>,
}

fn synthesize_eeg(cfg: &GeneratorConfig, home: &SubjectArchetype, env: &Envelopes, seed: u64, channels: &[usize]) -> Result<Vec<Vec<f32>>> {
    if channels.is_empty() {
        return Ok(Vec::new());
    }
    let fs = cfg.sample_rate_hz;
    let n = cfg.duration_s as usize * fs as usize;
    let amp = &cfg.amplitudes;
    let delta_f = BandpassFilter::design(4, 1.0, 3.0, fs)?;
    let theta_f = BandpassFilter::design(4, 4.0, 7.0, fs)?;
    let alpha_f = BandpassFilter::design(4, 8.0, 12.0, fs)?;
    let beta_f = BandpassFilter::design(4, 13.0, 30.0, fs)?;

    let db = |v: f64| 10f64.powf(v / 20.0);
    let per_sample = |v: &[f64], map: &dyn Fn(f64) -> f64| -> Vec<f64> {
        (0..n).map(|i| map(lerp_at(v, i as f64 / fs))).collect()
    };
    let post_theta = per_sample(&env.fatigue, &|f| amp.theta_uv * db(home.theta_gain_posterior * f));
    let delta_gain = per_sample(&env.fatigue, &|f| amp.delta_uv * db(amp.delta_fatigue_db * f));
    let beta_gain = per_sample(&env.fatigue, &|f| amp.beta_uv * db(amp.beta_fatigue_db * f));
    let front_theta = per_sample(&env.frontal_db, &|d| amp.theta_uv * db(d));
    let rho_common = per_sample(&env.plv_level, &|r| amp.alpha_uv * r.sqrt());
    let rho_own = per_sample(&env.plv_level, &|r| amp.alpha_uv * (1.0 - r).sqrt());
    let common_alpha = band_noise(&alpha_f, &mut stream(seed, "alpha-source", 0), n);
    let pink = PinkPlan::new(n, home.spectral_slope, fs);

    let rows: Vec<Vec<f32>> = channels
        .par_iter()
        .map(|&c| {
            let name = &CHANNELS[c];
            let mut rng = stream(seed, "channel", c as u64);
            let bg = pink.noise(&mut rng);
            let delta = band_noise(&delta_f, &mut rng, n);
            let theta = band_noise(&theta_f, &mut rng, n);
            let alpha = band_noise(&alpha_f, &mut rng, n);
            let beta = band_noise(&beta_f, &mut rng, n);
            let theta_gain = if is_posterior(name) { &post_theta } else { &front_theta };
            let coupled = WEIGHTING_CHANNELS.contains(name);
            (0..n)
                .map(|i| {
                    let a = if coupled {
                        rho_common[i] * common_alpha[i] + rho_own[i] * alpha[i]
                    } else {
                        amp.alpha_uv * alpha[i]
                    };
                    let v = amp.background_uv * bg[i]
                        + delta_gain[i] * delta[i]
                        + theta_gain[i] * theta[i]
                        + a
                        + beta_gain[i] * beta[i];
                    v as f32
                })
                .collect()
        })
        .collect();
    Ok(rows)
}

/// One session of archetype `archetype_id`, seeded from the corpus seed and
/// the session index.
pub fn generate_session(archetype_id: u8, index: u64, cfg: &GeneratorConfig) -> Result<(EegSession, GroundTruth)> {
    let p = generate_channels(archetype_id, index, cfg, &CHANNELS)?;
    let session = EegSession {
        subject_id: p.truth.subject_id.clone(),
        session_id: p.truth.session_id.clone(),
        sample_rate_hz: cfg.sample_rate_hz,
        channel_names: p.channels,
        samples: p.samples,
        events: p.events,
    };
    session.validate(0.0)?;
    Ok((session, p.truth))
}

/// A session restricted to some channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialSession {
    pub channels: Vec<String>,
    pub samples: Vec<Vec<f32>>,
    pub events: Vec<TrialEvent>,
    pub truth: GroundTruth,
}

/// Like [`generate_session`] but synthesizes only `channels`. Every channel
/// has its own random stream, so the samples equal those of the full session.
pub fn generate_channels(archetype_id: u8, index: u64, cfg: &GeneratorConfig, channels: &[&str]) -> Result<PartialSession> {
    cfg.validate()?;
    let picks = channels
        .iter()
        .map(|c| {
            CHANNELS
                .iter()
                .position(|m| m == c)
                .ok_or_else(|| Error::invalid(format!("unknown channel {c}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let home = cfg.archetype(archetype_id)?.clone();
    let seed = sub_seed(cfg.seed, "session", index);
    let mut rng = stream(seed, "state", 0);
    let (fatigue, drift) = simulate_fatigue(cfg, archetype_id, &mut rng);
    let susceptible = rng.gen_bool(cfg.excursions.probability);
    let regime = simulate_regime(cfg, archetype_id, susceptible, &fatigue);
    let events = place_trials(cfg, &fatigue, &regime, &mut stream(seed, "trials", 0))?;

    let by_regime = |pick: fn(&SubjectArchetype) -> f64| -> Result<Vec<f64>> {
        regime.iter().map(|&r| cfg.archetype(r).map(pick)).collect()
    };
    let env = Envelopes {
        fatigue: fatigue.clone(),
        plv_level: smooth(&by_regime(|a| a.alpha_plv_level)?, 5),
        frontal_db: smooth(&by_regime(|a| a.frontal_theta_db)?, 5),
    };
    let samples = synthesize_eeg(cfg, &home, &env, seed, &picks)?;

    let start = cfg.excursions.start_s as usize;
    let late = &regime[start.min(regime.len())..];
    let excursion_fraction = late.iter().filter(|&&r| r != archetype_id).count() as f64 / late.len().max(1) as f64;
    Ok(PartialSession {
        channels: channels.iter().map(|c| c.to_string()).collect(),
        samples,
        events,
        truth: GroundTruth {
            session_id: format!("s{index:03}"),
            subject_id: format!("subj{index:03}"),
            archetype_id,
            seed,
            fatigue,
            regime,
            susceptible,
            drift,
            excursion_fraction,
        },
    })
}

/// Archetype of every session index, grouped by archetype.
pub fn corpus_plan(counts: &[usize], cfg: &GeneratorConfig) -> Result<Vec<u8>> {
    if counts.len() != cfg.archetypes.len() {
        return Err(Error::invalid(format!(
            "{} session counts given for {} archetypes",
            counts.len(),
            cfg.archetypes.len()
        )));
    }
    if let Some(i) = counts.iter().position(|&c| c < 2) {
        return Err(Error::invalid(format!("archetype {} needs at least 2 sessions", i + 1)));
    }
    Ok(counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat(i as u8 + 1).take(c))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub session_id: String,
    pub subject_id: String,
    pub archetype_id: u8,
    pub seed: u64,
    pub duration_s: u32,
    pub n_trials: usize,
    pub excursion_fraction: f64,
    pub eeg_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    pub config_hash: String,
    pub manifest_hash: String,
}

#[derive(Serialize)]
struct TruthFile<'a> {
    #[serde(flatten)]
    truth: &'a GroundTruth,
    config_hash: &'a str,
    generator: &'a GeneratorConfig,
}

fn manifest_csv(rows: &[ManifestRow], config_hash: &str) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let err = |e: csv::Error| Error::invalid(format!("manifest serialization: {e}"));
    w.write_record([
        "session_id",
        "subject_id",
        "archetype_id",
        "seed",
        "duration_s",
        "n_trials",
        "excursion_fraction",
        "eeg_sha256",
        "config_hash",
    ])
    .map_err(err)?;
    for r in rows {
        w.write_record([
            r.session_id.clone(),
            r.subject_id.clone(),
            r.archetype_id.to_string(),
            r.seed.to_string(),
            r.duration_s.to_string(),
            r.n_trials.to_string(),
            r.excursion_fraction.to_string(),
            r.eeg_sha256.clone(),
            config_hash.to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

/// Generates and writes a corpus under `dir`: one directory per session in
/// `sessions/`, each with its `truth.json`, plus `manifest.csv`.
pub fn write_corpus(dir: &Path, counts: &[usize], cfg: &GeneratorConfig) -> Result<Manifest> {
    let plan = corpus_plan(counts, cfg)?;
    let hash = config_hash(cfg)?;
    let echo = serde_json::to_value(cfg).map_err(|e| Error::numeric(e.to_string()))?;
    let mut rows = Vec::with_capacity(plan.len());
    for (i, &a) in plan.iter().enumerate() {
        let (session, truth) = generate_session(a, i as u64, cfg)?;
        let sdir = dir.join(SESSIONS_DIR).join(&session.session_id);
        let origin = Origin {
            config_hash: &hash,
            seed: cfg.seed,
            generator: &echo,
        };
        write_session(&sdir, &session, Some(origin))?;
        write_json(
            &sdir.join(TRUTH_FILE),
            &TruthFile {
                truth: &truth,
                config_hash: &hash,
                generator: cfg,
            },
        )?;
        let eeg = std::fs::read(sdir.join(EEG_FILE)).map_err(|e| Error::io(sdir.join(EEG_FILE), e))?;
        info!("generated {} (archetype {a})", session.session_id);
        rows.push(ManifestRow {
            session_id: session.session_id.clone(),
            subject_id: session.subject_id.clone(),
            archetype_id: a,
            seed: truth.seed,
            duration_s: cfg.duration_s,
            n_trials: session.events.len(),
            excursion_fraction: truth.excursion_fraction,
            eeg_sha256: bytes_hash(&eeg),
        });
    }
    let bytes = manifest_csv(&rows, &hash)?;
    write_atomic(&dir.join(MANIFEST_FILE), &bytes)?;
    Ok(Manifest {
        rows,
        config_hash: hash,
        manifest_hash: bytes_hash(&bytes),
    })
}

#[derive(Deserialize)]
struct ManifestLine {
    session_id: String,
    subject_id: String,
    archetype_id: u8,
    seed: u64,
    duration_s: u32,
    n_trials: usize,
    excursion_fraction: f64,
    eeg_sha256: String,
    config_hash: String,
}

/// Rows of a corpus `manifest.csv` and the generator config hash they share.
pub fn read_manifest(path: &Path) -> Result<(Vec<ManifestRow>, String)> {
    let text = crate::signal::io::read_to_string(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut hash = None;
    for (i, line) in r.deserialize::<ManifestLine>().enumerate() {
        let line = line.map_err(|e| Error::parse(path, format!("row {}: {e}", i + 1)))?;
        if hash.get_or_insert_with(|| line.config_hash.clone()) != &line.config_hash {
            return Err(Error::parse(path, "rows disagree on config_hash"));
        }
        rows.push(ManifestRow {
            session_id: line.session_id,
            subject_id: line.subject_id,
            archetype_id: line.archetype_id,
            seed: line.seed,
            duration_s: line.duration_s,
            n_trials: line.n_trials,
            excursion_fraction: line.excursion_fraction,
            eeg_sha256: line.eeg_sha256,
        });
    }
    let hash = hash.ok_or_else(|| Error::parse(path, "manifest has no sessions"))?;
    Ok((rows, hash))
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    crate::signal::io::read_json(path)
}
