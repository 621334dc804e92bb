//! Per-second feature frames: the Oz spectrum fed to the regressors and the
//! band powers plus alpha coherence fed to the weighting model.

use std::collections::BTreeMap;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::filter::{filtfilt_f32, BandpassFilter, DEFAULT_ORDER};
use super::plv::{cross, unit_phasors};
use super::spectrum::{Band, NamedBand, SpectrumConfig, SpectrumPlan};
use super::{weighting_pairs, EegSession, REGRESSION_CHANNEL, WEIGHTING_CHANNELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub spectrum: SpectrumConfig,
    /// Band-pass applied to every channel before analysis; `None` skips it.
    pub prefilter: Option<Band>,
    /// Fraction of each coherence window dropped at both ends.
    pub plv_edge_fraction: f64,
    /// Per-channel band powers computed in addition to theta.
    pub extra_bands: Vec<NamedBand>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            spectrum: SpectrumConfig::default(),
            prefilter: Some(Band::BROAD),
            plv_edge_fraction: 0.025,
            extra_bands: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub t_s: u32,
    pub oz_spectrum: Vec<f64>,
    /// Mean theta log-power per channel, in session channel order.
    pub theta_powers: Vec<f64>,
    /// Alpha PLV over [`weighting_pairs`].
    pub alpha_plv: Vec<f64>,
    pub band_powers: BTreeMap<NamedBand, Vec<f64>>,
}

impl FeatureFrame {
    pub fn powers(&self, band: NamedBand) -> Option<&[f64]> {
        match band {
            NamedBand::Theta => Some(&self.theta_powers),
            b => self.band_powers.get(&b).map(Vec::as_slice),
        }
    }
}

/// Which features make up the weighting-model input vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightingSpec {
    pub bands: Vec<NamedBand>,
    pub alpha_plv: bool,
}

impl Default for WeightingSpec {
    fn default() -> Self {
        WeightingSpec {
            bands: vec![NamedBand::Theta],
            alpha_plv: true,
        }
    }
}

impl WeightingSpec {
    pub fn label(&self) -> String {
        let mut parts: Vec<&str> = self.bands.iter().map(|b| b.name()).collect();
        if self.alpha_plv {
            parts.push("alpha_plv");
        }
        parts.join("+")
    }

    pub fn vector(&self, frame: &FeatureFrame) -> Result<Vec<f64>> {
        let mut v = Vec::new();
        for &b in &self.bands {
            let p = frame.powers(b).ok_or_else(|| {
                Error::invalid(format!("frame t={} lacks {} band powers", frame.t_s, b.name()))
            })?;
            v.extend_from_slice(p);
        }
        if self.alpha_plv {
            v.extend_from_slice(&frame.alpha_plv);
        }
        if v.is_empty() {
            return Err(Error::invalid("weighting feature set is empty"));
        }
        Ok(v)
    }
}

/// Feature frames of one session plus the labels needed to interpret them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub session_id: String,
    pub channel_names: Vec<String>,
    pub oz_bin_hz: Vec<f64>,
    pub frames: Vec<FeatureFrame>,
}

impl FeatureSet {
    /// Frame whose window ends at `t_s`.
    pub fn frame_at(&self, t_s: u32) -> Option<&FeatureFrame> {
        let first = self.frames.first()?.t_s;
        let i = t_s.checked_sub(first)? as usize;
        self.frames.get(i).filter(|f| f.t_s == t_s)
    }
}

struct ChannelOutput {
    band_db: BTreeMap<NamedBand, Vec<f64>>,
    oz: Option<Vec<Vec<f64>>>,
    phasors: Option<Vec<Complex64>>,
}

/// Computes one feature frame per second from the first full window to the
/// end of the session.
pub fn extract_features(session: &EegSession, cfg: &FeatureConfig) -> Result<FeatureSet> {
    session.validate(cfg.spectrum.window_s as f64)?;
    let fs = session.sample_rate_hz;
    let plan = SpectrumPlan::new(&cfg.spectrum, fs)?;
    let n = session.n_samples();
    let n_frames = plan.n_frames(n);

    let prefilter = cfg
        .prefilter
        .map(|b| BandpassFilter::design(DEFAULT_ORDER, b.lo_hz, b.hi_hz, fs))
        .transpose()?;
    let alpha = BandpassFilter::design(DEFAULT_ORDER, Band::ALPHA.lo_hz, Band::ALPHA.hi_hz, fs)?;

    let mut bands = vec![NamedBand::Theta];
    for b in &cfg.extra_bands {
        if !bands.contains(b) {
            bands.push(*b);
        }
    }
    let band_bins: Vec<(NamedBand, usize, usize)> = bands
        .iter()
        .map(|&b| {
            plan.band_bins(b.band())
                .map(|(lo, hi)| (b, lo, hi))
                .ok_or_else(|| Error::invalid(format!("{} band selects no bins", b.name())))
        })
        .collect::<Result<_>>()?;
    let k_from = band_bins.iter().map(|b| b.1).min().unwrap_or(plan.k_lo);
    let k_to = band_bins.iter().map(|b| b.2).max().unwrap_or(plan.k_hi);

    let outputs: Vec<ChannelOutput> = session
        .channel_names
        .par_iter()
        .zip(session.samples.par_iter())
        .map(|(name, raw)| -> Result<ChannelOutput> {
            if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("channel {name}"),
                    index: i,
                });
            }
            let x = match &prefilter {
                Some(f) => filtfilt_f32(f, raw),
                None => raw.iter().map(|&v| v as f64).collect(),
            };
            let is_oz = name == REGRESSION_CHANNEL;
            // the regression channel needs every retained bin anyway
            let (lo_k, hi_k) = if is_oz { (plan.k_lo, plan.k_hi) } else { (k_from, k_to) };
            let db = if is_oz { regression_rows(&plan, &x) } else { plan.log_frames(plan.powers_banded(&x, lo_k, hi_k)) };
            let band_db = band_bins
                .iter()
                .map(|&(b, lo, hi)| {
                    let per_frame = db
                        .iter()
                        .map(|row| {
                            let sel = &row[lo - lo_k..=hi - lo_k];
                            sel.iter().sum::<f64>() / sel.len() as f64
                        })
                        .collect();
                    (b, per_frame)
                })
                .collect();
            let oz = is_oz.then(|| db.clone());
            let phasors = if WEIGHTING_CHANNELS.contains(&name.as_str()) {
                Some(unit_phasors(&x, &alpha, &format!("channel {name}"))?)
            } else {
                None
            };
            Ok(ChannelOutput { band_db, oz, phasors })
        })
        .collect::<Result<_>>()?;

    let phasors: Vec<&[Complex64]> = WEIGHTING_CHANNELS
        .iter()
        .map(|w| {
            let i = session.channel_index(w).expect("validated");
            outputs[i].phasors.as_deref().expect("weighting channel")
        })
        .collect();
    let edge = (cfg.plv_edge_fraction * plan.window_len as f64).round() as usize;
    if 2 * edge >= plan.window_len {
        return Err(Error::invalid("coherence edge exclusion leaves no samples"));
    }
    let pair_plv: Vec<Vec<f64>> = weighting_pairs()
        .par_iter()
        .map(|&(i, j)| sliding_plv(phasors[i], phasors[j], &plan, n_frames, edge))
        .collect();

    let oz_idx = session.channel_index(REGRESSION_CHANNEL).expect("validated");
    let mut oz = outputs[oz_idx].oz.clone().expect("regression channel");
    let frames = (0..n_frames)
        .map(|f| {
            let mut band_powers: BTreeMap<NamedBand, Vec<f64>> = BTreeMap::new();
            for &b in &bands {
                band_powers.insert(b, outputs.iter().map(|o| o.band_db[&b][f]).collect());
            }
            let theta_powers = band_powers.remove(&NamedBand::Theta).expect("theta always computed");
            FeatureFrame {
                t_s: plan.frame_t_s(f),
                oz_spectrum: std::mem::take(&mut oz[f]),
                theta_powers,
                alpha_plv: pair_plv.iter().map(|p| p[f]).collect(),
                band_powers,
            }
        })
        .collect();
    Ok(FeatureSet {
        session_id: session.session_id.clone(),
        channel_names: session.channel_names.clone(),
        oz_bin_hz: plan.bin_hz(),
        frames,
    })
}

fn regression_rows(plan: &SpectrumPlan, x: &[f64]) -> Vec<Vec<f64>> {
    plan.log_frames(plan.powers_banded(x, plan.k_lo, plan.k_hi))
}

/// The regression-channel spectra alone, `(t_s, log power)` per frame,
/// equal to the `oz_spectrum` entries [`extract_features`] would produce.
pub fn regression_spectra(samples: &[f32], sample_rate_hz: f64, cfg: &FeatureConfig) -> Result<Vec<(u32, Vec<f64>)>> {
    let plan = SpectrumPlan::new(&cfg.spectrum, sample_rate_hz)?;
    if samples.len() < plan.window_len {
        return Err(Error::invalid("signal is shorter than one analysis window"));
    }
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("channel {REGRESSION_CHANNEL}"),
            index: i,
        });
    }
    let x = match cfg.prefilter {
        Some(b) => filtfilt_f32(&BandpassFilter::design(DEFAULT_ORDER, b.lo_hz, b.hi_hz, sample_rate_hz)?, samples),
        None => samples.iter().map(|&v| v as f64).collect(),
    };
    Ok(regression_rows(&plan, &x)
        .into_iter()
        .enumerate()
        .map(|(f, row)| (plan.frame_t_s(f), row))
        .collect())
}

/// PLV over each analysis window, minus `edge` samples at both ends.
fn sliding_plv(a: &[Complex64], b: &[Complex64], plan: &SpectrumPlan, n_frames: usize, edge: usize) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(a.len() + 1);
    let mut acc = Complex64::new(0.0, 0.0);
    prefix.push(acc);
    for (x, y) in a.iter().zip(b) {
        acc += cross(*x, *y);
        prefix.push(acc);
    }
    let count = (plan.window_len - 2 * edge) as f64;
    (0..n_frames)
        .map(|f| {
            let lo = f * plan.step_len + edge;
            let hi = f * plan.step_len + plan.window_len - edge;
            ((prefix[hi] - prefix[lo]).norm() / count).clamp(0.0, 1.0)
        })
        .collect()
}
