//! Raw EEG sessions and the per-second feature pipeline built on them.
//!
//! A session is 30 channels sampled at 500 Hz plus the lane-departure trials
//! recorded alongside. Everything downstream consumes [`FeatureFrame`]s: one
//! per second, each summarizing the trailing 90-second window.

pub mod features;
pub mod filter;
pub mod io;
pub mod plv;
pub mod spectrum;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::{extract_features, regression_spectra, FeatureConfig, FeatureFrame, FeatureSet, WeightingSpec};
pub use filter::{bandpass_filter, BandpassFilter};
pub use plv::{plv, PlvParams};
pub use spectrum::{
    band_power, sliding_log_spectrum, Band, NamedBand, SpectralFrame, SpectrumConfig, Taper,
};

/// Sampling rate of the recording montage.
pub const SAMPLE_RATE_HZ: f64 = 500.0;

/// Extended 10-20 montage, in storage order.
pub const CHANNELS: [&str; 30] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FT7", "FC3", "FCz", "FC4", "FT8", "T3", "C3",
    "Cz", "C4", "T4", "TP7", "CP3", "CPz", "CP4", "TP8", "T5", "P3", "Pz", "P4", "T6", "O1",
    "Oz", "O2",
];

/// Channels whose alpha-band phase locking feeds the weighting model. The
/// order fixes the pair order of every coherence vector.
pub const WEIGHTING_CHANNELS: [&str; 10] =
    ["O1", "O2", "Oz", "P3", "Pz", "P4", "CP3", "CPz", "CP4", "Cz"];

/// Channel supplying the regression input spectrum.
pub const REGRESSION_CHANNEL: &str = "Oz";

/// Occipital, parietal and centro-parietal sites.
pub fn is_posterior(channel: &str) -> bool {
    matches!(
        channel,
        "O1" | "Oz" | "O2" | "P3" | "Pz" | "P4" | "T5" | "T6" | "CP3" | "CPz" | "CP4" | "TP7" | "TP8"
    )
}

/// Index pairs `(i, j)`, `i < j`, over [`WEIGHTING_CHANNELS`] in lexicographic order.
pub fn weighting_pairs() -> Vec<(usize, usize)> {
    let n = WEIGHTING_CHANNELS.len();
    (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect()
}

/// One lane-departure trial. Times are seconds from session start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialEvent {
    pub deviation_onset_s: f64,
    pub response_onset_s: f64,
    pub response_offset_s: f64,
    pub rt_s: f64,
}

impl TrialEvent {
    pub fn new(deviation_onset_s: f64, rt_s: f64, correction_s: f64) -> Self {
        let response_onset_s = deviation_onset_s + rt_s;
        TrialEvent {
            deviation_onset_s,
            response_onset_s,
            response_offset_s: response_onset_s + correction_s,
            rt_s: response_onset_s - deviation_onset_s,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let ok = self.deviation_onset_s.is_finite()
            && self.response_onset_s.is_finite()
            && self.response_offset_s.is_finite()
            && self.deviation_onset_s < self.response_onset_s
            && self.response_onset_s <= self.response_offset_s
            && self.rt_s > 0.0
            && (self.rt_s - (self.response_onset_s - self.deviation_onset_s)).abs()
                <= 1e-9 * (1.0 + self.response_onset_s.abs());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("trial {index} has inconsistent timing: {self:?}")))
        }
    }
}

/// Multichannel recording plus its trials.
///
/// Samples are held channel-major (`samples[c][i]`) as 32-bit floats, which
/// is also the on-disk precision.
#[derive(Debug, Clone, PartialEq)]
pub struct EegSession {
    pub subject_id: String,
    pub session_id: String,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub samples: Vec<Vec<f32>>,
    pub events: Vec<TrialEvent>,
}

impl EegSession {
    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate_hz
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c == name)
    }

    pub fn channel(&self, name: &str) -> Result<&[f32]> {
        self.channel_index(name)
            .map(|i| self.samples[i].as_slice())
            .ok_or_else(|| Error::invalid(format!("channel {name} missing from session {}", self.session_id)))
    }

    pub fn rts(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.rt_s).collect()
    }

    /// Checks the structural invariants every consumer relies on.
    pub fn validate(&self, window_s: f64) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if self.samples.len() != self.channel_names.len() {
            return Err(Error::invalid(format!(
                "{} channel names but {} sample rows",
                self.channel_names.len(),
                self.samples.len()
            )));
        }
        let n = self.n_samples();
        if self.samples.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("channels have unequal lengths"));
        }
        for name in WEIGHTING_CHANNELS.iter().chain([REGRESSION_CHANNEL].iter()) {
            let count = self.channel_names.iter().filter(|c| c == name).count();
            if count != 1 {
                return Err(Error::invalid(format!(
                    "channel {name} must appear exactly once (found {count})"
                )));
            }
        }
        if (n as f64) < window_s * self.sample_rate_hz {
            return Err(Error::invalid(format!(
                "session {} has {n} samples, fewer than one {window_s} s window",
                self.session_id
            )));
        }
        for (i, e) in self.events.iter().enumerate() {
            e.validate(i)?;
            if i > 0 && e.deviation_onset_s <= self.events[i - 1].deviation_onset_s {
                return Err(Error::invalid(format!("trial {i} is not in onset order")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn montage_shape() {
        assert_eq!(weighting_pairs().len(), 45);
        assert_eq!(weighting_pairs()[0], (0, 1));
        assert_eq!(weighting_pairs()[44], (8, 9));
        for w in WEIGHTING_CHANNELS {
            assert_eq!(CHANNELS.iter().filter(|c| **c == w).count(), 1);
        }
        let mut sorted = CHANNELS.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 30);
    }

    #[test]
    fn trial_rt_matches_onsets() {
        let t = TrialEvent::new(100.25, 0.8, 1.0);
        assert!(t.validate(0).is_ok());
        assert!((t.rt_s - 0.8).abs() < 1e-12);
        let bad = TrialEvent {
            rt_s: 2.0,
            ..t
        };
        assert!(bad.validate(0).is_err());
    }

    #[test]
    fn session_validation_catches_missing_channel_and_short_signal() {
        let mut s = EegSession {
            subject_id: "s".into(),
            session_id: "x".into(),
            sample_rate_hz: 500.0,
            channel_names: CHANNELS.iter().map(|c| c.to_string()).collect(),
            samples: vec![vec![0.0; 45_000]; 30],
            events: vec![],
        };
        assert!(s.validate(90.0).is_ok());
        s.channel_names[28] = "Xx".into();
        assert!(s.validate(90.0).is_err());
        s.channel_names[28] = "Oz".into();
        s.samples.iter_mut().for_each(|c| c.truncate(44_999));
        assert!(s.validate(90.0).is_err());
    }
}
