//! Session directories and feature tables on disk.
//!
//! A session directory holds `meta.json`, `eeg.bin` (little-endian f32,
//! sample-major) and `events.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{FeatureFrame, FeatureSet};
use super::spectrum::NamedBand;
use super::{weighting_pairs, EegSession, TrialEvent, WEIGHTING_CHANNELS};
use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";
pub const EEG_FILE: &str = "eeg.bin";
pub const EVENTS_FILE: &str = "events.csv";
pub const FEATURES_FILE: &str = "features.csv";

const EVENTS_HEADER: [&str; 4] = ["deviation_onset_s", "response_onset_s", "response_offset_s", "rt_s"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub subject_id: String,
    pub session_id: String,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

/// Where a written session came from: the generating config, its hash and seed.
#[derive(Debug, Clone, Copy)]
pub struct Origin<'a> {
    pub config_hash: &'a str,
    pub seed: u64,
    pub generator: &'a serde_json::Value,
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes `meta.json`, `eeg.bin` (interleaved little-endian f32) and
/// `events.csv`. With an origin, the metadata and events carry its hash.
pub fn write_session(dir: &Path, session: &EegSession, origin: Option<Origin>) -> Result<()> {
    let meta = SessionMeta {
        subject_id: session.subject_id.clone(),
        session_id: session.session_id.clone(),
        sample_rate_hz: session.sample_rate_hz,
        channel_names: session.channel_names.clone(),
        config_hash: origin.map(|o| o.config_hash.to_string()),
        seed: origin.map(|o| o.seed),
        generator: origin.map(|o| o.generator.clone()),
    };
    write_json(&dir.join(META_FILE), &meta)?;

    let n = session.n_samples();
    let c = session.samples.len();
    let mut bytes = Vec::with_capacity(n * c * 4);
    for i in 0..n {
        for ch in &session.samples {
            bytes.extend_from_slice(&ch[i].to_le_bytes());
        }
    }
    write_atomic(&dir.join(EEG_FILE), &bytes)?;
    let events = events_csv(&session.events)?;
    let events = match origin {
        Some(o) => crate::provenance::stamp_csv(o.config_hash, o.seed, &events),
        None => events,
    };
    write_atomic(&dir.join(EVENTS_FILE), &events)
}

fn events_csv(events: &[TrialEvent]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::invalid(format!("events serialization: {e}"));
    w.write_record(EVENTS_HEADER).map_err(err)?;
    for e in events {
        w.write_record([
            e.deviation_onset_s.to_string(),
            e.response_onset_s.to_string(),
            e.response_offset_s.to_string(),
            e.rt_s.to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

pub fn read_events(path: &Path) -> Result<Vec<TrialEvent>> {
    let text = read_to_string(path)?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::parse(path, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != EVENTS_HEADER {
        return Err(Error::parse(path, format!("unexpected header {header:?}")));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
            let v: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, format!("row {}: {e}", i + 1)))?;
            if v.len() != 4 {
                return Err(Error::parse(path, format!("row {} has {} fields", i + 1, v.len())));
            }
            Ok(TrialEvent {
                deviation_onset_s: v[0],
                response_onset_s: v[1],
                response_offset_s: v[2],
                rt_s: v[3],
            })
        })
        .collect()
}

pub fn read_session_meta(dir: &Path) -> Result<SessionMeta> {
    read_json(&dir.join(META_FILE))
}

/// Loads and validates a session directory.
pub fn read_session(dir: &Path) -> Result<EegSession> {
    let meta = read_session_meta(dir)?;
    let path = dir.join(EEG_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let c = meta.channel_names.len();
    if c == 0 || bytes.len() % (4 * c) != 0 {
        return Err(Error::parse(
            &path,
            format!("{} bytes is not a whole number of {c}-channel f32 samples", bytes.len()),
        ));
    }
    let n = bytes.len() / (4 * c);
    let mut samples = vec![Vec::with_capacity(n); c];
    for frame in bytes.chunks_exact(4 * c) {
        for (ch, b) in samples.iter_mut().zip(frame.chunks_exact(4)) {
            ch.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        }
    }
    let session = EegSession {
        subject_id: meta.subject_id,
        session_id: meta.session_id,
        sample_rate_hz: meta.sample_rate_hz,
        channel_names: meta.channel_names,
        samples,
        events: read_events(&dir.join(EVENTS_FILE))?,
    };
    session.validate(0.0)?;
    Ok(session)
}

fn features_header(set: &FeatureSet, extra: &[NamedBand]) -> Vec<String> {
    let mut h = vec!["t_s".to_string()];
    h.extend(set.oz_bin_hz.iter().map(|f| format!("oz_p_{f}")));
    h.extend(set.channel_names.iter().map(|c| format!("theta_{c}")));
    for (i, j) in weighting_pairs() {
        h.push(format!("plvA_{}_{}", WEIGHTING_CHANNELS[i], WEIGHTING_CHANNELS[j]));
    }
    for b in extra {
        h.extend(set.channel_names.iter().map(|c| format!("{}_{c}", b.name())));
    }
    h
}

pub fn features_csv(set: &FeatureSet) -> Result<Vec<u8>> {
    let extra: Vec<NamedBand> = set
        .frames
        .first()
        .map(|f| f.band_powers.keys().copied().collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::invalid(format!("feature serialization: {e}"));
    w.write_record(features_header(set, &extra)).map_err(err)?;
    for f in &set.frames {
        let mut row = vec![f.t_s.to_string()];
        row.extend(f.oz_spectrum.iter().map(f64::to_string));
        row.extend(f.theta_powers.iter().map(f64::to_string));
        row.extend(f.alpha_plv.iter().map(f64::to_string));
        for b in &extra {
            row.extend(f.band_powers[b].iter().map(f64::to_string));
        }
        w.write_record(row).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

pub fn write_features(path: &Path, set: &FeatureSet) -> Result<()> {
    write_atomic(path, &features_csv(set)?)
}

/// Parses a feature table written by [`write_features`].
pub fn read_features(path: &Path, session_id: &str) -> Result<FeatureSet> {
    let text = read_to_string(path)?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("t_s") {
        return Err(Error::parse(path, "first column must be t_s"));
    }
    let mut oz_bin_hz = Vec::new();
    let mut channel_names = Vec::new();
    let mut n_plv = 0;
    let mut extra: Vec<NamedBand> = Vec::new();
    for h in &header[1..] {
        if let Some(f) = h.strip_prefix("oz_p_") {
            oz_bin_hz.push(f.parse::<f64>().map_err(|e| Error::parse(path, format!("{h}: {e}")))?);
        } else if let Some(c) = h.strip_prefix("theta_") {
            channel_names.push(c.to_string());
        } else if h.starts_with("plvA_") {
            n_plv += 1;
        } else {
            let band = h
                .split_once('_')
                .and_then(|(b, _)| NamedBand::parse(b))
                .ok_or_else(|| Error::parse(path, format!("unknown column {h}")))?;
            if extra.last() != Some(&band) {
                extra.push(band);
            }
        }
    }
    let (nb, nc) = (oz_bin_hz.len(), channel_names.len());
    if n_plv != weighting_pairs().len() || header.len() != 1 + nb + nc + n_plv + extra.len() * nc {
        return Err(Error::parse(path, "column layout does not match the feature schema"));
    }
    let mut frames = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
        let row = || format!("row {}", i + 1);
        if rec.len() != header.len() {
            return Err(Error::parse(path, format!("{} has {} fields", row(), rec.len())));
        }
        let t_s = rec[0]
            .parse::<u32>()
            .map_err(|e| Error::parse(path, format!("{}: t_s: {e}", row())))?;
        let v: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, format!("{}: {e}", row())))?;
        let (oz, rest) = v.split_at(nb);
        let (theta, rest) = rest.split_at(nc);
        let (plv, mut rest) = rest.split_at(n_plv);
        let mut band_powers = BTreeMap::new();
        for b in &extra {
            let (p, r) = rest.split_at(nc);
            band_powers.insert(*b, p.to_vec());
            rest = r;
        }
        frames.push(FeatureFrame {
            t_s,
            oz_spectrum: oz.to_vec(),
            theta_powers: theta.to_vec(),
            alpha_plv: plv.to_vec(),
            band_powers,
        });
    }
    Ok(FeatureSet {
        session_id: session_id.to_string(),
        channel_names,
        oz_bin_hz,
        frames,
    })
}
