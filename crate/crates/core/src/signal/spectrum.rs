//! Sliding-window log-power spectra.
//!
//! Each analysis window (90 s by default, advanced 1 s at a time) is tiled
//! with consecutive 512-sample sub-windows. Every sub-window is tapered,
//! zero-padded to `512 * pad_factor` points and transformed; linear power is
//! averaged over sub-windows and then converted to dB.
//!
//! Two evaluators produce identical numbers. The FFT path computes every
//! retained bin of every sub-window. The banded path evaluates only a narrow
//! run of bins from running prefix sums of `x[m] e^{-i w m}`, which makes band
//! powers for all 30 channels cheap: a sub-window DFT coefficient is a
//! difference of two prefix sums, and the Hamming taper is a sum of three
//! complex exponentials, i.e. three shifted bins.

use std::sync::Arc;

use realfft::RealFftPlanner;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Frequency band in Hz, inclusive at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl Band {
    pub const DELTA: Band = Band::new(1.0, 3.0);
    pub const THETA: Band = Band::new(4.0, 7.0);
    pub const ALPHA: Band = Band::new(8.0, 12.0);
    pub const BETA: Band = Band::new(13.0, 30.0);
    pub const BROAD: Band = Band::new(1.0, 30.0);

    pub const fn new(lo_hz: f64, hi_hz: f64) -> Self {
        Band { lo_hz, hi_hz }
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo_hz && f <= self.hi_hz
    }
}

/// The four canonical EEG bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedBand {
    Delta,
    Theta,
    Alpha,
    Beta,
}

impl NamedBand {
    pub const ALL: [NamedBand; 4] = [NamedBand::Delta, NamedBand::Theta, NamedBand::Alpha, NamedBand::Beta];

    pub fn band(self) -> Band {
        match self {
            NamedBand::Delta => Band::DELTA,
            NamedBand::Theta => Band::THETA,
            NamedBand::Alpha => Band::ALPHA,
            NamedBand::Beta => Band::BETA,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NamedBand::Delta => "delta",
            NamedBand::Theta => "theta",
            NamedBand::Alpha => "alpha",
            NamedBand::Beta => "beta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        NamedBand::ALL.into_iter().find(|b| b.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taper {
    /// Periodic (DFT-even) Hamming, `0.54 - 0.46 cos(2 pi n / L)`.
    Hamming,
    Rectangular,
}

impl Taper {
    /// `(bin shift in units of pad_factor, coefficient)` terms of the taper's DFT.
    fn exponential_terms(self) -> &'static [(i64, f64)] {
        match self {
            Taper::Hamming => &[(-1, -0.23), (0, 0.54), (1, -0.23)],
            Taper::Rectangular => &[(0, 1.0)],
        }
    }

    fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Taper::Hamming => (0..len)
                .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
                .collect(),
            Taper::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumConfig {
    pub window_s: u32,
    pub step_s: u32,
    pub subwin_len: usize,
    pub pad_factor: usize,
    pub taper: Taper,
    /// Fractional overlap between consecutive sub-windows, in `[0, 1)`.
    pub overlap: f64,
    /// Linear power floor applied before the dB conversion.
    pub power_floor: f64,
    pub band: Band,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            window_s: 90,
            step_s: 1,
            subwin_len: 512,
            pad_factor: 2,
            taper: Taper::Hamming,
            overlap: 0.0,
            power_floor: 1e-12,
            band: Band::BROAD,
        }
    }
}

/// Log-power spectrum of one channel over the window ending at `t_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFrame {
    pub t_s: u32,
    pub channel: String,
    pub log_power_db: Vec<f64>,
    pub bin_hz: Vec<f64>,
}

/// Frame and sub-window geometry for one sampling rate and configuration.
#[derive(Debug, Clone)]
pub(crate) struct SpectrumPlan {
    pub cfg: SpectrumConfig,
    pub sample_rate_hz: f64,
    pub window_len: usize,
    pub step_len: usize,
    pub hop: usize,
    pub nfft: usize,
    /// Retained DFT bin indices (centers inside `cfg.band`).
    pub k_lo: usize,
    pub k_hi: usize,
}

impl SpectrumPlan {
    pub fn new(cfg: &SpectrumConfig, sample_rate_hz: f64) -> Result<Self> {
        if !cfg.subwin_len.is_power_of_two() || cfg.subwin_len < 2 {
            return Err(Error::invalid(format!(
                "sub-window length {} is not a power of two",
                cfg.subwin_len
            )));
        }
        if cfg.pad_factor == 0 || !cfg.pad_factor.is_power_of_two() {
            return Err(Error::invalid(format!("pad factor {} must be a power of two", cfg.pad_factor)));
        }
        if !(0.0..1.0).contains(&cfg.overlap) {
            return Err(Error::invalid(format!("overlap {} outside [0, 1)", cfg.overlap)));
        }
        if cfg.window_s == 0 || cfg.step_s == 0 {
            return Err(Error::invalid("window and step must be positive"));
        }
        if !(cfg.power_floor > 0.0) {
            return Err(Error::invalid("power floor must be positive"));
        }
        let window_len = (cfg.window_s as f64 * sample_rate_hz).round() as usize;
        let step_len = (cfg.step_s as f64 * sample_rate_hz).round() as usize;
        if window_len < cfg.subwin_len {
            return Err(Error::invalid("analysis window shorter than one sub-window"));
        }
        let hop = ((cfg.subwin_len as f64 * (1.0 - cfg.overlap)).round() as usize).max(1);
        let nfft = cfg.subwin_len * cfg.pad_factor;
        let df = sample_rate_hz / nfft as f64;
        let k_lo = (cfg.band.lo_hz / df).ceil().max(0.0) as usize;
        let k_hi = ((cfg.band.hi_hz / df).floor() as usize).min(nfft / 2);
        if !(cfg.band.lo_hz < cfg.band.hi_hz) || k_lo > k_hi {
            return Err(Error::invalid(format!(
                "band {:?} contains no bins at {df} Hz resolution",
                cfg.band
            )));
        }
        Ok(SpectrumPlan {
            cfg: cfg.clone(),
            sample_rate_hz,
            window_len,
            step_len,
            hop,
            nfft,
            k_lo,
            k_hi,
        })
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.window_len {
            0
        } else {
            (n_samples - self.window_len) / self.step_len + 1
        }
    }

    pub fn frame_t_s(&self, frame: usize) -> u32 {
        self.cfg.window_s + frame as u32 * self.cfg.step_s
    }

    pub fn bin_hz(&self) -> Vec<f64> {
        let df = self.sample_rate_hz / self.nfft as f64;
        (self.k_lo..=self.k_hi).map(|k| k as f64 * df).collect()
    }

    fn subwindow_offsets(&self) -> Vec<usize> {
        let l = self.cfg.subwin_len;
        (0..)
            .map(|j| j * self.hop)
            .take_while(|o| o + l <= self.window_len)
            .collect()
    }

    /// Scale turning `|X_k|^2` into power such that the sum over all `nfft`
    /// bins of a rectangular-tapered sub-window equals its mean square.
    fn norm(&self) -> f64 {
        1.0 / (self.cfg.subwin_len as f64 * self.nfft as f64)
    }

    fn to_db(&self, p: f64) -> f64 {
        10.0 * p.max(self.cfg.power_floor).log10()
    }

    /// Mean linear power per retained bin, per frame, via full FFTs.
    pub fn powers_fft(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let l = self.cfg.subwin_len;
        let taper = self.cfg.taper.coefficients(l);
        let offsets = self.subwindow_offsets();
        let mut planner = RealFftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(self.nfft);
        let mut input = fft.make_input_vec();
        let mut output = fft.make_output_vec();
        let mut scratch = fft.make_scratch_vec();
        let nbins = self.k_hi - self.k_lo + 1;
        let scale = self.norm() / offsets.len() as f64;

        (0..self.n_frames(x.len()))
            .map(|f| {
                let start = f * self.step_len;
                let mut acc = vec![0.0; nbins];
                for &o in &offsets {
                    let seg = &x[start + o..start + o + l];
                    for ((dst, &v), &w) in input.iter_mut().zip(seg).zip(&taper) {
                        *dst = v * w;
                    }
                    input[l..].iter_mut().for_each(|v| *v = 0.0);
                    fft.process_with_scratch(&mut input, &mut output, &mut scratch)
                        .expect("buffer sizes come from the plan");
                    for (a, c) in acc.iter_mut().zip(&output[self.k_lo..=self.k_hi]) {
                        *a += c.norm_sqr();
                    }
                }
                acc.iter_mut().for_each(|a| *a *= scale);
                acc
            })
            .collect()
    }

    /// Mean linear power for bins `k_from..=k_to` per frame, via prefix sums.
    pub fn powers_banded(&self, x: &[f64], k_from: usize, k_to: usize) -> Vec<Vec<f64>> {
        let l = self.cfg.subwin_len;
        let n = self.nfft as i64;
        let pad = self.cfg.pad_factor as i64;
        let terms = self.cfg.taper.exponential_terms();
        let max_shift = terms.iter().map(|t| t.0.abs()).max().unwrap_or(0) * pad;
        // Bins whose prefix sums are tracked: k_from - max_shift ..= k_to + max_shift.
        let base = k_from as i64 - max_shift;
        let n_tracked = (k_to - k_from) as i64 + 2 * max_shift + 1;
        let freqs: Vec<i64> = (0..n_tracked).map(|j| base + j).collect();
        let j_of = |k: i64| (k - base) as usize;

        let offsets = self.subwindow_offsets();
        let n_frames = self.n_frames(x.len());
        let mut positions: Vec<usize> = (0..n_frames)
            .flat_map(|f| {
                let start = f * self.step_len;
                offsets.iter().flat_map(move |&o| [start + o, start + o + l])
            })
            .collect();
        positions.sort_unstable();
        positions.dedup();

        let prefix = prefix_dft(x, &freqs, n, &positions);
        let lookup = |pos: usize| positions.binary_search(&pos).expect("position was recorded");

        // e^{i 2 pi pad * s / nfft} depends only on s mod L.
        let rel_phase: Vec<Complex64> = (0..l)
            .map(|r| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * r as f64 / l as f64))
            .collect();

        let j_count = freqs.len();
        let nbins = k_to - k_from + 1;
        let scale = self.norm() / offsets.len() as f64;
        let mut d = vec![Complex64::new(0.0, 0.0); j_count];
        (0..n_frames)
            .map(|f| {
                let start = f * self.step_len;
                let mut acc = vec![0.0; nbins];
                for &o in &offsets {
                    let s = start + o;
                    let (p0, p1) = (lookup(s), lookup(s + l));
                    for j in 0..j_count {
                        d[j] = prefix[p1 * j_count + j] - prefix[p0 * j_count + j];
                    }
                    // X_k = e^{i w_k s} * sum_t c_t e^{i t pad w_1 s} D_{k + t pad}
                    let ph = rel_phase[s % l];
                    for (b, a) in acc.iter_mut().enumerate() {
                        let k = (k_from + b) as i64;
                        let mut xk = Complex64::new(0.0, 0.0);
                        for &(t, c) in terms {
                            let rot = match t {
                                0 => Complex64::new(1.0, 0.0),
                                1 => ph,
                                -1 => ph.conj(),
                                _ => ph.powi(t as i32),
                            };
                            xk += d[j_of(k + t * pad)] * rot * c;
                        }
                        *a += xk.norm_sqr();
                    }
                }
                acc.iter_mut().for_each(|a| *a *= scale);
                acc
            })
            .collect()
    }

    pub fn log_frames(&self, powers: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        powers
            .into_iter()
            .map(|p| p.into_iter().map(|v| self.to_db(v)).collect())
            .collect()
    }

    /// Retained-bin range `(k_from, k_to)` for `band`, or `None` if empty.
    pub fn band_bins(&self, band: Band) -> Option<(usize, usize)> {
        let df = self.sample_rate_hz / self.nfft as f64;
        let lo = (self.k_lo..=self.k_hi).find(|&k| band.contains(k as f64 * df))?;
        let hi = (self.k_lo..=self.k_hi).rev().find(|&k| band.contains(k as f64 * df))?;
        Some((lo, hi))
    }
}

/// Running sums `P_j(m) = sum_{m' < m} x[m'] e^{-i 2 pi k_j m' / n}` recorded
/// at each of `positions` (sorted), laid out position-major.
fn prefix_dft(x: &[f64], bins: &[i64], n: i64, positions: &[usize]) -> Vec<Complex64> {
    const RENORM: usize = 1024;
    let jc = bins.len();
    let angle = |k: i64, m: usize| {
        let r = (k.rem_euclid(n) as i128 * m as i128).rem_euclid(n as i128) as f64;
        -2.0 * std::f64::consts::PI * r / n as f64
    };
    let (sr, si): (Vec<f64>, Vec<f64>) = bins.iter().map(|&k| f64::sin_cos(angle(k, 1))).map(|(s, c)| (c, s)).unzip();
    let mut zr = vec![1.0; jc];
    let mut zi = vec![0.0; jc];
    let mut ar = vec![0.0; jc];
    let mut ai = vec![0.0; jc];
    let mut out = Vec::with_capacity(positions.len() * jc);
    let mut next = 0;
    let last = positions.last().copied().unwrap_or(0);
    for m in 0..=last.min(x.len()) {
        while next < positions.len() && positions[next] == m {
            out.extend(ar.iter().zip(&ai).map(|(&re, &im)| Complex64::new(re, im)));
            next += 1;
        }
        if m == x.len() || next == positions.len() {
            break;
        }
        if m % RENORM == 0 && m > 0 {
            for j in 0..jc {
                let (s, c) = angle(bins[j], m).sin_cos();
                zr[j] = c;
                zi[j] = s;
            }
        }
        let v = x[m];
        let steps = sr.iter().zip(&si);
        let state = ar.iter_mut().zip(ai.iter_mut()).zip(zr.iter_mut().zip(zi.iter_mut()));
        for (((a_r, a_i), (z_r, z_i)), (&s_r, &s_i)) in state.zip(steps) {
            *a_r += *z_r * v;
            *a_i += *z_i * v;
            let r = *z_r * s_r - *z_i * s_i;
            *z_i = *z_r * s_i + *z_i * s_r;
            *z_r = r;
        }
    }
    debug_assert_eq!(out.len(), positions.len() * jc);
    out
}

/// Sliding log-power spectra of one channel.
///
/// Frames are labelled by the second at which their window ends, starting
/// at `window_s`. Bins cover `cfg.band` (1-30 Hz by default).
pub fn sliding_log_spectrum(
    channel: &str,
    samples: &[f64],
    sample_rate_hz: f64,
    cfg: &SpectrumConfig,
) -> Result<Vec<SpectralFrame>> {
    let plan = SpectrumPlan::new(cfg, sample_rate_hz)?;
    if samples.len() < plan.window_len {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than the {} s window",
            samples.len(),
            cfg.window_s
        )));
    }
    ensure_finite(channel, samples)?;
    let bin_hz: Arc<[f64]> = plan.bin_hz().into();
    let frames = plan.log_frames(plan.powers_fft(samples));
    Ok(frames
        .into_iter()
        .enumerate()
        .map(|(i, db)| SpectralFrame {
            t_s: plan.frame_t_s(i),
            channel: channel.to_string(),
            log_power_db: db,
            bin_hz: bin_hz.to_vec(),
        })
        .collect())
}

/// Mean dB over the bins of `frame` whose centers lie inside `band`.
pub fn band_power(frame: &SpectralFrame, band: Band) -> Result<f64> {
    mean_in_band(&frame.log_power_db, &frame.bin_hz, band)
}

pub(crate) fn mean_in_band(db: &[f64], bin_hz: &[f64], band: Band) -> Result<f64> {
    let (sum, count) = db
        .iter()
        .zip(bin_hz)
        .filter(|(_, f)| band.contains(**f))
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    if count == 0 {
        return Err(Error::invalid(format!(
            "band {}-{} Hz selects no bins",
            band.lo_hz, band.hi_hz
        )));
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const FS: f64 = 500.0;

    fn sine(freq: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / FS).sin())
            .collect()
    }

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Direct O(N^2) DFT power of one tapered, zero-padded sub-window.
    fn dft_power(seg: &[f64], taper: Taper, nfft: usize, k: usize) -> f64 {
        let w = taper.coefficients(seg.len());
        let mut acc = Complex64::new(0.0, 0.0);
        for (n, (&v, &wn)) in seg.iter().zip(&w).enumerate() {
            let ang = -2.0 * std::f64::consts::PI * ((k * n) % nfft) as f64 / nfft as f64;
            acc += Complex64::from_polar(v * wn, ang);
        }
        acc.norm_sqr() / (seg.len() * nfft) as f64
    }

    #[test]
    fn bin_layout_per_pad_factor() {
        let p2 = SpectrumPlan::new(&SpectrumConfig::default(), FS).unwrap();
        assert_eq!((p2.k_lo, p2.k_hi), (3, 61));
        assert_eq!(p2.bin_hz().len(), 59);
        let p4 = SpectrumPlan::new(&SpectrumConfig { pad_factor: 4, ..Default::default() }, FS).unwrap();
        assert_eq!(p4.bin_hz().len(), 118);
        assert_eq!(p2.subwindow_offsets().len(), 87);
    }

    #[test]
    fn frame_count_follows_duration() {
        let x = vec![0.0; 120 * FS as usize];
        let frames = sliding_log_spectrum("Oz", &x, FS, &SpectrumConfig::default()).unwrap();
        assert_eq!(frames.len(), 31);
        assert_eq!(frames[0].t_s, 90);
        assert_eq!(frames[30].t_s, 120);
    }

    #[test]
    fn zero_signal_hits_the_floor() {
        let x = vec![0.0; 90 * FS as usize];
        let frames = sliding_log_spectrum("Oz", &x, FS, &SpectrumConfig::default()).unwrap();
        assert!(frames[0].log_power_db.iter().all(|&v| v == -120.0));
    }

    #[test]
    fn ten_hz_peak_lands_in_the_right_bin() {
        let x = sine(10.0, 90 * FS as usize);
        for pad in [2, 4] {
            let cfg = SpectrumConfig { pad_factor: pad, ..Default::default() };
            let f = &sliding_log_spectrum("Oz", &x, FS, &cfg).unwrap()[0];
            let (i, _) = f
                .log_power_db
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            let df = FS / (512 * pad) as f64;
            assert!((f.bin_hz[i] - 10.0).abs() <= df, "pad {pad}: peak at {}", f.bin_hz[i]);

            // direct DFT of the first sub-window agrees on where the peak is
            let plan = SpectrumPlan::new(&cfg, FS).unwrap();
            let oracle: Vec<f64> = (plan.k_lo..=plan.k_hi)
                .map(|k| dft_power(&x[..512], Taper::Hamming, 512 * pad, k))
                .collect();
            let (j, _) = oracle.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
            assert!((f.bin_hz[j] - f.bin_hz[i]).abs() <= df);
        }
    }

    #[test]
    fn fft_matches_direct_dft() {
        let x = noise(3, 90 * FS as usize);
        let cfg = SpectrumConfig::default();
        let plan = SpectrumPlan::new(&cfg, FS).unwrap();
        let p = plan.powers_fft(&x);
        let offs = plan.subwindow_offsets();
        for (b, k) in [(0usize, 3usize), (20, 23), (58, 61)] {
            let want: f64 = offs
                .iter()
                .map(|&o| dft_power(&x[o..o + 512], Taper::Hamming, 1024, k))
                .sum::<f64>()
                / offs.len() as f64;
            assert!((p[0][b] / want - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn parseval_with_rectangular_taper() {
        let x = noise(11, 4096);
        for pad in [1usize, 2, 4] {
            let nfft = 512 * pad;
            let seg = &x[100..612];
            let total: f64 = (0..nfft).map(|k| dft_power(seg, Taper::Rectangular, nfft, k)).sum();
            let ms = seg.iter().map(|v| v * v).sum::<f64>() / 512.0;
            assert!((total / ms - 1.0).abs() < 1e-6);

            // same identity through the FFT path over the full band
            let cfg = SpectrumConfig {
                window_s: 2,
                pad_factor: pad,
                taper: Taper::Rectangular,
                band: Band::new(0.0, FS / 2.0),
                ..Default::default()
            };
            let plan = SpectrumPlan::new(&cfg, FS).unwrap();
            let p = &plan.powers_fft(&x[100..1100])[0];
            // one-sided bins 0..=N/2: double the interior to recover the two-sided sum
            let two_sided: f64 = p
                .iter()
                .enumerate()
                .map(|(k, v)| if k == 0 || k == nfft / 2 { *v } else { 2.0 * v })
                .sum();
            assert!((two_sided / ms - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn banded_path_matches_fft_path() {
        let mut x = noise(5, 100 * FS as usize);
        let s = sine(5.5, x.len());
        x.iter_mut().zip(&s).for_each(|(a, b)| *a += 3.0 * b);
        for (pad, taper, overlap) in [
            (2, Taper::Hamming, 0.0),
            (4, Taper::Hamming, 0.0),
            (2, Taper::Rectangular, 0.0),
            (2, Taper::Hamming, 0.5),
        ] {
            let cfg = SpectrumConfig { pad_factor: pad, taper, overlap, ..Default::default() };
            let plan = SpectrumPlan::new(&cfg, FS).unwrap();
            let full = plan.log_frames(plan.powers_fft(&x));
            let (k0, k1) = plan.band_bins(Band::THETA).unwrap();
            let banded = plan.log_frames(plan.powers_banded(&x, k0, k1));
            assert_eq!(full.len(), banded.len());
            for (fr, br) in full.iter().zip(&banded) {
                for (b, v) in br.iter().enumerate() {
                    let w = fr[k0 - plan.k_lo + b];
                    assert!((v - w).abs() < 1e-8, "pad {pad} {taper:?}: {v} vs {w}");
                }
            }
            // the whole retained range works too, including bins near DC
            let banded_all = plan.log_frames(plan.powers_banded(&x, plan.k_lo, plan.k_hi));
            for (v, w) in banded_all[3].iter().zip(&full[3]) {
                assert!((v - w).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn white_noise_is_flat() {
        let x = noise(2024, 90 * FS as usize);
        let f = &sliding_log_spectrum("Oz", &x, FS, &SpectrumConfig::default()).unwrap()[0];
        let grand = f.log_power_db.iter().sum::<f64>() / f.log_power_db.len() as f64;
        let worst = f.log_power_db.iter().map(|v| (v - grand).abs()).fold(0.0, f64::max);
        assert!(worst <= 1.5, "max deviation {worst} dB");
    }

    #[test]
    fn band_power_behaviour() {
        let frame = SpectralFrame {
            t_s: 90,
            channel: "Oz".into(),
            log_power_db: vec![10.0; 59],
            bin_hz: SpectrumPlan::new(&SpectrumConfig::default(), FS).unwrap().bin_hz(),
        };
        for b in NamedBand::ALL {
            assert_eq!(band_power(&frame, b.band()).unwrap(), 10.0);
        }
        assert!(band_power(&frame, Band::new(31.0, 40.0)).is_err());

        let x = sine(6.0, 90 * FS as usize);
        let f = &sliding_log_spectrum("Oz", &x, FS, &SpectrumConfig::default()).unwrap()[0];
        assert!(band_power(f, Band::THETA).unwrap() > band_power(f, Band::ALPHA).unwrap());
    }

    #[test]
    fn rejects_bad_configuration() {
        let x = vec![0.0; 1000];
        assert!(sliding_log_spectrum("Oz", &x, FS, &SpectrumConfig::default()).is_err());
        let cfg = SpectrumConfig { subwin_len: 500, ..Default::default() };
        assert!(sliding_log_spectrum("Oz", &vec![0.0; 45_000], FS, &cfg).is_err());
        let mut y = vec![0.0; 45_000];
        y[7] = f64::NAN;
        assert!(matches!(
            sliding_log_spectrum("Oz", &y, FS, &SpectrumConfig::default()),
            Err(Error::NonFinite { index: 7, .. })
        ));
    }
}
