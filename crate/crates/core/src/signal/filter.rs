//! Butterworth band-pass design and zero-phase (forward-backward) filtering.

use rustfft::num_complex::Complex64;

use super::EegSession;
use crate::error::{Error, Result};

/// Prototype order of the preprocessing filter (8 poles after the band-pass transform).
pub const DEFAULT_ORDER: usize = 4;

/// One second-order section, `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + zi * (self.b[1] + zi * self.b[2]);
        let den = 1.0 + zi * (self.a[0] + zi * self.a[1]);
        num / den
    }

    /// Transposed direct form II state that is at rest for a constant input `x`.
    fn steady_state(&self, x: f64) -> [f64; 2] {
        let dc = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1]);
        let y = dc * x;
        let z2 = self.b[2] * x - self.a[1] * y;
        let z1 = y - self.b[0] * x;
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// Cascade of biquads implementing a digital Butterworth band-pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BandpassFilter {
    pub sections: Vec<Biquad>,
    pub low_hz: f64,
    pub high_hz: f64,
    pub sample_rate_hz: f64,
}

impl BandpassFilter {
    /// Designs an `order`-pole-prototype Butterworth band-pass via the
    /// bilinear transform with pre-warped edges. The result has `order`
    /// second-order sections and unit gain at the band center.
    pub fn design(order: usize, low_hz: f64, high_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        let nyquist = sample_rate_hz / 2.0;
        if order == 0 {
            return Err(Error::invalid("filter order must be at least 1"));
        }
        if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
            return Err(Error::invalid(format!(
                "band ({low_hz}, {high_hz}) Hz must satisfy 0 < low < high < {nyquist} Hz"
            )));
        }
        let fs2 = 2.0 * sample_rate_hz;
        let wl = fs2 * (std::f64::consts::PI * low_hz / sample_rate_hz).tan();
        let wh = fs2 * (std::f64::consts::PI * high_hz / sample_rate_hz).tan();
        let bw = wh - wl;
        let w0sq = wl * wh;

        // Analog band-pass poles from the low-pass prototype poles.
        let mut poles = Vec::with_capacity(2 * order);
        for k in 0..order {
            let theta = std::f64::consts::PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta);
            let pb = p * bw;
            let disc = (pb * pb - 4.0 * w0sq).sqrt();
            poles.push((pb + disc) / 2.0);
            poles.push((pb - disc) / 2.0);
        }
        let zpoles: Vec<Complex64> = poles.iter().map(|s| (fs2 + s) / (fs2 - s)).collect();

        // Pair conjugates; real poles (odd orders only) pair with each other.
        let mut upper: Vec<Complex64> = zpoles.iter().copied().filter(|z| z.im > 1e-12).collect();
        let mut reals: Vec<f64> = zpoles.iter().filter(|z| z.im.abs() <= 1e-12).map(|z| z.re).collect();
        upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
        reals.sort_by(f64::total_cmp);
        let mut sections: Vec<Biquad> = upper
            .iter()
            .map(|z| Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-2.0 * z.re, z.norm_sqr()],
            })
            .collect();
        for pair in reals.chunks(2) {
            let (r1, r2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-(r1 + r2), r1 * r2],
            });
        }
        if sections.len() != order {
            return Err(Error::numeric(format!(
                "pole pairing produced {} sections for order {order}",
                sections.len()
            )));
        }

        // Normalize to unit magnitude at the (digital image of the) center frequency.
        let wc = 2.0 * (w0sq.sqrt() / fs2).atan();
        let z = Complex64::from_polar(1.0, wc);
        let mag: f64 = sections.iter().map(|s| s.response(z).norm()).product();
        let g = mag.recip().powf(1.0 / order as f64);
        for s in &mut sections {
            s.b.iter_mut().for_each(|b| *b *= g);
        }
        Ok(BandpassFilter {
            sections,
            low_hz,
            high_hz,
            sample_rate_hz,
        })
    }

    /// Magnitude response at `freq_hz` (single pass).
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let z = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * freq_hz / self.sample_rate_hz);
        self.sections.iter().map(|s| s.response(z).norm()).product()
    }

    /// Causal filtering from rest.
    pub fn lfilter(&self, x: &mut [f64]) {
        for s in &self.sections {
            run_section(s, x, [0.0, 0.0]);
        }
    }

    /// Zero-phase filtering: odd-extension padding, steady-state initial
    /// conditions, then a forward and a backward pass.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = self.pad_len().min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        let (x0, xn) = (x[0], x[n - 1]);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x0 - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * xn - x[n - 1 - i]));

        self.cascade_from_steady_state(&mut ext);
        ext.reverse();
        self.cascade_from_steady_state(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }

    fn cascade_from_steady_state(&self, x: &mut [f64]) {
        let mut level = x[0];
        for s in &self.sections {
            let zi = s.steady_state(level);
            run_section(s, x, zi);
            level *= s.dc_gain();
        }
    }

    /// Six periods of the lower band edge, the slowest transient of the cascade.
    fn pad_len(&self) -> usize {
        (6.0 * self.sample_rate_hz / self.low_hz).ceil() as usize
    }
}

fn run_section(s: &Biquad, x: &mut [f64], zi: [f64; 2]) {
    let [b0, b1, b2] = s.b;
    let [a1, a2] = s.a;
    let (mut z1, mut z2) = (zi[0], zi[1]);
    for v in x.iter_mut() {
        let xin = *v;
        let y = b0 * xin + z1;
        z1 = b1 * xin - a1 * y + z2;
        z2 = b2 * xin - a2 * y;
        *v = y;
    }
}

/// Zero-phase band-pass of every channel, each independently.
pub fn bandpass_filter(session: &EegSession, low_hz: f64, high_hz: f64) -> Result<EegSession> {
    if session.n_samples() == 0 {
        return Err(Error::invalid("cannot filter an empty session"));
    }
    let filter = BandpassFilter::design(DEFAULT_ORDER, low_hz, high_hz, session.sample_rate_hz)?;
    for (name, ch) in session.channel_names.iter().zip(&session.samples) {
        if let Some(index) = ch.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("channel {name}"),
                index,
            });
        }
    }
    let samples = session
        .samples
        .iter()
        .map(|ch| {
            let x: Vec<f64> = ch.iter().map(|&v| v as f64).collect();
            filter.filtfilt(&x).into_iter().map(|v| v as f32).collect()
        })
        .collect();
    Ok(EegSession {
        samples,
        ..session.clone()
    })
}

/// Filters one channel held as `f32` and returns it in `f64`.
pub(crate) fn filtfilt_f32(filter: &BandpassFilter, x: &[f32]) -> Vec<f64> {
    let xd: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    filter.filtfilt(&xd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::FftPlanner;

    const FS: f64 = 500.0;

    fn sine(freq: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / FS).sin())
            .collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// Ideal band-pass by zeroing DFT bins outside `[lo, hi]`.
    fn fft_mask_oracle(x: &[f64], lo: f64, hi: f64) -> Vec<f64> {
        let n = x.len();
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut planner = FftPlanner::new();
        planner.plan_fft_forward(n).process(&mut buf);
        for (k, c) in buf.iter_mut().enumerate() {
            let f = k.min(n - k) as f64 * FS / n as f64;
            if f < lo || f > hi {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        planner.plan_fft_inverse(n).process(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    }

    #[test]
    fn design_has_expected_shape() {
        let f = BandpassFilter::design(4, 1.0, 30.0, FS).unwrap();
        assert_eq!(f.sections.len(), 4);
        for s in &f.sections {
            // poles inside the unit circle
            assert!(s.a[1] < 1.0 && s.a[1] > 0.0);
        }
        assert!((f.magnitude((1.0f64 * 30.0).sqrt()) - 1.0).abs() < 1e-2);
        assert!((f.magnitude(1.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
        assert!((f.magnitude(30.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
    }

    #[test]
    fn passband_sine_matches_mask_oracle() {
        let n = 20 * FS as usize;
        let x = sine(10.0, n);
        let y = BandpassFilter::design(4, 1.0, 30.0, FS).unwrap().filtfilt(&x);
        let oracle = fft_mask_oracle(&x, 1.0, 30.0);
        let edge = 2 * FS as usize;
        let got = rms(&y[edge..n - edge]);
        let want = rms(&oracle[edge..n - edge]);
        assert!((got / want - 1.0).abs() < 0.01, "{got} vs {want}");
    }

    #[test]
    fn line_noise_is_rejected() {
        let n = 20 * FS as usize;
        let x = sine(60.0, n);
        let y = BandpassFilter::design(4, 1.0, 30.0, FS).unwrap().filtfilt(&x);
        let oracle = fft_mask_oracle(&x, 1.0, 30.0);
        let edge = 2 * FS as usize;
        assert!(rms(&oracle[edge..n - edge]) < 1e-9);
        assert!(rms(&y[edge..n - edge]) <= 0.01 * rms(&x));
    }

    #[test]
    fn zeros_stay_zero_and_rerun_is_stable() {
        let f = BandpassFilter::design(4, 1.0, 30.0, FS).unwrap();
        assert!(f.filtfilt(&vec![0.0; 5000]).iter().all(|&v| v == 0.0));

        let n = 20 * FS as usize;
        let x = sine(12.0, n);
        let once = f.filtfilt(&x);
        let twice = f.filtfilt(&once);
        let edge = 2 * FS as usize;
        let r = rms(&twice[edge..n - edge]) / rms(&once[edge..n - edge]);
        assert!((r - 1.0).abs() <= 0.02, "{r}");
    }

    #[test]
    fn rejects_band_outside_nyquist() {
        assert!(BandpassFilter::design(4, 1.0, 260.0, FS).is_err());
        assert!(BandpassFilter::design(4, 0.0, 30.0, FS).is_err());
        assert!(BandpassFilter::design(4, 30.0, 10.0, FS).is_err());
    }

    #[test]
    fn odd_order_design_works() {
        let f = BandpassFilter::design(3, 4.0, 7.0, FS).unwrap();
        assert_eq!(f.sections.len(), 3);
        assert!(f.magnitude(40.0) < 1e-3);
    }
}
