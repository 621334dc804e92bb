//! Phase-locking value between channel pairs.

use std::cell::RefCell;

use realfft::RealFftPlanner;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::filter::{BandpassFilter, DEFAULT_ORDER};
use super::spectrum::Band;
use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlvParams {
    pub band: Band,
    pub sample_rate_hz: f64,
    /// Minimum input length in seconds.
    pub window_s: f64,
    /// Fraction of the window dropped at each end before averaging.
    pub edge_fraction: f64,
    pub filter_order: usize,
}

impl PlvParams {
    pub fn new(band: Band, sample_rate_hz: f64) -> Self {
        PlvParams {
            band,
            sample_rate_hz,
            window_s: 90.0,
            edge_fraction: 0.025,
            filter_order: DEFAULT_ORDER,
        }
    }

    pub(crate) fn edge_len(&self, window_len: usize) -> usize {
        (self.edge_fraction * window_len as f64).round() as usize
    }
}

/// Analytic signal by zeroing negative frequencies of the full-length DFT.
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let forward = PLANNERS.with(|p| p.borrow_mut().0.plan_fft_forward(n));
    let inverse = PLANNERS.with(|p| p.borrow_mut().1.plan_fft_inverse(n));
    let mut input = x.to_vec();
    let mut half_spec = forward.make_output_vec();
    forward
        .process(&mut input, &mut half_spec)
        .expect("buffer sizes come from the plan");
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let half = n / 2;
    for (k, v) in half_spec.into_iter().enumerate() {
        let h = if k == 0 || (n % 2 == 0 && k == half) { 1.0 } else { 2.0 };
        buf[k] = v * (h / n as f64);
    }
    inverse.process(&mut buf);
    buf
}

thread_local! {
    // planners cache their plans, and the same lengths recur across channels
    static PLANNERS: RefCell<(RealFftPlanner<f64>, FftPlanner<f64>)> =
        RefCell::new((RealFftPlanner::new(), FftPlanner::new()));
}

/// Band-limits `x` and returns the unit phasor `e^{i phi(t)}` per sample.
///
/// Samples with zero analytic magnitude get a zero phasor. Fails when the
/// band-limited signal carries no energy.
pub(crate) fn unit_phasors(x: &[f64], filter: &BandpassFilter, what: &str) -> Result<Vec<Complex64>> {
    let y = filter.filtfilt(x);
    let z = analytic_signal(&y);
    let in_energy: f64 = x.iter().map(|v| v * v).sum();
    let out_energy: f64 = y.iter().map(|v| v * v).sum();
    if out_energy == 0.0 || out_energy <= 1e-20 * in_energy {
        return Err(Error::invalid(format!(
            "{what} has no energy in {}-{} Hz; phase is undefined",
            filter.low_hz, filter.high_hz
        )));
    }
    Ok(z.into_iter()
        .map(|c| {
            let r = c.norm();
            if r > 0.0 {
                c / r
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect())
}

/// `sum u_a conj(u_b)` written out so that swapping the arguments yields the
/// exact complex conjugate.
#[inline]
pub(crate) fn cross(a: Complex64, b: Complex64) -> Complex64 {
    Complex64::new(a.re * b.re + a.im * b.im, a.im * b.re - a.re * b.im)
}

/// Phase-locking value of two equally long signals in `params.band`.
pub fn plv(a: &[f64], b: &[f64], params: &PlvParams) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "PLV inputs differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let min_len = (params.window_s * params.sample_rate_hz).round() as usize;
    if a.len() < min_len.max(1) {
        return Err(Error::invalid(format!(
            "PLV input of {} samples is shorter than the {} s window",
            a.len(),
            params.window_s
        )));
    }
    ensure_finite("plv input a", a)?;
    ensure_finite("plv input b", b)?;
    let filter = BandpassFilter::design(
        params.filter_order,
        params.band.lo_hz,
        params.band.hi_hz,
        params.sample_rate_hz,
    )?;
    let ua = unit_phasors(a, &filter, "plv input a")?;
    let ub = unit_phasors(b, &filter, "plv input b")?;
    let e = params.edge_len(a.len());
    if 2 * e >= a.len() {
        return Err(Error::invalid("edge exclusion leaves no samples"));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (x, y) in ua[e..a.len() - e].iter().zip(&ub[e..a.len() - e]) {
        acc += cross(*x, *y);
    }
    let v = acc.norm() / (a.len() - 2 * e) as f64;
    Ok(v.min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 500.0;

    fn params(band: Band, window_s: f64) -> PlvParams {
        PlvParams { window_s, ..PlvParams::new(band, FS) }
    }

    #[test]
    fn analytic_signal_of_cosine_is_complex_exponential() {
        let n = 1000;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 50.0 * i as f64 / n as f64).cos())
            .collect();
        let z = analytic_signal(&x);
        for (i, c) in z.iter().enumerate() {
            let ph = 2.0 * std::f64::consts::PI * 50.0 * i as f64 / n as f64;
            assert!((c - Complex64::from_polar(1.0, ph)).norm() < 1e-9);
        }
    }

    #[test]
    fn identical_and_delayed_signals_lock() {
        let n = 10_000;
        let a: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 10.0 * i as f64 / FS).sin())
            .collect();
        let p = params(Band::ALPHA, 20.0);
        assert!((plv(&a, &a, &p).unwrap() - 1.0).abs() < 1e-9);
        // 40 ms = 20 samples
        let b: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 10.0 * (i as f64 - 20.0) / FS).sin())
            .collect();
        assert!(plv(&a, &b, &p).unwrap() >= 0.999);
    }

    #[test]
    fn symmetric_and_bounded() {
        let a: Vec<f64> = (0..5000).map(|i| ((i * 7919) % 613) as f64 - 300.0).collect();
        let b: Vec<f64> = (0..5000).map(|i| ((i * 104_729) % 997) as f64 - 500.0).collect();
        let p = params(Band::THETA, 10.0);
        let ab = plv(&a, &b, &p).unwrap();
        assert_eq!(ab, plv(&b, &a, &p).unwrap());
        assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn silent_input_is_rejected() {
        let a = vec![0.0; 5000];
        let b: Vec<f64> = (0..5000).map(|i| (i as f64 * 0.1).sin()).collect();
        assert!(plv(&a, &b, &params(Band::ALPHA, 10.0)).is_err());
        assert!(plv(&b[..4000], &b, &params(Band::ALPHA, 1.0)).is_err());
        assert!(plv(&b, &b, &params(Band::ALPHA, 90.0)).is_err());
    }
}
