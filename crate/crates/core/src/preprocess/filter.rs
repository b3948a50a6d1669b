//! Digital Butterworth bandpass design (bilinear transform with pre-warped
//! band edges) realised as a cascade of second-order sections.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One biquad: `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

/// Cascade of biquads, applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

/// Designs the order-`order` Butterworth bandpass between `low_hz` and `high_hz`.
///
/// The analog low-pass prototype is transformed to a bandpass of twice the
/// order, then mapped through the bilinear transform; the band edges are
/// pre-warped so the digital response is exactly −3 dB at both cutoffs.
pub fn butterworth_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<SosFilter> {
    if order == 0 {
        return Err(Error::Parameter("filter order must be at least 1".into()));
    }
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0) {
        return Err(Error::Parameter(format!(
            "bandpass needs 0 < low ({low_hz}) < high ({high_hz}) < Nyquist ({})",
            fs / 2.0
        )));
    }
    let fs2 = 2.0 * fs;
    let wl = fs2 * (std::f64::consts::PI * low_hz / fs).tan();
    let wh = fs2 * (std::f64::consts::PI * high_hz / fs).tan();
    let bw = wh - wl;
    let w0_sq = wl * wh;

    let n = order as i64;
    let mut analog_poles = Vec::with_capacity(2 * order);
    for m in (-n + 1..n).step_by(2) {
        let theta = std::f64::consts::PI * m as f64 / (2.0 * order as f64);
        let p = -Complex64::from_polar(1.0, theta);
        let half = p * (bw / 2.0);
        let disc = (half * half - w0_sq).sqrt();
        analog_poles.push(half + disc);
        analog_poles.push(half - disc);
    }
    // analog gain bw^order with `order` zeros at s = 0
    let mut gain = Complex64::new(bw.powi(order as i32), 0.0);
    gain *= Complex64::new(fs2, 0.0).powi(order as i32);
    let digital_poles: Vec<Complex64> = analog_poles
        .iter()
        .map(|&p| {
            gain /= fs2 - p;
            (fs2 + p) / (fs2 - p)
        })
        .collect();
    let gain = gain.re;

    let sections = pair_poles(&digital_poles)
        .into_iter()
        .enumerate()
        .map(|(i, (p1, p2))| {
            let g = if i == 0 { gain } else { 1.0 };
            Biquad {
                // one zero at z = 1 and one at z = −1 per section
                b: [g, 0.0, -g],
                a: [-(p1 + p2).re, (p1 * p2).re],
            }
        })
        .collect();
    Ok(SosFilter { sections })
}

/// Groups poles into conjugate pairs; real poles are paired with each other.
fn pair_poles(poles: &[Complex64]) -> Vec<(Complex64, Complex64)> {
    let tol = 1e-12;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > tol).collect();
    let mut real: Vec<Complex64> = poles
        .iter()
        .copied()
        .filter(|p| p.im.abs() <= tol)
        .map(|p| Complex64::new(p.re, 0.0))
        .collect();
    complex.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    real.sort_by(|a, b| a.re.total_cmp(&b.re));
    let mut pairs: Vec<(Complex64, Complex64)> =
        complex.into_iter().map(|p| (p, p.conj())).collect();
    for chunk in real.chunks(2) {
        let second = chunk.get(1).copied().unwrap_or(Complex64::new(0.0, 0.0));
        pairs.push((chunk[0], second));
    }
    pairs
}

impl SosFilter {
    /// Complex frequency response at `freq_hz`, evaluated from the section coefficients.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / fs;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
            let num = s.b[0] + z1 * s.b[1] + z2 * s.b[2];
            let den = 1.0 + z1 * s.a[0] + z2 * s.a[1];
            acc * num / den
        })
    }

    /// Single causal pass, zero initial state (transposed direct form II).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[0] * out + z2;
                z2 = s.b[2] * input - s.a[1] * out;
                *v = out;
            }
        }
        y
    }

    /// Forward then time-reversed pass; zero phase, squared magnitude.
    pub fn apply_zero_phase(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.apply(x);
        y.reverse();
        let mut y = self.apply(&y);
        y.reverse();
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_cutoffs() {
        assert!(butterworth_bandpass(3, 0.0, 1000.0, 5000.0).is_err());
        assert!(butterworth_bandpass(3, 1000.0, 80.0, 5000.0).is_err());
        assert!(butterworth_bandpass(3, 80.0, 2500.0, 5000.0).is_err());
        assert!(butterworth_bandpass(0, 80.0, 1000.0, 5000.0).is_err());
    }

    #[test]
    fn third_order_has_three_sections() {
        let f = butterworth_bandpass(3, 80.0, 1000.0, 5000.0).unwrap();
        assert_eq!(f.sections.len(), 3);
        // all poles inside the unit circle
        for s in &f.sections {
            let disc = s.a[0] * s.a[0] - 4.0 * s.a[1];
            let mag = if disc < 0.0 {
                s.a[1].sqrt()
            } else {
                let r = disc.sqrt();
                ((-s.a[0] + r) / 2.0).abs().max(((-s.a[0] - r) / 2.0).abs())
            };
            assert!(mag < 1.0);
        }
    }

    #[test]
    fn edges_are_half_power() {
        let f = butterworth_bandpass(3, 80.0, 1000.0, 5000.0).unwrap();
        for edge in [80.0, 1000.0] {
            let g = f.response(edge, 5000.0).norm();
            assert!((g - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9, "{edge}: {g}");
        }
        assert!(f.response(0.0, 5000.0).norm() < 1e-12);
        assert!(f.response(2500.0, 5000.0).norm() < 1e-9);
    }
}
