//! Low-pass Butterworth design via the bilinear transform, realized as
//! cascaded second-order sections and applied forward-backward for zero phase.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Low-pass filter settings for the acceleration branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub order: usize,
    /// Cutoff as a fraction of the Nyquist frequency, in `(0, 1)`.
    pub cutoff: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self { order: 8, cutoff: 0.2 }
    }
}

/// One biquad `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Section {
    /// State of the transposed direct form II after settling on a unit step.
    fn unit_step_state(&self) -> [f64; 2] {
        let z2 = self.b[2] - self.a[1];
        [1.0 - self.b[0], z2]
    }

    fn run(&self, signal: &mut [f64], mut state: [f64; 2]) {
        for x in signal.iter_mut() {
            let input = *x;
            let y = self.b[0] * input + state[0];
            state[0] = self.b[1] * input - self.a[0] * y + state[1];
            state[1] = self.b[2] * input - self.a[1] * y;
            *x = y;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Butterworth {
    order: usize,
    cutoff: f64,
    sections: Vec<Section>,
}

impl Butterworth {
    /// Even-order low-pass design with `cutoff` in `(0, 1)` of Nyquist.
    pub fn design(order: usize, cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff < 1.0) {
            return Err(Error::Parameter(format!(
                "cutoff {cutoff} must lie strictly between 0 and 1 (fraction of Nyquist)"
            )));
        }
        if order == 0 || order % 2 != 0 {
            return Err(Error::Parameter(format!("filter order must be even and positive, got {order}")));
        }
        // pre-warped analog cutoff for the bilinear map s = (1 - z^-1) / (1 + z^-1)
        let k = (PI * cutoff / 2.0).tan();
        let k2 = k * k;
        let sections = (0..order / 2)
            .map(|i| {
                let theta = PI * (2 * i + 1) as f64 / (2 * order) as f64;
                let q = 2.0 * theta.sin();
                let a0 = 1.0 + q * k + k2;
                let g = k2 / a0;
                Section {
                    b: [g, 2.0 * g, g],
                    a: [2.0 * (k2 - 1.0) / a0, (1.0 - q * k + k2) / a0],
                }
            })
            .collect();
        Ok(Self { order, cutoff, sections })
    }

    pub fn from_spec(spec: &FilterSpec) -> Result<Self> {
        Self::design(spec.order, spec.cutoff)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    /// Shortest series accepted by [`Butterworth::filtfilt`].
    pub fn min_length(&self) -> usize {
        3 * self.order
    }

    /// Single causal pass from a zero state.
    pub fn filter(&self, signal: &[f64]) -> Vec<f64> {
        let mut out = signal.to_vec();
        for s in &self.sections {
            s.run(&mut out, [0.0; 2]);
        }
        out
    }

    fn filter_settled(&self, signal: &mut [f64]) {
        let Some(&first) = signal.first() else { return };
        for s in &self.sections {
            let zi = s.unit_step_state();
            s.run(signal, [zi[0] * first, zi[1] * first]);
        }
    }

    /// Zero-phase forward-backward filtering with odd-reflection padding.
    pub fn filtfilt(&self, signal: &[f64]) -> Result<Vec<f64>> {
        let n = signal.len();
        if n < self.min_length() {
            return Err(Error::SequenceLength(format!(
                "series of {n} samples is shorter than the {} needed by an order-{} filter",
                self.min_length(),
                self.order
            )));
        }
        let pad = self.min_length().min(n - 1);
        let (first, last) = (signal[0], signal[n - 1]);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
        ext.extend_from_slice(signal);
        ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));
        self.filter_settled(&mut ext);
        ext.reverse();
        self.filter_settled(&mut ext);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}

/// Zero-phase low-pass of a 1-D series.
pub fn butterworth_lowpass(signal: &[f64], order: usize, cutoff: f64) -> Result<Vec<f64>> {
    Butterworth::design(order, cutoff)?.filtfilt(signal)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form magnitude of a single pass of the bilinear design.
    fn magnitude(freq: f64, cutoff: f64, order: usize) -> f64 {
        let ratio = (PI * freq / 2.0).tan() / (PI * cutoff / 2.0).tan();
        1.0 / (1.0 + ratio.powi(2 * order as i32)).sqrt()
    }

    fn sinusoid(freq: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (PI * freq * i as f64).sin()).collect()
    }

    /// Amplitude of the `freq` component by quadrature projection over whole cycles.
    fn amplitude(y: &[f64], freq: f64) -> f64 {
        let n = y.len() as f64;
        let (mut s, mut c) = (0.0, 0.0);
        for (i, v) in y.iter().enumerate() {
            let w = PI * freq * i as f64;
            s += v * w.sin();
            c += v * w.cos();
        }
        2.0 * (s * s + c * c).sqrt() / n
    }

    fn interior_peak(y: &[f64], skip: usize) -> f64 {
        y[skip..y.len() - skip].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn unit_dc_gain() {
        let y = butterworth_lowpass(&[3.25; 64], 8, 0.2).unwrap();
        assert!(y.iter().all(|v| (v - 3.25).abs() < 1e-6), "{y:?}");
    }

    #[test]
    fn nyquist_is_rejected() {
        let x: Vec<f64> = (0..512).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let y = butterworth_lowpass(&x, 8, 0.2).unwrap();
        assert!(interior_peak(&y, 64) < 1e-3);
    }

    #[test]
    fn single_pass_half_power_at_cutoff() {
        let f = Butterworth::design(8, 0.2).unwrap();
        let y = f.filter(&sinusoid(0.2, 2200));
        let ratio = amplitude(&y[1000..], 0.2);
        assert!((ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.02 * std::f64::consts::FRAC_1_SQRT_2);
    }

    #[test]
    fn single_pass_follows_closed_form_response() {
        let f = Butterworth::design(8, 0.2).unwrap();
        for freq in [0.05, 0.1, 0.15, 0.2, 0.25, 0.3] {
            let y = f.filter(&sinusoid(freq, 3200));
            let measured = amplitude(&y[2000..], freq);
            let expect = magnitude(freq, 0.2, 8);
            assert!((measured - expect).abs() <= 0.02 * expect + 1e-4, "f={freq}: {measured} vs {expect}");
        }
    }

    #[test]
    fn rejects_bad_cutoff_and_short_series() {
        assert!(matches!(Butterworth::design(8, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(Butterworth::design(8, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(Butterworth::design(7, 0.3), Err(Error::Parameter(_))));
        assert!(matches!(butterworth_lowpass(&[0.0; 10], 8, 0.2), Err(Error::SequenceLength(_))));
    }

    #[test]
    fn filter_is_linear() {
        let s1: Vec<f64> = (0..80).map(|i| (i as f64 * 0.37).sin() + 0.01 * i as f64).collect();
        let s2: Vec<f64> = (0..80).map(|i| ((i * i) as f64 * 0.11).cos()).collect();
        let (a, b) = (1.7, -0.4);
        let mix: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| a * x + b * y).collect();
        let f = Butterworth::design(8, 0.2).unwrap();
        let (y1, y2, ym) = (f.filtfilt(&s1).unwrap(), f.filtfilt(&s2).unwrap(), f.filtfilt(&mix).unwrap());
        for i in 0..80 {
            assert!((ym[i] - (a * y1[i] + b * y2[i])).abs() < 1e-9);
        }
    }
}
