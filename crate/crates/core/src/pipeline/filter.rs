//! Windowed-sinc band-pass design and filtering with decimation.

use std::f64::consts::PI;

use super::RawRecording;
use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

pub const DEFAULT_TAPS: usize = 1001;
pub const DEFAULT_BAND: (f64, f64) = (1.0, 75.0);

fn hamming(n: usize, len: usize) -> f64 {
    0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()
}

/// Hamming-windowed sinc low-pass normalized to unit DC gain.
fn lowpass(fs: f64, cutoff: f64, taps: usize) -> Vec<f64> {
    let mid = (taps / 2) as f64;
    let fc = cutoff / fs;
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let k = n as f64 - mid;
            let sinc = if k == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * k).sin() / (PI * k)
            };
            sinc * hamming(n, taps)
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Linear-phase band-pass `lowpass(hi) - lowpass(lo)` with an odd tap count.
///
/// Both low-pass prototypes have unit DC gain, so the difference blocks DC.
pub fn fir_bandpass(fs: f64, lo: f64, hi: f64, taps: usize) -> Result<Vec<f64>> {
    if !(fs > 0.0 && lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(Error::invalid(format!(
            "band-pass needs 0 < lo < hi < fs/2, got lo={lo}, hi={hi}, fs={fs}"
        )));
    }
    if taps.is_multiple_of(2) || taps < 3 {
        return Err(Error::invalid(format!(
            "tap count must be odd and >= 3, got {taps}"
        )));
    }
    let high = lowpass(fs, hi, taps);
    let low = lowpass(fs, lo, taps);
    Ok(high.iter().zip(&low).map(|(a, b)| a - b).collect())
}

/// Magnitude of the filter's frequency response at `freq` Hz.
pub fn frequency_response(taps: &[f64], fs: f64, freq: f64) -> f64 {
    let w = 2.0 * PI * freq / fs;
    let (re, im) = taps
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(re, im), (n, h)| {
            (re + h * (w * n as f64).cos(), im - h * (w * n as f64).sin())
        });
    re.hypot(im)
}

/// Convolves each channel with the centred filter (zero-padded edges, output
/// aligned with the input) and keeps every `factor`-th sample.
pub fn filter_and_decimate(
    rec: &RawRecording,
    taps: &[f64],
    factor: usize,
) -> Result<RawRecording> {
    if factor == 0 || !rec.fs_hz.is_multiple_of(factor as u32) {
        return Err(Error::invalid(format!(
            "decimation factor {factor} does not divide the sampling rate {} Hz",
            rec.fs_hz
        )));
    }
    if taps.len().is_multiple_of(2) {
        return Err(Error::invalid("filter must have an odd number of taps"));
    }
    let (c, n) = (rec.samples.shape()[0], rec.samples.shape()[1]);
    let half = taps.len() / 2;
    // Reversed taps turn the convolution into a dot product against a padded window.
    let rev: Vec<f64> = taps.iter().rev().copied().collect();
    let kept = n.div_ceil(factor);
    let mut out = Vec::with_capacity(c * kept);
    let mut padded = vec![0.0; n + 2 * half];
    for ch in rec.samples.data().chunks_exact(n) {
        padded[half..half + n].copy_from_slice(ch);
        out.extend(
            (0..n)
                .step_by(factor)
                .map(|i| kernels::dot(&rev, &padded[i..i + taps.len()])),
        );
    }
    Ok(RawRecording {
        fs_hz: rec.fs_hz / factor as u32,
        channels: rec.channels.clone(),
        samples: Tensor::new([c, kept], out)?,
        perclos: rec.perclos.clone(),
    })
}
