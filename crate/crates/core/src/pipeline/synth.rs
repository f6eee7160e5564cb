//! Seeded two-class synthetic EEG.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::EpochSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The trailing channels that carry the class-dependent rhythm.
pub const POSTERIOR_CHANNELS: usize = 11;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub channels: usize,
    pub samples: usize,
    pub fs_hz: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_class: 1000,
            channels: 17,
            samples: 200,
            fs_hz: 200,
            seed: 0,
        }
    }
}

/// Unit-variance noise with a `1/f` power spectrum and no DC component.
fn pink_noise(
    len: usize,
    rng: &mut ChaCha8Rng,
    fft: &dyn rustfft::Fft<f64>,
    buf: &mut [Complex<f64>],
) -> Vec<f64> {
    buf.fill(Complex::new(0.0, 0.0));
    for k in 1..=len / 2 {
        let amp = 1.0 / (k as f64).sqrt();
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = if 2 * k == len {
            0.0
        } else {
            StandardNormal.sample(rng)
        };
        buf[k] = Complex::new(re, im) * amp;
        buf[len - k] = buf[k].conj();
    }
    fft.process(buf);
    let x: Vec<f64> = buf.iter().map(|z| z.re).collect();
    let std = (x.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    x.into_iter().map(|v| v / std).collect()
}

/// Class 0 adds a 10 Hz rhythm of amplitude 1 to the posterior channels; class 1
/// adds amplitude 3 at 10 Hz plus 1.5 at 5 Hz. Every epoch draws its own phases.
/// The first `n_per_class` epochs are class 0. Values are rounded to `f32`
/// precision so the set survives the epoch file unchanged.
pub fn synth_generate(cfg: &SynthConfig) -> Result<EpochSet> {
    if cfg.n_per_class == 0 || cfg.channels == 0 || cfg.samples < 2 || cfg.fs_hz == 0 {
        return Err(Error::invalid(format!(
            "invalid synthetic-data settings {cfg:?}"
        )));
    }
    let (c, t) = (cfg.channels, cfg.samples);
    let n = 2 * cfg.n_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fft = FftPlanner::new().plan_fft_inverse(t);
    let mut buf = vec![Complex::new(0.0, 0.0); t];
    let posterior = c.saturating_sub(POSTERIOR_CHANNELS);
    let fs = cfg.fs_hz as f64;
    let mut data = Vec::with_capacity(n * c * t);
    let mut labels = Vec::with_capacity(n);
    for e in 0..n {
        let label = usize::from(e >= cfg.n_per_class);
        let alpha_phase = rng.random_range(0.0..2.0 * PI);
        let theta_phase = rng.random_range(0.0..2.0 * PI);
        let (alpha_amp, theta_amp) = if label == 0 { (1.0, 0.0) } else { (3.0, 1.5) };
        for ch in 0..c {
            let noise = pink_noise(t, &mut rng, fft.as_ref(), &mut buf);
            for (i, v) in noise.into_iter().enumerate() {
                let time = i as f64 / fs;
                let rhythm = if ch >= posterior {
                    alpha_amp * (2.0 * PI * 10.0 * time + alpha_phase).sin()
                        + theta_amp * (2.0 * PI * 5.0 * time + theta_phase).sin()
                } else {
                    0.0
                };
                data.push((v + rhythm) as f32 as f64);
            }
        }
        labels.push(label);
    }
    EpochSet::new(
        Tensor::new([n, 1, c, t], data)?,
        labels,
        cfg.fs_hz,
        format!(
            "synthetic: {} per class, {c} channels, {t} samples at {} Hz, seed {}",
            cfg.n_per_class, cfg.fs_hz, cfg.seed
        ),
    )
}
