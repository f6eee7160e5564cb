//! Band-pass filters a raw 1 kHz recording, decimates it to 200 Hz, cuts
//! one-second epochs and labels them from a PERCLOS series.

use std::f64::consts::PI;

use nlmda::pipeline::{
    fir_bandpass, frequency_response, preprocess, RawRecording, DEFAULT_BAND, DEFAULT_TAPS,
};
use nlmda::tensor::Tensor;

fn main() -> nlmda::Result<()> {
    let fs = 1000.0;
    let taps = fir_bandpass(fs, DEFAULT_BAND.0, DEFAULT_BAND.1, DEFAULT_TAPS)?;
    println!(
        "{DEFAULT_TAPS}-tap band-pass {}-{} Hz:",
        DEFAULT_BAND.0, DEFAULT_BAND.1
    );
    for f in [0.0, 1.0, 5.0, 37.5, 75.0, 100.0, 150.0, 300.0] {
        println!("  |H({f:>5} Hz)| = {:.4}", frequency_response(&taps, fs, f));
    }

    // two channels: alpha plus line noise, and a slow drift
    let secs = 20;
    let n = secs * 1000;
    let mut data = Vec::with_capacity(2 * n);
    data.extend((0..n).map(|i| {
        let t = i as f64 / fs;
        (2.0 * PI * 10.0 * t).sin() + 0.5 * (2.0 * PI * 250.0 * t).sin()
    }));
    data.extend((0..n).map(|i| 3.0 * (2.0 * PI * 0.1 * i as f64 / fs).sin()));
    let perclos: Vec<(f64, f64)> = (0..=secs)
        .map(|s| (s as f64, s as f64 / secs as f64))
        .collect();
    let rec = RawRecording::new(
        1000,
        vec!["O1".into(), "O2".into()],
        Tensor::new([2, n], data)?,
        perclos,
    )?;

    let set = preprocess(&rec, &taps, 5)?;
    println!(
        "{} epochs of {} channels x {} samples at {} Hz, class counts {:?}",
        set.len(),
        set.channels(),
        set.samples(),
        set.fs_hz,
        set.class_counts()
    );
    println!("labels: {:?}", set.labels);
    Ok(())
}
